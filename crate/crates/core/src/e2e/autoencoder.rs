use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{encode_frame, init_encoder, learned_currents, tx_lowpass, weight};
use crate::diff::{nats_to_bits, AdamConfig, Graph, ParamStore, Tensor, Var};
use crate::dsp::{add_awgn, frame_rng, SymbolSequence, PAM_ORDER};
use crate::error::{invalid, Error, Result};
use crate::link::{stream, FRAME_SYMBOLS, WARMUP_SAMPLES};
use crate::surrogate::{Surrogate, Weights};

/// Receiver FIR length.
pub const DECODER_TAPS: usize = 11;
/// Hidden layer widths of the decoder.
pub const DECODER_WIDTHS: [usize; 3] = [32, 32, 32];
pub const LEAKY_SLOPE: f64 = 0.01;

/// Symbols of a frame that count towards losses and metrics.
pub const SCORED_SYMBOLS: std::ops::Range<usize> = WARMUP_SAMPLES / 2..FRAME_SYMBOLS;

/// Received power mapped to a dimensionless receiver input.
pub fn rx_normalize(power: f64, power_ref: f64) -> f64 {
    2.0 * power / power_ref - 1.0
}

/// Symbols of frame `frame` for `seed`.
pub fn frame_symbols(seed: u64, frame: u64) -> Vec<usize> {
    SymbolSequence::random(
        FRAME_SYMBOLS,
        PAM_ORDER,
        1.0,
        &mut frame_rng(seed, frame, stream::SYMBOLS),
    )
    .indices
}

/// Receiver noise for frame `frame` (`n x 1`, watts).
pub fn frame_noise(seed: u64, frame: u64, sigma: f64, n: usize) -> Result<Tensor> {
    let z = add_awgn(&vec![0.0; n], sigma, &mut frame_rng(seed, frame, stream::NOISE))?;
    Ok(Tensor::column(z))
}

/// Adds a decoder with a pass-through FIR and Glorot-initialised layers.
pub fn init_decoder(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut fir = Tensor::zeros(DECODER_TAPS, 1);
    fir.data[DECODER_TAPS / 2] = 1.0;
    store.insert("dec.fir", fir)?;
    let mut width = 2;
    for (i, &w) in DECODER_WIDTHS.iter().enumerate() {
        store.insert_glorot(&format!("dec.l{i}.w"), width, w, rng)?;
        store.insert(format!("dec.l{i}.b"), Tensor::zeros(1, w))?;
        width = w;
    }
    store.insert_glorot("dec.out.w", width, PAM_ORDER, rng)?;
    store.insert("dec.out.b", Tensor::zeros(1, PAM_ORDER))?;
    Ok(())
}

/// Transmitter at square-pulse equispaced 4PAM plus an untrained decoder.
pub fn init_autoencoder(i_bias: f64, i_pp: f64, seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    init_encoder(&mut store, i_bias, i_pp)?;
    init_decoder(&mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(store)
}

/// Decoder logits (`n x M`) for a received frame (`2n x 1`, already
/// normalised).
pub fn decode(g: &mut Graph, store: &ParamStore, received: Var, weights: Weights) -> Result<Var> {
    let n = g.value(received).rows / 2;
    let taps = weight(g, store, "dec.fir", weights)?;
    let filtered = g.fir(received, taps, DECODER_TAPS / 2)?;
    let mut h = g.reshape(filtered, n, 2)?;
    for i in 0..DECODER_WIDTHS.len() {
        let w = weight(g, store, &format!("dec.l{i}.w"), weights)?;
        let b = weight(g, store, &format!("dec.l{i}.b"), weights)?;
        h = g.affine(h, w, b)?;
        h = g.leaky_relu(h, LEAKY_SLOPE);
    }
    let w = weight(g, store, "dec.out.w", weights)?;
    let b = weight(g, store, "dec.out.b", weights)?;
    g.affine(h, w, b)
}

/// Mean cross-entropy (nats) of `logits` over the scored symbols.
pub fn scored_ce(g: &mut Graph, logits: Var, symbols: &[usize]) -> Result<Var> {
    let r = SCORED_SYMBOLS;
    let scored = g.slice_rows(logits, r.start, r.len())?;
    g.softmax_ce(scored, &symbols[r])
}

/// One frame through transmitter, surrogate, noise and receiver. Returns the
/// cross-entropy node; class probabilities are on [`Graph::softmax_probs`].
pub fn ae_forward(
    g: &mut Graph,
    store: &ParamStore,
    surrogate: &Surrogate,
    lowpass: &Tensor,
    noise: &Tensor,
    symbols: &[usize],
    weights: Weights,
) -> Result<Var> {
    let current = encode_frame(g, store, symbols, lowpass, weights)?;
    let power = surrogate.forward(g, current, Weights::Frozen)?;
    let noisy = g.add_const(power, noise)?;
    let p_ref = surrogate.config.power_ref;
    let rx = g.scale_shift(noisy, 2.0 / p_ref, -1.0);
    let logits = decode(g, store, rx, weights)?;
    let loss = scored_ce(g, logits, symbols)?;
    if !g.value(loss).is_finite() {
        return Err(Error::NonFinite {
            stage: "autoencoder loss".into(),
        });
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeTrainConfig {
    pub symbol_rate: f64,
    pub epochs: usize,
    /// Frames of 512 symbols; the last `val_fraction` are held out.
    pub frames: usize,
    pub val_fraction: f64,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub sigma: f64,
    pub seed: u64,
}

impl AeTrainConfig {
    pub fn new(symbol_rate: f64, sigma: f64) -> Self {
        Self {
            symbol_rate,
            epochs: 50,
            frames: 2048,
            val_fraction: 0.2,
            lr: 1e-3,
            clip_norm: Some(1.0),
            sigma,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeEpochLog {
    pub epoch: usize,
    pub train_ce_bits: f64,
    pub val_ce_bits: f64,
    pub i_bias: f64,
    pub i_pp: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeReport {
    pub epochs: Vec<AeEpochLog>,
    pub initial_val_ce_bits: f64,
    pub best_epoch: Option<usize>,
    pub best_val_ce_bits: f64,
}

/// Mean held-out cross-entropy in bits with frame-fixed noise.
pub fn validation_ce(
    store: &ParamStore,
    surrogate: &Surrogate,
    cfg: &AeTrainConfig,
    frames: std::ops::Range<usize>,
) -> Result<f64> {
    let lowpass = tx_lowpass(cfg.symbol_rate)?;
    let mut total = 0.0;
    for f in frames.clone() {
        let symbols = frame_symbols(cfg.seed, f as u64);
        let noise = frame_noise(cfg.seed, f as u64, cfg.sigma, 2 * FRAME_SYMBOLS)?;
        let mut g = Graph::new();
        let loss = ae_forward(&mut g, store, surrogate, &lowpass, &noise, &symbols, Weights::Frozen)?;
        total += g.value(loss).item();
    }
    Ok(nats_to_bits(total / frames.len().max(1) as f64))
}

/// Adam on the cross-entropy through the frozen surrogate, one frame per
/// step. Returns the parameters with the lowest validation cross-entropy.
pub fn train_autoencoder(
    mut store: ParamStore,
    surrogate: &Surrogate,
    cfg: &AeTrainConfig,
    mut on_epoch: impl FnMut(&AeEpochLog),
) -> Result<(ParamStore, AeReport)> {
    if cfg.epochs == 0 || !(cfg.sigma >= 0.0) {
        return Err(invalid("epochs", "epochs must be positive and sigma non-negative"));
    }
    let val = ((cfg.frames as f64) * cfg.val_fraction).round() as usize;
    if val == 0 || val >= cfg.frames {
        return Err(invalid(
            "frames",
            format!("{} frames cannot be split {}", cfg.frames, cfg.val_fraction),
        ));
    }
    let (train, held) = (0..cfg.frames - val, cfg.frames - val..cfg.frames);
    let lowpass = tx_lowpass(cfg.symbol_rate)?;
    let initial = validation_ce(&store, surrogate, cfg, held.clone())?;
    let mut best = (initial, None, store.values_only());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = train.clone().collect();
    let mut logs: Vec<AeEpochLog> = Vec::with_capacity(cfg.epochs);
    let adam = AdamConfig {
        lr: cfg.lr,
        clip_norm: cfg.clip_norm,
        ..AdamConfig::default()
    };
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &f in &order {
            let symbols = frame_symbols(cfg.seed, f as u64);
            // Fresh noise every epoch; the validation frames keep theirs.
            let noise_frame = (f + (epoch + 1) * cfg.frames) as u64;
            let noise = frame_noise(cfg.seed, noise_frame, cfg.sigma, 2 * FRAME_SYMBOLS)?;
            let mut g = Graph::new();
            let loss = ae_forward(
                &mut g,
                &store,
                surrogate,
                &lowpass,
                &noise,
                &symbols,
                Weights::Trainable,
            )
            .map_err(|e| diverged(&logs, epoch, e))?;
            total += g.value(loss).item();
            let grads = g.param_grads(&g.backward(loss)?);
            store.adam_step(&grads, &adam).map_err(|e| diverged(&logs, epoch, e))?;
        }
        let val_ce = validation_ce(&store, surrogate, cfg, held.clone()).map_err(|e| diverged(&logs, epoch, e))?;
        let (i_bias, i_pp) = learned_currents(&store)?;
        let log = AeEpochLog {
            epoch,
            train_ce_bits: nats_to_bits(total / order.len() as f64),
            val_ce_bits: val_ce,
            i_bias,
            i_pp,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
        if val_ce < best.0 {
            best = (val_ce, Some(epoch), store.values_only());
        }
    }
    Ok((
        best.2,
        AeReport {
            epochs: logs,
            initial_val_ce_bits: initial,
            best_epoch: best.1,
            best_val_ce_bits: best.0,
        },
    ))
}

fn diverged(logs: &[AeEpochLog], epoch: usize, cause: Error) -> Error {
    let trail: Vec<String> = logs
        .iter()
        .map(|l| {
            format!(
                "{:.4} bits @ {:.2}/{:.2} mA",
                l.val_ce_bits,
                l.i_bias * 1e3,
                l.i_pp * 1e3
            )
        })
        .collect();
    Error::TrainingDiverged(format!("epoch {epoch}: {cause}; history [{}]", trail.join(", ")))
}
