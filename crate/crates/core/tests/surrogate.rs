use dmlink::diff::{AdamConfig, Graph, Tensor};
use dmlink::dsp::{shape_pulses, SQUARE_PULSE};
use dmlink::laser::{LaserParams, RawLaserTable};
use dmlink::link::{BIAS_RANGE, FRAME_LEN, SWING_RANGE};
use dmlink::surrogate::{
    decile, generate_dataset, generate_stratified, mean_nrmse, train_surrogate, CatConfig, PulseKind, Surrogate,
    SurrogateSample, SurrogateTrainConfig, Weights,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn laser() -> LaserParams {
    RawLaserTable::default().derive().unwrap()
}

#[test]
fn dataset_frames_respect_ranges_and_length() {
    let frames = generate_dataset(&laser(), 25e9, 0, 6, 11).unwrap();
    for (i, f) in frames.iter().enumerate() {
        assert_eq!(f.input.len(), FRAME_LEN);
        assert_eq!(f.target.len(), FRAME_LEN);
        assert!(f.i_bias >= BIAS_RANGE.0 && f.i_bias <= BIAS_RANGE.1);
        assert!(f.i_pp >= SWING_RANGE.0 && f.i_pp <= SWING_RANGE.1);
        let want = if i % 2 == 0 {
            PulseKind::Square
        } else {
            PulseKind::Stochastic
        };
        assert_eq!(f.pulse, want);
        // Band-limited drive stays within the clipped envelope.
        let (lo, hi) = (f.i_bias - f.i_pp / 2.0, f.i_bias + f.i_pp / 2.0);
        assert!(f.input.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        assert!(f.target.iter().all(|&p| p.is_finite() && p > 0.0));
    }
}

#[test]
fn frames_depend_only_on_seed_and_index() {
    let p = laser();
    let all = generate_dataset(&p, 20e9, 0, 4, 5).unwrap();
    let one = generate_dataset(&p, 20e9, 3, 1, 5).unwrap();
    assert_eq!(one[0], all[3]);
    let other_seed = generate_dataset(&p, 20e9, 3, 1, 6).unwrap();
    assert_ne!(other_seed[0].input, all[3].input);
}

#[test]
fn square_pulse_holds_each_symbol_before_filtering() {
    let amps = [0.5, -1.0 / 6.0, 1.0 / 6.0, -0.5, 0.5];
    let shaped = shape_pulses(&amps, &SQUARE_PULSE, 2).unwrap();
    for (k, pair) in shaped.chunks(2).enumerate() {
        assert_eq!(pair[0], pair[1], "symbol {k}");
    }
}

#[test]
fn stratified_set_covers_every_cell() {
    let frames = generate_stratified(&laser(), 15e9, 1, 2).unwrap();
    assert_eq!(frames.len(), 100);
    let mut seen = [[false; 10]; 10];
    for f in &frames {
        seen[decile(f.i_bias, BIAS_RANGE)][decile(f.i_pp, SWING_RANGE)] = true;
    }
    assert!(seen.iter().flatten().all(|&s| s));
}

#[test]
fn untrained_forward_is_finite() {
    let p = laser();
    let model = Surrogate::init(CatConfig::for_laser(&p).unwrap(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let x: Vec<f64> = (0..FRAME_LEN).map(|_| rng.gen_range(0.05..0.1)).collect();
        let y = model.predict(&x).unwrap();
        assert_eq!(y.len(), FRAME_LEN);
        assert!(y.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn wrong_input_length_is_rejected() {
    let model = Surrogate::init(CatConfig::for_laser(&laser()).unwrap(), 1).unwrap();
    assert!(model.predict(&vec![0.075; 100]).is_err());
}

#[test]
fn config_validation() {
    let base = CatConfig::for_laser(&laser()).unwrap();
    assert!(CatConfig {
        heads: 5,
        ..base.clone()
    }
    .validate()
    .is_err());
    assert!(CatConfig {
        skip_taps: 32,
        ..base.clone()
    }
    .validate()
    .is_err());
    assert!(CatConfig {
        skip_taps: 0,
        ..base.clone()
    }
    .validate()
    .is_err());
    assert!(base.validate().is_ok());
}

fn random_skip_model(seed: u64) -> Surrogate {
    let mut m = Surrogate::init(CatConfig::for_laser(&laser()).unwrap(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, q) = (m.config.skip_taps, m.config.skip_quad);
    *m.params.get_mut("skip.taps").unwrap() = Tensor::column((0..t).map(|_| rng.gen_range(-0.2..0.2)).collect());
    let mut quad = vec![0.0; q * q];
    for a in 0..q {
        for b in a..q {
            let v = rng.gen_range(-0.05..0.05);
            quad[a * q + b] = v;
            quad[b * q + a] = v;
        }
    }
    *m.params.get_mut("skip.quad").unwrap() = Tensor::new(q, q, quad).unwrap();
    *m.params.get_mut("out.b").unwrap() = Tensor::scalar(0.4);
    m
}

/// A channel that is exactly a linear + quadratic filter of the drive is
/// recovered by the least-squares initialisation.
#[test]
fn linear_path_fit_recovers_a_volterra_channel() {
    let truth = random_skip_model(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames: Vec<SurrogateSample> = (0..6)
        .map(|i| {
            let bias = rng.gen_range(0.055..0.095);
            let input: Vec<f64> = (0..FRAME_LEN).map(|_| bias + rng.gen_range(-0.02..0.02)).collect();
            SurrogateSample {
                target: truth.predict(&input).unwrap(),
                input,
                i_bias: bias,
                i_pp: 0.04,
                pulse: PulseKind::Square,
                seed: 0,
                index: i,
            }
        })
        .collect();
    let refs: Vec<&SurrogateSample> = frames.iter().collect();
    let mut fresh = Surrogate::init(truth.config.clone(), 99).unwrap();
    let rms = fresh.fit_linear_path(&refs, 1).unwrap();
    assert!(rms < 1e-9, "residual {rms:e}");
    assert!(mean_nrmse(&fresh, &refs).unwrap() < 1e-8);
}

fn frame_loss(model: &Surrogate, f: &SurrogateSample) -> f64 {
    let mut g = Graph::new();
    let x = g.constant(Tensor::column(f.input.clone()));
    let y = model.forward(&mut g, x, Weights::Frozen).unwrap();
    let l = g
        .nrmse_loss_floored(y, &Tensor::column(f.target.clone()), 2e-4)
        .unwrap();
    g.value(l).item()
}

/// A small step along the backpropagated gradient lowers the loss.
#[test]
fn gradient_step_is_a_descent_direction() {
    let p = laser();
    let data = generate_dataset(&p, 25e9, 0, 4, 3).unwrap();
    let mut model = Surrogate::init(CatConfig::for_laser(&p).unwrap(), 1).unwrap();
    let refs: Vec<&SurrogateSample> = data.iter().collect();
    model.fit_linear_path(&refs, 4).unwrap();
    *model.params.get_mut("out.w").unwrap() = Tensor::column(vec![0.01; model.config.embed_dim]);
    let f = &data[1];
    let before = frame_loss(&model, f);
    let mut g = Graph::new();
    let x = g.constant(Tensor::column(f.input.clone()));
    let y = model.forward(&mut g, x, Weights::Trainable).unwrap();
    let l = g
        .nrmse_loss_floored(y, &Tensor::column(f.target.clone()), 2e-4)
        .unwrap();
    let grads = g.param_grads(&g.backward(l).unwrap());
    let adam = AdamConfig {
        lr: 1e-6,
        clip_norm: None,
        ..AdamConfig::default()
    };
    model.params.adam_step(&grads, &adam).unwrap();
    let after = frame_loss(&model, f);
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn training_keeps_the_best_held_out_weights() {
    let p = laser();
    let data = generate_dataset(&p, 25e9, 0, 10, 3).unwrap();
    let cfg = SurrogateTrainConfig {
        epochs: 2,
        batch: 2,
        test_fraction: 0.2,
        ..SurrogateTrainConfig::default()
    };
    let model = Surrogate::init(CatConfig::for_laser(&p).unwrap(), 1).unwrap();
    let mut losses = Vec::new();
    let (trained, report) = train_surrogate(model, &data, &cfg, |l| losses.push(l.train_loss)).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert!(losses.iter().all(|l| l.is_finite()));
    assert_eq!((report.train_frames, report.test_frames), (8, 2));
    assert!(report.best_test_nrmse <= report.initial_test_nrmse);
    let test: Vec<&SurrogateSample> = data[8..].iter().collect();
    assert_eq!(mean_nrmse(&trained, &test).unwrap(), report.best_test_nrmse);
    // The linear initialisation alone already tracks the channel closely.
    assert!(report.initial_test_nrmse < 0.1, "{}", report.initial_test_nrmse);
}

#[test]
fn positional_embedding_matters_once_the_readout_is_live() {
    let p = laser();
    let mut model = Surrogate::init(CatConfig::for_laser(&p).unwrap(), 2).unwrap();
    let d = model.config.embed_dim;
    *model.params.get_mut("out.w").unwrap() = Tensor::column((0..d).map(|k| 0.05 * ((k % 5) as f64 - 2.0)).collect());
    let x: Vec<f64> = (0..FRAME_LEN)
        .map(|k| 0.075 + 0.02 * ((k as f64) * 0.3).sin())
        .collect();
    let before = model.predict(&x).unwrap();
    let pos = model.params.get_mut("pos").unwrap();
    let rows: Vec<Vec<f64>> = pos.data.chunks(d).map(<[f64]>::to_vec).collect();
    pos.data = rows.iter().rev().flatten().copied().collect();
    let after = model.predict(&x).unwrap();
    let diff = before
        .iter()
        .zip(&after)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff > 1e-9, "max change {diff:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn decile_stays_in_range(v in 0.0f64..0.2) {
        let b = decile(v, BIAS_RANGE);
        prop_assert!(b < 10);
        if v >= BIAS_RANGE.0 && v < BIAS_RANGE.1 {
            prop_assert_eq!(b, ((v - BIAS_RANGE.0) / (BIAS_RANGE.1 - BIAS_RANGE.0) * 10.0).floor() as usize);
        }
    }
}
