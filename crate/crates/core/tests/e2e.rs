use dmlink::diff::{Graph, Tensor};
use dmlink::dsp::{equispaced_levels, PAM_ORDER};
use dmlink::dsp::{SymbolSequence, SQUARE_PULSE};
use dmlink::e2e::{
    ae_drive, ae_forward, bounded_current, bounded_value, frame_noise, frame_symbols, init_autoencoder,
    learned_currents, names, one_hot, swing_grid, train_autoencoder, tx_lowpass, unbounded_value, AeTrainConfig,
    BaselineKind, Ffe, SCORED_SYMBOLS,
};
use dmlink::laser::{LaserParams, RawLaserTable};
use dmlink::link::{drive_current, LinkConfig, BIAS_RANGE, FRAME_LEN, FRAME_SYMBOLS};
use dmlink::surrogate::{generate_dataset, CatConfig, Surrogate, SurrogateSample, Weights};
use proptest::prelude::*;

fn laser() -> LaserParams {
    RawLaserTable::default().derive().unwrap()
}

/// A quickly fitted surrogate: the least-squares skip path on a few frames,
/// attention read-out still zero.
fn quick_surrogate(rs: f64) -> Surrogate {
    let p = laser();
    let frames = generate_dataset(&p, rs, 0, 8, 21).unwrap();
    let refs: Vec<&SurrogateSample> = frames.iter().collect();
    let mut m = Surrogate::init(CatConfig::for_laser(&p).unwrap(), 1).unwrap();
    m.fit_linear_path(&refs, 2).unwrap();
    m
}

#[test]
fn bounded_current_values() {
    let mut g = Graph::new();
    let raw = g.constant(Tensor::scalar(0.0));
    let i = bounded_current(&mut g, raw, 0.050, 0.100).unwrap();
    assert!((g.value(i).item() - 0.075).abs() < 1e-15);
    assert!((bounded_value(40.0, BIAS_RANGE) - 0.100).abs() < 1e-15);
    assert!(bounded_value(40.0, BIAS_RANGE) <= 0.100);
    assert!(bounded_value(-700.0, BIAS_RANGE) >= 0.050);
    let raw = unbounded_value(0.0623, BIAS_RANGE).unwrap();
    assert!((bounded_value(raw, BIAS_RANGE) - 0.0623).abs() < 1e-15);
    assert!(unbounded_value(0.100, BIAS_RANGE).is_err());
}

#[test]
fn bounded_current_gradient_matches_finite_differences() {
    for raw0 in [-3.0, -0.4, 0.0, 1.7] {
        let mut g = Graph::new();
        let mut store = dmlink::diff::ParamStore::new();
        store.insert("r", Tensor::scalar(raw0)).unwrap();
        let raw = g.param(&store, "r").unwrap();
        let i = bounded_current(&mut g, raw, 0.050, 0.100).unwrap();
        let grad = g.param_grads(&g.backward(i).unwrap())["r"].item();
        let h = 1e-6;
        let fd = (bounded_value(raw0 + h, BIAS_RANGE) - bounded_value(raw0 - h, BIAS_RANGE)) / (2.0 * h);
        assert!((grad - fd).abs() <= 1e-6 * fd.abs(), "raw {raw0}: {grad} vs {fd}");
    }
}

#[test]
fn initial_mapping_is_square_equispaced_pam() {
    // The open bounds exclude the edges themselves.
    assert!(init_autoencoder(0.075, 0.080, 1).is_err());
    let store = init_autoencoder(0.075, 0.079, 1).unwrap();
    let map = store.get(names::MAPPING).unwrap();
    assert_eq!(map.shape(), (PAM_ORDER, 2));
    let levels = equispaced_levels(PAM_ORDER);
    for (pair, level) in map.data.chunks(2).zip(&levels) {
        assert_eq!(pair, [*level, *level]);
    }
    assert_eq!(map.data[6], 0.5);
    let (b, pp) = learned_currents(&store).unwrap();
    assert!((b - 0.075).abs() < 1e-15 && (pp - 0.079).abs() < 1e-15);
}

/// At initialisation the learned transmitter is the reference square-pulse
/// drive.
#[test]
fn encoder_at_init_matches_reference_drive() {
    for (bias, pp) in [(0.075, 0.079), (0.062, 0.030)] {
        let store = init_autoencoder(bias, pp, 1).unwrap();
        let symbols = frame_symbols(3, 0);
        let lp = tx_lowpass(25e9).unwrap();
        let ours = ae_drive(&store, &symbols, &lp).unwrap();
        let cfg = LinkConfig {
            i_bias: bias,
            i_pp: pp,
            ..LinkConfig::at_rate(25e9)
        };
        let seq = SymbolSequence::new(symbols, PAM_ORDER, 25e9).unwrap();
        let reference = drive_current(&seq, &SQUARE_PULSE, &cfg).unwrap();
        assert_eq!(ours.len(), FRAME_LEN);
        let err = ours
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "max difference {err:e}");
    }
}

#[test]
fn one_hot_rejects_bad_symbols() {
    assert!(one_hot(&[0, 4], 4).is_err());
    let t = one_hot(&[2, 0], 4).unwrap();
    assert_eq!(t.data, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    /// Whatever the mapping and raw currents, drive samples stay inside the
    /// hard envelope set by clipping and the current bounds.
    #[test]
    fn drive_stays_in_hard_envelope(
        map in proptest::collection::vec(-3.0f64..3.0, 8),
        raw_bias in -20.0f64..20.0,
        raw_pp in -20.0f64..20.0,
        seed in 0u64..1000,
    ) {
        let mut store = init_autoencoder(0.075, 0.04, 1).unwrap();
        *store.get_mut(names::MAPPING).unwrap() = Tensor::new(4, 2, map).unwrap();
        *store.get_mut(names::RAW_BIAS).unwrap() = Tensor::scalar(raw_bias);
        *store.get_mut(names::RAW_SWING).unwrap() = Tensor::scalar(raw_pp);
        let lp = tx_lowpass(20e9).unwrap();
        let i = ae_drive(&store, &frame_symbols(seed, 0), &lp).unwrap();
        let (bias, pp) = learned_currents(&store).unwrap();
        prop_assert!(i.iter().all(|&v| (0.010 - 1e-12..=0.140 + 1e-12).contains(&v)));
        prop_assert!(i.iter().all(|&v| (v - bias).abs() <= 0.5 * pp + 1e-12));
    }
}

#[test]
fn probabilities_are_distributions_and_untrained_ce_is_near_two_bits() {
    let sur = quick_surrogate(25e9);
    let store = init_autoencoder(0.075, 0.040, 5).unwrap();
    let lp = tx_lowpass(25e9).unwrap();
    let symbols = frame_symbols(1, 0);
    let noise = frame_noise(1, 0, 1e-4, FRAME_LEN).unwrap();
    let mut g = Graph::new();
    let loss = ae_forward(&mut g, &store, &sur, &lp, &noise, &symbols, Weights::Frozen).unwrap();
    let probs = g.softmax_probs(loss).unwrap();
    assert_eq!(probs.shape(), (SCORED_SYMBOLS.len(), PAM_ORDER));
    for row in probs.data.chunks(PAM_ORDER) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let bits = g.value(loss).item() / std::f64::consts::LN_2;
    assert!((bits - 2.0).abs() < 0.3, "untrained CE {bits} bits");
}

/// The cross-entropy gradient reaches the transmitter currents through the
/// frozen surrogate, and agrees with finite differences there.
#[test]
fn gradient_flows_to_bias_and_swing() {
    let sur = quick_surrogate(25e9);
    let store = init_autoencoder(0.070, 0.040, 2).unwrap();
    let lp = tx_lowpass(25e9).unwrap();
    let symbols = frame_symbols(4, 0);
    let noise = frame_noise(4, 0, 2e-4, FRAME_LEN).unwrap();
    let ce = |s: &dmlink::diff::ParamStore| {
        let mut g = Graph::new();
        let l = ae_forward(&mut g, s, &sur, &lp, &noise, &symbols, Weights::Frozen).unwrap();
        g.value(l).item()
    };
    let mut g = Graph::new();
    let loss = ae_forward(&mut g, &store, &sur, &lp, &noise, &symbols, Weights::Trainable).unwrap();
    let grads = g.param_grads(&g.backward(loss).unwrap());
    for name in [names::RAW_BIAS, names::RAW_SWING] {
        let analytic = grads[name].item();
        let base = store.get(name).unwrap().item();
        let mut w = store.clone();
        let h = 1e-5;
        *w.get_mut(name).unwrap() = Tensor::scalar(base + h);
        let up = ce(&w);
        *w.get_mut(name).unwrap() = Tensor::scalar(base - h);
        let down = ce(&w);
        let fd = (up - down) / (2.0 * h);
        assert!(analytic.abs() > 1e-6, "{name} gradient vanishes");
        assert!(
            (analytic - fd).abs() <= 1e-5 * fd.abs().max(1e-7),
            "{name}: {analytic} vs {fd}"
        );
    }
}

#[test]
fn short_training_is_deterministic_and_improves_validation() {
    let sur = quick_surrogate(25e9);
    let cfg = AeTrainConfig {
        epochs: 2,
        frames: 10,
        lr: 3e-3,
        seed: 7,
        ..AeTrainConfig::new(25e9, 2e-4)
    };
    let run = || {
        let store = init_autoencoder(0.075, 0.040, 7).unwrap();
        train_autoencoder(store, &sur, &cfg, |_| {}).unwrap()
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    let strip = |r: &dmlink::e2e::AeReport| {
        r.epochs
            .iter()
            .map(|e| (e.train_ce_bits, e.val_ce_bits, e.i_bias, e.i_pp))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&ra), strip(&rb));
    assert!(ra.best_val_ce_bits < ra.initial_val_ce_bits);
    let (bias, pp) = learned_currents(&a).unwrap();
    assert!(bias > 0.050 && bias < 0.100 && pp > 0.0 && pp < 0.080);
}

#[test]
fn baseline_grid_and_budgets() {
    let grid = swing_grid();
    assert_eq!(grid.len(), 10);
    for (k, v) in grid.iter().enumerate() {
        assert!((v - 0.008 * (k + 1) as f64).abs() < 1e-15);
    }
    assert_eq!(BaselineKind::VnleLps.tap_budget(), 16 + 16 * 16);
    assert_eq!(BaselineKind::Ffe.tap_budget(), 21);
    assert_eq!(BaselineKind::Uncompensated.to_string(), "BL");
}

/// Linear ISI with a known 2-tap channel at 2 samples per symbol is fully
/// removed by the 21-tap equalizer when there is no noise.
#[test]
fn ffe_clears_noiseless_linear_isi() {
    let levels = equispaced_levels(PAM_ORDER);
    let frames: Vec<(Vec<usize>, Vec<f64>)> = (0..4)
        .map(|f| {
            let s = frame_symbols(11, f);
            let x: Vec<f64> = s.iter().flat_map(|&k| [levels[k], levels[k]]).collect();
            let y: Vec<f64> = (0..x.len())
                .map(|n| {
                    0.3 + x[n] + 0.5 * if n >= 2 { x[n - 2] } else { 0.0 } - 0.2 * if n >= 1 { x[n - 1] } else { 0.0 }
                })
                .collect();
            (s, y)
        })
        .collect();
    let (signals, symbols): (Vec<_>, Vec<_>) = frames.iter().map(|(s, y)| (y.clone(), s.clone())).unzip();
    let ffe = Ffe::fit(&signals[..2], &symbols[..2], 21).unwrap();
    let mut errors = 0;
    let mut worst: f64 = 0.0;
    for (u, s) in signals[2..].iter().zip(&symbols[2..]) {
        for k in SCORED_SYMBOLS {
            let v = ffe.apply(u, k);
            let decided = (0..PAM_ORDER)
                .min_by(|&a, &b| (v - levels[a]).abs().total_cmp(&(v - levels[b]).abs()))
                .unwrap();
            errors += usize::from(decided != s[k]);
            worst = worst.max((v - levels[s[k]]).abs());
        }
    }
    assert_eq!(errors, 0);
    // Residual ISI well under the half level spacing.
    assert!(worst < 0.05 * (1.0 / 3.0), "worst deviation {worst}");
    assert_eq!(FRAME_SYMBOLS, symbols[0].len());
}
