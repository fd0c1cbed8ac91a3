//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Criteria 5 to 7 read the trained
//! checkpoints named by `configs/desk.toml`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use dmlink::app::{eval_plan, load_ae, load_surrogate, noise_sigma, vnle_path, VNLE_KIND};
use dmlink::diff::{fit_volterra, gradient_check, volterra_apply, Graph, Tensor, VolterraKernel, FD_STEP};
use dmlink::dsp::{
    add_awgn, compute_ser, equispaced_levels, frame_rng, measure_snr_db, received_power_metric, LevelDetector,
    PAM_ORDER,
};
use dmlink::e2e::{
    ae_forward, evaluate_autoencoder, evaluate_ffe, evaluate_uncompensated, evaluate_vnle_lps, frame_noise,
    frame_symbols, init_autoencoder, learned_currents, names, swing_grid, tx_lowpass, BaselineKind, EvalOutcome,
};
use dmlink::io::{Checkpoint, ExperimentConfig};
use dmlink::laser::{probe_small_signal, simulate_li_curve, LaserParams};
use dmlink::link::{calibrate_noise, reference_power, LinkConfig, FRAME_LEN};
use dmlink::surrogate::{generate_dataset, mean_nrmse, split_frames, CatConfig, Surrogate, SurrogateSample, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

// Tolerances and targets.
const ITH_RANGE_MA: (f64, f64) = (3.0, 5.5);
const SLOPE_TARGET: f64 = 0.083;
const SLOPE_TOL: f64 = 0.10;
const PEAK_RANGE_GHZ: (f64, f64) = (8.5, 14.0);
const F3DB_RANGE_GHZ: (f64, f64) = (18.0, 30.0);
const FR_SQ_MIN_R2: f64 = 0.98;
const GRAD_TOL: f64 = 1e-5;
const CE_GRAD_TOL: f64 = 1e-10;
const VOLTERRA_FIR_TOL: f64 = 1e-12;
const VOLTERRA_LS_TOL: f64 = 1e-8;
const VNLE_BUDGET: usize = 272;
const SURROGATE_MAX_TEST_NRMSE: f64 = 0.03;
const SURROGATE_MAX_GAP: f64 = 1.5;
const HELD_OUT_FRAMES: usize = 128;
const BIAS_OPEN_RANGE_MA: (f64, f64) = (52.0, 98.0);
const PUBLISHED_BIAS_MA: [(f64, f64); 3] = [(15.0, 62.31), (20.0, 69.31), (25.0, 70.30)];
const PUBLISHED_BIAS_SOFT_TOL_MA: f64 = 10.0;
const SER_SIGMAS: f64 = 3.0;
const SNR_TARGET_DB: f64 = 22.0;
const SNR_TOL_DB: f64 = 0.1;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = dmlink::Result<Verdict>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The desk config with its relative directories anchored at the workspace root.
fn desk_config() -> dmlink::Result<ExperimentConfig> {
    let r = root();
    let mut cfg = ExperimentConfig::load(&r.join("configs/desk.toml"))?;
    cfg.out_dir = r.join(&cfg.out_dir);
    cfg.artifacts_dir = cfg.artifacts_dir.map(|a| r.join(a));
    Ok(cfg)
}

fn laser() -> LaserParams {
    LaserParams::default()
}

fn static_physics() -> Check {
    let p = laser();
    let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.5e-3).collect();
    let li = simulate_li_curve(&p, &grid)?;
    let ith = li.threshold_current * 1e3;
    let slope = li.slope_efficiency;
    let pass =
        ith >= ITH_RANGE_MA.0 && ith <= ITH_RANGE_MA.1 && (slope - SLOPE_TARGET).abs() <= SLOPE_TOL * SLOPE_TARGET;
    Ok(Verdict::new(
        pass,
        format!(
            "I_th {ith:.3} mA in [{}, {}]; slope {slope:.4} W/A vs {SLOPE_TARGET} +/- {:.0}% (analytic {:.4})",
            ITH_RANGE_MA.0,
            ITH_RANGE_MA.1,
            SLOPE_TOL * 100.0,
            p.analytic_slope_efficiency()
        ),
    ))
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn dynamic_physics() -> Check {
    let p = laser();
    let freqs: Vec<f64> = (1..=160).map(|i| i as f64 * 0.25e9).collect();
    let c75 = probe_small_signal(&p, 0.075, &freqs, 0.01)?;
    let peak = c75.peak_frequency / 1e9;
    let f3 = c75.f3db.map_or(f64::NAN, |f| f / 1e9);
    let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.5e-3).collect();
    let ith = simulate_li_curve(&p, &grid)?.threshold_current;
    let biases = [0.050, 0.0625, 0.075, 0.0875, 0.100];
    // The square-root law is stated for the resonance frequency, taken from
    // the two-pole fit of each probed response. Under heavy damping the peak
    // sits below it, so the peak-based fit is printed for reference only.
    let mut x = Vec::new();
    let mut fr_sq = Vec::new();
    let mut peak_sq = Vec::new();
    for &b in &biases {
        let c = if b == 0.075 {
            c75.clone()
        } else {
            probe_small_signal(&p, b, &freqs, 0.01)?
        };
        x.push(b - ith);
        fr_sq.push(c.resonance_frequency.powi(2));
        peak_sq.push(c.peak_frequency.powi(2));
    }
    let r2 = r_squared(&x, &fr_sq);
    let pass = (PEAK_RANGE_GHZ.0..=PEAK_RANGE_GHZ.1).contains(&peak)
        && (F3DB_RANGE_GHZ.0..=F3DB_RANGE_GHZ.1).contains(&f3)
        && r2 > FR_SQ_MIN_R2;
    Ok(Verdict::new(
        pass,
        format!(
            "75 mA: peak {peak:.2} GHz, f3dB {f3:.2} GHz; f_R^2 vs (I - I_th) R^2 = {r2:.5} over 5 biases \
             (peak^2 R^2 = {:.5}, reference only)",
            r_squared(&x, &peak_sq)
        ),
    ))
}

fn live_surrogate() -> dmlink::Result<Surrogate> {
    let p = laser();
    let mut s = Surrogate::init(CatConfig::for_laser(&p)?, 5)?;
    let d = s.config.embed_dim;
    if let Some(w) = s.params.get_mut("out.w") {
        *w = Tensor::column((0..d).map(|k| 0.02 * ((k % 7) as f64 - 3.0)).collect());
    }
    Ok(s)
}

fn differentiation() -> Check {
    let mut worst_op = ("", 0.0f64);
    for (name, err) in common::op_checks(42) {
        if err > worst_op.1 {
            worst_op = (name, err);
        }
    }

    // Full autoencoder graph: encoder, surrogate, noise, decoder, CE. The
    // mapping is scaled so no sample reaches the clip, whose straight-through
    // gradient is not a derivative.
    let sur = live_surrogate()?;
    let mut store = init_autoencoder(0.070, 0.040, 3)?;
    if let Some(m) = store.get_mut(names::MAPPING) {
        m.data.iter_mut().for_each(|v| *v *= 0.8);
    }
    let lp = tx_lowpass(25e9)?;
    let symbols = frame_symbols(9, 0);
    let noise = frame_noise(9, 0, 2e-4, FRAME_LEN)?;
    let ae = gradient_check(
        &store,
        |g, s| ae_forward(g, s, &sur, &lp, &noise, &symbols, Weights::Trainable),
        11,
    )?;

    // Diagnostic only: the largest finite-difference discrepancy expressed
    // as the loss change it corresponds to, in units of the loss's spacing
    // between adjacent doubles.
    let loss = {
        let mut g = Graph::new();
        let l = ae_forward(&mut g, &store, &sur, &lp, &noise, &symbols, Weights::Frozen)?;
        g.value(l).item()
    };
    let loss_ulp = loss.abs() * f64::EPSILON;
    let over = ae.checks.iter().filter(|c| c.rel_error >= GRAD_TOL).count();
    let worst_ulps = ae
        .checks
        .iter()
        .map(|c| (c.analytic - c.numeric).abs() * 2.0 * FD_STEP / loss_ulp)
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = common::rand_tensor(&mut rng, 6, 4, 3.0);
    let targets = [0, 3, 2, 2, 1, 0];
    let ps = common::store_with(&[("z", z)]);
    let mut g = Graph::new();
    let zv = g.param(&ps, "z")?;
    let ce = g.softmax_ce(zv, &targets)?;
    let grads = g.param_grads(&g.backward(ce)?);
    let probs = g
        .softmax_probs(ce)
        .ok_or_else(|| dmlink::Error::Degenerate("no probabilities on the CE node".into()))?;
    let mut ce_err = 0.0f64;
    for (r, &t) in targets.iter().enumerate() {
        for c in 0..4 {
            let onehot = if t == c { 1.0 } else { 0.0 };
            ce_err = ce_err.max((grads["z"].at(r, c) - (probs.at(r, c) - onehot) / 6.0).abs());
        }
    }
    let pass = worst_op.1 < GRAD_TOL && ae.max_rel_error < GRAD_TOL && ce_err < CE_GRAD_TOL;
    Ok(Verdict::new(
        pass,
        format!(
            "worst op {} rel err {:.2e}; full AE graph {:.2e} over {} coords ({over} over tolerance, \
             largest discrepancy {worst_ulps:.1} loss ulps); softmax-CE vs probs - onehot {ce_err:.1e}",
            worst_op.0,
            worst_op.1,
            ae.max_rel_error,
            ae.checks.len()
        ),
    ))
}

fn volterra_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h1: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = Graph::new();
    let uv = g.constant(Tensor::column(u.clone()));
    let hv = g.constant(Tensor::column(h1.clone()));
    let fir = g.fir(uv, hv, 3)?;
    let kernel = VolterraKernel::new(0.0, h1, vec![0.0; 16], 4)?;
    let vol = volterra_apply(&u, &kernel, 3);
    let fir_err = g
        .value(fir)
        .data
        .iter()
        .zip(&vol)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut truth = VolterraKernel::zeros(16, 16);
    truth.h0 = -0.05;
    truth.h1.iter_mut().for_each(|h| *h = rng.gen_range(-1.0..1.0));
    truth.h2.iter_mut().for_each(|h| *h = rng.gen_range(-0.3..0.3));
    let truth = truth.symmetrized();
    let x: Vec<f64> = (0..3000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = volterra_apply(&x, &truth, 8);
    let (fit, _) = fit_volterra(&x, &y, 16, 16, 8, 0..3000)?;
    let ls_err = fit
        .h1
        .iter()
        .zip(&truth.h1)
        .chain(fit.h2.iter().zip(&truth.h2))
        .map(|(a, b)| (a - b).abs())
        .fold((fit.h0 - truth.h0).abs(), f64::max);
    let budget = BaselineKind::VnleLps.tap_budget();
    let taps = VolterraKernel::zeros(16, 16).tap_count();
    let pass = fir_err < VOLTERRA_FIR_TOL && ls_err < VOLTERRA_LS_TOL && budget == VNLE_BUDGET && taps == VNLE_BUDGET;
    Ok(Verdict::new(
        pass,
        format!("order-1 vs FIR {fir_err:.1e}; LS recovery {ls_err:.1e}; VNLE taps {taps}, budget {budget}"),
    ))
}

fn surrogate_fidelity(cfg: &ExperimentConfig) -> Check {
    let p = cfg.laser()?;
    let mut pass = true;
    let mut parts = Vec::new();
    for rs in cfg.symbol_rates() {
        let model = load_surrogate(cfg, rs)?;
        let data = generate_dataset(&p, rs, 0, cfg.dataset.frames, cfg.seed)?;
        let (train_idx, _) = split_frames(data.len(), cfg.surrogate.test_fraction)?;
        let train: Vec<&SurrogateSample> = data[train_idx].iter().collect();
        // Training picks its checkpoint on the split-off frames, so the
        // held-out figure uses frames beyond the dataset instead.
        let fresh = generate_dataset(&p, rs, cfg.dataset.frames as u64, HELD_OUT_FRAMES, cfg.seed)?;
        let test: Vec<&SurrogateSample> = fresh.iter().collect();
        let (tr, te) = (mean_nrmse(&model, &train)?, mean_nrmse(&model, &test)?);
        let ok = te <= SURROGATE_MAX_TEST_NRMSE && te <= SURROGATE_MAX_GAP * tr;
        pass &= ok;
        parts.push(format!(
            "{:.0} GBd test {:.2}% train {:.2}%",
            rs / 1e9,
            te * 100.0,
            tr * 100.0
        ));
    }
    Ok(Verdict::new(pass, parts.join("; ")))
}

fn e2e_ordering(cfg: &ExperimentConfig) -> Check {
    let rs = 25e9;
    let p = cfg.laser()?;
    let power_ref = CatConfig::for_laser(&p)?.power_ref;
    let plan = eval_plan(cfg, rs, noise_sigma(cfg, &p, rs)?);
    let store = load_ae(cfg, rs)?;
    let ae = evaluate_autoencoder(&store, &p, power_ref, &plan)?;
    // Baseline swing whose received power is nearest the autoencoder's.
    let bias = cfg.link.i_bias_ma * 1e-3;
    let mut best = (f64::INFINITY, 0.0);
    for i_pp in swing_grid() {
        let d = (received_power_metric(&p, bias, i_pp)? - ae.metrics.prec_dbm).abs();
        if d < best.0 {
            best = (d, i_pp);
        }
    }
    let drive = (bias, best.1);
    let bl = evaluate_uncompensated(&p, power_ref, drive, &plan)?;
    let ffe = evaluate_ffe(&p, power_ref, drive, &plan)?;
    let ck = Checkpoint::load(&vnle_path(cfg, rs, best.1))?;
    ck.expect_kind(VNLE_KIND)?;
    let vnle = evaluate_vnle_lps(&ck.params, &p, power_ref, drive, &plan)?;
    let ser = |o: &EvalOutcome| o.metrics.ser;
    let pass = ser(&ae) <= ser(&vnle)
        && ser(&vnle) <= ser(&ffe)
        && ser(&ffe) <= ser(&bl)
        && ae.metrics.mi_bits >= vnle.metrics.mi_bits;
    Ok(Verdict::new(
        pass,
        format!(
            "P_rec AE {:.2} dBm vs baselines {:.2} dBm at {:.0} mA; SER AE {:.3e} VNLE {:.3e} FFE {:.3e} BL {:.3e}; MI AE {:.4} VNLE {:.4}",
            ae.metrics.prec_dbm,
            vnle.metrics.prec_dbm,
            best.1 * 1e3,
            ser(&ae),
            ser(&vnle),
            ser(&ffe),
            ser(&bl),
            ae.metrics.mi_bits,
            vnle.metrics.mi_bits
        ),
    ))
}

fn learned_bias(cfg: &ExperimentConfig) -> Check {
    let mut biases = Vec::new();
    let mut notes = Vec::new();
    for (rs_gbd, published) in PUBLISHED_BIAS_MA {
        let (b, _) = learned_currents(&load_ae(cfg, rs_gbd * 1e9)?)?;
        let b = b * 1e3;
        let soft = if (b - published).abs() <= PUBLISHED_BIAS_SOFT_TOL_MA {
            "within"
        } else {
            "outside"
        };
        notes.push(format!(
            "{rs_gbd:.0} GBd {b:.2} mA (published {published:.2}, {soft} +/-{PUBLISHED_BIAS_SOFT_TOL_MA:.0})"
        ));
        biases.push(b);
    }
    let interior = biases
        .iter()
        .all(|&b| b > BIAS_OPEN_RANGE_MA.0 && b < BIAS_OPEN_RANGE_MA.1);
    let monotone = biases.windows(2).all(|w| w[1] >= w[0]);
    Ok(Verdict::new(
        interior && monotone,
        format!("{}; interior {interior}, non-decreasing {monotone}", notes.join(", ")),
    ))
}

fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

fn channel_sanity() -> Check {
    let levels = equispaced_levels(PAM_ORDER);
    let signal_var = levels.iter().map(|v| v * v).sum::<f64>() / PAM_ORDER as f64;
    let d = (levels[1] - levels[0]) / 2.0;
    let n = 200_000;
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, snr_db) in [12.0, 15.0, 17.0].into_iter().enumerate() {
        let sigma = (signal_var / 10f64.powf(snr_db / 10.0)).sqrt();
        let mut rng = frame_rng(17, k as u64, 0);
        let draw = |rng: &mut ChaCha8Rng, n: usize| -> dmlink::Result<(Vec<usize>, Vec<f64>)> {
            let s: Vec<usize> = (0..n).map(|_| rng.gen_range(0..PAM_ORDER)).collect();
            let x: Vec<f64> = s.iter().map(|&i| levels[i]).collect();
            Ok((s, add_awgn(&x, sigma, rng)?))
        };
        let (fit_s, fit_y) = draw(&mut rng, 20_000)?;
        let det = LevelDetector::fit(&fit_y, &fit_s, PAM_ORDER)?;
        let (s, y) = draw(&mut rng, n)?;
        let decided: Vec<usize> = y.iter().map(|&v| det.decide(v)).collect();
        let ser = compute_ser(&s, &decided)?;
        let expect = 2.0 * (PAM_ORDER - 1) as f64 / PAM_ORDER as f64 * q_function(d / sigma);
        let sd = (expect * (1.0 - expect) / n as f64).sqrt();
        let ok = (ser - expect).abs() <= SER_SIGMAS * sd;
        pass &= ok;
        parts.push(format!(
            "{snr_db} dB: SER {ser:.4e} vs {expect:.4e} ({:+.2} sd)",
            (ser - expect) / sd
        ));
    }
    // Calibrated noise on fresh reference frames.
    let p = laser();
    let link = LinkConfig::at_rate(25e9);
    let sigma = calibrate_noise(&p, &link, 8)?.sigma;
    let clean = reference_power(&p, &link, 8, link.seed.wrapping_add(1))?;
    let noisy = add_awgn(&clean, sigma, &mut ChaCha8Rng::seed_from_u64(23))?;
    let snr = measure_snr_db(&clean, &noisy)?;
    pass &= (snr - SNR_TARGET_DB).abs() <= SNR_TOL_DB;
    parts.push(format!("calibrated SNR {snr:.3} dB"));
    Ok(Verdict::new(pass, parts.join("; ")))
}

fn run_cli(bin: &str, args: &[&str]) -> dmlink::Result<()> {
    let status = Command::new(bin)
        .args(args)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .status()?;
    if !status.success() {
        return Err(dmlink::Error::Config(format!("{args:?} exited with {status}")));
    }
    Ok(())
}

/// Every file under `dir` except the timing logs, as (relative path, bytes).
fn outputs(dir: &Path) -> dmlink::Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if name.ends_with("_log.csv") {
            continue;
        }
        files.push((PathBuf::from(name), fs::read(&path)?));
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Check {
    let bin = env!("CARGO_BIN_EXE_dmlink");
    let tmp = tempfile::tempdir()?;
    let config = tmp.path().join("tiny.toml");
    fs::write(
        &config,
        "symbol_rates_gbd = [25.0]\n\
         [dataset]\nframes = 6\n\
         [surrogate]\nepochs = 1\nbatch = 2\n\
         [autoencoder]\nepochs = 1\nframes = 5\n\
         [eval]\nfit_frames = 2\ntest_frames = 2\n\
         [eye]\nframes = 1\n\
         [li_curve]\nstep_ma = 2.0\n",
    )?;
    let commands = [
        "li-curve",
        "eye",
        "gen-dataset",
        "train-surrogate",
        "train-ae",
        "evaluate",
    ];
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        for cmd in commands {
            run_cli(
                bin,
                &[
                    cmd,
                    "--config",
                    config.to_str().unwrap_or_default(),
                    "--seed",
                    "7",
                    "--out",
                    out.to_str().unwrap_or_default(),
                ],
            )?;
        }
        runs.push(outputs(&out)?);
    }
    let differing: Vec<String> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.display().to_string())
        .collect();
    let pass = runs[0].len() == runs[1].len() && differing.is_empty() && !runs[0].is_empty();
    Ok(Verdict::new(
        pass,
        format!(
            "{} output files from {} commands compared bytewise; differing: {}",
            runs[0].len(),
            commands.len(),
            if differing.is_empty() {
                "none".to_string()
            } else {
                differing.join(", ")
            }
        ),
    ))
}

fn main() {
    let cfg = desk_config();
    let with_cfg = |f: fn(&ExperimentConfig) -> Check| -> Check {
        match &cfg {
            Ok(c) => f(c),
            Err(e) => Err(dmlink::Error::Config(format!("configs/desk.toml: {e}"))),
        }
    };
    let criteria: Vec<Criterion> = vec![
        ("static laser physics", Box::new(static_physics)),
        ("dynamic laser physics", Box::new(dynamic_physics)),
        ("differentiation correctness", Box::new(differentiation)),
        ("Volterra identities", Box::new(volterra_identities)),
        ("surrogate fidelity", Box::new(move || with_cfg(surrogate_fidelity))),
        ("E2E ordering at 25 GBd", Box::new(move || with_cfg(e2e_ordering))),
        ("learned drive currents", Box::new(move || with_cfg(learned_bias))),
        ("channel sanity", Box::new(channel_sanity)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check().unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {} {tag} [{name}] {} ({:.0} s)",
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!v.pass);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
