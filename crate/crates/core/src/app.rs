//! The commands behind the `dmlink` binary. Each one reads an experiment
//! config, writes its outputs under the output directory and returns the
//! paths it wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diff::ParamStore;
use crate::dsp::{eye_histogram, frame_rng, SymbolSequence, PAM_ORDER};
use crate::e2e::{
    evaluate_autoencoder, evaluate_autoencoder_on_surrogate, init_autoencoder, learned_currents, nearest_prec,
    run_baseline, train_autoencoder, train_vnle_lps, AeTrainConfig, BaselineConfig, BaselineKind, EvalOutcome,
    EvalPlan, VnleTrainConfig,
};
use crate::error::{Error, Result};
use crate::io::{
    read_dataset_file, read_metrics_csv, surrogate_checkpoint, surrogate_from_checkpoint, write_dataset_file,
    write_eye_csv, write_metrics_csv, Checkpoint, ExperimentConfig, MetricsRow,
};
use crate::laser::{probe_small_signal, simulate_li_curve, LaserParams};
use crate::link::{calibrate_noise, drive_current, stream, LinkConfig, ReferenceChannel, FRAME_SYMBOLS};
use crate::surrogate::{
    evaluate_surrogate, generate_dataset, generate_stratified, mean_nrmse, split_frames, train_surrogate, CatConfig,
    Surrogate, SurrogateSample,
};

/// Everything the binary can do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    LiCurve,
    S21,
    Eye,
    GenDataset,
    TrainSurrogate,
    EvalSurrogate,
    TrainAe,
    RunBaselines,
    Evaluate,
    Report,
}

pub const AE_KIND: &str = "autoencoder";
pub const VNLE_KIND: &str = "vnle-lps";
pub const AE_LABEL: &str = "AE";

/// Seed offset of the stratified surrogate evaluation set, keeping it
/// disjoint from the training frames.
const STRATIFIED_SEED_OFFSET: u64 = 1 << 32;

/// Loads `path` (or the defaults) and applies command-line overrides.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&cfg.out_dir)?;
    match command {
        Command::LiCurve => li_curve(cfg),
        Command::S21 => s21(cfg),
        Command::Eye => eye(cfg),
        Command::GenDataset => gen_dataset(cfg),
        Command::TrainSurrogate => train_surrogates(cfg),
        Command::EvalSurrogate => eval_surrogates(cfg),
        Command::TrainAe => train_aes(cfg),
        Command::RunBaselines => run_baselines(cfg),
        Command::Evaluate => evaluate(cfg),
        Command::Report => report(cfg),
    }
}

/// File-name tag of a symbol rate, e.g. `25gbd`.
pub fn rate_tag(symbol_rate: f64) -> String {
    format!("{}gbd", fmt_num(symbol_rate / 1e9))
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}").replace('.', "p")
    }
}

pub fn dataset_path(cfg: &ExperimentConfig, symbol_rate: f64) -> PathBuf {
    cfg.out_dir.join(format!("dataset_{}.dmld", rate_tag(symbol_rate)))
}

pub fn surrogate_path(cfg: &ExperimentConfig, symbol_rate: f64) -> PathBuf {
    cfg.artifacts()
        .join(format!("surrogate_{}.ckpt", rate_tag(symbol_rate)))
}

pub fn ae_path(cfg: &ExperimentConfig, symbol_rate: f64) -> PathBuf {
    cfg.artifacts().join(format!("ae_{}.ckpt", rate_tag(symbol_rate)))
}

pub fn vnle_path(cfg: &ExperimentConfig, symbol_rate: f64, i_pp: f64) -> PathBuf {
    cfg.artifacts().join(format!(
        "vnle_{}_{}ma.ckpt",
        rate_tag(symbol_rate),
        fmt_num((i_pp * 1e3).round())
    ))
}

fn write_text(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text)?;
    Ok(path)
}

fn li_curve(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let p = cfg.laser()?;
    let s = &cfg.li_curve;
    let n = ((s.stop_ma - s.start_ma) / s.step_ma).round() as usize;
    let currents: Vec<f64> = (0..=n).map(|k| (s.start_ma + k as f64 * s.step_ma) * 1e-3).collect();
    let li = simulate_li_curve(&p, &currents)?;
    let mut csv = String::from("current_ma,power_mw\n");
    for (i, w) in li.currents.iter().zip(&li.powers) {
        writeln!(csv, "{:.6},{:.9e}", i * 1e3, w * 1e3).expect("writing to a String");
    }
    let summary = format!(
        "threshold_ma = {:.6}\nslope_efficiency_w_per_a = {:.6}\nanalytic_threshold_ma = {:.6}\nanalytic_slope_w_per_a = {:.6}\n",
        li.threshold_current * 1e3,
        li.slope_efficiency,
        p.analytic_threshold_current() * 1e3,
        p.analytic_slope_efficiency()
    );
    log::info!(
        "threshold {:.3} mA, slope {:.4} W/A",
        li.threshold_current * 1e3,
        li.slope_efficiency
    );
    Ok(vec![
        write_text(cfg.out_dir.join("li_curve.csv"), &csv)?,
        write_text(cfg.out_dir.join("li_summary.toml"), &summary)?,
    ])
}

fn s21(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let p = cfg.laser()?;
    let s = &cfg.s21;
    let freqs: Vec<f64> = (1..=s.points)
        .map(|k| k as f64 * s.max_ghz * 1e9 / s.points as f64)
        .collect();
    let mut csv = String::from("bias_ma,freq_ghz,magnitude,magnitude_db\n");
    let mut summary = String::from("bias_ma,peak_ghz,f3db_ghz\n");
    for &b in &s.bias_ma {
        let curve = probe_small_signal(&p, b * 1e-3, &freqs, s.depth)?;
        for (f, m) in curve.frequencies.iter().zip(&curve.magnitude) {
            writeln!(csv, "{b:.3},{:.6},{m:.9e},{:.6}", f / 1e9, 10.0 * m.log10()).expect("writing to a String");
        }
        let f3 = curve.f3db.map_or(f64::NAN, |f| f / 1e9);
        writeln!(summary, "{b:.3},{:.6},{f3:.6}", curve.peak_frequency / 1e9).expect("writing to a String");
        log::info!("{b} mA: peak {:.2} GHz, f3dB {f3:.2} GHz", curve.peak_frequency / 1e9);
    }
    Ok(vec![
        write_text(cfg.out_dir.join("s21.csv"), &csv)?,
        write_text(cfg.out_dir.join("s21_summary.csv"), &summary)?,
    ])
}

/// Eye of the received power at each rate, square pulses, plotted from the
/// oversampled waveform after the receive filter would act.
fn eye(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let p = cfg.laser()?;
    let e = &cfg.eye;
    let mut written = Vec::new();
    for rs in cfg.symbol_rates() {
        let link = LinkConfig {
            symbol_rate: rs,
            i_bias: e.i_bias_ma * 1e-3,
            i_pp: e.i_pp_ma * 1e-3,
            sps: e.sps,
            oversample: LinkConfig::default().oversample,
            ..cfg.link_at(rs)
        };
        let channel = ReferenceChannel::new(p, &link)?;
        let mut trace = Vec::new();
        for f in 0..e.frames as u64 {
            let mut rng = frame_rng(cfg.seed, f, stream::SYMBOLS);
            let symbols = SymbolSequence::random(FRAME_SYMBOLS, PAM_ORDER, rs, &mut rng);
            let current = drive_current(&symbols, &vec![1.0; e.sps], &link)?;
            let power = channel.propagate(&current, link.i_bias)?;
            // Skip the start-up transient.
            trace.extend_from_slice(&power[power.len() / 8..]);
        }
        let hist = eye_histogram(&trace, e.sps, e.periods, e.amp_bins)?;
        let path = cfg.out_dir.join(format!("eye_{}.csv", rate_tag(rs)));
        write_eye_csv(&path, &hist)?;
        written.push(path);
    }
    Ok(written)
}

fn gen_dataset(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let p = cfg.laser()?;
    let mut written = Vec::new();
    for rs in cfg.symbol_rates() {
        let frames = generate_dataset(&p, rs, 0, cfg.dataset.frames, cfg.seed)?;
        let path = dataset_path(cfg, rs);
        write_dataset_file(&path, rs, &frames)?;
        log::info!(
            "{} frames at {} written to {}",
            frames.len(),
            rate_tag(rs),
            path.display()
        );
        written.push(path);
    }
    Ok(written)
}

/// The training frames for `rs`: read from the dataset file when one with
/// the configured size exists, generated otherwise.
fn training_frames(cfg: &ExperimentConfig, p: &LaserParams, rs: f64) -> Result<Vec<SurrogateSample>> {
    let path = dataset_path(cfg, rs);
    if path.exists() {
        let (rate, frames) = read_dataset_file(&path)?;
        if rate == rs && frames.len() == cfg.dataset.frames && frames.first().map(|f| f.seed) == Some(cfg.seed) {
            return Ok(frames);
        }
        log::warn!("{} does not match the config; regenerating", path.display());
    }
    generate_dataset(p, rs, 0, cfg.dataset.frames, cfg.seed)
}

fn train_surrogates(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let p = cfg.laser()?;
    let tcfg = cfg.surrogate_training();
    fs::create_dir_all(cfg.artifacts())?;
    let mut written = Vec::new();
    for rs in cfg.symbol_rates() {
        let tag = rate_tag(rs);
        let data = training_frames(cfg, &p, rs)?;
        let model = Surrogate::init(CatConfig::for_laser(&p)?, cfg.seed)?;
        let mut log_csv = String::from("epoch,train_loss,train_nrmse,test_nrmse,lr,seconds\n");
        let (model, report) = train_surrogate(model, &data, &tcfg, |l| {
            log::info!(
                "{tag} epoch {}: loss {:.4} train {:.4} test {:.4} ({:.0} s)",
                l.epoch,
                l.train_loss,
                l.train_nrmse,
                l.test_nrmse,
                l.seconds
            );
            writeln!(
                log_csv,
                "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.1}",
                l.epoch, l.train_loss, l.train_nrmse, l.test_nrmse, l.lr, l.seconds
            )
            .expect("writing to a String");
        })?;
        let path = surrogate_path(cfg, rs);
        surrogate_checkpoint(&model, rs)
            .with("seed", cfg.seed)
            .with("train_frames", report.train_frames)
            .with("test_frames", report.test_frames)
            .with("best_test_nrmse", format!("{:?}", report.best_test_nrmse))
            .save(&path)?;
        log::info!("{tag}: best held-out NRMSE {:.4}", report.best_test_nrmse);
        written.push(path);
        // Timings vary between runs, so the log sits beside the checkpoint
        // rather than among the deterministic outputs.
        written.push(write_text(
            cfg.artifacts().join(format!("surrogate_{tag}_log.csv")),
            &log_csv,
        )?);
    }
    Ok(written)
}

pub fn load_surrogate(cfg: &ExperimentConfig, rs: f64) -> Result<Surrogate> {
    let path = surrogate_path(cfg, rs);
    let ck = Checkpoint::load(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let (model, rate) = surrogate_from_checkpoint(&ck)?;
    if rate != rs {
        return Err(Error::Config(format!(
            "{} was trained at {rate} Bd, not {rs}",
            path.display()
        )));
    }
    Ok(model)
}

/// Mean NRMSE on the training and held-out frames plus the stratified grid.
fn eval_surrogates(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let p = cfg.laser()?;
    let mut summary = String::from("rs_gbd,train_nrmse,test_nrmse,stratified_nrmse,covered_cells\n");
    let mut written = Vec::new();
    for rs in cfg.symbol_rates() {
        let tag = rate_tag(rs);
        let model = load_surrogate(cfg, rs)?;
        let data = training_frames(cfg, &p, rs)?;
        let (train_idx, test_idx) = split_frames(data.len(), cfg.surrogate.test_fraction)?;
        let train: Vec<&SurrogateSample> = data[train_idx].iter().collect();
        let test: Vec<&SurrogateSample> = data[test_idx].iter().collect();
        let (train_e, test_e) = (mean_nrmse(&model, &train)?, mean_nrmse(&model, &test)?);
        let grid_frames = generate_stratified(
            &p,
            rs,
            cfg.dataset.eval_per_cell,
            cfg.seed.wrapping_add(STRATIFIED_SEED_OFFSET),
        )?;
        let grid = evaluate_surrogate(&model, &grid_frames)?;
        writeln!(
            summary,
            "{},{train_e:.9e},{test_e:.9e},{:.9e},{}",
            fmt_num(rs / 1e9),
            grid.overall,
            grid.covered_cells()
        )
        .expect("writing to a String");
        let mut cells = String::from("bias_decile,swing_decile,frames,mean_nrmse\n");
        for b in 0..10 {
            for s in 0..10 {
                writeln!(cells, "{b},{s},{},{:.9e}", grid.counts[b][s], grid.mean[b][s]).expect("writing to a String");
            }
        }
        log::info!(
            "{tag}: train {train_e:.4} test {test_e:.4} stratified {:.4}",
            grid.overall
        );
        written.push(write_text(
            cfg.out_dir.join(format!("surrogate_grid_{tag}.csv")),
            &cells,
        )?);
    }
    written.push(write_text(cfg.out_dir.join("surrogate_eval.csv"), &summary)?);
    Ok(written)
}

/// Receiver noise for `rs`, calibrated on the square-pulse reference.
pub fn noise_sigma(cfg: &ExperimentConfig, p: &LaserParams, rs: f64) -> Result<f64> {
    Ok(calibrate_noise(p, &cfg.link_at(rs), cfg.link.calibration_frames)?.sigma)
}

pub fn eval_plan(cfg: &ExperimentConfig, rs: f64, sigma: f64) -> EvalPlan {
    EvalPlan {
        symbol_rate: rs,
        sigma,
        fit_frames: cfg.eval.fit_frames,
        test_frames: cfg.eval.test_frames,
        seed: cfg.seed,
    }
}

fn train_aes(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let p = cfg.laser()?;
    fs::create_dir_all(cfg.artifacts())?;
    let a = &cfg.autoencoder;
    let mut written = Vec::new();
    for rs in cfg.symbol_rates() {
        let tag = rate_tag(rs);
        let surrogate = load_surrogate(cfg, rs)?;
        let sigma = noise_sigma(cfg, &p, rs)?;
        let tcfg = AeTrainConfig {
            epochs: a.epochs,
            frames: a.frames,
            lr: a.lr,
            seed: cfg.seed,
            ..AeTrainConfig::new(rs, sigma)
        };
        let store = init_autoencoder(a.init_bias_ma * 1e-3, a.init_pp_ma * 1e-3, cfg.seed)?;
        let mut log_csv = String::from("epoch,train_ce_bits,val_ce_bits,i_bias_ma,i_pp_ma,seconds\n");
        let (store, report) = train_autoencoder(store, &surrogate, &tcfg, |l| {
            log::info!(
                "{tag} epoch {}: CE {:.4} val {:.4} bits, bias {:.2} mA, swing {:.2} mA ({:.0} s)",
                l.epoch,
                l.train_ce_bits,
                l.val_ce_bits,
                l.i_bias * 1e3,
                l.i_pp * 1e3,
                l.seconds
            );
            writeln!(
                log_csv,
                "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.1}",
                l.epoch,
                l.train_ce_bits,
                l.val_ce_bits,
                l.i_bias * 1e3,
                l.i_pp * 1e3,
                l.seconds
            )
            .expect("writing to a String");
        })?;
        let (i_bias, i_pp) = learned_currents(&store)?;
        let path = ae_path(cfg, rs);
        Checkpoint::new(AE_KIND, rs, store)
            .with("seed", cfg.seed)
            .with("sigma", format!("{sigma:?}"))
            .with("best_val_ce_bits", format!("{:?}", report.best_val_ce_bits))
            .save(&path)?;
        log::info!("{tag}: learned bias {:.2} mA, swing {:.2} mA", i_bias * 1e3, i_pp * 1e3);
        written.push(path);
        written.push(write_text(cfg.artifacts().join(format!("ae_{tag}_log.csv")), &log_csv)?);
    }
    Ok(written)
}

pub fn load_ae(cfg: &ExperimentConfig, rs: f64) -> Result<ParamStore> {
    let path = ae_path(cfg, rs);
    let ck = Checkpoint::load(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    ck.expect_kind(AE_KIND)?;
    Ok(ck.params)
}

/// Trained VNLE+LPS parameters for one swing, loaded when a checkpoint
/// exists and trained (and saved) otherwise.
fn vnle_params(cfg: &ExperimentConfig, surrogate: &Surrogate, rs: f64, sigma: f64, i_pp: f64) -> Result<ParamStore> {
    let path = vnle_path(cfg, rs, i_pp);
    if path.exists() {
        let ck = Checkpoint::load(&path)?;
        ck.expect_kind(VNLE_KIND)?;
        return Ok(ck.params);
    }
    let v = &cfg.vnle;
    let tcfg = VnleTrainConfig {
        epochs: v.epochs,
        frames: v.frames,
        lr: v.lr,
        seed: cfg.seed,
        ..VnleTrainConfig::default()
    };
    let (store, report) = train_vnle_lps(surrogate, rs, (cfg.link.i_bias_ma * 1e-3, i_pp), sigma, &tcfg)?;
    log::info!(
        "VNLE+LPS {} at {:.0} mA: MSE {:.4e} -> {:.4e}",
        rate_tag(rs),
        i_pp * 1e3,
        report.initial_mse,
        report.epoch_mse.last().copied().unwrap_or(f64::NAN)
    );
    fs::create_dir_all(cfg.artifacts())?;
    Checkpoint::new(VNLE_KIND, rs, store.clone())
        .with("seed", cfg.seed)
        .with("i_pp", format!("{i_pp:?}"))
        .save(&path)?;
    Ok(store)
}

fn metrics_row(label: &str, rs: f64, o: &EvalOutcome, seed: u64) -> MetricsRow {
    MetricsRow {
        approach: label.to_string(),
        rs_gbd: rs / 1e9,
        ipp_ma: o.i_pp * 1e3,
        ibias_ma: o.i_bias * 1e3,
        prec_dbm: o.metrics.prec_dbm,
        ser: o.metrics.ser,
        mi_bits: o.metrics.mi_bits,
        seed,
    }
}

fn run_baselines(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let p = cfg.laser()?;
    let power_ref = CatConfig::for_laser(&p)?.power_ref;
    let mut rows = Vec::new();
    for rs in cfg.symbol_rates() {
        let sigma = noise_sigma(cfg, &p, rs)?;
        let plan = eval_plan(cfg, rs, sigma);
        let mut surrogate: Option<Surrogate> = None;
        for kind in BaselineKind::ALL {
            let bcfg = BaselineConfig {
                i_bias: cfg.link.i_bias_ma * 1e-3,
                ..BaselineConfig::new(kind)
            };
            let points = run_baseline(&bcfg, &p, power_ref, &plan, |i_pp| {
                if surrogate.is_none() {
                    surrogate = Some(load_surrogate(cfg, rs)?);
                }
                vnle_params(cfg, surrogate.as_ref().expect("loaded"), rs, sigma, i_pp)
            });
            for point in points {
                match point.result {
                    Ok(o) => rows.push(metrics_row(kind.label(), rs, &o, cfg.seed)),
                    Err(e) => log::warn!("{kind} {} at {:.0} mA skipped: {e}", rate_tag(rs), point.i_pp * 1e3),
                }
            }
        }
    }
    let path = cfg.out_dir.join("baselines.csv");
    write_metrics_csv(&path, &rows)?;
    Ok(vec![path])
}

/// The trained autoencoders on the rate equations, plus their figures on
/// the surrogate for comparison.
fn evaluate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let p = cfg.laser()?;
    let power_ref = CatConfig::for_laser(&p)?.power_ref;
    let mut rows = Vec::new();
    let mut on_surrogate = Vec::new();
    for rs in cfg.symbol_rates() {
        let store = load_ae(cfg, rs)?;
        let sigma = noise_sigma(cfg, &p, rs)?;
        let plan = eval_plan(cfg, rs, sigma);
        let o = evaluate_autoencoder(&store, &p, power_ref, &plan)?;
        if o.excluded_frames > 0 {
            log::warn!(
                "{}: {} frames excluded after solver divergence",
                rate_tag(rs),
                o.excluded_frames
            );
        }
        rows.push(metrics_row(AE_LABEL, rs, &o, cfg.seed));
        let surrogate = load_surrogate(cfg, rs)?;
        let s = evaluate_autoencoder_on_surrogate(&store, &p, &surrogate, &plan)?;
        on_surrogate.push(metrics_row(AE_LABEL, rs, &s, cfg.seed));
    }
    let path = cfg.out_dir.join("ae_metrics.csv");
    write_metrics_csv(&path, &rows)?;
    let spath = cfg.out_dir.join("ae_surrogate_metrics.csv");
    write_metrics_csv(&spath, &on_surrogate)?;
    Ok(vec![path, spath])
}

/// Per rate: the autoencoder beside each baseline at the swing whose
/// received power is closest to the autoencoder's.
pub fn comparison_table(ae: &[MetricsRow], baselines: &[MetricsRow]) -> Vec<(MetricsRow, Vec<MetricsRow>)> {
    ae.iter()
        .map(|a| {
            let matched = BaselineKind::ALL
                .iter()
                .filter_map(|k| {
                    let same: Vec<&MetricsRow> = baselines
                        .iter()
                        .filter(|r| r.approach == k.label() && r.rs_gbd == a.rs_gbd)
                        .collect();
                    nearest_prec(&same, a.prec_dbm, |r| r.prec_dbm.is_finite().then_some(r.prec_dbm))
                        .map(|r| (*r).clone())
                })
                .collect();
            (a.clone(), matched)
        })
        .collect()
}

fn report(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ae = read_metrics_csv(&cfg.out_dir.join("ae_metrics.csv"))?;
    let baselines = read_metrics_csv(&cfg.out_dir.join("baselines.csv"))?;
    let mut md = String::from("# Link comparison\n\n");
    md.push_str("Baselines are taken at the swing whose received power is closest to the autoencoder's.\n\n");
    md.push_str("| Rate (GBd) | Approach | I_bias (mA) | I_pp (mA) | P_rec (dBm) | SER | MI (bits) |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    for (a, matched) in comparison_table(&ae, &baselines) {
        for r in std::iter::once(&a).chain(&matched) {
            writeln!(
                md,
                "| {} | {} | {:.2} | {:.2} | {:.2} | {:.3e} | {:.4} |",
                fmt_num(r.rs_gbd),
                r.approach,
                r.ibias_ma,
                r.ipp_ma,
                r.prec_dbm,
                r.ser,
                r.mi_bits
            )
            .expect("writing to a String");
        }
    }
    md.push_str("\n## Learned bias\n\n| Rate (GBd) | I_bias (mA) |\n|---|---|\n");
    for a in &ae {
        writeln!(md, "| {} | {:.2} |", fmt_num(a.rs_gbd), a.ibias_ma).expect("writing to a String");
    }
    Ok(vec![write_text(cfg.out_dir.join("report.md"), &md)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_tags() {
        assert_eq!(rate_tag(25e9), "25gbd");
        assert_eq!(rate_tag(12.5e9), "12p5gbd");
    }
}
