use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dsp::EyeHistogram;
use crate::error::Result;

pub const METRICS_HEADER: &str = "approach,rs_gbd,ipp_ma,ibias_ma,prec_dbm,ser,mi_bits,seed";

/// One evaluation in the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub approach: String,
    pub rs_gbd: f64,
    pub ipp_ma: f64,
    pub ibias_ma: f64,
    pub prec_dbm: f64,
    pub ser: f64,
    pub mi_bits: f64,
    pub seed: u64,
}

/// Rows sorted by approach, symbol rate, swing and seed, rendered with a
/// header line. Rates and currents keep 6 decimals, SER and MI 9
/// significant digits.
pub fn render_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.approach
            .cmp(&b.approach)
            .then(a.rs_gbd.total_cmp(&b.rs_gbd))
            .then(a.ipp_ma.total_cmp(&b.ipp_ma))
            .then(a.seed.cmp(&b.seed))
    });
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in sorted {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.8e},{:.8e},{}",
            r.approach, r.rs_gbd, r.ipp_ma, r.ibias_ma, r.prec_dbm, r.ser, r.mi_bits, r.seed
        )
        .expect("writing to a String");
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    fs::write(path, render_metrics_csv(rows))?;
    Ok(())
}

/// Parses a file written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(crate::error::Error::Format(format!(
                "unexpected metrics header {other:?}"
            )))
        }
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || crate::error::Error::Format(format!("malformed metrics row {l:?}"));
            if f.len() != 8 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(MetricsRow {
                approach: f[0].to_string(),
                rs_gbd: num(f[1])?,
                ipp_ma: num(f[2])?,
                ibias_ma: num(f[3])?,
                prec_dbm: num(f[4])?,
                ser: num(f[5])?,
                mi_bits: num(f[6])?,
                seed: f[7].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Eye histogram as a grid: one row per amplitude bin (lowest first) with
/// its edges in watts, then one count column per time bin.
pub fn render_eye_csv(eye: &EyeHistogram) -> String {
    let mut out = String::from("amp_low_w,amp_high_w");
    for t in 0..eye.time_bins {
        write!(out, ",t{t}").expect("writing to a String");
    }
    out.push('\n');
    for a in 0..eye.amp_bins {
        write!(out, "{:.9e},{:.9e}", eye.amp_edges[a], eye.amp_edges[a + 1]).expect("writing to a String");
        for t in 0..eye.time_bins {
            write!(out, ",{}", eye.count(a, t)).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn write_eye_csv(path: &Path, eye: &EyeHistogram) -> Result<()> {
    fs::write(path, render_eye_csv(eye))?;
    Ok(())
}
