//! Probes the laser modulation response at several bias currents and fits
//! the damping law.

use dmlink::laser::{fit_damping, probe_small_signal, simulate_li_curve, LaserParams};

fn main() -> dmlink::Result<()> {
    let p = LaserParams::default();
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 1e-3).collect();
    let ith = simulate_li_curve(&p, &grid)?.threshold_current;
    let freqs: Vec<f64> = (1..=160).map(|i| i as f64 * 0.25e9).collect();
    let mut curves = Vec::new();
    println!("bias_ma,peak_ghz,f3db_ghz,fr_fit_ghz,gamma_per_ns");
    for bias_ma in [50.0, 62.5, 75.0, 87.5, 100.0] {
        let c = probe_small_signal(&p, bias_ma * 1e-3, &freqs, 0.01)?;
        println!(
            "{bias_ma},{:.3},{:.3},{:.3},{:.2}",
            c.peak_frequency * 1e-9,
            c.f3db.unwrap_or(f64::NAN) * 1e-9,
            c.resonance_frequency * 1e-9,
            c.damping * 1e-9
        );
        curves.push(c);
    }
    let (k, g0) = fit_damping(&curves)?;
    println!("threshold {:.3} mA, K = {k:.3e} s, gamma0 = {g0:.3e} 1/s", ith * 1e3);
    Ok(())
}
