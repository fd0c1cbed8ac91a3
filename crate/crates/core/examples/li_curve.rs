//! Steady-state light-current curve with the extracted threshold and slope.

use dmlink::laser::{simulate_li_curve, steady_state, LaserParams};

fn main() -> dmlink::Result<()> {
    let p = LaserParams::default();
    let currents: Vec<f64> = (0..=100).map(|i| i as f64 * 1e-3).collect();
    let li = simulate_li_curve(&p, &currents)?;
    println!("current_ma,power_mw");
    for (i, w) in li.currents.iter().zip(&li.powers).step_by(10) {
        println!("{:.0},{:.4}", i * 1e3, w * 1e3);
    }
    println!(
        "threshold {:.3} mA (analytic {:.3}), slope {:.4} W/A (analytic {:.4})",
        li.threshold_current * 1e3,
        p.analytic_threshold_current() * 1e3,
        li.slope_efficiency,
        p.analytic_slope_efficiency()
    );
    let s = steady_state(&p, 0.075)?;
    println!("at 75 mA: S = {:.3e} m^-3, N = {:.3e} m^-3", s.photons, s.carriers);
    Ok(())
}
