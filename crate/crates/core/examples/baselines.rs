//! Uncompensated and linearly equalized 4PAM over the rate equations at
//! 25 GBd across a few swings.

use dmlink::e2e::{evaluate_ffe, evaluate_uncompensated, EvalPlan, BASELINE_BIAS};
use dmlink::laser::LaserParams;
use dmlink::link::{calibrate_noise, LinkConfig};
use dmlink::surrogate::CatConfig;

fn main() -> dmlink::Result<()> {
    let p = LaserParams::default();
    let rs = 25e9;
    let power_ref = CatConfig::for_laser(&p)?.power_ref;
    let plan = EvalPlan {
        symbol_rate: rs,
        sigma: calibrate_noise(&p, &LinkConfig::at_rate(rs), 4)?.sigma,
        fit_frames: 4,
        test_frames: 8,
        seed: 1,
    };
    println!("i_pp_ma,prec_dbm,ser_bl,ser_ffe,mi_bl,mi_ffe");
    for i_pp in [0.024, 0.048, 0.080] {
        let bl = evaluate_uncompensated(&p, power_ref, (BASELINE_BIAS, i_pp), &plan)?;
        let ffe = evaluate_ffe(&p, power_ref, (BASELINE_BIAS, i_pp), &plan)?;
        println!(
            "{:.0},{:.2},{:.3e},{:.3e},{:.3},{:.3}",
            i_pp * 1e3,
            bl.metrics.prec_dbm,
            bl.metrics.ser,
            ffe.metrics.ser,
            bl.metrics.mi_bits,
            ffe.metrics.mi_bits
        );
    }
    Ok(())
}
