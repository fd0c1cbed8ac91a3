//! Trains the end-to-end autoencoder (learned constellation, bias and swing
//! plus a neural decoder) through a quickly fitted surrogate, then scores it
//! on the rate equations.

use dmlink::e2e::{
    evaluate_autoencoder, init_autoencoder, learned_currents, train_autoencoder, AeTrainConfig, EvalPlan,
};
use dmlink::laser::LaserParams;
use dmlink::link::{calibrate_noise, LinkConfig};
use dmlink::surrogate::{generate_dataset, CatConfig, Surrogate, SurrogateSample};

fn main() -> dmlink::Result<()> {
    let p = LaserParams::default();
    let rs = 25e9;
    // Linear-plus-quadratic path only; the full surrogate is trained by
    // `dmlink train-surrogate`.
    let frames = generate_dataset(&p, rs, 0, 8, 21)?;
    let refs: Vec<&SurrogateSample> = frames.iter().collect();
    let mut surrogate = Surrogate::init(CatConfig::for_laser(&p)?, 1)?;
    surrogate.fit_linear_path(&refs, 2)?;

    let sigma = calibrate_noise(&p, &LinkConfig::at_rate(rs), 4)?.sigma;
    let cfg = AeTrainConfig {
        epochs: 3,
        frames: 40,
        lr: 3e-3,
        ..AeTrainConfig::new(rs, sigma)
    };
    let store = init_autoencoder(0.075, 0.040, 1)?;
    let (store, report) = train_autoencoder(store, &surrogate, &cfg, |l| {
        println!(
            "epoch {}: CE {:.3} bits (val {:.3}), bias {:.2} mA, swing {:.2} mA",
            l.epoch,
            l.train_ce_bits,
            l.val_ce_bits,
            l.i_bias * 1e3,
            l.i_pp * 1e3
        );
    })?;
    let (bias, swing) = learned_currents(&store)?;
    println!(
        "validation CE {:.3} -> {:.3} bits",
        report.initial_val_ce_bits, report.best_val_ce_bits
    );

    let plan = EvalPlan {
        symbol_rate: rs,
        sigma,
        fit_frames: 0,
        test_frames: 8,
        seed: 1,
    };
    let o = evaluate_autoencoder(&store, &p, surrogate.config.power_ref, &plan)?;
    println!(
        "on the rate equations at {:.2} mA / {:.2} mA: SER {:.3e}, MI {:.3} bits, P_rec {:.2} dBm",
        bias * 1e3,
        swing * 1e3,
        o.metrics.ser,
        o.metrics.mi_bits,
        o.metrics.prec_dbm
    );
    Ok(())
}
