//! Generates rate-equation training frames, fits the convolutional-attention
//! surrogate for a few epochs and compares it with the reference on an
//! unseen frame.

use dmlink::dsp::nrmse;
use dmlink::laser::LaserParams;
use dmlink::surrogate::{generate_dataset, train_surrogate, CatConfig, Surrogate, SurrogateTrainConfig};

fn main() -> dmlink::Result<()> {
    let p = LaserParams::default();
    let rs = 25e9;
    let data = generate_dataset(&p, rs, 0, 20, 1)?;
    let cfg = SurrogateTrainConfig {
        epochs: 2,
        test_fraction: 0.2,
        ..SurrogateTrainConfig::default()
    };
    let model = Surrogate::init(CatConfig::for_laser(&p)?, 1)?;
    let (model, report) = train_surrogate(model, &data, &cfg, |l| {
        println!(
            "epoch {}: train NRMSE {:.4}, held-out {:.4}",
            l.epoch, l.train_nrmse, l.test_nrmse
        );
    })?;
    println!(
        "held-out NRMSE {:.4} before training, {:.4} kept",
        report.initial_test_nrmse, report.best_test_nrmse
    );

    let unseen = &generate_dataset(&p, rs, 1000, 1, 1)?[0];
    let pred = model.predict(&unseen.input)?;
    println!(
        "unseen frame at {:.1} mA bias, {:.1} mA swing: NRMSE {:.4}",
        unseen.i_bias * 1e3,
        unseen.i_pp * 1e3,
        nrmse(&pred, &unseen.target)?
    );
    Ok(())
}
