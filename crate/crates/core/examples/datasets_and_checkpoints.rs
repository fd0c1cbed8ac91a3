//! Round trip of the binary dataset and checkpoint formats, and loading an
//! experiment config.

use dmlink::io::{
    read_dataset_file, surrogate_checkpoint, surrogate_from_checkpoint, write_dataset_file, Checkpoint,
    ExperimentConfig,
};
use dmlink::laser::LaserParams;
use dmlink::surrogate::{generate_dataset, CatConfig, Surrogate};

fn main() -> dmlink::Result<()> {
    let dir = std::env::temp_dir().join("dmlink-example");
    std::fs::create_dir_all(&dir)?;
    let p = LaserParams::default();

    let frames = generate_dataset(&p, 20e9, 0, 4, 9)?;
    let path = dir.join("frames.dmld");
    write_dataset_file(&path, 20e9, &frames)?;
    let (rate, back) = read_dataset_file(&path)?;
    println!(
        "{} frames at {} GBd read back, identical: {}",
        back.len(),
        rate / 1e9,
        back == frames
    );

    let model = Surrogate::init(CatConfig::for_laser(&p)?, 4)?;
    let ck_path = dir.join("surrogate.ckpt");
    surrogate_checkpoint(&model, 20e9)
        .with("note", "untrained")
        .save(&ck_path)?;
    let ck = Checkpoint::load(&ck_path)?;
    let (restored, _) = surrogate_from_checkpoint(&ck)?;
    println!(
        "checkpoint kind {:?}, note {:?}, same predictions: {}",
        ck.kind(),
        ck.get::<String>("note")?,
        restored.predict(&frames[0].input)? == model.predict(&frames[0].input)?
    );

    let cfg = ExperimentConfig::parse("seed = 5\nsymbol_rates_gbd = [20.0]\n[link]\ni_pp_ma = 60.0\n")?;
    println!(
        "config: seed {}, rates {:?} Hz, swing {} mA",
        cfg.seed,
        cfg.symbol_rates(),
        cfg.link.i_pp_ma
    );
    Ok(())
}
