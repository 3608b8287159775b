//! Trains the desk-scale network on a synthetic scene and reports per-image
//! and voted accuracy on the training pixels and on the full ground truth.
//!
//!     cargo run --release --example train_synthetic -- [epochs] [lr] [seed]

use std::time::Instant;

use dcnt::model::{DcntModel, ModelConfig};
use dcnt::pipeline::{run_inference_set, train, TrainConfig};
use dcnt::synth::{synth_scene, SceneSpec};
use dcnt::trispec::{generate_set, TrispecOptions};

fn main() -> dcnt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(30, |s| s.parse().expect("epochs"));
    let lr = args.get(1).map_or(0.001, |s| s.parse().expect("lr"));
    let seed = args.get(2).map_or(1, |s| s.parse().expect("seed"));

    let spec = SceneSpec { train_per_class: 100, ..SceneSpec::new(32, 32, 20, 3) };
    let scene = synth_scene(&spec, seed)?;
    let set = generate_set(&scene.cube, 5, TrispecOptions::default())?;
    println!("{} tri-spectral images", set.capacity());

    let mut model = DcntModel::new(ModelConfig::desk(3), seed)?;
    let cfg = TrainConfig { epochs, batch: 1, lr, seed, val_fraction: 0.0, ..TrainConfig::default() };
    let start = Instant::now();
    let report = train(&set, &scene.train, &mut model, &cfg)?;
    let n = report.losses.len();
    println!(
        "{n} iterations in {:.1?}; loss {:.4} -> {:.4}",
        start.elapsed(),
        report.losses[0],
        report.losses[n.saturating_sub(10)..].iter().sum::<f64>() / 10f64.min(n as f64)
    );

    for (name, truth) in [("training pixels", &scene.train), ("full truth", &scene.truth)] {
        let out = run_inference_set(&model, &set.images, Some(truth), None, 1)?;
        let best = out.per_image.iter().map(|m| m.oa).fold(0.0, f64::max);
        let worst = out.per_image.iter().map(|m| m.oa).fold(1.0, f64::min);
        println!(
            "{name}: single-image OA {worst:.4}..{best:.4}, hard vote {:.4}, soft vote {:.4} (kappa {:.4})",
            out.hard_metrics.as_ref().unwrap().oa,
            out.soft_metrics.as_ref().unwrap().oa,
            out.soft_metrics.as_ref().unwrap().kappa,
        );
    }
    Ok(())
}
