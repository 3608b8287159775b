//! Turns a hyperspectral cube into its full tri-spectral image set.
//!
//!     cargo run --release --example generate_trispectral -- [cube.hsc] [groups] [out_dir]
//!
//! Without a cube path a synthetic 32×32×20 scene is used.

use dcnt::io::load_cube;
use dcnt::synth::{synth_scene, SceneSpec};
use dcnt::trispec::{compute_capacity, generate_set, TrispecOptions};

fn main() -> dcnt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cube = match args.first() {
        Some(path) => load_cube(path)?,
        None => synth_scene(&SceneSpec::new(32, 32, 20, 3), 0)?.cube,
    };
    let groups = args.get(1).map_or(5, |s| s.parse().expect("groups"));
    let out = args.get(2).cloned().unwrap_or_else(|| "trispectral_out".into());

    println!("cube {}x{} with {} bands, {groups} groups", cube.height(), cube.width(), cube.bands());
    for g in [3, 5, 10, 15] {
        println!("  G = {g:>2} gives {:>4} images", compute_capacity(g)?);
    }
    let set = generate_set(&cube, groups, TrispecOptions::default())?;
    for (i, (t, img)) in set.triplets.iter().zip(&set.images).enumerate() {
        let mean: Vec<f64> = (0..3).map(|c| img.channel(c).iter().map(|&v| v as f64).sum::<f64>() / img.channel(c).len() as f64).collect();
        println!("img_{i}: groups ({}, {}, {}), channel means {:.1} {:.1} {:.1}", t.g1, t.g2, t.g3, mean[0], mean[1], mean[2]);
    }
    set.save(&out)?;
    println!("wrote {} images and manifest.txt to {out}", set.capacity());
    Ok(())
}
