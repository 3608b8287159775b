//! Soft clustering of a feature map into homogeneous areas.
//!
//! A two-region feature map with a diagonal boundary is clustered over a 3×3
//! grid of initial cells. The printed label grids follow the boundary rather
//! than the grid, and cells that straddle it end up nearly empty.
//!
//!     cargo run --release --example homogeneous_areas

use dcnt::autodiff::{Tape, Tensor};
use dcnt::cluster::run_clustering;

fn main() -> dcnt::Result<()> {
    let (c, h, w) = (2, 12, 12);
    // Diagonal boundary that does not follow the initial grid.
    let data = Tensor::from_fn(&[c, h, w], |k| {
        let (ch, y, x) = (k / (h * w), (k / w) % h, k % w);
        let inside = x + y < 14;
        match (ch, inside) {
            (0, true) => 1.5,
            (1, false) => 1.5,
            _ => 0.0,
        }
    });
    for iterations in [1, 3, 5] {
        let tape = Tape::new();
        let areas = run_clustering(tape.constant(data.clone()), 9, iterations)?;
        println!("T = {iterations}, area sizes {:?}", areas.counts);
        for y in 0..h {
            let row: String = (0..w).map(|x| char::from(b'a' + areas.labels[y * w + x] as u8)).collect();
            println!("  {row}");
        }
    }
    Ok(())
}
