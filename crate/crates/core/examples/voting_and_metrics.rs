//! Hard and soft voting over disagreeing predictions, scored with OA, AA and
//! Cohen's kappa.
//!
//!     cargo run --release --example voting_and_metrics

use dcnt::io::{LabelMap, ProbMap};
use dcnt::pipeline::{confusion_matrix, evaluate, hard_vote, soft_vote};

fn main() -> dcnt::Result<()> {
    // Three class scores for a 1×4 strip from three models.
    let maps = vec![
        ProbMap::new(3, 1, 4, vec![0.6, 0.1, 0.4, 0.2, 0.3, 0.8, 0.35, 0.7, 0.1, 0.1, 0.25, 0.1])?,
        ProbMap::new(3, 1, 4, vec![0.4, 0.5, 0.3, 0.1, 0.45, 0.2, 0.3, 0.8, 0.15, 0.3, 0.4, 0.1])?,
        ProbMap::new(3, 1, 4, vec![0.2, 0.3, 0.1, 0.3, 0.7, 0.6, 0.2, 0.6, 0.1, 0.1, 0.7, 0.1])?,
    ];
    let truth = LabelMap::new(1, 4, vec![1, 2, 3, 2])?;
    let per_image: Vec<_> = maps.iter().map(ProbMap::argmax).collect();
    for (i, m) in per_image.iter().enumerate() {
        println!("image {i}: {:?}, OA {:.2}", m.labels, evaluate(m, &truth)?.oa);
    }
    for (name, fused) in [("hard", hard_vote(&per_image)?), ("soft", soft_vote(&maps)?)] {
        let m = evaluate(&fused, &truth)?;
        println!("{name} vote: {:?}, OA {:.2}, AA {:.2}, kappa {:.3}", fused.labels, m.oa, m.aa, m.kappa);
        println!("  confusion (rows truth): {:?}", confusion_matrix(&fused, &truth, 3)?);
    }
    Ok(())
}
