//! Inference over a whole tri-spectral set.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{evaluate, hard_vote, soft_vote, Metrics};
use crate::error::{Error, Result};
use crate::io::{save_class_map, save_probmap, write_ppm, ClassMap, LabelMap, ProbMap, RgbImage};
use crate::model::DcntModel;

/// JSON metrics report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub oa: f64,
    pub aa: f64,
    /// `null` when kappa is undefined.
    pub kappa: Option<f64>,
    pub per_class: Vec<Option<f64>>,
    pub n_labeled: usize,
}

impl From<&Metrics> for Report {
    fn from(m: &Metrics) -> Self {
        Self {
            oa: m.oa,
            aa: m.aa,
            kappa: m.kappa_defined.then_some(m.kappa),
            per_class: m.per_class.clone(),
            n_labeled: m.n_labeled,
        }
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Class probabilities for every image. `jobs > 1` predicts images in
/// parallel; results are identical to the sequential order.
pub fn predict_set(model: &DcntModel, images: &[RgbImage], jobs: usize) -> Result<Vec<ProbMap>> {
    if jobs <= 1 {
        return images.iter().map(|img| model.predict(img)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| images.par_iter().map(|img| model.predict(img)).collect())
}

pub struct InferenceOutcome {
    pub probs: Vec<ProbMap>,
    pub classes: Vec<ClassMap>,
    pub hard: ClassMap,
    pub soft: ClassMap,
    /// Per-image, hard-vote and soft-vote metrics when a truth map is given.
    pub per_image: Vec<Metrics>,
    pub hard_metrics: Option<Metrics>,
    pub soft_metrics: Option<Metrics>,
}

/// Predicts every image, fuses the results by both votes and, with an
/// output directory, writes `prob_<i>.prb`, `class_<i>.lbl`,
/// `class_<i>.ppm`, `vote_hard.*`, `vote_soft.*` and (with a truth map)
/// `report_hard.json` / `report_soft.json`.
pub fn run_inference_set(
    model: &DcntModel,
    images: &[RgbImage],
    truth: Option<&LabelMap>,
    out_dir: Option<&Path>,
    jobs: usize,
) -> Result<InferenceOutcome> {
    let probs = predict_set(model, images, jobs)?;
    let classes: Vec<ClassMap> = probs.iter().map(ProbMap::argmax).collect();
    let hard = hard_vote(&classes)?;
    let soft = soft_vote(&probs)?;
    let (per_image, hard_metrics, soft_metrics) = match truth {
        Some(t) => (
            classes.iter().map(|c| evaluate(c, t)).collect::<Result<Vec<_>>>()?,
            Some(evaluate(&hard, t)?),
            Some(evaluate(&soft, t)?),
        ),
        None => (Vec::new(), None, None),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        for (i, (p, c)) in probs.iter().zip(&classes).enumerate() {
            save_probmap(p, dir.join(format!("prob_{i}.prb")))?;
            save_class_map(c, dir.join(format!("class_{i}.lbl")))?;
            write_ppm(&c.to_rgb(), dir.join(format!("class_{i}.ppm")))?;
        }
        for (name, map) in [("vote_hard", &hard), ("vote_soft", &soft)] {
            save_class_map(map, dir.join(format!("{name}.lbl")))?;
            write_ppm(&map.to_rgb(), dir.join(format!("{name}.ppm")))?;
        }
        for (name, m) in [("report_hard.json", &hard_metrics), ("report_soft.json", &soft_metrics)] {
            if let Some(m) = m {
                Report::from(m).save(dir.join(name))?;
            }
        }
    }
    Ok(InferenceOutcome { probs, classes, hard, soft, per_image, hard_metrics, soft_metrics })
}
