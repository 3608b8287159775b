//! Fusion of per-image predictions.

use crate::error::{contract, Result};
use crate::io::{ClassMap, ProbMap};

fn check_shapes<'a>(mut shapes: impl Iterator<Item = (usize, usize, usize)>, what: &str) -> Result<(usize, usize, usize)> {
    let first = shapes.next().ok_or_else(|| contract!("{what}: no maps to fuse"))?;
    if let Some(bad) = shapes.find(|s| *s != first) {
        return Err(contract!("{what}: map of shape {bad:?} differs from {first:?}"));
    }
    Ok(first)
}

/// Index of the largest score; ties go to the smallest index.
fn argmax<T: PartialOrd + Copy>(scores: impl Iterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, s) in scores.enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// Per-pixel plurality class; ties go to the smallest class id.
pub fn hard_vote(maps: &[ClassMap]) -> Result<ClassMap> {
    let (h, w, _) = check_shapes(maps.iter().map(|m| (m.height, m.width, 0)), "hard_vote")?;
    let classes = maps.iter().flat_map(|m| m.labels.iter()).copied().max().unwrap_or(1) as usize;
    let mut counts = vec![0u32; classes];
    let labels = (0..h * w)
        .map(|p| {
            counts.iter_mut().for_each(|c| *c = 0);
            for m in maps {
                counts[m.labels[p] as usize - 1] += 1;
            }
            argmax(counts.iter().copied()) as u16 + 1
        })
        .collect();
    ClassMap::new(h, w, labels)
}

/// Per-pixel argmax of summed class probabilities; ties go to the smallest
/// class id.
pub fn soft_vote(maps: &[ProbMap]) -> Result<ClassMap> {
    let (h, w, classes) = check_shapes(maps.iter().map(|m| (m.height, m.width, m.classes)), "soft_vote")?;
    let n = h * w;
    let mut sums = vec![0.0f64; classes * n];
    for m in maps {
        for (s, &v) in sums.iter_mut().zip(&m.values) {
            *s += v as f64;
        }
    }
    let labels = (0..n).map(|p| argmax((0..classes).map(|c| sums[c * n + p])) as u16 + 1).collect();
    ClassMap::new(h, w, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmap(labels: &[u16]) -> ClassMap {
        ClassMap::new(1, labels.len(), labels.to_vec()).unwrap()
    }

    #[test]
    fn plurality_and_ties() {
        let v = hard_vote(&[cmap(&[1, 1]), cmap(&[1, 2]), cmap(&[2, 3])]).unwrap();
        assert_eq!(v.labels, vec![1, 1]);
        assert_eq!(hard_vote(&[cmap(&[2]), cmap(&[1])]).unwrap().labels, vec![1]);
        assert_eq!(hard_vote(&[cmap(&[3, 2])]).unwrap().labels, vec![3, 2]);
        assert!(hard_vote(&[]).is_err());
        assert!(hard_vote(&[cmap(&[1]), cmap(&[1, 1])]).is_err());
    }

    #[test]
    fn probability_sums() {
        let a = ProbMap::new(2, 1, 1, vec![0.6, 0.4]).unwrap();
        let b = ProbMap::new(2, 1, 1, vec![0.1, 0.9]).unwrap();
        assert_eq!(soft_vote(&[a.clone(), b]).unwrap().labels, vec![2]);
        assert_eq!(soft_vote(&[a]).unwrap().labels, vec![1]);
        let tie = ProbMap::new(3, 1, 1, vec![0.25, 0.5, 0.5]).unwrap();
        assert_eq!(soft_vote(&[tie]).unwrap().labels, vec![2]);
    }
}
