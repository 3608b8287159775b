//! Seeded synthetic hyperspectral scenes for desk-scale experiments.
//!
//! Class regions are the Voronoi cells of random sites (sites assigned to
//! classes round-robin). Every class owns a smooth spectral signature built
//! from a few Gaussian bumps over a baseline; pixels receive their class
//! signature plus Gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::{HsiCube, LabelMap};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// Labeled training pixels drawn per class.
    pub train_per_class: usize,
    pub sites_per_class: usize,
    pub noise_std: f64,
    /// Minimum RMS difference between any two class signatures.
    pub margin: f64,
}

impl SceneSpec {
    pub fn new(height: usize, width: usize, bands: usize, classes: usize) -> Self {
        Self {
            height,
            width,
            bands,
            classes,
            train_per_class: 25,
            sites_per_class: 3,
            noise_std: 0.02,
            margin: 0.08,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > u16::MAX as usize {
            return Err(Error::Config(format!("scene needs at least 2 classes, got {}", self.classes)));
        }
        if self.bands < 6 {
            return Err(Error::Config(format!("scene needs at least 6 bands, got {}", self.bands)));
        }
        if self.height < 2 || self.width < 2 || self.sites_per_class == 0 {
            return Err(Error::Config(format!("degenerate scene size {}x{}", self.height, self.width)));
        }
        if self.classes * self.sites_per_class > self.height * self.width {
            return Err(Error::Config("more Voronoi sites than pixels".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.margin >= 0.0) {
            return Err(Error::Config("noise and margin must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    /// Dense ground truth.
    pub truth: LabelMap,
    /// Sparse training labels: exactly `train_per_class` pixels per class.
    pub train: LabelMap,
    /// Noise-free class signatures, `classes × bands`.
    pub signatures: Vec<Vec<f64>>,
}

fn signature(rng: &mut impl Rng, bands: usize) -> Vec<f64> {
    let base = rng.random_range(0.15..0.35);
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let center = rng.random_range(0.0..bands as f64);
            let width = rng.random_range(0.12..0.35) * bands as f64;
            let amp = rng.random_range(-0.25..0.45);
            (center, width, amp)
        })
        .collect();
    (0..bands)
        .map(|b| {
            let x = b as f64;
            let v: f64 = bumps.iter().map(|(c, w, a)| a * (-((x - c) / w).powi(2)).exp()).sum();
            (base + v).clamp(0.02, 0.98)
        })
        .collect()
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Builds a scene; identical specs and seeds give identical scenes.
pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let (h, w, l, k) = (spec.height, spec.width, spec.bands, spec.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while signatures.len() < k {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Config(format!("cannot find {k} signatures {} apart", spec.margin)));
        }
        let s = signature(&mut rng, l);
        if signatures.iter().all(|t| rms(t, &s) >= spec.margin) {
            signatures.push(s);
        }
    }

    let mut pixels: Vec<usize> = (0..h * w).collect();
    pixels.shuffle(&mut rng);
    let sites: Vec<(f64, f64, u16)> = pixels[..k * spec.sites_per_class]
        .iter()
        .enumerate()
        .map(|(s, &p)| ((p / w) as f64, (p % w) as f64, (s % k) as u16 + 1))
        .collect();
    let truth: Vec<u16> = (0..h * w)
        .map(|p| {
            let (y, x) = ((p / w) as f64, (p % w) as f64);
            sites
                .iter()
                .min_by(|a, b| ((a.0 - y).powi(2) + (a.1 - x).powi(2)).total_cmp(&((b.0 - y).powi(2) + (b.1 - x).powi(2))))
                .expect("at least one site")
                .2
        })
        .collect();

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut values = vec![0f32; l * h * w];
    for b in 0..l {
        for p in 0..h * w {
            let v = signatures[truth[p] as usize - 1][b] + noise.sample(&mut rng);
            values[b * h * w + p] = v as f32;
        }
    }

    let mut train = vec![0u16; h * w];
    for class in 1..=k as u16 {
        let mut members: Vec<usize> = (0..h * w).filter(|&p| truth[p] == class).collect();
        if members.len() < spec.train_per_class {
            return Err(Error::Config(format!(
                "class {class} covers {} pixels, fewer than the {} training labels requested",
                members.len(),
                spec.train_per_class
            )));
        }
        members.shuffle(&mut rng);
        for &p in &members[..spec.train_per_class] {
            train[p] = class;
        }
    }

    Ok(Scene {
        cube: HsiCube::new(h, w, l, values)?,
        truth: LabelMap::new(h, w, truth)?,
        train: LabelMap::new(h, w, train)?,
        signatures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::encode_cube;

    #[test]
    fn deterministic_and_counted() {
        let spec = SceneSpec { train_per_class: 100, ..SceneSpec::new(32, 32, 20, 3) };
        let a = synth_scene(&spec, 7).unwrap();
        let b = synth_scene(&spec, 7).unwrap();
        assert_eq!(encode_cube(&a.cube), encode_cube(&b.cube));
        assert_eq!(a.train.labeled_count(), 300);
        assert_eq!(a.train.class_counts(3), vec![100, 100, 100]);
        assert_eq!(a.truth.labeled_count(), 1024);
        assert_ne!(encode_cube(&synth_scene(&spec, 8).unwrap().cube), encode_cube(&a.cube));
    }

    #[test]
    fn signatures_are_separated() {
        let spec = SceneSpec::new(16, 16, 12, 5);
        let s = synth_scene(&spec, 1).unwrap();
        for i in 0..5 {
            for j in 0..i {
                assert!(rms(&s.signatures[i], &s.signatures[j]) >= spec.margin);
            }
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(synth_scene(&SceneSpec::new(8, 8, 5, 3), 0).is_err());
        assert!(synth_scene(&SceneSpec::new(8, 8, 8, 1), 0).is_err());
        let too_many = SceneSpec { train_per_class: 60, ..SceneSpec::new(8, 8, 8, 2) };
        assert!(synth_scene(&too_many, 0).is_err());
    }
}
