//! Tri-spectral image generation.
//!
//! The spectral axis is split into `G` consecutive groups, each collapsed to
//! its per-pixel mean. Every 3-combination of groups becomes one image whose
//! channels are ordered longest wavelength first, and each image is contrast
//! stretched jointly over its three channels so the 2nd/98th percentiles map
//! to 0/255.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{self, HsiCube, RgbImage};

/// `G` band-group means of a cube, each a row-major `H × W` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedCube {
    pub groups: usize,
    pub height: usize,
    pub width: usize,
    planes: Vec<f64>,
}

impl GroupedCube {
    /// Plane of the 1-based group index `g`.
    pub fn plane(&self, g: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.planes[(g - 1) * n..g * n]
    }
}

/// Group indices of one tri-spectral image, in channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BandTriplet {
    pub g1: usize,
    pub g2: usize,
    pub g3: usize,
}

impl BandTriplet {
    pub fn new(g1: usize, g2: usize, g3: usize) -> Self {
        Self { g1, g2, g3 }
    }

    pub fn channels(&self) -> [usize; 3] {
        [self.g1, self.g2, self.g3]
    }

    fn reversed(self) -> Self {
        Self { g1: self.g3, g2: self.g2, g3: self.g1 }
    }
}

/// Real-valued `3 × H × W` image before stretching.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrispecOptions {
    /// Set when band index decreases with wavelength; channel order then
    /// starts from the smallest group index.
    pub wavelength_descending: bool,
}

/// Result of a linear 2% stretch.
#[derive(Debug, Clone)]
pub struct Stretched {
    pub image: RgbImage,
    /// The 2nd and 98th percentile coincide; the image is all zeros.
    pub degenerate: bool,
}

/// The full ensemble of generated images.
#[derive(Debug, Clone)]
pub struct TriSpectralSet {
    pub triplets: Vec<BandTriplet>,
    pub images: Vec<RgbImage>,
    /// Indices of images whose stretch was degenerate.
    pub degenerate: Vec<usize>,
}

impl TriSpectralSet {
    pub fn capacity(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Writes `manifest.txt` and one `img_<index>.ppm` per image.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (i, (t, img)) in self.triplets.iter().zip(&self.images).enumerate() {
            manifest.push_str(&format!("{i} {} {} {}\n", t.g1, t.g2, t.g3));
            io::write_ppm(img, dir.join(format!("img_{i}.ppm")))?;
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut triplets = Vec::new();
        let mut images = Vec::new();
        for (line_no, line) in manifest.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<usize> = line
                .split_whitespace()
                .map(|f| f.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("manifest line {}: {e}", line_no + 1)))?;
            let [index, g1, g2, g3] = fields[..] else {
                return Err(Error::Format(format!(
                    "manifest line {}: expected `index g1 g2 g3`",
                    line_no + 1
                )));
            };
            triplets.push(BandTriplet::new(g1, g2, g3));
            images.push(io::read_ppm(dir.join(format!("img_{index}.ppm")))?);
        }
        if images.is_empty() {
            return Err(Error::Contract(format!("{} holds no images", dir.display())));
        }
        Ok(Self { triplets, images, degenerate: Vec::new() })
    }
}

/// Collapses the spectral axis into `groups` consecutive band means.
pub fn group_and_aggregate(cube: &HsiCube, groups: usize) -> Result<GroupedCube> {
    if groups < 3 {
        return Err(Error::Config(format!("group count must be at least 3, got {groups}")));
    }
    let bands = cube.bands();
    if bands % groups != 0 || groups > bands {
        return Err(Error::Config(format!("{bands} bands cannot be split into {groups} equal groups")));
    }
    let per_group = bands / groups;
    let n = cube.pixels();
    let mut planes = vec![0.0f64; groups * n];
    for g in 0..groups {
        let out = &mut planes[g * n..(g + 1) * n];
        for k in g * per_group..(g + 1) * per_group {
            for (o, &v) in out.iter_mut().zip(cube.band_plane(k)) {
                *o += v as f64;
            }
        }
        for o in out.iter_mut() {
            *o /= per_group as f64;
        }
    }
    Ok(GroupedCube { groups, height: cube.height(), width: cube.width(), planes })
}

/// Number of distinct tri-spectral images obtainable from `groups` groups.
pub fn compute_capacity(groups: usize) -> Result<usize> {
    if groups < 3 {
        return Err(Error::Domain(format!("capacity needs at least 3 groups, got {groups}")));
    }
    Ok(groups * (groups - 1) * (groups - 2) / 6)
}

/// All 3-combinations of `1..=groups`, largest index first inside each
/// triplet, listed in descending lexicographic order.
pub fn enumerate_triplets(groups: usize) -> Result<Vec<BandTriplet>> {
    compute_capacity(groups)?;
    let mut out = Vec::new();
    for a in (3..=groups).rev() {
        for b in (2..a).rev() {
            for c in (1..b).rev() {
                out.push(BandTriplet::new(a, b, c));
            }
        }
    }
    Ok(out)
}

/// Stacks the three group planes named by `t` in channel order.
pub fn render_raw(gc: &GroupedCube, t: BandTriplet) -> Result<RawImage> {
    let n = gc.height * gc.width;
    let mut data = Vec::with_capacity(3 * n);
    for g in t.channels() {
        if g == 0 || g > gc.groups {
            return Err(Error::Contract(format!("group {g} outside 1..={}", gc.groups)));
        }
        data.extend_from_slice(gc.plane(g));
    }
    Ok(RawImage { height: gc.height, width: gc.width, data })
}

/// Rank positions of the 2nd and 98th percentile among `n` sorted values.
pub fn percentile_ranks(n: usize) -> (usize, usize) {
    let last = n - 1;
    (2 * last / 100, (98 * last).div_ceil(100))
}

/// Maps one value through the stretch defined by the cut points `lo < hi`.
pub fn stretch_value(x: f64, lo: f64, hi: f64) -> u8 {
    if x <= lo {
        0
    } else if x >= hi {
        255
    } else {
        (255.0 * (x - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8
    }
}

/// Joint linear 2% stretch over all three channels.
pub fn linear_stretch(raw: &RawImage) -> Result<Stretched> {
    if raw.data.is_empty() {
        return Err(Error::Contract("cannot stretch an empty image".into()));
    }
    if raw.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in raw tri-spectral image".into()));
    }
    let (lo_rank, hi_rank) = percentile_ranks(raw.data.len());
    let mut scratch = raw.data.clone();
    let (_, &mut hi, _) = scratch.select_nth_unstable_by(hi_rank, f64::total_cmp);
    let (_, &mut lo, _) = scratch[..=hi_rank].select_nth_unstable_by(lo_rank, f64::total_cmp);

    let degenerate = lo >= hi;
    let data = if degenerate {
        vec![0u8; raw.data.len()]
    } else {
        raw.data.iter().map(|&x| stretch_value(x, lo, hi)).collect()
    };
    Ok(Stretched { image: RgbImage::new(raw.height, raw.width, data)?, degenerate })
}

/// Runs grouping, enumeration, rendering and stretching for every triplet.
pub fn generate_set(cube: &HsiCube, groups: usize, opts: TrispecOptions) -> Result<TriSpectralSet> {
    let gc = group_and_aggregate(cube, groups)?;
    let mut triplets = enumerate_triplets(groups)?;
    if opts.wavelength_descending {
        triplets.iter_mut().for_each(|t| *t = t.reversed());
    }
    let stretched: Vec<Stretched> = triplets
        .par_iter()
        .map(|&t| render_raw(&gc, t).and_then(|raw| linear_stretch(&raw)))
        .collect::<Result<_>>()?;
    let degenerate = stretched.iter().enumerate().filter(|(_, s)| s.degenerate).map(|(i, _)| i).collect();
    let images = stretched.into_iter().map(|s| s.image).collect();
    Ok(TriSpectralSet { triplets, images, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_from_spectra(h: usize, w: usize, spectra: &[Vec<f32>]) -> HsiCube {
        let l = spectra[0].len();
        let mut values = vec![0.0; h * w * l];
        for (p, s) in spectra.iter().enumerate() {
            for (k, &v) in s.iter().enumerate() {
                values[k * h * w + p] = v;
            }
        }
        HsiCube::new(h, w, l, values).unwrap()
    }

    #[test]
    fn aggregation_means() {
        let cube = cube_from_spectra(1, 1, &[vec![1.0, 3.0, 5.0, 7.0, 9.0, 11.0]]);
        let gc = group_and_aggregate(&cube, 3).unwrap();
        assert_eq!(gc.plane(1), &[2.0]);
        assert_eq!(gc.plane(2), &[6.0]);
        assert_eq!(gc.plane(3), &[10.0]);
    }

    #[test]
    fn singleton_groups_reproduce_bands() {
        let cube = cube_from_spectra(1, 2, &[vec![0.5, 1.5, 2.5, 3.5], vec![4.0, 3.0, 2.0, 1.0]]);
        let gc = group_and_aggregate(&cube, 4).unwrap();
        for g in 1..=4 {
            let expected: Vec<f64> = cube.band_plane(g - 1).iter().map(|&v| v as f64).collect();
            assert_eq!(gc.plane(g), &expected[..]);
        }
    }

    #[test]
    fn aggregation_rejects_bad_group_counts() {
        let cube = cube_from_spectra(1, 1, &[vec![0.0; 10]]);
        assert!(matches!(group_and_aggregate(&cube, 3), Err(Error::Config(_))));
        assert!(matches!(group_and_aggregate(&cube, 2), Err(Error::Config(_))));
    }

    #[test]
    fn longkou_grouping() {
        let spectrum: Vec<f32> = (0..270).map(|k| k as f32).collect();
        let cube = cube_from_spectra(1, 1, &[spectrum]);
        let gc = group_and_aggregate(&cube, 15).unwrap();
        assert_eq!(gc.groups, 15);
        // Group g averages bands 18(g-1)..18g-1, whose mean is 18(g-1) + 8.5.
        for g in 1..=15 {
            assert_eq!(gc.plane(g)[0], 18.0 * (g - 1) as f64 + 8.5);
        }
    }

    #[test]
    fn capacity_values() {
        assert_eq!(compute_capacity(15).unwrap(), 455);
        assert_eq!(compute_capacity(3).unwrap(), 1);
        assert_eq!(compute_capacity(10).unwrap(), 120);
        assert!(matches!(compute_capacity(2), Err(Error::Domain(_))));
    }

    #[test]
    fn triplet_enumeration() {
        assert_eq!(enumerate_triplets(3).unwrap(), vec![BandTriplet::new(3, 2, 1)]);
        let four: Vec<[usize; 3]> = enumerate_triplets(4).unwrap().iter().map(|t| t.channels()).collect();
        assert_eq!(four, vec![[4, 3, 2], [4, 3, 1], [4, 2, 1], [3, 2, 1]]);
        assert_eq!(enumerate_triplets(6).unwrap().len(), 20);
    }

    #[test]
    fn render_orders_channels() {
        let cube = cube_from_spectra(1, 1, &[vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]]);
        let gc = group_and_aggregate(&cube, 7).unwrap();
        let raw = render_raw(&gc, BandTriplet::new(7, 5, 3)).unwrap();
        assert_eq!(raw.data, vec![7.0, 5.0, 3.0]);
        assert!(render_raw(&gc, BandTriplet::new(8, 5, 3)).is_err());
    }

    #[test]
    fn stretch_reference_case() {
        // Pooled values 1..=300 over a 3x10x10 image.
        let raw = RawImage { height: 10, width: 10, data: (1..=300).map(f64::from).collect() };
        assert_eq!(percentile_ranks(300), (5, 294));
        let out = linear_stretch(&raw).unwrap();
        assert!(!out.degenerate);
        assert_eq!(out.image.data[149], 127); // input 150
        assert_eq!(out.image.data[5], 0); // input 6 = p
        assert_eq!(out.image.data[294], 255); // input 295 = q
        assert_eq!(stretch_value(150.0, 6.0, 295.0), 127);
    }

    #[test]
    fn stretch_constant_is_degenerate() {
        let raw = RawImage { height: 2, width: 2, data: vec![3.5; 12] };
        let out = linear_stretch(&raw).unwrap();
        assert!(out.degenerate);
        assert!(out.image.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn generate_single_image() {
        let spectra: Vec<Vec<f32>> = (0..4).map(|p| (0..6).map(|k| (p * 6 + k) as f32).collect()).collect();
        let cube = cube_from_spectra(2, 2, &spectra);
        let set = generate_set(&cube, 3, TrispecOptions::default()).unwrap();
        assert_eq!(set.capacity(), 1);
        assert_eq!(set.triplets[0], BandTriplet::new(3, 2, 1));

        let reversed = generate_set(&cube, 3, TrispecOptions { wavelength_descending: true }).unwrap();
        assert_eq!(reversed.triplets[0], BandTriplet::new(1, 2, 3));
    }

    #[test]
    fn set_save_load() {
        let spectra: Vec<Vec<f32>> = (0..9).map(|p| (0..12).map(|k| ((p * 7 + k * 3) % 11) as f32).collect()).collect();
        let cube = cube_from_spectra(3, 3, &spectra);
        let set = generate_set(&cube, 4, TrispecOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save(dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest.lines().count(), 4);
        assert!(manifest.starts_with("0 4 3 2\n"));
        let back = TriSpectralSet::load(dir.path()).unwrap();
        assert_eq!(back.triplets, set.triplets);
        assert_eq!(back.images, set.images);
    }
}
