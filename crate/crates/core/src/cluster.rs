//! Homogeneous area generation by windowed soft clustering of feature pixels.
//!
//! The feature map is first split into a regular grid of `Z` cells whose
//! means seed the cluster centers. Each pixel only ever considers the clusters
//! of the 3×3 cell neighborhood around its initial cell, so the affinity
//! pattern is fixed up front and every area stays spatially compact.

use crate::autodiff::{Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::nn::map_to_tokens;

pub const DEFAULT_ITERATIONS: usize = 5;
pub const MIN_AREAS: usize = 4;

/// Initial grid of `rows × cols` cells over an `height × width` map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
    cell_of: Vec<usize>,
}

impl GridLayout {
    /// Picks `rows` as the divisor of `areas` closest to `sqrt(areas·H/W)` that
    /// keeps every band non-empty.
    pub fn new(height: usize, width: usize, areas: usize) -> Result<Self> {
        if areas < MIN_AREAS {
            return Err(Error::Config(format!("at least {MIN_AREAS} areas required, got {areas}")));
        }
        if areas > height * width {
            return Err(Error::Config(format!("{areas} areas exceed the {height}x{width} feature map")));
        }
        let target = (areas as f64 * height as f64 / width as f64).sqrt();
        let rows = (1..=areas)
            .filter(|d| areas % d == 0 && *d <= height && areas / d <= width)
            .min_by(|a, b| (*a as f64 - target).abs().total_cmp(&(*b as f64 - target).abs()))
            .ok_or_else(|| Error::Config(format!("no {areas}-cell grid fits a {height}x{width} map")))?;
        let cols = areas / rows;
        let row_band: Vec<usize> = (0..height).map(|y| Self::band(y, height, rows)).collect();
        let col_band: Vec<usize> = (0..width).map(|x| Self::band(x, width, cols)).collect();
        let cell_of = (0..height * width).map(|j| row_band[j / width] * cols + col_band[j % width]).collect();
        Ok(Self { height, width, rows, cols, cell_of })
    }

    /// Index of the band containing `pos` when `extent` is cut at
    /// `floor(b·extent/bands)`.
    fn band(pos: usize, extent: usize, bands: usize) -> usize {
        (0..bands).rev().find(|&b| b * extent / bands <= pos).unwrap_or(0)
    }

    pub fn areas(&self) -> usize {
        self.rows * self.cols
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Nominal cell side `sqrt(N / Z)`.
    pub fn side(&self) -> f64 {
        (self.pixels() as f64 / self.areas() as f64).sqrt()
    }

    /// Initial cell of every pixel, row-major.
    pub fn cells(&self) -> &[usize] {
        &self.cell_of
    }

    /// Clusters a pixel in `cell` may join, in increasing order.
    pub fn window(&self, cell: usize) -> Vec<usize> {
        let (r, c) = ((cell / self.cols) as isize, (cell % self.cols) as isize);
        let mut out = Vec::with_capacity(9);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (rr, cc) = (r + dr, c + dc);
                if (0..self.rows as isize).contains(&rr) && (0..self.cols as isize).contains(&cc) {
                    out.push(rr as usize * self.cols + cc as usize);
                }
            }
        }
        out
    }

    /// `[N, Z]` 0/1 matrix marking each pixel's candidate clusters.
    pub fn window_mask(&self) -> Tensor {
        let z = self.areas();
        let mut mask = Tensor::zeros(&[self.pixels(), z]);
        for (j, &cell) in self.cell_of.iter().enumerate() {
            for i in self.window(cell) {
                mask.data_mut()[j * z + i] = 1.0;
            }
        }
        mask
    }
}

/// Result of clustering one feature map.
#[derive(Debug, Clone)]
pub struct AreaAssignment<'t> {
    pub layout: GridLayout,
    /// Final windowed affinity `[N, Z]`.
    pub affinity: Var<'t>,
    /// Centers after the last soft update, `[Z, C]`.
    pub centers: Var<'t>,
    pub labels: Vec<usize>,
    pub counts: Vec<usize>,
    /// Clusters whose center was carried over because their affinity mass
    /// vanished in some iteration.
    pub stalled: Vec<usize>,
}

impl AreaAssignment<'_> {
    /// Pixel indices of each area, in raster order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.layout.areas()];
        for (j, &l) in self.labels.iter().enumerate() {
            out[l].push(j);
        }
        out
    }
}

/// Grid-cell means of `[N, C]` pixel tokens.
pub fn init_centers<'t>(tokens: Var<'t>, layout: &GridLayout) -> Result<Var<'t>> {
    tokens.scatter_mean(layout.cells(), layout.areas())
}

fn sq_dist_checked<'t>(tokens: Var<'t>, centers: Var<'t>) -> Result<Var<'t>> {
    if !centers.value().all_finite() {
        return Err(Error::Data("clustering: non-finite cluster center".into()));
    }
    tokens.pairwise_sq_dist(centers)
}

/// `A_ji = exp(−‖f_j − r_i‖²)` inside each pixel's window, zero elsewhere.
pub fn compute_affinity<'t>(tokens: Var<'t>, centers: Var<'t>, layout: &GridLayout) -> Result<Var<'t>> {
    let d = sq_dist_checked(tokens, centers)?;
    d.scale(-1.0).exp().mul(tokens.tape().constant(layout.window_mask()))
}

/// Affinity-weighted center update.
///
/// The exponent of every cluster column is shifted by that column's smallest
/// windowed distance before exponentiating. The shift cancels in the ratio,
/// so the result equals the plain weighted mean, but the mass can no longer
/// underflow to zero when features are far from every center. A column whose
/// mass is still zero keeps its previous center and is reported in the
/// returned list.
pub fn soft_update_centers<'t>(
    tokens: Var<'t>,
    distances: Var<'t>,
    previous: Var<'t>,
    layout: &GridLayout,
) -> Result<(Var<'t>, Vec<usize>)> {
    let tape = tokens.tape();
    let (n, z) = (layout.pixels(), layout.areas());
    let mask = layout.window_mask();
    let d = distances.value();
    let mut shift = vec![f64::INFINITY; z];
    for j in 0..n {
        for i in 0..z {
            if mask.data()[j * z + i] > 0.0 {
                shift[i] = shift[i].min(d.data()[j * z + i]);
            }
        }
    }
    // Outside the window the entry's own distance is used, so the masked
    // exponent is exp(0) rather than a possible overflow multiplied by zero.
    let shift = Tensor::from_fn(&[n, z], |k| if mask.data()[k] > 0.0 { shift[k % z] } else { d.data()[k] });
    let weights = distances.sub(tape.constant(shift))?.scale(-1.0).exp().mul(tape.constant(mask))?;
    let mass = weights.sum_axis(0)?;
    let empty: Vec<usize> = mass.value().data().iter().enumerate().filter(|(_, &m)| m == 0.0).map(|(i, _)| i).collect();
    let weighted = weights.transpose()?.matmul(tokens)?;
    if empty.is_empty() {
        return Ok((weighted.mul_col(mass.recip())?, empty));
    }
    let indicator = Tensor::from_fn(&[z], |i| if empty.contains(&i) { 1.0 } else { 0.0 });
    let indicator = tape.constant(indicator);
    let fresh = weighted.mul_col(mass.add(indicator)?.recip())?;
    Ok((fresh.add(previous.mul_col(indicator)?)?, empty))
}

/// Nearest center inside each pixel's window; ties go to the smaller index.
///
/// Taking the smallest distance is the same as taking the largest affinity,
/// but stays decisive when `exp(−d)` underflows for every candidate.
pub fn hard_assign(distances: &Tensor, layout: &GridLayout) -> (Vec<usize>, Vec<usize>) {
    let z = layout.areas();
    let mut counts = vec![0; z];
    let labels = layout
        .cells()
        .iter()
        .enumerate()
        .map(|(j, &cell)| {
            let row = &distances.data()[j * z..(j + 1) * z];
            let best = layout
                .window(cell)
                .into_iter()
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if row[b] <= row[i] => Some(b),
                    _ => Some(i),
                })
                .expect("window always contains the pixel's own cell");
            counts[best] += 1;
            best
        })
        .collect();
    (labels, counts)
}

/// `iterations` rounds of affinity and soft center updates on a `[C, H, W]`
/// map, followed by a hard assignment from the last affinity.
pub fn run_clustering(features: Var<'_>, areas: usize, iterations: usize) -> Result<AreaAssignment<'_>> {
    let [_, h, w] = features.shape()[..] else {
        return Err(contract!("run_clustering: expected [C, H, W], got {:?}", features.shape()));
    };
    if iterations == 0 {
        return Err(Error::Config("clustering needs at least one iteration".into()));
    }
    let layout = GridLayout::new(h, w, areas)?;
    let tokens = map_to_tokens(features)?;
    let mut centers = init_centers(tokens, &layout)?;
    let mask = tokens.tape().constant(layout.window_mask());
    let mut stalled = Vec::new();
    let mut last = None;
    for _ in 0..iterations {
        let d = sq_dist_checked(tokens, centers)?;
        let (next, empty) = soft_update_centers(tokens, d, centers, &layout)?;
        stalled.extend(empty);
        last = Some(d);
        centers = next;
    }
    let d = last.expect("at least one iteration");
    let affinity = d.scale(-1.0).exp().mul(mask)?;
    let (labels, counts) = hard_assign(&d.value(), &layout);
    stalled.sort_unstable();
    stalled.dedup();
    Ok(AreaAssignment { layout, affinity, centers, labels, counts, stalled })
}
