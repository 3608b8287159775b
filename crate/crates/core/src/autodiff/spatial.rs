//! Image-shaped primitives on `[channels, height, width]` tensors.

use super::tape::Var;
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{contract, Result};

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride 1 with `pad` on both spatial axes.
    pub fn same(pad: usize) -> Self {
        Self { stride: 1, pad_h: pad, pad_w: pad, groups: 1 }
    }

    pub fn depthwise(channels: usize, pad_h: usize, pad_w: usize) -> Self {
        Self { stride: 1, pad_h, pad_w, groups: channels }
    }
}

fn rank3(op: &str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(contract!("{op}: expected [channels, height, width], got {s:?}")),
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    cin_g: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one channel group of `x` into a `[cin_g·kh·kw, ho·wo]` matrix.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.k() * self.positions()];
        for c in 0..self.cin_g {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * self.positions()..(row + 1) * self.positions()];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad_h as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad_w as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[oy * self.wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`], accumulating into `gx`.
    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        for c in 0..self.cin_g {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * self.positions()..(row + 1) * self.positions()];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad_h as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut gx[(c * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad_w as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    /// Grouped 2-D convolution. Weights are `[out, in / groups, kh, kw]`.
    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, spec: ConvSpec) -> Result<Var<'t>> {
        let x = self.value();
        let w = weight.value();
        let (cin, h, wd) = rank3("conv2d", &x)?;
        let [cout, cin_g, kh, kw] = *w.shape() else {
            return Err(contract!("conv2d: weight must be [out, in/groups, kh, kw], got {:?}", w.shape()));
        };
        let groups = spec.groups;
        if groups == 0 || spec.stride == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(contract!(
                "conv2d: shape mismatch {:?} vs {:?} with {groups} groups",
                x.shape(),
                w.shape()
            ));
        }
        if h + 2 * spec.pad_h < kh || wd + 2 * spec.pad_w < kw {
            return Err(contract!("conv2d: kernel {:?} larger than padded input {:?}", w.shape(), x.shape()));
        }
        if let Some(b) = &bias {
            if b.shape() != [cout] {
                return Err(contract!("conv2d: bias shape {:?} vs weight {:?}", b.shape(), w.shape()));
            }
        }
        let geom = ConvGeom {
            cin_g,
            h,
            w: wd,
            kh,
            kw,
            ho: (h + 2 * spec.pad_h - kh) / spec.stride + 1,
            wo: (wd + 2 * spec.pad_w - kw) / spec.stride + 1,
            stride: spec.stride,
            pad_h: spec.pad_h,
            pad_w: spec.pad_w,
        };
        let cout_g = cout / groups;
        let (k, pos) = (geom.k(), geom.positions());
        let plane = h * wd;
        let mut out = vec![0.0; cout * pos];
        for g in 0..groups {
            let cols = geom.im2col(&x.data()[g * cin_g * plane..(g + 1) * cin_g * plane]);
            let wg = &w.data()[g * cout_g * k..(g + 1) * cout_g * k];
            gemm_nn(wg, &cols, &mut out[g * cout_g * pos..(g + 1) * cout_g * pos], cout_g, k, pos);
        }
        if let Some(b) = &bias {
            let b = b.value();
            for (o, chunk) in out.chunks_mut(pos).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b.data()[o]);
            }
        }
        let out = Tensor::new(&[cout, geom.ho, geom.wo], out)?;
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.tape().record(
            "conv2d",
            out,
            &parents,
            Box::new(move |g| {
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; w.len()];
                for grp in 0..groups {
                    let xg = &x.data()[grp * cin_g * plane..(grp + 1) * cin_g * plane];
                    let cols = geom.im2col(xg);
                    let gout = &g.data()[grp * cout_g * pos..(grp + 1) * cout_g * pos];
                    gemm_nt(gout, &cols, &mut gw[grp * cout_g * k..(grp + 1) * cout_g * k], cout_g, pos, k);
                    let wg = &w.data()[grp * cout_g * k..(grp + 1) * cout_g * k];
                    let mut gcols = vec![0.0; k * pos];
                    gemm_tn(wg, gout, &mut gcols, k, cout_g, pos);
                    geom.col2im(&gcols, &mut gx[grp * cin_g * plane..(grp + 1) * cin_g * plane]);
                }
                let mut grads = vec![
                    Some(Tensor::new(x.shape(), gx).unwrap()),
                    Some(Tensor::new(w.shape(), gw).unwrap()),
                ];
                if has_bias {
                    let gb = g.data().chunks(pos).map(|c| c.iter().sum()).collect();
                    grads.push(Some(Tensor::new(&[cout], gb).unwrap()));
                }
                grads
            }),
        ))
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    /// Gradients go to the first maximal element of each window.
    pub fn maxpool2d(self) -> Result<Var<'t>> {
        let x = self.value();
        let (c, h, w) = rank3("maxpool2d", &x)?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(contract!("maxpool2d: input {:?} too small", x.shape()));
        }
        let mut out = vec![0.0; c * ho * wo];
        let mut argmax = vec![0usize; c * ho * wo];
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (ch * h + 2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if x.data()[idx] > x.data()[best] {
                            best = idx;
                        }
                    }
                    let o = (ch * ho + oy) * wo + ox;
                    out[o] = x.data()[best];
                    argmax[o] = best;
                }
            }
        }
        let out = Tensor::new(&[c, ho, wo], out)?;
        let in_shape = x.shape().to_vec();
        let len = x.len();
        Ok(self.tape().record(
            "maxpool2d",
            out,
            &[self],
            Box::new(move |g| {
                let mut gx = vec![0.0; len];
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += g.data()[o];
                }
                vec![Some(Tensor::new(&in_shape, gx).unwrap())]
            }),
        ))
    }

    /// Bilinear upsampling by an integer factor with half-pixel sample
    /// centers: output `i` reads input coordinate `(i + 0.5) / factor - 0.5`,
    /// clamped to the valid range.
    pub fn bilinear_upsample(self, factor: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (c, h, w) = rank3("bilinear_upsample", &x)?;
        if factor == 0 {
            return Err(contract!("bilinear_upsample: factor must be positive"));
        }
        let (ho, wo) = (h * factor, w * factor);
        let ys = interp_taps(h, factor);
        let xs = interp_taps(w, factor);
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            let src = &x.data()[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                    let top = lerp(src[y0 * w + x0], src[y0 * w + x1], tx);
                    let bottom = lerp(src[y1 * w + x0], src[y1 * w + x1], tx);
                    out[(ch * ho + oy) * wo + ox] = lerp(top, bottom, ty);
                }
            }
        }
        let out = Tensor::new(&[c, ho, wo], out)?;
        let in_shape = x.shape().to_vec();
        Ok(self.tape().record(
            "bilinear_upsample",
            out,
            &[self],
            Box::new(move |g| {
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    let dst = &mut gx[ch * h * w..(ch + 1) * h * w];
                    for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                            let gv = g.data()[(ch * ho + oy) * wo + ox];
                            dst[y0 * w + x0] += gv * (1.0 - ty) * (1.0 - tx);
                            dst[y0 * w + x1] += gv * (1.0 - ty) * tx;
                            dst[y1 * w + x0] += gv * ty * (1.0 - tx);
                            dst[y1 * w + x1] += gv * ty * tx;
                        }
                    }
                }
                vec![Some(Tensor::new(&in_shape, gx).unwrap())]
            }),
        ))
    }

    /// Keeps the top-left `height × width` window of every channel.
    pub fn crop2d(self, height: usize, width: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (c, h, w) = rank3("crop2d", &x)?;
        if height > h || width > w {
            return Err(contract!("crop2d: window {height}x{width} exceeds {:?}", x.shape()));
        }
        let mut out = Vec::with_capacity(c * height * width);
        for ch in 0..c {
            for y in 0..height {
                out.extend_from_slice(&x.data()[(ch * h + y) * w..][..width]);
            }
        }
        let out = Tensor::new(&[c, height, width], out)?;
        let in_shape = x.shape().to_vec();
        Ok(self.tape().record(
            "crop2d",
            out,
            &[self],
            Box::new(move |g| {
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..height {
                        gx[(ch * h + y) * w..][..width]
                            .copy_from_slice(&g.data()[(ch * height + y) * width..][..width]);
                    }
                }
                vec![Some(Tensor::new(&in_shape, gx).unwrap())]
            }),
        ))
    }
}

/// `a + t·(b − a)`; returns `a` exactly when `a == b`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// For every output coordinate: the two source taps and the weight of the second.
fn interp_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|i| {
            let src = ((i as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let t = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, t)
        })
        .collect()
}

/// Reflect-pads `[c, h, w]` on the bottom and right edges (no edge repeat).
pub fn reflect_pad_bottom_right(x: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor> {
    let (c, h, w) = rank3("reflect_pad", x)?;
    if new_h < h || new_w < w || new_h - h >= h.max(2) || new_w - w >= w.max(2) {
        return Err(contract!("reflect_pad: cannot pad {:?} to {new_h}x{new_w}", x.shape()));
    }
    let reflect = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
    Ok(Tensor::from_fn(&[c, new_h, new_w], |idx| {
        let ch = idx / (new_h * new_w);
        let y = (idx / new_w) % new_h;
        let xx = idx % new_w;
        x.data()[(ch * h + reflect(y, h)) * w + reflect(xx, w)]
    }))
}
