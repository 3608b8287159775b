//! Differentiable tensor primitives.
//!
//! Every operation computes its forward value eagerly and records a backward
//! rule on the tape. Shape problems surface as contract errors that name both
//! operand shapes.

use super::tape::{BackwardFn, Var};
use super::tensor::{axis_split, gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{contract, Result};

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(contract!("{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn rank2(op: &str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [n, m] => Ok((n, m)),
        ref s => Err(contract!("{op}: expected a matrix, got shape {s:?}")),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()).unwrap()
}

fn boxed(f: impl Fn(&Tensor) -> Vec<Option<Tensor>> + 'static) -> BackwardFn {
    Box::new(f)
}

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x + y);
        Ok(self.tape().record("add", out, &[self, other], boxed(|g| vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x - y);
        Ok(self.tape().record("sub", out, &[self, other], boxed(|g| vec![Some(g.clone()), Some(g.map(|v| -v))])))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x * y);
        Ok(self.tape().record(
            "mul",
            out,
            &[self, other],
            boxed(move |g| vec![Some(zip_map(g, &b, |x, y| x * y)), Some(zip_map(g, &a, |x, y| x * y))]),
        ))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        let out = self.value().map(|v| v * k);
        self.tape().record("scale", out, &[self], boxed(move |g| vec![Some(g.map(|v| v * k))]))
    }

    pub fn add_scalar(self, k: f64) -> Var<'t> {
        let out = self.value().map(|v| v + k);
        self.tape().record("add_scalar", out, &[self], boxed(|g| vec![Some(g.clone())]))
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.value();
        let out = x.map(|v| v.max(0.0));
        self.tape().record(
            "relu",
            out,
            &[self],
            boxed(move |g| vec![Some(zip_map(g, &x, |g, x| if x > 0.0 { g } else { 0.0 }))]),
        )
    }

    /// Gaussian error linear unit, tanh approximation.
    pub fn gelu(self) -> Var<'t> {
        const K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
        let x = self.value();
        let out = x.map(|v| 0.5 * v * (1.0 + (K * (v + 0.044715 * v * v * v)).tanh()));
        self.tape().record(
            "gelu",
            out,
            &[self],
            boxed(move |g| {
                vec![Some(zip_map(g, &x, |g, v| {
                    let u = K * (v + 0.044715 * v * v * v);
                    let th = u.tanh();
                    let du = K * (1.0 + 3.0 * 0.044715 * v * v);
                    g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du)
                }))]
            }),
        )
    }

    pub fn exp(self) -> Var<'t> {
        let out = self.value().map(f64::exp);
        let y = out.clone();
        self.tape().record("exp", out, &[self], boxed(move |g| vec![Some(zip_map(g, &y, |g, y| g * y))]))
    }

    pub fn recip(self) -> Var<'t> {
        let x = self.value();
        let out = x.map(|v| 1.0 / v);
        self.tape().record("recip", out, &[self], boxed(move |g| vec![Some(zip_map(g, &x, |g, x| -g / (x * x)))]))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = Tensor::scalar(x.data().iter().sum());
        self.tape().record("sum", out, &[self], boxed(move |g| vec![Some(Tensor::full(&shape, g.item()))]))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(contract!("sum_axis: axis {axis} out of range for {:?}", x.shape()));
        }
        let in_shape = x.shape().to_vec();
        let (outer, extent, inner) = axis_split(&in_shape, axis);
        let mut out_shape = in_shape.clone();
        out_shape.remove(axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..extent {
                let base = (o * extent + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x.data()[base + i];
                }
            }
        }
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.tape().record(
            "sum_axis",
            out,
            &[self],
            boxed(move |g| {
                let mut gx = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    for k in 0..extent {
                        let base = (o * extent + k) * inner;
                        gx[base..base + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor::new(&in_shape, gx).unwrap())]
            }),
        ))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = rank2("matmul", &a)?;
        let (k2, n) = rank2("matmul", &b)?;
        if k != k2 {
            return Err(contract!("matmul: shape mismatch {:?} vs {:?}", a.shape(), b.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(a.data(), b.data(), &mut out, m, k, n);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.tape().record(
            "matmul",
            out,
            &[self, other],
            boxed(move |g| {
                let mut ga = vec![0.0; m * k];
                gemm_nt(g.data(), b.data(), &mut ga, m, n, k);
                let mut gb = vec![0.0; k * n];
                gemm_tn(a.data(), g.data(), &mut gb, k, m, n);
                vec![Some(Tensor::new(&[m, k], ga).unwrap()), Some(Tensor::new(&[k, n], gb).unwrap())]
            }),
        ))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let x = self.value();
        let (n, m) = rank2("transpose", &x)?;
        let out = transpose_data(x.data(), n, m);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.tape().record(
            "transpose",
            out,
            &[self],
            boxed(move |g| vec![Some(Tensor::new(&[n, m], transpose_data(g.data(), m, n)).unwrap())]),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let out = (*x).clone().reshape(shape)?;
        Ok(self.tape().record(
            "reshape",
            out,
            &[self],
            boxed(move |g| vec![Some(g.clone().reshape(&in_shape).unwrap())]),
        ))
    }

    /// Adds a length-`m` vector to every row of an `[n, m]` matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (x, r) = (self.value(), row.value());
        let (n, m) = rank2("add_row", &x)?;
        if r.shape() != [m] {
            return Err(contract!("add_row: shape mismatch {:?} vs {:?}", x.shape(), r.shape()));
        }
        let out = Tensor::from_fn(&[n, m], |i| x.data()[i] + r.data()[i % m]);
        Ok(self.tape().record(
            "add_row",
            out,
            &[self, row],
            boxed(move |g| {
                let mut gr = vec![0.0; m];
                for (i, v) in g.data().iter().enumerate() {
                    gr[i % m] += v;
                }
                vec![Some(g.clone()), Some(Tensor::new(&[m], gr).unwrap())]
            }),
        ))
    }

    /// Multiplies column `j` of an `[n, m]` matrix by `row[j]`.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (x, r) = (self.value(), row.value());
        let (n, m) = rank2("mul_row", &x)?;
        if r.shape() != [m] {
            return Err(contract!("mul_row: shape mismatch {:?} vs {:?}", x.shape(), r.shape()));
        }
        let out = Tensor::from_fn(&[n, m], |i| x.data()[i] * r.data()[i % m]);
        Ok(self.tape().record(
            "mul_row",
            out,
            &[self, row],
            boxed(move |g| {
                let gx = Tensor::from_fn(&[n, m], |i| g.data()[i] * r.data()[i % m]);
                let mut gr = vec![0.0; m];
                for (i, v) in g.data().iter().enumerate() {
                    gr[i % m] += v * x.data()[i];
                }
                vec![Some(gx), Some(Tensor::new(&[m], gr).unwrap())]
            }),
        ))
    }

    /// Multiplies row `i` of an `[n, m]` matrix by `col[i]`.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        let (x, c) = (self.value(), col.value());
        let (n, m) = rank2("mul_col", &x)?;
        if c.shape() != [n] {
            return Err(contract!("mul_col: shape mismatch {:?} vs {:?}", x.shape(), c.shape()));
        }
        let out = Tensor::from_fn(&[n, m], |i| x.data()[i] * c.data()[i / m]);
        Ok(self.tape().record(
            "mul_col",
            out,
            &[self, col],
            boxed(move |g| {
                let gx = Tensor::from_fn(&[n, m], |i| g.data()[i] * c.data()[i / m]);
                let mut gc = vec![0.0; n];
                for (i, v) in g.data().iter().enumerate() {
                    gc[i / m] += v * x.data()[i];
                }
                vec![Some(gx), Some(Tensor::new(&[n], gc).unwrap())]
            }),
        ))
    }

    /// Softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(contract!("softmax: axis {axis} out of range for {:?}", x.shape()));
        }
        let shape = x.shape().to_vec();
        let (outer, extent, inner) = axis_split(&shape, axis);
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * extent + k) * inner + i;
                let max = (0..extent).map(|k| x.data()[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..extent {
                    let e = (x.data()[idx(k)] - max).exp();
                    y[idx(k)] = e;
                    total += e;
                }
                for k in 0..extent {
                    y[idx(k)] /= total;
                }
            }
        }
        let out = Tensor::new(&shape, y)?;
        let y = out.clone();
        Ok(self.tape().record(
            "softmax",
            out,
            &[self],
            boxed(move |g| {
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * extent + k) * inner + i;
                        let dot: f64 = (0..extent).map(|k| g.data()[idx(k)] * y.data()[idx(k)]).sum();
                        for k in 0..extent {
                            gx[idx(k)] = y.data()[idx(k)] * (g.data()[idx(k)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(y.shape(), gx).unwrap())]
            }),
        ))
    }

    /// Normalizes to zero mean and unit (biased) variance along `axis`.
    pub fn layernorm(self, axis: usize, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(contract!("layernorm: axis {axis} out of range for {:?}", x.shape()));
        }
        let shape = x.shape().to_vec();
        let (outer, extent, inner) = axis_split(&shape, axis);
        let mut y = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * extent + k) * inner + i;
                let mean = (0..extent).map(|k| x.data()[idx(k)]).sum::<f64>() / extent as f64;
                let var = (0..extent).map(|k| (x.data()[idx(k)] - mean).powi(2)).sum::<f64>() / extent as f64;
                let s = 1.0 / (var + eps).sqrt();
                inv_std[o * inner + i] = s;
                for k in 0..extent {
                    y[idx(k)] = (x.data()[idx(k)] - mean) * s;
                }
            }
        }
        let out = Tensor::new(&shape, y)?;
        let y = out.clone();
        Ok(self.tape().record(
            "layernorm",
            out,
            &[self],
            boxed(move |g| {
                let mut gx = vec![0.0; y.len()];
                let n = extent as f64;
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * extent + k) * inner + i;
                        let g_mean = (0..extent).map(|k| g.data()[idx(k)]).sum::<f64>() / n;
                        let gy_mean = (0..extent).map(|k| g.data()[idx(k)] * y.data()[idx(k)]).sum::<f64>() / n;
                        let s = inv_std[o * inner + i];
                        for k in 0..extent {
                            gx[idx(k)] = s * (g.data()[idx(k)] - g_mean - y.data()[idx(k)] * gy_mean);
                        }
                    }
                }
                vec![Some(Tensor::new(y.shape(), gx).unwrap())]
            }),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| contract!("concat: no inputs"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(contract!("concat: axis {axis} out of range for {base:?}"));
        }
        for v in &values[1..] {
            let s = v.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return Err(contract!("concat: shape mismatch {base:?} vs {s:?}"));
            }
        }
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                out.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let out = Tensor::new(&out_shape, out)?;
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(first.tape().record(
            "concat",
            out,
            parts,
            boxed(move |g| {
                let mut grads: Vec<Vec<f64>> = extents.iter().map(|e| Vec::with_capacity(outer * e * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gv, &e) in grads.iter_mut().zip(&extents) {
                        gv.extend_from_slice(&g.data()[pos..pos + e * inner]);
                        pos += e * inner;
                    }
                }
                grads.into_iter().zip(&shapes).map(|(gv, s)| Some(Tensor::new(s, gv).unwrap())).collect()
            }),
        ))
    }

    /// Selects rows of an `[n, c]` matrix; indices may repeat.
    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let (n, c) = rank2("gather_rows", &x)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(contract!("gather_rows: row {bad} out of range for {:?}", x.shape()));
        }
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(&[index.len(), c], out)?;
        let index = index.to_vec();
        Ok(self.tape().record(
            "gather_rows",
            out,
            &[self],
            boxed(move |g| {
                let mut gx = vec![0.0; n * c];
                for (r, &i) in index.iter().enumerate() {
                    for k in 0..c {
                        gx[i * c + k] += g.data()[r * c + k];
                    }
                }
                vec![Some(Tensor::new(&[n, c], gx).unwrap())]
            }),
        ))
    }

    /// Per-set row means of an `[n, c]` matrix, where row `j` belongs to set
    /// `labels[j]`. Empty sets produce zero rows.
    pub fn scatter_mean(self, labels: &[usize], sets: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (n, c) = rank2("scatter_mean", &x)?;
        if labels.len() != n {
            return Err(contract!("scatter_mean: {} labels for shape {:?}", labels.len(), x.shape()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= sets) {
            return Err(contract!("scatter_mean: set {bad} out of range 0..{sets}"));
        }
        let mut counts = vec![0usize; sets];
        let mut sums = vec![0.0; sets * c];
        for (j, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for k in 0..c {
                sums[l * c + k] += x.data()[j * c + k];
            }
        }
        for (l, &cnt) in counts.iter().enumerate() {
            if cnt > 0 {
                for k in 0..c {
                    sums[l * c + k] /= cnt as f64;
                }
            }
        }
        let out = Tensor::new(&[sets, c], sums)?;
        let labels = labels.to_vec();
        Ok(self.tape().record(
            "scatter_mean",
            out,
            &[self],
            boxed(move |g| {
                let mut gx = vec![0.0; n * c];
                for (j, &l) in labels.iter().enumerate() {
                    let w = 1.0 / counts[l] as f64;
                    for k in 0..c {
                        gx[j * c + k] = g.data()[l * c + k] * w;
                    }
                }
                vec![Some(Tensor::new(&[n, c], gx).unwrap())]
            }),
        ))
    }

    /// Mean of the rows named by `index`, as a length-`c` vector.
    pub fn mean_over_index_set(self, index: &[usize]) -> Result<Var<'t>> {
        if index.is_empty() {
            return Err(contract!("mean_over_index_set: empty index set"));
        }
        self.gather_rows(index)?.sum_axis(0).map(|s| s.scale(1.0 / index.len() as f64))
    }

    /// Squared euclidean distances between rows of `[n, c]` and `[z, c]`.
    pub fn pairwise_sq_dist(self, other: Var<'t>) -> Result<Var<'t>> {
        let (x, r) = (self.value(), other.value());
        let (n, c) = rank2("pairwise_sq_dist", &x)?;
        let (z, c2) = rank2("pairwise_sq_dist", &r)?;
        if c != c2 {
            return Err(contract!("pairwise_sq_dist: shape mismatch {:?} vs {:?}", x.shape(), r.shape()));
        }
        let mut out = vec![0.0; n * z];
        for j in 0..n {
            let xj = &x.data()[j * c..(j + 1) * c];
            for i in 0..z {
                let ri = &r.data()[i * c..(i + 1) * c];
                out[j * z + i] = xj.iter().zip(ri).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        }
        let out = Tensor::new(&[n, z], out)?;
        Ok(self.tape().record(
            "pairwise_sq_dist",
            out,
            &[self, other],
            boxed(move |g| {
                let mut gx = vec![0.0; n * c];
                let mut gr = vec![0.0; z * c];
                for j in 0..n {
                    for i in 0..z {
                        let w = 2.0 * g.data()[j * z + i];
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..c {
                            let d = x.data()[j * c + k] - r.data()[i * c + k];
                            gx[j * c + k] += w * d;
                            gr[i * c + k] -= w * d;
                        }
                    }
                }
                vec![Some(Tensor::new(&[n, c], gx).unwrap()), Some(Tensor::new(&[z, c], gr).unwrap())]
            }),
        ))
    }

    /// Mean softmax cross entropy over labeled positions.
    ///
    /// `self` holds logits shaped `[classes, positions...]`; `targets` gives one
    /// class id per position with `0` meaning unlabeled and `k` meaning logit
    /// row `k - 1`.
    pub fn softmax_cross_entropy(self, targets: &[u16]) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() < 1 {
            return Err(contract!("softmax_cross_entropy: logits need a class axis"));
        }
        let classes = x.shape()[0];
        let positions = x.len() / classes.max(1);
        if targets.len() != positions {
            return Err(contract!(
                "softmax_cross_entropy: {} targets for logits {:?}",
                targets.len(),
                x.shape()
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize > classes) {
            return Err(contract!("softmax_cross_entropy: label {bad} exceeds {classes} classes"));
        }
        let labeled = targets.iter().filter(|&&t| t != 0).count();
        if labeled == 0 {
            return Err(contract!("softmax_cross_entropy: no labeled positions"));
        }
        let mut probs = vec![0.0; x.len()];
        let mut total = 0.0;
        for (p, &t) in targets.iter().enumerate() {
            let max = (0..classes).map(|c| x.data()[c * positions + p]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..classes {
                let e = (x.data()[c * positions + p] - max).exp();
                probs[c * positions + p] = e;
                z += e;
            }
            for c in 0..classes {
                probs[c * positions + p] /= z;
            }
            if t != 0 {
                let logit = x.data()[(t as usize - 1) * positions + p];
                total += max + z.ln() - logit;
            }
        }
        let out = Tensor::scalar(total / labeled as f64);
        let shape = x.shape().to_vec();
        let targets = targets.to_vec();
        Ok(self.tape().record(
            "softmax_cross_entropy",
            out,
            &[self],
            boxed(move |g| {
                let scale = g.item() / labeled as f64;
                let mut gx = vec![0.0; probs.len()];
                for (p, &t) in targets.iter().enumerate() {
                    if t == 0 {
                        continue;
                    }
                    for c in 0..classes {
                        let onehot = if c + 1 == t as usize { 1.0 } else { 0.0 };
                        gx[c * positions + p] = scale * (probs[c * positions + p] - onehot);
                    }
                }
                vec![Some(Tensor::new(&shape, gx).unwrap())]
            }),
        ))
    }
}

pub(crate) fn transpose_data(data: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = data[i * m + j];
        }
    }
    out
}
