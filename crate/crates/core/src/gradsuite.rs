//! Finite-difference checks of every differentiable building block.
//!
//! Each entry builds a small random instance, reduces its output to a scalar
//! with fixed random weights and compares tape gradients against central
//! differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_many, grad_check_params, Binding, ConvSpec, GradCheckReport, ParamStore, Tape, Tensor, Var};
use crate::cluster::run_clustering;
use crate::dcm::{Dcm, DcmConfig};
use crate::error::Result;
use crate::io::RgbImage;
use crate::model::{loss, BackboneConfig, DcntModel, ModelConfig};
use crate::nn::{
    Activation, AttentionConfig, DecoderLayer, EncoderLayer, Init, LayerNorm, Linear, Mlp, MultiHeadAttention,
    PositionalEncoding1d, PositionalEncoding2d,
};

pub const TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE && self.report.checked > 0
    }
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn tensor(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.0.random_range(-1.0..1.0))
    }

    fn positive(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.0.random_range(0.5..2.0))
    }
}

/// `Σ out ⊙ W` for a fixed random `W` shaped like `out`.
fn project<'t>(out: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let w = Gen(ChaCha8Rng::seed_from_u64(seed)).tensor(&out.shape());
    Ok(out.mul(out.tape().constant(w))?.sum())
}

type Program = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

fn primitive(name: &'static str, inputs: Vec<Tensor>, f: Program) -> Result<SuiteEntry> {
    let report = grad_check_many(move |tape, xs| project(f(tape, xs)?, 99), &inputs, EPS, None)?;
    Ok(SuiteEntry { name, report })
}

fn primitives(g: &mut Gen) -> Result<Vec<SuiteEntry>> {
    let (a, b) = (g.tensor(&[3, 4]), g.tensor(&[3, 4]));
    let entries: Vec<(&'static str, Vec<Tensor>, Program)> = vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|_, x| x[0].add(x[1]))),
        ("sub", vec![a.clone(), b.clone()], Box::new(|_, x| x[0].sub(x[1]))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|_, x| x[0].mul(x[1]))),
        ("scale", vec![a.clone()], Box::new(|_, x| Ok(x[0].scale(-1.7)))),
        ("add_scalar", vec![a.clone()], Box::new(|_, x| Ok(x[0].add_scalar(0.3)))),
        ("relu", vec![a.clone()], Box::new(|_, x| Ok(x[0].relu()))),
        ("gelu", vec![a.clone()], Box::new(|_, x| Ok(x[0].gelu()))),
        ("exp", vec![a.clone()], Box::new(|_, x| Ok(x[0].exp()))),
        ("recip", vec![g.positive(&[3, 4])], Box::new(|_, x| Ok(x[0].recip()))),
        ("sum", vec![a.clone()], Box::new(|_, x| Ok(x[0].sum()))),
        ("mean", vec![a.clone()], Box::new(|_, x| Ok(x[0].mean()))),
        ("sum_axis", vec![g.tensor(&[2, 3, 4])], Box::new(|_, x| x[0].sum_axis(1))),
        ("matmul", vec![a.clone(), g.tensor(&[4, 5])], Box::new(|_, x| x[0].matmul(x[1]))),
        ("transpose", vec![a.clone()], Box::new(|_, x| x[0].transpose())),
        ("reshape", vec![a.clone()], Box::new(|_, x| x[0].reshape(&[2, 6]))),
        ("add_row", vec![a.clone(), g.tensor(&[4])], Box::new(|_, x| x[0].add_row(x[1]))),
        ("mul_row", vec![a.clone(), g.tensor(&[4])], Box::new(|_, x| x[0].mul_row(x[1]))),
        ("mul_col", vec![a.clone(), g.tensor(&[3])], Box::new(|_, x| x[0].mul_col(x[1]))),
        ("softmax", vec![g.tensor(&[2, 3, 4])], Box::new(|_, x| x[0].softmax(1))),
        ("layernorm", vec![a.clone()], Box::new(|_, x| x[0].layernorm(1, 1e-5))),
        ("concat", vec![a.clone(), g.tensor(&[2, 4])], Box::new(|_, x| Var::concat(&[x[0], x[1]], 0))),
        ("gather_rows", vec![a.clone()], Box::new(|_, x| x[0].gather_rows(&[2, 0, 2]))),
        ("scatter_mean", vec![g.tensor(&[5, 2])], Box::new(|_, x| x[0].scatter_mean(&[1, 0, 1, 3, 1], 4))),
        ("mean_over_index_set", vec![a.clone()], Box::new(|_, x| x[0].mean_over_index_set(&[0, 2]))),
        ("pairwise_sq_dist", vec![a.clone(), g.tensor(&[2, 4])], Box::new(|_, x| x[0].pairwise_sq_dist(x[1]))),
        (
            "softmax_cross_entropy",
            vec![g.tensor(&[3, 2, 2])],
            Box::new(|_, x| x[0].softmax_cross_entropy(&[1, 0, 3, 2])),
        ),
        (
            "conv2d",
            vec![g.tensor(&[2, 5, 5]), g.tensor(&[3, 2, 3, 3]), g.tensor(&[3])],
            Box::new(|_, x| x[0].conv2d(x[1], Some(x[2]), ConvSpec::same(1))),
        ),
        (
            "conv2d_strided",
            vec![g.tensor(&[2, 6, 5]), g.tensor(&[2, 2, 3, 3])],
            Box::new(|_, x| x[0].conv2d(x[1], None, ConvSpec { stride: 2, ..ConvSpec::same(1) })),
        ),
        (
            "conv2d_depthwise",
            vec![g.tensor(&[3, 4, 4]), g.tensor(&[3, 1, 3, 3]), g.tensor(&[3])],
            Box::new(|_, x| x[0].conv2d(x[1], Some(x[2]), ConvSpec::depthwise(3, 1, 1))),
        ),
        ("maxpool2d", vec![g.tensor(&[2, 4, 6])], Box::new(|_, x| x[0].maxpool2d())),
        ("bilinear_upsample", vec![g.tensor(&[2, 3, 2])], Box::new(|_, x| x[0].bilinear_upsample(4))),
        ("crop2d", vec![g.tensor(&[2, 4, 4])], Box::new(|_, x| x[0].crop2d(3, 2))),
    ];
    entries.into_iter().map(|(name, inputs, f)| primitive(name, inputs, f)).collect()
}

fn layer<F>(name: &'static str, store: &ParamStore, extra: Vec<Tensor>, f: F) -> Result<SuiteEntry>
where
    F: for<'t> Fn(&Binding<'t>, &[Var<'t>]) -> Result<Var<'t>>,
{
    let n = store.len();
    let mut inputs: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
    inputs.extend(extra);
    let report = grad_check_many(
        |_, xs| {
            let p = Binding::from_vars(xs[..n].to_vec());
            project(f(&p, &xs[n..])?, 7)
        },
        &inputs,
        EPS,
        Some(12),
    )?;
    Ok(SuiteEntry { name, report })
}

fn layers(g: &mut Gen, seed: u64) -> Result<Vec<SuiteEntry>> {
    let att = AttentionConfig { activation: Activation::Gelu, ..AttentionConfig::new(4, 2)? };
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut Init::new(&mut store, seed), "linear", 4, 3);
    out.push(layer("linear", &store, vec![g.tensor(&[5, 4])], |p, x| lin.forward(p, x[0]))?);

    let mut store = ParamStore::new();
    let ln = LayerNorm::new(&mut Init::new(&mut store, seed), "norm", 4);
    store.iter_mut().for_each(|p| p.value = p.value.map(|v| v + 0.1));
    out.push(layer("layer_norm", &store, vec![g.tensor(&[5, 4])], |p, x| ln.forward(p, x[0]))?);

    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut Init::new(&mut store, seed), "mlp", &att);
    out.push(layer("mlp", &store, vec![g.tensor(&[5, 4])], |p, x| mlp.forward(p, x[0]))?);

    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut Init::new(&mut store, seed), "mha", &att)?;
    out.push(layer("attention", &store, vec![g.tensor(&[5, 4]), g.tensor(&[3, 4])], |p, x| mha.forward(p, x[0], x[1]))?);

    let mut store = ParamStore::new();
    let pe = PositionalEncoding2d::new(&mut Init::new(&mut store, seed), "pe", 4);
    out.push(layer("positional_2d", &store, vec![g.tensor(&[4, 3, 3])], |p, x| pe.forward(p, x[0]))?);

    let mut store = ParamStore::new();
    let pe = PositionalEncoding1d::new(&mut Init::new(&mut store, seed), "pe", 4);
    out.push(layer("positional_1d", &store, vec![g.tensor(&[5, 4])], |p, x| pe.forward(p, x[0]))?);

    let att = AttentionConfig::new(4, 2)?;
    let mut store = ParamStore::new();
    let enc = EncoderLayer::new(&mut Init::new(&mut store, seed), "enc", &att)?;
    out.push(layer("encoder_layer", &store, vec![g.tensor(&[5, 4]), g.tensor(&[5, 4])], |p, x| enc.forward(p, x[0], x[1]))?);

    let mut store = ParamStore::new();
    let dec = DecoderLayer::new(&mut Init::new(&mut store, seed), "dec", &att)?;
    out.push(layer("decoder_layer", &store, vec![g.tensor(&[5, 4]), g.tensor(&[3, 4])], |p, x| dec.forward(p, x[0], x[1]))?);

    let features = g.tensor(&[3, 4, 4]);
    let report = grad_check_many(
        |_, x| {
            let a = run_clustering(x[0], 4, 2)?;
            Ok(a.centers.mul(a.centers)?.sum())
        },
        &[features],
        EPS,
        None,
    )?;
    out.push(SuiteEntry { name: "soft_clustering", report });

    let mut store = ParamStore::new();
    let cfg = DcmConfig { channels: 8, areas: 4, iterations: 2, heads: 2, use_rac: true, ..DcmConfig::default() };
    let dcm = Dcm::new(&mut Init::new(&mut store, seed), "dcm", cfg)?;
    let f = g.tensor(&[8, 6, 6]).map(|v| 0.3 * v);
    out.push(layer("dcm", &store, vec![f], |p, x| Ok(dcm.forward(p, x[0])?.output))?);

    Ok(out)
}

fn end_to_end(g: &mut Gen, seed: u64) -> Result<SuiteEntry> {
    let cfg = ModelConfig {
        backbone: BackboneConfig { widths: [2, 3, 4, 4], convs: [1, 1, 1, 1] },
        dcm: DcmConfig { channels: 4, areas: 4, iterations: 2, heads: 2, ..DcmConfig::default() },
        ..ModelConfig::desk(3)
    };
    let model = DcntModel::new(cfg, seed)?;
    let img = RgbImage::new(16, 16, (0..768).map(|_| g.0.random_range(0..=255u8)).collect())?;
    let x = model.prepare_input(&img)?;
    let labels: Vec<u16> = (0..256).map(|_| if g.0.random_bool(0.2) { g.0.random_range(1..=3) } else { 0 }).collect();
    let report = grad_check_params(
        &model.store,
        |tape, p| {
            let out = model.forward(p, tape.constant(x.clone()), 16, 16)?;
            loss(out.main, out.aux, &labels)
        },
        EPS,
        Some(4),
    )?;
    Ok(SuiteEntry { name: "model_loss", report })
}

/// Runs every check; deterministic for a given seed.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let mut out = primitives(&mut g)?;
    out.extend(layers(&mut g, seed)?);
    out.push(end_to_end(&mut g, seed)?);
    Ok(out)
}
