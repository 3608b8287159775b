//! Transformer building blocks over token matrices.
//!
//! Tokens are rows: a sequence of `N` tokens with `C` channels is an `[N, C]`
//! matrix. Linear layers therefore compute `x · W + b` with `W` shaped
//! `[in, out]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{uniform_fan_in, Binding, ConvSpec, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::error::{contract, Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Registers parameters with a shared seeded generator.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
    pub group: ParamGroup,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self { store, rng: ChaCha8Rng::seed_from_u64(seed), group: ParamGroup::Head }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let value = uniform_fan_in(&mut self.rng, shape, fan_in);
        self.store.add(name, value, self.group)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, value), self.group)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Gelu => x.gelu(),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Shape of every attention layer in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub channels: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub activation: Activation,
}

impl AttentionConfig {
    pub fn new(channels: usize, heads: usize) -> Result<Self> {
        let cfg = Self { channels, heads, mlp_ratio: 2, activation: Activation::Relu };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.channels == 0 || self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} channels cannot be split into {} heads",
                self.channels, self.heads
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::Config("mlp ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = init.uniform(&format!("{name}.weight"), &[inputs, outputs], inputs);
        let bias = init.constant(&format!("{name}.bias"), &[outputs], 0.0);
        Self { weight, bias }
    }

    pub fn forward<'t>(&self, p: &Binding<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(p.get(self.weight))?.add_row(p.get(self.bias))
    }

    pub fn zero(&self, store: &mut ParamStore) {
        for id in [self.weight, self.bias] {
            let param = store.get_mut(id);
            param.value = Tensor::zeros(param.value.shape());
        }
    }
}

/// Layer normalization over channels with a learnable affine map.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize) -> Self {
        let gamma = init.constant(&format!("{name}.gamma"), &[channels], 1.0);
        let beta = init.constant(&format!("{name}.beta"), &[channels], 0.0);
        Self { gamma, beta }
    }

    pub fn forward<'t>(&self, p: &Binding<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layernorm(1, LAYERNORM_EPS)?.mul_row(p.get(self.gamma))?.add_row(p.get(self.beta))
    }
}

/// `linear(C → ratio·C)`, activation, `linear(→ C)`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &AttentionConfig) -> Self {
        let hidden = cfg.channels * cfg.mlp_ratio;
        Self {
            fc1: Linear::new(init, &format!("{name}.fc1"), cfg.channels, hidden),
            fc2: Linear::new(init, &format!("{name}.fc2"), hidden, cfg.channels),
            activation: cfg.activation,
        }
    }

    pub fn forward<'t>(&self, p: &Binding<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.activation.apply(self.fc1.forward(p, x)?);
        self.fc2.forward(p, h)
    }
}

#[derive(Debug, Clone)]
struct Head {
    query: Linear,
    key: Linear,
    value: Linear,
}

/// Multi-head attention with separate per-head projections and a shared
/// output projection from `h·d` back to `C` channels.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    heads: Vec<Head>,
    pub output: Linear,
    head_dim: usize,
    channels: usize,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &AttentionConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.head_dim();
        let heads = (0..cfg.heads)
            .map(|i| Head {
                query: Linear::new(init, &format!("{name}.head{i}.query"), cfg.channels, d),
                key: Linear::new(init, &format!("{name}.head{i}.key"), cfg.channels, d),
                value: Linear::new(init, &format!("{name}.head{i}.value"), cfg.channels, d),
            })
            .collect();
        let output = Linear::new(init, &format!("{name}.output"), cfg.heads * d, cfg.channels);
        Ok(Self { heads, output, head_dim: d, channels: cfg.channels })
    }

    fn check_tokens(&self, x: Var<'_>, what: &str) -> Result<()> {
        match x.shape()[..] {
            [n, c] if n > 0 && c == self.channels => Ok(()),
            ref s => Err(contract!("{what}: expected [tokens > 0, {}], got {s:?}", self.channels)),
        }
    }

    /// Row-stochastic attention weights `softmax(Q·Kᵀ / √d)` of one head.
    pub fn attention_weights<'t>(&self, p: &Binding<'t>, head: usize, queries: Var<'t>, keys: Var<'t>) -> Result<Var<'t>> {
        let h = &self.heads[head];
        let q = h.query.forward(p, queries)?;
        let k = h.key.forward(p, keys)?;
        q.matmul(k.transpose()?)?.scale(1.0 / (self.head_dim as f64).sqrt()).softmax(1)
    }

    /// Queries from `queries`, keys and values from `context`.
    pub fn forward<'t>(&self, p: &Binding<'t>, queries: Var<'t>, context: Var<'t>) -> Result<Var<'t>> {
        self.check_tokens(queries, "attention queries")?;
        self.check_tokens(context, "attention context")?;
        let mut outs = Vec::with_capacity(self.heads.len());
        for (i, h) in self.heads.iter().enumerate() {
            let weights = self.attention_weights(p, i, queries, context)?;
            outs.push(weights.matmul(h.value.forward(p, context)?)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { Var::concat(&outs, 1)? };
        self.output.forward(p, merged)
    }

    /// Self-attention: `forward(x, x)`.
    pub fn self_attention<'t>(&self, p: &Binding<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.forward(p, x, x)
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }
}

/// Pre-norm encoder: `Y = (X+P) + MHSA(Norm(X+P))`, `out = Y + MLP(Norm(Y))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderLayer {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &AttentionConfig) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), cfg.channels),
            attention: MultiHeadAttention::new(init, &format!("{name}.attention"), cfg)?,
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), cfg.channels),
            mlp: Mlp::new(init, &format!("{name}.mlp"), cfg),
        })
    }

    pub fn forward<'t>(&self, p: &Binding<'t>, x: Var<'t>, pos: Var<'t>) -> Result<Var<'t>> {
        let base = x.add(pos)?;
        let y = base.add(self.attention.self_attention(p, self.norm1.forward(p, base)?)?)?;
        y.add(self.mlp.forward(p, self.norm2.forward(p, y)?)?)
    }

    /// Zeroes the attention output and second MLP projection, turning the
    /// layer into the identity on `X + P`.
    pub fn zero_output_projections(&self, store: &mut ParamStore) {
        self.attention.output.zero(store);
        self.mlp.fc2.zero(store);
    }
}

/// Decoder without self-attention:
/// `Y = X_DI + MHA(Norm(X_DI), X_EO)`, `out = Y + MLP(Norm(Y))`.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl DecoderLayer {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &AttentionConfig) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), cfg.channels),
            attention: MultiHeadAttention::new(init, &format!("{name}.attention"), cfg)?,
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), cfg.channels),
            mlp: Mlp::new(init, &format!("{name}.mlp"), cfg),
        })
    }

    pub fn forward<'t>(&self, p: &Binding<'t>, queries: Var<'t>, memory: Var<'t>) -> Result<Var<'t>> {
        let y = queries.add(self.attention.forward(p, self.norm1.forward(p, queries)?, memory)?)?;
        y.add(self.mlp.forward(p, self.norm2.forward(p, y)?)?)
    }

    pub fn zero_output_projections(&self, store: &mut ParamStore) {
        self.attention.output.zero(store);
        self.mlp.fc2.zero(store);
    }
}

/// Depthwise 3×3 convolution (padding 1) producing a positional encoding for
/// a `[C, H, W]` map.
#[derive(Debug, Clone)]
pub struct PositionalEncoding2d {
    pub weight: ParamId,
    pub bias: ParamId,
    channels: usize,
}

impl PositionalEncoding2d {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize) -> Self {
        let weight = init.uniform(&format!("{name}.weight"), &[channels, 1, 3, 3], 9);
        let bias = init.constant(&format!("{name}.bias"), &[channels], 0.0);
        Self { weight, bias, channels }
    }

    pub fn forward<'t>(&self, p: &Binding<'t>, f: Var<'t>) -> Result<Var<'t>> {
        f.conv2d(p.get(self.weight), Some(p.get(self.bias)), ConvSpec::depthwise(self.channels, 1, 1))
    }
}

/// Depthwise 1×3 convolution (padding 1) along a `[Z, C]` token sequence.
#[derive(Debug, Clone)]
pub struct PositionalEncoding1d {
    pub weight: ParamId,
    pub bias: ParamId,
    channels: usize,
}

impl PositionalEncoding1d {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize) -> Self {
        let weight = init.uniform(&format!("{name}.weight"), &[channels, 1, 1, 3], 3);
        let bias = init.constant(&format!("{name}.bias"), &[channels], 0.0);
        Self { weight, bias, channels }
    }

    pub fn forward<'t>(&self, p: &Binding<'t>, tokens: Var<'t>) -> Result<Var<'t>> {
        let z = tokens.shape()[0];
        let planar = tokens.transpose()?.reshape(&[self.channels, 1, z])?;
        let enc = planar.conv2d(p.get(self.weight), Some(p.get(self.bias)), ConvSpec::depthwise(self.channels, 0, 1))?;
        enc.reshape(&[self.channels, z])?.transpose()
    }
}

/// `[C, H, W]` map to `[H·W, C]` tokens in row-major pixel order.
pub fn map_to_tokens(f: Var<'_>) -> Result<Var<'_>> {
    let [c, h, w] = f.shape()[..] else {
        return Err(contract!("map_to_tokens: expected [C, H, W], got {:?}", f.shape()));
    };
    f.reshape(&[c, h * w])?.transpose()
}

/// Inverse of [`map_to_tokens`].
pub fn tokens_to_map(tokens: Var<'_>, height: usize, width: usize) -> Result<Var<'_>> {
    let [n, c] = tokens.shape()[..] else {
        return Err(contract!("tokens_to_map: expected [N, C], got {:?}", tokens.shape()));
    };
    if n != height * width {
        return Err(contract!("tokens_to_map: {n} tokens for a {height}x{width} map"));
    }
    tokens.transpose()?.reshape(&[c, height, width])
}
