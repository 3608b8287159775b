//! Dual context module: regional context inside homogeneous areas and global
//! context across area descriptors.

use crate::autodiff::{Binding, ParamStore, Var};
use crate::cluster::{run_clustering, AreaAssignment, DEFAULT_ITERATIONS, MIN_AREAS};
use crate::error::{contract, Error, Result};
use crate::nn::{
    map_to_tokens, tokens_to_map, Activation, AttentionConfig, DecoderLayer, EncoderLayer, Init, PositionalEncoding1d,
    PositionalEncoding2d,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DcmConfig {
    pub channels: usize,
    pub areas: usize,
    pub iterations: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub activation: Activation,
    /// Streams concatenated into the output, in this order.
    pub use_f: bool,
    pub use_rac: bool,
    pub use_gac: bool,
}

impl Default for DcmConfig {
    fn default() -> Self {
        Self {
            channels: 256,
            areas: 64,
            iterations: DEFAULT_ITERATIONS,
            heads: 8,
            mlp_ratio: 2,
            activation: Activation::Relu,
            use_f: true,
            use_rac: false,
            use_gac: true,
        }
    }
}

impl DcmConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig { channels: self.channels, heads: self.heads, mlp_ratio: self.mlp_ratio, activation: self.activation }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        if self.areas < MIN_AREAS {
            return Err(Error::Config(format!("dcm.Z must be at least {MIN_AREAS}, got {}", self.areas)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("dcm.T must be at least 1".into()));
        }
        if !(self.use_f || self.use_rac || self.use_gac) {
            return Err(Error::Config("dcm needs at least one of use_F, use_RAC, use_GAC".into()));
        }
        Ok(())
    }

    /// Channel count of the concatenated output.
    pub fn out_channels(&self) -> usize {
        self.channels * [self.use_f, self.use_rac, self.use_gac].iter().filter(|&&u| u).count()
    }
}

/// Intermediate results of one forward pass.
pub struct DcmOutput<'t> {
    pub output: Var<'t>,
    pub areas: AreaAssignment<'t>,
    /// `F^RAC`, `[C, H, W]`.
    pub regional: Var<'t>,
    /// Positional encoding added before the regional encoder, `[C, H, W]`.
    pub regional_pos: Var<'t>,
    /// One descriptor per area, `[Z, C]`; empty areas hold zeros.
    pub descriptors: Var<'t>,
    /// Areas with at least one pixel, i.e. the rows taking part in global
    /// attention.
    pub included: Vec<usize>,
    /// `F^GAC`, `[C, H, W]`, when the global stream is enabled.
    pub global: Option<Var<'t>>,
}

#[derive(Debug, Clone)]
pub struct Dcm {
    pub config: DcmConfig,
    pub regional_pos: PositionalEncoding2d,
    pub regional_encoder: EncoderLayer,
    pub global_pos: PositionalEncoding1d,
    pub global_encoder: EncoderLayer,
    pub global_decoder: DecoderLayer,
}

impl Dcm {
    pub fn new(init: &mut Init<'_>, name: &str, config: DcmConfig) -> Result<Self> {
        config.validate()?;
        let att = config.attention();
        Ok(Self {
            config,
            regional_pos: PositionalEncoding2d::new(init, &format!("{name}.rac_pos"), config.channels),
            regional_encoder: EncoderLayer::new(init, &format!("{name}.rac_encoder"), &att)?,
            global_pos: PositionalEncoding1d::new(init, &format!("{name}.gac_pos"), config.channels),
            global_encoder: EncoderLayer::new(init, &format!("{name}.gac_encoder"), &att)?,
            global_decoder: DecoderLayer::new(init, &format!("{name}.gac_decoder"), &att)?,
        })
    }

    /// Zeroes every attention and MLP output projection, reducing the module
    /// to `F + P^RAC` on each context stream.
    pub fn zero_output_projections(&self, store: &mut ParamStore) {
        self.regional_encoder.zero_output_projections(store);
        self.global_encoder.zero_output_projections(store);
        self.global_decoder.zero_output_projections(store);
    }

    /// Runs the shared regional encoder separately inside every area and
    /// returns `(F^RAC, P^RAC)`.
    pub fn rac_encode<'t>(&self, p: &Binding<'t>, f: Var<'t>, areas: &AreaAssignment<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let [_, h, w] = f.shape()[..] else {
            return Err(contract!("rac_encode: expected [C, H, W], got {:?}", f.shape()));
        };
        let pos = self.regional_pos.forward(p, f)?;
        let (x, px) = (map_to_tokens(f)?, map_to_tokens(pos)?);
        let mut order = Vec::with_capacity(h * w);
        let mut parts = Vec::new();
        for members in areas.members().iter().filter(|m| !m.is_empty()) {
            parts.push(self.regional_encoder.forward(p, x.gather_rows(members)?, px.gather_rows(members)?)?);
            order.extend_from_slice(members);
        }
        let stacked = if parts.len() == 1 { parts[0] } else { Var::concat(&parts, 0)? };
        let mut inverse = vec![0; order.len()];
        for (row, &pixel) in order.iter().enumerate() {
            inverse[pixel] = row;
        }
        Ok((tokens_to_map(stacked.gather_rows(&inverse)?, h, w)?, pos))
    }

    /// Per-area means of `F^RAC` and the list of non-empty areas.
    pub fn build_descriptors<'t>(&self, regional: Var<'t>, areas: &AreaAssignment<'t>) -> Result<(Var<'t>, Vec<usize>)> {
        let v = map_to_tokens(regional)?.scatter_mean(&areas.labels, areas.layout.areas())?;
        let included = areas.counts.iter().enumerate().filter(|(_, &n)| n > 0).map(|(i, _)| i).collect();
        Ok((v, included))
    }

    /// Global encoder over the descriptors of non-empty areas.
    ///
    /// The 1-D positional encoding sees the full sequence in area order, so
    /// an empty area still occupies its slot as a zero neighbor.
    pub fn gac_encode<'t>(&self, p: &Binding<'t>, descriptors: Var<'t>, included: &[usize]) -> Result<Var<'t>> {
        let pos = self.global_pos.forward(p, descriptors)?;
        self.global_encoder.forward(p, descriptors.gather_rows(included)?, pos.gather_rows(included)?)
    }

    /// Every pixel of `F^RAC` queries the encoded descriptors.
    pub fn gac_decode<'t>(&self, p: &Binding<'t>, regional: Var<'t>, encoded: Var<'t>) -> Result<Var<'t>> {
        let [_, h, w] = regional.shape()[..] else {
            return Err(contract!("gac_decode: expected [C, H, W], got {:?}", regional.shape()));
        };
        let out = self.global_decoder.forward(p, map_to_tokens(regional)?, encoded)?;
        tokens_to_map(out, h, w)
    }

    pub fn forward<'t>(&self, p: &Binding<'t>, f: Var<'t>) -> Result<DcmOutput<'t>> {
        let cfg = &self.config;
        match f.shape()[..] {
            [c, _, _] if c == cfg.channels => {}
            ref s => return Err(contract!("dcm: expected [{}, H, W], got {s:?}", cfg.channels)),
        }
        let areas = run_clustering(f, cfg.areas, cfg.iterations)?;
        let (regional, regional_pos) = self.rac_encode(p, f, &areas)?;
        let (descriptors, included) = self.build_descriptors(regional, &areas)?;
        let global = if cfg.use_gac {
            let encoded = self.gac_encode(p, descriptors, &included)?;
            Some(self.gac_decode(p, regional, encoded)?)
        } else {
            None
        };
        let mut streams = Vec::with_capacity(3);
        if cfg.use_f {
            streams.push(f);
        }
        if cfg.use_rac {
            streams.push(regional);
        }
        streams.extend(global);
        let output = if streams.len() == 1 { streams[0] } else { Var::concat(&streams, 0)? };
        Ok(DcmOutput { output, areas, regional, regional_pos, descriptors, included, global })
    }
}
