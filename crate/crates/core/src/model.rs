//! The full segmentation network: a truncated VGG-style backbone at output
//! stride 4, a channel-reduction convolution, the dual context module and
//! two prediction heads.

use crate::autodiff::{reflect_pad_bottom_right, Binding, ConvSpec, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::dcm::{Dcm, DcmConfig};
use crate::error::{contract, Error, Result};
use crate::io::{ProbMap, RgbImage};
use crate::nn::Init;

pub const AUX_WEIGHT: f64 = 0.4;
pub const MIN_INPUT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub widths: [usize; 4],
    pub convs: [usize; 4],
}

impl Default for BackboneConfig {
    /// Desk-scale widths, small enough to train on a CPU.
    fn default() -> Self {
        Self { widths: [16, 32, 64, 64], convs: [2, 2, 3, 3] }
    }
}

impl BackboneConfig {
    /// The first four VGG-16 stages.
    pub fn vgg16() -> Self {
        Self { widths: [64, 128, 256, 512], convs: [2, 2, 3, 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.convs.contains(&0) {
            return Err(Error::Config("backbone widths and conv counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub dcm: DcmConfig,
    pub classes: usize,
    /// Per-channel standardization applied after scaling pixels to [0, 1].
    pub norm_mean: [f64; 3],
    pub norm_std: [f64; 3],
}

impl ModelConfig {
    pub fn desk(classes: usize) -> Self {
        Self {
            backbone: BackboneConfig::default(),
            dcm: DcmConfig { channels: 32, areas: 16, iterations: 3, heads: 2, ..DcmConfig::default() },
            classes,
            norm_mean: [0.5; 3],
            norm_std: [0.25; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.dcm.validate()?;
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.norm_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
}

impl Conv {
    /// 3×3 convolution. `he` selects He-uniform weights for layers feeding a
    /// ReLU; otherwise weights are uniform in ±1/√fan_in.
    fn new(init: &mut Init<'_>, name: &str, inputs: usize, outputs: usize, he: bool) -> Self {
        let fan_in = inputs * 9;
        let weight = init.uniform(&format!("{name}.weight"), &[outputs, inputs, 3, 3], fan_in);
        if he {
            let p = init.store.get_mut(weight);
            p.value = p.value.map(|v| v * 6f64.sqrt());
        }
        let bias = init.constant(&format!("{name}.bias"), &[outputs], 0.0);
        Self { weight, bias }
    }

    fn forward<'t>(&self, p: &Binding<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.conv2d(p.get(self.weight), Some(p.get(self.bias)), ConvSpec::same(1))
    }
}

/// Logits of both heads at input resolution, plus the DCM intermediates.
pub struct ModelOutput<'t> {
    pub main: Var<'t>,
    pub aux: Var<'t>,
    pub area_labels: Vec<usize>,
    pub feature_size: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct DcntModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    stages: Vec<Vec<Conv>>,
    reduce: Conv,
    pub dcm: Dcm,
    head: Conv,
    aux_head: Conv,
}

impl DcntModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, seed);
        init.group = ParamGroup::Backbone;
        let mut stages = Vec::with_capacity(4);
        let mut inputs = 3;
        for (s, (&width, &count)) in config.backbone.widths.iter().zip(&config.backbone.convs).enumerate() {
            let convs = (0..count)
                .map(|k| {
                    let conv = Conv::new(&mut init, &format!("backbone.stage{}.conv{}", s + 1, k + 1), inputs, width, true);
                    inputs = width;
                    conv
                })
                .collect();
            stages.push(convs);
        }
        init.group = ParamGroup::Head;
        let c = config.dcm.channels;
        let reduce = Conv::new(&mut init, "reduce", inputs, c, false);
        let dcm = Dcm::new(&mut init, "dcm", config.dcm)?;
        let head = Conv::new(&mut init, "head", config.dcm.out_channels(), config.classes, false);
        let aux_head = Conv::new(&mut init, "aux_head", config.backbone.widths[2], config.classes, false);
        Ok(Self { config, store, stages, reduce, dcm, head, aux_head })
    }

    /// Scales 8-bit channels to [0, 1], standardizes them and reflect-pads
    /// the bottom/right edges up to a multiple of 4.
    pub fn prepare_input(&self, img: &RgbImage) -> Result<Tensor> {
        let (h, w) = (img.height, img.width);
        if h < MIN_INPUT || w < MIN_INPUT {
            return Err(contract!("input {h}x{w} is smaller than {MIN_INPUT}x{MIN_INPUT}"));
        }
        let (mean, std) = (self.config.norm_mean, self.config.norm_std);
        let x = Tensor::from_fn(&[3, h, w], |i| {
            let c = i / (h * w);
            (img.data[i] as f64 / 255.0 - mean[c]) / std[c]
        });
        reflect_pad_bottom_right(&x, h.div_ceil(4) * 4, w.div_ceil(4) * 4)
    }

    /// Returns the stage-3 and stage-4 feature maps, both at stride 4.
    pub fn backbone_forward<'t>(&self, p: &Binding<'t>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let mut h = x;
        let mut stage3 = None;
        for (s, convs) in self.stages.iter().enumerate() {
            for conv in convs {
                h = conv.forward(p, h)?.relu();
            }
            if s < 2 {
                h = h.maxpool2d()?;
            }
            if s == 2 {
                stage3 = Some(h);
            }
        }
        Ok((stage3.expect("four stages"), h))
    }

    /// Forward pass on a prepared `[3, H, W]` input whose sides are multiples
    /// of 4. Logits are cropped to `out_h × out_w`.
    pub fn forward<'t>(&self, p: &Binding<'t>, x: Var<'t>, out_h: usize, out_w: usize) -> Result<ModelOutput<'t>> {
        let (stage3, stage4) = self.backbone_forward(p, x)?;
        let f = self.reduce.forward(p, stage4)?;
        let feature_size = (f.shape()[1], f.shape()[2]);
        let ctx = self.dcm.forward(p, f)?;
        let main = self.head.forward(p, ctx.output)?.bilinear_upsample(4)?.crop2d(out_h, out_w)?;
        let aux = self.aux_head.forward(p, stage3)?.bilinear_upsample(4)?.crop2d(out_h, out_w)?;
        Ok(ModelOutput { main, aux, area_labels: ctx.areas.labels, feature_size })
    }

    pub fn forward_image<'t>(&self, p: &Binding<'t>, img: &RgbImage) -> Result<ModelOutput<'t>> {
        let tape = p.vars().first().map(|v| v.tape()).ok_or_else(|| contract!("model has no parameters"))?;
        let input = tape.constant(self.prepare_input(img)?);
        self.forward(p, input, img.height, img.width)
    }

    /// Per-pixel class probabilities of the main head.
    pub fn predict(&self, img: &RgbImage) -> Result<ProbMap> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let out = self.forward_image(&p, img)?;
        let probs = out.main.softmax(0)?.value();
        ProbMap::new(self.config.classes, img.height, img.width, probs.data().iter().map(|&v| v as f32).collect())
    }
}

/// `CE(main) + 0.4·CE(aux)`, each averaged over labeled pixels only.
pub fn loss<'t>(main: Var<'t>, aux: Var<'t>, labels: &[u16]) -> Result<Var<'t>> {
    main.softmax_cross_entropy(labels)?.add(aux.softmax_cross_entropy(labels)?.scale(AUX_WEIGHT))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;

    fn tiny(classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig { widths: [2, 3, 4, 4], convs: [1, 1, 1, 1] },
            dcm: DcmConfig { channels: 4, areas: 4, iterations: 2, heads: 2, ..DcmConfig::default() },
            ..ModelConfig::desk(classes)
        }
    }

    fn image(h: usize, w: usize) -> RgbImage {
        RgbImage::new(h, w, (0..3 * h * w).map(|i| ((i * 97) % 256) as u8).collect()).unwrap()
    }

    #[test]
    fn output_matches_input_size() {
        let model = DcntModel::new(tiny(3), 1).unwrap();
        let tape = Tape::new();
        let p = model.store.bind_frozen(&tape);
        let out = model.forward_image(&p, &image(16, 16)).unwrap();
        assert_eq!(out.main.shape(), vec![3, 16, 16]);
        assert_eq!(out.aux.shape(), vec![3, 16, 16]);
        assert_eq!(out.feature_size, (4, 4));
        let out = model.forward_image(&p, &image(10, 13)).unwrap();
        assert_eq!(out.main.shape(), vec![3, 10, 13]);
        assert!(model.forward_image(&p, &image(6, 16)).is_err());
    }

    #[test]
    fn probabilities_sum_to_one_and_repeat() {
        let model = DcntModel::new(tiny(4), 2).unwrap();
        let a = model.predict(&image(16, 16)).unwrap();
        let b = model.predict(&image(16, 16)).unwrap();
        assert_eq!(a, b);
        for p in 0..a.pixels() {
            let s: f32 = (0..4).map(|c| a.score(c, p)).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_logits_loss() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(&[5, 2, 2]));
        let aux = tape.leaf(Tensor::zeros(&[5, 2, 2]));
        let l = loss(z, aux, &[1, 0, 3, 5]).unwrap();
        assert!((l.value().item() - 1.4 * 5f64.ln()).abs() < 1e-12);
        tape.backward(l).unwrap();
        let g = z.grad().unwrap();
        for c in 0..5 {
            assert_eq!(g.data()[c * 4 + 1], 0.0);
        }
    }

    #[test]
    fn parameter_groups() {
        let model = DcntModel::new(tiny(3), 3).unwrap();
        let backbone = model.store.iter().filter(|p| p.group() == ParamGroup::Backbone).count();
        assert_eq!(backbone, 8);
        assert!(model.store.iter().filter(|p| p.name.starts_with("dcm.")).all(|p| p.group() == ParamGroup::Head));
        assert!(DcntModel::new(ModelConfig { classes: 1, ..tiny(3) }, 0).is_err());
    }

    #[test]
    fn end_to_end_gradient() {
        let model = DcntModel::new(tiny(3), 4).unwrap();
        let img = image(16, 16);
        let x = model.prepare_input(&img).unwrap();
        let labels: Vec<u16> = (0..256).map(|i| if i % 7 == 0 { (i % 3 + 1) as u16 } else { 0 }).collect();
        let report = grad_check_params(
            &model.store,
            |tape, p| {
                let out = model.forward(p, tape.constant(x.clone()), 16, 16)?;
                loss(out.main, out.aux, &labels)
            },
            1e-6,
            Some(3),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.checked > 50);
    }
}
