use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{contract, Error, Result};

/// Learning-rate group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Head,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    velocity: Option<Tensor>,
    group: ParamGroup,
}

impl Parameter {
    pub fn group(&self) -> ParamGroup {
        self.group
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owns all trainable tensors of a model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

/// Tape handles for every parameter of a store.
pub struct Binding<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Binding<'t> {
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> ParamId {
        self.params.push(Parameter { name: name.into(), value, grad: None, velocity: None, group });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Binding<'t> {
        Binding { vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect() }
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Binding<'t> {
        Binding { vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect() }
    }

    /// Adds the tape gradients of a binding into the stored gradients.
    pub fn accumulate_grads(&mut self, binding: &Binding<'_>) {
        for (p, var) in self.params.iter_mut().zip(&binding.vars) {
            if let Some(g) = var.grad() {
                match &mut p.grad {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }
}

/// Uniform fan-in initialization in `±sqrt(1 / fan_in)`.
pub fn uniform_fan_in(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One SGD step with momentum and L2 weight decay:
/// `v ← μ·v + g + λ·w`, `w ← w − lr(group)·v`.
pub fn sgd_step(store: &mut ParamStore, cfg: &SgdConfig) -> Result<()> {
    if let Some(p) = store.params.iter().find(|p| p.grad.is_none()) {
        return Err(contract!("parameter `{}` has no gradient", p.name));
    }
    for p in store.params.iter_mut() {
        let grad = p.grad.as_ref().expect("checked above");
        let velocity = p.velocity.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
        let lr = match p.group {
            ParamGroup::Backbone => cfg.lr_backbone,
            ParamGroup::Head => cfg.lr_head,
        };
        for ((v, w), g) in velocity.data_mut().iter_mut().zip(p.value.data_mut()).zip(grad.data()) {
            *v = cfg.momentum * *v + g + cfg.weight_decay * *w;
            *w -= lr * *v;
        }
    }
    Ok(())
}

/// Polynomial decay `initial · (1 − iter / max_iter)^power`.
pub fn poly_lr(initial: f64, iter: usize, max_iter: usize, power: f64) -> Result<f64> {
    if max_iter == 0 {
        return Err(Error::Domain("poly schedule needs max_iter > 0".into()));
    }
    if iter > max_iter {
        return Err(Error::Domain(format!("iteration {iter} beyond max_iter {max_iter}")));
    }
    Ok(initial * (1.0 - iter as f64 / max_iter as f64).powf(power))
}
