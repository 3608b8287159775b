//! Central finite-difference verification of tape gradients.

use super::param::{Binding, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    /// `max |g_ad − g_fd| / max(1, |g_ad|, |g_fd|)` over checked components.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Components sitting on a kink (one-sided slopes disagree); excluded.
    pub kinks: usize,
}

/// One-sided slopes that differ by more than this (relative) mark a kink.
const KINK_TOLERANCE: f64 = 1e-4;

fn check_finite(tape: &Tape) -> Result<()> {
    match tape.first_non_finite() {
        Some((id, op)) => Err(Error::Data(format!("gradient check: non-finite value from `{op}` (node {id})"))),
        None => Ok(()),
    }
}

/// Checks the gradient of a scalar program with respect to several inputs.
///
/// `max_per_input` caps how many components of each input are perturbed;
/// larger inputs are sampled at an even stride.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], eps: f64, max_per_input: Option<usize>) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Domain(format!("finite-difference step {eps} outside [1e-6, 1e-3]")));
    }
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&tape, &vars)?;
        check_finite(&tape)?;
        tape.backward(out)?;
        vars.iter().zip(xs).map(|(v, x)| v.grad().unwrap_or_else(|| Tensor::zeros(x.shape()))).collect()
    };
    let value_at = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, &vars)?;
        check_finite(&tape)?;
        Ok(out.value().item())
    };

    let f0 = value_at(xs)?;
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = xs.to_vec();
    for k in 0..xs.len() {
        let len = xs[k].len();
        let count = max_per_input.map_or(len, |m| m.min(len));
        for s in 0..count {
            let i = s * len / count;
            let orig = xs[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let f_plus = value_at(&work)?;
            work[k].data_mut()[i] = orig - eps;
            let f_minus = value_at(&work)?;
            work[k].data_mut()[i] = orig;

            let (up, down) = ((f_plus - f0) / eps, (f0 - f_minus) / eps);
            if (up - down).abs() > KINK_TOLERANCE * 1f64.max(up.abs()).max(down.abs()) {
                report.kinks += 1;
                continue;
            }
            let fd = (f_plus - f_minus) / (2.0 * eps);
            let ad = analytic[k].data()[i];
            let rel = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Single-input convenience wrapper around [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps, None)
}

/// Checks gradients with respect to every parameter of a store.
pub fn grad_check_params<F>(store: &ParamStore, f: F, eps: f64, max_per_param: Option<usize>) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &Binding<'t>) -> Result<Var<'t>>,
{
    let values: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
    grad_check_many(|tape, vars| f(tape, &Binding::from_vars(vars.to_vec())), &values, eps, max_per_param)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_exact() {
        let a = Tensor::new(&[2, 2], vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let x = Tensor::new(&[2, 1], vec![0.3, -0.7]).unwrap();
        let report = grad_check(
            |tape, x| {
                let a = tape.constant(a.clone());
                x.transpose()?.matmul(a.matmul(x)?).map(|v| v.sum())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn maxpool_tie_is_flagged() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 1.0, 0.0, -1.0]).unwrap();
        let report = grad_check(|_, x| Ok(x.maxpool2d()?.sum()), &x, 1e-6).unwrap();
        assert_eq!(report.kinks, 2);
        assert_eq!(report.checked, 2);
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn non_finite_names_the_op() {
        let x = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let err = grad_check(|_, x| Ok(x.recip().sum()), &x, 1e-6).unwrap_err();
        assert!(err.to_string().contains("`recip`"), "{err}");
    }

    #[test]
    fn step_outside_range_rejected() {
        let x = Tensor::zeros(&[1]);
        assert!(grad_check(|_, x| Ok(x.sum()), &x, 1e-2).is_err());
    }
}
