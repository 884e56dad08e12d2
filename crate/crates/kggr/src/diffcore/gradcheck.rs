//! Central-finite-difference verification of tape gradients.
//!
//! Verification always runs at 64 bits: at 32 bits the difference quotient's
//! rounding noise would drown out genuine adjoint bugs.

use super::array::Array;
use super::tape::{Tape, ValueId};
use crate::error::{Error, Result};

/// Builders construct the scalar loss on a fresh tape from bound parameters,
/// in the order the parameter slice was given.
pub trait LossBuilder: Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId> {}
impl<T: Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId>> LossBuilder for T {}

/// Below this magnitude both gradient estimates count as zero. Central
/// differences of an O(1)–O(10) loss at eps = 1e-5 carry ~1e-10 of rounding
/// noise, so relative comparison against tolerances down to 1e-6 is only
/// meaningful above ~1e-5.
const ABS_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: Option<String>,
    pub worst_element: usize,
    pub elements_checked: usize,
    pub tol: f64,
    pub pass: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max relative error {:.3e} over {} elements (tol {:.1e}{})",
            if self.pass { "pass" } else { "FAIL" },
            self.max_rel_err,
            self.elements_checked,
            self.tol,
            match &self.worst_param {
                Some(name) => format!(", worst {name}[{}]", self.worst_element),
                None => String::new(),
            }
        )
    }
}

fn evaluate<B: LossBuilder>(build: &B, params: &[(String, Array<f64>)]) -> Result<f64> {
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params
        .iter()
        .map(|(_, arr)| tape.param(arr.clone()))
        .collect();
    let loss = build(&mut tape, &ids)?;
    Ok(tape.scalar(loss))
}

/// Reverse-mode gradients of the built loss, in parameter order.
pub fn analytic_gradients<B: LossBuilder>(
    build: &B,
    params: &[(String, Array<f64>)],
) -> Result<Vec<Array<f64>>> {
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params
        .iter()
        .map(|(_, arr)| tape.param(arr.clone()))
        .collect();
    let loss = build(&mut tape, &ids)?;
    let mut grads = tape.backward(loss)?;
    Ok(ids
        .iter()
        .map(|&id| grads.take(id).expect("param gradient present"))
        .collect())
}

/// Central differences (f(p+eps) − f(p−eps)) / 2eps, element by element.
pub fn fd_gradients<B: LossBuilder>(
    build: &B,
    params: &[(String, Array<f64>)],
    eps: f64,
) -> Result<Vec<Array<f64>>> {
    let mut work: Vec<(String, Array<f64>)> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Array::zeros(params[p].1.shape().to_vec());
        for i in 0..params[p].1.len() {
            let base = params[p].1.data()[i];
            work[p].1.data_mut()[i] = base + eps;
            let plus = evaluate(build, &work)?;
            work[p].1.data_mut()[i] = base - eps;
            let minus = evaluate(build, &work)?;
            work[p].1.data_mut()[i] = base;
            grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Elementwise relative comparison of two gradient sets.
pub fn compare_gradients(
    params: &[(String, Array<f64>)],
    analytic: &[Array<f64>],
    fd: &[Array<f64>],
    tol: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: None,
        worst_element: 0,
        elements_checked: 0,
        tol,
        pass: true,
    };
    for ((name, _), (an, nd)) in params.iter().zip(analytic.iter().zip(fd)) {
        for (i, (&a, &n)) in an.data().iter().zip(nd.data()).enumerate() {
            report.elements_checked += 1;
            let scale = a.abs().max(n.abs());
            let rel = if scale <= ABS_FLOOR {
                0.0
            } else {
                (a - n).abs() / scale
            };
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = Some(name.clone());
                report.worst_element = i;
            }
        }
    }
    report.pass = report.max_rel_err <= tol;
    report
}

/// End-to-end gradient check: determinism guard, reverse sweep, central
/// differences, relative comparison.
pub fn grad_check<B: LossBuilder>(
    build: &B,
    params: &[(String, Array<f64>)],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let first = evaluate(build, params)?;
    let second = evaluate(build, params)?;
    if first != second {
        return Err(Error::NonDeterministic { first, second });
    }
    let analytic = analytic_gradients(build, params)?;
    let fd = fd_gradients(build, params, eps)?;
    Ok(compare_gradients(params, &analytic, &fd, tol))
}
