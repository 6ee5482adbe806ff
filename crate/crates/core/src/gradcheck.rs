//! Finite-difference gradient checking.
//!
//! The checked function is expressed as a graph builder so it can be
//! evaluated at any precision: the analytic gradient comes from the `f32`
//! backward pass under test, the numeric reference from central differences
//! of an `f64` re-evaluation of the same graph (inputs widen exactly), which
//! keeps the difference quotient itself out of `f32` round-off.
//!
//! ReLU, max pooling and the absolute difference are only piecewise smooth.
//! A central difference whose two evaluations land on different smooth
//! pieces measures a secant across the kink, not a derivative, so such
//! elements carry no information about the backward pass. The checker
//! detects them by comparing the activation-pattern fingerprints of the two
//! perturbed evaluations and excludes them from the reported maximum; the
//! count is exposed in [`GradCheckReport::excluded_elements`].

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{Real, Tensor, TensorData};

/// A scalar-valued function of several tensors, given as a graph builder.
///
/// `build` must insert nothing that depends on the scalar type, so the same
/// expression can be replayed in `f32` and `f64`.
pub trait DifferentiableFn {
    fn build<T: Real>(&self, g: &mut Graph<T>, inputs: &[NodeId]) -> Result<NodeId>;
}

/// Result of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over compared elements of
    /// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    /// Flat per-input analytic gradients (f32 backward pass, widened).
    pub analytic: Vec<Vec<f64>>,
    /// Flat per-input central-difference gradients (f64 evaluation);
    /// NaN where the element was excluded.
    pub numeric: Vec<Vec<f64>>,
    /// Elements whose difference stencil straddled an activation boundary.
    pub excluded_elements: usize,
    /// Total number of checked elements, exclusions included.
    pub total_elements: usize,
}

const REL_FLOOR: f64 = 1e-8;

/// Compares the reverse-mode gradient of `f` at `inputs` against central
/// finite differences and returns the maximum relative error.
pub fn grad_check<F: DifferentiableFn>(f: &F, inputs: &[Tensor], epsilon: f64) -> Result<f64> {
    grad_check_report(f, inputs, epsilon).map(|r| r.max_rel_error)
}

/// Like [`grad_check`] but returns the full per-element gradients too.
pub fn grad_check_report<F: DifferentiableFn>(
    f: &F,
    inputs: &[Tensor],
    epsilon: f64,
) -> Result<GradCheckReport> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument(
            "grad_check: epsilon must be positive".into(),
        ));
    }

    // Analytic side: f32 forward + backward.
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::<f32>::new();
        let ids: Vec<NodeId> = inputs
            .iter()
            .map(|t| g.leaf_with_grad(t.clone()))
            .collect();
        let out = f.build(&mut g, &ids)?;
        let out_shape = g.value(out).shape();
        if out_shape.len() != 1 {
            return Err(Error::NonScalarOutput(out_shape));
        }
        g.backward(out)?;
        ids.iter()
            .zip(inputs)
            .map(|(&id, t)| match g.grad(id) {
                Some(gr) => gr.iter().map(|&v| v as f64).collect(),
                None => vec![0.0; t.data().len()],
            })
            .collect()
    };

    // Numeric side: central differences on the f64 replay. Elements whose
    // stencil does not stay on the base point's smooth piece are excluded.
    let wide: Vec<TensorData<f64>> = inputs.iter().map(Tensor::promote).collect();
    let (_, fp_base) = eval_perturbed(f, &wide, 0, 0, 0.0)?;
    let mut numeric: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
    let mut excluded = 0usize;
    let mut total = 0usize;
    for ti in 0..wide.len() {
        let mut grads = Vec::with_capacity(wide[ti].data().len());
        for ei in 0..wide[ti].data().len() {
            total += 1;
            let (plus, fp_plus) = eval_perturbed(f, &wide, ti, ei, epsilon)?;
            let (minus, fp_minus) = eval_perturbed(f, &wide, ti, ei, -epsilon)?;
            if fp_plus != fp_base || fp_minus != fp_base {
                excluded += 1;
                grads.push(f64::NAN);
            } else {
                grads.push((plus - minus) / (2.0 * epsilon));
            }
        }
        numeric.push(grads);
    }

    let mut max_rel = 0.0f64;
    for (ga, gn) in analytic.iter().zip(&numeric) {
        for (&a, &n) in ga.iter().zip(gn) {
            if n.is_nan() {
                continue;
            }
            // Both sides below the floor means both are zero at gradient
            // precision; the leftover is accumulation residue, not signal.
            if a.abs() < REL_FLOOR && n.abs() < REL_FLOOR {
                continue;
            }
            let denom = a.abs().max(n.abs()).max(REL_FLOOR);
            max_rel = max_rel.max((a - n).abs() / denom);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        analytic,
        numeric,
        excluded_elements: excluded,
        total_elements: total,
    })
}

fn eval_perturbed<F: DifferentiableFn>(
    f: &F,
    wide: &[TensorData<f64>],
    tensor_idx: usize,
    elem_idx: usize,
    delta: f64,
) -> Result<(f64, u64)> {
    let mut g = Graph::<f64>::new();
    let ids: Vec<NodeId> = wide
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == tensor_idx {
                let mut p = t.clone();
                p.data_mut()[elem_idx] += delta;
                g.leaf(p)
            } else {
                g.leaf(t.clone())
            }
        })
        .collect();
    let out = f.build(&mut g, &ids)?;
    let shape = g.value(out).shape();
    if shape.len() != 1 {
        return Err(Error::NonScalarOutput(shape));
    }
    Ok((g.value(out).data()[0], g.kink_fingerprint()))
}
