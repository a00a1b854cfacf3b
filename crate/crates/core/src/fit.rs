//! Pseudo-likelihood estimation of the shared MRF parameters from one fully
//! labelled realization.
//!
//! Each factor `P(X_i = x_i | x_{−i})` is a logistic function of the
//! feature differences between `x_i = 1` and `x_i = 0`, so neither the
//! objective nor its gradient involves the partition function.

use serde::Serialize;

use crate::exec::pairwise_sum;
use crate::graph::{Graph, NodeId};
use crate::mrf::{f1, f2, theta1_len, theta2_len, Label};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("observation has {got} labels, graph has {expected} nodes")]
    ObservationLength { got: usize, expected: usize },
    #[error("label {0} is not binary")]
    InvalidLabel(Label),
    #[error("theta1 has length {got}, expected {expected}")]
    Theta1Length { got: usize, expected: usize },
    #[error("theta2 has length {got}, expected {expected}")]
    Theta2Length { got: usize, expected: usize },
    #[error("objective became non-finite after {iterations} iterations")]
    Diverged { iterations: usize, theta1: Vec<f64>, theta2: Vec<f64> },
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn diff(a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    a.into_iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `f1(1, c_i) − f1(0, c_i)`.
fn delta_f1(g: &Graph, i: NodeId) -> Vec<f64> {
    let c = g.covariates(i);
    diff(f1(1, c), f1(0, c))
}

/// `Σ_{j ∈ N(i)} f2(1, x_j, c_i, c_j) − f2(0, x_j, c_i, c_j)`.
fn delta_f2(g: &Graph, x: &[Label], i: NodeId) -> Vec<f64> {
    let ci = g.covariates(i);
    let mut out = vec![0.0; theta2_len(g.covariate_dim())];
    for &j in g.neighbors(i) {
        let cj = g.covariates(j);
        let d = diff(f2(1, x[j], ci, cj), f2(0, x[j], ci, cj));
        out.iter_mut().zip(d).for_each(|(o, v)| *o += v);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check(theta1: &[f64], theta2: &[f64], g: &Graph, x: &[Label]) -> Result<(), FitError> {
    let d = g.covariate_dim();
    if theta1.len() != theta1_len(d) {
        return Err(FitError::Theta1Length { got: theta1.len(), expected: theta1_len(d) });
    }
    if theta2.len() != theta2_len(d) {
        return Err(FitError::Theta2Length { got: theta2.len(), expected: theta2_len(d) });
    }
    if x.len() != g.node_count() {
        return Err(FitError::ObservationLength { got: x.len(), expected: g.node_count() });
    }
    if let Some(&bad) = x.iter().find(|&&l| l > 1) {
        return Err(FitError::InvalidLabel(bad));
    }
    Ok(())
}

/// Log-odds of `X_i = 1` given every other label.
fn local_logit(theta1: &[f64], theta2: &[f64], g: &Graph, x: &[Label], i: NodeId) -> f64 {
    dot(theta1, &delta_f1(g, i)) + dot(theta2, &delta_f2(g, x, i))
}

/// `P(X_i = 1 | x_{−i})`.
pub fn local_conditional(
    theta1: &[f64],
    theta2: &[f64],
    g: &Graph,
    x: &[Label],
    i: NodeId,
) -> Result<f64, FitError> {
    check(theta1, theta2, g, x)?;
    Ok(sigmoid(local_logit(theta1, theta2, g, x, i)))
}

/// `Σ_i log P(X_i = x_i | x_{−i})`.
pub fn pseudo_loglik(theta1: &[f64], theta2: &[f64], g: &Graph, x: &[Label]) -> Result<f64, FitError> {
    check(theta1, theta2, g, x)?;
    let terms: Vec<f64> = (0..g.node_count())
        .map(|i| {
            let z = local_logit(theta1, theta2, g, x, i);
            if x[i] == 1 {
                log_sigmoid(z)
            } else {
                log_sigmoid(-z)
            }
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Gradient of [`pseudo_loglik`]:
/// `Σ_i α_i Δf1_i` and `Σ_i α_i Σ_{j∈N(i)} Δf2_ij` with
/// `α_i = x_i − P(X_i = 1 | x_{−i})`.
pub fn pseudo_grad(
    theta1: &[f64],
    theta2: &[f64],
    g: &Graph,
    x: &[Label],
) -> Result<(Vec<f64>, Vec<f64>), FitError> {
    check(theta1, theta2, g, x)?;
    let n = g.node_count();
    let mut terms1 = vec![Vec::with_capacity(n); theta1.len()];
    let mut terms2 = vec![Vec::with_capacity(n); theta2.len()];
    for i in 0..n {
        let d1 = delta_f1(g, i);
        let d2 = delta_f2(g, x, i);
        let alpha = f64::from(x[i]) - sigmoid(dot(theta1, &d1) + dot(theta2, &d2));
        terms1.iter_mut().zip(&d1).for_each(|(t, v)| t.push(alpha * v));
        terms2.iter_mut().zip(&d2).for_each(|(t, v)| t.push(alpha * v));
    }
    Ok((terms1.iter().map(|t| pairwise_sum(t)).collect(), terms2.iter().map(|t| pairwise_sum(t)).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    pub grad_tolerance: f64,
    pub initial_step: f64,
    /// Weight of the `λ ‖θ‖²` penalty.
    pub l2: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iters: 500, grad_tolerance: 1e-6, initial_step: 1.0, l2: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
    /// Penalised objective after every accepted step, starting value first.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Gradient ascent with backtracking from `θ = 0`.
pub fn fit_parameters(g: &Graph, x: &[Label], options: &FitOptions) -> Result<FitResult, FitError> {
    let d = g.covariate_dim();
    fit_from(g, x, vec![0.0; theta1_len(d)], vec![0.0; theta2_len(d)], options)
}

/// Gradient ascent with backtracking line search (step halving, Armijo
/// constant `1e-4`) on the penalised pseudo-log-likelihood.
pub fn fit_from(
    g: &Graph,
    x: &[Label],
    mut theta1: Vec<f64>,
    mut theta2: Vec<f64>,
    options: &FitOptions,
) -> Result<FitResult, FitError> {
    let objective = |t1: &[f64], t2: &[f64]| -> Result<f64, FitError> {
        let penalty: f64 = t1.iter().chain(t2).map(|t| t * t).sum();
        Ok(pseudo_loglik(t1, t2, g, x)? - options.l2 * penalty)
    };
    let gradient = |t1: &[f64], t2: &[f64]| -> Result<(Vec<f64>, Vec<f64>), FitError> {
        let (mut g1, mut g2) = pseudo_grad(t1, t2, g, x)?;
        g1.iter_mut().zip(t1).for_each(|(gv, t)| *gv -= 2.0 * options.l2 * t);
        g2.iter_mut().zip(t2).for_each(|(gv, t)| *gv -= 2.0 * options.l2 * t);
        Ok((g1, g2))
    };
    let mut value = objective(&theta1, &theta2)?;
    let mut trace = vec![value];
    let mut step = options.initial_step;
    let mut iterations = 0;
    let (mut g1, mut g2) = gradient(&theta1, &theta2)?;
    let mut norm = g1.iter().chain(&g2).map(|v| v * v).sum::<f64>().sqrt();
    while iterations < options.max_iters && norm > options.grad_tolerance {
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let t1: Vec<f64> = theta1.iter().zip(&g1).map(|(t, gv)| t + step * gv).collect();
            let t2: Vec<f64> = theta2.iter().zip(&g2).map(|(t, gv)| t + step * gv).collect();
            let candidate = objective(&t1, &t2)?;
            if !candidate.is_finite() {
                return Err(FitError::Diverged { iterations, theta1, theta2 });
            }
            if candidate >= value + ARMIJO * step * norm * norm {
                theta1 = t1;
                theta2 = t2;
                value = candidate;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        iterations += 1;
        trace.push(value);
        // let the step grow back after successful iterations
        step = (step * 2.0).min(options.initial_step * 1e3);
        (g1, g2) = gradient(&theta1, &theta2)?;
        norm = g1.iter().chain(&g2).map(|v| v * v).sum::<f64>().sqrt();
    }
    Ok(FitResult {
        theta1,
        theta2,
        diagnostics: FitDiagnostics {
            iterations,
            final_grad_norm: norm,
            converged: norm <= options.grad_tolerance,
            objective_trace: trace,
        },
    })
}
