//! Random walk with restart on the transition graph: the iterative update
//! m^{t+1} = alpha * S * m^t + (1 - alpha) * m^0, its closed form
//! (1 - alpha) * (I - alpha * S)^{-1} * m^0, and the variational objective
//! used as a diagnostic.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::TransitionGraph;
use crate::linalg::lu_factor;
use crate::tensor_io::PixelMatrix;

/// Default continue probability.
pub const DEFAULT_ALPHA: f64 = 0.99;
/// Default iteration count (the high-diversity setting; 5 suits tamer scenes).
pub const DEFAULT_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    Iterative { iterations: usize },
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionConfig {
    /// Probability of continuing the walk; 1 - alpha restarts from m^0.
    pub alpha: f64,
    pub solver: Solver,
    /// Opt-in early stop on the residual max-row-norm. None reproduces the
    /// fixed-T behaviour.
    pub tolerance: Option<f64>,
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        match self.solver {
            Solver::Iterative { .. } => {
                if !(0.0..1.0).contains(&self.alpha) {
                    return Err(Error::Parameter(format!(
                        "iterative solver needs 0 <= alpha < 1, got {}",
                        self.alpha
                    )));
                }
            }
            Solver::ClosedForm => {
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return Err(Error::Parameter(format!(
                        "closed form needs 0 < alpha < 1, got {}",
                        self.alpha
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DiffusionResult {
    pub refined: PixelMatrix,
    /// Max-row-norm of m^{t+1} - m^t per iteration (iterative solver only).
    pub residual_history: Vec<f64>,
}

/// S * m with a fixed ascending-index reduction per output row. Rows are
/// distributed over the rayon pool; results do not depend on the schedule.
fn transition_matmul(s: &Array2<f64>, m: &Array2<f64>) -> Array2<f64> {
    let n = s.nrows();
    let d = m.ncols();
    let mut out = Array2::<f64>::zeros((n, d));
    let m_slice = m.as_slice().expect("contiguous");
    let s_slice = s.as_slice().expect("contiguous");
    out.as_slice_mut()
        .expect("contiguous")
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, out_row)| {
            let s_row = &s_slice[i * n..(i + 1) * n];
            for (j, &w) in s_row.iter().enumerate() {
                if w != 0.0 {
                    let src = &m_slice[j * d..(j + 1) * d];
                    for c in 0..d {
                        out_row[c] += w * src[c];
                    }
                }
            }
        });
    out
}

fn max_row_norm_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

fn check_dims(s: &TransitionGraph, m0: &PixelMatrix) -> Result<()> {
    if s.n_pixels() != m0.nrows() {
        return Err(Error::Size(format!(
            "graph has {} pixels, embeddings have {} rows",
            s.n_pixels(),
            m0.nrows()
        )));
    }
    Ok(())
}

pub fn diffuse_iterative(
    s: &TransitionGraph,
    m0: &PixelMatrix,
    alpha: f64,
    iterations: usize,
    tolerance: Option<f64>,
) -> Result<DiffusionResult> {
    check_dims(s, m0)?;
    DiffusionConfig {
        alpha,
        solver: Solver::Iterative { iterations },
        tolerance,
    }
    .validate()?;
    let restart = m0 * (1.0 - alpha);
    let mut current = m0.clone();
    let mut residual_history = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut next = transition_matmul(s.entries(), &current);
        next *= alpha;
        next += &restart;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite intermediate state".into()));
        }
        let residual = max_row_norm_diff(&next, &current);
        residual_history.push(residual);
        current = next;
        if let Some(tol) = tolerance {
            if residual < tol {
                break;
            }
        }
    }
    Ok(DiffusionResult {
        refined: current,
        residual_history,
    })
}

pub fn diffuse_closed_form(
    s: &TransitionGraph,
    m0: &PixelMatrix,
    alpha: f64,
) -> Result<DiffusionResult> {
    check_dims(s, m0)?;
    DiffusionConfig {
        alpha,
        solver: Solver::ClosedForm,
        tolerance: None,
    }
    .validate()?;
    let n = s.n_pixels();
    // I - alpha * S is strictly diagonally dominant for row-stochastic S,
    // so a failed factorization means an upstream invariant was violated.
    let mut a = s.entries() * (-alpha);
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let factors = lu_factor(&a)?;
    let mut refined = factors.solve_matrix(m0)?;
    refined *= 1.0 - alpha;
    if refined.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite closed-form result".into()));
    }
    Ok(DiffusionResult {
        refined,
        residual_history: Vec::new(),
    })
}

pub fn diffuse(s: &TransitionGraph, m0: &PixelMatrix, cfg: &DiffusionConfig) -> Result<DiffusionResult> {
    cfg.validate()?;
    match cfg.solver {
        Solver::Iterative { iterations } => {
            diffuse_iterative(s, m0, cfg.alpha, iterations, cfg.tolerance)
        }
        Solver::ClosedForm => diffuse_closed_form(s, m0, cfg.alpha),
    }
}

/// Variational objective: J(m) = 1/2 sum_ij S_ij ||m_i - m_j||^2
/// + ((1 - alpha) / alpha) sum_i ||m_i - m0_i||^2.
///
/// Diagnostic only; the minimization view strictly holds for symmetric S, so
/// callers checking J(m^inf) <= J(m^0) should pass a symmetrized graph.
pub fn diffusion_objective(
    s_entries: &Array2<f64>,
    m: &PixelMatrix,
    m0: &PixelMatrix,
    alpha: f64,
) -> Result<f64> {
    let n = s_entries.nrows();
    if m.nrows() != n || m0.nrows() != n || m.ncols() != m0.ncols() {
        return Err(Error::Size("objective dimension mismatch".into()));
    }
    let d = m.ncols();
    let mut smooth = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = s_entries[(i, j)];
            if w != 0.0 {
                let mut dist2 = 0.0;
                for c in 0..d {
                    let diff = m[(i, c)] - m[(j, c)];
                    dist2 += diff * diff;
                }
                smooth += w * dist2;
            }
        }
    }
    let mut fidelity = 0.0;
    for i in 0..n {
        for c in 0..d {
            let diff = m[(i, c)] - m0[(i, c)];
            fidelity += diff * diff;
        }
    }
    Ok(0.5 * smooth + (1.0 - alpha) / alpha * fidelity)
}
