//! Manifold graph construction: cosine affinity with a zero diagonal, then a
//! row-stochastic transition matrix via temperature softmax or top-k pruning.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor_io::{l2_normalize_rows, PixelMatrix};

/// Default softmax temperature.
pub const DEFAULT_TAU: f64 = 0.01;

/// Symmetric cosine-affinity matrix with W_ii = 0 (no self-loops).
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    entries: Array2<f64>,
}

impl AffinityMatrix {
    pub fn n_pixels(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphMode {
    Softmax { tau: f64 },
    TopK { k: usize, tau: f64 },
}

/// Row-stochastic transition matrix with a zero diagonal.
#[derive(Debug, Clone)]
pub struct TransitionGraph {
    entries: Array2<f64>,
    mode: GraphMode,
}

impl TransitionGraph {
    pub fn n_pixels(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    /// (S + S^T) / 2, for the variational diagnostic which assumes symmetry.
    pub fn symmetrized(&self) -> Array2<f64> {
        let t = self.entries.t();
        (&self.entries + &t) * 0.5
    }
}

/// Cosine affinity of every pixel pair, diagonal forced to zero. Rows are
/// l2-normalized first unless the caller asserts they already are.
pub fn build_affinity(x: &PixelMatrix, already_normalized: bool) -> Result<AffinityMatrix> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Size(format!("affinity needs at least 2 pixels, got {n}")));
    }
    let normalized;
    let xn = if already_normalized {
        x
    } else {
        normalized = l2_normalize_rows(x)?;
        &normalized
    };
    // dot may hand back a column-major result (it does for d = 1); the
    // row-wise softmax downstream needs contiguous rows
    let product = xn.dot(&xn.t());
    let mut entries = if product.is_standard_layout() {
        product
    } else {
        product.as_standard_layout().into_owned()
    };
    for i in 0..n {
        entries[(i, i)] = 0.0;
    }
    Ok(AffinityMatrix { entries })
}

fn stable_row_softmax(row: &mut [f64], i: usize, tau: f64, keep: Option<&[bool]>) {
    let kept = |j: usize| j != i && keep.map_or(true, |m| m[j]);
    let max = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| kept(j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for j in 0..row.len() {
        if kept(j) {
            let e = ((row[j] - max) / tau).exp();
            row[j] = e;
            sum += e;
        } else {
            row[j] = 0.0;
        }
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise temperature softmax over the off-diagonal affinities. Per-row
/// max subtraction keeps tau = 0.01 from overflowing.
pub fn softmax_transition(w: &AffinityMatrix, tau: f64) -> Result<TransitionGraph> {
    if tau <= 0.0 {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    let mut entries = w.entries.clone();
    for (i, mut row) in entries.rows_mut().into_iter().enumerate() {
        stable_row_softmax(row.as_slice_mut().expect("contiguous"), i, tau, None);
    }
    Ok(TransitionGraph {
        entries,
        mode: GraphMode::Softmax { tau },
    })
}

/// Per row, keep the min(k, N-1) largest off-diagonal affinities (ties break
/// toward the lower column index), then softmax the kept entries with the
/// configured temperature.
pub fn topk_transition(w: &AffinityMatrix, k: usize, tau: f64) -> Result<TransitionGraph> {
    if k < 1 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    if tau <= 0.0 {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    let n = w.n_pixels();
    let kept_per_row = k.min(n - 1);
    let mut entries = w.entries.clone();
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for (i, mut row) in entries.rows_mut().into_iter().enumerate() {
        let slice = row.as_slice_mut().expect("contiguous");
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        // descending by affinity, ascending column index on ties
        order.sort_by(|&a, &b| {
            slice[b]
                .partial_cmp(&slice[a])
                .expect("finite affinities")
                .then(a.cmp(&b))
        });
        let mut keep = vec![false; n];
        for &j in order.iter().take(kept_per_row) {
            keep[j] = true;
        }
        stable_row_softmax(slice, i, tau, Some(&keep));
    }
    Ok(TransitionGraph {
        entries,
        mode: GraphMode::TopK { k, tau },
    })
}

/// Build the transition graph for one pixel matrix in the configured mode.
pub fn build_transition(
    x: &PixelMatrix,
    already_normalized: bool,
    mode: GraphMode,
) -> Result<TransitionGraph> {
    let w = build_affinity(x, already_normalized)?;
    match mode {
        GraphMode::Softmax { tau } => softmax_transition(&w, tau),
        GraphMode::TopK { k, tau } => topk_transition(&w, k, tau),
    }
}
