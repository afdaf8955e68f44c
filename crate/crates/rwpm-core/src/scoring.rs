//! Anomaly scoring: inner-product logits against inlier-class prototypes,
//! then one of three per-pixel scoring functions (energy, RbA, 1 - max).
//! Higher score means more anomalous for all three.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor_io::{
    to_pixel_matrix, EmbeddingMap, PixelMatrix, ScoreMap, Tensor, TensorData,
};

/// One prototype row per inlier class; logits are inner products plus an
/// optional per-class bias (zero by default).
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    weights: Array2<f64>,
    bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn new(weights: Array2<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        let k = weights.nrows();
        if k < 1 {
            return Err(Error::Size("classifier needs at least one class".into()));
        }
        let bias = bias.unwrap_or_else(|| vec![0.0; k]);
        if bias.len() != k {
            return Err(Error::Size(format!(
                "bias has {} entries for {} classes",
                bias.len(),
                k
            )));
        }
        Ok(LinearClassifier { weights, bias })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn to_tensor(&self) -> Tensor {
        let data: Vec<f32> = self.weights.iter().map(|&v| v as f32).collect();
        Tensor::new(
            vec![self.n_classes(), self.dim()],
            TensorData::Real32(data),
        )
        .expect("valid by construction")
    }

    pub fn from_tensors(weights: &Tensor, bias: Option<&Tensor>) -> Result<Self> {
        let dims = weights.dims();
        if dims.len() != 2 {
            return Err(Error::Size(format!(
                "classifier weights must be rank 2, got {dims:?}"
            )));
        }
        let (k, d) = (dims[0], dims[1]);
        let w = Array2::from_shape_vec(
            (k, d),
            weights.real32()?.iter().map(|&v| v as f64).collect(),
        )
        .expect("shape checked");
        let b = match bias {
            Some(t) => {
                if t.dims() != [k] {
                    return Err(Error::Size(format!(
                        "bias tensor must have dims [{k}], got {:?}",
                        t.dims()
                    )));
                }
                Some(t.real32()?.iter().map(|&v| v as f64).collect())
            }
            None => None,
        };
        LinearClassifier::new(w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringFunction {
    Energy,
    Rba,
    OneMinusMax(Activation),
}

impl ScoringFunction {
    pub fn name(&self) -> &'static str {
        match self {
            ScoringFunction::Energy => "energy",
            ScoringFunction::Rba => "rba",
            ScoringFunction::OneMinusMax(Activation::Sigmoid) => "one-minus-max-sigmoid",
            ScoringFunction::OneMinusMax(Activation::Softmax) => "one-minus-max-softmax",
        }
    }
}

/// logits[i][k] = <m_i, weights_k> + bias_k.
pub fn compute_logits(m: &PixelMatrix, c: &LinearClassifier) -> Result<Array2<f64>> {
    if m.ncols() != c.dim() {
        return Err(Error::Size(format!(
            "embedding dim {} != classifier dim {}",
            m.ncols(),
            c.dim()
        )));
    }
    let mut logits = m.dot(&c.weights.t());
    for mut row in logits.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v += c.bias[k];
        }
    }
    Ok(logits)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// E = -log sum_k exp(l_k), with max subtraction for stability.
pub fn energy_score(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    -(max + sum.ln())
}

/// RbA = -sum_k sigmoid(l_k).
pub fn rba_score(logits: &[f64]) -> f64 {
    -logits.iter().map(|&l| sigmoid(l)).sum::<f64>()
}

/// 1 - max_k act(l_k); sigmoid acts element-wise, softmax over the row.
pub fn one_minus_max_score(logits: &[f64], activation: Activation) -> f64 {
    match activation {
        Activation::Sigmoid => {
            let max = logits
                .iter()
                .map(|&l| sigmoid(l))
                .fold(f64::NEG_INFINITY, f64::max);
            1.0 - max
        }
        Activation::Softmax => {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
            // max softmax entry corresponds to the max logit
            1.0 - 1.0 / denom
        }
    }
}

pub fn score_logits_row(logits: &[f64], f: ScoringFunction) -> f64 {
    match f {
        ScoringFunction::Energy => energy_score(logits),
        ScoringFunction::Rba => rba_score(logits),
        ScoringFunction::OneMinusMax(act) => one_minus_max_score(logits, act),
    }
}

/// Score every pixel of a pixel-major matrix; layout (h, w) is the caller's.
pub fn score_pixel_matrix(
    m: &PixelMatrix,
    c: &LinearClassifier,
    f: ScoringFunction,
    h: usize,
    w: usize,
) -> Result<ScoreMap> {
    if m.nrows() != h * w {
        return Err(Error::Size(format!(
            "pixel matrix has {} rows, expected H*W = {}",
            m.nrows(),
            h * w
        )));
    }
    let logits = compute_logits(m, c)?;
    let scores: Vec<f64> = logits
        .rows()
        .into_iter()
        .map(|row| score_logits_row(row.as_slice().expect("contiguous"), f))
        .collect();
    ScoreMap::new(h, w, scores)
}

/// Score an embedding map directly (no diffusion).
pub fn score_map(m: &EmbeddingMap, c: &LinearClassifier, f: ScoringFunction) -> Result<ScoreMap> {
    score_pixel_matrix(&to_pixel_matrix(m), c, f, m.h(), m.w())
}
