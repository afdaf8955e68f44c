//! Pixel-level evaluation against ground-truth label maps: AUROC, average
//! precision and FPR at 95% TPR, with outliers as the positive class.
//!
//! Conventions are pinned here because the usual benchmark suites do not
//! state them: AUROC counts ties with half credit, AP is the
//! step-wise non-interpolated sum over distinct-score thresholds, FPR95 is
//! the FPR of the smallest threshold set reaching TPR >= 0.95 (no
//! interpolation). A pixel is predicted positive when score >= threshold.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor_io::{LabelMap, ScoreMap, LABEL_IGNORE, LABEL_OUTLIER};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub auroc: f64,
    pub ap: f64,
    pub fpr95: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "auroc={:.6} ap={:.6} fpr95={:.6} n_pos={} n_neg={}",
            self.auroc, self.ap, self.fpr95, self.n_pos, self.n_neg
        )
    }
}

/// Collect (score, is_outlier) pairs, dropping ignore pixels.
fn collect(scores: &ScoreMap, labels: &LabelMap) -> Result<Vec<(f64, bool)>> {
    if scores.h() != labels.h() || scores.w() != labels.w() {
        return Err(Error::Size(format!(
            "score map {}x{} vs label map {}x{}",
            scores.h(),
            scores.w(),
            labels.h(),
            labels.w()
        )));
    }
    let mut pairs = Vec::with_capacity(scores.scores().len());
    for (&s, &l) in scores.scores().iter().zip(labels.labels()) {
        if l == LABEL_IGNORE {
            continue;
        }
        if s.is_nan() {
            return Err(Error::Data("NaN score in evaluation".into()));
        }
        pairs.push((s, l == LABEL_OUTLIER));
    }
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(format!(
            "need both classes after removing ignore pixels (pos={n_pos}, neg={n_neg})"
        )));
    }
    Ok(pairs)
}

/// Sort-based evaluation in one sweep over distinct-score groups.
pub fn evaluate(scores: &ScoreMap, labels: &LabelMap) -> Result<EvalResult> {
    let mut pairs = collect(scores, labels)?;
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    // descending score
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("no NaN after collect"));

    let mut auroc_area = 0.0;
    let mut ap = 0.0;
    let mut fpr95 = f64::NAN;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut idx = 0;
    while idx < pairs.len() {
        // one tie group = one threshold
        let score = pairs[idx].0;
        let mut dtp = 0usize;
        let mut dfp = 0usize;
        while idx < pairs.len() && pairs[idx].0 == score {
            if pairs[idx].1 {
                dtp += 1;
            } else {
                dfp += 1;
            }
            idx += 1;
        }
        // trapezoid over the ROC step equals the half-credit pair count
        auroc_area += dfp as f64 * (tp as f64 + dtp as f64 / 2.0);
        tp += dtp;
        fp += dfp;
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (dtp as f64 / n_pos as f64) * precision;
        if fpr95.is_nan() && recall >= 0.95 {
            fpr95 = fp as f64 / n_neg as f64;
        }
    }
    Ok(EvalResult {
        auroc: auroc_area / (n_pos as f64 * n_neg as f64),
        ap,
        fpr95,
        n_pos,
        n_neg,
    })
}

/// First-principles oracle: enumerate every distinct score as a threshold
/// and recount TP/FP from scratch each time; AUROC is additionally computed
/// by the pairwise-comparison definition. Intended for <= 10^4 pixels.
pub fn evaluate_bruteforce(scores: &ScoreMap, labels: &LabelMap) -> Result<EvalResult> {
    let pairs = collect(scores, labels)?;
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;

    // pairwise AUROC with half credit for ties
    let mut wins = 0.0;
    for &(sp, lp) in &pairs {
        if !lp {
            continue;
        }
        for &(sn, ln) in &pairs {
            if ln {
                continue;
            }
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    let auroc = wins / (n_pos as f64 * n_neg as f64);

    let mut thresholds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut fpr95 = f64::MAX;
    let mut found95 = false;
    for &t in &thresholds {
        let tp = pairs.iter().filter(|&&(s, l)| l && s >= t).count();
        let fp = pairs.iter().filter(|&&(s, l)| !l && s >= t).count();
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        let fpr = fp as f64 / n_neg as f64;
        if recall >= 0.95 && fpr < fpr95 {
            fpr95 = fpr;
            found95 = true;
        }
    }
    assert!(found95, "threshold sweep must reach TPR >= 0.95");
    Ok(EvalResult {
        auroc,
        ap,
        fpr95,
        n_pos,
        n_neg,
    })
}
