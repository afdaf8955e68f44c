//! Spatial machinery for the partial random walk: split a map into n x n
//! sub-maps, reassemble by position, and calibrate anomaly-score baselines
//! across sub-map boundaries.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor_io::{EmbeddingMap, ScoreMap};

/// n x n grid geometry over an H x W map. Extents must divide evenly;
/// padding is rejected because it would perturb the boundary edge means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionGrid {
    pub n: usize,
    pub sub_h: usize,
    pub sub_w: usize,
}

impl PartitionGrid {
    pub fn new(h: usize, w: usize, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::Partition(format!("partition factor must be >= 1, got {n}")));
        }
        if h % n != 0 || w % n != 0 {
            return Err(Error::Partition(format!(
                "extents H={h} W={w} not divisible by n={n}"
            )));
        }
        Ok(PartitionGrid {
            n,
            sub_h: h / n,
            sub_w: w / n,
        })
    }
}

/// Row-major sub-maps: slot r*n + c holds pixel rows [r*sub_h, (r+1)*sub_h)
/// and cols [c*sub_w, (c+1)*sub_w).
pub fn split_map(m: &EmbeddingMap, n: usize) -> Result<Vec<EmbeddingMap>> {
    let grid = PartitionGrid::new(m.h(), m.w(), n)?;
    let (d, w) = (m.d(), m.w());
    let mut parts = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let mut values = Vec::with_capacity(d * grid.sub_h * grid.sub_w);
            for ch in 0..d {
                for row in 0..grid.sub_h {
                    let global_row = r * grid.sub_h + row;
                    let base = (ch * m.h() + global_row) * w + c * grid.sub_w;
                    values.extend_from_slice(&m.values()[base..base + grid.sub_w]);
                }
            }
            parts.push(EmbeddingMap::new(d, grid.sub_h, grid.sub_w, values)?);
        }
    }
    Ok(parts)
}

fn check_parts_shape<T>(parts: &[T], n: usize) -> Result<()> {
    if parts.len() != n * n {
        return Err(Error::Partition(format!(
            "expected {} sub-maps for n={n}, got {}",
            n * n,
            parts.len()
        )));
    }
    Ok(())
}

/// Inverse of [`split_map`].
pub fn assemble_map(parts: &[EmbeddingMap], n: usize) -> Result<EmbeddingMap> {
    check_parts_shape(parts, n)?;
    let (d, sub_h, sub_w) = (parts[0].d(), parts[0].h(), parts[0].w());
    if parts.iter().any(|p| p.d() != d || p.h() != sub_h || p.w() != sub_w) {
        return Err(Error::Partition("sub-map dimensions are not uniform".into()));
    }
    let (h, w) = (sub_h * n, sub_w * n);
    let mut values = vec![0f32; d * h * w];
    for r in 0..n {
        for c in 0..n {
            let part = &parts[r * n + c];
            for ch in 0..d {
                for row in 0..sub_h {
                    let global_row = r * sub_h + row;
                    let dst = (ch * h + global_row) * w + c * sub_w;
                    let src = (ch * sub_h + row) * sub_w;
                    values[dst..dst + sub_w]
                        .copy_from_slice(&part.values()[src..src + sub_w]);
                }
            }
        }
    }
    EmbeddingMap::new(d, h, w, values)
}

/// Split a score map on the same grid as [`split_map`].
pub fn split_scores(m: &ScoreMap, n: usize) -> Result<Vec<ScoreMap>> {
    let grid = PartitionGrid::new(m.h(), m.w(), n)?;
    let mut parts = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let mut scores = Vec::with_capacity(grid.sub_h * grid.sub_w);
            for row in 0..grid.sub_h {
                let base = (r * grid.sub_h + row) * m.w() + c * grid.sub_w;
                scores.extend_from_slice(&m.scores()[base..base + grid.sub_w]);
            }
            parts.push(ScoreMap::new(grid.sub_h, grid.sub_w, scores)?);
        }
    }
    Ok(parts)
}

pub fn assemble_scores(parts: &[ScoreMap], n: usize) -> Result<ScoreMap> {
    check_parts_shape(parts, n)?;
    let (sub_h, sub_w) = (parts[0].h(), parts[0].w());
    if parts.iter().any(|p| p.h() != sub_h || p.w() != sub_w) {
        return Err(Error::Partition("sub-map dimensions are not uniform".into()));
    }
    let (h, w) = (sub_h * n, sub_w * n);
    let mut scores = vec![0f64; h * w];
    for r in 0..n {
        for c in 0..n {
            let part = &parts[r * n + c];
            for row in 0..sub_h {
                let dst = (r * sub_h + row) * w + c * sub_w;
                let src = row * sub_w;
                scores[dst..dst + sub_w].copy_from_slice(&part.scores()[src..src + sub_w]);
            }
        }
    }
    ScoreMap::new(h, w, scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSide {
    /// a's rightmost column faces b's leftmost column.
    RightLeft,
    /// a's bottom row faces b's top row.
    BottomTop,
}

/// Mean scores on the facing edges of two adjacent sub-maps: I on a's side,
/// J on b's side.
pub fn edge_mean(a: &ScoreMap, b: &ScoreMap, side: EdgeSide) -> Result<(f64, f64)> {
    match side {
        EdgeSide::RightLeft => {
            if a.h() != b.h() {
                return Err(Error::Partition(format!(
                    "facing edges differ in length: {} vs {}",
                    a.h(),
                    b.h()
                )));
            }
            let i = (0..a.h()).map(|r| a.at(r, a.w() - 1)).sum::<f64>() / a.h() as f64;
            let j = (0..b.h()).map(|r| b.at(r, 0)).sum::<f64>() / b.h() as f64;
            Ok((i, j))
        }
        EdgeSide::BottomTop => {
            if a.w() != b.w() {
                return Err(Error::Partition(format!(
                    "facing edges differ in length: {} vs {}",
                    a.w(),
                    b.w()
                )));
            }
            let i = (0..a.w()).map(|c| a.at(a.h() - 1, c)).sum::<f64>() / a.w() as f64;
            let j = (0..b.w()).map(|c| b.at(0, c)).sum::<f64>() / b.w() as f64;
            Ok((i, j))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationMode {
    /// Scale the target sub-map by I / J; needs sign-pure, non-vanishing
    /// edge means.
    Multiplicative,
    /// Shift the target sub-map by I - J.
    Additive,
}

#[derive(Debug, Clone)]
pub struct CalibrationPair {
    /// (row, col) of the already-calibrated reference sub-map.
    pub reference: (usize, usize),
    /// (row, col) of the sub-map being calibrated.
    pub target: (usize, usize),
    pub edge_i: f64,
    pub edge_j: f64,
    /// I/J in multiplicative mode, I-J in additive mode.
    pub applied: f64,
}

/// Per-pair record of the calibration sweep, in traversal order.
#[derive(Debug, Clone, Default)]
pub struct CalibrationReport {
    pub mode: Option<CalibrationMode>,
    pub pairs: Vec<CalibrationPair>,
}

impl fmt::Display for CalibrationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.pairs {
            writeln!(
                f,
                "({},{})->({},{}) I={:.9} J={:.9} applied={:.9}",
                p.reference.0, p.reference.1, p.target.0, p.target.1, p.edge_i, p.edge_j, p.applied
            )?;
        }
        Ok(())
    }
}

/// Equalize score baselines across sub-map boundaries. Sub-map (0,0) is the
/// reference; the sweep is row-major, calibrating each sub-map against its
/// left neighbor when present, otherwise its top neighbor. Both neighbors are
/// already calibrated when consulted.
pub fn calibrate_scores(
    parts: &[ScoreMap],
    n: usize,
    mode: CalibrationMode,
) -> Result<(Vec<ScoreMap>, CalibrationReport)> {
    if n < 2 {
        return Err(Error::Partition(format!("calibration needs n >= 2, got {n}")));
    }
    check_parts_shape(parts, n)?;
    let mut out: Vec<ScoreMap> = parts.to_vec();
    let mut report = CalibrationReport {
        mode: Some(mode),
        pairs: Vec::new(),
    };
    for r in 0..n {
        for c in 0..n {
            if r == 0 && c == 0 {
                continue;
            }
            let (ref_pos, side) = if c > 0 {
                ((r, c - 1), EdgeSide::RightLeft)
            } else {
                ((r - 1, c), EdgeSide::BottomTop)
            };
            let reference = &out[ref_pos.0 * n + ref_pos.1];
            let target = &out[r * n + c];
            let (edge_i, edge_j) = edge_mean(reference, target, side)?;
            let applied = match mode {
                CalibrationMode::Multiplicative => {
                    if edge_i.abs() < 1e-12 || edge_j.abs() < 1e-12 {
                        return Err(Error::Calibration(format!(
                            "edge means near zero (I={edge_i:.3e}, J={edge_j:.3e}) between \
                             ({},{}) and ({r},{c}); use additive mode",
                            ref_pos.0, ref_pos.1
                        )));
                    }
                    if edge_i.signum() != edge_j.signum() {
                        return Err(Error::Calibration(format!(
                            "edge means differ in sign (I={edge_i:.3e}, J={edge_j:.3e}) between \
                             ({},{}) and ({r},{c}); use additive mode",
                            ref_pos.0, ref_pos.1
                        )));
                    }
                    edge_i / edge_j
                }
                CalibrationMode::Additive => edge_i - edge_j,
            };
            let scores: Vec<f64> = match mode {
                CalibrationMode::Multiplicative => {
                    target.scores().iter().map(|&v| v * applied).collect()
                }
                CalibrationMode::Additive => {
                    target.scores().iter().map(|&v| v + applied).collect()
                }
            };
            out[r * n + c] = ScoreMap::new(target.h(), target.w(), scores)?;
            report.pairs.push(CalibrationPair {
                reference: ref_pos,
                target: (r, c),
                edge_i,
                edge_j,
                applied,
            });
        }
    }
    Ok((out, report))
}
