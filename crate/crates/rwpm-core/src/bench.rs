//! Wall-clock scaling harness: time iterative vs closed-form diffusion over a
//! sweep of sub-map pixel counts and report CSV rows. Graph construction is
//! excluded from the timed region so the slopes isolate the two solvers.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{diffuse_closed_form, diffuse_iterative};
use crate::error::Result;
use crate::graph::{build_transition, GraphMode};
use crate::tensor_io::l2_normalize_rows;

pub const CSV_HEADER: &str = "mode,N,d,T,n,wall_ms,peak_matrix_elems";

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub mode: &'static str,
    pub n_pixels: usize,
    pub dim: usize,
    pub iterations: usize,
    pub partition: usize,
    pub wall_ms: f64,
    pub peak_matrix_elems: usize,
}

impl BenchRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{}",
            self.mode,
            self.n_pixels,
            self.dim,
            self.iterations,
            self.partition,
            self.wall_ms,
            self.peak_matrix_elems
        )
    }
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Sub-map pixel counts to sweep.
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub tau: f64,
    pub seed: u64,
    /// Repeat each measurement until this much time has accumulated, then
    /// report the mean. Keeps the small-N rows out of clock-resolution noise.
    pub min_measure_ms: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![256, 1024, 4096],
            dim: 16,
            iterations: 20,
            alpha: 0.99,
            tau: 0.01,
            seed: 1,
            min_measure_ms: 80.0,
        }
    }
}

fn time_mean_ms<F: FnMut() -> Result<()>>(mut f: F, min_ms: f64) -> Result<f64> {
    // warm-up run, untimed
    f()?;
    let mut reps = 0u32;
    let start = Instant::now();
    loop {
        f()?;
        reps += 1;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if elapsed >= min_ms || reps >= 50 {
            return Ok(elapsed / reps as f64);
        }
    }
}

/// One timed sweep; two rows (iterative, closed_form) per size.
pub fn run_sweep(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ n as u64);
        let x = Array2::from_shape_fn((n, cfg.dim), |_| rng.gen_range(-1.0..1.0f64));
        let m0 = l2_normalize_rows(&x)?;
        let s = build_transition(&m0, true, GraphMode::Softmax { tau: cfg.tau })?;

        let wall_iter = time_mean_ms(
            || diffuse_iterative(&s, &m0, cfg.alpha, cfg.iterations, None).map(|_| ()),
            cfg.min_measure_ms,
        )?;
        rows.push(BenchRow {
            mode: "iterative",
            n_pixels: n,
            dim: cfg.dim,
            iterations: cfg.iterations,
            partition: 1,
            wall_ms: wall_iter,
            peak_matrix_elems: n * n,
        });

        let wall_closed = time_mean_ms(
            || diffuse_closed_form(&s, &m0, cfg.alpha).map(|_| ()),
            cfg.min_measure_ms,
        )?;
        rows.push(BenchRow {
            mode: "closed_form",
            n_pixels: n,
            dim: cfg.dim,
            iterations: 0,
            partition: 1,
            wall_ms: wall_closed,
            peak_matrix_elems: n * n,
        });
    }
    Ok(rows)
}

/// Least-squares slope of log(wall) vs log(N) for one mode.
pub fn log_log_slope(rows: &[BenchRow], mode: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mode == mode)
        .map(|r| ((r.n_pixels as f64).ln(), r.wall_ms.max(1e-6).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// True when iterative beats closed form at the largest measured N.
pub fn iterative_faster_at_largest(rows: &[BenchRow]) -> Option<bool> {
    let max_n = rows.iter().map(|r| r.n_pixels).max()?;
    let it = rows
        .iter()
        .find(|r| r.mode == "iterative" && r.n_pixels == max_n)?;
    let cf = rows
        .iter()
        .find(|r| r.mode == "closed_form" && r.n_pixels == max_n)?;
    Some(it.wall_ms < cf.wall_ms)
}
