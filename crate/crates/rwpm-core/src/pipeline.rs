//! End-to-end refinement pipeline: split the embedding map, run per-sub-map
//! graph construction and diffusion, score, calibrate across boundaries, and
//! reassemble. Also the run manifest that records every output-affecting
//! parameter and per-stage wall clock.

use std::fmt::Write as _;
use std::time::Instant;

use crate::diffusion::{diffuse, DiffusionConfig, Solver};
use crate::error::{Error, Result};
use crate::graph::GraphMode;
use crate::metrics::{evaluate, EvalResult};
use crate::partition::{
    assemble_map, assemble_scores, calibrate_scores, split_map, CalibrationMode,
    CalibrationReport,
};
use crate::scoring::{score_map, LinearClassifier, ScoringFunction};
use crate::tensor_io::{from_pixel_matrix, l2_normalize_rows, to_pixel_matrix, EmbeddingMap, LabelMap, ScoreMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationChoice {
    Off,
    Multiplicative,
    Additive,
}

impl CalibrationChoice {
    /// Calibration pays off once the grid is finer than 2x2.
    pub fn default_for(partition: usize) -> Self {
        if partition > 2 {
            CalibrationChoice::Multiplicative
        } else {
            CalibrationChoice::Off
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CalibrationChoice::Off => "off",
            CalibrationChoice::Multiplicative => "multiplicative",
            CalibrationChoice::Additive => "additive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub iterations: usize,
    pub partition: usize,
    pub graph: GraphMode,
    pub solver_closed_form: bool,
    pub scoring: ScoringFunction,
    pub calibration: CalibrationChoice,
    /// Re-normalize refined embeddings to unit length before scoring.
    /// Off by default: the refined map is fed to the classifier as-is.
    pub renormalize: bool,
    pub tolerance: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            alpha: crate::diffusion::DEFAULT_ALPHA,
            iterations: crate::diffusion::DEFAULT_ITERATIONS,
            partition: 2,
            graph: GraphMode::Softmax {
                tau: crate::graph::DEFAULT_TAU,
            },
            solver_closed_form: false,
            scoring: ScoringFunction::Energy,
            calibration: CalibrationChoice::Off,
            renormalize: false,
            tolerance: None,
        }
    }
}

impl PipelineConfig {
    fn diffusion_config(&self) -> DiffusionConfig {
        DiffusionConfig {
            alpha: self.alpha,
            solver: if self.solver_closed_form {
                Solver::ClosedForm
            } else {
                Solver::Iterative {
                    iterations: self.iterations,
                }
            },
            tolerance: self.tolerance,
        }
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.partition > 2 && self.calibration == CalibrationChoice::Off {
            out.push(format!(
                "partition n={} with calibration off: sub-map score baselines may \
                 disagree; calibration is recommended for n > 2",
                self.partition
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub split_ms: f64,
    pub diffuse_ms: f64,
    pub score_ms: f64,
    pub calibrate_ms: f64,
    pub assemble_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub timings: StageTimings,
    /// Largest per-sub-map transition matrix, in elements.
    pub peak_matrix_elems: usize,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn to_key_values(&self) -> String {
        let c = &self.config;
        let (graph_mode, tau, knn) = match c.graph {
            GraphMode::Softmax { tau } => ("softmax", tau, 0),
            GraphMode::TopK { k, tau } => ("topk", tau, k),
        };
        let mut s = String::new();
        let _ = writeln!(s, "alpha={}", c.alpha);
        let _ = writeln!(s, "tau={tau}");
        let _ = writeln!(s, "iters={}", c.iterations);
        let _ = writeln!(s, "partition={}", c.partition);
        let _ = writeln!(s, "graph={graph_mode}");
        if knn > 0 {
            let _ = writeln!(s, "knn={knn}");
        }
        let _ = writeln!(
            s,
            "solver={}",
            if c.solver_closed_form { "closed_form" } else { "iterative" }
        );
        let _ = writeln!(s, "score_fn={}", c.scoring.name());
        let _ = writeln!(s, "calibrate={}", c.calibration.name());
        let _ = writeln!(s, "renormalize={}", c.renormalize);
        if let Some(tol) = c.tolerance {
            let _ = writeln!(s, "tolerance={tol}");
        }
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "dim={}", self.dim);
        let _ = writeln!(s, "split_ms={:.3}", self.timings.split_ms);
        let _ = writeln!(s, "diffuse_ms={:.3}", self.timings.diffuse_ms);
        let _ = writeln!(s, "score_ms={:.3}", self.timings.score_ms);
        let _ = writeln!(s, "calibrate_ms={:.3}", self.timings.calibrate_ms);
        let _ = writeln!(s, "assemble_ms={:.3}", self.timings.assemble_ms);
        let _ = writeln!(s, "peak_matrix_elems={}", self.peak_matrix_elems);
        for w in &self.warnings {
            let _ = writeln!(s, "warning={w}");
        }
        s
    }
}

fn refine_part(part: &EmbeddingMap, cfg: &PipelineConfig) -> Result<EmbeddingMap> {
    let m0 = to_pixel_matrix(part);
    let s = crate::graph::build_transition(&m0, false, cfg.graph)?;
    let result = diffuse(&s, &m0, &cfg.diffusion_config())?;
    let refined = if cfg.renormalize {
        l2_normalize_rows(&result.refined)?
    } else {
        result.refined
    };
    from_pixel_matrix(&refined, part.h(), part.w())
}

/// Diffusion only: split, refine every sub-map, reassemble. The refined map
/// is rounded to f32 storage exactly as it would be when written to disk.
pub fn refine_embeddings(
    m: &EmbeddingMap,
    cfg: &PipelineConfig,
) -> Result<(EmbeddingMap, StageTimings, usize)> {
    let mut timings = StageTimings::default();
    let t0 = Instant::now();
    let parts = split_map(m, cfg.partition)?;
    timings.split_ms = t0.elapsed().as_secs_f64() * 1e3;

    let peak = parts
        .iter()
        .map(|p| (p.h() * p.w()) * (p.h() * p.w()))
        .max()
        .unwrap_or(0);

    let t1 = Instant::now();
    let refined: Result<Vec<EmbeddingMap>> =
        parts.iter().map(|p| refine_part(p, cfg)).collect();
    let refined = refined?;
    timings.diffuse_ms = t1.elapsed().as_secs_f64() * 1e3;

    let t2 = Instant::now();
    let assembled = assemble_map(&refined, cfg.partition)?;
    timings.assemble_ms = t2.elapsed().as_secs_f64() * 1e3;
    Ok((assembled, timings, peak))
}

#[derive(Debug, Clone)]
pub struct ProcessOutput {
    pub scores: ScoreMap,
    pub eval: Option<EvalResult>,
    pub calibration: Option<CalibrationReport>,
    pub manifest: RunManifest,
}

/// The full inference pipeline: refine per sub-map, score per sub-map,
/// calibrate boundaries, assemble, and optionally evaluate against labels.
pub fn run_process(
    embeddings: &EmbeddingMap,
    classifier: &LinearClassifier,
    labels: Option<&LabelMap>,
    cfg: &PipelineConfig,
) -> Result<ProcessOutput> {
    let mut timings = StageTimings::default();
    let t0 = Instant::now();
    let parts = split_map(embeddings, cfg.partition)?;
    timings.split_ms = t0.elapsed().as_secs_f64() * 1e3;

    let peak = parts
        .iter()
        .map(|p| (p.h() * p.w()) * (p.h() * p.w()))
        .max()
        .unwrap_or(0);

    let t1 = Instant::now();
    let refined: Result<Vec<EmbeddingMap>> =
        parts.iter().map(|p| refine_part(p, cfg)).collect();
    let refined = refined?;
    timings.diffuse_ms = t1.elapsed().as_secs_f64() * 1e3;

    let t2 = Instant::now();
    let score_parts: Result<Vec<ScoreMap>> = refined
        .iter()
        .map(|p| score_map(p, classifier, cfg.scoring))
        .collect();
    let mut score_parts = score_parts?;
    timings.score_ms = t2.elapsed().as_secs_f64() * 1e3;

    let t3 = Instant::now();
    let mut calibration = None;
    if cfg.partition >= 2 {
        let mode = match cfg.calibration {
            CalibrationChoice::Off => None,
            CalibrationChoice::Multiplicative => Some(CalibrationMode::Multiplicative),
            CalibrationChoice::Additive => Some(CalibrationMode::Additive),
        };
        if let Some(mode) = mode {
            let (calibrated, report) = calibrate_scores(&score_parts, cfg.partition, mode)?;
            score_parts = calibrated;
            calibration = Some(report);
        }
    } else if cfg.calibration != CalibrationChoice::Off {
        return Err(Error::Calibration(
            "calibration needs a partition factor of at least 2".into(),
        ));
    }
    timings.calibrate_ms = t3.elapsed().as_secs_f64() * 1e3;

    let t4 = Instant::now();
    let scores = assemble_scores(&score_parts, cfg.partition)?;
    timings.assemble_ms = t4.elapsed().as_secs_f64() * 1e3;

    let eval = match labels {
        Some(l) => Some(evaluate(&scores, l)?),
        None => None,
    };

    Ok(ProcessOutput {
        scores,
        eval,
        calibration,
        manifest: RunManifest {
            config: *cfg,
            height: embeddings.h(),
            width: embeddings.w(),
            dim: embeddings.d(),
            timings,
            peak_matrix_elems: peak,
            warnings: cfg.warnings(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SynthConfig};

    fn small_scene() -> crate::synth::SynthScene {
        generate_scene(&SynthConfig {
            height: 16,
            width: 16,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn process_produces_expected_shape_and_eval() {
        let scene = small_scene();
        let cfg = PipelineConfig::default();
        let out = run_process(
            &scene.embeddings,
            &scene.classifier,
            Some(&scene.labels),
            &cfg,
        )
        .unwrap();
        assert_eq!((out.scores.h(), out.scores.w()), (16, 16));
        assert!(out.eval.is_some());
        assert!(out.manifest.peak_matrix_elems > 0);
    }

    #[test]
    fn alpha_zero_process_matches_raw_scoring() {
        let scene = small_scene();
        let cfg = PipelineConfig {
            alpha: 0.0,
            ..PipelineConfig::default()
        };
        let out = run_process(&scene.embeddings, &scene.classifier, None, &cfg).unwrap();
        let raw = score_map(&scene.embeddings, &scene.classifier, cfg.scoring).unwrap();
        for (a, b) in out.scores.scores().iter().zip(raw.scores()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn process_n1_matches_refine_then_score_bitwise() {
        let scene = small_scene();
        let cfg = PipelineConfig {
            partition: 1,
            iterations: 5,
            ..PipelineConfig::default()
        };
        let out = run_process(&scene.embeddings, &scene.classifier, None, &cfg).unwrap();
        let (refined, _, _) = refine_embeddings(&scene.embeddings, &cfg).unwrap();
        let scored = score_map(&refined, &scene.classifier, cfg.scoring).unwrap();
        let a = out.scores.to_tensor();
        let b = scored.to_tensor();
        assert_eq!(a, b);
    }

    #[test]
    fn indivisible_partition_is_partition_error() {
        let scene = small_scene();
        let cfg = PipelineConfig {
            partition: 3,
            ..PipelineConfig::default()
        };
        match run_process(&scene.embeddings, &scene.classifier, None, &cfg) {
            Err(Error::Partition(msg)) => {
                assert!(msg.contains("16") && msg.contains('3'));
            }
            other => panic!("expected partition error, got {other:?}"),
        }
    }

    #[test]
    fn warning_when_large_partition_without_calibration() {
        let cfg = PipelineConfig {
            partition: 4,
            calibration: CalibrationChoice::Off,
            ..PipelineConfig::default()
        };
        assert_eq!(cfg.warnings().len(), 1);
        let ok = PipelineConfig {
            partition: 4,
            calibration: CalibrationChoice::Multiplicative,
            ..PipelineConfig::default()
        };
        assert!(ok.warnings().is_empty());
    }

    #[test]
    fn default_calibration_tracks_partition() {
        assert_eq!(CalibrationChoice::default_for(1), CalibrationChoice::Off);
        assert_eq!(CalibrationChoice::default_for(2), CalibrationChoice::Off);
        assert_eq!(
            CalibrationChoice::default_for(4),
            CalibrationChoice::Multiplicative
        );
    }

    #[test]
    fn manifest_lists_every_parameter() {
        let scene = small_scene();
        let cfg = PipelineConfig::default();
        let out = run_process(&scene.embeddings, &scene.classifier, None, &cfg).unwrap();
        let text = out.manifest.to_key_values();
        for key in [
            "alpha=", "tau=", "iters=", "partition=", "graph=", "solver=", "score_fn=",
            "calibrate=", "renormalize=", "height=", "width=", "dim=", "diffuse_ms=",
            "peak_matrix_elems=",
        ] {
            assert!(text.contains(key), "manifest missing {key}: {text}");
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let scene = small_scene();
        let cfg = PipelineConfig::default();
        let a = run_process(&scene.embeddings, &scene.classifier, None, &cfg).unwrap();
        let b = run_process(&scene.embeddings, &scene.classifier, None, &cfg).unwrap();
        assert_eq!(a.scores, b.scores);
    }
}
