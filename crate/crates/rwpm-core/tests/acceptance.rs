//! Acceptance gate: one test per criterion, each printing a single
//! `criterion N: PASS/FAIL` line (run with `--nocapture` to see them).

use ndarray::Array2;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use rwpm_core::diffusion::{
    diffuse_closed_form, diffuse_iterative, diffusion_objective,
};
use rwpm_core::graph::{build_affinity, build_transition, softmax_transition, topk_transition, GraphMode};
use rwpm_core::linalg::lu_factor;
use rwpm_core::metrics::{evaluate, evaluate_bruteforce};
use rwpm_core::partition::{
    assemble_map, calibrate_scores, edge_mean, split_map, CalibrationMode, EdgeSide,
};
use rwpm_core::pipeline::{refine_embeddings, run_process, PipelineConfig};
use rwpm_core::scoring::{score_map, Activation, ScoringFunction};
use rwpm_core::synth::{generate_scene, mean_pairwise_cosine, SynthConfig};
use rwpm_core::tensor_io::{
    l2_normalize_rows, to_pixel_matrix, EmbeddingMap, LabelMap, PixelMatrix, ScoreMap,
    LABEL_OUTLIER,
};

/// The criteria carry runtime budgets and criterion 9 measures wall clock,
/// so the suite must not compete with itself for cores.
static SERIAL: std::sync::Mutex<()> = std::sync::Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: usize, what: &str, outcome: Result<(), String>) {
    match outcome {
        Ok(()) => println!("criterion {criterion}: PASS - {what}"),
        Err(reason) => {
            println!("criterion {criterion}: FAIL - {what}: {reason}");
            panic!("criterion {criterion} failed: {reason}");
        }
    }
}

fn random_rows(rng: &mut StdRng, n: usize, d: usize) -> PixelMatrix {
    let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0f64));
    l2_normalize_rows(&x).expect("random rows nondegenerate")
}

#[test]
fn criterion_01_row_stochasticity() {
    let _guard = serial();
    let run = || -> Result<(), String> {
        let mut rng = StdRng::seed_from_u64(101);
        for trial in 0..100 {
            let n = rng.gen_range(8..=512);
            let d = rng.gen_range(4..=32);
            let tau = [1.0, 0.1, 0.01][trial % 3];
            let x = random_rows(&mut rng, n, d);
            let mode = if trial % 4 == 3 {
                GraphMode::TopK { k: rng.gen_range(1..n), tau }
            } else {
                GraphMode::Softmax { tau }
            };
            let s = build_transition(&x, true, mode).map_err(|e| e.to_string())?;
            for (i, row) in s.entries().rows().into_iter().enumerate() {
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(format!("trial {trial} row {i} sums to {sum}"));
                }
                if row[i] != 0.0 {
                    return Err(format!("trial {trial} diagonal ({i},{i}) = {}", row[i]));
                }
            }
        }
        Ok(())
    };
    report(1, "100 random transition graphs are row-stochastic with zero diagonal", run());
}

#[test]
fn criterion_02_closed_form_matches_iterative() {
    let _guard = serial();
    let run = || -> Result<(), String> {
        let mut rng = StdRng::seed_from_u64(102);
        let alpha = 0.5;
        for trial in 0..10 {
            let n = rng.gen_range(16..=256);
            let d = rng.gen_range(2..=16);
            let m0 = random_rows(&mut rng, n, d);
            let s = build_transition(&m0, true, GraphMode::Softmax { tau: 0.1 })
                .map_err(|e| e.to_string())?;
            let it = diffuse_iterative(&s, &m0, alpha, 60, None).map_err(|e| e.to_string())?;
            let cf = diffuse_closed_form(&s, &m0, alpha).map_err(|e| e.to_string())?;
            let gap = (&it.refined - &cf.refined).mapv(|v| v * v).sum().sqrt();
            let norm = cf.refined.mapv(|v| v * v).sum().sqrt();
            if gap / norm > 1e-9 {
                return Err(format!("trial {trial}: relative Frobenius gap {}", gap / norm));
            }
            // fixed point: m = alpha * S m + (1 - alpha) * m0
            let residual = (alpha * s.entries().dot(&cf.refined) + (1.0 - alpha) * &m0
                - &cf.refined)
                .mapv(|v| v * v)
                .sum()
                .sqrt();
            if residual > 1e-9 {
                return Err(format!("trial {trial}: fixed-point residual {residual}"));
            }
        }
        Ok(())
    };
    report(2, "closed form agrees with 60 iterations at alpha=0.5 and satisfies the fixed point", run());
}

#[test]
fn criterion_03_geometric_contraction() {
    let _guard = serial();
    let run = || -> Result<(), String> {
        let mut rng = StdRng::seed_from_u64(103);
        for trial in 0..50 {
            let alpha = [0.5, 0.9, 0.99][trial % 3];
            let n = rng.gen_range(8..=64);
            let d = rng.gen_range(2..=8);
            let m0 = random_rows(&mut rng, n, d);
            let s = build_transition(&m0, true, GraphMode::Softmax { tau: 0.1 })
                .map_err(|e| e.to_string())?;
            let result =
                diffuse_iterative(&s, &m0, alpha, 30, None).map_err(|e| e.to_string())?;
            let mut prev = f64::INFINITY;
            for (t, r) in result.residual_history.iter().enumerate() {
                let scaled = r / alpha.powi(t as i32);
                if scaled > prev + 1e-9 {
                    return Err(format!(
                        "trial {trial} alpha={alpha}: scaled residual rose {prev} -> {scaled} at t={t}"
                    ));
                }
                prev = scaled;
            }
        }
        Ok(())
    };
    report(3, "residual history contracts at least geometrically with factor alpha", run());
}

#[test]
fn criterion_04_boundedness() {
    let _guard = serial();
    let max_row_norm = |m: &PixelMatrix| -> f64 {
        m.rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    };
    let run = || -> Result<(), String> {
        let mut rng = StdRng::seed_from_u64(104);
        for trial in 0..50 {
            let alpha = [0.5, 0.9, 0.99][trial % 3];
            let n = rng.gen_range(8..=48);
            let d = rng.gen_range(2..=8);
            let m0 = random_rows(&mut rng, n, d);
            let s = build_transition(&m0, true, GraphMode::Softmax { tau: 0.1 })
                .map_err(|e| e.to_string())?;
            let bound = max_row_norm(&m0);
            let mut m = m0.clone();
            for t in 1..=100 {
                m = alpha * s.entries().dot(&m) + (1.0 - alpha) * &m0;
                let now = max_row_norm(&m);
                if now > bound + 1e-9 {
                    return Err(format!(
                        "trial {trial} alpha={alpha}: row norm {now} exceeds initial {bound} at t={t}"
                    ));
                }
            }
        }
        Ok(())
    };
    report(4, "iterate row norms never exceed the initial maximum", run());
}

#[test]
fn criterion_05_cohesion_on_default_scene() {
    let _guard = serial();
    let run = || -> Result<(), String> {
        let scene = generate_scene(&SynthConfig::default()).map_err(|e| e.to_string())?;
        let cfg = PipelineConfig::default();
        let (refined, _, _) = refine_embeddings(&scene.embeddings, &cfg).map_err(|e| e.to_string())?;
        let before = to_pixel_matrix(&scene.embeddings);
        let after = to_pixel_matrix(&refined);
        let k = scene.classifier.n_classes();
        for class in 0..k {
            let indices: Vec<usize> = scene
                .class_of_pixel
                .iter()
                .enumerate()
                .filter(|&(i, &c)| c == class && scene.labels.labels()[i] != LABEL_OUTLIER)
                .map(|(i, _)| i)
                .collect();
            let raw = mean_pairwise_cosine(&before, &indices);
            let diffused = mean_pairwise_cosine(&after, &indices);
            if !(diffused > raw) {
                return Err(format!(
                    "class {class}: intra-class cosine {raw} -> {diffused} did not increase"
                ));
            }
        }
        Ok(())
    };
    report(5, "diffusion strictly increases intra-class cosine for every inlier class", run());
}

/// Frozen seed-7 improvement margins (diffused - raw AP, raw - diffused
/// FPR95) for the default scenario, recorded from the first successful run.
const SEED7_BASELINES: [(&str, f64, f64); 3] = [
    ("energy", 0.022867170058, 0.075081610446),
    ("rba", 0.009882620261, 0.125952121872),
    ("one-minus-max-sigmoid", 0.678719174848, 0.113982589771),
];

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[test]
fn criterion_06_end_to_end_benefit() {
    let _guard = serial();
    let run = || -> Result<(), String> {
        for f in [
            ScoringFunction::Energy,
            ScoringFunction::Rba,
            ScoringFunction::OneMinusMax(Activation::Sigmoid),
        ] {
            let mut raw_ap = Vec::new();
            let mut raw_fpr = Vec::new();
            let mut diff_ap = Vec::new();
            let mut diff_fpr = Vec::new();
            let mut seed7 = None;
            for seed in 0..10u64 {
                let scene = generate_scene(&SynthConfig { seed, ..SynthConfig::default() })
                    .map_err(|e| e.to_string())?;
                let raw = score_map(&scene.embeddings, &scene.classifier, f)
                    .map_err(|e| e.to_string())?;
                let raw_eval = evaluate(&raw, &scene.labels).map_err(|e| e.to_string())?;
                let cfg = PipelineConfig { scoring: f, ..PipelineConfig::default() };
                let out = run_process(&scene.embeddings, &scene.classifier, Some(&scene.labels), &cfg)
                    .map_err(|e| e.to_string())?;
                let de = out.eval.expect("labels were supplied");
                raw_ap.push(raw_eval.ap);
                raw_fpr.push(raw_eval.fpr95);
                diff_ap.push(de.ap);
                diff_fpr.push(de.fpr95);
                if seed == 7 {
                    seed7 = Some((de.ap - raw_eval.ap, raw_eval.fpr95 - de.fpr95));
                }
            }
            let (m_raw_ap, m_diff_ap) = (median(&mut raw_ap), median(&mut diff_ap));
            let (m_raw_fpr, m_diff_fpr) = (median(&mut raw_fpr), median(&mut diff_fpr));
            if !(m_diff_ap > m_raw_ap) {
                return Err(format!(
                    "{}: median AP {m_raw_ap} -> {m_diff_ap} did not improve",
                    f.name()
                ));
            }
            if !(m_diff_fpr < m_raw_fpr) {
                return Err(format!(
                    "{}: median FPR95 {m_raw_fpr} -> {m_diff_fpr} did not improve",
                    f.name()
                ));
            }
            let (ap_margin, fpr_margin) = seed7.expect("seed 7 in sweep");
            let (_, base_ap, base_fpr) = SEED7_BASELINES
                .iter()
                .find(|(name, _, _)| *name == f.name())
                .expect("baseline recorded");
            if (ap_margin - base_ap).abs() > 5e-3 || (fpr_margin - base_fpr).abs() > 5e-3 {
                return Err(format!(
                    "{}: seed-7 margins drifted from baseline: ap {ap_margin} vs {base_ap}, \
                     fpr95 {fpr_margin} vs {base_fpr}",
                    f.name()
                ));
            }
        }
        Ok(())
    };
    report(
        6,
        "median AP/FPR95 improve under diffusion for all three scoring functions (10 seeds), seed-7 margins on baseline",
        run(),
    );
}

#[test]
fn criterion_07_metrics_oracle() {
    let _guard = serial();
    let run = || -> Result<(), String> {
        let mut rng = StdRng::seed_from_u64(107);
        for trial in 0..200 {
            let n = rng.gen_range(4..=1000);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(-20..20) as f64) * 0.125)
                .collect();
            let mut labels: Vec<u8> = (0..n)
                .map(|_| [0u8, 1, 0, 255][rng.gen_range(0..4)])
                .collect();
            labels[0] = 1;
            labels[1 % n] = 0;
            let s = ScoreMap::new(1, n, scores).map_err(|e| e.to_string())?;
            let l = LabelMap::new(1, n, labels).map_err(|e| e.to_string())?;
            let a = evaluate(&s, &l).map_err(|e| e.to_string())?;
            let b = evaluate_bruteforce(&s, &l).map_err(|e| e.to_string())?;
            for (name, x, y) in [
                ("auroc", a.auroc, b.auroc),
                ("ap", a.ap, b.ap),
                ("fpr95", a.fpr95, b.fpr95),
            ] {
                if (x - y).abs() > 1e-9 {
                    return Err(format!("trial {trial}: {name} {x} vs oracle {y}"));
                }
            }
        }
        // constructed all-tie case: AUROC exactly 0.5
        let s = ScoreMap::new(1, 8, vec![0.25; 8]).unwrap();
        let l = LabelMap::new(1, 8, vec![1, 1, 1, 1, 0, 0, 0, 0]).unwrap();
        let tie = evaluate(&s, &l).map_err(|e| e.to_string())?;
        if tie.auroc != 0.5 {
            return Err(format!("all-tie auroc {} != 0.5", tie.auroc));
        }
        // constructed perfect separation: AUROC and AP exactly 1.0
        let s = ScoreMap::new(1, 6, vec![3.0, 2.5, 2.0, 1.0, 0.5, 0.0]).unwrap();
        let l = LabelMap::new(1, 6, vec![1, 1, 1, 0, 0, 0]).unwrap();
        let sep = evaluate(&s, &l).map_err(|e| e.to_string())?;
        if sep.auroc != 1.0 || sep.ap != 1.0 || sep.fpr95 != 0.0 {
            return Err(format!("perfect separation gave {sep}"));
        }
        Ok(())
    };
    report(7, "sweep evaluation matches the brute-force oracle on 200 random instances", run());
}

#[test]
fn criterion_08_partition_identity_and_calibration() {
    let _guard = serial();
    let run = || -> Result<(), String> {
        let mut rng = StdRng::seed_from_u64(108);
        // split/assemble identity, bit-exact
        for trial in 0..50 {
            let n = [1usize, 2, 4][trial % 3];
            let h = n * rng.gen_range(1..=6);
            let w = n * rng.gen_range(1..=6);
            let d = rng.gen_range(1..=8);
            let values: Vec<f32> = (0..d * h * w).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let m = EmbeddingMap::new(d, h, w, values).map_err(|e| e.to_string())?;
            let parts = split_map(&m, n).map_err(|e| e.to_string())?;
            let back = assemble_map(&parts, n).map_err(|e| e.to_string())?;
            if back.values() != m.values() {
                return Err(format!("trial {trial}: split/assemble not bit-exact"));
            }
        }
        // multiplicative calibration on a uniform-offset 2x2 grid
        for trial in 0..10 {
            let (ph, pw) = (4, 5);
            let factors = [1.0, rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)];
            let parts: Vec<ScoreMap> = factors
                .iter()
                .map(|f| {
                    let vals: Vec<f64> =
                        (0..ph * pw).map(|_| f * rng.gen_range(0.5..2.0)).collect();
                    ScoreMap::new(ph, pw, vals).unwrap()
                })
                .collect();
            let (calibrated, _) = calibrate_scores(&parts, 2, CalibrationMode::Multiplicative)
                .map_err(|e| e.to_string())?;
            // traversal consults: (0,0)->(0,1) left edge, (0,0)->(1,0) top
            // edge, (1,0)->(1,1) left edge
            let consulted = [
                (0usize, 1usize, EdgeSide::RightLeft),
                (0, 2, EdgeSide::BottomTop),
                (2, 3, EdgeSide::RightLeft),
            ];
            for &(a, b, side) in &consulted {
                let (i, j) =
                    edge_mean(&calibrated[a], &calibrated[b], side).map_err(|e| e.to_string())?;
                if (i - j).abs() > 1e-9 {
                    return Err(format!(
                        "trial {trial}: consulted edge means {i} vs {j} not equalized"
                    ));
                }
            }
            let (again, _) = calibrate_scores(&calibrated, 2, CalibrationMode::Multiplicative)
                .map_err(|e| e.to_string())?;
            for (p, q) in calibrated.iter().zip(&again) {
                for (x, y) in p.scores().iter().zip(q.scores()) {
                    if (x - y).abs() > 1e-9 {
                        return Err(format!("trial {trial}: calibration not idempotent"));
                    }
                }
            }
        }
        Ok(())
    };
    report(8, "split/assemble is bit-exact and multiplicative calibration equalizes consulted edges idempotently", run());
}

#[test]
fn criterion_09_complexity_trend() {
    let _guard = serial();
    let run = || -> Result<(), String> {
        let rows = rwpm_core::bench::run_sweep(&rwpm_core::bench::BenchConfig::default())
            .map_err(|e| e.to_string())?;
        println!("{}", rwpm_core::bench::rows_to_csv(&rows));
        if rwpm_core::bench::iterative_faster_at_largest(&rows) != Some(true) {
            return Err("iterative not faster than closed form at N=4096".into());
        }
        let it = rwpm_core::bench::log_log_slope(&rows, "iterative").ok_or("no iterative rows")?;
        let cf = rwpm_core::bench::log_log_slope(&rows, "closed_form").ok_or("no closed rows")?;
        if (it - 2.0).abs() > 0.4 {
            return Err(format!("iterative log-log slope {it} outside 2 +/- 0.4"));
        }
        if (cf - 3.0).abs() > 0.5 {
            return Err(format!("closed-form log-log slope {cf} outside 3 +/- 0.5"));
        }
        Ok(())
    };
    report(9, "iterative beats the dense solve at N=4096 with quadratic vs cubic scaling", run());
}

#[test]
fn criterion_10_topk_softmax_consistency() {
    let _guard = serial();
    let run = || -> Result<(), String> {
        let mut rng = StdRng::seed_from_u64(110);
        for trial in 0..20 {
            let n = rng.gen_range(4..=64);
            let d = rng.gen_range(2..=8);
            let x = random_rows(&mut rng, n, d);
            let w = build_affinity(&x, true).map_err(|e| e.to_string())?;
            let full = softmax_transition(&w, 0.05).map_err(|e| e.to_string())?;
            let k = n - 1 + trial % 3; // k >= N-1 keeps every off-diagonal entry
            let topk = topk_transition(&w, k, 0.05).map_err(|e| e.to_string())?;
            let gap = (full.entries() - topk.entries())
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            if gap > 1e-12 {
                return Err(format!("trial {trial}: k={k} differs from softmax by {gap}"));
            }
            let nearest = topk_transition(&w, 1, 0.05).map_err(|e| e.to_string())?;
            for i in 0..n {
                let (best, _) = w
                    .entries()
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .fold((usize::MAX, f64::NEG_INFINITY), |acc, (j, &v)| {
                        if v > acc.1 { (j, v) } else { acc }
                    });
                if nearest.entries()[(i, best)] != 1.0 {
                    return Err(format!(
                        "trial {trial}: k=1 row {i} not concentrated on nearest neighbor"
                    ));
                }
            }
        }
        Ok(())
    };
    report(10, "top-k matches softmax for k >= N-1 and k=1 selects the nearest neighbor", run());
}

#[test]
fn criterion_11_variational_diagnostic() {
    let _guard = serial();
    let run = || -> Result<(), String> {
        let mut rng = StdRng::seed_from_u64(111);
        for trial in 0..20 {
            let n = rng.gen_range(8..=48);
            let d = rng.gen_range(2..=8);
            let alpha = [0.5, 0.9, 0.99][trial % 3];
            let m0 = random_rows(&mut rng, n, d);
            // symmetric row-stochastic transition: symmetric Sinkhorn
            // balancing of the cosine-affinity kernel, zero diagonal. For a
            // symmetric graph the diffusion fixed point is the exact
            // minimizer of the variational objective.
            let mut sym = Array2::from_shape_fn((n, n), |(i, j)| {
                if i == j {
                    0.0
                } else {
                    (m0.row(i).dot(&m0.row(j)) / 0.5).exp()
                }
            });
            let mut worst = f64::INFINITY;
            for _ in 0..20000 {
                let scale: Vec<f64> = sym
                    .rows()
                    .into_iter()
                    .map(|r| r.sum().sqrt())
                    .collect();
                for ((i, j), v) in sym.indexed_iter_mut() {
                    *v /= scale[i] * scale[j];
                }
                worst = scale.iter().map(|s| (s * s - 1.0).abs()).fold(0.0, f64::max);
                if worst < 1e-13 {
                    break;
                }
            }
            if worst > 1e-11 {
                return Err(format!("trial {trial}: Sinkhorn row sums off by {worst}"));
            }
            // fixed point of diffusion under the symmetric graph
            let mut a = &sym * (-alpha);
            for i in 0..n {
                a[(i, i)] += 1.0;
            }
            let refined = lu_factor(&a)
                .and_then(|f| f.solve_matrix(&m0))
                .map_err(|e| e.to_string())?
                * (1.0 - alpha);
            let j0 = diffusion_objective(&sym, &m0, &m0, alpha).map_err(|e| e.to_string())?;
            let jinf =
                diffusion_objective(&sym, &refined, &m0, alpha).map_err(|e| e.to_string())?;
            if jinf > j0 + 1e-9 {
                return Err(format!("trial {trial} alpha={alpha}: J {j0} -> {jinf} increased"));
            }
        }
        Ok(())
    };
    report(11, "the diffusion fixed point does not increase the variational objective", run());
}
