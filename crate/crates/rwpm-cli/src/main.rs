//! Command-line front end: refine/score/evaluate pixel-embedding maps,
//! generate synthetic scenes, and benchmark the two diffusion solvers.
//! All tensors use the RWTENSR1 container; exit codes are 0 (ok),
//! 2 (input/format), 3 (dimension/partition/evaluation), 4 (numerical).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rwpm_core::bench::{iterative_faster_at_largest, rows_to_csv, BenchConfig};
use rwpm_core::graph::GraphMode;
use rwpm_core::metrics::{evaluate, evaluate_bruteforce};
use rwpm_core::pipeline::{
    refine_embeddings, run_process, CalibrationChoice, PipelineConfig, RunManifest,
    StageTimings,
};
use rwpm_core::scoring::{score_map, Activation, LinearClassifier, ScoringFunction};
use rwpm_core::synth::{generate_scene, SynthConfig};
use rwpm_core::tensor_io::{
    read_tensor, write_tensor, EmbeddingMap, LabelMap, ScoreMap, Tensor,
};
use rwpm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "rwpm", about = "Random-walk refinement of pixel-embedding maps")]
struct Cli {
    /// Cap the worker thread count (default: all cores). Results are
    /// identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: split, diffuse, score, calibrate, assemble, evaluate.
    Process(ProcessArgs),
    /// Diffusion only; writes a refined embedding map.
    Refine(RefineArgs),
    /// Scoring only, from an embedding map and classifier.
    Score(ScoreArgs),
    /// Metrics from a score map and a label map.
    Eval(EvalArgs),
    /// Generate a seeded synthetic scene.
    Synth(SynthArgs),
    /// Wall-clock sweep of iterative vs closed-form diffusion.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreFnArg {
    Energy,
    Rba,
    OneMinusMax,
    OneMinusMaxSoftmax,
}

impl From<ScoreFnArg> for ScoringFunction {
    fn from(v: ScoreFnArg) -> Self {
        match v {
            ScoreFnArg::Energy => ScoringFunction::Energy,
            ScoreFnArg::Rba => ScoringFunction::Rba,
            ScoreFnArg::OneMinusMax => ScoringFunction::OneMinusMax(Activation::Sigmoid),
            ScoreFnArg::OneMinusMaxSoftmax => ScoringFunction::OneMinusMax(Activation::Softmax),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CalibrateArg {
    Auto,
    Off,
    Multiplicative,
    Additive,
}

/// Flags shared by every command that runs diffusion.
#[derive(Args)]
struct DiffusionFlags {
    /// Restart parameter (continue probability).
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    /// Softmax temperature for the transition graph.
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Iteration count T for the iterative solver.
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Partition factor n: the map splits into n x n sub-maps.
    #[arg(long, default_value_t = 2)]
    partition: usize,
    /// Keep only the k strongest neighbors per pixel (0 = dense softmax).
    #[arg(long, default_value_t = 0)]
    knn: usize,
    /// Solve (I - alpha S) exactly instead of iterating.
    #[arg(long)]
    closed_form: bool,
    /// Re-normalize refined embeddings to unit length before scoring.
    #[arg(long)]
    renormalize: bool,
}

impl DiffusionFlags {
    fn pipeline_config(
        &self,
        scoring: ScoringFunction,
        calibrate: CalibrateArg,
    ) -> PipelineConfig {
        PipelineConfig {
            alpha: self.alpha,
            iterations: self.iters,
            partition: self.partition,
            graph: if self.knn > 0 {
                GraphMode::TopK { k: self.knn, tau: self.tau }
            } else {
                GraphMode::Softmax { tau: self.tau }
            },
            solver_closed_form: self.closed_form,
            scoring,
            calibration: match calibrate {
                CalibrateArg::Auto => CalibrationChoice::default_for(self.partition),
                CalibrateArg::Off => CalibrationChoice::Off,
                CalibrateArg::Multiplicative => CalibrationChoice::Multiplicative,
                CalibrateArg::Additive => CalibrationChoice::Additive,
            },
            renormalize: self.renormalize,
            tolerance: None,
        }
    }
}

#[derive(Args)]
struct ProcessArgs {
    /// Input embedding tensor [d, H, W].
    #[arg(long)]
    embeddings: PathBuf,
    /// Classifier weight tensor [K, d].
    #[arg(long)]
    classifier: PathBuf,
    /// Optional classifier bias tensor [K].
    #[arg(long)]
    bias: Option<PathBuf>,
    /// Optional label tensor [H, W]; enables the evaluation line.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output score tensor [H, W].
    #[arg(long)]
    out: PathBuf,
    /// Write the run manifest here (default: <out>.manifest).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScoreFnArg::Energy)]
    score_fn: ScoreFnArg,
    #[arg(long, value_enum, default_value_t = CalibrateArg::Auto)]
    calibrate: CalibrateArg,
    #[command(flatten)]
    diffusion: DiffusionFlags,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Output refined embedding tensor [d, H, W].
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    diffusion: DiffusionFlags,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    bias: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ScoreFnArg::Energy)]
    score_fn: ScoreFnArg,
}

#[derive(Args)]
struct EvalArgs {
    /// Score tensor [H, W].
    #[arg(long)]
    scores: PathBuf,
    /// Label tensor [H, W] with values 0/1/255.
    #[arg(long)]
    labels: PathBuf,
    /// Cross-check with the exhaustive threshold-sweep oracle.
    #[arg(long)]
    brute_force: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// key=value scene config; omitted keys use the default scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving embeddings.rwt, labels.rwt, classifier.rwt and
    /// manifest.txt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated sub-map pixel counts to sweep.
    #[arg(long, default_value = "256,1024,4096", value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Minimum accumulated measurement time per row, in milliseconds.
    #[arg(long, default_value_t = 80.0)]
    min_measure_ms: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit nonzero unless iterative beats closed form at the largest N.
    #[arg(long)]
    assert_faster: bool,
}

fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let file = File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    read_tensor(&mut BufReader::new(file))
}

fn write_tensor_file(t: &Tensor, path: &Path) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut sink = BufWriter::new(file);
    write_tensor(t, &mut sink)?;
    sink.flush().map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_classifier(weights: &Path, bias: Option<&PathBuf>) -> Result<LinearClassifier> {
    let w = read_tensor_file(weights)?;
    let b = bias.map(|p| read_tensor_file(p)).transpose()?;
    LinearClassifier::from_tensors(&w, b.as_ref())
}

fn cmd_process(args: &ProcessArgs) -> Result<()> {
    let embeddings = EmbeddingMap::from_tensor(&read_tensor_file(&args.embeddings)?)?;
    let classifier = load_classifier(&args.classifier, args.bias.as_ref())?;
    let labels = args
        .labels
        .as_ref()
        .map(|p| read_tensor_file(p).and_then(|t| LabelMap::from_tensor(&t)))
        .transpose()?;
    let cfg = args.diffusion.pipeline_config(args.score_fn.into(), args.calibrate);
    let out = run_process(&embeddings, &classifier, labels.as_ref(), &cfg)?;
    write_tensor_file(&out.scores.to_tensor(), &args.out)?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| args.out.with_extension("manifest"));
    write_text(&manifest_path, &out.manifest.to_key_values())?;
    if let Some(report) = &out.calibration {
        println!("{report}");
    }
    for w in &out.manifest.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(eval) = out.eval {
        println!("{eval}");
    }
    Ok(())
}

fn cmd_refine(args: &RefineArgs) -> Result<()> {
    let embeddings = EmbeddingMap::from_tensor(&read_tensor_file(&args.embeddings)?)?;
    let cfg = args
        .diffusion
        .pipeline_config(ScoringFunction::Energy, CalibrateArg::Off);
    let (refined, timings, peak) = refine_embeddings(&embeddings, &cfg)?;
    write_tensor_file(&refined.to_tensor(), &args.out)?;
    if let Some(path) = &args.manifest {
        let manifest = RunManifest {
            config: cfg,
            height: embeddings.h(),
            width: embeddings.w(),
            dim: embeddings.d(),
            timings: StageTimings { score_ms: 0.0, calibrate_ms: 0.0, ..timings },
            peak_matrix_elems: peak,
            warnings: Vec::new(),
        };
        write_text(path, &manifest.to_key_values())?;
    }
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let embeddings = EmbeddingMap::from_tensor(&read_tensor_file(&args.embeddings)?)?;
    let classifier = load_classifier(&args.classifier, args.bias.as_ref())?;
    let scores = score_map(&embeddings, &classifier, args.score_fn.into())?;
    write_tensor_file(&scores.to_tensor(), &args.out)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let scores = ScoreMap::from_tensor(&read_tensor_file(&args.scores)?)?;
    let labels = LabelMap::from_tensor(&read_tensor_file(&args.labels)?)?;
    let result = evaluate(&scores, &labels)?;
    println!("{result}");
    if args.brute_force {
        let oracle = evaluate_bruteforce(&scores, &labels)?;
        let agree = (result.auroc - oracle.auroc).abs() <= 1e-9
            && (result.ap - oracle.ap).abs() <= 1e-9
            && (result.fpr95 - oracle.fpr95).abs() <= 1e-9;
        if !agree {
            return Err(Error::Evaluation(format!(
                "sweep disagrees with brute-force oracle: {result} vs {oracle}"
            )));
        }
        println!("brute_force=agree");
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            SynthConfig::from_key_values(&text)?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let scene = generate_scene(&cfg)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", args.out_dir.display()))))?;
    write_tensor_file(&scene.embeddings.to_tensor(), &args.out_dir.join("embeddings.rwt"))?;
    write_tensor_file(&scene.labels.to_tensor(), &args.out_dir.join("labels.rwt"))?;
    write_tensor_file(&scene.classifier.to_tensor(), &args.out_dir.join("classifier.rwt"))?;
    write_text(&args.out_dir.join("manifest.txt"), &scene.manifest.to_key_values())?;
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        sizes: args.sizes.clone(),
        dim: args.dim,
        iterations: args.iters,
        alpha: args.alpha,
        tau: args.tau,
        min_measure_ms: args.min_measure_ms,
        ..BenchConfig::default()
    };
    let rows = rwpm_core::bench::run_sweep(&cfg)?;
    let csv = rows_to_csv(&rows);
    match &args.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    if args.assert_faster && iterative_faster_at_largest(&rows) != Some(true) {
        return Err(Error::Numerical(
            "iterative solver did not beat the closed form at the largest N".into(),
        ));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Process(a) => cmd_process(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
