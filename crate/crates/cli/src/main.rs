use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use lse_core::data::{assemble_dataset, load_matrix, write_dataset};
use lse_core::harness::{
    candidates_for, cross_validate, fit_on_seen, run_experiment, run_gzsl, run_tzsl, run_zsr, search_fusion_weights,
    CvPlan, ExperimentConfig, FusionProtocol, RunOptions, ScenarioSpec, Scoring, SemanticSpec, SynthSpec,
    DEFAULT_LAMBDA_GRID,
};
use lse_core::inference::{predict_batch, write_predictions, FusionWeights};
use lse_core::lse::{load_model, save_model, EigenSolver, TrainOptions};
use lse_core::metrics::{EvalReport, Scenario};
use lse_core::{ClassId, Dataset, ErrorClass, Execution, Hyperparams, LseError, Result};

#[derive(Parser, Debug)]
#[command(name = "lse", version, about = "Latent space encoding for zero-shot learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed for every randomized step (splits, folds, synthetic data).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Upper bound on worker threads.
    #[arg(long, global = true, env = "LSE_THREADS")]
    threads: Option<usize>,
    /// Treat recoverable data oddities as errors.
    #[arg(long, global = true)]
    strict: bool,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model on every seen-class instance and write it to disk.
    Train(TrainArgs),
    /// Classify instances with a saved model.
    Predict(PredictArgs),
    /// Conventional zero-shot classification (unseen vs unseen).
    EvalTzsl(EvalArgs),
    /// Generalized scenarios U-U, S-S, U-T, S-T, or a full experiment file.
    EvalGzsl(GzslArgs),
    /// Zero-shot retrieval scored by mAP.
    EvalZsr(EvalArgs),
    /// Class-wise cross-validation over lambda and latent dimension.
    Gridsearch(GridArgs),
    /// Grid search of fusion weights over semantic modalities.
    FuseSearch(FuseArgs),
    /// Write a planted-model synthetic dataset.
    Synth(SynthArgs),
    /// Print model metadata.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset manifest, or a directory containing `manifest.toml`.
    #[arg(long)]
    manifest: PathBuf,
    /// Train on per-class visual means.
    #[arg(long)]
    fast: bool,
    /// Standardize every feature over the training instances.
    #[arg(long)]
    standardize: bool,
    /// Semantic modalities to train and score with (default: the first).
    #[arg(long = "semantic", value_delimiter = ',')]
    semantic: Vec<String>,
    /// Fusion weights as `name=weight,...`; implies those modalities.
    #[arg(long, value_parser = parse_weights)]
    weights: Option<FusionWeights>,
}

#[derive(Args, Debug)]
struct HyperArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    dim: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, value_enum, default_value_t = Solver::Dense)]
    solver: Solver,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Solver {
    Dense,
    Subspace,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Pool {
    Seen,
    Unseen,
    All,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Supplies the candidate prototypes, and the test instances unless
    /// `--instances` is given.
    #[arg(long)]
    manifest: PathBuf,
    /// Visual feature matrix to classify (one instance per column).
    #[arg(long)]
    instances: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Pool::Unseen)]
    candidates: Pool,
    #[arg(long, value_delimiter = ',')]
    semantic: Vec<String>,
    #[arg(long, value_parser = parse_weights)]
    weights: Option<FusionWeights>,
    #[arg(long, default_value_t = 1)]
    top_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    topk: Vec<usize>,
    /// Also write the report here (TOML, or CSV with `--format csv`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the confusion matrix as CSV.
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GzslArgs {
    /// Experiment file; runs cross-validation, fusion search and every
    /// listed scenario, writing reports to its output directory.
    #[arg(long, conflicts_with_all = ["manifest", "lambda", "dim", "scenario"])]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Scenarios to run (default: all four).
    #[arg(long, value_delimiter = ',')]
    scenario: Vec<String>,
    #[arg(long)]
    fast: bool,
    #[arg(long)]
    standardize: bool,
    #[arg(long = "semantic", value_delimiter = ',')]
    semantic: Vec<String>,
    #[arg(long, value_parser = parse_weights)]
    weights: Option<FusionWeights>,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    topk: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    /// Latent dimensions (default: powers of two up to min(N, visual dim)).
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Write the full grid table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Semantic modalities to weight (at least two).
    #[arg(long, value_delimiter = ',', required = true)]
    modalities: Vec<String>,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    /// Share of seen classes held out for validation.
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    /// Score on the unseen test classes (leaks test labels into tuning).
    #[arg(long)]
    tune_on_test: bool,
    #[arg(long)]
    fast: bool,
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    per_class: usize,
    /// Visual dimension.
    #[arg(long)]
    f1: usize,
    /// Dimension of the informative semantic modality `attr`.
    #[arg(long)]
    f2: usize,
    #[arg(long)]
    d_true: usize,
    /// Standard deviation of the visual noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Seen class count (default: two thirds of the classes).
    #[arg(long)]
    seen: Option<usize>,
    /// Add a pure-noise semantic modality `noise` of this dimension.
    #[arg(long)]
    noise_dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InspectArgs {
    model: PathBuf,
}

fn parse_weights(s: &str) -> std::result::Result<FusionWeights, String> {
    let pairs = s
        .split(',')
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("`{kv}` is not name=weight"))?;
            let w: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
            Ok((k.trim().to_string(), w))
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    FusionWeights::new(pairs).map_err(|e| e.to_string())
}

fn scoring(semantic: &[String], weights: Option<&FusionWeights>) -> Result<Scoring> {
    if let Some(w) = weights {
        if !semantic.is_empty() {
            return Err(LseError::invalid("--semantic and --weights are mutually exclusive"));
        }
        return Ok(Scoring::Fused(w.clone()));
    }
    Ok(match semantic {
        [] => Scoring::FirstSemantic,
        [one] => Scoring::Semantic(one.clone()),
        many => Scoring::Fused(FusionWeights::new(many.iter().map(|n| (n.clone(), 1.0)).collect())?),
    })
}

struct Ctx {
    seed: u64,
    strict: bool,
    format: Format,
}

impl Ctx {
    fn options(&self, fast: bool, standardize: bool, scoring: Scoring, topk: Vec<usize>) -> RunOptions {
        RunOptions {
            fast,
            train: TrainOptions { standardize, ..TrainOptions::default() },
            topk,
            scoring,
            strict: self.strict,
        }
    }

    fn render(&self, reports: &[EvalReport]) -> String {
        match self.format {
            Format::Csv => {
                let mut s = format!("{}\n", EvalReport::CSV_HEADER);
                for r in reports {
                    s.push_str(&r.to_csv_row());
                    s.push('\n');
                }
                s
            }
            Format::Text => reports.iter().map(EvalReport::to_toml).collect::<Vec<_>>().join("\n"),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LseError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| LseError::io(path, e))
}

fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| if text.ends_with('\n') { Ok(()) } else { out.write_all(b"\n") })
        .map_err(|e| LseError::io("<stdout>", e))
}

fn hyper(lambda: f64, dim: usize) -> Result<Hyperparams> {
    Hyperparams::new(lambda, dim)
}

fn load(manifest: &Path) -> Result<Dataset> {
    let ds = assemble_dataset(manifest)?;
    info!(
        "loaded {} instances, {} seen / {} unseen classes",
        ds.num_instances(),
        ds.split().seen().len(),
        ds.split().unseen().len()
    );
    Ok(ds)
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { seed: cli.seed, strict: cli.strict, format: cli.format };
    match cli.command {
        Command::Train(a) => {
            let h = hyper(a.hyper.lambda, a.hyper.dim)?;
            let scoring = scoring(&a.data.semantic, a.data.weights.as_ref())?;
            let mut opts = ctx.options(a.data.fast, a.data.standardize, scoring, vec![1]);
            opts.train.solver = match a.solver {
                Solver::Dense => EigenSolver::Dense,
                Solver::Subspace => EigenSolver::subspace(),
            };
            let ds = load(&a.data.manifest)?;
            let model = fit_on_seen(&ds, h, &opts)?;
            save_model(&model, &a.out)?;
            emit(&format!(
                "wrote {} (lambda={}, d={}, modalities={})",
                a.out.display(),
                h.lambda(),
                h.latent_dim(),
                model.modality_names().join(",")
            ))
        }
        Command::Predict(a) => {
            let model = load_model(&a.model)?;
            let ds = load(&a.manifest)?;
            let scoring = match (&a.weights, a.semantic.as_slice()) {
                (None, []) => {
                    // score with whatever the model was trained on
                    let names: Vec<String> = model.modality_names()[1..].to_vec();
                    scoring(&names, None)?
                }
                _ => scoring(&a.semantic, a.weights.as_ref())?,
            };
            let candidates = candidates_for(&model, &ds, &scoring)?;
            let ids: Vec<ClassId> = match a.candidates {
                Pool::Seen => ds.split().seen().to_vec(),
                Pool::Unseen => ds.split().unseen().to_vec(),
                Pool::All => ds.split().all(),
            };
            let instances = match &a.instances {
                Some(p) => load_matrix(p)?.into_values(),
                None => ds.visual().select_columns(&ds.instances_of(&ids)).into_values(),
            };
            let instances = lse_core::ModalityMatrix::new(ds.visual().name(), instances)?;
            let preds = predict_batch(&model, &instances, &candidates, &ids, Execution::Parallel)?;
            let mut buf = Vec::new();
            write_predictions(&mut buf, &preds, a.top_k).expect("writing to memory");
            let text = String::from_utf8(buf).expect("ascii output");
            match &a.out {
                Some(p) => write_file(p, &text),
                None => emit(&text),
            }
        }
        Command::EvalTzsl(a) => eval_single(&ctx, a, Scenario::Tzsl),
        Command::EvalZsr(a) => eval_single(&ctx, a, Scenario::Zsr),
        Command::EvalGzsl(a) => eval_gzsl(&ctx, a),
        Command::Gridsearch(a) => {
            let scoring = scoring(&a.data.semantic, a.data.weights.as_ref())?;
            let opts = ctx.options(a.data.fast, a.data.standardize, scoring, vec![1]);
            let ds = load(&a.data.manifest)?;
            let default = CvPlan::default_for(&ds, ctx.seed)?;
            let lambdas = if a.lambdas.is_empty() { DEFAULT_LAMBDA_GRID.to_vec() } else { a.lambdas };
            let dims = if a.dims.is_empty() { default.dim_grid } else { a.dims };
            let plan = CvPlan::new(a.folds, lambdas, dims, ctx.seed)?;
            let cv = cross_validate(&ds, &plan, &opts)?;
            if let Some(p) = &a.out {
                write_file(p, &cv.to_csv())?;
            }
            match ctx.format {
                Format::Csv => emit(&cv.to_csv()),
                Format::Text => emit(&format!(
                    "best lambda = {}\nbest dim = {}\nmean per-class accuracy = {}",
                    cv.best.lambda(),
                    cv.best.latent_dim(),
                    cv.best_score
                )),
            }
        }
        Command::FuseSearch(a) => {
            let h = hyper(a.hyper.lambda, a.hyper.dim)?;
            let opts = ctx.options(a.fast, a.standardize, Scoring::FirstSemantic, vec![1]);
            let ds = load(&a.manifest)?;
            let protocol = if a.tune_on_test {
                FusionProtocol::UnseenTest
            } else {
                FusionProtocol::ClassValidation { seed: ctx.seed, holdout_fraction: a.holdout }
            };
            if a.tune_on_test {
                log::warn!("weights are tuned on the unseen test classes; scores are optimistic");
            }
            let names: Vec<&str> = a.modalities.iter().map(String::as_str).collect();
            let search = search_fusion_weights(&ds, h, &names, a.step, protocol, &opts)?;
            let mut table = format!("{},pc_accuracy\n", a.modalities.join(","));
            for (w, s) in &search.table {
                let w: Vec<String> = w.iter().map(f64::to_string).collect();
                table.push_str(&format!("{},{s}\n", w.join(",")));
            }
            if let Some(p) = &a.out {
                write_file(p, &table)?;
            }
            match ctx.format {
                Format::Csv => emit(&table),
                Format::Text => {
                    let w: Vec<String> = search.best.weights().iter().map(|(n, w)| format!("{n}={w}")).collect();
                    emit(&format!(
                        "protocol = {}\nbest weights = {}\nper-class accuracy = {}",
                        protocol.label(),
                        w.join(","),
                        search.best_score
                    ))
                }
            }
        }
        Command::Synth(a) => {
            let mut semantic = vec![SemanticSpec::informative("attr", a.f2)];
            if let Some(n) = a.noise_dim {
                semantic.push(SemanticSpec::noise("noise", n));
            }
            let spec = SynthSpec {
                classes: a.classes,
                seen_classes: a.seen,
                per_class: a.per_class,
                visual_dim: a.f1,
                semantic,
                d_true: a.d_true,
                noise_sigma: a.noise,
                seed: ctx.seed,
            };
            let ds = lse_core::harness::generate_synthetic(&spec)?;
            let manifest = write_dataset(&ds, &a.out)?;
            emit(&format!("wrote {}", manifest.display()))
        }
        Command::Inspect(a) => {
            let model = load_model(&a.model)?;
            let h = model.hyper();
            let rows: Vec<(String, String)> = [
                ("lambda".to_string(), h.lambda().to_string()),
                ("latent_dim".into(), h.latent_dim().to_string()),
                ("instances".into(), model.code().ncols().to_string()),
                ("standardized".into(), model.is_standardized().to_string()),
            ]
            .into_iter()
            .chain(model.modality_names().iter().zip(model.modality_kinds()).zip(model.encoders()).map(
                |((n, k), u)| (format!("modality.{n}"), format!("{k:?} dim={}", u.ncols()).to_lowercase()),
            ))
            .chain([(
                "eigenvalues".to_string(),
                model.eigenvalues().iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
            )])
            .collect();
            let text: String = match ctx.format {
                Format::Csv => std::iter::once("key,value\n".to_string())
                    .chain(rows.iter().map(|(k, v)| format!("{k},{v}\n")))
                    .collect(),
                Format::Text => rows.iter().map(|(k, v)| format!("{k:<16} {v}\n")).collect(),
            };
            emit(&text)
        }
    }
}

fn eval_single(ctx: &Ctx, a: EvalArgs, scenario: Scenario) -> Result<()> {
    let h = hyper(a.hyper.lambda, a.hyper.dim)?;
    let scoring = scoring(&a.data.semantic, a.data.weights.as_ref())?;
    let opts = ctx.options(a.data.fast, a.data.standardize, scoring, a.topk);
    let ds = load(&a.data.manifest)?;
    let report = match scenario {
        Scenario::Zsr => run_zsr(&ds, h, &opts)?,
        _ => run_tzsl(&ds, h, &opts)?,
    };
    if let Some(p) = &a.confusion {
        write_file(p, &report.confusion.to_csv())?;
    }
    let text = ctx.render(std::slice::from_ref(&report));
    if let Some(p) = &a.out {
        write_file(p, &text)?;
    }
    emit(&text)
}

fn eval_gzsl(ctx: &Ctx, a: GzslArgs) -> Result<()> {
    let scoring = scoring(&a.semantic, a.weights.as_ref())?;
    let opts = ctx.options(a.fast, a.standardize, scoring, a.topk);
    if let Some(config) = &a.config {
        let cfg = ExperimentConfig::load(config)?;
        let base = config.parent().unwrap_or(Path::new("."));
        let outcome = run_experiment(&cfg, base, opts)?;
        info!("summary written to {}", outcome.summary.display());
        return emit(&ctx.render(&outcome.reports));
    }
    let (Some(manifest), Some(lambda), Some(dim)) = (&a.manifest, a.lambda, a.dim) else {
        return Err(LseError::invalid("eval-gzsl needs either --config or all of --manifest, --lambda and --dim"));
    };
    let h = hyper(lambda, dim)?;
    let scenarios: Vec<Scenario> = if a.scenario.is_empty() {
        vec![Scenario::UnseenUnseen, Scenario::SeenSeen, Scenario::UnseenTotal, Scenario::SeenTotal]
    } else {
        a.scenario.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    let specs = scenarios.into_iter().map(ScenarioSpec::new).collect::<Result<Vec<_>>>()?;
    let ds = load(manifest)?;
    let reports = specs
        .iter()
        .map(|s| run_gzsl(&ds, h, s, ctx.seed, &opts))
        .collect::<Result<Vec<_>>>()?;
    let text = ctx.render(&reports);
    if let Some(p) = &a.out {
        write_file(p, &text)?;
    }
    emit(&text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Runtime => 2,
            })
        }
    }
}
