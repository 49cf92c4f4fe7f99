//! The `wssl` command line.

pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use wssl_core::checkpoint;
use wssl_core::error::Error;
use wssl_core::eval::{self, ScoreSet};
use wssl_core::io::{self, Audit};
use wssl_core::losses::PromptSet;
use wssl_core::phantom::{assign_supervision, generate_dataset, PhantomConfig, Split};
use wssl_core::pipeline::run::{
    self, evaluate_checkpoint, resolve_baseline, run_ablation_grid, run_mode, AblationGrid, Experiment,
    ResolvedConfig, RunReport, CONFIG_FILE,
};
use wssl_core::pipeline::{ExperimentConfig, Mode};
use wssl_core::text::{LabelVocabulary, TextEmbeddingTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit code for an error, looking through stage wrappers.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) | Error::InvalidInput(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Schema(_) => EXIT_IO,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_FAILURE,
    }
}

#[derive(Parser, Debug)]
#[command(name = "wssl", version, about = "Weakly semi-supervised tumor segmentation and detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a phantom dataset and assign full/weak supervision.
    GenData(GenDataArgs),
    /// Write the built-in pseudo text-embedding table.
    GenEmbeddings(GenEmbeddingsArgs),
    /// Train the segmentation teacher on the fully annotated records.
    TrainTeacher(RunArgs),
    /// Label the weak records with the trained teacher.
    PseudoLabel(RunArgs),
    /// Train the student on every record, then evaluate it.
    TrainStudent(RunArgs),
    /// Teacher, pseudo masks, student and evaluation in one go.
    RunWssl(RunArgs),
    /// Train and evaluate a baseline or ablation setting.
    RunBaseline(BaselineArgs),
    /// Run an ablation grid and write `ablation.csv`.
    Ablate(AblateArgs),
    /// Evaluate a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// ROC curves and metric tables.
    #[command(subcommand)]
    Plot(PlotCommand),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Phantom settings (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Train, val and test shares.
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.2])]
    pub split: Vec<f64>,
    #[arg(long)]
    pub full_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GenEmbeddingsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 768)]
    pub dim: usize,
}

/// Experiment settings: a JSON config file plus flag overrides.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// Experiment config (JSON). Defaults to the run directory's
    /// `config.json` when present.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub full_fraction: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Epochs for both stages.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Student prompts: none, det, loc or det+loc.
    #[arg(long)]
    pub prompts: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Keep only pseudo-mask components in the reported location bin.
    #[arg(long)]
    pub bosma_filter: bool,
    /// Log every dataset file opened to `logs/audit.jsonl`.
    #[arg(long)]
    pub audit: bool,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// weak-only, full-x, wssl-no-text, table3-a .. table3-e, or a training
    /// mode name.
    #[arg(long)]
    pub mode: String,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON object mapping grid keys to value lists.
    #[arg(long)]
    pub grid: PathBuf,
    /// Mode for points that do not set one.
    #[arg(long, default_value = "student")]
    pub mode: String,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    /// Score file of another model on the same records; adds a DeLong test.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum PlotCommand {
    /// ROC curves from score files, `path` or `path:label`.
    Roc {
        #[arg(long = "scores", required = true)]
        scores: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the first curve's points as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Metric table from report files, `path` or `path:name`.
    Table {
        #[arg(long = "report", required = true)]
        reports: Vec<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        markdown: Option<PathBuf>,
    },
}

type CliResult<T = ()> = Result<T, Error>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult {
    io::write_bytes(path, text.as_bytes())
}

fn parse_prompts(s: &str) -> CliResult<PromptSet> {
    serde_json::from_value(serde_json::Value::String(s.replace('+', "_")))
        .map_err(|_| Error::Config(format!("unknown prompt set `{s}`")))
}

impl ConfigArgs {
    /// The config file (or the run directory's resolved config, or the
    /// defaults) with flag overrides applied.
    pub fn resolve(&self, run_dir: Option<&Path>) -> CliResult<ExperimentConfig> {
        let mut c = match (&self.config, run_dir.map(|d| d.join(CONFIG_FILE))) {
            (Some(p), _) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                ExperimentConfig::from_json(&text)?
            }
            (None, Some(p)) if p.exists() => read_json::<ResolvedConfig>(&p)?.config,
            _ => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.full_fraction {
            c.full_fraction = v;
        }
        if let Some(v) = self.alpha {
            c.loss.alpha = v;
        }
        if let Some(v) = self.beta {
            c.loss.beta = v;
        }
        if let Some(v) = self.lambda {
            c.loss.lambda = v;
        }
        for t in [&mut c.teacher, &mut c.student] {
            if let Some(v) = self.epochs {
                t.epochs = v;
            }
            if let Some(v) = self.warmup_epochs {
                t.warmup_epochs = v;
            }
            if let Some(v) = self.batch_size {
                t.batch_size = v;
            }
            if let Some(v) = self.lr {
                t.lr = v;
            }
        }
        if let Some(p) = &self.prompts {
            c.student_prompts = parse_prompts(p)?;
        }
        if let Some(v) = self.threshold {
            c.pseudo_threshold = v;
        }
        if self.bosma_filter {
            c.bosma_filter = true;
        }
        if self.audit {
            c.audit = true;
        }
        if let Some(p) = &self.embeddings {
            c.embeddings = Some(p.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_report(r: &RunReport) {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    println!(
        "{}: val auc {} | test auc {} sens {} spec {} dice {}",
        r.mode.as_str(),
        f(r.val.auc),
        f(r.test.auc),
        f(r.test.sensitivity),
        f(r.test.specificity),
        f(r.test.dice.as_ref().and_then(|d| d.overall)),
    );
}

fn gen_data(a: &GenDataArgs) -> CliResult {
    let cfg: PhantomConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => PhantomConfig::default(),
    };
    let split: [f64; 3] = a
        .split
        .as_slice()
        .try_into()
        .map_err(|_| Error::Config("--split needs three comma-separated shares".into()))?;
    let m = generate_dataset(&cfg, a.n, split, a.seed, &a.out)?;
    if let Some(f) = a.full_fraction {
        assign_supervision(&m, f, a.seed)?.write(&a.out)?;
    }
    println!("wrote {} records to {}", a.n, a.out.display());
    Ok(())
}

fn gen_embeddings(a: &GenEmbeddingsArgs) -> CliResult {
    let t = TextEmbeddingTable::pseudo(&LabelVocabulary::default(), a.dim)?;
    write(&a.out, &t.to_json()?)
}

fn train_teacher(a: &RunArgs) -> CliResult {
    let exp = Experiment::open(&a.data, &a.run, a.cfg.resolve(Some(&a.run))?)?;
    let t = exp.train_teacher()?;
    println!(
        "teacher: best epoch {} val dice {:?} -> {}",
        t.best_epoch,
        t.best_metric,
        t.checkpoint.display()
    );
    Ok(())
}

fn pseudo_label(a: &RunArgs) -> CliResult {
    let exp = Experiment::open(&a.data, &a.run, a.cfg.resolve(Some(&a.run))?)?;
    let loaded = checkpoint::load::<f32>(&exp.checkpoint_path(run::TEACHER_STAGE))
        .map_err(|e| e.in_stage("pseudo_label"))?;
    let set = exp.pseudo_label(&loaded.model, &loaded.sha256)?;
    println!("pseudo masks for {} weak records", set.records.len());
    Ok(())
}

fn train_student(a: &RunArgs) -> CliResult {
    let exp = Experiment::open(&a.data, &a.run, a.cfg.resolve(Some(&a.run))?)?;
    let t = exp.train_mode(Mode::Student, Some(&exp.pseudo_dir()))?;
    let r = exp.finish(Mode::Student, &t, None, None, None)?;
    print_report(&r);
    Ok(())
}

fn run_wssl(a: &RunArgs) -> CliResult {
    let r = run_mode(&a.data, &a.run, a.cfg.resolve(Some(&a.run))?, Mode::Student, None)?;
    print_report(&r);
    Ok(())
}

fn run_baseline(a: &BaselineArgs) -> CliResult {
    let cfg = a.run.cfg.resolve(Some(&a.run.run))?;
    let (mode, cfg) = resolve_baseline(&a.mode, cfg)?;
    let r = run_mode(&a.run.data, &a.run.run, cfg, mode, None)?;
    print_report(&r);
    Ok(())
}

fn ablate(a: &AblateArgs) -> CliResult {
    let grid: AblationGrid = read_json(&a.grid)?;
    let base = a.cfg.resolve(None)?;
    let (mode, base) = resolve_baseline(&a.mode, base)?;
    let rows = run_ablation_grid(&a.data, &a.out, &base, mode, &grid)?;
    for r in &rows {
        print_report(&r.report);
    }
    println!("wrote {}", a.out.join("ablation.csv").display());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> CliResult {
    let split: Split = a.split.parse().map_err(|_| Error::Config(format!("unknown split `{}`", a.split)))?;
    if !a.checkpoint.exists() {
        return Err(Error::Config(format!("checkpoint {} not found", a.checkpoint.display())));
    }
    let (mut report, preds) = evaluate_checkpoint(&a.data, &a.checkpoint, split, &Audit::disabled())?;
    let scores = preds.score_set().transpose()?;
    if let Some(other) = &a.compare {
        let b: ScoreSet = read_json(other)?;
        let mine = scores
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint has no cancer score to compare".into()))?;
        report.delong = Some(eval::delong_test(mine, &b)?);
    }
    if let (Some(p), Some(s)) = (&a.scores_out, &scores) {
        write(p, &s.to_json()?)?;
    }
    let text = report.to_json()?;
    match &a.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn split_label(s: &str) -> (PathBuf, Option<String>) {
    match s.rsplit_once(':') {
        Some((p, l)) if !l.contains('/') && !l.is_empty() => (PathBuf::from(p), Some(l.to_string())),
        _ => (PathBuf::from(s), None),
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn plot(c: &PlotCommand) -> CliResult {
    match c {
        PlotCommand::Roc { scores, out, csv } => {
            let mut series = Vec::new();
            for s in scores {
                let (path, label) = split_label(s);
                let set: ScoreSet = read_json(&path)?;
                let points = eval::roc_curve(&set)?;
                series.push(plot::RocSeries {
                    label: label.unwrap_or_else(|| stem(&path)),
                    auc: eval::auc(&set)?,
                    points,
                });
            }
            if let Some(p) = csv {
                write(p, &eval::roc_csv(&series[0].points))?;
            }
            write(out, &plot::roc_svg(&series))
        }
        PlotCommand::Table { reports, csv, markdown } => {
            let mut rows = Vec::new();
            for s in reports {
                let (path, name) = split_label(s);
                let value: serde_json::Value = read_json(&path)?;
                let report = if value.get("test").is_some() {
                    serde_json::from_value::<RunReport>(value)?.test
                } else {
                    serde_json::from_value(value)?
                };
                rows.push((name.unwrap_or_else(|| stem(path.parent().unwrap_or(&path))), report));
            }
            if let Some(p) = csv {
                write(p, &plot::table_csv(&rows))?;
            }
            if let Some(p) = markdown {
                write(p, &plot::table_markdown(&rows))?;
            }
            if csv.is_none() && markdown.is_none() {
                print!("{}", plot::table_markdown(&rows));
            }
            Ok(())
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::GenEmbeddings(a) => gen_embeddings(a),
        Command::TrainTeacher(a) => train_teacher(a),
        Command::PseudoLabel(a) => pseudo_label(a),
        Command::TrainStudent(a) => train_student(a),
        Command::RunWssl(a) => run_wssl(a),
        Command::RunBaseline(a) => run_baseline(a),
        Command::Ablate(a) => ablate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Plot(c) => plot(c),
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
