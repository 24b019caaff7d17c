use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mlsn_core::autodiff::OpKind;
use mlsn_core::checkpoint::Checkpoint;
use mlsn_core::data::{gen_two_moons, gen_weak_pairs, load_csv_dataset, Dataset};
use mlsn_core::gradsuite::{run_grad_suite, GRAD_TOLERANCE};
use mlsn_core::rng::{stream, Stream};
use mlsn_core::trainer::{
    evaluate, export_features, format_summary_table, metrics_csv, prepare_split, run_methods, train,
    train_weak_label_mode, EvalWith, ExperimentData, Method,
};

mod manifest;
mod run_config;

use manifest::{write_file, Manifest};
use run_config::RunConfig;

/// Error carrying the process exit status: 2 for bad input, 3 for failures
/// during a run.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<mlsn_core::Error> for Failure {
    fn from(e: mlsn_core::Error) -> Self {
        Self {
            code: if e.is_validation() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "mlsn", version, about = "Mean-Teacher with a co-trained similarity network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate two-moons data, weak pairs, or re-serialize a dataset CSV.
    GenData(GenDataArgs),
    /// Train one model and write metrics, checkpoint and manifest.
    Train(TrainArgs),
    /// Test error of a checkpoint.
    Eval(EvalArgs),
    /// Compare methods over several seeds.
    Experiment(ExperimentArgs),
    /// Finite-difference check of every primitive and loss.
    Gradcheck(GradcheckArgs),
    /// Learned features and their 2-D PCA projection.
    ExportFeatures(ExportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Sample the two-moons dataset.
    #[arg(long, conflicts_with = "weak_pairs")]
    two_moons: bool,
    /// Sample weak pairs from the labeled CSV given by --input.
    #[arg(long)]
    weak_pairs: bool,
    /// Number of two-moons rows.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    #[arg(long, default_value_t = 5000)]
    n_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Source dataset CSV for --weak-pairs or for conversion.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, extra: &[(String, String)]) -> Result<RunConfig, Failure> {
        let mut ov = Vec::new();
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::validation(format!("--set expects key=value, got `{kv}`")))?;
            ov.push((k.trim().to_string(), v.trim().to_string()));
        }
        ov.extend(extra.iter().cloned());
        if let Some(s) = self.seed {
            ov.push(("seed".into(), s.to_string()));
        }
        RunConfig::load(&self.config, &ov)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Weak pair CSV; switches to weak-label training.
    #[arg(long)]
    weak_pairs: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled CSV in raw units; the checkpoint's standardization is applied.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    data: Option<PathBuf>,
    #[arg(long)]
    num_classes: Option<usize>,
    /// Evaluate on the held-out split this config and seed produce.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, requires = "config")]
    seed: Option<u64>,
    /// Parameters to evaluate: teacher or student.
    #[arg(long = "with", default_value = "teacher")]
    with: String,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "supervised,mt,mlsn")]
    methods: String,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// First seed; defaults to the config seed.
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Test fixture: negate the backward rule of the named primitive.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset CSV in raw units.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    use_teacher: bool,
    /// Output directory for projection.csv and features.csv.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ExportFeatures(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn sidecar_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn gen_data(a: GenDataArgs) -> CmdResult {
    let mut m = Manifest::new("gen-data");
    m.seed = Some(a.seed);
    m.outputs.push(a.out.clone());
    let text = if a.two_moons {
        if a.input.is_some() {
            return Err(Failure::validation("--two-moons does not read --input"));
        }
        m.extra.push(("two_moons".into(), json!({ "n": a.n, "noise": a.noise })));
        write_sidecar(&m, &a.out)?;
        gen_two_moons(a.n, a.noise, &mut stream(a.seed, Stream::Data))?.to_csv_string()
    } else {
        let input = a
            .input
            .clone()
            .ok_or_else(|| Failure::validation("pass --two-moons, or --input with a dataset CSV"))?;
        m.inputs.push(input.clone());
        let ds = load_csv_dataset(&input, a.num_classes)?;
        if a.weak_pairs {
            m.extra.push(("weak_pairs".into(), json!({ "n_pairs": a.n_pairs })));
            write_sidecar(&m, &a.out)?;
            gen_weak_pairs(&ds, a.n_pairs, &mut stream(a.seed, Stream::WeakPairs))?.to_csv_string()
        } else {
            write_sidecar(&m, &a.out)?;
            ds.to_csv_string()
        }
    };
    write_file(&a.out, &text)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn write_sidecar(m: &Manifest, out: &Path) -> CmdResult {
    m.write_json(&sidecar_manifest(out))
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut extra = Vec::new();
    if let Some(w) = &a.weak_pairs {
        let abs = std::path::absolute(w).map_err(|e| Failure::validation(e.to_string()))?;
        extra.push(("weak_pairs".to_string(), abs.display().to_string()));
    }
    let rc = a.cfg.load(&extra)?;
    let config = rc.train.clone();
    let metrics_path = a.out.join("metrics.csv");
    let ckpt_path = a.out.join("checkpoint.txt");

    let mut m = Manifest::new("train");
    m.seed = Some(config.seed);
    m.inputs.push(rc.dataset.clone().expect("validated"));
    m.inputs.extend(rc.weak_pairs.clone());
    m.outputs = vec![metrics_path.clone(), ckpt_path.clone()];
    m.config = Some(rc.clone());
    m.write(&a.out)?;

    let ds = rc.load_dataset()?;
    let (split, standardizer) = prepare_split(&ds, &rc.split, config.seed)?;
    let outcome = match rc.load_weak_pairs()? {
        Some(weak) => {
            let (pool, dropped) = weak.remap_to_pool(&split, ds.len())?;
            if dropped > 0 {
                eprintln!("note: {dropped} weak pairs touch held-out rows and were skipped");
            }
            train_weak_label_mode(&config, &split, &pool)?
        }
        None => train(&config, &split)?,
    };
    write_file(&metrics_path, &metrics_csv(&outcome.metrics))?;
    let ckpt = Checkpoint {
        student: outcome.student.clone(),
        teacher: outcome.teacher.clone(),
        standardizer,
    };
    ckpt.save(&ckpt_path)?;
    let err = evaluate(outcome.eval_model(config.eval_with), &split.test)?;
    println!("final test error: {:.4}", err);
    Ok(())
}

fn parse_with(s: &str) -> Result<EvalWith, Failure> {
    match s {
        "teacher" => Ok(EvalWith::Teacher),
        "student" => Ok(EvalWith::Student),
        _ => Err(Failure::validation(format!("--with expects teacher or student, got `{s}`"))),
    }
}

fn load_raw(ckpt: &Checkpoint, path: &Path, num_classes: Option<usize>) -> Result<Dataset, Failure> {
    let k = num_classes.or(Some(ckpt.student.spec.classifier.num_classes));
    let mut ds = load_csv_dataset(path, k)?;
    if ds.dim() != ckpt.student.spec.extractor.input_dim {
        return Err(Failure::validation(format!(
            "{} has {} feature columns, the checkpoint expects {}",
            path.display(),
            ds.dim(),
            ckpt.student.spec.extractor.input_dim
        )));
    }
    if let Some(st) = &ckpt.standardizer {
        st.apply(&mut ds.features);
    }
    Ok(ds)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let with = parse_with(&a.with)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let test = match (&a.data, &a.config) {
        (Some(d), _) => load_raw(&ckpt, d, a.num_classes)?,
        (None, Some(c)) => {
            let mut ov = Vec::new();
            if let Some(s) = a.seed {
                ov.push(("seed".to_string(), s.to_string()));
            }
            let rc = RunConfig::load(c, &ov)?;
            let ds = rc.load_dataset()?;
            prepare_split(&ds, &rc.split, rc.train.seed)?.0.test
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    let model = match with {
        EvalWith::Teacher => &ckpt.teacher.params,
        EvalWith::Student => &ckpt.student,
    };
    println!("test error: {:.4}", evaluate(model, &test)?);
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> CmdResult {
    let rc = a.cfg.load(&[])?;
    let methods = a
        .methods
        .split(',')
        .map(|s| {
            Method::from_name(s.trim()).ok_or_else(|| {
                Failure::validation(format!("unknown method `{s}` (supervised, mt, mlsn, weak)"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if a.seeds == 0 {
        return Err(Failure::validation("--seeds must be at least 1"));
    }
    if methods.contains(&Method::WeakLabel) && rc.weak_pairs.is_none() {
        return Err(Failure::validation("method weak needs weak_pairs in the config"));
    }
    let base = a.base_seed.unwrap_or(rc.train.seed);
    let seeds: Vec<u64> = (base..base + a.seeds).collect();

    if let Some(out) = &a.out {
        let mut m = Manifest::new("experiment");
        m.seed = Some(base);
        m.inputs.push(rc.dataset.clone().expect("validated"));
        m.inputs.extend(rc.weak_pairs.clone());
        m.outputs = vec![out.join("summary.txt"), out.join("summary.json")];
        m.config = Some(rc.clone());
        m.extra.push(("methods".into(), json!(methods.iter().map(|m| m.name()).collect::<Vec<_>>())));
        m.extra.push(("seeds".into(), json!(seeds)));
        m.write(out)?;
    }

    let data = ExperimentData {
        dataset: rc.load_dataset()?,
        split: rc.split.clone(),
        weak_pairs: rc.load_weak_pairs()?,
    };
    let rows = run_methods(&rc.train, &data, &methods, &seeds)?;
    let table = format_summary_table(&rows);
    print!("{table}");
    if let Some(out) = &a.out {
        write_file(&out.join("summary.txt"), &table)?;
        let js = serde_json::to_string_pretty(&rows).expect("json");
        write_file(&out.join("summary.json"), &(js + "\n"))?;
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let fault = match &a.inject_fault {
        Some(name) => Some(
            OpKind::from_name(name)
                .ok_or_else(|| Failure::validation(format!("unknown primitive `{name}`")))?,
        ),
        None => None,
    };
    let rows = run_grad_suite(fault)?;
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(5);
    println!("{:<width$}  {:>8}  {:>12}  result", "check", "entries", "max rel err");
    let mut failed = 0;
    for r in &rows {
        let verdict = if r.passed() { "pass" } else { "FAIL" };
        failed += usize::from(!r.passed());
        println!("{:<width$}  {:>8}  {:>12.3e}  {verdict}", r.name, r.checked, r.max_relative_error);
    }
    if failed > 0 {
        return Err(Failure::runtime(format!(
            "{failed} of {} checks reached the tolerance {GRAD_TOLERANCE:e}",
            rows.len()
        )));
    }
    println!("all {} checks below {GRAD_TOLERANCE:e}", rows.len());
    Ok(())
}

fn cmd_export(a: ExportArgs) -> CmdResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let proj = a.out.join("projection.csv");
    let feats = a.out.join("features.csv");
    let mut m = Manifest::new("export-features");
    m.inputs = vec![a.checkpoint.clone(), a.data.clone()];
    m.outputs = vec![proj.clone(), feats.clone()];
    m.extra.push(("use_teacher".into(), json!(a.use_teacher)));
    m.write(&a.out)?;

    let ds = load_raw(&ckpt, &a.data, a.num_classes)?;
    let model = if a.use_teacher { &ckpt.teacher.params } else { &ckpt.student };
    let export = export_features(model, &ds)?;
    write_file(&proj, &export.projection_csv())?;
    write_file(&feats, &export.features_csv())?;
    println!("wrote {} and {}", proj.display(), feats.display());
    Ok(())
}
