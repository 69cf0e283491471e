//! Command-line front end. Every command resolves and validates its config,
//! loads its inputs, and only then writes under `--out`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use htcl_core::checks::{run_suite, CASES};
use htcl_core::data::{generate, GenConfig, Split};
use htcl_core::error::Error as CoreError;
use htcl_core::features::Task;
use htcl_core::gradcheck::GradCheckConfig;
use htcl_core::metrics::{evaluate, MetricsReport};
use htcl_core::train::{evaluate_model, finetune_store, predict, train_and_finetune, Classifier, TrainConfig, TrainStatus, Variant};
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::error::{HtclError, Result};
use crate::experiment::{compare, train_bias_models, train_variants};
use crate::io;
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "htcl", version, about = "Head-tail cooperative relation classification on synthetic scene graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Hpc,
    Tpc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Predcls,
    Sgcls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, env = "HTCL_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',', default_value = "20,50")]
    pub k: Vec<usize>,
    #[arg(long, value_enum, default_value = "on")]
    pub graph_constraint: OnOff,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes synthetic train and test splits.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Trains a model on `<data>/train.json` and evaluates it on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding train.json and test.json.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Re-fits one classifier of a checkpoint on a class-balanced resample.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Scores a checkpoint, or a prediction file, against one split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Matching task for prediction files.
        #[arg(long, value_enum, default_value = "predcls")]
        task: TaskArg,
    },
    /// Trains and evaluates the ablation variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated variant names; all eleven when absent.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Compares a head-biased baseline, its fine-tuned version and the
    /// cooperative model. Trains all three unless checkpoints are given.
    BiasReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, requires_all = ["finetuned", "htcl"])]
        baseline: Option<PathBuf>,
        #[arg(long)]
        finetuned: Option<PathBuf>,
        #[arg(long)]
        htcl: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Finite-difference checks of every layer and loss.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Run one case only.
        #[arg(long)]
        case: Option<String>,
    },
}

impl Common {
    fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| HtclError::Usage { arg: "--out".into(), reason: "required by this command".into() })
    }

    fn graph_constraint(&self) -> bool {
        self.graph_constraint == OnOff::On
    }

    fn check_k(&self) -> Result<()> {
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(HtclError::Usage { arg: "--k".into(), reason: "K values must be positive".into() });
        }
        Ok(())
    }

    fn train_config(&self, epochs: Option<usize>) -> Result<TrainConfig> {
        let mut cfg: TrainConfig = match &self.config {
            Some(p) => io::read_json(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        cfg.validate()?;
        self.check_k()?;
        Ok(cfg)
    }

    fn manifest(&self, command: &str, config: Value, seed: u64) -> Result<Manifest> {
        let mut m = Manifest::new(command, std::env::args().collect(), config, seed);
        if let Some(p) = &self.config {
            m.input(p)?;
        }
        Ok(m)
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn load_data(dir: &Path, name: &str) -> Result<(PathBuf, Split)> {
    let path = dir.join(format!("{name}.json"));
    let split = io::load_split(&path)?;
    Ok((path, split))
}

fn summary(report: &MetricsReport) -> Value {
    let by_k: Vec<Value> =
        report.by_k.iter().map(|m| json!({"K": m.k, "R": m.recall, "mR": m.mean_recall, "F": m.f, "M": m.m})).collect();
    json!({ "task": report.task, "graph_constraint": report.graph_constraint, "metrics": by_k })
}

fn write_eval(dir: &Path, prefix: &str, report: &MetricsReport, m: &mut Manifest) -> Result<()> {
    let report_name = format!("{prefix}report.csv");
    let class_name = format!("{prefix}class_recall.csv");
    let json_name = format!("{prefix}metrics.json");
    io::write_report(&dir.join(&report_name), report)?;
    io::write_class_recall(&dir.join(&class_name), report)?;
    io::write_json(&dir.join(&json_name), report)?;
    m.outputs.extend([report_name, class_name, json_name]);
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<Value>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| HtclError::Usage { arg: "argv".into(), reason: e.to_string() })?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Generate { common } => cmd_generate(&common),
        Command::Train { common, data, epochs } => cmd_train(&common, &data, epochs),
        Command::Finetune { common, data, checkpoint, which, epochs, lr } => {
            cmd_finetune(&common, &data, &checkpoint, which, epochs, lr)
        }
        Command::Evaluate { common, data, checkpoint, predictions, split, task } => {
            cmd_evaluate(&common, &data, checkpoint.as_deref(), predictions.as_deref(), split, task)
        }
        Command::Ablate { common, data, variants, epochs } => cmd_ablate(&common, &data, variants, epochs),
        Command::BiasReport { common, data, baseline, finetuned, htcl, epochs } => {
            let given = baseline.zip(finetuned).zip(htcl).map(|((b, f), h)| [b, f, h]);
            cmd_bias_report(&common, &data, given, epochs)
        }
        Command::Gradcheck { common, seeds, case } => cmd_gradcheck(&common, seeds, case),
    }
}

fn cmd_generate(common: &Common) -> Result<Value> {
    let mut cfg: GenConfig = match &common.config {
        Some(p) => io::read_json(p)?,
        None => GenConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = common.out()?;
    let data = generate(&cfg)?;
    io::save_split(&out.join("train.json"), &data.train)?;
    io::save_split(&out.join("test.json"), &data.test)?;
    let mut m = common.manifest("generate", to_value(&cfg), cfg.seed)?;
    m.outputs = vec!["train.json".into(), "test.json".into()];
    m.write(out)?;
    Ok(json!({
        "train_images": data.train.images.len(),
        "test_images": data.test.images.len(),
        "train_relations": data.train.num_relations(),
        "empty_classes": data.empty_classes,
    }))
}

fn cmd_train(common: &Common, data: &Path, epochs: Option<usize>) -> Result<Value> {
    let cfg = common.train_config(epochs)?;
    let out = common.out()?;
    let (train_path, train) = load_data(data, "train")?;
    let test = load_data(data, "test").ok();
    let (run, store) = train_and_finetune(&cfg, &train)?;
    let mut m = common.manifest("train", to_value(&cfg), cfg.seed)?;
    m.input(&train_path)?;
    let trained = Checkpoint::new(run.model.clone(), run.store.clone(), cfg.clone(), run.stats.counts.clone());
    trained.save(&out.join("checkpoint_trained.json"))?;
    let final_ckpt = Checkpoint::new(run.model.clone(), store, cfg.clone(), run.stats.counts.clone());
    final_ckpt.save(&out.join("checkpoint.json"))?;
    io::write_loss_curve(&out.join("loss_curve.csv"), &run.curve)?;
    io::write_epochs(&out.join("epochs.csv"), &run.epochs)?;
    m.outputs = vec!["checkpoint_trained.json".into(), "checkpoint.json".into(), "loss_curve.csv".into(), "epochs.csv".into()];
    let mut result = json!({ "status": run.status, "epochs": run.epochs });
    if let Some((test_path, test)) = &test {
        m.input(test_path)?;
        let report = evaluate_model(&final_ckpt.model, &final_ckpt.store, test, &cfg, &common.k, common.graph_constraint())?;
        write_eval(out, "", &report, &mut m)?;
        result["test"] = summary(&report);
    }
    m.write(out)?;
    if let TrainStatus::Diverged { epoch, step } = run.status {
        return Err(CoreError::Diverged { epoch, step: step as usize }.into());
    }
    Ok(result)
}

fn cmd_finetune(
    common: &Common,
    data: &Path,
    checkpoint: &Path,
    which: Which,
    epochs: Option<usize>,
    lr: Option<f64>,
) -> Result<Value> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut cfg = ckpt.config.clone();
    if let Some(p) = &common.config {
        cfg = io::read_json(p)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.finetune.epochs = e;
    }
    if let Some(lr) = lr {
        cfg.finetune.lr = lr;
    }
    cfg.validate()?;
    common.check_k()?;
    let out = common.out()?;
    let (train_path, train) = load_data(data, "train")?;
    let which = match which {
        Which::Hpc => Classifier::Hpc,
        Which::Tpc => Classifier::Tpc,
    };
    let store = finetune_store(&ckpt.model, &ckpt.store, &cfg, &train, which)?;
    let changed = store.diff_names(&ckpt.store);
    let tuned = Checkpoint::new(ckpt.model.clone(), store, cfg.clone(), ckpt.class_counts.clone());
    tuned.save(&out.join("checkpoint.json"))?;
    let mut m = common.manifest("finetune", to_value(&cfg), cfg.seed)?;
    m.input(checkpoint)?;
    m.input(&train_path)?;
    m.outputs.push("checkpoint.json".into());
    let mut result = json!({ "changed_parameters": changed });
    if let Ok((test_path, test)) = load_data(data, "test") {
        m.input(&test_path)?;
        let report = evaluate_model(&tuned.model, &tuned.store, &test, &cfg, &common.k, common.graph_constraint())?;
        write_eval(out, "", &report, &mut m)?;
        result["test"] = summary(&report);
    }
    m.write(out)?;
    Ok(result)
}

fn cmd_evaluate(
    common: &Common,
    data: &Path,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    split: SplitArg,
    task: TaskArg,
) -> Result<Value> {
    common.check_k()?;
    let name = match split {
        SplitArg::Train => "train",
        SplitArg::Test => "test",
    };
    let (split_path, split) = load_data(data, name)?;
    let (preds, task, config, seed, source) = match (checkpoint, predictions) {
        (Some(c), _) => {
            let ckpt = Checkpoint::load(c)?;
            let preds = predict(&ckpt.model, &ckpt.store, &split, &ckpt.config.forward_options())?;
            (preds, ckpt.config.task, to_value(&ckpt.config), ckpt.config.seed, c)
        }
        (None, Some(p)) => {
            let task = match task {
                TaskArg::Predcls => Task::PredCls,
                TaskArg::Sgcls => Task::SgCls,
            };
            (io::load_predictions(p)?, task, json!({ "task": task }), 0, p)
        }
        (None, None) => {
            return Err(HtclError::Usage { arg: "--checkpoint".into(), reason: "give a checkpoint or a prediction file".into() })
        }
    };
    let report = evaluate(&preds, &split, &common.k, common.graph_constraint(), task)?;
    let absent = report.absent_classes();
    if let Some(out) = &common.out {
        let mut m = common.manifest("evaluate", config, common.seed.unwrap_or(seed))?;
        m.input(source)?;
        m.input(&split_path)?;
        write_eval(out, "", &report, &mut m)?;
        if checkpoint.is_some() {
            io::save_predictions(&out.join("predictions.json"), &preds)?;
            m.outputs.push("predictions.json".into());
        }
        m.write(out)?;
    }
    let mut v = summary(&report);
    v["absent_classes"] = json!(absent);
    Ok(v)
}

fn cmd_ablate(common: &Common, data: &Path, names: Option<Vec<String>>, epochs: Option<usize>) -> Result<Value> {
    let cfg = common.train_config(epochs)?;
    let variants: Vec<Variant> = match names {
        None => Variant::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| {
                Variant::from_name(n.trim())
                    .ok_or_else(|| HtclError::Usage { arg: "--variants".into(), reason: format!("unknown variant `{n}`") })
            })
            .collect::<Result<_>>()?,
    };
    let out = common.out()?;
    let (train_path, train) = load_data(data, "train")?;
    let (test_path, test) = load_data(data, "test")?;
    let trained = train_variants(&cfg, &train, &variants)?;
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for t in &trained {
        let report = t.evaluate(&test, &common.k, common.graph_constraint())?;
        table.push(json!({ "variant": t.variant.name(), "status": t.status, "test": summary(&report) }));
        rows.push((t.variant.name().to_string(), report));
    }
    io::write_ablation(&out.join("ablation.csv"), &rows)?;
    io::write_json(&out.join("ablation.json"), &table)?;
    let mut m = common.manifest("ablate", to_value(&cfg), cfg.seed)?;
    m.input(&train_path)?;
    m.input(&test_path)?;
    m.outputs = vec!["ablation.csv".into(), "ablation.json".into()];
    m.write(out)?;
    Ok(json!({ "rows": table }))
}

fn cmd_bias_report(common: &Common, data: &Path, given: Option<[PathBuf; 3]>, epochs: Option<usize>) -> Result<Value> {
    let out = common.out()?;
    common.check_k()?;
    let (test_path, test) = load_data(data, "test")?;
    let (models, mut m) = match &given {
        Some(paths) => {
            let [b, f, h] = paths;
            let models = [Checkpoint::load(b)?, Checkpoint::load(f)?, Checkpoint::load(h)?];
            let mut m = common.manifest("bias-report", to_value(&models[2].config), models[2].config.seed)?;
            for p in paths {
                m.input(p)?;
            }
            (models, m)
        }
        None => {
            let cfg = common.train_config(epochs)?;
            let (train_path, train) = load_data(data, "train")?;
            let [b, f, h] = train_bias_models(&cfg, &train)?;
            let mut m = common.manifest("bias-report", to_value(&cfg), cfg.seed)?;
            m.input(&train_path)?;
            for (name, t) in [("baseline", &b), ("finetuned", &f), ("htcl", &h)] {
                let file = format!("checkpoint_{name}.json");
                t.checkpoint.save(&out.join(&file))?;
                m.outputs.push(file);
            }
            ([b.checkpoint, f.checkpoint, h.checkpoint], m)
        }
    };
    m.input(&test_path)?;
    let [b, f, h] = models;
    let exp = compare(b, f, h, &test, &common.k, common.graph_constraint())?;
    io::write_plot_data(&out.join("plot_data.csv"), &exp.report)?;
    io::write_deltas(&out.join("deltas.csv"), &exp.report)?;
    io::write_json(&out.join("bias_report.json"), &exp.report)?;
    m.outputs.extend(["plot_data.csv".into(), "deltas.csv".into(), "bias_report.json".into()]);
    for e in [&exp.baseline, &exp.finetuned, &exp.htcl] {
        write_eval(out, &format!("{}_", e.name), &e.report, &mut m)?;
    }
    m.write(out)?;
    Ok(json!({
        "baseline": summary(&exp.baseline.report),
        "finetuned": summary(&exp.finetuned.report),
        "htcl": summary(&exp.htcl.report),
    }))
}

fn cmd_gradcheck(common: &Common, seeds: u64, case: Option<String>) -> Result<Value> {
    if seeds == 0 {
        return Err(HtclError::Usage { arg: "--seeds".into(), reason: "must be at least 1".into() });
    }
    if let Some(c) = &case {
        if !CASES.contains(&c.as_str()) {
            return Err(HtclError::Usage { arg: "--case".into(), reason: format!("unknown case `{c}`; known: {}", CASES.join(", ")) });
        }
    }
    let start = common.seed.unwrap_or(0);
    let seed_list: Vec<u64> = (start..start + seeds).collect();
    let cfg = GradCheckConfig::default();
    let cases: Vec<_> = match &case {
        None => run_suite(&seed_list, &cfg)?,
        Some(name) => seed_list
            .iter()
            .map(|&s| {
                let report = htcl_core::checks::run_case(name, s, &cfg)?;
                Ok(htcl_core::checks::CheckCase { name: name.clone(), seed: s, report })
            })
            .collect::<Result<_>>()?,
    };
    let max = cases.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max);
    let rows: Vec<Value> = cases
        .iter()
        .map(|c| {
            json!({
                "case": c.name, "seed": c.seed, "checked": c.report.checked,
                "max_rel_err": c.report.max_rel_err, "passed": c.report.passed(),
            })
        })
        .collect();
    let failed = cases.iter().filter(|c| !c.report.passed()).count();
    let result = json!({ "step": cfg.step, "tol": cfg.tol, "max_rel_err": max, "failed": failed, "cases": rows });
    if let Some(out) = &common.out {
        io::write_json(&out.join("gradcheck.json"), &result)?;
        let mut m = common.manifest("gradcheck", json!({ "step": cfg.step, "tol": cfg.tol, "seeds": seed_list, "case": case }), start)?;
        m.outputs.push("gradcheck.json".into());
        m.write(out)?;
    }
    if failed > 0 {
        return Err(HtclError::Failed(format!("{failed} gradient checks exceed {} (max {max:e})", cfg.tol)));
    }
    Ok(result)
}
