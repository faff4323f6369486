//! `illab` subcommands: gen-data, train, eval, compare-losses, grad-cam.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::config::{DataKind, RunConfig, SplitSpec};
use crate::data::{
    generate_patch_task, generate_synthetic, save_dataset, stratified_split, stratified_split_counts, write_pgm, Dataset,
    Manifest, Split, SplitFiles,
};
use crate::ensemble::{ensemble_average, write_predictions, PredictionSet};
use crate::error::{Error, Result};
use crate::explain::{grad_cam, write_saliency};
use crate::losses::LossKind;
use crate::metrics::{format_table, json_num, per_class_report, MetricReport};
use crate::model::{load_checkpoint, predict_proba, save_checkpoint, Architecture, ModelParams};
use crate::train::{init_model, train};

const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Parser)]
#[command(name = "illab", version, about = "Imbalanced multi-label loss workbench")]
pub struct Cli {
    /// Run config file (sectioned key = value).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset directory with manifest and split CSVs.
    GenData(GenDataArgs),
    /// Train one model and write its checkpoint and history.
    Train(TrainArgs),
    /// Evaluate one checkpoint, or the average of several.
    Eval(EvalArgs),
    /// Train one model per loss variant and tabulate mean AUC and F1.
    CompareLosses(CompareArgs),
    /// Export a Grad-CAM saliency map for one image.
    GradCam(GradCamArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// `synthetic` or `patches`.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub num_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Checkpoint path; defaults to `<out>/model.ckpt`.
    #[arg(long, value_name = "PATH")]
    pub ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Checkpoint; repeat to evaluate the ensemble average.
    #[arg(long, value_name = "PATH", required = true)]
    pub ckpt: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub replications: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradCamArgs {
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    /// Grayscale PGM image.
    #[arg(long, value_name = "PATH")]
    pub image: PathBuf,
    /// Class index.
    #[arg(long)]
    pub class: usize,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    match execute(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let mut overrides = cli.set.clone();
    let mut flag = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            overrides.push(format!("{key}={v}"));
        }
    };
    flag("seed", cli.seed.map(|s| s.to_string()));
    flag("paths.out", path_value(&cli.out));
    match &cli.command {
        Command::GenData(a) => {
            flag("data.kind", a.kind.as_deref().map(quoted));
            flag("data.num_samples", a.num_samples.map(|n| n.to_string()));
        }
        Command::Train(a) => {
            flag("paths.data", path_value(&a.data));
            flag("train.arch", a.arch.as_deref().map(quoted));
            flag("loss.variant", a.loss.as_deref().map(quoted));
            flag("train.epochs", a.epochs.map(|n| n.to_string()));
        }
        Command::Eval(a) => {
            flag("paths.data", path_value(&a.data));
            flag("bootstrap.replications", a.replications.map(|n| n.to_string()));
        }
        Command::CompareLosses(a) => {
            flag("paths.data", path_value(&a.data));
            flag("train.arch", a.arch.as_deref().map(quoted));
            flag("train.epochs", a.epochs.map(|n| n.to_string()));
            flag("bootstrap.replications", a.replications.map(|n| n.to_string()));
        }
        Command::GradCam(_) => {}
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let out_dir = cfg.paths.out.clone();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    write_file(&out_dir.join("config.toml"), cfg.to_text())?;
    let text = match &cli.command {
        Command::GenData(_) => cmd_gen_data(&cfg, &out_dir)?,
        Command::Train(a) => {
            let ckpt = a.ckpt.clone().unwrap_or_else(|| out_dir.join("model.ckpt"));
            cmd_train(&cfg, &cfg.paths.data, &ckpt)?
        }
        Command::Eval(a) => cmd_eval(&cfg, &a.ckpt, &cfg.paths.data, &a.split, &out_dir)?,
        Command::CompareLosses(_) => cmd_compare_losses(&cfg, &cfg.paths.data, &out_dir)?,
        Command::GradCam(a) => cmd_grad_cam(&a.ckpt, &a.image, a.class, &out_dir)?,
    };
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn path_value(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| quoted(&p.display().to_string()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    write_file(path, s)
}

fn split_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<Split> {
    match cfg.split() {
        SplitSpec::Counts(c) => stratified_split_counts(ds, c, cfg.seed),
        SplitSpec::Fractions(f) => stratified_split(ds, f, cfg.seed),
    }
}

/// Writes split CSVs, manifest and a prevalence table into `dir`.
pub fn cmd_gen_data(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let (all, image_shape, images) = match cfg.data.kind {
        DataKind::Synthetic => (generate_synthetic(&cfg.generator_spec())?, None, None),
        DataKind::Patches => {
            let task = generate_patch_task(&cfg.patch_spec())?;
            let s = cfg.data.image_size;
            (task.dataset, Some((s, s)), Some(task.images))
        }
    };
    let split = split_dataset(cfg, &all)?;
    let mut splits = std::collections::BTreeMap::new();
    for (name, ds) in SPLITS.iter().zip([&split.train, &split.val, &split.test]) {
        let files = SplitFiles {
            features: format!("{name}_features.csv"),
            labels: format!("{name}_labels.csv"),
        };
        save_dataset(ds, &dir.join(&files.features), &dir.join(&files.labels))?;
        splits.insert(name.to_string(), files);
    }
    let image_dir = images.as_ref().map(|_| "images".to_string());
    if let (Some(images), Some(sub)) = (&images, &image_dir) {
        let img_dir = dir.join(sub);
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        for (id, img) in all.ids().iter().zip(images) {
            write_pgm(&img_dir.join(format!("{id}.pgm")), img)?;
        }
    }
    Manifest {
        num_classes: all.num_classes(),
        feature_dim: all.feature_dim(),
        class_names: all.class_names().to_vec(),
        splits,
        image_dir,
        image_shape,
    }
    .write(dir)?;

    let parts = [("all", &all), ("train", &split.train), ("val", &split.val), ("test", &split.test)];
    let mut rows = vec![
        std::iter::once("Class".to_string())
            .chain(parts.iter().map(|(n, _)| n.to_string()))
            .collect::<Vec<_>>(),
        std::iter::once("n".to_string())
            .chain(parts.iter().map(|(_, d)| d.len().to_string()))
            .collect(),
    ];
    let prevalences: Vec<Vec<f64>> = parts.iter().map(|(_, d)| d.prevalence()).collect();
    let mut classes = Map::new();
    for (k, name) in all.class_names().iter().enumerate() {
        let mut row = vec![name.clone()];
        let mut obj = Map::new();
        for ((part, _), p) in parts.iter().zip(&prevalences) {
            row.push(format!("{:.4}", p[k]));
            obj.insert(part.to_string(), json_num(p[k]));
        }
        rows.push(row);
        classes.insert(name.clone(), Value::Object(obj));
    }
    let sizes: Map<String, Value> = parts.iter().map(|(n, d)| (n.to_string(), json!(d.len()))).collect();
    write_json(
        &dir.join("prevalence.json"),
        &json!({ "sizes": sizes, "prevalence": classes, "warnings": split.warnings }),
    )?;
    let mut text = format_table(&rows);
    for w in &split.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    write_file(&dir.join("prevalence.txt"), &text)?;
    Ok(text)
}

fn load_splits(data_dir: &Path, names: &[&str]) -> Result<(Manifest, Vec<Dataset>)> {
    let manifest = Manifest::read(data_dir)?;
    let sets = names
        .iter()
        .map(|n| manifest.load_split(data_dir, n))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, sets))
}

/// Trains on the `train` split, selects on `val`, writes the best checkpoint
/// and `history.csv` next to it.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, ckpt: &Path) -> Result<String> {
    let (_, sets) = load_splits(data_dir, &["train", "val"])?;
    let (train_set, val_set) = (&sets[0], &sets[1]);
    let arch = cfg.architecture()?;
    let tcfg = cfg.train_config(cfg.loss_kind()?, train_set.class_names());
    let outcome = train(init_model(arch, train_set, cfg.seed)?, train_set, val_set, &tcfg)?;
    if let Some(parent) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_checkpoint(ckpt, &outcome.best)?;
    let history = ckpt.with_file_name("history.csv");
    outcome.history.write_csv(&history)?;
    let best = match outcome.best_epoch {
        Some(e) => format!(
            "epoch {e}, val mean AUC {:.4}",
            outcome.history.records[e - 1].val_mean_auc
        ),
        None => "initial parameters".into(),
    };
    Ok(format!(
        "{arch} / {} / {} epochs: best {best}\ncheckpoint {}\nhistory {}\n",
        tcfg.loss.variant,
        tcfg.epochs,
        ckpt.display(),
        history.display()
    ))
}

fn check_compatible(params: &ModelParams, manifest: &Manifest, path: &Path) -> Result<()> {
    if params.input_dim() != manifest.feature_dim || params.num_classes() != manifest.num_classes {
        return Err(Error::Contract(format!(
            "{} expects {} features and {} classes, dataset has {} and {}",
            path.display(),
            params.input_dim(),
            params.num_classes(),
            manifest.feature_dim,
            manifest.num_classes
        )));
    }
    Ok(())
}

/// Predicts `split` with every checkpoint, averages them when there are
/// several, and writes the metric report and predictions.
pub fn cmd_eval(cfg: &RunConfig, ckpts: &[PathBuf], data_dir: &Path, split: &str, out_dir: &Path) -> Result<String> {
    let (manifest, sets) = load_splits(data_dir, &[split])?;
    let ds = &sets[0];
    let mut set = PredictionSet::new();
    for path in ckpts {
        let params = load_checkpoint(path)?;
        check_compatible(&params, &manifest, path)?;
        set.push(path.display().to_string(), predict_proba(&params, ds.features())?)?;
    }
    let probs = ensemble_average(&set)?;
    let report = per_class_report(&probs, ds.labels(), ds.class_names(), Some(&cfg.bootstrap_spec()))?;
    write_predictions(&out_dir.join("predictions.csv"), ds.ids(), &probs)?;
    let mut json = report.to_json();
    json["members"] = json!(set.names());
    json["split"] = json!(split);
    write_json(&out_dir.join("report.json"), &json)?;
    let text = report.to_text();
    write_file(&out_dir.join("report.txt"), &text)?;
    Ok(text)
}

/// One row of the loss comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub loss: LossKind,
    pub report: MetricReport,
}

/// Trains one model per loss variant with identical settings and evaluates
/// each best checkpoint on the test split.
pub fn compare_losses(cfg: &RunConfig, train_set: &Dataset, val_set: &Dataset, test_set: &Dataset) -> Result<Vec<ComparisonRow>> {
    let arch = cfg.architecture()?;
    let init = init_model(arch, train_set, cfg.seed)?;
    let spec = cfg.bootstrap_spec();
    LossKind::ALL
        .iter()
        .map(|&loss| {
            let tcfg = cfg.train_config(loss, train_set.class_names());
            let outcome = train(init.clone(), train_set, val_set, &tcfg)?;
            let probs = predict_proba(&outcome.best, test_set.features())?;
            let mut report = per_class_report(&probs, test_set.labels(), test_set.class_names(), None)?;
            report.attach_mean_ci(&probs, test_set.labels(), &spec)?;
            Ok(ComparisonRow { loss, report })
        })
        .collect()
}

pub fn comparison_json(rows: &[ComparisonRow]) -> Value {
    let rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            let m = &r.report.mean;
            let ci = m.ci.as_ref();
            json!({
                "loss": r.loss.name(),
                "auroc": json_num(m.auc),
                "auroc_ci": ci.map(|c| json!([json_num(c.auc.lo), json_num(c.auc.hi)])),
                "f1": json_num(m.f1),
                "f1_ci": ci.map(|c| json!([json_num(c.f1.lo), json_num(c.f1.hi)])),
                "warnings": r.report.warnings,
            })
        })
        .collect();
    json!({ "rows": rows })
}

pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let range = |lo: f64, hi: f64| format!("{lo:.3}-{hi:.3}");
    let mut table = vec![vec![
        "Loss".to_string(),
        "AUROC".into(),
        "CI".into(),
        "F1".into(),
        "CI".into(),
    ]];
    for r in rows {
        let m = &r.report.mean;
        let (auc_ci, f1_ci) = match &m.ci {
            Some(c) => (range(c.auc.lo, c.auc.hi), range(c.f1.lo, c.f1.hi)),
            None => ("-".into(), "-".into()),
        };
        table.push(vec![
            r.loss.name().into(),
            format!("{:.3}", m.auc),
            auc_ci,
            format!("{:.3}", m.f1),
            f1_ci,
        ]);
    }
    format_table(&table)
}

pub fn cmd_compare_losses(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<String> {
    let (_, sets) = load_splits(data_dir, &SPLITS)?;
    let rows = compare_losses(cfg, &sets[0], &sets[1], &sets[2])?;
    write_json(&out_dir.join("compare.json"), &comparison_json(&rows))?;
    let text = comparison_text(&rows);
    write_file(&out_dir.join("compare.txt"), &text)?;
    Ok(text)
}

/// Writes `saliency.pgm` and `composite.pgm` for one image and class.
pub fn cmd_grad_cam(ckpt: &Path, image_path: &Path, class: usize, out_dir: &Path) -> Result<String> {
    let params = load_checkpoint(ckpt)?;
    if params.architecture() != Architecture::TinyCnn {
        return Err(Error::UnsupportedArchitecture(format!(
            "grad-cam needs a {} checkpoint, {} is {}",
            Architecture::TinyCnn,
            ckpt.display(),
            params.architecture()
        )));
    }
    let image = crate::data::read_pgm(image_path)?;
    let map = grad_cam(&params, &image, class)?;
    let sal_path = out_dir.join("saliency.pgm");
    let comp_path = out_dir.join("composite.pgm");
    let sal = write_saliency(&image, &map, &sal_path, &comp_path)?;
    let best = sal
        .pixels()
        .iter()
        .enumerate()
        .max_by_key(|&(i, &v)| (v, std::cmp::Reverse(i)))
        .map_or(0, |(i, _)| i);
    let (px, py) = (best % sal.width(), best / sal.width());
    Ok(format!(
        "class {class}: peak at ({px}, {py})\nsaliency {}\ncomposite {}\n",
        sal_path.display(),
        comp_path.display()
    ))
}
