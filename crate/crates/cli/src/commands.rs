use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde_json::{json, Value};

use aag_core::data::{
    decode_aagf, decode_class_table, generate_synthetic, load_class_table, read_aagf, save_class_table,
    write_aagf, write_atomic, ClassTextTable, Dataset, SyntheticSpec, AAGC_MAGIC, AAGF_MAGIC,
};
use aag_core::metrics::{top_k_accuracy, MetricsReport, ReportFormat};
use aag_core::model::{
    decode_checkpoint, load_checkpoint, save_checkpoint, AagModel, HistoryStrategy, ModelConfig,
    MultimodalFusion, VisualFusion, AAGM_MAGIC,
};
use aag_core::training::{eval_threads, evaluate, fit, predict_dataset};
use aag_core::{Error, Result};

use crate::config::{read_json, resolve, RunConfig};
use crate::manifest::{sidecar, RunManifest};

/// Command outcome other than a hard error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// Some ablation cells failed.
    Partial(usize),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Synthetic dataset spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub classes: PathBuf,
    /// `{"model": {...}, "train": {...}, "seed": n}`; every key optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch log (JSON lines); defaults to `<out>/train_log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub classes: PathBuf,
    /// Report path; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also report top-k accuracy for this k (clamped to the class count).
    #[arg(long)]
    pub k: Option<usize>,
    /// Write `sample_id,label,logit_0..` rows to this CSV.
    #[arg(long)]
    pub dump_logits: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    Visual,
    Multimodal,
    #[value(name = "history_len", alias = "history-len")]
    HistoryLen,
    #[value(name = "history_source", alias = "history-source")]
    HistorySource,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub classes: PathBuf,
    #[arg(long, value_enum)]
    pub grid: Grid,
    /// Base configuration shared by every cell.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub file: PathBuf,
}

fn load_split(path: &Path, table: &ClassTextTable) -> Result<Dataset> {
    let ds = read_aagf(path).map_err(|e| annotate(e, path))?;
    table.check_against(&ds.meta)?;
    Ok(ds)
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        Error::Io(io) => Error::Usage(format!("{}: {io}", path.display())),
        other => other,
    }
}

fn load_inputs(train: &Path, val: &Path, classes: &Path) -> Result<(Dataset, Dataset, ClassTextTable)> {
    let table = load_class_table(classes).map_err(|e| annotate(e, classes))?;
    let tr = load_split(train, &table)?;
    let va = load_split(val, &table)?;
    if tr.meta != va.meta {
        return Err(Error::Data(format!(
            "train and validation headers differ: {:?} vs {:?}",
            tr.meta, va.meta
        )));
    }
    Ok((tr, va, table))
}

fn load_config(path: Option<&Path>) -> Result<Option<Value>> {
    path.map(read_json).transpose()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Usage(format!("{}: {e}", dir.display())))
}

pub fn synth(args: &SynthArgs) -> Result<Outcome> {
    let mut manifest = RunManifest::start("synth");
    manifest.input("spec", &args.spec);
    let spec: SyntheticSpec = serde_json::from_value(read_json(&args.spec)?)
        .map_err(|e| Error::Config(format!("{}: {e}", args.spec.display())))?;
    let (train, val, table) = generate_synthetic(&spec)?;
    ensure_dir(&args.out)?;
    let paths = ["train.aagf", "val.aagf", "classes.aagc"].map(|n| args.out.join(n));
    write_aagf(&train, &paths[0])?;
    write_aagf(&val, &paths[1])?;
    save_class_table(&table, &paths[2])?;
    manifest.config = serde_json::to_value(&spec)?;
    manifest.seed = Some(spec.seed);
    manifest.outputs = paths.to_vec();
    manifest.write(&args.out.join("manifest.json"))?;
    println!(
        "wrote {} train / {} val samples, {} classes to {}",
        train.len(),
        val.len(),
        table.n_classes(),
        args.out.display()
    );
    Ok(Outcome::Done)
}

pub fn train(args: &TrainArgs) -> Result<Outcome> {
    let mut manifest = RunManifest::start("train");
    manifest
        .input("train", &args.train)
        .input("val", &args.val)
        .input("classes", &args.classes);
    if let Some(c) = &args.config {
        manifest.input("config", c);
    }
    let (tr, va, table) = load_inputs(&args.train, &args.val, &args.classes)?;
    let rc = resolve(load_config(args.config.as_deref())?.as_ref(), &tr.meta)?;
    let mut model = AagModel::<f32>::new(rc.model.clone())?;
    model.check_data(&tr.meta, &table)?;
    ensure_dir(&args.out)?;
    log::info!(
        "training {} parameters on {} samples ({} val)",
        model.num_parameters(),
        tr.len(),
        va.len()
    );

    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out.join("train_log.jsonl"));
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| annotate(e.into(), &log_path))?);
    let report = fit(&mut model, &tr, &va, &table, &rc.train, Some(&mut log))?;
    log.flush()?;

    let ckpt = args.out.join("model.aagm");
    save_checkpoint(&model, &ckpt)?;
    let metrics = evaluate(&model, &va, &table)?;
    let metrics_path = args.out.join("metrics.json");
    write_atomic(&metrics_path, metrics.to_json()?.as_bytes())?;

    manifest.config = serde_json::to_value(&rc)?;
    manifest.seed = Some(rc.train.seed);
    manifest.outputs = vec![ckpt, metrics_path, log_path];
    manifest.write(&args.out.join("manifest.json"))?;
    println!(
        "best epoch {} of {}: val top1 {:.4}, top5 {:.4}, class-mean recall@5 {:.4}",
        report.best_epoch,
        report.epochs_run(),
        metrics.top1,
        metrics.top5,
        metrics.class_mean_top5_recall
    );
    Ok(Outcome::Done)
}

pub fn eval(args: &EvalArgs) -> Result<Outcome> {
    let mut manifest = RunManifest::start("eval");
    manifest
        .input("model", &args.model)
        .input("data", &args.data)
        .input("classes", &args.classes);
    let model: AagModel<f32> = load_checkpoint(&args.model).map_err(|e| annotate(e, &args.model))?;
    let table = load_class_table(&args.classes).map_err(|e| annotate(e, &args.classes))?;
    let data = load_split(&args.data, &table)?;
    model.check_data(&data.meta, &table)?;
    let logits = predict_dataset(&model, &data, &table)?;
    let labels = data.labels();
    let report = MetricsReport::compute(&logits, &labels)?;
    let top_k = args
        .k
        .map(|k| top_k_accuracy(&logits, &labels, k).map(|v| (k, v)))
        .transpose()?;

    let text = match ReportFormat::from_path(&args.out) {
        ReportFormat::Json => {
            let mut v = serde_json::to_value(&report)?;
            if let Some((k, acc)) = top_k {
                v["k"] = json!(k);
                v["top_k"] = json!(acc);
            }
            serde_json::to_string_pretty(&v)?
        }
        ReportFormat::Csv => {
            let mut s = report.to_csv();
            if let Some((k, acc)) = top_k {
                let _ = writeln!(s, "top{k},{acc}");
            }
            s
        }
    };
    write_atomic(&args.out, text.as_bytes())?;
    manifest.outputs.push(args.out.clone());

    if let Some(path) = &args.dump_logits {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["sample_id".to_string(), "label".to_string()];
        header.extend((0..logits.cols()).map(|c| format!("logit_{c}")));
        w.write_record(&header).map_err(csv_err)?;
        for (i, r) in data.records.iter().enumerate() {
            let mut row = vec![r.sample_id.to_string(), r.label.to_string()];
            row.extend(logits.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
        write_atomic(path, &bytes)?;
        manifest.outputs.push(path.clone());
    }
    manifest.config = serde_json::to_value(&model.config)?;
    manifest.seed = Some(model.config.seed);
    manifest.write(&sidecar(&args.out))?;

    print!(
        "top1 {:.4}  top5 {:.4}  class-mean recall@5 {:.4}",
        report.top1, report.top5, report.class_mean_top5_recall
    );
    if let Some((k, acc)) = top_k {
        print!("  top{k} {acc:.4}");
    }
    println!();
    Ok(Outcome::Done)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Usage(format!("csv: {e}"))
}

fn tag<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Grid cells as `(label, model config)`; every cell shares the base seed
/// and training budget.
pub fn grid_cells(grid: Grid, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let cell = |f: &dyn Fn(&mut ModelConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match grid {
        Grid::Visual => VisualFusion::ABLATION
            .iter()
            .map(|&v| {
                let c = cell(&|c| {
                    c.visual_fusion = v;
                    if c.multimodal_fusion == MultimodalFusion::SelfAttnThree {
                        c.multimodal_fusion = MultimodalFusion::SelfAttnVisText;
                    }
                });
                (tag(&v), c)
            })
            .collect(),
        Grid::Multimodal => MultimodalFusion::ALL
            .iter()
            .map(|&m| (tag(&m), cell(&|c| c.multimodal_fusion = m)))
            .collect(),
        Grid::HistoryLen => [1, 3, 5, 7, 10]
            .iter()
            .map(|&n| (format!("N={n}"), cell(&|c| c.history_len = n)))
            .collect(),
        Grid::HistorySource => HistoryStrategy::ALL
            .iter()
            .map(|&h| (tag(&h), cell(&|c| c.history_strategy = h)))
            .collect(),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellResult {
    pub strategy: String,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub recall5: Option<f64>,
    pub epochs_run: Option<usize>,
    pub wall_ms: u128,
    pub error: Option<String>,
}

fn run_cell(label: &str, rc: &RunConfig, tr: &Dataset, va: &Dataset, table: &ClassTextTable) -> CellResult {
    let start = Instant::now();
    let go = || -> Result<(MetricsReport, usize)> {
        let mut model = AagModel::<f32>::new(rc.model.clone())?;
        let rep = fit(&mut model, tr, va, table, &rc.train, None)?;
        Ok((evaluate(&model, va, table)?, rep.epochs_run()))
    };
    let res = go();
    let wall_ms = start.elapsed().as_millis();
    match res {
        Ok((m, epochs)) => {
            log::info!("cell {label}: top1 {:.4}", m.top1);
            CellResult {
                strategy: label.to_string(),
                top1: Some(m.top1),
                top5: Some(m.top5),
                recall5: Some(m.class_mean_top5_recall),
                epochs_run: Some(epochs),
                wall_ms,
                error: None,
            }
        }
        Err(e) => {
            log::warn!("cell {label} failed: {e}");
            CellResult {
                strategy: label.to_string(),
                wall_ms,
                error: Some(e.to_string()),
                ..Default::default()
            }
        }
    }
}

pub fn ablate(args: &AblateArgs) -> Result<Outcome> {
    let mut manifest = RunManifest::start("ablate");
    manifest
        .input("train", &args.train)
        .input("val", &args.val)
        .input("classes", &args.classes);
    if let Some(c) = &args.config {
        manifest.input("config", c);
    }
    let (tr, va, table) = load_inputs(&args.train, &args.val, &args.classes)?;
    let base = resolve(load_config(args.config.as_deref())?.as_ref(), &tr.meta)?;
    let cells: Vec<(String, RunConfig)> = grid_cells(args.grid, &base.model)
        .into_iter()
        .map(|(l, model)| {
            (
                l,
                RunConfig {
                    model,
                    train: base.train.clone(),
                },
            )
        })
        .collect();

    // Cells are independent; each one trains single-threaded.
    let workers = eval_threads()
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .min(cells.len())
        .max(1);
    let mut results: Vec<Option<CellResult>> = vec![None; cells.len()];
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (cells, tr, va, table) = (&cells, &tr, &va, &table);
                s.spawn(move || {
                    (w..cells.len())
                        .step_by(workers)
                        .map(|i| (i, run_cell(&cells[i].0, &cells[i].1, tr, va, table)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("ablation worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let results: Vec<CellResult> = results.into_iter().map(|r| r.expect("every cell ran")).collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "strategy",
        "top1",
        "top5",
        "recall@5",
        "epochs_run",
        "wall_ms",
        "error",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &results {
        w.write_record([
            r.strategy.clone(),
            opt(r.top1),
            opt(r.top5),
            opt(r.recall5),
            r.epochs_run.map(|e| e.to_string()).unwrap_or_default(),
            r.wall_ms.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_atomic(&args.out, &bytes)?;

    manifest.config = json!({
        "grid": format!("{:?}", args.grid),
        "base": base,
        "cells": cells.iter().map(|(l, rc)| json!({"strategy": l, "config": rc})).collect::<Vec<_>>(),
    });
    manifest.seed = Some(base.train.seed);
    manifest.outputs.push(args.out.clone());
    manifest.write(&sidecar(&args.out))?;

    for r in &results {
        match (&r.error, r.top1) {
            (Some(e), _) => println!("{:<20} FAILED: {e}", r.strategy),
            (None, Some(t)) => println!("{:<20} top1 {t:.4}", r.strategy),
            _ => {}
        }
    }
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    Ok(if failed > 0 {
        Outcome::Partial(failed)
    } else {
        Outcome::Done
    })
}

pub fn inspect(args: &InspectArgs) -> Result<Outcome> {
    let bytes = fs::read(&args.file).map_err(|e| annotate(e.into(), &args.file))?;
    let magic = bytes.get(..4).unwrap_or(&[]);
    let path = args.file.display();
    if magic == AAGF_MAGIC {
        let ds = decode_aagf(&bytes).map_err(|e| annotate(e, &args.file))?;
        let m = &ds.meta;
        println!("{path}: AAGF dataset");
        println!("  n_samples       {}", ds.len());
        println!("  d_ft            {}", m.d_ft);
        println!("  d_txt           {}", m.d_txt);
        println!("  n_classes       {}", m.n_classes);
        println!("  history_len     {}", m.history_len);
        println!("  frames          {}", m.frames);
        println!("  delta_ms        {}", m.delta_ms);
        println!("  depth_source    {:?}", m.depth_source);
        println!("  description     {}", m.has_description);
        let mut counts = vec![0usize; m.n_classes];
        for r in &ds.records {
            counts[r.label] += 1;
        }
        println!("  label counts    {counts:?}");
    } else if magic == AAGC_MAGIC {
        let t = decode_class_table(&bytes).map_err(|e| annotate(e, &args.file))?;
        println!("{path}: AAGC class table");
        println!("  n_classes       {}", t.n_classes());
        println!("  d_txt           {}", t.d_txt);
        for (i, n) in t.names.iter().enumerate() {
            println!("  {i:>4}  {n}");
        }
    } else if magic == AAGM_MAGIC {
        let m: AagModel<f32> = decode_checkpoint(&bytes).map_err(|e| annotate(e, &args.file))?;
        let total = m.num_parameters();
        println!("{path}: AAGM checkpoint");
        println!("  parameters      {total}");
        println!("  trainable       {total}");
        println!("  tensors         {}", m.store.len());
        let mut groups: Vec<(String, usize)> = Vec::new();
        for p in m.store.iter() {
            let g = p.name.split('.').next().unwrap_or("").to_string();
            match groups.last_mut() {
                Some((name, n)) if *name == g => *n += p.value.len(),
                _ => groups.push((g, p.value.len())),
            }
        }
        for (g, n) in groups {
            println!("    {g:<16}{n}");
        }
        println!("  config          {}", serde_json::to_string(&m.config)?);
    } else {
        return Err(Error::Format {
            offset: 0,
            msg: format!("{path}: unknown magic {:?}", String::from_utf8_lossy(magic)),
        });
    }
    Ok(Outcome::Done)
}
