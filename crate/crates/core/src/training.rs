//! AdamW, early stopping and the epoch loop.
//!
//! Training is single-threaded so that a seed fixes every bit of the
//! result. Evaluation may fan out over samples (feature `parallel`).

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassTextTable, Dataset, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::AagModel;
use crate::numerics::{Graph, ParamStore, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 100,
            patience: 10,
            min_delta: 0.001,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.min_delta < 0.0 {
            return bad("min_delta must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.weight_decay < 0.0 || self.adam_eps <= 0.0 {
            return bad("weight_decay must be >= 0 and adam_eps > 0");
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One AdamW update from the gradients held in the store.
///
/// Weight decay `θ ← θ − lr·wd·θ` is applied before, and separately from,
/// the bias-corrected adaptive step. Gradients are left untouched.
pub fn adamw_step<T: Scalar>(
    store: &mut ParamStore<T>,
    state: &mut OptimizerState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Usage(
            "optimizer state does not match the parameter store".into(),
        ));
    }
    if let Some(p) = store.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient in parameter {}",
            p.name
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = T::of(1.0 - cfg.lr * cfg.weight_decay);
    for (i, p) in store.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, (w, &g)) in p.value.data_mut().iter_mut().zip(p.grad.data()).enumerate() {
            *w = *w * decay;
            let g = g.as_f64();
            let mk = b1 * m[k].as_f64() + (1.0 - b1) * g;
            let vk = b2 * v[k].as_f64() + (1.0 - b2) * g * g;
            m[k] = T::of(mk);
            v[k] = T::of(vk);
            let step = cfg.lr * (mk / c1) / ((vk / c2).sqrt() + cfg.adam_eps);
            *w = T::of(w.as_f64() - step);
        }
    }
    Ok(())
}

/// Patience counter over a metric that should increase.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub stale: usize,
    epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: None,
            best_epoch: 0,
            stale: 0,
            epochs: 0,
        }
    }

    /// An epoch improves iff `metric > best + min_delta`; the first always does.
    pub fn observe(&mut self, metric: f64) -> Verdict {
        self.epochs += 1;
        let improved = match self.best {
            None => true,
            Some(b) => metric > b + self.min_delta,
        };
        if improved {
            self.best = Some(metric);
            self.best_epoch = self.epochs;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Verdict {
            improved,
            stop: self.stale >= self.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: f64,
    pub val_top5: f64,
    pub improved: bool,
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub stopped_early: bool,
}

impl FitReport {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }
}

/// Number of evaluation threads: `AAG_THREADS` if set and positive.
pub fn eval_threads() -> Option<usize> {
    std::env::var("AAG_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Logits for every record, `N × C`. No parameter is touched.
pub fn predict_dataset<T: Scalar>(
    model: &AagModel<T>,
    data: &Dataset,
    table: &ClassTextTable,
) -> Result<Tensor<T>> {
    if data.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty dataset".into()));
    }
    #[cfg(feature = "parallel")]
    if let Some(n) = eval_threads() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
        return pool.install(|| model.predict(&data.records, table));
    }
    model.predict(&data.records, table)
}

pub fn evaluate<T: Scalar>(
    model: &AagModel<T>,
    data: &Dataset,
    table: &ClassTextTable,
) -> Result<MetricsReport> {
    let logits = predict_dataset(model, data, table)?;
    MetricsReport::compute(&logits, &data.labels())
}

/// Mean loss and one optimizer step on a batch.
pub fn train_step(
    model: &mut AagModel<f32>,
    state: &mut OptimizerState<f32>,
    batch: &[&EmbeddingRecord],
    table: &ClassTextTable,
    cfg: &TrainConfig,
    dropout_seed: u64,
) -> Result<f64> {
    model.store.zero_grad();
    let grads = {
        let mut g = Graph::new(&model.store);
        if model.config.dropout > 0.0 {
            g = g.with_dropout_rng(ChaCha8Rng::seed_from_u64(dropout_seed));
        }
        let loss = model.loss(&mut g, batch, table)?;
        let value = g.value(loss).data()[0] as f64;
        (g.backward(loss)?, value)
    };
    model.store.accumulate(&grads.0);
    adamw_step(&mut model.store, state, cfg)?;
    Ok(grads.1)
}

/// Trains until early stopping or `max_epochs`, then restores the weights
/// of the best validation epoch. One JSON object per epoch goes to `log`.
pub fn fit(
    model: &mut AagModel<f32>,
    train: &Dataset,
    val: &Dataset,
    table: &ClassTextTable,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Usage(
            "training and validation splits must be non-empty".into(),
        ));
    }
    model.check_data(&train.meta, table)?;
    model.check_data(&val.meta, table)?;

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::new(&model.store);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best = model.store.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&EmbeddingRecord> = chunk.iter().map(|&i| &train.records[i]).collect();
            step += 1;
            let loss = train_step(
                model,
                &mut state,
                &batch,
                table,
                cfg,
                cfg.seed ^ step.rotate_left(32),
            )?;
            total += loss * batch.len() as f64;
        }
        let report = evaluate(model, val, table)?;
        let verdict = stopper.observe(report.top1);
        if verdict.improved {
            best = model.store.clone();
        }
        let rec = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_top1: report.top1,
            val_top5: report.top5,
            improved: verdict.improved,
            elapsed_ms: start.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, val top1 {:.4}{}",
            rec.train_loss,
            rec.val_top1,
            if rec.improved { " *" } else { "" }
        );
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        epochs.push(rec);
        if verdict.stop {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    model.store.load_values(&best)?;
    Ok(FitReport {
        best_epoch: stopper.best_epoch,
        best_val_top1: stopper.best.unwrap_or(0.0),
        epochs,
        stopped_early,
    })
}
