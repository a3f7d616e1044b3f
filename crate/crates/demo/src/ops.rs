use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use aag_core::attention::sinusoidal_pe;
use aag_core::data::{
    generate_synthetic, ClassTextTable, Dataset, EmbeddingRecord, LabelRule, SyntheticSpec,
};
use aag_core::model::{AagModel, HistoryStrategy, ModelConfig, MultimodalFusion, VisualFusion};
use aag_core::numerics::{kernels, Graph, Tensor};
use aag_core::training::{evaluate, train_step, OptimizerState, TrainConfig};
use aag_core::{Error, Result};

/// Row-major `len × dim` sinusoidal table.
pub fn positional_encoding(len: usize, dim: usize) -> Result<Vec<f32>> {
    Ok(sinusoidal_pe::<f32>(len, dim)?.into_data())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionMap {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fusion {
    pub fused: Vec<f32>,
    /// Per-dimension weights for soft attention, empty otherwise.
    pub soft_weights: Vec<f32>,
    pub maps: Vec<AttentionMap>,
}

fn parse<T: serde::de::DeserializeOwned>(tag: &str, what: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(tag.to_string()))
        .map_err(|_| Error::Config(format!("unknown {what} \"{tag}\"")))
}

/// Fuses two equal-width vectors with a freshly initialized model.
///
/// The vectors stand in for the projected RGB and depth embeddings, so
/// the projections are skipped.
pub fn fuse(strategy: &str, rgb: &[f32], depth: &[f32], heads: usize, seed: u64) -> Result<Fusion> {
    let visual_fusion: VisualFusion = parse(strategy, "visual fusion")?;
    let d = rgb.len();
    if depth.len() != d {
        return Err(Error::Shape(format!(
            "rgb has {d} values, depth has {}",
            depth.len()
        )));
    }
    let model = AagModel::<f32>::new(ModelConfig {
        visual_fusion,
        history_strategy: HistoryStrategy::None,
        multimodal_fusion: MultimodalFusion::Sum,
        seed,
        ..ModelConfig::tiny(d, heads, 2, 1)
    })?;
    let mut g = Graph::new(&model.store);
    g.enable_attention_probe();
    let r = g.constant(Tensor::row_vector(rgb.to_vec()));
    let dn = g.constant(Tensor::row_vector(depth.to_vec()));
    let out = model.fuse_visual(&mut g, r, Some(dn))?;
    let soft_weights = match visual_fusion {
        VisualFusion::SoftAttention => kernels::softmax(&Tensor::row_vector(depth.to_vec()), 1)?.into_data(),
        _ => Vec::new(),
    };
    let maps = g
        .attention_maps()
        .into_iter()
        .map(|(name, t)| AttentionMap {
            name,
            rows: t.rows(),
            cols: t.cols(),
            weights: t.into_data(),
        })
        .collect();
    Ok(Fusion {
        fused: g.value(out).data().to_vec(),
        soft_weights,
        maps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub loss: f64,
    pub val_top1: f64,
}

/// Epoch-at-a-time training on a small synthetic task, for live plotting.
pub struct ToyTrainer {
    model: AagModel<f32>,
    state: OptimizerState<f32>,
    train: Dataset,
    val: Dataset,
    table: ClassTextTable,
    cfg: TrainConfig,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    epoch: usize,
    step: u64,
}

impl ToyTrainer {
    pub fn new(rule: &str, history: &str, d_model: usize, lr: f64, seed: u64) -> Result<Self> {
        let label_rule: LabelRule = parse(rule, "label rule")?;
        let history_strategy: HistoryStrategy = parse(history, "history strategy")?;
        let spec = SyntheticSpec {
            label_rule,
            n_samples: 250,
            d_ft: 8,
            d_txt: 8,
            noise_sigma: 0.3,
            with_description: true,
            seed,
            ..Default::default()
        };
        let (train, val, table) = generate_synthetic(&spec)?;
        let model = AagModel::<f32>::new(ModelConfig {
            d_ft: spec.d_ft,
            d_txt: spec.d_txt,
            history_strategy,
            fusion_layers: 1,
            seed,
            ..ModelConfig::tiny(d_model, 2, spec.n_classes, spec.history_len)
        })?;
        model.check_data(&train.meta, &table)?;
        let cfg = TrainConfig {
            lr,
            batch_size: 25,
            seed,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(Self {
            state: OptimizerState::new(&model.store),
            order: (0..train.len()).collect(),
            model,
            train,
            val,
            table,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
            step: 0,
        })
    }

    pub fn epoch(&mut self) -> Result<EpochPoint> {
        self.order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in self.order.chunks(self.cfg.batch_size) {
            let batch: Vec<&EmbeddingRecord> = chunk.iter().map(|&i| &self.train.records[i]).collect();
            self.step += 1;
            let loss = train_step(
                &mut self.model,
                &mut self.state,
                &batch,
                &self.table,
                &self.cfg,
                self.step,
            )?;
            total += loss * batch.len() as f64;
        }
        self.epoch += 1;
        Ok(EpochPoint {
            epoch: self.epoch,
            loss: total / self.train.len() as f64,
            val_top1: evaluate(&self.model, &self.val, &self.table)?.top1,
        })
    }

    pub fn parameters(&self) -> usize {
        self.model.num_parameters()
    }
}
