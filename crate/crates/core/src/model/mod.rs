//! The anticipation network: per-modality projections, visual fusion,
//! action-history encoding, multimodal fusion and a linear classifier.
//!
//! Parameters are allocated only for the strategies a configuration
//! selects, always in the same order, from one seeded generator.

mod checkpoint;
mod config;
mod history;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, AAGM_MAGIC, AAGM_VERSION,
};
pub use config::{HistoryStrategy, InputKind, Mode, ModelConfig, MultimodalFusion, VisualFusion};
pub use history::{
    anticipate_with_predicted_history, history_window, roll_history, HistoryBuffer, HistoryEncoding,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{prepend_cls, sinusoidal_pe, EncoderStack, LayerOptions, StackMode};
use crate::data::{ClassTextTable, DatasetMeta, DepthSource, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::numerics::{init, Graph, NodeId, ParamId, ParamStore, Scalar, Tensor};

/// `x·W + b`; the bias is optional.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init::glorot(rng, fan_in, fan_out));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out])));
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoEncoder {
    pub stack: EncoderStack,
    pub cls: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mixer {
    /// Parameter-free (sum, soft attention, RGB only).
    None,
    Stack(EncoderStack),
    Linear(Linear),
}

/// Parameter handles for one configuration. Independent of the scalar type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub video_rgb: Option<VideoEncoder>,
    pub video_depth: Option<VideoEncoder>,
    pub proj_rgb: Linear,
    pub proj_depth: Option<Linear>,
    pub visual: Mixer,
    pub history_stack: Option<EncoderStack>,
    pub proj_txt: Linear,
    pub multimodal: Mixer,
    pub classifier: Linear,
}

#[derive(Clone, Debug)]
pub struct AagModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub layout: Layout,
}

fn history_tag(s: HistoryStrategy) -> &'static str {
    match s {
        HistoryStrategy::None => "none",
        HistoryStrategy::Concat => "concat",
        HistoryStrategy::Transformer => "transformer",
        HistoryStrategy::Description => "description",
    }
}

impl<T: Scalar> AagModel<T> {
    /// Validates the configuration and draws every parameter from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut store = ParamStore::new();
        let d = c.d_model;
        let uses_depth = c.uses_depth();

        let video = |store: &mut ParamStore<T>, name: &str, rng: &mut ChaCha8Rng| -> Result<VideoEncoder> {
            let stack = EncoderStack::new(
                store,
                name,
                StackMode::SelfAttention,
                c.video_layers,
                c.d_ft,
                c.video_heads,
                c.ffn_mult * c.d_ft,
                rng,
            )?;
            let cls = store.add(format!("{name}.cls"), init::normal(rng, 1, c.d_ft, 0.02));
            Ok(VideoEncoder { stack, cls })
        };
        let (video_rgb, video_depth) = if c.input == InputKind::Video {
            let rgb = video(&mut store, "video_rgb", &mut rng)?;
            let depth = if uses_depth {
                Some(video(&mut store, "video_depth", &mut rng)?)
            } else {
                None
            };
            (Some(rgb), depth)
        } else {
            (None, None)
        };

        let proj_rgb = Linear::new(&mut store, "proj_rgb", c.d_ft, d, true, &mut rng);
        let proj_depth = uses_depth.then(|| Linear::new(&mut store, "proj_depth", c.d_ft, d, true, &mut rng));

        let ffn = c.ffn_mult * d;
        let visual = if c.multimodal_fusion == MultimodalFusion::SelfAttnThree {
            Mixer::None
        } else {
            match c.visual_fusion {
                VisualFusion::CrossQRgb | VisualFusion::CrossQDepth => Mixer::Stack(EncoderStack::new(
                    &mut store,
                    "visual",
                    StackMode::Cross,
                    c.fusion_layers,
                    d,
                    c.fusion_heads,
                    ffn,
                    &mut rng,
                )?),
                VisualFusion::SelfAttention => Mixer::Stack(EncoderStack::new(
                    &mut store,
                    "visual",
                    StackMode::SelfAttention,
                    c.fusion_layers,
                    d,
                    c.fusion_heads,
                    ffn,
                    &mut rng,
                )?),
                VisualFusion::Concat => {
                    Mixer::Linear(Linear::new(&mut store, "visual.concat", 2 * d, d, true, &mut rng))
                }
                VisualFusion::Sum | VisualFusion::SoftAttention | VisualFusion::NoneRgbOnly => Mixer::None,
            }
        };

        let history_stack = if c.history_strategy == HistoryStrategy::Transformer {
            Some(EncoderStack::new(
                &mut store,
                "history",
                StackMode::SelfAttention,
                c.fusion_layers,
                c.d_txt,
                c.fusion_heads,
                c.ffn_mult * c.d_txt,
                &mut rng,
            )?)
        } else {
            None
        };
        let proj_txt = Linear::new(
            &mut store,
            &format!("proj_txt.{}", history_tag(c.history_strategy)),
            c.text_width(),
            d,
            true,
            &mut rng,
        );

        let multimodal = match c.multimodal_fusion {
            MultimodalFusion::SelfAttnThree | MultimodalFusion::SelfAttnVisText => {
                Mixer::Stack(EncoderStack::new(
                    &mut store,
                    "multimodal",
                    StackMode::SelfAttention,
                    c.fusion_layers,
                    d,
                    c.fusion_heads,
                    ffn,
                    &mut rng,
                )?)
            }
            MultimodalFusion::Concat => Mixer::Linear(Linear::new(
                &mut store,
                "multimodal.concat",
                2 * d,
                d,
                true,
                &mut rng,
            )),
            MultimodalFusion::Sum => Mixer::None,
        };
        let classifier = Linear::new(
            &mut store,
            "classifier",
            d,
            c.n_classes,
            c.classifier_bias,
            &mut rng,
        );

        Ok(Self {
            layout: Layout {
                video_rgb,
                video_depth,
                proj_rgb,
                proj_depth,
                visual,
                history_stack,
                proj_txt,
                multimodal,
                classifier,
            },
            store,
            config,
        })
    }

    pub fn cast<U: Scalar>(&self) -> AagModel<U> {
        AagModel {
            config: self.config.clone(),
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn opts(&self) -> LayerOptions {
        self.config.layer_options()
    }

    /// Checks that a dataset and class table fit this model.
    pub fn check_data(&self, meta: &DatasetMeta, table: &ClassTextTable) -> Result<()> {
        let c = &self.config;
        let mismatch = |what: &str, model: usize, data: usize| {
            Err(Error::Config(format!(
                "{what}: model expects {model}, data has {data}"
            )))
        };
        if meta.d_ft != c.d_ft {
            return mismatch("d_ft", c.d_ft, meta.d_ft);
        }
        if meta.d_txt != c.d_txt {
            return mismatch("d_txt", c.d_txt, meta.d_txt);
        }
        if meta.n_classes != c.n_classes {
            return mismatch("n_classes", c.n_classes, meta.n_classes);
        }
        if meta.frames != c.frames() {
            return mismatch("frames per sample", c.frames(), meta.frames);
        }
        if meta.depth_source == DepthSource::Absent && c.uses_depth() {
            return Err(Error::Config(
                "dataset has no depth stream; only visual_fusion none_rgb_only can run on it".into(),
            ));
        }
        if c.history_strategy == HistoryStrategy::Description && !meta.has_description {
            return Err(Error::Config(
                "description history needs a dataset with description embeddings".into(),
            ));
        }
        table.check_against(meta)
    }

    fn frames_node(&self, g: &mut Graph<'_, T>, data: &[f32]) -> Result<NodeId> {
        let t = Tensor::matrix(
            self.config.frames(),
            self.config.d_ft,
            data.iter().map(|&v| T::of(v as f64)).collect(),
        )?;
        Ok(g.constant(t))
    }

    /// Positional encoding, CLS token, self-attention stack; returns the CLS row.
    pub fn temporal_aggregate(
        &self,
        g: &mut Graph<'_, T>,
        frames: NodeId,
        enc: &VideoEncoder,
    ) -> Result<NodeId> {
        let (len, dim) = g.value(frames).require_matrix("video window")?;
        let pe = g.constant(sinusoidal_pe(len, dim)?);
        let x = g.add(frames, pe)?;
        let seq = prepend_cls(g, Some(x), enc.cls)?;
        let out = enc.stack.forward(g, seq, None, &self.opts())?;
        g.slice_rows(out, 0, 1)
    }

    /// One `1 × d_ft` embedding per modality, aggregating a window in video mode.
    fn visual_inputs(&self, g: &mut Graph<'_, T>, rec: &EmbeddingRecord) -> Result<(NodeId, Option<NodeId>)> {
        let rgb = self.frames_node(g, &rec.rgb)?;
        let rgb = match &self.layout.video_rgb {
            Some(enc) => self.temporal_aggregate(g, rgb, enc)?,
            None => rgb,
        };
        if self.layout.proj_depth.is_none() {
            return Ok((rgb, None));
        }
        let depth = self.frames_node(g, &rec.depth)?;
        let depth = match &self.layout.video_depth {
            Some(enc) => self.temporal_aggregate(g, depth, enc)?,
            None => depth,
        };
        Ok((rgb, Some(depth)))
    }

    /// Combines the projected RGB and depth vectors into one `1 × D` vector.
    pub fn fuse_visual(&self, g: &mut Graph<'_, T>, rgb: NodeId, depth: Option<NodeId>) -> Result<NodeId> {
        let v = self.config.visual_fusion;
        let Some(depth) = depth else {
            return match v {
                VisualFusion::NoneRgbOnly => Ok(rgb),
                _ => Err(Error::Usage(format!("visual fusion {v:?} needs a depth vector"))),
            };
        };
        match (v, &self.layout.visual) {
            (VisualFusion::NoneRgbOnly, _) => Ok(rgb),
            (VisualFusion::Sum, _) => g.add(rgb, depth),
            (VisualFusion::SoftAttention, _) => {
                let w = g.softmax(depth, 1)?;
                g.mul(w, rgb)
            }
            (VisualFusion::Concat, Mixer::Linear(l)) => {
                let x = g.concat_cols(&[rgb, depth])?;
                l.forward(g, x)
            }
            (VisualFusion::SelfAttention, Mixer::Stack(s)) => {
                let x = g.concat_rows(&[rgb, depth])?;
                let y = s.forward(g, x, None, &self.opts())?;
                g.mean_rows(y)
            }
            (VisualFusion::CrossQRgb, Mixer::Stack(s)) => s.forward(g, rgb, Some(depth), &self.opts()),
            (VisualFusion::CrossQDepth, Mixer::Stack(s)) => s.forward(g, depth, Some(rgb), &self.opts()),
            _ => Err(Error::Usage(format!(
                "visual fusion {v:?} has no parameters in this model"
            ))),
        }
    }

    /// The pre-projection text vector for a history payload.
    pub fn encode_history(
        &self,
        g: &mut Graph<'_, T>,
        h: &HistoryEncoding,
        table: &ClassTextTable,
    ) -> Result<NodeId> {
        let c = &self.config;
        let row = |id: i32| -> Result<Vec<T>> {
            if id < 0 {
                return Ok(vec![T::zero(); c.d_txt]);
            }
            let id = id as usize;
            if id >= table.n_classes() {
                return Err(Error::Data(format!(
                    "history id {id} outside the class table ({} classes)",
                    table.n_classes()
                )));
            }
            Ok(table.row(id).iter().map(|&v| T::of(v as f64)).collect())
        };
        match (c.history_strategy, h) {
            (HistoryStrategy::None, HistoryEncoding::None) => Ok(g.constant(Tensor::zeros(&[1, c.d_txt]))),
            (HistoryStrategy::Concat, HistoryEncoding::Ids(ids)) => {
                let mut data = Vec::with_capacity(c.text_width());
                for &id in ids {
                    data.extend(row(id)?);
                }
                Ok(g.constant(Tensor::matrix(1, c.text_width(), data)?))
            }
            (HistoryStrategy::Transformer, HistoryEncoding::Ids(ids)) => {
                let stack = self
                    .layout
                    .history_stack
                    .as_ref()
                    .expect("allocated for transformer history");
                let mut data = Vec::with_capacity(ids.len() * c.d_txt);
                for &id in ids {
                    data.extend(row(id)?);
                }
                let mut tokens = Tensor::matrix(ids.len(), c.d_txt, data)?;
                tokens.add_assign(&sinusoidal_pe(ids.len(), c.d_txt)?);
                let x = g.constant(tokens);
                let y = stack.forward(g, x, None, &self.opts())?;
                g.mean_rows(y)
            }
            (HistoryStrategy::Description, HistoryEncoding::Description(e)) => {
                if e.len() != c.d_txt {
                    return Err(Error::Shape(format!(
                        "description embedding has {} values, expected {}",
                        e.len(),
                        c.d_txt
                    )));
                }
                Ok(g.constant(Tensor::row_vector(e.iter().map(|&v| T::of(v as f64)).collect())))
            }
            (s, h) => Err(Error::Usage(format!(
                "history strategy {s:?} cannot use a {} payload",
                h.kind()
            ))),
        }
    }

    /// The history payload this configuration reads from a record.
    pub fn history_payload(&self, rec: &EmbeddingRecord) -> Result<HistoryEncoding> {
        Ok(match self.config.history_strategy {
            HistoryStrategy::None => HistoryEncoding::None,
            HistoryStrategy::Concat | HistoryStrategy::Transformer => {
                HistoryEncoding::Ids(history_window(&rec.history, self.config.history_len))
            }
            HistoryStrategy::Description => HistoryEncoding::Description(
                rec.desc_embedding
                    .clone()
                    .ok_or_else(|| Error::Data("record has no description embedding".into()))?,
            ),
        })
    }

    /// Combines the visual and text vectors (or RGB, depth and text).
    pub fn fuse_multimodal(&self, g: &mut Graph<'_, T>, visual: &[NodeId], text: NodeId) -> Result<NodeId> {
        let m = self.config.multimodal_fusion;
        match (m, &self.layout.multimodal, visual) {
            (MultimodalFusion::Sum, _, [v]) => g.add(*v, text),
            (MultimodalFusion::Concat, Mixer::Linear(l), [v]) => {
                let x = g.concat_cols(&[*v, text])?;
                l.forward(g, x)
            }
            (MultimodalFusion::SelfAttnVisText, Mixer::Stack(s), [v]) => {
                let x = g.concat_rows(&[*v, text])?;
                let y = s.forward(g, x, None, &self.opts())?;
                g.mean_rows(y)
            }
            (MultimodalFusion::SelfAttnThree, Mixer::Stack(s), [rgb, depth]) => {
                let x = g.concat_rows(&[*rgb, *depth, text])?;
                let y = s.forward(g, x, None, &self.opts())?;
                g.mean_rows(y)
            }
            _ => Err(Error::Usage(format!(
                "multimodal fusion {m:?} cannot combine {} visual vectors",
                visual.len()
            ))),
        }
    }

    /// `1 × C` logits for one record with an explicit history payload.
    pub fn forward_with_history(
        &self,
        g: &mut Graph<'_, T>,
        rec: &EmbeddingRecord,
        history: &HistoryEncoding,
        table: &ClassTextTable,
    ) -> Result<NodeId> {
        let run = |g: &mut Graph<'_, T>| -> Result<NodeId> {
            let (rgb, depth) = self.visual_inputs(g, rec)?;
            let rgb = self.layout.proj_rgb.forward(g, rgb)?;
            let depth = match (&self.layout.proj_depth, depth) {
                (Some(p), Some(d)) => Some(p.forward(g, d)?),
                _ => None,
            };
            let text = self.encode_history(g, history, table)?;
            let text = self.layout.proj_txt.forward(g, text)?;
            let pooled = if self.config.multimodal_fusion == MultimodalFusion::SelfAttnThree {
                let depth = depth.ok_or_else(|| Error::Usage("three-token fusion needs depth".into()))?;
                self.fuse_multimodal(g, &[rgb, depth], text)?
            } else {
                let v = self.fuse_visual(g, rgb, depth)?;
                self.fuse_multimodal(g, &[v], text)?
            };
            self.layout.classifier.forward(g, pooled)
        };
        run(g).map_err(|e| e.with_sample(rec.sample_id))
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        rec: &EmbeddingRecord,
        table: &ClassTextTable,
    ) -> Result<NodeId> {
        let h = self
            .history_payload(rec)
            .map_err(|e| e.with_sample(rec.sample_id))?;
        self.forward_with_history(g, rec, &h, table)
    }

    /// `B × C` logits, one row per record.
    pub fn forward_batch(
        &self,
        g: &mut Graph<'_, T>,
        records: &[&EmbeddingRecord],
        table: &ClassTextTable,
    ) -> Result<NodeId> {
        if records.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let rows = records
            .iter()
            .map(|r| self.forward(g, r, table))
            .collect::<Result<Vec<_>>>()?;
        if rows.len() == 1 {
            return Ok(rows[0]);
        }
        g.concat_rows(&rows)
    }

    /// Mean cross-entropy over a batch.
    pub fn loss(
        &self,
        g: &mut Graph<'_, T>,
        records: &[&EmbeddingRecord],
        table: &ClassTextTable,
    ) -> Result<NodeId> {
        let logits = self.forward_batch(g, records, table)?;
        let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
        g.cross_entropy(logits, &labels)
    }

    /// Inference logits for one record.
    pub fn predict_one(&self, rec: &EmbeddingRecord, table: &ClassTextTable) -> Result<Vec<T>> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, rec, table)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Inference logits for many records, `N × C`. Runs on the rayon pool
    /// when the `parallel` feature is enabled.
    pub fn predict(&self, records: &[EmbeddingRecord], table: &ClassTextTable) -> Result<Tensor<T>> {
        #[cfg(feature = "parallel")]
        let rows: Vec<Vec<T>> = {
            use rayon::prelude::*;
            records
                .par_iter()
                .map(|r| self.predict_one(r, table))
                .collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let rows: Vec<Vec<T>> = records
            .iter()
            .map(|r| self.predict_one(r, table))
            .collect::<Result<_>>()?;
        Tensor::matrix(records.len(), self.config.n_classes, rows.concat())
    }

    /// Attention maps of every probed layer for one record.
    pub fn attention_maps(
        &self,
        rec: &EmbeddingRecord,
        table: &ClassTextTable,
    ) -> Result<Vec<(String, Tensor<T>)>> {
        let mut g = Graph::new(&self.store);
        g.enable_attention_probe();
        self.forward(&mut g, rec, table)?;
        Ok(g.attention_maps())
    }
}
