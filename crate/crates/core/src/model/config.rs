use serde::{Deserialize, Serialize};

use crate::attention::{check_heads, Activation, AttnScale, LayerOptions};
use crate::error::{Error, Result};

/// How the RGB and depth embeddings become one visual vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualFusion {
    NoneRgbOnly,
    Concat,
    Sum,
    SoftAttention,
    SelfAttention,
    CrossQRgb,
    CrossQDepth,
}

impl VisualFusion {
    pub const ALL: [VisualFusion; 7] = [
        VisualFusion::NoneRgbOnly,
        VisualFusion::Concat,
        VisualFusion::Sum,
        VisualFusion::SoftAttention,
        VisualFusion::SelfAttention,
        VisualFusion::CrossQRgb,
        VisualFusion::CrossQDepth,
    ];

    /// The fusion strategies compared against each other (RGB-only excluded).
    pub const ABLATION: [VisualFusion; 6] = [
        VisualFusion::Concat,
        VisualFusion::Sum,
        VisualFusion::SoftAttention,
        VisualFusion::SelfAttention,
        VisualFusion::CrossQRgb,
        VisualFusion::CrossQDepth,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryStrategy {
    None,
    Concat,
    Transformer,
    Description,
}

impl HistoryStrategy {
    pub const ALL: [HistoryStrategy; 4] = [
        HistoryStrategy::None,
        HistoryStrategy::Concat,
        HistoryStrategy::Transformer,
        HistoryStrategy::Description,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultimodalFusion {
    Concat,
    Sum,
    /// `[rgb; depth; text]` through one self-attention stack, no visual fusion.
    SelfAttnThree,
    /// `[visual; text]` through the self-attention stack.
    SelfAttnVisText,
}

impl MultimodalFusion {
    pub const ALL: [MultimodalFusion; 4] = [
        MultimodalFusion::Concat,
        MultimodalFusion::Sum,
        MultimodalFusion::SelfAttnThree,
        MultimodalFusion::SelfAttnVisText,
    ];
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Labels are the next action.
    #[default]
    Anticipation,
    /// Labels are the current action.
    Recognition,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    #[default]
    Frame,
    Video,
}

/// Architecture hyperparameters. Widths `d_ft`, `d_txt`, `n_classes` normally
/// come from the dataset header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    #[serde(alias = "D")]
    pub d_model: usize,
    pub d_ft: usize,
    pub d_txt: usize,
    pub n_classes: usize,
    #[serde(alias = "N")]
    pub history_len: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    pub video_layers: usize,
    pub video_heads: usize,
    pub window: usize,
    pub ffn_mult: usize,
    pub visual_fusion: VisualFusion,
    pub history_strategy: HistoryStrategy,
    pub multimodal_fusion: MultimodalFusion,
    pub mode: Mode,
    pub input: InputKind,
    pub attn_scale: AttnScale,
    pub activation: Activation,
    pub dropout: f64,
    pub ln_eps: f64,
    pub classifier_bias: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 768,
            d_ft: 768,
            d_txt: 768,
            n_classes: 33,
            history_len: 5,
            fusion_layers: 2,
            fusion_heads: 4,
            video_layers: 3,
            video_heads: 8,
            window: 16,
            ffn_mult: 4,
            visual_fusion: VisualFusion::CrossQRgb,
            history_strategy: HistoryStrategy::Concat,
            multimodal_fusion: MultimodalFusion::SelfAttnVisText,
            mode: Mode::Anticipation,
            input: InputKind::Frame,
            attn_scale: AttnScale::PerHead,
            activation: Activation::Gelu,
            dropout: 0.0,
            ln_eps: 1e-5,
            classifier_bias: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small widths for tests and desk-scale runs.
    pub fn tiny(d_model: usize, heads: usize, n_classes: usize, history_len: usize) -> Self {
        Self {
            d_model,
            d_ft: d_model,
            d_txt: d_model,
            n_classes,
            history_len,
            fusion_heads: heads,
            video_heads: heads,
            window: 4,
            ..Self::default()
        }
    }

    /// Whether the depth stream is read at all.
    pub fn uses_depth(&self) -> bool {
        self.multimodal_fusion == MultimodalFusion::SelfAttnThree
            || self.visual_fusion != VisualFusion::NoneRgbOnly
    }

    /// Width of the text vector before projection.
    pub fn text_width(&self) -> usize {
        match self.history_strategy {
            HistoryStrategy::Concat => self.history_len * self.d_txt,
            _ => self.d_txt,
        }
    }

    pub fn layer_options(&self) -> LayerOptions {
        LayerOptions {
            attn_scale: self.attn_scale,
            activation: self.activation,
            dropout: self.dropout,
            ln_eps: self.ln_eps,
        }
    }

    /// `[rgb; depth; text]` fusion never reads the visual fusion choice, and
    /// it needs depth; every other pairing is meaningful.
    pub fn is_coherent(&self) -> bool {
        !(self.multimodal_fusion == MultimodalFusion::SelfAttnThree
            && self.visual_fusion == VisualFusion::NoneRgbOnly)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.d_ft == 0 || self.d_txt == 0 {
            return bad("d_model, d_ft and d_txt must be positive".into());
        }
        if self.n_classes == 0 {
            return bad("n_classes must be positive".into());
        }
        check_heads(self.d_model, self.fusion_heads)?;
        if self.ffn_mult == 0 {
            return bad("ffn_mult must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.ln_eps <= 0.0 {
            return bad(format!("ln_eps must be > 0, got {}", self.ln_eps));
        }
        if !self.is_coherent() {
            return bad("self_attn_three fusion needs depth; visual_fusion none_rgb_only drops it".into());
        }
        match self.history_strategy {
            HistoryStrategy::Concat | HistoryStrategy::Transformer if self.history_len == 0 => {
                return bad(format!(
                    "history strategy {:?} needs history_len >= 1",
                    self.history_strategy
                ))
            }
            HistoryStrategy::Transformer => {
                check_heads(self.d_txt, self.fusion_heads)?;
                if !self.d_txt.is_multiple_of(2) {
                    return bad(format!(
                        "transformer history needs an even d_txt, got {}",
                        self.d_txt
                    ));
                }
            }
            _ => {}
        }
        if self.input == InputKind::Video {
            if self.window == 0 {
                return bad("video input needs window >= 1".into());
            }
            check_heads(self.d_ft, self.video_heads)?;
            if !self.d_ft.is_multiple_of(2) {
                return bad(format!("video input needs an even d_ft, got {}", self.d_ft));
            }
        }
        Ok(())
    }

    /// Frames per record this configuration expects.
    pub fn frames(&self) -> usize {
        match self.input {
            InputKind::Frame => 1,
            InputKind::Video => self.window,
        }
    }

    /// Every coherent `(visual, history, multimodal)` combination. The
    /// three-token fusion ignores `visual_fusion`, so it appears once, under
    /// the default cross-attention tag.
    pub fn strategy_grid() -> Vec<(VisualFusion, HistoryStrategy, MultimodalFusion)> {
        let mut out = Vec::new();
        for &h in &HistoryStrategy::ALL {
            for &m in &MultimodalFusion::ALL {
                if m == MultimodalFusion::SelfAttnThree {
                    out.push((VisualFusion::CrossQRgb, h, m));
                    continue;
                }
                for &v in &VisualFusion::ALL {
                    out.push((v, h, m));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_architecture() {
        let c = ModelConfig::default();
        assert_eq!(c.d_model, 768);
        assert_eq!((c.fusion_layers, c.fusion_heads), (2, 4));
        assert_eq!((c.video_layers, c.video_heads, c.window), (3, 8, 16));
        c.validate().unwrap();
    }

    #[test]
    fn divisibility_and_coherence_checked() {
        let c = ModelConfig {
            d_model: 6,
            fusion_heads: 4,
            ..ModelConfig::tiny(8, 2, 4, 2)
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ModelConfig {
            visual_fusion: VisualFusion::NoneRgbOnly,
            multimodal_fusion: MultimodalFusion::SelfAttnThree,
            ..ModelConfig::tiny(8, 2, 4, 2)
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            history_len: 0,
            ..ModelConfig::tiny(8, 2, 4, 2)
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ModelConfig>(r#"{"d_modle": 8}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
        let c: ModelConfig = serde_json::from_str(r#"{"D": 8, "visual_fusion": "cross_q_depth"}"#).unwrap();
        assert_eq!(c.d_model, 8);
        assert_eq!(c.visual_fusion, VisualFusion::CrossQDepth);
    }

    #[test]
    fn grid_size() {
        // 4 histories × (3 multimodal × 7 visual + 1 three-token cell).
        assert_eq!(ModelConfig::strategy_grid().len(), 4 * (3 * 7 + 1));
    }
}
