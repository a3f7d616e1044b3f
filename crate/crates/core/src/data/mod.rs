//! Embedding datasets, per-class text tables and synthetic data.
//!
//! Both file formats are little-endian and versioned by a `u16` after the
//! magic. Any layout change bumps that version.

mod aagc;
mod aagf;
pub(crate) mod bytes;
pub mod synthetic;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use aagc::{
    decode_class_table, encode_class_table, load_class_table, save_class_table, AAGC_MAGIC, AAGC_VERSION,
};
pub use aagf::{decode_aagf, encode_aagf, read_aagf, write_aagf, AAGF_HEADER_LEN, AAGF_MAGIC, AAGF_VERSION};
pub use synthetic::{generate_synthetic, LabelRule, SyntheticSpec};

/// Pad / "no action" sentinel in history slots.
pub const PAD_ID: i32 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSource {
    Gt,
    Estimated,
    Absent,
}

impl DepthSource {
    pub fn to_byte(self) -> u8 {
        match self {
            DepthSource::Gt => 0,
            DepthSource::Estimated => 1,
            DepthSource::Absent => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(DepthSource::Gt),
            1 => Some(DepthSource::Estimated),
            2 => Some(DepthSource::Absent),
            _ => None,
        }
    }
}

/// Dataset-level header fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub d_ft: usize,
    pub d_txt: usize,
    pub n_classes: usize,
    pub history_len: usize,
    /// 1 for single-frame data, the window length for video data.
    pub frames: usize,
    /// Anticipation horizon used when the data was built.
    pub delta_ms: u32,
    pub depth_source: DepthSource,
    pub has_description: bool,
}

/// One sample: frame features, history ids and the target label.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub sample_id: u64,
    /// Next action (anticipation) or current action (recognition).
    pub label: usize,
    /// Oldest first; [`PAD_ID`] marks empty slots.
    pub history: Vec<i32>,
    /// `frames × d_ft`, row-major.
    pub rgb: Vec<f32>,
    /// `frames × d_ft`, all zeros when depth is absent.
    pub depth: Vec<f32>,
    pub desc_embedding: Option<Vec<f32>>,
}

impl EmbeddingRecord {
    /// Checks dimensions and id ranges against the header.
    pub fn validate(&self, meta: &DatasetMeta) -> Result<()> {
        let id = self.sample_id;
        let feat = meta.frames * meta.d_ft;
        if self.rgb.len() != feat || self.depth.len() != feat {
            return Err(Error::Data(format!(
                "record {id}: rgb/depth hold {}/{} values, header expects {feat}",
                self.rgb.len(),
                self.depth.len()
            )));
        }
        if self.history.len() != meta.history_len {
            return Err(Error::Data(format!(
                "record {id}: history length {}, header expects {}",
                self.history.len(),
                meta.history_len
            )));
        }
        match (&self.desc_embedding, meta.has_description) {
            (Some(d), true) if d.len() != meta.d_txt => {
                return Err(Error::Data(format!(
                    "record {id}: description width {}, header expects {}",
                    d.len(),
                    meta.d_txt
                )))
            }
            (None, true) | (Some(_), false) => {
                return Err(Error::Data(format!(
                    "record {id}: description presence disagrees with header flag"
                )))
            }
            _ => {}
        }
        if self.label >= meta.n_classes {
            return Err(Error::Data(format!(
                "record {id}: label {} outside [0, {})",
                self.label, meta.n_classes
            )));
        }
        if let Some(h) = self
            .history
            .iter()
            .find(|&&h| h < PAD_ID || h >= meta.n_classes as i32)
        {
            return Err(Error::Data(format!(
                "record {id}: history id {h} outside [-1, {})",
                meta.n_classes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<EmbeddingRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }
}

/// Per-class text embeddings and names.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassTextTable {
    pub d_txt: usize,
    /// `n_classes × d_txt`, row-major.
    pub rows: Vec<f32>,
    pub names: Vec<String>,
}

impl ClassTextTable {
    pub fn new(d_txt: usize, rows: Vec<f32>, names: Vec<String>) -> Result<Self> {
        if rows.len() != names.len() * d_txt {
            return Err(Error::Data(format!(
                "class table: {} values for {} classes of width {d_txt}",
                rows.len(),
                names.len()
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("class table contains non-finite values".into()));
        }
        Ok(Self { d_txt, rows, names })
    }

    pub fn n_classes(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.rows[class * self.d_txt..(class + 1) * self.d_txt]
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.names.get(class).map(String::as_str)
    }

    /// Cross-checks class count and text width against a dataset header.
    pub fn check_against(&self, meta: &DatasetMeta) -> Result<()> {
        if self.n_classes() != meta.n_classes || self.d_txt != meta.d_txt {
            return Err(Error::Data(format!(
                "class table has {} classes of width {}, dataset header has {} classes of width {}",
                self.n_classes(),
                self.d_txt,
                meta.n_classes,
                meta.d_txt
            )));
        }
        Ok(())
    }
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("not a file path: {}", path.display())))?;
    let tmp_name = format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id());
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => tmp_name.into(),
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}
