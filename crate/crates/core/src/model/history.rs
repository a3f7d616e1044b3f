use std::collections::VecDeque;

use super::{AagModel, HistoryStrategy, Mode};
use crate::data::{ClassTextTable, EmbeddingRecord, PAD_ID};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Scalar};

/// What the history encoder consumes.
#[derive(Clone, Debug, PartialEq)]
pub enum HistoryEncoding {
    None,
    /// Class ids, oldest first; `-1` is padding.
    Ids(Vec<i32>),
    /// A precomputed `d_txt` sentence embedding.
    Description(Vec<f32>),
}

impl HistoryEncoding {
    pub fn kind(&self) -> &'static str {
        match self {
            HistoryEncoding::None => "none",
            HistoryEncoding::Ids(_) => "id",
            HistoryEncoding::Description(_) => "description",
        }
    }
}

/// The last `n` ids, left-padded with `-1` when fewer are available.
pub fn history_window(history: &[i32], n: usize) -> Vec<i32> {
    let take = history.len().min(n);
    let mut out = vec![PAD_ID; n - take];
    out.extend_from_slice(&history[history.len() - take..]);
    out
}

/// Appends `predicted` and keeps the most recent `n` entries (unpadded).
pub fn roll_history(buffer: &[i32], predicted: i32, n: usize) -> Vec<i32> {
    let mut all = buffer.to_vec();
    all.push(predicted);
    all.split_off(all.len().saturating_sub(n))
}

/// Fixed-length FIFO of recognized actions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryBuffer {
    n: usize,
    items: VecDeque<i32>,
}

impl HistoryBuffer {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            items: VecDeque::with_capacity(n),
        }
    }

    pub fn push(&mut self, id: i32) {
        if self.n == 0 {
            return;
        }
        if self.items.len() == self.n {
            self.items.pop_front();
        }
        self.items.push_back(id);
    }

    /// Contents, oldest first, left-padded to `n`.
    pub fn padded(&self) -> Vec<i32> {
        let v: Vec<i32> = self.items.iter().copied().collect();
        history_window(&v, self.n)
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    // First maximum wins, matching the metrics tie-break.
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs a stream of consecutive segments without ground-truth history.
///
/// For each record the recognizer labels the current action from the
/// predicted history so far; that label is pushed into the buffer, and the
/// anticipator then scores the next action. Returns the anticipator's
/// logits per record.
pub fn anticipate_with_predicted_history<T: Scalar>(
    anticipator: &AagModel<T>,
    recognizer: &AagModel<T>,
    stream: &[EmbeddingRecord],
    table: &ClassTextTable,
) -> Result<Vec<Vec<T>>> {
    if anticipator.config.mode != Mode::Anticipation || recognizer.config.mode != Mode::Recognition {
        return Err(Error::Usage(
            "predicted history needs an anticipation model and a recognition model".into(),
        ));
    }
    let ids_based = |m: &AagModel<T>| {
        matches!(
            m.config.history_strategy,
            HistoryStrategy::Concat | HistoryStrategy::Transformer
        )
    };
    if !ids_based(anticipator) {
        return Err(Error::Usage(format!(
            "predicted history replaces class ids; {:?} history has none",
            anticipator.config.history_strategy
        )));
    }
    let n = anticipator.config.history_len.max(recognizer.config.history_len);
    let mut buffer = HistoryBuffer::new(n);
    let mut out = Vec::with_capacity(stream.len());
    for rec in stream {
        let rec_history = if ids_based(recognizer) {
            HistoryEncoding::Ids(history_window(&buffer.padded(), recognizer.config.history_len))
        } else {
            recognizer.history_payload(rec)?
        };
        let current = {
            let mut g = Graph::new(&recognizer.store);
            let l = recognizer.forward_with_history(&mut g, rec, &rec_history, table)?;
            argmax(g.value(l).data())
        };
        buffer.push(current as i32);
        let h = HistoryEncoding::Ids(history_window(&buffer.padded(), anticipator.config.history_len));
        let mut g = Graph::new(&anticipator.store);
        let l = anticipator.forward_with_history(&mut g, rec, &h, table)?;
        out.push(g.value(l).data().to_vec());
    }
    Ok(out)
}
