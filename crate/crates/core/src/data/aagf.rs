use std::fs;
use std::path::Path;

use super::bytes::{put_f32s, Reader};
use super::{write_atomic, Dataset, DatasetMeta, DepthSource, EmbeddingRecord, PAD_ID};
use crate::error::{Error, Result};

pub const AAGF_MAGIC: &[u8; 4] = b"AAGF";
pub const AAGF_VERSION: u16 = 1;
pub const AAGF_HEADER_LEN: usize = 48;

const FLAG_DESCRIPTION: u16 = 1;

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Data(format!("{what} = {v} does not fit in u32")))
}

pub fn encode_aagf(dataset: &Dataset) -> Result<Vec<u8>> {
    let m = &dataset.meta;
    for r in &dataset.records {
        r.validate(m)?;
    }
    let mut out = Vec::with_capacity(AAGF_HEADER_LEN);
    out.extend_from_slice(AAGF_MAGIC);
    out.extend_from_slice(&AAGF_VERSION.to_le_bytes());
    let flags = if m.has_description { FLAG_DESCRIPTION } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(dataset.records.len() as u64).to_le_bytes());
    for (v, what) in [
        (m.d_ft, "d_ft"),
        (m.d_txt, "d_txt"),
        (m.n_classes, "n_classes"),
        (m.history_len, "history_len"),
        (m.frames, "frames"),
    ] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&m.delta_ms.to_le_bytes());
    out.push(m.depth_source.to_byte());
    out.extend_from_slice(&[0u8; 7]);
    debug_assert_eq!(out.len(), AAGF_HEADER_LEN);

    for r in &dataset.records {
        out.extend_from_slice(&r.sample_id.to_le_bytes());
        out.extend_from_slice(&to_u32(r.label, "label")?.to_le_bytes());
        for h in &r.history {
            out.extend_from_slice(&h.to_le_bytes());
        }
        put_f32s(&mut out, &r.rgb);
        put_f32s(&mut out, &r.depth);
        if let Some(d) = &r.desc_embedding {
            put_f32s(&mut out, d);
        }
    }
    Ok(out)
}

pub fn decode_aagf(bytes: &[u8]) -> Result<Dataset> {
    let mut rd = Reader::new(bytes);
    let magic = rd.take(4, "magic")?;
    if magic != AAGF_MAGIC {
        return Err(Error::format(
            0,
            format!(
                "bad magic {:?}, expected \"AAGF\"",
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = rd.u16("version")?;
    if version != AAGF_VERSION {
        return Err(Error::format(4, format!("unsupported AAGF version {version}")));
    }
    let flags = rd.u16("flags")?;
    let n_samples = rd.u64("n_samples")?;
    let d_ft = rd.u32("d_ft")? as usize;
    let d_txt = rd.u32("d_txt")? as usize;
    let n_classes = rd.u32("n_classes")? as usize;
    let history_len = rd.u32("history_len")? as usize;
    let frames = rd.u32("frames")? as usize;
    let delta_ms = rd.u32("delta_ms")?;
    let ds_off = rd.offset();
    let depth_source = DepthSource::from_byte(rd.u8("depth_source")?)
        .ok_or_else(|| Error::format(ds_off, "unknown depth_source tag"))?;
    rd.take(7, "reserved")?;
    let meta = DatasetMeta {
        d_ft,
        d_txt,
        n_classes,
        history_len,
        frames,
        delta_ms,
        depth_source,
        has_description: flags & FLAG_DESCRIPTION != 0,
    };

    let feat = frames * d_ft;
    let record_len = 8 + 4 + 4 * history_len + 8 * feat + if meta.has_description { 4 * d_txt } else { 0 };
    let expected = (n_samples as usize).checked_mul(record_len);
    if expected.is_some_and(|e| e < rd.remaining()) {
        return Err(Error::format(
            (AAGF_HEADER_LEN + expected.unwrap_or(0)) as u64,
            format!(
                "{} trailing bytes after {n_samples} records",
                rd.remaining() - expected.unwrap_or(0)
            ),
        ));
    }

    let mut records = Vec::with_capacity((n_samples as usize).min(rd.remaining() / record_len.max(1) + 1));
    for i in 0..n_samples {
        let start = rd.offset();
        let sample_id = rd.u64("sample_id")?;
        let label = rd.u32("label")? as usize;
        let history = (0..history_len)
            .map(|_| rd.i32("history"))
            .collect::<Result<Vec<_>>>()?;
        let rgb = rd.f32s(feat, "rgb")?;
        let depth = rd.f32s(feat, "depth")?;
        let desc_embedding = if meta.has_description {
            Some(rd.f32s(d_txt, "desc_embedding")?)
        } else {
            None
        };
        if label >= n_classes {
            return Err(Error::format(
                start,
                format!("record {i} (sample {sample_id}): label {label} outside [0, {n_classes})"),
            ));
        }
        if let Some(h) = history.iter().find(|&&h| h < PAD_ID || h >= n_classes as i32) {
            return Err(Error::format(
                start,
                format!("record {i} (sample {sample_id}): history id {h} outside [-1, {n_classes})"),
            ));
        }
        records.push(EmbeddingRecord {
            sample_id,
            label,
            history,
            rgb,
            depth,
            desc_embedding,
        });
    }
    Ok(Dataset { meta, records })
}

pub fn write_aagf(dataset: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_aagf(dataset)?)
}

pub fn read_aagf(path: &Path) -> Result<Dataset> {
    decode_aagf(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(desc: bool) -> DatasetMeta {
        DatasetMeta {
            d_ft: 3,
            d_txt: 2,
            n_classes: 4,
            history_len: 2,
            frames: 1,
            delta_ms: 1000,
            depth_source: DepthSource::Estimated,
            has_description: desc,
        }
    }

    fn record(id: u64, desc: bool) -> EmbeddingRecord {
        EmbeddingRecord {
            sample_id: id,
            label: (id % 4) as usize,
            history: vec![-1, (id % 4) as i32],
            rgb: vec![0.5, -1.25, id as f32],
            depth: vec![f32::MIN_POSITIVE, 0.0, -0.0],
            desc_embedding: desc.then(|| vec![1.0, 2.0]),
        }
    }

    #[test]
    fn round_trip_three_records_bitwise() {
        let ds = Dataset {
            meta: meta(true),
            records: (0..3).map(|i| record(i, true)).collect(),
        };
        let bytes = encode_aagf(&ds).unwrap();
        assert_eq!(bytes.len(), 48 + 3 * (8 + 4 + 8 + 24 + 8));
        let back = decode_aagf(&bytes).unwrap();
        assert_eq!(encode_aagf(&back).unwrap(), bytes);
        // -0.0 == 0.0 under PartialEq, so compare bits explicitly.
        assert_eq!(back.records[0].depth[2].to_bits(), (-0.0f32).to_bits());
        assert_eq!(back, ds);
    }

    #[test]
    fn bad_magic_rejected() {
        let ds = Dataset {
            meta: meta(false),
            records: vec![record(1, false)],
        };
        let mut bytes = encode_aagf(&ds).unwrap();
        bytes[3] = b'X';
        let err = decode_aagf(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn empty_file_is_valid() {
        let ds = Dataset {
            meta: meta(false),
            records: vec![],
        };
        let bytes = encode_aagf(&ds).unwrap();
        assert_eq!(bytes.len(), AAGF_HEADER_LEN);
        assert!(decode_aagf(&bytes).unwrap().records.is_empty());
    }

    #[test]
    fn truncation_reports_offset() {
        let ds = Dataset {
            meta: meta(false),
            records: vec![record(1, false), record(2, false)],
        };
        let bytes = encode_aagf(&ds).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        match decode_aagf(cut).unwrap_err() {
            Error::Format { offset, msg } => {
                assert!(offset as usize > AAGF_HEADER_LEN, "{offset}");
                assert!(msg.contains("truncated"), "{msg}");
            }
            e => panic!("{e}"),
        }
        assert!(matches!(decode_aagf(&bytes[..10]), Err(Error::Format { .. })));
    }

    #[test]
    fn invalid_ids_and_versions_rejected() {
        let ds = Dataset {
            meta: meta(false),
            records: vec![record(1, false)],
        };
        let mut bytes = encode_aagf(&ds).unwrap();
        // History slot 0 of record 0 lives right after sample_id and label.
        bytes[48 + 12..48 + 16].copy_from_slice(&9i32.to_le_bytes());
        let err = decode_aagf(&bytes).unwrap_err().to_string();
        assert!(err.contains("record 0"), "{err}");

        let mut bytes = encode_aagf(&ds).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            decode_aagf(&bytes),
            Err(Error::Format { offset: 4, .. })
        ));

        let mut bytes = encode_aagf(&ds).unwrap();
        bytes.push(0);
        assert!(matches!(decode_aagf(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn writer_rejects_mismatched_record() {
        let mut r = record(3, false);
        r.rgb.push(1.0);
        let ds = Dataset {
            meta: meta(false),
            records: vec![record(1, false), r],
        };
        let err = encode_aagf(&ds).unwrap_err().to_string();
        assert!(err.contains("record 3"), "{err}");
    }

    proptest! {
        #[test]
        fn arbitrary_payloads_round_trip(
            bits in prop::collection::vec(any::<u32>(), 6),
            id in any::<u64>(),
            hist in prop::collection::vec(-1i32..4, 2),
        ) {
            // Any bit pattern, NaN payloads included, must survive unchanged.
            let vals: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let ds = Dataset {
                meta: meta(false),
                records: vec![EmbeddingRecord {
                    sample_id: id,
                    label: 2,
                    history: hist,
                    rgb: vals[..3].to_vec(),
                    depth: vals[3..].to_vec(),
                    desc_embedding: None,
                }],
            };
            let bytes = encode_aagf(&ds).unwrap();
            let back = decode_aagf(&bytes).unwrap();
            prop_assert_eq!(encode_aagf(&back).unwrap(), bytes);
        }
    }
}
