use std::fs;
use std::path::Path;

use super::bytes::{put_f32s, Reader};
use super::{write_atomic, ClassTextTable};
use crate::error::{Error, Result};

pub const AAGC_MAGIC: &[u8; 4] = b"AAGC";
pub const AAGC_VERSION: u16 = 1;

pub fn encode_class_table(table: &ClassTextTable) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(AAGC_MAGIC);
    out.extend_from_slice(&AAGC_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.n_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(table.d_txt as u32).to_le_bytes());
    put_f32s(&mut out, &table.rows);
    for (i, name) in table.names.iter().enumerate() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Data(format!("class {i} name longer than 65535 bytes")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    Ok(out)
}

pub fn decode_class_table(bytes: &[u8]) -> Result<ClassTextTable> {
    let mut rd = Reader::new(bytes);
    let magic = rd.take(4, "magic")?;
    if magic != AAGC_MAGIC {
        return Err(Error::format(
            0,
            format!(
                "bad magic {:?}, expected \"AAGC\"",
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = rd.u16("version")?;
    if version != AAGC_VERSION {
        return Err(Error::format(4, format!("unsupported AAGC version {version}")));
    }
    let n = rd.u32("n_classes")? as usize;
    let d_txt = rd.u32("d_txt")? as usize;
    let rows_off = rd.offset();
    let rows = rd.f32s(n * d_txt, "class rows")?;
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(rows_off, "class rows contain non-finite values"));
    }
    let mut names = Vec::with_capacity(n);
    for i in 0..n {
        let len = rd.u16("name length")? as usize;
        let off = rd.offset();
        let raw = rd.take(len, "name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|e| Error::format(off, format!("class {i} name is not UTF-8: {e}")))?;
        names.push(name.to_string());
    }
    if rd.remaining() != 0 {
        return Err(Error::format(rd.offset(), "trailing bytes after class names"));
    }
    ClassTextTable::new(d_txt, rows, names)
}

pub fn save_class_table(table: &ClassTextTable, path: &Path) -> Result<()> {
    write_atomic(path, &encode_class_table(table)?)
}

pub fn load_class_table(path: &Path) -> Result<ClassTextTable> {
    decode_class_table(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, DepthSource};

    fn table() -> ClassTextTable {
        ClassTextTable::new(
            2,
            vec![1.0, 0.0, 0.0, 1.0, -0.5, 0.25],
            vec!["pick leg".into(), "visser l’écrou".into(), "".into()],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_and_lookup() {
        let t = table();
        let bytes = encode_class_table(&t).unwrap();
        let back = decode_class_table(&bytes).unwrap();
        assert_eq!(encode_class_table(&back).unwrap(), bytes);
        assert_eq!(back.name(1), Some("visser l’écrou"));
        assert_eq!(back.row(2), &[-0.5, 0.25]);
        assert_eq!(back.name(3), None);
    }

    #[test]
    fn class_count_cross_validation() {
        let meta = DatasetMeta {
            d_ft: 4,
            d_txt: 2,
            n_classes: 5,
            history_len: 1,
            frames: 1,
            delta_ms: 1000,
            depth_source: DepthSource::Gt,
            has_description: false,
        };
        assert!(matches!(table().check_against(&meta), Err(Error::Data(_))));
        let ok = DatasetMeta { n_classes: 3, ..meta };
        table().check_against(&ok).unwrap();
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode_class_table(&table()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_class_table(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            decode_class_table(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
    }
}
