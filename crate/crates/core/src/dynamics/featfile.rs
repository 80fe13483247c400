//! Binary feature tables.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "XICMFEAT"
//! version  u16      1
//! mode     u8       FeatureMode tag
//! source   u16 length + UTF-8 bytes
//! d_vis    u32      base visual dimension
//! d_lang   u32      language dimension
//! count    u32
//! count x { id: u16 length + UTF-8, values: f32 x (vis_parts * d_vis + lang_len) }
//! ```

use std::fs;
use std::path::Path;

use super::features::{DynamicsFeature, FeatureMode, FeatureTable};
use super::DynamicsError;

pub const MAGIC: &[u8; 8] = b"XICMFEAT";
pub const VERSION: u16 = 1;

pub fn encode_features(table: &FeatureTable) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(table.mode.tag());
    put_str(&mut out, &table.source);
    out.extend_from_slice(&(table.d_vis as u32).to_le_bytes());
    out.extend_from_slice(&(table.d_lang as u32).to_le_bytes());
    out.extend_from_slice(&(table.features.len() as u32).to_le_bytes());
    for f in &table.features {
        put_str(&mut out, &f.demo_id);
        for v in f.components() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let bytes = s.as_bytes();
    let len = u16::try_from(bytes.len()).expect("string longer than 65535 bytes");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DynamicsError> {
        if self.buf.len() - self.pos < n {
            return Err(DynamicsError::Truncated {
                offset: self.pos,
                expected: format!("{n} bytes for {what}"),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16, DynamicsError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, DynamicsError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, DynamicsError> {
        let offset = self.pos;
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| DynamicsError::Header {
            offset,
            message: format!("{what} is not valid UTF-8"),
        })
    }
}

pub fn decode_features(buf: &[u8]) -> Result<FeatureTable, DynamicsError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(DynamicsError::Header {
            offset: 0,
            message: "bad magic bytes".into(),
        });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(DynamicsError::Header {
            offset: 8,
            message: format!("unsupported version {version}"),
        });
    }
    let tag = r.take(1, "mode")?[0];
    let mode = FeatureMode::from_tag(tag).ok_or(DynamicsError::Header {
        offset: 10,
        message: format!("unknown mode tag {tag}"),
    })?;
    let source = r.string("source")?;
    let d_vis = r.u32("d_vis")? as usize;
    let d_lang = r.u32("d_lang")? as usize;
    let count = r.u32("count")? as usize;
    let mut table = FeatureTable::new(mode, d_vis, d_lang, source);
    let (vis_len, lang_len) = (table.vis_len(), table.lang_len());
    for _ in 0..count {
        let demo_id = r.string("id")?;
        let offset = r.pos;
        let raw = r.take(4 * (vis_len + lang_len), "feature values")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(DynamicsError::Header {
                offset: offset + 4 * i,
                message: format!("NaN component in feature `{demo_id}`"),
            });
        }
        let (vis, lang) = values.split_at(vis_len);
        table.push(DynamicsFeature {
            demo_id,
            vis: vis.to_vec(),
            lang: lang.to_vec(),
        })?;
    }
    if r.pos != buf.len() {
        return Err(DynamicsError::Header {
            offset: r.pos,
            message: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    Ok(table)
}

pub fn export_features(table: &FeatureTable, path: impl AsRef<Path>) -> Result<(), DynamicsError> {
    let path = path.as_ref();
    fs::write(path, encode_features(table)).map_err(|e| DynamicsError::Io(path.display().to_string(), e))
}

pub fn import_features(path: impl AsRef<Path>) -> Result<FeatureTable, DynamicsError> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| DynamicsError::Io(path.display().to_string(), e))?;
    decode_features(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(d_vis: usize, n: usize) -> FeatureTable {
        let mut t = FeatureTable::new(FeatureMode::VisOutLang, d_vis, 4, "diffusion:external");
        for i in 0..n {
            t.push(DynamicsFeature {
                demo_id: format!("demo_{i}"),
                vis: (0..d_vis).map(|j| (i * d_vis + j) as f32 * 0.25 - 3.0).collect(),
                lang: vec![f32::MIN_POSITIVE, -0.0, 1e30, i as f32],
            })
            .unwrap();
        }
        t
    }

    #[test]
    fn round_trip_is_bitwise() {
        let t = table(1024, 5);
        let back = decode_features(&encode_features(&t)).unwrap();
        assert_eq!(back.source, "diffusion:external");
        assert_eq!(back.d_vis, 1024);
        for (a, b) in t.features.iter().zip(&back.features) {
            let bits = |f: &DynamicsFeature| f.components().map(f32::to_bits).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_features(&table(8, 3));
        let cut = &bytes[..bytes.len() - 3];
        match decode_features(cut) {
            Err(DynamicsError::Truncated { offset, .. }) => assert!(offset > 0 && offset < cut.len()),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn nan_and_bad_headers_rejected() {
        let mut t = table(2, 1);
        t.features[0].vis[1] = f32::NAN;
        assert!(matches!(decode_features(&encode_features(&t)), Err(DynamicsError::Header { .. })));
        let mut bytes = encode_features(&table(2, 1));
        bytes[0] = b'Y';
        assert!(matches!(decode_features(&bytes), Err(DynamicsError::Header { offset: 0, .. })));
        let mut bytes = encode_features(&table(2, 1));
        bytes[10] = 99;
        assert!(matches!(decode_features(&bytes), Err(DynamicsError::Header { offset: 10, .. })));
    }
}
