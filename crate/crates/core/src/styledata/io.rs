//! Dataset container.
//!
//! Layout, little-endian:
//!
//! ```text
//! "CFSDAT1"                        magic
//! u8 pixel encoding                1 = u8 (k/255 grid), 2 = f64
//! u32 height, u32 width            patch extents shared by every record
//! u32 n_styles
//!   per style: u16 tag length, tag bytes (UTF-8), u64 record count
//! records, in dataset order:
//!   u64 id, u8 label, u32 style index, height·width pixels
//! ```

use super::StyleSpec;
use crate::model::{Label, Sample, SampleInput};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 7] = b"CFSDAT1";
const ENC_U8: u8 = 1;
const ENC_F64: u8 = 2;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("dataset format error at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("cannot encode dataset: {0}")]
    Unencodable(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn on_u8_grid(p: f64) -> bool {
    ((p * 255.0).round() / 255.0).to_bits() == p.to_bits()
}

pub fn encode_dataset(samples: &[Sample]) -> Result<Vec<u8>, FormatError> {
    let mut extents = None;
    let mut styles: Vec<&str> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    let mut style_of = Vec::with_capacity(samples.len());
    let mut ids = HashSet::new();
    let mut all_u8 = true;
    for s in samples {
        let SampleInput::Patch { height, width, pixels } = &s.input else {
            return Err(FormatError::Unencodable(format!("sample {} is a feature vector", s.id)));
        };
        match extents {
            None => extents = Some((*height, *width)),
            Some(e) if e != (*height, *width) => {
                return Err(FormatError::Unencodable(format!(
                    "sample {} is {height}×{width}, dataset is {}×{}",
                    s.id, e.0, e.1
                )))
            }
            _ => {}
        }
        if !ids.insert(s.id) {
            return Err(FormatError::Unencodable(format!("duplicate sample id {}", s.id)));
        }
        all_u8 &= pixels.iter().all(|&p| on_u8_grid(p));
        let k = match styles.iter().position(|t| *t == s.style) {
            Some(k) => k,
            None => {
                if s.style.len() > u16::MAX as usize {
                    return Err(FormatError::Unencodable("style tag too long".into()));
                }
                styles.push(&s.style);
                counts.push(0);
                styles.len() - 1
            }
        };
        counts[k] += 1;
        style_of.push(k as u32);
    }
    let (height, width) = extents.unwrap_or((0, 0));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(if all_u8 { ENC_U8 } else { ENC_F64 });
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(styles.len() as u32).to_le_bytes());
    for (tag, count) in styles.iter().zip(&counts) {
        out.extend_from_slice(&(tag.len() as u16).to_le_bytes());
        out.extend_from_slice(tag.as_bytes());
        out.extend_from_slice(&count.to_le_bytes());
    }
    for (s, k) in samples.iter().zip(style_of) {
        out.extend_from_slice(&s.id.to_le_bytes());
        out.push(s.label.as_u8());
        out.extend_from_slice(&k.to_le_bytes());
        if let SampleInput::Patch { pixels, .. } = &s.input {
            for &p in pixels {
                if all_u8 {
                    out.push((p * 255.0).round() as u8);
                } else {
                    out.extend_from_slice(&p.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, at: usize, reason: impl Into<String>) -> FormatError {
        FormatError::Corrupt {
            offset: at,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a whole container; any inconsistency rejects the entire file.
pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<Sample>, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic"));
    }
    let enc_at = r.pos;
    let encoding = r.u8("pixel encoding")?;
    if encoding != ENC_U8 && encoding != ENC_F64 {
        return Err(r.fail(enc_at, format!("unknown pixel encoding {encoding}")));
    }
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let n_styles = r.u32("style count")? as usize;
    let mut styles = Vec::new();
    let mut counts = Vec::new();
    for _ in 0..n_styles {
        let len = r.u16("tag length")? as usize;
        let at = r.pos;
        let tag = std::str::from_utf8(r.take(len, "style tag")?)
            .map_err(|_| r.fail(at, "style tag is not UTF-8"))?
            .to_string();
        if tag.is_empty() {
            return Err(r.fail(at, "empty style tag"));
        }
        styles.push(tag);
        counts.push(r.u64("style count")?);
    }
    let total: u64 = counts.iter().sum();
    let pixel_bytes = if encoding == ENC_U8 { 1 } else { 8 };
    let record_len = 13 + height * width * pixel_bytes;
    let remaining = (bytes.len() - r.pos) as u64;
    if total.checked_mul(record_len as u64) != Some(remaining) {
        return Err(r.fail(
            r.pos,
            format!("header announces {total} records of {record_len} bytes, {remaining} bytes follow"),
        ));
    }
    let mut seen = vec![0u64; n_styles];
    let mut ids = HashSet::new();
    let mut samples = Vec::with_capacity(total as usize);
    for _ in 0..total {
        let at = r.pos;
        let id = r.u64("id")?;
        let label = Label::from_u8(r.u8("label")?).ok_or_else(|| r.fail(at + 8, "label byte is not 0 or 1"))?;
        let k = r.u32("style index")? as usize;
        if k >= n_styles {
            return Err(r.fail(at + 9, format!("style index {k} out of range")));
        }
        if !ids.insert(id) {
            return Err(r.fail(at, format!("duplicate sample id {id}")));
        }
        seen[k] += 1;
        let raw = r.take(height * width * pixel_bytes, "pixels")?;
        let pixels: Vec<f64> = if encoding == ENC_U8 {
            raw.iter().map(|&b| b as f64 / 255.0).collect()
        } else {
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
        };
        let sample = Sample::patch(id, styles[k].clone(), label, height, width, pixels)
            .map_err(|e| r.fail(at, e.to_string()))?;
        samples.push(sample);
    }
    if seen != counts {
        return Err(r.fail(r.pos, "per-style record counts disagree with the header"));
    }
    Ok(samples)
}

pub fn save(samples: &[Sample], path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, encode_dataset(samples)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Sample>, FormatError> {
    decode_dataset(&std::fs::read(path)?)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    style: Vec<StyleSpec>,
}

/// Style specs as TOML, one `[[style]]` table each.
pub fn manifest_text(styles: &[StyleSpec]) -> Result<String, FormatError> {
    toml::to_string(&Manifest { style: styles.to_vec() }).map_err(|e| FormatError::Manifest(e.to_string()))
}

pub fn save_manifest(styles: &[StyleSpec], path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, manifest_text(styles)?)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<StyleSpec>, FormatError> {
    let text = std::fs::read_to_string(path)?;
    let m: Manifest = toml::from_str(&text).map_err(|e| FormatError::Manifest(e.to_string()))?;
    for s in &m.style {
        s.validate().map_err(|e| FormatError::Manifest(e.to_string()))?;
    }
    Ok(m.style)
}

#[cfg(test)]
mod tests {
    use super::super::{default_protocol_styles, gen_style};
    use super::*;

    fn three_styles() -> Vec<Sample> {
        let styles = default_protocol_styles();
        [0usize, 8, 12]
            .iter()
            .flat_map(|&k| gen_style(&styles[k], 4, 8, 1).unwrap())
            .collect()
    }

    #[test]
    fn empty_round_trip() {
        let bytes = encode_dataset(&[]).unwrap();
        assert!(decode_dataset(&bytes).unwrap().is_empty());
    }

    #[test]
    fn three_style_round_trip_is_bitwise() {
        let data = three_styles();
        let bytes = encode_dataset(&data).unwrap();
        assert_eq!(bytes[7], ENC_U8);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, data);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn off_grid_pixels_use_f64() {
        let s = Sample::patch(1, "x", Label::Real, 1, 2, vec![0.1234567, 1.0 / 3.0]).unwrap();
        let bytes = encode_dataset(std::slice::from_ref(&s)).unwrap();
        assert_eq!(bytes[7], ENC_F64);
        assert_eq!(decode_dataset(&bytes).unwrap(), vec![s]);
    }

    #[test]
    fn corruption_fails_closed() {
        let bytes = encode_dataset(&three_styles()).unwrap();
        let mut bad = bytes.clone();
        bad[2] ^= 0xFF;
        assert!(matches!(decode_dataset(&bad), Err(FormatError::Corrupt { offset: 0, .. })));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_dataset(truncated), Err(FormatError::Corrupt { .. })));
        let mut bad_label = bytes.clone();
        // first record follows the header; its label byte is 8 bytes in
        let header_len = bytes.len() - 12 * (13 + 64);
        bad_label[header_len + 8] = 7;
        match decode_dataset(&bad_label) {
            Err(FormatError::Corrupt { offset, .. }) => assert_eq!(offset, header_len + 8),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut data = three_styles();
        data[1].id = data[0].id;
        assert!(encode_dataset(&data).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("styles.toml");
        let styles = default_protocol_styles();
        save_manifest(&styles, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), styles);
    }
}
