//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "CFSD1"                      magic
//! u32 patch_height, u32 patch_width
//! u32 n_widths, n_widths × u32 extractor widths
//! u64 total parameter count
//! f64 × count                  weight blocks in DetectorParams::tensors order
//! u8 optimizer flag (0 | 1)
//!   if 1: f64 lr_max, lr_min, weight_decay, beta1, beta2, eps
//!         u64 total_steps, u64 step
//!         f64 × count first moments, f64 × count second moments
//! ```

use super::{Architecture, DetectorParams, ModelError};
use crate::optim::{AdamWConfig, OptState};
use std::path::Path;

const MAGIC: &[u8; 5] = b"CFSD1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DetectorParams,
    pub optimizer: Option<OptState>,
}

pub fn encode_checkpoint(params: &DetectorParams, optimizer: Option<&OptState>) -> Vec<u8> {
    let arch = &params.architecture;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(arch.patch_height as u32).to_le_bytes());
    out.extend_from_slice(&(arch.patch_width as u32).to_le_bytes());
    out.extend_from_slice(&(arch.extractor_widths.len() as u32).to_le_bytes());
    for &w in &arch.extractor_widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    let tensors = params.tensors();
    let count: usize = tensors.iter().map(|t| t.len()).sum();
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for t in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match optimizer {
        None => out.push(0),
        Some(state) => {
            out.push(1);
            let c = &state.config;
            for v in [c.lr_max, c.lr_min, c.weight_decay, c.beta1, c.beta2, c.eps] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&state.total_steps.to_le_bytes());
            out.extend_from_slice(&state.step.to_le_bytes());
            for block in state.m.iter().chain(&state.v) {
                for v in block {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() - self.pos < n {
            return Err(ModelError::Checkpoint {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn fail(&self, reason: impl Into<String>) -> ModelError {
        ModelError::Checkpoint {
            offset: self.pos,
            reason: reason.into(),
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(ModelError::Checkpoint {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let patch_height = r.u32("patch height")? as usize;
    let patch_width = r.u32("patch width")? as usize;
    let n_widths = r.u32("layer count")? as usize;
    if n_widths > 64 {
        return Err(r.fail(format!("implausible layer count {n_widths}")));
    }
    let mut extractor_widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        extractor_widths.push(r.u32("layer width")? as usize);
    }
    let architecture = Architecture {
        patch_height,
        patch_width,
        extractor_widths,
    };
    let mut params = DetectorParams::zeros(architecture).map_err(|e| r.fail(e.to_string()))?;
    let count = r.u64("parameter count")? as usize;
    let expected: usize = params.tensors().iter().map(|t| t.len()).sum();
    if count != expected {
        return Err(r.fail(format!("parameter count {count} does not match architecture ({expected})")));
    }
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = r.f64("weights")?;
        }
    }
    let flag_at = r.pos;
    let optimizer = match r.take(1, "optimizer flag")?[0] {
        0 => None,
        1 => {
            let mut h = [0.0; 6];
            for v in &mut h {
                *v = r.f64("optimizer hyperparameters")?;
            }
            let config = AdamWConfig {
                lr_max: h[0],
                lr_min: h[1],
                weight_decay: h[2],
                beta1: h[3],
                beta2: h[4],
                eps: h[5],
            };
            let total_steps = r.u64("total steps")?;
            let step = r.u64("step")?;
            let mut state = OptState::new(config, &params.tensors(), total_steps);
            state.step = step;
            for block in state.m.iter_mut().chain(state.v.iter_mut()) {
                for v in block.iter_mut() {
                    *v = r.f64("moments")?;
                }
            }
            Some(state)
        }
        other => {
            return Err(ModelError::Checkpoint {
                offset: flag_at,
                reason: format!("unknown optimizer flag {other}"),
            })
        }
    };
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes"));
    }
    Ok(Checkpoint { params, optimizer })
}

pub fn write_checkpoint(
    path: &Path,
    params: &DetectorParams,
    optimizer: Option<&OptState>,
) -> Result<(), ModelError> {
    std::fs::write(path, encode_checkpoint(params, optimizer))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    decode_checkpoint(&std::fs::read(path)?)
}
