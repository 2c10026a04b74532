//! The detector: variance crop + standardization, a dense feature extractor,
//! and a two-layer scoring head ending in a sigmoid.

mod checkpoint;
mod preprocess;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use preprocess::{preprocess, select_window};

use crate::numcore::{self, sigmoid, NumError, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("size error: {0}")]
    Size(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("checkpoint format error at byte {offset}: {reason}")]
    Checkpoint { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Real,
    Synthetic,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Real => 0.0,
            Label::Synthetic => 1.0,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Real),
            1 => Some(Label::Synthetic),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleInput {
    /// Grayscale pixels in `[0, 1]`, row-major.
    Patch {
        height: usize,
        width: usize,
        pixels: Vec<f64>,
    },
    /// Precomputed representation; usable only with an identity extractor.
    Features(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub style: String,
    pub label: Label,
    pub input: SampleInput,
}

impl Sample {
    pub fn patch(
        id: u64,
        style: impl Into<String>,
        label: Label,
        height: usize,
        width: usize,
        pixels: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let sample = Self {
            id,
            style: style.into(),
            label,
            input: SampleInput::Patch {
                height,
                width,
                pixels,
            },
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn features(
        id: u64,
        style: impl Into<String>,
        label: Label,
        features: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let sample = Self {
            id,
            style: style.into(),
            label,
            input: SampleInput::Features(features),
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.style.is_empty() {
            return Err(ModelError::InvalidSample(format!("sample {} has an empty style tag", self.id)));
        }
        match &self.input {
            SampleInput::Patch {
                height,
                width,
                pixels,
            } => {
                if pixels.len() != height * width {
                    return Err(ModelError::InvalidSample(format!(
                        "sample {} has {} pixels for {height}×{width}",
                        self.id,
                        pixels.len()
                    )));
                }
                if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(ModelError::InvalidSample(format!(
                        "sample {} has pixel {p} outside [0, 1]",
                        self.id
                    )));
                }
            }
            SampleInput::Features(f) => {
                if f.iter().any(|x| !x.is_finite()) {
                    return Err(ModelError::InvalidSample(format!(
                        "sample {} has a nonfinite feature",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Shape of the detector. An empty `extractor_widths` means the identity
/// extractor, whose feature dimension is `patch_height · patch_width`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub patch_height: usize,
    pub patch_width: usize,
    pub extractor_widths: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            patch_height: 32,
            patch_width: 32,
            extractor_widths: vec![128, 64],
        }
    }
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        self.patch_height * self.patch_width
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor_widths.last().copied().unwrap_or_else(|| self.input_dim())
    }

    pub fn is_identity(&self) -> bool {
        self.extractor_widths.is_empty()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patch_height == 0 || self.patch_width == 0 {
            return Err(ModelError::Architecture("patch extents must be positive".into()));
        }
        if self.extractor_widths.contains(&0) {
            return Err(ModelError::Architecture("layer widths must be positive".into()));
        }
        let d = self.feature_dim();
        if d % 2 != 0 {
            return Err(ModelError::Architecture(format!(
                "feature dimension {d} must be even (head hidden width is d/2)"
            )));
        }
        Ok(())
    }
}

/// Fully connected layer: `y = x·W + b` with `W: in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![fan_in, fan_out]),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    /// Uniform in `±√(6/(fan_in+fan_out))`, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect();
        Self {
            weight: Tensor::new(vec![fan_in, fan_out], data).expect("shape matches"),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, NumError> {
        let mut y = numcore::matmul(x, &self.weight)?;
        let n = self.fan_out();
        let bias = self.bias.data();
        for row in y.data_mut().chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    fn forward_tape(&self, tape: &mut Tape, x: Var, params: &mut Vec<Var>) -> Result<Var, NumError> {
        let w = tape.leaf(self.weight.clone());
        let b = tape.leaf(self.bias.clone());
        params.push(w);
        params.push(b);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

/// Feature extractor `F_φ`: dense layers with ReLU between them; the last
/// layer is linear. No layers means the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct Extractor {
    pub layers: Vec<Dense>,
}

impl Extractor {
    /// Features for a batch of flattened, preprocessed patches (`n × input_dim`).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NumError> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Features of one flattened patch.
    pub fn extract(&self, patch: &[f64]) -> Result<Vec<f64>, NumError> {
        let x = Tensor::matrix(1, patch.len(), patch.to_vec())?;
        Ok(self.forward(&x)?.into_data())
    }
}

/// Scoring head `H_ψ`: `d → d/2` with ReLU, then `d/2 → 1` and a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub hidden: Dense,
    pub output: Dense,
}

impl Head {
    pub fn logits(&self, z: &Tensor) -> Result<Vec<f64>, NumError> {
        let mut h = self.hidden.forward(z)?;
        h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(self.output.forward(&h)?.into_data())
    }

    /// `s = sigmoid(w₂ᵀ relu(W₁z + b₁) + b₂)` for one feature vector.
    pub fn score(&self, z: &[f64]) -> Result<f64, NumError> {
        if z.len() != self.hidden.fan_in() {
            return Err(NumError::ShapeMismatch {
                op: "score",
                left: vec![z.len()],
                right: vec![self.hidden.fan_in()],
            });
        }
        let z = Tensor::matrix(1, z.len(), z.to_vec())?;
        Ok(sigmoid(self.logits(&z)?[0]))
    }
}

/// Everything the tape produced for one batch.
#[derive(Debug, Clone)]
pub struct TapeForward {
    /// Parameter leaves in [`DetectorParams::tensors`] order.
    pub params: Vec<Var>,
    pub features: Var,
    pub logits: Var,
    pub scores: Var,
}

/// θ = {φ, ψ} plus the architecture they instantiate.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub architecture: Architecture,
    pub extractor: Extractor,
    pub head: Head,
}

impl DetectorParams {
    pub fn init(architecture: Architecture, seed: u64) -> Result<Self, ModelError> {
        architecture.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = architecture.input_dim();
        let mut layers = Vec::new();
        for &w in &architecture.extractor_widths {
            layers.push(Dense::glorot(fan_in, w, &mut rng));
            fan_in = w;
        }
        let d = architecture.feature_dim();
        let head = Head {
            hidden: Dense::glorot(d, d / 2, &mut rng),
            output: Dense::glorot(d / 2, 1, &mut rng),
        };
        Ok(Self {
            architecture,
            extractor: Extractor { layers },
            head,
        })
    }

    pub fn zeros(architecture: Architecture) -> Result<Self, ModelError> {
        architecture.validate()?;
        let mut fan_in = architecture.input_dim();
        let mut layers = Vec::new();
        for &w in &architecture.extractor_widths {
            layers.push(Dense::zeros(fan_in, w));
            fan_in = w;
        }
        let d = architecture.feature_dim();
        Ok(Self {
            architecture,
            extractor: Extractor { layers },
            head: Head {
                hidden: Dense::zeros(d, d / 2),
                output: Dense::zeros(d / 2, 1),
            },
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.architecture.feature_dim()
    }

    /// Weight blocks in declared order: extractor layers, head hidden, head output;
    /// each as weight then bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.extractor.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.extend([
            &self.head.hidden.weight,
            &self.head.hidden.bias,
            &self.head.output.weight,
            &self.head.output.bias,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.extractor.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.extend([
            &mut self.head.hidden.weight,
            &mut self.head.hidden.bias,
            &mut self.head.output.weight,
            &mut self.head.output.bias,
        ]);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Preprocessed model input for one sample, flattened.
    pub fn prepare(&self, sample: &Sample) -> Result<Vec<f64>, ModelError> {
        let arch = &self.architecture;
        match &sample.input {
            SampleInput::Patch {
                height,
                width,
                pixels,
            } => preprocess(pixels, *height, *width, arch.patch_height, arch.patch_width),
            SampleInput::Features(f) => {
                if !arch.is_identity() || f.len() != arch.feature_dim() {
                    return Err(ModelError::InvalidSample(format!(
                        "feature-vector sample {} needs an identity extractor of dimension {}",
                        sample.id,
                        f.len()
                    )));
                }
                Ok(f.clone())
            }
        }
    }

    /// Stacks prepared inputs into an `n × input_dim` matrix.
    pub fn prepare_batch<'a>(
        &self,
        samples: impl IntoIterator<Item = &'a Sample>,
    ) -> Result<Tensor, ModelError> {
        let mut data = Vec::new();
        let mut n = 0;
        for s in samples {
            data.extend(self.prepare(s)?);
            n += 1;
        }
        Ok(Tensor::matrix(n, self.architecture.input_dim(), data)?)
    }

    /// Scores for already-prepared inputs.
    pub fn scores(&self, inputs: &Tensor) -> Result<Vec<f64>, NumError> {
        let z = self.extractor.forward(inputs)?;
        Ok(self.head.logits(&z)?.into_iter().map(sigmoid).collect())
    }

    pub fn score_sample(&self, sample: &Sample) -> Result<f64, ModelError> {
        let x = self.prepare(sample)?;
        let z = self.extractor.extract(&x)?;
        Ok(self.head.score(&z)?)
    }

    /// Hard decision `s ≥ τ` plus the raw score.
    pub fn detect(&self, sample: &Sample, tau: f64) -> Result<(Label, f64), ModelError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(ModelError::Size(format!("threshold {tau} outside [0, 1]")));
        }
        let s = self.score_sample(sample)?;
        Ok((decide(s, tau), s))
    }

    /// Records the full forward pass on `tape` with every weight as a leaf.
    pub fn forward_tape(&self, tape: &mut Tape, inputs: Var) -> Result<TapeForward, NumError> {
        let mut params = Vec::new();
        let mut h = inputs;
        let n_layers = self.extractor.layers.len();
        for (i, layer) in self.extractor.layers.iter().enumerate() {
            h = layer.forward_tape(tape, h, &mut params)?;
            if i + 1 < n_layers {
                h = tape.relu(h);
            }
        }
        let features = h;
        let hidden = self.head.hidden.forward_tape(tape, features, &mut params)?;
        let hidden = tape.relu(hidden);
        let logits = self.head.output.forward_tape(tape, hidden, &mut params)?;
        let scores = tape.sigmoid(logits);
        Ok(TapeForward {
            params,
            features,
            logits,
            scores,
        })
    }
}

/// Tie counts as synthetic.
pub fn decide(score: f64, tau: f64) -> Label {
    if score >= tau {
        Label::Synthetic
    } else {
        Label::Real
    }
}
