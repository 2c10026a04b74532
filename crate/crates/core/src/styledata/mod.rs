//! Procedural "real-analog" and "synthetic-analog" ridge-pattern styles,
//! stratified splitting, and dataset file I/O.
//!
//! Every pixel buffer is a pure function of `(StyleSpec, sample index, seed)`.
//! Real-analog styles differ in ridge frequency, flow smoothness, blur and
//! sensor noise. Synthetic-analog styles reuse the same ridge model and add a
//! position-locked artifact signature on top.

mod io;
mod split;

pub use io::{decode_dataset, encode_dataset, load, load_manifest, manifest_text, save, save_manifest, FormatError};
pub use split::{split, split_by_count};

use crate::model::{Label, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StyleError {
    #[error("invalid style `{tag}`: {reason}")]
    InvalidSpec { tag: String, reason: String },
    #[error("invalid request: {0}")]
    Request(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleClass {
    Real,
    Synthetic,
}

impl StyleClass {
    pub fn label(self) -> Label {
        match self {
            StyleClass::Real => Label::Real,
            StyleClass::Synthetic => Label::Synthetic,
        }
    }
}

/// Generator fingerprint superimposed after blur and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Artifact {
    None,
    /// Bright one-pixel lines every `period` pixels along both axes.
    PeriodicGrid { period: usize, amplitude: f64 },
    /// Fixed-phase plane wave at `(freq_u, freq_v)` cycles/pixel.
    SpectralPeak { freq_u: f64, freq_v: f64, amplitude: f64 },
    /// Blend toward a `levels`-level requantization of the image.
    Quantization { levels: usize, amplitude: f64 },
    /// ±amplitude/2 checkerboard with `period`-pixel cells.
    Checker { period: usize, amplitude: f64 },
}

impl Artifact {
    pub fn amplitude(&self) -> f64 {
        match *self {
            Artifact::None => 0.0,
            Artifact::PeriodicGrid { amplitude, .. }
            | Artifact::SpectralPeak { amplitude, .. }
            | Artifact::Quantization { amplitude, .. }
            | Artifact::Checker { amplitude, .. } => amplitude,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::None => "none",
            Artifact::PeriodicGrid { .. } => "periodic-grid",
            Artifact::SpectralPeak { .. } => "spectral-peak",
            Artifact::Quantization { .. } => "quantization",
            Artifact::Checker { .. } => "checker",
        }
    }

    /// Additive artifact value at `(u, v)`; quantization is handled separately.
    fn additive(&self, u: usize, v: usize) -> f64 {
        match *self {
            Artifact::PeriodicGrid { period, amplitude } => {
                if u % period == 0 || v % period == 0 {
                    amplitude
                } else {
                    0.0
                }
            }
            Artifact::SpectralPeak {
                freq_u,
                freq_v,
                amplitude,
            } => 0.5 * amplitude * (2.0 * PI * (freq_u * u as f64 + freq_v * v as f64)).sin(),
            Artifact::Checker { period, amplitude } => {
                let parity = (u / period + v / period) % 2;
                if parity == 0 {
                    0.5 * amplitude
                } else {
                    -0.5 * amplitude
                }
            }
            Artifact::None | Artifact::Quantization { .. } => 0.0,
        }
    }
}

/// Parameters of one procedural style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub tag: String,
    pub class: StyleClass,
    /// Ridge frequency range in cycles/pixel.
    pub freq_low: f64,
    pub freq_high: f64,
    /// Peak orientation-field deviation in radians; larger means curlier flow.
    pub orientation_smoothness: f64,
    pub noise_sigma: f64,
    pub blur_radius: usize,
    pub artifact: Artifact,
    pub base_seed: u64,
}

impl StyleSpec {
    pub fn validate(&self) -> Result<(), StyleError> {
        let fail = |reason: String| StyleError::InvalidSpec {
            tag: self.tag.clone(),
            reason,
        };
        if self.tag.is_empty() {
            return Err(fail("empty tag".into()));
        }
        if !(self.freq_low > 0.0 && self.freq_high < 0.5 && self.freq_low <= self.freq_high) {
            return Err(fail(format!(
                "frequency band [{}, {}] must lie in (0, 0.5)",
                self.freq_low, self.freq_high
            )));
        }
        if self.noise_sigma < 0.0 || self.orientation_smoothness < 0.0 {
            return Err(fail("noise and smoothness must be nonnegative".into()));
        }
        let amp = self.artifact.amplitude();
        if !(amp >= 0.0) {
            return Err(fail(format!("artifact amplitude {amp} must be nonnegative")));
        }
        match self.artifact {
            Artifact::PeriodicGrid { period, .. } | Artifact::Checker { period, .. } if period == 0 => {
                return Err(fail("artifact period must be positive".into()))
            }
            Artifact::Quantization { levels, .. } if levels < 2 => {
                return Err(fail("quantization needs at least two levels".into()))
            }
            _ => {}
        }
        if self.class == StyleClass::Real && self.artifact != Artifact::None {
            return Err(fail("real-analog styles carry no artifact".into()));
        }
        Ok(())
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seed derivation: independent streams for every `(a, b)`.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

fn tag_hash(tag: &str) -> u32 {
    // FNV-1a
    let mut h: u32 = 0x811C_9DC5;
    for b in tag.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// Sample id: style-tag hash in the high half, index in the low half.
pub fn sample_id(tag: &str, index: usize) -> u64 {
    ((tag_hash(tag) as u64) << 32) | index as u64
}

/// Renders `n` samples of `spec` at `size × size`.
pub fn gen_style(spec: &StyleSpec, n: usize, size: usize, seed: u64) -> Result<Vec<Sample>, StyleError> {
    spec.validate()?;
    if n == 0 {
        return Err(StyleError::Request("n must be at least 1".into()));
    }
    if size == 0 || n > u32::MAX as usize {
        return Err(StyleError::Request(format!("unsupported size {size} or count {n}")));
    }
    let stream = derive_seed(spec.base_seed, seed);
    (0..n)
        .map(|i| {
            let pixels = render(spec, size, derive_seed(stream, i as u64));
            Sample::patch(sample_id(&spec.tag, i), spec.tag.clone(), spec.class.label(), size, size, pixels)
                .map_err(|e| StyleError::Request(e.to_string()))
        })
        .collect()
}

/// Orientation field: a base angle plus a few low-frequency sinusoids.
struct OrientationField {
    base: f64,
    terms: Vec<(f64, f64, f64, f64)>,
}

impl OrientationField {
    fn random(rng: &mut ChaCha8Rng, smoothness: f64, size: usize) -> Self {
        let k0 = 2.0 * PI / size as f64;
        let terms = (0..3)
            .map(|_| {
                (
                    smoothness * rng.random_range(-1.0..1.0),
                    k0 * rng.random_range(-1.5..1.5),
                    k0 * rng.random_range(-1.5..1.5),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        Self {
            base: rng.random_range(0.0..PI),
            terms,
        }
    }

    fn angle(&self, u: f64, v: f64) -> f64 {
        self.base + self.terms.iter().map(|&(a, wu, wv, ph)| a * (wu * u + wv * v + ph).sin()).sum::<f64>()
    }
}

fn render(spec: &StyleSpec, size: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freq = if spec.freq_high > spec.freq_low {
        rng.random_range(spec.freq_low..spec.freq_high)
    } else {
        spec.freq_low
    };
    let field = OrientationField::random(&mut rng, spec.orientation_smoothness, size);
    let center_u = rng.random_range(0.0..size as f64);
    let center_v = rng.random_range(0.0..size as f64);

    let mut img = vec![0.0; size * size];
    for u in 0..size {
        for v in 0..size {
            let (x, y) = (u as f64 - center_u, v as f64 - center_v);
            let theta = field.angle(x, y);
            img[u * size + v] = 0.5 * (1.0 + (2.0 * PI * freq * (x * theta.cos() + y * theta.sin())).sin());
        }
    }
    if spec.blur_radius > 0 {
        img = box_blur(&img, size, spec.blur_radius);
    }
    if spec.noise_sigma > 0.0 {
        for p in img.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *p += spec.noise_sigma * n;
        }
    }
    match spec.artifact {
        Artifact::None => {}
        Artifact::Quantization { levels, amplitude } => {
            let steps = (levels - 1) as f64;
            for p in img.iter_mut() {
                let q = (p.clamp(0.0, 1.0) * steps).round() / steps;
                *p = (1.0 - amplitude) * *p + amplitude * q;
            }
        }
        art => {
            for u in 0..size {
                for v in 0..size {
                    img[u * size + v] += art.additive(u, v);
                }
            }
        }
    }
    img.iter().map(|p| quantize8(p.clamp(0.0, 1.0))).collect()
}

/// Rounds to the nearest multiple of 1/255.
pub fn quantize8(p: f64) -> f64 {
    (p * 255.0).round() / 255.0
}

fn box_blur(img: &[f64], size: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let s = size as isize;
    let mut out = vec![0.0; img.len()];
    for u in 0..s {
        for v in 0..s {
            let mut acc = 0.0;
            let mut count = 0.0;
            for du in -r..=r {
                for dv in -r..=r {
                    let (uu, vv) = (u + du, v + dv);
                    if (0..s).contains(&uu) && (0..s).contains(&vv) {
                        acc += img[(uu * s + vv) as usize];
                        count += 1.0;
                    }
                }
            }
            out[(u * s + v) as usize] = acc / count;
        }
    }
    out
}

fn real_style(tag: &str, band: (f64, f64), smooth: f64, noise: f64, blur: usize, seed: u64) -> StyleSpec {
    StyleSpec {
        tag: tag.into(),
        class: StyleClass::Real,
        freq_low: band.0,
        freq_high: band.1,
        orientation_smoothness: smooth,
        noise_sigma: noise,
        blur_radius: blur,
        artifact: Artifact::None,
        base_seed: seed,
    }
}

fn synthetic_style(tag: &str, artifact: Artifact, seed: u64) -> StyleSpec {
    StyleSpec {
        tag: tag.into(),
        class: StyleClass::Synthetic,
        freq_low: 0.08,
        freq_high: 0.14,
        orientation_smoothness: 0.6,
        noise_sigma: 0.06,
        blur_radius: 1,
        artifact,
        base_seed: seed,
    }
}

/// Eight real-analog styles, the base synthetic style, then the five
/// adaptation styles in order of decreasing artifact amplitude.
pub fn default_protocol_styles() -> Vec<StyleSpec> {
    vec![
        real_style("real-fvc", (0.08, 0.12), 0.5, 0.04, 1, 101),
        real_style("real-sd4", (0.07, 0.11), 0.7, 0.08, 1, 102),
        real_style("real-sd14", (0.09, 0.13), 0.6, 0.06, 0, 103),
        real_style("real-sd300", (0.10, 0.14), 0.4, 0.05, 1, 104),
        real_style("real-sd301", (0.08, 0.13), 0.8, 0.10, 2, 105),
        real_style("real-sd302", (0.09, 0.14), 0.5, 0.07, 0, 106),
        real_style("real-molf", (0.07, 0.12), 0.6, 0.09, 1, 107),
        real_style("real-lfiw", (0.08, 0.14), 0.9, 0.12, 2, 108),
        synthetic_style("syn-genprint", Artifact::PeriodicGrid { period: 4, amplitude: 0.5 }, 200),
        synthetic_style("syn-sfinge", Artifact::Checker { period: 1, amplitude: 0.30 }, 201),
        synthetic_style(
            "syn-ibg",
            Artifact::SpectralPeak {
                freq_u: 0.25,
                freq_v: 0.125,
                amplitude: 0.22,
            },
            202,
        ),
        synthetic_style("syn-iwgan", Artifact::Checker { period: 2, amplitude: 0.16 }, 203),
        synthetic_style(
            "syn-printsgan",
            Artifact::SpectralPeak {
                freq_u: -0.1875,
                freq_v: 0.3125,
                amplitude: 0.12,
            },
            204,
        ),
        synthetic_style(
            "syn-fpgan",
            Artifact::SpectralPeak {
                freq_u: 0.375,
                freq_v: -0.25,
                amplitude: 0.09,
            },
            205,
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SampleInput;

    fn pixels(s: &Sample) -> &[f64] {
        match &s.input {
            SampleInput::Patch { pixels, .. } => pixels,
            _ => unreachable!(),
        }
    }

    /// |Σ x(u,v) e^{−2πi(fu·u + fv·v)}| by direct summation.
    fn dft_magnitude(img: &[f64], size: usize, fu: f64, fv: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for u in 0..size {
            for v in 0..size {
                let ph = -2.0 * PI * (fu * u as f64 + fv * v as f64);
                re += img[u * size + v] * ph.cos();
                im += img[u * size + v] * ph.sin();
            }
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn clean_ridge_stays_in_unit_range() {
        let spec = synthetic_style("clean", Artifact::None, 5);
        let spec = StyleSpec {
            noise_sigma: 0.0,
            blur_radius: 0,
            ..spec
        };
        let samples = gen_style(&spec, 4, 32, 1).unwrap();
        for s in &samples {
            let px = pixels(s);
            assert!(px.iter().all(|p| (0.0..=1.0).contains(p)));
            // a pure ridge pattern spans most of the range
            let (lo, hi) = px.iter().fold((1.0f64, 0.0f64), |(l, h), &p| (l.min(p), h.max(p)));
            assert!(hi - lo > 0.9);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = &default_protocol_styles()[9];
        let a = gen_style(spec, 5, 32, 77).unwrap();
        let b = gen_style(spec, 5, 32, 77).unwrap();
        assert_eq!(a, b);
        let c = gen_style(spec, 5, 32, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn artifact_amplitude_shows_up_in_spectrum() {
        let make = |amp: f64| {
            synthetic_style(
                "probe",
                Artifact::SpectralPeak {
                    freq_u: 0.25,
                    freq_v: 0.125,
                    amplitude: amp,
                },
                9,
            )
        };
        let clean = gen_style(&make(0.0), 20, 32, 3).unwrap();
        let marked = gen_style(&make(0.3), 20, 32, 3).unwrap();
        let mut diff = 0.0;
        let (mut p_clean, mut p_marked) = (0.0, 0.0);
        for (a, b) in clean.iter().zip(&marked) {
            diff += pixels(a).iter().zip(pixels(b)).map(|(x, y)| (x - y).abs()).sum::<f64>();
            p_clean += dft_magnitude(pixels(a), 32, 0.25, 0.125).powi(2);
            p_marked += dft_magnitude(pixels(b), 32, 0.25, 0.125).powi(2);
        }
        assert!(diff > 0.0);
        assert!(p_marked > 10.0 * p_clean, "{p_marked} vs {p_clean}");
    }

    #[test]
    fn real_styles_have_no_artifact_power() {
        // Floor: mean power on the ring of the same radius, where no artifact
        // lives. Real-analog power at each artifact frequency stays near it,
        // while the synthetic style carrying that artifact stands far above.
        let styles = default_protocol_styles();
        let probes = [
            (8, 0.25, 0.0),
            (9, 0.5, 0.5),
            (10, 0.25, 0.125),
            (11, 0.25, 0.25),
            (12, -0.1875, 0.3125),
            (13, 0.375, -0.25),
        ];
        let power = |samples: &[Sample], fu: f64, fv: f64| {
            samples.iter().map(|s| dft_magnitude(pixels(s), 32, fu, fv).powi(2)).sum::<f64>() / samples.len() as f64
        };
        for (k, fu, fv) in probes {
            let radius = f64::hypot(fu, fv);
            let synthetic = gen_style(&styles[k], 10, 32, 4).unwrap();
            let syn_power = power(&synthetic, fu, fv);
            for real in styles.iter().filter(|s| s.class == StyleClass::Real) {
                let samples = gen_style(real, 10, 32, 4).unwrap();
                let at = power(&samples, fu, fv);
                let ring = (0..32)
                    .map(|a| {
                        let phi = 2.0 * PI * (a as f64 + 0.5) / 32.0;
                        power(&samples, radius * phi.cos(), radius * phi.sin())
                    })
                    .sum::<f64>()
                    / 32.0;
                assert!(at < 4.0 * ring, "{} at ({fu},{fv}): {at} vs floor {ring}", real.tag);
                assert!(syn_power > 5.0 * at, "{}: {syn_power} vs {at}", styles[k].tag);
            }
        }
    }

    #[test]
    fn default_protocol_shape() {
        let styles = default_protocol_styles();
        assert_eq!(styles.len(), 14);
        assert_eq!(styles.iter().filter(|s| s.class == StyleClass::Real).count(), 8);
        let adapt = &styles[9..];
        assert_eq!(adapt.len(), 5);
        assert!(adapt.iter().all(|s| s.class == StyleClass::Synthetic));
        for w in adapt.windows(2) {
            assert!(w[0].artifact.amplitude() > w[1].artifact.amplitude());
        }
        assert_ne!(styles[8].artifact.kind(), styles[9].artifact.kind());
        for s in &styles {
            s.validate().unwrap();
        }
        let mut hashes: Vec<u32> = styles.iter().map(|s| tag_hash(&s.tag)).collect();
        hashes.sort_unstable();
        hashes.dedup();
        assert_eq!(hashes.len(), styles.len());
    }

    #[test]
    fn spec_validation() {
        let mut s = default_protocol_styles()[0].clone();
        s.artifact = Artifact::Checker {
            period: 1,
            amplitude: 0.1,
        };
        assert!(s.validate().is_err());
        let mut s = default_protocol_styles()[9].clone();
        s.freq_high = 0.6;
        assert!(s.validate().is_err());
        assert!(gen_style(&default_protocol_styles()[0], 0, 32, 0).is_err());
    }
}
