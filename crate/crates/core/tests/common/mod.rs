#![allow(dead_code)]

use cfsd::harness::{loss_and_gradients, LossConfig, RunConfig};
use cfsd::model::{Architecture, DetectorParams, Label, Sample};
use cfsd::numcore::{grad_check, NumError, Tensor};
use cfsd::styledata::default_protocol_styles;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A protocol small enough to train in well under a second per stage:
/// 16×16 patches, two real styles, the base style and two adaptation styles.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.architecture = Architecture {
        patch_height: 16,
        patch_width: 16,
        extractor_widths: vec![32, 16],
    };
    c.base.epochs = 2;
    c.base.batch_size = 64;
    c.adaptation.epochs = 2;
    c.adaptation.batch_size = 32;
    c.adaptation.shots = 20;
    c.replay_quota = 20;
    c.data.real_train = 60;
    c.data.real_test = 30;
    c.data.base_train = 120;
    c.data.base_test = 40;
    c.data.adapt_pool = 40;
    c.data.adapt_test = 40;
    c.ablation.seeds = vec![1, 2];
    c.ablation.shots = vec![5, 20];
    c.ablation.lambdas = vec![0.0, 0.1];
    let styles = default_protocol_styles();
    c.styles = vec![
        styles[0].clone(),
        styles[1].clone(),
        styles[8].clone(),
        styles[9].clone(),
        styles[10].clone(),
    ];
    c.validate().unwrap();
    c
}

/// `n` random raw patches, preprocessed into an `n × H·W` input matrix, with
/// labels alternating real/synthetic (so every class has a partner for n ≥ 4).
pub fn random_batch(params: &DetectorParams, n: usize, seed: u64) -> (Tensor, Vec<Label>, Vec<String>) {
    let arch = &params.architecture;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Sample> = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Real } else { Label::Synthetic };
            let pixels = (0..arch.patch_height * arch.patch_width).map(|_| rng.random::<f64>()).collect();
            Sample::patch(i as u64, format!("style{}", i % 3), label, arch.patch_height, arch.patch_width, pixels)
                .unwrap()
        })
        .collect();
    let x = params.prepare_batch(&samples).unwrap();
    let labels = samples.iter().map(|s| s.label).collect();
    let styles = samples.iter().map(|s| s.style.clone()).collect();
    (x, labels, styles)
}

/// Max relative error of the detector's parameter gradients against
/// central differences with step `h`.
pub fn detector_grad_error(
    params: &DetectorParams,
    x: &Tensor,
    labels: &[Label],
    styles: &[String],
    contrastive: Option<&LossConfig>,
    h: f64,
) -> f64 {
    let base: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    grad_check(
        |ts: &[Tensor]| {
            let mut p = params.clone();
            for (dst, src) in p.tensors_mut().into_iter().zip(ts) {
                *dst = src.clone();
            }
            let (l, g) = loss_and_gradients(&p, x.clone(), labels, styles, contrastive).map_err(|e| {
                NumError::Degenerate {
                    op: "detector loss",
                    reason: e.to_string(),
                }
            })?;
            Ok((l.total, g))
        },
        &base,
        h,
    )
    .unwrap()
}

pub fn small_architecture() -> Architecture {
    Architecture {
        patch_height: 4,
        patch_width: 4,
        extractor_widths: vec![6, 4],
    }
}
