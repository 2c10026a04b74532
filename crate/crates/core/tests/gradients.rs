mod common;

use cfsd::harness::{loss_and_gradients, LossConfig};
use cfsd::losses::SupConNorm;
use cfsd::model::{Architecture, DetectorParams};
use common::{detector_grad_error, random_batch, small_architecture};

fn configs() -> Vec<(&'static str, Option<LossConfig>)> {
    let sc_only = LossConfig {
        lambda: 1.0,
        beta: 0.1,
        supcon_norm: SupConNorm::Paper,
    };
    vec![
        ("ce", None),
        ("combined", Some(LossConfig::default())),
        ("combined-heavy-sc", Some(sc_only)),
        (
            "combined-positives",
            Some(LossConfig {
                supcon_norm: SupConNorm::Positives,
                ..LossConfig::default()
            }),
        ),
    ]
}

#[test]
fn full_detector_four_sample_batch() {
    for (name, cfg) in configs() {
        for seed in 0..3 {
            let params = DetectorParams::init(small_architecture(), seed).unwrap();
            let (x, labels, styles) = random_batch(&params, 4, 100 + seed);
            let err = detector_grad_error(&params, &x, &labels, &styles, cfg.as_ref(), 1e-5);
            assert!(err < 1e-4, "{name} seed {seed}: {err}");
        }
    }
}

#[test]
fn default_architecture_sampled_coordinates() {
    // The full default detector has ~140k weights; probe a fixed sample of them.
    let params = DetectorParams::init(Architecture::default(), 5).unwrap();
    let (x, labels, styles) = random_batch(&params, 6, 9);
    let cfg = LossConfig::default();
    let loss = |p: &DetectorParams| {
        loss_and_gradients(p, x.clone(), &labels, &styles, Some(&cfg))
            .unwrap()
            .0
            .total
    };
    let (_, grads) = loss_and_gradients(&params, x.clone(), &labels, &styles, Some(&cfg)).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for block in 0..grads.len() {
        let len = grads[block].len();
        for k in 0..8 {
            let i = (k * 7919 + block * 31) % len;
            let mut plus = params.clone();
            plus.tensors_mut()[block].data_mut()[i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[block].data_mut()[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            worst = worst.max((grads[block].data()[i] - fd).abs() / fd.abs().max(1.0));
        }
    }
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn backward_is_bitwise_deterministic() {
    let params = DetectorParams::init(small_architecture(), 3).unwrap();
    let (x, labels, styles) = random_batch(&params, 8, 4);
    let cfg = LossConfig::default();
    let a = loss_and_gradients(&params, x.clone(), &labels, &styles, Some(&cfg)).unwrap();
    let b = loss_and_gradients(&params, x, &labels, &styles, Some(&cfg)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn lambda_zero_matches_cross_entropy_path() {
    let params = DetectorParams::init(small_architecture(), 8).unwrap();
    let (x, labels, styles) = random_batch(&params, 8, 2);
    let zero = LossConfig {
        lambda: 0.0,
        ..LossConfig::default()
    };
    let ce = loss_and_gradients(&params, x.clone(), &labels, &styles, None).unwrap();
    let combined = loss_and_gradients(&params, x, &labels, &styles, Some(&zero)).unwrap();
    assert_eq!(ce, combined);
}
