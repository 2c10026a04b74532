use super::{derive_seed, StyleError};
use crate::model::Sample;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, HashSet};

/// Per-style stratified split; `round(fraction·count)` samples of each style
/// go to the test side. Both sides keep dataset order.
pub fn split(dataset: &[Sample], test_fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>), StyleError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(StyleError::Request(format!("test fraction {test_fraction} must lie in (0, 1)")));
    }
    split_by_count(dataset, |n| (test_fraction * n as f64).round() as usize, seed)
}

/// Stratified split where `test_count(style_size)` fixes each style's test share.
pub fn split_by_count(
    dataset: &[Sample],
    test_count: impl Fn(usize) -> usize,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>), StyleError> {
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, s) in dataset.iter().enumerate() {
        members
            .entry(s.style.as_str())
            .or_insert_with(|| {
                order.push(s.style.as_str());
                Vec::new()
            })
            .push(i);
    }
    let mut test_idx = HashSet::new();
    for (k, style) in order.iter().enumerate() {
        let idx = &members[style];
        let n_test = test_count(idx.len());
        if n_test > idx.len() {
            return Err(StyleError::Request(format!(
                "style `{style}` has {} samples, cannot hold out {n_test}",
                idx.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        for j in index::sample(&mut rng, idx.len(), n_test) {
            test_idx.insert(idx[j]);
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in dataset.iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Label;

    fn data() -> Vec<Sample> {
        let mut v = Vec::new();
        for (k, style) in ["a", "b", "c"].iter().enumerate() {
            for i in 0..1000 {
                let label = if k == 0 { Label::Real } else { Label::Synthetic };
                v.push(Sample::features((k * 10_000 + i) as u64, *style, label, vec![i as f64]).unwrap());
            }
        }
        v
    }

    #[test]
    fn stratified_counts() {
        let (train, test) = split(&data(), 0.1, 5).unwrap();
        for style in ["a", "b", "c"] {
            assert_eq!(test.iter().filter(|s| s.style == style).count(), 100);
            assert_eq!(train.iter().filter(|s| s.style == style).count(), 900);
        }
    }

    #[test]
    fn partition_and_determinism() {
        let d = data();
        let (train, test) = split(&d, 0.25, 11).unwrap();
        let mut ids: Vec<u64> = train.iter().chain(&test).map(|s| s.id).collect();
        ids.sort_unstable();
        let mut orig: Vec<u64> = d.iter().map(|s| s.id).collect();
        orig.sort_unstable();
        assert_eq!(ids, orig);
        assert_eq!(split(&d, 0.25, 11).unwrap(), (train, test.clone()));
        assert_ne!(split(&d, 0.25, 12).unwrap().1, test);
    }

    #[test]
    fn bad_fraction() {
        assert!(split(&data(), 0.0, 1).is_err());
        assert!(split(&data(), 1.0, 1).is_err());
        assert!(split_by_count(&data(), |n| n + 1, 1).is_err());
    }
}
