use super::{HarnessError, RunConfig};
use crate::model::Sample;
use crate::styledata::{derive_seed, gen_style, split_by_count, StyleClass};

/// Every split of one protocol run, generated from `(config, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolData {
    /// Real-analog training samples followed by the base synthetic style's.
    pub initial_train: Vec<Sample>,
    /// Union of the real-analog test splits, shared by every matrix cell.
    pub real_test: Vec<Sample>,
    /// Test split per synthetic style, base style first.
    pub synthetic_tests: Vec<(String, Vec<Sample>)>,
    /// Adaptation pool per adaptation style, in protocol order.
    pub adapt_pools: Vec<(String, Vec<Sample>)>,
}

impl ProtocolData {
    pub fn generate(config: &RunConfig, seed: u64) -> Result<Self, HarnessError> {
        config.validate()?;
        let size = config.architecture.patch_height;
        if config.architecture.patch_width != size {
            return Err(HarnessError::Config("procedural data needs square patches".into()));
        }
        let d = &config.data;
        let base_tag = config.base_style().tag.clone();
        let data_seed = derive_seed(seed, 0xDA7A);

        let mut initial_train = Vec::new();
        let mut real_test = Vec::new();
        let mut synthetic_tests = Vec::new();
        let mut adapt_pools = Vec::new();
        let mut base_train = Vec::new();
        for (k, spec) in config.styles.iter().enumerate() {
            let (n_train, n_test) = match spec.class {
                StyleClass::Real => (d.real_train, d.real_test),
                _ if spec.tag == base_tag => (d.base_train, d.base_test),
                _ => (d.adapt_pool, d.adapt_test),
            };
            let all = gen_style(spec, n_train + n_test, size, data_seed)?;
            let (train, test) = split_by_count(&all, |_| n_test, derive_seed(data_seed, k as u64))?;
            match spec.class {
                StyleClass::Real => {
                    initial_train.extend(train);
                    real_test.extend(test);
                }
                StyleClass::Synthetic if spec.tag == base_tag => {
                    base_train = train;
                    synthetic_tests.push((spec.tag.clone(), test));
                }
                StyleClass::Synthetic => {
                    adapt_pools.push((spec.tag.clone(), train));
                    synthetic_tests.push((spec.tag.clone(), test));
                }
            }
        }
        initial_train.extend(base_train);
        Ok(Self {
            initial_train,
            real_test,
            synthetic_tests,
            adapt_pools,
        })
    }

    /// The first `shots` samples of stage `k`'s pool (1-based stage index).
    pub fn shots(&self, stage: usize, shots: usize) -> Result<&[Sample], HarnessError> {
        let (tag, pool) = self
            .adapt_pools
            .get(stage.wrapping_sub(1))
            .ok_or_else(|| HarnessError::Protocol(format!("no adaptation stage {stage}")))?;
        if shots > pool.len() {
            return Err(HarnessError::Protocol(format!(
                "style `{tag}` has {} pool samples, {shots} requested",
                pool.len()
            )));
        }
        Ok(&pool[..shots])
    }

    /// Every sample a replay buffer snapshot may refer to.
    pub fn replay_pool(&self) -> Vec<Sample> {
        let mut all = self.initial_train.clone();
        for (_, pool) in &self.adapt_pools {
            all.extend(pool.iter().cloned());
        }
        all
    }
}
