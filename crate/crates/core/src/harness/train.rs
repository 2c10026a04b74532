use super::{HarnessError, LossConfig, RunConfig};
use crate::losses::{ce_loss, combined_loss, has_positive_pair, Batch};
use crate::metrics::tdr_at_fdr;
use crate::model::{DetectorParams, Label, Sample};
use crate::numcore::{Tape, Tensor};
use crate::optim::OptState;
use crate::replay::ReplayBuffer;
use crate::styledata::{derive_seed, split};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const INIT_STREAM: u64 = 0x1417;
const VALIDATION_STREAM: u64 = 0x7A11;
const SHUFFLE_STREAM: u64 = 0x5F1E;
const SCORE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_ce: f64,
    pub mean_sc: f64,
    pub val_ce: Option<f64>,
    pub val_tdr_at_fdr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: DetectorParams,
    pub optimizer: OptState,
    pub trace: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub selected_epoch: usize,
    /// Number of samples the stage trained on.
    pub train_size: usize,
}

/// Scores in chunks; order follows `samples`.
pub fn score_samples(params: &DetectorParams, samples: &[Sample]) -> Result<Vec<f64>, HarnessError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(SCORE_CHUNK) {
        let x = params.prepare_batch(chunk)?;
        out.extend(params.scores(&x)?);
    }
    Ok(out)
}

fn shuffle_seed(seed: u64, stage: usize, epoch: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(seed, SHUFFLE_STREAM), stage as u64), epoch as u64)
}

/// Visiting order for one epoch: a global shuffle, or with `balanced` a
/// shuffle within each style followed by a round-robin over styles.
fn epoch_order(samples: &[&Sample], rng: &mut ChaCha8Rng, balanced: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    if !balanced {
        return order;
    }
    let mut styles: Vec<&str> = Vec::new();
    let mut queues: HashMap<&str, Vec<usize>> = HashMap::new();
    for &i in &order {
        let style = samples[i].style.as_str();
        queues
            .entry(style)
            .or_insert_with(|| {
                styles.push(style);
                Vec::new()
            })
            .push(i);
    }
    let mut out = Vec::with_capacity(order.len());
    let longest = queues.values().map(Vec::len).max().unwrap_or(0);
    for round in 0..longest {
        for style in &styles {
            if let Some(&i) = queues[style].get(round) {
                out.push(i);
            }
        }
    }
    out
}

/// Batch-mean loss terms of one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub ce: f64,
    pub sc: f64,
}

/// Loss of the full detector on one mini-batch and its gradient with respect
/// to every parameter block, in [`DetectorParams::tensors`] order. With
/// `contrastive = None` the loss is cross-entropy only; otherwise
/// `CE + λ·SC`, where SC is skipped for batches without any same-class pair.
pub fn loss_and_gradients(
    params: &DetectorParams,
    x: Tensor,
    labels: &[Label],
    styles: &[String],
    contrastive: Option<&LossConfig>,
) -> Result<(StepLosses, Vec<Tensor>), HarnessError> {
    let n = labels.len();
    let mut tape = Tape::new();
    let input = tape.constant(x);
    let fwd = params.forward_tape(&mut tape, input)?;
    let scores = tape.value(fwd.scores).data().to_vec();

    let (losses, partials) = match contrastive {
        Some(cfg) if cfg.lambda > 0.0 && n >= 2 && has_positive_pair(labels) => {
            let embeddings = tape.value(fwd.features).clone();
            let batch = Batch {
                embeddings: &embeddings,
                scores: &scores,
                labels,
                styles,
            };
            let l = combined_loss(&batch, cfg.lambda, cfg.beta, cfg.supcon_norm)?;
            let partials = vec![
                (fwd.scores, Tensor::matrix(n, 1, l.grad_scores)?),
                (fwd.features, l.grad_embeddings),
            ];
            (
                StepLosses {
                    total: l.total,
                    ce: l.ce,
                    sc: l.sc,
                },
                partials,
            )
        }
        _ => {
            let (ce, grad) = ce_loss(&scores, labels)?;
            (
                StepLosses {
                    total: ce,
                    ce,
                    sc: 0.0,
                },
                vec![(fwd.scores, Tensor::matrix(n, 1, grad)?)],
            )
        }
    };
    let root = tape.external_scalar(losses.total, partials)?;
    let mut grads = tape.backward(root)?;
    let grads = fwd
        .params
        .iter()
        .map(|&v| grads.take(v).expect("parameter leaves receive gradients"))
        .collect();
    Ok((losses, grads))
}

fn train_step(
    params: &mut DetectorParams,
    opt: &mut OptState,
    x: Tensor,
    labels: &[Label],
    styles: &[String],
    contrastive: Option<&LossConfig>,
) -> Result<StepLosses, HarnessError> {
    let (losses, grads) = loss_and_gradients(params, x, labels, styles, contrastive)?;
    let grad_refs: Vec<&Tensor> = grads.iter().collect();
    opt.step(&mut params.tensors_mut(), &grad_refs)?;
    Ok(losses)
}

/// Runs `epochs` shuffled passes over `samples`, calling `after_epoch` with
/// the parameters at the end of each.
#[allow(clippy::too_many_arguments)]
fn run_epochs(
    params: &mut DetectorParams,
    opt: &mut OptState,
    samples: &[&Sample],
    epochs: usize,
    batch_size: usize,
    balanced: bool,
    contrastive: Option<&LossConfig>,
    seed: u64,
    stage: usize,
    mut after_epoch: impl FnMut(usize, &DetectorParams, &OptState, EpochRecord) -> Result<(), HarnessError>,
) -> Result<(), HarnessError> {
    let inputs = params.prepare_batch(samples.iter().copied())?;
    let dim = inputs.dims2()?.1;
    for epoch in 1..=epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed(seed, stage, epoch));
        let order = epoch_order(samples, &mut rng, balanced);
        let (mut total, mut ce, mut sc, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(batch_size) {
            let mut data = Vec::with_capacity(idx.len() * dim);
            for &i in idx {
                data.extend_from_slice(inputs.row(i));
            }
            let x = Tensor::matrix(idx.len(), dim, data)?;
            let labels: Vec<Label> = idx.iter().map(|&i| samples[i].label).collect();
            let styles: Vec<String> = idx.iter().map(|&i| samples[i].style.clone()).collect();
            let l = train_step(params, opt, x, &labels, &styles, contrastive)?;
            total += l.total;
            ce += l.ce;
            sc += l.sc;
            batches += 1;
        }
        let b = batches as f64;
        let record = EpochRecord {
            epoch,
            mean_loss: total / b,
            mean_ce: ce / b,
            mean_sc: sc / b,
            val_ce: None,
            val_tdr_at_fdr: None,
        };
        after_epoch(epoch, params, opt, record)?;
    }
    Ok(())
}

fn batches_per_epoch(n: usize, batch_size: usize) -> u64 {
    n.div_ceil(batch_size) as u64
}

/// Cross-entropy training from a fresh initialization. A stratified
/// validation slice is held out; the epoch with the highest validation
/// TDR at the configured FDR (ties: lower validation CE) is returned.
pub fn train_base(initial_train: &[Sample], config: &RunConfig, seed: u64) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let has = |l: Label| initial_train.iter().any(|s| s.label == l);
    if !has(Label::Real) || !has(Label::Synthetic) {
        return Err(HarnessError::Protocol("initial training set must contain both classes".into()));
    }
    let (fit, val) = split(
        initial_train,
        config.base.validation_fraction,
        derive_seed(seed, VALIDATION_STREAM),
    )?;
    let val_has = |l: Label| val.iter().any(|s| s.label == l);
    if !val_has(Label::Real) || !val_has(Label::Synthetic) {
        return Err(HarnessError::Protocol("validation slice lacks one class".into()));
    }
    let mut params = DetectorParams::init(config.architecture.clone(), derive_seed(seed, INIT_STREAM))?;
    let total = config.base.epochs as u64 * batches_per_epoch(fit.len(), config.base.batch_size);
    let mut opt = OptState::new(config.optimizer, &params.tensors(), total);

    let val_labels: Vec<Label> = val.iter().map(|s| s.label).collect();
    let fit_refs: Vec<&Sample> = fit.iter().collect();
    let mut trace = Vec::new();
    let mut best: Option<(f64, f64, usize, DetectorParams, OptState)> = None;
    run_epochs(
        &mut params,
        &mut opt,
        &fit_refs,
        config.base.epochs,
        config.base.batch_size,
        false,
        None,
        seed,
        0,
        |epoch, p, o, mut record| {
            let scores = score_samples(p, &val)?;
            let (val_ce, _) = ce_loss(&scores, &val_labels)?;
            let (real, syn): (Vec<_>, Vec<_>) = scores.iter().zip(&val_labels).partition(|(_, l)| **l == Label::Real);
            let real: Vec<f64> = real.into_iter().map(|(s, _)| *s).collect();
            let syn: Vec<f64> = syn.into_iter().map(|(s, _)| *s).collect();
            let (tdr, _) = tdr_at_fdr(&real, &syn, config.eval.fdr_target)?;
            record.val_ce = Some(val_ce);
            record.val_tdr_at_fdr = Some(tdr);
            trace.push(record);
            let better = match &best {
                None => true,
                Some((bt, bce, ..)) => tdr > *bt || (tdr == *bt && val_ce < *bce),
            };
            if better {
                best = Some((tdr, val_ce, epoch, p.clone(), o.clone()));
            }
            Ok(())
        },
    )?;
    let (_, _, selected_epoch, params, optimizer) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        optimizer,
        trace,
        selected_epoch,
        train_size: fit.len(),
    })
}

/// One continual adaptation stage (`stage ≥ 1`): registers `shots` in the
/// buffer, assembles the training set (the whole buffer with replay, the new
/// shots alone without), and fine-tunes from `params` with CE + λ·SC under a
/// fresh optimizer and schedule. Returns the final-epoch parameters.
pub fn adapt_step(
    params: &DetectorParams,
    buffer: &mut ReplayBuffer,
    shots: &[Sample],
    config: &RunConfig,
    seed: u64,
    stage: usize,
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    if let Some(first) = shots.first() {
        if buffer.contains(&first.style) {
            return Err(HarnessError::Protocol(format!("style `{}` was already adapted to", first.style)));
        }
    }
    buffer.extend(shots)?;
    let assembled: Vec<&Sample> = if config.adaptation.replay {
        buffer.assemble()?
    } else {
        shots.iter().collect()
    };
    let mut params = params.clone();
    let a = &config.adaptation;
    let total = a.epochs as u64 * batches_per_epoch(assembled.len(), a.batch_size);
    let mut opt = OptState::new(config.optimizer, &params.tensors(), total);
    let mut trace = Vec::new();
    run_epochs(
        &mut params,
        &mut opt,
        &assembled,
        a.epochs,
        a.batch_size,
        a.balanced_batches,
        Some(&config.loss),
        seed,
        stage,
        |_, _, _, record| {
            trace.push(record);
            Ok(())
        },
    )?;
    Ok(TrainOutcome {
        params,
        optimizer: opt,
        trace,
        selected_epoch: a.epochs,
        train_size: assembled.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: u64, style: &str, label: Label) -> Sample {
        Sample::features(id, style, label, vec![0.0]).unwrap()
    }

    #[test]
    fn balanced_order_alternates_styles() {
        let owned: Vec<Sample> = (0..6)
            .map(|i| sample(i, if i < 4 { "a" } else { "b" }, Label::Real))
            .collect();
        let refs: Vec<&Sample> = owned.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let order = epoch_order(&refs, &mut rng, true);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
        let styles: Vec<&str> = order.iter().map(|&i| owned[i].style.as_str()).collect();
        assert_ne!(styles[0], styles[1]);
        assert_ne!(styles[2], styles[3]);
    }

    #[test]
    fn shuffle_streams_differ_by_stage_and_epoch() {
        assert_ne!(shuffle_seed(1, 0, 1), shuffle_seed(1, 1, 1));
        assert_ne!(shuffle_seed(1, 1, 1), shuffle_seed(1, 1, 2));
        assert_eq!(shuffle_seed(1, 2, 3), shuffle_seed(1, 2, 3));
    }
}
