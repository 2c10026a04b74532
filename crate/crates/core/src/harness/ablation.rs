use super::protocol::{adapt_sequence, evaluate_checkpoints, stage_name};
use super::train::train_base;
use super::{io_err, HarnessError, ProtocolData, RunConfig};
use crate::metrics::AdaptationMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

/// One adaptation sequence of the sweep, evaluated after every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub seed: u64,
    pub replay: bool,
    pub shots: usize,
    pub lambda: f64,
    pub matrix: AdaptationMatrix,
}

impl VariantRun {
    /// TDR@τ of adaptation style `style_stage` (1-based) after stage `stage`.
    pub fn tdr_at_tau(&self, stage: usize, style_stage: usize) -> f64 {
        self.matrix.cells[stage][style_stage].tdr_at_tau
    }

    pub fn stages(&self) -> usize {
        self.matrix.checkpoints.len() - 1
    }

    /// Mean over stages of the TDR@τ on the style just adapted to.
    pub fn mean_new_style_tdr(&self) -> f64 {
        let k = self.stages();
        (1..=k).map(|s| self.tdr_at_tau(s, s)).sum::<f64>() / k as f64
    }

    /// Lowest TDR@τ of any earlier adaptation style right after the next stage.
    pub fn min_previous_after_next(&self) -> Option<f64> {
        (2..=self.stages()).map(|s| self.tdr_at_tau(s, s - 1)).min_by(f64::total_cmp)
    }

    /// Lowest TDR@τ over every (stage k, earlier adaptation style e < k).
    pub fn min_previous_any(&self) -> Option<f64> {
        (2..=self.stages())
            .flat_map(|s| (1..s).map(move |e| (s, e)))
            .map(|(s, e)| self.tdr_at_tau(s, e))
            .min_by(f64::total_cmp)
    }

    pub fn final_mean_tdr_at_fdr(&self) -> f64 {
        self.matrix.means.last().expect("matrix has rows").tdr_at_fdr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub seed: u64,
    pub with_replay_min_previous: Option<f64>,
    pub without_replay_min_previous_after_next: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSummary {
    pub shots: usize,
    pub per_seed: Vec<f64>,
    pub mean_new_style_tdr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub per_seed: Vec<f64>,
    pub mean_final_tdr_at_fdr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Base checkpoint of each seed, evaluated on every synthetic test set.
    pub base: Vec<AdaptationMatrix>,
    pub runs: Vec<VariantRun>,
    pub replay: Vec<ReplaySummary>,
    pub shots: Vec<ShotSummary>,
    pub lambdas: Vec<LambdaSummary>,
}

impl AblationReport {
    pub fn find(&self, seed: u64, replay: bool, shots: usize, lambda: f64) -> Option<&VariantRun> {
        self.runs
            .iter()
            .find(|r| r.seed == seed && r.replay == replay && r.shots == shots && r.lambda == lambda)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "replay ablation (TDR@tau, percent)");
        for r in &self.replay {
            let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
            let _ = writeln!(
                out,
                "  seed {:>4}: with replay min previous {:>7}, without replay min previous after next {:>7}",
                r.seed,
                pct(r.with_replay_min_previous),
                pct(r.without_replay_min_previous_after_next)
            );
        }
        let _ = writeln!(out, "shot count (mean new-style TDR@tau, percent)");
        for s in &self.shots {
            let _ = writeln!(out, "  {:>5} shots: {:.2}", s.shots, 100.0 * s.mean_new_style_tdr);
        }
        let _ = writeln!(out, "lambda sweep (final-row mean TDR@FDR, percent)");
        for l in &self.lambdas {
            let _ = writeln!(out, "  lambda {:<6}: {:.2}", l.lambda, 100.0 * l.mean_final_tdr_at_fdr);
        }
        out
    }

    fn sweep_csvs(&self) -> [(&'static str, String); 3] {
        let mut replay = String::from("seed,with_replay_min_previous,without_replay_min_previous_after_next\n");
        for r in &self.replay {
            let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{:.4}", 100.0 * v));
            let _ = writeln!(
                replay,
                "{},{},{}",
                r.seed,
                f(r.with_replay_min_previous),
                f(r.without_replay_min_previous_after_next)
            );
        }
        let mut shots = String::from("shots,seed,mean_new_style_tdr_at_tau\n");
        for s in &self.shots {
            for (seed, v) in self.seeds.iter().zip(&s.per_seed) {
                let _ = writeln!(shots, "{},{},{:.4}", s.shots, seed, 100.0 * v);
            }
            let _ = writeln!(shots, "{},mean,{:.4}", s.shots, 100.0 * s.mean_new_style_tdr);
        }
        let mut lambdas = String::from("lambda,seed,final_mean_tdr_at_fdr\n");
        for l in &self.lambdas {
            for (seed, v) in self.seeds.iter().zip(&l.per_seed) {
                let _ = writeln!(lambdas, "{},{},{:.4}", l.lambda, seed, 100.0 * v);
            }
            let _ = writeln!(lambdas, "{},mean,{:.4}", l.lambda, 100.0 * l.mean_final_tdr_at_fdr);
        }
        [
            ("ablation_replay.csv", replay),
            ("ablation_shots.csv", shots),
            ("ablation_lambda.csv", lambdas),
        ]
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let json = dir.join("ablation.json");
        std::fs::write(&json, serde_json::to_string_pretty(self).expect("report serializes")).map_err(io_err(&json))?;
        for (name, text) in self.sweep_csvs() {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(io_err(&path))?;
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Replay on/off, shot-count and λ sweeps over `config.ablation.seeds`. Each
/// seed trains one base detector that every variant of that seed starts
/// from; variants that coincide with the reference configuration run once.
pub fn run_ablations(config: &RunConfig) -> Result<AblationReport, HarnessError> {
    config.validate()?;
    let ab = &config.ablation;
    if ab.seeds.is_empty() {
        return Err(HarnessError::Config("ablation needs at least one seed".into()));
    }
    let reference = (config.adaptation.replay, config.adaptation.shots, config.loss.lambda);
    let mut variants = vec![(true, reference.1, reference.2), (false, reference.1, reference.2)];
    variants.extend(ab.shots.iter().map(|&n| (true, n, reference.2)));
    variants.extend(ab.lambdas.iter().map(|&l| (true, reference.1, l)));
    let mut unique: Vec<(bool, usize, f64)> = Vec::new();
    for v in variants {
        if !unique.contains(&v) {
            unique.push(v);
        }
    }

    let mut base = Vec::new();
    let mut runs = Vec::new();
    for &seed in &ab.seeds {
        let data = ProtocolData::generate(config, seed)?;
        let base_params = train_base(&data.initial_train, config, seed)?.params;
        base.push(evaluate_checkpoints(config, &data, &[(stage_name(0), base_params.clone())])?);
        for &(replay, shots, lambda) in &unique {
            let mut c = config.clone();
            c.adaptation.replay = replay;
            c.adaptation.shots = shots;
            c.loss.lambda = lambda;
            let stages = adapt_sequence(&c, &data, &base_params, seed)?;
            let mut checkpoints = vec![(stage_name(0), base_params.clone())];
            checkpoints.extend(stages.into_iter().enumerate().map(|(i, p)| (stage_name(i + 1), p)));
            runs.push(VariantRun {
                seed,
                replay,
                shots,
                lambda,
                matrix: evaluate_checkpoints(&c, &data, &checkpoints)?,
            });
        }
    }

    let mut index: HashMap<(u64, bool, usize, u64), usize> = HashMap::new();
    for (i, r) in runs.iter().enumerate() {
        index.insert((r.seed, r.replay, r.shots, r.lambda.to_bits()), i);
    }
    let get = |seed: u64, replay: bool, shots: usize, lambda: f64| &runs[index[&(seed, replay, shots, lambda.to_bits())]];

    let replay = ab
        .seeds
        .iter()
        .map(|&seed| ReplaySummary {
            seed,
            with_replay_min_previous: get(seed, true, reference.1, reference.2).min_previous_any(),
            without_replay_min_previous_after_next: get(seed, false, reference.1, reference.2)
                .min_previous_after_next(),
        })
        .collect();
    let shots = ab
        .shots
        .iter()
        .map(|&n| {
            let per_seed: Vec<f64> = ab.seeds.iter().map(|&s| get(s, true, n, reference.2).mean_new_style_tdr()).collect();
            ShotSummary {
                shots: n,
                mean_new_style_tdr: mean(&per_seed),
                per_seed,
            }
        })
        .collect();
    let lambdas = ab
        .lambdas
        .iter()
        .map(|&l| {
            let per_seed: Vec<f64> =
                ab.seeds.iter().map(|&s| get(s, true, reference.1, l).final_mean_tdr_at_fdr()).collect();
            LambdaSummary {
                lambda: l,
                mean_final_tdr_at_fdr: mean(&per_seed),
                per_seed,
            }
        })
        .collect();

    Ok(AblationReport {
        config_hash: config.hash(),
        seeds: ab.seeds.clone(),
        base,
        runs,
        replay,
        shots,
        lambdas,
    })
}
