use super::train::{adapt_step, score_samples, train_base, EpochRecord};
use super::{io_err, HarnessError, ProtocolData, RunConfig};
use crate::metrics::{build_matrix, AdaptationMatrix, Cell};
use crate::model::{read_checkpoint, write_checkpoint, DetectorParams};
use crate::replay::{BufferSnapshot, ReplayBuffer};
use crate::styledata::derive_seed;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

const BUFFER_STREAM: u64 = 0xB0FF;
const RECORD_FILE: &str = "run.json";

/// Row label of stage `k`: `base`, then `step1`, `step2`, ...
pub fn stage_name(stage: usize) -> String {
    if stage == 0 {
        "base".into()
    } else {
        format!("step{stage}")
    }
}

/// Scores each named checkpoint on every synthetic test set against the
/// shared real test set.
pub fn evaluate_checkpoints(
    config: &RunConfig,
    data: &ProtocolData,
    checkpoints: &[(String, DetectorParams)],
) -> Result<AdaptationMatrix, HarnessError> {
    Ok(build_matrix(
        checkpoints,
        &data.real_test,
        &data.synthetic_tests,
        config.eval.tau,
        config.eval.fdr_target,
        score_samples,
    )?)
}

fn initial_buffer(config: &RunConfig, data: &ProtocolData, seed: u64) -> Result<ReplayBuffer, HarnessError> {
    Ok(ReplayBuffer::init(
        &data.initial_train,
        config.replay_quota,
        derive_seed(seed, BUFFER_STREAM),
    )?)
}

/// Every adaptation stage in memory, starting from `base`. Returns the
/// parameters after each stage.
pub fn adapt_sequence(
    config: &RunConfig,
    data: &ProtocolData,
    base: &DetectorParams,
    seed: u64,
) -> Result<Vec<DetectorParams>, HarnessError> {
    let mut buffer = initial_buffer(config, data, seed)?;
    let mut params = base.clone();
    let mut out = Vec::with_capacity(data.adapt_pools.len());
    for stage in 1..=data.adapt_pools.len() {
        let shots = data.shots(stage, config.adaptation.shots)?;
        params = adapt_step(&params, &mut buffer, shots, config, seed, stage)?.params;
        out.push(params.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub name: String,
    /// Style adapted to in this stage; absent for the base stage.
    pub style: Option<String>,
    pub checkpoint: String,
    pub buffer: String,
    pub selected_epoch: usize,
    pub trace: Vec<EpochRecord>,
    /// This checkpoint's matrix row, one cell per synthetic test set.
    pub row: Vec<Cell>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub styles: Vec<String>,
    pub stages: Vec<StageRecord>,
    pub matrix: Option<AdaptationMatrix>,
}

/// A protocol run persisted under one directory. Each completed stage
/// leaves a checkpoint, a buffer snapshot and an updated `run.json`, so an
/// interrupted run resumes at the next incomplete stage.
pub struct ProtocolRun {
    pub config: RunConfig,
    pub seed: u64,
    pub dir: PathBuf,
    pub record: RunRecord,
    data: ProtocolData,
}

impl ProtocolRun {
    pub fn open(config: &RunConfig, seed: u64, dir: &Path) -> Result<Self, HarnessError> {
        config.validate()?;
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let record_path = dir.join(RECORD_FILE);
        let hash = config.hash();
        let record = if record_path.exists() {
            let text = std::fs::read_to_string(&record_path).map_err(io_err(&record_path))?;
            let record: RunRecord =
                serde_json::from_str(&text).map_err(|e| HarnessError::Record(format!("{}: {e}", record_path.display())))?;
            if record.config_hash != hash || record.seed != seed {
                return Err(HarnessError::Record(format!(
                    "{} belongs to a different config or seed; use a fresh output directory",
                    dir.display()
                )));
            }
            record
        } else {
            let config_path = dir.join("config.toml");
            std::fs::write(&config_path, config.to_toml()).map_err(io_err(&config_path))?;
            RunRecord {
                config_hash: hash,
                seed,
                styles: config.synthetic_styles().iter().map(|s| s.tag.clone()).collect(),
                stages: Vec::new(),
                matrix: None,
            }
        };
        let data = ProtocolData::generate(config, seed)?;
        Ok(Self {
            config: config.clone(),
            seed,
            dir: dir.to_path_buf(),
            record,
            data,
        })
    }

    pub fn data(&self) -> &ProtocolData {
        &self.data
    }

    pub fn total_stages(&self) -> usize {
        1 + self.data.adapt_pools.len()
    }

    pub fn is_complete(&self) -> bool {
        self.record.stages.len() == self.total_stages()
    }

    pub fn checkpoint_path(&self, stage: usize) -> PathBuf {
        self.dir.join(format!("{}.ckpt", stage_name(stage)))
    }

    fn buffer_path(&self, stage: usize) -> PathBuf {
        self.dir.join(format!("{}.buffer.json", stage_name(stage)))
    }

    fn load_stage(&self, stage: usize) -> Result<(DetectorParams, ReplayBuffer), HarnessError> {
        let params = read_checkpoint(&self.checkpoint_path(stage))?.params;
        let path = self.buffer_path(stage);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let snapshot: BufferSnapshot =
            serde_json::from_str(&text).map_err(|e| HarnessError::Record(format!("{}: {e}", path.display())))?;
        let buffer = ReplayBuffer::restore(&snapshot, &self.data.replay_pool())?;
        Ok((params, buffer))
    }

    fn save_record(&self) -> Result<(), HarnessError> {
        let path = self.dir.join(RECORD_FILE);
        let text = serde_json::to_string_pretty(&self.record).expect("record serializes");
        std::fs::write(&path, text).map_err(io_err(&path))
    }

    /// Completes the next stage. Returns its index, or `None` when every
    /// stage is already done.
    pub fn advance(&mut self) -> Result<Option<usize>, HarnessError> {
        let stage = self.record.stages.len();
        if stage >= self.total_stages() {
            return Ok(None);
        }
        let started = Instant::now();
        let (outcome, buffer, style) = if stage == 0 {
            let outcome = train_base(&self.data.initial_train, &self.config, self.seed)?;
            (outcome, initial_buffer(&self.config, &self.data, self.seed)?, None)
        } else {
            let (params, mut buffer) = self.load_stage(stage - 1)?;
            let shots = self.data.shots(stage, self.config.adaptation.shots)?;
            let style = shots[0].style.clone();
            let outcome = adapt_step(&params, &mut buffer, shots, &self.config, self.seed, stage)?;
            (outcome, buffer, Some(style))
        };
        let name = stage_name(stage);
        let row = evaluate_checkpoints(&self.config, &self.data, &[(name.clone(), outcome.params.clone())])?
            .cells
            .remove(0);

        let ckpt = self.checkpoint_path(stage);
        write_checkpoint(&ckpt, &outcome.params, Some(&outcome.optimizer))?;
        let buf_path = self.buffer_path(stage);
        let snapshot = serde_json::to_string(&buffer.snapshot()).expect("snapshot serializes");
        std::fs::write(&buf_path, snapshot).map_err(io_err(&buf_path))?;

        self.record.stages.push(StageRecord {
            stage,
            name,
            style,
            checkpoint: file_name(&ckpt),
            buffer: file_name(&buf_path),
            selected_epoch: outcome.selected_epoch,
            trace: outcome.trace,
            row,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });
        self.save_record()?;
        Ok(Some(stage))
    }

    /// Assembles the matrix from the completed stages and writes
    /// `matrix.csv` and `report.json`.
    pub fn finish(&mut self) -> Result<AdaptationMatrix, HarnessError> {
        if self.record.stages.is_empty() {
            return Err(HarnessError::Protocol("no completed stages".into()));
        }
        let matrix = AdaptationMatrix::from_rows(
            self.record.stages.iter().map(|s| s.name.clone()).collect(),
            self.record.styles.clone(),
            self.record.stages.iter().map(|s| s.row.clone()).collect(),
            self.config.eval.tau,
            self.config.eval.fdr_target,
        )?;
        let csv = self.dir.join("matrix.csv");
        std::fs::write(&csv, matrix.to_csv()).map_err(io_err(&csv))?;
        let metadata = serde_json::json!({
            "config_hash": self.record.config_hash,
            "seed": self.seed,
            "stages_completed": self.record.stages.len(),
            "wall_clock_secs": self.record.stages.iter().map(|s| s.wall_clock_secs).sum::<f64>(),
        });
        let report = self.dir.join("report.json");
        std::fs::write(&report, matrix.to_json(&metadata)).map_err(io_err(&report))?;
        self.record.matrix = Some(matrix.clone());
        self.save_record()?;
        Ok(matrix)
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Base stage then every adaptation stage, resuming whatever `dir` already
/// holds, then the matrix.
pub fn run_protocol(config: &RunConfig, seed: u64, dir: &Path) -> Result<RunRecord, HarnessError> {
    let mut run = ProtocolRun::open(config, seed, dir)?;
    while run.advance()?.is_some() {}
    run.finish()?;
    Ok(run.record)
}
