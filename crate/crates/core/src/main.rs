use cfsd::harness::{run_ablations, run_protocol, stage_name, HarnessError, ProtocolData, ProtocolRun, RunConfig};
use cfsd::metrics::{tdr_at_fdr, tdr_fdr};
use cfsd::model::{read_checkpoint, Label};
use cfsd::styledata::{load, save, save_manifest};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cfsd", version, about = "Continual few-shot adaptation of a synthetic-patch detector")]
struct Cli {
    /// Run configuration (TOML); defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "CFSD_OUT", default_value = "cfsd-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the protocol's datasets and style manifest into the output directory.
    GenData,
    /// Train the base detector (stage 0 of the protocol run in the output directory).
    TrainBase,
    /// Run the next adaptation stage of the protocol run in the output directory.
    Adapt,
    /// Score a dataset file with a checkpoint and print detection metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Real-class reference scores; defaults to the dataset's own real samples,
        /// then to real_test.cfsdat beside the dataset.
        #[arg(long)]
        real: Option<PathBuf>,
    },
    /// Base training plus every adaptation stage, resuming if interrupted.
    RunProtocol,
    /// Replay, shot-count and lambda sweeps.
    Ablate,
    /// Print the adaptation matrix of a finished or partial run.
    Report,
}

fn load_config(cli: &Cli) -> Result<(RunConfig, u64), HarnessError> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(config.seed);
    Ok((config, seed))
}

fn gen_data(config: &RunConfig, seed: u64, out: &Path) -> Result<(), HarnessError> {
    let data = ProtocolData::generate(config, seed)?;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::Protocol(format!("{}: {e}", out.display())))?;
    save(&data.initial_train, &out.join("initial_train.cfsdat"))?;
    save(&data.real_test, &out.join("real_test.cfsdat"))?;
    for (tag, test) in &data.synthetic_tests {
        save(test, &out.join(format!("{tag}_test.cfsdat")))?;
    }
    for (tag, pool) in &data.adapt_pools {
        save(pool, &out.join(format!("{tag}_pool.cfsdat")))?;
    }
    save_manifest(&config.styles, &out.join("styles.toml"))?;
    println!(
        "wrote {} initial training, {} real test, {} synthetic test sets, {} adaptation pools to {}",
        data.initial_train.len(),
        data.real_test.len(),
        data.synthetic_tests.len(),
        data.adapt_pools.len(),
        out.display()
    );
    Ok(())
}

fn advance(config: &RunConfig, seed: u64, out: &Path, want_base: bool) -> Result<(), HarnessError> {
    let mut run = ProtocolRun::open(config, seed, out)?;
    if want_base && !run.record.stages.is_empty() {
        println!("base stage already complete in {}", out.display());
        return Ok(());
    }
    match run.advance()? {
        Some(stage) => {
            let rec = run.record.stages.last().expect("stage recorded");
            println!(
                "completed {} ({}) in {:.1}s -> {}",
                stage_name(stage),
                rec.style.as_deref().unwrap_or("initial styles"),
                rec.wall_clock_secs,
                run.checkpoint_path(stage).display()
            );
            if run.is_complete() {
                let matrix = run.finish()?;
                print!("{}", matrix.to_table());
            }
        }
        None => println!("all {} stages already complete", run.total_stages()),
    }
    Ok(())
}

fn eval(config: &RunConfig, checkpoint: &Path, dataset: &Path, real: Option<&Path>) -> Result<(), HarnessError> {
    let params = read_checkpoint(checkpoint)?.params;
    let samples = load(dataset)?;
    let mut real_samples: Vec<_> = samples.iter().filter(|s| s.label == Label::Real).cloned().collect();
    if let Some(path) = real {
        real_samples = load(path)?;
    } else if real_samples.is_empty() {
        let beside = dataset.with_file_name("real_test.cfsdat");
        if beside.exists() {
            real_samples = load(&beside)?;
        }
    }
    let real_scores = cfsd::harness::score_samples(&params, &real_samples)?;
    let mut styles: Vec<&str> = Vec::new();
    for s in samples.iter().filter(|s| s.label == Label::Synthetic) {
        if !styles.contains(&s.style.as_str()) {
            styles.push(&s.style);
        }
    }
    if styles.is_empty() {
        return Err(HarnessError::Protocol("dataset holds no synthetic samples".into()));
    }
    let (tau, target) = (config.eval.tau, config.eval.fdr_target);
    println!("style,n,tdr_at_tau,fdr_at_tau,tdr_at_fdr");
    for style in styles {
        let group: Vec<_> = samples.iter().filter(|s| s.style == style).cloned().collect();
        let scores = cfsd::harness::score_samples(&params, &group)?;
        if real_scores.is_empty() {
            let tdr = scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64;
            println!("{style},{},{:.4},,", group.len(), 100.0 * tdr);
        } else {
            let (tdr, fdr) = tdr_fdr(&real_scores, &scores, tau)?;
            let (at_fdr, _) = tdr_at_fdr(&real_scores, &scores, target)?;
            println!(
                "{style},{},{:.4},{:.4},{:.4}",
                group.len(),
                100.0 * tdr,
                100.0 * fdr,
                100.0 * at_fdr
            );
        }
    }
    Ok(())
}

fn report(config: &RunConfig, seed: u64, out: &Path) -> Result<(), HarnessError> {
    let record_path = out.join("run.json");
    if !record_path.exists() {
        return Err(HarnessError::Record(format!("no run record at {}", record_path.display())));
    }
    let mut run = ProtocolRun::open(config, seed, out)?;
    let matrix = run.finish()?;
    print!("{}", matrix.to_table());
    if !run.is_complete() {
        println!("({} of {} stages complete)", run.record.stages.len(), run.total_stages());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (config, seed) = load_config(&cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenData => gen_data(&config, seed, out),
        Command::TrainBase => advance(&config, seed, out, true),
        Command::Adapt => advance(&config, seed, out, false),
        Command::Eval {
            checkpoint,
            dataset,
            real,
        } => eval(&config, checkpoint, dataset, real.as_deref()),
        Command::RunProtocol => {
            let record = run_protocol(&config, seed, out)?;
            let matrix = record.matrix.expect("finished run has a matrix");
            print!("{}", matrix.to_table());
            println!("matrix written to {}", out.join("matrix.csv").display());
            Ok(())
        }
        Command::Ablate => {
            let report = run_ablations(&config)?;
            report.write(out)?;
            print!("{}", report.to_text());
            println!("ablation report written to {}", out.join("ablation.json").display());
            Ok(())
        }
        Command::Report => report(&config, seed, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cfsd: error: {e}");
            ExitCode::FAILURE
        }
    }
}
