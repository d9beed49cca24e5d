//! `nspgrade`: score responses, fine-tune a backend on a few labeled
//! samples, or run the full evaluation grid.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 backend error,
//! 5 partial failure.

pub mod config;
mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use nspgrade_bert::BertNspEncoder;
use nspgrade_core::corpus::{self, ExemplarSet};
use nspgrade_core::encoder::{BackendConfig, BackendKind};
use nspgrade_core::eval::{run_experiment, ExperimentConfig, ModelKind, ReportFormat};
use nspgrade_core::fewshot::{self, SampleStrategy, StrategyKind};
use nspgrade_core::{Encoder, MenspScorer, MockEncoder, ScorerOptions, Stage};
use serde_json::{json, Value};

pub use config::GlobalConfig;
pub use error::CliError;
use error::chain;

#[derive(Debug, Parser)]
#[command(name = "nspgrade", version, about = "Exemplar-matching short-answer scoring")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides every configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (score), checkpoint directory (finetune) or report
    /// directory (evaluate).
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Random,
    Manual,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grade every response in a JSONL file against an item's exemplars.
    Score {
        #[arg(long, value_name = "PATH")]
        exemplars: PathBuf,
        #[arg(long, value_name = "PATH")]
        responses: PathBuf,
        /// Whether level 0 competes in exemplar matching.
        #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
        include_zero_in_matching: Option<bool>,
    },
    /// Adapt the backend on k labeled responses per level and save it.
    Finetune {
        #[arg(long, value_name = "PATH")]
        exemplars: PathBuf,
        /// Hand-picked samples (manual strategy).
        #[arg(long, value_name = "PATH", conflicts_with = "random_from", required_unless_present = "random_from")]
        samples: Option<PathBuf>,
        /// Labeled pool to draw k per level from (random strategy).
        #[arg(long, value_name = "PATH")]
        random_from: Option<PathBuf>,
        /// Samples per level.
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
    },
    /// Run the configured experiment grid and write report.md / report.csv.
    Evaluate,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("nspgrade: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => GlobalConfig::load(path)?,
        None => GlobalConfig::default(),
    };
    let output = cli.output.clone().or_else(|| config.paths.output.clone());
    match cli.command {
        Command::Score {
            exemplars,
            responses,
            include_zero_in_matching,
        } => cmd_score(&config, &exemplars, &responses, include_zero_in_matching, output.as_deref()),
        Command::Finetune {
            exemplars,
            samples,
            random_from,
            k,
            strategy,
        } => {
            let (strategy, pool) = match (samples, random_from, strategy) {
                (Some(_), _, Some(StrategyArg::Random)) | (None, Some(_), Some(StrategyArg::Manual)) => {
                    return Err(CliError::Config(
                        "--strategy disagrees with --samples/--random-from".into(),
                    ))
                }
                (Some(path), _, _) => (SampleStrategy::manual(path), None),
                (None, Some(pool), _) => (SampleStrategy::random(), Some(pool)),
                (None, None, _) => unreachable!("clap requires one of the sample sources"),
            };
            cmd_finetune(&config, &exemplars, pool.as_deref(), strategy, k, cli.seed, output.as_deref())
        }
        Command::Evaluate => cmd_evaluate(&config, cli.seed, output.as_deref()),
    }
}

pub fn make_backend(cfg: &BackendConfig) -> Result<Arc<dyn Encoder>, CliError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Mock => Arc::new(MockEncoder::new(
            cfg.mock.clone().unwrap_or_default(),
            cfg.max_sequence_length,
        )?),
        BackendKind::Pretrained => Arc::new(BertNspEncoder::from_backend_config(cfg)?),
    })
}

fn data_error(e: impl std::error::Error) -> CliError {
    CliError::Data(chain(&e))
}

fn load_exemplars(path: &Path) -> Result<ExemplarSet, CliError> {
    corpus::load_exemplars(path).map_err(data_error)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn cmd_score(
    config: &GlobalConfig,
    exemplars_path: &Path,
    responses_path: &Path,
    include_zero: Option<bool>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let exemplars = load_exemplars(exemplars_path)?;
    let responses =
        corpus::load_responses_to_score(responses_path, exemplars.num_levels()).map_err(data_error)?;
    let include_zero_in_matching = include_zero
        .or_else(|| config.experiment.as_ref().map(|p| p.include_zero_in_matching))
        .unwrap_or(true);
    let backend = make_backend(&config.backend)?;
    let scorer = MenspScorer::new(
        backend,
        exemplars,
        ScorerOptions {
            include_zero_in_matching,
            ..ScorerOptions::default()
        },
    )
    .map_err(|e| CliError::Backend(chain(&e)))?;
    let texts: Vec<&str> = responses.iter().map(|r| r.text.as_str()).collect();
    let results = scorer.batch_score(&texts);

    let mut out = String::new();
    let (mut failed, mut zeros) = (0usize, 0usize);
    for (response, result) in responses.iter().zip(results) {
        let mut record = match result {
            Ok(score) => {
                if score.stage == Stage::ZeroIdentified {
                    zeros += 1;
                }
                serde_json::to_value(&score).expect("score serializes")
            }
            Err(e) => {
                failed += 1;
                json!({ "error": chain(&e) })
            }
        };
        if let Value::Object(map) = &mut record {
            map.insert("response_id".into(), Value::String(response.response_id.clone()));
            if let Some(gold) = response.gold {
                map.insert("gold".into(), json!(gold));
            }
        }
        out.push_str(&record.to_string());
        out.push('\n');
    }
    match output {
        Some(path) => write_atomic(path, out.as_bytes())?,
        None => print!("{out}"),
    }
    eprintln!(
        "scored {} responses: {zeros} zero-identified, {failed} failed",
        responses.len()
    );
    if failed > 0 {
        return Err(CliError::Partial(format!(
            "{failed} of {} responses could not be scored",
            responses.len()
        )));
    }
    Ok(())
}

fn cmd_finetune(
    config: &GlobalConfig,
    exemplars_path: &Path,
    pool_path: Option<&Path>,
    strategy: SampleStrategy,
    k: usize,
    seed: Option<u64>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let output = output.ok_or_else(|| CliError::Config("finetune needs --output for the checkpoint".into()))?;
    if output.exists() && std::fs::read_dir(output).map(|mut d| d.next().is_some()).unwrap_or(true) {
        return Err(CliError::Config(format!(
            "{} already exists and is not an empty directory",
            output.display()
        )));
    }
    if k == 0 {
        return Err(CliError::Config("--k must be at least 1".into()));
    }
    let exemplars = load_exemplars(exemplars_path)?;
    let pool = match pool_path {
        Some(p) => corpus::load_responses(p, exemplars.item_id(), exemplars.num_levels()).map_err(data_error)?,
        None => Vec::new(),
    };
    let seed = seed.unwrap_or(config.finetune.seed);
    let samples = fewshot::select_samples(
        &pool,
        k,
        &strategy,
        seed,
        exemplars.item_id(),
        exemplars.num_levels(),
    )
    .map_err(data_error)?;
    let pairs = fewshot::build_pairs(&samples, &exemplars).map_err(data_error)?;
    let positives = pairs.iter().filter(|p| p.label).count();
    eprintln!(
        "{} strategy: {} samples, {} pairs ({positives} positive)",
        strategy.kind.label(),
        samples.len(),
        pairs.len()
    );
    let backend = make_backend(&config.backend)?;
    let ft_config = fewshot::FineTuneConfig {
        seed,
        ..config.finetune.clone()
    };
    let tuned = fewshot::finetune(backend.as_ref(), &pairs, &ft_config)?;
    for (epoch, loss) in tuned.epoch_losses.iter().enumerate() {
        eprintln!("epoch {}: loss {loss:.6}", epoch + 1);
    }
    if let Some(last) = tuned.epoch_losses.last() {
        println!("final training loss: {last:.6}");
    }

    let parent = match output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    let staging = tempfile::Builder::new()
        .prefix(".nspgrade-checkpoint-")
        .tempdir_in(parent)
        .map_err(|e| CliError::Data(format!("cannot stage checkpoint in {}: {e}", parent.display())))?;
    tuned.backend.save_checkpoint(staging.path())?;
    if output.exists() {
        std::fs::remove_dir(output)
            .map_err(|e| CliError::Data(format!("cannot replace {}: {e}", output.display())))?;
    }
    let staged = staging.keep();
    std::fs::rename(&staged, output)
        .map_err(|e| CliError::Data(format!("cannot move checkpoint to {}: {e}", output.display())))?;
    eprintln!("checkpoint written to {}", output.display());
    Ok(())
}

fn cmd_evaluate(config: &GlobalConfig, seed: Option<u64>, output: Option<&Path>) -> Result<(), CliError> {
    let mut plan = config
        .experiment
        .clone()
        .ok_or_else(|| CliError::Config("evaluate needs an `experiment` block in the config".into()))?;
    if let Some(seed) = seed {
        plan.seeds = vec![seed];
    }
    let output = output.ok_or_else(|| CliError::Config("evaluate needs --output (a report directory)".into()))?;
    let experiment = ExperimentConfig {
        plan,
        backend: config.backend.clone(),
        finetune: config.finetune.clone(),
        baselines: config.baselines.clone(),
    };
    experiment.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let backend = if experiment.plan.models.contains(&ModelKind::Mensp) {
        Some(make_backend(&experiment.backend)?)
    } else {
        None
    };
    let mut report = run_experiment(&experiment, backend).map_err(|e| CliError::Config(e.to_string()))?;
    report.metadata.timestamp = Some(humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string());

    let markdown = report.render(ReportFormat::Markdown);
    write_atomic(&output.join("report.md"), markdown.as_bytes())?;
    write_atomic(&output.join("report.csv"), report.render(ReportFormat::Csv).as_bytes())?;
    let failures: Vec<Value> = report
        .failures()
        .map(|c| {
            json!({
                "item": c.item,
                "shot": c.shot,
                "strategy": c.strategy.map(StrategyKind::label),
                "model": c.model.label(),
                "error": c.error,
            })
        })
        .collect();
    let meta = json!({ "metadata": report.metadata, "failures": failures });
    write_atomic(
        &output.join("report.meta.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes").as_bytes(),
    )?;
    print!("{markdown}");

    let failed = failures.len();
    if failed == report.cells.len() {
        return Err(CliError::Partial("every cell failed; see report.meta.json".into()));
    }
    if failed > 0 {
        eprintln!("warning: {failed} of {} cells failed; see report.meta.json", report.cells.len());
    }
    Ok(())
}
