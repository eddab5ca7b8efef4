use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use vidauth_core::answer::AnswerSpace;
use vidauth_core::artifacts::{inject, ArtifactConfig};
use vidauth_core::datagen::{read_jsonl, write_jsonl, Corpus, DatagenConfig, PreferencePair, PREFERENCES_FILE};
use vidauth_core::harness::{evaluate, read_log, score_transcripts, write_report_csv, write_svg, EvalReport};
use vidauth_core::rewards::{reward_table, RewardConfig};
use vidauth_core::rng::stream;
use vidauth_core::sample::{Split, VideoSample};
use vidauth_core::trainer::{Checkpoint, LogRecord, Mode, Session, TrainConfig};

const LOG_FILE: &str = "log.jsonl";
const CHECKPOINT_FILE: &str = "checkpoint.json";
const CONFIG_FILE: &str = "config.json";

#[derive(Parser)]
#[command(
    name = "vidauth",
    version,
    about = "Train and evaluate toy video-authenticity detectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory.
    Datagen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inject a temporal artifact into every sample of a JSON-lines file.
    Inject {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Artifact config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one training stage.
    Train {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by the same config.
        #[arg(long, conflicts_with = "init")]
        resume: Option<PathBuf>,
        /// Start from the parameters of an earlier stage's checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Also write the checkpoint every N steps.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Stop once this many steps are complete; a later --resume continues.
        #[arg(long)]
        until: Option<usize>,
    },
    /// Evaluate a checkpoint with greedy decoding.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// `.csv` writes flat metric rows, anything else JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score externally produced transcripts.
    Score {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Answer space JSON; the default 5-step grid when omitted.
        #[arg(long)]
        space: Option<PathBuf>,
    },
    /// Write the quality-reward table as CSV.
    RewardTable {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot a training log as SVG.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sft,
    Dpo,
    Grpo,
    GrpoTa,
    GrpoQ,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sft => Mode::Sft,
            ModeArg::Dpo => Mode::Dpo,
            ModeArg::Grpo => Mode::Grpo,
            ModeArg::GrpoTa => Mode::GrpoTa,
            ModeArg::GrpoQ => Mode::GrpoQ,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RewardTableConfig {
    space: AnswerSpace,
    reward: RewardConfig,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Datagen { config, out } => {
            let cfg: DatagenConfig = read_config(&config)?;
            let corpus = vidauth_core::datagen::build_corpus(&cfg)?;
            corpus.save(&out)?;
            eprintln!("wrote {} samples to {}", corpus.samples.len(), out.display());
        }
        Command::Inject {
            input,
            out,
            seed,
            config,
        } => {
            let cfg: ArtifactConfig = match config {
                Some(p) => read_config(&p)?,
                None => ArtifactConfig::default(),
            };
            cfg.validate()?;
            let samples: Vec<VideoSample> = read_jsonl(&input)?;
            let injected = samples
                .iter()
                .enumerate()
                .map(|(i, s)| inject(s, &cfg, &mut stream(seed, &[i as u64])))
                .collect::<vidauth_core::Result<Vec<_>>>()?;
            write_jsonl(&out, &injected)?;
        }
        Command::Train {
            mode,
            config,
            data,
            out,
            resume,
            init,
            checkpoint_every,
            until,
        } => train(
            mode.into(),
            &config,
            &data,
            &out,
            resume.as_deref(),
            init.as_deref(),
            checkpoint_every,
            until,
        )?,
        Command::Eval { ckpt, data, split, out } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let params = ckpt.params.to_params()?;
            let corpus = Corpus::load(&data)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let space = &corpus.config.space;
            let report = evaluate(&params, corpus.split(split), space, space)?;
            write_report(&report, &out)?;
            eprintln!("top1 {:.4} f1 {:.4} over {} samples", report.top1, report.f1, report.n);
        }
        Command::Score {
            transcripts,
            out,
            space,
        } => {
            let space = match space {
                Some(p) => read_config::<AnswerSpace>(&p)?,
                None => AnswerSpace::default(),
            };
            space.validate()?;
            let report = score_transcripts(&transcripts, &space)?;
            write_report(&report, &out)?;
        }
        Command::RewardTable { config, out } => {
            let cfg: RewardTableConfig = read_config(&config)?;
            let table = reward_table(&cfg.space, &cfg.reward)?;
            fs::write(&out, table.to_csv()).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Report { log, out } => write_svg(&read_log(&log)?, &out)?,
    }
    Ok(())
}

fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        write_report_csv(report, out)?;
    } else {
        write_json(out, report)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    mode: Mode,
    config: &Path,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    init: Option<&Path>,
    checkpoint_every: Option<usize>,
    until: Option<usize>,
) -> Result<()> {
    let mut cfg: TrainConfig = read_config(config)?;
    cfg.mode = mode;
    cfg.validate()?;
    let corpus = Corpus::load(data)?;
    let pairs_path = data.join(PREFERENCES_FILE);
    let pairs: Option<Vec<PreferencePair>> = if mode == Mode::Dpo && pairs_path.exists() {
        Some(read_jsonl(&pairs_path)?)
    } else {
        None
    };
    fs::create_dir_all(out)?;
    let log_path = out.join(LOG_FILE);
    let mut session = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let session = Session::resume(cfg.clone(), &corpus, &ckpt, pairs.as_deref())?;
            // Keep the log consistent with the checkpoint it resumes from.
            let kept: Vec<LogRecord> = if log_path.exists() {
                read_log(&log_path)?
                    .into_iter()
                    .filter(|r| r.step <= ckpt.step)
                    .collect()
            } else {
                Vec::new()
            };
            if kept.len() != ckpt.step {
                bail!(
                    "{} holds {} records up to step {}, expected a complete prefix",
                    log_path.display(),
                    kept.len(),
                    ckpt.step
                );
            }
            write_jsonl(&log_path, &kept)?;
            session
        }
        None => {
            let params0 = match init {
                Some(path) => Some(Checkpoint::load(path)?.params.to_params()?),
                None => None,
            };
            let session = Session::new(cfg.clone(), &corpus, params0, pairs.as_deref())?;
            fs::write(&log_path, "")?;
            session
        }
    };
    write_json(&out.join(CONFIG_FILE), &cfg)?;

    let file = fs::OpenOptions::new().append(true).open(&log_path)?;
    let mut log = BufWriter::new(file);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let stop = until.unwrap_or(usize::MAX);
    while !session.is_done() && session.steps_done() < stop {
        let record = session.step_once()?;
        serde_json::to_writer(&mut log, &record)?;
        log.write_all(b"\n")?;
        if checkpoint_every.is_some_and(|n| n > 0 && record.step % n == 0) {
            log.flush()?;
            session.checkpoint().save(&ckpt_path)?;
        }
    }
    log.flush()?;
    session.checkpoint().save(&ckpt_path)?;
    eprintln!(
        "{} steps done, checkpoint at {}",
        session.steps_done(),
        ckpt_path.display()
    );
    Ok(())
}
