//! Command-line front end: `simulate` runs a configured training loop,
//! `resume` continues one from its checkpoint, `shape-rewards` applies the
//! gated reward shaping to an external rollout trace, and `analyze` turns a
//! trace into summaries, relative-change numbers, CSV, and SVG charts.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or usage
//! error, 3 malformed input data.

use clap::{Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use cotgate_core::curriculum::StageKind;
use cotgate_core::error::{Error, Result};
use cotgate_core::optim::AdvantageMode;
use cotgate_core::report::{emit_csv, emit_svg, ExtraColumns};
use cotgate_core::reward::{soft_length_penalty, RolloutRecord, SampleState};
use cotgate_core::runner::{RunReport, Runner, CONFIG_FILE, TRACE_FILE};
use cotgate_core::trace::{
    ingest_jsonl_path, relative_change, summarize, token_pattern_frequency, StepSummary,
    TraceRecord,
};
use cotgate_core::RunConfig;

/// Environment variable naming the default parent directory for run output.
pub const OUTPUT_ROOT_VAR: &str = "COTGATE_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "cotgate",
    version,
    about = "Mastery-gated length-compression training simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdvantageArg {
    Grpo,
    Drgrpo,
}

impl From<AdvantageArg> for AdvantageMode {
    fn from(a: AdvantageArg) -> Self {
        match a {
            AdvantageArg::Grpo => AdvantageMode::Grpo,
            AdvantageArg::Drgrpo => AdvantageMode::Drgrpo,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a training loop from a TOML config.
    Simulate {
        /// Path to the run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Parent directory for the run directory. Defaults to
        /// $COTGATE_OUTPUT_ROOT, then ./runs. The run directory itself is
        /// named run-<seed>-<first 8 config digest hex chars>.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Suppress the progress summary on stdout.
        #[arg(long)]
        quiet: bool,
    },
    /// Continue a checkpointed run until its schedule finishes.
    Resume {
        /// A run directory produced by `simulate`.
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Apply gated reward shaping to a rollout trace (JSONL in, JSONL out).
    ShapeRewards {
        /// Rollout trace to shape.
        #[arg(long)]
        input: PathBuf,
        /// Output path; stdout when omitted or "-".
        #[arg(long)]
        output: Option<PathBuf>,
        /// How group advantages are normalized.
        #[arg(long, value_enum, default_value_t = AdvantageArg::Grpo)]
        advantages: AdvantageArg,
    },
    /// Summarize a rollout trace per step, with optional CSV/SVG reports.
    Analyze {
        /// Rollout trace to analyze.
        #[arg(long)]
        trace: PathBuf,
        /// Write the per-step summary table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write a dual-axis chart (length % and accuracy %) here.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Step to compute relative changes against (default: first step).
        #[arg(long)]
        baseline_step: Option<u64>,
        /// Comma-separated token patterns to count per step in rollout texts.
        #[arg(long, value_delimiter = ',')]
        patterns: Vec<String>,
    },
}

/// Map an error onto the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_)
        | Error::ConfigParse { .. }
        | Error::ConfigHashMismatch { .. }
        | Error::BadGlobalBounds { .. } => 2,
        Error::Trace { .. }
        | Error::EmptyReport
        | Error::ZeroBaseline
        | Error::MissingBaselineStep { .. } => 3,
        _ => 1,
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, output_dir, quiet } => cmd_simulate(&config, output_dir, quiet),
        Command::Resume { run_dir, quiet } => cmd_resume(&run_dir, quiet),
        Command::ShapeRewards { input, output, advantages } => {
            cmd_shape_rewards(&input, output.as_deref(), advantages.into())
        }
        Command::Analyze { trace, csv, svg, baseline_step, patterns } => {
            cmd_analyze(&trace, csv.as_deref(), svg.as_deref(), baseline_step, &patterns)
        }
    }
}

fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn print_report(run_dir: &Path, report: &RunReport) {
    println!("run dir: {}", run_dir.display());
    println!(
        "finished at step {} ({} compression loop(s) completed)",
        report.final_step, report.loops_completed
    );
    for t in &report.stage_transitions {
        println!("  step {:>5}: {} -> {}", t.step, t.from, t.to);
    }
    for r in &report.restores {
        println!(
            "  step {:>5}: early stop, restored parameters from step {}",
            r.at_step, r.from_step
        );
    }
    let evals =
        if report.holdout_evals.is_empty() { &report.train_evals } else { &report.holdout_evals };
    let split = if report.holdout_evals.is_empty() { "train" } else { "holdout" };
    if let (Some(first), Some(last)) = (evals.first(), evals.last()) {
        println!(
            "{split} eval: accuracy {:.4} -> {:.4}, mean length {:.1} -> {:.1}",
            first.accuracy, last.accuracy, first.mean_length, last.mean_length
        );
        if first.mean_length > 0.0 {
            println!(
                "{split} change: length {:+.1}%, accuracy {:+.2} points",
                (last.mean_length - first.mean_length) / first.mean_length * 100.0,
                (last.accuracy - first.accuracy) * 100.0
            );
        }
    }
}

pub fn cmd_simulate(config_path: &Path, output_dir: Option<PathBuf>, quiet: bool) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let root = output_dir.unwrap_or_else(default_output_root);
    let run_dir = root.join(format!("run-{}-{}", config.sim.seed, &config.digest_hex()[..8]));
    let mut runner = Runner::new(config, &run_dir)?;
    let report = runner.run()?;
    if !quiet {
        print_report(&run_dir, &report);
    }
    Ok(())
}

pub fn cmd_resume(run_dir: &Path, quiet: bool) -> Result<()> {
    let config = RunConfig::load(run_dir.join(CONFIG_FILE))?;
    let mut runner = Runner::resume(config, run_dir)?;
    let report = runner.run()?;
    if !quiet {
        print_report(run_dir, &report);
    }
    Ok(())
}

/// Shape rewards for every `(step, sample)` rollout group in a trace.
///
/// Output is one JSON line per rollout, ordered by step then sample id:
/// gate state, the group's length thresholds when the gate is open, the
/// soft penalty, and the shaped reward. Groups of at least two rollouts
/// also get group-relative advantages; singleton groups carry a note
/// instead, since relative advantages are undefined for them.
pub fn cmd_shape_rewards(
    input: &Path,
    output: Option<&Path>,
    mode: AdvantageMode,
) -> Result<()> {
    let ingest = ingest_jsonl_path(input)?;
    if ingest.unknown_keys > 0 {
        eprintln!(
            "warning: ignored {} unknown key(s) while reading {}",
            ingest.unknown_keys,
            input.display()
        );
    }
    let mut groups: BTreeMap<(u64, String), Vec<TraceRecord>> = BTreeMap::new();
    for r in ingest.records {
        groups.entry((r.step, r.sample_id.clone())).or_default().push(r);
    }

    let mut lines = Vec::new();
    for ((step, sample_id), records) in groups {
        let rollouts: Vec<RolloutRecord> = records
            .iter()
            .map(|r| RolloutRecord {
                sample_id: r.sample_id.as_str().into(),
                step: r.step,
                length: r.length,
                correct: r.correct,
                text: None,
            })
            .collect();
        let state = SampleState::from_rollouts(sample_id.as_str().into(), rollouts)?;
        let rewards: Vec<f64> = state
            .rollouts
            .iter()
            .map(|r| cotgate_core::effective_reward(StageKind::Compression, &state, r))
            .collect::<Result<Vec<_>>>()?;
        let advantages = if rewards.len() >= 2 {
            Some(cotgate_core::group_advantages(&rewards, mode)?)
        } else {
            None
        };
        for (i, r) in state.rollouts.iter().enumerate() {
            let mut obj = serde_json::Map::new();
            obj.insert("sample_id".into(), sample_id.clone().into());
            obj.insert("step".into(), step.into());
            obj.insert("length".into(), r.length.into());
            obj.insert("correct".into(), u8::from(r.correct).into());
            obj.insert("gate_open".into(), u8::from(state.gate_open()).into());
            let penalty = match state.targets {
                Some(t) => {
                    obj.insert("l_start".into(), t.start.into());
                    obj.insert("l_max".into(), t.max.into());
                    soft_length_penalty(r.length, t)
                }
                None => 0.0,
            };
            obj.insert("penalty".into(), penalty.into());
            obj.insert("reward".into(), rewards[i].into());
            match &advantages {
                Some(a) => {
                    obj.insert("advantage".into(), a[i].into());
                }
                None => {
                    obj.insert(
                        "note".into(),
                        "singleton group: relative advantage undefined".into(),
                    );
                }
            }
            lines.push(serde_json::Value::Object(obj).to_string());
        }
    }

    let body = if lines.is_empty() { String::new() } else { format!("{}\n", lines.join("\n")) };
    match output {
        Some(path) if path != Path::new("-") => {
            std::fs::write(path, body).map_err(|e| Error::io(path, e))
        }
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn pattern_columns(
    records: &[TraceRecord],
    summaries: &[StepSummary],
    patterns: &[String],
) -> ExtraColumns {
    let mut texts_by_step: BTreeMap<u64, Vec<&str>> = BTreeMap::new();
    for r in records {
        if let Some(t) = &r.text {
            texts_by_step.entry(r.step).or_default().push(t.as_str());
        }
    }
    let empty: Vec<&str> = Vec::new();
    let mut columns: ExtraColumns =
        Vec::with_capacity(patterns.len() * 2);
    let mut per_step: Vec<Vec<(usize, f64)>> = Vec::with_capacity(summaries.len());
    for s in summaries {
        let texts = texts_by_step.get(&s.step).unwrap_or(&empty);
        let freqs = token_pattern_frequency(texts, patterns);
        per_step.push(freqs.into_iter().map(|f| (f.count, f.ratio)).collect());
    }
    for (pi, p) in patterns.iter().enumerate() {
        let counts = per_step.iter().map(|row| row[pi].0.to_string()).collect();
        let ratios = per_step.iter().map(|row| row[pi].1.to_string()).collect();
        columns.push((format!("count_{p}"), counts));
        columns.push((format!("ratio_{p}"), ratios));
    }
    columns
}

pub fn cmd_analyze(
    trace: &Path,
    csv: Option<&Path>,
    svg: Option<&Path>,
    baseline_step: Option<u64>,
    patterns: &[String],
) -> Result<()> {
    let ingest = ingest_jsonl_path(trace)?;
    if ingest.unknown_keys > 0 {
        eprintln!(
            "warning: ignored {} unknown key(s) while reading {}",
            ingest.unknown_keys,
            trace.display()
        );
    }
    let summaries = summarize(&ingest.records);
    if summaries.is_empty() {
        return Err(Error::EmptyReport);
    }
    let base_step = baseline_step.unwrap_or(summaries[0].step);
    let baseline = summaries
        .iter()
        .find(|s| s.step == base_step)
        .copied()
        .ok_or(Error::MissingBaselineStep { step: base_step })?;

    println!("{} steps, baseline step {}", summaries.len(), base_step);
    println!(
        "{:>8} {:>10} {:>12} {:>8} {:>8} {:>7} {:>12} {:>10}",
        "step", "accuracy", "mean_len", "min", "max", "gated", "len_vs_base", "acc_pts"
    );
    for s in &summaries {
        let rc = relative_change(&baseline, s)?;
        println!(
            "{:>8} {:>10.4} {:>12.1} {:>8} {:>8} {:>7.3} {:>+11.1}% {:>+10.2}",
            s.step,
            s.accuracy,
            s.mean_length,
            s.min_length,
            s.max_length,
            s.gated_fraction,
            rc.delta_length_pct,
            rc.delta_accuracy_points
        );
    }

    let extra = if patterns.is_empty() {
        Vec::new()
    } else {
        let columns = pattern_columns(&ingest.records, &summaries, patterns);
        let totals = token_pattern_frequency(
            &ingest.records.iter().filter_map(|r| r.text.as_deref()).collect::<Vec<_>>(),
            patterns,
        );
        for f in totals {
            println!("pattern {:?}: {} occurrence(s), ratio {:.6}", f.pattern, f.count, f.ratio);
        }
        columns
    };

    if let Some(path) = csv {
        std::fs::write(path, emit_csv(&summaries, &extra)?).map_err(|e| Error::io(path, e))?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = svg {
        std::fs::write(path, emit_svg(&summaries)?).map_err(|e| Error::io(path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Convenience for tests and callers that want the trace path of a run.
pub fn run_trace_path(run_dir: &Path) -> PathBuf {
    run_dir.join(TRACE_FILE)
}
