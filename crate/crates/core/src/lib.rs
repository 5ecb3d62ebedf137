//! Reward shaping and a desk-scale training-loop simulator for
//! mastery-gated response-length compression in verifier-rewarded RL.
//!
//! The idea under test: only compress what is already solved. Each training
//! sample carries its own length gate — a soft penalty that switches on only
//! while the policy solves the sample perfectly, with thresholds re-derived
//! every step from the sample's own correct rollouts. Around that core this
//! crate provides:
//!
//! - [`reward`]: the penalty/reward algebra and per-sample length targets;
//! - [`optim`]: group-relative advantages and a clipped policy-gradient step
//!   over an explicit per-sample policy with a shared generalization term;
//! - [`sim`]: a synthetic environment whose problems fail when answered too
//!   tersely, which is what makes over-compression collapse observable;
//! - [`sampler`]: the mixture batch rule that caps how much of each batch
//!   compression may occupy;
//! - [`curriculum`]: alternating accuracy/compression stages plus the
//!   early-stop rule that rewinds compression before damage compounds;
//! - [`runner`]: the resumable loop tying it together, with JSONL metrics,
//!   rollout traces, and binary checkpoints;
//! - [`trace`], [`report`]: offline ingestion and CSV/SVG reporting;
//! - [`config`], [`metrics`], [`checkpoint`], [`rng`], [`error`]: the
//!   supporting plumbing. All randomness derives from one seed through keyed
//!   streams, so every artifact of a run is a pure function of its config.

pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod report;
pub mod reward;
pub mod rng;
pub mod runner;
pub mod sampler;
pub mod sim;
pub mod trace;

pub use config::{BaselineKind, EarlyStopConfig, RunConfig};
pub use curriculum::{
    early_stop_check, effective_reward, CurriculumState, EarlyStopRule, EvalPoint, StageConfig,
    StageDecision, StageKind,
};
pub use error::{Error, Result};
pub use metrics::{read_metrics, MetricRecord, MetricsWriter, Split};
pub use optim::{
    entropy_proxy, group_advantages, policy_update, rollout_log_prob, AdvantageMode, BatchItem,
    ClipBounds, PolicyParams, SampleParams, UpdateStats,
};
pub use reward::{
    compute_length_targets, compute_passrate, global_soft_penalty, hard_truncate, shaped_reward,
    soft_length_penalty, LengthTargets, Passrate, RolloutRecord, SampleId, SampleState,
};
pub use runner::{EvalSnapshot, GlobalBand, RestoreEvent, RunReport, Runner, StageTransition};
pub use sampler::{draw_batch, draw_uniform, partition, BatchDraw, MixtureConfig};
pub use sim::{
    evaluate, init_population, sample_rollouts, DifficultyProfile, EvalMetrics, ProblemSpec,
    SimConfig,
};
pub use trace::{
    ingest_jsonl, ingest_jsonl_path, relative_change, summarize, token_pattern_frequency, Ingest,
    PatternFrequency, RelativeChange, StepSummary, TraceRecord,
};
