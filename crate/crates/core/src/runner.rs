//! The training loop: wires the environment, batch sampler, reward shaping,
//! optimizer, curriculum, and on-disk artifacts into one resumable run.
//!
//! Per step: draw a fresh rollout group for every training sample, split the
//! pool by gate state, select a batch (the mixture draw during compression
//! for the gated variants, uniform otherwise), shape rewards according to
//! the configured variant, turn each group's rewards into advantages, and
//! apply one clipped policy-gradient step. Evaluations run on the cadence of
//! the current stage, feed the early-stop rule, and each one ends with a
//! checkpoint, so a killed run restarts from its last evaluation and
//! reproduces the uninterrupted run byte for byte.
//!
//! Run directory layout: `config.toml` (echo of the effective config),
//! `metrics.jsonl` (step/eval/stage/restore events), `trace.jsonl` (rollout
//! records of the monitored evaluation split), `checkpoint.bin`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::{BaselineKind, RunConfig};
use crate::curriculum::{CurriculumState, EvalPoint, StageDecision, StageKind};
use crate::error::{Error, Result};
use crate::metrics::{MetricRecord, MetricsWriter, Split};
use crate::optim::{
    entropy_proxy, group_advantages, policy_update, rollout_log_prob, BatchItem, PolicyParams,
};
use crate::reward::{global_soft_penalty, hard_truncate, RolloutRecord, SampleState};
use crate::sampler::{draw_batch, draw_uniform, partition};
use crate::sim::{eval_groups, init_population, metrics_from_groups, sample_rollouts, ProblemSpec};
use crate::trace::TraceRecord;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Shared soft-penalty band used by the global variants: one `(start, max)`
/// for every sample, frozen when a compression stage begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalBand {
    pub start: u64,
    pub max: u64,
}

/// Checkpoint payload: everything needed to continue a run exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunState {
    params: PolicyParams,
    curriculum: CurriculumState,
    global_band: Option<GlobalBand>,
    /// Policy snapshots taken at each evaluation of the current compression
    /// stage; the early-stop rule restores one of these.
    snapshots: BTreeMap<u64, PolicyParams>,
    metrics_offset: u64,
    trace_offset: u64,
}

/// One evaluation result as reported to callers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSnapshot {
    pub step: u64,
    pub stage: StageKind,
    pub loop_index: u64,
    pub accuracy: f64,
    pub mean_length: f64,
    pub min_length: u64,
    pub max_length: u64,
    /// Fraction of problems whose whole evaluation group verified.
    pub gated_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageTransition {
    pub step: u64,
    pub from: StageKind,
    pub to: StageKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RestoreEvent {
    pub at_step: u64,
    pub from_step: u64,
}

/// What a (possibly resumed) run did. Evaluation lists cover the current
/// process only; the full history always lives in `metrics.jsonl`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunReport {
    pub final_step: u64,
    pub loops_completed: usize,
    pub stage_transitions: Vec<StageTransition>,
    pub restores: Vec<RestoreEvent>,
    pub train_evals: Vec<EvalSnapshot>,
    pub holdout_evals: Vec<EvalSnapshot>,
}

/// Lower quantile of a sorted length list: the smallest element with at
/// least `q` of the mass at or below it.
fn length_quantile(sorted: &[u64], q: f64) -> u64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

pub struct Runner {
    config: RunConfig,
    digest: [u8; 32],
    root: PathBuf,
    train_problems: Vec<ProblemSpec>,
    holdout_problems: Vec<ProblemSpec>,
    params: PolicyParams,
    curriculum: CurriculumState,
    global_band: Option<GlobalBand>,
    snapshots: BTreeMap<u64, PolicyParams>,
    /// Sorted lengths from the latest training-split evaluation; seeds the
    /// global band at compression entry.
    last_train_lengths: Vec<u64>,
    metrics: MetricsWriter,
    trace: MetricsWriter,
}

impl Runner {
    /// Start a fresh run in `root` (created if absent; artifact files are
    /// truncated if present).
    pub fn new(config: RunConfig, root: impl AsRef<Path>) -> Result<Self> {
        config.validate()?;
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;

        let (train_problems, holdout_problems, params) = Self::build_population(&config)?;
        if train_problems.len() < config.mixture.batch_size {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} exceeds the {} samples left for training after the holdout split",
                config.mixture.batch_size,
                train_problems.len()
            )));
        }
        let curriculum = CurriculumState::new(&config.stages)?;

        let echo_path = root.join(CONFIG_FILE);
        std::fs::write(&echo_path, config.to_toml_string()).map_err(|e| Error::io(&echo_path, e))?;
        let metrics = MetricsWriter::create(root.join(METRICS_FILE))?;
        let trace = MetricsWriter::create(root.join(TRACE_FILE))?;

        Ok(Runner {
            digest: config.digest(),
            config,
            root,
            train_problems,
            holdout_problems,
            params,
            curriculum,
            global_band: None,
            snapshots: BTreeMap::new(),
            last_train_lengths: Vec::new(),
            metrics,
            trace,
        })
    }

    /// Continue a run from its checkpoint. Refuses to proceed if the config
    /// digest stored in the checkpoint differs from `config`'s. The metrics
    /// and trace logs are truncated back to the checkpoint's offsets, so the
    /// continuation appends exactly where the checkpointed run left off.
    pub fn resume(config: RunConfig, root: impl AsRef<Path>) -> Result<Self> {
        config.validate()?;
        let root = root.as_ref().to_path_buf();
        let digest = config.digest();
        let state: RunState = read_checkpoint(root.join(CHECKPOINT_FILE), &digest)?;
        let (train_problems, holdout_problems, _) = Self::build_population(&config)?;
        let metrics = MetricsWriter::resume(root.join(METRICS_FILE), state.metrics_offset)?;
        let trace = MetricsWriter::resume(root.join(TRACE_FILE), state.trace_offset)?;
        Ok(Runner {
            digest,
            config,
            root,
            train_problems,
            holdout_problems,
            params: state.params,
            curriculum: state.curriculum,
            global_band: state.global_band,
            snapshots: state.snapshots,
            last_train_lengths: Vec::new(),
            metrics,
            trace,
        })
    }

    fn build_population(
        config: &RunConfig,
    ) -> Result<(Vec<ProblemSpec>, Vec<ProblemSpec>, PolicyParams)> {
        let (problems, params) = init_population(&config.sim, config.profile)?;
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        match config.holdout_stride() {
            Some(stride) => {
                for (i, p) in problems.into_iter().enumerate() {
                    if i % stride == 0 {
                        holdout.push(p);
                    } else {
                        train.push(p);
                    }
                }
            }
            None => train = problems,
        }
        Ok((train, holdout, params))
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn curriculum(&self) -> &CurriculumState {
        &self.curriculum
    }

    pub fn global_band(&self) -> Option<GlobalBand> {
        self.global_band
    }

    pub fn train_problems(&self) -> &[ProblemSpec] {
        &self.train_problems
    }

    pub fn holdout_problems(&self) -> &[ProblemSpec] {
        &self.holdout_problems
    }

    /// The rollouts actually trained on and their shaped rewards for one
    /// sample, under the configured variant, in draw order (so they pair
    /// one-to-one with the generated records). For the hard-truncation
    /// variant in compression, over-length rollouts of gated samples come
    /// back cut to the start threshold and scored as failures.
    fn group_rewards(
        &self,
        stage: StageKind,
        state: &SampleState,
    ) -> Result<(Vec<RolloutRecord>, Vec<f64>)> {
        let correctness = |r: &RolloutRecord| f64::from(u8::from(r.correct));
        match self.config.baseline {
            BaselineKind::Ours => {
                let rewards = state
                    .rollouts
                    .iter()
                    .map(|r| crate::curriculum::effective_reward(stage, state, r))
                    .collect::<Result<Vec<_>>>()?;
                Ok((state.rollouts.clone(), rewards))
            }
            BaselineKind::GlobalSoftLite | BaselineKind::GlobalSoftHeavy => {
                let rewards = match (stage, self.global_band) {
                    (StageKind::Compression, Some(band)) => state
                        .rollouts
                        .iter()
                        .map(|r| {
                            Ok(correctness(r) + global_soft_penalty(r.length, band.start, band.max)?)
                        })
                        .collect::<Result<Vec<_>>>()?,
                    _ => state.rollouts.iter().map(correctness).collect(),
                };
                Ok((state.rollouts.clone(), rewards))
            }
            BaselineKind::HardTruncation => {
                if stage == StageKind::Compression {
                    if let Some(targets) = state.targets {
                        let rollouts = state
                            .rollouts
                            .iter()
                            .map(|r| {
                                if r.length > targets.start {
                                    hard_truncate(r, targets.start)
                                } else {
                                    Ok(r.clone())
                                }
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let rewards = rollouts.iter().map(correctness).collect();
                        return Ok((rollouts, rewards));
                    }
                }
                let rewards = state.rollouts.iter().map(correctness).collect();
                Ok((state.rollouts.clone(), rewards))
            }
        }
    }

    fn eval_split(
        &self,
        problems: &[ProblemSpec],
        step: u64,
    ) -> Result<(EvalSnapshot, Vec<Vec<RolloutRecord>>)> {
        let groups = eval_groups(&self.params, problems, &self.config.sim, step)?;
        let m = metrics_from_groups(&groups)?;
        let gated = groups.iter().filter(|g| g.iter().all(|r| r.correct)).count();
        let snap = EvalSnapshot {
            step,
            stage: self
                .curriculum
                .current_stage(&self.config.stages)
                .map(|s| s.kind)
                .unwrap_or(StageKind::Accuracy),
            loop_index: self.curriculum.loop_index as u64,
            accuracy: m.accuracy,
            mean_length: m.mean_length,
            min_length: m.min_length,
            max_length: m.max_length,
            gated_fraction: gated as f64 / groups.len() as f64,
        };
        Ok((snap, groups))
    }

    fn append_eval(&mut self, snap: &EvalSnapshot, split: Split) -> Result<()> {
        self.metrics.append(&MetricRecord::Eval {
            step: snap.step,
            split,
            accuracy: snap.accuracy,
            mean_length: snap.mean_length,
            min_length: snap.min_length,
            max_length: snap.max_length,
            gated_fraction: snap.gated_fraction,
        })
    }

    fn append_trace(&mut self, groups: &[Vec<RolloutRecord>], stage: StageKind) -> Result<()> {
        for r in groups.iter().flatten() {
            let record = TraceRecord {
                sample_id: r.sample_id.to_string(),
                step: r.step,
                length: r.length,
                correct: r.correct,
                text: None,
                run_id: None,
                stage: Some(stage),
            };
            self.trace.append_value(&record)?;
        }
        Ok(())
    }

    /// Freeze the shared band for the global variants from the latest
    /// training-split evaluation lengths (drawing one if none exists yet).
    fn compute_global_band(&mut self, step: u64) -> Result<()> {
        let q = match self.config.effective_start_quantile() {
            Some(q) => q,
            None => return Ok(()),
        };
        if self.last_train_lengths.is_empty() {
            let groups = eval_groups(&self.params, &self.train_problems, &self.config.sim, step)?;
            self.last_train_lengths = groups.iter().flatten().map(|r| r.length).collect();
            self.last_train_lengths.sort_unstable();
        }
        let cap = self.config.sim.context_cap;
        let start = length_quantile(&self.last_train_lengths, q).clamp(1, cap.saturating_sub(1));
        self.global_band = Some(GlobalBand { start, max: cap });
        Ok(())
    }

    fn on_stage_change(
        &mut self,
        step: u64,
        from: StageKind,
        report: &mut RunReport,
    ) -> Result<()> {
        self.snapshots.clear();
        if let Some(next) = self.curriculum.current_stage(&self.config.stages) {
            let to = next.kind;
            self.metrics.append(&MetricRecord::Stage {
                step,
                from,
                to,
                loop_index: self.curriculum.loop_index as u64,
            })?;
            report.stage_transitions.push(StageTransition { step, from, to });
            if to == StageKind::Compression
                && matches!(
                    self.config.baseline,
                    BaselineKind::GlobalSoftLite | BaselineKind::GlobalSoftHeavy
                )
            {
                self.compute_global_band(step)?;
            }
        }
        Ok(())
    }

    fn write_run_checkpoint(&self) -> Result<()> {
        let state = RunState {
            params: self.params.clone(),
            curriculum: self.curriculum.clone(),
            global_band: self.global_band,
            snapshots: self.snapshots.clone(),
            metrics_offset: self.metrics.byte_offset(),
            trace_offset: self.trace.byte_offset(),
        };
        write_checkpoint(self.root.join(CHECKPOINT_FILE), &self.digest, &state)
    }

    /// Execute one optimizer step (with its evaluation and checkpoint when
    /// due). Returns `false` once the schedule is finished.
    fn step_once(&mut self, report: &mut RunReport) -> Result<bool> {
        let stage = match self.curriculum.current_stage(&self.config.stages) {
            Some(s) => *s,
            None => return Ok(false),
        };
        let step = self.curriculum.global_step;
        let seed = self.config.sim.seed;
        let eval_due = self.curriculum.eval_due(&self.config.stages);

        // Fresh rollouts for the entire training pool: gate state is always
        // judged on current behavior, never on stale rollouts.
        let mut states = Vec::with_capacity(self.train_problems.len());
        for p in &self.train_problems {
            let rollouts = sample_rollouts(&self.params, p, &self.config.sim, step)?;
            states.push(SampleState::from_rollouts(p.sample_id.clone(), rollouts)?);
        }

        let use_mixture = stage.kind == StageKind::Compression
            && matches!(self.config.baseline, BaselineKind::Ours | BaselineKind::HardTruncation);
        let (ids, quota, drawn_c, short_c, short_r) = if use_mixture {
            let (compressible, rest) = partition(&states);
            let d = draw_batch(&compressible, &rest, &self.config.mixture, seed, step)?;
            (d.ids, d.quota_compressible, d.drawn_compressible, d.shortfall_compressible, d.shortfall_rest)
        } else {
            let refs: Vec<&SampleState> = states.iter().collect();
            (draw_uniform(&refs, self.config.mixture.batch_size, seed, step)?, 0, 0, 0, 0)
        };

        let by_id: BTreeMap<&str, &SampleState> =
            states.iter().map(|s| (s.sample_id.as_str(), s)).collect();
        let mut items = Vec::with_capacity(ids.len() * self.config.sim.rollouts_per_sample);
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        for id in &ids {
            let state = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::UnknownSample { id: id.to_string() })?;
            let (rollouts, rewards) = self.group_rewards(stage.kind, state)?;
            let advantages = group_advantages(&rewards, self.config.advantage_mode)?;
            reward_sum += rewards.iter().sum::<f64>();
            reward_count += rewards.len();
            // The stale log-prob is always taken over the record the policy
            // actually generated. Variants that train on an edited record
            // (hard truncation) therefore start the step off-policy, with an
            // importance ratio that can sit far outside the trust region.
            for ((rollout, advantage), generated) in
                rollouts.into_iter().zip(advantages).zip(&state.rollouts)
            {
                let old_log_prob =
                    rollout_log_prob(&self.params, generated, self.config.sim.exploration_scale)?;
                items.push(BatchItem { sample_id: id.clone(), rollout, advantage, old_log_prob });
            }
        }

        let stats = policy_update(
            &mut self.params,
            &items,
            self.config.lr,
            self.config.clip,
            self.config.sim.exploration_scale,
        )?;
        let entropy = entropy_proxy(&self.params, self.config.sim.exploration_scale);
        self.metrics.append(&MetricRecord::Step {
            step,
            stage: stage.kind,
            loop_index: self.curriculum.loop_index as u64,
            quota,
            drawn_compressible: drawn_c,
            shortfall_compressible: short_c,
            shortfall_rest: short_r,
            groups: stats.groups,
            grad_norm: stats.grad_norm,
            clipped_fraction: stats.clipped_fraction,
            entropy,
            mean_reward: reward_sum / reward_count.max(1) as f64,
        })?;

        let mut eval_point = None;
        if eval_due {
            let (train_snap, train_groups) = self.eval_split(&self.train_problems, step)?;
            self.append_eval(&train_snap, Split::Train)?;
            report.train_evals.push(train_snap);
            self.last_train_lengths = train_groups.iter().flatten().map(|r| r.length).collect();
            self.last_train_lengths.sort_unstable();

            let monitor = if self.holdout_problems.is_empty() {
                self.append_trace(&train_groups, stage.kind)?;
                train_snap
            } else {
                let (holdout_snap, holdout_groups) =
                    self.eval_split(&self.holdout_problems, step)?;
                self.append_eval(&holdout_snap, Split::Holdout)?;
                report.holdout_evals.push(holdout_snap);
                self.append_trace(&holdout_groups, stage.kind)?;
                holdout_snap
            };
            eval_point = Some(EvalPoint {
                step,
                accuracy: monitor.accuracy,
                mean_length: monitor.mean_length,
            });
            if stage.kind == StageKind::Compression {
                self.snapshots.insert(step, self.params.clone());
            }
        }

        let rule = self
            .config
            .early_stop
            .enabled
            .then_some(&self.config.early_stop.rule);
        let decision = self.curriculum.stage_step(&self.config.stages, rule, eval_point)?;
        match decision {
            StageDecision::Continue => {}
            StageDecision::AdvanceStage => self.on_stage_change(step, stage.kind, report)?,
            StageDecision::StopLoopRestore(from_step) => {
                let snap = self
                    .snapshots
                    .get(&from_step)
                    .cloned()
                    .ok_or(Error::MissingBaselineStep { step: from_step })?;
                self.params = snap;
                self.metrics
                    .append(&MetricRecord::Restore { step, restored_from_step: from_step })?;
                report.restores.push(RestoreEvent { at_step: step, from_step });
                self.on_stage_change(step, stage.kind, report)?;
            }
        }
        if eval_due {
            self.write_run_checkpoint()?;
        }
        Ok(!self.curriculum.finished)
    }

    /// Run until the schedule finishes (or return immediately if it already
    /// has, e.g. when resuming a completed run).
    pub fn run(&mut self) -> Result<RunReport> {
        let mut report = RunReport::default();
        while self.step_once(&mut report)? {}
        report.final_step = self.curriculum.global_step;
        report.loops_completed = self.curriculum.loop_index;
        Ok(report)
    }

    /// Run at most `max_steps` steps (test hook for interrupting a run at a
    /// known point). Returns the partial report.
    pub fn run_steps(&mut self, max_steps: u64) -> Result<RunReport> {
        let mut report = RunReport::default();
        for _ in 0..max_steps {
            if !self.step_once(&mut report)? {
                break;
            }
        }
        report.final_step = self.curriculum.global_step;
        report.loops_completed = self.curriculum.loop_index;
        Ok(report)
    }
}
