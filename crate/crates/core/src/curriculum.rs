//! Stage scheduling: accuracy phases, compression phases, and the early-stop
//! rule that ends compression before accuracy damage compounds.
//!
//! A schedule is a list of stages walked in order. Accuracy stages run for a
//! fixed step budget. Compression stages end either at their budget or when
//! the early-stop rule fires: the window-smoothed held-out accuracy has sat
//! more than `delta_points` below its running maximum for `patience`
//! consecutive evaluations while mean length was still falling — decline that
//! tracks compression, not noise. On stop, the run rewinds the policy to the
//! checkpoint of the best evaluation seen in the stage (the pre-collapse
//! optimum), not the current one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{soft_length_penalty, shaped_reward, RolloutRecord, SampleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Accuracy,
    Compression,
}

impl std::fmt::Display for StageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StageKind::Accuracy => "accuracy",
            StageKind::Compression => "compression",
        })
    }
}

/// One stage of the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub kind: StageKind,
    /// Step budget. Zero is allowed and means the stage is skipped outright —
    /// a schedule whose compression stages are all zero degenerates to plain
    /// RLVR.
    pub max_steps: u64,
    /// Evaluate (and checkpoint) every this many steps.
    pub eval_every: u64,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        if self.max_steps > 0 && self.eval_every > self.max_steps {
            return Err(Error::InvalidConfig(format!(
                "eval_every {} exceeds stage budget {}",
                self.eval_every, self.max_steps
            )));
        }
        Ok(())
    }
}

/// Early-stop rule for compression stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopRule {
    /// Tolerated dip of the windowed accuracy below its running maximum,
    /// in accuracy points (1.0 = one percentage point).
    pub delta_points: f64,
    /// Consecutive violating evaluations required to fire.
    pub patience: usize,
    /// Moving-average window (in evaluations) applied to accuracy.
    pub window: usize,
}

impl Default for EarlyStopRule {
    fn default() -> Self {
        EarlyStopRule { delta_points: 1.0, patience: 2, window: 3 }
    }
}

impl EarlyStopRule {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 || self.window == 0 {
            return Err(Error::InvalidConfig("patience and window must be >= 1".into()));
        }
        if !(self.delta_points >= 0.0 && self.delta_points.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "delta_points must be non-negative, got {}",
                self.delta_points
            )));
        }
        Ok(())
    }
}

/// One evaluation result, as seen by the early-stop rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    /// Held-out accuracy in [0, 1].
    pub accuracy: f64,
    pub mean_length: f64,
}

/// Decide whether a compression stage should stop now.
///
/// Returns the step whose checkpoint to restore — the evaluation with the
/// maximum windowed accuracy, latest on ties (same accuracy, shorter
/// responses) — or `None` to keep going. Histories shorter than
/// `window + patience` never fire.
pub fn early_stop_check(history: &[EvalPoint], rule: &EarlyStopRule) -> Option<u64> {
    rule.validate().ok()?;
    if history.len() < rule.window + rule.patience {
        return None;
    }
    // Moving averages; index w corresponds to history index w + window - 1.
    let windowed: Vec<f64> = history
        .windows(rule.window)
        .map(|w| w.iter().map(|e| e.accuracy).sum::<f64>() / rule.window as f64)
        .collect();

    let mut running_max = f64::NEG_INFINITY;
    let mut best_idx = 0usize;
    let mut violation_streak = 0usize;
    for (i, &m) in windowed.iter().enumerate() {
        if m >= running_max {
            running_max = m;
            best_idx = i;
        }
        if (running_max - m) * 100.0 > rule.delta_points {
            violation_streak += 1;
        } else {
            violation_streak = 0;
        }
    }
    if violation_streak < rule.patience {
        return None;
    }
    // Accuracy alone can dip for reasons other than compression; require that
    // mean length actually fell across the violating stretch.
    let last = history.len() - 1;
    if history[last].mean_length >= history[last - rule.patience].mean_length {
        return None;
    }
    Some(history[best_idx + rule.window - 1].step)
}

/// Verdict after one completed step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageDecision {
    /// Stay in the current stage.
    Continue,
    /// Stage budget exhausted; the state has moved to the next stage.
    AdvanceStage,
    /// Compression early-stopped; restore the checkpoint at the given step,
    /// then proceed in the (already advanced) next stage.
    StopLoopRestore(u64),
}

/// Mutable progress through a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub stage_index: usize,
    /// Steps completed within the current stage.
    pub step_in_stage: u64,
    /// Steps completed across the whole run.
    pub global_step: u64,
    /// Completed accuracy->compression->accuracy cycles.
    pub loop_index: usize,
    /// Evaluations recorded within the current stage.
    pub eval_history: Vec<EvalPoint>,
    pub finished: bool,
}

impl CurriculumState {
    pub fn new(schedule: &[StageConfig]) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::InvalidConfig("schedule must contain at least one stage".into()));
        }
        for s in schedule {
            s.validate()?;
        }
        let mut state = CurriculumState {
            stage_index: 0,
            step_in_stage: 0,
            global_step: 0,
            loop_index: 0,
            eval_history: Vec::new(),
            finished: false,
        };
        state.skip_empty_stages(schedule);
        Ok(state)
    }

    pub fn current_stage<'a>(&self, schedule: &'a [StageConfig]) -> Option<&'a StageConfig> {
        if self.finished {
            None
        } else {
            schedule.get(self.stage_index)
        }
    }

    /// Whether the step just about to run should end with an evaluation.
    pub fn eval_due(&self, schedule: &[StageConfig]) -> bool {
        match self.current_stage(schedule) {
            Some(s) => (self.step_in_stage + 1) % s.eval_every == 0
                || self.step_in_stage + 1 == s.max_steps,
            None => false,
        }
    }

    fn advance(&mut self, schedule: &[StageConfig]) {
        // A full loop completes when an accuracy stage that follows a
        // compression stage ends.
        if self.stage_index > 0
            && schedule[self.stage_index].kind == StageKind::Accuracy
            && schedule[self.stage_index - 1].kind == StageKind::Compression
        {
            self.loop_index += 1;
        }
        self.stage_index += 1;
        self.step_in_stage = 0;
        self.eval_history.clear();
        if self.stage_index >= schedule.len() {
            self.finished = true;
        } else {
            self.skip_empty_stages(schedule);
        }
    }

    /// Move past zero-budget stages (they contribute no steps at all).
    pub fn skip_empty_stages(&mut self, schedule: &[StageConfig]) {
        while !self.finished {
            match schedule.get(self.stage_index) {
                Some(s) if s.max_steps == 0 => self.advance(schedule),
                Some(_) => break,
                None => {
                    self.finished = true;
                }
            }
        }
    }

    /// Record one completed step (plus its evaluation, if one ran) and decide
    /// what happens next. Passing no rule disables early stopping entirely:
    /// compression then runs to its full budget no matter what accuracy does.
    pub fn stage_step(
        &mut self,
        schedule: &[StageConfig],
        rule: Option<&EarlyStopRule>,
        eval: Option<EvalPoint>,
    ) -> Result<StageDecision> {
        let stage = *self
            .current_stage(schedule)
            .ok_or_else(|| Error::InvalidConfig("stage_step called on a finished schedule".into()))?;
        self.step_in_stage += 1;
        self.global_step += 1;
        if let Some(e) = eval {
            self.eval_history.push(e);
        }
        if let (StageKind::Compression, Some(rule)) = (stage.kind, rule) {
            if let Some(restore) = early_stop_check(&self.eval_history, rule) {
                self.advance(schedule);
                return Ok(StageDecision::StopLoopRestore(restore));
            }
        }
        if self.step_in_stage >= stage.max_steps {
            self.advance(schedule);
            return Ok(StageDecision::AdvanceStage);
        }
        Ok(StageDecision::Continue)
    }
}

/// Reward actually trained on in a given stage kind: plain correctness during
/// accuracy phases, the mastery-gated shaped reward during compression.
pub fn effective_reward(
    kind: StageKind,
    state: &SampleState,
    rollout: &RolloutRecord,
) -> Result<f64> {
    match kind {
        StageKind::Accuracy => Ok(f64::from(u8::from(rollout.correct))),
        StageKind::Compression => {
            if let Some(targets) = state.targets {
                let penalty = soft_length_penalty(rollout.length, targets);
                shaped_reward(rollout.correct, true, penalty)
            } else {
                shaped_reward(rollout.correct, false, 0.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(step: u64, acc_points: f64, len: f64) -> EvalPoint {
        EvalPoint { step, accuracy: acc_points / 100.0, mean_length: len }
    }

    fn plain_rule() -> EarlyStopRule {
        EarlyStopRule { delta_points: 1.0, patience: 2, window: 1 }
    }

    #[test]
    fn fires_on_sustained_dip_with_falling_length() {
        let history = vec![
            ev(10, 70.0, 100.0),
            ev(20, 70.0, 90.0),
            ev(30, 68.5, 80.0),
            ev(40, 68.2, 70.0),
        ];
        // Restores the later of the two tied maxima: same accuracy, shorter.
        assert_eq!(early_stop_check(&history, &plain_rule()), Some(20));
    }

    #[test]
    fn rising_length_blocks_the_stop() {
        let history = vec![ev(10, 70.0, 100.0), ev(20, 68.0, 105.0), ev(30, 67.0, 110.0)];
        assert_eq!(early_stop_check(&history, &plain_rule()), None);
    }

    #[test]
    fn short_history_never_fires() {
        let rule = EarlyStopRule { delta_points: 1.0, patience: 2, window: 3 };
        let history = vec![ev(1, 70.0, 50.0), ev(2, 50.0, 40.0), ev(3, 30.0, 30.0), ev(4, 10.0, 20.0)];
        // Four entries < window + patience = 5, despite a catastrophic slide.
        assert_eq!(early_stop_check(&history, &rule), None);
    }

    #[test]
    fn interrupted_streak_resets_patience() {
        let history = vec![
            ev(1, 70.0, 100.0),
            ev(2, 68.0, 95.0),  // violation
            ev(3, 69.8, 90.0),  // back within delta: streak resets
            ev(4, 68.0, 85.0),  // violation (streak 1 only)
        ];
        assert_eq!(early_stop_check(&history, &plain_rule()), None);
    }

    #[test]
    fn window_smooths_single_eval_noise() {
        let rule = EarlyStopRule { delta_points: 1.0, patience: 2, window: 3 };
        // One noisy dip inside an otherwise flat series must not fire.
        let history = vec![
            ev(1, 70.0, 100.0),
            ev(2, 70.0, 98.0),
            ev(3, 66.0, 96.0),
            ev(4, 70.0, 94.0),
            ev(5, 70.0, 92.0),
        ];
        assert_eq!(early_stop_check(&history, &rule), None);
    }

    #[test]
    fn restore_points_at_running_max() {
        let history = vec![
            ev(10, 68.0, 100.0),
            ev(20, 71.0, 95.0),
            ev(30, 69.9, 90.0),
            ev(40, 69.5, 85.0),
            ev(50, 69.0, 80.0),
        ];
        assert_eq!(early_stop_check(&history, &plain_rule()), Some(20));
    }

    fn schedule() -> Vec<StageConfig> {
        vec![
            StageConfig { kind: StageKind::Accuracy, max_steps: 2, eval_every: 1 },
            StageConfig { kind: StageKind::Compression, max_steps: 5, eval_every: 1 },
            StageConfig { kind: StageKind::Accuracy, max_steps: 2, eval_every: 1 },
        ]
    }

    #[test]
    fn schedule_walks_stages_and_counts_loops() {
        let sched = schedule();
        let rule = EarlyStopRule::default();
        let mut st = CurriculumState::new(&sched).unwrap();
        assert_eq!(st.stage_step(&sched, Some(&rule), None).unwrap(), StageDecision::Continue);
        assert_eq!(st.stage_step(&sched, Some(&rule), None).unwrap(), StageDecision::AdvanceStage);
        assert_eq!(st.stage_index, 1);
        for _ in 0..4 {
            assert_eq!(st.stage_step(&sched, Some(&rule), None).unwrap(), StageDecision::Continue);
        }
        assert_eq!(st.stage_step(&sched, Some(&rule), None).unwrap(), StageDecision::AdvanceStage);
        assert_eq!(st.loop_index, 0);
        st.stage_step(&sched, Some(&rule), None).unwrap();
        assert_eq!(st.stage_step(&sched, Some(&rule), None).unwrap(), StageDecision::AdvanceStage);
        assert!(st.finished);
        assert_eq!(st.loop_index, 1);
    }

    #[test]
    fn early_stop_advances_and_reports_restore() {
        let sched = schedule();
        let rule = plain_rule();
        let mut st = CurriculumState::new(&sched).unwrap();
        st.stage_step(&sched, Some(&rule), None).unwrap();
        st.stage_step(&sched, Some(&rule), None).unwrap();
        assert_eq!(st.stage_index, 1);
        let evs = [ev(3, 70.0, 100.0), ev(4, 68.0, 90.0), ev(5, 67.0, 80.0)];
        let mut last = StageDecision::Continue;
        for e in evs {
            last = st.stage_step(&sched, Some(&rule), Some(e)).unwrap();
        }
        assert_eq!(last, StageDecision::StopLoopRestore(3));
        assert_eq!(st.stage_index, 2);
        assert!(st.eval_history.is_empty(), "history must reset across stages");
    }

    #[test]
    fn zero_budget_stages_are_skipped() {
        let sched = vec![
            StageConfig { kind: StageKind::Accuracy, max_steps: 1, eval_every: 1 },
            StageConfig { kind: StageKind::Compression, max_steps: 0, eval_every: 1 },
            StageConfig { kind: StageKind::Accuracy, max_steps: 1, eval_every: 1 },
        ];
        let rule = EarlyStopRule::default();
        let mut st = CurriculumState::new(&sched).unwrap();
        assert_eq!(st.stage_step(&sched, Some(&rule), None).unwrap(), StageDecision::AdvanceStage);
        // The empty compression stage was hopped over entirely.
        assert_eq!(st.stage_index, 2);
        assert_eq!(st.stage_step(&sched, Some(&rule), None).unwrap(), StageDecision::AdvanceStage);
        assert!(st.finished);
    }

    #[test]
    fn stage_config_validation() {
        assert!(StageConfig { kind: StageKind::Accuracy, max_steps: 5, eval_every: 0 }
            .validate()
            .is_err());
        assert!(StageConfig { kind: StageKind::Accuracy, max_steps: 5, eval_every: 6 }
            .validate()
            .is_err());
        assert!(StageConfig { kind: StageKind::Compression, max_steps: 0, eval_every: 1 }
            .validate()
            .is_ok());
    }

    #[test]
    fn effective_reward_matches_stage_semantics() {
        use crate::reward::RolloutRecord;
        let mk = |len: u64, correct: bool| RolloutRecord {
            sample_id: "s".into(),
            step: 0,
            length: len,
            correct,
            text: None,
        };
        let gated = SampleState::from_rollouts(
            "s".into(),
            vec![mk(100, true), mk(200, true), mk(300, true)],
        )
        .unwrap();
        // Targets (200, 300): penalties 0, 0, -1 -> shaped 1, 1, 0.
        let shaped: Vec<f64> = gated
            .rollouts
            .iter()
            .map(|r| effective_reward(StageKind::Compression, &gated, r).unwrap())
            .collect();
        assert_eq!(shaped, vec![1.0, 1.0, 0.0]);
        // Accuracy stages ignore length entirely.
        let acc: Vec<f64> = gated
            .rollouts
            .iter()
            .map(|r| effective_reward(StageKind::Accuracy, &gated, r).unwrap())
            .collect();
        assert_eq!(acc, vec![1.0, 1.0, 1.0]);

        let open = SampleState::from_rollouts("t".into(), vec![mk(10_000, true), mk(50, false)])
            .unwrap();
        for r in &open.rollouts {
            let got = effective_reward(StageKind::Compression, &open, r).unwrap();
            assert_eq!(got, f64::from(u8::from(r.correct)));
        }
    }
}
