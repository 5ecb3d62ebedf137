//! Reward algebra for mastery-gated length compression.
//!
//! The shaping rule is deliberately small: a rollout earns its binary
//! correctness reward, and *only* samples the policy has fully mastered
//! (every rollout in the current group correct) additionally receive a soft
//! length penalty. The penalty is zero up to a safe length taken from the
//! sample's own correct rollouts, then falls linearly to -1 at the longest
//! observed correct length. Unmastered samples are never length-penalized,
//! so correctness signal is never traded away before it exists.
//!
//! Everything here is pure and integer-exact where it matters: passrates are
//! kept as rational counts and the mastery gate compares integers, never
//! floats.

use serde::{Deserialize, Serialize};
use std::borrow::Borrow;
use std::fmt;

use crate::error::{Error, Result};

/// Opaque identifier for a training sample (problem instance).
///
/// Ordered and hashable so samples can live in sorted maps; serialized as a
/// bare string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(String);

impl SampleId {
    pub fn new(id: impl Into<String>) -> Self {
        SampleId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SampleId {
    fn from(s: &str) -> Self {
        SampleId(s.to_owned())
    }
}

impl From<String> for SampleId {
    fn from(s: String) -> Self {
        SampleId(s)
    }
}

impl Borrow<str> for SampleId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// One rollout of one sample at one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub sample_id: SampleId,
    pub step: u64,
    /// Response length in tokens; at least 1.
    pub length: u64,
    /// Verifier outcome. Serialized as 0/1 to match the trace schema.
    #[serde(with = "bool_as_int")]
    pub correct: bool,
    /// Optional response text, carried only by traces that include it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// Serialize `bool` as the integers 0/1 (the on-disk trace convention).
pub(crate) mod bool_as_int {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u64::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(de::Error::custom(format!("expected 0 or 1, got {other}"))),
        }
    }
}

/// Exact rational passrate: `correct / total` over one sample's rollout group.
///
/// Kept as integer counts so the mastery decision is an integer comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passrate {
    pub correct: usize,
    pub total: usize,
}

impl Passrate {
    /// The gate opens only on a perfect group: every rollout correct.
    pub fn is_perfect(&self) -> bool {
        self.correct == self.total
    }

    /// Float value in [0, 1], for reporting only. Never use this for gating.
    pub fn value(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Per-sample length targets measured on correct rollouts.
///
/// `start` is the safe length (penalty-free zone), `max` the length at which
/// the penalty saturates at -1. `start == max` is legal and disables the
/// penalty for that sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthTargets {
    pub start: u64,
    pub max: u64,
}

impl LengthTargets {
    pub fn new(start: u64, max: u64) -> Result<Self> {
        if start > max {
            return Err(Error::InvalidConfig(format!(
                "length targets inverted: start {start} > max {max}"
            )));
        }
        Ok(LengthTargets { start, max })
    }
}

/// A sample's per-step view: its rollouts, exact passrate, and (when the gate
/// is open) the length targets computed from those same rollouts.
///
/// Constructed via [`SampleState::from_rollouts`], which keeps the invariants
/// "gate open iff passrate perfect" and "targets present iff gate open" true
/// by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleState {
    pub sample_id: SampleId,
    pub rollouts: Vec<RolloutRecord>,
    pub passrate: Passrate,
    pub targets: Option<LengthTargets>,
}

impl SampleState {
    pub fn from_rollouts(sample_id: SampleId, rollouts: Vec<RolloutRecord>) -> Result<Self> {
        let outcomes: Vec<bool> = rollouts.iter().map(|r| r.correct).collect();
        let passrate = compute_passrate(&outcomes)?;
        let targets = if passrate.is_perfect() {
            // Under an open gate every rollout is correct, so the whole group
            // is the correct subset.
            Some(compute_length_targets(&rollouts)?)
        } else {
            None
        };
        Ok(SampleState { sample_id, rollouts, passrate, targets })
    }

    pub fn gate_open(&self) -> bool {
        self.passrate.is_perfect()
    }
}

/// Exact passrate over a group of binary outcomes.
pub fn compute_passrate(outcomes: &[bool]) -> Result<Passrate> {
    if outcomes.is_empty() {
        return Err(Error::EmptyRollouts { context: "passrate" });
    }
    let correct = outcomes.iter().filter(|c| **c).count();
    Ok(Passrate { correct, total: outcomes.len() })
}

/// Length targets from a group of correct rollouts: `start` is the lower
/// median length, `max` the maximum.
///
/// For a sorted group of n lengths the lower median is the element at index
/// ceil(n/2) - 1, i.e. no interpolation for even n — both targets are lengths
/// that actually occurred.
///
/// The caller passes the correct subset; under an open gate that is the whole
/// group. An empty list means the gate was not actually open.
pub fn compute_length_targets(correct_rollouts: &[RolloutRecord]) -> Result<LengthTargets> {
    if correct_rollouts.is_empty() {
        return Err(Error::GateNotOpen);
    }
    debug_assert!(correct_rollouts.iter().all(|r| r.correct));
    let mut lengths: Vec<u64> = correct_rollouts.iter().map(|r| r.length).collect();
    lengths.sort_unstable();
    let n = lengths.len();
    let start = lengths[n.div_ceil(2) - 1];
    let max = lengths[n - 1];
    Ok(LengthTargets { start, max })
}

/// Soft length penalty in [-1, 0].
///
/// Zero up to `targets.start`, linear down to -1 at `targets.max`, and -1
/// beyond it. Degenerate targets (`start == max`) yield zero everywhere: a
/// sample whose correct rollouts all had one length offers no compression
/// headroom to exploit.
pub fn soft_length_penalty(length: u64, targets: LengthTargets) -> f64 {
    if targets.start == targets.max {
        return 0.0;
    }
    if length <= targets.start {
        0.0
    } else if length > targets.max {
        -1.0
    } else {
        -((length - targets.start) as f64 / (targets.max - targets.start) as f64)
    }
}

/// Final shaped reward for one rollout: correctness plus the length penalty
/// when (and only when) the sample's mastery gate is open.
///
/// Passing a nonzero penalty with a closed gate is a contract violation — it
/// means a penalty was computed for a sample that should never have one.
pub fn shaped_reward(correct: bool, gate_open: bool, penalty: f64) -> Result<f64> {
    if !gate_open && penalty != 0.0 {
        return Err(Error::GateViolation { penalty });
    }
    let base = f64::from(u8::from(correct));
    Ok(if gate_open { base + penalty } else { base })
}

/// Population-level soft penalty with fixed bounds, as used by the global
/// baselines: same piecewise-linear shape as [`soft_length_penalty`] but one
/// (start, max) pair for every sample.
///
/// Errors if `start >= max`; a degenerate global band is a configuration
/// mistake, not a per-sample measurement artifact.
pub fn global_soft_penalty(length: u64, start: u64, max: u64) -> Result<f64> {
    if start >= max {
        return Err(Error::BadGlobalBounds { start, max });
    }
    Ok(if length <= start {
        0.0
    } else if length > max {
        -1.0
    } else {
        -((length - start) as f64 / (max - start) as f64)
    })
}

/// Hard-truncation transform used by the truncation baseline: a rollout longer
/// than `target` is cut at `target` and its correctness forced to 0 — a chain
/// cut mid-reasoning cannot be verified.
///
/// `target` must be at least 1 (a zero-length response is not a response).
pub fn hard_truncate(rollout: &RolloutRecord, target: u64) -> Result<RolloutRecord> {
    if target == 0 {
        return Err(Error::InvalidConfig("truncation target must be >= 1".into()));
    }
    let mut out = rollout.clone();
    if out.length > target {
        out.length = target;
        out.correct = false;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout(id: &str, length: u64, correct: bool) -> RolloutRecord {
        RolloutRecord { sample_id: id.into(), step: 0, length, correct, text: None }
    }

    #[test]
    fn passrate_is_exact() {
        let p = compute_passrate(&[true, true, false, true]).unwrap();
        assert_eq!(p, Passrate { correct: 3, total: 4 });
        assert!(!p.is_perfect());
        assert!((p.value() - 0.75).abs() < 1e-15);
        assert!(compute_passrate(&[true; 8]).unwrap().is_perfect());
        assert!(matches!(compute_passrate(&[]), Err(Error::EmptyRollouts { .. })));
    }

    #[test]
    fn near_perfect_passrate_keeps_gate_closed() {
        // 7/8 is not mastery; the gate must compare counts, not floats.
        let p = compute_passrate(&[true, true, true, true, true, true, true, false]).unwrap();
        assert!(!p.is_perfect());
    }

    #[test]
    fn length_targets_use_lower_median_and_max() {
        let group: Vec<_> = [100, 200, 300].iter().map(|l| rollout("s", *l, true)).collect();
        assert_eq!(compute_length_targets(&group).unwrap(), LengthTargets { start: 200, max: 300 });

        let group: Vec<_> = [400, 100, 300, 200].iter().map(|l| rollout("s", *l, true)).collect();
        assert_eq!(compute_length_targets(&group).unwrap(), LengthTargets { start: 200, max: 400 });

        let group: Vec<_> = [150, 150, 150, 150].iter().map(|l| rollout("s", *l, true)).collect();
        assert_eq!(compute_length_targets(&group).unwrap(), LengthTargets { start: 150, max: 150 });

        assert!(matches!(compute_length_targets(&[]), Err(Error::GateNotOpen)));
    }

    #[test]
    fn soft_penalty_piecewise_values() {
        let t = LengthTargets { start: 100, max: 200 };
        assert_eq!(soft_length_penalty(50, t), 0.0);
        assert_eq!(soft_length_penalty(100, t), 0.0);
        assert!((soft_length_penalty(150, t) + 0.5).abs() < 1e-15);
        assert_eq!(soft_length_penalty(200, t), -1.0);
        assert_eq!(soft_length_penalty(250, t), -1.0);
    }

    #[test]
    fn degenerate_targets_disable_penalty() {
        let t = LengthTargets { start: 150, max: 150 };
        for l in [1, 149, 150, 151, 999] {
            assert_eq!(soft_length_penalty(l, t), 0.0);
        }
    }

    #[test]
    fn soft_penalty_is_monotone_and_bounded() {
        let t = LengthTargets { start: 120, max: 480 };
        let mut prev = 0.0;
        for l in 1..600 {
            let p = soft_length_penalty(l, t);
            assert!((-1.0..=0.0).contains(&p));
            assert!(p <= prev + 1e-15, "penalty rose at length {l}");
            prev = p;
        }
    }

    #[test]
    fn shaped_reward_gates_the_penalty() {
        assert_eq!(shaped_reward(true, true, -0.25).unwrap(), 0.75);
        assert_eq!(shaped_reward(true, false, 0.0).unwrap(), 1.0);
        assert_eq!(shaped_reward(false, false, 0.0).unwrap(), 0.0);
        // Gate open with every rollout correct and maximal penalty: floor 0.
        assert_eq!(shaped_reward(true, true, -1.0).unwrap(), 0.0);
        assert!(matches!(
            shaped_reward(true, false, -0.5),
            Err(Error::GateViolation { .. })
        ));
    }

    #[test]
    fn global_penalty_matches_fixed_band() {
        assert_eq!(global_soft_penalty(20000, 26000, 64000).unwrap(), 0.0);
        assert_eq!(global_soft_penalty(26000, 26000, 64000).unwrap(), 0.0);
        assert!((global_soft_penalty(45000, 26000, 64000).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(global_soft_penalty(70000, 26000, 64000).unwrap(), -1.0);
        assert!(matches!(
            global_soft_penalty(10, 300, 300),
            Err(Error::BadGlobalBounds { .. })
        ));
    }

    #[test]
    fn hard_truncate_cuts_and_fails() {
        let r = rollout("s", 500, true);
        let cut = hard_truncate(&r, 200).unwrap();
        assert_eq!(cut.length, 200);
        assert!(!cut.correct);
        // At or below target: untouched.
        let keep = hard_truncate(&rollout("s", 200, true), 200).unwrap();
        assert_eq!(keep.length, 200);
        assert!(keep.correct);
        assert!(hard_truncate(&r, 0).is_err());
    }

    #[test]
    fn sample_state_invariants_hold_by_construction() {
        let gated = SampleState::from_rollouts(
            "a".into(),
            vec![rollout("a", 100, true), rollout("a", 300, true), rollout("a", 200, true)],
        )
        .unwrap();
        assert!(gated.gate_open());
        assert_eq!(gated.targets, Some(LengthTargets { start: 200, max: 300 }));

        let open = SampleState::from_rollouts(
            "b".into(),
            vec![rollout("b", 100, true), rollout("b", 300, false)],
        )
        .unwrap();
        assert!(!open.gate_open());
        assert!(open.targets.is_none());
    }

    #[test]
    fn rollout_record_serializes_correct_as_int() {
        let r = rollout("s1", 42, true);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"correct\":1"), "{json}");
        let back: RolloutRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let err = serde_json::from_str::<RolloutRecord>(
            "{\"sample_id\":\"s\",\"step\":0,\"length\":5,\"correct\":2}",
        );
        assert!(err.is_err());
    }
}
