//! Synthetic RLVR environment.
//!
//! Each problem is a difficulty logit, a baseline verbosity (mean log-length),
//! and a *required* log-length: the point below which responses stop carrying
//! enough reasoning to verify. A rollout's success probability is the policy's
//! correctness head times a ceiling term that decays once the policy's length
//! parameter drops under the requirement — too-short chains fail no matter how
//! capable the policy is. That single coupling is what makes over-compression
//! visible: push `mu` below the requirement and accuracy falls off a cliff,
//! exactly the failure mode the training loop has to learn to stop before.
//!
//! Given the parameters, correctness and length are still drawn independently
//! per rollout, and rollouts that blow past the context cap are recorded at
//! the cap as incorrect (a truncated chain cannot be verified).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{PolicyParams, SampleParams};
use crate::reward::{RolloutRecord, SampleId};
use crate::rng::{stream, StreamPurpose};

/// Environment and sampling configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Total number of problems generated (training + held-out pools).
    pub population_size: usize,
    /// Rollouts drawn per sample per training step (the group size N).
    pub rollouts_per_sample: usize,
    /// Rollouts drawn per held-out problem per evaluation.
    pub eval_rollouts: usize,
    /// Hard ceiling on response length; draws beyond it are recorded at the
    /// cap with correctness forced to 0.
    pub context_cap: u64,
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,
    /// Multiplier on the length spread during training rollouts.
    pub exploration_scale: f64,
    /// Multiplier on the length spread during evaluation (the lower-variance
    /// analogue of a reduced sampling temperature).
    pub eval_exploration_scale: f64,
    /// Base log-length standard deviation shared by all samples.
    pub length_sigma: f64,
    /// Width (in log-length) of the band over which success probability decays
    /// once the policy's mean log-length falls below a problem's requirement.
    pub shortfall_width: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            population_size: 512,
            rollouts_per_sample: 8,
            eval_rollouts: 32,
            context_cap: 65_536,
            seed: 42,
            exploration_scale: 1.0,
            eval_exploration_scale: 0.6,
            length_sigma: 0.35,
            shortfall_width: 0.08,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.population_size < 2 {
            return bad(format!("population_size must be >= 2, got {}", self.population_size));
        }
        if self.rollouts_per_sample < 2 {
            return bad(format!(
                "rollouts_per_sample must be >= 2, got {}",
                self.rollouts_per_sample
            ));
        }
        if self.eval_rollouts < 1 {
            return bad("eval_rollouts must be >= 1".into());
        }
        if self.context_cap < 1 {
            return bad("context_cap must be >= 1".into());
        }
        for (name, v) in [
            ("exploration_scale", self.exploration_scale),
            ("eval_exploration_scale", self.eval_exploration_scale),
            ("length_sigma", self.length_sigma),
            ("shortfall_width", self.shortfall_width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }
}

/// Initial difficulty mix of a generated population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DifficultyProfile {
    /// Mostly already-solved problems (a trained starting point): the bulk of
    /// the population gates immediately.
    MasteredHeavy,
    /// Difficulty logits spread uniformly over [-6, 6] — a mixed pool with
    /// mastered, learnable, and hard problems.
    Uniform,
    /// Mostly hard problems that rarely verify at initialization.
    HardHeavy,
    /// Every problem gets the same logit; used for controlled experiments.
    Constant { logit: f64 },
}

/// A generated problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub sample_id: SampleId,
    /// Initial correctness logit for the policy on this problem.
    pub difficulty: f64,
    /// Initial mean log-length (the policy starts verbose).
    pub base_log_length: f64,
    /// Log-length below which responses stop verifying; always below
    /// `base_log_length`, so every problem starts with compression headroom.
    pub required_log_length: f64,
    /// Optional grouping label; carried through but not interpreted here.
    pub domain_tag: Option<String>,
}

fn draw_logit(rng: &mut impl Rng, profile: DifficultyProfile) -> f64 {
    fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * rng.gen::<f64>()
    }
    match profile {
        DifficultyProfile::Constant { logit } => logit,
        DifficultyProfile::Uniform => uniform(rng, -6.0, 6.0),
        DifficultyProfile::MasteredHeavy => {
            let u: f64 = rng.gen();
            if u < 0.85 {
                uniform(rng, 3.0, 6.0)
            } else if u < 0.95 {
                uniform(rng, -2.0, 3.0)
            } else {
                uniform(rng, -7.0, -3.0)
            }
        }
        DifficultyProfile::HardHeavy => {
            let u: f64 = rng.gen();
            if u < 0.05 {
                uniform(rng, 3.0, 6.0)
            } else if u < 0.30 {
                uniform(rng, -2.0, 3.0)
            } else {
                uniform(rng, -7.0, -3.0)
            }
        }
    }
}

/// Generate a population and the matching initial policy.
///
/// Deterministic in `(config.seed, profile)`: the same call always yields the
/// same problems and parameters. Baseline verbosity is log-uniform over
/// roughly 800–16000 tokens, hard problems skew longer (some past the context
/// cap, so truncation pressure exists from step 0), and every problem's
/// requirement sits 0.5–0.9 log-units (roughly 40–60% of length) below its
/// starting verbosity.
pub fn init_population(
    config: &SimConfig,
    profile: DifficultyProfile,
) -> Result<(Vec<ProblemSpec>, PolicyParams)> {
    config.validate()?;
    let mut rng = stream(config.seed, StreamPurpose::Init, 0, "");
    let mut problems = Vec::with_capacity(config.population_size);
    let mut params = PolicyParams::new(config.length_sigma)?;
    for i in 0..config.population_size {
        let sample_id = SampleId::new(format!("p{i:05}"));
        let difficulty = draw_logit(&mut rng, profile);
        let mut base_log_length =
            800f64.ln() + (16_000f64.ln() - 800f64.ln()) * rng.gen::<f64>();
        if difficulty < -3.0 {
            // Hard problems ramble; some exceed the context cap outright.
            base_log_length += 0.5 + 1.1 * rng.gen::<f64>();
        }
        let verbosity = 0.5 + 0.4 * rng.gen::<f64>();
        let required_log_length = base_log_length - verbosity;
        params.insert(sample_id.clone(), SampleParams { a: difficulty, mu: base_log_length });
        problems.push(ProblemSpec {
            sample_id,
            difficulty,
            base_log_length,
            required_log_length,
            domain_tag: None,
        });
    }
    Ok((problems, params))
}

/// Probability that a rollout on `problem` verifies under the current policy:
/// the correctness head times the too-short ceiling.
pub fn success_probability(
    params: &PolicyParams,
    problem: &ProblemSpec,
    config: &SimConfig,
) -> Result<f64> {
    let (a, mu) = params.effective(problem.sample_id.as_str())?;
    let head = 1.0 / (1.0 + (-a).exp());
    let ceiling =
        1.0 / (1.0 + (-(mu - problem.required_log_length) / config.shortfall_width).exp());
    Ok(head * ceiling)
}

fn draw_group(
    params: &PolicyParams,
    problem: &ProblemSpec,
    config: &SimConfig,
    step: u64,
    n: usize,
    scale: f64,
    purpose: StreamPurpose,
) -> Result<Vec<RolloutRecord>> {
    let (_, mu) = params.effective(problem.sample_id.as_str())?;
    let p_success = success_probability(params, problem, config)?;
    let sigma = params.sigma * scale;
    let cap_edge = (config.context_cap as f64 + 0.5).ln();
    let mut rng = stream(config.seed, purpose, step, problem.sample_id.as_str());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        // Fixed draw order per rollout: correctness uniform, then length
        // normal. Changing this order would silently change every seed.
        let mut correct = rng.gen::<f64>() < p_success;
        let z: f64 = rng.sample(StandardNormal);
        let log_len = mu + sigma * z;
        let length = if log_len >= cap_edge {
            correct = false; // ran out of context mid-chain
            config.context_cap
        } else {
            (log_len.exp().round() as u64).clamp(1, config.context_cap)
        };
        out.push(RolloutRecord {
            sample_id: problem.sample_id.clone(),
            step,
            length,
            correct,
            text: None,
        });
    }
    Ok(out)
}

/// Draw the training rollout group for one sample at one step.
pub fn sample_rollouts(
    params: &PolicyParams,
    problem: &ProblemSpec,
    config: &SimConfig,
    step: u64,
) -> Result<Vec<RolloutRecord>> {
    draw_group(
        params,
        problem,
        config,
        step,
        config.rollouts_per_sample,
        config.exploration_scale,
        StreamPurpose::Rollout,
    )
}

/// Draw evaluation rollout groups (one per problem) at the reduced
/// exploration scale.
pub fn eval_groups(
    params: &PolicyParams,
    problems: &[ProblemSpec],
    config: &SimConfig,
    step: u64,
) -> Result<Vec<Vec<RolloutRecord>>> {
    if problems.is_empty() {
        return Err(Error::EmptyRollouts { context: "evaluate" });
    }
    problems
        .iter()
        .map(|p| {
            draw_group(
                params,
                p,
                config,
                step,
                config.eval_rollouts,
                config.eval_exploration_scale,
                StreamPurpose::Eval,
            )
        })
        .collect()
}

/// Aggregate evaluation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Mean correctness over every draw.
    pub accuracy: f64,
    pub mean_length: f64,
    pub min_length: u64,
    pub max_length: u64,
}

/// Reduce rollout groups to [`EvalMetrics`].
pub fn metrics_from_groups(groups: &[Vec<RolloutRecord>]) -> Result<EvalMetrics> {
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut length_sum = 0u128;
    let mut min_length = u64::MAX;
    let mut max_length = 0u64;
    for r in groups.iter().flatten() {
        total += 1;
        correct += usize::from(r.correct);
        length_sum += u128::from(r.length);
        min_length = min_length.min(r.length);
        max_length = max_length.max(r.length);
    }
    if total == 0 {
        return Err(Error::EmptyRollouts { context: "evaluate" });
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / total as f64,
        mean_length: length_sum as f64 / total as f64,
        min_length,
        max_length,
    })
}

/// Evaluate the policy over a problem set: `eval_rollouts` draws per problem
/// at the evaluation exploration scale.
pub fn evaluate(
    params: &PolicyParams,
    problems: &[ProblemSpec],
    config: &SimConfig,
    step: u64,
) -> Result<EvalMetrics> {
    metrics_from_groups(&eval_groups(params, problems, config, step)?)
}
