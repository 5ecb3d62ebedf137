//! Policy representation and GRPO-family optimization.
//!
//! The synthetic policy is two numbers per sample plus a shared component:
//! a correctness logit `a` (success probability `sigmoid(a)`) and a mean
//! log-length `mu` (lengths follow a log-normal discretized onto the positive
//! integers). The shared offsets `(a_offset, mu_offset)` are added to every
//! sample's own parameters and absorb the batch-average gradient, which is how
//! behavior learned on trained samples transfers to samples never seen in a
//! batch — the stand-in for cross-sample generalization in a real model.
//!
//! Updates are one clipped-surrogate gradient-ascent step per batch with
//! asymmetric DAPO-style bounds. With a single inner epoch the importance
//! ratio is exactly 1 and the step reduces to score-function REINFORCE with a
//! group baseline; re-running the update on the same batch engages the clip.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::reward::{RolloutRecord, SampleId};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// How rewards inside one rollout group become advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// Mean-centered and divided by the population standard deviation;
    /// a zero-variance group yields all-zero advantages.
    Grpo,
    /// Mean-centered only (no std normalization).
    Drgrpo,
}

/// Asymmetric surrogate clip bounds: ratios are clamped to
/// `[1 - low, 1 + high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    pub low: f64,
    pub high: f64,
}

impl ClipBounds {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0 && low < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "clip low must be in (0, 1), got {low}"
            )));
        }
        if high < low {
            return Err(Error::InvalidConfig(format!(
                "clip high {high} must be >= clip low {low}"
            )));
        }
        Ok(ClipBounds { low, high })
    }
}

impl Default for ClipBounds {
    fn default() -> Self {
        ClipBounds { low: 0.2, high: 0.27 }
    }
}

/// Clamp an importance ratio into the trust band. This is the "effective
/// ratio" that bounds any single rollout's influence on the step.
pub fn clip_ratio(ratio: f64, bounds: ClipBounds) -> f64 {
    ratio.clamp(1.0 - bounds.low, 1.0 + bounds.high)
}

/// Per-sample policy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleParams {
    /// Correctness logit.
    pub a: f64,
    /// Mean log-length.
    pub mu: f64,
}

/// Full policy: per-sample parameters plus the shared component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    samples: BTreeMap<SampleId, SampleParams>,
    /// Shared correctness-logit offset added to every sample's `a`.
    pub a_offset: f64,
    /// Shared log-length offset added to every sample's `mu`.
    pub mu_offset: f64,
    /// Base log-length standard deviation, shared across samples and fixed
    /// during training (exploration knobs scale it at sampling time).
    pub sigma: f64,
}

impl PolicyParams {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
        }
        Ok(PolicyParams { samples: BTreeMap::new(), a_offset: 0.0, mu_offset: 0.0, sigma })
    }

    pub fn insert(&mut self, id: SampleId, params: SampleParams) {
        self.samples.insert(id, params);
    }

    pub fn get(&self, id: &str) -> Option<&SampleParams> {
        self.samples.get(id)
    }

    /// Effective `(a, mu)` for a sample: its own parameters plus the shared
    /// offsets.
    pub fn effective(&self, id: &str) -> Result<(f64, f64)> {
        let p = self
            .samples
            .get(id)
            .ok_or_else(|| Error::UnknownSample { id: id.to_owned() })?;
        Ok((p.a + self.a_offset, p.mu + self.mu_offset))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SampleId, &SampleParams)> {
        self.samples.iter()
    }

    /// Lowest permitted effective `mu` for a given sampling scale: keeps the
    /// underlying expected length `exp(mu + sigma_eff^2 / 2)` at or above 1.
    pub fn mu_floor(&self, exploration_scale: f64) -> f64 {
        let s = self.sigma * exploration_scale;
        -0.5 * s * s
    }

    fn clamp_to_floor(&mut self, exploration_scale: f64) {
        let floor = self.mu_floor(exploration_scale);
        let offset = self.mu_offset;
        for p in self.samples.values_mut() {
            if p.mu + offset < floor {
                p.mu = floor - offset;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))`, stable for large |x|.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// P(Z in [lo, hi]) for standard normal Z, with tail-safe evaluation.
fn normal_interval(lo: f64, hi: f64) -> f64 {
    debug_assert!(lo <= hi);
    if lo == f64::NEG_INFINITY {
        return 0.5 * libm::erfc(-hi / SQRT_2);
    }
    if lo >= 0.0 {
        0.5 * (libm::erfc(lo / SQRT_2) - libm::erfc(hi / SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (libm::erfc(-hi / SQRT_2) - libm::erfc(-lo / SQRT_2))
    } else {
        0.5 * (libm::erf(hi / SQRT_2) - libm::erf(lo / SQRT_2))
    }
}

/// Log-space bin edges for integer length `k`: bin 1 absorbs everything below
/// 1.5 so the masses over k = 1, 2, ... partition the whole distribution.
fn bin_edges(length: u64) -> (f64, f64) {
    let hi = (length as f64 + 0.5).ln();
    let lo = if length <= 1 { f64::NEG_INFINITY } else { (length as f64 - 0.5).ln() };
    (lo, hi)
}

/// Probability mass of integer length `k` under LogNormal(mu, sigma)
/// discretized by rounding: the normal CDF difference across the bin's
/// log-space edges.
pub fn length_mass(mu: f64, sigma: f64, length: u64) -> f64 {
    let (lo, hi) = bin_edges(length.max(1));
    normal_interval((lo - mu) / sigma, (hi - mu) / sigma)
}

/// Log-likelihood of one rollout under the policy: Bernoulli correctness plus
/// the discretized log-normal length mass, evaluated at the sample's effective
/// parameters with `sigma * exploration_scale` as the length spread.
///
/// May legitimately be `-inf` for events of zero mass; the gradient path
/// rejects those with a diagnostic instead.
pub fn rollout_log_prob(
    params: &PolicyParams,
    rollout: &RolloutRecord,
    exploration_scale: f64,
) -> Result<f64> {
    let (a, mu) = params.effective(rollout.sample_id.as_str())?;
    let sigma = params.sigma * exploration_scale;
    let lp_correct = if rollout.correct { log_sigmoid(a) } else { log_sigmoid(-a) };
    let mass = length_mass(mu, sigma, rollout.length);
    Ok(lp_correct + mass.ln())
}

/// Gradient of [`rollout_log_prob`] with respect to the effective `(a, mu)`.
///
/// Closed forms: `d/da = correct - sigmoid(a)` and
/// `d/dmu = (pdf(z_lo) - pdf(z_hi)) / (sigma * mass)`.
pub fn rollout_log_prob_grad(
    params: &PolicyParams,
    rollout: &RolloutRecord,
    exploration_scale: f64,
) -> Result<(f64, f64)> {
    let (a, mu) = params.effective(rollout.sample_id.as_str())?;
    let sigma = params.sigma * exploration_scale;
    let grad_a = f64::from(u8::from(rollout.correct)) - sigmoid(a);

    let (lo, hi) = bin_edges(rollout.length.max(1));
    let z_lo = (lo - mu) / sigma;
    let z_hi = (hi - mu) / sigma;
    let mass = normal_interval(z_lo, z_hi);
    if mass < 1e-300 {
        return Err(Error::NonFiniteGradient {
            id: rollout.sample_id.to_string(),
            detail: format!(
                "length {} has vanishing mass under mu={mu:.4}, sigma={sigma:.4}",
                rollout.length
            ),
        });
    }
    let pdf_lo = if z_lo == f64::NEG_INFINITY { 0.0 } else { normal_pdf(z_lo) };
    let grad_mu = (pdf_lo - normal_pdf(z_hi)) / (sigma * mass);
    if !grad_a.is_finite() || !grad_mu.is_finite() {
        return Err(Error::NonFiniteGradient {
            id: rollout.sample_id.to_string(),
            detail: format!("grad_a={grad_a}, grad_mu={grad_mu}"),
        });
    }
    Ok((grad_a, grad_mu))
}

/// Mean policy entropy across samples: Bernoulli entropy of the correctness
/// head plus the differential entropy of the log-normal length head
/// (`mu + 0.5 * ln(2*pi*e*sigma^2)`). Falls as correctness logits saturate
/// and as responses shorten, so it tracks how much sampling diversity the
/// policy has left.
pub fn entropy_proxy(params: &PolicyParams, exploration_scale: f64) -> f64 {
    if params.is_empty() {
        return 0.0;
    }
    let sigma = params.sigma * exploration_scale;
    let length_entropy_const = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
        + sigma.ln();
    let mut total = 0.0;
    for (_, p) in params.iter() {
        let prob = sigmoid(p.a + params.a_offset);
        let bernoulli = if prob <= 0.0 || prob >= 1.0 {
            0.0
        } else {
            -(prob * prob.ln() + (1.0 - prob) * (1.0 - prob).ln())
        };
        total += bernoulli + (p.mu + params.mu_offset) + length_entropy_const;
    }
    total / params.len() as f64
}

/// Rewards of one rollout group turned into advantages.
pub fn group_advantages(rewards: &[f64], mode: AdvantageMode) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall { got: rewards.len() });
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    match mode {
        AdvantageMode::Drgrpo => Ok(centered),
        AdvantageMode::Grpo => {
            let var = centered.iter().map(|c| c * c).sum::<f64>() / n;
            let std = var.sqrt();
            if std == 0.0 {
                // Uniform rewards carry no within-group signal.
                Ok(vec![0.0; rewards.len()])
            } else {
                Ok(centered.into_iter().map(|c| c / std).collect())
            }
        }
    }
}

/// One rollout's contribution to a policy update.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub sample_id: SampleId,
    pub rollout: RolloutRecord,
    pub advantage: f64,
    /// Log-likelihood of the rollout under the parameters that generated it.
    pub old_log_prob: f64,
}

/// Diagnostics from one update step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    /// L2 norm of the full accumulated gradient (all per-sample blocks plus
    /// the shared-offset block), before the learning rate is applied.
    pub grad_norm: f64,
    /// Fraction of rollouts whose surrogate picked the clipped branch and so
    /// contributed no gradient.
    pub clipped_fraction: f64,
    /// Number of distinct sample groups in the batch.
    pub groups: usize,
}

/// One clipped-surrogate gradient-ascent step over a batch.
///
/// Per rollout the surrogate is `min(r * A, clamp(r) * A)` with
/// `r = exp(new_lp - old_lp)`; gradient flows only through the unclipped
/// branch. Per-sample gradients are summed over the sample's rollouts and
/// applied to that sample's parameters; the shared offsets receive the mean
/// of the per-sample gradients. After the step every sample's effective `mu`
/// is clamped so its expected length stays at or above one token.
pub fn policy_update(
    params: &mut PolicyParams,
    batch: &[BatchItem],
    lr: f64,
    clip: ClipBounds,
    exploration_scale: f64,
) -> Result<UpdateStats> {
    let mut grads: BTreeMap<SampleId, (f64, f64)> = BTreeMap::new();
    let mut clipped = 0usize;

    for item in batch {
        if item.advantage == 0.0 {
            // A zero advantage contributes exactly nothing; skipping it also
            // means a record the policy has drifted away from (vanishing
            // likelihood) cannot fail the step it no longer influences.
            grads.entry(item.sample_id.clone()).or_insert((0.0, 0.0));
            continue;
        }
        let new_lp = rollout_log_prob(params, &item.rollout, exploration_scale)?;
        let (score_a, score_mu) = rollout_log_prob_grad(params, &item.rollout, exploration_scale)?;
        let ratio = (new_lp - item.old_log_prob).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFiniteGradient {
                id: item.sample_id.to_string(),
                detail: format!("importance ratio non-finite (new_lp={new_lp}, old_lp={})", item.old_log_prob),
            });
        }
        let unclipped = ratio * item.advantage;
        let clamped = clip_ratio(ratio, clip) * item.advantage;
        // min() selects the pessimistic branch; only the unclipped branch has
        // a nonzero derivative.
        let weight = if unclipped <= clamped {
            unclipped
        } else {
            clipped += 1;
            0.0
        };
        let entry = grads.entry(item.sample_id.clone()).or_insert((0.0, 0.0));
        entry.0 += weight * score_a;
        entry.1 += weight * score_mu;
    }

    let groups = grads.len();
    let mut shared = (0.0, 0.0);
    let mut norm_sq = 0.0;
    for (id, (ga, gmu)) in &grads {
        if !ga.is_finite() || !gmu.is_finite() {
            return Err(Error::NonFiniteGradient {
                id: id.to_string(),
                detail: format!("accumulated gradient ({ga}, {gmu})"),
            });
        }
        shared.0 += ga;
        shared.1 += gmu;
        norm_sq += ga * ga + gmu * gmu;
    }
    if groups > 0 {
        shared.0 /= groups as f64;
        shared.1 /= groups as f64;
    }
    norm_sq += shared.0 * shared.0 + shared.1 * shared.1;

    for (id, (ga, gmu)) in &grads {
        // Membership was already proven by rollout_log_prob above.
        let p = params.samples.get_mut(id).expect("batch sample vanished mid-update");
        p.a += lr * ga;
        p.mu += lr * gmu;
    }
    params.a_offset += lr * shared.0;
    params.mu_offset += lr * shared.1;
    params.clamp_to_floor(exploration_scale);

    let total = batch.len().max(1);
    Ok(UpdateStats {
        grad_norm: norm_sq.sqrt(),
        clipped_fraction: clipped as f64 / total as f64,
        groups,
    })
}
