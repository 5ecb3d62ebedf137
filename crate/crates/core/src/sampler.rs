//! Batch composition: the compressible/rest mixture.
//!
//! Each step the population is split by the mastery gate computed from that
//! step's fresh rollouts. Compression batches then reserve a fixed quota of
//! slots for gated ("compressible") samples — `round(rho * batch)` — and fill
//! the remainder uniformly from everything else, backfilling across pools when
//! one runs short. Nothing is ever filtered out by passrate: zero-passrate
//! samples stay in the rest pool and keep their seat at the table.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{SampleId, SampleState};
use crate::rng::{stream, StreamPurpose};

/// Mixture parameters for compression-phase batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureConfig {
    /// Fraction of each batch reserved for gated samples, in (0, 1).
    pub rho: f64,
    /// Samples per batch.
    pub batch_size: usize,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig { rho: 0.1, batch_size: 256 }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidConfig(format!("rho must be in (0, 1), got {}", self.rho)));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }

    /// Compressible-slot quota: `rho * batch_size`, rounded half-up.
    pub fn quota(&self) -> usize {
        (self.rho * self.batch_size as f64 + 0.5).floor() as usize
    }
}

/// Split states by mastery gate. The two sides are disjoint and together
/// preserve the input exactly.
pub fn partition(states: &[SampleState]) -> (Vec<&SampleState>, Vec<&SampleState>) {
    states.iter().partition(|s| s.gate_open())
}

/// Composition record for one drawn batch, kept for the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDraw {
    /// Sample ids in draw order: compressible draws first, then rest.
    pub ids: Vec<SampleId>,
    /// Quota of compressible slots implied by the mixture.
    pub quota_compressible: usize,
    /// Compressible samples actually drawn (may exceed the quota when the
    /// rest pool ran short and gated samples backfilled).
    pub drawn_compressible: usize,
    /// Slots the compressible pool could not fill from its quota.
    pub shortfall_compressible: usize,
    /// Slots the rest pool could not fill from its quota.
    pub shortfall_rest: usize,
}

/// Uniform draw of `take` items without replacement (partial Fisher-Yates).
fn draw_without_replacement<'a>(
    pool: &[&'a SampleState],
    take: usize,
    rng: &mut impl Rng,
) -> Vec<&'a SampleState> {
    debug_assert!(take <= pool.len());
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in 0..take {
        let j = i + rng.gen_range(0..idx.len() - i);
        idx.swap(i, j);
    }
    idx[..take].iter().map(|&i| pool[i]).collect()
}

/// Draw one mixture batch from the partitioned pools.
///
/// `rho * batch` slots (rounded half-up) come from the compressible pool, the
/// rest from the other pool, both uniformly without replacement. A pool too
/// small for its quota is drained and the deficit backfilled from the opposite
/// pool; the shortfall is reported in the returned [`BatchDraw`]. Fails only
/// when the two pools together cannot fill the batch.
///
/// Draw randomness comes from the `(seed, batch, step)` stream, so batch
/// composition is a pure function of the run seed and step.
pub fn draw_batch(
    compressible: &[&SampleState],
    rest: &[&SampleState],
    config: &MixtureConfig,
    seed: u64,
    step: u64,
) -> Result<BatchDraw> {
    config.validate()?;
    let total = compressible.len() + rest.len();
    if total < config.batch_size {
        return Err(Error::PoolExhausted { batch: config.batch_size, available: total });
    }
    let mut rng = stream(seed, StreamPurpose::Batch, step, "");

    let quota = config.quota();
    let take_c = quota.min(compressible.len());
    let shortfall_compressible = quota - take_c;
    let rest_quota = config.batch_size - quota + shortfall_compressible;
    let take_r = rest_quota.min(rest.len());
    let shortfall_rest = rest_quota - take_r;
    // Whatever the rest pool could not supply comes back out of the
    // compressible pool (total availability was already checked).
    let take_c = take_c + shortfall_rest;

    let mut ids = Vec::with_capacity(config.batch_size);
    ids.extend(
        draw_without_replacement(compressible, take_c, &mut rng)
            .into_iter()
            .map(|s| s.sample_id.clone()),
    );
    ids.extend(
        draw_without_replacement(rest, take_r, &mut rng).into_iter().map(|s| s.sample_id.clone()),
    );
    debug_assert_eq!(ids.len(), config.batch_size);

    Ok(BatchDraw {
        ids,
        quota_compressible: quota,
        drawn_compressible: take_c,
        shortfall_compressible,
        shortfall_rest,
    })
}

/// Uniform batch over the whole population, used by accuracy phases (no
/// mixture: every sample competes for every slot).
pub fn draw_uniform(
    states: &[&SampleState],
    batch_size: usize,
    seed: u64,
    step: u64,
) -> Result<Vec<SampleId>> {
    if states.len() < batch_size {
        return Err(Error::PoolExhausted { batch: batch_size, available: states.len() });
    }
    let mut rng = stream(seed, StreamPurpose::Batch, step, "");
    Ok(draw_without_replacement(states, batch_size, &mut rng)
        .into_iter()
        .map(|s| s.sample_id.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::RolloutRecord;
    use std::collections::BTreeSet;

    fn state(id: &str, outcomes: &[bool]) -> SampleState {
        let rollouts = outcomes
            .iter()
            .enumerate()
            .map(|(i, c)| RolloutRecord {
                sample_id: id.into(),
                step: 0,
                length: 100 + i as u64,
                correct: *c,
                text: None,
            })
            .collect();
        SampleState::from_rollouts(id.into(), rollouts).unwrap()
    }

    fn pool(prefix: &str, n: usize, gated: bool) -> Vec<SampleState> {
        (0..n)
            .map(|i| state(&format!("{prefix}{i:04}"), if gated { &[true, true] } else { &[true, false] }))
            .collect()
    }

    #[test]
    fn partition_splits_by_gate() {
        let states = vec![
            state("a", &[true, true]),
            state("b", &[true, false]),
            state("c", &[false, false]),
            state("d", &[true, true]),
        ];
        let (comp, rest) = partition(&states);
        let comp_ids: Vec<&str> = comp.iter().map(|s| s.sample_id.as_str()).collect();
        let rest_ids: Vec<&str> = rest.iter().map(|s| s.sample_id.as_str()).collect();
        assert_eq!(comp_ids, vec!["a", "d"]);
        assert_eq!(rest_ids, vec!["b", "c"]);
        assert_eq!(comp.len() + rest.len(), states.len());
    }

    #[test]
    fn quota_rounds_half_up() {
        let q = |rho: f64, b: usize| MixtureConfig { rho, batch_size: b }.quota();
        assert_eq!(q(0.1, 256), 26);
        assert_eq!(q(0.4, 256), 102);
        assert_eq!(q(0.9, 256), 230);
        assert_eq!(q(0.5, 2), 1);
        assert_eq!(q(0.4, 100), 40);
    }

    #[test]
    fn draw_respects_quota_when_pools_suffice() {
        let comp = pool("c", 50, true);
        let rest = pool("r", 300, false);
        let comp_refs: Vec<&SampleState> = comp.iter().collect();
        let rest_refs: Vec<&SampleState> = rest.iter().collect();
        let cfg = MixtureConfig { rho: 0.1, batch_size: 256 };
        let draw = draw_batch(&comp_refs, &rest_refs, &cfg, 1, 0).unwrap();
        assert_eq!(draw.ids.len(), 256);
        assert_eq!(draw.drawn_compressible, 26);
        assert_eq!(draw.shortfall_compressible, 0);
        assert_eq!(draw.shortfall_rest, 0);
        // No duplicates: draws are without replacement.
        let unique: BTreeSet<&str> = draw.ids.iter().map(|i| i.as_str()).collect();
        assert_eq!(unique.len(), 256);
    }

    #[test]
    fn short_compressible_pool_backfills_from_rest() {
        let comp = pool("c", 10, true);
        let rest = pool("r", 200, false);
        let comp_refs: Vec<&SampleState> = comp.iter().collect();
        let rest_refs: Vec<&SampleState> = rest.iter().collect();
        let cfg = MixtureConfig { rho: 0.4, batch_size: 100 };
        let draw = draw_batch(&comp_refs, &rest_refs, &cfg, 1, 0).unwrap();
        assert_eq!(draw.quota_compressible, 40);
        assert_eq!(draw.drawn_compressible, 10);
        assert_eq!(draw.shortfall_compressible, 30);
        let rest_drawn = draw.ids.iter().filter(|i| i.as_str().starts_with('r')).count();
        assert_eq!(rest_drawn, 90);
    }

    #[test]
    fn short_rest_pool_backfills_from_compressible() {
        let comp = pool("c", 90, true);
        let rest = pool("r", 5, false);
        let comp_refs: Vec<&SampleState> = comp.iter().collect();
        let rest_refs: Vec<&SampleState> = rest.iter().collect();
        let cfg = MixtureConfig { rho: 0.5, batch_size: 40 };
        let draw = draw_batch(&comp_refs, &rest_refs, &cfg, 1, 0).unwrap();
        assert_eq!(draw.ids.len(), 40);
        assert_eq!(draw.shortfall_rest, 15);
        assert_eq!(draw.drawn_compressible, 35);
    }

    #[test]
    fn exhausted_pools_error() {
        let comp = pool("c", 3, true);
        let rest = pool("r", 4, false);
        let comp_refs: Vec<&SampleState> = comp.iter().collect();
        let rest_refs: Vec<&SampleState> = rest.iter().collect();
        let cfg = MixtureConfig { rho: 0.5, batch_size: 8 };
        assert!(matches!(
            draw_batch(&comp_refs, &rest_refs, &cfg, 1, 0),
            Err(Error::PoolExhausted { batch: 8, available: 7 })
        ));
    }

    #[test]
    fn draws_are_deterministic_per_step_and_seed() {
        let comp = pool("c", 40, true);
        let rest = pool("r", 100, false);
        let comp_refs: Vec<&SampleState> = comp.iter().collect();
        let rest_refs: Vec<&SampleState> = rest.iter().collect();
        let cfg = MixtureConfig { rho: 0.25, batch_size: 64 };
        let a = draw_batch(&comp_refs, &rest_refs, &cfg, 9, 5).unwrap();
        let b = draw_batch(&comp_refs, &rest_refs, &cfg, 9, 5).unwrap();
        assert_eq!(a, b);
        let c = draw_batch(&comp_refs, &rest_refs, &cfg, 9, 6).unwrap();
        assert_ne!(a.ids, c.ids);
    }

    #[test]
    fn uniform_draw_covers_population_without_bias() {
        let all = pool("s", 64, false);
        let refs: Vec<&SampleState> = all.iter().collect();
        let mut counts = std::collections::BTreeMap::new();
        for step in 0..400 {
            for id in draw_uniform(&refs, 32, 1, step).unwrap() {
                *counts.entry(id).or_insert(0usize) += 1;
            }
        }
        // Every sample expected 200 appearances; allow a generous band.
        for (id, n) in counts {
            assert!((120..=280).contains(&n), "{id} drawn {n} times");
        }
    }
}
