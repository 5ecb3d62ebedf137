//! Fixture builders shared by the benchmarks: deterministic synthetic
//! rollout groups and policies of configurable size, so every benchmark
//! measures the same workload on every machine.

use cotgate_core::optim::{PolicyParams, SampleParams};
use cotgate_core::reward::{RolloutRecord, SampleState};
use cotgate_core::rng::{stream, StreamPurpose};
use rand::Rng;

/// A population of rollout groups with roughly `gated_fraction` of the
/// samples fully correct (so their gates are open).
pub fn synthetic_states(
    samples: usize,
    rollouts_per_sample: usize,
    gated_fraction: f64,
    seed: u64,
) -> Vec<SampleState> {
    let mut out = Vec::with_capacity(samples);
    for i in 0..samples {
        let id = format!("bench{i:05}");
        let mut rng = stream(seed, StreamPurpose::Rollout, 0, &id);
        let gated = rng.gen::<f64>() < gated_fraction;
        let rollouts: Vec<RolloutRecord> = (0..rollouts_per_sample)
            .map(|step| RolloutRecord {
                sample_id: id.as_str().into(),
                step: step as u64,
                length: 200 + rng.gen_range(0..4000),
                correct: gated || rng.gen::<f64>() < 0.5,
                text: None,
            })
            .collect();
        out.push(SampleState::from_rollouts(id.as_str().into(), rollouts).expect("non-empty"));
    }
    out
}

/// A policy holding every sample id of `states`, with verbose parameters.
pub fn synthetic_params(states: &[SampleState]) -> PolicyParams {
    let mut params = PolicyParams::new(0.35).expect("positive sigma");
    for s in states {
        params.insert(s.sample_id.clone(), SampleParams { a: 2.0, mu: 7.5 });
    }
    params
}
