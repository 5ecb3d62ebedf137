use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use cotgate_bench::{synthetic_params, synthetic_states};
use cotgate_core::curriculum::{effective_reward, StageKind};
use cotgate_core::optim::{group_advantages, rollout_log_prob_grad, AdvantageMode};
use cotgate_core::sampler::{draw_batch, partition, MixtureConfig};

fn bench_reward_shaping(c: &mut Criterion) {
    let mut group = c.benchmark_group("reward_shaping");
    for &n in &[8usize, 32] {
        let states = synthetic_states(256, n, 0.6, 7);
        group.bench_with_input(BenchmarkId::new("group_rewards", n), &states, |b, states| {
            b.iter(|| {
                let mut acc = 0.0;
                for s in states {
                    for r in &s.rollouts {
                        acc += effective_reward(StageKind::Compression, s, r).unwrap();
                    }
                }
                black_box(acc)
            })
        });
    }
    group.finish();
}

fn bench_advantages(c: &mut Criterion) {
    let mut group = c.benchmark_group("advantages");
    let rewards: Vec<f64> = (0..32).map(|i| f64::from(i % 3) * 0.5).collect();
    for mode in [AdvantageMode::Grpo, AdvantageMode::Drgrpo] {
        group.bench_with_input(
            BenchmarkId::new("normalize", format!("{mode:?}")),
            &rewards,
            |b, rewards| b.iter(|| black_box(group_advantages(rewards, mode).unwrap())),
        );
    }
    group.finish();
}

fn bench_batch_draw(c: &mut Criterion) {
    let states = synthetic_states(512, 8, 0.55, 11);
    let config = MixtureConfig { rho: 0.1, batch_size: 256 };
    c.bench_function("mixture_draw_512", |b| {
        b.iter(|| {
            let (compressible, rest) = partition(&states);
            black_box(draw_batch(&compressible, &rest, &config, 42, 3).unwrap())
        })
    });
}

fn bench_log_prob_grad(c: &mut Criterion) {
    let states = synthetic_states(64, 8, 0.5, 13);
    let params = synthetic_params(&states);
    c.bench_function("log_prob_grad_512", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for s in &states {
                for r in &s.rollouts {
                    let (ga, gmu) = rollout_log_prob_grad(&params, r, 1.0).unwrap();
                    acc += ga + gmu;
                }
            }
            black_box(acc)
        })
    });
}

criterion_group!(
    benches,
    bench_reward_shaping,
    bench_advantages,
    bench_batch_draw,
    bench_log_prob_grad
);
criterion_main!(benches);
