use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use voxelforge::env::{evaluate_design, TaskSpec};
use voxelforge::nn::{Architecture, PolicyParams};
use voxelforge::par;
use voxelforge::physics::SimConfig;
use voxelforge::ppo::{collect_episode, collect_rollout, loss_and_grad, LossSample, PpoConfig};

fn policy(task: &TaskSpec, hidden: usize) -> PolicyParams<f32> {
    let arch = Architecture::new(task.resolution, task.materials as usize, hidden);
    PolicyParams::xavier(arch, &mut ChaCha8Rng::seed_from_u64(1))
}

fn rollouts(c: &mut Criterion) {
    let task = TaskSpec::volume(10, 50);
    let p = policy(&task, 128);
    let mut g = c.benchmark_group("volume_rollout_8_episodes");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| collect_rollout(&p, &task, 8, 3, 0).unwrap()));
    g.bench_function("sequential", |b| {
        b.iter(|| {
            par::map_indexed_sequential(8, |i| {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                rng.set_stream(i as u64);
                collect_episode(&p, &task, &mut rng, i).unwrap()
            })
        })
    });
    g.finish();
}

fn physics(c: &mut Criterion) {
    let sim = SimConfig { burn_in: 0.1, eval: 0.1, ..SimConfig::default() };
    let task = TaskSpec::locomotion(8, 10, sim);
    let p = policy(&task, 64);
    let designs: Vec<_> = collect_rollout(&p, &task, 8, 5, 0)
        .unwrap()
        .episodes
        .iter()
        .map(|e| {
            let mut s = voxelforge::env::EpisodeState::new(&task);
            for a in &e.actions {
                s.design_step(a, &task).unwrap();
            }
            s.grid
        })
        .collect();
    let mut g = c.benchmark_group("locomotion_eval_8_designs");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| par::map_slice(&designs, |d| evaluate_design(d, &task, None).reward)));
    g.bench_function("sequential", |b| {
        b.iter(|| designs.iter().map(|d| evaluate_design(d, &task, None).reward).collect::<Vec<_>>())
    });
    g.finish();
}

fn minibatch(c: &mut Criterion) {
    let task = TaskSpec::volume(10, 50);
    let p = policy(&task, 128);
    let cfg = PpoConfig::volume();
    let rollout = collect_rollout(&p, &task, 3, 4, 0).unwrap();
    let samples: Vec<LossSample<f32>> = rollout
        .transitions
        .iter()
        .take(128)
        .map(|t| LossSample {
            state: voxelforge::env::state_tensor(&t.grid),
            action: t.action.0.clone(),
            old_log_prob: t.log_prob,
            advantage: 1.0,
            ret: 10.0,
        })
        .collect();
    let mut g = c.benchmark_group("loss_and_grad_128");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| loss_and_grad(&p, &samples, &cfg)));
    g.bench_function("one_worker", |b| {
        b.iter_batched(|| (), |_| par::with_workers(1, || loss_and_grad(&p, &samples, &cfg)), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, rollouts, physics, minibatch);
criterion_main!(benches);
