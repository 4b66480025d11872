use std::f64::consts::PI;

use voxelforge::grid::{extract_body, Bundle, MaterialId, VoxelGrid};
use voxelforge::physics::{build_model, run_episode, MaterialTable, SimConfig, SimModel, SimState, Stepper};

const L: f64 = 0.01;

fn model_from(grid: &VoxelGrid, cfg: &SimConfig) -> SimModel {
    build_model(&extract_body(grid).unwrap(), &MaterialTable::standard(4), L, cfg).unwrap()
}

fn solid(n: i32, material: u8) -> VoxelGrid {
    let mut g = VoxelGrid::new(8, 4);
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                g.set([x, y, z], MaterialId(material)).unwrap();
            }
        }
    }
    g
}

fn run_for(model: &SimModel, cfg: &SimConfig, state: &mut SimState, seconds: f64) {
    let mut stepper = Stepper::new(model, cfg);
    for _ in 0..(seconds / cfg.dt).round() as usize {
        stepper.step(state).unwrap();
    }
}

#[test]
fn settled_cube_is_static() {
    let cfg = SimConfig::default();
    let m = model_from(&solid(3, 1), &cfg);
    let mut s = SimState::at_rest(&m, [0.0, 0.0]);
    run_for(&m, &cfg, &mut s, 1.0);
    let bottom: Vec<f64> = s.position.iter().filter(|p| p.z < L).map(|p| (0.5 * L - p.z).max(0.0)).collect();
    let penetration = bottom.iter().sum::<f64>() / bottom.len() as f64;
    assert!(s.max_speed() < 1e-3, "max speed {}", s.max_speed());
    assert!(penetration < 0.05 * L, "penetration {penetration}");
}

#[test]
fn passive_settling_loses_energy() {
    let cfg = SimConfig::default();
    let mut g = solid(3, 1);
    g.deposit(&Bundle::new([3, 0, 3], MaterialId(1)));
    let m = model_from(&g, &cfg);
    let mut s = SimState::at_rest(&m, [0.0, 0.0]);
    s.position.iter_mut().for_each(|p| p.z += 3.0 * L);
    run_for(&m, &cfg, &mut s, 0.05);
    assert!(s.kinetic_energy(&m) > 1e-6, "body should be falling");
    run_for(&m, &cfg, &mut s, 0.45);
    let early = s.kinetic_energy(&m);
    run_for(&m, &cfg, &mut s, 4.5);
    // Once at rest the energy sits at round-off level (~1e-31 J).
    let late = s.kinetic_energy(&m);
    assert!(late < early || late < 1e-20, "{late} !< {early}");
}

fn dominant_frequency(signal: &[f64], dt: f64) -> f64 {
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut best = (0.0, 0usize);
    for k in 1..n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, x) in signal.iter().enumerate() {
            let a = 2.0 * PI * (k * j) as f64 / n as f64;
            re += (x - mean) * a.cos();
            im -= (x - mean) * a.sin();
        }
        let power = re * re + im * im;
        if power > best.0 {
            best = (power, k);
        }
    }
    best.1 as f64 / (n as f64 * dt)
}

#[test]
fn antiphase_pair_oscillates_at_four_hertz() {
    let cfg = SimConfig::default();
    let mut g = VoxelGrid::new(4, 4);
    g.set([0, 0, 0], MaterialId(2)).unwrap();
    g.set([1, 0, 0], MaterialId(3)).unwrap();
    let m = model_from(&g, &cfg);
    let mut s = SimState::at_rest(&m, [0.0, 0.0]);
    let mut stepper = Stepper::new(&m, &cfg);
    let every = 20;
    let mut lengths = Vec::new();
    for i in 0..(2.0 / cfg.dt).round() as usize {
        if i % every == 0 {
            lengths.push((s.position[1] - s.position[0]).norm());
        }
        stepper.step(&mut s).unwrap();
    }
    let f = dominant_frequency(&lengths, cfg.dt * every as f64);
    assert!((f - 4.0).abs() <= 0.2, "dominant frequency {f}");
}

#[test]
fn free_space_conserves_momentum() {
    let cfg = SimConfig::free_space();
    let mut g = VoxelGrid::new(6, 4);
    let layout = [([0, 0, 0], 2), ([2, 0, 0], 3), ([0, 2, 0], 1), ([2, 2, 0], 2), ([1, 1, 2], 3)];
    for (p, m) in layout {
        g.deposit(&Bundle::new(p, MaterialId(m)));
    }
    let m = model_from(&g, &cfg);
    let mut s = SimState::at_rest(&m, [0.0, 0.0]);
    let p0 = s.linear_momentum(&m);
    run_for(&m, &cfg, &mut s, 1.0);
    let dp = (s.linear_momentum(&m) - p0).norm();
    assert!(dp < 1e-6, "|dp| = {dp}");
    assert!(s.max_speed() > 1e-4, "body should be moving");
}

#[test]
fn passive_body_barely_moves_and_runs_are_identical() {
    let cfg = SimConfig { burn_in: 0.3, eval: 0.3, ..SimConfig::default() };
    let mut g = solid(2, 1);
    g.deposit(&Bundle::new([2, 0, 0], MaterialId(1)));
    let m = model_from(&g, &cfg);
    let a = run_episode(&m, &cfg, None);
    let b = run_episode(&m, &cfg, None);
    assert!(!a.diverged());
    assert!(a.reward < 0.5, "reward {}", a.reward);
    assert_eq!(a.reward.to_bits(), b.reward.to_bits());
}
