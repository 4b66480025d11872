//! Experiment pipelines built on the trainer: policy comparisons, critic
//! evaluation, robustness sweeps and cross-trial aggregation.
//!
//! Every pipeline returns plain data plus a `to_csv` rendering. CSV floats use
//! Rust's shortest round-trip formatting, so reruns are byte-identical.

pub mod config;
pub mod stats;

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig};
pub use stats::{welch_t_test, Summary, WelchTest, Z99};

use crate::env::{evaluate_design, EnvError, EpisodeRecord, EpisodeState, RecordError, TaskSpec};
use crate::grid::{compute_metrics, extract_body, BodyMetrics, VoxelGrid};
use crate::nn::{forward, CheckpointError, PolicyParams};
use crate::par;
use crate::ppo::{collect_rollout, PpoError, Rollout};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Invalid(msg.into())
}

/// Epoch slot used for evaluation rollouts. Training epochs never reach it,
/// so evaluation episodes never share a random stream with training ones.
pub const EVAL_EPOCH: u64 = 0xFFFF_FF00;

/// Writes `manifest.txt` into `dir`: code version, command, flags and the
/// canonical config text. Nothing time- or host-dependent goes in.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    args: &[(&str, String)],
    config: Option<&ExperimentConfig>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = format!("voxelforge {}\ncommand = {command}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in args {
        let _ = writeln!(out, "{k} = {v}");
    }
    if let Some(c) = config {
        out.push_str("[config]\n");
        out.push_str(&c.to_text());
    }
    std::fs::write(dir.join("manifest.txt"), out)?;
    Ok(())
}

/// Samples `n` complete episodes from `params` on the evaluation stream of `seed`.
pub fn sample_policy(params: &PolicyParams<f32>, task: &TaskSpec, n: usize, seed: u64) -> Result<Rollout> {
    check_arch(params, task)?;
    Ok(collect_rollout(params, task, n, seed, EVAL_EPOCH)?)
}

fn check_arch(params: &PolicyParams<f32>, task: &TaskSpec) -> Result<()> {
    let a = &params.arch;
    if a.resolution != task.resolution || a.channels != task.materials as usize || a.action_dim != task.action_dim() {
        return Err(invalid(format!(
            "policy expects rho={} k={} action_dim={}, task has rho={} k={} action_dim={}",
            params.arch.resolution,
            params.arch.channels,
            params.arch.action_dim,
            task.resolution,
            task.materials,
            task.action_dim()
        )));
    }
    Ok(())
}

/// Terminal rewards and design statistics of one sampled policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySample {
    pub rewards: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub diverged: usize,
}

impl PolicySample {
    pub fn from_rollout(r: &Rollout) -> Self {
        Self {
            rewards: r.episodes.iter().map(|e| e.reward).collect(),
            efficiency: r.episodes.iter().map(|e| e.efficiency).collect(),
            diverged: r.episodes.iter().filter(|e| e.diverged).count(),
        }
    }

    pub fn reward(&self) -> Summary {
        Summary::of(&self.rewards)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub a: PolicySample,
    pub b: PolicySample,
    pub welch: WelchTest,
    pub alpha: f64,
}

impl Comparison {
    pub fn from_samples(a: PolicySample, b: PolicySample, alpha: f64) -> Result<Self> {
        if a.rewards.len() < 2 || b.rewards.len() < 2 {
            return Err(invalid("comparison needs at least two episodes per policy"));
        }
        let welch = welch_t_test(&a.rewards, &b.rewards);
        Ok(Self { a, b, welch, alpha })
    }

    /// `mean(a) − mean(b)`.
    pub fn mean_difference(&self) -> f64 {
        self.a.reward().mean - self.b.reward().mean
    }

    pub fn no_difference(&self) -> bool {
        self.welch.p.is_nan() || self.welch.p >= self.alpha
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,n,reward_mean,reward_sd,reward_ci99,efficiency_mean,efficiency_ci99,diverged\n");
        for (name, s) in [("a", &self.a), ("b", &self.b)] {
            let (r, e) = (s.reward(), Summary::of(&s.efficiency));
            let _ = writeln!(out, "{name},{},{},{},{},{},{},{}", r.n, r.mean, r.sd, r.ci99, e.mean, e.ci99, s.diverged);
        }
        let _ = writeln!(
            out,
            "# welch t={} df={} p={} alpha={} verdict={}",
            self.welch.t,
            self.welch.df,
            self.welch.p,
            self.alpha,
            if self.no_difference() { "no difference" } else { "different" }
        );
        out
    }
}

/// Samples `n` episodes from each policy with the same seed and tests the
/// terminal rewards with Welch's t-test.
pub fn compare_policies(
    a: &PolicyParams<f32>,
    b: &PolicyParams<f32>,
    task: &TaskSpec,
    n: usize,
    seed: u64,
    alpha: f64,
) -> Result<Comparison> {
    if n < 2 {
        return Err(invalid("comparison needs n >= 2"));
    }
    let sa = PolicySample::from_rollout(&sample_policy(a, task, n, seed)?);
    let sb = PolicySample::from_rollout(&sample_policy(b, task, n, seed)?);
    Comparison::from_samples(sa, sb, alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    In,
    Out,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::In => "in",
            Domain::Out => "out",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticPoint {
    pub trial: u64,
    pub epoch: u64,
    pub episode: u64,
    pub domain: Domain,
    pub predicted: f64,
    pub actual: f64,
}

impl CriticPoint {
    pub fn squared_error(&self) -> f64 {
        (self.predicted - self.actual).powi(2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticReport {
    pub trial: u64,
    pub points: Vec<CriticPoint>,
}

impl CriticReport {
    pub fn squared_errors(&self, domain: Domain) -> Vec<f64> {
        self.points.iter().filter(|p| p.domain == domain).map(CriticPoint::squared_error).collect()
    }

    pub fn mse(&self, domain: Domain) -> f64 {
        let e = self.squared_errors(domain);
        e.iter().sum::<f64>() / e.len() as f64
    }

    /// One row per (epoch, domain): mean prediction, mean realized reward, MSE.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,domain,n,predicted_mean,actual_mean,mse\n");
        let mut keys: Vec<(u64, u8)> = self.points.iter().map(|p| (p.epoch, p.domain as u8)).collect();
        keys.sort_unstable();
        keys.dedup();
        for (epoch, d) in keys {
            let group: Vec<&CriticPoint> =
                self.points.iter().filter(|p| p.epoch == epoch && p.domain as u8 == d).collect();
            let n = group.len() as f64;
            let pred = group.iter().map(|p| p.predicted).sum::<f64>() / n;
            let act = group.iter().map(|p| p.actual).sum::<f64>() / n;
            let mse = group.iter().map(|p| p.squared_error()).sum::<f64>() / n;
            let _ = writeln!(out, "{epoch},{},{},{pred},{act},{mse}", group[0].domain.name(), group.len());
        }
        out
    }
}

/// Critic predictions `V(s_T)` on the terminal design of every record.
///
/// Records from `trial` are in-domain; all others are out-of-domain.
pub fn critic_eval(params: &PolicyParams<f32>, trial: u64, records: &[EpisodeRecord]) -> Result<CriticReport> {
    for r in records {
        check_arch(params, &r.task)?;
    }
    let designs: Vec<std::result::Result<EpisodeState, RecordError>> = par::map_slice(records, |r| r.design());
    let mut points = Vec::with_capacity(records.len());
    for (r, d) in records.iter().zip(designs) {
        let grid = d?.grid;
        let predicted = forward(params, &crate::env::state_tensor::<f32>(&grid)).value as f64 * r.task.value_scale();
        points.push(CriticPoint {
            trial: r.trial,
            epoch: r.epoch,
            episode: r.episode,
            domain: if r.trial == trial { Domain::In } else { Domain::Out },
            predicted,
            actual: r.reward,
        });
    }
    Ok(CriticReport { trial, points })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    /// `rewards[e][t]`: episode `e` scored after its first `t` actions.
    pub rewards: Vec<Vec<f64>>,
    /// Rewards from the ordinary terminal evaluation of each episode.
    pub terminal: Vec<f64>,
}

impl RobustnessReport {
    pub fn steps(&self) -> usize {
        self.rewards.first().map_or(0, |r| r.len() - 1)
    }

    pub fn at(&self, t: usize) -> Summary {
        Summary::of(&self.rewards.iter().map(|r| r[t]).collect::<Vec<_>>())
    }

    /// Whether the full-prefix column reproduces the terminal evaluation bit for bit.
    pub fn terminal_matches(&self) -> bool {
        let t = self.steps();
        self.rewards.iter().zip(&self.terminal).all(|(r, &f)| r[t].to_bits() == f.to_bits())
    }

    /// First `t` from which the mean reward stays within `tolerance`
    /// (relative) of the mean at `t = T`.
    pub fn convergence_step(&self, tolerance: f64) -> usize {
        let steps = self.steps();
        let last = self.at(steps).mean;
        let band = tolerance * last.abs();
        let mut first = steps;
        for t in (0..=steps).rev() {
            if (self.at(t).mean - last).abs() > band {
                break;
            }
            first = t;
        }
        first
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,n,reward_mean,reward_sd,reward_ci99\n");
        for t in 0..=self.steps() {
            let s = self.at(t);
            let _ = writeln!(out, "{t},{},{},{},{}", s.n, s.mean, s.sd, s.ci99);
        }
        out
    }
}

/// Samples `n` episodes, then scores each design after every prefix
/// `t = 0..=T` of its actions.
pub fn robustness_sweep(params: &PolicyParams<f32>, task: &TaskSpec, n: usize, seed: u64) -> Result<RobustnessReport> {
    let rollout = sample_policy(params, task, n, seed)?;
    let steps = task.steps;
    // Rebuild every prefix grid sequentially; scoring is the expensive part.
    let mut grids = Vec::with_capacity(n * (steps + 1));
    for ep in &rollout.episodes {
        let mut state = EpisodeState::new(task);
        grids.push(state.grid.clone());
        for a in &ep.actions {
            state.design_step(a, task)?;
            grids.push(state.grid.clone());
        }
    }
    let scores = par::map_slice(&grids, |g| evaluate_design(g, task, None).reward);
    Ok(RobustnessReport {
        rewards: scores.chunks(steps + 1).map(<[f64]>::to_vec).collect(),
        terminal: rollout.episodes.iter().map(|e| e.reward).collect(),
    })
}

/// Per-epoch aggregate of several trials' `metrics.csv` files.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSummary {
    pub columns: Vec<String>,
    /// `(epoch, one summary per column)`, for epochs present in every trial.
    pub rows: Vec<(u64, Vec<Summary>)>,
}

impl TrialSummary {
    pub fn from_csv_texts(texts: &[String]) -> Result<Self> {
        if texts.is_empty() {
            return Err(invalid("no trials given"));
        }
        let mut header: Option<Vec<String>> = None;
        let mut tables: Vec<Vec<(u64, Vec<f64>)>> = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            let mut lines = text.lines();
            let h: Vec<String> =
                lines.next().ok_or_else(|| invalid(format!("trial {i}: empty metrics file")))?.split(',').map(String::from).collect();
            if h.first().map(String::as_str) != Some("epoch") {
                return Err(invalid(format!("trial {i}: first column must be epoch")));
            }
            match &header {
                Some(prev) if *prev != h => return Err(invalid(format!("trial {i}: column set differs"))),
                _ => header = Some(h.clone()),
            }
            let mut table = Vec::new();
            for (n, line) in lines.enumerate() {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != h.len() {
                    return Err(invalid(format!("trial {i} row {}: expected {} fields", n + 2, h.len())));
                }
                let epoch = fields[0].parse().map_err(|_| invalid(format!("trial {i} row {}: bad epoch", n + 2)))?;
                let values = fields[1..]
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|_| invalid(format!("trial {i} row {}: bad value {f:?}", n + 2))))
                    .collect::<Result<Vec<_>>>()?;
                table.push((epoch, values));
            }
            tables.push(table);
        }
        let columns: Vec<String> = header.unwrap_or_default().into_iter().skip(1).collect();
        let mut rows = Vec::new();
        for (epoch, _) in &tables[0] {
            let per_trial: Option<Vec<&Vec<f64>>> =
                tables.iter().map(|t| t.iter().find(|(e, _)| e == epoch).map(|(_, v)| v)).collect();
            let Some(per_trial) = per_trial else { continue };
            let summaries = (0..columns.len())
                .map(|c| Summary::of(&per_trial.iter().map(|v| v[c]).collect::<Vec<_>>()))
                .collect();
            rows.push((*epoch, summaries));
        }
        Ok(Self { columns, rows })
    }

    pub fn load(paths: &[impl AsRef<Path>]) -> Result<Self> {
        let texts = paths.iter().map(std::fs::read_to_string).collect::<std::io::Result<Vec<_>>>()?;
        Self::from_csv_texts(&texts)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// `epoch,trials,<col>_mean,<col>_ci99,...`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,trials");
        for c in &self.columns {
            let _ = write!(out, ",{c}_mean,{c}_ci99");
        }
        out.push('\n');
        for (epoch, s) in &self.rows {
            let _ = write!(out, "{epoch},{}", s.first().map_or(0, |x| x.n));
            for x in s {
                let _ = write!(out, ",{},{}", x.mean, x.ci99);
            }
            out.push('\n');
        }
        out
    }
}

pub const GRID_METRICS_HEADER: &str =
    "name,filled,volume,surface_ratio,passive_ratio,lcc_ratio,substructures,symmetry,gzip_score\n";

/// One `GRID_METRICS_HEADER` row; grids without a body get an empty tail.
pub fn grid_metrics_row(name: &str, grid: &VoxelGrid) -> String {
    let metrics: Option<BodyMetrics> = extract_body(grid).and_then(|b| compute_metrics(grid, &b).ok());
    match metrics {
        Some(m) => format!(
            "{name},{},{},{},{},{},{},{},{}\n",
            grid.filled_count(),
            m.volume,
            m.surface_ratio,
            m.passive_ratio,
            m.lcc_ratio,
            m.substructures,
            m.symmetry,
            m.gzip_score
        ),
        None => format!("{name},{},0,,,,,,\n", grid.filled_count()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use rand::SeedableRng;

    fn tiny_task() -> TaskSpec {
        TaskSpec::volume(4, 3)
    }

    fn tiny_params(seed: u64) -> PolicyParams<f32> {
        let t = tiny_task();
        let arch = Architecture::new(t.resolution, t.materials as usize, 8);
        PolicyParams::xavier(arch, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn identical_policies_show_no_difference() {
        let p = tiny_params(1);
        let c = compare_policies(&p, &p, &tiny_task(), 8, 5, 0.01).unwrap();
        assert_eq!(c.mean_difference(), 0.0);
        assert!(c.no_difference());
        assert!(compare_policies(&p, &p, &tiny_task(), 1, 5, 0.01).is_err());
    }

    #[test]
    fn comparison_is_symmetric() {
        let (p, q) = (tiny_params(1), tiny_params(2));
        let ab = compare_policies(&p, &q, &tiny_task(), 12, 3, 0.01).unwrap();
        let ba = compare_policies(&q, &p, &tiny_task(), 12, 3, 0.01).unwrap();
        assert_eq!(ab.mean_difference(), -ba.mean_difference());
        assert_eq!(ab.welch.p, ba.welch.p);
    }

    #[test]
    fn zero_critic_on_zero_rewards() {
        let mut p = tiny_params(1);
        p.fill_zero();
        let task = tiny_task();
        let rec = |trial| EpisodeRecord {
            task: task.clone(),
            trial,
            epoch: 0,
            episode: 0,
            actions: vec![crate::env::RawAction(vec![0.0, 0.0, 0.0, 5.0, -5.0]); 3],
            reward: 0.0,
            diverged: false,
        };
        let r = critic_eval(&p, 1, &[rec(1), rec(2)]).unwrap();
        assert_eq!(r.mse(Domain::In), 0.0);
        assert_eq!(r.squared_errors(Domain::Out).len(), 1);
        assert!(r.to_csv().starts_with("epoch,domain"));
    }

    #[test]
    fn critic_rejects_mismatched_grid() {
        let p = tiny_params(1);
        let rec = EpisodeRecord {
            task: TaskSpec::volume(5, 3),
            trial: 1,
            epoch: 0,
            episode: 0,
            actions: vec![],
            reward: 0.0,
            diverged: false,
        };
        assert!(critic_eval(&p, 1, &[rec]).is_err());
    }

    #[test]
    fn robustness_prefixes() {
        let r = robustness_sweep(&tiny_params(3), &tiny_task(), 4, 9).unwrap();
        assert_eq!(r.steps(), 3);
        assert!(r.terminal_matches());
        assert_eq!(r.at(0).mean, 0.0);
        assert!(r.convergence_step(0.0) <= 3);
        assert_eq!(r.to_csv().lines().count(), 5);
    }

    #[test]
    fn trial_summary_aggregates() {
        let a = "epoch,reward_mean\n0,1\n1,3\n2,9\n".to_string();
        let b = "epoch,reward_mean\n0,3\n1,5\n".to_string();
        let s = TrialSummary::from_csv_texts(&[a, b]).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert_eq!(s.rows[1].1[0].mean, 4.0);
        let ci = Z99 * 2f64.sqrt() / 2f64.sqrt();
        assert!((s.rows[0].1[0].ci99 - ci).abs() < 1e-12);
        assert_eq!(s.to_csv().lines().next(), Some("epoch,trials,reward_mean_mean,reward_mean_ci99"));
        assert!(TrialSummary::from_csv_texts(&["epoch,x\n0,1\n".into(), "epoch,y\n0,1\n".into()]).is_err());
    }
}
