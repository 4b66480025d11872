use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{compute_advantages, compute_returns, loss_and_grad, Adam, LossSample, LossStats, PpoConfig, PpoError};
use crate::env::{env_step, state_tensor, EnvError, EpisodeRecord, EpisodeState, RawAction, TaskSpec};
use crate::grid::{BodyMetrics, VoxelGrid};
use crate::nn::{forward, log_prob, sample, Architecture, Checkpoint, PolicyParams};
use crate::par;

/// One design step as seen by the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// The grid before the action; the state tensor is its one-hot view.
    pub grid: VoxelGrid,
    pub action: RawAction,
    pub log_prob: f32,
    pub value: f32,
    pub reward: f64,
    pub done: bool,
    pub episode: usize,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub index: usize,
    pub reward: f64,
    pub diverged: bool,
    pub metrics: Option<BodyMetrics>,
    pub efficiency: f64,
    pub actions: Vec<RawAction>,
    /// Critic estimate on the finished design.
    pub terminal_value: f64,
    /// Mean σ over all steps and action dimensions.
    pub sigma_mean: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub episodes: Vec<EpisodeSummary>,
}

/// Stream for episode `episode` of epoch `epoch`; independent of scheduling.
pub(crate) fn episode_rng(seed: u64, epoch: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((epoch << 32) | episode);
    rng
}

const INIT_STREAM: u64 = u64::MAX;
const SHUFFLE_EPISODE: u64 = 0xFFFF_FFFF;

/// Runs one design episode under `params`, sampling from `rng`.
pub fn collect_episode(
    params: &PolicyParams<f32>,
    task: &TaskSpec,
    rng: &mut ChaCha8Rng,
    index: usize,
) -> Result<(Vec<Transition>, EpisodeSummary), EnvError> {
    let mut state = EpisodeState::new(task);
    let mut transitions = Vec::with_capacity(task.steps);
    let mut sigma_sum = 0.0;
    let mut evaluation = None;
    for step in 0..task.steps {
        let out = forward(params, &state_tensor(&state.grid));
        let action = sample(&out, rng);
        sigma_sum += out.log_sigma.iter().map(|l| l.exp() as f64).sum::<f64>() / out.log_sigma.len() as f64;
        let grid = state.grid.clone();
        let result = env_step(&mut state, &action, task)?;
        transitions.push(Transition {
            grid,
            log_prob: log_prob(&out, &action.0),
            value: out.value,
            action,
            reward: result.reward,
            done: result.done,
            episode: index,
            step,
        });
        evaluation = result.evaluation;
    }
    let evaluation = evaluation.expect("the last step is scored");
    let terminal = forward(params, &state_tensor::<f32>(&state.grid));
    let summary = EpisodeSummary {
        index,
        reward: evaluation.reward,
        diverged: evaluation.diverged,
        metrics: evaluation.metrics,
        efficiency: state.action_efficiency(),
        actions: transitions.iter().map(|t| t.action.clone()).collect(),
        terminal_value: terminal.value as f64 * task.value_scale(),
        sigma_mean: sigma_sum / task.steps as f64,
    };
    Ok((transitions, summary))
}

/// Collects `episodes` complete episodes in parallel; results are ordered by
/// episode index.
pub fn collect_rollout(
    params: &PolicyParams<f32>,
    task: &TaskSpec,
    episodes: usize,
    seed: u64,
    epoch: u64,
) -> Result<Rollout, EnvError> {
    let results = par::map_indexed(episodes, |i| {
        let mut rng = episode_rng(seed, epoch, i as u64);
        collect_episode(params, task, &mut rng, i)
    });
    let mut rollout = Rollout::default();
    for r in results {
        let (t, s) = r?;
        rollout.transitions.extend(t);
        rollout.episodes.push(s);
    }
    Ok(rollout)
}

/// Column set of `metrics.csv`, one row per epoch.
pub const METRICS_HEADER: &str = "epoch,episodes,timesteps,reward_mean,reward_std,reward_min,reward_max,diverged,\
volume_mean,surface_ratio_mean,passive_ratio_mean,lcc_ratio_mean,substructures_mean,symmetry_mean,gzip_mean,\
efficiency_mean,policy_loss,value_loss,entropy,total_loss,clip_fraction,approx_kl,sigma_mean,\
terminal_value_mean,critic_mse";

/// Statistics of one epoch: the batch collected at its start and the
/// losses of the updates that followed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub episodes: usize,
    pub timesteps: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub reward_min: f64,
    pub reward_max: f64,
    pub diverged: usize,
    pub volume_mean: f64,
    pub surface_ratio_mean: f64,
    pub passive_ratio_mean: f64,
    pub lcc_ratio_mean: f64,
    pub substructures_mean: f64,
    pub symmetry_mean: f64,
    pub gzip_mean: f64,
    pub efficiency_mean: f64,
    pub loss: LossStats,
    pub sigma_mean: f64,
    pub terminal_value_mean: f64,
    /// Mean squared error of the terminal critic estimate against the reward.
    pub critic_mse: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EpochMetrics {
    pub fn from_rollout(epoch: usize, rollout: &Rollout, loss: LossStats) -> Self {
        let eps = &rollout.episodes;
        let rewards: Vec<f64> = eps.iter().map(|e| e.reward).collect();
        let reward_mean = mean(rewards.iter().copied());
        let reward_std = mean(rewards.iter().map(|r| (r - reward_mean).powi(2))).sqrt();
        let bodies: Vec<&BodyMetrics> = eps.iter().filter_map(|e| e.metrics.as_ref()).collect();
        let body_mean = |f: fn(&BodyMetrics) -> f64| mean(bodies.iter().map(|m| f(m)));
        Self {
            epoch,
            episodes: eps.len(),
            timesteps: rollout.transitions.len(),
            reward_mean,
            reward_std,
            reward_min: rewards.iter().copied().fold(f64::INFINITY, f64::min),
            reward_max: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            diverged: eps.iter().filter(|e| e.diverged).count(),
            volume_mean: mean(eps.iter().map(|e| e.metrics.as_ref().map_or(0.0, |m| m.volume as f64))),
            surface_ratio_mean: body_mean(|m| m.surface_ratio),
            passive_ratio_mean: body_mean(|m| m.passive_ratio),
            lcc_ratio_mean: body_mean(|m| m.lcc_ratio),
            substructures_mean: body_mean(|m| m.substructures as f64),
            symmetry_mean: body_mean(|m| m.symmetry),
            gzip_mean: body_mean(|m| m.gzip_score),
            efficiency_mean: mean(eps.iter().map(|e| e.efficiency)),
            loss,
            sigma_mean: mean(eps.iter().map(|e| e.sigma_mean)),
            terminal_value_mean: mean(eps.iter().map(|e| e.terminal_value)),
            critic_mse: mean(eps.iter().map(|e| (e.terminal_value - e.reward).powi(2))),
        }
    }

    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.episodes,
            self.timesteps,
            self.reward_mean,
            self.reward_std,
            self.reward_min,
            self.reward_max,
            self.diverged,
            self.volume_mean,
            self.surface_ratio_mean,
            self.passive_ratio_mean,
            self.lcc_ratio_mean,
            self.substructures_mean,
            self.symmetry_mean,
            self.gzip_mean,
            self.efficiency_mean,
            l.policy_loss,
            l.value_loss,
            l.entropy,
            l.total,
            l.clip_fraction,
            l.approx_kl,
            self.sigma_mean,
            self.terminal_value_mean,
            self.critic_mse,
        );
        s
    }
}

/// Where a training run writes its artifacts:
/// `metrics.csv`, `checkpoints/epoch_NNNN.vxc`, `checkpoints/final.vxc` and
/// `episodes/epoch_NNNN.vxe`.
#[derive(Clone, Debug)]
pub struct TrainSink {
    pub dir: PathBuf,
}

impl TrainSink {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, PpoError> {
        let dir = dir.into();
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        std::fs::create_dir_all(dir.join("episodes"))?;
        Ok(Self { dir })
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("epoch_{epoch:04}.vxc"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoints").join("final.vxc")
    }

    pub fn episodes_path(&self, epoch: usize) -> PathBuf {
        self.dir.join("episodes").join(format!("epoch_{epoch:04}.vxe"))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub initial: PolicyParams<f32>,
    pub params: PolicyParams<f32>,
    pub metrics: Vec<EpochMetrics>,
}

fn save_checkpoint(path: &Path, params: &PolicyParams<f32>, seed: u64, epoch: usize) -> Result<(), PpoError> {
    Checkpoint::new(params.clone()).with_meta("seed", seed).with_meta("epoch", epoch).save(path)?;
    Ok(())
}

/// Trains a fresh policy. `trial` only labels episode records.
///
/// Epoch `e` collects a batch with the parameters after `e` updates, then
/// runs `sgd_iters` shuffled passes of minibatch Adam steps over it.
pub fn train(
    task: &TaskSpec,
    cfg: &PpoConfig,
    seed: u64,
    trial: u64,
    sink: Option<&TrainSink>,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutput, PpoError> {
    task.validate()?;
    cfg.validate(task.steps)?;
    let arch = Architecture::new(task.resolution, task.materials as usize, cfg.hidden);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(INIT_STREAM);
    let mut params = PolicyParams::<f32>::xavier(arch, &mut init_rng);
    let initial = params.clone();
    let mut adam = Adam::new(params.len(), cfg);
    let episodes = cfg.episodes_per_batch(task.steps);

    let mut csv = match sink {
        Some(s) => {
            save_checkpoint(&s.checkpoint_path(0), &params, seed, 0)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(s.metrics_path())?);
            writeln!(f, "{METRICS_HEADER}")?;
            Some(f)
        }
        None => None,
    };

    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let rollout = collect_rollout(&params, task, episodes, seed, epoch as u64)?;
        if let Some(s) = sink.filter(|_| cfg.record_every > 0 && epoch % cfg.record_every == 0) {
            let records: Vec<EpisodeRecord> = rollout
                .episodes
                .iter()
                .map(|e| EpisodeRecord {
                    task: task.clone(),
                    trial,
                    epoch: epoch as u64,
                    episode: e.index as u64,
                    actions: e.actions.clone(),
                    reward: e.reward,
                    diverged: e.diverged,
                })
                .collect();
            EpisodeRecord::save_all(&records, s.episodes_path(epoch))?;
        }

        let mut returns = Vec::with_capacity(rollout.transitions.len());
        for ep in rollout.transitions.chunks(task.steps) {
            let rewards: Vec<f64> = ep.iter().map(|t| t.reward / task.value_scale()).collect();
            returns.extend(compute_returns(&rewards, cfg.gamma)?);
        }
        let values: Vec<f64> = rollout.transitions.iter().map(|t| t.value as f64).collect();
        let advantages = compute_advantages(&returns, &values, cfg.standardize_advantages)?;
        let samples: Vec<LossSample<f32>> = rollout
            .transitions
            .iter()
            .zip(returns.iter().zip(&advantages))
            .map(|(t, (&r, &a))| LossSample {
                state: state_tensor(&t.grid),
                action: t.action.0.clone(),
                old_log_prob: t.log_prob,
                advantage: a as f32,
                ret: r as f32,
            })
            .collect();

        let mut shuffle_rng = episode_rng(seed, epoch as u64, SHUFFLE_EPISODE);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut totals = [0.0f64; 6];
        let mut steps = 0usize;
        for _ in 0..cfg.sgd_iters {
            order.shuffle(&mut shuffle_rng);
            for mb in order.chunks(cfg.minibatch) {
                let batch: Vec<&LossSample<f32>> = mb.iter().map(|&i| &samples[i]).collect();
                let (stats, grad) = loss_and_grad(&params, &batch, cfg);
                if !stats.is_finite() || !grad.is_finite() {
                    return Err(abort(sink, &params, seed, epoch, "loss or gradient"));
                }
                let last_good = params.clone();
                adam.step(&mut params, &grad);
                if !params.is_finite() {
                    return Err(abort(sink, &last_good, seed, epoch, "parameters"));
                }
                let s = [stats.policy_loss, stats.value_loss, stats.entropy, stats.total, stats.clip_fraction, stats.approx_kl];
                totals.iter_mut().zip(s).for_each(|(t, v)| *t += v);
                steps += 1;
            }
        }
        let k = steps.max(1) as f64;
        let loss = LossStats {
            policy_loss: totals[0] / k,
            value_loss: totals[1] / k,
            entropy: totals[2] / k,
            total: totals[3] / k,
            clip_fraction: totals[4] / k,
            approx_kl: totals[5] / k,
        };
        let row = EpochMetrics::from_rollout(epoch, &rollout, loss);
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", row.csv_row())?;
            f.flush()?;
        }
        if let Some(s) = sink {
            if (epoch + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(&s.checkpoint_path(epoch + 1), &params, seed, epoch + 1)?;
            }
        }
        progress(&row);
        metrics.push(row);
    }
    if let Some(s) = sink {
        save_checkpoint(&s.final_checkpoint(), &params, seed, cfg.epochs)?;
    }
    Ok(TrainOutput { initial, params, metrics })
}

fn abort(sink: Option<&TrainSink>, good: &PolicyParams<f32>, seed: u64, epoch: usize, what: &str) -> PpoError {
    if let Some(s) = sink {
        let _ = save_checkpoint(&s.dir.join("checkpoints").join("last_good.vxc"), good, seed, epoch);
    }
    PpoError::NonFinite { what: what.to_string(), epoch }
}
