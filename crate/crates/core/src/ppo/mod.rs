//! Proximal policy optimization over design episodes.
//!
//! Rewards are sparse (only the final design step is scored), returns are
//! plain discounted sums without GAE, and the critic is trained on those
//! returns without value clipping.

mod loss;
mod train;

pub use loss::{loss_and_grad, Adam, LossSample, LossStats};
pub use train::{
    collect_episode, collect_rollout, train, EpisodeSummary, EpochMetrics, Rollout, TrainOutput, TrainSink, Transition,
    METRICS_HEADER,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    Config(String),
    #[error("episode has a nonzero reward at step {step} before its last step")]
    IntermediateReward { step: usize },
    #[error("returns and values differ in length ({returns} vs {values})")]
    Length { returns: usize, values: usize },
    #[error("non-finite {what} at epoch {epoch}; last good checkpoint kept")]
    NonFinite { what: String, epoch: usize },
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Record(#[from] crate::env::RecordError),
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub learning_rate: f64,
    /// Timesteps collected per epoch; a multiple of the episode length.
    pub batch_size: usize,
    pub minibatch: usize,
    /// Passes over the batch per epoch.
    pub sgd_iters: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub clip: f64,
    pub vf_coef: f64,
    pub entropy_coef: f64,
    pub standardize_advantages: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Hidden width of both MLPs.
    pub hidden: usize,
    /// Checkpoint period in epochs; the initial and final parameters are
    /// always written.
    pub checkpoint_every: usize,
    /// Episode record period in epochs; 0 disables records.
    pub record_every: usize,
}

impl PpoConfig {
    pub fn volume() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 25600,
            minibatch: 128,
            sgd_iters: 50,
            epochs: 500,
            gamma: 0.99,
            clip: 0.3,
            vf_coef: 1.0,
            entropy_coef: 0.0,
            standardize_advantages: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            hidden: 128,
            checkpoint_every: 10,
            record_every: 1,
        }
    }

    pub fn locomotion() -> Self {
        Self { batch_size: 12800, sgd_iters: 10, epochs: 2500, hidden: 256, ..Self::volume() }
    }

    pub fn episodes_per_batch(&self, steps: usize) -> usize {
        self.batch_size / steps
    }

    pub fn validate(&self, steps: usize) -> Result<(), PpoError> {
        let positive = [self.learning_rate, self.gamma, self.clip, self.adam_beta1, self.adam_beta2, self.adam_eps];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(PpoError::Config("rates, gamma, clip and Adam constants must be positive".into()));
        }
        if self.vf_coef < 0.0 || self.entropy_coef < 0.0 {
            return Err(PpoError::Config("loss coefficients must be non-negative".into()));
        }
        if self.batch_size == 0 || self.minibatch == 0 || self.sgd_iters == 0 || self.hidden == 0 {
            return Err(PpoError::Config("batch, minibatch, sgd_iters and hidden must be positive".into()));
        }
        if steps == 0 || !self.batch_size.is_multiple_of(steps) {
            return Err(PpoError::Config(format!(
                "batch_size {} is not a multiple of the episode length {steps}",
                self.batch_size
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(PpoError::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

/// Discounted returns of one episode whose only reward is the last one:
/// `R_t = γ^(T−t)·r_T`, accumulated backwards one factor of `γ` at a time.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Result<Vec<f64>, PpoError> {
    let Some((&last, rest)) = rewards.split_last() else {
        return Ok(Vec::new());
    };
    if let Some(step) = rest.iter().position(|&r| r != 0.0) {
        return Err(PpoError::IntermediateReward { step });
    }
    let mut out = vec![0.0; rewards.len()];
    let mut running = last;
    for r in out.iter_mut().rev() {
        *r = running;
        running *= gamma;
    }
    Ok(out)
}

/// `A = R − V`, optionally standardized to zero mean and unit variance.
pub fn compute_advantages(returns: &[f64], values: &[f64], standardize: bool) -> Result<Vec<f64>, PpoError> {
    if returns.len() != values.len() {
        return Err(PpoError::Length { returns: returns.len(), values: values.len() });
    }
    let mut adv: Vec<f64> = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    if standardize && !adv.is_empty() {
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
        adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }
    Ok(adv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_step_returns() {
        let r = compute_returns(&[0.0, 0.0, 1.0], 0.99).unwrap();
        assert_eq!(r, vec![0.99 * 0.99, 0.99, 1.0]);
        assert!((r[0] - 0.9801).abs() < 1e-15);
        assert_eq!(compute_returns(&[0.0; 4], 0.99).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn intermediate_reward_rejected() {
        assert!(matches!(
            compute_returns(&[0.0, 2.0, 1.0], 0.99),
            Err(PpoError::IntermediateReward { step: 1 })
        ));
    }

    #[test]
    fn advantages() {
        let r = [1.0, 2.0, 3.0];
        assert_eq!(compute_advantages(&r, &r, false).unwrap(), vec![0.0; 3]);
        let a = compute_advantages(&[5.0, 1.0], &[0.0, 0.0], true).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-12 && (a[1] + 1.0).abs() < 1e-12);
        assert!(compute_advantages(&r, &r[..2], true).is_err());
        // Constant advantages stay finite under the std guard.
        assert_eq!(compute_advantages(&[1.0, 1.0], &[0.0, 0.0], true).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::volume().validate(100).is_ok());
        assert!(PpoConfig::locomotion().validate(100).is_ok());
        assert!(PpoConfig { batch_size: 1024, ..PpoConfig::volume() }.validate(50).is_err());
        assert!(PpoConfig { minibatch: 0, ..PpoConfig::volume() }.validate(100).is_err());
    }
}
