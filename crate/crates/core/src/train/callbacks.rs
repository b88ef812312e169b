//! Checkpoint-on-improvement, plateau learning-rate reduction and early
//! stopping, driven one epoch at a time by the monitored loss.

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallbackConfig {
    pub initial_lr: f64,
    pub lr_reduce_factor: f64,
    pub lr_patience: usize,
    pub min_lr: f64,
    pub early_stop_patience: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochOutcome {
    /// Monitored loss beat the best so far; a checkpoint is due.
    pub improved: bool,
    /// New learning rate for the following epochs, if it changed.
    pub reduced_lr: Option<f64>,
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallbackState {
    config: CallbackConfig,
    lr: f64,
    best: f64,
    best_epoch: usize,
    lr_wait: usize,
    stop_wait: usize,
}

impl CallbackState {
    pub fn new(config: CallbackConfig) -> Self {
        CallbackState { config, lr: config.initial_lr, best: f64::INFINITY, best_epoch: 0, lr_wait: 0, stop_wait: 0 }
    }

    /// Learning rate for the next epoch.
    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    /// Records the monitored loss of 1-based `epoch`.
    pub fn observe(&mut self, epoch: usize, monitored: f64) -> Result<EpochOutcome, TrainError> {
        if !monitored.is_finite() {
            return Err(TrainError::Diverged { epoch, loss: monitored });
        }
        let mut outcome = EpochOutcome { improved: false, reduced_lr: None, stop: false };
        if monitored < self.best {
            self.best = monitored;
            self.best_epoch = epoch;
            self.lr_wait = 0;
            self.stop_wait = 0;
            outcome.improved = true;
            return Ok(outcome);
        }
        self.lr_wait += 1;
        self.stop_wait += 1;
        if self.lr_wait >= self.config.lr_patience {
            self.lr_wait = 0;
            let next = (self.lr * self.config.lr_reduce_factor).max(self.config.min_lr);
            if next < self.lr {
                self.lr = next;
                outcome.reduced_lr = Some(next);
            }
        }
        outcome.stop = self.stop_wait >= self.config.early_stop_patience;
        Ok(outcome)
    }
}

/// Replays `losses` through the state machine. Returns the epochs that
/// reduced the learning rate, the stop epoch (if early), and the best epoch.
pub fn simulate(config: CallbackConfig, losses: &[f64]) -> Result<(Vec<(usize, f64)>, Option<usize>, usize), TrainError> {
    let mut state = CallbackState::new(config);
    let mut reductions = Vec::new();
    for (i, &loss) in losses.iter().enumerate() {
        let epoch = i + 1;
        let outcome = state.observe(epoch, loss)?;
        if let Some(lr) = outcome.reduced_lr {
            reductions.push((epoch, lr));
        }
        if outcome.stop {
            return Ok((reductions, Some(epoch), state.best_epoch()));
        }
    }
    Ok((reductions, None, state.best_epoch()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> CallbackConfig {
        CallbackConfig { initial_lr: 1e-4, lr_reduce_factor: 0.5, lr_patience: 3, min_lr: 1e-6, early_stop_patience: 5 }
    }

    #[test]
    fn plateau_stops_after_patience() {
        let (_, stop, best) = simulate(config(), &[1.0, 0.8, 0.8, 0.8, 0.8, 0.8, 0.8]).unwrap();
        assert_eq!(stop, Some(7));
        assert_eq!(best, 2);
    }

    #[test]
    fn strictly_decreasing_never_reduces() {
        let losses: Vec<f64> = (0..50).map(|i| 1.0 / (i + 1) as f64).collect();
        let (reductions, stop, best) = simulate(config(), &losses).unwrap();
        assert!(reductions.is_empty());
        assert_eq!(stop, None);
        assert_eq!(best, 50);
    }

    #[test]
    fn single_halving_after_epoch_five() {
        let mut losses = vec![1.0, 0.9, 0.9, 0.9, 0.9, 0.85];
        losses.extend((1..=10).map(|i| 0.85 - 0.01 * i as f64));
        let (reductions, stop, _) = simulate(config(), &losses).unwrap();
        assert_eq!(reductions, vec![(5, 5e-5)]);
        assert_eq!(stop, None);
    }

    #[test]
    fn repeated_reductions_floor_at_min_lr() {
        let cfg = CallbackConfig { initial_lr: 4e-6, early_stop_patience: 100, ..config() };
        let losses = [vec![1.0], vec![1.0; 12]].concat();
        let (reductions, _, best) = simulate(cfg, &losses).unwrap();
        assert_eq!(reductions, vec![(4, 2e-6), (7, 1e-6)]);
        assert_eq!(best, 1);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut s = CallbackState::new(config());
        s.observe(1, 1.0).unwrap();
        assert!(matches!(s.observe(2, f64::NAN), Err(TrainError::Diverged { epoch: 2, .. })));
    }
}
