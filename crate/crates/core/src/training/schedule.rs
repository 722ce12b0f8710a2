use serde::{Deserialize, Serialize};

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without a strict improvement of the monitored metric (higher is
/// better). The counter restarts after every decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's metric; returns whether the rate was decayed.
    pub fn observe(&mut self, metric: f64) -> bool {
        match self.best {
            Some(best) if metric <= best => self.stale += 1,
            _ => {
                self.best = Some(metric);
                self.stale = 0;
            }
        }
        if self.stale >= self.patience {
            self.lr *= self.factor;
            self.stale = 0;
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decays_once_after_patience_flat_epochs() {
        let mut s = PlateauScheduler::new(1e-3, 0.01, 3);
        let decays: Vec<bool> = [0.5, 0.5, 0.5, 0.5].iter().map(|&m| s.observe(m)).collect();
        assert_eq!(decays, [false, false, false, true]);
        assert!((s.lr() - 1e-5).abs() < 1e-20);
        assert!(!s.observe(0.5));
        assert!(!s.observe(0.6));
        assert!((s.lr() - 1e-5).abs() < 1e-20);
    }

    #[test]
    fn improvement_resets_counter() {
        let mut s = PlateauScheduler::new(1.0, 0.1, 2);
        for m in [0.1, 0.1, 0.2, 0.2, 0.3] {
            assert!(!s.observe(m));
        }
        assert_eq!(s.lr(), 1.0);
    }
}
