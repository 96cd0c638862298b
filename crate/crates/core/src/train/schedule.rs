use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant learning rate over 1-based epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    /// `(learning rate, epochs)` per stage, in order.
    pub stages: Vec<(f64, usize)>,
}

impl LrSchedule {
    /// 1e-3 for 25 epochs, 1e-4 for 25, then 1e-5 and 1e-6 for 15 each.
    pub fn staged() -> Self {
        LrSchedule {
            stages: vec![(1e-3, 25), (1e-4, 25), (1e-5, 15), (1e-6, 15)],
        }
    }

    pub fn constant(lr: f64, epochs: usize) -> Self {
        LrSchedule {
            stages: vec![(lr, epochs)],
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.1).sum()
    }

    /// Rate for 1-based `epoch`; epochs past the end keep the last rate.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut end = 0;
        for &(lr, n) in &self.stages {
            end += n;
            if epoch <= end {
                return lr;
            }
        }
        self.stages.last().map_or(0.0, |s| s.0)
    }

    /// Last epoch of each stage.
    pub fn boundaries(&self) -> Vec<usize> {
        self.stages
            .iter()
            .scan(0, |acc, s| {
                *acc += s.1;
                Some(*acc)
            })
            .collect()
    }

    /// First epoch of each stage.
    pub fn stage_starts(&self) -> Vec<usize> {
        let mut starts = vec![1];
        let b = self.boundaries();
        starts.extend(b[..b.len().saturating_sub(1)].iter().map(|e| e + 1));
        starts
    }

    /// Same rates with durations rescaled to `epochs` in total. Cumulative
    /// boundaries are rounded, so every stage keeps its share up to one
    /// epoch and the total is exact.
    pub fn scaled_to(&self, epochs: usize) -> Result<Self> {
        let total = self.total_epochs();
        if total == 0 || epochs < self.stages.len() {
            return Err(Error::invalid(format!(
                "cannot fit {} stages into {epochs} epochs",
                self.stages.len()
            )));
        }
        let mut out = Vec::with_capacity(self.stages.len());
        let mut prev = 0usize;
        let mut acc = 0usize;
        for (i, &(lr, n)) in self.stages.iter().enumerate() {
            acc += n;
            let remaining = self.stages.len() - i - 1;
            let end = ((acc * epochs) as f64 / total as f64).round() as usize;
            let end = end.clamp(prev + 1, epochs - remaining);
            out.push((lr, end - prev));
            prev = end;
        }
        Ok(LrSchedule { stages: out })
    }

    pub fn validate(&self, epochs: usize) -> Result<()> {
        if self.stages.iter().any(|s| s.1 == 0 || !(s.0 > 0.0)) {
            return Err(Error::invalid("schedule stages need a positive rate and length"));
        }
        if self.total_epochs() != epochs {
            return Err(Error::invalid(format!(
                "schedule covers {} epochs but training runs {epochs}",
                self.total_epochs()
            )));
        }
        Ok(())
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::staged()
    }
}
