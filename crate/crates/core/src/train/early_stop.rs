/// Stops once the monitored value has failed to improve on its best for
/// `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauStopper {
    patience: usize,
    maximize: bool,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
    seen: usize,
}

impl PlateauStopper {
    pub fn minimize(patience: usize) -> Self {
        Self::new(patience, false)
    }

    pub fn maximize(patience: usize) -> Self {
        Self::new(patience, true)
    }

    fn new(patience: usize, maximize: bool) -> Self {
        Self {
            patience,
            maximize,
            best: None,
            best_epoch: 0,
            stale: 0,
            seen: 0,
        }
    }

    /// Record one epoch's value. Returns whether it is a new best.
    pub fn observe(&mut self, value: f64) -> bool {
        let epoch = self.seen;
        self.seen += 1;
        let better = match self.best {
            None => true,
            Some(b) if self.maximize => value > b,
            Some(b) => value < b,
        };
        if better {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        better
    }

    /// Patience 0 never stops.
    pub fn should_stop(&self) -> bool {
        self.patience > 0 && self.stale >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Stops once the monitored value has stayed within `tolerance` of `center`
/// for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct BandStopper {
    center: f64,
    tolerance: f64,
    patience: usize,
    run: usize,
}

impl BandStopper {
    pub fn new(center: f64, tolerance: f64, patience: usize) -> Self {
        Self {
            center,
            tolerance,
            patience,
            run: 0,
        }
    }

    pub fn observe(&mut self, value: f64) {
        if (value - self.center).abs() <= self.tolerance {
            self.run += 1;
        } else {
            self.run = 0;
        }
    }

    pub fn should_stop(&self) -> bool {
        self.patience > 0 && self.run >= self.patience
    }
}
