//! Random search with successive halving over a small discrete grid.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LearningRates, TrainConfig};
use crate::error::{ensure, Error, Result};

/// Candidate values per hyperparameter. An empty axis keeps the base
/// config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    /// Applied to every component.
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub weight_decay: Vec<f64>,
    pub w_fool: Vec<f64>,
}

impl SearchSpace {
    fn axes(&self) -> [usize; 4] {
        [
            self.learning_rate.len(),
            self.batch_size.len(),
            self.weight_decay.len(),
            self.w_fool.len(),
        ]
    }

    /// Number of distinct grid points.
    pub fn size(&self) -> usize {
        self.axes().iter().map(|&n| n.max(1)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.axes().iter().all(|&n| n == 0)
    }

    /// The `index`-th grid point applied to `base`, in mixed-radix order.
    pub fn point(&self, base: &TrainConfig, mut index: usize) -> TrainConfig {
        let mut c = base.clone();
        let mut pick = |n: usize| {
            let n = n.max(1);
            let i = index % n;
            index /= n;
            i
        };
        let [lr, bs, wd, wf] = self.axes();
        let (i_lr, i_bs, i_wd, i_wf) = (pick(lr), pick(bs), pick(wd), pick(wf));
        if lr > 0 {
            c.learning_rates = LearningRates::uniform(self.learning_rate[i_lr]);
        }
        if bs > 0 {
            c.batch_size = self.batch_size[i_bs];
        }
        if wd > 0 {
            c.optimizer.weight_decay = self.weight_decay[i_wd];
        }
        if wf > 0 {
            c.loss_weights.w_fool = self.w_fool[i_wf];
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub rung: usize,
    pub epochs: usize,
    pub score: f64,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_trial: usize,
    pub best: TrainConfig,
    pub trials: Vec<TrialRecord>,
    /// Trials alive at the start of each rung.
    pub rung_sizes: Vec<usize>,
}

/// Epoch budget per trial for a rung with `alive` trials when the total
/// budget is spread evenly across `rungs` rungs.
fn rung_epochs(total_budget: usize, rungs: usize, alive: usize) -> usize {
    (total_budget / (rungs * alive)).max(1)
}

/// Sample `n_configs` distinct points of `space` (fewer if the grid is
/// smaller), then repeatedly score the survivors with `evaluate(config,
/// epochs)` and keep the best `1/eta`. Higher scores win; ties go to the
/// lower trial index. `total_budget` is the number of training epochs
/// spread across all rungs.
pub fn successive_halving_search<F>(
    space: &SearchSpace,
    base: &TrainConfig,
    n_configs: usize,
    total_budget: usize,
    eta: usize,
    seed: u64,
    mut evaluate: F,
) -> Result<SearchResult>
where
    F: FnMut(&TrainConfig, usize) -> Result<f64>,
{
    ensure!(!space.is_empty(), "search space is empty");
    ensure!(eta >= 2, "eta must be at least 2, got {eta}");
    ensure!(n_configs >= 1, "need at least one configuration");
    let n = n_configs.min(space.size());
    ensure!(
        total_budget >= n,
        "budget of {total_budget} epochs is smaller than the {n} initial configurations"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<TrainConfig> = sample(&mut rng, space.size(), n)
        .into_iter()
        .map(|i| space.point(base, i))
        .collect();

    let mut rungs = 1;
    let mut m = n;
    while m > 1 {
        m = (m / eta).max(1);
        rungs += 1;
    }

    let mut alive: Vec<usize> = (0..n).collect();
    let mut trials = Vec::new();
    let mut rung_sizes = Vec::new();
    for rung in 0..rungs {
        rung_sizes.push(alive.len());
        let epochs = rung_epochs(total_budget, rungs, alive.len());
        let mut scored = Vec::with_capacity(alive.len());
        for &t in &alive {
            let score = evaluate(&configs[t], epochs)?;
            if !score.is_finite() {
                return Err(Error::Validation(format!("trial {t} produced a non-finite score")));
            }
            trials.push(TrialRecord {
                trial: t,
                rung,
                epochs,
                score,
                config: configs[t].clone(),
            });
            scored.push((t, score));
        }
        if alive.len() == 1 {
            break;
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let keep = (alive.len() / eta).max(1);
        alive = scored[..keep].iter().map(|&(t, _)| t).collect();
        alive.sort_unstable();
    }
    let best_trial = alive[0];
    Ok(SearchResult {
        best_trial,
        best: configs[best_trial].clone(),
        trials,
        rung_sizes,
    })
}
