use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::archive::{Archive, InsertOutcome};
use super::cmaes::{default_population, CmaEs};

/// Solutions stored in an archive must expose their search-space coordinates
/// so emitters can restart from them.
pub trait Solution {
    fn params(&self) -> Vec<f64>;
}

impl Solution for Vec<f64> {
    fn params(&self) -> Vec<f64> {
        self.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitterConfig {
    pub count: usize,
    pub sigma0: f64,
    /// Population per emitter; `None` uses `4 + floor(3 ln n)`.
    pub batch_size: Option<usize>,
    /// Consecutive generations without an archive addition before a restart.
    pub restart_after: usize,
}

impl Default for EmitterConfig {
    fn default() -> Self {
        EmitterConfig {
            count: 5,
            sigma0: 0.2,
            batch_size: None,
            restart_after: 50,
        }
    }
}

/// Candidate returned by an evaluator.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluated<P> {
    pub payload: P,
    pub objective: f64,
    pub measures: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TellSummary {
    pub new_cells: usize,
    pub improved: usize,
    pub rejected: usize,
    pub restarted: bool,
}

/// CMA-ES emitter whose ranking rewards archive improvement: candidates
/// that opened a new cell come first (by objective), then those that
/// improved an elite (by gain), then everything else.
#[derive(Clone, Debug)]
pub struct ImprovementEmitter {
    es: CmaEs,
    x0: Vec<f64>,
    sigma0: f64,
    restart_after: usize,
    stale: usize,
    restarts: usize,
}

#[derive(Clone, Copy)]
enum Rank {
    // Lower variants sort first.
    New(f64),
    Improved(f64),
    Rejected(f64),
    Failed,
}

impl Rank {
    fn key(&self) -> (u8, f64) {
        match *self {
            Rank::New(o) => (0, -o),
            Rank::Improved(d) => (1, -d),
            Rank::Rejected(d) => (2, -d),
            Rank::Failed => (3, 0.0),
        }
    }
}

impl ImprovementEmitter {
    pub fn new(x0: Vec<f64>, config: &EmitterConfig, seed: u64) -> Self {
        let lambda = config.batch_size.unwrap_or_else(|| default_population(x0.len()));
        ImprovementEmitter {
            es: CmaEs::with_rng(x0.clone(), config.sigma0, lambda, ChaCha8Rng::seed_from_u64(seed)),
            x0,
            sigma0: config.sigma0,
            restart_after: config.restart_after,
            stale: 0,
            restarts: 0,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.es.params().lambda
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    pub fn stale_generations(&self) -> usize {
        self.stale
    }

    pub fn es(&self) -> &CmaEs {
        &self.es
    }

    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        self.es.ask()
    }

    /// Inserts the evaluated batch (in candidate order) and adapts the search
    /// distribution. `None` entries are failed evaluations.
    pub fn tell<P: Solution>(
        &mut self,
        archive: &mut Archive<P>,
        evaluated: Vec<Option<Evaluated<P>>>,
        iteration: u64,
    ) -> TellSummary {
        let mut summary = TellSummary::default();
        let ranks: Vec<Rank> = evaluated
            .into_iter()
            .map(|cand| {
                let Some(c) = cand else {
                    summary.rejected += 1;
                    return Rank::Failed;
                };
                let incumbent = archive.incumbent(&c.measures).map(|e| e.objective);
                match archive.insert(c.payload, c.objective, c.measures, iteration) {
                    InsertOutcome::NewCell => {
                        summary.new_cells += 1;
                        Rank::New(c.objective)
                    }
                    InsertOutcome::Improved(d) => {
                        summary.improved += 1;
                        Rank::Improved(d)
                    }
                    InsertOutcome::Rejected => {
                        summary.rejected += 1;
                        match incumbent {
                            Some(inc) if c.objective.is_finite() => Rank::Rejected(c.objective - inc),
                            _ => Rank::Failed,
                        }
                    }
                }
            })
            .collect();

        let mut order: Vec<usize> = (0..ranks.len()).collect();
        order.sort_by(|&a, &b| {
            let (ka, kb) = (ranks[a].key(), ranks[b].key());
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
        });

        if summary.new_cells + summary.improved == 0 {
            self.stale += 1;
        } else {
            self.stale = 0;
        }

        let update = self.es.tell_ranked(&order);
        let restart = match update {
            Err(e) => {
                log::warn!("emitter restarting after CMA-ES failure: {e}");
                true
            }
            Ok(()) => self.stale >= self.restart_after,
        };
        if restart {
            self.restart(archive);
            summary.restarted = true;
        }
        summary
    }

    /// Re-centres on a uniformly random elite (or the initial mean when the
    /// archive is empty) with the initial step size and identity covariance.
    pub fn restart<P: Solution>(&mut self, archive: &Archive<P>) {
        let mean = archive
            .sample(self.es.rng())
            .map(|e| e.payload.params())
            .unwrap_or_else(|| self.x0.clone());
        self.es.reset(mean, self.sigma0);
        self.stale = 0;
        self.restarts += 1;
    }
}
