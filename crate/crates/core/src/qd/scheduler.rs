use serde::{Deserialize, Serialize};

use super::archive::Archive;
use super::emitter::{Evaluated, ImprovementEmitter, Solution};

/// Per-iteration aggregate written to run logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u64,
    pub evaluations: u64,
    pub archive_size: usize,
    pub qd_score: f64,
    pub best_objective: Option<f64>,
    pub new_cells: usize,
    pub improved: usize,
    pub restarts: usize,
}

/// Round-robin driver over a set of emitters sharing one archive.
///
/// Asks only depend on each emitter's own state, so all emitters are asked up
/// front and their candidates evaluated as one batch; tells then run in
/// emitter order, which is exactly the sequential ask/evaluate/tell cycle.
pub struct Scheduler<P> {
    pub emitters: Vec<ImprovementEmitter>,
    pub archive: Archive<P>,
    pub iteration: u64,
    pub evaluations: u64,
    /// Subtracted from each objective when computing the QD score.
    pub objective_floor: f64,
}

impl<P: Solution> Scheduler<P> {
    pub fn new(emitters: Vec<ImprovementEmitter>, archive: Archive<P>, objective_floor: f64) -> Self {
        assert!(!emitters.is_empty(), "scheduler needs at least one emitter");
        Scheduler {
            emitters,
            archive,
            iteration: 0,
            evaluations: 0,
            objective_floor,
        }
    }

    /// One iteration. `evaluate` receives every candidate of every emitter in
    /// order and must return one result per candidate; `None` marks a failed
    /// evaluation, which is recorded as a rejection.
    pub fn step<F>(&mut self, mut evaluate: F) -> IterationReport
    where
        F: FnMut(&[Vec<f64>]) -> Vec<Option<Evaluated<P>>>,
    {
        let batches: Vec<Vec<Vec<f64>>> = self.emitters.iter_mut().map(|e| e.ask()).collect();
        let flat: Vec<Vec<f64>> = batches.iter().flatten().cloned().collect();
        let mut results = evaluate(&flat);
        assert_eq!(results.len(), flat.len(), "evaluator must return one result per candidate");
        self.evaluations += flat.len() as u64;
        self.iteration += 1;

        let mut new_cells = 0;
        let mut improved = 0;
        let mut restarts = 0;
        for (emitter, batch) in self.emitters.iter_mut().zip(&batches) {
            let rest = results.split_off(batch.len());
            let mine = std::mem::replace(&mut results, rest);
            let summary = emitter.tell(&mut self.archive, mine, self.iteration);
            new_cells += summary.new_cells;
            improved += summary.improved;
            restarts += summary.restarted as usize;
        }
        IterationReport {
            iteration: self.iteration,
            evaluations: self.evaluations,
            archive_size: self.archive.len(),
            qd_score: self.archive.qd_score(self.objective_floor),
            best_objective: self.archive.best_objective(),
            new_cells,
            improved,
            restarts,
        }
    }
}
