use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Elite<P> {
    pub payload: P,
    pub objective: f64,
    pub measures: Vec<f64>,
    pub inserted_at: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InsertOutcome {
    NewCell,
    Improved(f64),
    Rejected,
}

impl InsertOutcome {
    pub fn added(&self) -> bool {
        !matches!(self, InsertOutcome::Rejected)
    }
}

/// Grid tessellation of measure space holding at most one elite per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive<P> {
    dims: Vec<usize>,
    bounds: Vec<(f64, f64)>,
    cells: BTreeMap<usize, Elite<P>>,
}

impl<P> Archive<P> {
    pub fn new(dims: Vec<usize>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if dims.is_empty() || dims.len() != bounds.len() {
            return Err(Error::Invalid(format!(
                "archive needs one bound per dimension ({} dims, {} bounds)",
                dims.len(),
                bounds.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Invalid("archive dimensions must be positive".into()));
        }
        if bounds.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::Invalid("archive bounds must be finite with lo < hi".into()));
        }
        Ok(Archive {
            dims,
            bounds,
            cells: BTreeMap::new(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn capacity(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Per-dimension cell index: `clamp(floor((m - lo) / (hi - lo) * dims), 0, dims - 1)`.
    pub fn cell_index(&self, measures: &[f64]) -> Vec<usize> {
        measures
            .iter()
            .zip(&self.bounds)
            .zip(&self.dims)
            .map(|((&m, &(lo, hi)), &d)| {
                let f = ((m - lo) / (hi - lo) * d as f64).floor();
                f.clamp(0.0, (d - 1) as f64) as usize
            })
            .collect()
    }

    /// Row-major flattening of a cell index (first dimension slowest).
    pub fn flatten(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (slot, &d) in out.iter_mut().zip(&self.dims).rev() {
            *slot = flat % d;
            flat /= d;
        }
        out
    }

    /// Places an elite in its cell when the cell is empty or the objective
    /// strictly beats the incumbent.
    pub fn insert(&mut self, payload: P, objective: f64, measures: Vec<f64>, iteration: u64) -> InsertOutcome {
        if measures.len() != self.dims.len() {
            log::warn!(
                "rejecting candidate with {} measures in a {}-d archive",
                measures.len(),
                self.dims.len()
            );
            return InsertOutcome::Rejected;
        }
        if !objective.is_finite() || measures.iter().any(|m| !m.is_finite()) {
            log::warn!("rejecting candidate with non-finite objective or measures");
            return InsertOutcome::Rejected;
        }
        let key = self.flatten(&self.cell_index(&measures));
        let elite = Elite {
            payload,
            objective,
            measures,
            inserted_at: iteration,
        };
        match self.cells.get_mut(&key) {
            None => {
                self.cells.insert(key, elite);
                InsertOutcome::NewCell
            }
            Some(incumbent) if objective > incumbent.objective => {
                let delta = objective - incumbent.objective;
                *incumbent = elite;
                InsertOutcome::Improved(delta)
            }
            Some(_) => InsertOutcome::Rejected,
        }
    }

    /// Objective of the elite occupying the cell `measures` map to, if any.
    pub fn incumbent(&self, measures: &[f64]) -> Option<&Elite<P>> {
        self.cells.get(&self.flatten(&self.cell_index(measures)))
    }

    pub fn get(&self, index: &[usize]) -> Option<&Elite<P>> {
        self.cells.get(&self.flatten(index))
    }

    /// Elites in flattened cell order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, &Elite<P>)> {
        self.cells.iter().map(|(&k, e)| (self.unflatten(k), e))
    }

    pub fn elites(&self) -> impl Iterator<Item = &Elite<P>> {
        self.cells.values()
    }

    /// Uniformly random elite.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Option<&Elite<P>> {
        if self.cells.is_empty() {
            return None;
        }
        let k = rng.gen_range(0..self.cells.len());
        self.cells.values().nth(k)
    }

    /// Sum over elites of `objective - floor`.
    pub fn qd_score(&self, floor: f64) -> f64 {
        self.cells.values().map(|e| e.objective - floor).sum()
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.cells.values().map(|e| e.objective).reduce(f64::max)
    }

    /// Occupied cells ordered by distance (in cell units) to `index`.
    pub fn nearest_occupied(&self, index: &[usize], limit: usize) -> Vec<Vec<usize>> {
        let mut cells: Vec<(usize, Vec<usize>)> = self
            .cells
            .keys()
            .map(|&k| {
                let c = self.unflatten(k);
                let d = c
                    .iter()
                    .zip(index)
                    .map(|(&a, &b)| a.abs_diff(b).pow(2))
                    .sum();
                (d, c)
            })
            .collect();
        cells.sort();
        cells.into_iter().take(limit).map(|(_, c)| c).collect()
    }

    pub fn map_payload<Q>(&self, f: impl Fn(&P) -> Q) -> Archive<Q> {
        Archive {
            dims: self.dims.clone(),
            bounds: self.bounds.clone(),
            cells: self
                .cells
                .iter()
                .map(|(&k, e)| {
                    (
                        k,
                        Elite {
                            payload: f(&e.payload),
                            objective: e.objective,
                            measures: e.measures.clone(),
                            inserted_at: e.inserted_at,
                        },
                    )
                })
                .collect(),
        }
    }
}
