//! Validity penalties, measures, reliability, intra-generator diversity and
//! the combined generator objective.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    connected_regions, diameter, emptiness, nearest_enemy_distance, solve_sokoban, symmetry,
    zelda_path_length, PathMeasure, TileSet, DEFAULT_SOKOBAN_BUDGET,
};
use crate::error::{Error, Result};
use crate::grid::{
    Game, GameSpec, Level, EMPTY, PLAYER, SOKOBAN_CRATE, SOKOBAN_TARGET, WALL, ZELDA_DOOR,
    ZELDA_ENEMY, ZELDA_KEY,
};

/// Weight on the diversity bonus inside the reliability gate.
pub const DIVERSITY_WEIGHT: f64 = 10.0;

/// Upper bound of the Sokoban solution-length axis.
pub const SOKOBAN_MAX_SOLUTION: f64 = 200.0;

/// Names of the penalty terms for each game, in evaluation order.
pub fn rule_names(game: Game) -> &'static [&'static str] {
    match game {
        Game::Maze => &["regions"],
        Game::Zelda => &["regions", "players", "keys", "doors", "enemies", "enemy-distance"],
        Game::Sokoban => &["regions", "players", "crate-target-balance", "min-crates", "solvable"],
    }
}

/// Per-rule weights; every rule defaults to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityRules {
    pub game: Game,
    pub weights: BTreeMap<String, f64>,
    pub sokoban_budget: usize,
}

impl ValidityRules {
    pub fn new(game: Game) -> Self {
        ValidityRules {
            game,
            weights: rule_names(game).iter().map(|r| (r.to_string(), 1.0)).collect(),
            sokoban_budget: DEFAULT_SOKOBAN_BUDGET,
        }
    }

    /// Overrides rule weights, rejecting names the game does not define.
    pub fn with_weights(mut self, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        for (name, &w) in overrides {
            if !rule_names(self.game).contains(&name.as_str()) {
                return Err(Error::config(
                    format!("validity_weights.{name}"),
                    format!("{} has no rule named `{name}`", self.game),
                ));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::config(
                    format!("validity_weights.{name}"),
                    "weights must be finite and non-negative",
                ));
            }
            self.weights.insert(name.clone(), w);
        }
        Ok(self)
    }

    fn weight(&self, rule: &str) -> f64 {
        self.weights.get(rule).copied().unwrap_or(1.0)
    }
}

/// Validity and measures of one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelEval {
    /// Unweighted penalty per rule, in [`rule_names`] order.
    pub penalties: Vec<f64>,
    pub validity: f64,
    pub measures: Vec<f64>,
}

fn region_penalty(regions: usize) -> f64 {
    if regions == 0 {
        -1.0
    } else {
        -((regions - 1) as f64)
    }
}

fn count_penalty(count: usize) -> f64 {
    -(count.abs_diff(1) as f64)
}

/// Scores validity and measures for one level, sharing the expensive
/// analyses (Sokoban solve, path searches) between the two.
pub fn evaluate_level(level: &Level, rules: &ValidityRules) -> LevelEval {
    let (penalties, measures) = match rules.game {
        Game::Maze => {
            let open = TileSet::of(&[EMPTY]);
            let penalties = vec![region_penalty(connected_regions(level, open))];
            let measures = vec![symmetry(level), diameter(level, open).length as f64];
            (penalties, measures)
        }
        Game::Zelda => {
            let open = TileSet::all_but(WALL);
            let enemies = level.count(ZELDA_ENEMY);
            let enemy_distance = match nearest_enemy_distance(level) {
                PathMeasure::Steps(d) => -(4u32.saturating_sub(d) as f64),
                PathMeasure::Unreachable | PathMeasure::Undefined => 0.0,
            };
            let penalties = vec![
                region_penalty(connected_regions(level, open)),
                count_penalty(level.count(PLAYER)),
                count_penalty(level.count(ZELDA_KEY)),
                count_penalty(level.count(ZELDA_DOOR)),
                -(2usize.saturating_sub(enemies) as f64) - (enemies.saturating_sub(5) as f64),
                enemy_distance,
            ];
            let path = zelda_path_length(level).steps().unwrap_or(0) as f64;
            (penalties, vec![symmetry(level), path])
        }
        Game::Sokoban => {
            let open = TileSet::all_but(WALL);
            let crates = level.count(SOKOBAN_CRATE);
            let targets = level.count(SOKOBAN_TARGET);
            let solution = solve_sokoban(level, rules.sokoban_budget).ok();
            let solvable = match &solution {
                Some(s) if !s.solved() => -1.0,
                _ => 0.0,
            };
            let penalties = vec![
                region_penalty(connected_regions(level, open)),
                count_penalty(level.count(PLAYER)),
                -(crates.abs_diff(targets) as f64),
                -(1usize.saturating_sub(crates) as f64),
                solvable,
            ];
            let length = solution.map_or(0, |s| s.length()) as f64;
            (penalties, vec![emptiness(level), length])
        }
    };
    let validity = rule_names(rules.game)
        .iter()
        .zip(&penalties)
        .map(|(name, p)| rules.weight(name) * p)
        .sum::<f64>();
    LevelEval {
        penalties,
        // Normalize -0.0 so a valid level scores exactly 0.
        validity: validity + 0.0,
        measures,
    }
}

/// Weighted validity penalty of one level; 0 iff every rule is satisfied.
pub fn validity_penalty(level: &Level, rules: &ValidityRules) -> f64 {
    evaluate_level(level, rules).validity
}

/// Names of the two archive measures for a game.
pub fn measure_names(game: Game) -> [&'static str; 2] {
    match game {
        Game::Maze | Game::Zelda => ["symmetry", "path-length"],
        Game::Sokoban => ["emptiness", "solution-length"],
    }
}

/// Longest achievable maze diameter bound: a serpentine using every other row.
pub fn max_path_length(spec: &GameSpec) -> f64 {
    (spec.width.div_ceil(2) * spec.height + spec.height / 2) as f64
}

/// Archive bounds for each measure.
pub fn measure_bounds(spec: &GameSpec) -> Vec<(f64, f64)> {
    match spec.game {
        Game::Maze => vec![(0.0, 1.0), (0.0, max_path_length(spec))],
        // Player -> key -> door chains two legs.
        Game::Zelda => vec![(0.0, 1.0), (0.0, 2.0 * max_path_length(spec))],
        Game::Sokoban => vec![(0.0, 1.0), (0.0, SOKOBAN_MAX_SOLUTION)],
    }
}

/// Per-measure population statistics of a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureStats {
    /// `values[m][l]` is measure `m` of level `l`.
    pub values: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn measure_stats(values: Vec<Vec<f64>>) -> MeasureStats {
    let means = values.iter().map(|v| mean(v)).collect();
    let stds = values.iter().map(|v| std_dev(v)).collect();
    MeasureStats { values, means, stds }
}

/// Measures of every level in a batch with their means and std devs.
pub fn measures(levels: &[Level], rules: &ValidityRules) -> MeasureStats {
    assert!(!levels.is_empty(), "measures need at least one level");
    let evals: Vec<LevelEval> = levels.iter().map(|l| evaluate_level(l, rules)).collect();
    transpose_measures(&evals)
}

fn transpose_measures(evals: &[LevelEval]) -> MeasureStats {
    let m = evals[0].measures.len();
    measure_stats(
        (0..m)
            .map(|i| evals.iter().map(|e| e.measures[i]).collect())
            .collect(),
    )
}

/// Mean pairwise Hamming distance over ordered pairs (self-pairs included),
/// normalized by `h * w * |L|^2 - 1`.
pub fn diversity(levels: &[Level]) -> f64 {
    assert!(!levels.is_empty(), "diversity needs at least one level");
    let cells = levels[0].len();
    let n = levels.len();
    let mut total = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            total += 2 * levels[i].hamming(&levels[j]);
        }
    }
    total as f64 / ((cells * n * n) as f64 - 1.0)
}

/// Reliability-gated objective: `v + max(0, r + 10 d)`.
pub fn objective(validity: f64, reliability: f64, diversity: f64) -> f64 {
    validity + (reliability + DIVERSITY_WEIGHT * diversity).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub batch_size: usize,
    pub level_validity: Vec<f64>,
    pub validity: f64,
    pub measure_values: Vec<Vec<f64>>,
    pub measure_means: Vec<f64>,
    pub measure_stds: Vec<f64>,
    pub reliability: f64,
    pub diversity: f64,
    pub objective: f64,
}

impl BatchStats {
    pub fn from_levels(levels: &[Level], rules: &ValidityRules) -> Self {
        assert!(!levels.is_empty(), "batch must hold at least one level");
        let evals: Vec<LevelEval> = levels.iter().map(|l| evaluate_level(l, rules)).collect();
        let level_validity: Vec<f64> = evals.iter().map(|e| e.validity).collect();
        let validity = mean(&level_validity);
        let MeasureStats { values, means, stds } = transpose_measures(&evals);
        let reliability = -mean(&stds) + 0.0;
        let diversity = diversity(levels);
        BatchStats {
            batch_size: levels.len(),
            objective: objective(validity, reliability, diversity),
            level_validity,
            validity,
            measure_values: values,
            measure_means: means,
            measure_stds: stds,
            reliability,
            diversity,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.objective.is_finite() && self.measure_means.iter().all(|m| m.is_finite())
    }
}

/// Worst-case objective for a game: the sum of every rule's most negative
/// attainable penalty (unit weights scaled by the configured ones).
pub fn objective_floor(spec: &GameSpec, rules: &ValidityRules) -> f64 {
    let cells = spec.cells();
    // A checkerboard maximizes the number of 4-connected regions.
    let regions = (cells.div_ceil(2) - 1).max(1) as f64;
    let all_but_one = (cells - 1) as f64;
    let worst: Vec<f64> = match spec.game {
        Game::Maze => vec![regions],
        Game::Zelda => vec![
            regions,
            all_but_one,
            all_but_one,
            all_but_one,
            2f64.max(cells as f64 - 5.0),
            3.0,
        ],
        Game::Sokoban => vec![regions, all_but_one, cells as f64, 1.0, 1.0],
    };
    -rule_names(spec.game)
        .iter()
        .zip(worst)
        .map(|(name, w)| rules.weight(name) * w)
        .sum::<f64>()
}
