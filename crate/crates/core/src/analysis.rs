//! Level analysis kernels: flood fill, exact grid diameter, symmetry, Zelda
//! path metrics, emptiness, and a breadth-first Sokoban solver.
//!
//! All movement is 4-connected. Cells outside the grid are impassable.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::grid::{
    Level, Tile, EMPTY, PLAYER, SOKOBAN_CRATE, SOKOBAN_TARGET, WALL, ZELDA_DOOR, ZELDA_ENEMY,
    ZELDA_KEY,
};

/// Default node budget for [`solve_sokoban`].
pub const DEFAULT_SOKOBAN_BUDGET: usize = 200_000;

const UNREACHED: u32 = u32::MAX;

/// Set of tile indices, as a bit mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileSet(u32);

impl TileSet {
    pub fn of(tiles: &[Tile]) -> Self {
        TileSet(tiles.iter().fold(0, |m, &t| m | (1 << t)))
    }

    /// Every tile except `tile`.
    pub fn all_but(tile: Tile) -> Self {
        TileSet(!(1 << tile))
    }

    #[inline]
    pub fn contains(self, tile: Tile) -> bool {
        self.0 & (1 << tile) != 0
    }

    fn mask(self, level: &Level) -> Vec<bool> {
        level.cells.iter().map(|&t| self.contains(t)).collect()
    }
}

/// Row/column coordinate.
pub type Pos = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathResult {
    pub length: u32,
    /// `None` when the level has no traversable cell.
    pub endpoints: Option<(Pos, Pos)>,
}

/// Outcome of a path query with preconditions on tile counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathMeasure {
    Steps(u32),
    Unreachable,
    /// Tile counts do not satisfy the query's precondition.
    Undefined,
}

impl PathMeasure {
    pub fn steps(self) -> Option<u32> {
        match self {
            PathMeasure::Steps(s) => Some(s),
            _ => None,
        }
    }
}

#[inline]
fn neighbors(idx: usize, height: usize, width: usize) -> impl Iterator<Item = usize> {
    let (y, x) = (idx / width, idx % width);
    let up = (y > 0).then(|| idx - width);
    let down = (y + 1 < height).then(|| idx + width);
    let left = (x > 0).then(|| idx - 1);
    let right = (x + 1 < width).then(|| idx + 1);
    [up, down, left, right].into_iter().flatten()
}

/// BFS distances from `start` over `passable` cells. Unreached cells hold `u32::MAX`.
fn bfs_from(
    passable: &[bool],
    height: usize,
    width: usize,
    start: usize,
    dist: &mut Vec<u32>,
    queue: &mut VecDeque<usize>,
) {
    dist.clear();
    dist.resize(passable.len(), UNREACHED);
    queue.clear();
    dist[start] = 0;
    queue.push_back(start);
    while let Some(cur) = queue.pop_front() {
        let d = dist[cur] + 1;
        for nb in neighbors(cur, height, width) {
            if passable[nb] && dist[nb] == UNREACHED {
                dist[nb] = d;
                queue.push_back(nb);
            }
        }
    }
}

/// Component label per cell (`usize::MAX` for impassable), plus component count.
fn label_components(passable: &[bool], height: usize, width: usize) -> (Vec<usize>, usize) {
    let mut label = vec![usize::MAX; passable.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..passable.len() {
        if !passable[start] || label[start] != usize::MAX {
            continue;
        }
        label[start] = count;
        stack.push(start);
        while let Some(cur) = stack.pop() {
            for nb in neighbors(cur, height, width) {
                if passable[nb] && label[nb] == usize::MAX {
                    label[nb] = count;
                    stack.push(nb);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

/// Number of 4-connected components of traversable cells.
pub fn connected_regions(level: &Level, traversable: TileSet) -> usize {
    label_components(&traversable.mask(level), level.height, level.width).1
}

/// Exact diameter over traversable cells: the largest shortest-path length
/// between two cells of the same component, maximized over components.
///
/// Uses eccentricity bounding (lower/upper bounds tightened after each BFS)
/// so most components need only a handful of searches.
pub fn diameter(level: &Level, traversable: TileSet) -> PathResult {
    let (h, w) = (level.height, level.width);
    let passable = traversable.mask(level);
    let (label, count) = label_components(&passable, h, w);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, &l) in label.iter().enumerate() {
        if l != usize::MAX {
            members[l].push(i);
        }
    }

    let mut best: Option<(u32, usize, usize)> = None;
    let mut dist = Vec::new();
    let mut queue = VecDeque::new();
    let mut lower = vec![0u32; passable.len()];
    let mut upper = vec![u32::MAX; passable.len()];

    for comp in &members {
        // A component cannot beat the incumbent if it is too small.
        if let Some((len, _, _)) = best {
            if comp.len() as u32 <= len {
                continue;
            }
        }
        let (len, a, b) = component_diameter(
            comp, &passable, h, w, &mut dist, &mut queue, &mut lower, &mut upper,
        );
        if best.map_or(true, |(l, _, _)| len > l) {
            best = Some((len, a, b));
        }
    }

    match best {
        None => PathResult {
            length: 0,
            endpoints: None,
        },
        Some((length, a, b)) => PathResult {
            length,
            endpoints: Some(((a / w, a % w), (b / w, b % w))),
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn component_diameter(
    comp: &[usize],
    passable: &[bool],
    h: usize,
    w: usize,
    dist: &mut Vec<u32>,
    queue: &mut VecDeque<usize>,
    lower: &mut [u32],
    upper: &mut [u32],
) -> (u32, usize, usize) {
    if comp.len() == 1 {
        return (0, comp[0], comp[0]);
    }
    for &c in comp {
        lower[c] = 0;
        upper[c] = u32::MAX;
    }
    let mut candidates: Vec<usize> = comp.to_vec();
    let mut diam_lo = 0u32;
    let mut diam_hi = u32::MAX;
    let mut ends = (comp[0], comp[0]);
    let mut pick_high = true;

    while diam_lo < diam_hi && !candidates.is_empty() {
        let v = if pick_high {
            *candidates
                .iter()
                .max_by(|&&a, &&b| upper[a].cmp(&upper[b]).then(b.cmp(&a)))
                .unwrap()
        } else {
            *candidates
                .iter()
                .min_by(|&&a, &&b| lower[a].cmp(&lower[b]).then(a.cmp(&b)))
                .unwrap()
        };
        pick_high = !pick_high;

        bfs_from(passable, h, w, v, dist, queue);
        let (ecc, far) = comp
            .iter()
            .map(|&c| (dist[c], c))
            .fold((0, v), |acc, x| if x.0 > acc.0 { x } else { acc });
        if ecc > diam_lo {
            diam_lo = ecc;
            ends = (v.min(far), v.max(far));
        }
        for &c in comp {
            let d = dist[c];
            lower[c] = lower[c].max(d.max(ecc - d));
            upper[c] = upper[c].min(ecc + d);
        }
        diam_hi = comp.iter().map(|&c| upper[c]).max().unwrap();
        candidates.retain(|&c| {
            c != v && !(upper[c] <= diam_lo && lower[c] >= (diam_hi + 1) / 2)
        });
    }
    (diam_lo, ends.0, ends.1)
}

/// Mean of the horizontal and vertical mirror-match fractions.
pub fn symmetry(level: &Level) -> f64 {
    let (h, w) = (level.height, level.width);
    let mut matches = 0usize;
    for y in 0..h {
        for x in 0..w {
            let t = level.get(y, x);
            matches += (t == level.get(y, w - 1 - x)) as usize;
            matches += (t == level.get(h - 1 - y, x)) as usize;
        }
    }
    matches as f64 / (2 * h * w) as f64
}

/// Fraction of cells holding the Empty tile.
pub fn emptiness(level: &Level) -> f64 {
    level.count(EMPTY) as f64 / level.len() as f64
}

fn single(level: &Level, tile: Tile) -> Option<usize> {
    let mut found = None;
    for (i, &t) in level.cells.iter().enumerate() {
        if t == tile {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        }
    }
    found
}

fn zelda_passable(level: &Level) -> Vec<bool> {
    TileSet::all_but(WALL).mask(level)
}

/// Player -> Key -> Door path length over non-Wall cells.
pub fn zelda_path_length(level: &Level) -> PathMeasure {
    let (Some(player), Some(key), Some(door)) = (
        single(level, PLAYER),
        single(level, ZELDA_KEY),
        single(level, ZELDA_DOOR),
    ) else {
        return PathMeasure::Undefined;
    };
    let passable = zelda_passable(level);
    let mut dist = Vec::new();
    let mut queue = VecDeque::new();
    bfs_from(&passable, level.height, level.width, key, &mut dist, &mut queue);
    let (to_player, to_door) = (dist[player], dist[door]);
    if to_player == UNREACHED || to_door == UNREACHED {
        PathMeasure::Unreachable
    } else {
        PathMeasure::Steps(to_player + to_door)
    }
}

/// Shortest path from the Player to the closest Enemy over non-Wall cells.
pub fn nearest_enemy_distance(level: &Level) -> PathMeasure {
    let Some(player) = single(level, PLAYER) else {
        return PathMeasure::Undefined;
    };
    let enemies = level.positions(ZELDA_ENEMY);
    if enemies.is_empty() {
        return PathMeasure::Undefined;
    }
    let passable = zelda_passable(level);
    let mut dist = Vec::new();
    let mut queue = VecDeque::new();
    bfs_from(&passable, level.height, level.width, player, &mut dist, &mut queue);
    match enemies.iter().map(|&e| dist[e]).min().unwrap() {
        UNREACHED => PathMeasure::Unreachable,
        d => PathMeasure::Steps(d),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    /// Expansion order of the solver.
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    fn delta(self) -> (isize, isize) {
        match self {
            Move::Up => (-1, 0),
            Move::Down => (1, 0),
            Move::Left => (0, -1),
            Move::Right => (0, 1),
        }
    }

    pub fn glyph(self) -> char {
        match self {
            Move::Up => 'U',
            Move::Down => 'D',
            Move::Left => 'L',
            Move::Right => 'R',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Solved,
    /// The reachable state space was exhausted without reaching the goal.
    Unsolvable,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SokobanSolution {
    pub status: SolveStatus,
    pub moves: Vec<Move>,
    pub nodes_expanded: usize,
}

impl SokobanSolution {
    pub fn solved(&self) -> bool {
        self.status == SolveStatus::Solved
    }

    /// Move count of the solution (0 when unsolved).
    pub fn length(&self) -> usize {
        self.moves.len()
    }
}

/// The level violates the solver precondition: exactly one player and
/// an equal, positive number of crates and targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Undefined;

#[inline]
fn step(pos: usize, mv: Move, h: usize, w: usize) -> Option<usize> {
    let (dy, dx) = mv.delta();
    let y = (pos / w) as isize + dy;
    let x = (pos % w) as isize + dx;
    (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then(|| y as usize * w + x as usize)
}

/// Cells from which a lone crate can still be pushed onto some target.
fn live_squares(walls: &[bool], targets: &[usize], h: usize, w: usize) -> Vec<bool> {
    let mut live = vec![false; walls.len()];
    let mut queue: VecDeque<usize> = targets.iter().copied().collect();
    for &t in targets {
        live[t] = true;
    }
    while let Some(q) = queue.pop_front() {
        for mv in Move::ALL {
            // Crate pulled from q one step in `mv`: it came from `from`, the player stood at `behind`.
            let Some(from) = step(q, mv, h, w) else { continue };
            let Some(behind) = step(from, mv, h, w) else { continue };
            if !walls[from] && !walls[behind] && !live[from] {
                live[from] = true;
                queue.push_back(from);
            }
        }
    }
    live
}

/// Minimum-move Sokoban solution by breadth-first search over
/// (player, crate set) states, expanding moves in the order Up, Down, Left, Right.
///
/// Crates pushed onto squares from which no target is reachable are pruned;
/// such states can never reach the goal, so optimality is unaffected.
pub fn solve_sokoban(level: &Level, node_budget: usize) -> Result<SokobanSolution, Undefined> {
    let (h, w) = (level.height, level.width);
    let player = single(level, PLAYER).ok_or(Undefined)?;
    let mut crates: Vec<u16> = level
        .positions(SOKOBAN_CRATE)
        .into_iter()
        .map(|c| c as u16)
        .collect();
    let targets = level.positions(SOKOBAN_TARGET);
    if crates.is_empty() || crates.len() != targets.len() {
        return Err(Undefined);
    }
    crates.sort_unstable();

    let walls: Vec<bool> = level.cells.iter().map(|&t| t == WALL).collect();
    let mut is_target = vec![false; walls.len()];
    for &t in &targets {
        is_target[t] = true;
    }
    let live = live_squares(&walls, &targets, h, w);

    // State key: [player, sorted crates...].
    let mut start = Vec::with_capacity(crates.len() + 1);
    start.push(player as u16);
    start.extend_from_slice(&crates);
    let start: Box<[u16]> = start.into_boxed_slice();

    let mut states: Vec<(Box<[u16]>, usize, Option<Move>)> = vec![(start.clone(), usize::MAX, None)];
    let mut seen: HashMap<Box<[u16]>, ()> = HashMap::new();
    seen.insert(start, ());
    let mut frontier = VecDeque::from([0usize]);
    let mut expanded = 0usize;

    let finish = |states: &[(Box<[u16]>, usize, Option<Move>)], mut idx: usize| {
        let mut moves = Vec::new();
        while let Some(mv) = states[idx].2 {
            moves.push(mv);
            idx = states[idx].1;
        }
        moves.reverse();
        moves
    };

    while let Some(idx) = frontier.pop_front() {
        if expanded >= node_budget {
            return Ok(SokobanSolution {
                status: SolveStatus::BudgetExhausted,
                moves: Vec::new(),
                nodes_expanded: expanded,
            });
        }
        expanded += 1;
        let state = states[idx].0.clone();
        let pos = state[0] as usize;
        let boxes = &state[1..];
        for mv in Move::ALL {
            let Some(next) = step(pos, mv, h, w) else { continue };
            if walls[next] {
                continue;
            }
            let mut child = state.to_vec();
            child[0] = next as u16;
            if let Ok(k) = boxes.binary_search(&(next as u16)) {
                let Some(dest) = step(next, mv, h, w) else { continue };
                if walls[dest] || !live[dest] || boxes.binary_search(&(dest as u16)).is_ok() {
                    continue;
                }
                child[1 + k] = dest as u16;
                child[1..].sort_unstable();
            }
            let child: Box<[u16]> = child.into_boxed_slice();
            if seen.contains_key(&child) {
                continue;
            }
            seen.insert(child.clone(), ());
            let solved = child[1..].iter().all(|&c| is_target[c as usize]);
            states.push((child, idx, Some(mv)));
            let child_idx = states.len() - 1;
            if solved {
                return Ok(SokobanSolution {
                    status: SolveStatus::Solved,
                    moves: finish(&states, child_idx),
                    nodes_expanded: expanded,
                });
            }
            frontier.push_back(child_idx);
        }
    }
    Ok(SokobanSolution {
        status: SolveStatus::Unsolvable,
        moves: Vec::new(),
        nodes_expanded: expanded,
    })
}

/// Replays `moves` from `level`; true iff every move is legal and all crates
/// end on targets.
pub fn replay_sokoban(level: &Level, moves: &[Move]) -> bool {
    let (h, w) = (level.height, level.width);
    let Some(mut player) = single(level, PLAYER) else {
        return false;
    };
    let mut crate_at: Vec<bool> = level.cells.iter().map(|&t| t == SOKOBAN_CRATE).collect();
    for &mv in moves {
        let Some(next) = step(player, mv, h, w) else { return false };
        if level.cells[next] == WALL {
            return false;
        }
        if crate_at[next] {
            let Some(dest) = step(next, mv, h, w) else { return false };
            if level.cells[dest] == WALL || crate_at[dest] {
                return false;
            }
            crate_at[next] = false;
            crate_at[dest] = true;
        }
        player = next;
    }
    level
        .positions(SOKOBAN_TARGET)
        .iter()
        .all(|&t| crate_at[t])
}
