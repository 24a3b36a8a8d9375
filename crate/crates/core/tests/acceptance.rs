//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! The full-scale runs take a while; `NCAQD_ACCEPTANCE_ITERATIONS` shortens
//! them for smoke testing (criteria 5-8 then report against the shorter run).

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ncaqd::analysis::{diameter, solve_sokoban, symmetry, SolveStatus, TileSet};
use ncaqd::grid::{Game, Level, Tile, EMPTY, PLAYER, SOKOBAN_CRATE, SOKOBAN_TARGET, WALL};
use ncaqd::io::load_snapshot;
use ncaqd::nets::ArchKind;
use ncaqd::objective::{diversity, BatchStats, ValidityRules};
use ncaqd::qd::{default_population, Archive, CmaEs, EmitterConfig, Evaluated, ImprovementEmitter, Scheduler};
use ncaqd::trainer::{
    read_stats, snapshot_path, summarize_trials, train, RunConfig, RunReport, TrainOptions, STATS_FILE,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn random_level(rng: &mut ChaCha8Rng, h: usize, w: usize, tiles: &[Tile], weights: &[f64]) -> Level {
    let total: f64 = weights.iter().sum();
    let cells = (0..h * w)
        .map(|_| {
            let mut u = rng.gen::<f64>() * total;
            for (t, wt) in tiles.iter().zip(weights) {
                if u < *wt {
                    return *t;
                }
                u -= wt;
            }
            *tiles.last().unwrap()
        })
        .collect();
    Level { height: h, width: w, cells }
}

fn random_maze(rng: &mut ChaCha8Rng, max_side: usize) -> Level {
    let h = rng.gen_range(1..=max_side);
    let w = rng.gen_range(1..=max_side);
    let p = rng.gen_range(0.05..0.7);
    random_level(rng, h, w, &[EMPTY, WALL], &[1.0 - p, p])
}

// ---- straight-line oracles ----

fn bfs_from(open: &[bool], h: usize, w: usize, start: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; h * w];
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        let (y, x) = (i / w, i % w);
        let d = dist[i].unwrap();
        let mut visit = |j: usize| {
            if open[j] && dist[j].is_none() {
                dist[j] = Some(d + 1);
                queue.push_back(j);
            }
        };
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
    }
    dist
}

fn oracle_diameter(level: &Level) -> u32 {
    let open: Vec<bool> = level.cells.iter().map(|&t| t == EMPTY).collect();
    (0..level.len())
        .filter(|&i| open[i])
        .flat_map(|i| bfs_from(&open, level.height, level.width, i).into_iter().flatten())
        .max()
        .unwrap_or(0)
}

fn oracle_regions(level: &Level) -> usize {
    let open: Vec<bool> = level.cells.iter().map(|&t| t == EMPTY).collect();
    let mut seen = vec![false; level.len()];
    let mut regions = 0;
    for i in 0..level.len() {
        if open[i] && !seen[i] {
            regions += 1;
            for (j, d) in bfs_from(&open, level.height, level.width, i).iter().enumerate() {
                if d.is_some() {
                    seen[j] = true;
                }
            }
        }
    }
    regions
}

fn oracle_symmetry(level: &Level) -> f64 {
    let (h, w) = (level.height, level.width);
    let mut horizontal = 0;
    let mut vertical = 0;
    for y in 0..h {
        for x in 0..w {
            horizontal += (level.get(y, x) == level.get(y, w - 1 - x)) as usize;
            vertical += (level.get(y, x) == level.get(h - 1 - y, x)) as usize;
        }
    }
    (horizontal + vertical) as f64 / (2 * h * w) as f64
}

struct OracleStats {
    validity: f64,
    reliability: f64,
    diversity: f64,
    objective: f64,
    means: Vec<f64>,
}

fn oracle_maze_batch(levels: &[Level]) -> OracleStats {
    let n = levels.len() as f64;
    let mut validity = 0.0;
    for l in levels {
        let regions = oracle_regions(l);
        validity += if regions == 0 { -1.0 } else { -((regions - 1) as f64) };
    }
    validity /= n;

    let values: [Vec<f64>; 2] = [
        levels.iter().map(oracle_symmetry).collect(),
        levels.iter().map(|l| oracle_diameter(l) as f64).collect(),
    ];
    let mut means = Vec::new();
    let mut std_sum = 0.0;
    for v in &values {
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        means.push(m);
        std_sum += var.sqrt();
    }
    let reliability = -std_sum / 2.0;

    let mut hamming = 0usize;
    for a in levels {
        for b in levels {
            hamming += a.cells.iter().zip(&b.cells).filter(|(x, y)| x != y).count();
        }
    }
    let cells = levels[0].len() as f64;
    let diversity = hamming as f64 / (cells * n * n - 1.0);
    let gate = reliability + 10.0 * diversity;
    OracleStats {
        validity,
        reliability,
        diversity,
        objective: validity + if gate > 0.0 { gate } else { 0.0 },
        means,
    }
}

/// Plain BFS over (player, crates) with no pruning.
fn oracle_sokoban(level: &Level) -> Option<usize> {
    let (h, w) = (level.height, level.width);
    let walls: Vec<bool> = level.cells.iter().map(|&t| t == WALL).collect();
    let targets: BTreeSet<usize> = level.positions(SOKOBAN_TARGET).into_iter().collect();
    let player = level.positions(PLAYER)[0];
    let crates: BTreeSet<usize> = level.positions(SOKOBAN_CRATE).into_iter().collect();
    let step = |p: usize, d: usize| -> Option<usize> {
        let (y, x) = (p / w, p % w);
        match d {
            0 if y > 0 => Some(p - w),
            1 if y + 1 < h => Some(p + w),
            2 if x > 0 => Some(p - 1),
            3 if x + 1 < w => Some(p + 1),
            _ => None,
        }
    };
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([(player, crates.clone(), 0usize)]);
    seen.insert((player, crates));
    while let Some((p, crates, dist)) = queue.pop_front() {
        if crates == targets {
            return Some(dist);
        }
        for d in 0..4 {
            let Some(q) = step(p, d) else { continue };
            if walls[q] {
                continue;
            }
            let mut next = crates.clone();
            if crates.contains(&q) {
                let Some(r) = step(q, d) else { continue };
                if walls[r] || crates.contains(&r) {
                    continue;
                }
                next.remove(&q);
                next.insert(r);
            }
            if seen.insert((q, next.clone())) {
                queue.push_back((q, next, dist + 1));
            }
        }
    }
    None
}

fn random_sokoban(rng: &mut ChaCha8Rng) -> Level {
    let h = rng.gen_range(3..=6);
    let w = rng.gen_range(3..=6);
    let p_wall = rng.gen_range(0.0..0.3);
    let mut level = random_level(rng, h, w, &[EMPTY, WALL], &[1.0 - p_wall, p_wall]);
    let free: Vec<usize> = (0..level.len()).filter(|&i| level.cells[i] == EMPTY).collect();
    let crates = rng.gen_range(1..=2);
    if free.len() < 1 + 2 * crates {
        return level;
    }
    let picks = rand::seq::index::sample(rng, free.len(), 1 + 2 * crates);
    let mut picks = picks.iter().map(|k| free[k]);
    level.cells[picks.next().unwrap()] = PLAYER;
    for _ in 0..crates {
        level.cells[picks.next().unwrap()] = SOKOBAN_CRATE;
        level.cells[picks.next().unwrap()] = SOKOBAN_TARGET;
    }
    level
}

// ---- criteria ----

fn formula_fidelity() -> Outcome {
    let rules = ValidityRules::new(Game::Maze);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let h = rng.gen_range(1..=10);
        let w = rng.gen_range(1..=10);
        let n = rng.gen_range(1..=12);
        let p = rng.gen_range(0.05..0.7);
        let levels: Vec<Level> = (0..n).map(|_| random_level(&mut rng, h, w, &[EMPTY, WALL], &[1.0 - p, p])).collect();
        let got = BatchStats::from_levels(&levels, &rules);
        let want = oracle_maze_batch(&levels);
        for (a, b) in [
            (got.validity, want.validity),
            (got.reliability, want.reliability),
            (got.diversity, want.diversity),
            (got.objective, want.objective),
            (got.measure_means[0], want.means[0]),
            (got.measure_means[1], want.means[1]),
        ] {
            worst = worst.max(rel_err(a, b));
        }
    }
    let a = Level::from_rows(&[vec![0, 0], vec![0, 0]]).unwrap();
    let b = Level::from_rows(&[vec![0, 1], vec![0, 0]]).unwrap();
    let d = diversity(&[a, b]);
    let exact = d == 2.0 / 15.0;
    Outcome {
        pass: worst <= 1e-9 && exact,
        detail: format!("max relative error {worst:.2e} over 1000 batches; 2x2 pair diversity {d} (2/15 exact: {exact})"),
    }
}

fn analysis_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let open = TileSet::of(&[EMPTY]);
    let diameter_mismatch = (0..500)
        .filter(|_| {
            let l = random_maze(&mut rng, 8);
            diameter(&l, open).length != oracle_diameter(&l)
        })
        .count();

    let mut solvable = 0;
    let mut solver_mismatch = 0;
    let mut tried = 0;
    while solvable < 200 && tried < 100_000 {
        tried += 1;
        let l = random_sokoban(&mut rng);
        let Ok(solution) = solve_sokoban(&l, 1_000_000) else { continue };
        match oracle_sokoban(&l) {
            Some(len) => {
                solvable += 1;
                if solution.status != SolveStatus::Solved || solution.length() != len {
                    solver_mismatch += 1;
                }
            }
            None => {
                if solution.status != SolveStatus::Unsolvable {
                    solver_mismatch += 1;
                }
            }
        }
    }

    let games = [Game::Maze, Game::Zelda, Game::Sokoban];
    let symmetry_broken = (0..1000)
        .filter(|i| {
            let game = games[i % 3];
            let tiles: Vec<Tile> = (0..game.alphabet().count() as Tile).collect();
            let weights = vec![1.0; tiles.len()];
            let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
            let l = random_level(&mut rng, h, w, &tiles, &weights);
            let s = symmetry(&l);
            s != symmetry(&l.mirror_horizontal()) || s != symmetry(&l.mirror_vertical())
        })
        .count();

    Outcome {
        pass: diameter_mismatch == 0 && solvable >= 200 && solver_mismatch == 0 && symmetry_broken == 0,
        detail: format!(
            "diameter mismatches {diameter_mismatch}/500; solver mismatches {solver_mismatch} over {tried} instances \
             ({solvable} solvable); mirror-variant symmetry {symmetry_broken}/1000"
        ),
    }
}

fn cma_sphere() -> Outcome {
    let n = 20;
    let lambda = default_population(n);
    let mut evals_needed = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x0 = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut es = CmaEs::new(x0, 0.5, lambda, seed);
        let mut evals = 0;
        let mut reached = None;
        while evals + lambda <= 3000 {
            let xs = es.ask();
            let fs: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v * v).sum()).collect();
            evals += lambda;
            if fs.iter().any(|&f| f < 1e-10) {
                reached = Some(evals);
                break;
            }
            if es.tell_fitness(&fs).is_err() {
                break;
            }
        }
        evals_needed.push(reached);
    }
    let ok = evals_needed.iter().filter(|r| r.is_some()).count();
    let shown: Vec<String> = evals_needed
        .iter()
        .map(|r| r.map_or(">3000".to_string(), |e| e.to_string()))
        .collect();
    Outcome {
        pass: ok == 10,
        detail: format!(
            "{ok}/10 trials reached f < 1e-10 within 3000 evaluations (lambda {lambda}; evaluations {})",
            shown.join(" ")
        ),
    }
}

fn toy_qd() -> Outcome {
    let mut fills = Vec::new();
    for seed in 0..10u64 {
        let config = EmitterConfig::default();
        let emitters = (0..config.count)
            .map(|e| ImprovementEmitter::new(vec![0.0, 0.0], &config, seed * 100 + e as u64))
            .collect();
        let archive: Archive<Vec<f64>> = Archive::new(vec![20, 20], vec![(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let mut scheduler = Scheduler::new(emitters, archive, -2.0);
        let per_step: u64 = scheduler.emitters.iter().map(|e| e.batch_size() as u64).sum();
        while scheduler.evaluations + per_step <= 20_000 {
            scheduler.step(|xs| {
                xs.iter()
                    .map(|x| {
                        Some(Evaluated {
                            payload: x.clone(),
                            objective: -x.iter().map(|v| v * v).sum::<f64>(),
                            measures: x.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
                        })
                    })
                    .collect()
            });
        }
        fills.push(scheduler.archive.len() as f64 / 400.0);
    }
    let ok = fills.iter().filter(|&&f| f >= 0.9).count();
    let shown: Vec<String> = fills.iter().map(|f| format!("{:.0}%", f * 100.0)).collect();
    Outcome {
        pass: ok >= 9,
        detail: format!("{ok}/10 trials filled >= 90% of 400 cells ({})", shown.join(" ")),
    }
}

struct Run {
    report: RunReport,
    elapsed: Duration,
}

fn run(dir: &Path, arch: ArchKind, seed: u64, iterations: u64) -> Run {
    let config = RunConfig {
        arch,
        seed,
        iterations,
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    };
    let start = Instant::now();
    let report = train(&config, TrainOptions::default()).expect("training run");
    let run = Run {
        report,
        elapsed: start.elapsed(),
    };
    let e = run.report.evaluation.as_ref().expect("held-out evaluation");
    eprintln!(
        "  {arch} seed {seed}: {iterations} iterations in {:.0?}; archive {} (held-out {})",
        run.elapsed, run.report.training.archive_size, e.archive_size
    );
    run
}

fn scaled_run(dir: &Path, run: &Run, iterations: u64) -> Outcome {
    let stats = read_stats(&dir.join(STATS_FILE), u64::MAX).expect("stats");
    let rows = stats.len() as u64 == iterations;
    let monotone = stats
        .windows(2)
        .all(|w| w[1].0.archive_size >= w[0].0.archive_size && w[1].0.qd_score >= w[0].0.qd_score);
    let size = run.report.training.archive_size;
    let snapshot = load_snapshot(&snapshot_path(dir, iterations)).expect("final snapshot");
    let valid: Vec<Vec<usize>> = snapshot
        .archive
        .iter()
        .filter(|(_, e)| e.payload.stats.validity == 0.0)
        .map(|(c, _)| c)
        .collect();
    let bins: BTreeSet<usize> = valid.iter().map(|c| c[1]).collect();
    let fast = run.elapsed <= Duration::from_secs(30 * 60);
    Outcome {
        pass: rows && monotone && size >= 200 && valid.len() >= 10 && bins.len() >= 5 && fast,
        detail: format!(
            "{:.1} min; monotone size and QD: {monotone}; final archive {size}; {} zero-penalty elites in {} path-length bins",
            run.elapsed.as_secs_f64() / 60.0,
            valid.len(),
            bins.len()
        ),
    }
}

fn main() {
    let iterations: u64 = std::env::var("NCAQD_ACCEPTANCE_ITERATIONS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(2_000);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, outcome: Outcome| {
        println!(
            "criterion {n} [{}] {name}: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
        results.push((n, name, outcome));
    };

    let timed = |f: fn() -> Outcome| {
        let t = Instant::now();
        let mut o = f();
        o.detail = format!("{} ({:.1?})", o.detail, t.elapsed());
        o
    };
    report(1, "formula fidelity", timed(formula_fidelity));
    report(2, "analysis oracles", timed(analysis_oracles));
    report(3, "CMA-ES sphere", timed(cma_sphere));
    report(4, "CMA-ME toy benchmark", timed(toy_qd));

    let tmp = tempfile::tempdir().expect("temp dir");
    let nca_dirs: Vec<_> = (0..5).map(|s| tmp.path().join(format!("nca-{s}"))).collect();
    let nca: Vec<Run> = (0..5u64)
        .map(|s| run(&nca_dirs[s as usize], ArchKind::Nca, s, iterations))
        .collect();
    report(5, "scaled maze run", scaled_run(&nca_dirs[0], &nca[0], iterations));

    let cppn: Vec<Run> = (0..5u64)
        .map(|s| run(&tmp.path().join(format!("cppn-{s}")), ArchKind::GenSinCppn, s, iterations))
        .collect();
    let held_out = |r: &Run| r.report.evaluation.as_ref().map_or(0, |e| e.archive_size);
    let wins = nca.iter().zip(&cppn).filter(|(a, b)| held_out(a) > held_out(b)).count();
    let pairs: Vec<String> = nca
        .iter()
        .zip(&cppn)
        .map(|(a, b)| format!("{}>{}", held_out(a), held_out(b)))
        .collect();
    let budgets_match = nca
        .iter()
        .zip(&cppn)
        .all(|(a, b)| a.report.evaluations == b.report.evaluations);
    report(
        6,
        "NCA vs generative CPPN",
        Outcome {
            pass: wins >= 4 && budgets_match,
            detail: format!(
                "NCA held-out archive larger in {wins}/5 pairs ({}); equal evaluation budgets: {budgets_match}",
                pairs.join(" ")
            ),
        },
    );

    let replay_dir = tmp.path().join("nca-0-replay");
    let replay = run(&replay_dir, ArchKind::Nca, 0, iterations);
    let same = |p: &dyn Fn(&Path) -> std::path::PathBuf| fs::read(p(&nca_dirs[0])).ok() == fs::read(p(&replay_dir)).ok();
    let stats_same = same(&|d| d.join(STATS_FILE));
    let snapshot_same = same(&|d| snapshot_path(d, iterations));
    report(
        7,
        "determinism",
        Outcome {
            pass: stats_same && snapshot_same,
            detail: format!("stats.csv identical: {stats_same}; final snapshot identical: {snapshot_same}"),
        },
    );

    let all: Vec<&Run> = nca.iter().chain(std::iter::once(&replay)).collect();
    let shrink_ok = all.iter().filter(|r| held_out(r) <= r.report.training.archive_size).count();
    let sizes: Vec<String> = all
        .iter()
        .map(|r| format!("{}<={}", held_out(r), r.report.training.archive_size))
        .collect();
    report(
        8,
        "held-out evaluation",
        Outcome {
            pass: shrink_ok == all.len(),
            detail: format!("{shrink_ok}/{} runs ({})", all.len(), sizes.join(" ")),
        },
    );

    for (label, runs) in [("NCA", &nca), ("generative CPPN", &cppn)] {
        let reports: Vec<RunReport> = runs.iter().map(|r| r.report.clone()).collect();
        if let Ok(summary) = summarize_trials(&reports) {
            println!("\n{label} ({} trials)\n{}", summary.trials, summary.to_markdown());
        }
    }

    let failed: Vec<usize> = results.iter().filter(|(_, _, o)| !o.pass).map(|(n, _, _)| *n).collect();
    println!(
        "\n{}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
