//! Experiment driver: run configuration, latent seed streams, batch
//! evaluation, the training loop and held-out evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Game, GameSpec, LatentKind, LatentSeed, Level};
use crate::io::{load_snapshot, save_snapshot, Candidate, SnapshotHeader, ARCHIVE_VERSION};
use crate::nets::{ArchKind, ArchitectureDescriptor, Generator, Genome};
use crate::objective::{
    evaluate_level, measure_bounds, measure_names, objective_floor, BatchStats, LevelEval, ValidityRules,
};
use crate::qd::{Archive, EmitterConfig, Evaluated, ImprovementEmitter, IterationReport, Scheduler};

/// Environment variable overriding the worker-pool size.
pub const WORKERS_ENV: &str = "NCAQD_WORKERS";

pub const CONFIG_FILE: &str = "config.toml";
pub const STATS_FILE: &str = "stats.csv";
pub const REPORT_FILE: &str = "report.json";
pub const EVALUATIONS_FILE: &str = "evaluations.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";

const STATS_HEADER: &str =
    "iteration,evaluations,archive_size,qd_score,best_objective,mean_diversity,new_cells,improved,restarts";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentMode {
    /// One seed batch drawn at the start and reused for every evaluation.
    Fixed,
    /// A fresh seed batch every iteration.
    Resample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchiveConfig {
    /// Cells per measure axis.
    pub resolution: Vec<usize>,
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        ArchiveConfig { resolution: vec![100, 100] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub game: Game,
    pub arch: ArchKind,
    /// Level size; each defaults to the game's standard size.
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub batch_size: usize,
    pub latent_mode: LatentMode,
    /// Maximum NCA episode length.
    pub steps: usize,
    pub iterations: u64,
    pub seed: u64,
    pub eval_seeds: usize,
    pub output_dir: PathBuf,
    /// Snapshot period in iterations; 0 writes only the final snapshot.
    pub snapshot_every: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub log_evaluations: bool,
    pub sokoban_budget: usize,
    pub emitters: EmitterConfig,
    pub archive: ArchiveConfig,
    pub validity_weights: BTreeMap<String, f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            game: Game::Maze,
            arch: ArchKind::Nca,
            height: None,
            width: None,
            batch_size: 10,
            latent_mode: LatentMode::Fixed,
            steps: 50,
            iterations: 2_000,
            seed: 0,
            eval_seeds: 20,
            output_dir: PathBuf::from("run"),
            snapshot_every: 100,
            workers: 0,
            log_evaluations: false,
            sokoban_budget: crate::analysis::DEFAULT_SOKOBAN_BUDGET,
            emitters: EmitterConfig::default(),
            archive: ArchiveConfig::default(),
            validity_weights: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(config_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Reads a config file and applies `key=value` overrides, where keys are
    /// dotted field paths (`emitters.sigma0`) and values TOML literals; bare
    /// words are taken as strings.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: toml::Table = text.parse().map_err(config_error)?;
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        let config: RunConfig = toml::Value::Table(table).try_into().map_err(config_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml_string()).map_err(config_error)?;
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        let config: RunConfig = toml::Value::Table(table).try_into().map_err(config_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = GameSpec::new(
            self.game,
            self.height.unwrap_or(self.game.default_dims().0),
            self.width.unwrap_or(self.game.default_dims().1),
        )
        .map_err(|e| Error::config("height/width", e.to_string()))?;
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "needs at least 2 levels to measure diversity"));
        }
        if self.eval_seeds < 2 {
            return Err(Error::config("eval_seeds", "needs at least 2 levels to measure diversity"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be positive"));
        }
        if self.sokoban_budget == 0 {
            return Err(Error::config("sokoban_budget", "must be positive"));
        }
        let e = &self.emitters;
        if e.count == 0 {
            return Err(Error::config("emitters.count", "must be positive"));
        }
        if !(e.sigma0.is_finite() && e.sigma0 > 0.0) {
            return Err(Error::config("emitters.sigma0", "must be a positive number"));
        }
        if e.batch_size.is_some_and(|b| b < 2) {
            return Err(Error::config("emitters.batch_size", "must be at least 2"));
        }
        if e.restart_after == 0 {
            return Err(Error::config("emitters.restart_after", "must be positive"));
        }
        let res = &self.archive.resolution;
        if res.len() != measure_names(self.game).len() || res.contains(&0) {
            return Err(Error::config(
                "archive.resolution",
                format!("needs {} positive entries", measure_names(self.game).len()),
            ));
        }
        ValidityRules::new(spec.game).with_weights(&self.validity_weights)?;
        Ok(())
    }

    pub fn game_spec(&self) -> GameSpec {
        let (h, w) = self.game.default_dims();
        GameSpec::new(self.game, self.height.unwrap_or(h), self.width.unwrap_or(w))
            .expect("validated level size")
    }

    pub fn descriptor(&self) -> ArchitectureDescriptor {
        ArchitectureDescriptor::new(self.arch, &self.game_spec())
    }

    pub fn rules(&self) -> ValidityRules {
        let mut rules = ValidityRules::new(self.game)
            .with_weights(&self.validity_weights)
            .expect("validated weights");
        rules.sokoban_budget = self.sokoban_budget;
        rules
    }

    pub fn objective_floor(&self) -> f64 {
        objective_floor(&self.game_spec(), &self.rules())
    }

    pub fn new_archive<P>(&self) -> Archive<P> {
        Archive::new(self.archive.resolution.clone(), measure_bounds(&self.game_spec()))
            .expect("validated archive settings")
    }
}

fn config_error(e: impl std::fmt::Display) -> Error {
    // toml reports the offending key in its message.
    Error::config("config", e.to_string().trim().to_string())
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let path: Vec<&str> = key.split('.').collect();
    let (last, parents) = path.split_last().expect("split yields one part");
    let mut node = table;
    for part in parents {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random streams derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    TrainLatents = 1,
    EvalLatents = 2,
    Emitter = 3,
    InitialMean = 4,
    Resume = 5,
    /// Fresh latents for sampling levels from a trained archive.
    Sample = 6,
}

pub fn stream_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream as u64)).wrapping_add(index))
}

fn latent_kind(arch: ArchKind) -> LatentKind {
    // Plain CPPNs ignore their seeds; a short vector is the cheapest stand-in.
    arch.latent_kind().unwrap_or(LatentKind::GaussianVector)
}

pub fn seed_batch(config: &RunConfig, stream: Stream, first: u64, count: usize) -> Vec<LatentSeed> {
    let spec = config.game_spec();
    let kind = latent_kind(config.arch);
    (0..count as u64)
        .map(|i| LatentSeed::new(kind, &spec, stream_seed(config.seed, stream, first + i)))
        .collect()
}

/// Latents used for training at `iteration` (1-based).
pub fn training_seeds(config: &RunConfig, iteration: u64) -> Vec<LatentSeed> {
    let first = match config.latent_mode {
        LatentMode::Fixed => 0,
        LatentMode::Resample => iteration * config.batch_size as u64,
    };
    seed_batch(config, Stream::TrainLatents, first, config.batch_size)
}

/// Held-out latents, drawn from a stream training never touches.
pub fn evaluation_seeds(config: &RunConfig) -> Vec<LatentSeed> {
    seed_batch(config, Stream::EvalLatents, 0, config.eval_seeds)
}

/// Everything needed to score a genome, prepared once per run.
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub descriptor: ArchitectureDescriptor,
    pub rules: ValidityRules,
    pub steps: usize,
}

impl Evaluator {
    pub fn new(config: &RunConfig) -> Self {
        Evaluator {
            descriptor: config.descriptor(),
            rules: config.rules(),
            steps: config.steps,
        }
    }

    pub fn levels(&self, genome: &Genome, seeds: &[LatentSeed]) -> Result<Vec<Level>> {
        let latent = self.descriptor.kind.latent_kind().is_some();
        let seeds: Vec<Option<&LatentSeed>> = seeds.iter().map(|s| latent.then_some(s)).collect();
        let batch = Generator::new(genome).generate_batch(&seeds, self.steps)?;
        Ok(batch.into_iter().map(|g| g.level).collect())
    }

    pub fn evaluate(&self, genome: &Genome, seeds: &[LatentSeed]) -> Result<BatchStats> {
        if seeds.is_empty() {
            return Err(Error::Invalid("evaluation needs at least one latent seed".into()));
        }
        Ok(BatchStats::from_levels(&self.levels(genome, seeds)?, &self.rules))
    }

    fn candidate(&self, params: &[f64], seeds: &[LatentSeed]) -> Option<Evaluated<Candidate>> {
        let genome = Genome::new(self.descriptor, params.iter().map(|&p| p as f32).collect()).ok()?;
        match self.evaluate(&genome, seeds) {
            Ok(stats) => Some(Evaluated {
                objective: stats.objective,
                measures: stats.measure_means.clone(),
                payload: Candidate { genome, stats },
            }),
            Err(e) => {
                log::warn!("evaluation failed: {e}");
                None
            }
        }
    }
}

/// Scores one genome on a seed batch.
pub fn evaluate_genome(genome: &Genome, seeds: &[LatentSeed], config: &RunConfig) -> Result<BatchStats> {
    Evaluator::new(config).evaluate(genome, seeds)
}

/// Resolves the worker count: the environment variable wins over the config,
/// and 0 means every available core.
pub fn worker_count(config: &RunConfig) -> Result<usize> {
    let requested = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::config(WORKERS_ENV, format!("`{v}` is not a worker count")))?,
        Err(_) => config.workers,
    };
    Ok(match requested {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    })
}

/// Order-preserving parallel map. Results never depend on the worker count.
pub struct WorkerPool {
    #[cfg(feature = "parallel")]
    pool: rayon::ThreadPool,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers.max(1))
                .build()
                .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))?;
            Ok(WorkerPool { pool })
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = workers;
            Ok(WorkerPool {})
        }
    }

    pub fn map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.pool.install(|| items.par_iter().map(&f).collect())
        }
        #[cfg(not(feature = "parallel"))]
        {
            items.iter().map(f).collect()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSummary {
    pub archive_size: usize,
    pub qd_score: f64,
    /// Mean intra-generator diversity over the elites.
    pub mean_diversity: f64,
    pub best_objective: Option<f64>,
}

pub fn summarize_archive(archive: &Archive<Candidate>, floor: f64) -> ArchiveSummary {
    let n = archive.len();
    ArchiveSummary {
        archive_size: n,
        qd_score: archive.qd_score(floor),
        mean_diversity: if n == 0 {
            0.0
        } else {
            archive.elites().map(|e| e.payload.stats.diversity).sum::<f64>() / n as f64
        },
        best_objective: archive.best_objective(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub iteration: u64,
    pub evaluations: u64,
    pub archive_size: usize,
    pub qd_score: f64,
    pub mean_diversity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub iterations: u64,
    pub evaluations: u64,
    pub interrupted: bool,
    pub series: Vec<SeriesPoint>,
    pub training: ArchiveSummary,
    /// Held-out evaluation; absent for interrupted runs.
    pub evaluation: Option<ArchiveSummary>,
}

pub struct Evaluation {
    pub archive: Archive<Candidate>,
    pub summary: ArchiveSummary,
}

/// Re-runs every elite on `seeds` and inserts the results into a fresh
/// archive in cell order. Colliding elites keep the best objective.
pub fn evaluate_archive(archive: &Archive<Candidate>, config: &RunConfig, seeds: &[LatentSeed]) -> Result<Evaluation> {
    let pool = WorkerPool::new(worker_count(config)?)?;
    evaluate_archive_with(archive, &Evaluator::new(config), seeds, &pool, config)
}

fn evaluate_archive_with(
    archive: &Archive<Candidate>,
    evaluator: &Evaluator,
    seeds: &[LatentSeed],
    pool: &WorkerPool,
    config: &RunConfig,
) -> Result<Evaluation> {
    let genomes: Vec<&Genome> = archive.elites().map(|e| &e.payload.genome).collect();
    let stats = pool.map(&genomes, |g| evaluator.evaluate(g, seeds));
    let mut fresh = config.new_archive();
    for (genome, stats) in genomes.into_iter().zip(stats) {
        let stats = stats?;
        let (objective, measures) = (stats.objective, stats.measure_means.clone());
        let candidate = Candidate {
            genome: genome.clone(),
            stats,
        };
        fresh.insert(candidate, objective, measures, 0);
    }
    let summary = summarize_archive(&fresh, config.objective_floor());
    Ok(Evaluation { archive: fresh, summary })
}

/// Hooks into a running training loop.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Continue from the newest snapshot in the output directory.
    pub resume: bool,
    /// Checked between iterations; when set, the run snapshots and returns.
    pub stop: Option<&'a AtomicBool>,
    pub progress: Option<&'a mut dyn FnMut(&IterationReport)>,
}

pub fn snapshot_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(SNAPSHOT_DIR).join(format!("{iteration:04}.archive"))
}

/// Newest snapshot in a run directory.
pub fn latest_snapshot(dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    let snapshots = dir.join(SNAPSHOT_DIR);
    if !snapshots.is_dir() {
        return Ok(None);
    }
    let mut best = None;
    for entry in fs::read_dir(&snapshots).map_err(|e| Error::io(&snapshots, e))? {
        let path = entry.map_err(|e| Error::io(&snapshots, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("archive") {
            continue;
        }
        let Some(it) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| it > *b) {
            best = Some((it, path));
        }
    }
    Ok(best)
}

/// Resolves an archive argument: a snapshot file, or a run directory
/// standing for its newest snapshot.
pub fn resolve_snapshot(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        return latest_snapshot(path)?
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Invalid(format!("{} holds no snapshots", path.display())));
    }
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    Ok(path.to_path_buf())
}

/// The run directory a snapshot was written into, if it sits in the usual layout.
pub fn run_dir_of(snapshot: &Path) -> Option<PathBuf> {
    let parent = snapshot.parent()?;
    (parent.file_name()? == SNAPSHOT_DIR).then(|| parent.parent().map(Path::to_path_buf))?
}

/// Configuration a snapshot was trained with: the run's own config file when
/// present, otherwise defaults matched to the snapshot's game and architecture.
pub fn config_for_snapshot(snapshot: &Path, header: &SnapshotHeader) -> Result<RunConfig> {
    if let Some(dir) = run_dir_of(snapshot) {
        let path = dir.join(CONFIG_FILE);
        if path.is_file() {
            let mut config = RunConfig::load(&path, &[])?;
            config.output_dir = dir;
            return Ok(config);
        }
    }
    log::warn!(
        "no {CONFIG_FILE} next to {}; assuming default settings",
        snapshot.display()
    );
    let config = RunConfig {
        game: header.game,
        arch: header.descriptor.kind,
        height: Some(header.descriptor.height),
        width: Some(header.descriptor.width),
        archive: ArchiveConfig {
            resolution: header.dims.clone(),
        },
        ..RunConfig::default()
    };
    config.validate()?;
    Ok(config)
}

/// Generates `count` levels from a genome using fresh latents derived from
/// `seed`, and scores each one.
pub fn sample_levels(genome: &Genome, config: &RunConfig, count: usize, seed: u64) -> Result<Vec<(Level, LevelEval)>> {
    let sampling = RunConfig {
        seed,
        ..config.clone()
    };
    let seeds = seed_batch(&sampling, Stream::Sample, 0, count);
    let evaluator = Evaluator::new(config);
    let levels = evaluator.levels(genome, &seeds)?;
    Ok(levels
        .into_iter()
        .map(|l| {
            let eval = evaluate_level(&l, &evaluator.rules);
            (l, eval)
        })
        .collect())
}

fn initial_mean(config: &RunConfig, emitter: usize) -> Vec<f64> {
    let n = config.descriptor().param_count();
    match config.arch {
        // Genome entries are pre-scaled, so uniform [-1, 1] is the periodic
        // initialization.
        ArchKind::SinCppn | ArchKind::GenSinCppn => {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, Stream::InitialMean, emitter as u64));
            (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
        }
        _ => vec![0.0; n],
    }
}

struct RunFiles {
    stats: BufWriter<fs::File>,
    evaluations: Option<BufWriter<fs::File>>,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn stats_row(r: &IterationReport, mean_diversity: f64) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.iteration,
        r.evaluations,
        r.archive_size,
        r.qd_score,
        r.best_objective.map(|b| b.to_string()).unwrap_or_default(),
        mean_diversity,
        r.new_cells,
        r.improved,
        r.restarts
    )
}

fn evaluations_header(game: Game) -> String {
    let [a, b] = measure_names(game);
    format!("iteration,emitter,candidate,objective,validity,reliability,diversity,{a},{b},{a}_std,{b}_std")
}

/// Parses the series back out of a stats file, keeping rows up to `upto`.
pub fn read_stats(path: &Path, upto: u64) -> Result<Vec<(SeriesPoint, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("{}:{}: malformed stats row", path.display(), n + 1));
        if f.len() != 9 {
            return Err(bad());
        }
        let point = SeriesPoint {
            iteration: f[0].parse().map_err(|_| bad())?,
            evaluations: f[1].parse().map_err(|_| bad())?,
            archive_size: f[2].parse().map_err(|_| bad())?,
            qd_score: f[3].parse().map_err(|_| bad())?,
            mean_diversity: f[5].parse().map_err(|_| bad())?,
        };
        if point.iteration <= upto {
            out.push((point, line.to_string()));
        }
    }
    Ok(out)
}

/// Runs the quality-diversity search described by `config`, writing the
/// run directory as it goes.
pub fn train(config: &RunConfig, mut options: TrainOptions<'_>) -> Result<RunReport> {
    config.validate()?;
    let dir = &config.output_dir;
    let stats_path = dir.join(STATS_FILE);
    let resume_from = if options.resume { latest_snapshot(dir)? } else { None };
    if resume_from.is_none() && stats_path.exists() {
        return Err(Error::config(
            "output_dir",
            format!("{} already holds a run; resume it or pick another directory", dir.display()),
        ));
    }
    fs::create_dir_all(dir.join(SNAPSHOT_DIR)).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, config.to_toml_string()).map_err(|e| Error::io(&config_path, e))?;

    let evaluator = Evaluator::new(config);
    let pool = WorkerPool::new(worker_count(config)?)?;
    let floor = config.objective_floor();
    let emitter_count = config.emitters.count;

    let kept_rows = match &resume_from {
        Some((iteration, _)) if stats_path.exists() => read_stats(&stats_path, *iteration)?,
        _ => Vec::new(),
    };
    let mut series = Vec::new();
    let mut files = RunFiles {
        stats: create(&stats_path)?,
        evaluations: None,
    };
    let stats_io = |e| Error::io(&stats_path, e);
    writeln!(files.stats, "{STATS_HEADER}").map_err(stats_io)?;

    let scheduler = match &resume_from {
        Some((_, path)) => {
            let snap = load_snapshot(path)?;
            if snap.header.descriptor != config.descriptor() || snap.header.game != config.game {
                return Err(Error::config(
                    "arch",
                    format!("{} was written by a different game or architecture", path.display()),
                ));
            }
            for (point, line) in kept_rows {
                writeln!(files.stats, "{line}").map_err(stats_io)?;
                series.push(point);
            }
            let mut emitters: Vec<ImprovementEmitter> = (0..emitter_count)
                .map(|e| {
                    let seed = stream_seed(config.seed, Stream::Resume, snap.header.iteration * emitter_count as u64 + e as u64);
                    ImprovementEmitter::new(initial_mean(config, e), &config.emitters, seed)
                })
                .collect();
            for em in &mut emitters {
                em.restart(&snap.archive);
            }
            let mut s = Scheduler::new(emitters, snap.archive, floor);
            s.iteration = snap.header.iteration;
            s.evaluations = snap.header.evaluations;
            log::info!("resuming {} at iteration {}", dir.display(), s.iteration);
            s
        }
        None => {
            let emitters = (0..emitter_count)
                .map(|e| {
                    let seed = stream_seed(config.seed, Stream::Emitter, e as u64);
                    ImprovementEmitter::new(initial_mean(config, e), &config.emitters, seed)
                })
                .collect();
            Scheduler::new(emitters, config.new_archive(), floor)
        }
    };
    let mut scheduler = scheduler;
    files.stats.flush().map_err(stats_io)?;

    if config.log_evaluations {
        let path = dir.join(EVALUATIONS_FILE);
        let append = resume_from.is_some() && path.exists();
        let file = fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        if !append {
            writeln!(w, "{}", evaluations_header(config.game)).map_err(|e| Error::io(&path, e))?;
        }
        files.evaluations = Some(w);
    }

    let header = SnapshotHeader {
        version: ARCHIVE_VERSION,
        game: config.game,
        descriptor: config.descriptor(),
        dims: vec![],
        bounds: vec![],
        measures: measure_names(config.game).iter().map(|s| s.to_string()).collect(),
        objective_floor: floor,
        iteration: 0,
        evaluations: 0,
        cells: 0,
    };
    let snapshot = |s: &Scheduler<Candidate>| -> Result<()> {
        let h = SnapshotHeader {
            iteration: s.iteration,
            evaluations: s.evaluations,
            ..header.clone()
        };
        save_snapshot(&snapshot_path(dir, s.iteration), &h, &s.archive)
    };

    let fixed_seeds = (config.latent_mode == LatentMode::Fixed).then(|| training_seeds(config, 0));
    let lambda = scheduler.emitters[0].batch_size();
    let mut interrupted = false;
    let mut last_snapshot = None;
    let mut eval_error = None;

    while scheduler.iteration < config.iterations {
        if options.stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
            interrupted = true;
            break;
        }
        let iteration = scheduler.iteration + 1;
        let resampled;
        let seeds = match &fixed_seeds {
            Some(s) => s,
            None => {
                resampled = training_seeds(config, iteration);
                &resampled
            }
        };
        let eval_log = &mut files.evaluations;
        let report = scheduler.step(|xs| {
            let results = pool.map(xs, |x| evaluator.candidate(x, seeds));
            if let Some(w) = eval_log.as_mut() {
                for (i, r) in results.iter().enumerate() {
                    if let Some(c) = r {
                        let s = &c.payload.stats;
                        let line = format!(
                            "{iteration},{},{},{},{},{},{},{},{},{},{}",
                            i / lambda,
                            i % lambda,
                            s.objective,
                            s.validity,
                            s.reliability,
                            s.diversity,
                            s.measure_means[0],
                            s.measure_means[1],
                            s.measure_stds[0],
                            s.measure_stds[1]
                        );
                        if let Err(e) = writeln!(w, "{line}") {
                            eval_error.get_or_insert(e);
                        }
                    }
                }
            }
            results
        });
        if let Some(e) = eval_error.take() {
            return Err(Error::io(dir.join(EVALUATIONS_FILE), e));
        }
        let summary = summarize_archive(&scheduler.archive, floor);
        writeln!(files.stats, "{}", stats_row(&report, summary.mean_diversity)).map_err(stats_io)?;
        files.stats.flush().map_err(stats_io)?;
        series.push(SeriesPoint {
            iteration: report.iteration,
            evaluations: report.evaluations,
            archive_size: report.archive_size,
            qd_score: report.qd_score,
            mean_diversity: summary.mean_diversity,
        });
        if config.snapshot_every > 0 && report.iteration % config.snapshot_every == 0 {
            snapshot(&scheduler)?;
            last_snapshot = Some(report.iteration);
        }
        if let Some(progress) = options.progress.as_mut() {
            progress(&report);
        }
    }
    if let Some(w) = files.evaluations.as_mut() {
        w.flush().map_err(|e| Error::io(dir.join(EVALUATIONS_FILE), e))?;
    }
    if last_snapshot != Some(scheduler.iteration) {
        snapshot(&scheduler)?;
    }

    let training = summarize_archive(&scheduler.archive, floor);
    let evaluation = if interrupted {
        None
    } else {
        let seeds = evaluation_seeds(config);
        Some(evaluate_archive_with(&scheduler.archive, &evaluator, &seeds, &pool, config)?.summary)
    };
    let report = RunReport {
        config: config.clone(),
        iterations: scheduler.iteration,
        evaluations: scheduler.evaluations,
        interrupted,
        series,
        training,
        evaluation,
    };
    let report_path = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&report_path, json + "\n").map_err(|e| Error::io(&report_path, e))?;
    Ok(report)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialColumn {
    pub phase: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation across trials, laid out as
/// training then evaluation, each with archive size, QD score and generator
/// diversity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub columns: Vec<TrialColumn>,
}

impl TrialSummary {
    pub fn to_markdown(&self) -> String {
        let head: Vec<String> = self.columns.iter().map(|c| format!("{} {}", c.phase, c.metric)).collect();
        let cells: Vec<String> = self
            .columns
            .iter()
            .map(|c| format!("{:.2} ± {:.2}", c.mean, c.std))
            .collect();
        format!(
            "| {} |\n|{}|\n| {} |\n",
            head.join(" | "),
            vec!["---"; head.len()].join("|"),
            cells.join(" | ")
        )
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize_trials(reports: &[RunReport]) -> Result<TrialSummary> {
    if reports.is_empty() {
        return Err(Error::Invalid("no reports to summarize".into()));
    }
    let phases: [(&str, fn(&RunReport) -> ArchiveSummary); 2] = [
        ("training", |r| r.training.clone()),
        ("evaluation", |r| r.evaluation.clone().unwrap_or_default()),
    ];
    let metrics: [(&str, fn(&ArchiveSummary) -> f64); 3] = [
        ("archive size", |s| s.archive_size as f64),
        ("QD score", |s| s.qd_score),
        ("generator diversity", |s| s.mean_diversity),
    ];
    let mut columns = Vec::new();
    for (phase, pick) in phases {
        let summaries: Vec<ArchiveSummary> = reports.iter().map(pick).collect();
        for (metric, value) in metrics {
            let xs: Vec<f64> = summaries.iter().map(value).collect();
            let (mean, std) = mean_std(&xs);
            columns.push(TrialColumn {
                phase: phase.into(),
                metric: metric.into(),
                mean,
                std,
            });
        }
    }
    Ok(TrialSummary {
        trials: reports.len(),
        columns,
    })
}
