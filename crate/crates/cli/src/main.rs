use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ncaqd::grid::Game;
use ncaqd::io::{elite_at, load_snapshot, save_snapshot, Snapshot, SnapshotHeader};
use ncaqd::objective::{rule_names, LevelEval};
use ncaqd::render::{archive_csv, level_montage, render_heatmap, spread_cells, HeatmapMetric, Image};
use ncaqd::trainer::{
    config_for_snapshot, evaluate_archive, evaluation_seeds, resolve_snapshot, sample_levels, summarize_archive, train,
    RunConfig, TrainOptions, REPORT_FILE,
};
use ncaqd::Error;

#[derive(Parser)]
#[command(name = "ncaqd", version, about = "Quality-diversity search over level generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an archive of generators.
    Train(TrainArgs),
    /// Re-evaluate an archive on held-out latents.
    Evaluate(EvaluateArgs),
    /// Summarize a snapshot.
    Inspect(InspectArgs),
    /// Draw one level from each of a spread of elites.
    Render(RenderArgs),
    /// Write a heatmap image and a per-cell CSV.
    ExportHeatmap(HeatmapArgs),
    /// Sample levels from one elite.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (TOML).
    config: PathBuf,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from the newest snapshot in the output directory.
    #[arg(long)]
    resume: bool,
    /// Print progress every N iterations (0 disables it).
    #[arg(long, default_value_t = 1)]
    every: u64,
}

#[derive(Args)]
struct SnapshotArgs {
    /// Snapshot file or run directory.
    archive: PathBuf,
    /// Run configuration; defaults to the run's own config.toml.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    snapshot: SnapshotArgs,
    /// Number of held-out latents, overriding `eval_seeds`.
    #[arg(long)]
    seeds: Option<usize>,
    /// Write the re-evaluated archive here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    snapshot: SnapshotArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    snapshot: SnapshotArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    tile_px: usize,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    snapshot: SnapshotArgs,
    #[arg(long, default_value = "objective")]
    metric: HeatmapMetric,
    /// Output path prefix; `.png` and `.csv` are appended.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("selector").required(true).args(["cell", "measures"]))]
struct GenerateArgs {
    #[command(flatten)]
    snapshot: SnapshotArgs,
    /// Cell indices, comma separated.
    #[arg(long, value_delimiter = ',')]
    cell: Option<Vec<usize>>,
    /// Measure values; the nearest occupied cell is used.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    measures: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    tile_px: usize,
}

/// Failures split by exit status.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let usage = e.chain().any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Config { .. })));
        if usage {
            Failure::Usage(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Render(a) => cmd_render(a),
        Command::ExportHeatmap(a) => cmd_export_heatmap(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    if !args.config.is_file() {
        return Err(Failure::Usage(anyhow!("config file {} not found", args.config.display())));
    }
    let mut config = RunConfig::load(&args.config, &args.overrides)?;
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    config.validate()?;

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || {
            if stop.swap(true, Ordering::SeqCst) {
                std::process::exit(1);
            }
            eprintln!("interrupt received; finishing the iteration and writing a snapshot");
        })
        .context("installing the interrupt handler")?;
    }
    let every = args.every;
    let mut progress = |r: &ncaqd::qd::IterationReport| {
        if every > 0 && (r.iteration % every == 0 || r.iteration == config.iterations) {
            println!(
                "iteration {} evaluations {} archive {} qd {:.2}",
                r.iteration, r.evaluations, r.archive_size, r.qd_score
            );
        }
    };
    let report = train(
        &config,
        TrainOptions {
            resume: args.resume,
            stop: Some(&stop),
            progress: Some(&mut progress),
        },
    )?;
    let dir = config.output_dir.display();
    if report.interrupted {
        return Err(Failure::Runtime(anyhow!(
            "interrupted at iteration {}; snapshot written, resume with --resume (run directory {dir})",
            report.iterations
        )));
    }
    println!(
        "done: {} iterations, archive {} qd {:.2}",
        report.iterations, report.training.archive_size, report.training.qd_score
    );
    if let Some(e) = &report.evaluation {
        println!("held-out: archive {} qd {:.2}", e.archive_size, e.qd_score);
    }
    println!("run directory {dir} ({REPORT_FILE})");
    Ok(())
}

fn open_snapshot(args: &SnapshotArgs) -> Result<(PathBuf, Snapshot, RunConfig), Failure> {
    let path = resolve_snapshot(&args.archive).map_err(|e| Failure::Usage(e.into()))?;
    let snapshot = load_snapshot(&path)?;
    let config = match &args.config {
        Some(c) => {
            if !c.is_file() {
                return Err(Failure::Usage(anyhow!("config file {} not found", c.display())));
            }
            RunConfig::load(c, &[])?
        }
        None => config_for_snapshot(&path, &snapshot.header)?,
    };
    if config.game != snapshot.header.game || config.descriptor() != snapshot.header.descriptor {
        return Err(Failure::Usage(anyhow!(
            "config does not match the game or architecture of {}",
            path.display()
        )));
    }
    Ok((path, snapshot, config))
}

fn cmd_evaluate(args: EvaluateArgs) -> CmdResult {
    let (_, snapshot, mut config) = open_snapshot(&args.snapshot)?;
    if let Some(n) = args.seeds {
        config.eval_seeds = n;
        config.validate()?;
    }
    let training = summarize_archive(&snapshot.archive, snapshot.header.objective_floor);
    let evaluation = evaluate_archive(&snapshot.archive, &config, &evaluation_seeds(&config))?;
    println!("training: archive {} qd {:.2}", training.archive_size, training.qd_score);
    println!(
        "held-out ({} latents): archive {} qd {:.2} diversity {:.4}",
        config.eval_seeds, evaluation.summary.archive_size, evaluation.summary.qd_score, evaluation.summary.mean_diversity
    );
    if let Some(out) = args.out {
        let header = SnapshotHeader {
            cells: evaluation.archive.len(),
            ..snapshot.header
        };
        save_snapshot(&out, &header, &evaluation.archive)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct Inspection<'a> {
    header: &'a SnapshotHeader,
    archive_size: usize,
    qd_score: f64,
    best_objective: Option<f64>,
    mean_diversity: f64,
    coverage: f64,
}

fn cmd_inspect(args: InspectArgs) -> CmdResult {
    let path = resolve_snapshot(&args.snapshot.archive).map_err(|e| Failure::Usage(e.into()))?;
    let snapshot = load_snapshot(&path)?;
    let h = &snapshot.header;
    let summary = summarize_archive(&snapshot.archive, h.objective_floor);
    let info = Inspection {
        header: h,
        archive_size: summary.archive_size,
        qd_score: summary.qd_score,
        best_objective: summary.best_objective,
        mean_diversity: summary.mean_diversity,
        coverage: summary.archive_size as f64 / snapshot.archive.capacity() as f64,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&info).context("serializing summary")?);
        return Ok(());
    }
    println!("snapshot       {}", path.display());
    println!("game           {}", h.game);
    println!("architecture   {:?} ({} parameters)", h.descriptor.kind, h.descriptor.param_count());
    println!("iteration      {}", h.iteration);
    println!("evaluations    {}", h.evaluations);
    println!("measures       {}", h.measures.join(", "));
    println!("archive size   {}", info.archive_size);
    println!("coverage       {:.4}", info.coverage);
    println!("qd score       {:.4}", info.qd_score);
    match info.best_objective {
        Some(b) => println!("best objective {b:.4}"),
        None => println!("best objective -"),
    }
    println!("mean diversity {:.4}", info.mean_diversity);
    Ok(())
}

fn write_png(path: &Path, image: &Image) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&image.pixels)?;
    writer.finish()?;
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_render(args: RenderArgs) -> CmdResult {
    let (_, snapshot, config) = open_snapshot(&args.snapshot)?;
    let game = config.game;
    create_dir(&args.out)?;
    let cells = spread_cells(&snapshot.archive, args.count);
    let mut levels = Vec::new();
    let mut text = String::new();
    for cell in &cells {
        let elite = elite_at(&snapshot.archive, cell)?;
        let (level, eval) = sample_levels(&elite.payload.genome, &config, 1, args.seed)?.remove(0);
        text.push_str(&format!(
            "cell {cell:?} objective {:.4} validity {} measures {:?}\n",
            elite.objective, eval.validity, eval.measures
        ));
        text.push_str(&level.to_text(game));
        text.push('\n');
        levels.push(level);
    }
    let columns = (levels.len() as f64).sqrt().ceil() as usize;
    write_png(&args.out.join("levels.png"), &level_montage(&levels, game, columns, args.tile_px, args.tile_px))?;
    write_file(&args.out.join("levels.txt"), text)?;
    println!("rendered {} elites to {}", levels.len(), args.out.display());
    Ok(())
}

fn cmd_export_heatmap(args: HeatmapArgs) -> CmdResult {
    let path = resolve_snapshot(&args.snapshot.archive).map_err(|e| Failure::Usage(e.into()))?;
    let snapshot = load_snapshot(&path)?;
    let names = &snapshot.header.measures;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let csv_path = args.out.with_extension("csv");
    write_file(&csv_path, archive_csv(&snapshot.archive, names))?;
    println!("wrote {} ({} rows)", csv_path.display(), snapshot.archive.len());
    if snapshot.archive.dims().len() != 2 {
        log::warn!(
            "archive has {} measure dimensions; skipping the heatmap image",
            snapshot.archive.dims().len()
        );
        eprintln!("warning: heatmaps need 2 measure dimensions; wrote the CSV only");
        return Ok(());
    }
    let image = render_heatmap(&snapshot.archive, args.metric, names)?;
    let png_path = args.out.with_extension("png");
    write_png(&png_path, &image)?;
    println!("wrote {}", png_path.display());
    Ok(())
}

#[derive(Serialize)]
struct SampleReport {
    game: Game,
    cell: Vec<usize>,
    objective: f64,
    seed: u64,
    measures: Vec<String>,
    rules: Vec<String>,
    levels: Vec<LevelEval>,
}

fn cmd_generate(args: GenerateArgs) -> CmdResult {
    let (_, snapshot, config) = open_snapshot(&args.snapshot)?;
    let archive = &snapshot.archive;
    let cell = match (&args.cell, &args.measures) {
        (Some(cell), _) => {
            if cell.len() != archive.dims().len() {
                return Err(Failure::Usage(anyhow!(
                    "--cell needs {} indices, got {}",
                    archive.dims().len(),
                    cell.len()
                )));
            }
            cell.clone()
        }
        (None, Some(m)) => {
            if m.len() != archive.dims().len() {
                return Err(Failure::Usage(anyhow!(
                    "--measures needs {} values, got {}",
                    archive.dims().len(),
                    m.len()
                )));
            }
            archive
                .nearest_occupied(&archive.cell_index(m), 1)
                .pop()
                .ok_or_else(|| anyhow!("the archive is empty"))?
        }
        (None, None) => unreachable!("clap requires a selector"),
    };
    let elite = elite_at(archive, &cell)?;
    if args.count == 0 {
        return Err(Failure::Usage(anyhow!("--count must be at least 1")));
    }
    let samples = sample_levels(&elite.payload.genome, &config, args.count, args.seed)?;

    create_dir(&args.out)?;
    let game = config.game;
    for (i, (level, _)) in samples.iter().enumerate() {
        write_file(&args.out.join(format!("level_{i:03}.txt")), level.to_text(game))?;
    }
    let levels: Vec<_> = samples.iter().map(|(l, _)| l.clone()).collect();
    let columns = (levels.len() as f64).sqrt().ceil() as usize;
    write_png(&args.out.join("levels.png"), &level_montage(&levels, game, columns, args.tile_px, args.tile_px))?;
    let report = SampleReport {
        game,
        cell: cell.clone(),
        objective: elite.objective,
        seed: args.seed,
        measures: snapshot.header.measures.clone(),
        rules: rule_names(game).iter().map(|s| s.to_string()).collect(),
        levels: samples.into_iter().map(|(_, e)| e).collect(),
    };
    write_file(
        &args.out.join("report.json"),
        serde_json::to_string_pretty(&report).context("serializing report")?,
    )?;

    println!("cell {cell:?} objective {:.4}", elite.objective);
    println!("level validity {}", snapshot.header.measures.join(" "));
    for (i, e) in report.levels.iter().enumerate() {
        let m: Vec<String> = e.measures.iter().map(|v| format!("{v:.4}")).collect();
        println!("{i:5} {:8.3} {}", e.validity, m.join(" "));
    }
    println!("wrote {} levels to {}", report.levels.len(), args.out.display());
    Ok(())
}
