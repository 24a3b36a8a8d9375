//! Raster output: archive heatmaps, level images and the per-cell CSV.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Game, Level, Tile};
use crate::io::Candidate;
use crate::qd::{Archive, Elite};

pub type Rgb = [u8; 3];

pub const EMPTY_CELL: Rgb = [48, 48, 48];
pub const BACKGROUND: Rgb = [255, 255, 255];
pub const INK: Rgb = [0, 0, 0];

/// An 8-bit RGB raster, row-major from the top-left corner.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Image {
            width,
            height,
            pixels: fill.repeat(width * height),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, color: Rgb) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.pixels[i..i + 3].copy_from_slice(&color);
        }
    }

    pub fn fill_rect(&mut self, x: usize, y: usize, w: usize, h: usize, color: Rgb) {
        for yy in y..(y + h).min(self.height) {
            for xx in x..(x + w).min(self.width) {
                self.put(xx, yy, color);
            }
        }
    }

    /// Draws `text` with the built-in 3x5 font; returns the width used.
    pub fn text(&mut self, x: usize, y: usize, text: &str, scale: usize, color: Rgb) -> usize {
        let mut cx = x;
        for ch in text.chars() {
            let rows = glyph(ch);
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..3 {
                    if bits & (0b100 >> rx) != 0 {
                        self.fill_rect(cx + rx * scale, y + ry * scale, scale, scale, color);
                    }
                }
            }
            cx += 4 * scale;
        }
        cx - x
    }

    /// Copies `other` with its top-left corner at (x, y), clipping at the edges.
    pub fn blit(&mut self, other: &Image, x: usize, y: usize) {
        for yy in 0..other.height {
            for xx in 0..other.width {
                self.put(x + xx, y + yy, other.pixel(xx, yy));
            }
        }
    }
}

pub fn text_width(text: &str, scale: usize) -> usize {
    text.chars().count() * 4 * scale
}

fn glyph(ch: char) -> [u8; 5] {
    match ch.to_ascii_uppercase() {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b001, 0b001],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'B' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'C' => [0b011, 0b100, 0b100, 0b100, 0b011],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'F' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'G' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'H' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'I' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'J' => [0b001, 0b001, 0b001, 0b101, 0b010],
        'K' => [0b101, 0b101, 0b110, 0b101, 0b101],
        'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'M' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'N' => [0b110, 0b101, 0b101, 0b101, 0b101],
        'O' => [0b010, 0b101, 0b101, 0b101, 0b010],
        'P' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'Q' => [0b010, 0b101, 0b101, 0b110, 0b011],
        'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
        'S' => [0b011, 0b100, 0b010, 0b001, 0b110],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'U' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'V' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'W' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'X' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'Y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'Z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '+' => [0b000, 0b010, 0b111, 0b010, 0b000],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        ':' => [0b000, 0b010, 0b000, 0b010, 0b000],
        '_' => [0b000, 0b000, 0b000, 0b000, 0b111],
        '(' => [0b001, 0b010, 0b010, 0b010, 0b001],
        ')' => [0b100, 0b010, 0b010, 0b010, 0b100],
        ' ' => [0; 5],
        _ => [0b111, 0b001, 0b010, 0b000, 0b010],
    }
}

/// Piecewise-linear approximation of the viridis colormap, `t` in [0, 1].
pub fn colormap(t: f64) -> Rgb {
    const STOPS: [Rgb; 5] = [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let mut out = [0; 3];
    for c in 0..3 {
        let a = STOPS[i][c] as f64;
        let b = STOPS[i + 1][c] as f64;
        out[c] = (a + (b - a) * f).round() as u8;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeatmapMetric {
    Objective,
    Diversity,
    Occupancy,
}

impl HeatmapMetric {
    pub fn name(self) -> &'static str {
        match self {
            HeatmapMetric::Objective => "objective",
            HeatmapMetric::Diversity => "diversity",
            HeatmapMetric::Occupancy => "occupancy",
        }
    }

    pub fn value(self, elite: &Elite<Candidate>) -> f64 {
        match self {
            HeatmapMetric::Objective => elite.objective,
            HeatmapMetric::Diversity => elite.payload.stats.diversity,
            HeatmapMetric::Occupancy => 1.0,
        }
    }
}

impl FromStr for HeatmapMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objective" => Ok(HeatmapMetric::Objective),
            "diversity" => Ok(HeatmapMetric::Diversity),
            "occupancy" => Ok(HeatmapMetric::Occupancy),
            other => Err(Error::Invalid(format!(
                "unknown heatmap metric `{other}` (expected objective, diversity or occupancy)"
            ))),
        }
    }
}

/// One row per occupied cell, in cell order.
pub fn archive_csv(archive: &Archive<Candidate>, measure_names: &[String]) -> String {
    let mut out = String::new();
    let dims = archive.dims().len();
    let mut header: Vec<String> = (0..dims).map(|d| format!("cell_{d}")).collect();
    header.extend((0..dims).map(|d| measure_names.get(d).cloned().unwrap_or_else(|| format!("measure_{d}"))));
    header.extend(
        ["objective", "validity", "reliability", "diversity", "inserted_at"]
            .iter()
            .map(|s| s.to_string()),
    );
    out.push_str(&header.join(","));
    out.push('\n');
    for (cell, elite) in archive.iter() {
        let stats = &elite.payload.stats;
        let mut row: Vec<String> = cell.iter().map(|c| c.to_string()).collect();
        row.extend(elite.measures.iter().map(|m| m.to_string()));
        row.push(elite.objective.to_string());
        row.push(stats.validity.to_string());
        row.push(stats.reliability.to_string());
        row.push(stats.diversity.to_string());
        row.push(elite.inserted_at.to_string());
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn axis_value(v: f64) -> String {
    if v == v.round() && v.abs() < 1e6 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

const LABEL_SCALE: usize = 2;
const PLOT_SIZE: usize = 400;
const MARGIN: usize = 12;
const BAR_WIDTH: usize = 16;

/// Draws a 2D archive as a heatmap. The first measure runs left to right and
/// the second bottom to top; empty cells get [`EMPTY_CELL`].
pub fn render_heatmap(archive: &Archive<Candidate>, metric: HeatmapMetric, measure_names: &[String]) -> Result<Image> {
    let dims = archive.dims();
    if dims.len() != 2 {
        return Err(Error::Invalid(format!(
            "heatmaps need a 2-dimensional archive, this one has {}",
            dims.len()
        )));
    }
    let (nx, ny) = (dims[0], dims[1]);
    let cell_px = (PLOT_SIZE / nx.max(ny)).max(1);
    let (pw, ph) = (nx * cell_px, ny * cell_px);

    let values: Vec<f64> = archive.elites().map(|e| metric.value(e)).filter(|v| v.is_finite()).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let bounds = archive.bounds();
    let name = |d: usize| measure_names.get(d).cloned().unwrap_or_else(|| format!("measure {d}"));
    let glyph_h = 5 * LABEL_SCALE;
    let y_labels = [axis_value(bounds[1].0), axis_value(bounds[1].1)];
    let left = MARGIN + y_labels.iter().map(|l| text_width(l, LABEL_SCALE)).max().unwrap_or(0) + 4;
    let top = MARGIN + glyph_h + 6;
    let bar_labels = if values.is_empty() || metric == HeatmapMetric::Occupancy {
        vec![]
    } else {
        vec![axis_value(hi), axis_value(lo)]
    };
    let bar_text = bar_labels.iter().map(|l| text_width(l, LABEL_SCALE)).max().unwrap_or(0);
    let width = left + pw + MARGIN + BAR_WIDTH + 4 + bar_text + MARGIN;
    let height = top + ph + 4 + glyph_h + 6 + glyph_h + MARGIN;
    let mut img = Image::new(width, height, BACKGROUND);

    // Frame and cells.
    img.fill_rect(left - 1, top - 1, pw + 2, ph + 2, INK);
    img.fill_rect(left, top, pw, ph, EMPTY_CELL);
    for (cell, elite) in archive.iter() {
        let v = metric.value(elite);
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
        let x = left + cell[0] * cell_px;
        let y = top + (ny - 1 - cell[1]) * cell_px;
        img.fill_rect(x, y, cell_px, cell_px, colormap(t));
    }

    // Axes.
    let title = format!("{} ({})", name(1), metric.name());
    img.text(MARGIN, MARGIN, &title, LABEL_SCALE, INK);
    img.text(left - 4 - text_width(&y_labels[1], LABEL_SCALE), top, &y_labels[1], LABEL_SCALE, INK);
    img.text(
        left - 4 - text_width(&y_labels[0], LABEL_SCALE),
        top + ph - glyph_h,
        &y_labels[0],
        LABEL_SCALE,
        INK,
    );
    let ty = top + ph + 4;
    img.text(left, ty, &axis_value(bounds[0].0), LABEL_SCALE, INK);
    let x_hi = axis_value(bounds[0].1);
    img.text(left + pw - text_width(&x_hi, LABEL_SCALE), ty, &x_hi, LABEL_SCALE, INK);
    let x_name = name(0);
    let nw = text_width(&x_name, LABEL_SCALE);
    img.text(left + pw.saturating_sub(nw) / 2, ty + glyph_h + 6, &x_name, LABEL_SCALE, INK);

    // Color bar.
    let bx = left + pw + MARGIN;
    img.fill_rect(bx - 1, top - 1, BAR_WIDTH + 2, ph + 2, INK);
    for row in 0..ph {
        let t = if metric == HeatmapMetric::Occupancy {
            1.0
        } else {
            1.0 - row as f64 / (ph.max(2) - 1) as f64
        };
        let color = if values.is_empty() { EMPTY_CELL } else { colormap(t) };
        img.fill_rect(bx, top + row, BAR_WIDTH, 1, color);
    }
    if let [high, low] = bar_labels.as_slice() {
        img.text(bx + BAR_WIDTH + 4, top, high, LABEL_SCALE, INK);
        img.text(bx + BAR_WIDTH + 4, top + ph - glyph_h, low, LABEL_SCALE, INK);
    }
    Ok(img)
}

pub fn tile_color(game: Game, tile: Tile) -> Rgb {
    use crate::grid::{PLAYER, SOKOBAN_CRATE, SOKOBAN_TARGET, WALL, ZELDA_DOOR, ZELDA_ENEMY, ZELDA_KEY};
    match (game, tile) {
        (_, crate::grid::EMPTY) => [236, 232, 220],
        (_, WALL) => [60, 56, 70],
        (_, PLAYER) => [40, 110, 230],
        (Game::Sokoban, SOKOBAN_CRATE) => [170, 110, 50],
        (Game::Sokoban, SOKOBAN_TARGET) => [230, 70, 70],
        (Game::Zelda, ZELDA_KEY) => [240, 200, 30],
        (Game::Zelda, ZELDA_DOOR) => [60, 170, 80],
        (Game::Zelda, ZELDA_ENEMY) => [210, 50, 50],
        _ => [255, 0, 255],
    }
}

/// Draws a level with `tile_px` square pixels per tile.
pub fn render_level(level: &Level, game: Game, tile_px: usize) -> Image {
    let tile_px = tile_px.max(1);
    let mut img = Image::new(level.width * tile_px, level.height * tile_px, BACKGROUND);
    for y in 0..level.height {
        for x in 0..level.width {
            img.fill_rect(x * tile_px, y * tile_px, tile_px, tile_px, tile_color(game, level.get(y, x)));
        }
    }
    img
}

/// Lays levels out left to right in rows of `columns`, separated by `gap` pixels.
pub fn level_montage(levels: &[Level], game: Game, columns: usize, tile_px: usize, gap: usize) -> Image {
    if levels.is_empty() {
        return Image::new(1, 1, BACKGROUND);
    }
    let columns = columns.clamp(1, levels.len());
    let rows = levels.len().div_ceil(columns);
    let tw = levels.iter().map(|l| l.width).max().unwrap_or(0) * tile_px;
    let th = levels.iter().map(|l| l.height).max().unwrap_or(0) * tile_px;
    let mut img = Image::new(
        columns * tw + (columns + 1) * gap,
        rows * th + (rows + 1) * gap,
        BACKGROUND,
    );
    for (i, level) in levels.iter().enumerate() {
        let x = gap + (i % columns) * (tw + gap);
        let y = gap + (i / columns) * (th + gap);
        img.blit(&render_level(level, game, tile_px), x, y);
    }
    img
}

/// Up to `count` occupied cells spread evenly through the archive's cell order.
pub fn spread_cells<P>(archive: &Archive<P>, count: usize) -> Vec<Vec<usize>> {
    let cells: Vec<Vec<usize>> = archive.iter().map(|(c, _)| c).collect();
    if count == 0 || cells.is_empty() {
        return vec![];
    }
    if count >= cells.len() {
        return cells;
    }
    (0..count)
        .map(|i| cells[i * (cells.len() - 1) / (count - 1).max(1)].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GameSpec;
    use crate::nets::{ArchKind, ArchitectureDescriptor, Genome};
    use crate::objective::{BatchStats, ValidityRules};

    fn names() -> Vec<String> {
        vec!["symmetry".into(), "path-length".into()]
    }

    fn candidate() -> Candidate {
        let d = ArchitectureDescriptor::new(ArchKind::Nca, &GameSpec::default_for(Game::Maze));
        Candidate {
            genome: Genome::new(d, vec![0.0; d.param_count()]).unwrap(),
            stats: BatchStats::from_levels(&[Level::filled(4, 4, 0)], &ValidityRules::new(Game::Maze)),
        }
    }

    fn count_color(img: &Image, color: Rgb) -> usize {
        img.pixels.chunks(3).filter(|p| *p == color).count()
    }

    #[test]
    fn empty_archive_draws_only_empty_cells() {
        let archive: Archive<Candidate> = Archive::new(vec![10, 10], vec![(0.0, 1.0), (0.0, 10.0)]).unwrap();
        let img = render_heatmap(&archive, HeatmapMetric::Objective, &names()).unwrap();
        assert_eq!(count_color(&img, EMPTY_CELL), 400 * 400 + 400 * BAR_WIDTH);
        assert_eq!(archive_csv(&archive, &names()).lines().count(), 1);
    }

    #[test]
    fn single_elite_colors_one_cell() {
        let mut archive = Archive::new(vec![10, 10], vec![(0.0, 1.0), (0.0, 10.0)]).unwrap();
        archive.insert(candidate(), 1.0, vec![5.0, -3.0], 0);
        let img = render_heatmap(&archive, HeatmapMetric::Objective, &names()).unwrap();
        let plot_empty = count_color(&img, EMPTY_CELL);
        assert_eq!(plot_empty, 400 * 400 - 40 * 40);
        // Clamped to cell (9, 0): bottom-right corner of the plot.
        let csv = archive_csv(&archive, &names());
        assert_eq!(csv.lines().nth(1).unwrap().split(',').take(2).collect::<Vec<_>>(), ["9", "0"]);
        let top = MARGIN + 5 * LABEL_SCALE + 6;
        let left = (0..img.width).find(|&x| img.pixel(x, top) == EMPTY_CELL).unwrap();
        assert_eq!(img.pixel(left + 9 * 40 + 20, top + 9 * 40 + 20), colormap(1.0));
        assert_eq!(img.pixel(left + 20, top + 9 * 40 + 20), EMPTY_CELL);
    }

    #[test]
    fn three_dimensional_archives_are_refused() {
        let archive: Archive<Candidate> = Archive::new(vec![2, 2, 2], vec![(0.0, 1.0); 3]).unwrap();
        assert!(render_heatmap(&archive, HeatmapMetric::Occupancy, &names()).is_err());
        assert!(archive_csv(&archive, &names()).starts_with("cell_0,cell_1,cell_2,"));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [HeatmapMetric::Objective, HeatmapMetric::Diversity, HeatmapMetric::Occupancy] {
            assert_eq!(m.name().parse::<HeatmapMetric>().unwrap(), m);
        }
        assert!("size".parse::<HeatmapMetric>().is_err());
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [68, 1, 84]);
        assert_eq!(colormap(1.0), [253, 231, 37]);
        assert_eq!(colormap(f64::NAN), colormap(0.0));
    }

    #[test]
    fn montage_places_levels_on_a_grid() {
        let a = Level::filled(2, 3, 1);
        let img = level_montage(&[a.clone(), a.clone(), a], Game::Maze, 2, 4, 1);
        assert_eq!((img.width, img.height), (2 * 12 + 3, 2 * 8 + 3));
        assert_eq!(img.pixel(1, 1), tile_color(Game::Maze, 1));
        assert_eq!(img.pixel(0, 0), BACKGROUND);
    }

    #[test]
    fn spread_includes_both_ends() {
        let mut archive = Archive::new(vec![10], vec![(0.0, 10.0)]).unwrap();
        for i in 0..10 {
            archive.insert((), 0.0, vec![i as f64 + 0.5], 0);
        }
        let cells = spread_cells(&archive, 3);
        assert_eq!(cells, vec![vec![0], vec![4], vec![9]]);
    }
}
