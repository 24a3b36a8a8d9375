//! Level representation, per-game tile alphabets, random level sampling and
//! the one-hot state encoding consumed by the cellular automata.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tile index inside a game's alphabet.
pub type Tile = u8;

pub const EMPTY: Tile = 0;
pub const WALL: Tile = 1;
pub const PLAYER: Tile = 2;

pub const SOKOBAN_CRATE: Tile = 3;
pub const SOKOBAN_TARGET: Tile = 4;

pub const ZELDA_KEY: Tile = 3;
pub const ZELDA_DOOR: Tile = 4;
pub const ZELDA_ENEMY: Tile = 5;

/// Length of the Gaussian latent vector fed to decoder and generative CPPN models.
pub const LATENT_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Game {
    Maze,
    Zelda,
    Sokoban,
}

impl Game {
    pub fn alphabet(self) -> TileAlphabet {
        TileAlphabet::for_game(self)
    }

    pub fn name(self) -> &'static str {
        match self {
            Game::Maze => "maze",
            Game::Zelda => "zelda",
            Game::Sokoban => "sokoban",
        }
    }

    /// Default level size as (height, width).
    pub fn default_dims(self) -> (usize, usize) {
        match self {
            Game::Maze | Game::Zelda => (16, 16),
            Game::Sokoban => (10, 10),
        }
    }
}

impl fmt::Display for Game {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Game {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "maze" => Ok(Game::Maze),
            "zelda" => Ok(Game::Zelda),
            "sokoban" => Ok(Game::Sokoban),
            other => Err(Error::Invalid(format!("unknown game `{other}`"))),
        }
    }
}

/// Ordered tile names and their text glyphs. A tile's index is its position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileAlphabet {
    pub game: Game,
    pub tiles: &'static [&'static str],
    pub glyphs: &'static [char],
}

impl TileAlphabet {
    pub fn for_game(game: Game) -> Self {
        match game {
            Game::Maze => TileAlphabet {
                game,
                tiles: &["empty", "wall"],
                glyphs: &['.', '#'],
            },
            Game::Sokoban => TileAlphabet {
                game,
                tiles: &["empty", "wall", "player", "crate", "target"],
                glyphs: &['.', '#', '@', '$', 'X'],
            },
            Game::Zelda => TileAlphabet {
                game,
                tiles: &["empty", "wall", "player", "key", "door", "enemy"],
                glyphs: &['.', '#', '@', 'K', 'D', 'E'],
            },
        }
    }

    pub fn count(&self) -> usize {
        self.tiles.len()
    }

    pub fn glyph(&self, tile: Tile) -> char {
        self.glyphs[tile as usize]
    }

    pub fn tile_for_glyph(&self, glyph: char) -> Option<Tile> {
        self.glyphs.iter().position(|&g| g == glyph).map(|i| i as Tile)
    }
}

/// Game plus level dimensions; everything needed to sample and score levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameSpec {
    pub game: Game,
    pub height: usize,
    pub width: usize,
}

impl GameSpec {
    pub fn new(game: Game, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Invalid(format!(
                "level dimensions must be positive, got {height}x{width}"
            )));
        }
        Ok(GameSpec { game, height, width })
    }

    pub fn default_for(game: Game) -> Self {
        let (height, width) = game.default_dims();
        GameSpec { game, height, width }
    }

    pub fn tile_count(&self) -> usize {
        self.game.alphabet().count()
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

/// A rectangular grid of tile indices, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Level {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<Tile>,
}

impl Level {
    pub fn filled(height: usize, width: usize, tile: Tile) -> Self {
        Level {
            height,
            width,
            cells: vec![tile; height * width],
        }
    }

    pub fn from_rows(rows: &[Vec<Tile>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if height == 0 || width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Invalid("level rows must be non-empty and equal length".into()));
        }
        Ok(Level {
            height,
            width,
            cells: rows.concat(),
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Tile {
        self.cells[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, tile: Tile) {
        self.cells[y * self.width + x] = tile;
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn count(&self, tile: Tile) -> usize {
        self.cells.iter().filter(|&&t| t == tile).count()
    }

    /// Positions (row-major index) of every cell holding `tile`.
    pub fn positions(&self, tile: Tile) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == tile)
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of cells where the two levels hold different tiles.
    pub fn hamming(&self, other: &Level) -> usize {
        debug_assert_eq!(self.cells.len(), other.cells.len());
        self.cells
            .iter()
            .zip(&other.cells)
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn mirror_horizontal(&self) -> Level {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(y, x, self.get(y, self.width - 1 - x));
            }
        }
        out
    }

    pub fn mirror_vertical(&self) -> Level {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(y, x, self.get(self.height - 1 - y, x));
            }
        }
        out
    }

    pub fn rotate_180(&self) -> Level {
        let mut cells = self.cells.clone();
        cells.reverse();
        Level { cells, ..*self }
    }

    /// One text row per grid row, one glyph per tile.
    pub fn to_text(&self, game: Game) -> String {
        let alphabet = game.alphabet();
        let mut out = String::with_capacity(self.height * (self.width + 1));
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(alphabet.glyph(self.get(y, x)));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(game: Game, text: &str) -> Result<Level> {
        let alphabet = game.alphabet();
        let rows = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(y, line)| {
                line.chars()
                    .enumerate()
                    .map(|(x, c)| {
                        alphabet.tile_for_glyph(c).ok_or_else(|| {
                            Error::Parse(format!(
                                "unknown {game} glyph `{c}` at row {y}, column {x}"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Level::from_rows(&rows)
    }
}

/// Uniform i.i.d. tiles; a pure function of `(spec, seed)`.
pub fn sample_random_level(spec: &GameSpec, seed: u64) -> Level {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.tile_count() as Tile;
    let cells = (0..spec.cells()).map(|_| rng.gen_range(0..n)).collect();
    Level {
        height: spec.height,
        width: spec.width,
        cells,
    }
}

/// Standard normal vector of length [`LATENT_DIM`]; a pure function of `seed`.
pub fn sample_latent_vector(seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..LATENT_DIM)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect()
}

/// Channel-major state: `onehot[c * h * w + y * w + x]`, likewise for `aux`.
#[derive(Clone, Debug, PartialEq)]
pub struct NcaState {
    pub tiles: usize,
    pub aux_channels: usize,
    pub height: usize,
    pub width: usize,
    pub onehot: Vec<f32>,
    pub aux: Vec<f32>,
}

impl NcaState {
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn onehot_at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.onehot[c * self.plane() + y * self.width + x]
    }

    /// Discrete level carried by the one-hot channels.
    pub fn level(&self) -> Level {
        decode_argmax(&self.onehot, self.tiles, self.height, self.width)
    }
}

/// One-hot encode `level` over `tiles` channels with `aux_channels` zeroed planes.
pub fn encode_onehot(level: &Level, tiles: usize, aux_channels: usize) -> NcaState {
    let plane = level.len();
    let mut onehot = vec![0.0; tiles * plane];
    for (i, &t) in level.cells.iter().enumerate() {
        onehot[t as usize * plane + i] = 1.0;
    }
    NcaState {
        tiles,
        aux_channels,
        height: level.height,
        width: level.width,
        onehot,
        aux: vec![0.0; aux_channels * plane],
    }
}

/// Channel-wise argmax of a channel-major `tiles x h x w` array. Ties go to the
/// lowest channel index.
pub fn decode_argmax(raw: &[f32], tiles: usize, height: usize, width: usize) -> Level {
    let plane = height * width;
    assert_eq!(raw.len(), tiles * plane, "raw array does not hold {tiles} channels");
    let cells = (0..plane)
        .map(|i| {
            let mut best = 0;
            let mut best_val = raw[i];
            for c in 1..tiles {
                let v = raw[c * plane + i];
                if v > best_val {
                    best = c;
                    best_val = v;
                }
            }
            best as Tile
        })
        .collect();
    Level { height, width, cells }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentKind {
    RandomLevel,
    GaussianVector,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LatentPayload {
    Level(Level),
    Vector(Vec<f32>),
}

/// Generator input regenerated from `rng_seed` and the game spec alone.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSeed {
    pub kind: LatentKind,
    pub payload: LatentPayload,
    pub rng_seed: u64,
}

impl LatentSeed {
    pub fn new(kind: LatentKind, spec: &GameSpec, rng_seed: u64) -> Self {
        let payload = match kind {
            LatentKind::RandomLevel => LatentPayload::Level(sample_random_level(spec, rng_seed)),
            LatentKind::GaussianVector => LatentPayload::Vector(sample_latent_vector(rng_seed)),
        };
        LatentSeed {
            kind,
            payload,
            rng_seed,
        }
    }

    pub fn level(&self) -> Option<&Level> {
        match &self.payload {
            LatentPayload::Level(l) => Some(l),
            LatentPayload::Vector(_) => None,
        }
    }

    pub fn vector(&self) -> Option<&[f32]> {
        match &self.payload {
            LatentPayload::Vector(v) => Some(v),
            LatentPayload::Level(_) => None,
        }
    }
}
