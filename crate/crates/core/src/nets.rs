//! Generator networks backed by a flat parameter vector.
//!
//! Parameters are packed layer by layer. Within a layer the weight tensor
//! comes first in row-major order, followed by the bias vector:
//!
//! | layer            | weight shape                 |
//! |------------------|------------------------------|
//! | conv             | `[out][in][k][k]`            |
//! | transposed conv  | `[in][out][k][k]`            |
//! | dense            | `[out][in]`                  |

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    decode_argmax, encode_onehot, GameSpec, LatentKind, LatentSeed, Level, NcaState, Tile,
    LATENT_DIM,
};

pub const NCA_HIDDEN: usize = 32;
pub const AUX_CHANNELS: usize = 3;
pub const DECODER_HIDDEN: usize = 16;
pub const CPPN_HIDDEN: usize = 32;
/// Sine frequency of the periodic CPPN layers.
pub const SIREN_OMEGA: f32 = 30.0;

/// Spatial size of the tiled latent grid fed to the decoder.
const DECODER_BASE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    Nca,
    AuxNca,
    Decoder,
    SinCppn,
    GenSinCppn,
}

impl ArchKind {
    pub const ALL: [ArchKind; 5] = [
        ArchKind::Nca,
        ArchKind::AuxNca,
        ArchKind::Decoder,
        ArchKind::SinCppn,
        ArchKind::GenSinCppn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Nca => "nca",
            ArchKind::AuxNca => "aux-nca",
            ArchKind::Decoder => "decoder",
            ArchKind::SinCppn => "sin-cppn",
            ArchKind::GenSinCppn => "gen-sin-cppn",
        }
    }

    /// The latent input this architecture consumes, if any.
    pub fn latent_kind(self) -> Option<LatentKind> {
        match self {
            ArchKind::Nca | ArchKind::AuxNca => Some(LatentKind::RandomLevel),
            ArchKind::Decoder | ArchKind::GenSinCppn => Some(LatentKind::GaussianVector),
            ArchKind::SinCppn => None,
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, ArchKind::Nca | ArchKind::AuxNca)
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown architecture `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerShape {
    Conv { out: usize, inp: usize, kernel: usize },
    ConvTranspose { inp: usize, out: usize, kernel: usize },
    Dense { out: usize, inp: usize },
}

impl LayerShape {
    pub fn weights(&self) -> usize {
        match *self {
            LayerShape::Conv { out, inp, kernel } | LayerShape::ConvTranspose { inp, out, kernel } => {
                out * inp * kernel * kernel
            }
            LayerShape::Dense { out, inp } => out * inp,
        }
    }

    pub fn biases(&self) -> usize {
        match *self {
            LayerShape::Conv { out, .. }
            | LayerShape::ConvTranspose { out, .. }
            | LayerShape::Dense { out, .. } => out,
        }
    }

    pub fn params(&self) -> usize {
        self.weights() + self.biases()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub kind: ArchKind,
    pub tiles: usize,
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub aux_channels: usize,
    pub latent_dim: usize,
}

impl ArchitectureDescriptor {
    /// Default architecture of `kind` for a game.
    pub fn new(kind: ArchKind, spec: &GameSpec) -> Self {
        let (hidden, aux_channels, latent_dim) = match kind {
            ArchKind::Nca => (NCA_HIDDEN, 0, 0),
            ArchKind::AuxNca => (NCA_HIDDEN, AUX_CHANNELS, 0),
            ArchKind::Decoder => (DECODER_HIDDEN, 0, LATENT_DIM),
            ArchKind::SinCppn => (CPPN_HIDDEN, 0, 0),
            ArchKind::GenSinCppn => (CPPN_HIDDEN, 0, LATENT_DIM),
        };
        ArchitectureDescriptor {
            kind,
            tiles: spec.tile_count(),
            height: spec.height,
            width: spec.width,
            hidden,
            aux_channels,
            latent_dim,
        }
    }

    /// Number of stride-2 upsampling layers the decoder needs to cover the level.
    fn decoder_layers(&self) -> usize {
        let target = self.height.max(self.width);
        let mut size = DECODER_BASE * 2;
        let mut layers = 1;
        while size < target {
            size *= 2;
            layers += 1;
        }
        layers
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let n = self.tiles;
        match self.kind {
            ArchKind::Nca | ArchKind::AuxNca => {
                let c = n + self.aux_channels;
                vec![
                    LayerShape::Conv { out: self.hidden, inp: c, kernel: 3 },
                    LayerShape::Conv { out: self.hidden, inp: self.hidden, kernel: 1 },
                    LayerShape::Conv { out: c, inp: self.hidden, kernel: 1 },
                ]
            }
            ArchKind::Decoder => {
                let layers = self.decoder_layers();
                (0..layers)
                    .map(|i| LayerShape::ConvTranspose {
                        inp: if i == 0 { self.latent_dim + 2 } else { self.hidden },
                        out: if i + 1 == layers { n } else { self.hidden },
                        kernel: 4,
                    })
                    .collect()
            }
            ArchKind::SinCppn | ArchKind::GenSinCppn => vec![
                LayerShape::Dense { out: self.hidden, inp: 2 + self.latent_dim },
                LayerShape::Dense { out: self.hidden, inp: self.hidden },
                LayerShape::Dense { out: n, inp: self.hidden },
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::params).sum()
    }
}

/// Exact parameter count of an architecture.
pub fn param_count(descriptor: &ArchitectureDescriptor) -> usize {
    descriptor.param_count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Genome {
    pub descriptor: ArchitectureDescriptor,
    pub params: Vec<f32>,
}

impl Genome {
    pub fn new(descriptor: ArchitectureDescriptor, params: Vec<f32>) -> Result<Self> {
        let expected = descriptor.param_count();
        if params.len() != expected {
            return Err(Error::Invalid(format!(
                "{} genome needs {expected} parameters, got {}",
                descriptor.kind,
                params.len()
            )));
        }
        Ok(Genome { descriptor, params })
    }

    pub fn zeros(descriptor: ArchitectureDescriptor) -> Self {
        Genome {
            params: vec![0.0; descriptor.param_count()],
            descriptor,
        }
    }

    /// Splits the flat vector into per-layer (weights, bias) slices.
    pub fn unpack(&self) -> Vec<(&[f32], &[f32])> {
        let mut rest = self.params.as_slice();
        self.descriptor
            .layer_shapes()
            .iter()
            .map(|shape| {
                let (w, tail) = rest.split_at(shape.weights());
                let (b, tail) = tail.split_at(shape.biases());
                rest = tail;
                (w, b)
            })
            .collect()
    }

    /// Inverse of [`Genome::unpack`].
    pub fn pack(descriptor: ArchitectureDescriptor, layers: &[(&[f32], &[f32])]) -> Result<Self> {
        let params = layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect();
        Genome::new(descriptor, params)
    }
}

/// Result of running a generator on one latent seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub level: Level,
    pub steps: usize,
    pub converged: bool,
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// A genome unpacked into layouts suited to its forward pass.
#[derive(Clone, Debug)]
pub enum Generator {
    Nca(NcaNet),
    Decoder(DecoderNet),
    Cppn(CppnNet),
}

impl Generator {
    pub fn new(genome: &Genome) -> Self {
        match genome.descriptor.kind {
            ArchKind::Nca | ArchKind::AuxNca => Generator::Nca(NcaNet::new(genome)),
            ArchKind::Decoder => Generator::Decoder(DecoderNet::new(genome)),
            ArchKind::SinCppn | ArchKind::GenSinCppn => Generator::Cppn(CppnNet::new(genome)),
        }
    }

    /// Produces one level. NCA kinds iterate up to `max_steps`; the single-pass
    /// kinds ignore it and report one step.
    pub fn generate(&self, seed: Option<&LatentSeed>, max_steps: usize) -> Result<Generation> {
        let missing = |what: &str| Error::Invalid(format!("generator needs a {what} latent seed"));
        match self {
            Generator::Nca(net) => {
                let level = seed.and_then(LatentSeed::level).ok_or_else(|| missing("random-level"))?;
                Ok(net.episode(level, max_steps))
            }
            Generator::Decoder(net) => {
                let z = seed.and_then(LatentSeed::vector).ok_or_else(|| missing("gaussian"))?;
                Ok(single_pass(net.forward(z)))
            }
            Generator::Cppn(net) => {
                let z = if net.generative {
                    Some(seed.and_then(LatentSeed::vector).ok_or_else(|| missing("gaussian"))?)
                } else {
                    None
                };
                Ok(single_pass(net.level(z)))
            }
        }
    }
}

impl Generator {
    /// Generates one level per seed. NCA rule evaluations are shared across
    /// the batch, so this is much cheaper than repeated `generate` calls.
    pub fn generate_batch(&self, seeds: &[Option<&LatentSeed>], max_steps: usize) -> Result<Vec<Generation>> {
        match self {
            Generator::Nca(net) => {
                let inits = seeds
                    .iter()
                    .map(|s| {
                        s.and_then(LatentSeed::level)
                            .ok_or_else(|| Error::Invalid("generator needs a random-level latent seed".into()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(net.episodes(&inits, max_steps))
            }
            _ => seeds.iter().map(|s| self.generate(*s, max_steps)).collect(),
        }
    }
}

fn single_pass(level: Level) -> Generation {
    Generation {
        level,
        steps: 1,
        converged: true,
    }
}

/// Three-layer convolutional update rule: 3x3 conv + ReLU, 1x1 conv + ReLU,
/// 1x1 conv + sigmoid. Borders are zero padded.
#[derive(Clone, Debug)]
pub struct NcaNet {
    tiles: usize,
    aux: usize,
    hidden: usize,
    height: usize,
    width: usize,
    /// `[in][ky][kx][hidden]`
    w1: Vec<f32>,
    b1: Vec<f32>,
    /// `[hidden in][hidden out]`
    w2: Vec<f32>,
    b2: Vec<f32>,
    /// `[hidden][out]`
    w3: Vec<f32>,
    b3: Vec<f32>,
}

struct Scratch {
    h1: Vec<f32>,
    h2: Vec<f32>,
    out: Vec<f32>,
}

impl NcaNet {
    pub fn new(genome: &Genome) -> Self {
        let d = &genome.descriptor;
        assert!(d.kind.is_iterative(), "not an NCA genome");
        let layers = genome.unpack();
        let c = d.tiles + d.aux_channels;
        let hid = d.hidden;

        let (cw1, b1) = layers[0];
        let mut w1 = vec![0.0; cw1.len()];
        for o in 0..hid {
            for i in 0..c {
                for k in 0..9 {
                    w1[(i * 9 + k) * hid + o] = cw1[(o * c + i) * 9 + k];
                }
            }
        }
        let (cw2, b2) = layers[1];
        let mut w2 = vec![0.0; cw2.len()];
        for o in 0..hid {
            for i in 0..hid {
                w2[i * hid + o] = cw2[o * hid + i];
            }
        }
        let (cw3, b3) = layers[2];
        let mut w3 = vec![0.0; cw3.len()];
        for o in 0..c {
            for i in 0..hid {
                w3[i * c + o] = cw3[o * hid + i];
            }
        }
        NcaNet {
            tiles: d.tiles,
            aux: d.aux_channels,
            hidden: hid,
            height: d.height,
            width: d.width,
            w1,
            b1: b1.to_vec(),
            w2,
            b2: b2.to_vec(),
            w3,
            b3: b3.to_vec(),
        }
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            h1: vec![0.0; self.hidden],
            h2: vec![0.0; self.hidden],
            out: vec![0.0; self.tiles + self.aux],
        }
    }

    /// Sigmoid outputs for cell `(y, x)` given the discrete level and aux planes.
    fn cell(&self, level: &Level, aux: &[f32], y: usize, x: usize, s: &mut Scratch) {
        let hid = self.hidden;
        let plane = self.height * self.width;
        s.h1.copy_from_slice(&self.b1);
        for ky in 0..3 {
            let Some(ny) = (y + ky).checked_sub(1).filter(|&v| v < self.height) else {
                continue;
            };
            for kx in 0..3 {
                let Some(nx) = (x + kx).checked_sub(1).filter(|&v| v < self.width) else {
                    continue;
                };
                let k = ky * 3 + kx;
                let tile = level.get(ny, nx) as usize;
                let row = &self.w1[(tile * 9 + k) * hid..][..hid];
                for (h, w) in s.h1.iter_mut().zip(row) {
                    *h += w;
                }
                for a in 0..self.aux {
                    let v = aux[a * plane + ny * self.width + nx];
                    let row = &self.w1[((self.tiles + a) * 9 + k) * hid..][..hid];
                    for (h, w) in s.h1.iter_mut().zip(row) {
                        *h += v * w;
                    }
                }
            }
        }
        self.finish_cell(s);
    }

    /// Hidden layer 2 and the output layer, from `s.h1` pre-activations.
    fn finish_cell(&self, s: &mut Scratch) {
        let hid = self.hidden;
        s.h2.copy_from_slice(&self.b2);
        for (i, &v) in s.h1.iter().enumerate() {
            if v > 0.0 {
                let row = &self.w2[i * hid..][..hid];
                for (h, w) in s.h2.iter_mut().zip(row) {
                    *h += v * w;
                }
            }
        }
        self.finish_output(s);
    }

    fn finish_output(&self, s: &mut Scratch) {
        let c = self.tiles + self.aux;
        s.out.copy_from_slice(&self.b3);
        for (i, &v) in s.h2.iter().enumerate() {
            if v > 0.0 {
                let row = &self.w3[i * c..][..c];
                for (o, w) in s.out.iter_mut().zip(row) {
                    *o += v * w;
                }
            }
        }
        for o in s.out.iter_mut() {
            *o = sigmoid(*o);
        }
    }

    fn argmax_tile(&self, out: &[f32]) -> Tile {
        let mut best = 0;
        for c in 1..self.tiles {
            if out[c] > out[best] {
                best = c;
            }
        }
        best as Tile
    }

    /// One update: the first `tiles` outputs are re-discretized by argmax,
    /// aux outputs carry forward as raw sigmoid values.
    pub fn step(&self, state: &NcaState) -> NcaState {
        assert_eq!(state.tiles, self.tiles, "tile channel mismatch");
        assert_eq!(state.aux_channels, self.aux, "aux channel mismatch");
        let level = state.level();
        let (next, aux) = self.full_step(&level, &state.aux);
        let mut out = encode_onehot(&next, self.tiles, self.aux);
        out.aux = aux;
        out
    }

    fn full_step(&self, level: &Level, aux: &[f32]) -> (Level, Vec<f32>) {
        let plane = self.height * self.width;
        let mut s = self.scratch();
        let mut next = level.clone();
        let mut next_aux = vec![0.0; self.aux * plane];
        for y in 0..self.height {
            for x in 0..self.width {
                self.cell(level, aux, y, x, &mut s);
                let i = y * self.width + x;
                next.cells[i] = self.argmax_tile(&s.out);
                for a in 0..self.aux {
                    next_aux[a * plane + i] = s.out[self.tiles + a];
                }
            }
        }
        (next, next_aux)
    }

    /// Iterates the update rule from `init`. Plain NCAs stop at the first step
    /// that leaves the level unchanged; NCAs with aux channels always run
    /// `max_steps` since their hidden memory may still be moving.
    pub fn episode(&self, init: &Level, max_steps: usize) -> Generation {
        assert_eq!((init.height, init.width), (self.height, self.width), "level size mismatch");
        if self.aux > 0 {
            let mut level = init.clone();
            let mut aux = vec![0.0; self.aux * level.len()];
            let mut converged = false;
            for _ in 0..max_steps {
                let (next, next_aux) = self.full_step(&level, &aux);
                converged = next == level;
                level = next;
                aux = next_aux;
            }
            return Generation {
                level,
                steps: max_steps,
                converged,
            };
        }

        self.episode_cached(init, max_steps, &mut RuleCache::new(self.tiles))
    }

    /// Plain-NCA episode sharing a neighbourhood rule table across calls.
    fn episode_cached(&self, init: &Level, max_steps: usize, cache: &mut RuleCache) -> Generation {
        let (h, w) = (self.height, self.width);
        let stride = w + 2;
        let base = cache.base;
        let base3 = base * base * base;
        let mut s = self.scratch();
        // Tile symbols (tile + 1) with a ring of padding symbols 0.
        let mut cur = vec![0u8; (h + 2) * stride];
        for y in 0..h {
            for x in 0..w {
                cur[(y + 1) * stride + x + 1] = init.cells[y * w + x] + 1;
            }
        }
        let mut next = cur.clone();
        // Vertical 3-cell code centred on each padded cell of the interior rows.
        let mut column = vec![0u32; h * stride];
        // Every state of the trajectory so far, `history[t]` after step `t`.
        let mut history = vec![cur.clone()];
        let mut hashes = vec![symbol_hash(&cur)];
        let unpad = |buf: &[u8]| {
            let mut level = Level::filled(h, w, 0);
            for y in 0..h {
                for x in 0..w {
                    level.cells[y * w + x] = buf[(y + 1) * stride + x + 1] - 1;
                }
            }
            level
        };
        for step in 1..=max_steps {
            for y in 0..h {
                let rows = &cur[y * stride..(y + 3) * stride];
                let (up, rest) = rows.split_at(stride);
                let (mid, down) = rest.split_at(stride);
                for (((c, &u), &m), &d) in column[y * stride..(y + 1) * stride].iter_mut().zip(up).zip(mid).zip(down) {
                    *c = (u as u32 * base + m as u32) * base + d as u32;
                }
            }
            let mut any = false;
            for y in 0..h {
                let col = &column[y * stride..(y + 1) * stride];
                let old = &cur[(y + 1) * stride + 1..][..w];
                let out = &mut next[(y + 1) * stride + 1..][..w];
                for x in 0..w {
                    let code = (col[x] * base3 + col[x + 1]) * base3 + col[x + 2];
                    let t = cache.lookup(code, |c| self.rule(c, base, &mut s)) + 1;
                    any |= t != old[x];
                    out[x] = t;
                }
            }
            std::mem::swap(&mut cur, &mut next);
            if !any {
                return Generation {
                    level: unpad(&cur),
                    steps: step,
                    converged: true,
                };
            }
            // The update is a deterministic map on discrete levels, so once a
            // level recurs the remaining trajectory is a known cycle.
            let hash = symbol_hash(&cur);
            if let Some(seen) = (0..history.len()).rev().find(|&j| hashes[j] == hash && history[j] == cur) {
                let period = history.len() - seen;
                let offset = (max_steps - step) % period;
                return Generation {
                    level: unpad(&history[seen + offset]),
                    steps: max_steps,
                    converged: false,
                };
            }
            hashes.push(hash);
            history.push(cur.clone());
        }
        Generation {
            level: unpad(&cur),
            steps: max_steps,
            converged: false,
        }
    }

    /// Next tile for the neighbourhood encoded in `code` (see `RuleCache`).
    /// Sums run in the same order as `cell`, so results are bit-identical.
    fn rule(&self, mut code: u32, base: u32, s: &mut Scratch) -> Tile {
        // Digits are column-major: index kx * 3 + ky.
        let mut digits = [0u32; 9];
        for d in digits.iter_mut().rev() {
            *d = code % base;
            code /= base;
        }
        let mut neighbours = [None; 9];
        for (k, n) in neighbours.iter_mut().enumerate() {
            let d = digits[(k % 3) * 3 + k / 3];
            *n = d.checked_sub(1).map(|t| t as usize);
        }
        if self.hidden == NCA_HIDDEN {
            return self.rule_fixed::<NCA_HIDDEN>(&neighbours, s);
        }
        let hid = self.hidden;
        s.h1.copy_from_slice(&self.b1);
        for (k, n) in neighbours.iter().enumerate() {
            if let Some(tile) = n {
                for (h, w) in s.h1.iter_mut().zip(&self.w1[(tile * 9 + k) * hid..][..hid]) {
                    *h += w;
                }
            }
        }
        self.finish_cell(s);
        self.argmax_tile(&s.out)
    }

    fn rule_fixed<const H: usize>(&self, neighbours: &[Option<usize>; 9], s: &mut Scratch) -> Tile {
        let mut h1: [f32; H] = self.b1[..].try_into().expect("hidden width");
        for (k, n) in neighbours.iter().enumerate() {
            if let Some(tile) = n {
                let row: &[f32; H] = self.w1[(tile * 9 + k) * H..][..H].try_into().expect("hidden width");
                for j in 0..H {
                    h1[j] += row[j];
                }
            }
        }
        let mut h2: [f32; H] = self.b2[..].try_into().expect("hidden width");
        for (i, &v) in h1.iter().enumerate() {
            if v > 0.0 {
                let row: &[f32; H] = self.w2[i * H..][..H].try_into().expect("hidden width");
                for j in 0..H {
                    h2[j] += v * row[j];
                }
            }
        }
        s.h2.copy_from_slice(&h2);
        self.finish_output(s);
        self.argmax_tile(&s.out)
    }

    /// Episodes for several starting levels, sharing one rule table.
    pub fn episodes(&self, inits: &[&Level], max_steps: usize) -> Vec<Generation> {
        if self.aux > 0 {
            return inits.iter().map(|l| self.episode(l, max_steps)).collect();
        }
        let mut cache = RuleCache::new(self.tiles);
        inits
            .iter()
            .map(|l| {
                assert_eq!((l.height, l.width), (self.height, self.width), "level size mismatch");
                self.episode_cached(l, max_steps, &mut cache)
            })
            .collect()
    }
}

/// Memoized update rule of a plain NCA. Without aux channels the next tile
/// is a pure function of the 3x3 tile neighbourhood (padding counts as its
/// own symbol), so each distinct neighbourhood is evaluated once.
struct RuleCache {
    base: u32,
    dense: Vec<u8>,
    sparse: HashMap<u32, u8>,
}

const RULE_UNKNOWN: u8 = u8::MAX;
const DENSE_RULE_LIMIT: u64 = 1 << 16;

fn symbol_hash(symbols: &[u8]) -> u64 {
    // FNV-1a.
    symbols
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &t| (h ^ t as u64).wrapping_mul(0x0100_0000_01b3))
}

impl RuleCache {
    fn new(tiles: usize) -> Self {
        let base = tiles as u32 + 1;
        let size = (base as u64).pow(9);
        RuleCache {
            base,
            dense: if size <= DENSE_RULE_LIMIT {
                vec![RULE_UNKNOWN; size as usize]
            } else {
                Vec::new()
            },
            sparse: HashMap::new(),
        }
    }

    #[inline]
    fn lookup(&mut self, code: u32, compute: impl FnOnce(u32) -> Tile) -> Tile {
        if self.dense.is_empty() {
            *self.sparse.entry(code).or_insert_with(|| compute(code))
        } else {
            let slot = &mut self.dense[code as usize];
            if *slot == RULE_UNKNOWN {
                *slot = compute(code);
            }
            *slot
        }
    }
}

/// Applies one update to `state`.
pub fn nca_step(genome: &Genome, state: &NcaState) -> NcaState {
    NcaNet::new(genome).step(state)
}

/// Runs an NCA episode from the random level carried by `seed`.
pub fn generate_episode(genome: &Genome, seed: &LatentSeed, max_steps: usize) -> Result<Generation> {
    if !genome.descriptor.kind.is_iterative() {
        return Err(Error::Invalid(format!("{} is not an NCA", genome.descriptor.kind)));
    }
    Generator::new(genome).generate(Some(seed), max_steps)
}

/// Cell-centre coordinate of index `i` on an axis of `n` cells, in `[-1, 1]`.
#[inline]
fn norm_coord(i: usize, n: usize) -> f32 {
    if n == 1 {
        0.0
    } else {
        2.0 * i as f32 / (n - 1) as f32 - 1.0
    }
}

/// Stack of stride-2 transposed convolutions (kernel 4, padding 1) mapping a
/// 4x4 grid of tiled latent + (x, y) to the level, centre-cropped if needed.
#[derive(Clone, Debug)]
pub struct DecoderNet {
    tiles: usize,
    height: usize,
    width: usize,
    latent_dim: usize,
    /// (in, out, weights `[in][out][4][4]`, bias)
    layers: Vec<(usize, usize, Vec<f32>, Vec<f32>)>,
}

impl DecoderNet {
    pub fn new(genome: &Genome) -> Self {
        let d = &genome.descriptor;
        assert_eq!(d.kind, ArchKind::Decoder, "not a decoder genome");
        let layers = d
            .layer_shapes()
            .iter()
            .zip(genome.unpack())
            .map(|(shape, (w, b))| match *shape {
                LayerShape::ConvTranspose { inp, out, .. } => (inp, out, w.to_vec(), b.to_vec()),
                _ => unreachable!("decoder layers are transposed convolutions"),
            })
            .collect();
        DecoderNet {
            tiles: d.tiles,
            height: d.height,
            width: d.width,
            latent_dim: d.latent_dim,
            layers,
        }
    }

    /// Channel-major logits of size `tiles x h x w`.
    pub fn logits(&self, latent: &[f32]) -> Vec<f32> {
        assert_eq!(latent.len(), self.latent_dim, "latent length mismatch");
        let mut size = DECODER_BASE;
        let plane = size * size;
        let cin = self.latent_dim + 2;
        let mut act = vec![0.0f32; cin * plane];
        for y in 0..size {
            for x in 0..size {
                let i = y * size + x;
                for (c, &z) in latent.iter().enumerate() {
                    act[c * plane + i] = z;
                }
                act[self.latent_dim * plane + i] = norm_coord(x, size);
                act[(self.latent_dim + 1) * plane + i] = norm_coord(y, size);
            }
        }

        let last = self.layers.len() - 1;
        for (li, (inp, out, w, b)) in self.layers.iter().enumerate() {
            let osize = size * 2;
            let oplane = osize * osize;
            let mut next = vec![0.0f32; out * oplane];
            for (o, &bias) in b.iter().enumerate() {
                next[o * oplane..(o + 1) * oplane].fill(bias);
            }
            for i in 0..*inp {
                for iy in 0..size {
                    for ix in 0..size {
                        let v = act[i * size * size + iy * size + ix];
                        if v == 0.0 {
                            continue;
                        }
                        for ky in 0..4 {
                            let Some(oy) = (iy * 2 + ky).checked_sub(1).filter(|&q| q < osize) else {
                                continue;
                            };
                            for kx in 0..4 {
                                let Some(ox) = (ix * 2 + kx).checked_sub(1).filter(|&q| q < osize)
                                else {
                                    continue;
                                };
                                for o in 0..*out {
                                    next[o * oplane + oy * osize + ox] +=
                                        v * w[((i * out + o) * 4 + ky) * 4 + kx];
                                }
                            }
                        }
                    }
                }
            }
            if li != last {
                next.iter_mut().for_each(|a| *a = a.max(0.0));
            }
            act = next;
            size = osize;
        }

        let (oy, ox) = ((size - self.height) / 2, (size - self.width) / 2);
        let plane = size * size;
        let mut logits = Vec::with_capacity(self.tiles * self.height * self.width);
        for c in 0..self.tiles {
            for y in 0..self.height {
                let row = c * plane + (y + oy) * size + ox;
                logits.extend_from_slice(&act[row..row + self.width]);
            }
        }
        logits
    }

    pub fn forward(&self, latent: &[f32]) -> Level {
        decode_argmax(&self.logits(latent), self.tiles, self.height, self.width)
    }
}

/// Single-pass decoder generation.
pub fn decoder_forward(genome: &Genome, latent: &[f32]) -> Level {
    DecoderNet::new(genome).forward(latent)
}

/// Fixed-topology CPPN: two sine hidden layers and a linear output, evaluated
/// per cell on normalized coordinates (plus the latent, when generative).
///
/// Genome entries are scaled per layer so that a genome drawn uniformly from
/// `[-1, 1]` reproduces the periodic-network initialization: `1/fan_in` for
/// the first layer and `sqrt(6/fan_in)/omega` afterwards.
#[derive(Clone, Debug)]
pub struct CppnNet {
    tiles: usize,
    height: usize,
    width: usize,
    latent_dim: usize,
    generative: bool,
    /// (out, in, scaled weights `[out][in]`, scaled bias)
    layers: Vec<(usize, usize, Vec<f32>, Vec<f32>)>,
}

/// Per-layer multiplier applied to CPPN genome entries.
pub fn cppn_layer_scale(layer: usize, fan_in: usize) -> f32 {
    if layer == 0 {
        1.0 / fan_in as f32
    } else {
        (6.0 / fan_in as f32).sqrt() / SIREN_OMEGA
    }
}

impl CppnNet {
    pub fn new(genome: &Genome) -> Self {
        let d = &genome.descriptor;
        assert!(
            matches!(d.kind, ArchKind::SinCppn | ArchKind::GenSinCppn),
            "not a CPPN genome"
        );
        let layers = d
            .layer_shapes()
            .iter()
            .zip(genome.unpack())
            .enumerate()
            .map(|(li, (shape, (w, b)))| match *shape {
                LayerShape::Dense { out, inp } => {
                    let s = cppn_layer_scale(li, inp);
                    (
                        out,
                        inp,
                        w.iter().map(|v| v * s).collect(),
                        b.iter().map(|v| v * s).collect(),
                    )
                }
                _ => unreachable!("CPPN layers are dense"),
            })
            .collect();
        CppnNet {
            tiles: d.tiles,
            height: d.height,
            width: d.width,
            latent_dim: d.latent_dim,
            generative: d.kind == ArchKind::GenSinCppn,
            layers,
        }
    }

    pub fn is_generative(&self) -> bool {
        self.generative
    }

    /// Tile logits at cell `(x, y)`.
    pub fn forward(&self, latent: Option<&[f32]>, x: usize, y: usize) -> Vec<f32> {
        self.logits(latent, &[(x, y)])
    }

    pub fn level(&self, latent: Option<&[f32]>) -> Level {
        let cells: Vec<(usize, usize)> = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .collect();
        let logits = self.logits(latent, &cells);
        decode_argmax(&logits, self.tiles, self.height, self.width)
    }

    /// Logits laid out `[tile][cell]` for the given `(x, y)` cells.
    ///
    /// The first layer splits as `sin(a(x) + b(y))` with the latent folded
    /// into `a`, so its sines are taken per column and per row only.
    fn logits(&self, latent: Option<&[f32]>, cells: &[(usize, usize)]) -> Vec<f32> {
        let z: &[f32] = if self.generative {
            let z = latent.expect("generative CPPN needs a latent vector");
            assert_eq!(z.len(), self.latent_dim, "latent length mismatch");
            z
        } else {
            &[]
        };
        let (h, inp, w0, b0) = &self.layers[0];
        let (h, inp) = (*h, *inp);
        let offset: Vec<f32> = (0..h)
            .map(|o| b0[o] + w0[o * inp + 2..(o + 1) * inp].iter().zip(z).map(|(w, v)| w * v).sum::<f32>())
            .collect();
        let cols: Vec<(f32, f32)> = (0..self.width)
            .flat_map(|x| {
                let cx = norm_coord(x, self.width);
                let offset = &offset;
                (0..h).map(move |o| (SIREN_OMEGA * (offset[o] + w0[o * inp] * cx)).sin_cos())
            })
            .collect();
        let rows: Vec<(f32, f32)> = (0..self.height)
            .flat_map(|y| {
                let cy = norm_coord(y, self.height);
                (0..h).map(move |o| (SIREN_OMEGA * w0[o * inp + 1] * cy).sin_cos())
            })
            .collect();

        let n = cells.len();
        let mut act = vec![0.0f32; h * n];
        for o in 0..h {
            let row = &mut act[o * n..(o + 1) * n];
            for (v, &(x, y)) in row.iter_mut().zip(cells) {
                let (sa, ca) = cols[x * h + o];
                let (sb, cb) = rows[y * h + o];
                *v = sa * cb + ca * sb;
            }
        }

        let last = self.layers.len() - 1;
        for (li, (out, inp, w, b)) in self.layers.iter().enumerate().skip(1) {
            let mut next = vec![0.0f32; out * n];
            for o in 0..*out {
                let dst = &mut next[o * n..(o + 1) * n];
                dst.fill(b[o]);
                for i in 0..*inp {
                    let wi = w[o * inp + i];
                    for (d, a) in dst.iter_mut().zip(&act[i * n..(i + 1) * n]) {
                        *d += wi * a;
                    }
                }
                if li != last {
                    dst.iter_mut().for_each(|v| *v = (SIREN_OMEGA * *v).sin());
                }
            }
            act = next;
        }
        debug_assert_eq!(act.len(), self.tiles * n);
        act
    }
}

/// CPPN tile logits for one cell.
pub fn cppn_forward(genome: &Genome, latent: Option<&[f32]>, x: usize, y: usize) -> Vec<f32> {
    CppnNet::new(genome).forward(latent, x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sample_random_level, Game, WALL};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desc(kind: ArchKind, game: Game) -> ArchitectureDescriptor {
        ArchitectureDescriptor::new(kind, &GameSpec::default_for(game))
    }

    fn random_genome(d: ArchitectureDescriptor, seed: u64, scale: f32) -> Genome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..d.param_count()).map(|_| rng.gen_range(-scale..scale)).collect();
        Genome::new(d, params).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(param_count(&desc(ArchKind::Nca, Game::Maze)), 1_730);
        assert_eq!(param_count(&desc(ArchKind::Nca, Game::Zelda)), 3_014);
        let zelda_decoder = param_count(&desc(ArchKind::Decoder, Game::Zelda));
        assert!((4_000..=7_000).contains(&zelda_decoder), "{zelda_decoder}");
        assert_eq!(zelda_decoder, 18 * 16 * 16 + 16 + 16 * 6 * 16 + 6);
        assert_eq!(param_count(&desc(ArchKind::GenSinCppn, Game::Maze)), 18 * 32 + 32 + 32 * 32 + 32 + 32 * 2 + 2);
        assert_eq!(param_count(&desc(ArchKind::SinCppn, Game::Maze)), 2 * 32 + 32 + 32 * 32 + 32 + 32 * 2 + 2);
    }

    #[test]
    fn aux_count_matches_wider_plain_nca() {
        for game in [Game::Maze, Game::Zelda, Game::Sokoban] {
            let aux = desc(ArchKind::AuxNca, game);
            let mut plain = desc(ArchKind::Nca, game);
            plain.tiles += AUX_CHANNELS;
            assert_eq!(aux.param_count(), plain.param_count());
        }
    }

    #[test]
    fn genome_length_is_checked() {
        let d = desc(ArchKind::Nca, Game::Maze);
        assert!(Genome::new(d, vec![0.0; 10]).is_err());
    }

    #[test]
    fn zero_nca_step_gives_tile_zero() {
        let d = desc(ArchKind::Nca, Game::Zelda);
        let g = Genome::zeros(d);
        let spec = GameSpec::default_for(Game::Zelda);
        let state = encode_onehot(&sample_random_level(&spec, 3), 6, 0);
        let next = nca_step(&g, &state);
        assert!(next.level().cells.iter().all(|&t| t == 0));
    }

    #[test]
    fn zero_nca_converges_at_step_two() {
        let spec = GameSpec::default_for(Game::Maze);
        let g = Genome::zeros(desc(ArchKind::Nca, Game::Maze));
        let seed = LatentSeed::new(LatentKind::RandomLevel, &spec, 11);
        let out = generate_episode(&g, &seed, 50).unwrap();
        assert_eq!(out.steps, 2);
        assert!(out.converged);
        assert_eq!(out.level, Level::filled(16, 16, 0));
    }

    #[test]
    fn aux_nca_runs_all_steps() {
        let spec = GameSpec::default_for(Game::Maze);
        let g = random_genome(desc(ArchKind::AuxNca, Game::Maze), 2, 0.3);
        let seed = LatentSeed::new(LatentKind::RandomLevel, &spec, 11);
        assert_eq!(generate_episode(&g, &seed, 17).unwrap().steps, 17);
    }

    #[test]
    fn aux_outputs_carry_forward() {
        let spec = GameSpec::default_for(Game::Maze);
        let g = random_genome(desc(ArchKind::AuxNca, Game::Maze), 5, 0.5);
        let state = encode_onehot(&sample_random_level(&spec, 1), 2, AUX_CHANNELS);
        let next = nca_step(&g, &state);
        assert_eq!(next.aux.len(), AUX_CHANNELS * 256);
        assert!(next.aux.iter().all(|&a| (0.0..=1.0).contains(&a)));
        assert!(next.aux.iter().any(|&a| a != 0.5));
    }

    /// Dense reference: direct convolution over the channel-major one-hot state.
    fn dense_step(g: &Genome, state: &NcaState) -> NcaState {
        let d = g.descriptor;
        let (h, w, hid) = (d.height, d.width, d.hidden);
        let c = d.tiles + d.aux_channels;
        let plane = h * w;
        let input: Vec<f32> = state.onehot.iter().chain(&state.aux).copied().collect();
        let layers = g.unpack();
        let mut h1 = vec![0.0f32; hid * plane];
        for o in 0..hid {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = layers[0].1[o];
                    for i in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (ny, nx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                                    continue;
                                }
                                acc += layers[0].0[(o * c + i) * 9 + ky * 3 + kx]
                                    * input[i * plane + ny as usize * w + nx as usize];
                            }
                        }
                    }
                    h1[o * plane + y * w + x] = acc.max(0.0);
                }
            }
        }
        let pointwise = |src: &[f32], cin: usize, cout: usize, (wt, b): (&[f32], &[f32])| {
            let mut dst = vec![0.0f32; cout * plane];
            for o in 0..cout {
                for p in 0..plane {
                    let mut acc = b[o];
                    for i in 0..cin {
                        acc += wt[o * cin + i] * src[i * plane + p];
                    }
                    dst[o * plane + p] = acc;
                }
            }
            dst
        };
        let h2: Vec<f32> = pointwise(&h1, hid, hid, layers[1]).into_iter().map(|v| v.max(0.0)).collect();
        let out: Vec<f32> = pointwise(&h2, hid, c, layers[2]).into_iter().map(sigmoid).collect();
        let level = decode_argmax(&out[..d.tiles * plane], d.tiles, h, w);
        let mut s = encode_onehot(&level, d.tiles, d.aux_channels);
        s.aux = out[d.tiles * plane..].to_vec();
        s
    }

    #[test]
    fn nca_step_matches_dense_convolution() {
        for (kind, game) in [(ArchKind::Nca, Game::Zelda), (ArchKind::AuxNca, Game::Maze)] {
            let d = desc(kind, game);
            let spec = GameSpec::default_for(game);
            for seed in 0..4 {
                let g = random_genome(d, seed, 0.4);
                let mut state = encode_onehot(&sample_random_level(&spec, seed + 100), d.tiles, d.aux_channels);
                for _ in 0..3 {
                    let fast = nca_step(&g, &state);
                    let slow = dense_step(&g, &state);
                    assert_eq!(fast.level(), slow.level());
                    for (a, b) in fast.aux.iter().zip(&slow.aux) {
                        assert!((a - b).abs() < 1e-5);
                    }
                    state = fast;
                }
            }
        }
    }

    #[test]
    fn incremental_episode_matches_full_steps() {
        let spec = GameSpec::default_for(Game::Maze);
        let d = desc(ArchKind::Nca, Game::Maze);
        for seed in 0..20 {
            let g = random_genome(d, seed, 0.3);
            let init = sample_random_level(&spec, seed);
            let out = generate_episode(&g, &LatentSeed::new(LatentKind::RandomLevel, &spec, seed), 50).unwrap();
            let mut state = encode_onehot(&init, 2, 0);
            for _ in 0..out.steps {
                state = nca_step(&g, &state);
            }
            assert_eq!(state.level(), out.level);
            if out.converged {
                assert_eq!(nca_step(&g, &state).level(), out.level);
            }
        }
    }

    #[test]
    fn decoder_zero_and_determinism() {
        let d = desc(ArchKind::Decoder, Game::Maze);
        let z = crate::grid::sample_latent_vector(4);
        assert_eq!(decoder_forward(&Genome::zeros(d), &z), Level::filled(16, 16, 0));
        let g = random_genome(d, 1, 0.5);
        assert_eq!(decoder_forward(&g, &z), decoder_forward(&g, &z));
        let sok = desc(ArchKind::Decoder, Game::Sokoban);
        let level = decoder_forward(&random_genome(sok, 2, 0.5), &z);
        assert_eq!((level.height, level.width), (10, 10));
    }

    /// Transposed convolution written as the gather over input positions.
    #[test]
    fn decoder_matches_gather_reference() {
        let d = desc(ArchKind::Decoder, Game::Maze);
        let g = random_genome(d, 9, 0.5);
        let z = crate::grid::sample_latent_vector(1);
        let net = DecoderNet::new(&g);
        let fast = net.logits(&z);

        let mut size = 4;
        let cin = 18;
        let mut act = vec![0.0f32; cin * 16];
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..16 {
                    act[c * 16 + y * 4 + x] = z[c];
                }
                act[16 * 16 + y * 4 + x] = norm_coord(x, 4);
                act[17 * 16 + y * 4 + x] = norm_coord(y, 4);
            }
        }
        let layers = g.unpack();
        let shapes = d.layer_shapes();
        for (li, (shape, (w, b))) in shapes.iter().zip(layers).enumerate() {
            let LayerShape::ConvTranspose { inp, out, .. } = *shape else { unreachable!() };
            let os = size * 2;
            let mut next = vec![0.0f32; out * os * os];
            for o in 0..out {
                for oy in 0..os {
                    for ox in 0..os {
                        let mut acc = b[o];
                        for ky in 0..4 {
                            for kx in 0..4 {
                                let ty = oy as isize + 1 - ky as isize;
                                let tx = ox as isize + 1 - kx as isize;
                                if ty < 0 || tx < 0 || ty % 2 != 0 || tx % 2 != 0 {
                                    continue;
                                }
                                let (iy, ix) = (ty as usize / 2, tx as usize / 2);
                                if iy >= size || ix >= size {
                                    continue;
                                }
                                for i in 0..inp {
                                    acc += act[i * size * size + iy * size + ix] * w[((i * out + o) * 4 + ky) * 4 + kx];
                                }
                            }
                        }
                        next[o * os * os + oy * os + ox] = if li + 1 < shapes.len() { acc.max(0.0) } else { acc };
                    }
                }
            }
            act = next;
            size = os;
        }
        assert_eq!(fast.len(), act.len());
        for (a, b) in fast.iter().zip(&act) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn cppn_zero_params() {
        let g = Genome::zeros(desc(ArchKind::SinCppn, Game::Maze));
        assert_eq!(cppn_forward(&g, None, 3, 4), vec![0.0, 0.0]);
        assert_eq!(CppnNet::new(&g).level(None), Level::filled(16, 16, 0));
    }

    #[test]
    fn cppn_matches_straight_line_oracle() {
        let d = desc(ArchKind::GenSinCppn, Game::Zelda);
        let g = random_genome(d, 11, 1.0);
        let z = crate::grid::sample_latent_vector(4);
        let layers: Vec<(Vec<f32>, Vec<f32>)> = g
            .unpack()
            .iter()
            .enumerate()
            .map(|(li, (w, b))| {
                let s = cppn_layer_scale(li, w.len() / b.len());
                (w.iter().map(|v| v * s).collect(), b.iter().map(|v| v * s).collect())
            })
            .collect();
        let net = CppnNet::new(&g);
        for (x, y) in [(0, 0), (3, 9), (15, 15), (7, 2)] {
            let mut act: Vec<f64> = vec![norm_coord(x, 16) as f64, norm_coord(y, 16) as f64];
            act.extend(z.iter().map(|&v| v as f64));
            for (li, (w, b)) in layers.iter().enumerate() {
                let inp = act.len();
                act = b
                    .iter()
                    .enumerate()
                    .map(|(o, &bo)| {
                        let pre = bo as f64 + (0..inp).map(|i| w[o * inp + i] as f64 * act[i]).sum::<f64>();
                        if li + 1 < layers.len() {
                            (SIREN_OMEGA as f64 * pre).sin()
                        } else {
                            pre
                        }
                    })
                    .collect();
            }
            let fast = net.forward(Some(&z), x, y);
            for (a, b) in fast.iter().zip(&act) {
                assert!((*a as f64 - b).abs() < 1e-3, "({x},{y}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn cppn_is_function_of_coordinates() {
        let g = random_genome(desc(ArchKind::SinCppn, Game::Maze), 3, 1.0);
        let net = CppnNet::new(&g);
        assert_eq!(net.forward(None, 5, 7), net.forward(None, 5, 7));
        let a = net.level(None);
        assert_eq!(a, net.level(None));
    }

    #[test]
    fn gen_cppn_depends_on_latent() {
        let d = desc(ArchKind::GenSinCppn, Game::Maze);
        let mut differing = 0;
        for seed in 0..10 {
            let net = CppnNet::new(&random_genome(d, seed, 1.0));
            let a = net.level(Some(&crate::grid::sample_latent_vector(1)));
            let b = net.level(Some(&crate::grid::sample_latent_vector(2)));
            differing += (a != b) as usize;
        }
        assert!(differing >= 9, "{differing}/10 genomes reacted to the latent");
    }

    #[test]
    fn generator_checks_seed_kind() {
        let spec = GameSpec::default_for(Game::Maze);
        let nca = Generator::new(&Genome::zeros(desc(ArchKind::Nca, Game::Maze)));
        let gauss = LatentSeed::new(LatentKind::GaussianVector, &spec, 1);
        assert!(nca.generate(Some(&gauss), 10).is_err());
        let cppn = Generator::new(&Genome::zeros(desc(ArchKind::SinCppn, Game::Maze)));
        assert!(cppn.generate(None, 10).is_ok());
    }

    #[test]
    fn wall_level_is_a_fixed_point_for_some_rule() {
        // Bias the wall channel: every cell becomes a wall and stays one.
        let d = desc(ArchKind::Nca, Game::Maze);
        let mut g = Genome::zeros(d);
        let n = g.params.len();
        g.params[n - 1] = 1.0;
        let spec = GameSpec::default_for(Game::Maze);
        let out = generate_episode(&g, &LatentSeed::new(LatentKind::RandomLevel, &spec, 0), 50).unwrap();
        assert_eq!(out.level, Level::filled(16, 16, WALL));
        assert_eq!(out.steps, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pack_unpack_round_trip(params in proptest::collection::vec(-3.0f32..3.0, 1730)) {
            let g = Genome::new(desc(ArchKind::Nca, Game::Maze), params).unwrap();
            let layers = g.unpack();
            prop_assert_eq!(Genome::pack(g.descriptor, &layers).unwrap(), g.clone());
        }

        #[test]
        fn step_preserves_onehot(seed in 0u64..1000) {
            let d = desc(ArchKind::AuxNca, Game::Zelda);
            let spec = GameSpec::default_for(Game::Zelda);
            let g = random_genome(d, seed, 1.0);
            let next = nca_step(&g, &encode_onehot(&sample_random_level(&spec, seed), 6, 3));
            for i in 0..next.plane() {
                let sum: f32 = (0..6).map(|c| next.onehot[c * next.plane() + i]).sum();
                prop_assert_eq!(sum, 1.0);
            }
            prop_assert!(next.aux.iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
    }
}
