//! Browser bindings: grow a level with an NCA, score a level, solve Sokoban.
//!
//! Every export returns a JSON string; failures come back as JS errors.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use ncaqd::analysis::solve_sokoban;
use ncaqd::grid::{encode_onehot, sample_random_level, Game, GameSpec, Level};
use ncaqd::io::decode_genome;
use ncaqd::nets::{ArchKind, ArchitectureDescriptor, Genome, NcaNet};
use ncaqd::objective::{evaluate_level, measure_names, rule_names, ValidityRules};
use ncaqd::trainer::splitmix64;

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

fn parse_game(name: &str) -> Result<Game, String> {
    name.parse().map_err(|e: ncaqd::Error| e.to_string())
}

/// Uniform weights in `[-scale, scale]` drawn from `seed`.
fn random_genome(game: Game, seed: u64, scale: f32) -> Genome {
    let d = ArchitectureDescriptor::new(ArchKind::Nca, &GameSpec::default_for(game));
    let params = (0..d.param_count() as u64)
        .map(|i| {
            let u = (splitmix64(seed.wrapping_add(i)) >> 40) as f32 / (1u64 << 24) as f32;
            (2.0 * u - 1.0) * scale
        })
        .collect();
    Genome::new(d, params).expect("length matches the descriptor")
}

/// Frames of an NCA episode from a random start level, stopping at the first
/// fixed point. `genome` is a saved genome file, or empty for random weights.
pub fn grow(game: &str, genome: &[u8], weight_seed: u64, level_seed: u64, steps: usize) -> Result<Value, String> {
    let game = parse_game(game)?;
    let genome = if genome.is_empty() {
        random_genome(game, weight_seed, 1.0)
    } else {
        decode_genome(genome).map_err(|e| e.to_string())?
    };
    let d = genome.descriptor;
    if !d.kind.is_iterative() {
        return Err(format!("{} genomes do not iterate", d.kind));
    }
    let spec = GameSpec::new(game, d.height, d.width).map_err(|e| e.to_string())?;
    if d.tiles != spec.tile_count() {
        return Err(format!("genome has {} tile channels, {game} needs {}", d.tiles, spec.tile_count()));
    }
    let net = NcaNet::new(&genome);
    let mut state = encode_onehot(&sample_random_level(&spec, level_seed), d.tiles, d.aux_channels);
    let mut frames = vec![state.level().to_text(game)];
    let mut converged = false;
    for _ in 0..steps {
        let next = net.step(&state);
        if next.level() == state.level() && d.aux_channels == 0 {
            converged = true;
            break;
        }
        frames.push(next.level().to_text(game));
        state = next;
    }
    Ok(json!({
        "frames": frames,
        "converged": converged,
        "parameters": d.param_count(),
    }))
}

/// Validity penalties and measures of a level in text form.
pub fn analyze(game: &str, text: &str) -> Result<Value, String> {
    let game = parse_game(game)?;
    let level = Level::from_text(game, text).map_err(|e| e.to_string())?;
    let eval = evaluate_level(&level, &ValidityRules::new(game));
    Ok(json!({
        "validity": eval.validity,
        "rules": rule_names(game),
        "penalties": eval.penalties,
        "measure_names": measure_names(game),
        "measures": eval.measures,
    }))
}

/// Shortest Sokoban solution within `budget` expanded states.
pub fn solve(text: &str, budget: usize) -> Result<Value, String> {
    let level = Level::from_text(Game::Sokoban, text).map_err(|e| e.to_string())?;
    let solution = solve_sokoban(&level, budget)
        .map_err(|_| "needs exactly one player and as many crates as targets".to_string())?;
    Ok(json!({
        "status": format!("{:?}", solution.status),
        "moves": solution.moves.iter().map(|m| m.glyph()).collect::<String>(),
        "length": solution.length(),
        "nodes_expanded": solution.nodes_expanded,
    }))
}

#[wasm_bindgen]
pub fn grow_level(game: &str, genome: &[u8], weight_seed: u32, level_seed: u32, steps: u32) -> Result<String, JsValue> {
    to_js(grow(game, genome, weight_seed as u64, level_seed as u64, steps as usize))
}

#[wasm_bindgen]
pub fn analyze_level(game: &str, text: &str) -> Result<String, JsValue> {
    to_js(analyze(game, text))
}

#[wasm_bindgen]
pub fn solve_level(text: &str, budget: u32) -> Result<String, JsValue> {
    to_js(solve(text, budget as usize))
}
