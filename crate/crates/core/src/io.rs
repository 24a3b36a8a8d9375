//! On-disk formats: genome files and archive snapshots.
//!
//! A genome file is a TOML header followed by a `---` line and the raw
//! parameter block as little-endian `f32`. An archive snapshot is a magic
//! line, one JSON header line and one JSON record per occupied cell.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Game;
use crate::nets::{ArchitectureDescriptor, Genome};
use crate::objective::BatchStats;
use crate::qd::{Archive, Elite, Solution};

pub const GENOME_MAGIC: &str = "ncaqd-genome";
pub const GENOME_VERSION: u32 = 1;
pub const ARCHIVE_MAGIC: &str = "ncaqd-archive";
pub const ARCHIVE_VERSION: u32 = 1;

const GENOME_SEPARATOR: &[u8] = b"\n---\n";

/// A generator genome together with the batch statistics that placed it.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub genome: Genome,
    pub stats: BatchStats,
}

impl Solution for Candidate {
    fn params(&self) -> Vec<f64> {
        self.genome.params.iter().map(|&p| p as f64).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenomeHeader {
    version: u32,
    params: usize,
    descriptor: ArchitectureDescriptor,
}

pub fn params_to_bytes(params: &[f32]) -> Vec<u8> {
    params.iter().flat_map(|p| p.to_le_bytes()).collect()
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Parse(format!(
            "parameter block of {} bytes is not a whole number of f32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn encode_genome(genome: &Genome) -> Vec<u8> {
    let header = GenomeHeader {
        version: GENOME_VERSION,
        params: genome.params.len(),
        descriptor: genome.descriptor,
    };
    let mut out = format!("{GENOME_MAGIC}\n").into_bytes();
    out.extend(toml::to_string(&header).expect("genome header serializes").into_bytes());
    out.extend_from_slice(&GENOME_SEPARATOR[1..]);
    out.extend(params_to_bytes(&genome.params));
    out
}

pub fn decode_genome(bytes: &[u8]) -> Result<Genome> {
    let rest = bytes
        .strip_prefix(GENOME_MAGIC.as_bytes())
        .and_then(|r| r.strip_prefix(b"\n"))
        .ok_or_else(|| Error::Parse("not a genome file".into()))?;
    let split = rest
        .windows(GENOME_SEPARATOR.len())
        .position(|w| w == GENOME_SEPARATOR)
        .ok_or_else(|| Error::Parse("genome header is not terminated".into()))?;
    let header = std::str::from_utf8(&rest[..split + 1])
        .map_err(|_| Error::Parse("genome header is not UTF-8".into()))?;
    let header: GenomeHeader = toml::from_str(header).map_err(|e| Error::Parse(format!("genome header: {e}")))?;
    if header.version != GENOME_VERSION {
        return Err(Error::Version(header.version));
    }
    let params = params_from_bytes(&rest[split + GENOME_SEPARATOR.len()..])?;
    if params.len() != header.params {
        return Err(Error::Parse(format!(
            "header declares {} parameters, block holds {}",
            header.params,
            params.len()
        )));
    }
    Genome::new(header.descriptor, params)
}

pub fn write_genome(path: &Path, genome: &Genome) -> Result<()> {
    fs::write(path, encode_genome(genome)).map_err(|e| Error::io(path, e))
}

pub fn read_genome(path: &Path) -> Result<Genome> {
    decode_genome(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Everything a snapshot records besides the elites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub version: u32,
    pub game: Game,
    pub descriptor: ArchitectureDescriptor,
    pub dims: Vec<usize>,
    pub bounds: Vec<(f64, f64)>,
    pub measures: Vec<String>,
    pub objective_floor: f64,
    pub iteration: u64,
    pub evaluations: u64,
    pub cells: usize,
}

// `flatten` and `deny_unknown_fields` do not combine in serde.
#[derive(Serialize, Deserialize)]
struct CellRecord {
    cell: Vec<usize>,
    inserted_at: u64,
    #[serde(flatten)]
    stats: BatchStats,
    genome: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub archive: Archive<Candidate>,
}

pub fn write_snapshot(out: &mut impl Write, header: &SnapshotHeader, archive: &Archive<Candidate>) -> Result<()> {
    let io = |e| Error::io("<snapshot>", e);
    let header = SnapshotHeader {
        cells: archive.len(),
        dims: archive.dims().to_vec(),
        bounds: archive.bounds().to_vec(),
        ..header.clone()
    };
    writeln!(out, "{ARCHIVE_MAGIC}").map_err(io)?;
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
    for (cell, elite) in archive.iter() {
        let record = CellRecord {
            cell,
            inserted_at: elite.inserted_at,
            stats: elite.payload.stats.clone(),
            genome: BASE64.encode(params_to_bytes(&elite.payload.genome.params)),
        };
        writeln!(out, "{}", serde_json::to_string(&record).expect("record serializes")).map_err(io)?;
    }
    Ok(())
}

pub fn read_snapshot(input: impl BufRead) -> Result<Snapshot> {
    let mut lines = input.lines();
    let mut next = |what: &str| -> Result<String> {
        match lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::io("<snapshot>", e)),
            None => Err(Error::Parse(format!("snapshot ends before {what}"))),
        }
    };
    if next("magic")? != ARCHIVE_MAGIC {
        return Err(Error::Parse("not an archive snapshot".into()));
    }
    let header_line = next("header")?;
    let version = serde_json::from_str::<serde_json::Value>(&header_line)
        .ok()
        .and_then(|v| v.get("version").and_then(|v| v.as_u64()));
    match version {
        Some(v) if v == ARCHIVE_VERSION as u64 => {}
        Some(v) => return Err(Error::Version(v as u32)),
        None => return Err(Error::Parse("snapshot header lacks a version".into())),
    }
    let header: SnapshotHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::Parse(format!("snapshot header: {e}")))?;
    let mut archive = Archive::new(header.dims.clone(), header.bounds.clone())?;
    for i in 0..header.cells {
        let line = next("the last cell record")?;
        let rec: CellRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("cell record {i}: {e}")))?;
        let bytes = BASE64
            .decode(rec.genome.as_bytes())
            .map_err(|e| Error::Parse(format!("cell record {i}: genome blob: {e}")))?;
        let genome = Genome::new(header.descriptor, params_from_bytes(&bytes)?)?;
        let measures = rec.stats.measure_means.clone();
        let objective = rec.stats.objective;
        if archive.cell_index(&measures) != rec.cell {
            return Err(Error::Parse(format!(
                "cell record {i}: measures do not map to cell {:?}",
                rec.cell
            )));
        }
        let candidate = Candidate { genome, stats: rec.stats };
        if !archive.insert(candidate, objective, measures, rec.inserted_at).added() {
            return Err(Error::Parse(format!("cell record {i}: duplicate cell {:?}", rec.cell)));
        }
    }
    Ok(Snapshot { header, archive })
}

/// Writes atomically via a temporary sibling file.
pub fn save_snapshot(path: &Path, header: &SnapshotHeader, archive: &Archive<Candidate>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut out = BufWriter::new(file);
        write_snapshot(&mut out, header, archive)?;
        out.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_snapshot(BufReader::new(file)).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Looks up an elite, by exact cell or by the cell its measures fall in.
pub fn elite_at<'a>(archive: &'a Archive<Candidate>, cell: &[usize]) -> Result<&'a Elite<Candidate>> {
    archive.get(cell).ok_or_else(|| {
        let near = archive.nearest_occupied(cell, 5);
        Error::Invalid(format!("cell {cell:?} is empty; nearest occupied cells: {near:?}"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GameSpec, Level};
    use crate::nets::ArchKind;
    use crate::objective::ValidityRules;

    fn genome(seed: u32) -> Genome {
        let d = ArchitectureDescriptor::new(ArchKind::Nca, &GameSpec::default_for(Game::Maze));
        let params = (0..d.param_count()).map(|i| ((i as u32 * 31 + seed) % 97) as f32 * 0.013 - 0.6).collect();
        Genome::new(d, params).unwrap()
    }

    fn candidate(seed: u32, levels: &[Level]) -> Candidate {
        Candidate {
            genome: genome(seed),
            stats: BatchStats::from_levels(levels, &ValidityRules::new(Game::Maze)),
        }
    }

    #[test]
    fn genome_round_trip() {
        let g = genome(3);
        let bytes = encode_genome(&g);
        assert!(bytes.starts_with(b"ncaqd-genome\nversion = 1\n"));
        assert_eq!(decode_genome(&bytes).unwrap(), g);
    }

    #[test]
    fn genome_rejects_future_version_and_truncation() {
        let bytes = encode_genome(&genome(1));
        let text = String::from_utf8_lossy(&bytes).replacen("version = 1", "version = 9", 1);
        let bumped: Vec<u8> = text.bytes().collect();
        // Lossy conversion can alter the binary block, but the header is read first.
        assert!(matches!(decode_genome(&bumped), Err(Error::Version(9))));
        assert!(decode_genome(&bytes[..bytes.len() - 4]).is_err());
        assert!(decode_genome(b"garbage").is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut archive = Archive::new(vec![10, 10], vec![(0.0, 1.0), (0.0, 136.0)]).unwrap();
        let a = Level::from_text(Game::Maze, &"................\n".repeat(16)).unwrap();
        let mut b = a.clone();
        b.set(3, 3, crate::grid::WALL);
        for (i, batch) in [vec![a.clone()], vec![a.clone(), b.clone()]].iter().enumerate() {
            let c = candidate(i as u32, batch);
            archive.insert(c.clone(), c.stats.objective, c.stats.measure_means.clone(), i as u64);
        }
        let header = SnapshotHeader {
            version: ARCHIVE_VERSION,
            game: Game::Maze,
            descriptor: genome(0).descriptor,
            dims: vec![],
            bounds: vec![],
            measures: vec!["symmetry".into(), "path-length".into()],
            objective_floor: -127.0,
            iteration: 7,
            evaluations: 70,
            cells: 0,
        };
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &header, &archive).unwrap();
        let snap = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(snap.archive, archive);
        assert_eq!(snap.header.cells, archive.len());
        assert_eq!(snap.header.iteration, 7);
        let mut again = Vec::new();
        write_snapshot(&mut again, &snap.header, &snap.archive).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn empty_cell_lookup_lists_neighbours() {
        let mut archive = Archive::new(vec![4, 4], vec![(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let a = Level::filled(4, 4, 0);
        let c = candidate(0, &[a]);
        archive.insert(c, 0.0, vec![0.9, 0.9], 0);
        let err = elite_at(&archive, &[0, 0]).unwrap_err().to_string();
        assert!(err.contains("[3, 3]"), "{err}");
        assert!(elite_at(&archive, &[3, 3]).is_ok());
    }
}
