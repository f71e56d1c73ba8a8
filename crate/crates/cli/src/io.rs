use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ramac_core::{State, Topology};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_topology(path: &Path) -> Result<Topology> {
    Topology::load(path).with_context(|| format!("loading topology {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Locale-independent, round-trip formatting; empty cell for missing values.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Debug, Deserialize)]
struct StateRecord {
    probabilities: Vec<f64>,
    rates: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct SolutionRecord {
    cost: f64,
    state: StateRecord,
}

/// Operating point and cost stored in a solve or distributed report.
pub struct Solution {
    pub cost: f64,
    pub state: State,
}

pub fn load_solution(path: &Path, topo: &Topology) -> Result<Solution> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rec: SolutionRecord = serde_json::from_str(&text)
        .map_err(ramac_core::Error::from)
        .with_context(|| format!("parsing solution {}", path.display()))?;
    let state = State::from_rates(topo, rec.state.probabilities, rec.state.rates)
        .with_context(|| format!("solution {} does not fit the topology", path.display()))?;
    Ok(Solution {
        cost: rec.cost,
        state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Everything needed to reproduce a run. Written next to the first output as
/// `<output>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Configuration after defaults were applied.
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(ramac_core::Error::from)
            .with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// What a command did, for the manifest.
pub struct RunRecord {
    pub subcommand: &'static str,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
}

pub fn write_manifest(argv: &[String], record: RunRecord) -> Result<Option<PathBuf>> {
    let Some(first) = record.outputs.first() else {
        return Ok(None);
    };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: record.subcommand.to_string(),
        argv: argv.to_vec(),
        config: record.config,
        inputs: record
            .inputs
            .iter()
            .map(|p| FileDigest::of(p))
            .collect::<Result<_>>()?,
        outputs: record
            .outputs
            .iter()
            .map(|p| FileDigest::of(p))
            .collect::<Result<_>>()?,
        seed: record.seed,
    };
    let path = RunManifest::path_for(first);
    write_json(&path, &manifest)?;
    Ok(Some(path))
}
