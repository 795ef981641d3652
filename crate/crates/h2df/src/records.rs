//! CSV files written and read by the pipeline.

use std::path::Path;

use anyhow::{bail, Context, Result};
use h2df_core::engine::{Dataset, EngineInputs, EngineOutputs, EngineSample, Split};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes only the header line; used when a table has no rows yet.
pub fn write_header(path: &Path, columns: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(columns)?;
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().map(|row| row.with_context(|| format!("parsing {}", path.display()))).collect()
}

/// One cycle of an identification dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub cycle: usize,
    pub doi_fuel: f64,
    pub p2m: f64,
    pub soi_fuel: f64,
    pub doi_h2: f64,
    pub imep_prev: f64,
    pub imep: f64,
    pub nox: f64,
    pub soot: f64,
    pub mprr: f64,
    pub split: Split,
}

pub const DATASET_COLUMNS: [&str; 11] =
    ["cycle", "doi_fuel", "p2m", "soi_fuel", "doi_h2", "imep_prev", "imep", "nox", "soot", "mprr", "split"];
pub const CURVE_COLUMNS: [&str; 5] = ["episode", "reward", "moving_avg", "steps", "wall_ms"];
pub const HISTORY_COLUMNS: [&str; 4] = ["epoch", "train_loss", "val_loss", "lr"];
pub const TRACE_COLUMNS: [&str; 17] =
    ["step", "ref", "imep", "nox", "soot", "mprr", "a1", "a2", "a3", "a4", "reward", "q1", "q2", "q3", "r", "staging", "W"];
pub const METRICS_COLUMNS: [&str; 5] = ["ts", "seq", "policy_id", "latency_us", "drops"];

pub fn dataset_rows(data: &Dataset) -> impl Iterator<Item = DatasetRow> + '_ {
    data.samples.iter().enumerate().map(|(i, s)| DatasetRow {
        cycle: i,
        doi_fuel: s.inputs.doi_fuel,
        p2m: s.inputs.p2m,
        soi_fuel: s.inputs.soi_fuel,
        doi_h2: s.inputs.doi_h2,
        imep_prev: s.imep_prev,
        imep: s.outputs.imep,
        nox: s.outputs.nox,
        soot: s.outputs.soot,
        mprr: s.outputs.mprr,
        split: data.split_of(i),
    })
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_csv(path, dataset_rows(data))
}

/// Rebuilds a dataset; rows must be in cycle order with contiguous
/// train, val and test blocks.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let rows: Vec<DatasetRow> = read_csv(path)?;
    let rank = |s: Split| match s {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    };
    for (i, pair) in rows.windows(2).enumerate() {
        if pair[1].cycle != pair[0].cycle + 1 || rank(pair[1].split) < rank(pair[0].split) {
            bail!("{}: row {} breaks cycle order or split contiguity", path.display(), i + 2);
        }
    }
    let train_end = rows.iter().take_while(|r| r.split == Split::Train).count();
    let val_end = train_end + rows[train_end..].iter().take_while(|r| r.split == Split::Val).count();
    if train_end == 0 || val_end == train_end {
        bail!("{}: dataset needs train and val rows", path.display());
    }
    let samples = rows
        .iter()
        .map(|r| EngineSample {
            inputs: EngineInputs::new(r.doi_fuel, r.p2m, r.soi_fuel, r.doi_h2),
            imep_prev: r.imep_prev,
            outputs: EngineOutputs { imep: r.imep, nox: r.nox, soot: r.soot, mprr: r.mprr },
        })
        .collect();
    Ok(Dataset { samples, train_end, val_end })
}

/// One line of the server metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Milliseconds since the server started.
    pub ts: u64,
    pub seq: u32,
    pub policy_id: u8,
    pub latency_us: f64,
    pub drops: u64,
}

/// Latency distribution in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub n: usize,
    pub median_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}
