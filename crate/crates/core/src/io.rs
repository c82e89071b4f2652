//! File output helpers: atomic writes and the CSV schemas shared by the CLI.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::bridge::EndpointPair;
use crate::error::{BridgeError, Result};
use crate::numerics::Tensor;
use crate::schedule::Schedule;

/// Writes via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| BridgeError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| BridgeError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| BridgeError::io(&tmp, e))?;
        f.sync_all().map_err(|e| BridgeError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| BridgeError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Builds CSV text in memory; rows are written with `f64` shortest
/// round-trip formatting so output is locale-free and reproducible.
pub struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvTable {
    pub fn new<I, S>(header: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }

    pub fn save(self, path: &Path) -> Result<()> {
        write_atomic(path, &self.into_bytes())
    }
}

fn coord_header(prefix: &str, dim: usize) -> impl Iterator<Item = String> + '_ {
    (0..dim).map(move |j| format!("{prefix}{j}"))
}

/// `k,t,coord_0..coord_{D-1}`.
pub fn trajectory_csv(schedule: &Schedule, trajectory: &[Tensor]) -> CsvTable {
    let dim = trajectory.first().map_or(0, Tensor::len);
    let mut table = CsvTable::new(
        ["k".to_string(), "t".to_string()]
            .into_iter()
            .chain(coord_header("coord_", dim)),
    );
    for (k, (x, t)) in trajectory.iter().zip(schedule.points()).enumerate() {
        table.row(
            [k.to_string(), t.to_string()]
                .into_iter()
                .chain(x.data().iter().map(f64::to_string)),
        );
    }
    table
}

/// One row per pair with `x0_*` then `x1_*` columns.
pub fn pairs_csv(pairs: &[EndpointPair]) -> CsvTable {
    let dim = pairs.first().map_or(0, EndpointPair::dim);
    let mut table = CsvTable::new(coord_header("x0_", dim).chain(coord_header("x1_", dim)));
    for p in pairs {
        table.row(
            p.x0()
                .data()
                .iter()
                .chain(p.x1().data())
                .map(f64::to_string),
        );
    }
    table
}

/// Reads a CSV written by [`pairs_csv`].
pub fn read_pairs_csv(path: &Path) -> Result<Vec<EndpointPair>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| BridgeError::format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| BridgeError::format(path, e.to_string()))?
        .clone();
    let dim = headers.iter().filter(|h| h.starts_with("x0_")).count();
    if dim == 0 || headers.len() != 2 * dim {
        return Err(BridgeError::format(path, "expected x0_* and x1_* columns of equal count"));
    }
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| BridgeError::format(path, e.to_string()))?;
        let values = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| BridgeError::format(path, e.to_string()))?;
        let (a, b) = values.split_at(dim);
        pairs.push(EndpointPair::new(
            Tensor::from_vec(a.to_vec())?,
            Tensor::from_vec(b.to_vec())?,
        )?);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let pairs = vec![
            EndpointPair::new(
                Tensor::from_vec(vec![0.1, -2.5]).unwrap(),
                Tensor::from_vec(vec![1.0 / 3.0, 7.0]).unwrap(),
            )
            .unwrap();
            3
        ];
        pairs_csv(&pairs).save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0_0,x0_1,x1_0,x1_1\n"));
        assert_eq!(read_pairs_csv(&path).unwrap(), pairs);
    }

    #[test]
    fn trajectory_header() {
        let schedule = Schedule::uniform(2).unwrap();
        let traj = vec![Tensor::zeros(&[2]); 3];
        let bytes = trajectory_csv(&schedule, &traj).into_bytes();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().next().unwrap(), "k,t,coord_0,coord_1");
        assert_eq!(text.lines().nth(2).unwrap(), "1,0.5,0,0");
    }
}
