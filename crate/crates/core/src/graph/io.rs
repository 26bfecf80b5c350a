//! Edge-list CSV (`t,from,to`) for deterministic frame sequences.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Adjacency;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRow {
    t: usize,
    from: usize,
    to: usize,
}

/// Reads frames `0..=max t`; ticks without rows are empty frames.
pub fn read_edge_list_csv(path: &Path, n: usize) -> Result<Vec<Adjacency>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut frames: Vec<Adjacency> = Vec::new();
    for (line, row) in reader.deserialize::<EdgeRow>().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        if row.from >= n || row.to >= n || row.from == row.to {
            return Err(Error::InvalidGraph(format!(
                "{}: data row {}: invalid edge {}->{} for n={n}",
                path.display(),
                line + 1,
                row.from,
                row.to
            )));
        }
        if frames.len() <= row.t {
            frames.resize(row.t + 1, Adjacency::empty(n));
        }
        frames[row.t].set_edge(row.from, row.to, true);
    }
    if frames.is_empty() {
        return Err(Error::InvalidGraph(format!("{}: no edges", path.display())));
    }
    Ok(frames)
}

pub fn write_edge_list_csv(path: &Path, frames: &[Adjacency]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for (t, frame) in frames.iter().enumerate() {
        for (from, to) in frame.edges() {
            writer.serialize(EdgeRow { t, from, to }).map_err(|e| Error::csv(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_gap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.csv");
        let frames = vec![
            Adjacency::from_edges(3, &[(0, 1), (2, 0)]).unwrap(),
            Adjacency::empty(3),
            Adjacency::from_edges(3, &[(1, 2)]).unwrap(),
        ];
        write_edge_list_csv(&path, &frames).unwrap();
        assert_eq!(read_edge_list_csv(&path, 3).unwrap(), frames);
    }

    #[test]
    fn rejects_out_of_range_edge() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,from,to\n0,0,5\n").unwrap();
        let err = read_edge_list_csv(&path, 3).unwrap_err().to_string();
        assert!(err.contains("0->5"), "{err}");
    }
}
