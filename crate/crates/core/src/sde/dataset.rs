//! Trajectory datasets and their on-disk formats.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | field          | type                          |
//! |----------------|-------------------------------|
//! | magic          | 8 bytes, `DPCTRAJ\0`          |
//! | version        | u32 (= 1)                     |
//! | label length   | u32                           |
//! | label          | UTF-8 bytes                   |
//! | seed           | u64                           |
//! | dt             | f64                           |
//! | N, m, Nt, d, k | 5 × u64                       |
//! | params         | N·k f64, row-major            |
//! | trajectories   | N·m·(Nt+1)·d f64, row-major   |
//!
//! Trajectories are indexed `[sample, replication, step, component]`, step 0
//! being the initial condition.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array4};

use crate::error::{DpcError, Result};

const MAGIC: &[u8; 8] = b"DPCTRAJ\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    /// Label of the model that produced the data.
    pub label: String,
    pub seed: u64,
    pub dt: f64,
    /// `N × k` parameter realizations.
    pub params: Array2<f64>,
    /// `N × m × (Nt+1) × d` states.
    pub trajectories: Array4<f64>,
}

impl TrajectoryDataset {
    pub fn n_samples(&self) -> usize {
        self.trajectories.dim().0
    }
    pub fn n_replications(&self) -> usize {
        self.trajectories.dim().1
    }
    pub fn n_steps(&self) -> usize {
        self.trajectories.dim().2 - 1
    }
    pub fn dim_state(&self) -> usize {
        self.trajectories.dim().3
    }
    pub fn dim_params(&self) -> usize {
        self.params.ncols()
    }

    /// Keep only the first `n` parameter samples.
    pub fn truncate_samples(&self, n: usize) -> TrajectoryDataset {
        let n = n.min(self.n_samples());
        TrajectoryDataset {
            label: self.label.clone(),
            seed: self.seed,
            dt: self.dt,
            params: self.params.slice(ndarray::s![..n, ..]).to_owned(),
            trajectories: self.trajectories.slice(ndarray::s![..n, .., .., ..]).to_owned(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, m, steps, d) = self.trajectories.dim();
        let k = self.params.ncols();
        let mut out = Vec::with_capacity(64 + 8 * (n * k + n * m * steps * d));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.label.len() as u32).to_le_bytes());
        out.extend_from_slice(self.label.as_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.dt.to_le_bytes());
        for v in [n, m, steps - 1, d, k] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for v in self.params.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.trajectories.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TrajectoryDataset> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DpcError::Format("not a trajectory dataset (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DpcError::Format(format!("unsupported dataset version {version}")));
        }
        let label_len = r.u32()? as usize;
        let label = String::from_utf8(r.take(label_len)?.to_vec())
            .map_err(|_| DpcError::Format("label is not UTF-8".into()))?;
        let seed = r.u64()?;
        let dt = r.f64()?;
        let n = r.u64()? as usize;
        let m = r.u64()? as usize;
        let nt = r.u64()? as usize;
        let d = r.u64()? as usize;
        let k = r.u64()? as usize;
        let params = (0..n * k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let len = n * m * (nt + 1) * d;
        let traj = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(DpcError::Format("trailing bytes after trajectory block".into()));
        }
        Ok(TrajectoryDataset {
            label,
            seed,
            dt,
            params: Array2::from_shape_vec((n, k), params)
                .map_err(|e| DpcError::Format(e.to_string()))?,
            trajectories: Array4::from_shape_vec((n, m, nt + 1, d), traj)
                .map_err(|e| DpcError::Format(e.to_string()))?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrajectoryDataset> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// One row per `(sample, replication, step)`: `i,j,step,t,x0,..,x{d-1}`.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let (n, m, steps, d) = self.trajectories.dim();
        write!(w, "i,j,step,t")?;
        for c in 0..d {
            write!(w, ",x{c}")?;
        }
        writeln!(w)?;
        for i in 0..n {
            for j in 0..m {
                for s in 0..steps {
                    write!(w, "{i},{j},{s},{}", s as f64 * self.dt)?;
                    for c in 0..d {
                        write!(w, ",{}", self.trajectories[[i, j, s, c]])?;
                    }
                    writeln!(w)?;
                }
            }
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| DpcError::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(n: usize, m: usize, nt: usize, d: usize, k: usize, fill: f64) -> TrajectoryDataset {
        TrajectoryDataset {
            label: "test".into(),
            seed: 9,
            dt: 0.01,
            params: Array2::from_shape_fn((n, k), |(i, j)| fill + (i * 10 + j) as f64),
            trajectories: Array4::from_shape_fn((n, m, nt + 1, d), |(a, b, c, e)| {
                fill * (a + 2 * b + 3 * c + 5 * e) as f64
            }),
        }
    }

    proptest! {
        #[test]
        fn binary_round_trip(n in 1usize..4, m in 1usize..4, nt in 0usize..5, d in 1usize..4, k in 0usize..3, fill in -1e3f64..1e3) {
            let ds = dataset(n, m, nt, d, k, fill);
            prop_assert_eq!(TrajectoryDataset::from_bytes(&ds.to_bytes()).unwrap(), ds);
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        let bytes = dataset(2, 2, 3, 1, 2, 0.5).to_bytes();
        assert!(TrajectoryDataset::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(TrajectoryDataset::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(TrajectoryDataset::from_bytes(&long).is_err());
    }

    #[test]
    fn csv_has_one_row_per_state() {
        let ds = dataset(2, 3, 4, 2, 1, 1.0);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("i,j,step,t,x0,x1"));
        assert_eq!(lines.count(), 2 * 3 * 5);
    }

    #[test]
    fn truncation_keeps_leading_samples() {
        let ds = dataset(4, 2, 2, 1, 2, 1.0);
        let t = ds.truncate_samples(2);
        assert_eq!(t.n_samples(), 2);
        assert_eq!(t.params.row(1), ds.params.row(1));
    }
}
