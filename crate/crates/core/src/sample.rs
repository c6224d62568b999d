//! Paired scalar observations and their CSV form (`x,z` header).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Paired input/output observations `(x_i, z_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    x: f64,
    z: f64,
}

impl JointSample {
    pub fn new(x: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if x.len() != z.len() {
            return Err(Error::DimensionMismatch(format!(
                "x has {} rows, z has {}",
                x.len(),
                z.len()
            )));
        }
        if let Some(v) = x.iter().chain(z.iter()).find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite observation {v}")));
        }
        Ok(Self { x, z })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Rows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            z: idx.iter().map(|&i| self.z[i]).collect(),
        }
    }

    /// The sample with row `i` removed.
    pub fn without(&self, i: usize) -> Self {
        let mut x = self.x.clone();
        let mut z = self.z.clone();
        x.remove(i);
        z.remove(i);
        Self { x, z }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "z" {
            return Err(Error::Parse(format!(
                "expected header `x,z`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut x = Vec::new();
        let mut z = Vec::new();
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(|e| Error::Parse(e.to_string()))?;
            x.push(row.x);
            z.push(row.z);
        }
        Self::new(x, z)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (&x, &z) in self.x.iter().zip(&self.z) {
            w.serialize(Row { x, z })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sample mean.
pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with denominator `n - 1`.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Sample covariance with denominator `n - 1`.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    covariance(a, b) / (variance(a) * variance(b)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let s = JointSample::new(vec![0.1, -2.5, 1e-300], vec![3.0, 0.125, 7.75]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x,z\n"));
        let back = JointSample::read_csv(buf.as_slice()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn rejects_wrong_header_and_lengths() {
        assert!(JointSample::read_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(JointSample::new(vec![1.0], vec![]).is_err());
        assert!(JointSample::new(vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn moments() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        assert!((variance(&a) - 5.0 / 3.0).abs() < 1e-15);
        assert!((correlation(&a, &b) - 1.0).abs() < 1e-15);
    }
}
