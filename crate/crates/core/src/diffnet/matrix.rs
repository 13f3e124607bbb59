use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Work (multiply-adds) below which products stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

/// Dense row-major matrix. Serializes as nested row arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.data.chunks(m.cols.max(1)).take(m.rows).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::param(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::param("ragged rows"));
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Matrix { rows: 1, cols: v.len(), data: v.to_vec() }
    }

    pub fn scalar(v: f64) -> Self {
        Matrix { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn exec_for(work: usize, exec: Exec) -> Exec {
        if work >= PAR_THRESHOLD {
            exec
        } else {
            Exec::Sequential
        }
    }

    /// `self * other^T`.
    pub fn matmul_nt(&self, other: &Matrix, exec: Exec) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimension");
        let (n, m, k) = (self.rows, other.rows, self.cols);
        let mut out = Matrix::zeros(n, m);
        par::for_each_row(Self::exec_for(n * m * k, exec), &mut out.data, m, |i, row| {
            let a = self.row(i);
            for (j, slot) in row.iter_mut().enumerate() {
                let b = other.row(j);
                *slot = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        });
        out
    }

    /// `self * other`.
    pub fn matmul_nn(&self, other: &Matrix, exec: Exec) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul_nn inner dimension");
        let (n, m) = (self.rows, other.cols);
        let mut out = Matrix::zeros(n, m);
        par::for_each_row(Self::exec_for(n * m * self.cols, exec), &mut out.data, m, |i, row| {
            for (p, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                row.iter_mut().zip(other.row(p)).for_each(|(o, b)| *o += a * b);
            }
        });
        out
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Matrix, exec: Exec) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_tn inner dimension");
        let (n, m) = (self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        par::for_each_row(Self::exec_for(n * m * self.rows, exec), &mut out.data, m, |i, row| {
            for p in 0..self.rows {
                let a = self.data[p * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                row.iter_mut().zip(other.row(p)).for_each(|(o, b)| *o += a * b);
            }
        });
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "elementwise shape");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "accumulate shape");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
