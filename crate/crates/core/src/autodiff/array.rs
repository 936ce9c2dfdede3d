use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`. Vectors are `n x 1` columns and scalars
/// are `1 x 1`.
#[derive(Clone, PartialEq)]
pub struct NdArray {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl NdArray {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        NdArray { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape { op: "from_vec", detail: format!("{} values for {rows}x{cols}", data.len()) });
        }
        Ok(NdArray { rows, cols, data })
    }

    /// Column vector.
    pub fn vector(data: Vec<f64>) -> Self {
        NdArray { rows: data.len(), cols: 1, data }
    }

    pub fn scalar(x: f64) -> Self {
        NdArray { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// The single value of a `1 x 1` array.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NdArray {
        NdArray { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &NdArray, f: impl Fn(f64, f64) -> f64) -> NdArray {
        debug_assert_eq!(self.shape(), other.shape());
        NdArray {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NdArray) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &NdArray) -> NdArray {
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for (i, o) in out.iter_mut().enumerate() {
                let row = &self.data[i * k..(i + 1) * k];
                *o = row.iter().zip(&other.data).map(|(a, b)| a * b).sum();
            }
        } else {
            for i in 0..m {
                for p in 0..k {
                    let a = self.data[i * k + p];
                    if a == 0.0 {
                        continue;
                    }
                    let brow = &other.data[p * n..(p + 1) * n];
                    for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                        *o += a * b;
                    }
                }
            }
        }
        NdArray { rows: m, cols: n, data: out }
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &NdArray) -> NdArray {
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        NdArray { rows: m, cols: n, data: out }
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &NdArray) -> NdArray {
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(a, b)| a * b).sum();
            }
        }
        NdArray { rows: m, cols: n, data: out }
    }
}

impl fmt::Debug for NdArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NdArray({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}
