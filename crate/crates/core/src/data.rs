// SPDX-License-Identifier: MIT OR Apache-2.0

//! Response/design pairs `(Y_t, x_t)`, `t = 1, ..., n`.
//!
//! Time indices follow the half-open convention used throughout the crate:
//! a window `(s, e]` covers observations `s + 1, ..., e`, which are the
//! zero-based rows `s..e` of the stored arrays.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{MosegError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    y: Array1<f64>,
    x: Array2<f64>,
    columns: Vec<String>,
}

impl Dataset {
    pub fn new(y: Array1<f64>, x: Array2<f64>) -> Result<Self> {
        let columns = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_columns(y, x, columns)
    }

    pub fn with_columns(y: Array1<f64>, x: Array2<f64>, columns: Vec<String>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(MosegError::DimensionMismatch(format!(
                "response has {} rows but design has {}",
                y.len(),
                x.nrows()
            )));
        }
        if columns.len() != x.ncols() {
            return Err(MosegError::DimensionMismatch(format!(
                "{} column names for {} covariates",
                columns.len(),
                x.ncols()
            )));
        }
        if x.ncols() == 0 {
            return Err(MosegError::DimensionMismatch("design has no columns".into()));
        }
        if let Some(t) = y.iter().position(|v| !v.is_finite()) {
            return Err(MosegError::NonFinite(format!("response at t = {}", t + 1)));
        }
        if let Some((idx, _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(MosegError::NonFinite(format!(
                "covariate {} at t = {}",
                idx.1 + 1,
                idx.0 + 1
            )));
        }
        Ok(Self { y, x, columns })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Rows of the window `(start, end]`.
    pub fn window(&self, start: usize, end: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        (self.x.slice(s![start..end, ..]), self.y.slice(s![start..end]))
    }

    pub(crate) fn check_window(&self, start: usize, end: usize) -> Result<()> {
        let n = self.n();
        if end > n || start >= end {
            return Err(MosegError::InvalidWindow {
                start,
                end,
                n,
                reason: "require 0 <= s < e <= n",
            });
        }
        if end - start < 2 {
            return Err(MosegError::InvalidWindow {
                start,
                end,
                n,
                reason: "window shorter than 2",
            });
        }
        Ok(())
    }

    /// Divides every covariate by its full-sample standard deviation.
    /// Constant columns are left untouched.
    pub fn scale_columns(&self) -> Dataset {
        let n = self.n() as f64;
        let mut x = self.x.clone();
        for mut col in x.axis_iter_mut(Axis(1)) {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            if sd > 0.0 {
                col.mapv_inplace(|v| v / sd);
            }
        }
        Dataset {
            y: self.y.clone(),
            x,
            columns: self.columns.clone(),
        }
    }
}
