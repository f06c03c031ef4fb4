// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

/// Square `n × n` array of per-cell values; `(a, b)` indexes `x1` then `x2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellArray {
    n: usize,
    values: Vec<f64>,
}

impl CellArray {
    pub fn filled(n: usize, v: f64) -> Self {
        Self { n, values: vec![v; n * n] }
    }

    /// Row-major values, `a` outer.
    pub fn from_values(n: usize, values: Vec<f64>) -> Option<Self> {
        (values.len() == n * n).then_some(Self { n, values })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.n + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        self.values[a * self.n + b] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { n: self.n, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values.iter().enumerate().map(move |(i, &v)| (i / self.n, i % self.n, v))
    }
}
