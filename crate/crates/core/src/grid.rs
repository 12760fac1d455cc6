//! Tensor-product sampling grids over boxes, and box vertices.

use serde::{Deserialize, Serialize};

pub const DEFAULT_POINTS_PER_AXIS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Self {
        Self { lo, hi, count }
    }

    /// Single sample at `value`.
    pub fn fixed(value: f64) -> Self {
        Self::new(value, value, 1)
    }

    pub fn value(&self, k: usize) -> f64 {
        if self.count <= 1 {
            0.5 * (self.lo + self.hi)
        } else {
            self.lo + (self.hi - self.lo) * k as f64 / (self.count - 1) as f64
        }
    }

    /// Axis with `2 * (count - 1) + 1` points containing this one.
    pub fn refined(&self) -> Self {
        Self::new(self.lo, self.hi, 2 * self.count.max(1) - 1)
    }
}

/// Cartesian grid. An empty axis list has exactly one (empty) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Self {
        Self { axes }
    }

    pub fn uniform(bounds: &[(f64, f64)], count: usize) -> Self {
        Self::new(bounds.iter().map(|&(lo, hi)| Axis::new(lo, hi, count)).collect())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count.max(1)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point with flat index `idx` (last axis varies fastest).
    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            let n = axis.count.max(1);
            p[k] = axis.value(idx % n);
            idx /= n;
        }
        p
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn refined(&self) -> Self {
        Self::new(self.axes.iter().map(Axis::refined).collect())
    }

    pub fn describe(&self) -> String {
        self.axes
            .iter()
            .map(|a| format!("[{}, {}]x{}", a.lo, a.hi, a.count))
            .collect::<Vec<_>>()
            .join(" * ")
    }
}

/// All `2^n` vertices of the box `∏ [lo_i, hi_i]`; degenerate sides give
/// repeated vertices, which is harmless for worst-case checks.
pub fn box_vertices(bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let n = bounds.len();
    (0..(1usize << n))
        .map(|mask| {
            (0..n)
                .map(|i| if mask >> i & 1 == 1 { bounds[i].1 } else { bounds[i].0 })
                .collect()
        })
        .collect()
}
