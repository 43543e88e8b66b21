//! Axis-aligned geometry: boxes, the safe set S (a bounding box minus
//! closed obstacle boxes) and regular evaluation grids.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::points::PointSet;

/// A closed axis-aligned box `[low, high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl AxisBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        check_dim(low.len(), high.len())?;
        if low.is_empty() {
            return Err(invalid("box must have at least one dimension"));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l < h)) {
            return Err(invalid(format!("box requires low < high componentwise, got {low:?} / {high:?}")));
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn center(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Closed-set intersection; boxes that only touch on a face intersect.
    pub fn intersects(&self, other: &AxisBox) -> bool {
        (0..self.dim()).all(|j| self.low[j] <= other.high[j] && other.low[j] <= self.high[j])
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &AxisBox) -> bool {
        (0..self.dim()).all(|j| other.low[j] <= self.low[j] && self.high[j] <= other.high[j])
    }

    /// Intersection with another box, `None` when it has empty interior.
    pub fn intersection(&self, other: &AxisBox) -> Option<AxisBox> {
        let low: Vec<f64> = self.low.iter().zip(&other.low).map(|(a, b)| a.max(*b)).collect();
        let high: Vec<f64> = self.high.iter().zip(&other.high).map(|(a, b)| a.min(*b)).collect();
        if low.iter().zip(&high).all(|(l, h)| l < h) {
            Some(AxisBox { low, high })
        } else {
            None
        }
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * self
            .low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| (h - l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Regular grid with `counts[j]` points per dimension, endpoints
    /// included (a single point per dimension sits at the centre).
    /// The first dimension varies slowest.
    pub fn grid(&self, counts: &[usize]) -> Result<PointSet> {
        check_dim(self.dim(), counts.len())?;
        if counts.iter().any(|&c| c == 0) {
            return Err(invalid("grid resolution must be positive in every dimension"));
        }
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|j| linspace(self.low[j], self.high[j], counts[j]))
            .collect();
        let total: usize = counts.iter().product();
        let mut data = Vec::with_capacity(total * self.dim());
        let mut idx = vec![0usize; self.dim()];
        for _ in 0..total {
            for (j, &k) in idx.iter().enumerate() {
                data.push(axes[j][k]);
            }
            for j in (0..self.dim()).rev() {
                idx[j] += 1;
                if idx[j] < counts[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
        PointSet::new(self.dim(), data)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { hi } else { lo + step * k as f64 })
        .collect()
}

/// The safe set `S = bounds \ (O_1 ∪ … ∪ O_k)`.
///
/// Bounds and obstacles are both closed, so a point on an obstacle face is
/// unsafe while a point on the outer boundary is safe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeRegion {
    bounds: AxisBox,
    obstacles: Vec<AxisBox>,
}

impl SafeRegion {
    pub fn new(bounds: AxisBox, obstacles: Vec<AxisBox>) -> Result<Self> {
        for o in &obstacles {
            check_dim(bounds.dim(), o.dim())?;
        }
        Ok(Self { bounds, obstacles })
    }

    /// `[-3, 2.5] × [-2, 1]` with the three obstacles of the synthetic benchmark.
    pub fn benchmark() -> Self {
        let b = |l: [f64; 2], h: [f64; 2]| AxisBox::new(l.to_vec(), h.to_vec()).expect("static box");
        Self {
            bounds: b([-3.0, -2.0], [2.5, 1.0]),
            obstacles: vec![
                b([0.4, 0.2], [0.6, 0.6]),
                b([0.6, 0.2], [0.7, 0.4]),
                b([-1.5, -1.5], [-0.5, -1.0]),
            ],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &AxisBox {
        &self.bounds
    }

    pub fn obstacles(&self) -> &[AxisBox] {
        &self.obstacles
    }

    pub fn is_safe(&self, x: &[f64]) -> bool {
        debug_assert_eq!(x.len(), self.dim());
        self.bounds.contains(x) && !self.obstacles.iter().any(|o| o.contains(x))
    }

    pub fn checked_is_safe(&self, x: &[f64]) -> Result<bool> {
        check_dim(self.dim(), x.len())?;
        Ok(self.is_safe(x))
    }

    /// `min_t 1_S(x_t)` over every state of the trajectory, including `t = 0`.
    pub fn trajectory_safe<'a>(&self, mut states: impl Iterator<Item = &'a [f64]>) -> bool {
        states.all(|x| self.is_safe(x))
    }

    /// `A ⊂ S` for a closed box, exact for axis-aligned geometry.
    pub fn contains_box(&self, cell: &AxisBox) -> bool {
        cell.is_subset_of(&self.bounds) && !self.obstacles.iter().any(|o| o.intersects(cell))
    }

    /// Obstacles clipped to the bounding box, dropping those with empty interior.
    pub fn clipped_obstacles(&self) -> Vec<AxisBox> {
        self.obstacles
            .iter()
            .filter_map(|o| o.intersection(&self.bounds))
            .collect()
    }
}
