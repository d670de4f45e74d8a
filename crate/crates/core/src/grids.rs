//! Uniform meshes, dense surfaces and density slices.
//!
//! Every mesh in this crate is a tensor product of uniform axes. Surfaces are
//! stored row-major with time on rows and log-moneyness on columns; density
//! slices are row-major with log-moneyness on rows and variance on columns.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlvError};

/// Relative tolerance used for divisibility and node-coincidence checks.
pub const MESH_TOL: f64 = 1e-9;

/// Density values below `-NEGATIVE_CLIP_TOL` are counted when clipped at read-out.
pub const NEGATIVE_CLIP_TOL: f64 = 1e-12;

/// A uniform one-dimensional mesh `min + i * step`, `i = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AxisBounds", into = "AxisBounds")]
pub struct Axis {
    min: f64,
    max: f64,
    step: f64,
    count: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct AxisBounds {
    min: f64,
    max: f64,
    step: f64,
}

impl TryFrom<AxisBounds> for Axis {
    type Error = SlvError;

    fn try_from(b: AxisBounds) -> Result<Self> {
        Axis::new(b.min, b.max, b.step)
    }
}

impl From<Axis> for AxisBounds {
    fn from(a: Axis) -> Self {
        AxisBounds {
            min: a.min,
            max: a.max,
            step: a.step,
        }
    }
}

impl Axis {
    /// Builds the axis; `(max - min) / step` must be integral within [`MESH_TOL`].
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return Err(SlvError::InvalidBounds { min, max });
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(SlvError::NonIntegralStep { min, max, step });
        }
        let cells = (max - min) / step;
        let rounded = cells.round();
        if rounded < 1.0 || (cells - rounded).abs() > MESH_TOL * rounded.max(1.0) {
            return Err(SlvError::NonIntegralStep { min, max, step });
        }
        Ok(Axis {
            min,
            max,
            step,
            count: rounded as usize + 1,
        })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Number of cells, `N`.
    pub fn cells(&self) -> usize {
        self.count - 1
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.max
        } else {
            self.min + i as f64 * self.step
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.node(i)).collect()
    }

    /// Index of the node nearest to `value`, clamped to the axis.
    pub fn nearest_index(&self, value: f64) -> usize {
        let raw = ((value - self.min) / self.step).round();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.count - 1)
        }
    }

    /// Index of the node coinciding with `value` within `MESH_TOL * step`.
    pub fn index_of(&self, value: f64) -> Option<usize> {
        let i = self.nearest_index(value);
        ((self.node(i) - value).abs() <= MESH_TOL * self.step).then_some(i)
    }

    /// Same node set as `other` (bounds and step agree within tolerance).
    pub fn matches(&self, other: &Axis) -> bool {
        let tol = MESH_TOL * self.step.max(other.step);
        self.count == other.count
            && (self.min - other.min).abs() <= tol
            && (self.max - other.max).abs() <= tol
    }

    /// Trapezoid weight of node `i`: one half at the ends, one elsewhere.
    pub fn trapezoid_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.count {
            0.5
        } else {
            1.0
        }
    }
}

/// Build an axis from bounds and step.
pub fn build_axis(min: f64, max: f64, step: f64) -> Result<Axis> {
    Axis::new(min, max, step)
}

/// Time, log-moneyness and variance axes of one discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub time: Axis,
    pub x: Axis,
    pub v: Axis,
}

impl MeshSpec {
    pub fn new(time: Axis, x: Axis, v: Axis) -> Self {
        MeshSpec { time, x, v }
    }

    /// Coarse mesh of the reference experiment: dt 0.025, dx 0.05, dv 0.01.
    pub fn reference_coarse() -> Self {
        MeshSpec {
            time: Axis::new(0.0, 1.0, 0.025).expect("valid"),
            x: Axis::new(-3.0, 3.0, 0.05).expect("valid"),
            v: Axis::new(0.0, 1.0, 0.01).expect("valid"),
        }
    }

    /// Fine mesh of the reference experiment: dt 0.001, dx 0.025, dv 0.005.
    pub fn reference_fine() -> Self {
        MeshSpec {
            time: Axis::new(0.0, 1.0, 0.001).expect("valid"),
            x: Axis::new(-3.0, 3.0, 0.025).expect("valid"),
            v: Axis::new(0.0, 1.0, 0.005).expect("valid"),
        }
    }
}

/// Quadrature rule for the variance integrals behind the conditional variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    #[default]
    Trapezoid,
    /// Unit weights on every node.
    Plain,
}

/// A (time x log-moneyness) matrix of values, e.g. local volatility or leverage.
///
/// `NaN` marks a node as unavailable (degenerate density); all other entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    time: Axis,
    x: Axis,
    values: Vec<f64>,
}

impl Surface {
    pub fn new(time: Axis, x: Axis, values: Vec<f64>) -> Result<Self> {
        if values.len() != time.len() * x.len() {
            return Err(SlvError::ShapeMismatch(format!(
                "surface needs {}x{} values, got {}",
                time.len(),
                x.len(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| v.is_infinite()) {
            return Err(SlvError::InvalidParameter(format!(
                "surface value {bad} is not finite"
            )));
        }
        Ok(Surface { time, x, values })
    }

    pub fn from_fn(time: Axis, x: Axis, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(time.len() * x.len());
        for n in 0..time.len() {
            let t = time.node(n);
            for i in 0..x.len() {
                values.push(f(t, x.node(i)));
            }
        }
        Surface { time, x, values }
    }

    pub fn constant(time: Axis, x: Axis, value: f64) -> Self {
        Surface {
            time,
            x,
            values: vec![value; time.len() * x.len()],
        }
    }

    pub fn time_axis(&self) -> &Axis {
        &self.time
    }

    pub fn x_axis(&self) -> &Axis {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, n: usize, i: usize) -> f64 {
        self.values[n * self.x.len() + i]
    }

    pub fn set(&mut self, n: usize, i: usize, value: f64) {
        let nx = self.x.len();
        self.values[n * nx + i] = value;
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let nx = self.x.len();
        &self.values[n * nx..(n + 1) * nx]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        let nx = self.x.len();
        &mut self.values[n * nx..(n + 1) * nx]
    }

    /// Both axes match `other`'s node sets.
    pub fn same_axes(&self, other: &Surface) -> bool {
        self.time.matches(&other.time) && self.x.matches(&other.x)
    }

    pub fn is_available(&self, n: usize, i: usize) -> bool {
        !self.get(n, i).is_nan()
    }

    pub fn unavailable_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    /// Elementwise combination; `NaN` propagates.
    pub fn zip_map(&self, other: &Surface, f: impl Fn(f64, f64) -> f64) -> Result<Surface> {
        if !self.same_axes(other) {
            return Err(SlvError::AxisMismatch(
                "surfaces live on different meshes".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Surface {
            time: self.time,
            x: self.x,
            values,
        })
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Surface {
        Surface {
            time: self.time,
            x: self.x,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn nested_indices(fine: &Axis, coarse: &Axis, name: &str) -> Result<Vec<usize>> {
    (0..coarse.len())
        .map(|k| {
            let node = coarse.node(k);
            fine.index_of(node).ok_or_else(|| {
                SlvError::NonNestedMesh(format!("{name} node {node} has no fine counterpart"))
            })
        })
        .collect()
}

/// Point-samples `fine` at the nodes of `coarse_axes`; every coarse node must be a fine node.
pub fn restrict_surface(fine: &Surface, coarse_axes: (Axis, Axis)) -> Result<Surface> {
    let (ct, cx) = coarse_axes;
    let rows = nested_indices(&fine.time, &ct, "time")?;
    let cols = nested_indices(&fine.x, &cx, "x")?;
    let mut values = Vec::with_capacity(rows.len() * cols.len());
    for &n in &rows {
        let row = fine.row(n);
        values.extend(cols.iter().map(|&i| row[i]));
    }
    Ok(Surface {
        time: ct,
        x: cx,
        values,
    })
}

/// Joint density of (log-moneyness, variance) at one time node.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySlice {
    x: Axis,
    v: Axis,
    values: Vec<f64>,
    time_index: usize,
}

impl DensitySlice {
    pub fn new(x: Axis, v: Axis, values: Vec<f64>, time_index: usize) -> Result<Self> {
        if values.len() != x.len() * v.len() {
            return Err(SlvError::ShapeMismatch(format!(
                "density needs {}x{} values, got {}",
                x.len(),
                v.len(),
                values.len()
            )));
        }
        Ok(DensitySlice {
            x,
            v,
            values,
            time_index,
        })
    }

    pub fn zeros(x: Axis, v: Axis, time_index: usize) -> Self {
        DensitySlice {
            x,
            v,
            values: vec![0.0; x.len() * v.len()],
            time_index,
        }
    }

    pub fn x_axis(&self) -> &Axis {
        &self.x
    }

    pub fn v_axis(&self) -> &Axis {
        &self.v
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn set_time_index(&mut self, n: usize) {
        self.time_index = n;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.v.len() + j]
    }

    /// Trapezoid mass over the whole (x, v) mesh. This is the quantity the
    /// zero-flux scheme conserves.
    pub fn total_mass(&self) -> f64 {
        let nv = self.v.len();
        let mut mass = 0.0;
        for i in 0..self.x.len() {
            let wx = self.x.trapezoid_weight(i);
            let row = &self.values[i * nv..(i + 1) * nv];
            let inner: f64 = row
                .iter()
                .enumerate()
                .map(|(j, p)| self.v.trapezoid_weight(j) * p)
                .sum();
            mass += wx * inner;
        }
        mass * self.x.step() * self.v.step()
    }

    /// Count of entries below `-NEGATIVE_CLIP_TOL`.
    pub fn negative_count(&self) -> usize {
        self.values
            .iter()
            .filter(|&&p| p < -NEGATIVE_CLIP_TOL)
            .count()
    }

    /// x-marginal expectation of `f(x)` (trapezoid in both directions, negatives clipped).
    pub fn expect_x(&self, f: impl Fn(f64) -> f64) -> f64 {
        let m = trapezoid_moments(self, Quadrature::Trapezoid);
        (0..self.x.len())
            .map(|i| self.x.trapezoid_weight(i) * f(self.x.node(i)) * m.mass[i])
            .sum::<f64>()
            * self.x.step()
    }

    /// Expectation of the variance coordinate (trapezoid, negatives clipped).
    pub fn expect_v(&self) -> f64 {
        let m = trapezoid_moments(self, Quadrature::Trapezoid);
        (0..self.x.len())
            .map(|i| self.x.trapezoid_weight(i) * m.vmean[i])
            .sum::<f64>()
            * self.x.step()
    }
}

/// Per-x variance integrals of a density slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// `sum_j w_j p_ij dv`
    pub mass: Vec<f64>,
    /// `sum_j w_j v_j p_ij dv`
    pub vmean: Vec<f64>,
    /// Entries below `-NEGATIVE_CLIP_TOL` that were clipped to zero.
    pub clipped: usize,
}

impl Moments {
    /// Conditional variance `E[V | x_i]`, or `None` when the mass vanishes.
    pub fn conditional_variance(&self, i: usize) -> Option<f64> {
        (self.mass[i] > 0.0).then(|| self.vmean[i] / self.mass[i])
    }
}

/// Variance integrals per x-node; negative density values are read as zero.
pub fn trapezoid_moments(slice: &DensitySlice, rule: Quadrature) -> Moments {
    let nv = slice.v.len();
    let dv = slice.v.step();
    let weight = |j: usize| match rule {
        Quadrature::Trapezoid => slice.v.trapezoid_weight(j),
        Quadrature::Plain => 1.0,
    };
    let mut mass = Vec::with_capacity(slice.x.len());
    let mut vmean = Vec::with_capacity(slice.x.len());
    let mut clipped = 0;
    for i in 0..slice.x.len() {
        let row = &slice.values[i * nv..(i + 1) * nv];
        let (mut m0, mut m1) = (0.0, 0.0);
        for (j, &p) in row.iter().enumerate() {
            if p < -NEGATIVE_CLIP_TOL {
                clipped += 1;
            }
            let p = p.max(0.0);
            let w = weight(j) * p;
            m0 += w;
            m1 += w * slice.v.node(j);
        }
        mass.push(m0 * dv);
        vmean.push(m1 * dv);
    }
    Moments {
        mass,
        vmean,
        clipped,
    }
}
