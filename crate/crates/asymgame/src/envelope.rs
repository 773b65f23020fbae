//! Simplex grids, piecewise-linear value fields, and concave/convex
//! envelopes. Grid concavity is the discrete form of the curvature
//! constraints enforced by the obstacle solvers.

use crate::game_model::Belief;
use crate::{Error, Result};

/// Number of grid points of the resolution-`m` simplex grid, when supported.
pub fn grid_point_count(dim: usize, m: usize) -> Option<usize> {
    match dim {
        1 => Some(1),
        2 => Some(m + 1),
        3 => Some((m + 1) * (m + 2) / 2),
        _ => None,
    }
}

/// Uniform grid on the belief simplex: points `k/m` with `k` a nonnegative
/// integer vector summing to `m`. Two or three states only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeliefGrid {
    dim: usize,
    m: usize,
}

impl BeliefGrid {
    pub fn new(dim: usize, m: usize) -> Result<Self> {
        if grid_point_count(dim, m).is_none() {
            return Err(Error::UnsupportedDimension(format!(
                "grid solvers support at most 3 states, got {dim}"
            )));
        }
        if m == 0 {
            return Err(Error::Domain("grid resolution must be >= 1".into()));
        }
        Ok(BeliefGrid { dim, m })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn n_points(&self) -> usize {
        grid_point_count(self.dim, self.m).unwrap()
    }

    /// Index of the point with first coordinate `i/m` (two states).
    pub fn index2(&self, i: usize) -> usize {
        debug_assert!(self.dim == 2 && i <= self.m);
        i
    }

    /// Index of the point `(i/m, j/m, 1-(i+j)/m)` (three states).
    pub fn index3(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.dim == 3 && i + j <= self.m);
        i * (self.m + 1) - i * (i.saturating_sub(1)) / 2 + j
    }

    /// Lattice coordinates of point `idx`; second coordinate 0 for dim 2.
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        match self.dim {
            1 | 2 => (idx, 0),
            _ => {
                let mut i = 0;
                let mut offset = 0;
                while offset + (self.m - i + 1) <= idx {
                    offset += self.m - i + 1;
                    i += 1;
                }
                (i, idx - offset)
            }
        }
    }

    pub fn point(&self, idx: usize) -> Belief {
        let m = self.m as f64;
        match self.dim {
            1 => Belief::vertex(1, 0),
            2 => {
                let x = idx as f64 / m;
                Belief::new(vec![x, 1.0 - x]).unwrap()
            }
            _ => {
                let (i, j) = self.coords(idx);
                let (x, y) = (i as f64 / m, j as f64 / m);
                Belief::from_unnormalized(vec![x, y, 1.0 - x - y])
            }
        }
    }

    pub fn points(&self) -> Vec<Belief> {
        (0..self.n_points()).map(|idx| self.point(idx)).collect()
    }
}

/// A function sampled on a [`BeliefGrid`], evaluated elsewhere by piecewise
/// linear interpolation on the standard triangulation.
#[derive(Debug, Clone)]
pub struct ValueField {
    grid: BeliefGrid,
    values: Vec<f64>,
}

impl ValueField {
    pub fn new(grid: BeliefGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::Dimension(format!(
                "field has {} values for a {}-point grid",
                values.len(),
                grid.n_points()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite field value {bad}")));
        }
        Ok(ValueField { grid, values })
    }

    pub fn from_fn(grid: BeliefGrid, f: impl Fn(&Belief) -> f64) -> Result<Self> {
        let values = (0..grid.n_points()).map(|i| f(&grid.point(i))).collect();
        ValueField::new(grid, values)
    }

    pub fn grid(&self) -> &BeliefGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Piecewise-linear evaluation. Inputs slightly outside the simplex are
    /// clamped and renormalized before lookup.
    pub fn eval(&self, p: &Belief) -> f64 {
        self.eval_probs(p.as_slice())
    }

    /// [`ValueField::eval`] on a raw probability slice; avoids building a
    /// `Belief` in solver inner loops.
    pub fn eval_probs(&self, p: &[f64]) -> f64 {
        let m = self.grid.m as f64;
        match self.grid.dim {
            1 => self.values[0],
            2 => {
                let x = (p[0].clamp(0.0, 1.0)) * m;
                let i = (x.floor() as usize).min(self.grid.m - 1);
                let f = x - i as f64;
                self.values[i] * (1.0 - f) + self.values[i + 1] * f
            }
            _ => {
                let total: f64 = p.iter().map(|v| v.clamp(0.0, 1.0)).sum();
                let x = p[0].clamp(0.0, 1.0) / total * m;
                let y = p[1].clamp(0.0, 1.0) / total * m;
                let mut i = (x.floor() as usize).min(self.grid.m - 1);
                let mut j = (y.floor() as usize).min(self.grid.m - 1);
                while i + j >= self.grid.m {
                    if i > 0 && i as f64 > x - 1e-12 {
                        i -= 1;
                    } else {
                        j -= 1;
                    }
                }
                let (fx, fy) = (x - i as f64, y - j as f64);
                if fx + fy <= 1.0 {
                    self.values[self.grid.index3(i, j)] * (1.0 - fx - fy)
                        + self.values[self.grid.index3(i + 1, j)] * fx
                        + self.values[self.grid.index3(i, j + 1)] * fy
                } else {
                    self.values[self.grid.index3(i + 1, j + 1)] * (fx + fy - 1.0)
                        + self.values[self.grid.index3(i, j + 1)] * (1.0 - fx)
                        + self.values[self.grid.index3(i + 1, j)] * (1.0 - fy)
                }
            }
        }
    }
}

/// In-place upper concave envelope of uniformly spaced samples
/// (monotone-chain upper hull, exact).
pub fn concave_envelope_1d(values: &mut [f64]) {
    let n = values.len();
    if n < 3 {
        return;
    }
    // hull holds indices of the upper hull, left to right
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b if it lies on or below chord a..i
            let cross = (values[b] - values[a]) * (i - a) as f64
                - (values[i] - values[a]) * (b - a) as f64;
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in a + 1..b {
            let t = (i - a) as f64 / (b - a) as f64;
            // never round below the input: keeps dominance exact
            values[i] = (values[a] * (1.0 - t) + values[b] * t).max(values[i]);
        }
    }
}

/// Lattice directions used for three-state envelope sweeps and concavity
/// checks. Each sums to zero in belief coordinates, so chords along them
/// stay inside the simplex.
const DIRECTIONS_3: [(isize, isize); 4] = [(1, 0), (0, 1), (1, -1), (1, 1)];

const SWEEP_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 10_000;

/// Pointwise smallest concave function above `f` among piecewise-linear
/// functions on the grid. Exact hull for two states; for three states,
/// envelope sweeps along lattice lines until no point rises by more than
/// 1e-12.
pub fn cav(f: &ValueField) -> Result<ValueField> {
    let mut out = f.clone();
    match f.grid.dim {
        1 => {}
        2 => {
            // iterate to an exact fixed point: rounding in the chord
            // interpolation can lift points by an ulp, so one pass is not
            // always idempotent at machine precision
            for _ in 0..100 {
                let before = out.values.clone();
                concave_envelope_1d(&mut out.values);
                if out.values == before {
                    break;
                }
            }
        }
        _ => {
            let m = out.grid.m as isize;
            let mut line = Vec::with_capacity(out.grid.m + 1);
            for sweep in 0.. {
                if sweep == MAX_SWEEPS {
                    return Err(Error::NonConvergence(
                        "concave envelope sweeps exceeded cap".into(),
                    ));
                }
                let mut change = 0.0_f64;
                for &(di, dj) in &DIRECTIONS_3 {
                    // enumerate maximal lattice lines in direction (di,dj)
                    for i0 in 0..=m {
                        for j0 in 0..=(m - i0) {
                            let prev_in = in_simplex(i0 - di, j0 - dj, m);
                            if prev_in {
                                continue; // not the start of a maximal line
                            }
                            line.clear();
                            let (mut i, mut j) = (i0, j0);
                            while in_simplex(i, j, m) {
                                line.push(out.grid.index3(i as usize, j as usize));
                                i += di;
                                j += dj;
                            }
                            if line.len() < 3 {
                                continue;
                            }
                            let mut vals: Vec<f64> =
                                line.iter().map(|&idx| out.values[idx]).collect();
                            concave_envelope_1d(&mut vals);
                            for (k, &idx) in line.iter().enumerate() {
                                change = change.max(vals[k] - out.values[idx]);
                                out.values[idx] = vals[k];
                            }
                        }
                    }
                }
                if change <= SWEEP_TOL {
                    break;
                }
            }
        }
    }
    Ok(out)
}

fn in_simplex(i: isize, j: isize, m: isize) -> bool {
    i >= 0 && j >= 0 && i + j <= m
}

/// Largest convex function below `f`: the mirror of [`cav`].
pub fn vex(f: &ValueField) -> Result<ValueField> {
    let mut neg = f.clone();
    for v in &mut neg.values {
        *v = -*v;
    }
    let mut out = cav(&neg)?;
    for v in &mut out.values {
        *v = -*v;
    }
    Ok(out)
}

/// Worst positive second difference over interior grid directions; a field
/// is concave on the grid when this stays within tolerance.
#[derive(Debug, Clone)]
pub struct ConcavityReport {
    pub concave: bool,
    pub worst_violation: f64,
    pub worst_index: usize,
}

pub fn is_concave(f: &ValueField, tol: f64) -> ConcavityReport {
    let mut worst = 0.0_f64;
    let mut worst_index = 0;
    match f.grid.dim {
        1 => {}
        2 => {
            for i in 1..f.grid.m {
                let d2 = f.values[i - 1] + f.values[i + 1] - 2.0 * f.values[i];
                if d2 > worst {
                    worst = d2;
                    worst_index = i;
                }
            }
        }
        _ => {
            let m = f.grid.m as isize;
            for idx in 0..f.grid.n_points() {
                let (i, j) = f.grid.coords(idx);
                let (i, j) = (i as isize, j as isize);
                for &(di, dj) in &DIRECTIONS_3 {
                    if in_simplex(i - di, j - dj, m) && in_simplex(i + di, j + dj, m) {
                        let a = f.values[f.grid.index3((i - di) as usize, (j - dj) as usize)];
                        let b = f.values[f.grid.index3((i + di) as usize, (j + dj) as usize)];
                        let d2 = a + b - 2.0 * f.values[idx];
                        if d2 > worst {
                            worst = d2;
                            worst_index = idx;
                        }
                    }
                }
            }
        }
    }
    ConcavityReport {
        concave: worst <= tol,
        worst_violation: worst,
        worst_index,
    }
}
