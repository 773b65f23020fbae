//! Exact value and optimal mixed strategies of finite zero-sum matrix games.
//!
//! The solver is a dense primal simplex on the standard minimax LP with
//! Bland's rule, so it terminates deterministically without external
//! dependencies. 2x2 games take a closed-form fast path (they dominate the
//! Hamiltonian evaluators' inner loops); the result is verified against the
//! same duality-gap contract either way.

use crate::game_model::{Belief, GameSpec};
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-9;

/// A zero-sum matrix game; `matrix[a][b]` is the payoff to the row
/// maximizer.
#[derive(Debug, Clone)]
pub struct MatrixGame {
    matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub value: f64,
    /// Optimal mixed strategy of the row maximizer.
    pub row_strategy: Vec<f64>,
    /// Optimal mixed strategy of the column minimizer.
    pub col_strategy: Vec<f64>,
    /// Set when the first solve stalled and a perturbed restart was used.
    pub degenerate: bool,
}

impl MatrixGame {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        if matrix.is_empty() || matrix[0].is_empty() {
            return Err(Error::Dimension("matrix must be at least 1x1".into()));
        }
        let nb = matrix[0].len();
        if matrix.iter().any(|r| r.len() != nb) {
            return Err(Error::Dimension("ragged matrix".into()));
        }
        if matrix.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Domain("matrix entries must be finite".into()));
        }
        Ok(MatrixGame { matrix })
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix[0].len()
    }

    pub fn entry(&self, a: usize, b: usize) -> f64 {
        self.matrix[a][b]
    }

    /// max over rows of min over columns, i.e. the game value, together
    /// with optimal strategies for both players.
    pub fn solve(&self, tol: f64) -> Result<Solution> {
        if !(tol > 0.0) {
            return Err(Error::Domain(format!("tol must be positive, got {tol}")));
        }
        if self.n_rows() == 2 && self.n_cols() == 2 {
            let sol = solve_2x2(&self.matrix);
            if self.duality_gap(&sol) <= tol {
                return Ok(sol);
            }
        }
        let mut sol = solve_simplex(&self.matrix)?;
        if self.duality_gap(&sol) <= tol {
            return Ok(sol);
        }
        // Perturbed restarts for degenerate pivoting.
        for scale_pow in [-11_i32, -9, -7] {
            let eps = 10f64.powi(scale_pow);
            let perturbed: Vec<Vec<f64>> = self
                .matrix
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(j, &x)| x + eps * ((i * 31 + j * 17) % 7) as f64)
                        .collect()
                })
                .collect();
            let mut cand = solve_simplex(&perturbed)?;
            cand.degenerate = true;
            // Re-evaluate the strategies against the unperturbed matrix.
            let lo = self.guarantee_row(&cand.row_strategy);
            let hi = self.guarantee_col(&cand.col_strategy);
            cand.value = 0.5 * (lo + hi);
            if hi - lo <= tol {
                return Ok(cand);
            }
            if hi - lo < self.duality_gap(&sol) {
                sol = cand;
            }
        }
        Ok(sol)
    }

    /// min over pure columns of the row strategy's expected payoff.
    pub fn guarantee_row(&self, x: &[f64]) -> f64 {
        (0..self.n_cols())
            .map(|b| {
                self.matrix
                    .iter()
                    .zip(x)
                    .map(|(row, &xa)| xa * row[b])
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// max over pure rows of the column strategy's expected payoff.
    pub fn guarantee_col(&self, y: &[f64]) -> f64 {
        self.matrix
            .iter()
            .map(|row| row.iter().zip(y).map(|(&g, &yb)| g * yb).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn duality_gap(&self, sol: &Solution) -> f64 {
        self.guarantee_col(&sol.col_strategy) - self.guarantee_row(&sol.row_strategy)
    }
}

fn solve_2x2(m: &[Vec<f64>]) -> Solution {
    let (m00, m01, m10, m11) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    // Pure saddle point if maximin == minimax over pure actions.
    let row_mins = [m00.min(m01), m10.min(m11)];
    let col_maxs = [m00.max(m10), m01.max(m11)];
    let maximin = row_mins[0].max(row_mins[1]);
    let minimax = col_maxs[0].min(col_maxs[1]);
    if maximin >= minimax {
        let a = if row_mins[0] >= row_mins[1] { 0 } else { 1 };
        let b = if col_maxs[0] <= col_maxs[1] { 0 } else { 1 };
        let mut x = vec![0.0; 2];
        let mut y = vec![0.0; 2];
        x[a] = 1.0;
        y[b] = 1.0;
        return Solution {
            value: maximin,
            row_strategy: x,
            col_strategy: y,
            degenerate: false,
        };
    }
    let det = m00 + m11 - m01 - m10;
    let x0 = (m11 - m10) / det;
    let y0 = (m11 - m01) / det;
    let value = (m00 * m11 - m01 * m10) / det;
    Solution {
        value,
        row_strategy: vec![x0, 1.0 - x0],
        col_strategy: vec![y0, 1.0 - y0],
        degenerate: false,
    }
}

/// Standard minimax LP: after shifting the matrix positive, maximize
/// `sum(w)` subject to `M' w <= 1`, `w >= 0`. The optimum gives the column
/// strategy (`y = w * v'`) and the duals of the row constraints give the
/// row strategy.
fn solve_simplex(m: &[Vec<f64>]) -> Result<Solution> {
    let na = m.len();
    let nb = m[0].len();
    let min_entry = m.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min_entry;
    let ncols = nb + na; // structural vars + slacks
    let mut tab: Vec<Vec<f64>> = Vec::with_capacity(na + 1);
    for a in 0..na {
        let mut row = vec![0.0; ncols + 1];
        for b in 0..nb {
            row[b] = m[a][b] + shift;
        }
        row[nb + a] = 1.0;
        row[ncols] = 1.0;
        tab.push(row);
    }
    // Objective row holds reduced costs (c_j - z_j); positive = improving.
    let mut obj = vec![0.0; ncols + 1];
    for b in 0..nb {
        obj[b] = 1.0;
    }
    let mut basis: Vec<usize> = (0..na).map(|i| nb + i).collect();

    let max_pivots = 50 * (na + nb) * (na + nb) + 1000;
    for _ in 0..max_pivots {
        // Bland's rule: smallest improving column index.
        let Some(enter) = (0..ncols).find(|&j| obj[j] > 1e-12) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..na {
            let a = tab[i][enter];
            if a > 1e-12 {
                let ratio = tab[i][ncols] / a;
                if ratio < best_ratio - 1e-15
                    || (ratio < best_ratio + 1e-15
                        && leave.map_or(true, |l| basis[i] < basis[l]))
                {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(leave) = leave else {
            return Err(Error::Domain("unbounded minimax LP".into()));
        };
        // Pivot.
        let piv = tab[leave][enter];
        for v in tab[leave].iter_mut() {
            *v /= piv;
        }
        for i in 0..na {
            if i != leave {
                let f = tab[i][enter];
                if f != 0.0 {
                    for j in 0..=ncols {
                        tab[i][j] -= f * tab[leave][j];
                    }
                }
            }
        }
        let f = obj[enter];
        if f != 0.0 {
            for j in 0..=ncols {
                obj[j] -= f * tab[leave][j];
            }
        }
        basis[leave] = enter;
    }

    let mut w = vec![0.0; nb];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < nb {
            w[bv] = tab[i][ncols].max(0.0);
        }
    }
    let w_sum: f64 = w.iter().sum();
    if w_sum <= 0.0 {
        return Err(Error::Domain("degenerate minimax LP optimum".into()));
    }
    let vprime = 1.0 / w_sum;
    let col_strategy: Vec<f64> = w.iter().map(|&x| x * vprime).collect();
    // Duals of the row constraints = -reduced costs of slack columns.
    let mut x: Vec<f64> = (0..na).map(|a| (-obj[nb + a]).max(0.0)).collect();
    let x_sum: f64 = x.iter().sum();
    if x_sum <= 0.0 {
        return Err(Error::Domain("degenerate minimax LP duals".into()));
    }
    for v in &mut x {
        *v /= x_sum;
    }
    Ok(Solution {
        value: vprime - shift,
        row_strategy: x,
        col_strategy,
        degenerate: false,
    })
}

/// The average one-shot game at belief `p`: `M[a][b] = sum_s p(s) g(s,a,b)`.
pub fn average_game(spec: &GameSpec, p: &Belief) -> Result<MatrixGame> {
    if p.dim() != spec.n_states() {
        return Err(Error::Dimension(format!(
            "belief dimension {} does not match |S| = {}",
            p.dim(),
            spec.n_states()
        )));
    }
    let na = spec.n_actions1();
    let nb = spec.n_actions2();
    let matrix = (0..na)
        .map(|a| {
            (0..nb)
                .map(|b| {
                    (0..spec.n_states())
                        .map(|s| p[s] * spec.payoff_at(s, a, b))
                        .sum()
                })
                .collect()
        })
        .collect();
    MatrixGame::new(matrix)
}

/// The one-shot value `u(p)`.
pub fn average_game_value(spec: &GameSpec, p: &Belief) -> Result<f64> {
    Ok(average_game(spec, p)?.solve(DEFAULT_TOL)?.value)
}
