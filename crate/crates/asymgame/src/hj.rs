//! Limit-value solvers: Hamiltonian evaluation and relaxation schemes for
//! the obstacle equation `min { rv + H(p, Dv); concavity constraint } = 0`
//! on the belief simplex, and for the two-sided double-obstacle system on
//! the product of two belief intervals.
//!
//! The advection term is discretized by decomposing the belief drift
//! `transpose(R) p` into nonnegative mass flows `R[s][k] p_s` along the
//! simplex edge directions `e_k - e_s`. Each flow's one-sided difference
//! points into the simplex wherever the flow is positive, so the scheme is
//! monotone up to the boundary with no special boundary casing, and the
//! saddle-point search over action pairs happens directly on the
//! discretized matrix.

use rayon::prelude::*;

use crate::analysis::Problem;
use crate::envelope::{self, BeliefGrid, ValueField};
use crate::game_model::{Belief, GameSpec, GameSpecTwoSided};
use crate::matrix_game::MatrixGame;
use crate::{Error, Result};

/// Hamiltonian of the limit equation.
pub enum Hamiltonian {
    /// Transitions ignore actions: `H(p, xi) = -<transpose(R)p, xi> - r u(p)`.
    Exogenous(Problem),
    /// The informed player's actions steer the chain: saddle value over
    /// mixed action pairs of the drift/payoff matrix.
    Endogenous(GameSpec),
    /// Both players steer and observe their own chains.
    TwoSided(GameSpecTwoSided),
}

impl Hamiltonian {
    pub fn discount(&self) -> f64 {
        match self {
            Hamiltonian::Exogenous(p) => p.r(),
            Hamiltonian::Endogenous(s) => s.discount,
            Hamiltonian::TwoSided(s) => s.discount,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Hamiltonian::Exogenous(p) => p.dim(),
            Hamiltonian::Endogenous(s) => s.n_states(),
            Hamiltonian::TwoSided(_) => 2,
        }
    }

    /// `H(p, xi)` for the one-sided kinds; `xi` is a gradient in full
    /// simplex coordinates (one entry per state).
    pub fn eval(&self, p: &Belief, xi: &[f64]) -> Result<f64> {
        match self {
            Hamiltonian::Exogenous(prob) => {
                let ns = p.dim();
                let r_mat = prob.semigroup().generator();
                let mut adv = 0.0;
                for s2 in 0..ns {
                    let mut drift = 0.0;
                    for s in 0..ns {
                        drift += r_mat[(s, s2)] * p[s];
                    }
                    adv += drift * xi[s2];
                }
                Ok(-adv - prob.r() * prob.u(p))
            }
            Hamiltonian::Endogenous(spec) => {
                let na = spec.n_actions1();
                let nb = spec.n_actions2();
                let ns = spec.n_states();
                let mut m = vec![vec![0.0; nb]; na];
                for (a, row) in m.iter_mut().enumerate() {
                    for (b, entry) in row.iter_mut().enumerate() {
                        let gen = spec.rate.generator(a, b);
                        let mut adv = 0.0;
                        for s2 in 0..ns {
                            let mut drift = 0.0;
                            for s in 0..ns {
                                drift += gen[s][s2] * p[s];
                            }
                            adv += drift * xi[s2];
                        }
                        let g: f64 = (0..ns).map(|s| p[s] * spec.payoff_at(s, a, b)).sum();
                        *entry = -adv - spec.discount * g;
                    }
                }
                minmax_matrix_value(&m)
            }
            Hamiltonian::TwoSided(_) => Err(Error::Domain(
                "two-sided Hamiltonians take two beliefs and two gradients".into(),
            )),
        }
    }

    /// `H(p1, p2, xi1, xi2)` for the two-sided kind.
    pub fn eval_two_sided(
        &self,
        p1: &Belief,
        p2: &Belief,
        xi1: &[f64],
        xi2: &[f64],
    ) -> Result<f64> {
        let Hamiltonian::TwoSided(spec) = self else {
            return Err(Error::Domain(
                "one-sided Hamiltonians take a single belief".into(),
            ));
        };
        let n1 = spec.n_states1();
        let n2 = spec.n_states2();
        let na = spec.n_actions1();
        let nb = spec.n_actions2();
        let mut adv1 = vec![0.0; na];
        for (a, adv) in adv1.iter_mut().enumerate() {
            let gen = spec.generator1(a);
            for s2 in 0..n1 {
                let mut drift = 0.0;
                for s in 0..n1 {
                    drift += gen[s][s2] * p1[s];
                }
                *adv += drift * xi1[s2];
            }
        }
        let mut adv2 = vec![0.0; nb];
        for (b, adv) in adv2.iter_mut().enumerate() {
            let gen = spec.generator2(b);
            for s2 in 0..n2 {
                let mut drift = 0.0;
                for s in 0..n2 {
                    drift += gen[s][s2] * p2[s];
                }
                *adv += drift * xi2[s2];
            }
        }
        let mut m = vec![vec![0.0; nb]; na];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, entry) in row.iter_mut().enumerate() {
                let mut g = 0.0;
                for s1 in 0..n1 {
                    for s2 in 0..n2 {
                        g += p1[s1] * p2[s2] * spec.payoff[s1][s2][a][b];
                    }
                }
                *entry = -adv1[a] - adv2[b] - spec.discount * g;
            }
        }
        minmax_matrix_value(&m)
    }
}

/// `min_x max_y x' M y` of a bilinear form: the negated maximin value of
/// `-M`.
pub fn minmax_matrix_value(m: &[Vec<f64>]) -> Result<f64> {
    let neg: Vec<Vec<f64>> = m
        .iter()
        .map(|row| row.iter().map(|x| -x).collect())
        .collect();
    Ok(-MatrixGame::new(neg)?
        .solve(crate::matrix_game::DEFAULT_TOL)?
        .value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveTag {
    /// `rv + H(p, Dv) = 0` is tight here (the non-revealing region).
    PdeActive,
    /// The concavity constraint binds here.
    ObstacleActive,
}

#[derive(Debug, Clone, Copy)]
pub struct SchemeConfig {
    /// Courant factor of the pseudo-time step.
    pub cfl: f64,
    /// Stop when the sup-norm change per sweep falls below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            cfl: 0.4,
            tol: 1e-8,
            max_sweeps: 2_000_000,
        }
    }
}

pub struct ObstacleField {
    pub field: ValueField,
    pub tags: Vec<ActiveTag>,
    pub sweeps: usize,
    pub final_change: f64,
}

/// Per-point discretization of the one-sided Hamiltonian: stage payoffs and
/// flow coefficients per action pair.
struct PointData {
    /// `r * g(p, a, b)` flattened over `a * nb + b`.
    stage: Vec<f64>,
    /// Per action pair: `(neighbor index, R[s][k] p_s / h)` flow terms.
    flows: Vec<Vec<(usize, f64)>>,
}

struct Discretization {
    grid: BeliefGrid,
    na: usize,
    nb: usize,
    points: Vec<PointData>,
    /// Largest total outflow across points and action pairs.
    max_rate: f64,
    r: f64,
}

impl Discretization {
    fn new(h: &Hamiltonian, m: usize) -> Result<Self> {
        let dim = h.dim();
        let grid = BeliefGrid::new(dim, m)?;
        let hstep = 1.0 / m as f64;
        let (na, nb, r) = match h {
            Hamiltonian::Exogenous(p) => (1, 1, p.r()),
            Hamiltonian::Endogenous(s) => (s.n_actions1(), s.n_actions2(), s.discount),
            Hamiltonian::TwoSided(_) => {
                return Err(Error::Domain(
                    "two-sided instances use the double-obstacle solver".into(),
                ))
            }
        };
        // generators per flattened action pair
        let gens: Vec<Vec<Vec<f64>>> = match h {
            Hamiltonian::Exogenous(p) => {
                let g = p.semigroup().generator();
                vec![(0..dim)
                    .map(|s| (0..dim).map(|s2| g[(s, s2)]).collect())
                    .collect()]
            }
            Hamiltonian::Endogenous(s) => (0..na * nb)
                .map(|ab| s.rate.generator(ab / nb, ab % nb))
                .collect(),
            Hamiltonian::TwoSided(_) => unreachable!(),
        };
        let mut max_rate = 0.0_f64;
        let points = (0..grid.n_points())
            .map(|idx| {
                let p = grid.point(idx);
                let (i, j) = grid.coords(idx);
                let stage: Vec<f64> = (0..na * nb)
                    .map(|ab| match h {
                        Hamiltonian::Exogenous(prob) => r * prob.u(&p),
                        Hamiltonian::Endogenous(s) => {
                            r * (0..dim)
                                .map(|st| p[st] * s.payoff_at(st, ab / nb, ab % nb))
                                .sum::<f64>()
                        }
                        Hamiltonian::TwoSided(_) => unreachable!(),
                    })
                    .collect();
                // exact lattice coordinates so boundary flows vanish
                // without float noise
                let lat: Vec<usize> = if dim == 2 {
                    vec![i, m - i]
                } else {
                    vec![i, j, m - i - j]
                };
                let flows: Vec<Vec<(usize, f64)>> = gens
                    .iter()
                    .map(|gen| {
                        let mut terms = Vec::new();
                        let mut total = 0.0;
                        for s in 0..dim {
                            if lat[s] == 0 {
                                continue;
                            }
                            for k in 0..dim {
                                if k == s || gen[s][k] <= 0.0 {
                                    continue;
                                }
                                let coef = gen[s][k] * (lat[s] as f64 / m as f64);
                                total += coef;
                                let nb_idx = neighbor_index(&grid, i, j, s, k);
                                terms.push((nb_idx, coef / hstep));
                            }
                        }
                        if total > max_rate {
                            max_rate = total;
                        }
                        terms
                    })
                    .collect();
                PointData { stage, flows }
            })
            .collect();
        Ok(Discretization {
            grid,
            na,
            nb,
            points,
            max_rate,
            r,
        })
    }

    /// `r v + H` at one point from one-sided flow differences.
    fn residual_at(&self, idx: usize, v: &[f64]) -> f64 {
        let pd = &self.points[idx];
        let vi = v[idx];
        if self.na == 1 && self.nb == 1 {
            let adv: f64 = pd.flows[0]
                .iter()
                .map(|&(q, c)| c * (v[q] - vi))
                .sum();
            return self.r * vi - adv - pd.stage[0];
        }
        let mut m = [[0.0f64; 4]; 4];
        for a in 0..self.na {
            for b in 0..self.nb {
                let ab = a * self.nb + b;
                let adv: f64 = pd.flows[ab]
                    .iter()
                    .map(|&(q, c)| c * (v[q] - vi))
                    .sum();
                m[a][b] = -adv - pd.stage[ab];
            }
        }
        self.r * vi + minmax_small(&m, self.na, self.nb)
    }
}

/// Lattice neighbor of `(i, j)` in direction `e_k - e_s`; callers guarantee
/// the move stays in the simplex (the source coordinate is positive).
fn neighbor_index(grid: &BeliefGrid, i: usize, j: usize, s: usize, k: usize) -> usize {
    if grid.dim() == 2 {
        // coordinate = probability of state 0
        match (s, k) {
            (0, 1) => grid.index2(i - 1),
            (1, 0) => grid.index2(i + 1),
            _ => unreachable!(),
        }
    } else {
        let (mut di, mut dj) = (i as isize, j as isize);
        match s {
            0 => di -= 1,
            1 => dj -= 1,
            _ => {}
        }
        match k {
            0 => di += 1,
            1 => dj += 1,
            _ => {}
        }
        grid.index3(di as usize, dj as usize)
    }
}

/// `min_x max_y` of a small matrix without allocation (closed forms for
/// degenerate and 2x2 shapes, exact LP otherwise).
fn minmax_small(m: &[[f64; 4]; 4], na: usize, nb: usize) -> f64 {
    match (na, nb) {
        (1, 1) => m[0][0],
        (1, _) => m[0][..nb].iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        (_, 1) => (0..na).map(|a| m[a][0]).fold(f64::INFINITY, f64::min),
        (2, 2) => {
            // minmax of M = -maximin of -M
            let (n00, n01, n10, n11) = (-m[0][0], -m[0][1], -m[1][0], -m[1][1]);
            let row_mins = [n00.min(n01), n10.min(n11)];
            let col_maxs = [n00.max(n10), n01.max(n11)];
            let maximin = row_mins[0].max(row_mins[1]);
            let minimax = col_maxs[0].min(col_maxs[1]);
            if maximin >= minimax {
                return -maximin;
            }
            let det = n00 + n11 - n01 - n10;
            -((n00 * n11 - n01 * n10) / det)
        }
        _ => {
            let rows: Vec<Vec<f64>> = (0..na).map(|a| m[a][..nb].to_vec()).collect();
            minmax_matrix_value(&rows).expect("finite small matrix")
        }
    }
}

/// Solves the one-sided obstacle equation by pseudo-time relaxation of the
/// advection part interleaved with projection onto concave fields.
pub fn solve_obstacle(h: &Hamiltonian, m: usize, cfg: &SchemeConfig) -> Result<ObstacleField> {
    let disc = Discretization::new(h, m)?;
    let hstep = 1.0 / m as f64;
    let dtau = cfg.cfl * hstep / (disc.max_rate + disc.r * hstep);
    let n = disc.grid.n_points();
    let mut v = vec![0.0f64; n];
    let mut sweeps = 0;
    let mut change = f64::INFINITY;
    let mut stall = StallDetector::new(cfg.tol);
    while change > cfg.tol {
        if sweeps >= cfg.max_sweeps {
            return Err(Error::NonConvergence(format!(
                "obstacle relaxation change {change} after {sweeps} sweeps"
            )));
        }
        let stepped: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|idx| v[idx] - dtau * disc.residual_at(idx, &v))
            .collect();
        let projected = envelope::cav(&ValueField::new(disc.grid.clone(), stepped)?)?;
        change = projected
            .values()
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v.copy_from_slice(projected.values());
        sweeps += 1;
        stall.observe(change, sweeps)?;
    }
    // tag the binding branch: one more advection step, then see where the
    // projection raises the field
    let stepped: Vec<f64> = (0..n)
        .map(|idx| v[idx] - dtau * disc.residual_at(idx, &v))
        .collect();
    let stepped = ValueField::new(disc.grid.clone(), stepped)?;
    let projected = envelope::cav(&stepped)?;
    let tags = projected
        .values()
        .iter()
        .zip(stepped.values())
        .map(|(c, s)| {
            if c - s > 1e-10 {
                ActiveTag::ObstacleActive
            } else {
                ActiveTag::PdeActive
            }
        })
        .collect();
    Ok(ObstacleField {
        field: ValueField::new(disc.grid, v)?,
        tags,
        sweeps,
        final_change: change,
    })
}

/// Flags relaxation loops whose residual stops decaying above tolerance.
struct StallDetector {
    tol: f64,
    window: Vec<f64>,
}

impl StallDetector {
    fn new(tol: f64) -> Self {
        StallDetector {
            tol,
            window: Vec::new(),
        }
    }

    fn observe(&mut self, change: f64, sweeps: usize) -> Result<()> {
        self.window.push(change);
        if self.window.len() >= 100 {
            let old = self.window.remove(0);
            if change > self.tol && change > old * 0.9999 {
                return Err(Error::NonConvergence(format!(
                    "projection cycle of amplitude {change} (was {old} a hundred sweeps \
                     earlier) after {sweeps} sweeps"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub worst_pde_residual: f64,
    pub worst_pde_index: Option<usize>,
    /// Most negative `rv + H` over the obstacle-tagged points (the
    /// supersolution side must stay above `-tolerance` where the
    /// concavity constraint binds).
    pub worst_supersolution_violation: f64,
    pub worst_supersolution_index: Option<usize>,
}

/// Checks the converged field against the Hamiltonian with central
/// differences: `|rv + H|` small where the equation is tagged tight, and
/// `rv + H` bounded below everywhere.
pub fn residual_check(of: &ObstacleField, h: &Hamiltonian) -> Result<ResidualReport> {
    let grid = of.field.grid();
    let m = grid.resolution();
    if grid.dim() != 2 {
        return Err(Error::UnsupportedDimension(
            "residual check is implemented for two-state grids".into(),
        ));
    }
    let hstep = 1.0 / m as f64;
    let r = h.discount();
    let mut report = ResidualReport {
        worst_pde_residual: 0.0,
        worst_pde_index: None,
        worst_supersolution_violation: 0.0,
        worst_supersolution_index: None,
    };
    let v = of.field.values();
    for i in 1..m {
        // gradient in full coordinates (d/dp0, d/dp1) of v(p0) with
        // p1 = 1 - p0: spread the directional derivative antisymmetrically
        let dv = (v[i + 1] - v[i - 1]) / (2.0 * hstep);
        let xi = [dv / 2.0, -dv / 2.0];
        let p = grid.point(i);
        let res = r * v[i] + h.eval(&p, &xi)?;
        if of.tags[i] == ActiveTag::PdeActive && res.abs() > report.worst_pde_residual {
            report.worst_pde_residual = res.abs();
            report.worst_pde_index = Some(i);
        }
        if of.tags[i] == ActiveTag::ObstacleActive && res < report.worst_supersolution_violation {
            report.worst_supersolution_violation = res;
            report.worst_supersolution_index = Some(i);
        }
    }
    Ok(report)
}

/// Converged two-sided field on the product grid `[0,1]^2`: coordinate `i`
/// indexes player 1's belief, `j` player 2's.
pub struct DoubleObstacleField {
    pub m: usize,
    /// Row-major `values[i * (m+1) + j]`.
    pub values: Vec<f64>,
    pub sweeps: usize,
    pub final_change: f64,
}

impl DoubleObstacleField {
    pub fn value_at(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.m + 1) + j]
    }
}

/// Solves the double-obstacle system for a two-state/two-state instance:
/// advection relaxation, then concavification along the p1 lines and
/// convexification along the p2 lines each sweep.
pub fn solve_double_obstacle(
    spec: &GameSpecTwoSided,
    m: usize,
    cfg: &SchemeConfig,
) -> Result<DoubleObstacleField> {
    if spec.n_states1() != 2 || spec.n_states2() != 2 {
        return Err(Error::UnsupportedDimension(
            "double-obstacle grids need two states per side".into(),
        ));
    }
    let violations = spec.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let na = spec.n_actions1();
    let nb = spec.n_actions2();
    if na > 4 || nb > 4 {
        return Err(Error::UnsupportedDimension(
            "at most 4 actions per player".into(),
        ));
    }
    let width = m + 1;
    let hstep = 1.0 / m as f64;
    let r = spec.discount;

    // flows per action for each side, per coordinate value
    // direction -1: mass 0 -> 1 at rate R[0][1] * x; +1: R[1][0] * (1 - x)
    let flow =
        |gen: &Vec<Vec<f64>>, x: f64| -> (f64, f64) { (gen[0][1] * x, gen[1][0] * (1.0 - x)) };
    let gens1: Vec<Vec<Vec<f64>>> = (0..na).map(|a| spec.generator1(a)).collect();
    let gens2: Vec<Vec<Vec<f64>>> = (0..nb).map(|b| spec.generator2(b)).collect();
    let mut max_rate = 0.0_f64;
    for gen in gens1.iter().chain(&gens2) {
        max_rate = max_rate.max(gen[0][1].max(gen[1][0]));
    }
    let dtau = cfg.cfl * hstep / (2.0 * max_rate + r * hstep);

    // per point: stage payoffs r*g and flow coefficients
    let stage: Vec<Vec<f64>> = (0..width * width)
        .map(|idx| {
            let (x, y) = ((idx / width) as f64 * hstep, (idx % width) as f64 * hstep);
            let p1 = [x, 1.0 - x];
            let p2 = [y, 1.0 - y];
            (0..na * nb)
                .map(|ab| {
                    let (a, b) = (ab / nb, ab % nb);
                    let mut g = 0.0;
                    for s1 in 0..2 {
                        for s2 in 0..2 {
                            g += p1[s1] * p2[s2] * spec.payoff[s1][s2][a][b];
                        }
                    }
                    r * g
                })
                .collect()
        })
        .collect();

    let mut v = vec![0.0f64; width * width];
    let mut sweeps = 0;
    let mut change = f64::INFINITY;
    let tol = cfg.tol.max(1e-7);
    let mut stall = StallDetector::new(tol);
    let mut line = vec![0.0f64; width];
    while change > tol {
        if sweeps >= cfg.max_sweeps {
            return Err(Error::NonConvergence(format!(
                "double-obstacle relaxation change {change} after {sweeps} sweeps"
            )));
        }
        let mut next: Vec<f64> = (0..width * width)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / width, idx % width);
                let (x, y) = (i as f64 * hstep, j as f64 * hstep);
                let vi = v[idx];
                let mut mat = [[0.0f64; 4]; 4];
                for a in 0..na {
                    let (f1m, f1p) = flow(&gens1[a], x);
                    let mut adv1 = 0.0;
                    if f1m > 0.0 && i > 0 {
                        adv1 += f1m * (v[idx - width] - vi) / hstep;
                    }
                    if f1p > 0.0 && i < m {
                        adv1 += f1p * (v[idx + width] - vi) / hstep;
                    }
                    for b in 0..nb {
                        let (f2m, f2p) = flow(&gens2[b], y);
                        let mut adv2 = 0.0;
                        if f2m > 0.0 && j > 0 {
                            adv2 += f2m * (v[idx - 1] - vi) / hstep;
                        }
                        if f2p > 0.0 && j < m {
                            adv2 += f2p * (v[idx + 1] - vi) / hstep;
                        }
                        mat[a][b] = -adv1 - adv2 - stage[idx][a * nb + b];
                    }
                }
                vi - dtau * (r * vi + minmax_small(&mat, na, nb))
            })
            .collect();
        // concave in p1 along each p2 line
        for j in 0..width {
            for i in 0..width {
                line[i] = next[i * width + j];
            }
            envelope::concave_envelope_1d(&mut line);
            for i in 0..width {
                next[i * width + j] = line[i];
            }
        }
        // convex in p2 along each p1 line
        for i in 0..width {
            let row = &mut next[i * width..(i + 1) * width];
            for x in row.iter_mut() {
                *x = -*x;
            }
            envelope::concave_envelope_1d(row);
            for x in row.iter_mut() {
                *x = -*x;
            }
        }
        change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        sweeps += 1;
        stall.observe(change, sweeps)?;
    }
    Ok(DoubleObstacleField {
        m,
        values: v,
        sweeps,
        final_change: change,
    })
}
