//! Discounted-payoff functionals along the deterministic belief flow:
//! quadrature machinery, the non-revealing and fully-revealing lower bounds,
//! the concavified upper bound, and the two-state closed form.

use once_cell::sync::Lazy;

use crate::chain::Semigroup;
use crate::envelope::{self, BeliefGrid, ValueField};
use crate::game_model::{AbstractUSpec, Belief, GameSpec, SpecDocument};
use crate::matrix_game;
use crate::{catalog, Error, Result};

pub const QUAD_TOL: f64 = 1e-8;

/// Cav-field resolutions when the stage function is only available by
/// sampling (one LP per point).
const CAV_GRID_2: usize = 20000;
const CAV_GRID_3: usize = 200;

/// One informed-player problem reduced to what the flow bounds need: the
/// stage value function u, the chain semigroup, and the discount rate.
pub struct Problem {
    semigroup: Semigroup,
    r: f64,
    dim: usize,
    u: Box<dyn Fn(&Belief) -> f64 + Sync + Send>,
    table_resolution: Option<usize>,
}

impl Problem {
    pub fn from_game(spec: &GameSpec) -> Result<Self> {
        if !spec.rate.is_exogenous() {
            return Err(Error::Domain(
                "flow bounds are defined for state-independent-of-actions transitions".into(),
            ));
        }
        let semigroup = Semigroup::new(&spec.rate.generator(0, 0))?;
        let owned = spec.clone();
        Ok(Problem {
            semigroup,
            r: spec.discount,
            dim: spec.n_states(),
            u: Box::new(move |p| {
                matrix_game::average_game_value(&owned, p).expect("validated spec")
            }),
            table_resolution: None,
        })
    }

    pub fn from_abstract(spec: &AbstractUSpec) -> Result<Self> {
        let semigroup = Semigroup::new(&spec.rate.generator(0, 0))?;
        let dim = spec.states.len();
        let grid = BeliefGrid::new(dim, spec.u.grid_resolution)?;
        let field = ValueField::new(grid, spec.u.values.clone())?;
        Ok(Problem {
            semigroup,
            r: spec.discount,
            dim,
            table_resolution: Some(spec.u.grid_resolution),
            u: Box::new(move |p| field.eval(p)),
        })
    }

    pub fn from_document(doc: &SpecDocument) -> Result<Self> {
        match doc {
            SpecDocument::OneSided(s) => Problem::from_game(s),
            SpecDocument::AbstractU(s) => Problem::from_abstract(s),
            SpecDocument::TwoSided(_) => Err(Error::Domain(
                "flow bounds apply to one-sided problems only".into(),
            )),
        }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn semigroup(&self) -> &Semigroup {
        &self.semigroup
    }

    pub fn u(&self, p: &Belief) -> f64 {
        (self.u)(p)
    }

    pub fn flow(&self, p: &Belief, t: f64) -> Result<Belief> {
        self.semigroup.belief_flow(p, t)
    }

    /// u sampled on a grid; tables keep their native resolution so kinks at
    /// table nodes are preserved exactly.
    pub fn u_field(&self, m: Option<usize>) -> Result<ValueField> {
        let m = m
            .or(self.table_resolution)
            .unwrap_or(if self.dim == 2 { CAV_GRID_2 } else { CAV_GRID_3 });
        let grid = BeliefGrid::new(self.dim, m)?;
        ValueField::from_fn(grid, |p| self.u(p))
    }

    pub fn cav_u_field(&self, m: Option<usize>) -> Result<ValueField> {
        envelope::cav(&self.u_field(m)?)
    }
}

/// 64-point Gauss-Legendre nodes and weights on [-1, 1].
static GL64: Lazy<(Vec<f64>, Vec<f64>)> = Lazy::new(|| gauss_legendre(64));

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Chebyshev-like initial guess, refined by Newton on P_n
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        nodes[n - 1 - k] = x;
        weights[n - 1 - k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn gl_panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (nodes, weights) = &*GL64;
    let half = (b - a) / 2.0;
    let mid = (a + b) / 2.0;
    nodes
        .iter()
        .zip(weights)
        .map(|(&x, &w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let mid = (a + b) / 2.0;
    let left = gl_panel(f, a, mid);
    let right = gl_panel(f, mid, b);
    let refined = left + right;
    if (refined - whole).abs() <= tol || depth >= 24 {
        refined
    } else {
        adaptive(f, a, mid, left, tol / 2.0, depth + 1)
            + adaptive(f, mid, b, right, tol / 2.0, depth + 1)
    }
}

/// Adaptive quadrature over [a, b], refined until successive bisections
/// differ by at most `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adaptive(f, a, b, gl_panel(f, a, b), tol, 0)
}

/// The discounted integral of `phi(p*_t)` in the substituted variable
/// `tau = 1 - exp(-rt)`, which maps the half-line onto [0, 1) and absorbs
/// the discount weight entirely.
pub fn discounted_flow_integral(
    prob: &Problem,
    p: &Belief,
    phi: &dyn Fn(&Belief) -> f64,
    tol: f64,
) -> f64 {
    let r = prob.r;
    let f = move |tau: f64| {
        let t = -(1.0 - tau.min(1.0 - 1e-16)).ln() / r;
        phi(&prob.flow(p, t).expect("flow time is nonnegative"))
    };
    integrate(&f, 0.0, 1.0, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrandRecipe {
    /// u along the deterministic flow: the non-revealing guarantee.
    UOnFlow,
    /// cav u along the flow: the information-advantage upper bound.
    CavUOnFlow,
    /// vertex values of u weighted by the flow: full revelation at time 0.
    VertexWeightedFlow,
}

/// A discounted flow functional with its quadrature settings.
pub struct DiscountedIntegral {
    pub recipe: IntegrandRecipe,
    pub p: Belief,
    pub tol: f64,
}

impl DiscountedIntegral {
    pub fn evaluate(&self, prob: &Problem) -> Result<f64> {
        match self.recipe {
            IntegrandRecipe::UOnFlow => {
                Ok(discounted_flow_integral(prob, &self.p, &|q| prob.u(q), self.tol))
            }
            IntegrandRecipe::CavUOnFlow => {
                let cav = prob.cav_u_field(None)?;
                Ok(discounted_flow_integral(prob, &self.p, &|q| cav.eval(q), self.tol))
            }
            IntegrandRecipe::VertexWeightedFlow => {
                let vertex_u: Vec<f64> = (0..prob.dim)
                    .map(|s| prob.u(&Belief::vertex(prob.dim, s)))
                    .collect();
                Ok(discounted_flow_integral(
                    prob,
                    &self.p,
                    &|q| (0..prob.dim).map(|s| vertex_u[s] * q[s]).sum(),
                    self.tol,
                ))
            }
        }
    }
}

pub fn upper_bound(prob: &Problem, p: &Belief) -> Result<f64> {
    DiscountedIntegral {
        recipe: IntegrandRecipe::CavUOnFlow,
        p: p.clone(),
        tol: QUAD_TOL,
    }
    .evaluate(prob)
}

pub fn lower_bound_nonrevealing(prob: &Problem, p: &Belief) -> Result<f64> {
    DiscountedIntegral {
        recipe: IntegrandRecipe::UOnFlow,
        p: p.clone(),
        tol: QUAD_TOL,
    }
    .evaluate(prob)
}

pub fn lower_bound_fully_revealing(prob: &Problem, p: &Belief) -> Result<f64> {
    DiscountedIntegral {
        recipe: IntegrandRecipe::VertexWeightedFlow,
        p: p.clone(),
        tol: QUAD_TOL,
    }
    .evaluate(prob)
}

/// Two-state symmetric instance value in closed form.
pub fn closed_form_example(p: f64, r: f64, pi: f64) -> Result<f64> {
    catalog::renault_closed_form(p, r, pi)
}

#[derive(Debug, Clone)]
pub struct SandwichRow {
    pub p: Belief,
    pub lower_nonrevealing: f64,
    pub lower_fully_revealing: f64,
    pub upper: f64,
}

/// Both lower bounds and the upper bound per grid point; errors if the
/// sandwich ordering fails anywhere beyond quadrature tolerance.
pub fn sandwich_report(prob: &Problem, grid: &BeliefGrid) -> Result<Vec<SandwichRow>> {
    let cav = prob.cav_u_field(None)?;
    let vertex_u: Vec<f64> = (0..prob.dim)
        .map(|s| prob.u(&Belief::vertex(prob.dim, s)))
        .collect();
    let mut rows = Vec::with_capacity(grid.n_points());
    for idx in 0..grid.n_points() {
        let p = grid.point(idx);
        let lower1 = discounted_flow_integral(prob, &p, &|q| prob.u(q), QUAD_TOL);
        let lower2 = discounted_flow_integral(
            prob,
            &p,
            &|q| (0..prob.dim).map(|s| vertex_u[s] * q[s]).sum(),
            QUAD_TOL,
        );
        let upper = discounted_flow_integral(prob, &p, &|q| cav.eval(q), QUAD_TOL);
        if lower1.max(lower2) > upper + 1e-8 {
            return Err(Error::Domain(format!(
                "bound ordering violated at {:?}: max({lower1}, {lower2}) > {upper}",
                p.as_slice()
            )));
        }
        rows.push(SandwichRow {
            p,
            lower_nonrevealing: lower1,
            lower_fully_revealing: lower2,
            upper,
        });
    }
    Ok(rows)
}
