//! Discrete-time value of the high-frequency game: value iteration on the
//! one-stage splitting operator over a belief grid, with the informed
//! player's state-dependent mixed actions searched on a simplex grid.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::chain::Semigroup;
use crate::envelope::{self, BeliefGrid, ValueField};
use crate::game_model::{Belief, GameSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct DpConfig {
    /// Stage frequency: stages last `1/n` time units.
    pub n: u32,
    /// Belief-grid resolution.
    pub grid_m: usize,
    /// Resolution of the per-state mixed-action grid.
    pub x_grid_k: usize,
    /// Fixed-point tolerance on the sup-norm change per iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Follow the grid search with one coordinate-ascent pass from the best
    /// grid profile. This enlarges the searched set by candidates that
    /// depend on the current field, so the exact operator identities
    /// (contraction, monotonicity) are stated for `refine = false`.
    pub refine: bool,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            n: 32,
            grid_m: 200,
            x_grid_k: 40,
            tol: 1e-6,
            max_iter: 100_000,
            refine: true,
        }
    }
}

impl DpConfig {
    fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Domain("stage frequency n must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Domain("tolerance must be positive".into()));
        }
        if self.x_grid_k < 1 || self.grid_m < 1 {
            return Err(Error::Domain("grid resolutions must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-stage discount weight of stage length `1/n` at rate `r`.
pub fn stage_weight(r: f64, n: u32) -> f64 {
    1.0 - (-r / n as f64).exp()
}

/// Action marginal and posteriors induced at `p` by a state-dependent
/// mixed action `x[s][a]`.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    /// `marginal[a] = sum_s p(s) x_s(a)`.
    pub marginal: Vec<f64>,
    /// Posterior given each action; `None` when the action has zero
    /// probability under every state charged by `p`.
    pub posteriors: Vec<Option<Belief>>,
}

pub fn split(p: &Belief, x: &[Vec<f64>]) -> SplitOutcome {
    let ns = p.dim();
    let na = x[0].len();
    let mut marginal = vec![0.0; na];
    for s in 0..ns {
        for a in 0..na {
            marginal[a] += p[s] * x[s][a];
        }
    }
    let posteriors = (0..na)
        .map(|a| {
            if marginal[a] <= 0.0 {
                None
            } else {
                Some(Belief::from_unnormalized(
                    (0..ns).map(|s| p[s] * x[s][a] / marginal[a]).collect(),
                ))
            }
        })
        .collect();
    SplitOutcome {
        marginal,
        posteriors,
    }
}

/// All distributions `j/k` over `na` actions with integer numerators.
fn action_grid(na: usize, k: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; na];
    fill_compositions(na, k, 0, k, &mut current, &mut out);
    out
}

fn fill_compositions(
    na: usize,
    k: usize,
    pos: usize,
    left: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<f64>>,
) {
    if pos == na - 1 {
        current[pos] = left;
        out.push(current.iter().map(|&j| j as f64 / k as f64).collect());
        return;
    }
    for j in 0..=left {
        current[pos] = j;
        fill_compositions(na, k, pos + 1, left - j, current, out);
    }
}

/// The one-stage operator with everything instance-wide precomputed.
struct Operator {
    spec: GameSpec,
    grid: BeliefGrid,
    lambda: f64,
    /// `P_{1/n}` per action pair; a single entry when transitions ignore
    /// actions.
    transitions: Vec<Arc<DMatrix<f64>>>,
    exogenous: bool,
    /// Candidate per-state mixed actions.
    dists: Vec<Vec<f64>>,
    /// `gx[d][s][b] = sum_a dists[d][a] g(s,a,b)`.
    gx: Vec<Vec<Vec<f64>>>,
    clamped: AtomicU64,
}

impl Operator {
    fn new(spec: &GameSpec, cfg: &DpConfig) -> Result<Self> {
        cfg.validate()?;
        let ns = spec.n_states();
        let na = spec.n_actions1();
        let nb = spec.n_actions2();
        if ns > 3 {
            return Err(Error::UnsupportedDimension(format!(
                "grid solver supports at most 3 states, got {ns}"
            )));
        }
        if na > 4 || nb > 4 {
            return Err(Error::UnsupportedDimension(format!(
                "at most 4 actions per player, got {na}x{nb}"
            )));
        }
        let violations = spec.validate();
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        let h = 1.0 / cfg.n as f64;
        let exogenous = spec.rate.is_exogenous();
        let mut transitions = Vec::new();
        if exogenous {
            transitions.push(Semigroup::new(&spec.rate.generator(0, 0))?.transition(h)?);
        } else {
            for a in 0..na {
                for b in 0..nb {
                    transitions.push(Semigroup::new(&spec.rate.generator(a, b))?.transition(h)?);
                }
            }
        }
        let dists = action_grid(na, cfg.x_grid_k);
        let gx = dists
            .iter()
            .map(|d| {
                (0..ns)
                    .map(|s| {
                        (0..nb)
                            .map(|b| (0..na).map(|a| d[a] * spec.payoff_at(s, a, b)).sum())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Operator {
            spec: spec.clone(),
            grid: BeliefGrid::new(ns, cfg.grid_m)?,
            lambda: stage_weight(spec.discount, cfg.n),
            transitions,
            exogenous,
            dists,
            gx,
            clamped: AtomicU64::new(0),
        })
    }

    fn transition(&self, a: usize, b: usize) -> &DMatrix<f64> {
        if self.exogenous {
            &self.transitions[0]
        } else {
            &self.transitions[a * self.spec.n_actions2() + b]
        }
    }

    /// `transpose(P) q` into `out`, clamped to the simplex; round-off
    /// clamps are counted.
    fn push_belief(&self, pm: &DMatrix<f64>, q: &[f64], out: &mut [f64]) {
        let ns = q.len();
        let mut clamped = false;
        let mut sum = 0.0;
        for s2 in 0..ns {
            let mut o = 0.0;
            for s in 0..ns {
                o += pm[(s, s2)] * q[s];
            }
            if o < 0.0 {
                clamped = true;
                o = 0.0;
            }
            out[s2] = o;
            sum += o;
        }
        if clamped {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        if sum > 0.0 {
            for o in out[..ns].iter_mut() {
                *o /= sum;
            }
        }
    }

    /// Stage value at `p` of the profile assigning `dists[profile[s]]` to
    /// state `s`, against a best-replying opponent.
    fn profile_value(&self, p: &[f64], profile: &[usize], field: &ValueField) -> f64 {
        let mut x: [&[f64]; 3] = [&[], &[], &[]];
        for (s, &d) in profile.iter().enumerate() {
            x[s] = self.dists[d].as_slice();
        }
        self.x_value(p, &x[..profile.len()], Some(profile), field)
    }

    fn x_value(
        &self,
        p: &[f64],
        x: &[&[f64]],
        profile: Option<&[usize]>,
        field: &ValueField,
    ) -> f64 {
        let ns = p.len();
        let na = self.spec.n_actions1();
        let nb = self.spec.n_actions2();
        let mut marginal = [0.0f64; 4];
        for s in 0..ns {
            for a in 0..na {
                marginal[a] += p[s] * x[s][a];
            }
        }
        // stage payoff per opponent action
        let mut stage = [0.0f64; 4];
        match profile {
            Some(profile) => {
                for s in 0..ns {
                    let gx = &self.gx[profile[s]][s];
                    for b in 0..nb {
                        stage[b] += p[s] * gx[b];
                    }
                }
            }
            None => {
                for s in 0..ns {
                    for b in 0..nb {
                        for a in 0..na {
                            stage[b] += p[s] * x[s][a] * self.spec.payoff_at(s, a, b);
                        }
                    }
                }
            }
        }
        let mut posterior = [0.0f64; 3];
        let mut next = [0.0f64; 3];
        if self.exogenous {
            // continuation is opponent-independent: compute it once per a
            let mut continuation = 0.0;
            for a in 0..na {
                if marginal[a] <= 0.0 {
                    continue;
                }
                for s in 0..ns {
                    posterior[s] = p[s] * x[s][a] / marginal[a];
                }
                self.push_belief(&self.transitions[0], &posterior[..ns], &mut next);
                continuation += marginal[a] * field.eval_probs(&next[..ns]);
            }
            let worst_stage = stage[..nb].iter().cloned().fold(f64::INFINITY, f64::min);
            self.lambda * worst_stage + (1.0 - self.lambda) * continuation
        } else {
            let mut best = f64::INFINITY;
            for b in 0..nb {
                let mut continuation = 0.0;
                for a in 0..na {
                    if marginal[a] <= 0.0 {
                        continue;
                    }
                    for s in 0..ns {
                        posterior[s] = p[s] * x[s][a] / marginal[a];
                    }
                    self.push_belief(self.transition(a, b), &posterior[..ns], &mut next);
                    continuation += marginal[a] * field.eval_probs(&next[..ns]);
                }
                best = best.min(self.lambda * stage[b] + (1.0 - self.lambda) * continuation);
            }
            best
        }
    }

    /// Best profile over the x-grid, optionally followed by one
    /// coordinate-ascent refinement pass.
    fn point_value(&self, p: &[f64], field: &ValueField, cfg: &DpConfig) -> f64 {
        let ns = p.len();
        let nd = self.dists.len();
        let mut profile = vec![0usize; ns];
        let mut best_profile = profile.clone();
        let mut best = f64::NEG_INFINITY;
        loop {
            let v = self.profile_value(p, &profile, field);
            if v > best {
                best = v;
                best_profile.copy_from_slice(&profile);
            }
            // odometer over the product grid
            let mut pos = 0;
            loop {
                profile[pos] += 1;
                if profile[pos] < nd {
                    break;
                }
                profile[pos] = 0;
                pos += 1;
                if pos == ns {
                    return if cfg.refine {
                        self.refine(p, &best_profile, best, field, cfg.x_grid_k)
                    } else {
                        best
                    };
                }
            }
        }
    }

    fn refine(
        &self,
        p: &[f64],
        profile: &[usize],
        grid_best: f64,
        field: &ValueField,
        k: usize,
    ) -> f64 {
        let ns = p.len();
        let na = self.spec.n_actions1();
        let mut x: Vec<Vec<f64>> = profile.iter().map(|&d| self.dists[d].clone()).collect();
        let mut best = grid_best;
        for &delta in &[0.5 / k as f64, 0.25 / k as f64] {
            for s in 0..ns {
                for from in 0..na {
                    for to in 0..na {
                        if from == to || x[s][from] < delta {
                            continue;
                        }
                        x[s][from] -= delta;
                        x[s][to] += delta;
                        let refs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
                        let v = self.x_value(p, &refs, None, field);
                        if v > best {
                            best = v;
                        } else {
                            x[s][from] += delta;
                            x[s][to] -= delta;
                        }
                    }
                }
            }
        }
        best
    }

    fn apply(&self, field: &ValueField, cfg: &DpConfig) -> Result<ValueField> {
        let values: Vec<f64> = (0..self.grid.n_points())
            .into_par_iter()
            .map(|idx| self.point_value(self.grid.point(idx).as_slice(), field, cfg))
            .collect();
        ValueField::new(self.grid.clone(), values)
    }
}

/// One application of the stage operator to `field`.
pub fn bellman_apply(spec: &GameSpec, field: &ValueField, cfg: &DpConfig) -> Result<ValueField> {
    let op = Operator::new(spec, cfg)?;
    if field.grid() != &op.grid {
        return Err(Error::Dimension(
            "field grid does not match the configured grid".into(),
        ));
    }
    op.apply(field, cfg)
}

#[derive(Debug)]
pub struct DpSolution {
    pub field: ValueField,
    pub iterations: usize,
    /// Final sup-norm change per iteration.
    pub residual: f64,
    /// Posteriors whose push-forward left the simplex by round-off.
    pub clamped_posteriors: u64,
    /// Worst concavity violation of the converged field.
    pub concavity_violation: f64,
}

/// Value of the stage-length-`1/n` game on the grid: value iteration from
/// the zero field until the sup-norm change is at most `cfg.tol`.
///
/// Each iterate is projected onto its concave envelope. The exact stage
/// value is concave in the belief, and the x-grid search loses that by up
/// to its quantization error; the projection restores it without leaving
/// the one-sided (under-estimating) bias of the grid search, because the
/// envelope of an under-estimate of a concave function still under-estimates
/// it.
///
/// Iteration uses the pure grid operator, which is a `(1 - lambda)`
/// contraction and therefore terminates; when `cfg.refine` is set, the
/// coordinate-ascent pass is applied once to the converged field (inside
/// the iteration its field-dependent candidate set produces limit cycles
/// at the scale of the refinement gain).
pub fn solve_vn(spec: &GameSpec, cfg: &DpConfig) -> Result<DpSolution> {
    let op = Operator::new(spec, cfg)?;
    let grid_cfg = DpConfig {
        refine: false,
        ..*cfg
    };
    let mut field = ValueField::new(op.grid.clone(), vec![0.0; op.grid.n_points()])?;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while residual > cfg.tol {
        if iterations >= cfg.max_iter {
            return Err(Error::NonConvergence(format!(
                "value iteration residual {residual} after {iterations} iterations"
            )));
        }
        let next = envelope::cav(&op.apply(&field, &grid_cfg)?)?;
        residual = field.sup_distance(&next);
        field = next;
        iterations += 1;
    }
    if cfg.refine {
        field = envelope::cav(&op.apply(&field, cfg)?)?;
    }
    let report = envelope::is_concave(&field, 1e-6);
    if !report.concave {
        return Err(Error::NonConvergence(format!(
            "converged field is not concave on the grid: violation {} at point {}",
            report.worst_violation, report.worst_index
        )));
    }
    Ok(DpSolution {
        field,
        iterations,
        residual,
        clamped_posteriors: op.clamped.load(Ordering::Relaxed),
        concavity_violation: report.worst_violation,
    })
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub n: u32,
    pub distance_to_reference: f64,
}

/// Sup-norm distance of the solved field to a reference field (interpolated
/// onto the solver grid) for each stage frequency in `n_list`.
pub fn convergence_study(
    spec: &GameSpec,
    n_list: &[u32],
    cfg: &DpConfig,
    reference: &ValueField,
) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::new();
    for &n in n_list {
        let sol = solve_vn(spec, &DpConfig { n, ..*cfg })?;
        let grid = sol.field.grid();
        let distance = (0..grid.n_points())
            .map(|i| (sol.field.values()[i] - reference.eval(&grid.point(i))).abs())
            .fold(0.0, f64::max);
        rows.push(ConvergenceRow {
            n,
            distance_to_reference: distance,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use proptest::prelude::*;

    fn small_cfg(n: u32) -> DpConfig {
        DpConfig {
            n,
            grid_m: 50,
            x_grid_k: 10,
            tol: 1e-6,
            max_iter: 100_000,
            refine: true,
        }
    }

    #[test]
    fn split_nonrevealing_and_revealing() {
        let p = Belief::new(vec![0.4, 0.6]).unwrap();
        // identical mixed actions reveal nothing
        let x = vec![vec![0.3, 0.7], vec![0.3, 0.7]];
        let out = split(&p, &x);
        for post in out.posteriors.iter().flatten() {
            assert!((post[0] - 0.4).abs() < 1e-12);
        }
        // state-separating pure actions reveal everything
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let out = split(&p, &x);
        assert!((out.marginal[0] - 0.4).abs() < 1e-12);
        assert_eq!(out.posteriors[0].as_ref().unwrap()[0], 1.0);
        assert_eq!(out.posteriors[1].as_ref().unwrap()[1], 1.0);
    }

    #[test]
    fn one_bellman_step_from_zero_field() {
        let spec = catalog::renault_spec(1.0, 1.0);
        let cfg = small_cfg(8);
        let grid = BeliefGrid::new(2, cfg.grid_m).unwrap();
        let zero = ValueField::new(grid.clone(), vec![0.0; grid.n_points()]).unwrap();
        let stepped = bellman_apply(&spec, &zero, &cfg).unwrap();
        let lambda = stage_weight(1.0, 8);
        // With no continuation value, state-dependent stage play is free:
        // the informed one-shot value at p = 1/2 is 1/2 (each diagonal
        // entry is reached with probability 1/2 whatever the opponent
        // does), strictly above the non-revealing u(1/2) = 1/4.
        let mid = grid.index2(25);
        assert!((stepped.values()[mid] - lambda * 0.5).abs() < 1e-9);
    }

    #[test]
    fn single_state_game_is_constant() {
        let spec = GameSpec {
            states: vec!["s".into()],
            actions1: vec!["T".into(), "B".into()],
            actions2: vec!["L".into(), "R".into()],
            payoff: vec![vec![vec![0.5, 0.0], vec![0.0, 0.5]]],
            rate: crate::game_model::RateData::Exogenous {
                matrix: vec![vec![0.0]],
            },
            discount: 1.0,
            initial_belief: Belief::uniform(1),
        };
        let sol = solve_vn(&spec, &small_cfg(8)).unwrap();
        // value of [[0.5,0],[0,0.5]] is 0.25 regardless of information
        for v in sol.field.values() {
            assert!((v - 0.25).abs() < 2e-3, "{v}");
        }
    }

    #[test]
    fn frozen_chain_reaches_concavified_value() {
        let mut spec = catalog::renault_spec(1.0, 1.0);
        spec.rate = crate::game_model::RateData::Exogenous {
            matrix: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        };
        let cfg = DpConfig {
            n: 32,
            grid_m: 50,
            x_grid_k: 16,
            tol: 1e-6,
            max_iter: 100_000,
            refine: true,
        };
        let sol = solve_vn(&spec, &cfg).unwrap();
        // The stage value p(1-p) is concave, so the limit is u itself; at
        // finite stage weight the informed stage advantage adds O(lambda).
        for (i, v) in sol.field.values().iter().enumerate() {
            let x = i as f64 / 50.0;
            assert!((v - x * (1.0 - x)).abs() < 0.02, "x={x} v={v}");
        }
    }

    #[test]
    fn endogenous_transitions_are_accepted() {
        let spec = catalog::p2_independent_reduction(1.0);
        let sol = solve_vn(&spec, &small_cfg(4)).unwrap();
        assert!(sol.residual <= 1e-6);
        assert!(sol.field.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn value_decreases_in_n_toward_limit() {
        let spec = catalog::renault_spec(1.0, 1.0);
        let limit = catalog::renault_closed_form(0.5, 1.0, 1.0).unwrap();
        let mut last_err = f64::INFINITY;
        for n in [4, 16] {
            let sol = solve_vn(&spec, &small_cfg(n)).unwrap();
            let err = (sol.field.values()[25] - limit).abs();
            assert!(err <= last_err + 1e-3, "n={n}: {err} > {last_err}");
            last_err = err;
        }
    }

    #[test]
    fn x_grid_refinement_does_not_decrease_values() {
        let spec = catalog::renault_spec(1.0, 1.0);
        let grid = BeliefGrid::new(2, 20).unwrap();
        let field = ValueField::from_fn(grid, |p| 0.3 * p[0]).unwrap();
        let coarse = bellman_apply(
            &spec,
            &field,
            &DpConfig {
                n: 8,
                grid_m: 20,
                x_grid_k: 5,
                refine: false,
                ..DpConfig::default()
            },
        )
        .unwrap();
        let fine = bellman_apply(
            &spec,
            &field,
            &DpConfig {
                n: 8,
                grid_m: 20,
                x_grid_k: 10,
                refine: false,
                ..DpConfig::default()
            },
        )
        .unwrap();
        for (c, f) in coarse.values().iter().zip(fine.values()) {
            assert!(*f >= c - 1e-9, "{f} < {c}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(15))]
        #[test]
        fn barycenter_identity(
            px in 0.01..0.99f64,
            x0 in 0.0..1.0f64,
            x1 in 0.0..1.0f64,
        ) {
            let p = Belief::new(vec![px, 1.0 - px]).unwrap();
            let x = vec![vec![x0, 1.0 - x0], vec![x1, 1.0 - x1]];
            let out = split(&p, &x);
            let total: f64 = out.marginal.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for s in 0..2 {
                let mixed: f64 = out
                    .marginal
                    .iter()
                    .zip(&out.posteriors)
                    .filter_map(|(m, q)| q.as_ref().map(|q| m * q[s]))
                    .sum();
                prop_assert!((mixed - p[s]).abs() < 1e-12);
            }
        }

        #[test]
        fn contraction_shift_and_monotonicity(
            base in proptest::collection::vec(-0.5..0.5f64, 21),
            bump in proptest::collection::vec(0.0..0.5f64, 21),
            c in -0.5..0.5f64,
        ) {
            let spec = catalog::renault_spec(1.0, 1.0);
            // identities hold for the pure grid operator (see DpConfig::refine)
            let cfg = DpConfig { n: 8, grid_m: 20, x_grid_k: 4, refine: false, ..DpConfig::default() };
            let grid = BeliefGrid::new(2, 20).unwrap();
            let lambda = stage_weight(1.0, 8);
            let f = ValueField::new(grid.clone(), base.clone()).unwrap();
            let tf = bellman_apply(&spec, &f, &cfg).unwrap();

            // monotone in the field
            let bigger: Vec<f64> = base.iter().zip(&bump).map(|(v, b)| v + b).collect();
            let g = ValueField::new(grid.clone(), bigger.clone()).unwrap();
            let tg = bellman_apply(&spec, &g, &cfg).unwrap();
            for (a, b) in tf.values().iter().zip(tg.values()) {
                prop_assert!(*a <= b + 1e-9);
            }

            // contraction factor through the shifted-field identity
            let shifted: Vec<f64> = base.iter().map(|v| v + c).collect();
            let h = ValueField::new(grid, shifted).unwrap();
            let th = bellman_apply(&spec, &h, &cfg).unwrap();
            for (a, b) in tf.values().iter().zip(th.values()) {
                prop_assert!((b - a - (1.0 - lambda) * c).abs() < 1e-9);
            }

            // sup-norm contraction on the pair (f, g)
            let dist_in = f.sup_distance(&g);
            let dist_out = tf.sup_distance(&tg);
            prop_assert!(dist_out <= (1.0 - lambda) * dist_in + 1e-9);
        }
    }
}
