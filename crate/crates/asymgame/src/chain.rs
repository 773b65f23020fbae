//! Continuous-time Markov chain machinery: transition semigroup `P_t`,
//! deterministic belief flow, invariant measure and exact path simulation.

use nalgebra::DMatrix;
use rand::Rng;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::game_model::{self, Belief};
use crate::{Error, Result};

pub const ROW_STOCHASTIC_TOL: f64 = 1e-10;

pub fn to_dmatrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let n = m.len();
    DMatrix::from_fn(n, m[0].len(), |i, j| m[i][j])
}

/// Matrix exponential by scaling-and-squaring with a diagonal Pade(6,6)
/// approximant. Generators here are small and dense; eigendecomposition is
/// kept out of the production path because generators may be defective.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s as i32);

    // Pade(6,6): N = sum c_k A^k, D = sum (-1)^k c_k A^k.
    let mut c = vec![1.0_f64; 7];
    for k in 0..6 {
        c[k + 1] = c[k] * (6.0 - k as f64) / ((12.0 - k as f64) * (k as f64 + 1.0));
    }
    let mut num = DMatrix::identity(n, n) * c[0];
    let mut den = DMatrix::identity(n, n) * c[0];
    let mut power = DMatrix::identity(n, n);
    for (k, &ck) in c.iter().enumerate().skip(1) {
        power = &power * &scaled;
        num += &power * ck;
        if k % 2 == 0 {
            den += &power * ck;
        } else {
            den -= &power * ck;
        }
    }
    let mut result = den
        .lu()
        .solve(&num)
        .expect("Pade denominator is nonsingular for scaled matrices");
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

/// Transition semigroup of a generator, with cached exponentials.
///
/// The cache is keyed on the exact bit pattern of `t`; dynamic-programming
/// solvers hit the same stage length thousands of times.
pub struct Semigroup {
    generator: DMatrix<f64>,
    cache: Mutex<HashMap<u64, Arc<DMatrix<f64>>>>,
}

impl Semigroup {
    pub fn new(matrix: &[Vec<f64>]) -> Result<Self> {
        let mut violations = Vec::new();
        game_model::validate_generator("generator", matrix, matrix.len(), &mut violations);
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        Ok(Semigroup {
            generator: to_dmatrix(matrix),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn n_states(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// `P_t = exp(tR)`, row-stochastic after clamping round-off negatives.
    pub fn transition(&self, t: f64) -> Result<Arc<DMatrix<f64>>> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
        }
        let key = t.to_bits();
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let mut p = expm(&(&self.generator * t));
        let n = p.nrows();
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let e = p[(i, j)];
                if e < 0.0 {
                    debug_assert!(e >= -1e-12, "entry {e} below clamp tolerance");
                    p[(i, j)] = 0.0;
                } else {
                    sum += e;
                }
            }
            for j in 0..n {
                p[(i, j)] /= sum;
            }
        }
        let arc = Arc::new(p);
        self.cache
            .lock()
            .unwrap()
            .insert(key, arc.clone());
        Ok(arc)
    }

    /// Deterministic belief flow `p*_t = transpose(P_t) p`.
    pub fn belief_flow(&self, p: &Belief, t: f64) -> Result<Belief> {
        let pt = self.transition(t)?;
        Ok(apply_transposed(&pt, p))
    }
}

/// `transpose(P) p` as a belief (clamped and renormalized exactly).
pub fn apply_transposed(p_matrix: &DMatrix<f64>, p: &Belief) -> Belief {
    let n = p.dim();
    let mut out = vec![0.0; n];
    for (j, o) in out.iter_mut().enumerate() {
        for i in 0..n {
            *o += p_matrix[(i, j)] * p[i];
        }
    }
    Belief::from_unnormalized(out)
}

/// Unique invariant measure of an irreducible generator.
pub fn invariant_measure(matrix: &[Vec<f64>]) -> Result<Belief> {
    let n = matrix.len();
    if !is_irreducible(matrix) {
        return Err(Error::ReducibleChain);
    }
    // transpose(R) pi = 0 with the last balance equation replaced by the
    // normalization sum(pi) = 1.
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        for j in 0..n {
            a[(i, j)] = matrix[j][i];
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonConvergence("singular balance system".into()))?;
    let pi = Belief::from_unnormalized(sol.iter().cloned().collect());
    let residual: f64 = (0..n)
        .map(|j| {
            (0..n)
                .map(|i| matrix[i][j] * pi[i])
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    if residual > 1e-10 {
        return Err(Error::NonConvergence(format!(
            "invariant measure residual {residual}"
        )));
    }
    Ok(pi)
}

fn is_irreducible(matrix: &[Vec<f64>]) -> bool {
    let n = matrix.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(s) = stack.pop() {
            for s2 in 0..n {
                let rate = if forward { matrix[s][s2] } else { matrix[s2][s] };
                if s2 != s && rate > 0.0 && !seen[s2] {
                    seen[s2] = true;
                    stack.push(s2);
                }
            }
        }
        seen.into_iter().all(|x| x)
    };
    reach(true) && reach(false)
}

/// One sampled trajectory of the chain on `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct ChainPath {
    /// Entry times of the visited states; `times[0] = 0`.
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl ChainPath {
    pub fn state_at(&self, t: f64) -> usize {
        match self.times.partition_point(|&s| s <= t) {
            0 => self.states[0],
            k => self.states[k - 1],
        }
    }

    pub fn n_jumps(&self) -> usize {
        self.states.len() - 1
    }
}

/// Exact Gillespie simulation: exponential holding times and
/// embedded-chain jumps. Deterministic given the generator state.
pub fn sample_path<R: Rng>(
    matrix: &[Vec<f64>],
    s0: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<ChainPath> {
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let n = matrix.len();
    if s0 >= n {
        return Err(Error::Dimension(format!("state {s0} out of range")));
    }
    let mut times = vec![0.0];
    let mut states = vec![s0];
    let mut t = 0.0;
    let mut s = s0;
    loop {
        let out_rate = -matrix[s][s];
        if out_rate <= 0.0 {
            break;
        }
        t += -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() / out_rate;
        if t >= horizon {
            break;
        }
        let mut target = rng.gen::<f64>() * out_rate;
        let mut next = s;
        for s2 in 0..n {
            if s2 != s && matrix[s][s2] > 0.0 {
                target -= matrix[s][s2];
                if target <= 0.0 {
                    next = s2;
                    break;
                }
            }
        }
        s = next;
        times.push(t);
        states.push(s);
    }
    Ok(ChainPath {
        times,
        states,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn symmetric_two_state(pi: f64) -> Vec<Vec<f64>> {
        vec![vec![-pi, pi], vec![pi, -pi]]
    }

    #[test]
    fn two_state_transition_closed_form() {
        let sg = Semigroup::new(&symmetric_two_state(1.0)).unwrap();
        for &t in &[0.0, 0.1, 0.5, 2.0, 10.0] {
            let p = sg.transition(t).unwrap();
            let e = (-2.0 * t).exp();
            let expected = [[0.5 + e / 2.0, 0.5 - e / 2.0], [0.5 - e / 2.0, 0.5 + e / 2.0]];
            for i in 0..2 {
                for j in 0..2 {
                    assert!((p[(i, j)] - expected[i][j]).abs() < 1e-10, "t={t}");
                }
            }
        }
    }

    #[test]
    fn zero_generator_is_identity() {
        let sg = Semigroup::new(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let p = sg.transition(3.7).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-14 && p[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn negative_time_rejected() {
        let sg = Semigroup::new(&symmetric_two_state(1.0)).unwrap();
        assert!(sg.transition(-0.1).is_err());
    }

    /// 4th-order fixed-step integration of P' = RP as an independent route.
    fn ode_transition(r: &[Vec<f64>], t: f64, steps: usize) -> DMatrix<f64> {
        let rm = to_dmatrix(r);
        let n = r.len();
        let mut p = DMatrix::<f64>::identity(n, n);
        let h = t / steps as f64;
        for _ in 0..steps {
            let k1 = &rm * &p;
            let k2 = &rm * &(&p + &k1 * (h / 2.0));
            let k3 = &rm * &(&p + &k2 * (h / 2.0));
            let k4 = &rm * &(&p + &k3 * h);
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        p
    }

    #[test]
    fn expm_matches_ode_oracle_on_3x3() {
        let r = vec![
            vec![-1.3, 0.9, 0.4],
            vec![0.2, -0.7, 0.5],
            vec![1.1, 0.6, -1.7],
        ];
        let sg = Semigroup::new(&r).unwrap();
        let p = sg.transition(0.7).unwrap();
        let oracle = ode_transition(&r, 0.7, 4000);
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[(i, j)] - oracle[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn belief_flow_closed_form_and_stationarity() {
        let sg = Semigroup::new(&symmetric_two_state(1.0)).unwrap();
        let p = Belief::new(vec![0.9, 0.1]).unwrap();
        for &t in &[0.0, 0.3, 1.0, 4.0] {
            let pt = sg.belief_flow(&p, t).unwrap();
            let expected = 0.5 + (-2.0 * t).exp() * (0.9 - 0.5);
            assert!((pt[0] - expected).abs() < 1e-12);
        }
        let inv = invariant_measure(&symmetric_two_state(1.0)).unwrap();
        let moved = sg.belief_flow(&inv, 2.0).unwrap();
        assert!((moved[0] - inv[0]).abs() < 1e-12);
        // long-time convergence to the invariant measure
        let late = sg.belief_flow(&p, 30.0).unwrap();
        assert!((late[0] - inv[0]).abs() < 1e-8);
    }

    #[test]
    fn invariant_measure_examples() {
        let pi = invariant_measure(&symmetric_two_state(1.0)).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12);
        let pi = invariant_measure(&[vec![-2.0, 2.0], vec![1.0, -1.0]]).unwrap();
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((pi[1] - 2.0 / 3.0).abs() < 1e-12);
        // reducible chain: no transitions between blocks
        let err = invariant_measure(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(err, Err(Error::ReducibleChain)));
    }

    #[test]
    fn martingale_generator_identity() {
        let r = vec![vec![-2.0, 2.0], vec![1.0, -1.0]];
        let sg = Semigroup::new(&r).unwrap();
        let p = Belief::new(vec![0.7, 0.3]).unwrap();
        let h = 1e-4;
        let ph = sg.belief_flow(&p, h).unwrap();
        let p2h = sg.belief_flow(&p, 2.0 * h).unwrap();
        // second-order one-sided difference of t -> p*_t at t = 0
        let fd = (4.0 * ph[0] - p2h[0] - 3.0 * p[0]) / (2.0 * h);
        let drift = r[0][0] * p[0] + r[1][0] * p[1];
        assert!((fd - drift).abs() < 1e-6);
    }

    #[test]
    fn sample_path_zero_generator_has_no_jumps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let path = sample_path(&[vec![0.0, 0.0], vec![0.0, 0.0]], 1, 5.0, &mut rng).unwrap();
        assert_eq!(path.n_jumps(), 0);
        assert_eq!(path.state_at(4.9), 1);
    }

    #[test]
    fn sample_path_occupation_and_holding_times() {
        let r = vec![vec![-2.0, 2.0], vec![1.0, -1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut occupation0 = 0.0;
        let mut total = 0.0;
        let mut holds = Vec::new();
        for _ in 0..200 {
            let path = sample_path(&r, 0, 50.0, &mut rng).unwrap();
            for k in 0..path.states.len() {
                let t1 = path.times.get(k + 1).copied().unwrap_or(path.horizon);
                let dt = t1 - path.times[k];
                if path.states[k] == 0 {
                    occupation0 += dt;
                    if k + 1 < path.states.len() {
                        holds.push(dt);
                    }
                }
                total += dt;
            }
        }
        // invariant measure is (1/3, 2/3); holding time in state 0 is Exp(2)
        assert!((occupation0 / total - 1.0 / 3.0).abs() < 0.01);
        let mean_hold: f64 = holds.iter().sum::<f64>() / holds.len() as f64;
        assert!((mean_hold - 0.5).abs() < 0.01, "mean hold {mean_hold}");
    }

    fn random_generator() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(0.0..3.0f64, 3), 3).prop_map(
            |mut m| {
                for (i, row) in m.iter_mut().enumerate() {
                    row[i] = 0.0;
                    let s: f64 = row.iter().sum();
                    row[i] = -s;
                }
                m
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn semigroup_property(r in random_generator(), t in 0.0..3.0f64, s in 0.0..3.0f64) {
            let sg = Semigroup::new(&r).unwrap();
            let pts = sg.transition(t + s).unwrap();
            let pt = sg.transition(t).unwrap();
            let ps = sg.transition(s).unwrap();
            let prod = &*pt * &*ps;
            let err = (&*pts - prod).abs().max();
            prop_assert!(err < 1e-9, "semigroup residual {err}");
        }

        #[test]
        fn rows_are_stochastic(r in random_generator(), t in 0.0..5.0f64) {
            let sg = Semigroup::new(&r).unwrap();
            let p = sg.transition(t).unwrap();
            for i in 0..3 {
                let sum: f64 = (0..3).map(|j| p[(i, j)]).sum();
                prop_assert!((sum - 1.0).abs() < ROW_STOCHASTIC_TOL);
                for j in 0..3 {
                    prop_assert!(p[(i, j)] >= 0.0);
                }
            }
        }
    }
}
