//! Belief processes consistent with the hidden chain: splitting
//! constructions on finite trees, the two-point optimal process for
//! two-state chains, Monte Carlo evaluation of the discounted payoff
//! functional, martingale-consistency diagnostics, optimality-condition
//! checks against a converged limit-value field, and stage-game play
//! between an informed player and a Bayesian opponent.

use std::f64::consts::LN_10;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{self, Problem};
use crate::chain::{self, apply_transposed, Semigroup};
use crate::game_model::{Belief, GameSpec, RateData};
use crate::hj::{ActiveTag, ObstacleField};
use crate::matrix_game::{average_game, DEFAULT_TOL};
use crate::shapley_dp::stage_weight;
use crate::{Error, Result};

const EXACT_TOL: f64 = 1e-12;
const BARYCENTER_TOL: f64 = 1e-10;

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    // splitmix64 of the path index keeps streams decorrelated
    let mut z = index.wrapping_add(0x9E3779B97F4A7C15).wrapping_mul(seed | 1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut t = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        t -= w;
        if t <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

// ---------------------------------------------------------------------------
// static splitting

/// One-shot splitting of a prior into posteriors: a joint law over
/// labels and states whose conditionals recover the posteriors.
#[derive(Debug, Clone)]
pub struct SplittingPlan {
    pub weights: Vec<f64>,
    pub posteriors: Vec<Belief>,
    /// `joint[l][s] = weights[l] * posteriors[l][s]`.
    pub joint: Vec<Vec<f64>>,
}

pub fn static_split(p: &Belief, weights: &[f64], posteriors: &[Belief]) -> Result<SplittingPlan> {
    if weights.len() != posteriors.len() || weights.is_empty() {
        return Err(Error::Dimension(
            "one weight per posterior is required".into(),
        ));
    }
    let ns = p.dim();
    for q in posteriors {
        if q.dim() != ns {
            return Err(Error::Dimension(
                "posterior dimension differs from the prior".into(),
            ));
        }
    }
    if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > BARYCENTER_TOL
    {
        return Err(Error::Domain("weights must form a distribution".into()));
    }
    for s in 0..ns {
        let bary: f64 = weights
            .iter()
            .zip(posteriors)
            .map(|(w, q)| w * q[s])
            .sum();
        if (bary - p[s]).abs() > BARYCENTER_TOL {
            return Err(Error::Domain(format!(
                "posteriors average to {bary} in coordinate {s}, prior has {}",
                p[s]
            )));
        }
    }
    let joint = weights
        .iter()
        .zip(posteriors)
        .map(|(w, q)| (0..ns).map(|s| w * q[s]).collect())
        .collect();
    Ok(SplittingPlan {
        weights: weights.to_vec(),
        posteriors: posteriors.to_vec(),
        joint,
    })
}

impl SplittingPlan {
    /// Largest defect in the two marginal conditions and the Bayes
    /// conditionals; exact arithmetic keeps this at rounding level.
    pub fn worst_invariant_defect(&self, p: &Belief) -> f64 {
        let ns = p.dim();
        let mut worst = 0.0_f64;
        for (l, row) in self.joint.iter().enumerate() {
            let mass: f64 = row.iter().sum();
            worst = worst.max((mass - self.weights[l]).abs());
            if self.weights[l] > 0.0 {
                for s in 0..ns {
                    worst = worst.max((row[s] / self.weights[l] - self.posteriors[l][s]).abs());
                }
            }
        }
        for s in 0..ns {
            let mass: f64 = self.joint.iter().map(|row| row[s]).sum();
            worst = worst.max((mass - p[s]).abs());
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// dynamic splitting on finite trees

/// Finite tree of belief histories: children carry branch weights.
#[derive(Debug, Clone)]
pub struct BeliefTree {
    pub belief: Belief,
    pub children: Vec<(f64, BeliefTree)>,
}

#[derive(Debug, Clone)]
struct FlatNode {
    belief: Belief,
    path_prob: f64,
    children: Vec<usize>,
    child_weights: Vec<f64>,
}

/// The per-step revelation kernels built from a finite belief-martingale
/// tree, together with exhaustive-enumeration residuals of the two
/// defining conditions: the belief marginal reproduces the tree law (C1)
/// and each node's belief is the conditional law of the state (C2).
#[derive(Debug)]
pub struct DynamicSplitting {
    pub pi: Vec<Vec<f64>>,
    nodes: Vec<FlatNode>,
    pub c1_residual: f64,
    pub c2_residual: f64,
    pub pruned_branches: usize,
}

impl DynamicSplitting {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Kernel at a node given the next sampled state: distribution over
    /// child node ids.
    pub fn kernel(&self, node: usize, next_state: usize) -> Vec<(usize, f64)> {
        let nd = &self.nodes[node];
        let theta: f64 = nd
            .children
            .iter()
            .zip(&nd.child_weights)
            .map(|(c, w)| w * self.nodes[*c].belief[next_state])
            .sum();
        if theta <= 0.0 {
            return Vec::new();
        }
        nd.children
            .iter()
            .zip(&nd.child_weights)
            .map(|(c, w)| (*c, w * self.nodes[*c].belief[next_state] / theta))
            .filter(|(_, mu)| *mu > 0.0)
            .collect()
    }
}

fn flatten_tree(
    tree: &BeliefTree,
    path_prob: f64,
    nodes: &mut Vec<FlatNode>,
) -> Result<usize> {
    let id = nodes.len();
    nodes.push(FlatNode {
        belief: tree.belief.clone(),
        path_prob,
        children: Vec::new(),
        child_weights: Vec::new(),
    });
    for (w, child) in &tree.children {
        if *w < 0.0 {
            return Err(Error::Domain("negative branch weight".into()));
        }
        let cid = flatten_tree(child, path_prob * w, nodes)?;
        nodes[id].children.push(cid);
        nodes[id].child_weights.push(*w);
    }
    Ok(id)
}

/// Builds the state-conditional revelation kernels for a finite tree of
/// beliefs whose branches form a martingale under the embedded transition
/// matrix, and verifies the construction by exact enumeration.
pub fn dynamic_split(tree: &BeliefTree, pi: &[Vec<f64>]) -> Result<DynamicSplitting> {
    let ns = tree.belief.dim();
    if pi.len() != ns || pi.iter().any(|row| row.len() != ns) {
        return Err(Error::Dimension("square transition matrix required".into()));
    }
    for (s, row) in pi.iter().enumerate() {
        if row.iter().any(|x| *x < -EXACT_TOL)
            || (row.iter().sum::<f64>() - 1.0).abs() > BARYCENTER_TOL
        {
            return Err(Error::Domain(format!("row {s} is not a distribution")));
        }
    }
    let mut nodes = Vec::new();
    flatten_tree(tree, 1.0, &mut nodes)?;
    // martingale condition at every internal node
    for (id, nd) in nodes.iter().enumerate() {
        if nd.children.is_empty() {
            continue;
        }
        let wsum: f64 = nd.child_weights.iter().sum();
        if (wsum - 1.0).abs() > BARYCENTER_TOL {
            return Err(Error::Domain(format!(
                "branch weights at node {id} sum to {wsum}"
            )));
        }
        for s2 in 0..ns {
            let target: f64 = (0..ns).map(|s| pi[s][s2] * nd.belief[s]).sum();
            let bary: f64 = nd
                .children
                .iter()
                .zip(&nd.child_weights)
                .map(|(c, w)| w * nodes[*c].belief[s2])
                .sum();
            if (bary - target).abs() > BARYCENTER_TOL {
                return Err(Error::Domain(format!(
                    "martingale condition fails at node {id}, coordinate {s2}: \
                     children average to {bary}, embedded step gives {target}"
                )));
            }
        }
    }

    let mut split = DynamicSplitting {
        pi: pi.to_vec(),
        nodes,
        c1_residual: 0.0,
        c2_residual: 0.0,
        pruned_branches: 0,
    };

    // exact enumeration of the joint (state path, belief path) law:
    // node_state_mass[id][s] accumulates P(belief path reaches id, state = s)
    let n = split.nodes.len();
    let mut mass = vec![vec![0.0_f64; ns]; n];
    for s in 0..ns {
        mass[0][s] = split.nodes[0].belief[s];
    }
    // nodes are in DFS order, so parents precede children
    let mut pruned = 0usize;
    for id in 0..n {
        if split.nodes[id].children.is_empty() {
            continue;
        }
        for s in 0..ns {
            let p_here = mass[id][s];
            if p_here <= 0.0 {
                continue;
            }
            for s2 in 0..ns {
                let step = split.pi[s][s2];
                if step <= 0.0 {
                    continue;
                }
                let kern = split.kernel(id, s2);
                if kern.is_empty() {
                    pruned += 1;
                    continue;
                }
                for (c, mu) in kern {
                    mass[c][s2] += p_here * step * mu;
                }
            }
        }
    }
    split.pruned_branches = pruned;
    for (id, nd) in split.nodes.iter().enumerate() {
        let total: f64 = mass[id].iter().sum();
        split.c1_residual = split.c1_residual.max((total - nd.path_prob).abs());
        if total > 0.0 {
            for s in 0..ns {
                split.c2_residual = split
                    .c2_residual
                    .max((mass[id][s] / total - nd.belief[s]).abs());
            }
        }
    }
    Ok(split)
}

// ---------------------------------------------------------------------------
// belief processes

#[derive(Debug, Clone)]
pub enum Recipe {
    /// The non-revealing deterministic flow of the prior.
    DeterministicFlow,
    /// Belief glued to the sampled state: jumps between vertices.
    FullyRevealing,
    /// Flow until the belief hits `[p_lo, p_hi]`, then a two-point jump
    /// process on the endpoints; rates chosen so the flow equation is
    /// preserved in expectation.
    TwoStateOptimal {
        p_lo: f64,
        p_hi: f64,
        /// jump rate from `p_lo` to `p_hi`
        rho12_t: f64,
        /// jump rate from `p_hi` to `p_lo`
        rho21_t: f64,
        /// hitting time of `[p_lo, p_hi]` by the deterministic flow
        theta: f64,
    },
    /// User-provided jump-rate table on a finite belief set.
    Custom {
        beliefs: Vec<Belief>,
        /// `rates[i][j]` jumps `beliefs[i] -> beliefs[j]`, diagonal ignored.
        rates: Vec<Vec<f64>>,
        start: usize,
    },
}

pub struct BeliefProcess {
    pub generator: Vec<Vec<f64>>,
    pub semigroup: Semigroup,
    pub initial: Belief,
    pub recipe: Recipe,
}

#[derive(Debug, Clone)]
pub enum Segment {
    Flow { t0: f64, t1: f64, start: Belief },
    Hold { t0: f64, t1: f64, belief: Belief },
}

#[derive(Debug, Clone)]
pub struct BeliefPath {
    pub segments: Vec<Segment>,
}

impl BeliefProcess {
    pub fn deterministic_flow(generator: &[Vec<f64>], initial: Belief) -> Result<Self> {
        Ok(BeliefProcess {
            generator: generator.to_vec(),
            semigroup: Semigroup::new(generator)?,
            initial,
            recipe: Recipe::DeterministicFlow,
        })
    }

    pub fn fully_revealing(generator: &[Vec<f64>], initial: Belief) -> Result<Self> {
        Ok(BeliefProcess {
            generator: generator.to_vec(),
            semigroup: Semigroup::new(generator)?,
            initial,
            recipe: Recipe::FullyRevealing,
        })
    }

    pub fn custom(
        generator: &[Vec<f64>],
        beliefs: Vec<Belief>,
        rates: Vec<Vec<f64>>,
        start: usize,
    ) -> Result<Self> {
        if start >= beliefs.len() || rates.len() != beliefs.len() {
            return Err(Error::Dimension("rate table must match belief set".into()));
        }
        let initial = beliefs[start].clone();
        Ok(BeliefProcess {
            generator: generator.to_vec(),
            semigroup: Semigroup::new(generator)?,
            initial,
            recipe: Recipe::Custom {
                beliefs,
                rates,
                start,
            },
        })
    }

    pub fn sample_path<R: Rng>(&self, horizon: f64, rng: &mut R) -> Result<BeliefPath> {
        let mut segments = Vec::new();
        match &self.recipe {
            Recipe::DeterministicFlow => segments.push(Segment::Flow {
                t0: 0.0,
                t1: horizon,
                start: self.initial.clone(),
            }),
            Recipe::FullyRevealing => {
                let ns = self.initial.dim();
                let s0 = sample_index(self.initial.as_slice(), rng);
                let path = chain::sample_path(&self.generator, s0, horizon, rng)?;
                for k in 0..path.states.len() {
                    let t0 = path.times[k];
                    let t1 = if k + 1 < path.times.len() {
                        path.times[k + 1]
                    } else {
                        horizon
                    };
                    segments.push(Segment::Hold {
                        t0,
                        t1,
                        belief: Belief::vertex(ns, path.states[k]),
                    });
                }
            }
            Recipe::TwoStateOptimal {
                p_lo,
                p_hi,
                rho12_t,
                rho21_t,
                theta,
            } => {
                let mut t = 0.0;
                if *theta > 0.0 {
                    let end = theta.min(horizon);
                    segments.push(Segment::Flow {
                        t0: 0.0,
                        t1: end,
                        start: self.initial.clone(),
                    });
                    t = end;
                }
                if t < horizon {
                    let p_theta = self.semigroup.belief_flow(&self.initial, t)?;
                    let w_hi = if p_hi > p_lo {
                        ((p_theta[0] - p_lo) / (p_hi - p_lo)).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let mut at_hi = rng.gen::<f64>() < w_hi;
                    while t < horizon {
                        let rate = if at_hi { *rho21_t } else { *rho12_t };
                        let hold = if rate > 0.0 {
                            -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() / rate
                        } else {
                            f64::INFINITY
                        };
                        let t1 = (t + hold).min(horizon);
                        let x = if at_hi { *p_hi } else { *p_lo };
                        segments.push(Segment::Hold {
                            t0: t,
                            t1,
                            belief: Belief::new(vec![x, 1.0 - x])?,
                        });
                        t = t1;
                        at_hi = !at_hi;
                    }
                }
            }
            Recipe::Custom {
                beliefs,
                rates,
                start,
            } => {
                let mut at = *start;
                let mut t = 0.0;
                while t < horizon {
                    let total: f64 = rates[at]
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != at)
                        .map(|(_, x)| *x)
                        .sum();
                    let hold = if total > 0.0 {
                        -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() / total
                    } else {
                        f64::INFINITY
                    };
                    let t1 = (t + hold).min(horizon);
                    segments.push(Segment::Hold {
                        t0: t,
                        t1,
                        belief: beliefs[at].clone(),
                    });
                    t = t1;
                    if t < horizon {
                        let weights: Vec<f64> = rates[at]
                            .iter()
                            .enumerate()
                            .map(|(j, x)| if j == at { 0.0 } else { *x })
                            .collect();
                        at = sample_index(&weights, rng);
                    }
                }
            }
        }
        Ok(BeliefPath { segments })
    }

    pub fn belief_at(&self, path: &BeliefPath, t: f64) -> Result<Belief> {
        for seg in &path.segments {
            let (t0, t1) = match seg {
                Segment::Flow { t0, t1, .. } | Segment::Hold { t0, t1, .. } => (*t0, *t1),
            };
            if t >= t0 && (t < t1 || (t <= t1 && std::ptr::eq(seg, path.segments.last().unwrap())))
            {
                return match seg {
                    Segment::Flow { start, .. } => self.semigroup.belief_flow(start, t - t0),
                    Segment::Hold { belief, .. } => Ok(belief.clone()),
                };
            }
        }
        Err(Error::Domain(format!("time {t} beyond the path horizon")))
    }
}

/// The two-point optimal process for a two-state chain: deterministic flow
/// until the belief (probability of the first state) enters `[p_lo, p_hi]`,
/// then jumps between the endpoints at the rates that preserve the flow
/// equation in expectation.
pub fn two_state_optimal_process(
    rho12: f64,
    rho21: f64,
    p_lo: f64,
    p_hi: f64,
    p: f64,
) -> Result<BeliefProcess> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("initial belief {p} outside [0,1]")));
    }
    if rho12 < 0.0 || rho21 < 0.0 || rho12 + rho21 <= 0.0 {
        return Err(Error::Domain("jump rates must be nonnegative".into()));
    }
    let p_inf = rho21 / (rho12 + rho21);
    if !(p_lo < p_inf && p_inf < p_hi) {
        return Err(Error::Domain(format!(
            "need p_lo < {p_inf} < p_hi strictly, got [{p_lo}, {p_hi}]"
        )));
    }
    let rho12_t = ((1.0 - p_lo) * rho21 - p_lo * rho12) / (p_hi - p_lo);
    let rho21_t = (p_hi * rho12 - (1.0 - p_hi) * rho21) / (p_hi - p_lo);
    if rho12_t < 0.0 || rho21_t < 0.0 {
        return Err(Error::Domain(format!(
            "derived jump rates ({rho12_t}, {rho21_t}) are negative"
        )));
    }
    let speed = rho12 + rho21;
    let theta = if (p_lo..=p_hi).contains(&p) {
        0.0
    } else if p > p_hi {
        ((p - p_inf) / (p_hi - p_inf)).ln() / speed
    } else {
        ((p_inf - p) / (p_inf - p_lo)).ln() / speed
    };
    let generator = vec![vec![-rho12, rho12], vec![rho21, -rho21]];
    Ok(BeliefProcess {
        semigroup: Semigroup::new(&generator)?,
        generator,
        initial: Belief::new(vec![p, 1.0 - p])?,
        recipe: Recipe::TwoStateOptimal {
            p_lo,
            p_hi,
            rho12_t,
            rho21_t,
            theta,
        },
    })
}

// ---------------------------------------------------------------------------
// Monte Carlo evaluation of the discounted functional

/// Monte Carlo estimate of `E[int_0^inf r e^{-rt} u(p_t) dt]`: per-path
/// integrals are exact between jumps (holds in closed form, the shared
/// deterministic prefix by adaptive quadrature), truncated at the horizon
/// where the remaining discount mass is `tail`.
pub fn evaluate_p1(
    process: &BeliefProcess,
    prob: &Problem,
    n_paths: usize,
    tail: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_paths < 2 {
        return Err(Error::Domain("at least two paths are required".into()));
    }
    if !(tail > 0.0 && tail < 1.0) {
        return Err(Error::Domain("tail mass must be in (0,1)".into()));
    }
    let r = prob.r();
    let horizon = -tail.ln() / r;
    // the only flow segments any recipe emits share the deterministic
    // prefix, so integrate it once
    let prefix_end = match &process.recipe {
        Recipe::DeterministicFlow => horizon,
        Recipe::TwoStateOptimal { theta, .. } => theta.min(horizon),
        _ => 0.0,
    };
    let prefix_value = if prefix_end > 0.0 {
        let f = |t: f64| {
            let p = process
                .semigroup
                .belief_flow(&process.initial, t)
                .expect("flow");
            r * (-r * t).exp() * prob.u(&p)
        };
        analysis::integrate(&f, 0.0, prefix_end, 1e-10)
    } else {
        0.0
    };
    let values: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let path = process.sample_path(horizon, &mut rng).expect("sample");
            let mut total = 0.0;
            for seg in &path.segments {
                match seg {
                    Segment::Flow { .. } => total += prefix_value,
                    Segment::Hold { t0, t1, belief } => {
                        total += prob.u(belief) * ((-r * t0).exp() - (-r * t1).exp());
                    }
                }
            }
            // tail: freeze the last belief past the horizon
            let last = process.belief_at(&path, horizon).expect("endpoint");
            total + (-r * horizon).exp() * prob.u(&last)
        })
        .collect();
    let mean = values.iter().sum::<f64>() / n_paths as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_paths as f64 - 1.0);
    let half_width = 1.96 * (var / n_paths as f64).sqrt();
    Ok((mean, half_width))
}

// ---------------------------------------------------------------------------
// martingale consistency

#[derive(Debug, Clone)]
pub struct MartingaleRow {
    pub t: f64,
    pub h: f64,
    pub bin: usize,
    pub count: usize,
    /// Largest per-coordinate |empirical mean of `p_{t+h} - transition(h)
    /// applied to p_t`| within the bin.
    pub worst_discrepancy: f64,
    /// Three standard errors of that coordinate.
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct MartingaleReport {
    pub rows: Vec<MartingaleRow>,
    pub pass: bool,
}

/// Bins paths by the belief at time `t` and checks that the conditional
/// mean of the belief at `t + h` moves by the chain's transition kernel.
pub fn martingale_consistency_check(
    process: &BeliefProcess,
    t_list: &[f64],
    h_list: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<MartingaleReport> {
    let horizon = t_list.iter().cloned().fold(0.0, f64::max)
        + h_list.iter().cloned().fold(0.0, f64::max);
    let paths: Vec<BeliefPath> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            process.sample_path(horizon, &mut rng).expect("sample")
        })
        .collect();
    let ns = process.initial.dim();
    let n_bins = 10usize;
    let mut rows = Vec::new();
    for &t in t_list {
        for &h in h_list {
            let pm = process.semigroup.transition(h)?;
            // per bin and coordinate: running sums of the discrepancy
            let mut sums = vec![vec![0.0_f64; ns]; n_bins];
            let mut sqs = vec![vec![0.0_f64; ns]; n_bins];
            let mut counts = vec![0usize; n_bins];
            for path in &paths {
                let pt = process.belief_at(path, t)?;
                let pth = process.belief_at(path, t + h)?;
                let target = apply_transposed(&pm, &pt);
                let bin = ((pt[0] * n_bins as f64) as usize).min(n_bins - 1);
                counts[bin] += 1;
                for s in 0..ns {
                    let d = pth[s] - target[s];
                    sums[bin][s] += d;
                    sqs[bin][s] += d * d;
                }
            }
            for bin in 0..n_bins {
                if counts[bin] < 50 {
                    continue;
                }
                let nb = counts[bin] as f64;
                let mut worst = 0.0_f64;
                let mut thresh = 0.0_f64;
                for s in 0..ns {
                    let mean = sums[bin][s] / nb;
                    let var = (sqs[bin][s] / nb - mean * mean).max(0.0);
                    let se = (var / nb).sqrt();
                    if mean.abs() > worst {
                        worst = mean.abs();
                        thresh = 3.0 * se + 1e-9;
                    }
                }
                rows.push(MartingaleRow {
                    t,
                    h,
                    bin,
                    count: counts[bin],
                    worst_discrepancy: worst,
                    threshold: thresh,
                    pass: worst <= thresh,
                });
            }
        }
    }
    let pass = rows.iter().all(|row| row.pass);
    Ok(MartingaleReport { rows, pass })
}

// ---------------------------------------------------------------------------
// optimality-condition checker

#[derive(Debug, Clone)]
pub struct OptimalityReport {
    /// Largest distance from a visited belief to the set where the
    /// equation (not the concavity constraint) is tight.
    pub worst_tight_set_distance: f64,
    pub visited_in_tight_set: bool,
    /// Largest defect of `v(after) - v(before) - <Dv(before), jump>`
    /// over observed jumps.
    pub worst_chord_residual: f64,
    pub chords_flat: bool,
    /// All recipes here are drift-plus-jumps, so the no-continuous-
    /// martingale condition holds by construction.
    pub no_continuous_martingale: bool,
    pub pass: bool,
}

/// Samples paths of the process and checks the verification conditions
/// against a converged value field: visited beliefs stay where the
/// equation is tight, and jumps happen along flat chords of the field.
pub fn verify_optimality_conditions(
    process: &BeliefProcess,
    field: &ObstacleField,
    tol: f64,
    n_paths: usize,
    horizon: f64,
    seed: u64,
) -> Result<OptimalityReport> {
    let grid = field.field.grid();
    if grid.dim() != 2 {
        return Err(Error::UnsupportedDimension(
            "the condition checker works on two-state fields".into(),
        ));
    }
    let m = grid.resolution();
    let hstep = 1.0 / m as f64;
    let v = field.field.values();
    // one-sided derivative in the jump direction: the field may kink at
    // the departure point, and the chord condition concerns the flat side
    let dv_at = |x: f64, direction: f64| -> f64 {
        let i = ((x * m as f64).round() as usize).min(m);
        if (direction > 0.0 && i < m) || i == 0 {
            (v[i + 1] - v[i]) / hstep
        } else {
            (v[i] - v[i - 1]) / hstep
        }
    };
    let tight_distance = |x: f64| -> f64 {
        let i = ((x * m as f64).round() as usize).min(m);
        let mut best = f64::INFINITY;
        for (j, tag) in field.tags.iter().enumerate() {
            if *tag == ActiveTag::PdeActive {
                best = best.min((j as f64 - i as f64).abs() * hstep);
            }
        }
        best
    };
    let mut report = OptimalityReport {
        worst_tight_set_distance: 0.0,
        visited_in_tight_set: true,
        worst_chord_residual: 0.0,
        chords_flat: true,
        no_continuous_martingale: true,
        pass: true,
    };
    for i in 0..n_paths {
        let mut rng = path_rng(seed, i as u64);
        let path = process.sample_path(horizon, &mut rng)?;
        let mut prev_end: Option<Belief> = None;
        for seg in &path.segments {
            let (start_belief, end_belief) = match seg {
                Segment::Flow { t0, t1, start } => {
                    for k in 0..=32 {
                        let t = t0 + (t1 - t0) * k as f64 / 32.0;
                        let p = process.semigroup.belief_flow(start, t - t0)?;
                        let d = tight_distance(p[0]);
                        report.worst_tight_set_distance = report.worst_tight_set_distance.max(d);
                    }
                    (
                        start.clone(),
                        process.semigroup.belief_flow(start, t1 - t0)?,
                    )
                }
                Segment::Hold { belief, .. } => {
                    let d = tight_distance(belief[0]);
                    report.worst_tight_set_distance = report.worst_tight_set_distance.max(d);
                    (belief.clone(), belief.clone())
                }
            };
            if let Some(before) = prev_end {
                let dx = start_belief[0] - before[0];
                if dx.abs() > 1e-12 {
                    let chord = field.field.eval(&start_belief) - field.field.eval(&before)
                        - dv_at(before[0], dx) * dx;
                    report.worst_chord_residual = report.worst_chord_residual.max(chord.abs());
                }
            }
            prev_end = Some(end_belief);
        }
    }
    report.visited_in_tight_set = report.worst_tight_set_distance <= 1.5 * hstep;
    report.chords_flat = report.worst_chord_residual <= tol;
    report.pass =
        report.visited_in_tight_set && report.chords_flat && report.no_continuous_martingale;
    Ok(report)
}

// ---------------------------------------------------------------------------
// stage-game play

#[derive(Debug, Clone)]
pub enum Strategy1 {
    /// Play the optimal mixed action of the average game at the public
    /// belief, revealing nothing.
    NonRevealing,
    /// Split to the state vertices every stage.
    FullyRevealing,
    /// Split the public belief onto `{p_lo, p_hi}` whenever it lies in
    /// between (the stage discretization of the two-point process);
    /// degenerate intervals fall back to non-revealing play.
    SplittingOptimal { p_lo: f64, p_hi: f64 },
}

#[derive(Debug, Clone)]
pub struct PlayReport {
    pub estimate: f64,
    pub half_width: f64,
    pub stages: usize,
    /// Discount mass ignored by truncation times the payoff bound.
    pub truncation_bound: f64,
    pub zero_probability_incidents: usize,
}

/// Simulates the discretized game: the informed player splits the public
/// belief and plays the optimal action of the average game at the
/// realized posterior; the uninformed player best-replies at the public
/// belief and updates it by Bayes on the observed action, then by the
/// chain's transition kernel.
pub fn play_game(
    spec: &GameSpec,
    n: u32,
    strategy: &Strategy1,
    n_paths: usize,
    seed: u64,
) -> Result<PlayReport> {
    let violations = spec.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let RateData::Exogenous { matrix } = &spec.rate else {
        return Err(Error::Domain(
            "stage-game play needs action-independent transitions (the \
             uninformed update is undefined otherwise)"
                .into(),
        ));
    };
    if n_paths < 2 {
        return Err(Error::Domain("at least two paths are required".into()));
    }
    let ns = spec.n_states();
    let lambda = stage_weight(spec.discount, n);
    // truncate when the remaining discount mass is below 1e-4
    let stages = (4.0 * LN_10 / -(1.0 - lambda).ln()).ceil() as usize;
    let truncation_bound = (1.0 - lambda).powi(stages as i32) * spec.max_abs_payoff();
    let semigroup = Semigroup::new(matrix)?;
    let pm = semigroup.transition(1.0 / n as f64)?;
    let step_rows: Vec<Vec<f64>> = (0..ns)
        .map(|s| (0..ns).map(|s2| pm[(s, s2)].max(0.0)).collect())
        .collect();

    struct PathOutcome {
        payoff: f64,
        incidents: usize,
    }

    let outcomes: Vec<PathOutcome> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let mut s = sample_index(spec.initial_belief.as_slice(), &mut rng);
            let mut q = spec.initial_belief.clone();
            let mut payoff = 0.0;
            let mut incidents = 0usize;
            let mut weight = lambda;
            for _ in 0..stages {
                // the splitting of the public belief this stage
                let plan: Vec<(f64, Belief)> = match strategy {
                    Strategy1::NonRevealing => vec![(1.0, q.clone())],
                    Strategy1::FullyRevealing => (0..ns)
                        .filter(|s2| q[*s2] > 0.0)
                        .map(|s2| (q[s2], Belief::vertex(ns, s2)))
                        .collect(),
                    Strategy1::SplittingOptimal { p_lo, p_hi } => {
                        let x = q[0];
                        if ns == 2 && p_hi - p_lo > 1e-12 && x > *p_lo && x < *p_hi {
                            let w_hi = (x - p_lo) / (p_hi - p_lo);
                            vec![
                                (1.0 - w_hi, Belief::new(vec![*p_lo, 1.0 - p_lo]).unwrap()),
                                (w_hi, Belief::new(vec![*p_hi, 1.0 - p_hi]).unwrap()),
                            ]
                        } else {
                            vec![(1.0, q.clone())]
                        }
                    }
                };
                // per-label optimal actions at the posterior
                let label_actions: Vec<Vec<f64>> = plan
                    .iter()
                    .map(|(_, post)| {
                        average_game(spec, post)
                            .and_then(|g| g.solve(DEFAULT_TOL))
                            .map(|sol| sol.row_strategy)
                            .expect("stage game")
                    })
                    .collect();
                let reply = average_game(spec, &q)
                    .and_then(|g| g.solve(DEFAULT_TOL))
                    .map(|sol| sol.col_strategy)
                    .expect("stage game");
                // the informed player draws the label given the true state
                let label_weights: Vec<f64> = if q[s] > 1e-14 {
                    plan.iter().map(|(w, post)| w * post[s] / q[s]).collect()
                } else {
                    plan.iter().map(|(w, _)| *w).collect()
                };
                let label = sample_index(&label_weights, &mut rng);
                let x_act = &label_actions[label];
                // expected stage payoff given the true state and both
                // mixed actions (tower property keeps the mean unbiased)
                let mut g = 0.0;
                for (a, xa) in x_act.iter().enumerate() {
                    if *xa == 0.0 {
                        continue;
                    }
                    for (b, yb) in reply.iter().enumerate() {
                        g += xa * yb * spec.payoff_at(s, a, b);
                    }
                }
                payoff += weight * g;
                weight *= 1.0 - lambda;
                // observed action and the Bayesian update
                let a_obs = sample_index(x_act, &mut rng);
                let mut posterior: Vec<f64> = (0..ns)
                    .map(|s2| {
                        plan.iter()
                            .zip(&label_actions)
                            .map(|((w, post), xs)| w * post[s2] * xs[a_obs])
                            .sum()
                    })
                    .collect();
                let denom: f64 = posterior.iter().sum();
                if denom <= 1e-14 {
                    incidents += 1;
                    posterior = q.as_slice().to_vec();
                }
                let tilde = Belief::from_unnormalized(posterior);
                q = apply_transposed(&pm, &tilde);
                s = sample_index(&step_rows[s], &mut rng);
            }
            PathOutcome { payoff, incidents }
        })
        .collect();
    let mean = outcomes.iter().map(|o| o.payoff).sum::<f64>() / n_paths as f64;
    let var = outcomes
        .iter()
        .map(|o| (o.payoff - mean).powi(2))
        .sum::<f64>()
        / (n_paths as f64 - 1.0);
    Ok(PlayReport {
        estimate: mean,
        half_width: 1.96 * (var / n_paths as f64).sqrt(),
        stages,
        truncation_bound,
        zero_probability_incidents: outcomes.iter().map(|o| o.incidents).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{catalog, envelope::BeliefGrid, hj, matrix_game::MatrixGame};
    use proptest::prelude::*;

    fn belief2(x: f64) -> Belief {
        Belief::new(vec![x, 1.0 - x]).unwrap()
    }

    #[test]
    fn static_split_examples() {
        let p = belief2(0.5);
        // single label keeps the prior
        let plan = static_split(&p, &[1.0], &[p.clone()]).unwrap();
        assert!(plan.worst_invariant_defect(&p) <= EXACT_TOL);
        // full revelation of a fair prior: the joint is the identity / 2
        let plan = static_split(
            &p,
            &[0.5, 0.5],
            &[Belief::vertex(2, 0), Belief::vertex(2, 1)],
        )
        .unwrap();
        assert_eq!(plan.joint, vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
        assert!(plan.worst_invariant_defect(&p) <= EXACT_TOL);
        // asymmetric split recovers its conditionals exactly
        let p = belief2(0.4);
        let plan = static_split(
            &p,
            &[1.0 / 3.0, 2.0 / 3.0],
            &[belief2(0.8), belief2(0.2)],
        )
        .unwrap();
        assert!((plan.joint[0][0] - 0.8 / 3.0).abs() <= EXACT_TOL);
        assert!(plan.worst_invariant_defect(&p) <= EXACT_TOL);
    }

    #[test]
    fn static_split_rejects_wrong_barycenter() {
        let p = belief2(0.5);
        let err = static_split(&p, &[0.5, 0.5], &[belief2(0.9), belief2(0.3)]);
        assert!(err.is_err());
    }

    #[test]
    fn dynamic_split_nonrevealing_chain() {
        // deterministic tree: q_{m+1} = transpose(Pi) q_m
        let pi = vec![vec![0.8, 0.2], vec![0.3, 0.7]];
        let q0 = belief2(0.5);
        let q1x = 0.5 * 0.8 + 0.5 * 0.3;
        let q1 = belief2(q1x);
        let q2 = belief2(q1x * 0.8 + (1.0 - q1x) * 0.3);
        let tree = BeliefTree {
            belief: q0,
            children: vec![(
                1.0,
                BeliefTree {
                    belief: q1,
                    children: vec![(
                        1.0,
                        BeliefTree {
                            belief: q2,
                            children: vec![],
                        },
                    )],
                },
            )],
        };
        let split = dynamic_split(&tree, &pi).unwrap();
        assert!(split.c1_residual <= EXACT_TOL, "{}", split.c1_residual);
        assert!(split.c2_residual <= EXACT_TOL, "{}", split.c2_residual);
        // degenerate kernels: a single child with probability one
        let kern = split.kernel(0, 0);
        assert_eq!(kern.len(), 1);
        assert!((kern[0].1 - 1.0).abs() <= EXACT_TOL);
    }

    #[test]
    fn dynamic_split_depth_one_full_revelation() {
        let pi = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let tree = BeliefTree {
            belief: belief2(0.5),
            children: vec![
                (
                    0.5,
                    BeliefTree {
                        belief: Belief::vertex(2, 0),
                        children: vec![],
                    },
                ),
                (
                    0.5,
                    BeliefTree {
                        belief: Belief::vertex(2, 1),
                        children: vec![],
                    },
                ),
            ],
        };
        let split = dynamic_split(&tree, &pi).unwrap();
        assert!(split.c1_residual <= EXACT_TOL && split.c2_residual <= EXACT_TOL);
        // observing the next state pins the revealed vertex
        let kern = split.kernel(0, 0);
        assert_eq!(kern, vec![(1, 1.0)]);
        let kern = split.kernel(0, 1);
        assert_eq!(kern, vec![(2, 1.0)]);
    }

    #[test]
    fn dynamic_split_depth_two_mixed() {
        // embedded step of the symmetric reference chain at h = 1/4
        let sg = Semigroup::new(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let pm = sg.transition(0.25).unwrap();
        let pi: Vec<Vec<f64>> = (0..2).map(|s| (0..2).map(|s2| pm[(s, s2)]).collect()).collect();
        // depth 1: partial revelation of p = 0.5 onto {0.3, 0.7} after the
        // embedded step (the step fixes 0.5, so the barycenter is 0.5)
        let flow = |x: f64| pi[0][0] * x + pi[1][0] * (1.0 - x);
        let q03 = belief2(0.3);
        let q07 = belief2(0.7);
        // depth 2: no further revelation, each branch flows deterministically
        let tree = BeliefTree {
            belief: belief2(0.5),
            children: vec![
                (
                    0.5,
                    BeliefTree {
                        belief: q03.clone(),
                        children: vec![(
                            1.0,
                            BeliefTree {
                                belief: belief2(flow(q03[0])),
                                children: vec![],
                            },
                        )],
                    },
                ),
                (
                    0.5,
                    BeliefTree {
                        belief: q07.clone(),
                        children: vec![(
                            1.0,
                            BeliefTree {
                                belief: belief2(flow(q07[0])),
                                children: vec![],
                            },
                        )],
                    },
                ),
            ],
        };
        let split = dynamic_split(&tree, &pi).unwrap();
        assert!(split.c1_residual <= EXACT_TOL, "{}", split.c1_residual);
        assert!(split.c2_residual <= EXACT_TOL, "{}", split.c2_residual);
        assert_eq!(split.pruned_branches, 0);
    }

    #[test]
    fn dynamic_split_rejects_broken_martingale() {
        let pi = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let tree = BeliefTree {
            belief: belief2(0.5),
            children: vec![
                (
                    0.5,
                    BeliefTree {
                        belief: belief2(0.9),
                        children: vec![],
                    },
                ),
                (
                    0.5,
                    BeliefTree {
                        belief: belief2(0.3),
                        children: vec![],
                    },
                ),
            ],
        };
        let err = dynamic_split(&tree, &pi).unwrap_err();
        assert!(err.to_string().contains("node 0"), "{err}");
    }

    #[test]
    fn two_state_rates_examples() {
        // symmetric chain, symmetric interval
        let proc = two_state_optimal_process(1.0, 1.0, 1.0 / 3.0, 2.0 / 3.0, 0.5).unwrap();
        let Recipe::TwoStateOptimal {
            rho12_t,
            rho21_t,
            theta,
            ..
        } = proc.recipe
        else {
            panic!("wrong recipe")
        };
        assert!((rho12_t - 1.0).abs() <= 1e-12 && (rho21_t - 1.0).abs() <= 1e-12);
        assert_eq!(theta, 0.0);
        // vertex interval reproduces the chain's own rates
        let proc = two_state_optimal_process(0.7, 1.3, 0.0, 1.0, 0.5).unwrap();
        let Recipe::TwoStateOptimal {
            rho12_t, rho21_t, ..
        } = proc.recipe
        else {
            panic!("wrong recipe")
        };
        assert!((rho12_t - 1.3).abs() <= 1e-12, "{rho12_t}");
        assert!((rho21_t - 0.7).abs() <= 1e-12, "{rho21_t}");
        // starting at the invariant point: no deterministic prefix
        let proc = two_state_optimal_process(1.0, 1.0, 0.4, 0.6, 0.5).unwrap();
        let Recipe::TwoStateOptimal { theta, .. } = proc.recipe else {
            panic!("wrong recipe")
        };
        assert_eq!(theta, 0.0);
    }

    #[test]
    fn two_state_rejects_bad_interval() {
        // invariant point 0.5 outside [0.6, 0.9]
        assert!(two_state_optimal_process(1.0, 1.0, 0.6, 0.9, 0.7).is_err());
        assert!(two_state_optimal_process(1.0, 1.0, 0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn two_state_theta_is_the_hitting_time() {
        let proc = two_state_optimal_process(1.0, 1.0, 1.0 / 3.0, 2.0 / 3.0, 0.9).unwrap();
        let Recipe::TwoStateOptimal { theta, .. } = proc.recipe else {
            panic!("wrong recipe")
        };
        // flow: 0.5 + 0.4 e^{-2t} hits 2/3 when e^{-2t} = 5/12
        let expect = (0.4_f64 / (2.0 / 3.0 - 0.5)).ln() / 2.0;
        assert!((theta - expect).abs() <= 1e-12, "{theta} vs {expect}");
        let at_theta = proc.semigroup.belief_flow(&proc.initial, theta).unwrap();
        assert!((at_theta[0] - 2.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn flow_evaluation_is_deterministic_and_matches_quadrature() {
        let spec = catalog::renault_spec(1.0, 1.0);
        let prob = Problem::from_game(&spec).unwrap();
        let p = belief2(0.2);
        let proc = BeliefProcess::deterministic_flow(
            &[vec![-1.0, 1.0], vec![1.0, -1.0]],
            p.clone(),
        )
        .unwrap();
        let (est, hw) = evaluate_p1(&proc, &prob, 16, 1e-9, 7).unwrap();
        let expect = analysis::lower_bound_nonrevealing(&prob, &p).unwrap();
        assert!(hw <= 1e-12, "flow paths are identical, hw = {hw}");
        assert!((est - expect).abs() <= 1e-6, "{est} vs {expect}");
    }

    #[test]
    fn fully_revealing_evaluation_matches_vertex_bound() {
        let spec = catalog::convex_u_spec(1.0, 1.0);
        let prob = Problem::from_game(&spec).unwrap();
        let p = belief2(0.5);
        let proc = BeliefProcess::fully_revealing(
            &[vec![-1.0, 1.0], vec![1.0, -1.0]],
            p.clone(),
        )
        .unwrap();
        let (est, hw) = evaluate_p1(&proc, &prob, 100_000, 1e-6, 11).unwrap();
        let expect = analysis::lower_bound_fully_revealing(&prob, &p).unwrap();
        assert!((est - expect).abs() <= hw + 1e-4, "{est} vs {expect} (hw {hw})");
    }

    #[test]
    fn two_point_process_attains_the_upper_bound() {
        // one-shot value affine on [1/3, 2/3] and equal to its envelope
        // outside: the two-point process is optimal
        let spec = catalog::chord_abstract_spec(300);
        let prob = Problem::from_abstract(&spec).unwrap();
        for &x in &[0.5, 0.45, 0.1, 0.85] {
            let proc = two_state_optimal_process(1.0, 1.0, 1.0 / 3.0, 2.0 / 3.0, x).unwrap();
            let (est, hw) = evaluate_p1(&proc, &prob, 60_000, 1e-7, 13).unwrap();
            let upper = analysis::upper_bound(&prob, &belief2(x)).unwrap();
            let slack = hw.max(2e-3);
            assert!((est - upper).abs() <= slack, "x={x}: {est} vs {upper} (hw {hw})");
        }
    }

    #[test]
    fn martingale_check_passes_for_consistent_recipes() {
        let proc = BeliefProcess::deterministic_flow(
            &[vec![-1.0, 1.0], vec![1.0, -1.0]],
            belief2(0.3),
        )
        .unwrap();
        let report =
            martingale_consistency_check(&proc, &[0.5, 1.0], &[0.1, 0.5], 200, 3).unwrap();
        assert!(report.pass, "{:?}", report.rows);
        assert!(report
            .rows
            .iter()
            .all(|row| row.worst_discrepancy <= 1e-9));

        let proc = two_state_optimal_process(1.0, 1.0, 1.0 / 3.0, 2.0 / 3.0, 0.9).unwrap();
        let report =
            martingale_consistency_check(&proc, &[0.5, 1.0, 2.0], &[0.1, 0.5], 100_000, 8)
                .unwrap();
        assert!(report.pass, "{:?}", report.rows);
    }

    #[test]
    fn martingale_check_catches_halved_rates() {
        // same two belief points, deliberately wrong jump intensities
        let generator = vec![vec![-1.0, 1.0], vec![1.0, -1.0]];
        let proc = BeliefProcess::custom(
            &generator,
            vec![belief2(1.0 / 3.0), belief2(2.0 / 3.0)],
            vec![vec![0.0, 0.5], vec![0.5, 0.0]],
            0,
        )
        .unwrap();
        let report =
            martingale_consistency_check(&proc, &[0.5, 1.0, 2.0], &[0.1, 0.5], 100_000, 5)
                .unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn optimality_checker_accepts_the_optimal_recipes() {
        // non-revealing flow on a concave instance
        let spec = catalog::renault_spec(1.0, 1.0);
        let h = hj::Hamiltonian::Exogenous(Problem::from_game(&spec).unwrap());
        let field = hj::solve_obstacle(&h, 300, &hj::SchemeConfig::default()).unwrap();
        let proc = BeliefProcess::deterministic_flow(
            &[vec![-1.0, 1.0], vec![1.0, -1.0]],
            belief2(0.2),
        )
        .unwrap();
        let report = verify_optimality_conditions(&proc, &field, 5e-3, 50, 10.0, 17).unwrap();
        assert!(report.pass, "{report:?}");

        // two-point process on the affine-chord instance
        let spec = catalog::chord_abstract_spec(300);
        let h = hj::Hamiltonian::Exogenous(Problem::from_abstract(&spec).unwrap());
        let field = hj::solve_obstacle(&h, 300, &hj::SchemeConfig::default()).unwrap();
        let proc = two_state_optimal_process(1.0, 1.0, 1.0 / 3.0, 2.0 / 3.0, 0.1).unwrap();
        let report = verify_optimality_conditions(&proc, &field, 5e-3, 50, 10.0, 17).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn optimality_checker_rejects_full_revelation_on_concave_instance() {
        let spec = catalog::renault_spec(1.0, 1.0);
        let prob = Problem::from_game(&spec).unwrap();
        let h = hj::Hamiltonian::Exogenous(Problem::from_game(&spec).unwrap());
        let field = hj::solve_obstacle(&h, 300, &hj::SchemeConfig::default()).unwrap();
        let proc = BeliefProcess::fully_revealing(
            &[vec![-1.0, 1.0], vec![1.0, -1.0]],
            belief2(0.5),
        )
        .unwrap();
        let report = verify_optimality_conditions(&proc, &field, 5e-3, 50, 10.0, 17).unwrap();
        assert!(!report.chords_flat, "{report:?}");
        assert!(!report.pass);
        // and the payoff it secures is strictly below the optimum
        let (est, hw) = evaluate_p1(&proc, &prob, 2_000, 1e-6, 19).unwrap();
        let v = catalog::renault_closed_form(0.5, 1.0, 1.0).unwrap();
        assert!(est + hw < v - 0.1, "{est} vs {v}");
    }

    #[test]
    fn play_single_state_is_exact() {
        let spec = GameSpec {
            states: vec!["only".into()],
            actions1: vec!["T".into(), "B".into()],
            actions2: vec!["L".into(), "R".into()],
            payoff: vec![vec![vec![3.0, 1.0], vec![0.0, 2.0]]],
            rate: RateData::Exogenous {
                matrix: vec![vec![0.0]],
            },
            discount: 1.0,
            initial_belief: Belief::uniform(1),
        };
        let value = MatrixGame::new(spec.payoff[0].clone())
            .unwrap()
            .solve(1e-12)
            .unwrap()
            .value;
        let report = play_game(&spec, 16, &Strategy1::NonRevealing, 8, 21).unwrap();
        let lambda = stage_weight(1.0, 16);
        let expect = value * (1.0 - (1.0 - lambda).powi(report.stages as i32));
        assert!(report.half_width <= 1e-12);
        assert!((report.estimate - expect).abs() <= 1e-10);
        assert!((report.estimate - value).abs() <= report.truncation_bound + 1e-10);
    }

    #[test]
    fn play_nonrevealing_matches_the_flow_bound() {
        let spec = catalog::renault_spec(1.0, 1.0);
        let prob = Problem::from_game(&spec).unwrap();
        let report = play_game(&spec, 32, &Strategy1::NonRevealing, 3_000, 23).unwrap();
        let expect =
            analysis::lower_bound_nonrevealing(&prob, &spec.initial_belief).unwrap();
        assert!(
            (report.estimate - expect).abs() <= report.half_width + 2e-2,
            "{} vs {expect} (hw {})",
            report.estimate,
            report.half_width
        );
        assert_eq!(report.zero_probability_incidents, 0);
    }

    #[test]
    fn play_splitting_respects_the_sandwich() {
        let spec = catalog::renault_spec(1.0, 1.0);
        let prob = Problem::from_game(&spec).unwrap();
        let lower = play_game(&spec, 32, &Strategy1::NonRevealing, 3_000, 29)
            .unwrap()
            .estimate;
        // on a concave instance the optimal revelation interval is
        // degenerate, so the splitting strategy reduces to non-revealing
        let report = play_game(
            &spec,
            32,
            &Strategy1::SplittingOptimal { p_lo: 0.5, p_hi: 0.5 },
            3_000,
            29,
        )
        .unwrap();
        let upper = analysis::upper_bound(&prob, &spec.initial_belief).unwrap();
        assert!(report.estimate >= lower - 2e-2, "{} vs {lower}", report.estimate);
        assert!(report.estimate <= upper + 2e-2, "{} vs {upper}", report.estimate);
    }

    #[test]
    fn play_vertex_splitting_attains_the_convex_optimum() {
        // convex one-shot value: revealing everything is optimal
        let spec = catalog::convex_u_spec(1.0, 1.0);
        let prob = Problem::from_game(&spec).unwrap();
        let report = play_game(
            &spec,
            32,
            &Strategy1::SplittingOptimal { p_lo: 0.0, p_hi: 1.0 },
            3_000,
            31,
        )
        .unwrap();
        let upper = analysis::upper_bound(&prob, &spec.initial_belief).unwrap();
        assert!(
            (report.estimate - upper).abs() <= report.half_width + 2e-2,
            "{} vs {upper}",
            report.estimate
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn any_consistent_process_stays_below_the_upper_bound(
            rho12 in 0.3..2.0f64,
            rho21 in 0.3..2.0f64,
            x in 0.05..0.95f64,
            recipe_pick in 0..3usize,
        ) {
            let mut spec = catalog::counterexample_abstract_spec(300);
            spec.rate = RateData::Exogenous {
                matrix: vec![vec![-rho12, rho12], vec![rho21, -rho21]],
            };
            let prob = Problem::from_abstract(&spec).unwrap();
            let generator = vec![vec![-rho12, rho12], vec![rho21, -rho21]];
            let p_inf = rho21 / (rho12 + rho21);
            let proc = match recipe_pick {
                0 => BeliefProcess::deterministic_flow(&generator, belief2(x)).unwrap(),
                1 => BeliefProcess::fully_revealing(&generator, belief2(x)).unwrap(),
                _ => two_state_optimal_process(
                    rho12,
                    rho21,
                    0.45 * p_inf,
                    p_inf + 0.45 * (1.0 - p_inf),
                    x,
                )
                .unwrap(),
            };
            let (est, hw) = evaluate_p1(&proc, &prob, 2_000, 1e-6, 37).unwrap();
            let upper = analysis::upper_bound(&prob, &belief2(x)).unwrap();
            prop_assert!(est <= upper + hw.max(2e-3), "{est} vs {upper}");
        }

        #[test]
        fn static_split_invariants_hold_exactly(
            x in 0.05..0.95f64,
            lo_frac in 0.1..0.9f64,
            hi_frac in 0.1..0.9f64,
        ) {
            let lo = x * lo_frac;
            let hi = x + (1.0 - x) * hi_frac;
            let w_hi = (x - lo) / (hi - lo);
            let p = belief2(x);
            let plan = static_split(
                &p,
                &[1.0 - w_hi, w_hi],
                &[belief2(lo), belief2(hi)],
            ).unwrap();
            prop_assert!(plan.worst_invariant_defect(&p) <= EXACT_TOL);
        }
    }

    #[test]
    fn grid_round_trip_used_by_checker() {
        // the checker assumes the field's grid maps x to index round(x m)
        let grid = BeliefGrid::new(2, 10).unwrap();
        for i in 0..=10 {
            assert!((grid.point(i)[0] - i as f64 / 10.0).abs() <= 1e-15);
        }
    }
}
