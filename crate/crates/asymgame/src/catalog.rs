//! Ready-made game instances used by the CLI, the shipped spec files and
//! the test suites.

use crate::game_model::{
    AbstractUSpec, AbstractUTable, Belief, GameSpec, GameSpecTwoSided, RateData,
};

/// Two-state game with payoff matrices `[[1,0],[0,0]]` / `[[0,0],[0,1]]`,
/// symmetric transition rate `pi` and discount `r`. Its one-shot value is
/// `u(p) = p(1-p)` (concave) and its limit value has the closed form
/// `1/4 - (2p-1)^2/4 * r/(r+4*pi)`.
pub fn renault_spec(r: f64, pi: f64) -> GameSpec {
    GameSpec {
        states: vec!["s1".into(), "s2".into()],
        actions1: vec!["T".into(), "B".into()],
        actions2: vec!["L".into(), "R".into()],
        payoff: vec![
            vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            vec![vec![0.0, 0.0], vec![0.0, 1.0]],
        ],
        rate: RateData::Exogenous {
            matrix: vec![vec![-pi, pi], vec![pi, -pi]],
        },
        discount: r,
        initial_belief: Belief::uniform(2),
    }
}

/// Two-state game with a single column for player 2, so that
/// `u(p) = max(2p, 1-p)` is convex. `u(delta_s1) = 2`, `u(delta_s2) = 1`.
pub fn convex_u_spec(r: f64, pi: f64) -> GameSpec {
    GameSpec {
        states: vec!["s1".into(), "s2".into()],
        actions1: vec!["T".into(), "B".into()],
        actions2: vec!["L".into()],
        payoff: vec![
            vec![vec![2.0], vec![0.0]],
            vec![vec![0.0], vec![1.0]],
        ],
        rate: RateData::Exogenous {
            matrix: vec![vec![-pi, pi], vec![pi, -pi]],
        },
        discount: r,
        initial_belief: Belief::uniform(2),
    }
}

/// Curvature parameter of the convex pieces in [`counterexample_u_value`].
pub const COUNTEREXAMPLE_CONVEXITY: f64 = 0.9;

/// A one-shot value with `u(0) = u(1) = 0`, `u = 1` on `[1/3, 2/3]` and
/// strictly convex pieces `3p (1 - c (1 - 3p))` outside, `c` = 0.9.
/// Revealing down to the kink at 1/3 is tempting early but regrettable
/// later, so the concavified-flow upper bound is not attained.
pub fn counterexample_u_value(p: f64) -> f64 {
    let c = COUNTEREXAMPLE_CONVEXITY;
    if p < 1.0 / 3.0 {
        3.0 * p * (1.0 - c * (1.0 - 3.0 * p))
    } else if p <= 2.0 / 3.0 {
        1.0
    } else {
        let q = 1.0 - p;
        3.0 * q * (1.0 - c * (1.0 - 3.0 * q))
    }
}

/// Abstract-u instance for [`counterexample_u_value`] on a grid of
/// resolution `m` (use a multiple of 3 so the kinks are grid points),
/// with symmetric unit transition rates and unit discount.
pub fn counterexample_abstract_spec(m: usize) -> AbstractUSpec {
    abstract_two_state_spec(m, 1.0, 1.0, 1.0, counterexample_u_value)
}

/// A one-shot value equal to its concave envelope outside `(1/3, 2/3)`
/// and strictly below the chord inside: cav u is `2.7p` on `[0,1/3]`,
/// the chord from 0.9 to 0.6 on `[1/3,2/3]`, and `1.8(1-p)` on `[2/3,1]`.
/// With symmetric rates the invariant measure 1/2 sits strictly inside
/// the chord interval, so the two-point belief process on {1/3, 2/3}
/// attains the upper bound.
pub fn chord_u_value(p: f64) -> f64 {
    if p < 1.0 / 3.0 {
        2.7 * p
    } else if p <= 2.0 / 3.0 {
        let chord = 0.9 - 0.9 * (p - 1.0 / 3.0);
        chord - 4.5 * (p - 1.0 / 3.0) * (2.0 / 3.0 - p)
    } else {
        1.8 * (1.0 - p)
    }
}

/// Abstract-u instance for [`chord_u_value`]; same chain as
/// [`counterexample_abstract_spec`].
pub fn chord_abstract_spec(m: usize) -> AbstractUSpec {
    abstract_two_state_spec(m, 1.0, 1.0, 1.0, chord_u_value)
}

fn abstract_two_state_spec(
    m: usize,
    rho12: f64,
    rho21: f64,
    r: f64,
    u: impl Fn(f64) -> f64,
) -> AbstractUSpec {
    let values = (0..=m).map(|i| u(i as f64 / m as f64)).collect();
    AbstractUSpec {
        states: vec!["s1".into(), "s2".into()],
        rate: RateData::Exogenous {
            matrix: vec![vec![-rho12, rho12], vec![rho21, -rho21]],
        },
        discount: r,
        initial_belief: Belief::uniform(2),
        u: AbstractUTable {
            grid_resolution: m,
            values,
        },
    }
}

/// A small generic two-sided instance: both chains have two states and
/// action-dependent rates, and the payoff depends on both states.
pub fn two_sided_demo_spec(r: f64) -> GameSpecTwoSided {
    GameSpecTwoSided {
        states1: vec!["h1".into(), "h2".into()],
        states2: vec!["k1".into(), "k2".into()],
        actions1: vec!["T".into(), "B".into()],
        actions2: vec!["L".into(), "R".into()],
        // payoff[s1][s2][a][b]
        payoff: vec![
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 0.4]],
                vec![vec![0.2, -0.3], vec![0.5, 0.0]],
            ],
            vec![
                vec![vec![0.0, 0.6], vec![-0.2, 0.1]],
                vec![vec![0.0, 0.0], vec![0.3, 1.0]],
            ],
        ],
        // rate1[s][s'][a]
        rate1: vec![
            vec![vec![-1.0, -0.5], vec![1.0, 0.5]],
            vec![vec![0.8, 1.2], vec![-0.8, -1.2]],
        ],
        // rate2[s][s'][b]
        rate2: vec![
            vec![vec![-0.6, -1.0], vec![0.6, 1.0]],
            vec![vec![1.0, 0.4], vec![-1.0, -0.4]],
        ],
        discount: r,
        initial_belief1: Belief::uniform(2),
        initial_belief2: Belief::uniform(2),
    }
}

/// Two-sided instance whose payoff and rates ignore player 2's chain;
/// its value must be constant in `p2` and equal to the one-sided value of
/// the induced endogenous game.
pub fn two_sided_p2_independent_spec(r: f64) -> GameSpecTwoSided {
    let base = renault_spec(r, 1.0);
    let payoff = base
        .payoff
        .iter()
        .map(|per_s| vec![per_s.clone(), per_s.clone()])
        .collect();
    GameSpecTwoSided {
        states1: base.states.clone(),
        states2: vec!["k1".into(), "k2".into()],
        actions1: base.actions1.clone(),
        actions2: base.actions2.clone(),
        payoff,
        // rate1[s][s'][a]: mildly action-dependent
        rate1: vec![
            vec![vec![-1.0, -1.5], vec![1.0, 1.5]],
            vec![vec![1.2, 0.7], vec![-1.2, -0.7]],
        ],
        rate2: vec![
            vec![vec![-0.5, -0.9], vec![0.5, 0.9]],
            vec![vec![0.3, 1.1], vec![-0.3, -1.1]],
        ],
        discount: r,
        initial_belief1: Belief::uniform(2),
        initial_belief2: Belief::uniform(2),
    }
}

/// One-sided endogenous reduction of [`two_sided_p2_independent_spec`]:
/// same payoff per `s1`, generator `R(s,s';a,b) = R1(s,s';a)`.
pub fn p2_independent_reduction(r: f64) -> GameSpec {
    let two = two_sided_p2_independent_spec(r);
    let ns = two.n_states1();
    let na = two.n_actions1();
    let nb = two.n_actions2();
    let payoff = (0..ns)
        .map(|s| two.payoff[s][0].clone())
        .collect::<Vec<_>>();
    let tensor = (0..ns)
        .map(|s| {
            (0..ns)
                .map(|s2| {
                    (0..na)
                        .map(|a| vec![two.rate1[s][s2][a]; nb])
                        .collect()
                })
                .collect()
        })
        .collect();
    GameSpec {
        states: two.states1.clone(),
        actions1: two.actions1.clone(),
        actions2: two.actions2.clone(),
        payoff,
        rate: RateData::Endogenous { tensor },
        discount: r,
        initial_belief: two.initial_belief1.clone(),
    }
}

/// Player-swapped mirror of a two-sided spec: sides, actions and sign of
/// the payoff are exchanged, so `v'(p1,p2) = -v(p2,p1)`.
pub fn swap_two_sided(spec: &GameSpecTwoSided) -> GameSpecTwoSided {
    let n1 = spec.n_states1();
    let n2 = spec.n_states2();
    let na = spec.n_actions1();
    let nb = spec.n_actions2();
    let payoff = (0..n2)
        .map(|s2| {
            (0..n1)
                .map(|s1| {
                    (0..nb)
                        .map(|b| (0..na).map(|a| -spec.payoff[s1][s2][a][b]).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    GameSpecTwoSided {
        states1: spec.states2.clone(),
        states2: spec.states1.clone(),
        actions1: spec.actions2.clone(),
        actions2: spec.actions1.clone(),
        payoff,
        rate1: spec.rate2.clone(),
        rate2: spec.rate1.clone(),
        discount: spec.discount,
        initial_belief1: spec.initial_belief2.clone(),
        initial_belief2: spec.initial_belief1.clone(),
    }
}

/// Closed-form limit value of [`renault_spec`]:
/// `v(p) = 1/4 - (2p-1)^2/4 * r/(r+4*pi)`.
pub fn renault_closed_form(p: f64, r: f64, pi: f64) -> crate::Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(crate::Error::Domain(format!("p = {p} outside [0,1]")));
    }
    if r < 0.0 || pi <= 0.0 {
        return Err(crate::Error::Domain(format!(
            "need r >= 0 and pi > 0, got r = {r}, pi = {pi}"
        )));
    }
    let d = 2.0 * p - 1.0;
    Ok(0.25 - d * d / 4.0 * (r / (r + 4.0 * pi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_spot_values() {
        assert!((renault_closed_form(0.5, 1.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((renault_closed_form(0.0, 1.0, 1.0).unwrap() - 0.2).abs() < 1e-15);
        // patient limit forgets the initial belief
        assert!((renault_closed_form(0.0, 0.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(renault_closed_form(1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn counterexample_u_shape() {
        assert_eq!(counterexample_u_value(0.0), 0.0);
        assert_eq!(counterexample_u_value(1.0), 0.0);
        assert_eq!(counterexample_u_value(0.5), 1.0);
        assert!((counterexample_u_value(1.0 / 3.0) - 1.0).abs() < 1e-12);
        // strict convexity inside [0, 1/3]
        let f = counterexample_u_value;
        let mid = f(1.0 / 6.0);
        assert!(mid < 0.5 * (f(0.0) + f(1.0 / 3.0)) - 0.05);
    }

    #[test]
    fn chord_u_shape() {
        assert_eq!(chord_u_value(0.0), 0.0);
        assert!((chord_u_value(1.0 / 3.0) - 0.9).abs() < 1e-12);
        assert!((chord_u_value(2.0 / 3.0) - 0.6).abs() < 1e-12);
        assert!((chord_u_value(1.0)).abs() < 1e-12);
        // dip below the chord inside
        assert!(chord_u_value(0.5) < 0.75 - 0.1);
    }

    #[test]
    fn demo_specs_validate() {
        assert!(two_sided_demo_spec(1.0).validate().is_empty());
        assert!(two_sided_p2_independent_spec(1.0).validate().is_empty());
        assert!(p2_independent_reduction(1.0).validate().is_empty());
        assert!(counterexample_abstract_spec(300).validate().is_empty());
        assert!(chord_abstract_spec(300).validate().is_empty());
        let demo = two_sided_demo_spec(1.0);
        assert!(swap_two_sided(&demo).validate().is_empty());
    }
}
