//! Slow reference computations used to cross-check the production paths in
//! tests: a standalone integrator, a least-squares detectability oracle
//! built from simulated responses, and a set-based bisimulation refinement.
//!
//! Nothing here shares code with the implementations it validates beyond
//! the basic system types.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::abstraction::{FiniteTransitionSystem, DIST_TOL};
use crate::systems::{DynamicsProvider, LinearSystem};

/// Classical fourth-order Runge-Kutta flow over one period under a held
/// input, written out directly so it shares nothing with the simulator.
pub fn rk4_flow(
    provider: &dyn DynamicsProvider,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    tau: f64,
    substeps: usize,
) -> DVector<f64> {
    let h = tau / substeps as f64;
    let mut x = x0.clone();
    for _ in 0..substeps {
        let k1 = provider.vector_field(&x, u);
        let k2 = provider.vector_field(&(&x + &k1 * (h / 2.0)), u);
        let k3 = provider.vector_field(&(&x + &k2 * (h / 2.0)), u);
        let k4 = provider.vector_field(&(&x + &k3 * h), u);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

fn window_outputs(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> DVector<f64> {
    let m = sys.io_dim();
    let mut x = x0.clone();
    let mut stacked = DVector::zeros(inputs.len() * m);
    for (k, u) in inputs.iter().enumerate() {
        let y = sys.c() * &x + sys.d() * u;
        stacked.rows_mut(k * m, m).copy_from(&y);
        x = sys.a() * x + sys.b() * u;
    }
    stacked
}

/// Smallest output energy over the `n0 + 1`-step window achievable by any
/// input sequence, from the initial state `x0`, found by explicit least
/// squares on simulated responses.
pub fn min_window_output_energy(sys: &LinearSystem, n0: usize, x0: &DVector<f64>) -> f64 {
    let m = sys.io_dim();
    let slots = n0 + 1;
    let zero_inputs = vec![DVector::zeros(m); slots];
    let free = window_outputs(sys, x0, &zero_inputs);
    // forced-response matrix, one simulated probe per input coordinate
    let mut forced = DMatrix::<f64>::zeros(slots * m, slots * m);
    let origin = DVector::zeros(sys.state_dim());
    for slot in 0..slots {
        for ch in 0..m {
            let mut probe = zero_inputs.clone();
            probe[slot][ch] = 1.0;
            forced
                .column_mut(slot * m + ch)
                .copy_from(&window_outputs(sys, &origin, &probe));
        }
    }
    let svd = forced.clone().svd(true, true);
    let best_u = svd
        .solve(&(-&free), 1e-12)
        .expect("least-squares solve is unconditionally defined");
    (free + forced * best_u).norm_squared()
}

/// Detectability constant recovered purely from simulated responses: the
/// window-energy quadratic form is rebuilt by polarization of
/// [`min_window_output_energy`] and minimized over the unit sphere.
pub fn detectability_oracle(sys: &LinearSystem, n0: usize) -> f64 {
    let n = sys.state_dim();
    let mut basis_energy = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        basis_energy.push(min_window_output_energy(sys, n0, &e));
    }
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        gram[(i, i)] = basis_energy[i];
        for j in 0..i {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e[j] = 1.0;
            let paired = min_window_output_energy(sys, n0, &e);
            let cross = (paired - basis_energy[i] - basis_energy[j]) / 2.0;
            gram[(i, j)] = cross;
            gram[(j, i)] = cross;
        }
    }
    crate::linalg::min_symmetric_eigenvalue(&gram)
}

/// Greatest approximate bisimulation computed the slow way: a plain pair
/// set refined Jacobi-style until stable. Returns the pairs and whether the
/// relation covers both state sets.
pub fn exhaustive_bisimulation(
    t1: &FiniteTransitionSystem,
    t2: &FiniteTransitionSystem,
    epsilon: f64,
    mu: f64,
) -> (BTreeSet<(u32, u32)>, bool) {
    let sup = |a: &DVector<f64>, b: &DVector<f64>| (a - b).amax();
    let mut rel: BTreeSet<(u32, u32)> = BTreeSet::new();
    for i in 0..t1.state_count() {
        for j in 0..t2.state_count() {
            if sup(t1.state_embedding(i), t2.state_embedding(j)) <= epsilon + DIST_TOL {
                rel.insert((i as u32, j as u32));
            }
        }
    }
    let close = |ta: &FiniteTransitionSystem, tb: &FiniteTransitionSystem| -> Vec<Vec<usize>> {
        (0..ta.label_count())
            .map(|a| {
                (0..tb.label_count())
                    .filter(|&b| sup(ta.label_embedding(a), tb.label_embedding(b)) <= mu + DIST_TOL)
                    .collect()
            })
            .collect()
    };
    let close12 = close(t1, t2);
    let close21 = close(t2, t1);

    loop {
        let survivors: BTreeSet<(u32, u32)> = rel
            .iter()
            .copied()
            .filter(|&(i, j)| {
                answers(t1, t2, &close12, &rel, i as usize, j as usize, false)
                    && answers(t2, t1, &close21, &rel, j as usize, i as usize, true)
            })
            .collect();
        if survivors.len() == rel.len() {
            break;
        }
        rel = survivors;
    }

    let mut left = vec![false; t1.state_count()];
    let mut right = vec![false; t2.state_count()];
    for &(i, j) in &rel {
        left[i as usize] = true;
        right[j as usize] = true;
    }
    let bisimilar = left.iter().all(|&b| b) && right.iter().all(|&b| b);
    (rel, bisimilar)
}

fn answers(
    ta: &FiniteTransitionSystem,
    tb: &FiniteTransitionSystem,
    close: &[Vec<usize>],
    rel: &BTreeSet<(u32, u32)>,
    i: usize,
    j: usize,
    swapped: bool,
) -> bool {
    for a in 0..ta.label_count() {
        if ta.escapes(i, a) && !close[a].iter().any(|&b| tb.escapes(j, b)) {
            return false;
        }
        for &s in ta.successors(i, a) {
            let matched = close[a].iter().any(|&b| {
                tb.successors(j, b).iter().any(|&t| {
                    let key = if swapped { (t, s) } else { (s, t) };
                    rel.contains(&key)
                })
            });
            if !matched {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rk4_flow_matches_closed_form_scalar() {
        let sys = LinearSystem::from_rows(1, 1, &[-2.0], &[1.0], &[1.0], &[0.0]).unwrap();
        let x0 = DVector::from_vec(vec![1.0]);
        let u = DVector::from_vec(vec![3.0]);
        let tau = 0.7f64;
        // x(t) = e^{-2t} x0 + (1 - e^{-2t}) u/2
        let exact = (-2.0 * tau).exp() * 1.0 + (1.0 - (-2.0 * tau).exp()) * 1.5;
        let got = rk4_flow(&sys, &x0, &u, tau, 256);
        assert_relative_eq!(got[0], exact, max_relative = 1e-10);
    }

    #[test]
    fn zero_state_zero_input_window_energy_is_zero() {
        let sys =
            LinearSystem::from_rows(2, 1, &[0.4, 0.1, 0.0, 0.3], &[1.0, 0.5], &[1.0, 0.0], &[0.2])
                .unwrap();
        let e = min_window_output_energy(&sys, 3, &DVector::zeros(2));
        assert!(e.abs() <= 1e-18);
    }

    #[test]
    fn unforced_output_dominates_minimum() {
        let sys =
            LinearSystem::from_rows(2, 1, &[0.4, 0.1, 0.0, 0.3], &[1.0, 0.5], &[1.0, 0.0], &[0.2])
                .unwrap();
        let x0 = DVector::from_vec(vec![1.0, -0.5]);
        let min_e = min_window_output_energy(&sys, 3, &x0);
        let free = window_outputs(&sys, &x0, &vec![DVector::zeros(1); 4]).norm_squared();
        assert!(min_e <= free + 1e-12);
        assert!(min_e >= 0.0);
    }
}
