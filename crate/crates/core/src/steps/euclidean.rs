//! Closed-form proximal step for the registered quadratic product family
//! V(x) = (1-alpha)/2 ||x||^2 + alpha/2 (x_1 + ... + x_m)^2 on point masses.

use crate::error::{Error, Result};
use crate::model::{BlockState, ParticleEnsemble, ProblemSpec};

/// Exact argmin of V(x_j, x_{-j}) + (x_j - x_j^k)^2 / (2 tau):
/// x_j = (x_j^k / tau - alpha * s_{-j}) / (1 + 1/tau) with s_{-j} the sum of
/// the other coordinates. Requires B = 1 and scalar blocks.
pub fn euclidean_prox_step(
    problem: &ProblemSpec,
    state: &BlockState,
    j: usize,
    tau: f64,
) -> Result<ParticleEnsemble> {
    let form = problem.closed_form.ok_or(Error::ClosedFormNotRegistered)?;
    if state.count() != 1 {
        return Err(Error::ClosedFormNeedsPointMass(state.count()));
    }
    if problem.dims[j] != 1 {
        return Err(Error::Shape("closed-form solver needs scalar blocks".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let x_j = state.block(j).points()[(0, 0)];
    let s_minus: f64 = (0..problem.m)
        .filter(|&i| i != j)
        .map(|i| state.block(i).points()[(0, 0)])
        .sum();
    let inv_tau = 1.0 / tau;
    let new = (inv_tau * x_j - form.alpha * s_minus) / (1.0 + inv_tau);
    ParticleEnsemble::point(&[new])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::quadratic_product_problem;
    use approx::assert_abs_diff_eq;

    fn point_state(values: &[f64]) -> BlockState {
        BlockState::new(
            values
                .iter()
                .map(|v| ParticleEnsemble::point(&[*v]).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn prox_of_half_x_squared_halves_the_point() {
        // alpha = 0, x = 4, tau = 1 -> 2.
        let problem = quadratic_product_problem(1, 0.0).unwrap();
        let state = point_state(&[4.0]);
        let out = euclidean_prox_step(&problem, &state, 0, 1.0).unwrap();
        assert_abs_diff_eq!(out.points()[(0, 0)], 2.0);
    }

    #[test]
    fn parallel_step_kills_the_sum_at_the_paper_rate() {
        // m=3, alpha=0.5, tau=1, x0=(1,1,1): s1 = ((1/tau - 2*0.5)/(1+1/tau)) s0 = 0.
        let problem = quadratic_product_problem(3, 0.5).unwrap();
        let state = point_state(&[1.0, 1.0, 1.0]);
        let mut new = Vec::new();
        for j in 0..3 {
            new.push(euclidean_prox_step(&problem, &state, j, 1.0).unwrap().points()[(0, 0)]);
        }
        let s1: f64 = new.iter().sum();
        assert_abs_diff_eq!(s1, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sum_recursion_diverges_beyond_the_threshold() {
        // Oracle: simulate the parallel recursion directly. For m=3, alpha=0.9
        // the bound is tau <= 2/((m-1)alpha - 1) = 2.5; tau = 3 diverges.
        let problem = quadratic_product_problem(3, 0.9).unwrap();
        let mut state = point_state(&[1.0, 1.0, 1.0]);
        let mut last_s: f64 = 3.0;
        for _ in 0..50 {
            let mut new = Vec::new();
            for j in 0..3 {
                new.push(
                    euclidean_prox_step(&problem, &state, j, 3.0).unwrap().points()[(0, 0)],
                );
            }
            state = point_state(&new);
            last_s = new.iter().sum();
        }
        // |ratio| = |(1/3 - 1.8)/(1 + 1/3)| = 1.1 -> |s^50| = 3 * 1.1^50.
        let expected = 3.0 * 1.1f64.powi(50);
        assert!(last_s.abs() > 100.0, "sum should diverge, got {last_s}");
        assert_abs_diff_eq!(last_s.abs(), expected, epsilon = 1e-6 * expected);
    }

    #[test]
    fn rejects_unregistered_problems_and_fat_ensembles() {
        let problem = crate::model::ProblemSpec::new(
            vec![1],
            crate::model::PotentialSpec::zero(&[1]),
            vec![crate::model::EntropySpec::none()],
            vec![crate::model::InteractionSpec::none()],
        )
        .unwrap();
        let state = point_state(&[1.0]);
        assert!(matches!(
            euclidean_prox_step(&problem, &state, 0, 1.0),
            Err(Error::ClosedFormNotRegistered)
        ));
        let problem = quadratic_product_problem(1, 0.0).unwrap();
        let fat = BlockState::new(vec![ParticleEnsemble::from_rows(&[vec![0.0], vec![1.0]])
            .unwrap()])
        .unwrap();
        assert!(matches!(
            euclidean_prox_step(&problem, &fat, 0, 1.0),
            Err(Error::ClosedFormNeedsPointMass(2))
        ));
    }
}
