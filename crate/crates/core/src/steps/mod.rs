//! The three interchangeable solvers for the blockwise Wasserstein proximal
//! subproblem: SDE particle step, function-approximation transport-map step,
//! and the closed-form Euclidean step.

pub mod euclidean;
pub mod fa;
pub mod map;
pub mod sde;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{BlockState, InteractionKernel, ProblemSpec};

pub use euclidean::euclidean_prox_step;
pub use fa::{fa_block_step, FaConfig};
pub use map::{map_forward, map_jacobian_logdet, TransportMapModel};
pub use sde::sde_block_step;

/// Estimator of the marginal potential V_j(x) = int V(x, x_{-j}) d rho_{-j}
/// and its gradient. Particle b of the active block is paired with companion
/// index perm_i(b) in every other block i, one permutation per block per
/// round, all drawn from the caller's stream.
pub(crate) struct MarginalPotential<'a> {
    problem: &'a ProblemSpec,
    state: &'a BlockState,
    j: usize,
    /// rounds[r][i] is the companion permutation for block i (empty at i = j).
    rounds: Vec<Vec<Vec<usize>>>,
}

impl<'a> MarginalPotential<'a> {
    pub fn new(
        problem: &'a ProblemSpec,
        state: &'a BlockState,
        j: usize,
        n_rounds: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let b = state.count();
        let rounds = (0..n_rounds.max(1))
            .map(|_| {
                (0..problem.m)
                    .map(|i| {
                        if i == j {
                            Vec::new()
                        } else {
                            let mut idx: Vec<usize> = (0..b).collect();
                            idx.shuffle(rng);
                            idx
                        }
                    })
                    .collect()
            })
            .collect();
        Self { problem, state, j, rounds }
    }

    /// Full-diagonal estimator: every companion row is averaged (used by
    /// diagnostics, where exact permutation invariance matters more than
    /// cost). No randomness.
    pub fn full(problem: &'a ProblemSpec, state: &'a BlockState, j: usize) -> Self {
        Self { problem, state, j, rounds: Vec::new() }
    }

    pub fn total_dim(&self) -> usize {
        self.problem.total_dim()
    }

    fn fill_companions(&self, buf: &mut [f64], round: &[Vec<usize>], b: usize) {
        for i in 0..self.problem.m {
            if i == self.j {
                continue;
            }
            let src = self.state.block(i).row(round[i][b]);
            let off = self.problem.block_offset(i);
            buf[off..off + self.problem.dims[i]].copy_from_slice(src.as_slice().unwrap());
        }
    }

    fn fill_companions_diag(&self, buf: &mut [f64], row: usize) {
        for i in 0..self.problem.m {
            if i == self.j {
                continue;
            }
            let src = self.state.block(i).row(row);
            let off = self.problem.block_offset(i);
            buf[off..off + self.problem.dims[i]].copy_from_slice(src.as_slice().unwrap());
        }
    }

    /// Marginal potential value at x (block-j coordinates), paired as particle b.
    pub fn value(&self, x: &[f64], b: usize, buf: &mut [f64]) -> f64 {
        let off = self.problem.block_offset(self.j);
        buf[off..off + x.len()].copy_from_slice(x);
        if self.problem.m == 1 {
            return (self.problem.potential.value)(buf);
        }
        if self.rounds.is_empty() {
            let n = self.state.count();
            let mut acc = 0.0;
            for row in 0..n {
                self.fill_companions_diag(buf, row);
                acc += (self.problem.potential.value)(buf);
            }
            return acc / n as f64;
        }
        let mut acc = 0.0;
        for round in &self.rounds {
            self.fill_companions(buf, round, b);
            acc += (self.problem.potential.value)(buf);
        }
        acc / self.rounds.len() as f64
    }

    /// Marginal potential gradient at x, paired as particle b.
    pub fn gradient(&self, x: &[f64], b: usize, buf: &mut [f64]) -> Vec<f64> {
        let off = self.problem.block_offset(self.j);
        buf[off..off + x.len()].copy_from_slice(x);
        if self.problem.m == 1 {
            return (self.problem.potential.block_gradient)(self.j, buf);
        }
        if self.rounds.is_empty() {
            let n = self.state.count();
            let mut acc = vec![0.0; x.len()];
            for row in 0..n {
                self.fill_companions_diag(buf, row);
                let g = (self.problem.potential.block_gradient)(self.j, buf);
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += v;
                }
            }
            for a in acc.iter_mut() {
                *a /= n as f64;
            }
            return acc;
        }
        let mut acc = vec![0.0; x.len()];
        for round in &self.rounds {
            self.fill_companions(buf, round, b);
            let g = (self.problem.potential.block_gradient)(self.j, buf);
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a /= self.rounds.len() as f64;
        }
        acc
    }
}

/// Self-interaction force field: force_b = (1/B) sum_{b'} [grad1(x_b, x_b') +
/// grad2(x_b', x_b)]. Deterministic regardless of thread count.
pub(crate) fn interaction_forces(kernel: &InteractionKernel, pts: &Array2<f64>) -> Array2<f64> {
    let n = pts.nrows();
    let d = pts.ncols();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|b| {
            let xb = pts.row(b);
            let xb = xb.as_slice().unwrap();
            let mut force = vec![0.0; d];
            if let Some(radial) = &kernel.radial {
                // grad1 = 2 w'(s) (x - x'); even-difference force = 2 grad1.
                for bp in 0..n {
                    let xbp = pts.row(bp);
                    let xbp = xbp.as_slice().unwrap();
                    let mut s = 0.0;
                    for c in 0..d {
                        let diff = xb[c] - xbp[c];
                        s += diff * diff;
                    }
                    let dv = 4.0 * (radial.dvalue)(s);
                    for c in 0..d {
                        force[c] += dv * (xb[c] - xbp[c]);
                    }
                }
            } else {
                for bp in 0..n {
                    let xbp = pts.row(bp);
                    let xbp = xbp.as_slice().unwrap();
                    if kernel.even_difference {
                        // grad2(x', x) = grad1(x, x') for even-difference kernels.
                        let g = (kernel.grad1)(xb, xbp);
                        for c in 0..d {
                            force[c] += 2.0 * g[c];
                        }
                    } else {
                        let g1 = (kernel.grad1)(xb, xbp);
                        let g2 = (kernel.grad2)(xbp, xb);
                        for c in 0..d {
                            force[c] += g1[c] + g2[c];
                        }
                    }
                }
            }
            for f in force.iter_mut() {
                *f /= n as f64;
            }
            force
        })
        .collect();
    let mut out = Array2::zeros((n, d));
    for (b, row) in rows.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            out[(b, c)] = v;
        }
    }
    out
}

/// Self-interaction energy (1/B^2) sum_{b,b'} W(x_b, x_b').
pub(crate) fn interaction_energy(kernel: &InteractionKernel, pts: &Array2<f64>) -> f64 {
    let n = pts.nrows();
    let d = pts.ncols();
    let partial: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|b| {
            let xb = pts.row(b);
            let xb = xb.as_slice().unwrap();
            let mut acc = 0.0;
            if let Some(radial) = &kernel.radial {
                for bp in 0..n {
                    let xbp = pts.row(bp);
                    let xbp = xbp.as_slice().unwrap();
                    let mut s = 0.0;
                    for c in 0..d {
                        let diff = xb[c] - xbp[c];
                        s += diff * diff;
                    }
                    acc += (radial.value)(s);
                }
            } else {
                for bp in 0..n {
                    let xbp = pts.row(bp);
                    acc += (kernel.value)(xb, xbp.as_slice().unwrap());
                }
            }
            acc
        })
        .collect();
    partial.iter().sum::<f64>() / (n as f64 * n as f64)
}
