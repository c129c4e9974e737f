//! Euler-Maruyama particle step for the blockwise proximal subproblem.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{BlockState, EntropyKind, ParticleEnsemble, ProblemSpec};
use crate::steps::{interaction_forces, MarginalPotential};

/// One explicit SDE step of block `j`:
///
/// X_b <- X_b - tau [ grad_hat V_j(X_b) + (1/B) sum_b' (grad1 W(X_b, X_b') +
/// grad2 W(X_b', X_b)) ] + sqrt(2 c tau) eta_b,
///
/// with the noise omitted when the block has no entropy term and c the
/// entropy coefficient. Only valid for negative self-entropy; a porous-medium
/// entropy has no corresponding SDE and is rejected.
pub fn sde_block_step(
    problem: &ProblemSpec,
    state: &BlockState,
    j: usize,
    tau: f64,
    n_grad: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParticleEnsemble> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let entropy = problem.entropies[j];
    let noise_scale = match entropy.kind {
        EntropyKind::None => None,
        EntropyKind::NegSelfEntropy => Some((2.0 * entropy.coefficient * tau).sqrt()),
        EntropyKind::Power { .. } => return Err(Error::SdeRequiresNegEntropy),
    };

    let marginal = MarginalPotential::new(problem, state, j, n_grad, rng);
    let ensemble = state.block(j);
    let b = ensemble.count();
    let d = ensemble.dim();

    let forces = problem.interactions[j]
        .kernel()
        .map(|k| interaction_forces(k, ensemble.points()));

    let mut out = Array2::zeros((b, d));
    let mut buf = vec![0.0; problem.total_dim()];
    for bi in 0..b {
        let x = ensemble.row(bi);
        let x = x.as_slice().unwrap();
        let mut drift = marginal.gradient(x, bi, &mut buf);
        if let Some(f) = &forces {
            for c in 0..d {
                drift[c] += f[(bi, c)];
            }
        }
        for c in 0..d {
            let mut v = x[c] - tau * drift[c];
            if let Some(scale) = noise_scale {
                let eta: f64 = StandardNormal.sample(rng);
                v += scale * eta;
            }
            out[(bi, c)] = v;
        }
    }
    ParticleEnsemble::new(out)
}
