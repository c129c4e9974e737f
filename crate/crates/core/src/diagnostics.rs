//! Stationarity diagnostics: first-variation variance, first-order-condition
//! residuals (the inexactness measure), rate-slope extraction, and reference
//! ensemble construction for W2 tracking.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kde::{Kde, KdeConfig};
use crate::model::{
    AnalyticBlock, BlockState, EntropyKind, ParticleEnsemble, ProblemSpec, SchemeConfig,
};
use crate::rng;
use crate::scheduler::{run_wpcg_with, DiagnosticsConfig, RunOptions, RunRecord};
use crate::steps::{interaction_forces, MarginalPotential};

/// The first-variation field of the blockwise subproblem objective evaluated
/// at the current particles; its L2(rho_hat) norm is the inexactness level.
#[derive(Clone, Debug)]
pub struct FocResidual {
    /// eta evaluated at every particle of the new ensemble.
    pub field: Vec<Vec<f64>>,
    /// sqrt of the particle mean of squared field values.
    pub norm: f64,
}

/// Sample variance over particles of
/// phi(X_b) = V_hat_j(X_b) + c h'(rho_hat(X_b)) + (1/B) sum_b' [W(X_b, X_b') +
/// W(X_b', X_b)]. Zero variance is the stationarity signature (the first
/// variation is constant a.e. at a minimizer).
pub fn first_variation_variance(
    problem: &ProblemSpec,
    state: &BlockState,
    j: usize,
    kde_cfg: &KdeConfig,
) -> Result<f64> {
    crate::model::check_state(problem, state)?;
    let ensemble = state.block(j);
    let b = ensemble.count();
    if b == 1 {
        return Ok(0.0);
    }
    let entropy = problem.entropies[j];
    let kde = match entropy.kind {
        EntropyKind::None => None,
        _ => Some(Kde::fit(ensemble, kde_cfg)?),
    };
    let marginal = MarginalPotential::full(problem, state, j);
    let kernel = problem.interactions[j].kernel();

    let phi: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let x = ensemble.row(bi);
            let x = x.as_slice().unwrap();
            let mut buf = vec![0.0; problem.total_dim()];
            let mut v = marginal.value(x, bi, &mut buf);
            if let Some(kde) = &kde {
                let rho = kde.density(x).max(1e-300);
                v += entropy.coefficient
                    * match entropy.kind {
                        EntropyKind::None => 0.0,
                        EntropyKind::NegSelfEntropy => rho.ln() + 1.0,
                        EntropyKind::Power { exponent } => {
                            exponent as f64 * rho.powi(exponent as i32 - 1)
                        }
                    };
            }
            if let Some(kernel) = kernel {
                let mut acc = 0.0;
                for bp in 0..b {
                    let y = ensemble.row(bp);
                    let y = y.as_slice().unwrap();
                    acc += (kernel.value)(x, y) + (kernel.value)(y, x);
                }
                v += acc / b as f64;
            }
            v
        })
        .collect();

    let mean = phi.iter().sum::<f64>() / b as f64;
    Ok(phi.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (b as f64 - 1.0))
}

/// Residual of the subproblem's first-order optimality condition for block j,
/// using the solver's in-place particle correspondence (row b old <-> row b
/// new):
///
/// eta(X_b^new) = (X_b^old - X_b^new) - tau [ grad_hat V_j^old(X_b^new) +
/// grad h'_j(rho_hat_new)(X_b^new) + interaction gradients at the new
/// ensemble ].
pub fn foc_residual(
    problem: &ProblemSpec,
    state_prev: &BlockState,
    state_new: &BlockState,
    j: usize,
    tau: f64,
    kde_cfg: &KdeConfig,
) -> Result<FocResidual> {
    crate::model::check_state(problem, state_prev)?;
    crate::model::check_state(problem, state_new)?;
    let old = state_prev.block(j);
    let new = state_new.block(j);
    if old.count() != new.count() {
        return Err(Error::MissingCorrespondence);
    }
    let b = new.count();
    let d = new.dim();
    let entropy = problem.entropies[j];
    let kde = match entropy.kind {
        EntropyKind::None => None,
        _ => Some(Kde::fit(new, kde_cfg)?),
    };
    // The potential sees the companion blocks as of the solve, i.e. the
    // previous state; the entropy and interaction terms see the new ensemble.
    let marginal = MarginalPotential::full(problem, state_prev, j);
    let forces = problem.interactions[j]
        .kernel()
        .map(|k| interaction_forces(k, new.points()));

    let field: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let xn = new.row(bi);
            let xn = xn.as_slice().unwrap();
            let xo = old.row(bi);
            let mut buf = vec![0.0; problem.total_dim()];
            let mut drift = marginal.gradient(xn, bi, &mut buf);
            if let Some(kde) = &kde {
                match entropy.kind {
                    EntropyKind::None => {}
                    EntropyKind::NegSelfEntropy => {
                        // grad h'(rho) = grad log rho, the score.
                        let score = kde.log_density_grad(xn);
                        for c in 0..d {
                            drift[c] += entropy.coefficient * score[c];
                        }
                    }
                    EntropyKind::Power { exponent } => {
                        // h'(rho) = c n rho^{n-1}; grad = c n (n-1) rho^{n-2} grad rho.
                        let (rho, grad_rho) = kde.density_and_grad(xn);
                        let n = exponent as f64;
                        let scale =
                            entropy.coefficient * n * (n - 1.0) * rho.max(1e-300).powi(exponent as i32 - 2);
                        for c in 0..d {
                            drift[c] += scale * grad_rho[c];
                        }
                    }
                }
            }
            if let Some(f) = &forces {
                for c in 0..d {
                    drift[c] += f[(bi, c)];
                }
            }
            (0..d).map(|c| (xo[c] - xn[c]) - tau * drift[c]).collect()
        })
        .collect();

    let norm_sq =
        field.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / b as f64;
    Ok(FocResidual { field, norm: norm_sq.sqrt() })
}

/// Least-squares fit of log(field) against k. Returns (slope per iteration,
/// R^2). Records whose selected field is NaN are skipped.
pub fn rate_slope(
    records: &[RunRecord],
    select: impl Fn(&RunRecord) -> f64,
) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| {
            let v = select(r);
            if v.is_nan() {
                None
            } else {
                Some((r.k as f64, v))
            }
        })
        .collect();
    if pts.len() < 5 {
        return Err(Error::RateFitInput { needed: 5, got: pts.len() });
    }
    if pts.iter().any(|(_, v)| *v <= 0.0) {
        return Err(Error::RateFitNonPositive);
    }
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|(k, _)| *k).collect();
    let ys: Vec<f64> = pts.iter().map(|(_, v)| v.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    if sxx == 0.0 {
        return Err(Error::RateFitInput { needed: 5, got: 1 });
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fit = intercept + slope * x;
            (y - fit) * (y - fit)
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    let r2 = if ss_tot < 1e-30 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok((slope, r2))
}

/// How the W2 reference state is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferencePolicy {
    /// Materialize the problem's analytic stationary blocks.
    Analytic,
    /// Run 10x the iteration budget at tau/10 and use the final state;
    /// cached on disk under a hash of `key` when a cache directory is given.
    LongRun { cache_dir: Option<PathBuf> },
    None,
}

/// Builds the reference ensemble for W2 tracking. `key` identifies the run
/// configuration for the long-run cache.
pub fn build_reference(
    problem: &ProblemSpec,
    initial: &BlockState,
    config: &SchemeConfig,
    policy: &ReferencePolicy,
    key: &str,
) -> Result<Option<BlockState>> {
    match policy {
        ReferencePolicy::None => Ok(None),
        ReferencePolicy::Analytic => {
            let blocks = problem.analytic_blocks.as_ref().ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "problem {:?} has no analytic reference; use the long-run policy",
                    problem.label
                ))
            })?;
            Ok(Some(materialize_reference(
                blocks,
                initial.count(),
                rng::stream_seed(config.seed, rng::STREAM_REFERENCE),
            )?))
        }
        ReferencePolicy::LongRun { cache_dir } => {
            let cache_path = cache_dir.as_ref().map(|dir| {
                let mut hasher = DefaultHasher::new();
                key.hash(&mut hasher);
                problem.label.hash(&mut hasher);
                dir.join(format!("{:016x}.ref", hasher.finish()))
            });
            if let Some(path) = &cache_path {
                if path.exists() {
                    return Ok(Some(read_state(path)?));
                }
            }
            let mut long = config.clone();
            long.tau = config.tau / 10.0;
            long.iterations = config.iterations.saturating_mul(10).max(1);
            long.seed = rng::mix(config.seed, 0x5e1f);
            let opts =
                RunOptions { diagnostics: DiagnosticsConfig::minimal(), threads: None };
            let outcome = run_wpcg_with(problem, initial, &long, None, &opts, &mut |_| {})?;
            if let Some(path) = &cache_path {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                write_state(path, &outcome.final_state)?;
            }
            Ok(Some(outcome.final_state))
        }
    }
}

/// Deterministic ensemble for an analytic block description: point masses
/// replicate, 1-D Gaussians take the quantile grid at (i + 1/2)/B, and
/// higher-dimensional Gaussians are sampled from the seeded reference stream.
pub fn materialize_reference(
    blocks: &[AnalyticBlock],
    count: usize,
    seed: u64,
) -> Result<BlockState> {
    let mut stream = rng::stream(seed, rng::STREAM_REFERENCE);
    let ensembles: Vec<ParticleEnsemble> = blocks
        .iter()
        .map(|block| match block {
            AnalyticBlock::PointMass(point) => {
                ParticleEnsemble::from_rows(&vec![point.clone(); count])
            }
            AnalyticBlock::IsotropicGaussian { mean, std } if mean.len() == 1 => {
                let normal = Normal::new(mean[0], *std).expect("valid gaussian");
                let rows: Vec<Vec<f64>> = (0..count)
                    .map(|i| vec![normal.inverse_cdf((i as f64 + 0.5) / count as f64)])
                    .collect();
                ParticleEnsemble::from_rows(&rows)
            }
            AnalyticBlock::IsotropicGaussian { mean, std } => {
                let rows: Vec<Vec<f64>> = (0..count)
                    .map(|_| {
                        mean.iter()
                            .map(|mu| {
                                let z: f64 = StandardNormal.sample(&mut stream);
                                mu + std * z
                            })
                            .collect()
                    })
                    .collect();
                ParticleEnsemble::from_rows(&rows)
            }
        })
        .collect::<Result<_>>()?;
    BlockState::new(ensembles)
}

fn write_state(path: &Path, state: &BlockState) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", state.num_blocks(), state.count()));
    for j in 0..state.num_blocks() {
        let e = state.block(j);
        out.push_str(&format!("{}\n", e.dim()));
        for b in 0..e.count() {
            let row: Vec<String> =
                e.row(b).iter().map(|v| format!("{:.17e}", v)).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_state(path: &Path) -> Result<BlockState> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty reference cache".into()))?;
    let mut parts = header.split_whitespace();
    let parse = |s: Option<&str>| -> Result<usize> {
        s.and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidConfig("bad reference cache header".into()))
    };
    let m = parse(parts.next())?;
    let count = parse(parts.next())?;
    let mut blocks = Vec::with_capacity(m);
    for _ in 0..m {
        let d = parse(lines.next())?;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| Error::InvalidConfig("truncated reference cache".into()))?;
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(|v| v.parse::<f64>()).collect();
            let row =
                row.map_err(|_| Error::InvalidConfig("bad reference cache value".into()))?;
            if row.len() != d {
                return Err(Error::InvalidConfig("reference cache width mismatch".into()));
            }
            rows.push(row);
        }
        blocks.push(ParticleEnsemble::from_rows(&rows)?);
    }
    BlockState::new(blocks)
}
