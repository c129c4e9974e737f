//! Function-approximation solver: fit a residual transport map T so that the
//! pushforward of the current ensemble minimizes the proximal objective
//!
//!   (1/B) sum_b V_hat_j(T(X_b)) + entropy(T) +
//!   (1/B^2) sum_{b,b'} W_j(T(X_b), T(X_b')) + (1/(2 B tau)) sum_b ||T(X_b) - X_b||^2,
//!
//! where the entropy term is -(c/B) sum_b log|det grad T(X_b)| for negative
//! self-entropy and (c/B) sum_b [rho_kde(X_b) |det grad T(X_b)|^{-1}]^{n-1}
//! for the power-n case (the KDE is built once from the input ensemble and
//! frozen for the whole inner solve).

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kde::{Kde, KdeConfig};
use crate::model::{BlockState, EntropyKind, InteractionKernel, ParticleEnsemble, ProblemSpec};
use crate::steps::map::{Lu, TransportMapModel};
use crate::steps::{interaction_energy, interaction_forces, MarginalPotential};

/// Inner-solver settings for the function-approximation step.
#[derive(Clone, Debug)]
pub struct FaConfig {
    pub hidden_widths: Vec<usize>,
    pub inner_iterations: usize,
    /// Adam learning rate.
    pub inner_step: f64,
    pub kde: KdeConfig,
    /// Fresh random map every outer step instead of warm-starting from the
    /// previous map reset toward identity.
    pub reinit_each_step: bool,
}

impl Default for FaConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![64, 64],
            inner_iterations: 300,
            inner_step: 1e-3,
            kde: KdeConfig::silverman(),
            reinit_each_step: false,
        }
    }
}

const MAX_RETRIES: usize = 5;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Particle chunk size for deterministic parallel reduction.
const CHUNK: usize = 64;

enum EntropyTerm {
    None,
    /// -(c/B) sum log|det grad T|.
    LogDet { coeff: f64 },
    /// (c/B) sum [r_b / |det grad T|]^{n-1} with frozen KDE values r_b.
    Power { coeff: f64, exponent: u32, rho: Vec<f64> },
}

/// Solves the block-j subproblem by fitting a transport map; returns the
/// pushforward ensemble, the fitted map, and the final inner loss.
///
/// A non-injective map (|det grad T| <= 0 at any particle while an entropy
/// term is active) rejects the inner solve; the learning rate is halved and
/// the solve restarted, up to 5 retries.
pub fn fa_block_step(
    problem: &ProblemSpec,
    state: &BlockState,
    j: usize,
    tau: f64,
    fa: &FaConfig,
    warm_start: Option<&TransportMapModel>,
    n_grad: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ParticleEnsemble, TransportMapModel, f64)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let ensemble = state.block(j);
    let d = ensemble.dim();
    let b = ensemble.count();

    let entropy_spec = problem.entropies[j];
    if !entropy_spec.is_none() && d > crate::steps::map::MAX_LOGDET_DIM {
        return Err(Error::Shape(format!(
            "entropy terms need the Jacobian log-determinant, capped at d <= {}, got {d}",
            crate::steps::map::MAX_LOGDET_DIM
        )));
    }
    let entropy = match entropy_spec.kind {
        EntropyKind::None => EntropyTerm::None,
        EntropyKind::NegSelfEntropy => EntropyTerm::LogDet { coeff: entropy_spec.coefficient },
        EntropyKind::Power { exponent } => {
            let kde = Kde::fit(ensemble, &fa.kde)?;
            let rho: Vec<f64> = (0..b)
                .map(|bi| kde.density(ensemble.row(bi).as_slice().unwrap()))
                .collect();
            EntropyTerm::Power { coeff: entropy_spec.coefficient, exponent, rho }
        }
    };

    let marginal = MarginalPotential::new(problem, state, j, n_grad, rng);
    let init = match warm_start {
        Some(model) if !fa.reinit_each_step => model.reset_to_identity(),
        _ => TransportMapModel::identity_init(d, &fa.hidden_widths, rng)?,
    };
    let kernel = problem.interactions[j].kernel();

    let mut step = fa.inner_step;
    for _attempt in 0..=MAX_RETRIES {
        match run_inner(
            &init, ensemble, &marginal, kernel, &entropy, tau, fa.inner_iterations, step,
        ) {
            Ok((model, loss)) => {
                let pushed = pushforward(&model, ensemble)?;
                return Ok((pushed, model, loss));
            }
            Err(Error::SingularJacobian(_)) => {
                step *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::InnerSolverFailed(MAX_RETRIES))
}

fn pushforward(model: &TransportMapModel, ensemble: &ParticleEnsemble) -> Result<ParticleEnsemble> {
    let b = ensemble.count();
    let d = ensemble.dim();
    let mut out = Array2::zeros((b, d));
    for bi in 0..b {
        let y = model.forward(ensemble.row(bi).as_slice().unwrap())?;
        for c in 0..d {
            out[(bi, c)] = y[c];
        }
    }
    ParticleEnsemble::new(out)
}

fn run_inner(
    init: &TransportMapModel,
    ensemble: &ParticleEnsemble,
    marginal: &MarginalPotential<'_>,
    kernel: Option<&InteractionKernel>,
    entropy: &EntropyTerm,
    tau: f64,
    iterations: usize,
    lr: f64,
) -> Result<(TransportMapModel, f64)> {
    let mut model = init.clone();
    let np = model.num_params();
    let mut grad = vec![0.0; np];
    let mut m1 = vec![0.0; np];
    let mut m2 = vec![0.0; np];
    let mut loss = loss_and_grad(&model, ensemble, marginal, kernel, entropy, tau, &mut grad)?;
    for t in 1..=iterations {
        let b1t = 1.0 - ADAM_BETA1.powi(t as i32);
        let b2t = 1.0 - ADAM_BETA2.powi(t as i32);
        {
            let params = model.params_mut();
            for p in 0..np {
                m1[p] = ADAM_BETA1 * m1[p] + (1.0 - ADAM_BETA1) * grad[p];
                m2[p] = ADAM_BETA2 * m2[p] + (1.0 - ADAM_BETA2) * grad[p] * grad[p];
                let mhat = m1[p] / b1t;
                let vhat = m2[p] / b2t;
                params[p] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        loss = loss_and_grad(&model, ensemble, marginal, kernel, entropy, tau, &mut grad)?;
    }
    Ok((model, loss))
}

/// Per-particle pieces accumulated in fixed-size chunks so the reduction
/// order (hence the result) is independent of the thread count.
struct ChunkOut {
    loss: f64,
    grad: Vec<f64>,
}

/// Per-chunk scratch: forward trace plus all backward buffers, allocated
/// once per chunk and reused across its particles.
struct Workspace {
    trace: crate::steps::map::ForwardTrace,
    t_x: Vec<f64>,
    vbar: Vec<f64>,
    buf: Vec<f64>,
    jac: Array2<f64>,
    s: Array2<f64>,
    /// zbars[l]: adjoint of z_l (len sizes[l+1]).
    zbars: Vec<Vec<f64>>,
    /// abars[l]: adjoint of inputs[l] (len sizes[l]).
    abars: Vec<Vec<f64>>,
    /// mbars[l]: adjoint scratch for M[l].
    mbars: Vec<Array2<f64>>,
    /// gbars[l]: adjoint of G_in[l].
    gbars: Vec<Array2<f64>>,
}

impl Workspace {
    fn new(model: &TransportMapModel, full_dim: usize, with_jacobian: bool) -> Self {
        let sizes = model.layer_sizes();
        let nl = model.num_layers();
        let d = model.dim();
        Self {
            trace: crate::steps::map::ForwardTrace::new(model, with_jacobian),
            t_x: vec![0.0; d],
            vbar: vec![0.0; d],
            buf: vec![0.0; full_dim],
            jac: Array2::zeros((d, d)),
            s: Array2::zeros((d, d)),
            zbars: (0..nl).map(|l| vec![0.0; sizes[l + 1]]).collect(),
            abars: (0..nl).map(|l| vec![0.0; sizes[l]]).collect(),
            mbars: (0..nl).map(|l| Array2::zeros((sizes[l + 1], d))).collect(),
            gbars: (0..nl).map(|l| Array2::zeros((sizes[l], d))).collect(),
        }
    }
}

fn loss_and_grad(
    model: &TransportMapModel,
    ensemble: &ParticleEnsemble,
    marginal: &MarginalPotential<'_>,
    kernel: Option<&InteractionKernel>,
    entropy: &EntropyTerm,
    tau: f64,
    grad_out: &mut [f64],
) -> Result<f64> {
    let b = ensemble.count();
    let d = ensemble.dim();
    let bf = b as f64;
    let with_jacobian = !matches!(entropy, EntropyTerm::None);

    // The interaction term couples particles, so it needs the full pushed
    // ensemble before the gradient pass; a cheap value-only forward.
    let (inter_energy, inter_forces) = match kernel {
        Some(k) => {
            let rows: Vec<Vec<f64>> = (0..b.div_ceil(CHUNK))
                .into_par_iter()
                .flat_map_iter(|chunk| {
                    let lo = chunk * CHUNK;
                    let hi = (lo + CHUNK).min(b);
                    let mut trace = crate::steps::map::ForwardTrace::new(model, false);
                    let mut out = Vec::with_capacity(hi - lo);
                    for bi in lo..hi {
                        let x = ensemble.row(bi);
                        let x = x.as_slice().unwrap();
                        model.forward_trace_into(x, &mut trace);
                        out.push(trace.output(x));
                    }
                    out
                })
                .collect();
            let mut pushed = Array2::zeros((b, d));
            for (bi, row) in rows.into_iter().enumerate() {
                for c in 0..d {
                    pushed[(bi, c)] = row[c];
                }
            }
            (interaction_energy(k, &pushed), Some(interaction_forces(k, &pushed)))
        }
        None => (0.0, None),
    };

    let chunks: Vec<Result<ChunkOut>> = (0..b.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(b);
            let mut out = ChunkOut { loss: 0.0, grad: vec![0.0; model.num_params()] };
            let mut ws = Workspace::new(model, marginal.total_dim(), with_jacobian);
            for bi in lo..hi {
                let x = ensemble.row(bi);
                let x = x.as_slice().unwrap();
                model.forward_trace_into(x, &mut ws.trace);
                ws.trace.output_into(x, &mut ws.t_x);

                // Potential term.
                out.loss += marginal.value(&ws.t_x, bi, &mut ws.buf) / bf;
                let g = marginal.gradient(&ws.t_x, bi, &mut ws.buf);
                for c in 0..d {
                    ws.vbar[c] = g[c] / bf;
                }
                // Proximity term.
                let mut prox = 0.0;
                for c in 0..d {
                    let diff = ws.t_x[c] - x[c];
                    prox += diff * diff;
                    ws.vbar[c] += diff / (bf * tau);
                }
                out.loss += prox / (2.0 * bf * tau);
                // Interaction term contributes (1/B) force_b to dLoss/dT_b.
                if let Some(f) = &inter_forces {
                    for c in 0..d {
                        ws.vbar[c] += f[(bi, c)] / bf;
                    }
                }

                // Entropy term via the Jacobian log-determinant.
                let mut seed = 0.0;
                if with_jacobian {
                    ws.trace.jacobian_into(&mut ws.jac);
                    let lu = Lu::factor(&ws.jac)?;
                    let (logdet, sign) = lu.log_abs_det();
                    if sign <= 0.0 || logdet < -690.0 {
                        return Err(Error::SingularJacobian(sign * logdet.exp()));
                    }
                    match entropy {
                        EntropyTerm::None => {}
                        EntropyTerm::LogDet { coeff } => {
                            out.loss -= coeff * logdet / bf;
                            seed = -coeff / bf;
                        }
                        EntropyTerm::Power { coeff, exponent, rho } => {
                            let n1 = (*exponent - 1) as f64;
                            let term = (rho[bi] / logdet.exp()).powf(n1);
                            out.loss += coeff * term / bf;
                            seed = -n1 * coeff * term / bf;
                        }
                    }
                    lu.inverse_transpose_into(&mut ws.s);
                    backprop(model, &mut ws, Some(seed), &mut out.grad);
                } else {
                    backprop(model, &mut ws, None, &mut out.grad);
                }
            }
            Ok(out)
        })
        .collect();

    for g in grad_out.iter_mut() {
        *g = 0.0;
    }
    let mut loss = inter_energy;
    for chunk in chunks {
        let chunk = chunk?;
        loss += chunk.loss;
        for (o, g) in grad_out.iter_mut().zip(&chunk.grad) {
            *o += g;
        }
    }
    Ok(loss)
}

/// Reverse pass through T(x) = x + g(x) carrying both the value adjoint
/// (ws.vbar = dLoss/dT) and, when `jac_seed` is set, the Jacobian adjoint
/// dLoss/d grad T = seed * J^{-T} (already stored in ws.s).
fn backprop(
    model: &TransportMapModel,
    ws: &mut Workspace,
    jac_seed: Option<f64>,
    grad: &mut [f64],
) {
    let nl = model.num_layers();
    let sizes = model.layer_sizes();
    let d = sizes[0];
    let trace = &ws.trace;

    // Top layer: g = z_{nl-1}, so zbar = vbar.
    let top = nl - 1;
    ws.zbars[top].copy_from_slice(&ws.vbar);
    if let Some(seed) = jac_seed {
        // W_{top} adjoint += seed S G_in[top]^T; gbars[top] = seed W^T S.
        let (w_off, b_off) = model.offsets_of(top);
        let (fan_in, fan_out) = (sizes[top], sizes[top + 1]);
        let w = &model.params()[w_off..b_off];
        let g_in = &trace.g_ins[top];
        for r in 0..fan_out {
            for c in 0..fan_in {
                let mut acc = 0.0;
                for col in 0..d {
                    acc += ws.s[(r, col)] * g_in[(c, col)];
                }
                grad[w_off + r * fan_in + c] += seed * acc;
            }
        }
        for c in 0..fan_in {
            for col in 0..d {
                let mut acc = 0.0;
                for r in 0..fan_out {
                    acc += w[r * fan_in + c] * ws.s[(r, col)];
                }
                ws.gbars[top][(c, col)] = seed * acc;
            }
        }
    }
    value_pass(model, ws, top, grad);

    for l in (0..nl - 1).rev() {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        // zbar from the value stream above.
        for r in 0..fan_out {
            let t = ws.trace.zs[l][r].tanh();
            ws.zbars[l][r] = (1.0 - t * t) * ws.abars[l + 1][r];
        }
        if jac_seed.is_some() {
            // mbars[l] = D_l gbars[l+1]; the activation curvature feeds the
            // value stream; gbars[l] = W_l^T mbars[l].
            let (w_off, b_off) = model.offsets_of(l);
            for r in 0..fan_out {
                let t = ws.trace.zs[l][r].tanh();
                let dp = 1.0 - t * t;
                let ddp = -2.0 * t * dp;
                let mut rowdot = 0.0;
                for col in 0..d {
                    let gb = ws.gbars[l + 1][(r, col)];
                    ws.mbars[l][(r, col)] = dp * gb;
                    rowdot += ws.trace.ms[l][(r, col)] * gb;
                }
                ws.zbars[l][r] += ddp * rowdot;
            }
            let w = &model.params()[w_off..b_off];
            for r in 0..fan_out {
                for c in 0..fan_in {
                    let mut acc = 0.0;
                    for col in 0..d {
                        acc += ws.mbars[l][(r, col)] * ws.trace.g_ins[l][(c, col)];
                    }
                    grad[w_off + r * fan_in + c] += acc;
                }
            }
            if l > 0 {
                for c in 0..fan_in {
                    for col in 0..d {
                        let mut acc = 0.0;
                        for r in 0..fan_out {
                            acc += w[r * fan_in + c] * ws.mbars[l][(r, col)];
                        }
                        ws.gbars[l][(c, col)] = acc;
                    }
                }
            }
        }
        value_pass(model, ws, l, grad);
    }
}

/// W_l, b_l adjoints from zbars[l]; fills abars[l] for the layer below.
fn value_pass(model: &TransportMapModel, ws: &mut Workspace, l: usize, grad: &mut [f64]) {
    let sizes = model.layer_sizes();
    let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
    let (w_off, b_off) = model.offsets_of(l);
    for r in 0..fan_out {
        let zb = ws.zbars[l][r];
        let a = &ws.trace.inputs[l];
        for c in 0..fan_in {
            grad[w_off + r * fan_in + c] += zb * a[c];
        }
        grad[b_off + r] += zb;
    }
    if l == 0 {
        return;
    }
    let w = &model.params()[w_off..b_off];
    for c in 0..fan_in {
        let mut acc = 0.0;
        for r in 0..fan_out {
            acc += w[r * fan_in + c] * ws.zbars[l][r];
        }
        ws.abars[l][c] = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EntropySpec, InteractionSpec, PotentialSpec};
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    fn single_block(potential: PotentialSpec, entropy: EntropySpec) -> ProblemSpec {
        ProblemSpec::new(vec![1], potential, vec![entropy], vec![InteractionSpec::none()]).unwrap()
    }

    fn gaussian_rows(n: usize, scale: f64, stream: &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(stream);
                vec![scale * z]
            })
            .collect()
    }

    /// Finite-difference check of the full parameter gradient, all loss
    /// pieces active. This is the oracle for the hand-written backprop.
    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let value = Arc::new(|x: &[f64], y: &[f64]| {
            let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            0.3 * sq.atan()
        });
        let grad1 = Arc::new(|x: &[f64], y: &[f64]| {
            let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
            let sq: f64 = diff.iter().map(|v| v * v).sum();
            diff.iter().map(|v| 0.3 * 2.0 * v / (1.0 + sq * sq)).collect::<Vec<_>>()
        });
        let grad2 = {
            let grad1 = grad1.clone();
            Arc::new(move |x: &[f64], y: &[f64]| {
                grad1(x, y).iter().map(|v| -v).collect::<Vec<_>>()
            })
        };
        let kernel =
            InteractionKernel { value, grad1, grad2, even_difference: true, radial: None };
        for (entropy, label) in [
            (EntropySpec::neg_self_entropy(), "logdet"),
            (EntropySpec::power(3, 0.7).unwrap(), "power"),
            (EntropySpec::none(), "none"),
        ] {
            let problem = ProblemSpec::new(
                vec![2],
                PotentialSpec::new(
                    |x| 0.5 * (x[0] * x[0] + 2.0 * x[1] * x[1]) + 0.3 * x[0] * x[1],
                    |_, x| vec![x[0] + 0.3 * x[1], 2.0 * x[1] + 0.3 * x[0]],
                ),
                vec![entropy],
                vec![InteractionSpec::with_kernel(kernel.clone())],
            )
            .unwrap();
            let mut stream = rng::stream(3, 9);
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|_| {
                    let a: f64 = StandardNormal.sample(&mut stream);
                    let b: f64 = StandardNormal.sample(&mut stream);
                    vec![a, 0.5 * b + 0.5]
                })
                .collect();
            let ensemble = ParticleEnsemble::from_rows(&rows).unwrap();
            let state = BlockState::new(vec![ensemble.clone()]).unwrap();
            let marginal = MarginalPotential::new(&problem, &state, 0, 1, &mut stream);
            let mut model = TransportMapModel::identity_init(2, &[5, 4], &mut stream).unwrap();
            // Perturb every parameter so nothing is at a symmetric point.
            for p in model.params_mut().iter_mut() {
                let z: f64 = StandardNormal.sample(&mut stream);
                *p += 0.05 * z;
            }
            let spec = problem.entropies[0];
            let term = match spec.kind {
                EntropyKind::None => EntropyTerm::None,
                EntropyKind::NegSelfEntropy => EntropyTerm::LogDet { coeff: spec.coefficient },
                EntropyKind::Power { exponent } => {
                    let kde = Kde::fit(&ensemble, &KdeConfig::fixed(0.8)).unwrap();
                    let rho = (0..6)
                        .map(|b| kde.density(ensemble.row(b).as_slice().unwrap()))
                        .collect();
                    EntropyTerm::Power { coeff: spec.coefficient, exponent, rho }
                }
            };
            let tau = 0.4;
            let np = model.num_params();
            let mut grad = vec![0.0; np];
            let kernel_ref = problem.interactions[0].kernel();
            let loss =
                loss_and_grad(&model, &ensemble, &marginal, kernel_ref, &term, tau, &mut grad)
                    .unwrap();
            assert!(loss.is_finite());
            let h = 1e-6;
            let mut worst = 0.0f64;
            for p in 0..np {
                let orig = model.params()[p];
                model.params_mut()[p] = orig + h;
                let mut scratch = vec![0.0; np];
                let fp = loss_and_grad(
                    &model, &ensemble, &marginal, kernel_ref, &term, tau, &mut scratch,
                )
                .unwrap();
                model.params_mut()[p] = orig - h;
                let fm = loss_and_grad(
                    &model, &ensemble, &marginal, kernel_ref, &term, tau, &mut scratch,
                )
                .unwrap();
                model.params_mut()[p] = orig;
                let fd = (fp - fm) / (2.0 * h);
                worst = worst.max((grad[p] - fd).abs() / (1.0 + fd.abs()));
            }
            assert!(worst < 5e-6, "{label}: worst relative gradient error {worst}");
        }
    }

    #[test]
    fn proximity_only_objective_keeps_the_identity() {
        let problem = single_block(PotentialSpec::zero(&[1]), EntropySpec::none());
        let mut stream = rng::stream(11, 2);
        let rows = gaussian_rows(64, 1.0, &mut stream);
        let state = BlockState::new(vec![ParticleEnsemble::from_rows(&rows).unwrap()]).unwrap();
        let fa = FaConfig { inner_iterations: 50, ..Default::default() };
        let (pushed, _, loss) =
            fa_block_step(&problem, &state, 0, 0.5, &fa, None, 1, &mut stream).unwrap();
        for (a, b) in pushed.points().iter().zip(state.block(0).points().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-3);
        }
        assert!(loss.abs() < 1e-6, "proximity-only loss {loss}");
    }

    #[test]
    fn quadratic_point_mass_reaches_exact_prox() {
        // V = x^2/2, B = 1, X = {4}, tau = 1: prox = x/(1+tau) applied to 4 -> 2.
        let problem = single_block(
            PotentialSpec::new(|x| 0.5 * x[0] * x[0], |_, x| vec![x[0]]),
            EntropySpec::none(),
        );
        let state = BlockState::new(vec![ParticleEnsemble::point(&[4.0]).unwrap()]).unwrap();
        let mut stream = rng::stream(8, 1);
        let fa = FaConfig {
            hidden_widths: vec![16],
            inner_iterations: 4000,
            inner_step: 6e-3,
            ..Default::default()
        };
        let (pushed, model, _) =
            fa_block_step(&problem, &state, 0, 1.0, &fa, None, 1, &mut stream).unwrap();
        assert_abs_diff_eq!(pushed.points()[(0, 0)], 2.0, epsilon = 1e-2);
        assert_abs_diff_eq!(model.forward(&[4.0]).unwrap()[0], 2.0, epsilon = 1e-2);
    }

    #[test]
    fn gaussian_fixed_point_variance_is_unbiased() {
        // rho* = N(0,1); repeated FA steps from a wide start should settle at
        // unit variance regardless of the coarse step size.
        let problem = single_block(
            PotentialSpec::new(|x| 0.5 * x[0] * x[0], |_, x| vec![x[0]]),
            EntropySpec::neg_self_entropy(),
        );
        let mut stream = rng::stream(21, 3);
        let rows = gaussian_rows(800, 3.0, &mut stream);
        let mut state = BlockState::new(vec![ParticleEnsemble::from_rows(&rows).unwrap()]).unwrap();
        let fa = FaConfig {
            hidden_widths: vec![16, 16],
            inner_iterations: 300,
            inner_step: 5e-3,
            ..Default::default()
        };
        let mut warm: Option<TransportMapModel> = None;
        for _ in 0..25 {
            let (pushed, model, _) =
                fa_block_step(&problem, &state, 0, 0.5, &fa, warm.as_ref(), 1, &mut stream)
                    .unwrap();
            state = state.with_block(0, pushed);
            warm = Some(model);
        }
        let var = state.block(0).variance()[0];
        assert!((var - 1.0).abs() < 0.1, "fixed-point variance {var}");
    }
}
