//! WPCG outer loops: parallel, sequential, and random block updates over the
//! interchangeable subproblem solvers, with per-iteration diagnostics.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diagnostics::{first_variation_variance, foc_residual};
use crate::error::{Error, Result};
use crate::kde::KdeConfig;
use crate::model::{
    evaluate_objective, validate_problem, BlockState, ObjectiveConfig, ParticleEnsemble,
    ProblemSpec, Scheme, SchemeConfig, SolverKind,
};
use crate::ot;
use crate::rng;
use crate::steps::{euclidean_prox_step, fa_block_step, sde_block_step, TransportMapModel};

/// Update order of one outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub enum IterationPlan {
    /// Every block solved against the iteration-k snapshot.
    Parallel,
    /// Blocks 1..m in order, each seeing the prior updates.
    Sequential,
    /// M indices drawn i.i.d. uniform from the seeded scheme stream, each
    /// update seeing the freshest state.
    Random(Vec<usize>),
}

impl IterationPlan {
    pub fn for_iteration(scheme: &Scheme, m: usize, scheme_rng: &mut ChaCha8Rng) -> Self {
        match scheme {
            Scheme::Parallel => IterationPlan::Parallel,
            Scheme::Sequential => IterationPlan::Sequential,
            Scheme::Random { batch_m } => {
                IterationPlan::Random((0..*batch_m).map(|_| scheme_rng.gen_range(0..m)).collect())
            }
        }
    }
}

/// Random-scheme batch size M = ceil(2 m ln(m L)) (natural log; the covering
/// argument uses e^{-M/m}).
pub fn default_batch_m(m: usize, lipschitz: f64) -> Result<usize> {
    let ml = m as f64 * lipschitz;
    if !(ml > 1.0) {
        return Err(Error::BatchSizeDomain(ml));
    }
    Ok((2.0 * m as f64 * ml.ln()).ceil() as usize)
}

/// Per-iteration diagnostics. Fields not computed on a given iteration are
/// NaN (or empty when no reference was supplied).
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub k: usize,
    pub objective: f64,
    /// Squared blockwise W2 to the reference; empty without a reference.
    pub w2sq_blocks: Vec<f64>,
    /// Sum of the blockwise squared distances (product-measure W2^2).
    pub w2sq_total: f64,
    /// Marks W2 values computed on a subsample (above the OT cap).
    pub w2_approximate: bool,
    pub fv_var_blocks: Vec<f64>,
    pub foc_blocks: Vec<f64>,
    /// Milliseconds since the run started; the one non-reproducible field.
    pub wall_ms: u64,
}

/// Which diagnostics to compute, and how often. Heavy fields are evaluated
/// when k % every == 0 and on the final iteration.
#[derive(Clone, Debug)]
pub struct DiagnosticsConfig {
    pub kde: KdeConfig,
    pub every: usize,
    pub objective: bool,
    pub objective_matchings: usize,
    pub w2: bool,
    pub fv_variance: bool,
    pub foc: bool,
    pub ot_cap: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            kde: KdeConfig::silverman(),
            every: 1,
            objective: true,
            objective_matchings: 1,
            w2: true,
            fv_variance: true,
            foc: true,
            ot_cap: ot::DEFAULT_ASSIGNMENT_CAP,
        }
    }
}

impl DiagnosticsConfig {
    /// Only the cheap fields; useful for long calibration runs.
    pub fn minimal() -> Self {
        Self {
            every: usize::MAX,
            objective: false,
            fv_variance: false,
            foc: false,
            w2: false,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub diagnostics: DiagnosticsConfig,
    /// Caps the rayon worker count for this run (parallel scheme fan-out and
    /// inner data parallelism). None uses the global default.
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub final_state: BlockState,
}

/// Warnings about the configured step size against the known convergence
/// bounds. Never blocks execution.
pub fn step_size_guard(config: &SchemeConfig, problem: &ProblemSpec) -> Vec<String> {
    let mut warnings = Vec::new();
    if let Scheme::Parallel = config.scheme {
        let m = problem.m;
        if m == 1 {
            return warnings; // bound is +infinity by convention
        }
        match problem.potential.lipschitz {
            None => warnings.push(
                "parallel scheme: no Lipschitz constant registered, step-size bound unchecked"
                    .into(),
            ),
            Some(l) => {
                let bound = (m as f64 - 0.5) / (l * ((m - 1) as f64).powf(1.5));
                if config.tau >= bound {
                    warnings.push(format!(
                        "parallel scheme: tau = {} >= stability bound {:.6} (m = {m}, L = {l}); \
                         the parallel update may diverge",
                        config.tau, bound
                    ));
                }
            }
        }
    }
    warnings
}

/// Runs T outer iterations of the configured scheme and returns one record
/// per iteration plus the final state. Aborts with the offending iteration
/// index when any ensemble goes non-finite.
pub fn run_wpcg(
    problem: &ProblemSpec,
    initial: &BlockState,
    config: &SchemeConfig,
    reference: Option<&BlockState>,
) -> Result<RunOutcome> {
    run_wpcg_with(problem, initial, config, reference, &RunOptions::default(), &mut |_| {})
}

pub fn run_wpcg_with(
    problem: &ProblemSpec,
    initial: &BlockState,
    config: &SchemeConfig,
    reference: Option<&BlockState>,
    opts: &RunOptions,
    on_record: &mut (dyn FnMut(&RunRecord) + Send),
) -> Result<RunOutcome> {
    validate_problem(problem, config)?;
    crate::model::check_state(problem, initial)?;
    if let Some(r) = reference {
        crate::model::check_state(problem, r)?;
        if r.count() != initial.count() {
            return Err(Error::Shape(format!(
                "reference has B = {}, run has B = {}",
                r.count(),
                initial.count()
            )));
        }
    }
    if matches!(config.solver, SolverKind::EuclideanClosedForm) && initial.count() != 1 {
        return Err(Error::ClosedFormNeedsPointMass(initial.count()));
    }

    match opts.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(|| run_loop(problem, initial, config, reference, opts, on_record))
        }
        None => run_loop(problem, initial, config, reference, opts, on_record),
    }
}

struct BlockCtx {
    rng: ChaCha8Rng,
    warm: Option<TransportMapModel>,
}

fn run_loop(
    problem: &ProblemSpec,
    initial: &BlockState,
    config: &SchemeConfig,
    reference: Option<&BlockState>,
    opts: &RunOptions,
    on_record: &mut (dyn FnMut(&RunRecord) + Send),
) -> Result<RunOutcome> {
    let m = problem.m;
    let started = Instant::now();
    let mut scheme_rng = rng::stream(config.seed, rng::STREAM_SCHEME);
    let mut blocks: Vec<BlockCtx> = (0..m)
        .map(|j| BlockCtx { rng: rng::block_stream(config.seed, j), warm: None })
        .collect();

    let mut state = initial.clone().with_iteration(0);
    let mut records = Vec::with_capacity(config.iterations);

    for k in 0..config.iterations {
        let diag = &opts.diagnostics;
        let heavy = diag.every != usize::MAX
            && (k % diag.every.max(1) == 0 || k + 1 == config.iterations);
        let need_foc = diag.foc && heavy;

        // A diverging solve fails ensemble construction; report it as the
        // NaN abort with the offending iteration.
        let tag_nonfinite = |e: Error| match e {
            Error::NonFiniteEnsemble => Error::NonFinite { iteration: k },
            other => other,
        };

        // solve_ctx[j]: state snapshot the last solve of block j ran against.
        let mut solve_ctx: Vec<Option<BlockState>> = vec![None; m];
        let plan = IterationPlan::for_iteration(&config.scheme, m, &mut scheme_rng);
        match plan {
            IterationPlan::Parallel => {
                let snapshot = state.clone();
                let results: Vec<Result<ParticleEnsemble>> = blocks
                    .par_iter_mut()
                    .enumerate()
                    .map(|(j, ctx)| solve_block(problem, &snapshot, j, config, ctx))
                    .collect();
                for (j, res) in results.into_iter().enumerate() {
                    let ensemble = project(problem, config, j, res.map_err(tag_nonfinite)?);
                    state = state.with_block(j, ensemble);
                    if need_foc {
                        solve_ctx[j] = Some(snapshot.clone());
                    }
                }
            }
            IterationPlan::Sequential => {
                for j in 0..m {
                    if need_foc {
                        solve_ctx[j] = Some(state.clone());
                    }
                    let ensemble = solve_block(problem, &state, j, config, &mut blocks[j])
                        .map_err(tag_nonfinite)?;
                    state = state.with_block(j, project(problem, config, j, ensemble));
                }
            }
            IterationPlan::Random(ref indices) => {
                for &j in indices {
                    if need_foc {
                        solve_ctx[j] = Some(state.clone());
                    }
                    let ensemble = solve_block(problem, &state, j, config, &mut blocks[j])
                        .map_err(tag_nonfinite)?;
                    state = state.with_block(j, project(problem, config, j, ensemble));
                }
            }
        }
        state = state.with_iteration(k + 1);

        if !state.is_finite() {
            return Err(Error::NonFinite { iteration: k });
        }

        let record = make_record(problem, &state, config, reference, diag, k, heavy, &solve_ctx,
            started.elapsed().as_millis() as u64)?;
        on_record(&record);
        records.push(record);
    }

    Ok(RunOutcome { records, final_state: state })
}

fn project(
    problem: &ProblemSpec,
    config: &SchemeConfig,
    j: usize,
    ensemble: ParticleEnsemble,
) -> ParticleEnsemble {
    if !config.project_to_box {
        return ensemble;
    }
    let Some(boxes) = &problem.domain_box else { return ensemble };
    let bx = &boxes[j];
    let mut pts = ensemble.points().clone();
    for mut row in pts.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = v.clamp(bx.lower[c], bx.upper[c]);
        }
    }
    ParticleEnsemble::new(pts).expect("clamped ensemble stays valid")
}

fn solve_block(
    problem: &ProblemSpec,
    state: &BlockState,
    j: usize,
    config: &SchemeConfig,
    ctx: &mut BlockCtx,
) -> Result<ParticleEnsemble> {
    match &config.solver {
        SolverKind::Sde => {
            sde_block_step(problem, state, j, config.tau, config.n_grad, &mut ctx.rng)
        }
        SolverKind::Fa(fa) => {
            let (pushed, model, _loss) = fa_block_step(
                problem,
                state,
                j,
                config.tau,
                fa,
                ctx.warm.as_ref(),
                config.n_grad,
                &mut ctx.rng,
            )?;
            ctx.warm = Some(model);
            Ok(pushed)
        }
        SolverKind::EuclideanClosedForm => euclidean_prox_step(problem, state, j, config.tau),
    }
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    problem: &ProblemSpec,
    state: &BlockState,
    config: &SchemeConfig,
    reference: Option<&BlockState>,
    diag: &DiagnosticsConfig,
    k: usize,
    heavy: bool,
    solve_ctx: &[Option<BlockState>],
    wall_ms: u64,
) -> Result<RunRecord> {
    let m = problem.m;
    let mut record = RunRecord {
        k,
        objective: f64::NAN,
        w2sq_blocks: if reference.is_some() { vec![f64::NAN; m] } else { Vec::new() },
        w2sq_total: f64::NAN,
        w2_approximate: false,
        fv_var_blocks: vec![f64::NAN; m],
        foc_blocks: vec![f64::NAN; m],
        wall_ms,
    };
    if !heavy {
        return Ok(record);
    }

    if diag.objective {
        let cfg = ObjectiveConfig {
            kde: diag.kde,
            matchings: diag.objective_matchings,
            seed: rng::mix(rng::stream_seed(config.seed, rng::STREAM_DIAGNOSTICS), k as u64),
        };
        record.objective = evaluate_objective(problem, state, &cfg)?;
    }

    if diag.w2 {
        if let Some(reference) = reference {
            let sub_seed = rng::mix(rng::stream_seed(config.seed, rng::STREAM_OT_SUBSAMPLE), k as u64);
            let mut total = 0.0;
            for j in 0..m {
                let (d, approx) =
                    ot::w2_with_cap(state.block(j), reference.block(j), diag.ot_cap, sub_seed)?;
                record.w2sq_blocks[j] = d * d;
                record.w2_approximate |= approx;
                total += d * d;
            }
            record.w2sq_total = total;
        }
    }

    if diag.fv_variance {
        for j in 0..m {
            record.fv_var_blocks[j] = first_variation_variance(problem, state, j, &diag.kde)?;
        }
    }

    if diag.foc {
        for j in 0..m {
            if let Some(prev) = &solve_ctx[j] {
                record.foc_blocks[j] =
                    foc_residual(problem, prev, state, j, config.tau, &diag.kde)?.norm;
            }
        }
    }

    Ok(record)
}
