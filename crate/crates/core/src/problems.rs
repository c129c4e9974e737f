//! Built-in problem factories: Bayesian-logistic MFVI, the three-species
//! cross-interaction system, the quadratic product family, and a separable
//! Gaussian oracle with known stationary blocks.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{
    AnalyticBlock, EntropySpec, InteractionKernel, InteractionSpec, PotentialSpec, ProblemSpec,
    QuadraticProductForm, RadialForm,
};
use crate::rng;

/// Binary-outcome design matrix for Bayesian logistic regression with an
/// isotropic normal prior N(0, prior_variance * I).
#[derive(Clone, Debug)]
pub struct LogisticDataset {
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
    pub prior_variance: f64,
}

impl LogisticDataset {
    pub fn new(features: Array2<f64>, labels: Vec<f64>, prior_variance: f64) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::Dataset("empty design matrix".into()));
        }
        if labels.len() != features.nrows() {
            return Err(Error::Dataset(format!(
                "{} labels for {} rows",
                labels.len(),
                features.nrows()
            )));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Dataset("labels must be 0 or 1".into()));
        }
        if !(prior_variance > 0.0) {
            return Err(Error::Dataset("prior variance must be positive".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite feature value".into()));
        }
        Ok(Self { features, labels, prior_variance })
    }

    /// Headered CSV: feature columns first, final column the binary label.
    pub fn from_csv_path(path: &Path, prior_variance: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text, prior_variance)
    }

    pub fn from_csv_str(text: &str, prior_variance: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let width = reader
            .headers()
            .map_err(|e| Error::Dataset(format!("bad header: {e}")))?
            .len();
        if width < 2 {
            return Err(Error::Dataset(
                "need at least one feature column and a label column".into(),
            ));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for (ln, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Dataset(format!("row {}: {e}", ln + 2)))?;
            if record.len() != width {
                return Err(Error::Dataset(format!(
                    "row {}: {} fields, header has {width}",
                    ln + 2,
                    record.len()
                )));
            }
            let mut row = Vec::with_capacity(width - 1);
            for (c, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Dataset(format!("row {}: bad number {field:?}", ln + 2)))?;
                if c + 1 == width {
                    labels.push(v);
                } else {
                    row.push(v);
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Dataset("no data rows".into()));
        }
        let p = rows[0].len();
        let mut features = Array2::zeros((rows.len(), p));
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                features[(i, j)] = *v;
            }
        }
        Self::new(features, labels, prior_variance)
    }

    /// The synthetic generating process of the built-in replication study:
    /// X_i ~ N(0, I_p), Bernoulli labels through the logistic link.
    pub fn synthetic(n: usize, theta_star: &[f64], prior_variance: f64, seed: u64) -> Result<Self> {
        let p = theta_star.len();
        let mut stream = rng::stream(seed, rng::STREAM_DATA);
        let mut features = Array2::zeros((n, p));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let mut z = 0.0;
            for j in 0..p {
                let x: f64 = StandardNormal.sample(&mut stream);
                features[(i, j)] = x;
                z += x * theta_star[j];
            }
            let prob = 1.0 / (1.0 + (-z).exp());
            let y: f64 = if stream.gen::<f64>() < prob { 1.0 } else { 0.0 };
            labels.push(y);
        }
        Self::new(features, labels, prior_variance)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }
}

/// The replication configuration of the built-in study: p = 4, prior
/// N(0, 4 I), theta* = (-1, 1, 0.3, -0.3), n = 100.
pub fn synthetic_mfvi_dataset(seed: u64) -> LogisticDataset {
    LogisticDataset::synthetic(100, &[-1.0, 1.0, 0.3, -0.3], 4.0, seed)
        .expect("built-in synthetic dataset")
}

/// MFVI over scalar blocks (m = p): V is the negative log-posterior of
/// logistic regression, every block carries negative self-entropy.
pub fn mfvi_problem(data: &LogisticDataset) -> (ProblemSpec, Vec<String>) {
    let mut warnings = Vec::new();
    let p = data.p();
    for j in 0..p {
        if data.features.column(j).iter().all(|v| *v == 0.0) {
            warnings.push(format!("feature column {j} is identically zero"));
        }
    }

    // Assumption-B bound from the logistic Hessian: sigma' <= 1/4, so the
    // cross-gradient modulus is at most (1/4) max_j sum_i |x_ij| ||x_{i,-j}||.
    let mut lipschitz: f64 = 0.0;
    for j in 0..p {
        let mut acc = 0.0;
        for i in 0..data.n() {
            let xij = data.features[(i, j)].abs();
            let rest: f64 = (0..p)
                .filter(|&c| c != j)
                .map(|c| data.features[(i, c)] * data.features[(i, c)])
                .sum::<f64>()
                .sqrt();
            acc += xij * rest;
        }
        lipschitz = lipschitz.max(0.25 * acc);
    }

    let value_data = Arc::new(data.clone());
    let grad_data = value_data.clone();
    let mut potential = PotentialSpec::new(
        move |theta| {
            let d = &*value_data;
            let mut acc = 0.0;
            for i in 0..d.n() {
                let z: f64 = (0..d.p()).map(|j| d.features[(i, j)] * theta[j]).sum();
                // log(1 + e^z) - y z, evaluated stably.
                let log1p = if z > 30.0 { z } else { (1.0 + z.exp()).ln() };
                acc += log1p - d.labels[i] * z;
            }
            let prior: f64 = theta.iter().map(|t| t * t).sum::<f64>() / (2.0 * d.prior_variance);
            acc + prior
        },
        move |j, theta| {
            let d = &*grad_data;
            let mut g = 0.0;
            for i in 0..d.n() {
                let z: f64 = (0..d.p()).map(|c| d.features[(i, c)] * theta[c]).sum();
                let sig = 1.0 / (1.0 + (-z).exp());
                g += d.features[(i, j)] * (sig - d.labels[i]);
            }
            vec![g + theta[j] / d.prior_variance]
        },
    );
    if lipschitz > 0.0 {
        potential = potential.with_lipschitz(lipschitz);
    }

    let mut spec = ProblemSpec::new(
        vec![1; p],
        potential,
        vec![EntropySpec::neg_self_entropy(); p],
        vec![InteractionSpec::none(); p],
    )
    .expect("mfvi layout");
    spec.label = format!("mfvi(n={},p={},pv={})", data.n(), data.p(), data.prior_variance);
    (spec, warnings)
}

/// Sign convention for the species self-interaction kernel. The source
/// formulas disagree; both are exposed and MainText is the default:
/// MainText  W_j = -(Q_j^2/4) arctan ||x - x'||^2,
/// AppendixE W_j = +(Q_j^2/2) arctan ||x - x'||^2.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum SpeciesKernelForm {
    #[default]
    MainText,
    AppendixE,
}

/// Three-species cross-interaction system in R^2.
#[derive(Clone, Debug)]
pub struct SpeciesSystem {
    pub charges: [f64; 3],
    pub stiffness: [f64; 3],
    pub centers: [[f64; 2]; 3],
    pub alpha: f64,
    pub beta: f64,
    pub super_quartic: bool,
    pub kernel_form: SpeciesKernelForm,
}

impl SpeciesSystem {
    pub fn new(alpha: f64, beta: f64, super_quartic: bool) -> Self {
        Self {
            charges: [1.0, -1.0, 0.5],
            stiffness: [6.0, 7.0, 3.0],
            centers: [[3.0, 0.0], [-3.0, -3.0], [3.0, 3.0]],
            alpha,
            beta,
            super_quartic,
            kernel_form: SpeciesKernelForm::default(),
        }
    }
}

/// Gradient of arctan ||y||^2: 2 y / (1 + ||y||^4).
fn arctan_sq_grad(y0: f64, y1: f64) -> [f64; 2] {
    let s = y0 * y0 + y1 * y1;
    let denom = 1.0 + s * s;
    [2.0 * y0 / denom, 2.0 * y1 / denom]
}

/// m = 3 problem with V = sum_j (alpha r_j / 2)||x_j - theta_j||^2
/// - sum_{i<j} (Q_i Q_j / 2) arctan ||x_i - x_j||^2 (plus ||x||^4/4 per block
/// when super_quartic), power-2 entropy scaled by beta (negative self-entropy
/// in the super-quartic variant), and the arctan self-interaction kernels.
pub fn species_problem(sys: &SpeciesSystem) -> (ProblemSpec, Vec<String>) {
    let mut warnings = Vec::new();
    if sys.alpha < 1.0 {
        warnings.push(format!(
            "alpha = {} < 1: the convexity margin of the species system is not guaranteed",
            sys.alpha
        ));
    }
    let charges = sys.charges;
    let stiffness = sys.stiffness;
    let centers = sys.centers;
    let alpha = sys.alpha;
    let quartic = sys.super_quartic;

    let value = move |x: &[f64]| {
        let mut acc = 0.0;
        for j in 0..3 {
            let dx = x[2 * j] - centers[j][0];
            let dy = x[2 * j + 1] - centers[j][1];
            acc += 0.5 * alpha * stiffness[j] * (dx * dx + dy * dy);
            if quartic {
                let sq = x[2 * j] * x[2 * j] + x[2 * j + 1] * x[2 * j + 1];
                acc += 0.25 * sq * sq;
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                let dx = x[2 * i] - x[2 * j];
                let dy = x[2 * i + 1] - x[2 * j + 1];
                acc -= 0.5 * charges[i] * charges[j] * (dx * dx + dy * dy).atan();
            }
        }
        acc
    };
    let gradient = move |j: usize, x: &[f64]| {
        let mut g = [
            alpha * stiffness[j] * (x[2 * j] - centers[j][0]),
            alpha * stiffness[j] * (x[2 * j + 1] - centers[j][1]),
        ];
        if quartic {
            let sq = x[2 * j] * x[2 * j] + x[2 * j + 1] * x[2 * j + 1];
            g[0] += sq * x[2 * j];
            g[1] += sq * x[2 * j + 1];
        }
        for i in 0..3 {
            if i == j {
                continue;
            }
            let u = arctan_sq_grad(x[2 * j] - x[2 * i], x[2 * j + 1] - x[2 * i + 1]);
            g[0] -= 0.5 * charges[i] * charges[j] * u[0];
            g[1] -= 0.5 * charges[i] * charges[j] * u[1];
        }
        vec![g[0], g[1]]
    };

    // ||J of 2y/(1+||y||^4)|| <= 1, so the cross block (i, j) of the Hessian
    // is bounded by |Q_i Q_j| and the Assumption-B constant follows.
    let lipschitz = (0..3)
        .map(|j| {
            let rest: f64 = (0..3)
                .filter(|&i| i != j)
                .map(|i| charges[i] * charges[i])
                .sum::<f64>()
                .sqrt();
            charges[j].abs() * rest
        })
        .fold(0.0f64, f64::max);

    let interactions: Vec<InteractionSpec> = (0..3)
        .map(|j| {
            let scale = match sys.kernel_form {
                SpeciesKernelForm::MainText => -charges[j] * charges[j] / 4.0,
                SpeciesKernelForm::AppendixE => charges[j] * charges[j] / 2.0,
            };
            let value = Arc::new(move |x: &[f64], y: &[f64]| {
                let dx = x[0] - y[0];
                let dy = x[1] - y[1];
                scale * (dx * dx + dy * dy).atan()
            });
            let grad1 = Arc::new(move |x: &[f64], y: &[f64]| {
                let u = arctan_sq_grad(x[0] - y[0], x[1] - y[1]);
                vec![scale * u[0], scale * u[1]]
            });
            let grad2 = Arc::new(move |x: &[f64], y: &[f64]| {
                let u = arctan_sq_grad(y[0] - x[0], y[1] - x[1]);
                vec![scale * u[0], scale * u[1]]
            });
            let radial = RadialForm {
                value: Arc::new(move |s: f64| scale * s.atan()),
                dvalue: Arc::new(move |s: f64| scale / (1.0 + s * s)),
            };
            InteractionSpec::with_kernel(InteractionKernel {
                value,
                grad1,
                grad2,
                even_difference: true,
                radial: Some(radial),
            })
        })
        .collect();

    let entropies = if sys.super_quartic {
        vec![EntropySpec::neg_self_entropy(); 3]
    } else if sys.beta > 0.0 {
        vec![EntropySpec::power(2, sys.beta).expect("beta > 0"); 3]
    } else {
        vec![EntropySpec::none(); 3]
    };

    let mut spec = ProblemSpec::new(
        vec![2, 2, 2],
        PotentialSpec::new(value, gradient).with_lipschitz(lipschitz),
        entropies,
        interactions,
    )
    .expect("species layout");
    spec.label = format!(
        "species(alpha={},beta={},quartic={},form={:?})",
        sys.alpha, sys.beta, sys.super_quartic, sys.kernel_form
    );
    (spec, warnings)
}

/// Euclidean oracle family: V(x) = (1-alpha)/2 ||x||^2 + alpha/2 (sum x_j)^2
/// over m scalar blocks, no entropy, registered for the closed-form solver.
pub fn quadratic_product_problem(m: usize, alpha: f64) -> Result<ProblemSpec> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidProblem(format!(
            "quadratic family needs 0 <= alpha < 1, got {alpha}"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidProblem("need at least one block".into()));
    }
    let value = move |x: &[f64]| {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        let s: f64 = x.iter().sum();
        0.5 * (1.0 - alpha) * sq + 0.5 * alpha * s * s
    };
    let gradient = move |j: usize, x: &[f64]| {
        let s: f64 = x.iter().sum();
        vec![(1.0 - alpha) * x[j] + alpha * s]
    };
    let mut potential = PotentialSpec::new(value, gradient);
    // The paper's constant for this family: L = alpha sqrt(m-1).
    let lipschitz = alpha * ((m - 1) as f64).sqrt();
    if lipschitz > 0.0 {
        potential = potential.with_lipschitz(lipschitz);
    }
    let mut spec = ProblemSpec::new(
        vec![1; m],
        potential,
        vec![EntropySpec::none(); m],
        vec![InteractionSpec::none(); m],
    )?;
    spec.closed_form = Some(QuadraticProductForm { alpha });
    spec.analytic_blocks = Some(vec![AnalyticBlock::PointMass(vec![0.0]); m]);
    spec.label = format!("quadratic(m={m},alpha={alpha})");
    Ok(spec)
}

/// Separable Gaussian oracle: V = sum_j (precision_j/2) ||x_j||^2 with
/// negative self-entropy, stationary blocks N(0, I / precision_j).
pub fn gaussian_mfvi_problem(dims: &[usize], precisions: &[f64]) -> Result<ProblemSpec> {
    if dims.len() != precisions.len() || dims.is_empty() {
        return Err(Error::InvalidProblem(
            "dims and precisions must be non-empty and equally long".into(),
        ));
    }
    if precisions.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidProblem("precisions must be positive".into()));
    }
    let dims_v = dims.to_vec();
    let precs = precisions.to_vec();
    let offsets: Vec<usize> = {
        let mut acc = 0;
        dims_v
            .iter()
            .map(|d| {
                let o = acc;
                acc += d;
                o
            })
            .collect()
    };
    let value = {
        let precs = precs.clone();
        let dims_v = dims_v.clone();
        let offsets = offsets.clone();
        move |x: &[f64]| {
            let mut acc = 0.0;
            for j in 0..precs.len() {
                let sq: f64 = x[offsets[j]..offsets[j] + dims_v[j]].iter().map(|v| v * v).sum();
                acc += 0.5 * precs[j] * sq;
            }
            acc
        }
    };
    let gradient = {
        let precs = precs.clone();
        let dims_v = dims_v.clone();
        let offsets = offsets.clone();
        move |j: usize, x: &[f64]| {
            x[offsets[j]..offsets[j] + dims_v[j]].iter().map(|v| precs[j] * v).collect::<Vec<_>>()
        }
    };
    let mut spec = ProblemSpec::new(
        dims_v.clone(),
        PotentialSpec::new(value, gradient),
        vec![EntropySpec::neg_self_entropy(); dims_v.len()],
        vec![InteractionSpec::none(); dims_v.len()],
    )?;
    spec.analytic_blocks = Some(
        dims_v
            .iter()
            .zip(&precs)
            .map(|(&d, &p)| AnalyticBlock::IsotropicGaussian {
                mean: vec![0.0; d],
                std: 1.0 / p.sqrt(),
            })
            .collect(),
    );
    spec.label = format!("gaussian(dims={dims_v:?},precisions={precs:?})");
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numdiff::central_gradient;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn fd_check(problem: &ProblemSpec, points: usize, seed: u64, tol: f64) {
        let mut stream = rng::stream(seed, 40);
        for _ in 0..points {
            let x: Vec<f64> =
                (0..problem.total_dim()).map(|_| stream.gen_range(-2.0..2.0)).collect();
            let value = problem.potential.value.clone();
            let full = central_gradient(|p| (value)(p), &x, 6e-6);
            for j in 0..problem.m {
                let g = (problem.potential.block_gradient)(j, &x);
                let off = problem.block_offset(j);
                for c in 0..problem.dims[j] {
                    let fd = full[off + c];
                    let err = (g[c] - fd).abs() / fd.abs().max(1.0);
                    assert!(err < tol, "block {j} coord {c}: {} vs fd {fd}", g[c]);
                }
            }
        }
    }

    #[test]
    fn mfvi_value_at_zero_is_n_log_two_plus_prior() {
        // Single datum x=1, y=1, theta=0: V(0) = log 2.
        let data = LogisticDataset::new(
            Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
            vec![1.0],
            4.0,
        )
        .unwrap();
        let (problem, warnings) = mfvi_problem(&data);
        assert!(warnings.is_empty());
        let v = (problem.potential.value)(&[0.0]);
        assert_abs_diff_eq!(v, 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn mfvi_gradients_match_finite_differences() {
        let data = synthetic_mfvi_dataset(7);
        let (problem, _) = mfvi_problem(&data);
        assert_eq!(problem.m, 4);
        assert!(problem.potential.lipschitz.unwrap() > 0.0);
        fd_check(&problem, 20, 3, 1e-6);
    }

    #[test]
    fn mfvi_hessian_is_positive_semidefinite_along_probes() {
        // Convexity spot-check: directional second differences are >= 0.
        let data = synthetic_mfvi_dataset(11);
        let (problem, _) = mfvi_problem(&data);
        let mut stream = rng::stream(5, 41);
        let value = problem.potential.value.clone();
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| stream.gen_range(-1.5..1.5)).collect();
            let dir: Vec<f64> = (0..4).map(|_| stream.gen_range(-1.0..1.0)).collect();
            let h = 1e-3;
            let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + h * d).collect();
            let xm: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a - h * d).collect();
            let second = (value(&xp) - 2.0 * value(&x) + value(&xm)) / (h * h);
            assert!(second >= -1e-10, "directional curvature {second}");
        }
    }

    #[test]
    fn mfvi_warns_on_zero_column() {
        let data = LogisticDataset::new(
            Array2::from_shape_vec((2, 2), vec![1.0, 0.0, -1.0, 0.0]).unwrap(),
            vec![1.0, 0.0],
            4.0,
        )
        .unwrap();
        let (_, warnings) = mfvi_problem(&data);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn species_gradients_match_finite_differences() {
        for quartic in [false, true] {
            let (problem, _) = species_problem(&SpeciesSystem::new(1.0, 1.0, quartic));
            fd_check(&problem, 20, 17, 1e-6);
        }
    }

    #[test]
    fn species_center_configuration_has_zero_confinement_gradient() {
        // With all particles at the centers, the confinement part vanishes;
        // compare against the cross-interaction-only gradient.
        let sys = SpeciesSystem::new(1.0, 0.0, false);
        let (problem, _) = species_problem(&sys);
        let x = [3.0, 0.0, -3.0, -3.0, 3.0, 3.0];
        for j in 0..3 {
            let g = (problem.potential.block_gradient)(j, &x);
            let mut cross = [0.0, 0.0];
            for i in 0..3 {
                if i == j {
                    continue;
                }
                let u = arctan_sq_grad(x[2 * j] - x[2 * i], x[2 * j + 1] - x[2 * i + 1]);
                cross[0] -= 0.5 * sys.charges[i] * sys.charges[j] * u[0];
                cross[1] -= 0.5 * sys.charges[i] * sys.charges[j] * u[1];
            }
            assert_abs_diff_eq!(g[0], cross[0], epsilon = 1e-12);
            assert_abs_diff_eq!(g[1], cross[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn species_entropy_and_kernel_selection() {
        let (p1, w1) = species_problem(&SpeciesSystem::new(1.0, 2.5, false));
        assert!(w1.is_empty());
        assert!(matches!(
            p1.entropies[0].kind,
            crate::model::EntropyKind::Power { exponent: 2 }
        ));
        assert_eq!(p1.entropies[0].coefficient, 2.5);
        let (p2, _) = species_problem(&SpeciesSystem::new(1.0, 1.0, true));
        assert!(matches!(p2.entropies[0].kind, crate::model::EntropyKind::NegSelfEntropy));
        let (_, w3) = species_problem(&SpeciesSystem::new(0.5, 1.0, false));
        assert_eq!(w3.len(), 1);
        // Sign switch flips the kernel value.
        let mut alt = SpeciesSystem::new(1.0, 1.0, false);
        alt.kernel_form = SpeciesKernelForm::AppendixE;
        let (p3, _) = species_problem(&alt);
        let a = [0.0, 0.0];
        let b = [1.0, 1.0];
        let main = (p1.interactions[0].kernel().unwrap().value)(&a, &b);
        let appendix = (p3.interactions[0].kernel().unwrap().value)(&a, &b);
        assert_abs_diff_eq!(main, -0.25 * 2.0f64.atan(), epsilon = 1e-12);
        assert_abs_diff_eq!(appendix, 0.5 * 2.0f64.atan(), epsilon = 1e-12);
    }

    #[test]
    fn paper_displayed_kernel_jacobian_is_a_contraction_on_a_grid() {
        // Grid maximization oracle for ||JR|| <= 1 with R(y) = y / (1+||y||^2).
        let jr_norm = |y0: f64, y1: f64| -> f64 {
            let s = y0 * y0 + y1 * y1;
            let l1: f64 = 1.0 / (1.0 + s);
            let l2: f64 = (1.0 - s) / ((1.0 + s) * (1.0 + s));
            l1.abs().max(l2.abs())
        };
        let mut sup = 0.0f64;
        for i in -40..=40 {
            for j in -40..=40 {
                sup = sup.max(jr_norm(i as f64 * 0.25, j as f64 * 0.25));
            }
        }
        assert!(sup <= 1.0 + 1e-12, "sup ||JR|| = {sup}");
    }

    #[test]
    fn species_strong_convexity_margin_arithmetic() {
        // min_i (r_i - 4 Q_i^2 - |Q_i| sum_{j != i} |Q_j|) with the built-in
        // constants: (0.5, 1.5, 1.0), all positive.
        let sys = SpeciesSystem::new(1.0, 1.0, false);
        let q = sys.charges;
        let r = sys.stiffness;
        let mut margins = Vec::new();
        for i in 0..3 {
            let others: f64 = (0..3).filter(|&j| j != i).map(|j| q[j].abs()).sum();
            margins.push(r[i] - 4.0 * q[i] * q[i] - q[i].abs() * others);
        }
        assert_abs_diff_eq!(margins[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(margins[1], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(margins[2], 1.0, epsilon = 1e-12);
        assert!(margins.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn quadratic_family_shape_and_lipschitz() {
        let p = quadratic_product_problem(2, 0.0).unwrap();
        assert!(p.potential.lipschitz.is_none());
        // Decoupled: V = ||x||^2 / 2.
        assert_abs_diff_eq!((p.potential.value)(&[1.0, 2.0]), 2.5, epsilon = 1e-12);
        let p = quadratic_product_problem(3, 0.5).unwrap();
        assert_abs_diff_eq!(
            p.potential.lipschitz.unwrap(),
            0.5 * 2.0f64.sqrt(),
            epsilon = 1e-12
        );
        fd_check(&p, 20, 23, 1e-6);
        assert!(quadratic_product_problem(3, 1.0).is_err());
        assert!(quadratic_product_problem(3, -0.1).is_err());
        // Minimizer at the origin: gradient vanishes there.
        for j in 0..3 {
            assert_eq!((p.potential.block_gradient)(j, &[0.0, 0.0, 0.0])[0], 0.0);
        }
    }

    #[test]
    fn gaussian_oracle_references() {
        let p = gaussian_mfvi_problem(&[1], &[1.0]).unwrap();
        match &p.analytic_blocks.as_ref().unwrap()[0] {
            AnalyticBlock::IsotropicGaussian { std, .. } => {
                assert_abs_diff_eq!(*std, 1.0, epsilon = 1e-12)
            }
            _ => panic!("expected gaussian block"),
        }
        let p = gaussian_mfvi_problem(&[1], &[4.0]).unwrap();
        match &p.analytic_blocks.as_ref().unwrap()[0] {
            AnalyticBlock::IsotropicGaussian { std, .. } => {
                assert_abs_diff_eq!(*std, 0.5, epsilon = 1e-12)
            }
            _ => panic!("expected gaussian block"),
        }
        assert!(gaussian_mfvi_problem(&[1], &[0.0]).is_err());
        fd_check(&gaussian_mfvi_problem(&[1, 2], &[1.0, 4.0]).unwrap(), 20, 29, 1e-6);
    }

    #[test]
    fn csv_loader_roundtrip_and_errors() {
        let text = "f1,f2,label\n1.0,2.0,1\n-0.5,0.25,0\n";
        let ds = LogisticDataset::from_csv_str(text, 4.0).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.p(), 2);
        assert_eq!(ds.labels, vec![1.0, 0.0]);
        assert!(LogisticDataset::from_csv_str("a,b\n1,0.5\n", 4.0).is_err()); // label 0.5
        assert!(LogisticDataset::from_csv_str("a\n1\n", 4.0).is_err()); // one column
        assert!(LogisticDataset::from_csv_str("a,b\n1,zzz\n", 4.0).is_err());
        assert!(LogisticDataset::from_csv_str("a,b\n", 4.0).is_err()); // no rows
    }
}
