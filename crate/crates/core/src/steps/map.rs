//! Residual transport map T(x) = x + g(x) with g a small tanh MLP.
//!
//! The map is identity-initialized (final layer zero) so a fresh model incurs
//! zero proximity cost and has log|det grad T| = 0 exactly. The Jacobian
//! grad T = I + grad g is assembled by the exact layer-wise chain rule; its
//! log-determinant comes from an LU factorization with partial pivoting.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense-determinant cap for the Jacobian log-determinant.
pub const MAX_LOGDET_DIM: usize = 16;

#[derive(Clone, Debug)]
pub struct TransportMapModel {
    /// [d, hidden..., d]; first and last entries equal the block dimension.
    layer_sizes: Vec<usize>,
    /// Flat parameters: per layer, row-major W then b.
    params: Vec<f64>,
    /// (w_offset, b_offset) per layer into `params`.
    offsets: Vec<(usize, usize)>,
}

impl TransportMapModel {
    fn layout(layer_sizes: &[usize]) -> (Vec<(usize, usize)>, usize) {
        let mut offsets = Vec::with_capacity(layer_sizes.len() - 1);
        let mut cursor = 0;
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            offsets.push((cursor, cursor + fan_in * fan_out));
            cursor += fan_in * fan_out + fan_out;
        }
        (offsets, cursor)
    }

    /// All-zero parameters: g = 0, so the map is exactly the identity.
    pub fn zeroed(dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(dim);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(dim);
        if dim == 0 || hidden.iter().any(|&w| w == 0) {
            return Err(Error::Shape("layer sizes must be positive".into()));
        }
        let (offsets, total) = Self::layout(&layer_sizes);
        Ok(Self { layer_sizes, params: vec![0.0; total], offsets })
    }

    /// Random hidden layers (uniform Xavier), zero final layer: the map starts
    /// at the identity but with live hidden features.
    pub fn identity_init(dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut model = Self::zeroed(dim, hidden)?;
        let last = model.num_layers() - 1;
        for l in 0..last {
            let (fan_in, fan_out) = (model.layer_sizes[l], model.layer_sizes[l + 1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w_off, b_off) = model.offsets[l];
            for p in model.params[w_off..b_off].iter_mut() {
                *p = rng.gen_range(-a..a);
            }
        }
        Ok(model)
    }

    /// Clone with the final layer zeroed: warm hidden features, identity map.
    pub fn reset_to_identity(&self) -> Self {
        let mut model = self.clone();
        let last = model.num_layers() - 1;
        let (w_off, _) = model.offsets[last];
        for p in model.params[w_off..].iter_mut() {
            *p = 0.0;
        }
        model
    }

    pub fn dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// (weights offset, biases offset) of layer l inside the flat parameters.
    pub(crate) fn offsets_of(&self, l: usize) -> (usize, usize) {
        self.offsets[l]
    }

    fn weights(&self, l: usize) -> &[f64] {
        let (w, b) = self.offsets[l];
        &self.params[w..b]
    }

    fn biases(&self, l: usize) -> &[f64] {
        let (_, b) = self.offsets[l];
        let out = self.layer_sizes[l + 1];
        &self.params[b..b + out]
    }

    /// T(x) = x + g(x).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "map expects dimension {}, got {}",
                self.dim(),
                x.len()
            )));
        }
        let trace = self.forward_trace(x, false);
        Ok(trace.output(x))
    }

    pub(crate) fn forward_trace(&self, x: &[f64], with_jacobian: bool) -> ForwardTrace {
        let mut trace = ForwardTrace::new(self, with_jacobian);
        self.forward_trace_into(x, &mut trace);
        trace
    }

    /// Fills a preallocated trace; the hot path, no heap traffic.
    pub(crate) fn forward_trace_into(&self, x: &[f64], trace: &mut ForwardTrace) {
        let nl = self.num_layers();
        let d = self.dim();
        trace.inputs[0].copy_from_slice(x);
        if trace.with_jacobian {
            trace.g_ins[0].fill(0.0);
            for i in 0..d {
                trace.g_ins[0][(i, i)] = 1.0;
            }
        }
        for l in 0..nl {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = self.weights(l);
            let bias = self.biases(l);
            for r in 0..fan_out {
                let row = &w[r * fan_in..(r + 1) * fan_in];
                let mut acc = bias[r];
                for c in 0..fan_in {
                    acc += row[c] * trace.inputs[l][c];
                }
                trace.zs[l][r] = acc;
            }
            if trace.with_jacobian {
                // M[l] = W_l * G_in[l]
                for r in 0..fan_out {
                    let row = &w[r * fan_in..(r + 1) * fan_in];
                    for col in 0..d {
                        let mut acc = 0.0;
                        for c in 0..fan_in {
                            acc += row[c] * trace.g_ins[l][(c, col)];
                        }
                        trace.ms[l][(r, col)] = acc;
                    }
                }
                if l < nl - 1 {
                    for r in 0..fan_out {
                        let t = trace.zs[l][r].tanh();
                        let dp = 1.0 - t * t;
                        for col in 0..d {
                            trace.g_ins[l + 1][(r, col)] = dp * trace.ms[l][(r, col)];
                        }
                    }
                }
            }
            if l < nl - 1 {
                for r in 0..fan_out {
                    trace.inputs[l + 1][r] = trace.zs[l][r].tanh();
                }
            }
        }
    }

    /// grad T(x) = I + grad g(x), dense d x d.
    pub fn jacobian(&self, x: &[f64]) -> Result<Array2<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "map expects dimension {}, got {}",
                self.dim(),
                x.len()
            )));
        }
        let trace = self.forward_trace(x, true);
        let mut j = Array2::zeros((self.dim(), self.dim()));
        trace.jacobian_into(&mut j);
        Ok(j)
    }
}

/// Reusable forward-pass record: activations, pre-activations, and (when
/// requested) the layer-wise Jacobian chain of g.
pub(crate) struct ForwardTrace {
    /// inputs[l]: activation entering layer l (inputs[0] = x).
    pub inputs: Vec<Vec<f64>>,
    /// zs[l]: pre-activation of layer l; g(x) = zs[last].
    pub zs: Vec<Vec<f64>>,
    /// ms[l] = W_l * G_in[l].
    pub ms: Vec<Array2<f64>>,
    /// g_ins[l]: Jacobian of inputs[l] w.r.t. x.
    pub g_ins: Vec<Array2<f64>>,
    pub with_jacobian: bool,
}

impl ForwardTrace {
    pub fn new(model: &TransportMapModel, with_jacobian: bool) -> Self {
        let sizes = &model.layer_sizes;
        let nl = model.num_layers();
        let d = model.dim();
        Self {
            inputs: (0..nl).map(|l| vec![0.0; sizes[l]]).collect(),
            zs: (0..nl).map(|l| vec![0.0; sizes[l + 1]]).collect(),
            ms: if with_jacobian {
                (0..nl).map(|l| Array2::zeros((sizes[l + 1], d))).collect()
            } else {
                Vec::new()
            },
            g_ins: if with_jacobian {
                (0..nl).map(|l| Array2::zeros((sizes[l], d))).collect()
            } else {
                Vec::new()
            },
            with_jacobian,
        }
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        let g = self.zs.last().unwrap();
        x.iter().zip(g).map(|(a, b)| a + b).collect()
    }

    pub fn output_into(&self, x: &[f64], out: &mut [f64]) {
        let g = self.zs.last().unwrap();
        for c in 0..x.len() {
            out[c] = x[c] + g[c];
        }
    }

    pub fn jacobian_into(&self, out: &mut Array2<f64>) {
        let m = self.ms.last().unwrap();
        out.assign(m);
        for i in 0..out.nrows() {
            out[(i, i)] += 1.0;
        }
    }
}

/// LU factorization with partial pivoting of a small dense matrix.
/// Returns (lu, pivots, sign-of-permutation); fails on exact zero pivot.
pub(crate) struct Lu {
    lu: Array2<f64>,
    pivots: Vec<usize>,
    perm_sign: f64,
}

impl Lu {
    pub fn factor(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        let mut lu = a.clone();
        let mut pivots = vec![0usize; n];
        let mut perm_sign = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for r in k + 1..n {
                let v = lu[(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::SingularJacobian(0.0));
            }
            pivots[k] = p;
            if p != k {
                perm_sign = -perm_sign;
                for c in 0..n {
                    let tmp = lu[(k, c)];
                    lu[(k, c)] = lu[(p, c)];
                    lu[(p, c)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for r in k + 1..n {
                let factor = lu[(r, k)] / pivot;
                lu[(r, k)] = factor;
                for c in k + 1..n {
                    lu[(r, c)] -= factor * lu[(k, c)];
                }
            }
        }
        Ok(Self { lu, pivots, perm_sign })
    }

    /// (log|det|, sign in {-1, +1}).
    pub fn log_abs_det(&self) -> (f64, f64) {
        let n = self.lu.nrows();
        let mut log = 0.0;
        let mut sign = self.perm_sign;
        for i in 0..n {
            let d = self.lu[(i, i)];
            log += d.abs().ln();
            if d < 0.0 {
                sign = -sign;
            }
        }
        (log, sign)
    }

    /// Solves A x = b in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.lu.nrows();
        for k in 0..n {
            b.swap(k, self.pivots[k]);
        }
        for r in 1..n {
            for c in 0..r {
                b[r] -= self.lu[(r, c)] * b[c];
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                b[r] -= self.lu[(r, c)] * b[c];
            }
            b[r] /= self.lu[(r, r)];
        }
    }

    /// A^{-T}, column by column.
    #[cfg(test)]
    pub fn inverse_transpose(&self) -> Array2<f64> {
        let n = self.lu.nrows();
        let mut out = Array2::zeros((n, n));
        self.inverse_transpose_into(&mut out);
        out
    }

    pub fn inverse_transpose_into(&self, out: &mut Array2<f64>) {
        let n = self.lu.nrows();
        let mut col = [0.0; MAX_LOGDET_DIM];
        for c in 0..n {
            col[..n].fill(0.0);
            col[c] = 1.0;
            self.solve(&mut col[..n]);
            // col is the c-th column of A^{-1} = c-th row of A^{-T}.
            for r in 0..n {
                out[(c, r)] = col[r];
            }
        }
    }
}

/// Residual feed-forward evaluation T(x) = x + g(x).
pub fn map_forward(model: &TransportMapModel, x: &[f64]) -> Result<Vec<f64>> {
    model.forward(x)
}

/// log|det grad T(x)| via exact chain rule plus LU factorization, with the
/// sign returned separately. Dense determinant, d <= 16.
pub fn map_jacobian_logdet(model: &TransportMapModel, x: &[f64]) -> Result<(f64, f64)> {
    if model.dim() > MAX_LOGDET_DIM {
        return Err(Error::Shape(format!(
            "jacobian log-determinant supports d <= {MAX_LOGDET_DIM}, got {}",
            model.dim()
        )));
    }
    let j = model.jacobian(x)?;
    let lu = Lu::factor(&j).map_err(|_| Error::SingularJacobian(0.0))?;
    let (log, sign) = lu.log_abs_det();
    if log < -690.0 {
        // |det| below ~1e-300.
        return Err(Error::SingularJacobian(sign * log.exp()));
    }
    Ok((log, sign))
}
