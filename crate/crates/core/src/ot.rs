//! Exact Wasserstein-2 distances between equal-size empirical measures.
//!
//! Equal-weight, equal-count measures only: every WPCG run keeps B fixed, so
//! the general transport LP is unnecessary and the square assignment problem
//! is exact.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ParticleEnsemble;
use crate::rng;

/// Default particle-count cap for the exact assignment solve.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 4096;

/// Optimal matching between two equal-count ensembles: row i of the source
/// goes to row `assignment[i]` of the target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coupling {
    assignment: Vec<usize>,
}

impl Coupling {
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        let n = assignment.len();
        let mut seen = vec![false; n];
        for &j in &assignment {
            if j >= n || seen[j] {
                return Err(Error::Shape("coupling is not a bijection".into()));
            }
            seen[j] = true;
        }
        Ok(Self { assignment })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn is_identity(&self) -> bool {
        self.assignment.iter().enumerate().all(|(i, &j)| i == j)
    }
}

/// Exact W2 between 1-D empirical measures via monotone rearrangement:
/// sqrt((1/B) sum_i (a_sorted[i] - b_sorted[i])^2).
pub fn w2_1d(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::Shape("w2_1d needs d = 1 ensembles".into()));
    }
    if a.count() != b.count() {
        return Err(Error::UnequalCounts(a.count(), b.count()));
    }
    let mut xs: Vec<f64> = a.points().column(0).to_vec();
    let mut ys: Vec<f64> = b.points().column(0).to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mean_sq = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / xs.len() as f64;
    Ok(mean_sq.sqrt())
}

/// Exact W2 between equal-count ensembles with the optimal permutation,
/// solving the square assignment problem on c_ij = ||a_i - b_j||^2.
pub fn w2_assignment(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<(f64, Coupling)> {
    w2_assignment_with_cap(a, b, DEFAULT_ASSIGNMENT_CAP)
}

pub fn w2_assignment_with_cap(
    a: &ParticleEnsemble,
    b: &ParticleEnsemble,
    cap: usize,
) -> Result<(f64, Coupling)> {
    if a.count() != b.count() {
        return Err(Error::UnequalCounts(a.count(), b.count()));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "ensemble dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let n = a.count();
    if n > cap {
        return Err(Error::CapExceeded(n, cap));
    }
    let mut cost = Array2::zeros((n, n));
    for i in 0..n {
        let ai = a.row(i);
        let ai = ai.as_slice().unwrap();
        for j in 0..n {
            let bj = b.row(j);
            let sq: f64 = ai
                .iter()
                .zip(bj.as_slice().unwrap())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            cost[(i, j)] = sq;
        }
    }
    let perm = solve_assignment(&cost);
    let total: f64 = (0..n).map(|i| cost[(i, perm[i])]).sum();
    Ok(((total / n as f64).sqrt(), Coupling::new(perm)?))
}

/// Shortest-augmenting-path solver for the dense square assignment problem.
/// Returns the column assigned to each row of `cost`.
fn solve_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let inf = f64::INFINITY;
    // 1-indexed potentials and matching; p[j] = row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    perm
}

/// W2 with the cap policy: exact below the cap (1-D fast path), i.i.d.
/// subsampled to the cap above it. The flag marks approximate results.
pub fn w2_with_cap(
    a: &ParticleEnsemble,
    b: &ParticleEnsemble,
    cap: usize,
    sub_seed: u64,
) -> Result<(f64, bool)> {
    if a.count() != b.count() {
        return Err(Error::UnequalCounts(a.count(), b.count()));
    }
    if a.count() <= cap {
        if a.dim() == 1 {
            return Ok((w2_1d(a, b)?, false));
        }
        let (d, _) = w2_assignment_with_cap(a, b, cap)?;
        return Ok((d, false));
    }
    let mut stream = rng::stream(sub_seed, rng::STREAM_OT_SUBSAMPLE);
    let sample = |e: &ParticleEnsemble, r: &mut rand_chacha::ChaCha8Rng| {
        let rows: Vec<Vec<f64>> = (0..cap)
            .map(|_| e.row(r.gen_range(0..e.count())).to_vec())
            .collect();
        ParticleEnsemble::from_rows(&rows).expect("subsample of a valid ensemble")
    };
    let sa = sample(a, &mut stream);
    let sb = sample(b, &mut stream);
    let d = if a.dim() == 1 {
        w2_1d(&sa, &sb)?
    } else {
        w2_assignment_with_cap(&sa, &sb, cap)?.0
    };
    Ok((d, true))
}

/// W2^2 between product measures is the sum of blockwise W2^2.
pub fn product_w2_squared(per_block: &[f64]) -> Result<f64> {
    for &v in per_block {
        if v < 0.0 {
            return Err(Error::NegativeSquared(v));
        }
    }
    Ok(per_block.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: minimum mean squared cost over all permutations.
    pub(crate) fn brute_force_w2(a: &ParticleEnsemble, b: &ParticleEnsemble) -> f64 {
        let n = a.count();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut idx, 0, &mut |perm| {
            let total: f64 = (0..n)
                .map(|i| {
                    a.row(i)
                        .iter()
                        .zip(b.row(perm[i]).iter())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                })
                .sum();
            if total < best {
                best = total;
            }
        });
        (best / n as f64).sqrt()
    }

    fn permute(idx: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == idx.len() {
            visit(idx);
            return;
        }
        for i in k..idx.len() {
            idx.swap(k, i);
            permute(idx, k + 1, visit);
            idx.swap(k, i);
        }
    }

    fn random_ensemble(rng: &mut ChaCha8Rng, b: usize, d: usize) -> ParticleEnsemble {
        let rows: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        ParticleEnsemble::from_rows(&rows).unwrap()
    }

    #[test]
    fn w2_1d_examples() {
        let e = |vals: &[f64]| {
            ParticleEnsemble::from_rows(&vals.iter().map(|v| vec![*v]).collect::<Vec<_>>()).unwrap()
        };
        assert_eq!(w2_1d(&e(&[0.0, 1.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        // Oracle (brute force over both permutations): mean squared cost 1.
        assert_abs_diff_eq!(w2_1d(&e(&[0.0, 2.0]), &e(&[1.0, 3.0])).unwrap(), 1.0);
        assert_eq!(w2_1d(&e(&[0.0]), &e(&[5.0])).unwrap(), 5.0);
        assert!(matches!(
            w2_1d(&e(&[0.0]), &e(&[1.0, 2.0])),
            Err(Error::UnequalCounts(1, 2))
        ));
    }

    #[test]
    fn assignment_identity_on_equal_ensembles() {
        let a = ParticleEnsemble::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        let (d, c) = w2_assignment(&a, &a).unwrap();
        assert_eq!(d, 0.0);
        assert!(c.is_identity());
    }

    #[test]
    fn assignment_translation_example() {
        // b = a + (2, 0): distance 2, identity coupling (oracle: all 6 perms).
        let a = ParticleEnsemble::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        let rows: Vec<Vec<f64>> = a
            .points()
            .rows()
            .into_iter()
            .map(|r| vec![r[0] + 2.0, r[1]])
            .collect();
        let b = ParticleEnsemble::from_rows(&rows).unwrap();
        let (d, c) = w2_assignment(&a, &b).unwrap();
        assert_abs_diff_eq!(d, 2.0, epsilon = 1e-12);
        assert!(c.is_identity());
        assert_abs_diff_eq!(d, brute_force_w2(&a, &b), epsilon = 1e-12);
    }

    #[test]
    fn assignment_matches_brute_force_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for b in 1..=7 {
            for _ in 0..6 {
                let d = rng.gen_range(1..=3);
                let x = random_ensemble(&mut rng, b, d);
                let y = random_ensemble(&mut rng, b, d);
                let (fast, _) = w2_assignment(&x, &y).unwrap();
                let slow = brute_force_w2(&x, &y);
                assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn assignment_single_random_b6_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = random_ensemble(&mut rng, 6, 2);
        let y = random_ensemble(&mut rng, 6, 2);
        let (fast, _) = w2_assignment(&x, &y).unwrap();
        assert_abs_diff_eq!(fast, brute_force_w2(&x, &y), epsilon = 1e-12);
    }

    #[test]
    fn cap_is_enforced_and_subsampling_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_ensemble(&mut rng, 12, 2);
        let y = random_ensemble(&mut rng, 12, 2);
        assert!(matches!(
            w2_assignment_with_cap(&x, &y, 8),
            Err(Error::CapExceeded(12, 8))
        ));
        let (_, approx_flag) = w2_with_cap(&x, &y, 8, 123).unwrap();
        assert!(approx_flag);
        let (_, exact_flag) = w2_with_cap(&x, &y, 16, 123).unwrap();
        assert!(!exact_flag);
        // Deterministic subsampling under a fixed sub-seed.
        let (d1, _) = w2_with_cap(&x, &y, 8, 123).unwrap();
        let (d2, _) = w2_with_cap(&x, &y, 8, 123).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn product_w2_squared_examples() {
        assert_eq!(product_w2_squared(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(product_w2_squared(&[1.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(
            product_w2_squared(&[1.0, -0.1]),
            Err(Error::NegativeSquared(_))
        ));
    }

    #[test]
    fn tensorization_against_joint_assignment_oracle() {
        // Two 1-D blocks; joint ensembles built with the per-block optimal
        // matchings. Joint W2^2 must equal the sum of blockwise W2^2.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let n = rng.gen_range(3..12);
            let a1 = random_ensemble(&mut rng, n, 1);
            let a2 = random_ensemble(&mut rng, n, 1);
            let b1 = random_ensemble(&mut rng, n, 1);
            let b2 = random_ensemble(&mut rng, n, 1);
            let (w1, c1) = w2_assignment(&a1, &b1).unwrap();
            let (w2, c2) = w2_assignment(&a2, &b2).unwrap();
            let joint_a: Vec<Vec<f64>> = (0..n)
                .map(|i| vec![a1.row(i)[0], a2.row(i)[0]])
                .collect();
            let joint_b: Vec<Vec<f64>> = (0..n)
                .map(|i| vec![b1.row(c1.assignment()[i])[0], b2.row(c2.assignment()[i])[0]])
                .collect();
            let ja = ParticleEnsemble::from_rows(&joint_a).unwrap();
            let jb = ParticleEnsemble::from_rows(&joint_b).unwrap();
            let (joint, _) = w2_assignment(&ja, &jb).unwrap();
            let sum = product_w2_squared(&[w1 * w1, w2 * w2]).unwrap();
            assert_abs_diff_eq!(joint * joint, sum, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn symmetry_identity_triangle(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = rng.gen_range(2..=16);
            let d = rng.gen_range(1..=3);
            let x = random_ensemble(&mut rng, b, d);
            let y = random_ensemble(&mut rng, b, d);
            let z = random_ensemble(&mut rng, b, d);
            let dxy = w2_assignment(&x, &y).unwrap().0;
            let dyx = w2_assignment(&y, &x).unwrap().0;
            prop_assert!((dxy - dyx).abs() < 1e-10);
            prop_assert!(w2_assignment(&x, &x).unwrap().0 == 0.0);
            let dxz = w2_assignment(&x, &z).unwrap().0;
            let dyz = w2_assignment(&y, &z).unwrap().0;
            prop_assert!(dxz <= dxy + dyz + 1e-10);
        }

        #[test]
        fn translation_by_constant_vector(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = rng.gen_range(1..=10);
            let d = rng.gen_range(1..=3);
            let x = random_ensemble(&mut rng, b, d);
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let rows: Vec<Vec<f64>> = (0..b)
                .map(|i| x.row(i).iter().zip(&v).map(|(a, s)| a + s).collect())
                .collect();
            let y = ParticleEnsemble::from_rows(&rows).unwrap();
            let norm = v.iter().map(|s| s * s).sum::<f64>().sqrt();
            let d2 = w2_assignment(&x, &y).unwrap().0;
            prop_assert!((d2 - norm).abs() < 1e-9);
        }

        #[test]
        fn w2_1d_agrees_with_assignment(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = rng.gen_range(1..=12);
            let x = random_ensemble(&mut rng, b, 1);
            let y = random_ensemble(&mut rng, b, 1);
            let fast = w2_1d(&x, &y).unwrap();
            let exact = w2_assignment(&x, &y).unwrap().0;
            prop_assert!((fast - exact).abs() < 1e-10);
        }
    }
}
