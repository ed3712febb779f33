//! SVD factorization, energy-based rank selection and rank-k truncation of a single matrix.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration on the tall orientation of the input.
//! Singular vectors are sign-normalised so that the largest-magnitude entry of every left
//! singular vector is non-negative, which makes the output bitwise reproducible.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const OFF_DIAGONAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 60;

/// `u · diag(sigma) · vᵀ` with `u: m×r`, `v: n×r`, `r = min(m, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl Factorization {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.sigma) {
                *x *= s;
            }
        }
        us.matmul(&self.v.transpose())
    }
}

/// Rank-k factor pair: `u_trunc: m×k`, `v_star: k×n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPair {
    pub u_trunc: Matrix,
    pub v_star: Matrix,
}

impl TruncatedPair {
    pub fn rank(&self) -> usize {
        self.u_trunc.cols()
    }

    pub fn product(&self) -> Matrix {
        self.u_trunc.matmul(&self.v_star)
    }

    pub fn param_count(&self) -> usize {
        self.u_trunc.len() + self.v_star.len()
    }
}

pub fn svd(m_in: &Matrix) -> Result<Factorization> {
    let (m, n) = m_in.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidMatrix(format!("empty {m}x{n} matrix")));
    }
    if !m_in.is_finite() {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }

    let mut f = if m >= n {
        jacobi_tall(m_in)
    } else {
        let t = jacobi_tall(&m_in.transpose());
        Factorization { u: t.v, sigma: t.sigma, v: t.u }
    };
    normalize_signs(&mut f);
    Ok(f)
}

/// One-sided Jacobi for `rows >= cols`. Columns of the working copy are rotated until they are
/// mutually orthogonal; their norms are then the singular values.
fn jacobi_tall(a: &Matrix) -> Factorization {
    let (m, n) = a.shape();
    // Column-major working copies so that column rotations touch contiguous memory.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= OFF_DIAGONAL_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps equal singular values in column order.
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let sigma_max = norms[order[0]];
    let null_tol = sigma_max * f64::EPSILON * m as f64;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut pending_null = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        if s > null_tol && s > 0.0 {
            u_cols.push(cols[j].iter().map(|x| x / s).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            pending_null.push(slot);
        }
    }
    for slot in pending_null {
        let basis = complete_basis(&u_cols, slot, m);
        u_cols[slot] = basis;
    }

    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    let v = Matrix::from_fn(n, n, |i, j| vcols[order[j]][i]);
    Factorization { u, sigma, v }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// A unit vector orthogonal to every non-zero column in `cols` other than `skip`,
/// chosen as the standard basis vector with the largest residual after two Gram-Schmidt passes.
fn complete_basis(cols: &[Vec<f64>], skip: usize, m: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..m {
        let mut v = vec![0.0; m];
        v[e] = 1.0;
        for _ in 0..2 {
            for (idx, c) in cols.iter().enumerate() {
                if idx == skip {
                    continue;
                }
                let dot: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                if dot != 0.0 {
                    v.iter_mut().zip(c).for_each(|(x, ci)| *x -= dot * ci);
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if best.as_ref().map_or(true, |(b, _)| norm > *b + 1e-12) {
            best = Some((norm, v));
        }
    }
    let (norm, mut v) = best.expect("m >= 1");
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn normalize_signs(f: &mut Factorization) {
    let (m, r) = f.u.shape();
    for j in 0..r {
        let mut pivot = 0;
        for i in 1..m {
            if f.u[(i, j)].abs() > f.u[(pivot, j)].abs() {
                pivot = i;
            }
        }
        if f.u[(pivot, j)] < 0.0 {
            for i in 0..m {
                f.u[(i, j)] = -f.u[(i, j)];
            }
            for i in 0..f.v.rows() {
                f.v[(i, j)] = -f.v[(i, j)];
            }
        }
    }
}

/// Smallest `k` whose leading singular values carry at least `energy` of the total L1 mass.
pub fn rank_for_energy(sigma: &[f64], energy: f64) -> Result<usize> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::InvalidEnergy(energy));
    }
    let total: f64 = sigma.iter().sum();
    if sigma.is_empty() || total <= 0.0 || !total.is_finite() {
        return Err(Error::DegenerateSpectrum);
    }
    let mut cumulative = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        cumulative += s;
        if cumulative / total >= energy {
            return Ok(i + 1);
        }
    }
    Ok(sigma.len())
}

/// Rank-`k` truncation, folding the kept singular values into `v_star`.
pub fn truncate(f: &Factorization, k: usize) -> Result<TruncatedPair> {
    let r = f.rank();
    if k == 0 || k > r {
        return Err(Error::InvalidRank { context: "truncation".into(), rank: k, max: r });
    }
    let u_trunc = f.u.leading_columns(k);
    let n = f.v.rows();
    let v_star = Matrix::from_fn(k, n, |i, j| f.sigma[i] * f.v[(j, i)]);
    Ok(TruncatedPair { u_trunc, v_star })
}

/// Multiply-accumulate ratio of an `m×n` layer to its rank-`k` factorization.
pub fn layer_speedup(m: usize, n: usize, k: usize) -> Result<f64> {
    let max = m.min(n);
    if m == 0 || n == 0 || k == 0 || k > max {
        return Err(Error::InvalidRank { context: format!("{m}x{n} layer"), rank: k, max });
    }
    Ok((m * n) as f64 / (k * (m + n)) as f64)
}

/// Parameter (and multiply-accumulate) count of an `m×n` layer at rank `k`; 0 means dense.
pub fn layer_cost(m: usize, n: usize, k: usize) -> usize {
    if k == 0 {
        m * n
    } else {
        k * (m + n)
    }
}

/// True when a rank-`k` factorization is strictly cheaper than the dense layer.
pub fn is_economical(m: usize, n: usize, k: usize) -> bool {
    k > 0 && k * (m + n) < m * n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).frobenius_norm() / b.frobenius_norm()
    }

    #[test]
    fn identity_spectrum() {
        let f = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(f.sigma, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_spectrum() {
        let f = svd(&Matrix::diag(&[3.0, 2.0, 1.0])).unwrap();
        assert_eq!(f.sigma, vec![3.0, 2.0, 1.0]);
        let f = svd(&Matrix::diag(&[1.0, -3.0, 2.0])).unwrap();
        assert_eq!(f.sigma, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn seeded_5x4_reconstructs() {
        let a = random_matrix(5, 4, 5);
        let f = svd(&a).unwrap();
        assert!(rel_err(&f.reconstruct(), &a) < 1e-10);
        assert!(f.u.orthonormality_defect() < 1e-8);
        assert!(f.v.orthonormality_defect() < 1e-8);
    }

    #[test]
    fn wide_and_rank_deficient_inputs() {
        let a = random_matrix(3, 7, 9);
        let f = svd(&a).unwrap();
        assert_eq!(f.u.shape(), (3, 3));
        assert_eq!(f.v.shape(), (7, 3));
        assert!(rel_err(&f.reconstruct(), &a) < 1e-10);

        let b = random_matrix(6, 2, 1).matmul(&random_matrix(2, 5, 2));
        let f = svd(&b).unwrap();
        assert!(f.sigma[2] < 1e-12 * f.sigma[0]);
        assert!(f.u.orthonormality_defect() < 1e-8);
        assert!(f.v.orthonormality_defect() < 1e-8);
        assert!(rel_err(&f.reconstruct(), &b) < 1e-10);

        let z = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(z.sigma, vec![0.0, 0.0]);
        assert!(z.u.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Matrix::identity(2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn deterministic_and_sign_normalized() {
        let a = random_matrix(8, 6, 3);
        let f1 = svd(&a).unwrap();
        let f2 = svd(&a).unwrap();
        assert_eq!(f1, f2);
        for j in 0..f1.rank() {
            let col = f1.u.column(j);
            let pivot = col.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            assert!(pivot >= 0.0);
        }
    }

    #[test]
    fn energy_examples() {
        assert_eq!(rank_for_energy(&[3.0, 2.0, 1.0], 0.5).unwrap(), 1);
        assert_eq!(rank_for_energy(&[3.0, 2.0, 1.0], 1.0).unwrap(), 3);
        assert_eq!(rank_for_energy(&[4.0, 0.0, 0.0], 0.9).unwrap(), 1);
        assert!(matches!(rank_for_energy(&[0.0, 0.0], 0.5), Err(Error::DegenerateSpectrum)));
        assert!(matches!(rank_for_energy(&[1.0], 0.0), Err(Error::InvalidEnergy(_))));
        assert!(matches!(rank_for_energy(&[1.0], 1.5), Err(Error::InvalidEnergy(_))));
        assert!(matches!(rank_for_energy(&[1.0], f64::NAN), Err(Error::InvalidEnergy(_))));
    }

    #[test]
    fn truncation_examples() {
        let a = random_matrix(6, 4, 17);
        let f = svd(&a).unwrap();
        let full = truncate(&f, 4).unwrap();
        assert!(rel_err(&full.product(), &a) < 1e-8);

        let two = truncate(&f, 2).unwrap();
        let expected = (f.sigma[2].powi(2) + f.sigma[3].powi(2)).sqrt();
        assert!((two.product().sub(&a).frobenius_norm() - expected).abs() < 1e-8);

        let d = svd(&Matrix::diag(&[3.0, 2.0])).unwrap();
        let one = truncate(&d, 1).unwrap();
        assert_eq!(one.product(), Matrix::from_rows(&[&[3.0, 0.0], &[0.0, 0.0]]));

        assert!(matches!(truncate(&f, 0), Err(Error::InvalidRank { .. })));
        assert!(matches!(truncate(&f, 5), Err(Error::InvalidRank { .. })));
    }

    #[test]
    fn speedup_examples() {
        assert_eq!(layer_speedup(1024, 1024, 256).unwrap(), 2.0);
        assert!((layer_speedup(100, 50, 10).unwrap() - 5000.0 / 1500.0).abs() < 1e-15);
        assert_eq!(layer_speedup(10, 10, 5).unwrap(), 1.0);
        assert!(layer_speedup(10, 10, 11).is_err());
        assert!(layer_speedup(10, 10, 0).is_err());
    }
}
