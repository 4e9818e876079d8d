//! Rank-one recovery from relaxed covariance matrices.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::types::{c64, CMatrix, CVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Rank1Error {
    #[error("matrix is {rows}×{cols}, not square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NotFinite,
    #[error("matrix is not Hermitian (asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:.3e})")]
    NotPsd(f64),
}

/// How a rank-one beam set was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rank1Method {
    /// Principal eigenvector of every covariance.
    Evd,
    /// Best of Gaussian samples drawn from the covariances.
    Randomization,
}

/// Eigen-decomposition of a validated PSD Hermitian matrix, with
/// eigenvalues sorted descending and tiny negatives clipped to zero.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

impl PsdFactor {
    pub fn new(m: &CMatrix) -> Result<Self, Rank1Error> {
        Self::with_tolerance(m, 0.0)
    }

    /// Like [`PsdFactor::new`], also accepting eigenvalues down to
    /// `-abs_tol`, as solver output of nearly zero matrices has.
    pub fn with_tolerance(m: &CMatrix, abs_tol: f64) -> Result<Self, Rank1Error> {
        Self::factor(m, abs_tol, false)
    }

    /// Nearest PSD matrix in Frobenius norm: negative eigenvalues of any
    /// size are clipped. Non-Hermitian input is still rejected.
    pub fn projected(m: &CMatrix, abs_tol: f64) -> Result<Self, Rank1Error> {
        Self::factor(m, abs_tol, true)
    }

    fn factor(m: &CMatrix, abs_tol: f64, project: bool) -> Result<Self, Rank1Error> {
        let (r, c) = m.shape();
        if r != c {
            return Err(Rank1Error::NotSquare { rows: r, cols: c });
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Rank1Error::NotFinite);
        }
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let asym = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if asym > (1e-8 * scale).max(abs_tol) {
            return Err(Rank1Error::NotHermitian(asym));
        }
        if r == 0 {
            return Ok(Self { eigenvalues: Vec::new(), eigenvectors: m.clone() });
        }
        let herm = (m + m.adjoint()) * c64(0.5, 0.0);
        let eig = herm.symmetric_eigen();
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let low = eig.eigenvalues[order[r - 1]];
        if !project && low < -(1e-6 * top.max(scale)).max(abs_tol) {
            return Err(Rank1Error::NotPsd(low));
        }
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let eigenvectors = CMatrix::from_fn(r, r, |i, j| eig.eigenvectors[(i, order[j])]);
        Ok(Self { eigenvalues, eigenvectors })
    }

    /// `λ₁ / tr`, or 1 for the zero matrix.
    pub fn dominance(&self) -> f64 {
        let tr: f64 = self.eigenvalues.iter().sum();
        if tr <= 0.0 {
            1.0
        } else {
            self.eigenvalues[0] / tr
        }
    }

    /// `√λ₁ v₁`.
    pub fn principal(&self) -> CVector {
        let n = self.eigenvalues.len();
        if n == 0 {
            return CVector::zeros(0);
        }
        self.eigenvectors.column(0) * c64(self.eigenvalues[0].sqrt(), 0.0)
    }

    /// `ξ = U Λ^{1/2} z` with `z ~ CN(0, I)`, so that `E[ξξᴴ] = M`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CVector {
        let n = self.eigenvalues.len();
        let mut xi = CVector::zeros(n);
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            if lam <= 0.0 {
                continue;
            }
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = c64(re, im) * (0.5 * lam).sqrt();
            xi += self.eigenvectors.column(j) * z;
        }
        xi
    }
}

/// Rank-one factor of one covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Result {
    pub vector: CVector,
    /// `λ_max / tr`.
    pub dominance: f64,
    /// `Evd` when the dominance reaches the threshold, otherwise the
    /// matrix is marked for randomization and `vector` is the EVD fallback.
    pub method: Rank1Method,
}

/// Principal-eigenvector extraction with the given dominance threshold.
pub fn extract_rank1(m: &CMatrix, threshold: f64) -> Result<Rank1Result, Rank1Error> {
    let f = PsdFactor::new(m)?;
    let dominance = f.dominance();
    let method = if dominance >= threshold { Rank1Method::Evd } else { Rank1Method::Randomization };
    Ok(Rank1Result { vector: f.principal(), dominance, method })
}

/// Principal component of a PSD Hermitian matrix and its dominance.
pub fn principal_component(m: &CMatrix) -> Result<(CVector, f64), Rank1Error> {
    let f = PsdFactor::new(m)?;
    Ok((f.principal(), f.dominance()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_one_input_is_recovered() {
        let v = CVector::from_vec(vec![c64(1.0, 0.5), c64(-0.3, 2.0), c64(0.0, -1.0)]);
        let m = &v * v.adjoint();
        let (p, dom) = principal_component(&m).unwrap();
        assert!((dom - 1.0).abs() < 1e-12);
        assert!((&p * p.adjoint() - &m).norm() < 1e-10);
    }

    #[test]
    fn diagonal_rank_one() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![c64(1.0, 0.0), c64(0.0, 0.0)]));
        let r = extract_rank1(&m, 0.99).unwrap();
        assert_eq!(r.method, Rank1Method::Evd);
        assert!((r.dominance - 1.0).abs() < 1e-15);
        assert!((r.vector[0].norm() - 1.0).abs() < 1e-15 && r.vector[1].norm() < 1e-15);
    }

    #[test]
    fn half_identity_is_marked_for_randomization() {
        let r = extract_rank1(&(CMatrix::identity(2, 2) * c64(0.5, 0.0)), 0.99).unwrap();
        assert!((r.dominance - 0.5).abs() < 1e-12);
        assert_eq!(r.method, Rank1Method::Randomization);
    }

    #[test]
    fn random_outer_product_recovered_up_to_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = CVector::from_fn(6, |_, _| c64(rng.sample(StandardNormal), rng.sample(StandardNormal)));
            let r = extract_rank1(&(&q * q.adjoint()), 0.99).unwrap();
            let phase = q.dotc(&r.vector);
            let phase = phase / c64(phase.norm(), 0.0);
            assert!((&r.vector - &q * phase).norm() < 1e-8);
        }
    }

    #[test]
    fn identity_has_low_dominance() {
        let (_, dom) = principal_component(&CMatrix::identity(4, 4)).unwrap();
        assert!((dom - 0.25).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        let m = CMatrix::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0), c64(1.0, 0.0)]);
        assert!(matches!(PsdFactor::new(&m), Err(Rank1Error::NotHermitian(_))));
        let m = CMatrix::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(-1.0, 0.0)]);
        assert!(matches!(PsdFactor::new(&m), Err(Rank1Error::NotPsd(_))));
        assert!(matches!(PsdFactor::new(&CMatrix::zeros(2, 3)), Err(Rank1Error::NotSquare { .. })));
        let mut m = CMatrix::identity(2, 2);
        m[(0, 0)] = c64(f64::NAN, 0.0);
        assert_eq!(PsdFactor::new(&m).unwrap_err(), Rank1Error::NotFinite);
        let tiny = CMatrix::from_diagonal(&CVector::from_vec(vec![c64(1e-10, 0.0), c64(-1e-9, 0.0)]));
        assert!(PsdFactor::new(&tiny).is_err());
        assert!(PsdFactor::with_tolerance(&tiny, 1e-7).is_ok());
        let indefinite = CMatrix::from_diagonal(&CVector::from_vec(vec![c64(2.0, 0.0), c64(-1.0, 0.0)]));
        let f = PsdFactor::projected(&indefinite, 1e-6).unwrap();
        assert_eq!(f.eigenvalues, vec![2.0, 0.0]);
    }

    #[test]
    fn samples_match_covariance_on_average() {
        let v = CVector::from_vec(vec![c64(1.0, 0.0), c64(0.0, 1.0)]);
        let m = &v * v.adjoint() + CMatrix::identity(2, 2) * c64(0.5, 0.0);
        let f = PsdFactor::new(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20000;
        let mut acc = CMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = f.sample(&mut rng);
            acc += &x * x.adjoint();
        }
        acc /= c64(n as f64, 0.0);
        assert!((acc - m).norm() < 0.05);
    }
}
