//! Complex Hermitian matrix variables over real cone programs.

use nalgebra::DMatrix;

use super::{ConicProgram, Constraint, LinExpr, Var};
use crate::types::{c64, CMatrix, CVector};

/// A `d × d` Hermitian variable stored as `d` real diagonal entries plus
/// the real and imaginary parts of the strict upper triangle.
#[derive(Debug, Clone)]
pub struct HermitianVar {
    dim: usize,
    diag: Vec<Var>,
    /// `(re, im)` of entry `(i, j)`, `i < j`, at `offdiag_index(i, j)`.
    offdiag: Vec<(Var, Var)>,
}

impl HermitianVar {
    pub fn new(p: &mut ConicProgram, name: &str, dim: usize) -> Self {
        let diag = (0..dim).map(|i| p.var(format!("{name}.re[{i},{i}]"))).collect();
        let mut offdiag = Vec::with_capacity(dim * dim.saturating_sub(1) / 2);
        for j in 0..dim {
            for i in 0..j {
                let re = p.var(format!("{name}.re[{i},{j}]"));
                let im = p.var(format!("{name}.im[{i},{j}]"));
                offdiag.push((re, im));
            }
        }
        Self { dim, diag, offdiag }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn offdiag_index(i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        j * (j - 1) / 2 + i
    }

    pub fn entry_re(&self, i: usize, j: usize) -> LinExpr {
        if i == j {
            self.diag[i].into()
        } else {
            let (a, b) = (i.min(j), i.max(j));
            self.offdiag[Self::offdiag_index(a, b)].0.into()
        }
    }

    pub fn entry_im(&self, i: usize, j: usize) -> LinExpr {
        if i == j {
            LinExpr::zero()
        } else if i < j {
            self.offdiag[Self::offdiag_index(i, j)].1.into()
        } else {
            -LinExpr::from(self.offdiag[Self::offdiag_index(j, i)].1)
        }
    }

    /// Real trace `Σ Xᵢᵢ`.
    pub fn trace(&self) -> LinExpr {
        self.diag.iter().map(|&v| LinExpr::from(v)).sum()
    }

    /// `tr(G X)` for Hermitian `G`, real by construction.
    pub fn inner(&self, g: &CMatrix) -> LinExpr {
        let mut e = LinExpr::zero();
        for i in 0..self.dim {
            e.add_term(self.diag[i], g[(i, i)].re);
        }
        for j in 0..self.dim {
            for i in 0..j {
                // G_ji X_ij + G_ij X_ji = 2 Re(G_ji X_ij).
                let gji = g[(j, i)];
                let (re, im) = self.offdiag[Self::offdiag_index(i, j)];
                e.add_term(re, 2.0 * gji.re);
                e.add_term(im, -2.0 * gji.im);
            }
        }
        e
    }

    /// `vᴴ X v`.
    pub fn quad_form(&self, v: &CVector) -> LinExpr {
        let mut e = LinExpr::zero();
        for i in 0..self.dim {
            e.add_term(self.diag[i], v[i].norm_sqr());
        }
        for j in 0..self.dim {
            for i in 0..j {
                let w = v[i].conj() * v[j];
                let (re, im) = self.offdiag[Self::offdiag_index(i, j)];
                e.add_term(re, 2.0 * w.re);
                e.add_term(im, -2.0 * w.im);
            }
        }
        e
    }

    /// PSD constraint on the real embedding `[[Re X, −Im X], [Im X, Re X]]`.
    pub fn psd(&self) -> Constraint {
        let d = self.dim;
        let n = 2 * d;
        let entry = |r: usize, c: usize| -> LinExpr {
            match (r < d, c < d) {
                (true, true) => self.entry_re(r, c),
                (false, false) => self.entry_re(r - d, c - d),
                (false, true) => self.entry_im(r - d, c),
                (true, false) => -self.entry_im(r, c - d),
            }
        };
        let mut upper = Vec::with_capacity(n * (n + 1) / 2);
        for c in 0..n {
            for r in 0..=c {
                upper.push(entry(r, c));
            }
        }
        Constraint::Psd { dim: n, upper }
    }

    /// Reads `X` from a primal solution vector.
    pub fn value(&self, x: &[f64]) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            m[(i, i)] = c64(x[self.diag[i].0], 0.0);
        }
        for j in 0..self.dim {
            for i in 0..j {
                let (re, im) = self.offdiag[Self::offdiag_index(i, j)];
                m[(i, j)] = c64(x[re.0], x[im.0]);
                m[(j, i)] = c64(x[re.0], -x[im.0]);
            }
        }
        m
    }
}

/// `[[Re M, −Im M], [Im M, Re M]]`.
pub fn hermitian_to_real_embedding(m: &CMatrix) -> Result<DMatrix<f64>, String> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(format!("matrix is {}×{}, not square", n, m.ncols()));
    }
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if (m - m.adjoint()).iter().any(|z| z.norm() > 1e-12 * scale) {
        return Err("matrix is not Hermitian".into());
    }
    let mut e = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = m[(i, j)];
            e[(i, j)] = z.re;
            e[(n + i, n + j)] = z.re;
            e[(n + i, j)] = z.im;
            e[(i, n + j)] = -z.im;
        }
    }
    Ok(e)
}

/// Inverse of [`hermitian_to_real_embedding`], reading the left blocks.
pub fn hermitian_from_real_embedding(e: &DMatrix<f64>) -> CMatrix {
    let n = e.nrows() / 2;
    CMatrix::from_fn(n, n, |i, j| c64(e[(i, j)], e[(n + i, j)]))
}
