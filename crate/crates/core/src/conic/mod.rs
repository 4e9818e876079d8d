//! Solver-agnostic cone programs.
//!
//! A [`ConicProgram`] maximizes an affine objective over real variables
//! subject to affine expressions lying in zero, nonnegative, second-order,
//! exponential and PSD cones. Complex Hermitian matrix variables are handled
//! by [`HermitianVar`], which stores `d²` real parameters and constrains the
//! real embedding `[[Re X, −Im X], [Im X, Re X]]` to be PSD.
//!
//! Programs are solved by the Clarabel interior-point solver in
//! [`backend`], and can be dumped to a line-oriented text form with
//! [`ConicProgram::to_text`].

mod backend;
mod hermitian;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

pub use backend::{solve, SolveOptions};
pub use hermitian::{hermitian_from_real_embedding, hermitian_to_real_embedding, HermitianVar};

/// Handle to a scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Affine expression `Σ cᵢ xᵢ + c₀`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn term(v: Var, c: f64) -> Self {
        Self { terms: vec![(v, c)], constant: 0.0 }
    }

    pub fn add_term(&mut self, v: Var, c: f64) -> &mut Self {
        if c != 0.0 {
            self.terms.push((v, c));
        }
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * x[v.0]).sum::<f64>()
    }

    /// Merges repeated variables and drops zero coefficients.
    pub fn compact(&self) -> Self {
        let mut map: BTreeMap<Var, f64> = BTreeMap::new();
        for (v, c) in &self.terms {
            *map.entry(*v).or_insert(0.0) += c;
        }
        Self {
            terms: map.into_iter().filter(|(_, c)| *c != 0.0).collect(),
            constant: self.constant,
        }
    }

    /// `|c₀| + Σ |cᵢ xᵢ|`, the magnitude used to scale residuals.
    fn magnitude(&self, x: &[f64]) -> f64 {
        self.constant.abs() + self.terms.iter().map(|(v, c)| (c * x[v.0]).abs()).sum::<f64>()
    }
}

impl From<Var> for LinExpr {
    fn from(v: Var) -> Self {
        LinExpr::term(v, 1.0)
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl AddAssign<LinExpr> for LinExpr {
    fn add_assign(&mut self, rhs: LinExpr) {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl SubAssign<LinExpr> for LinExpr {
    fn sub_assign(&mut self, rhs: LinExpr) {
        *self += -rhs;
    }
}

impl<T: Into<LinExpr>> Add<T> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: T) -> LinExpr {
        self += rhs.into();
        self
    }
}

impl<T: Into<LinExpr>> Sub<T> for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: T) -> LinExpr {
        self -= rhs.into();
        self
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, rhs: f64) -> LinExpr {
        for t in &mut self.terms {
            t.1 *= rhs;
        }
        self.constant *= rhs;
        self
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl std::iter::Sum for LinExpr {
    fn sum<I: Iterator<Item = LinExpr>>(iter: I) -> LinExpr {
        iter.fold(LinExpr::zero(), |a, b| a + b)
    }
}

/// Cone membership constraint on affine expressions.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `e = 0`.
    Zero(LinExpr),
    /// `e ≥ 0`.
    NonNeg(LinExpr),
    /// `e₀ ≥ ‖(e₁, …, eₙ)‖₂`.
    SecondOrder(Vec<LinExpr>),
    /// `(x, y, z)` with `y e^{x/y} ≤ z`, `y > 0`.
    Exp([LinExpr; 3]),
    /// Symmetric `dim × dim` matrix is PSD; `upper` lists the upper
    /// triangle column by column (`(0,0), (0,1), (1,1), (0,2), …`).
    Psd { dim: usize, upper: Vec<LinExpr> },
}

impl Constraint {
    /// Constrains `e ≤ 0`.
    pub fn le_zero(e: LinExpr) -> Self {
        Constraint::NonNeg(-e)
    }

    fn kind(&self) -> &'static str {
        match self {
            Constraint::Zero(_) => "zero",
            Constraint::NonNeg(_) => "nonneg",
            Constraint::SecondOrder(_) => "soc",
            Constraint::Exp(_) => "exp",
            Constraint::Psd { .. } => "psd",
        }
    }

    fn exprs(&self) -> &[LinExpr] {
        match self {
            Constraint::Zero(e) | Constraint::NonNeg(e) => std::slice::from_ref(e),
            Constraint::SecondOrder(v) => v,
            Constraint::Exp(v) => v,
            Constraint::Psd { upper, .. } => upper,
        }
    }

    /// Violation at `x`, relative to the magnitude of the expressions.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let scale = 1.0 + self.exprs().iter().map(|e| e.magnitude(x)).fold(0.0, f64::max);
        let raw = match self {
            Constraint::Zero(e) => e.eval(x).abs(),
            Constraint::NonNeg(e) => (-e.eval(x)).max(0.0),
            Constraint::SecondOrder(v) => {
                let head = v[0].eval(x);
                let tail = v[1..].iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
                (tail - head).max(0.0)
            }
            Constraint::Exp([ex, ey, ez]) => {
                let (a, b, c) = (ex.eval(x), ey.eval(x), ez.eval(x));
                if b > 0.0 {
                    let lhs = b * (a / b).exp();
                    (lhs - c).max(0.0).max((-c).max(0.0))
                } else {
                    (-b).max(0.0) + a.max(0.0) + (-c).max(0.0)
                }
            }
            Constraint::Psd { dim, upper } => {
                let m = symmetric_from_upper(*dim, &upper.iter().map(|e| e.eval(x)).collect::<Vec<_>>());
                let min = m.symmetric_eigenvalues().min();
                (-min).max(0.0)
            }
        };
        raw / scale
    }
}

/// Rebuilds a symmetric matrix from its column-major upper triangle.
pub fn symmetric_from_upper(dim: usize, upper: &[f64]) -> nalgebra::DMatrix<f64> {
    let mut m = nalgebra::DMatrix::zeros(dim, dim);
    let mut idx = 0;
    for j in 0..dim {
        for i in 0..=j {
            m[(i, j)] = upper[idx];
            m[(j, i)] = upper[idx];
            idx += 1;
        }
    }
    m
}

/// Linear-objective cone program (maximization).
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    names: Vec<String>,
    pub objective: LinExpr,
    pub constraints: Vec<Constraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&mut self, name: impl Into<String>) -> Var {
        self.names.push(name.into());
        Var(self.names.len() - 1)
    }

    pub fn vars(&mut self, name: &str, n: usize) -> Vec<Var> {
        (0..n).map(|i| self.var(format!("{name}[{i}]"))).collect()
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, v: Var) -> &str {
        &self.names[v.0]
    }

    pub fn maximize(&mut self, objective: LinExpr) {
        self.objective = objective;
    }

    pub fn add(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// `lhs ≥ rhs`.
    pub fn ge(&mut self, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.add(Constraint::NonNeg(lhs.into() - rhs.into()));
    }

    /// `lhs ≤ rhs`.
    pub fn le(&mut self, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.add(Constraint::NonNeg(rhs.into() - lhs.into()));
    }

    /// `lhs = rhs`.
    pub fn eq(&mut self, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.add(Constraint::Zero(lhs.into() - rhs.into()));
    }

    /// `e^{x} ≤ z`.
    pub fn exp_le(&mut self, x: impl Into<LinExpr>, z: impl Into<LinExpr>) {
        self.add(Constraint::Exp([x.into(), LinExpr::constant(1.0), z.into()]));
    }

    /// Checks that every referenced variable is declared and cone sizes fit.
    pub fn check(&self) -> Result<(), String> {
        let n = self.n_vars();
        let in_range = |e: &LinExpr| e.terms.iter().all(|(v, _)| v.0 < n);
        if !in_range(&self.objective) {
            return Err("objective references an undeclared variable".into());
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.exprs().iter().all(in_range) {
                return Err(format!("constraint {i} references an undeclared variable"));
            }
            match c {
                Constraint::SecondOrder(v) if v.is_empty() => {
                    return Err(format!("constraint {i}: empty second-order cone"))
                }
                Constraint::Psd { dim, upper } if upper.len() != dim * (dim + 1) / 2 => {
                    return Err(format!(
                        "constraint {i}: PSD cone of dimension {dim} needs {} entries, got {}",
                        dim * (dim + 1) / 2,
                        upper.len()
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Largest scaled constraint violation at `x`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.residual(x)).fold(0.0, f64::max)
    }

    /// Text form, one item per line:
    ///
    /// ```text
    /// var <index> <name>
    /// maximize <expr>
    /// zero <expr> | nonneg <expr> | soc <expr>; <expr>; ...
    /// exp <expr>; <expr>; <expr> | psd <dim> <expr>; <expr>; ...
    /// ```
    ///
    /// where `<expr>` is a space-separated list of `<coef>*x<index>` terms
    /// followed by a constant.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.names.iter().enumerate() {
            let _ = writeln!(out, "var {i} {n}");
        }
        let _ = writeln!(out, "maximize {}", expr_text(&self.objective));
        for c in &self.constraints {
            let body = c.exprs().iter().map(expr_text).collect::<Vec<_>>().join("; ");
            match c {
                Constraint::Psd { dim, .. } => {
                    let _ = writeln!(out, "psd {dim} {body}");
                }
                _ => {
                    let _ = writeln!(out, "{} {body}", c.kind());
                }
            }
        }
        out
    }
}

fn expr_text(e: &LinExpr) -> String {
    let e = e.compact();
    let mut parts: Vec<String> = e.terms.iter().map(|(v, c)| format!("{c:+e}*x{}", v.0)).collect();
    parts.push(format!("{:+e}", e.constant));
    parts.join(" ")
}

/// Outcome class of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Inaccurate,
}

/// Status-tagged primal solution.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    /// Objective of the maximization at `x`.
    pub objective: f64,
    /// Largest scaled primal constraint violation at `x`.
    pub residual: f64,
    pub iterations: u32,
    /// Backend status or failure message.
    pub message: String,
}

impl ConicSolution {
    pub fn value(&self, e: &LinExpr) -> f64 {
        e.eval(&self.x)
    }

    pub fn var(&self, v: Var) -> f64 {
        self.x[v.0]
    }

    pub fn is_usable(&self) -> bool {
        matches!(self.status, ConicStatus::Optimal | ConicStatus::Inaccurate) && !self.x.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lp_upper_bound() {
        let mut p = ConicProgram::new();
        let x = p.var("x");
        p.le(x, 3.0);
        p.ge(x, 0.0);
        p.maximize(x.into());
        let s = solve(&p, &SolveOptions::default());
        assert_eq!(s.status, ConicStatus::Optimal);
        assert!((s.var(x) - 3.0).abs() < 1e-7);
        assert!(s.residual <= 1e-7);
    }

    #[test]
    fn eigenvalue_program() {
        let mut p = ConicProgram::new();
        let h = HermitianVar::new(&mut p, "X", 2);
        p.add(h.psd());
        p.le(h.trace(), 1.0);
        let c = crate::types::CMatrix::from_diagonal(&nalgebra::dvector![
            crate::types::c64(2.0, 0.0),
            crate::types::c64(1.0, 0.0)
        ]);
        p.maximize(h.inner(&c));
        let s = solve(&p, &SolveOptions::default());
        assert_eq!(s.status, ConicStatus::Optimal);
        assert!((s.objective - 2.0).abs() < 1e-6);
        let x = h.value(&s.x);
        assert!((x[(0, 0)].re - 1.0).abs() < 1e-6);
        assert!(x[(1, 1)].re.abs() < 1e-6);
        assert!(x[(0, 1)].norm() < 1e-6);
    }

    #[test]
    fn exponential_scalar() {
        let mut p = ConicProgram::new();
        let x = p.var("x");
        p.exp_le(x, 5.0);
        p.maximize(x.into());
        let s = solve(&p, &SolveOptions::default());
        assert_eq!(s.status, ConicStatus::Optimal);
        assert!((s.var(x) - 5f64.ln()).abs() < 1e-6, "{}", s.var(x));
    }

    #[test]
    fn second_order_cone() {
        // maximize x + y s.t. ‖(x, y)‖ ≤ 1 → √2.
        let mut p = ConicProgram::new();
        let x = p.var("x");
        let y = p.var("y");
        p.add(Constraint::SecondOrder(vec![1.0.into(), x.into(), y.into()]));
        p.maximize(LinExpr::from(x) + y);
        let s = solve(&p, &SolveOptions::default());
        assert_eq!(s.status, ConicStatus::Optimal);
        assert!((s.objective - 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn off_diagonal_psd_entries() {
        // maximize the (0,2) entry of a 3×3 PSD matrix with unit diagonal → 1.
        let mut p = ConicProgram::new();
        let v = p.vars("m", 6);
        p.add(Constraint::Psd { dim: 3, upper: v.iter().map(|&x| x.into()).collect() });
        for &d in &[v[0], v[2], v[5]] {
            p.eq(d, 1.0);
        }
        p.maximize(v[3].into());
        let s = solve(&p, &SolveOptions::default());
        assert_eq!(s.status, ConicStatus::Optimal);
        assert!((s.var(v[3]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn complex_off_diagonal() {
        // maximize Im X₀₁ with unit diagonal: optimum 1 at X = [[1, i], [−i, 1]].
        let mut p = ConicProgram::new();
        let h = HermitianVar::new(&mut p, "X", 2);
        p.add(h.psd());
        p.eq(h.entry_re(0, 0), 1.0);
        p.eq(h.entry_re(1, 1), 1.0);
        p.maximize(h.entry_im(0, 1));
        let s = solve(&p, &SolveOptions::default());
        assert!((s.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut p = ConicProgram::new();
        let x = p.var("x");
        p.ge(x, 2.0);
        p.le(x, 1.0);
        p.maximize(x.into());
        assert_eq!(solve(&p, &SolveOptions::default()).status, ConicStatus::Infeasible);

        let mut q = ConicProgram::new();
        let y = q.var("y");
        q.ge(y, 0.0);
        q.maximize(y.into());
        assert_eq!(solve(&q, &SolveOptions::default()).status, ConicStatus::Unbounded);
    }

    #[test]
    fn invalid_program_is_reported() {
        let mut p = ConicProgram::new();
        let x = p.var("x");
        p.add(Constraint::Psd { dim: 2, upper: vec![x.into()] });
        let s = solve(&p, &SolveOptions::default());
        assert_eq!(s.status, ConicStatus::Inaccurate);
        assert!(s.message.contains("PSD"));
    }

    #[test]
    fn solving_twice_is_deterministic() {
        let mut p = ConicProgram::new();
        let h = HermitianVar::new(&mut p, "X", 3);
        p.add(h.psd());
        p.le(h.trace(), 2.0);
        let v = crate::types::CVector::from_fn(3, |i, _| crate::types::c64(1.0 + i as f64, -0.5 * i as f64));
        p.maximize(h.quad_form(&v));
        let a = solve(&p, &SolveOptions::default());
        let b = solve(&p, &SolveOptions::default());
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn text_dump_lists_every_item() {
        let mut p = ConicProgram::new();
        let x = p.var("x");
        let y = p.var("y");
        p.le(x, 3.0);
        p.exp_le(y, LinExpr::from(x) * 2.0);
        p.maximize(LinExpr::from(x) + y);
        let text = p.to_text();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "var 0 x");
        assert!(lines[2].starts_with("maximize +1e0*x0 +1e0*x1"));
        assert!(lines[3].starts_with("nonneg -1e0*x0 +3e0"));
        assert!(lines[4].starts_with("exp +1e0*x1 +0e0; +1e0; +2e0*x0"));
    }
}
