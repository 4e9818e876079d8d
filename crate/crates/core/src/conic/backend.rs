//! Clarabel adapter.

use std::f64::consts::SQRT_2;
use std::panic::{catch_unwind, AssertUnwindSafe};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{ConicProgram, ConicSolution, ConicStatus, Constraint, LinExpr};

/// Backend tolerances.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Largest scaled primal residual accepted as `optimal`.
    pub feasibility_tol: f64,
    /// Relative duality gap.
    pub gap_tol: f64,
    pub max_iter: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { feasibility_tol: 1e-7, gap_tol: 1e-6, max_iter: 200 }
    }
}

struct Assembled {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl Assembled {
    /// Appends the row `s = scale · e`, i.e. `A = −scale · coeffs`, `b = scale · c₀`.
    fn push_row(&mut self, e: &LinExpr, scale: f64) {
        let row = self.b.len();
        // Round-off entries far below the row's scale only hurt conditioning.
        let floor = PRUNE * e.terms.iter().map(|(_, c)| c.abs()).fold(0.0, f64::max);
        for (v, c) in e.terms.iter().filter(|(_, c)| c.abs() > floor) {
            self.rows.push(row);
            self.cols.push(v.0);
            self.vals.push(-scale * c);
        }
        self.b.push(scale * e.constant);
    }
}

const PRUNE: f64 = 1e-12;

fn assemble(p: &ConicProgram) -> Assembled {
    let mut a = Assembled { rows: vec![], cols: vec![], vals: vec![], b: vec![], cones: vec![] };
    // Group the scalar cones so Clarabel sees few large blocks.
    let mut zeros = Vec::new();
    let mut nonneg = Vec::new();
    for c in &p.constraints {
        match c {
            Constraint::Zero(e) => zeros.push(e),
            Constraint::NonNeg(e) => nonneg.push(e),
            _ => {}
        }
    }
    if !zeros.is_empty() {
        zeros.iter().for_each(|e| a.push_row(e, 1.0));
        a.cones.push(SupportedConeT::ZeroConeT(zeros.len()));
    }
    if !nonneg.is_empty() {
        nonneg.iter().for_each(|e| a.push_row(e, 1.0));
        a.cones.push(SupportedConeT::NonnegativeConeT(nonneg.len()));
    }
    for c in &p.constraints {
        match c {
            Constraint::SecondOrder(v) => {
                v.iter().for_each(|e| a.push_row(e, 1.0));
                a.cones.push(SupportedConeT::SecondOrderConeT(v.len()));
            }
            Constraint::Exp(v) => {
                v.iter().for_each(|e| a.push_row(e, 1.0));
                a.cones.push(SupportedConeT::ExponentialConeT());
            }
            Constraint::Psd { dim, upper } => {
                let mut idx = 0;
                for j in 0..*dim {
                    for i in 0..=j {
                        a.push_row(&upper[idx], if i == j { 1.0 } else { SQRT_2 });
                        idx += 1;
                    }
                }
                a.cones.push(SupportedConeT::PSDTriangleConeT(*dim));
            }
            Constraint::Zero(_) | Constraint::NonNeg(_) => {}
        }
    }
    a
}

fn failure(message: String) -> ConicSolution {
    ConicSolution {
        status: ConicStatus::Inaccurate,
        x: Vec::new(),
        objective: f64::NAN,
        residual: f64::INFINITY,
        iterations: 0,
        message,
    }
}

/// Solves `p`. Backend failures are reported as [`ConicStatus::Inaccurate`]
/// with a message; this function does not panic.
pub fn solve(p: &ConicProgram, opts: &SolveOptions) -> ConicSolution {
    let n = p.n_vars();
    if let Err(msg) = p.check() {
        return failure(msg);
    }
    let asm = assemble(p);
    let m = asm.b.len();
    let objective = p.objective.compact();
    let mut q = vec![0.0; n];
    for (v, c) in &objective.terms {
        q[v.0] = -c;
    }
    let a = CscMatrix::new_from_triplets(m, n, asm.rows, asm.cols, asm.vals);
    let pmat = CscMatrix::zeros((n, n));
    let settings = match DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(opts.max_iter)
        .tol_feas(opts.feasibility_tol * 0.1)
        .tol_gap_rel(opts.gap_tol * 0.01)
        .tol_gap_abs(opts.gap_tol * 0.01)
        .max_threads(1)
        .build()
    {
        Ok(s) => s,
        Err(e) => return failure(format!("settings: {e}")),
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        let mut solver = DefaultSolver::new(&pmat, &q, &a, &asm.b, &asm.cones, settings)
            .map_err(|e| format!("setup: {e:?}"))?;
        solver.solve();
        Ok::<_, String>((solver.solution.status, solver.solution.x.clone(), solver.solution.iterations))
    }));
    let (status, x, iterations) = match outcome {
        Ok(Ok(r)) => r,
        Ok(Err(msg)) => return failure(msg),
        Err(_) => return failure("backend panicked".into()),
    };
    let mapped = match status {
        SolverStatus::Solved => ConicStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => ConicStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => ConicStatus::Unbounded,
        _ => ConicStatus::Inaccurate,
    };
    let usable = matches!(mapped, ConicStatus::Optimal | ConicStatus::Inaccurate)
        && x.len() == n
        && x.iter().all(|v| v.is_finite());
    if !usable {
        return ConicSolution {
            status: mapped,
            x: Vec::new(),
            objective: f64::NAN,
            residual: f64::INFINITY,
            iterations,
            message: format!("{status:?}"),
        };
    }
    let residual = p.max_residual(&x);
    let tagged = if mapped == ConicStatus::Optimal && residual > opts.feasibility_tol {
        ConicStatus::Inaccurate
    } else {
        mapped
    };
    ConicSolution {
        status: tagged,
        objective: objective.eval(&x),
        residual,
        iterations,
        message: format!("{status:?}"),
        x,
    }
}
