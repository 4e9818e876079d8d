//! UAV horizontal placement by successive convex approximation.
//!
//! With beams, association and common-rate split fixed, each iteration
//! builds a convex subproblem around the current positions `o^υ`:
//!
//! * the private rate of CS `k` is replaced by its first-order expansion
//!   `A + cᵀ(o_u − o_u^υ)` in the serving UAV position,
//! * the QoS requirement becomes a ball around `q_k` whose squared radius
//!   is given by [`qos_radius_bound`],
//! * the sensing SNR requirement is linearized with [`sensing_taylor`],
//! * the squared distances from interfering UAVs to CSs they do not serve
//!   are held at their expansion values `r̂`, and the linearized distance
//!   may not drop below them, so the modeled interference stays an upper
//!   bound on the true one,
//! * an optional disc trust region bounds each step.
//!
//! The candidate step is accepted only after exact re-evaluation through
//! [`crate::rates`]; otherwise it is halved a few times before giving up.
//!
//! The rate surrogate generalizes the all-ones small-scale fading of the
//! LoS model to any fixed `h̃_{u,k}`: every `|𝟙p|²` becomes `|h̃ᴴp|²`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::channel::{small_scale, steering_tx};
use crate::conic::{solve, ConicProgram, ConicStatus, Constraint, LinExpr, SolveOptions, Var};
use crate::rates::{BeamformingState, Evaluator, RateModel, RateReport};
use crate::scenario::Scenario;
use crate::types::{inner_sq, CMatrix, CVector, Point};

/// Tuning of the placement loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentOptions {
    /// Stop when the relative objective change falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Radius of the per-step disc around `o_u^υ`, in meters.
    pub trust_region: Option<f64>,
    /// Keep each interfering UAV at least as far (to first order) from the
    /// CSs it does not serve as at the expansion point.
    pub hold_interference_distance: bool,
    /// Number of step halvings tried when a candidate is rejected.
    pub backtracking_steps: usize,
    /// Relative violation accepted as feasible.
    pub feasibility_tol: f64,
    /// Re-solves per iteration with a larger sensing curvature term after a
    /// step falls short of the sensing threshold.
    pub curvature_updates: usize,
    pub solver: SolveOptions,
}

impl Default for DeploymentOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 30,
            trust_region: Some(50.0),
            hold_interference_distance: true,
            backtracking_steps: 8,
            feasibility_tol: 1e-6,
            curvature_updates: 4,
            solver: SolveOptions::default(),
        }
    }
}

/// Private-rate surrogate of one CS:
/// `R̃ = b log₂(1 + S / (I + Ψ r²(o_u, q_k)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTerms {
    pub cs: usize,
    pub serving: usize,
    /// `|h̃_{u,k}ᴴ p_{u,k}|²`.
    pub signal: f64,
    /// Interference from the serving UAV's other streams.
    pub intra: f64,
    /// `Σ_{i≠u} |h̃_{i,k}ᴴ p|² / r̂_{i,k} + σ²/ε₀`.
    pub psi: f64,
    pub bandwidth: f64,
    pub q: Point,
}

/// Builds the surrogate terms of every CS at `positions`, with `r̂` set to
/// the squared distances at those positions.
pub fn rate_terms(
    s: &Scenario,
    ev: &Evaluator<'_>,
    model: &RateModel,
    positions: &[Point],
    beams: &BeamformingState,
) -> Vec<RateTerms> {
    let tilde = |u: usize, k: usize| small_scale(s, ev.mode, &positions[u], u, k, ev.seed);
    model
        .links
        .iter()
        .enumerate()
        .map(|(k, link)| {
            let u = link.serving;
            let q = s.cs_positions[k];
            let own = tilde(u, k);
            let signal = beams.uavs[u].private_of(k).map_or(0.0, |p| inner_sq(&own, p));
            let mut intra = 0.0;
            let mut inter = 0.0;
            for &(i, stream) in &link.private_interference {
                let Some(p) = beams.uavs[i].stream(stream) else { continue };
                if i == u {
                    intra += inner_sq(&own, p);
                } else {
                    inter += inner_sq(&tilde(i, k), p) / s.uav_range_sq(&positions[i], &q);
                }
            }
            RateTerms {
                cs: k,
                serving: u,
                signal,
                intra,
                psi: inter + s.noise_power / s.eps0,
                bandwidth: link.private_bandwidth,
                q,
            }
        })
        .collect()
}

/// `R̃_k^p` at serving position `o`.
pub fn surrogate_rate(t: &RateTerms, o: &Point, altitude: f64) -> f64 {
    let r2 = (o - t.q).norm_squared() + altitude * altitude;
    crate::rates::rate(t.bandwidth, t.signal / (t.intra + t.psi * r2))
}

/// `(A, c)`: value and gradient of [`surrogate_rate`] at `o`.
pub fn taylor_private_rate(t: &RateTerms, o: &Point, altitude: f64) -> (f64, Vector2<f64>) {
    let r2 = (o - t.q).norm_squared() + altitude * altitude;
    let c_den = t.intra + t.psi * r2;
    let d_den = t.signal + c_den;
    let a = surrogate_rate(t, o, altitude);
    let grad = (o - t.q) * (-2.0 * t.bandwidth * std::f64::consts::LOG2_E * t.signal * t.psi / (c_den * d_den));
    (a, grad)
}

/// Squared horizontal radius around `q_k` inside which
/// `C_k + R̃_k^p ≥ R_k^th`. `None` when the common share alone meets the
/// threshold and the constraint is dropped. A negative value means no
/// position satisfies it at this linearization.
pub fn qos_radius_bound(t: &RateTerms, common: f64, threshold: f64, altitude: f64) -> Option<f64> {
    let need = threshold - common;
    if need <= 0.0 {
        return None;
    }
    let denom = (need / t.bandwidth).exp2() - 1.0;
    Some((t.signal / denom - t.intra) / t.psi - altitude * altitude)
}

/// `R_u = P_u P_uᴴ`.
pub fn transmit_covariance(beams: &BeamformingState, u: usize) -> CMatrix {
    let b = &beams.uavs[u];
    let nt = b.common.len();
    let mut r = CMatrix::zeros(nt, nt);
    for p in b.columns() {
        r += p * p.adjoint();
    }
    r
}

/// `tr(R A(o, q₀)) = a(o,q₀)ᴴ R a(o,q₀)`.
pub fn sensing_trace(r: &CMatrix, o: &Point, s: &Scenario) -> f64 {
    let a: CVector = steering_tx(o, &s.ts_position, s.uav_altitude, r.nrows());
    (a.adjoint() * r * &a)[(0, 0)].re
}

/// `F = ∂ tr(R A(o, q₀)) / ∂o`, from the entrywise magnitude/phase form.
pub fn sensing_trace_gradient(r: &CMatrix, o: &Point, s: &Scenario) -> Vector2<f64> {
    let h = s.uav_altitude;
    let d = o - s.ts_position;
    let rr = (d.norm_squared() + h * h).sqrt();
    let n = r.nrows();
    let mut acc = 0.0;
    for q in 0..n {
        for p in 0..q {
            let z = r[(p, q)];
            let m = (q - p) as f64;
            acc += z.norm() * (z.arg() + std::f64::consts::PI * m * h / rr).sin() * m;
        }
    }
    d * (2.0 * std::f64::consts::PI * acc * h / rr.powi(3))
}

/// `(H_u, e_u)`: value and gradient of `tr(R A(o,q₀)) / r²(o,q₀)` at `o`.
pub fn sensing_taylor(r: &CMatrix, o: &Point, s: &Scenario) -> (f64, Vector2<f64>) {
    sensing_taylor_with(r, o, s, 1.0)
}

/// [`sensing_taylor`] with the sign of `e_u` multiplied by `sign`; the
/// self-test uses `-1` to confirm the gradient check catches it.
pub fn sensing_taylor_with(r: &CMatrix, o: &Point, s: &Scenario, sign: f64) -> (f64, Vector2<f64>) {
    let r2 = s.uav_range_sq(o, &s.ts_position);
    let tr = sensing_trace(r, o, s);
    let f = sensing_trace_gradient(r, o, s);
    let e = (f * r2 - (o - s.ts_position) * (2.0 * tr)) / (r2 * r2);
    (tr / r2, e * sign)
}

/// `r²(o₀,q₀) σ² γ̄ / β₀`, the right-hand side of the sensing constraint
/// written in terms of `Σ_u tr(R_u A_u)/r_u²`.
pub fn sensing_requirement(s: &Scenario) -> f64 {
    s.sensing_threshold / s.sensing_coefficient()
}

/// Variable handles of one placement subproblem.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub program: ConicProgram,
    pub positions: Vec<[Var; 2]>,
    pub rates: Vec<Var>,
    /// CSs whose QoS ball was dropped.
    pub dropped_balls: Vec<usize>,
    /// Subproblem objective at the expansion point, in bits/s.
    pub objective_at_expansion: f64,
}

/// Assembles the convex placement subproblem around `positions`.
pub fn build_subproblem(
    ev: &Evaluator<'_>,
    positions: &[Point],
    beams: &BeamformingState,
    allocation: &[f64],
    opts: &DeploymentOptions,
) -> Subproblem {
    build_subproblem_with(ev, positions, beams, allocation, opts, 0.0)
}

/// Linearized sensing sum `Σ_u H_u + e_uᵀ(o_u − o_u⁰)` and its exact value,
/// both in the units of [`sensing_requirement`].
fn sensing_model(s: &Scenario, beams: &BeamformingState, at: &[Point], to: &[Point]) -> (f64, f64) {
    let mut lin = 0.0;
    let mut exact = 0.0;
    for (u, (a, b)) in at.iter().zip(to).enumerate() {
        let r = transmit_covariance(beams, u);
        let (hu, e) = sensing_taylor(&r, a, s);
        lin += hu + e.dot(&(b - a));
        exact += sensing_trace(&r, b, s) / s.uav_range_sq(b, &s.ts_position);
    }
    (lin, exact)
}

/// [`build_subproblem`] with the sensing row tightened by
/// `−(curvature/2) Σ_u ‖o_u − o_u⁰‖²`, which makes it a global minorizer
/// once `curvature` bounds the curvature of the beampattern along the step.
pub fn build_subproblem_with(
    ev: &Evaluator<'_>,
    positions: &[Point],
    beams: &BeamformingState,
    allocation: &[f64],
    opts: &DeploymentOptions,
    curvature: f64,
) -> Subproblem {
    let s = ev.scenario;
    let ch = ev.channels(positions);
    let model = ev.model(&ch);
    let terms = rate_terms(s, ev, &model, positions, beams);
    let h = s.uav_altitude;
    let mut p = ConicProgram::new();
    let o: Vec<[Var; 2]> = (0..positions.len())
        .map(|u| [p.var(format!("o[{u}].x")), p.var(format!("o[{u}].y"))])
        .collect();
    let f = p.vars("f", s.n_cs);
    let delta = |u: usize, g: &Vector2<f64>| -> LinExpr {
        LinExpr::from(o[u][0]) * g.x + LinExpr::from(o[u][1]) * g.y - (g.x * positions[u].x + g.y * positions[u].y)
    };
    // Rates are carried in units of the bandwidth.
    let unit = s.bandwidth;
    let mut at_expansion = 0.0;
    let mut dropped = Vec::new();
    for t in &terms {
        let u = t.serving;
        let (a, c) = taylor_private_rate(t, &positions[u], h);
        p.le(f[t.cs], LinExpr::constant(a / unit) + delta(u, &(c / unit)));
        at_expansion += s.weights[t.cs] * a;
        match qos_radius_bound(t, allocation[t.cs], s.rate_threshold[t.cs], h) {
            None => dropped.push(t.cs),
            Some(bound) => {
                // Keep the expansion point inside the ball.
                let radius = bound.max((positions[u] - t.q).norm_squared()).sqrt();
                p.add(Constraint::SecondOrder(vec![
                    LinExpr::constant(radius),
                    LinExpr::from(o[u][0]) - t.q.x,
                    LinExpr::from(o[u][1]) - t.q.y,
                ]));
            }
        }
    }
    if s.sensing_threshold > 0.0 {
        let need = sensing_requirement(s);
        let mut lhs = LinExpr::zero();
        let mut at = 0.0;
        for u in 0..positions.len() {
            let r = transmit_covariance(beams, u);
            let (hu, e) = sensing_taylor(&r, &positions[u], s);
            lhs += LinExpr::constant(hu) + delta(u, &e);
            at += hu;
        }
        let scale = 1.0 / need.max(at).max(f64::MIN_POSITIVE);
        if curvature > 0.0 {
            // t ≥ Σ‖Δ_u‖² as ‖(2Δ, t − 1)‖ ≤ t + 1.
            let sq = p.var("step_sq");
            let mut cone = vec![LinExpr::from(sq) + 1.0, LinExpr::from(sq) - 1.0];
            for (u, pos) in positions.iter().enumerate() {
                cone.push((LinExpr::from(o[u][0]) - pos.x) * 2.0);
                cone.push((LinExpr::from(o[u][1]) - pos.y) * 2.0);
            }
            p.add(Constraint::SecondOrder(cone));
            lhs += LinExpr::term(sq, -0.5 * curvature);
        }
        p.ge(lhs * scale, need.min(at) * scale);
    }
    if opts.hold_interference_distance {
        for (k, link) in model.links.iter().enumerate() {
            let mut seen = Vec::new();
            for &(i, _) in &link.private_interference {
                if i == link.serving || seen.contains(&i) {
                    continue;
                }
                seen.push(i);
                let g = positions[i] - s.cs_positions[k];
                let n = g.norm();
                if n > 1e-9 {
                    p.ge(delta(i, &(g / n)), 0.0);
                }
            }
        }
    }
    if let Some(tr) = opts.trust_region {
        for (u, pos) in positions.iter().enumerate() {
            p.add(Constraint::SecondOrder(vec![
                LinExpr::constant(tr),
                LinExpr::from(o[u][0]) - pos.x,
                LinExpr::from(o[u][1]) - pos.y,
            ]));
        }
    }
    p.maximize(s.weights.iter().zip(&f).map(|(w, &v)| LinExpr::term(v, *w)).sum());
    Subproblem { program: p, positions: o, rates: f, dropped_balls: dropped, objective_at_expansion: at_expansion }
}

/// One accepted (or final) placement iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentTraceEntry {
    pub iteration: usize,
    /// Exact WSR with the WSR-maximizing common split, bits/s.
    pub objective: f64,
    /// Exact `Σ μ_k R_k^p`, bits/s.
    pub private_objective: f64,
    /// Optimal value of the subproblem solved at this iteration, bits/s.
    pub subproblem_objective: Option<f64>,
    pub max_violation: f64,
    /// Largest UAV displacement of the accepted step, meters.
    pub step: f64,
    pub positions: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeploymentStatus {
    Converged,
    MaxIter,
    /// The first subproblem could not be solved; positions are unchanged.
    SolverFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeploymentResult {
    pub positions: Vec<Point>,
    pub report: RateReport,
    pub trace: Vec<DeploymentTraceEntry>,
    pub status: DeploymentStatus,
}

/// Exact merit: feasibility first, then WSR.
#[derive(Debug, Clone)]
struct Merit {
    report: RateReport,
    violation: f64,
    private: f64,
}

impl Merit {
    fn new(ev: &Evaluator<'_>, positions: &[Point], beams: &BeamformingState) -> Self {
        let report = ev.report_best_split(positions, beams).expect("beams match association");
        let violation = report.violations(ev.scenario).max().max(0.0);
        let private = ev.scenario.weights.iter().zip(&report.private_rate).map(|(m, r)| m * r).sum();
        Self { report, violation, private }
    }

    fn better_than(&self, other: &Merit, tol: f64) -> bool {
        let feasible = self.violation <= tol;
        if other.violation > tol {
            return self.violation < other.violation * (1.0 - 1e-9);
        }
        feasible && self.report.wsr > other.report.wsr * (1.0 + 1e-12)
    }
}

/// Runs the placement loop from `init`.
pub fn optimize_deployment(
    ev: &Evaluator<'_>,
    init: &[Point],
    beams: &BeamformingState,
    allocation: &[f64],
    opts: &DeploymentOptions,
) -> DeploymentResult {
    let mut positions = init.to_vec();
    let mut current = Merit::new(ev, &positions, beams);
    let entry = |it: usize, m: &Merit, sub: Option<f64>, step: f64, pos: &[Point]| DeploymentTraceEntry {
        iteration: it,
        objective: m.report.wsr,
        private_objective: m.private,
        subproblem_objective: sub,
        max_violation: m.violation,
        step,
        positions: pos.to_vec(),
    };
    let mut trace = vec![entry(0, &current, None, 0.0, &positions)];
    let mut status = DeploymentStatus::MaxIter;
    let s = ev.scenario;
    let need = sensing_requirement(s);
    let mut curvature = 0.0;
    'outer: for it in 1..=opts.max_iter {
        let mut solved = None;
        for _ in 0..=opts.curvature_updates {
            let sub = build_subproblem_with(ev, &positions, beams, allocation, opts, curvature);
            let sol = solve(&sub.program, &opts.solver);
            if !sol.is_usable() {
                log::debug!("placement subproblem {it}: {:?} ({})", sol.status, sol.message);
                status = if it == 1 { DeploymentStatus::SolverFailure } else { DeploymentStatus::Converged };
                break 'outer;
            }
            if sol.status != ConicStatus::Optimal {
                log::debug!("placement subproblem {it} solved inaccurately (residual {:.2e})", sol.residual);
            }
            let target: Vec<Point> =
                sub.positions.iter().map(|v| Point::new(sol.var(v[0]), sol.var(v[1]))).collect();
            let step_sq: f64 = positions.iter().zip(&target).map(|(a, b)| (b - a).norm_squared()).sum();
            let (lin, exact) = sensing_model(s, beams, &positions, &target);
            let short = s.sensing_threshold > 0.0 && exact < need * (1.0 - 0.5 * opts.feasibility_tol);
            solved = Some((sol, target));
            if !short || step_sq == 0.0 || lin <= exact {
                break;
            }
            curvature = (2.0 * (2.0 * (lin - exact) / step_sq)).max(2.0 * curvature);
        }
        let Some((sol, target)) = solved else { break };
        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..=opts.backtracking_steps {
            let cand: Vec<Point> = positions.iter().zip(&target).map(|(a, b)| a + (b - a) * t).collect();
            let m = Merit::new(ev, &cand, beams);
            if m.better_than(&current, opts.feasibility_tol) {
                accepted = Some((cand, m));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, m)) = accepted else {
            status = DeploymentStatus::Converged;
            break;
        };
        curvature *= 0.5;
        let step = positions.iter().zip(&cand).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let prev = current.report.wsr;
        positions = cand;
        current = m;
        trace.push(entry(it, &current, Some(sol.objective * s.bandwidth), step, &positions));
        let was_feasible = trace[trace.len() - 2].max_violation <= opts.feasibility_tol;
        if was_feasible && (current.report.wsr - prev).abs() / prev.max(1.0) < opts.tol {
            status = DeploymentStatus::Converged;
            break;
        }
    }
    DeploymentResult { positions, report: current.report, trace, status }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::Association;
    use crate::baselines::Scheme;
    use crate::channel::ChannelMode;
    use crate::types::{c64, point};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn terms(signal: f64, intra: f64, psi: f64) -> RateTerms {
        RateTerms { cs: 0, serving: 0, signal, intra, psi, bandwidth: 1e6, q: point(100.0, 200.0) }
    }

    #[test]
    fn qos_radius_single_link_hand_value() {
        let s = Scenario::defaults(0);
        let psi = s.noise_power / s.eps0;
        let t = terms(0.8, 0.0, psi);
        let bound = qos_radius_bound(&t, 2e5, 1e6, 100.0).unwrap();
        let hand = (s.eps0 / s.noise_power) * 0.8 / (2f64.powf(0.8) - 1.0) - 1e4;
        assert!((bound - hand).abs() <= 1e-9 * hand.abs());
    }

    #[test]
    fn qos_radius_dropped_and_limit() {
        let t = terms(0.8, 0.1, 1e-8);
        assert!(qos_radius_bound(&t, 1e6, 1e6, 100.0).is_none());
        let near = qos_radius_bound(&t, 1e6 - 1e-3, 1e6, 100.0).unwrap();
        let far = qos_radius_bound(&t, 0.0, 1e6, 100.0).unwrap();
        assert!(near > 1e6 * far);
    }

    #[test]
    fn taylor_value_and_direction() {
        let t = terms(0.5, 0.05, 1e-8);
        let o = point(160.0, 260.0);
        let (a, c) = taylor_private_rate(&t, &o, 100.0);
        assert_eq!(a, surrogate_rate(&t, &o, 100.0));
        // The gradient points from the UAV toward the CS.
        let to_cs = (t.q - o).normalize();
        assert!((c.normalize() - to_cs).norm() < 1e-12);
    }

    #[test]
    fn identity_covariance_gradient() {
        let s = Scenario::defaults(0);
        let r = CMatrix::identity(8, 8);
        let o = point(180.0, 320.0);
        assert!(sensing_trace_gradient(&r, &o, &s).norm() == 0.0);
        let (_, e) = sensing_taylor(&r, &o, &s);
        let r2 = s.uav_range_sq(&o, &s.ts_position);
        let expect = (o - s.ts_position) * (-2.0 * 8.0 / (r2 * r2));
        assert!((e - expect).norm() <= 1e-12 * expect.norm());
    }

    #[test]
    fn overhead_gradient_vanishes() {
        let s = Scenario::defaults(0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = CVector::from_fn(8, |_, _| c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let r = &v * v.adjoint();
        let (_, e) = sensing_taylor(&r, &s.ts_position.clone(), &s);
        assert!(e.norm() < 1e-20);
    }

    fn tiny_setup() -> (Scenario, Association) {
        let mut s = Scenario::defaults(0);
        s.n_uav = 1;
        s.n_cs = 1;
        s.cs_positions = vec![point(300.0, 300.0)];
        s.rate_threshold = vec![0.0];
        s.weights = vec![1.0];
        s.sensing_threshold = 0.0;
        let a = Association::from_clusters(vec![vec![0]], vec![point(300.0, 300.0)]);
        (s, a)
    }

    fn mrt(s: &Scenario, a: &Association) -> BeamformingState {
        let mut b = BeamformingState::zeros(s.nt, a);
        *b.uavs[0].private_of_mut(0).unwrap() = CVector::from_element(s.nt, c64((s.p_max / s.nt as f64).sqrt(), 0.0));
        b
    }

    #[test]
    fn single_link_moves_toward_cs() {
        let (s, a) = tiny_setup();
        let ev = Evaluator { scenario: &s, association: &a, mode: ChannelMode::LosOnes, seed: 0, scheme: Scheme::CoRsma, sensing_interference: false };
        let b = mrt(&s, &a);
        let start = vec![point(150.0, 220.0)];
        let opts = DeploymentOptions { max_iter: 60, tol: 1e-12, ..Default::default() };
        let res = optimize_deployment(&ev, &start, &b, &[0.0], &opts);
        let dists: Vec<f64> = res.trace.iter().map(|e| (e.positions[0] - s.cs_positions[0]).norm()).collect();
        for w in dists.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(*dists.last().unwrap() < 1.0, "{dists:?}");
    }

    #[test]
    fn optimal_point_stays_put() {
        let (s, a) = tiny_setup();
        let ev = Evaluator { scenario: &s, association: &a, mode: ChannelMode::LosOnes, seed: 0, scheme: Scheme::CoRsma, sensing_interference: false };
        let b = mrt(&s, &a);
        let res = optimize_deployment(&ev, &s.cs_positions.clone(), &b, &[0.0], &DeploymentOptions::default());
        assert!(res.trace.len() <= 2);
        assert!((res.positions[0] - s.cs_positions[0]).norm() < 1e-3);
    }

    #[test]
    fn expansion_point_is_feasible_for_subproblem() {
        let s = Scenario::defaults(4);
        let a = crate::association::kmeans_associate(&s.cs_positions, 3, 4, 100, 8).unwrap();
        let ev = Evaluator { scenario: &s, association: &a, mode: ChannelMode::LosOnes, seed: 0, scheme: Scheme::CoRsma, sensing_interference: false };
        let b = crate::beamforming::mrt_init(&ev, &a.centroids, true);
        let sub = build_subproblem(&ev, &a.centroids, &b, &vec![0.0; s.n_cs], &DeploymentOptions::default());
        let mut x = vec![0.0; sub.program.n_vars()];
        for (u, v) in sub.positions.iter().enumerate() {
            x[v[0].index()] = a.centroids[u].x;
            x[v[1].index()] = a.centroids[u].y;
        }
        let ch = ev.channels(&a.centroids);
        let terms = rate_terms(&s, &ev, &ev.model(&ch), &a.centroids, &b);
        for t in &terms {
            x[sub.rates[t.cs].index()] = surrogate_rate(t, &a.centroids[t.serving], s.uav_altitude) / s.bandwidth;
        }
        assert!(sub.program.max_residual(&x) < 1e-9, "{}", sub.program.max_residual(&x));
        let sol = solve(&sub.program, &SolveOptions::default());
        assert!(sol.objective * s.bandwidth >= sub.objective_at_expansion * (1.0 - 1e-6));
    }

    #[test]
    fn surrogate_matches_exact_rate_at_expansion() {
        let s = Scenario::defaults(4);
        let a = crate::association::kmeans_associate(&s.cs_positions, 3, 4, 100, 8).unwrap();
        for mode in [ChannelMode::LosOnes, ChannelMode::Rayleigh, ChannelMode::LosSteering] {
            let ev = Evaluator { scenario: &s, association: &a, mode, seed: 3, scheme: Scheme::CoRsma, sensing_interference: false };
            let b = crate::beamforming::mrt_init(&ev, &a.centroids, true);
            let rep = ev.report(&a.centroids, &b, &vec![0.0; s.n_cs]).unwrap();
            let ch = ev.channels(&a.centroids);
            for t in rate_terms(&s, &ev, &ev.model(&ch), &a.centroids, &b) {
                let r = surrogate_rate(&t, &a.centroids[t.serving], s.uav_altitude);
                assert!((r - rep.private_rate[t.cs]).abs() <= 1e-9 * r.max(1.0), "{mode:?}");
            }
        }
    }

    fn random_covariance(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> CMatrix {
        let mut r = CMatrix::zeros(n, n);
        for _ in 0..rank {
            let v = CVector::from_fn(n, |_, _| c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            r += &v * v.adjoint();
        }
        r
    }

    fn central_difference(f: impl Fn(&Point) -> f64, o: &Point, h: f64) -> Vector2<f64> {
        // Fourth-order central stencil.
        let d = |e: Vector2<f64>| (8.0 * (f(&(o + e)) - f(&(o - e))) - (f(&(o + 2.0 * e)) - f(&(o - 2.0 * e)))) / (12.0 * h);
        Vector2::new(d(Vector2::new(h, 0.0)), d(Vector2::new(0.0, h)))
    }

    fn rel_err(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    proptest::proptest! {
        #[test]
        fn rate_gradient_matches_finite_difference(
            x in 0.0f64..500.0, y in 0.0f64..500.0, sig in 0.01f64..1.0, intra in 0.0f64..0.5, psi_exp in -9.0f64..-7.0,
        ) {
            let t = terms(sig, intra, 10f64.powf(psi_exp));
            let o = point(x, y);
            proptest::prop_assume!((o - t.q).norm() > 1.0);
            let (_, c) = taylor_private_rate(&t, &o, 100.0);
            let fd = central_difference(|p| surrogate_rate(&t, p, 100.0), &o, 1e-3);
            proptest::prop_assert!(rel_err(&c, &fd) < 1e-5, "{c:?} vs {fd:?}");
        }

        #[test]
        fn sensing_gradients_match_finite_difference(seed in 0u64..500, x in 0.0f64..500.0, y in 0.0f64..500.0, rank in 1usize..4) {
            let s = Scenario::defaults(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_covariance(&mut rng, 8, rank);
            let o = point(x, y);
            proptest::prop_assume!((o - s.ts_position).norm() > 1.0);
            let f = sensing_trace_gradient(&r, &o, &s);
            let fd = central_difference(|p| sensing_trace(&r, p, &s), &o, 1e-3);
            proptest::prop_assert!((f - fd).norm() <= 1e-5 * fd.norm().max(1e-6), "F {f:?} vs {fd:?}");
            let (_, e) = sensing_taylor(&r, &o, &s);
            let g = |p: &Point| sensing_trace(&r, p, &s) / s.uav_range_sq(p, &s.ts_position);
            let fd = central_difference(g, &o, 1e-3);
            proptest::prop_assert!((e - fd).norm() <= 1e-5 * fd.norm().max(1e-12), "e {e:?} vs {fd:?}");
        }

        #[test]
        fn qos_ball_equals_rate_inequality(
            sig in 0.01f64..1.0, intra in 0.0f64..0.3, psi_exp in -9.0f64..-7.0,
            common in 0.0f64..1.5e6, th in 1e5f64..3e6, x in -400.0f64..400.0, y in -400.0f64..400.0,
        ) {
            let t = terms(sig, intra, 10f64.powf(psi_exp));
            let o = t.q + Vector2::new(x, y);
            let direct = common + surrogate_rate(&t, &o, 100.0) >= th;
            let ball = match qos_radius_bound(&t, common, th, 100.0) {
                None => true,
                Some(b) => (o - t.q).norm_squared() <= b,
            };
            let margin = (common + surrogate_rate(&t, &o, 100.0) - th).abs() / th;
            proptest::prop_assume!(margin > 1e-9);
            proptest::prop_assert_eq!(direct, ball);
        }

        #[test]
        fn taylor_is_tangent(x in 0.0f64..500.0, y in 0.0f64..500.0, dx in -1.0f64..1.0, dy in -1.0f64..1.0) {
            let t = terms(0.4, 0.02, 1e-8);
            let o = point(x, y);
            let (a, c) = taylor_private_rate(&t, &o, 100.0);
            let d = Vector2::new(dx, dy) * 1e-3;
            let exact = surrogate_rate(&t, &(o + d), 100.0);
            // First-order error only.
            proptest::prop_assert!((exact - a - c.dot(&d)).abs() <= 1e-6 * a.max(1.0));
        }
    }

    #[test]
    fn fault_injected_gradient_is_caught() {
        let s = Scenario::defaults(0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = random_covariance(&mut rng, 8, 2);
        let o = point(120.0, 410.0);
        let (_, bad) = sensing_taylor_with(&r, &o, &s, -1.0);
        let g = |p: &Point| sensing_trace(&r, p, &s) / s.uav_range_sq(p, &s.ts_position);
        let fd = central_difference(g, &o, 1e-3);
        assert!(rel_err(&bad, &fd) > 1.0);
    }

    #[test]
    fn zero_sensing_threshold_has_no_sensing_row() {
        let s = Scenario::defaults(4);
        let mut s0 = s.clone();
        s0.sensing_threshold = 0.0;
        let a = crate::association::kmeans_associate(&s.cs_positions, 3, 4, 100, 8).unwrap();
        let count = |sc: &Scenario| {
            let ev = Evaluator { scenario: sc, association: &a, mode: ChannelMode::LosOnes, seed: 0, scheme: Scheme::CoRsma, sensing_interference: false };
            let b = crate::beamforming::mrt_init(&ev, &a.centroids, true);
            build_subproblem(&ev, &a.centroids, &b, &vec![0.0; sc.n_cs], &DeploymentOptions::default()).program.to_text().lines().count()
        };
        assert_eq!(count(&s), count(&s0) + 1);
    }
}
