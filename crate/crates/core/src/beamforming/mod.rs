//! Beamforming design by semidefinite relaxation and SCA.
//!
//! Each iteration linearizes the interference terms at the incumbent
//! rank-one beams, solves the relaxed subproblem of [`sdp`], recovers
//! rank-one beams with [`rank1`] and keeps them only if the exact
//! re-evaluation improves on the incumbent (feasibility first, then the
//! objective). Leftover power is given to the sensing beam. The common
//! rate is split afterwards by [`crate::rates::optimal_allocation`].

pub mod rank1;
pub mod sdp;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Channels;
use crate::conic::{solve, SolveOptions};
use crate::rates::{evaluate_best_split, BeamformingState, Evaluator, RateModel, RateReport};
use crate::scenario::Scenario;
use crate::types::{c64, CMatrix, CVector, Point};

pub use rank1::{extract_rank1, principal_component, PsdFactor, Rank1Error, Rank1Method, Rank1Result};
pub use sdp::{build_beam_sdp, orthonormal_basis, BeamSdp, Covariances, SdpConfig, SdpObjective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamformingOptions {
    /// Stop when the relative objective change falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the QoS and sensing slacks in the subproblem objective.
    pub penalty: f64,
    /// Principal-eigenvalue share above which plain EVD is used.
    pub dominance: f64,
    /// Gaussian samples drawn when some covariance is not dominant.
    pub samples: usize,
    pub seed: u64,
    /// Give unused power to the sensing beam (skipped when sensing beams
    /// interfere with communication).
    pub power_refill: bool,
    /// Use a dedicated sensing beam per UAV.
    pub sensing_beam: bool,
    pub feasibility_tol: f64,
    pub solver: SolveOptions,
}

impl Default for BeamformingOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 50,
            penalty: 100.0,
            dominance: 0.99,
            samples: 100,
            seed: 0,
            power_refill: true,
            sensing_beam: true,
            feasibility_tol: 1e-6,
            solver: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamTraceEntry {
    pub iteration: usize,
    /// Exact objective of the incumbent after this iteration: WSR in bits/s,
    /// or the sensing SNR for the probe.
    pub objective: f64,
    pub max_violation: f64,
    /// Exact penalized objective of the incumbent, in the units of the
    /// subproblem objective. Equals the objective over the bandwidth once
    /// the incumbent is feasible.
    pub penalized: f64,
    /// `Σ μ_k (C_k + R̂_k^p)` at the subproblem optimum, bits/s.
    pub relaxation: Option<f64>,
    /// Total penalized slack at the subproblem optimum.
    pub slack: f64,
    pub method: Option<Rank1Method>,
    /// Smallest principal-eigenvalue share over the covariances.
    pub dominance: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamformingStatus {
    Converged,
    MaxIter,
    /// The first subproblem could not be solved; beams are unchanged.
    SolverFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamformingResult {
    pub beams: BeamformingState,
    pub report: RateReport,
    pub trace: Vec<BeamTraceEntry>,
    pub status: BeamformingStatus,
    /// Relaxed covariances behind the accepted beams, if any were accepted.
    pub covariances: Option<Covariances>,
    pub method: Option<Rank1Method>,
}

/// Maximum-ratio initialization.
///
/// With a common stream: half the budget on a common beam toward the sum
/// of normalized cluster channels, 40 % split over private MRT beams and
/// 10 % on a sensing beam toward the TS. Without one: 90 % private.
///
/// Without a sensing beam its share goes to the private beams.
pub fn mrt_init(ev: &Evaluator<'_>, positions: &[Point], sensing_beam: bool) -> BeamformingState {
    let s = ev.scenario;
    let ch = ev.channels(positions);
    let mut b = BeamformingState::zeros(s.nt, ev.association);
    let has_common = ev.scheme.has_common();
    let r_share = if sensing_beam { 0.1 } else { 0.0 };
    let c_share = if has_common { 0.5 } else { 0.0 };
    let p_share = 1.0 - r_share - c_share;
    let dir = |v: &CVector, power: f64| -> CVector {
        let n = v.norm();
        if n == 0.0 {
            CVector::zeros(v.len())
        } else {
            v * c64(power.sqrt() / n, 0.0)
        }
    };
    for (u, members) in ev.association.clusters.iter().enumerate() {
        if has_common {
            let mut sum = CVector::zeros(s.nt);
            for &k in members {
                let h = &ch.h[u][k];
                sum += h / c64(h.norm().max(f64::MIN_POSITIVE), 0.0);
            }
            b.uavs[u].common = dir(&sum, c_share * s.p_max);
        }
        let each = p_share * s.p_max / members.len().max(1) as f64;
        for &k in members {
            *b.uavs[u].private_of_mut(k).expect("member") = dir(&ch.h[u][k], each);
        }
        b.uavs[u].sensing = dir(&ch.a[u], r_share * s.p_max);
    }
    b
}

/// Exact quality of a beam set: violation first, then value.
#[derive(Debug, Clone)]
struct Merit {
    report: RateReport,
    violation: f64,
    value: f64,
    /// Exact counterpart of the subproblem objective: the objective in
    /// bits/s/Hz (or the SNR for the probe) minus `penalty` times the QoS and
    /// sensing shortfalls, scaled as the subproblem slacks are.
    penalized: f64,
}

impl Merit {
    fn new(s: &Scenario, report: RateReport, objective: SdpObjective, penalty: f64) -> Self {
        let v = report.violations(s);
        let shortfall: f64 = report
            .total_rate
            .iter()
            .zip(&s.rate_threshold)
            .map(|(r, th)| (th - r).max(0.0) / s.bandwidth)
            .sum();
        let (violation, value, base) = match objective {
            SdpObjective::WeightedSumRate => {
                let sensing = (s.sensing_threshold - report.sensing_snr).max(0.0) / s.sensing_threshold.max(1.0);
                (v.max(), report.wsr, report.wsr / s.bandwidth - penalty * sensing)
            }
            SdpObjective::SensingSnr => (v.common_budget.max(v.qos).max(v.power), report.sensing_snr, report.sensing_snr),
        };
        Self { report, violation: violation.max(0.0), value, penalized: base - penalty * shortfall }
    }

    /// Feasible incumbents only give way to feasible improvements; an
    /// infeasible incumbent gives way to any increase of the penalized
    /// objective, which the subproblem optimum guarantees for exact
    /// rank-one recoveries.
    fn better_than(&self, other: &Merit, tol: f64) -> bool {
        if other.violation > tol {
            return self.penalized > other.penalized + 1e-12 * other.penalized.abs().max(1.0);
        }
        self.violation <= tol && self.value > other.value * (1.0 + 1e-12)
    }
}

struct Context<'a> {
    s: &'a Scenario,
    ch: Channels,
    model: RateModel,
    objective: SdpObjective,
    opts: BeamformingOptions,
    refill: bool,
}

impl Context<'_> {
    fn merit(&self, beams: &BeamformingState) -> Merit {
        let r = evaluate_best_split(self.s, &self.ch, &self.model, beams).expect("beams match association");
        Merit::new(self.s, r, self.objective, self.opts.penalty)
    }

    /// Per-UAV: scales down over-budget UAVs, then tops up the sensing beam.
    fn fit_power(&self, beams: &mut BeamformingState) {
        let p_max = self.s.p_max;
        for (u, b) in beams.uavs.iter_mut().enumerate() {
            let pw = b.power();
            if pw > p_max {
                b.scale((p_max / pw).sqrt());
            } else if self.refill {
                let left = p_max - pw;
                let cur = b.sensing.norm_squared();
                if cur > 1e-12 * p_max {
                    b.sensing *= c64(((cur + left) / cur).sqrt(), 0.0);
                } else {
                    let a = &self.ch.a[u];
                    b.sensing = a * c64((left + cur).sqrt() / a.norm(), 0.0);
                }
            }
        }
    }

    fn assemble(
        &self,
        sdp: &BeamSdp,
        template: &BeamformingState,
        mut common: impl FnMut() -> Option<CVector>,
        mut private: impl FnMut(usize, usize) -> CVector,
        mut sensing: impl FnMut(usize) -> CVector,
    ) -> BeamformingState {
        let mut b = template.clone();
        let joint = common();
        for (u, ub) in b.uavs.iter_mut().enumerate() {
            let d = sdp.bases[u].ncols();
            ub.common = match &joint {
                Some(y) => sdp.lift(u, &y.rows(sdp.offsets[u], d).into_owned(), self.s.p_max),
                None => CVector::zeros(self.s.nt),
            };
            for (j, (k, p)) in ub.private.iter_mut().enumerate() {
                *p = sdp.lift(u, &private(u, j), self.s.p_max);
                debug_assert_eq!(sdp.private[u][j].0, *k);
            }
            ub.sensing = sdp.lift(u, &sensing(u), self.s.p_max);
        }
        self.fit_power(&mut b);
        b
    }

    /// Rank-one beams from a subproblem solution.
    fn recover(
        &self,
        sdp: &BeamSdp,
        x: &[f64],
        template: &BeamformingState,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Merit, BeamformingState, Rank1Method, f64), Rank1Error> {
        let red = sdp.reduced(x);
        // Covariances are in units of the power budget. Inaccurate solves can
        // leave small negative eigenvalues; candidates are projected and then
        // judged by their exact merit.
        let factor = |m: &CMatrix| PsdFactor::projected(m, 1e-6);
        let common = red.common.as_ref().map(factor).transpose()?;
        let private = red
            .private
            .iter()
            .map(|v| v.iter().map(|(_, y)| factor(y)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let sensing = red.sensing.iter().map(factor).collect::<Result<Vec<_>, _>>()?;
        // Covariances carrying a negligible share of the budget do not count.
        let dominance = common
            .iter()
            .chain(private.iter().flatten())
            .chain(sensing.iter())
            .filter(|f| f.eigenvalues.iter().sum::<f64>() > 1e-3)
            .map(PsdFactor::dominance)
            .fold(1.0, f64::min);
        let evd = self.assemble(
            sdp,
            template,
            || common.as_ref().map(PsdFactor::principal),
            |u, j| private[u][j].principal(),
            |u| sensing[u].principal(),
        );
        let mut best = (self.merit(&evd), evd);
        if dominance >= self.opts.dominance {
            return Ok((best.0, best.1, Rank1Method::Evd, dominance));
        }
        let mut method = Rank1Method::Evd;
        for _ in 0..self.opts.samples {
            let c = common.as_ref().map(|f| f.sample(rng));
            let pv: Vec<Vec<CVector>> = private.iter().map(|v| v.iter().map(|f| f.sample(rng)).collect()).collect();
            let sv: Vec<CVector> = sensing.iter().map(|f| f.sample(rng)).collect();
            let cand = self.assemble(sdp, template, || c.clone(), |u, j| pv[u][j].clone(), |u| sv[u].clone());
            let m = self.merit(&cand);
            if m.better_than(&best.0, self.opts.feasibility_tol) {
                best = (m, cand);
                method = Rank1Method::Randomization;
            }
        }
        Ok((best.0, best.1, method, dominance))
    }
}

fn run_sca(
    ev: &Evaluator<'_>,
    positions: &[Point],
    init: &BeamformingState,
    opts: &BeamformingOptions,
    objective: SdpObjective,
) -> BeamformingResult {
    let s = ev.scenario;
    let ch = ev.channels(positions);
    let model = ev.model(&ch);
    let refill = opts.power_refill && opts.sensing_beam && !ev.sensing_interference;
    let ctx = Context { s, ch, model, objective, opts: *opts, refill };
    let cfg = SdpConfig { objective, penalty: opts.penalty, sensing_beam: opts.sensing_beam };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut beams = init.clone();
    let mut current = ctx.merit(&beams);
    let mut trace = vec![BeamTraceEntry {
        iteration: 0,
        objective: current.value,
        max_violation: current.violation,
        penalized: current.penalized,
        relaxation: None,
        slack: 0.0,
        method: None,
        dominance: None,
        accepted: true,
    }];
    let mut status = BeamformingStatus::MaxIter;
    let mut covariances = None;
    let mut method = None;
    for it in 1..=opts.max_iter {
        let sdp = build_beam_sdp(s, &ctx.ch, &ctx.model, &beams, &cfg);
        let sol = solve(&sdp.program, &opts.solver);
        if !sol.is_usable() {
            log::debug!("beamforming subproblem {it}: {:?} ({})", sol.status, sol.message);
            status = if it == 1 { BeamformingStatus::SolverFailure } else { BeamformingStatus::Converged };
            break;
        }
        let slack: f64 = sdp.qos_slack.iter().map(|&v| sol.var(v)).sum::<f64>()
            + sdp.sensing_slack.map_or(0.0, |v| sol.var(v));
        let relaxation = Some(sol.value(&sdp.rate_objective) * s.bandwidth);
        let (cand_merit, cand, m, dom) = match ctx.recover(&sdp, &sol.x, &beams, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("rank-one recovery failed: {e}");
                status = BeamformingStatus::Converged;
                break;
            }
        };
        let accepted = cand_merit.better_than(&current, opts.feasibility_tol);
        log::debug!(
            "beamforming iteration {it}: candidate {:.6e} (violation {:.3e}, penalized {:.6e}) vs incumbent {:.6e} (violation {:.3e}, penalized {:.6e}), slack {slack:.3e}",
            cand_merit.value,
            cand_merit.violation,
            cand_merit.penalized,
            current.value,
            current.violation,
            current.penalized
        );
        let prev = current.clone();
        if accepted {
            beams = cand;
            current = cand_merit;
            covariances = Some(sdp.covariances(&sol.x, s.p_max));
            method = Some(m);
        }
        trace.push(BeamTraceEntry {
            iteration: it,
            objective: current.value,
            max_violation: current.violation,
            penalized: current.penalized,
            relaxation,
            slack,
            method: Some(m),
            dominance: Some(dom),
            accepted,
        });
        if !accepted {
            status = BeamformingStatus::Converged;
            break;
        }
        if prev.violation <= opts.feasibility_tol
            && (current.value - prev.value).abs() / prev.value.abs().max(1.0) < opts.tol
        {
            status = BeamformingStatus::Converged;
            break;
        }
    }
    BeamformingResult { beams, report: current.report, trace, status, covariances, method }
}

/// Maximizes the WSR over beams at fixed positions.
pub fn optimize_beamforming(
    ev: &Evaluator<'_>,
    positions: &[Point],
    init: &BeamformingState,
    opts: &BeamformingOptions,
) -> BeamformingResult {
    run_sca(ev, positions, init, opts, SdpObjective::WeightedSumRate)
}

/// Maximizes the sensing SNR subject to the QoS and power constraints at
/// fixed positions.
pub fn sensing_probe(
    ev: &Evaluator<'_>,
    positions: &[Point],
    init: &BeamformingState,
    opts: &BeamformingOptions,
) -> BeamformingResult {
    run_sca(ev, positions, init, opts, SdpObjective::SensingSnr)
}

/// Upper bound on the exact WSR of `beams`: the relaxation objective of a
/// subproblem linearized at `beams`, in bits/s. The bound holds whenever
/// `beams` meet every constraint exactly, because they are then a
/// feasible point of that subproblem with zero slack.
pub fn relaxation_bound(
    ev: &Evaluator<'_>,
    positions: &[Point],
    beams: &BeamformingState,
    opts: &BeamformingOptions,
) -> Option<f64> {
    let ch = ev.channels(positions);
    let model = ev.model(&ch);
    let cfg = SdpConfig { objective: SdpObjective::WeightedSumRate, penalty: opts.penalty, sensing_beam: opts.sensing_beam };
    let sdp = build_beam_sdp(ev.scenario, &ch, &model, beams, &cfg);
    let sol = solve(&sdp.program, &opts.solver);
    sol.is_usable().then(|| sol.value(&sdp.rate_objective) * ev.scenario.bandwidth)
}
