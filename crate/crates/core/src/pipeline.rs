//! Three-stage optimization: association once, then alternating
//! beamforming and deployment until the WSR settles.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::association::{kmeans_associate, Association};
use crate::baselines::Scheme;
use crate::beamforming::{
    mrt_init, optimize_beamforming, relaxation_bound, sensing_probe, BeamTraceEntry, BeamformingOptions, Covariances,
    Rank1Method,
};
use crate::channel::ChannelMode;
use crate::deployment::{optimize_deployment, DeploymentOptions, DeploymentTraceEntry};
use crate::rates::{BeamformingState, Evaluator, RateReport, Violations};
use crate::scenario::{Scenario, ScenarioError};
use crate::types::Point;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Seeds Rayleigh draws, K-Means restarts and randomization.
    pub seed: u64,
    pub channel_mode: ChannelMode,
    pub scheme: Scheme,
    /// Outer relative WSR tolerance.
    pub tol: f64,
    /// Maximum outer iterations `T`.
    pub max_iter: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    /// Count sensing beams as interference at the CS decoders.
    pub sensing_interference: bool,
    /// Compute the relaxation upper bound at the final beams.
    pub certify: bool,
    /// For schemes with a common stream, also optimize with the common
    /// stream switched off and keep the exactly better result.
    pub no_common_candidate: bool,
    pub deployment: DeploymentOptions,
    pub beamforming: BeamformingOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            channel_mode: ChannelMode::LosOnes,
            scheme: Scheme::CoRsma,
            tol: 1e-3,
            max_iter: 20,
            kmeans_restarts: 32,
            kmeans_max_iter: 100,
            sensing_interference: false,
            certify: true,
            no_common_candidate: true,
            deployment: DeploymentOptions::default(),
            beamforming: BeamformingOptions::default(),
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        let tols = [self.tol, self.deployment.tol, self.beamforming.tol];
        if tols.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Options("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Options("max_iter must be at least 1".into()));
        }
        if self.beamforming.samples == 0 {
            return Err(Error::Options("randomization needs at least one sample".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionStatus {
    Converged,
    MaxIter,
    Infeasible,
}

/// Outcome of a convergence test on the outer WSR history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Converged,
    MaxIter,
}

/// Stops when the last relative WSR change is below `tol` or the history
/// has reached `max_iter` entries.
pub fn convergence_check(history: &[f64], tol: f64, max_iter: usize) -> Decision {
    if let [.., prev, last] = history {
        if (last - prev).abs() / last.abs().max(1.0) < tol {
            return Decision::Converged;
        }
    }
    if history.len() >= max_iter {
        Decision::MaxIter
    } else {
        Decision::Continue
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterTraceEntry {
    pub iteration: usize,
    /// Exact WSR after the beamforming stage, bits/s.
    pub wsr_beamforming: f64,
    /// Exact WSR after the deployment stage, bits/s.
    pub wsr_deployment: f64,
    pub max_violation: f64,
    pub beamforming_iterations: usize,
    pub deployment_iterations: usize,
    pub beamforming_seconds: f64,
    pub deployment_seconds: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub association: f64,
    pub beamforming: f64,
    pub deployment: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub scheme: Scheme,
    pub association: Association,
    pub positions: Vec<Point>,
    pub beams: BeamformingState,
    pub covariances: Option<Covariances>,
    pub allocation: Vec<f64>,
    pub report: RateReport,
    pub violations: Violations,
    pub outer_trace: Vec<OuterTraceEntry>,
    pub beamforming_traces: Vec<Vec<BeamTraceEntry>>,
    pub deployment_traces: Vec<Vec<DeploymentTraceEntry>>,
    pub times: StageTimes,
    pub status: SolutionStatus,
    /// Relaxation objective linearized at the final beams and positions.
    pub relaxation_bound: Option<f64>,
    pub rank1_method: Option<Rank1Method>,
    /// `Σ μ_k C_k / WSR`.
    pub common_ratio: f64,
}

impl Solution {
    pub fn wsr(&self) -> f64 {
        self.report.wsr
    }

    pub fn outer_iterations(&self) -> usize {
        self.outer_trace.len()
    }

    /// Share of the WSR carried by the common stream, `Σ μ_k C_k / WSR`.
    pub fn common_ratio(&self) -> f64 {
        self.common_ratio
    }

    /// `(outer, inner, uav, x, y)` for every accepted deployment iterate,
    /// starting with the centroids.
    pub fn deployment_path(&self) -> Vec<(usize, usize, usize, f64, f64)> {
        let mut rows = Vec::new();
        for (outer, trace) in self.deployment_traces.iter().enumerate() {
            for e in trace {
                if outer > 0 && e.iteration == 0 {
                    continue;
                }
                for (u, p) in e.positions.iter().enumerate() {
                    rows.push((outer + 1, e.iteration, u, p.x, p.y));
                }
            }
        }
        rows
    }
}

/// MRT start. With a common stream, the split without common power is
/// also tried and the exactly better of the two is kept.
fn initial_beams(ev: &Evaluator<'_>, positions: &[Point], sensing_beam: bool) -> BeamformingState {
    let rsma = mrt_init(ev, positions, sensing_beam);
    if !ev.scheme.has_common() {
        return rsma;
    }
    let sdma = mrt_init(&Evaluator { scheme: Scheme::Sdma, ..ev.clone() }, positions, sensing_beam);
    let merit = |b: &BeamformingState| {
        let r = ev.report_best_split(positions, b).expect("beams match association");
        (r.violations(ev.scenario).max().max(0.0), r.wsr)
    };
    let (va, wa) = merit(&rsma);
    let (vb, wb) = merit(&sdma);
    if vb < va || (vb == va && wb > wa) {
        sdma
    } else {
        rsma
    }
}

fn weighted_common_ratio(report: &RateReport, weights: &[f64]) -> f64 {
    let weighted: f64 = report.allocation.iter().zip(weights).map(|(c, m)| c * m).sum();
    if report.wsr > 0.0 {
        weighted / report.wsr
    } else {
        0.0
    }
}

/// Runs the full optimization.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<Solution> {
    let violations = scenario.violations();
    if !violations.is_empty() {
        return Err(ScenarioError::Invalid(violations).into());
    }
    opts.validate()?;
    let sol = run_scheme(scenario, opts)?;
    if !(opts.scheme.has_common() && opts.no_common_candidate) {
        return Ok(sol);
    }
    // A design without common power is a valid point of every scheme with a
    // common stream; its SCA path can end higher than the one above.
    let alt = run_scheme(scenario, &RunOptions { scheme: Scheme::Sdma, certify: false, ..*opts })?;
    let ev = Evaluator {
        scenario,
        association: &alt.association,
        mode: opts.channel_mode,
        seed: opts.seed,
        scheme: opts.scheme,
        sensing_interference: opts.sensing_interference,
    };
    let report = ev.report_best_split(&alt.positions, &alt.beams)?;
    let violations = report.violations(scenario);
    let merit = |v: &Violations, wsr: f64| (v.max().max(0.0), wsr);
    let (va, wa) = merit(&sol.violations, sol.wsr());
    let (vb, wb) = merit(&violations, report.wsr);
    let tol = opts.deployment.feasibility_tol;
    let better = if va > tol || vb > tol { vb < va } else { wb > wa };
    if !better {
        return Ok(sol);
    }
    let relaxation_bound =
        if opts.certify { relaxation_bound(&ev, &alt.positions, &alt.beams, &opts.beamforming) } else { None };
    let status = if violations.is_feasible(tol) { alt.status } else { SolutionStatus::Infeasible };
    let mut times = alt.times;
    times.total += sol.times.total;
    Ok(Solution {
        scheme: opts.scheme,
        common_ratio: weighted_common_ratio(&report, &scenario.weights),
        allocation: report.allocation.clone(),
        report,
        violations,
        status,
        relaxation_bound,
        times,
        ..alt
    })
}

fn run_scheme(scenario: &Scenario, opts: &RunOptions) -> Result<Solution> {
    let t0 = Instant::now();
    let association = kmeans_associate(
        &scenario.cs_positions,
        scenario.n_uav,
        opts.seed,
        opts.kmeans_max_iter,
        opts.kmeans_restarts,
    )?;
    let mut times = StageTimes { association: t0.elapsed().as_secs_f64(), ..Default::default() };
    let ev = Evaluator {
        scenario,
        association: &association,
        mode: opts.channel_mode,
        seed: opts.seed,
        scheme: opts.scheme,
        sensing_interference: opts.sensing_interference,
    };
    let mut positions = association.centroids.clone();
    let mut beams = initial_beams(&ev, &positions, opts.beamforming.sensing_beam);
    let mut covariances = None;
    let mut method = None;
    let mut history: Vec<f64> = Vec::new();
    let mut outer_trace = Vec::new();
    let mut beamforming_traces = Vec::new();
    let mut deployment_traces = Vec::new();
    let mut decision = Decision::Continue;
    let tol = opts.deployment.feasibility_tol;
    for it in 1..=opts.max_iter {
        let bopts = BeamformingOptions { seed: opts.beamforming.seed ^ opts.seed.rotate_left(17) ^ it as u64, ..opts.beamforming };
        let tb = Instant::now();
        let bf = optimize_beamforming(&ev, &positions, &beams, &bopts);
        let bsec = tb.elapsed().as_secs_f64();
        beams = bf.beams;
        if bf.covariances.is_some() {
            covariances = bf.covariances;
            method = bf.method;
        }
        if let Some(&prev) = history.last() {
            if bf.report.wsr < prev * (1.0 - 1e-6) {
                log::warn!("outer iteration {it}: beamforming stage lowered the WSR from {prev:.6e} to {:.6e}", bf.report.wsr);
            }
        }
        history.push(bf.report.wsr);
        let td = Instant::now();
        let dep = optimize_deployment(&ev, &positions, &beams, &bf.report.allocation, &opts.deployment);
        let dsec = td.elapsed().as_secs_f64();
        positions = dep.positions;
        times.beamforming += bsec;
        times.deployment += dsec;
        outer_trace.push(OuterTraceEntry {
            iteration: it,
            wsr_beamforming: bf.report.wsr,
            wsr_deployment: dep.report.wsr,
            max_violation: dep.report.violations(scenario).max().max(0.0),
            beamforming_iterations: bf.trace.len() - 1,
            deployment_iterations: dep.trace.len() - 1,
            beamforming_seconds: bsec,
            deployment_seconds: dsec,
        });
        beamforming_traces.push(bf.trace);
        deployment_traces.push(dep.trace);
        decision = convergence_check(&history, opts.tol, opts.max_iter);
        if decision != Decision::Continue {
            break;
        }
    }
    let report = ev.report_best_split(&positions, &beams)?;
    let violations = report.violations(scenario);
    let status = if !violations.is_feasible(tol) {
        SolutionStatus::Infeasible
    } else if decision == Decision::Converged {
        SolutionStatus::Converged
    } else {
        SolutionStatus::MaxIter
    };
    let relaxation_bound =
        if opts.certify { relaxation_bound(&ev, &positions, &beams, &opts.beamforming) } else { None };
    times.total = t0.elapsed().as_secs_f64();
    Ok(Solution {
        common_ratio: weighted_common_ratio(&report, &scenario.weights),
        scheme: opts.scheme,
        allocation: report.allocation.clone(),
        association,
        positions,
        beams,
        covariances,
        report,
        violations,
        outer_trace,
        beamforming_traces,
        deployment_traces,
        times,
        status,
        relaxation_bound,
        rank1_method: method,
    })
}

/// Outcome of [`probe`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeOutcome {
    /// The communication design the probe starts from.
    pub design: Solution,
    /// Exact metrics of the probe beams at the design positions.
    pub report: RateReport,
    pub sensing_snr: f64,
    /// The probe beams meet the QoS and power constraints.
    pub feasible: bool,
}

/// Largest sensing SNR reachable at the designed positions: the pipeline
/// runs without a sensing constraint, then the beams are re-optimized to
/// maximize `γ^s` subject to QoS and power.
pub fn probe(scenario: &Scenario, opts: &RunOptions) -> Result<ProbeOutcome> {
    let relaxed = Scenario { sensing_threshold: 0.0, ..scenario.clone() };
    let design = run(&relaxed, &RunOptions { certify: false, ..*opts })?;
    let ev = Evaluator {
        scenario: &relaxed,
        association: &design.association,
        mode: opts.channel_mode,
        seed: opts.seed,
        scheme: opts.scheme,
        sensing_interference: opts.sensing_interference,
    };
    let res = sensing_probe(&ev, &design.positions, &design.beams, &opts.beamforming);
    let feasible = res.report.violations(&relaxed).is_feasible(opts.deployment.feasibility_tol);
    Ok(ProbeOutcome { sensing_snr: res.report.sensing_snr, report: res.report, design, feasible })
}

/// SHA-256 of the scenario's canonical JSON, hex encoded.
pub fn scenario_hash(s: &Scenario) -> String {
    let json = serde_json::to_vec(s).expect("scenario serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Result file written by a single run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario_hash: String,
    pub version: String,
    pub scenario: Scenario,
    pub options: RunOptions,
    pub solution: Solution,
}

impl RunRecord {
    pub fn new(scenario: &Scenario, options: &RunOptions, solution: Solution) -> Self {
        Self {
            scenario_hash: scenario_hash(scenario),
            version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: scenario.clone(),
            options: *options,
            solution,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Deployment path as CSV: `outer,inner,uav,x,y`.
    pub fn write_path_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "outer,inner,uav,x,y")?;
        for (o, i, u, x, y) in self.solution.deployment_path() {
            writeln!(f, "{o},{i},{u},{x:.8e},{y:.8e}")?;
        }
        f.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_examples() {
        assert_eq!(convergence_check(&[1e6, 1e6], 1e-3, 20), Decision::Converged);
        assert_eq!(convergence_check(&[1e6, 2e6], 1e-3, 20), Decision::Continue);
        assert_eq!(convergence_check(&[1e6, 2e6, 1e6, 2e6], 1e-3, 4), Decision::MaxIter);
        assert_eq!(convergence_check(&[1e6], 1e-3, 20), Decision::Continue);
        assert_eq!(convergence_check(&[1e6], 1e-3, 1), Decision::MaxIter);
    }

    #[test]
    fn invalid_options_rejected() {
        let s = Scenario::defaults(0);
        let o = RunOptions { tol: 0.0, ..Default::default() };
        assert!(matches!(run(&s, &o), Err(Error::Options(_))));
        let o = RunOptions { max_iter: 0, ..Default::default() };
        assert!(matches!(run(&s, &o), Err(Error::Options(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = Scenario::defaults(0);
        let mut b = a.clone();
        assert_eq!(scenario_hash(&a), scenario_hash(&b));
        b.p_max *= 2.0;
        assert_ne!(scenario_hash(&a), scenario_hash(&b));
        assert_eq!(scenario_hash(&a).len(), 64);
    }
}
