//! Exact evaluation of SINRs, rates, weighted sum rate and sensing SNR.
//!
//! Everything downstream of an optimizer is reported through
//! [`Evaluator::report`], which rebuilds channels from positions and
//! recomputes every metric from the beams. Which streams interfere with
//! which decoder, and over what bandwidth, is described by a [`RateModel`]
//! so that the same code evaluates every multiple-access scheme.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::association::Association;
use crate::baselines::Scheme;
use crate::channel::{ChannelMode, Channels};
use crate::scenario::Scenario;
use crate::types::{c64, inner_sq, norm_sq, CVector, Point, C64};

/// Beamformers of one ISAC UAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavBeams {
    pub common: CVector,
    /// `(k, p_{u,k})` for every CS `k` served by this UAV.
    pub private: Vec<(usize, CVector)>,
    pub sensing: CVector,
}

impl UavBeams {
    pub fn zeros(nt: usize, members: &[usize]) -> Self {
        Self {
            common: CVector::zeros(nt),
            private: members.iter().map(|&k| (k, CVector::zeros(nt))).collect(),
            sensing: CVector::zeros(nt),
        }
    }

    pub fn private_of(&self, k: usize) -> Option<&CVector> {
        self.private.iter().find(|(j, _)| *j == k).map(|(_, p)| p)
    }

    pub fn private_of_mut(&mut self, k: usize) -> Option<&mut CVector> {
        self.private.iter_mut().find(|(j, _)| *j == k).map(|(_, p)| p)
    }

    pub fn stream(&self, s: Stream) -> Option<&CVector> {
        match s {
            Stream::Common => Some(&self.common),
            Stream::Private(k) => self.private_of(k),
            Stream::Sensing => Some(&self.sensing),
        }
    }

    /// `tr(P_u P_uᴴ)`.
    pub fn power(&self) -> f64 {
        norm_sq(&self.common) + norm_sq(&self.sensing) + self.private.iter().map(|(_, p)| norm_sq(p)).sum::<f64>()
    }

    pub fn columns(&self) -> impl Iterator<Item = &CVector> {
        std::iter::once(&self.common)
            .chain(self.private.iter().map(|(_, p)| p))
            .chain(std::iter::once(&self.sensing))
    }

    pub fn scale(&mut self, c: f64) {
        let c = c64(c, 0.0);
        self.common *= c;
        self.sensing *= c;
        for (_, p) in &mut self.private {
            *p *= c;
        }
    }
}

/// Per-UAV common, private and sensing beamformers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformingState {
    pub uavs: Vec<UavBeams>,
}

impl BeamformingState {
    pub fn zeros(nt: usize, association: &Association) -> Self {
        Self { uavs: association.clusters.iter().map(|c| UavBeams::zeros(nt, c)).collect() }
    }

    pub fn power(&self, u: usize) -> f64 {
        self.uavs[u].power()
    }

    pub fn scale(&mut self, c: f64) {
        self.uavs.iter_mut().for_each(|b| b.scale(c));
    }
}

/// One transmitted stream of a UAV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    Common,
    Private(usize),
    Sensing,
}

/// How CS `k` decodes its streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsLink {
    pub serving: usize,
    /// Bandwidth of the private stream in Hz.
    pub private_bandwidth: f64,
    /// Bandwidth of the common stream, if the scheme has one.
    pub common_bandwidth: Option<f64>,
    /// Streams interfering with the private stream.
    pub private_interference: Vec<(usize, Stream)>,
    /// Streams interfering with the common stream.
    pub common_interference: Vec<(usize, Stream)>,
}

/// Decoding structure of a multiple-access scheme for a fixed association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub scheme: Scheme,
    pub links: Vec<CsLink>,
}

impl RateModel {
    pub fn has_common(&self) -> bool {
        self.links.iter().any(|l| l.common_bandwidth.is_some())
    }
}

/// Signal power of stream `s` of UAV `u` at CS `k`.
fn stream_power(ch: &Channels, beams: &BeamformingState, k: usize, u: usize, s: Stream) -> f64 {
    beams.uavs[u].stream(s).map_or(0.0, |p| inner_sq(&ch.h[u][k], p))
}

/// Common-stream SINR: coherent sum over UAVs of `h_{u,k}ᴴ p_{u,c}` against
/// the listed interference.
pub fn common_sinr(k: usize, ch: &Channels, beams: &BeamformingState, link: &CsLink, noise: f64) -> f64 {
    let signal: C64 = (0..ch.n_uav()).map(|u| ch.h[u][k].dotc(&beams.uavs[u].common)).sum();
    let interference: f64 = link.common_interference.iter().map(|&(u, s)| stream_power(ch, beams, k, u, s)).sum();
    signal.norm_sqr() / (interference + noise)
}

/// Private-stream SINR after the common stream has been removed.
pub fn private_sinr(k: usize, ch: &Channels, beams: &BeamformingState, link: &CsLink, noise: f64) -> f64 {
    let signal = stream_power(ch, beams, k, link.serving, Stream::Private(k));
    let interference: f64 = link.private_interference.iter().map(|&(u, s)| stream_power(ch, beams, k, u, s)).sum();
    signal / (interference + noise)
}

/// `B log₂(1 + γ)`.
pub fn rate(bandwidth: f64, sinr: f64) -> f64 {
    bandwidth * sinr.ln_1p() / std::f64::consts::LN_2
}

/// `β₀/(r²(o₀,q₀)σ²) Σ_u ‖a_uᴴ P_u‖² / r²(o_u,q₀)`.
pub fn sensing_snr(s: &Scenario, ch: &Channels, beams: &BeamformingState) -> f64 {
    let total: f64 = beams
        .uavs
        .iter()
        .enumerate()
        .map(|(u, b)| b.columns().map(|p| inner_sq(&ch.a[u], p)).sum::<f64>() / ch.ts_range_sq[u])
        .sum();
    s.sensing_coefficient() * total
}

/// Estimate of the sensing SNR from simulated received blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub snr: f64,
    /// Number of simulated symbol periods (`draws · L`).
    pub samples: usize,
}

/// Simulates `draws` blocks of `block_len` symbols at the receive UAV with
/// unit-power symbols, AWGN, and an independent uniform phase on each
/// `β_u`, and returns `Σ‖G S‖²_F / Σ‖N‖²_F`.
pub fn sensing_snr_monte_carlo(
    s: &Scenario,
    positions: &[Point],
    beams: &BeamformingState,
    block_len: usize,
    draws: usize,
    seed: u64,
) -> MonteCarloEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = crate::channel::steering_rx(&s.rx_uav_position, &s.ts_position, s.rx_altitude, s.nr);
    let b_norm_sq = norm_sq(&b);
    // w_u = P_uᴴ a_u so that a_uᴴ P_u s_u = w_uᴴ s_u.
    let weights: Vec<(f64, Vec<C64>)> = positions
        .iter()
        .zip(&beams.uavs)
        .map(|(o, ub)| {
            let a = crate::channel::steering_tx(o, &s.ts_position, s.uav_altitude, s.nt);
            let w = ub.columns().map(|p| p.dotc(&a)).collect();
            (crate::channel::sensing_gain(s, o), w)
        })
        .collect();
    let noise_sd = (s.noise_power / 2.0).sqrt();
    let cn = |rng: &mut ChaCha8Rng, sd: f64| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c64(sd * re, sd * im)
    };
    let mut signal = 0.0;
    let mut noise = 0.0;
    let sym_sd = std::f64::consts::FRAC_1_SQRT_2;
    for _ in 0..draws {
        let gains: Vec<C64> = weights
            .iter()
            .map(|(beta, _)| C64::from_polar(*beta, rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        for _ in 0..block_len {
            // The common symbol is shared by all UAVs; other streams are independent.
            let common = cn(&mut rng, sym_sd);
            let mut t = c64(0.0, 0.0);
            for ((_, w), g) in weights.iter().zip(&gains) {
                let mut z = w[0].conj() * common;
                for wi in &w[1..] {
                    z += wi.conj() * cn(&mut rng, sym_sd);
                }
                t += g * z;
            }
            signal += t.norm_sqr() * b_norm_sq;
            for _ in 0..s.nr {
                noise += cn(&mut rng, noise_sd).norm_sqr();
            }
        }
    }
    MonteCarloEstimate { snr: if noise > 0.0 { signal / noise } else { 0.0 }, samples: draws * block_len }
}

/// Every rate metric of one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub common_sinr: Vec<f64>,
    pub private_sinr: Vec<f64>,
    /// `R_k^c` in bits/s.
    pub common_rate_per_cs: Vec<f64>,
    /// `R_k^p` in bits/s.
    pub private_rate: Vec<f64>,
    /// `R^c = min_k R_k^c`.
    pub common_rate: f64,
    /// `C_k` in bits/s.
    pub allocation: Vec<f64>,
    /// `C_k + R_k^p`.
    pub total_rate: Vec<f64>,
    pub wsr: f64,
    pub sensing_snr: f64,
    /// Per-UAV transmit power in watts.
    pub power: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum RateError {
    #[error("CS {0} is not served by any UAV")]
    Unassociated(usize),
    #[error("allocation has {got} entries, expected {expected}")]
    AllocationLength { got: usize, expected: usize },
    #[error("allocation entry {0} is negative or not finite")]
    NegativeAllocation(usize),
}

/// Relative constraint violations of a report; all are ≤ 0 when feasible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violations {
    /// `(ΣC − R^c) / max(R^c, 1)`.
    pub common_budget: f64,
    /// `max_k (R_k^th − R_k^tot) / max(R_k^th, 1)`.
    pub qos: f64,
    /// `max_u (P_u − P_max) / P_max`.
    pub power: f64,
    /// `(γ̄ − γ^s) / max(γ̄, 1)`.
    pub sensing: f64,
}

impl Violations {
    pub fn max(&self) -> f64 {
        self.common_budget.max(self.qos).max(self.power).max(self.sensing)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

impl RateReport {
    pub fn violations(&self, s: &Scenario) -> Violations {
        let sum_c: f64 = self.allocation.iter().sum();
        let qos = self
            .total_rate
            .iter()
            .zip(&s.rate_threshold)
            .map(|(r, th)| (th - r) / th.max(1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        let power = self.power.iter().map(|p| (p - s.p_max) / s.p_max).fold(f64::NEG_INFINITY, f64::max);
        Violations {
            common_budget: (sum_c - self.common_rate) / self.common_rate.max(1.0),
            qos,
            power,
            sensing: (s.sensing_threshold - self.sensing_snr) / s.sensing_threshold.max(1.0),
        }
    }
}

/// Evaluates every metric for fixed channels, model, beams and allocation.
pub fn evaluate(
    s: &Scenario,
    ch: &Channels,
    model: &RateModel,
    beams: &BeamformingState,
    allocation: &[f64],
) -> Result<RateReport, RateError> {
    let k_n = model.links.len();
    if allocation.len() != k_n {
        return Err(RateError::AllocationLength { got: allocation.len(), expected: k_n });
    }
    if let Some(k) = allocation.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(RateError::NegativeAllocation(k));
    }
    let mut common_sinr_v = vec![0.0; k_n];
    let mut private_sinr_v = vec![0.0; k_n];
    let mut common_rate_k = vec![0.0; k_n];
    let mut private_rate = vec![0.0; k_n];
    for (k, link) in model.links.iter().enumerate() {
        if beams.uavs[link.serving].private_of(k).is_none() {
            return Err(RateError::Unassociated(k));
        }
        private_sinr_v[k] = private_sinr(k, ch, beams, link, s.noise_power);
        private_rate[k] = rate(link.private_bandwidth, private_sinr_v[k]);
        if let Some(bw) = link.common_bandwidth {
            common_sinr_v[k] = common_sinr(k, ch, beams, link, s.noise_power);
            common_rate_k[k] = rate(bw, common_sinr_v[k]);
        }
    }
    let common_rate = if model.has_common() {
        common_rate_k.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    let total_rate: Vec<f64> = allocation.iter().zip(&private_rate).map(|(c, r)| c + r).collect();
    let wsr = s.weights.iter().zip(&total_rate).map(|(m, r)| m * r).sum();
    Ok(RateReport {
        common_sinr: common_sinr_v,
        private_sinr: private_sinr_v,
        common_rate_per_cs: common_rate_k,
        private_rate,
        common_rate,
        allocation: allocation.to_vec(),
        total_rate,
        wsr,
        sensing_snr: sensing_snr(s, ch, beams),
        power: (0..beams.uavs.len()).map(|u| beams.power(u)).collect(),
    })
}

/// [`evaluate`] with the allocation chosen by [`optimal_allocation`].
pub fn evaluate_best_split(
    s: &Scenario,
    ch: &Channels,
    model: &RateModel,
    beams: &BeamformingState,
) -> Result<RateReport, RateError> {
    let zero = vec![0.0; model.links.len()];
    let base = evaluate(s, ch, model, beams, &zero)?;
    let (alloc, _) = optimal_allocation(base.common_rate, &base.private_rate, &s.rate_threshold, &s.weights);
    evaluate(s, ch, model, beams, &alloc)
}

/// WSR-maximizing split of the common rate `R^c` given private rates.
///
/// Each CS first receives what it lacks to reach its threshold; the
/// remainder goes to the largest weight (lowest index on ties). When the
/// shortfalls exceed `R^c`, the common rate is split in proportion to them
/// and the returned flag is `false`.
pub fn optimal_allocation(common_rate: f64, private_rate: &[f64], threshold: &[f64], weights: &[f64]) -> (Vec<f64>, bool) {
    let need: Vec<f64> = private_rate.iter().zip(threshold).map(|(r, t)| (t - r).max(0.0)).collect();
    let total_need: f64 = need.iter().sum();
    let budget = common_rate.max(0.0);
    if total_need > budget {
        let c = if total_need > 0.0 { need.iter().map(|n| budget * n / total_need).collect() } else { need };
        return (c, false);
    }
    let mut c = need;
    if let Some(best) = (0..weights.len()).reduce(|a, b| if weights[b] > weights[a] { b } else { a }) {
        c[best] += budget - total_need;
    }
    (c, true)
}

/// Everything needed to turn positions and beams into an exact report.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    pub scenario: &'a Scenario,
    pub association: &'a Association,
    pub mode: ChannelMode,
    pub seed: u64,
    pub scheme: Scheme,
    /// Counts the sensing beams as interference at every decoder.
    pub sensing_interference: bool,
}

impl<'a> Evaluator<'a> {
    pub fn channels(&self, positions: &[Point]) -> Channels {
        Channels::build(self.scenario, self.mode, positions, self.seed)
    }

    pub fn model(&self, ch: &Channels) -> RateModel {
        crate::baselines::rate_model(self.scheme, self.scenario, self.association, ch, self.sensing_interference)
    }

    pub fn report(&self, positions: &[Point], beams: &BeamformingState, allocation: &[f64]) -> Result<RateReport, RateError> {
        let ch = self.channels(positions);
        evaluate(self.scenario, &ch, &self.model(&ch), beams, allocation)
    }

    /// Report with the WSR-maximizing allocation of the common rate.
    pub fn report_best_split(&self, positions: &[Point], beams: &BeamformingState) -> Result<RateReport, RateError> {
        let ch = self.channels(positions);
        evaluate_best_split(self.scenario, &ch, &self.model(&ch), beams)
    }
}
