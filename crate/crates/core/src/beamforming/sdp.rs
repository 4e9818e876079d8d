//! Semidefinite relaxation of the beamforming subproblem.
//!
//! Covariances are optimized in the span of the channels that see each
//! UAV: `X = V Y Vᴴ`, with `V_u` an orthonormal basis of
//! `span{h_{u,1}, …, h_{u,K}, a_u}`. Components outside that span only
//! consume power, so the restriction loses nothing.
//!
//! Channels are normalized by `√(P_max/σ²)` and covariances by `P_max`,
//! so noise is 1, the power budget is 1 and rates are in units of the
//! bandwidth `B`.
//!
//! The common stream is relaxed jointly across UAVs: its covariance is
//! the `(Σ d_u)`-square matrix of the stacked beam `[p_{1,c}; …; p_{U,c}]`,
//! which keeps the coherent combination of the common signal exact.
//!
//! Every rate `log(1 + S/I)` is written `χ − ζ` with `e^χ ≤ S + I` (an
//! exponential cone) and `e^ζ ≥ I`, whose convex side is replaced by the
//! tangent at the linearization point. Both are shifted by their values at
//! that point to keep the cones well scaled. QoS and sensing requirements carry
//! penalized slacks so the subproblem is always feasible.

use crate::channel::Channels;
use crate::conic::{ConicProgram, HermitianVar, LinExpr, Var};
use crate::rates::{BeamformingState, RateModel, Stream};
use crate::scenario::Scenario;
use crate::types::{c64, inner_sq, CMatrix, CVector, C64};

/// What the subproblem maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpObjective {
    /// `Σ μ_k (C_k + R_k^p)` subject to QoS and sensing.
    WeightedSumRate,
    /// Sensing SNR subject to QoS.
    SensingSnr,
}

/// Columns spanning `vectors`, orthonormalized by modified Gram–Schmidt.
pub fn orthonormal_basis(vectors: &[&CVector]) -> CMatrix {
    let n = vectors.first().map_or(0, |v| v.len());
    let mut cols: Vec<CVector> = Vec::new();
    for v in vectors {
        let scale = v.norm();
        if scale == 0.0 || cols.len() == n {
            continue;
        }
        let mut w = (*v).clone();
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dotc(&w);
                w -= c * proj;
            }
        }
        let r = w.norm();
        if r > 1e-9 * scale {
            cols.push(w / c64(r, 0.0));
        }
    }
    if cols.is_empty() {
        return CMatrix::zeros(n, 0);
    }
    CMatrix::from_columns(&cols)
}

/// Handles into a built subproblem.
#[derive(Debug, Clone)]
pub struct BeamSdp {
    pub program: ConicProgram,
    /// `V_u`, `N_t × d_u`.
    pub bases: Vec<CMatrix>,
    /// Start of UAV `u`'s block in the joint common covariance.
    pub offsets: Vec<usize>,
    pub common: Option<HermitianVar>,
    /// `(k, Y_{u,k})` per UAV.
    pub private: Vec<Vec<(usize, HermitianVar)>>,
    pub sensing: Vec<HermitianVar>,
    /// `C_k / B`, absent without a common stream.
    pub allocation: Vec<Var>,
    /// `R̂_k^p / B`.
    pub private_rate: Vec<Var>,
    pub qos_slack: Vec<Var>,
    pub sensing_slack: Option<Var>,
    /// `Σ μ_k (C_k + R̂_k^p) / B`.
    pub rate_objective: LinExpr,
    /// `γ^s` as a linear function of the covariances.
    pub sensing_expr: LinExpr,
}

/// Covariances read back from a solution, in watts and the full
/// `N_t`-dimensional antenna space.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Covariances {
    /// Joint common covariance of the stacked beam, `U N_t` square.
    pub common: Option<CMatrix>,
    pub private: Vec<Vec<(usize, CMatrix)>>,
    pub sensing: Vec<CMatrix>,
}

/// Reduced-space covariances of a solution.
#[derive(Debug, Clone)]
pub struct ReducedCovariances {
    pub common: Option<CMatrix>,
    pub private: Vec<Vec<(usize, CMatrix)>>,
    pub sensing: Vec<CMatrix>,
}

impl BeamSdp {
    pub fn reduced(&self, x: &[f64]) -> ReducedCovariances {
        ReducedCovariances {
            common: self.common.as_ref().map(|c| c.value(x)),
            private: self.private.iter().map(|v| v.iter().map(|(k, h)| (*k, h.value(x))).collect()).collect(),
            sensing: self.sensing.iter().map(|h| h.value(x)).collect(),
        }
    }

    /// Maps a reduced vector of UAV `u` back to antennas, in watts^½.
    pub fn lift(&self, u: usize, y: &CVector, p_max: f64) -> CVector {
        &self.bases[u] * y * c64(p_max.sqrt(), 0.0)
    }

    /// Full-space covariances in watts.
    pub fn covariances(&self, x: &[f64], p_max: f64) -> Covariances {
        let r = self.reduced(x);
        let w = c64(p_max, 0.0);
        let lift = |u: usize, y: &CMatrix| &self.bases[u] * y * self.bases[u].adjoint() * w;
        let common = r.common.as_ref().map(|y| {
            let nt = self.bases[0].nrows();
            let u_n = self.bases.len();
            let mut v = CMatrix::zeros(u_n * nt, y.nrows());
            for u in 0..u_n {
                let d = self.bases[u].ncols();
                v.view_mut((u * nt, self.offsets[u]), (nt, d)).copy_from(&self.bases[u]);
            }
            &v * y * v.adjoint() * w
        });
        Covariances {
            common,
            private: r.private.iter().enumerate().map(|(u, v)| v.iter().map(|(k, y)| (*k, lift(u, y))).collect()).collect(),
            sensing: r.sensing.iter().enumerate().map(|(u, y)| lift(u, y)).collect(),
        }
    }
}

/// Subproblem settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpConfig {
    pub objective: SdpObjective,
    /// Weight of the QoS and sensing slacks.
    pub penalty: f64,
    /// When false the sensing covariances are forced to zero.
    pub sensing_beam: bool,
}

/// Builds the convexified subproblem linearized at `state`.
pub fn build_beam_sdp(
    s: &Scenario,
    ch: &Channels,
    model: &RateModel,
    state: &BeamformingState,
    cfg: &SdpConfig,
) -> BeamSdp {
    let (objective, penalty) = (cfg.objective, cfg.penalty);
    let u_n = ch.n_uav();
    let k_n = s.n_cs;
    let gain = (s.p_max / s.noise_power).sqrt();
    let bases: Vec<CMatrix> = (0..u_n)
        .map(|u| {
            let mut vs: Vec<&CVector> = ch.h[u].iter().collect();
            vs.push(&ch.a[u]);
            orthonormal_basis(&vs)
        })
        .collect();
    let dims: Vec<usize> = bases.iter().map(|b| b.ncols()).collect();
    let mut offsets = Vec::with_capacity(u_n);
    let mut total = 0;
    for &d in &dims {
        offsets.push(total);
        total += d;
    }
    // Reduced, normalized channels.
    let g: Vec<Vec<CVector>> =
        (0..u_n).map(|u| ch.h[u].iter().map(|h| bases[u].adjoint() * h * c64(gain, 0.0)).collect()).collect();
    let a: Vec<CVector> = (0..u_n).map(|u| bases[u].adjoint() * &ch.a[u]).collect();

    let mut p = ConicProgram::new();
    let has_common = model.has_common();
    let common = has_common.then(|| HermitianVar::new(&mut p, "Yc", total));
    let private: Vec<Vec<(usize, HermitianVar)>> = (0..u_n)
        .map(|u| {
            state.uavs[u]
                .private
                .iter()
                .map(|(k, _)| (*k, HermitianVar::new(&mut p, &format!("Yp[{u},{k}]"), dims[u])))
                .collect()
        })
        .collect();
    let sensing: Vec<HermitianVar> = (0..u_n).map(|u| HermitianVar::new(&mut p, &format!("Yr[{u}]"), dims[u])).collect();

    let stacked = |u: usize, v: &CVector| -> CVector {
        let mut out = CVector::zeros(total);
        out.rows_mut(offsets[u], dims[u]).copy_from(v);
        out
    };
    // Received power at CS k (or any reduced vector v of UAV u) of one stream.
    let stream_quad = |u: usize, stream: Stream, v: &CVector| -> LinExpr {
        match stream {
            Stream::Common => common.as_ref().map_or(LinExpr::zero(), |c| c.quad_form(&stacked(u, v))),
            Stream::Private(k) => private[u]
                .iter()
                .find(|(j, _)| *j == k)
                .map_or(LinExpr::zero(), |(_, y)| y.quad_form(v)),
            Stream::Sensing => sensing[u].quad_form(v),
        }
    };
    let incumbent = |k: usize, list: &[(usize, Stream)]| -> f64 {
        1.0 + list
            .iter()
            .map(|&(i, st)| state.uavs[i].stream(st).map_or(0.0, |b| inner_sq(&ch.h[i][k], b)) / s.noise_power)
            .sum::<f64>()
    };
    let interference = |k: usize, list: &[(usize, Stream)]| -> LinExpr {
        let mut e = LinExpr::constant(1.0);
        for &(i, st) in list {
            e += stream_quad(i, st, &g[i][k]);
        }
        e
    };

    // Power budgets.
    for u in 0..u_n {
        let mut pw = sensing[u].trace();
        for (_, y) in &private[u] {
            pw += y.trace();
        }
        if let Some(c) = &common {
            for i in offsets[u]..offsets[u] + dims[u] {
                pw += c.entry_re(i, i);
            }
        }
        p.le(pw, 1.0);
    }
    if let Some(c) = &common {
        p.add(c.psd());
    }
    for v in &private {
        for (_, y) in v {
            p.add(y.psd());
        }
    }
    for y in &sensing {
        p.add(y.psd());
        if !cfg.sensing_beam {
            p.eq(y.trace(), 0.0);
        }
    }

    let allocation: Vec<Var> = if has_common { p.vars("c", k_n) } else { Vec::new() };
    for &c in &allocation {
        p.ge(c, 0.0);
    }
    let sum_c: LinExpr = allocation.iter().map(|&c| LinExpr::from(c)).sum();
    let private_rate = p.vars("r", k_n);
    let qos_slack = p.vars("s_qos", k_n);
    let ln2 = std::f64::consts::LN_2;
    for (k, link) in model.links.iter().enumerate() {
        let u = link.serving;
        // Private stream.
        // χ and ζ are offset by their incumbent values so every cone
        // argument is of order one.
        let chi = p.var(format!("chi[{k}]"));
        let zeta = p.var(format!("zeta[{k}]"));
        let i_p = interference(k, &link.private_interference);
        let signal = stream_quad(u, Stream::Private(k), &g[u][k]);
        let i_bar = incumbent(k, &link.private_interference);
        let s_bar = state.uavs[u].private_of(k).map_or(0.0, |b| inner_sq(&ch.h[u][k], b)) / s.noise_power;
        let t_bar = i_bar + s_bar;
        p.exp_le(chi, (signal + i_p.clone()) * (1.0 / t_bar));
        p.ge(LinExpr::from(zeta) + 1.0, i_p * (1.0 / i_bar));
        p.ge(LinExpr::from(zeta) + 1.0, 1.0 / i_bar);
        p.ge(
            LinExpr::from(chi) - zeta + (t_bar / i_bar).ln(),
            LinExpr::from(private_rate[k]) * (ln2 * s.bandwidth / link.private_bandwidth),
        );
        // Common stream.
        if let (Some(bw), Some(c)) = (link.common_bandwidth, &common) {
            let eta = p.var(format!("eta[{k}]"));
            let rho = p.var(format!("rho[{k}]"));
            let i_c = interference(k, &link.common_interference);
            let hk: CVector = {
                let mut out = CVector::zeros(total);
                for i in 0..u_n {
                    out.rows_mut(offsets[i], dims[i]).copy_from(&g[i][k]);
                }
                out
            };
            let i_bar = incumbent(k, &link.common_interference);
            let coherent: C64 = (0..u_n).map(|i| ch.h[i][k].dotc(&state.uavs[i].common)).sum();
            let t_bar = i_bar + coherent.norm_sqr() / s.noise_power;
            p.exp_le(eta, (c.quad_form(&hk) + i_c.clone()) * (1.0 / t_bar));
            p.ge(LinExpr::from(rho) + 1.0, i_c * (1.0 / i_bar));
            p.ge(LinExpr::from(rho) + 1.0, 1.0 / i_bar);
            p.ge(LinExpr::from(eta) - rho + (t_bar / i_bar).ln(), sum_c.clone() * (ln2 * s.bandwidth / bw));
        }
        // QoS with slack.
        p.ge(qos_slack[k], 0.0);
        let mut tot = LinExpr::from(private_rate[k]) + qos_slack[k];
        if has_common {
            tot += LinExpr::from(allocation[k]);
        }
        p.ge(tot, s.rate_threshold[k] / s.bandwidth);
    }

    // Sensing SNR as a linear function of the covariances.
    let coef = s.sensing_coefficient() * s.p_max;
    let mut sensing_expr = LinExpr::zero();
    for u in 0..u_n {
        let mut e = sensing[u].quad_form(&a[u]);
        for (_, y) in &private[u] {
            e += y.quad_form(&a[u]);
        }
        if let Some(c) = &common {
            e += c.quad_form(&stacked(u, &a[u]));
        }
        sensing_expr += e * (coef / ch.ts_range_sq[u]);
    }
    let sensing_expr = sensing_expr.compact();

    let mut rate_objective = LinExpr::zero();
    for k in 0..k_n {
        rate_objective.add_term(private_rate[k], s.weights[k]);
        if has_common {
            rate_objective.add_term(allocation[k], s.weights[k]);
        }
    }
    let qos_penalty: LinExpr = qos_slack.iter().map(|&v| LinExpr::term(v, penalty)).sum();
    let mut sensing_slack = None;
    match objective {
        SdpObjective::WeightedSumRate => {
            let mut obj = rate_objective.clone() - qos_penalty;
            if s.sensing_threshold > 0.0 {
                let sl = p.var("s_sense");
                p.ge(sl, 0.0);
                // Expressed relative to the threshold.
                let scale = 1.0 / s.sensing_threshold.max(1.0);
                p.ge((sensing_expr.clone() + sl) * scale, s.sensing_threshold * scale);
                obj += LinExpr::term(sl, -penalty * scale);
                sensing_slack = Some(sl);
            }
            p.maximize(obj);
        }
        SdpObjective::SensingSnr => {
            p.maximize(sensing_expr.clone() - qos_penalty);
        }
    }
    BeamSdp {
        program: p,
        bases,
        offsets,
        common,
        private,
        sensing,
        allocation,
        private_rate,
        qos_slack,
        sensing_slack,
        rate_objective,
        sensing_expr,
    }
}
