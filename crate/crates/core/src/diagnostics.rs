//! Self-test checks: analytic gradients against finite differences, the
//! closed-form sensing SNR against its Monte-Carlo simulation, and a suite
//! of cheap model invariants.
//!
//! Every check compares an implementation against an independent
//! computation. [`selftest`] bundles them into a pass/fail report for the
//! command line and the acceptance harness.

use std::fmt;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::association::{kmeans_associate, wcss, Association};
use crate::baselines::Scheme;
use crate::beamforming::extract_rank1;
use crate::channel::{steering_tx, ChannelMode};
use crate::conic::hermitian_to_real_embedding;
use crate::deployment::{
    qos_radius_bound, rate_terms, sensing_taylor_with, sensing_trace, sensing_trace_gradient, surrogate_rate,
    taylor_private_rate, RateTerms,
};
use crate::rates::{private_sinr, sensing_snr, sensing_snr_monte_carlo, BeamformingState, Evaluator, MonteCarloEstimate};
use crate::pipeline::RunOptions;
use crate::scenario::{db_to_linear, dbm_to_watts, Scenario};
use crate::types::{c64, inner_sq, norm_sq, point, CMatrix, CVector, Point};

/// Finite-difference step in meters.
pub const FD_STEP: f64 = 1e-3;
/// Largest accepted relative gradient error.
pub const GRADIENT_TOL: f64 = 1e-5;
/// Largest accepted relative error of the Monte-Carlo sensing estimate.
pub const ORACLE_TOL: f64 = 0.02;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

#[derive(Debug, Clone)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Random expansion points per gradient.
    pub gradient_points: usize,
    /// Flips the sign of `e_u` to confirm the gradient check catches it.
    pub inject_fault: bool,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self { seed: 0, gradient_points: 50, inject_fault: false }
    }
}

/// Largest relative error of one analytic gradient over random points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub name: &'static str,
    pub points: usize,
    pub max_rel_err: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADIENT_TOL
    }
}

fn central_difference(f: impl Fn(&Point) -> f64, o: &Point) -> Vector2<f64> {
    let h = FD_STEP;
    // Fourth-order central stencil.
    let d = |e: Vector2<f64>| (8.0 * (f(&(o + e)) - f(&(o - e))) - (f(&(o + 2.0 * e)) - f(&(o - 2.0 * e)))) / (12.0 * h);
    Vector2::new(d(Vector2::new(h, 0.0)), d(Vector2::new(0.0, h)))
}

fn rel_err(a: &Vector2<f64>, reference: &Vector2<f64>) -> f64 {
    (a - reference).norm() / reference.norm().max(f64::MIN_POSITIVE)
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| c64(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

/// Random beams with every UAV at full power.
pub fn random_beams(s: &Scenario, a: &Association, rng: &mut ChaCha8Rng) -> BeamformingState {
    let mut b = BeamformingState::zeros(s.nt, a);
    for ub in &mut b.uavs {
        ub.common = random_vector(rng, s.nt);
        ub.sensing = random_vector(rng, s.nt);
        for (_, p) in &mut ub.private {
            *p = random_vector(rng, s.nt);
        }
        let scale = (s.p_max / ub.power()).sqrt();
        ub.scale(scale);
    }
    b
}

fn random_point(rng: &mut ChaCha8Rng) -> Point {
    point(rng.gen_range(0.0..500.0), rng.gen_range(0.0..500.0))
}

fn random_covariance(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let rank = rng.gen_range(1..=3);
    let mut r = CMatrix::zeros(n, n);
    for _ in 0..rank {
        let v = random_vector(rng, n);
        r += &v * v.adjoint();
    }
    r
}

/// Checks `c_{u,k}`, `F` and `e_u` against central finite differences at
/// `points` random expansion points each.
pub fn gradient_suite(points: usize, seed: u64, inject_fault: bool) -> Vec<GradientCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c_err: f64 = 0.0;
    let mut f_err: f64 = 0.0;
    let mut e_err: f64 = 0.0;
    let mut n = 0;
    while n < points {
        let s = Scenario::defaults(rng.gen());
        let Ok(a) = kmeans_associate(&s.cs_positions, s.n_uav, rng.gen(), 100, 4) else { continue };
        let positions: Vec<Point> = (0..s.n_uav).map(|_| random_point(&mut rng)).collect();
        let mode = if n % 2 == 0 { ChannelMode::LosOnes } else { ChannelMode::Rayleigh };
        let ev = Evaluator { scenario: &s, association: &a, mode, seed: rng.gen(), scheme: Scheme::CoRsma, sensing_interference: false };
        let beams = random_beams(&s, &a, &mut rng);
        let ch = ev.channels(&positions);
        let terms = rate_terms(&s, &ev, &ev.model(&ch), &positions, &beams);
        let t = &terms[rng.gen_range(0..terms.len())];
        let o = positions[t.serving];
        if (o - t.q).norm() < 1.0 || (o - s.ts_position).norm() < 1.0 {
            continue;
        }
        let (_, c) = taylor_private_rate(t, &o, s.uav_altitude);
        c_err = c_err.max(rel_err(&c, &central_difference(|p| surrogate_rate(t, p, s.uav_altitude), &o)));

        let r = random_covariance(&mut rng, s.nt);
        let f = sensing_trace_gradient(&r, &o, &s);
        f_err = f_err.max(rel_err(&f, &central_difference(|p| sensing_trace(&r, p, &s), &o)));

        let sign = if inject_fault { -1.0 } else { 1.0 };
        let (_, e) = sensing_taylor_with(&r, &o, &s, sign);
        let h = |p: &Point| sensing_trace(&r, p, &s) / s.uav_range_sq(p, &s.ts_position);
        e_err = e_err.max(rel_err(&e, &central_difference(h, &o)));
        n += 1;
    }
    vec![
        GradientCheck { name: "c_uk", points, max_rel_err: c_err },
        GradientCheck { name: "F", points, max_rel_err: f_err },
        GradientCheck { name: "e_u", points, max_rel_err: e_err },
    ]
}

/// Closed-form sensing SNR versus its simulation at random beams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub n_uav: usize,
    pub closed_form: f64,
    pub estimate: MonteCarloEstimate,
    pub rel_err: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.rel_err < ORACLE_TOL && self.estimate.samples >= 10_000
    }
}

/// Runs the Monte-Carlo oracle with `n_uav` UAVs at random positions and
/// random full-power beams.
pub fn sensing_oracle(n_uav: usize, block_len: usize, draws: usize, seed: u64) -> OracleCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Scenario::defaults(seed);
    s.n_uav = n_uav;
    s.n_cs = n_uav;
    s.cs_positions.truncate(n_uav);
    s.rate_threshold.truncate(n_uav);
    s.weights = vec![1.0 / n_uav as f64; n_uav];
    let a = Association::from_clusters((0..n_uav).map(|k| vec![k]).collect(), s.cs_positions.clone());
    let positions: Vec<Point> = (0..n_uav).map(|_| random_point(&mut rng)).collect();
    let beams = random_beams(&s, &a, &mut rng);
    let ch = crate::channel::Channels::build(&s, ChannelMode::LosOnes, &positions, 0);
    let closed_form = sensing_snr(&s, &ch, &beams);
    let estimate = sensing_snr_monte_carlo(&s, &positions, &beams, block_len, draws, rng.gen());
    let rel_err = (estimate.snr - closed_form).abs() / closed_form;
    OracleCheck { n_uav, closed_form, estimate, rel_err }
}

/// Compares the closed-form QoS radius against the SINR inequality it was
/// rearranged from, evaluated directly from random beams, positions and
/// squared-distance slacks. Returns `(agreements, trials)`.
pub fn qos_radius_agreement(trials: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    let mut done = 0;
    while done < trials {
        let s = Scenario::defaults(rng.gen());
        let Ok(a) = kmeans_associate(&s.cs_positions, s.n_uav, rng.gen(), 100, 4) else { continue };
        let beams = random_beams(&s, &a, &mut rng);
        let positions: Vec<Point> = (0..s.n_uav).map(|_| random_point(&mut rng)).collect();
        let k = rng.gen_range(0..s.n_cs);
        let u = a.clusters.iter().position(|c| c.contains(&k)).expect("every CS is associated");
        let q = s.cs_positions[k];
        let ones = CVector::from_element(s.nt, c64(1.0, 0.0));
        let h2 = s.uav_altitude * s.uav_altitude;
        // Slacks at or below the true squared distances.
        let r_hat: Vec<f64> =
            positions.iter().map(|o| ((o - q).norm_squared() + h2) * rng.gen_range(0.5..=1.0)).collect();
        let signal = inner_sq(&ones, beams.uavs[u].private_of(k).unwrap());
        let intra: f64 =
            beams.uavs[u].private.iter().filter(|(j, _)| *j != k).map(|(_, p)| inner_sq(&ones, p)).sum();
        let inter: f64 = (0..s.n_uav)
            .filter(|&i| i != u)
            .map(|i| beams.uavs[i].private.iter().map(|(_, p)| inner_sq(&ones, p)).sum::<f64>() / r_hat[i])
            .sum();
        let common = rng.gen_range(0.0..s.rate_threshold[k]);
        let threshold = s.rate_threshold[k];
        let r2 = (positions[u] - q).norm_squared() + h2;

        let sinr = signal / (intra + r2 * inter + s.noise_power / s.eps0 * r2);
        let target = ((threshold - common) / s.bandwidth).exp2() - 1.0;
        if ((sinr - target) / target).abs() < 1e-9 {
            continue;
        }
        let direct = sinr >= target;

        let t = RateTerms {
            cs: k,
            serving: u,
            signal,
            intra,
            psi: inter + s.noise_power / s.eps0,
            bandwidth: s.bandwidth,
            q,
        };
        let ball = match qos_radius_bound(&t, common, threshold, s.uav_altitude) {
            None => true,
            Some(b) => (positions[u] - q).norm_squared() <= b,
        };
        agree += usize::from(direct == ball);
        done += 1;
    }
    (agree, trials)
}

/// K-Means against random partitions: on each of `instances` random
/// layouts of `n_cs` CSs and `n_uav` clusters, counts whether the K-Means
/// WCSS is no larger than the best of `partitions` random non-empty
/// partitions. Returns `(wins, instances)`.
pub fn kmeans_quality(instances: usize, n_uav: usize, n_cs: usize, partitions: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0;
    for _ in 0..instances {
        let pts: Vec<Point> = (0..n_cs).map(|_| random_point(&mut rng)).collect();
        let a = kmeans_associate(&pts, n_uav, rng.gen(), 100, RunOptions::default().kmeans_restarts).expect("n_cs >= n_uav");
        let ours = wcss(&pts, &a.clusters);
        let mut best = f64::INFINITY;
        let mut drawn = 0;
        while drawn < partitions {
            let labels: Vec<usize> = (0..n_cs).map(|_| rng.gen_range(0..n_uav)).collect();
            let clusters: Vec<Vec<usize>> =
                (0..n_uav).map(|c| (0..n_cs).filter(|&k| labels[k] == c).collect()).collect();
            if clusters.iter().any(Vec::is_empty) {
                continue;
            }
            best = best.min(wcss(&pts, &clusters));
            drawn += 1;
        }
        wins += usize::from(ours <= best * (1.0 + 1e-12));
    }
    (wins, instances)
}

/// Quick model invariants, each against an independent computation.
pub fn invariant_suite(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let worst = (0..100)
        .map(|_| {
            let x: f64 = rng.gen_range(-150.0..50.0);
            (dbm_to_watts(x) - db_to_linear(x) / 1000.0).abs() / dbm_to_watts(x)
        })
        .fold(0.0, f64::max);
    out.push(Check::new("dBm and dB conversions agree", worst < 1e-12, format!("max rel err {worst:.2e}")));

    let s = Scenario::defaults(seed);
    let worst = (0..50)
        .map(|_| {
            let a = steering_tx(&random_point(&mut rng), &s.ts_position, s.uav_altitude, s.nt);
            let modulus = a.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max);
            modulus.max((norm_sq(&a) - s.nt as f64).abs())
        })
        .fold(0.0, f64::max);
    out.push(Check::new("steering vectors have unit-modulus entries", worst < 1e-12, format!("max deviation {worst:.2e}")));

    let a = kmeans_associate(&s.cs_positions, s.n_uav, seed, 100, 16);
    let valid = a.as_ref().is_ok_and(|a| a.is_valid_partition(s.n_cs));
    out.push(Check::new("K-Means returns a partition with non-empty clusters", valid, format!("U={} K={}", s.n_uav, s.n_cs)));
    let Ok(a) = a else { return out };

    let positions: Vec<Point> = (0..s.n_uav).map(|_| random_point(&mut rng)).collect();
    let beams = random_beams(&s, &a, &mut rng);
    let ev = Evaluator { scenario: &s, association: &a, mode: ChannelMode::Rayleigh, seed, scheme: Scheme::CoRsma, sensing_interference: false };
    let ch = ev.channels(&positions);
    let base = sensing_snr(&s, &ch, &beams);
    let mut scaled = beams.clone();
    scaled.scale(1.7);
    let ratio = sensing_snr(&s, &ch, &scaled) / base;
    out.push(Check::new(
        "sensing SNR scales with the squared beam magnitude",
        (ratio - 1.7 * 1.7).abs() < 1e-9,
        format!("ratio {ratio:.12} for scale 1.7"),
    ));

    let model = ev.model(&ch);
    let increasing = model.links.iter().enumerate().all(|(k, link)| {
        let lo = private_sinr(k, &ch, &beams, link, s.noise_power);
        let hi = private_sinr(k, &ch, &scaled, link, s.noise_power);
        hi > lo
    });
    out.push(Check::new("private SINR increases with the beam scale", increasing, "all CSs"));

    let v = random_vector(&mut rng, s.nt);
    let recovered = extract_rank1(&(&v * v.adjoint()), 0.99)
        .map(|r| {
            let phase = v.dotc(&r.vector);
            (&r.vector - &v * (phase / c64(phase.norm(), 0.0))).norm() / v.norm()
        })
        .unwrap_or(f64::INFINITY);
    out.push(Check::new("rank-one matrices are recovered up to phase", recovered < 1e-8, format!("rel err {recovered:.2e}")));

    let m = random_covariance(&mut rng, 4);
    let emb = hermitian_to_real_embedding(&m).map(|e| e.symmetric_eigen().eigenvalues);
    let embedded_ok = emb.as_ref().is_ok_and(|eig| {
        let mut e: Vec<f64> = eig.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().flat_map(|&x| [x, x]).collect();
        want.sort_by(f64::total_cmp);
        e.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + b.abs()))
    });
    out.push(Check::new("real embedding doubles every eigenvalue's multiplicity", embedded_ok, "random 4x4 PSD"));

    out
}

/// Runs every check at the default sizes.
pub fn selftest(opts: &SelftestOptions) -> SelftestReport {
    let mut checks = Vec::new();
    for g in gradient_suite(opts.gradient_points, opts.seed, opts.inject_fault) {
        checks.push(Check::new(
            format!("gradient {}", g.name),
            g.passed(),
            format!("max rel err {:.2e} over {} points (tol {GRADIENT_TOL:.0e})", g.max_rel_err, g.points),
        ));
    }
    for n_uav in [1, 3] {
        let o = sensing_oracle(n_uav, 10, 10_000, opts.seed + n_uav as u64);
        checks.push(Check::new(
            format!("sensing SNR oracle U={n_uav}"),
            o.passed(),
            format!(
                "closed form {:.6e}, estimate {:.6e}, rel err {:.3}% over {} samples (tol {:.0}%)",
                o.closed_form,
                o.estimate.snr,
                100.0 * o.rel_err,
                o.estimate.samples,
                100.0 * ORACLE_TOL
            ),
        ));
    }
    let (agree, n) = qos_radius_agreement(100, opts.seed);
    checks.push(Check::new("QoS radius matches the SINR inequality", agree == n, format!("{agree}/{n} agree")));
    checks.extend(invariant_suite(opts.seed));
    SelftestReport { checks }
}
