//! Communication channels, ULA steering vectors and sensing gains.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scenario::Scenario;
use crate::types::{c64, CVector, Point};

/// Small-scale fading model of the UAV-to-CS links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// `h̃ = 𝟙`.
    #[default]
    LosOnes,
    /// `h̃` is the transmit steering vector toward the CS.
    LosSteering,
    /// `h̃ ~ CN(0, I)`, drawn once per `(seed, u, k)`.
    Rayleigh,
}

impl std::str::FromStr for ChannelMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "los_ones" | "ones" => Ok(Self::LosOnes),
            "los_steering" | "steering" => Ok(Self::LosSteering),
            "rayleigh" => Ok(Self::Rayleigh),
            other => Err(format!("unknown channel mode `{other}`")),
        }
    }
}

/// `√(‖o − q‖² + H²)`.
pub fn distance3d(o: &Point, h: f64, q: &Point) -> f64 {
    ((o - q).norm_squared() + h * h).sqrt()
}

/// Half-wavelength ULA response with entries `e^{jπ n cos θ}`, n = 0..N-1.
pub fn ula_steering(n: usize, cos_theta: f64) -> CVector {
    CVector::from_fn(n, |i, _| {
        let phase = PI * i as f64 * cos_theta;
        c64(phase.cos(), phase.sin())
    })
}

/// Transmit steering vector `a(o_u, q₀)` with `cos θ = H_u / r(o_u, q₀)`.
pub fn steering_tx(o_u: &Point, q0: &Point, h_u: f64, nt: usize) -> CVector {
    ula_steering(nt, h_u / distance3d(o_u, h_u, q0))
}

/// Receive steering vector `b(o₀, q₀)` with `cos φ = H₀ / r(o₀, q₀)`.
pub fn steering_rx(o0: &Point, q0: &Point, h0: f64, nr: usize) -> CVector {
    ula_steering(nr, h0 / distance3d(o0, h0, q0))
}

/// `β_u = √(β₀ / (r²(o_u,q₀) r²(o₀,q₀)))`.
pub fn sensing_gain(s: &Scenario, o_u: &Point) -> f64 {
    (s.beta0 / (s.uav_range_sq(o_u, &s.ts_position) * s.rx_range_sq())).sqrt()
}

/// Small-scale fading vector `h̃_{u,k}`.
pub fn small_scale(s: &Scenario, mode: ChannelMode, o_u: &Point, u: usize, k: usize, seed: u64) -> CVector {
    match mode {
        ChannelMode::LosOnes => CVector::from_element(s.nt, c64(1.0, 0.0)),
        ChannelMode::LosSteering => steering_tx(o_u, &s.cs_positions[k], s.uav_altitude, s.nt),
        ChannelMode::Rayleigh => rayleigh_draw(s.nt, seed, u, k),
    }
}

/// `CN(0, I_n)` vector from an independent stream per `(u, k)`.
pub fn rayleigh_draw(n: usize, seed: u64, u: usize, k: usize) -> CVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((u as u64) << 32) | k as u64);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    CVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        c64(scale * re, scale * im)
    })
}

/// `h_{u,k} = √(ε₀ / r²(o_u,q_k)) h̃_{u,k}`.
pub fn comm_channel(s: &Scenario, mode: ChannelMode, o_u: &Point, u: usize, k: usize, seed: u64) -> CVector {
    let gain = (s.eps0 / s.uav_range_sq(o_u, &s.cs_positions[k])).sqrt();
    small_scale(s, mode, o_u, u, k, seed) * c64(gain, 0.0)
}

/// All channel quantities for one set of UAV positions.
#[derive(Debug, Clone)]
pub struct Channels {
    /// `h[u][k]`.
    pub h: Vec<Vec<CVector>>,
    /// `a(o_u, q₀)` per UAV.
    pub a: Vec<CVector>,
    /// `r²(o_u, q₀)` per UAV.
    pub ts_range_sq: Vec<f64>,
}

impl Channels {
    pub fn build(s: &Scenario, mode: ChannelMode, positions: &[Point], seed: u64) -> Self {
        let h = positions
            .iter()
            .enumerate()
            .map(|(u, o)| (0..s.n_cs).map(|k| comm_channel(s, mode, o, u, k, seed)).collect())
            .collect();
        let a = positions
            .iter()
            .map(|o| steering_tx(o, &s.ts_position, s.uav_altitude, s.nt))
            .collect();
        let ts_range_sq = positions.iter().map(|o| s.uav_range_sq(o, &s.ts_position)).collect();
        Self { h, a, ts_range_sq }
    }

    pub fn n_uav(&self) -> usize {
        self.h.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{norm_sq, point};

    fn scenario() -> Scenario {
        Scenario::defaults(11)
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance3d(&point(250.0, 250.0), 100.0, &point(250.0, 250.0)), 100.0);
        let d = distance3d(&point(0.0, 0.0), 100.0, &point(300.0, 400.0));
        assert!((d - 509.901_951_359_278_5).abs() < 1e-9);
    }

    #[test]
    fn distance_matches_componentwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v: [f64; 5] = std::array::from_fn(|_| rand::Rng::gen_range(&mut rng, -500.0..500.0));
            let h = v[4].abs() + 1.0;
            let oracle = ((v[0] - v[2]).powi(2) + (v[1] - v[3]).powi(2) + h.powi(2)).sqrt();
            let d = distance3d(&point(v[0], v[1]), h, &point(v[2], v[3]));
            assert!((d - oracle).abs() <= 1e-12 * oracle);
        }
    }

    #[test]
    fn los_ones_entries() {
        let mut s = scenario();
        s.eps0 = 1e-6;
        let q = s.cs_positions[0];
        let h = comm_channel(&s, ChannelMode::LosOnes, &q, 0, 0, 0);
        for z in h.iter() {
            assert!((z.re - 1e-5).abs() < 1e-18 && z.im == 0.0);
        }
    }

    #[test]
    fn los_steering_overhead_alternates() {
        let s = scenario();
        let q = s.cs_positions[2];
        let h = comm_channel(&s, ChannelMode::LosSteering, &q, 0, 2, 0);
        let g = (s.eps0 / 1e4).sqrt();
        for (n, z) in h.iter().enumerate() {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!((z.re - sign * g).abs() < 1e-15 && z.im.abs() < 1e-15);
        }
    }

    #[test]
    fn rayleigh_unit_power() {
        let mut acc = 0.0;
        let draws = 100_000 / 8;
        for d in 0..draws {
            acc += norm_sq(&rayleigh_draw(8, 17, d, 1));
        }
        let mean = acc / (draws * 8) as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn rayleigh_is_reproducible() {
        assert_eq!(rayleigh_draw(8, 5, 1, 2), rayleigh_draw(8, 5, 1, 2));
        assert_ne!(rayleigh_draw(8, 5, 1, 2), rayleigh_draw(8, 6, 1, 2));
    }

    #[test]
    fn steering_examples() {
        let far = ula_steering(8, 0.0);
        assert!(far.iter().all(|z| (z.re - 1.0).abs() < 1e-15 && z.im == 0.0));
        let over = steering_tx(&point(5.0, 5.0), &point(5.0, 5.0), 100.0, 4);
        let expect = [1.0, -1.0, 1.0, -1.0];
        for (z, e) in over.iter().zip(expect) {
            assert!((z.re - e).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
        let a = steering_tx(&point(0.0, 0.0), &point(300.0, 400.0), 100.0, 8);
        for (n, z) in a.iter().enumerate() {
            let ph = PI * n as f64 * (100.0 / 509.901_951_359_278_5);
            assert!((z.re - ph.cos()).abs() < 1e-12 && (z.im - ph.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn steering_rx_mirrors_tx() {
        let b = steering_rx(&point(0.0, 0.0), &point(300.0, 400.0), 100.0, 4);
        let a = steering_tx(&point(0.0, 0.0), &point(300.0, 400.0), 100.0, 4);
        assert_eq!(a, b);
        let over = steering_rx(&point(1.0, 1.0), &point(1.0, 1.0), 50.0, 2);
        assert!((over[1].re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sensing_gain_examples() {
        let mut s = scenario();
        s.beta0 = 1e-5;
        let g = sensing_gain(&s, &s.ts_position.clone());
        assert!((g - 3.162_277_660_168_379e-7).abs() < 1e-18);
        s.beta0 = 1.0;
        s.uav_altitude = 1.0;
        s.rx_altitude = 1.0;
        s.rx_uav_position = s.ts_position;
        assert!((sensing_gain(&s, &s.ts_position.clone()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sensing_gain_default_geometry() {
        let s = scenario();
        let o = point(200.0, 250.0);
        let ru2 = 50.0f64.powi(2) + 100.0f64.powi(2);
        let oracle = (1e-5f64 / (ru2 * 1e4)).sqrt();
        assert!((sensing_gain(&s, &o) - oracle).abs() <= 1e-12 * oracle);
    }

    proptest::proptest! {
        #[test]
        fn steering_unit_modulus(cos in -1.0f64..1.0, n in 1usize..16) {
            let a = ula_steering(n, cos);
            proptest::prop_assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            proptest::prop_assert!((norm_sq(&a) - n as f64).abs() < 1e-9);
        }

        #[test]
        fn channel_power_scales_inverse_square(x in 0.0f64..400.0, y in 0.0f64..400.0) {
            let s = scenario();
            let q = s.cs_positions[0];
            let o = point(x, y);
            let r2 = s.uav_range_sq(&o, &q);
            let h = comm_channel(&s, ChannelMode::LosOnes, &o, 0, 0, 0);
            let expect = s.nt as f64 * s.eps0 / r2;
            proptest::prop_assert!((norm_sq(&h) - expect).abs() <= 1e-9 * expect);
        }
    }
}
