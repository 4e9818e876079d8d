//! Scenario definition, unit conversion and validation.
//!
//! A [`Scenario`] is the single source of truth for one optimization run:
//! geometry, radio constants, thresholds and weights. Scenarios are loaded
//! from a TOML [`ScenarioConfig`] whose keys match the field names; any
//! power-like key may instead be given in decibels with a `_db` (ratios) or
//! `_dbm` (absolute powers) suffix.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Deref;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{point, Point};

pub fn db_to_linear(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

pub fn dbm_to_watts(x: f64) -> f64 {
    db_to_linear(x) / 1000.0
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn watts_to_dbm(x: f64) -> f64 {
    linear_to_db(x * 1000.0)
}

/// Physical antenna and target constants from which the reference channel
/// powers can be derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConstants {
    /// UAV transmit antenna gain (linear).
    pub g_t: f64,
    /// CS receive antenna gain (linear).
    pub g_c: f64,
    /// Target receive antenna gain (linear).
    pub g_s: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Radar cross section in m².
    pub rcs: f64,
}

impl RadioConstants {
    /// Returns `(ε₀, β₀)`, the communication and round-trip sensing channel
    /// power at 1 m.
    pub fn reference_powers(&self) -> Result<(f64, f64), ScenarioError> {
        let mut violations = Vec::new();
        for (name, v) in [
            ("g_t", self.g_t),
            ("g_c", self.g_c),
            ("g_s", self.g_s),
            ("wavelength", self.wavelength),
            ("rcs", self.rcs),
        ] {
            if !(v.is_finite() && v > 0.0) {
                violations.push(Violation::new(name, format!("must be positive, got {v}")));
            }
        }
        if !violations.is_empty() {
            return Err(ScenarioError::Invalid(violations));
        }
        let lambda2 = self.wavelength * self.wavelength;
        let four_pi = 4.0 * PI;
        let eps0 = self.g_t * self.g_c * lambda2 / four_pi.powi(2);
        let beta0 = self.g_t * self.g_s * self.rcs * lambda2 / four_pi.powi(3);
        Ok((eps0, beta0))
    }
}

/// Geometry, radio constants, thresholds and weights of one run.
///
/// All quantities are in SI units and linear scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Number of ISAC UAVs.
    #[serde(rename = "U")]
    pub n_uav: usize,
    /// Number of communication survivors.
    #[serde(rename = "K")]
    pub n_cs: usize,
    /// Transmit antennas per ISAC UAV.
    #[serde(rename = "Nt")]
    pub nt: usize,
    /// Receive antennas on the sensing receive UAV.
    #[serde(rename = "Nr")]
    pub nr: usize,
    pub cs_positions: Vec<Point>,
    pub ts_position: Point,
    pub rx_uav_position: Point,
    /// Common altitude of all ISAC UAVs.
    pub uav_altitude: f64,
    pub rx_altitude: f64,
    /// Communication channel power at 1 m.
    pub eps0: f64,
    /// Round-trip sensing channel power at 1 m.
    pub beta0: f64,
    /// Noise power in watts.
    pub noise_power: f64,
    /// Bandwidth in Hz.
    pub bandwidth: f64,
    /// Per-UAV power budget in watts.
    pub p_max: f64,
    /// Per-CS total-rate requirement in bits/s.
    pub rate_threshold: Vec<f64>,
    /// Minimum sensing SNR (linear).
    pub sensing_threshold: f64,
    /// Rate weights; sum to one.
    pub weights: Vec<f64>,
}

/// One violated scenario invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl ScenarioError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ScenarioError::Invalid(v) => v,
            _ => &[],
        }
    }
}

/// A scenario that satisfied every invariant at construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedScenario(Scenario);

impl Deref for ValidatedScenario {
    type Target = Scenario;
    fn deref(&self) -> &Scenario {
        &self.0
    }
}

impl ValidatedScenario {
    pub fn into_inner(self) -> Scenario {
        self.0
    }
}

pub fn validate(s: Scenario) -> Result<ValidatedScenario, ScenarioError> {
    let violations = s.violations();
    if violations.is_empty() {
        Ok(ValidatedScenario(s))
    } else {
        Err(ScenarioError::Invalid(violations))
    }
}

impl Scenario {
    pub fn validate(self) -> Result<ValidatedScenario, ScenarioError> {
        validate(self)
    }

    /// Lists every violated invariant.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.n_uav < 1 {
            v.push(Violation::new("U", "at least one ISAC UAV is required"));
        }
        if self.n_cs < self.n_uav {
            v.push(Violation::new(
                "K",
                format!("K = {} < U = {}: every cluster must be non-empty", self.n_cs, self.n_uav),
            ));
        }
        if self.nt < 1 {
            v.push(Violation::new("Nt", "at least one transmit antenna is required"));
        }
        if self.nr < 1 {
            v.push(Violation::new("Nr", "at least one receive antenna is required"));
        }
        if self.cs_positions.len() != self.n_cs {
            v.push(Violation::new(
                "cs_positions",
                format!("expected {} positions, got {}", self.n_cs, self.cs_positions.len()),
            ));
        }
        if self.cs_positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            v.push(Violation::new("cs_positions", "positions must be finite"));
        }
        if !self.ts_position.iter().all(|c| c.is_finite()) {
            v.push(Violation::new("ts_position", "position must be finite"));
        }
        if !self.rx_uav_position.iter().all(|c| c.is_finite()) {
            v.push(Violation::new("rx_uav_position", "position must be finite"));
        }
        for (name, x) in [
            ("uav_altitude", self.uav_altitude),
            ("rx_altitude", self.rx_altitude),
            ("eps0", self.eps0),
            ("beta0", self.beta0),
            ("noise_power", self.noise_power),
            ("bandwidth", self.bandwidth),
            ("p_max", self.p_max),
        ] {
            if !(x.is_finite() && x > 0.0) {
                v.push(Violation::new(name, format!("must be positive and finite, got {x}")));
            }
        }
        if !(self.sensing_threshold.is_finite() && self.sensing_threshold >= 0.0) {
            v.push(Violation::new("sensing_threshold", "must be non-negative"));
        }
        if self.rate_threshold.len() != self.n_cs {
            v.push(Violation::new(
                "rate_threshold",
                format!("expected {} entries, got {}", self.n_cs, self.rate_threshold.len()),
            ));
        }
        if self.rate_threshold.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            v.push(Violation::new("rate_threshold", "thresholds must be non-negative"));
        }
        if self.weights.len() != self.n_cs {
            v.push(Violation::new(
                "weights",
                format!("expected {} entries, got {}", self.n_cs, self.weights.len()),
            ));
        } else {
            if self.weights.iter().any(|w| !(w.is_finite() && (0.0..=1.0).contains(w))) {
                v.push(Violation::new("weights", "weights must lie in [0, 1]"));
            }
            let total: f64 = self.weights.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                v.push(Violation::new("weights", format!("weights sum to {total}, expected 1")));
            }
        }
        v
    }

    /// Default parameters with CSs drawn uniformly over a
    /// 500 m × 500 m area from `layout_seed`.
    pub fn defaults(layout_seed: u64) -> Scenario {
        ScenarioConfig { layout_seed: Some(layout_seed), ..Default::default() }
            .build()
            .expect("default configuration is valid")
    }

    /// `r(o, q)` for an ISAC UAV at horizontal position `o`.
    pub fn uav_range(&self, o: &Point, q: &Point) -> f64 {
        crate::channel::distance3d(o, self.uav_altitude, q)
    }

    pub fn uav_range_sq(&self, o: &Point, q: &Point) -> f64 {
        (o - q).norm_squared() + self.uav_altitude * self.uav_altitude
    }

    /// `r²(o₀, q₀)`, receive UAV to target.
    pub fn rx_range_sq(&self) -> f64 {
        (self.rx_uav_position - self.ts_position).norm_squared() + self.rx_altitude * self.rx_altitude
    }

    /// `β₀ / (r²(o₀,q₀) σ²)`: converts `Σ_u ‖aᴴP_u‖²/r_u²` into sensing SNR.
    pub fn sensing_coefficient(&self) -> f64 {
        self.beta0 / (self.rx_range_sq() * self.noise_power)
    }
}

/// Rate threshold given either for all CSs or per CS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateThreshold {
    Uniform(f64),
    PerCs(Vec<f64>),
}

/// (U = 3, K = 5, Nt = 8, 25 dBm, ...).
/// of the evaluation section (U = 3, K = 5, Nt = 8, 25 dBm, ...).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "U", skip_serializing_if = "Option::is_none")]
    pub n_uav: Option<usize>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub n_cs: Option<usize>,
    #[serde(rename = "Nt", skip_serializing_if = "Option::is_none")]
    pub nt: Option<usize>,
    #[serde(rename = "Nr", skip_serializing_if = "Option::is_none")]
    pub nr: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cs_positions: Option<Vec<Point>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ts_position: Option<Point>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rx_uav_position: Option<Point>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uav_altitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rx_altitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps0_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta0_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_power: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_power_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_max_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_threshold: Option<RateThreshold>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensing_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensing_threshold_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Side lengths of the area CSs are drawn from when `cs_positions` is
    /// absent. Default 500 m × 500 m.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub area: Option<[f64; 2]>,
    /// Seed of the CS layout draw.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout_seed: Option<u64>,
}

fn pick(
    field: &str,
    linear: Option<f64>,
    log: Option<f64>,
    convert: fn(f64) -> f64,
    default: f64,
) -> Result<f64, ScenarioError> {
    match (linear, log) {
        (Some(_), Some(_)) => Err(ScenarioError::Config(format!(
            "both `{field}` and its decibel form were given"
        ))),
        (Some(x), None) => Ok(x),
        (None, Some(x)) => Ok(convert(x)),
        (None, None) => Ok(default),
    }
}

/// Draws `n` points uniformly over `[0, w] × [0, h]`. Prefixes are stable:
/// the first `m` points do not depend on `n`.
pub fn uniform_layout(n: usize, area: [f64; 2], seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| point(rng.gen::<f64>() * area[0], rng.gen::<f64>() * area[1]))
        .collect()
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Read { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    /// Applies `key=value` overrides, where `value` is a TOML value.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ScenarioError> {
        let mut table = toml::Table::try_from(self)
            .map_err(|e| ScenarioError::Config(e.to_string()))?;
        for o in overrides {
            let (key, value) = parse_override(o.as_ref())?;
            table.insert(key, value);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ScenarioError::Config(e.to_string()))
    }

    /// Resolves defaults and unit suffixes and validates the result.
    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        let area = self.area.unwrap_or([500.0, 500.0]);
        let cs_positions = match (&self.cs_positions, self.n_cs) {
            (Some(p), Some(k)) if p.len() != k => {
                return Err(ScenarioError::Config(format!(
                    "K = {k} but {} cs_positions were given",
                    p.len()
                )))
            }
            (Some(p), _) => p.clone(),
            (None, k) => uniform_layout(k.unwrap_or(5), area, self.layout_seed.unwrap_or(1)),
        };
        let n_cs = cs_positions.len();
        let ts_position = self.ts_position.unwrap_or_else(|| point(area[0] / 2.0, area[1] / 2.0));
        let rate_threshold = match &self.rate_threshold {
            None => vec![1e6; n_cs],
            Some(RateThreshold::Uniform(r)) => vec![*r; n_cs],
            Some(RateThreshold::PerCs(v)) => v.clone(),
        };
        let weights = self
            .weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / n_cs.max(1) as f64; n_cs]);
        let s = Scenario {
            n_uav: self.n_uav.unwrap_or(3),
            n_cs,
            nt: self.nt.unwrap_or(8),
            nr: self.nr.unwrap_or(4),
            cs_positions,
            ts_position,
            rx_uav_position: self.rx_uav_position.unwrap_or(ts_position),
            uav_altitude: self.uav_altitude.unwrap_or(100.0),
            rx_altitude: self.rx_altitude.unwrap_or(100.0),
            eps0: pick("eps0", self.eps0, self.eps0_db, db_to_linear, db_to_linear(-60.0))?,
            beta0: pick("beta0", self.beta0, self.beta0_db, db_to_linear, db_to_linear(-50.0))?,
            noise_power: pick(
                "noise_power",
                self.noise_power,
                self.noise_power_dbm,
                dbm_to_watts,
                dbm_to_watts(-110.0),
            )?,
            bandwidth: self.bandwidth.unwrap_or(1e6),
            p_max: pick("p_max", self.p_max, self.p_max_dbm, dbm_to_watts, dbm_to_watts(25.0))?,
            rate_threshold,
            sensing_threshold: pick(
                "sensing_threshold",
                self.sensing_threshold,
                self.sensing_threshold_db,
                db_to_linear,
                2.0,
            )?,
            weights,
        };
        let violations = s.violations();
        if violations.is_empty() {
            Ok(s)
        } else {
            Err(ScenarioError::Invalid(violations))
        }
    }
}

fn parse_override(text: &str) -> Result<(String, toml::Value), ScenarioError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| ScenarioError::Config(format!("override `{text}` is not key=value")))?;
    let key = key.trim().to_string();
    let doc = format!("v = {}", raw.trim());
    let mut parsed: toml::Table = toml::from_str(&doc)
        .or_else(|_| toml::from_str(&format!("v = {:?}", raw.trim())))
        .map_err(|e: toml::de::Error| ScenarioError::Config(e.to_string()))?;
    let value = parsed.remove("v").expect("parsed table has key v");
    Ok((key, value))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn decibel_conversions() {
        assert_eq!(db_to_linear(0.0), 1.0);
        assert!(close(db_to_linear(-60.0), 1e-6, 1e-12));
        assert!(close(db_to_linear(-50.0), 1e-5, 1e-12));
        assert!(close(dbm_to_watts(0.0), 1e-3, 1e-12));
        assert!(close(dbm_to_watts(25.0), 0.316_227_766, 1e-8));
        assert!(close(dbm_to_watts(-110.0), 1e-14, 1e-12));
    }

    #[test]
    fn reference_powers_cancel() {
        let lambda = 4.0 * PI;
        let rc = RadioConstants { g_t: 1.0, g_c: 1.0, g_s: 1.0, wavelength: lambda, rcs: 4.0 * PI };
        let (eps0, beta0) = rc.reference_powers().unwrap();
        assert!(close(eps0, 1.0, 1e-12));
        assert!(close(beta0, 1.0, 1e-12));
    }

    #[test]
    fn reference_powers_physical() {
        // 2.4 GHz, 3 dBi gains, 1 m² target, re-evaluated term by term.
        let rc = RadioConstants { g_t: 2.0, g_c: 2.0, g_s: 2.0, wavelength: 0.125, rcs: 1.0 };
        let (eps0, beta0) = rc.reference_powers().unwrap();
        let eps_oracle = 2.0 * 2.0 * 0.015625 / (157.913_670_417_429_7);
        let beta_oracle = 2.0 * 2.0 * 1.0 * 0.015625 / (1_984.401_707_539_125);
        assert!(close(eps0, eps_oracle, 1e-9), "{eps0} vs {eps_oracle}");
        assert!(close(beta0, beta_oracle, 1e-9), "{beta0} vs {beta_oracle}");
    }

    #[test]
    fn reference_powers_reject_non_positive() {
        let rc = RadioConstants { g_t: 0.0, g_c: 1.0, g_s: 1.0, wavelength: 1.0, rcs: -1.0 };
        let err = rc.reference_powers().unwrap_err();
        let fields: Vec<_> = err.violations().iter().map(|v| v.field.as_str()).collect();
        assert_eq!(fields, ["g_t", "rcs"]);
    }

    #[test]
    fn defaults_are_accepted() {
        let s = Scenario::defaults(7);
        assert_eq!((s.n_uav, s.n_cs, s.nt), (3, 5, 8));
        assert_eq!(s.uav_altitude, 100.0);
        assert_eq!(s.rx_altitude, 100.0);
        assert_eq!(s.ts_position, point(250.0, 250.0));
        assert_eq!(s.rx_uav_position, s.ts_position);
        assert!(close(s.p_max, dbm_to_watts(25.0), 1e-12));
        assert!(s.weights.iter().all(|w| close(*w, 0.2, 1e-12)));
        assert!(s.clone().validate().is_ok());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut s = Scenario::defaults(1);
        s.weights = vec![0.18; 5];
        let err = s.validate().unwrap_err();
        assert!(err.violations().iter().any(|v| v.field == "weights"));
    }

    #[test]
    fn fewer_cs_than_uavs_is_rejected() {
        let mut s = Scenario::defaults(1);
        s.n_cs = 2;
        s.cs_positions.truncate(2);
        s.rate_threshold.truncate(2);
        s.weights = vec![0.5, 0.5];
        let err = s.validate().unwrap_err();
        assert!(err.violations().iter().any(|v| v.field == "K"));
    }

    #[test]
    fn validate_is_idempotent() {
        let v = Scenario::defaults(3).validate().unwrap();
        let again = v.clone().into_inner().validate().unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn config_units_and_overrides() {
        let cfg = ScenarioConfig::from_toml_str(
            r#"
            U = 2
            cs_positions = [[0.0, 0.0], [10.0, 0.0], [20.0, 5.0]]
            p_max_dbm = 20.0
            noise_power_dbm = -110.0
            eps0_db = -60.0
            rate_threshold = 5e5
            "#,
        )
        .unwrap();
        let s = cfg.build().unwrap();
        assert_eq!(s.n_cs, 3);
        assert!(close(s.p_max, 0.1, 1e-12));
        assert_eq!(s.rate_threshold, vec![5e5; 3]);
        let s2 = cfg.with_overrides(&["p_max_dbm=25", "sensing_threshold = 4"]).unwrap().build().unwrap();
        assert!(close(s2.p_max, dbm_to_watts(25.0), 1e-12));
        assert_eq!(s2.sensing_threshold, 4.0);
    }

    #[test]
    fn conflicting_units_are_rejected() {
        let cfg = ScenarioConfig { p_max: Some(0.1), p_max_dbm: Some(20.0), ..Default::default() };
        assert!(matches!(cfg.build(), Err(ScenarioError::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_toml_str("pmax = 3").is_err());
    }

    #[test]
    fn layout_prefix_is_stable() {
        let a = uniform_layout(3, [500.0, 500.0], 9);
        let b = uniform_layout(8, [500.0, 500.0], 9);
        assert_eq!(a[..], b[..3]);
    }

    proptest::proptest! {
        #[test]
        fn dbm_is_db_over_thousand(x in -200.0f64..200.0) {
            let lhs = dbm_to_watts(x);
            let rhs = db_to_linear(x) / 1000.0;
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
        }
    }
}
