//! Run configuration files, parameter sweeps and their CSV tables.
//!
//! A sweep evaluates every `(value, scheme, seed)` point on a bounded worker
//! pool. Rows are handed to a single collector as they finish, and tables
//! are only ever appended to. Each written file gets a line in
//! `manifest.jsonl` with the base scenario hash and the crate version.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::Scheme;
use crate::pipeline::{probe, run, scenario_hash, RunOptions, SolutionStatus};
use crate::scenario::{Scenario, ScenarioConfig};
use crate::{Error, Result};

/// Environment variable holding the sweep worker count.
pub const WORKERS_ENV: &str = "CORSMA_WORKERS";

/// Scenario plus options, as read from a TOML file with `[scenario]` and
/// `[options]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub options: RunOptions,
}

impl RunConfig {
    /// Reads `path` and applies `key=value` overrides (see [`apply_override`]).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut doc = read_toml(path)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        from_value(doc)
    }

    pub fn from_overrides(overrides: &[String]) -> Result<Self> {
        let mut doc = toml::Value::Table(Default::default());
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        from_value(doc)
    }
}

fn read_toml(path: &Path) -> Result<toml::Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    toml::from_str(&text).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
}

fn from_value<T: serde::de::DeserializeOwned>(v: toml::Value) -> Result<T> {
    v.try_into().map_err(|e: toml::de::Error| Error::Serialization(e.to_string()))
}

const SCENARIO_KEYS: &[&str] = &[
    "U",
    "K",
    "Nt",
    "Nr",
    "cs_positions",
    "ts_position",
    "rx_uav_position",
    "uav_altitude",
    "rx_altitude",
    "eps0",
    "eps0_db",
    "beta0",
    "beta0_db",
    "noise_power",
    "noise_power_dbm",
    "bandwidth",
    "p_max",
    "p_max_dbm",
    "rate_threshold",
    "sensing_threshold",
    "sensing_threshold_db",
    "weights",
    "area",
    "layout_seed",
];

/// Sets one `key=value` in a config document. Keys are dotted paths
/// (`options.beamforming.max_iter`); a bare scenario field name such as `K`
/// goes to `[scenario]`, any other bare key to `[options]`. Values are TOML
/// literals, and anything that does not parse as one is taken as a string.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Options(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Options(format!("override `{assignment}` has an empty key")));
    }
    let mut path: Vec<&str> = key.split('.').collect();
    if path.len() == 1 {
        path.insert(0, if SCENARIO_KEYS.contains(&key) { "scenario" } else { "options" });
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = doc;
    for part in &path[..path.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Options(format!("override `{key}`: `{part}` is not a table")))?;
        node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node.as_table_mut().ok_or_else(|| Error::Options(format!("override `{key}` is not under a table")))?;
    table.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

/// Swept scenario parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    /// `γ̄`, linear.
    #[serde(rename = "sensing_threshold")]
    SensingThreshold,
    /// Number of CSs `K`.
    #[serde(rename = "K")]
    NumCs,
    /// Number of ISAC UAVs `U`.
    #[serde(rename = "U")]
    NumUav,
    /// `P_max` in dBm.
    #[serde(rename = "p_max_dbm")]
    PmaxDbm,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            Self::SensingThreshold => "sensing_threshold",
            Self::NumCs => "K",
            Self::NumUav => "U",
            Self::PmaxDbm => "p_max_dbm",
        }
    }

    fn apply(self, c: &mut ScenarioConfig, value: f64) -> Result<()> {
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Sweep(format!("{} must be a positive integer, got {value}", self.name())))
            }
        };
        match self {
            Self::SensingThreshold => {
                c.sensing_threshold = Some(value);
                c.sensing_threshold_db = None;
            }
            Self::NumCs => {
                c.n_cs = Some(count()?);
                c.cs_positions = None;
                // Per-CS lists would no longer match K.
                c.weights = None;
            }
            Self::NumUav => c.n_uav = Some(count()?),
            Self::PmaxDbm => {
                c.p_max_dbm = Some(value);
                c.p_max = None;
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sensing_threshold" | "gamma" => Ok(Self::SensingThreshold),
            "K" | "n_cs" => Ok(Self::NumCs),
            "U" | "n_uav" => Ok(Self::NumUav),
            "p_max_dbm" | "p_max" => Ok(Self::PmaxDbm),
            _ => Err(format!("unknown sweep parameter `{s}`")),
        }
    }
}

/// What each sweep point computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// The full WSR pipeline.
    #[default]
    Wsr,
    /// [`probe`]: largest sensing SNR at the communication design.
    SensingProbe,
}

fn default_seeds() -> usize {
    10
}

fn default_true() -> bool {
    true
}

/// A sweep as read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// First seed; seeds are `seed_offset..seed_offset + seeds`.
    #[serde(default)]
    pub seed_offset: u64,
    #[serde(default)]
    pub mode: SweepMode,
    /// Draw a fresh CS layout per seed (`layout_seed` is offset by the seed).
    /// Ignored when the scenario fixes `cs_positions`.
    #[serde(default = "default_true")]
    pub vary_layout: bool,
    /// Optional run configuration the `scenario` and `options` tables
    /// below are layered onto; relative to the sweep file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<PathBuf>,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub options: RunOptions,
}

fn all_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

fn merge(into: &mut toml::Value, from: toml::Value) {
    match (into, from) {
        (toml::Value::Table(a), toml::Value::Table(b)) => {
            for (k, v) in b {
                match a.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        a.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl SweepSpec {
    /// Reads a spec file, layering it over its `base` configuration, then
    /// applying `overrides` to the merged `[scenario]`/`[options]` tables.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut doc = read_toml(path)?;
        let base = doc.get("base").and_then(|b| b.as_str()).map(PathBuf::from);
        if let Some(rel) = &base {
            let full = path.parent().unwrap_or(Path::new(".")).join(rel);
            let mut merged = read_toml(&full)?;
            let table = doc.as_table_mut().expect("TOML documents are tables");
            for key in ["scenario", "options"] {
                if let Some(v) = table.remove(key) {
                    let slot = merged
                        .as_table_mut()
                        .expect("TOML documents are tables")
                        .entry(key)
                        .or_insert_with(|| toml::Value::Table(Default::default()));
                    merge(slot, v);
                }
            }
            for (k, v) in merged.as_table().expect("TOML documents are tables") {
                table.insert(k.clone(), v.clone());
            }
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let spec: SweepSpec = from_value(doc)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Sweep("no values".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Sweep("values must be finite".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Sweep("no schemes".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Sweep("seeds must be at least 1".into()));
        }
        self.options.validate()?;
        // Surface configuration errors before any point runs.
        for &v in &self.values {
            self.point_scenario(v, self.seed_offset)?;
        }
        Ok(())
    }

    /// `(value, scheme, seed)` for every point, value-major.
    pub fn points(&self) -> Vec<(f64, Scheme, u64)> {
        let mut out = Vec::with_capacity(self.values.len() * self.schemes.len() * self.seeds);
        for &v in &self.values {
            for &scheme in &self.schemes {
                for i in 0..self.seeds as u64 {
                    out.push((v, scheme, self.seed_offset + i));
                }
            }
        }
        out
    }

    pub fn point_scenario(&self, value: f64, seed: u64) -> Result<Scenario> {
        let mut c = self.scenario.clone();
        self.parameter.apply(&mut c, value)?;
        if self.vary_layout && c.cs_positions.is_none() {
            c.layout_seed = Some(c.layout_seed.unwrap_or(0).wrapping_add(seed));
        }
        Ok(c.build()?)
    }

    /// Scenario of the first value and seed, used to tag output files.
    pub fn base_scenario(&self) -> Result<Scenario> {
        self.point_scenario(self.values[0], self.seed_offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Row,
    Summary,
}

/// One sweep point, or one seed-mean summary when `kind` is `Summary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: RowKind,
    pub parameter: String,
    pub value: f64,
    pub scheme: Scheme,
    /// Point seed; `None` on summaries.
    pub seed: Option<u64>,
    /// `converged`, `max_iter`, `infeasible` or `error`; `None` on summaries.
    pub status: Option<String>,
    /// bits/s. Summaries average over all seeds with failed or infeasible
    /// points counted as zero.
    pub wsr: f64,
    /// `R^c`, bits/s.
    pub common_rate: f64,
    /// `Σ μ_k C_k / WSR`.
    pub common_ratio: f64,
    pub sensing_snr: f64,
    pub outer_iterations: f64,
    pub runtime_s: f64,
    pub max_violation: f64,
    /// Points behind a summary; 1 on rows.
    pub n: usize,
    /// Feasible points among them.
    pub n_feasible: usize,
    pub error: String,
}

impl SweepRow {
    pub fn feasible(&self) -> bool {
        matches!(self.status.as_deref(), Some("converged") | Some("max_iter"))
    }

    const HEADER: &'static str = "kind,parameter,value,scheme,seed,status,wsr,common_rate,common_ratio,sensing_snr,\
                                  outer_iterations,runtime_s,max_violation,n,n_feasible,error";

    fn csv_line(&self) -> String {
        let f = |x: f64| format!("{x:.8e}");
        let kind = match self.kind {
            RowKind::Row => "row",
            RowKind::Summary => "summary",
        };
        let error = self.error.replace(['\n', '\r'], " ");
        let error = if error.contains([',', '"']) { format!("\"{}\"", error.replace('"', "\"\"")) } else { error };
        [
            kind.to_string(),
            self.parameter.clone(),
            f(self.value),
            self.scheme.name().to_string(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.status.clone().unwrap_or_default(),
            f(self.wsr),
            f(self.common_rate),
            f(self.common_ratio),
            f(self.sensing_snr),
            f(self.outer_iterations),
            f(self.runtime_s),
            f(self.max_violation),
            self.n.to_string(),
            self.n_feasible.to_string(),
            error,
        ]
        .join(",")
    }
}

fn status_name(s: SolutionStatus) -> &'static str {
    match s {
        SolutionStatus::Converged => "converged",
        SolutionStatus::MaxIter => "max_iter",
        SolutionStatus::Infeasible => "infeasible",
    }
}

/// Runs one point; failures become an `error` row.
pub fn run_point(spec: &SweepSpec, value: f64, scheme: Scheme, seed: u64) -> SweepRow {
    let t0 = Instant::now();
    let mut row = SweepRow {
        kind: RowKind::Row,
        parameter: spec.parameter.name().to_string(),
        value,
        scheme,
        seed: Some(seed),
        status: None,
        wsr: 0.0,
        common_rate: 0.0,
        common_ratio: 0.0,
        sensing_snr: 0.0,
        outer_iterations: 0.0,
        runtime_s: 0.0,
        max_violation: 0.0,
        n: 1,
        n_feasible: 0,
        error: String::new(),
    };
    let opts = RunOptions { seed, scheme, ..spec.options };
    let outcome = spec.point_scenario(value, seed).and_then(|s| match spec.mode {
        SweepMode::Wsr => run(&s, &opts).map(|sol| {
            (
                status_name(sol.status),
                sol.report.clone(),
                sol.common_ratio,
                sol.outer_iterations(),
                sol.violations.max().max(0.0),
            )
        }),
        SweepMode::SensingProbe => probe(&s, &opts).map(|p| {
            let viol = p.report.violations(&Scenario { sensing_threshold: 0.0, ..s.clone() }).max().max(0.0);
            let status = if p.feasible { status_name(p.design.status) } else { "infeasible" };
            let weighted: f64 = p.report.allocation.iter().zip(&s.weights).map(|(c, m)| c * m).sum();
            let ratio = if p.report.wsr > 0.0 { weighted / p.report.wsr } else { 0.0 };
            (status, p.report, ratio, p.design.outer_iterations(), viol)
        }),
    });
    match outcome {
        Ok((status, report, ratio, iters, viol)) => {
            row.status = Some(status.to_string());
            row.wsr = report.wsr;
            row.common_rate = report.common_rate;
            row.common_ratio = ratio;
            row.sensing_snr = report.sensing_snr;
            row.outer_iterations = iters as f64;
            row.max_violation = viol;
            row.n_feasible = usize::from(row.feasible());
        }
        Err(e) => {
            row.status = Some("error".into());
            row.error = e.to_string();
        }
    }
    row.runtime_s = t0.elapsed().as_secs_f64();
    row
}

/// Seed means per `(value, scheme)`, in the order of `spec`.
pub fn summarize(spec: &SweepSpec, rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut out = Vec::new();
    for &value in &spec.values {
        for &scheme in &spec.schemes {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.kind == RowKind::Row && r.value == value && r.scheme == scheme)
                .collect();
            if group.is_empty() {
                continue;
            }
            let feasible: Vec<&SweepRow> = group.iter().copied().filter(|r| r.feasible()).collect();
            let n = group.len() as f64;
            let mean_all = |f: fn(&SweepRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            let mean_feasible = |f: fn(&SweepRow) -> f64| {
                if feasible.is_empty() {
                    0.0
                } else {
                    feasible.iter().map(|r| f(r)).sum::<f64>() / feasible.len() as f64
                }
            };
            let errors = group.iter().filter(|r| !r.error.is_empty()).count();
            out.push(SweepRow {
                kind: RowKind::Summary,
                parameter: spec.parameter.name().to_string(),
                value,
                scheme,
                seed: None,
                status: None,
                wsr: group.iter().filter(|r| r.feasible()).map(|r| r.wsr).sum::<f64>() / n,
                common_rate: mean_feasible(|r| r.common_rate),
                common_ratio: mean_feasible(|r| r.common_ratio),
                sensing_snr: mean_feasible(|r| r.sensing_snr),
                outer_iterations: mean_all(|r| r.outer_iterations),
                runtime_s: mean_all(|r| r.runtime_s),
                max_violation: group.iter().map(|r| r.max_violation).fold(0.0, f64::max),
                n: group.len(),
                n_feasible: feasible.len(),
                error: if errors > 0 { format!("{errors} point(s) failed") } else { String::new() },
            });
        }
    }
    out
}

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Rows and summaries of a finished sweep.
#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepRow>,
}

impl SweepTable {
    pub fn summary_for(&self, scheme: Scheme) -> Vec<&SweepRow> {
        self.summary.iter().filter(|r| r.scheme == scheme).collect()
    }
}

/// Runs all points of `spec` on `workers` threads. `on_row` is called on
/// the calling thread, once per point, in completion order.
pub fn run_sweep(spec: &SweepSpec, workers: usize, mut on_row: impl FnMut(&SweepRow)) -> Result<SweepTable> {
    spec.validate()?;
    let points = spec.points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Sweep(format!("worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<(usize, SweepRow)>();
    let mut rows: Vec<Option<SweepRow>> = vec![None; points.len()];
    std::thread::scope(|scope| {
        let pts = &points;
        scope.spawn(move || {
            pool.install(|| {
                pts.par_iter().enumerate().for_each_with(tx, |tx, (i, &(v, scheme, seed))| {
                    // The receiver outlives the workers.
                    let _ = tx.send((i, run_point(spec, v, scheme, seed)));
                });
            });
        });
        for (i, row) in rx {
            on_row(&row);
            rows[i] = Some(row);
        }
    });
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.expect("every point reports")).collect();
    let summary = summarize(spec, &rows);
    Ok(SweepTable { rows, summary })
}

/// Append-only CSV table with a manifest entry on first creation.
pub struct TableWriter {
    file: std::io::BufWriter<std::fs::File>,
}

impl TableWriter {
    /// Opens `dir/name` for appending, writing the header if the file is
    /// new, and records the file in `dir/manifest.jsonl`.
    pub fn open(dir: &Path, name: &str, scenario: &Scenario, spec: Option<&SweepSpec>) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(name);
        let fresh = !path.exists();
        let mut file = std::io::BufWriter::new(OpenOptions::new().create(true).append(true).open(&path)?);
        if fresh {
            writeln!(file, "{}", SweepRow::HEADER)?;
            file.flush()?;
        }
        append_manifest(dir, name, scenario, spec)?;
        Ok(Self { file })
    }

    pub fn write(&mut self, row: &SweepRow) -> Result<()> {
        writeln!(self.file, "{}", row.csv_line())?;
        self.file.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct ManifestEntry<'a> {
    file: &'a str,
    scenario_hash: String,
    version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<&'a SweepSpec>,
}

/// Appends one line to `dir/manifest.jsonl`.
pub fn append_manifest(dir: &Path, file: &str, scenario: &Scenario, spec: Option<&SweepSpec>) -> Result<()> {
    let entry = ManifestEntry {
        file,
        scenario_hash: scenario_hash(scenario),
        version: env!("CARGO_PKG_VERSION"),
        sweep: spec,
    };
    let line = serde_json::to_string(&entry).map_err(|e| Error::Serialization(e.to_string()))?;
    let mut f = OpenOptions::new().create(true).append(true).open(dir.join("manifest.jsonl"))?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Reads the `kind`, `value`, `scheme` and numeric columns back from a
/// table written by [`TableWriter`]. Quoted error fields are skipped.
pub fn read_table(path: &Path) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(SweepRow::HEADER) {
        return Err(Error::Serialization(format!("{}: unexpected header", path.display())));
    }
    let bad = |l: &str| Error::Serialization(format!("{}: bad row `{l}`", path.display()));
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let c: Vec<&str> = line.splitn(16, ',').collect();
        if c.len() < 16 {
            return Err(bad(line));
        }
        let num = |i: usize| c[i].parse::<f64>().map_err(|_| bad(line));
        out.push(SweepRow {
            kind: match c[0] {
                "row" => RowKind::Row,
                "summary" => RowKind::Summary,
                _ => return Err(bad(line)),
            },
            parameter: c[1].to_string(),
            value: num(2)?,
            scheme: c[3].parse().map_err(|_| bad(line))?,
            seed: if c[4].is_empty() { None } else { Some(c[4].parse().map_err(|_| bad(line))?) },
            status: (!c[5].is_empty()).then(|| c[5].to_string()),
            wsr: num(6)?,
            common_rate: num(7)?,
            common_ratio: num(8)?,
            sensing_snr: num(9)?,
            outer_iterations: num(10)?,
            runtime_s: num(11)?,
            max_violation: num(12)?,
            n: c[13].parse().map_err(|_| bad(line))?,
            n_feasible: c[14].parse().map_err(|_| bad(line))?,
            error: c[15].trim_matches('"').to_string(),
        });
    }
    Ok(out)
}

/// Average ranks, ties sharing the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `NaN` when either input is constant or
/// shorter than two.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    if x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}
