//! Experiment orchestration: configuration, seeded replications, CSV/JSON
//! output, scaling-law checks and the identification experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{generate_instance, Instance, InstanceParams, ModalitySpec, NoiseSpec};
use crate::error::{invalid, Error, Result};
use crate::hypervolume::{ReferencePoint, DEFAULT_IN_LOOP_MC_SAMPLES};
use crate::learner::{
    eps_frontier_output, CommitVariant, Learner, LearnerConfig, Mode, ProbePotential, ProbeRule, RoundRecord,
};
use crate::metrics::{checkpoints, evaluate, identification_check, HvGapEvaluator};
use crate::pareto::PointSet;
use crate::scalarize::{ScalarizerKind, ScalarizerSpec};

/// Environment variable capping the worker count.
pub const WORKERS_ENV: &str = "PTC_WORKERS";

pub const CSV_HEADER: [&str; 14] = [
    "run_id",
    "seed",
    "algo_label",
    "mode",
    "q",
    "M_on",
    "t",
    "hv_gap",
    "pseudo_regret",
    "realized_regret",
    "active_set_size",
    "probes_total",
    "probe_cost",
    "wall_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceSection {
    pub k: usize,
    pub d: usize,
    pub clusters: usize,
    pub confuser_gap: f64,
    pub seed: u64,
    pub frontier_arms: Option<usize>,
    /// Load a dumped instance instead of generating one.
    pub file: Option<PathBuf>,
}

impl Default for InstanceSection {
    fn default() -> Self {
        Self {
            k: 24,
            d: 4,
            clusters: 4,
            confuser_gap: 0.05,
            seed: 7,
            frontier_arms: None,
            file: None,
        }
    }
}

impl InstanceSection {
    pub fn params(&self) -> InstanceParams {
        InstanceParams {
            frontier_arms: self.frontier_arms,
            ..InstanceParams::new(self.k, self.d, self.clusters, self.confuser_gap, self.seed)
        }
    }

    pub fn build(&self) -> Result<Instance> {
        match &self.file {
            Some(path) => Instance::load(path),
            None => generate_instance(&self.params()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSection {
    pub mode: Mode,
    pub q: usize,
    pub scalarizer: ScalarizerKind,
    /// Defaults to uniform weights (weighted sum, Chebyshev) or
    /// `(d, d−1, …, 1)/Σ` (Gini).
    pub weights: Option<Vec<f64>>,
    pub probe_potential: ProbePotential,
    pub commit_variant: CommitVariant,
    pub probe_rule: ProbeRule,
    pub oracle_commit: bool,
    pub init_rounds: usize,
    pub delta: f64,
    pub sigma_scale: Option<f64>,
    pub prune: bool,
    pub mc_samples: usize,
    pub reference: Option<Vec<f64>>,
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            mode: Mode::Scalar,
            q: 2,
            scalarizer: ScalarizerKind::WeightedSum,
            weights: None,
            probe_potential: ProbePotential::Boxes,
            commit_variant: CommitVariant::Realized,
            probe_rule: ProbeRule::Optimistic,
            oracle_commit: false,
            init_rounds: 1,
            delta: 0.05,
            sigma_scale: None,
            prune: true,
            mc_samples: DEFAULT_IN_LOOP_MC_SAMPLES,
            reference: None,
        }
    }
}

impl LearnerSection {
    pub fn scalarizer_spec(&self, d: usize) -> Result<ScalarizerSpec> {
        let weights = match &self.weights {
            Some(w) => w.clone(),
            None => match self.scalarizer {
                ScalarizerKind::Gini => {
                    let total = (d * (d + 1) / 2) as f64;
                    (0..d).map(|i| (d - i) as f64 / total).collect()
                }
                _ => vec![1.0 / d as f64; d],
            },
        };
        ScalarizerSpec::new(self.scalarizer, weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultimodalSection {
    pub enabled: bool,
    pub sigmas: Vec<f64>,
    /// Defaults to inverse-variance weights.
    pub alphas: Option<Vec<f64>>,
}

impl Default for MultimodalSection {
    fn default() -> Self {
        Self {
            enabled: false,
            sigmas: vec![0.08, 0.12, 0.20],
            alphas: None,
        }
    }
}

impl MultimodalSection {
    pub fn spec(&self) -> Result<ModalitySpec> {
        match &self.alphas {
            Some(a) => ModalitySpec::new(self.sigmas.clone(), a.clone()),
            None => ModalitySpec::inverse_variance(self.sigmas.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub horizon: u64,
    pub seeds: Vec<u64>,
    /// Overrides the geometric checkpoint grid.
    pub checkpoints: Option<Vec<u64>>,
    /// Per-probe cost, reported only.
    pub tau: f64,
    /// Record wall-clock time per run; off by default so output is
    /// byte-reproducible.
    pub timing: bool,
    pub output: PathBuf,
    /// Optional CSV of every probed latent outcome, for pairing checks.
    pub trace: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: 20_000,
            seeds: (1..=20).collect(),
            checkpoints: None,
            tau: 0.0,
            timing: false,
            output: PathBuf::from("results.csv"),
            trace: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub convexified: bool,
    pub mc_samples: usize,
    pub mc_seed: u64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            convexified: false,
            mc_samples: DEFAULT_IN_LOOP_MC_SAMPLES,
            mc_seed: 0,
        }
    }
}

/// A probe budget on a sweep axis: a number or `"K"` for full information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QValue {
    Count(usize),
    Symbol(String),
}

impl QValue {
    fn resolve(&self, k: usize) -> Result<usize> {
        match self {
            QValue::Count(q) => Ok(*q),
            QValue::Symbol(s) if s == "K" => Ok(k),
            QValue::Symbol(s) => Err(Error::Config(format!("unknown probe budget {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub q: Option<Vec<QValue>>,
    pub modes: Option<Vec<Mode>>,
    pub fusion: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifySection {
    pub eps: f64,
    /// Calibration constant in the budget `C·K_P·d·ln(Kd/δ)/ε²`.
    pub c_cal: f64,
    pub reps: usize,
    /// Multiplies the derived horizon (e.g. 0.1 for a starved run).
    pub budget_scale: f64,
    pub probe_rule: ProbeRule,
    pub q: Option<usize>,
    /// Replications use seeds `first_seed..first_seed + reps`.
    pub first_seed: u64,
}

impl Default for IdentifySection {
    fn default() -> Self {
        Self {
            eps: 0.1,
            c_cal: 8.0,
            reps: 200,
            budget_scale: 1.0,
            probe_rule: ProbeRule::RoundRobin,
            q: None,
            first_seed: 1,
        }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub instance: InstanceSection,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    pub learner: LearnerSection,
    pub multimodal: MultimodalSection,
    pub run: RunSection,
    pub metrics: MetricsSection,
    pub sweep: SweepSection,
    pub identify: IdentifySection,
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::GaussianClipped { sigma: 0.1 }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        default_noise()
    }
}

/// Splits `--section.key=value` (leading dashes optional) into its parts.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let body = arg.trim_start_matches('-');
    let (key, value) = body
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {arg:?} is not of the form section.key=value")))?;
    if key.is_empty() {
        return Err(Error::Config(format!("override {arg:?} has an empty key")));
    }
    Ok((key.to_string(), value.to_string()))
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), parse_value(raw));
    Ok(())
}

impl RunConfig {
    /// Parses a TOML document and applies `section.key=value` overrides.
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        if let Some(noise) = table.get_mut("noise").and_then(|n| n.as_table_mut()) {
            noise
                .entry("model")
                .or_insert_with(|| toml::Value::String("gaussian-clipped".into()));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        let distinct: BTreeSet<u64> = self.run.seeds.iter().copied().collect();
        if distinct.len() != self.run.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.run.horizon < 1 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if let Some(c) = &self.run.checkpoints {
            if c.is_empty() || c.windows(2).any(|w| w[0] >= w[1]) || c[0] < 1 || *c.last().unwrap() > self.run.horizon {
                return Err(Error::Config("checkpoints must be increasing within [1, horizon]".into()));
            }
        }
        if !(self.run.tau >= 0.0) {
            return Err(Error::Config("tau must be >= 0".into()));
        }
        self.noise.validate()?;
        if self.multimodal.enabled || self.sweep.fusion.as_ref().is_some_and(|f| f.contains(&true)) {
            self.multimodal.spec()?;
        }
        Ok(())
    }

    pub fn schedule(&self) -> Vec<u64> {
        self.run.checkpoints.clone().unwrap_or_else(|| checkpoints(self.run.horizon))
    }

    fn learner_config(&self, inst: &Instance, mode: Mode, q: usize, fused: bool) -> Result<LearnerConfig> {
        let l = &self.learner;
        let cfg = LearnerConfig {
            mode,
            q,
            scalarizer: Some(l.scalarizer_spec(inst.d())?),
            probe_potential: l.probe_potential,
            commit_variant: l.commit_variant,
            probe_rule: l.probe_rule,
            oracle_commit: l.oracle_commit,
            multimodal: if fused { Some(self.multimodal.spec()?) } else { None },
            init_rounds: l.init_rounds,
            delta: l.delta,
            sigma_scale: l.sigma_scale,
            reference: l.reference.clone().map(ReferencePoint::new),
            mc_samples: l.mc_samples,
            prune: l.prune,
            record_observations: self.run.trace.is_some(),
        };
        cfg.validate(inst.k(), inst.d())?;
        Ok(cfg)
    }

    /// The single cell described by the learner and multimodal sections.
    pub fn single_cell(&self, inst: &Instance) -> Result<Vec<Cell>> {
        let l = &self.learner;
        Ok(vec![Cell {
            index: 0,
            learner: self.learner_config(inst, l.mode, l.q, self.multimodal.enabled)?,
        }])
    }

    /// Cartesian product of the sweep axes (each defaulting to the learner
    /// section's value), in axis order q → mode → fusion.
    pub fn sweep_cells(&self, inst: &Instance) -> Result<Vec<Cell>> {
        let qs: Vec<usize> = match &self.sweep.q {
            Some(v) => v.iter().map(|q| q.resolve(inst.k())).collect::<Result<_>>()?,
            None => vec![self.learner.q],
        };
        let modes = self.sweep.modes.clone().unwrap_or_else(|| vec![self.learner.mode]);
        let fusion = self.sweep.fusion.clone().unwrap_or_else(|| vec![self.multimodal.enabled]);
        let mut cells = Vec::new();
        for &q in &qs {
            for &mode in &modes {
                for &fused in &fusion {
                    cells.push(Cell {
                        index: cells.len(),
                        learner: self.learner_config(inst, mode, q, fused)?,
                    });
                }
            }
        }
        Ok(cells)
    }
}

/// One learner configuration replicated over all seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub learner: LearnerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: u64,
    pub seed: u64,
    pub algo_label: String,
    pub mode: String,
    pub q: usize,
    #[serde(rename = "M_on")]
    pub m_on: bool,
    pub t: u64,
    pub hv_gap: f64,
    pub pseudo_regret: f64,
    pub realized_regret: f64,
    pub active_set_size: usize,
    pub probes_total: u64,
    pub probe_cost: f64,
    pub wall_ms: f64,
}

/// `printf("%.9g")`.
pub fn format_g9(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn row_fields(r: &ResultRow) -> Result<[String; 14]> {
    for (name, v) in [
        ("hv_gap", r.hv_gap),
        ("pseudo_regret", r.pseudo_regret),
        ("realized_regret", r.realized_regret),
        ("probe_cost", r.probe_cost),
        ("wall_ms", r.wall_ms),
    ] {
        if !v.is_finite() {
            return Err(invalid(format!("run {} t {}: {name} is not finite", r.run_id, r.t)));
        }
    }
    Ok([
        r.run_id.to_string(),
        r.seed.to_string(),
        r.algo_label.clone(),
        r.mode.clone(),
        r.q.to_string(),
        r.m_on.to_string(),
        r.t.to_string(),
        format_g9(r.hv_gap),
        format_g9(r.pseudo_regret),
        format_g9(r.realized_regret),
        r.active_set_size.to_string(),
        r.probes_total.to_string(),
        format_g9(r.probe_cost),
        format_g9(r.wall_ms),
    ])
}

/// Serializes rows (header included, `\n` line endings).
pub fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(row_fields(r)?)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

/// Writes `bytes` to `path` through a temporary file in the same
/// directory, so an interrupted run never leaves a partial final file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Mean and standard error of the mean (0 for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates of one cell at its final checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub algo_label: String,
    pub mode: String,
    pub q: usize,
    #[serde(rename = "M_on")]
    pub m_on: bool,
    pub seeds: usize,
    pub t: u64,
    pub hv_gap_mean: f64,
    pub hv_gap_stderr: f64,
    pub pseudo_regret_mean: f64,
    pub pseudo_regret_stderr: f64,
    pub realized_regret_mean: f64,
    pub realized_regret_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub instance_k: usize,
    pub instance_d: usize,
    pub frontier_size: usize,
    pub horizon: u64,
    pub hv_optimum: f64,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
    /// Per (run_id, t, arm): latent outcome, present when tracing is on.
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub run_id: u64,
    pub seed: u64,
    pub q: usize,
    pub t: u64,
    pub arm: usize,
    pub outcome: Vec<f64>,
}

/// Runs every `(cell, seed)` pair on a worker pool sized by
/// [`WORKERS_ENV`] (default: all cores), then canonicalizes row order.
pub fn run_cells(config: &RunConfig, inst: &Instance, cells: &[Cell]) -> Result<ExperimentOutput> {
    let hv_eval = HvGapEvaluator::new(
        inst,
        config
            .learner
            .reference
            .clone()
            .map(ReferencePoint::new)
            .unwrap_or_else(|| ReferencePoint::origin(inst.d())),
        config.metrics.convexified,
        config.metrics.mc_samples,
        config.metrics.mc_seed,
    )?;
    let schedule = config.schedule();
    let seeds = &config.run.seeds;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..seeds.len()).map(move |s| (c, s)))
        .collect();
    let spec = config.learner.scalarizer_spec(inst.d())?;

    let work = || {
        jobs.par_iter()
            .map(|&(c, s)| {
                let cell = &cells[c];
                let seed = seeds[s];
                let run_id = (c * seeds.len() + s) as u64;
                let start = Instant::now();
                let records = run_records(&cell.learner, inst, config.noise, config.run.horizon, seed)?;
                let wall = if config.run.timing {
                    start.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                };
                let q = cell.learner.q;
                let series = evaluate(&records, inst, &spec, &hv_eval, &schedule, q, config.run.tau)?;
                let rows: Vec<ResultRow> = (0..series.checkpoints.len())
                    .map(|i| ResultRow {
                        run_id,
                        seed,
                        algo_label: cell.learner.algo_label(),
                        mode: cell.learner.mode.label().to_string(),
                        q,
                        m_on: cell.learner.multimodal.is_some(),
                        t: series.checkpoints[i],
                        hv_gap: series.hv_gap[i],
                        pseudo_regret: series.pseudo_regret[i],
                        realized_regret: series.realized_regret[i],
                        active_set_size: series.active_set_size[i],
                        probes_total: series.probes_used[i],
                        probe_cost: series.probe_cost[i],
                        wall_ms: wall,
                    })
                    .collect();
                let trace: Vec<TraceRow> = records
                    .iter()
                    .filter_map(|r| r.observations.as_ref().map(|obs| (r, obs)))
                    .flat_map(|(r, obs)| {
                        r.probe_set.iter().zip(obs).map(move |(&arm, y)| TraceRow {
                            run_id,
                            seed,
                            q,
                            t: r.t,
                            arm,
                            outcome: y.to_vec(),
                        })
                    })
                    .collect();
                Ok((rows, trace))
            })
            .collect::<Result<Vec<_>>>()
    };
    let results = match std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| invalid(e.to_string()))?
            .install(work)?,
        _ => work()?,
    };

    let mut rows = Vec::new();
    let mut trace = Vec::new();
    for (r, tr) in results {
        rows.extend(r);
        trace.extend(tr);
    }
    rows.sort_by_key(|r| (r.run_id, r.t));
    trace.sort_by_key(|r| (r.run_id, r.t, r.arm));
    let summary = summarize(inst, config.run.horizon, hv_eval.optimum(), cells, &rows);
    Ok(ExperimentOutput { rows, summary, trace })
}

fn run_records(cfg: &LearnerConfig, inst: &Instance, noise: NoiseSpec, horizon: u64, seed: u64) -> Result<Vec<RoundRecord>> {
    let mut learner = Learner::new(cfg, inst, noise, seed)?;
    (0..horizon).map(|_| learner.step()).collect()
}

fn summarize(inst: &Instance, horizon: u64, hv_optimum: f64, cells: &[Cell], rows: &[ResultRow]) -> Summary {
    let mut last: BTreeMap<u64, &ResultRow> = BTreeMap::new();
    for r in rows {
        last.insert(r.run_id, r);
    }
    let n_cells = cells.len().max(1) as u64;
    let per_cell = (last.len() as u64).div_ceil(n_cells).max(1);
    let cells = cells
        .iter()
        .map(|cell| {
            let finals: Vec<&ResultRow> = last
                .values()
                .filter(|r| r.run_id / per_cell == cell.index as u64)
                .copied()
                .collect();
            let pick = |f: fn(&ResultRow) -> f64| mean_stderr(&finals.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (hv_gap_mean, hv_gap_stderr) = pick(|r| r.hv_gap);
            let (pseudo_regret_mean, pseudo_regret_stderr) = pick(|r| r.pseudo_regret);
            let (realized_regret_mean, realized_regret_stderr) = pick(|r| r.realized_regret);
            CellSummary {
                cell: cell.index,
                algo_label: cell.learner.algo_label(),
                mode: cell.learner.mode.label().to_string(),
                q: cell.learner.q,
                m_on: cell.learner.multimodal.is_some(),
                seeds: finals.len(),
                t: finals.first().map_or(0, |r| r.t),
                hv_gap_mean,
                hv_gap_stderr,
                pseudo_regret_mean,
                pseudo_regret_stderr,
                realized_regret_mean,
                realized_regret_stderr,
            }
        })
        .collect();
    Summary {
        instance_k: inst.k(),
        instance_d: inst.d(),
        frontier_size: inst.frontier().size(),
        horizon,
        hv_optimum,
        cells,
    }
}

/// Runs the given cells and writes the CSV, the JSON summary (same path
/// with a `.json` extension) and the optional trace.
pub fn execute(config: &RunConfig, sweep: bool) -> Result<ExperimentOutput> {
    let inst = config.instance.build()?;
    let cells = if sweep {
        config.sweep_cells(&inst)?
    } else {
        config.single_cell(&inst)?
    };
    let out = run_cells(config, &inst, &cells)?;
    write_atomic(&config.run.output, &rows_to_csv(&out.rows)?)?;
    let summary_path = config.run.output.with_extension("json");
    write_atomic(&summary_path, serde_json::to_string_pretty(&out.summary)?.as_bytes())?;
    if let Some(path) = &config.run.trace {
        write_atomic(path, &trace_to_csv(&out.trace, inst.d())?)?;
    }
    Ok(out)
}

pub fn trace_to_csv(trace: &[TraceRow], d: usize) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header: Vec<String> = ["run_id", "seed", "q", "t", "arm"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=d).map(|j| format!("r{j}")));
    w.write_record(&header)?;
    for r in trace {
        let mut rec = vec![r.run_id.to_string(), r.seed.to_string(), r.q.to_string(), r.t.to_string(), r.arm.to_string()];
        // full precision so pairing checks compare exact draws
        rec.extend(r.outcome.iter().map(|x| format!("{x:?}")));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Parses a trace file into `(seed, t, arm) → outcome`.
pub fn read_trace(path: &Path) -> Result<BTreeMap<(u64, u64, usize), Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Parse(format!("trace row too short: {rec:?}")));
        let num = |i: usize| -> Result<u64> { field(i)?.parse().map_err(|_| Error::Parse(format!("bad integer in trace: {rec:?}"))) };
        let seed = num(1)?;
        let t = num(3)?;
        let arm = num(4)? as usize;
        let outcome = (5..rec.len())
            .map(|i| field(i)?.parse::<f64>().map_err(|_| Error::Parse(format!("bad float in trace: {rec:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        out.insert((seed, t, arm), outcome);
    }
    Ok(out)
}

/// Parses rows of comma- or whitespace-separated numbers; blank lines and
/// `#` comments are skipped.
pub fn parse_points(text: &str) -> Result<PointSet> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<f64>().map_err(|_| Error::Parse(format!("line {}: bad number {f:?}", lineno + 1))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let dim = rows.first().map(Vec::len).ok_or(Error::EmptySet)?;
    PointSet::from_rows(dim, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMetric {
    Regret,
    HvGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub metric: ScalingMetric,
    pub q1: usize,
    pub q2: usize,
    pub pairs: usize,
    /// Mean over seeds of `metric(q1)/metric(q2)`.
    pub mean_ratio: f64,
    pub mean_ratio_stderr: f64,
    /// `mean metric(q1) / mean metric(q2)`.
    pub ratio_of_means: f64,
    pub mean_q1: f64,
    pub mean_q2: f64,
    /// `sqrt(q2/q1)`.
    pub reference: f64,
}

/// Compares final-checkpoint metrics between two probe budgets over the
/// seeds both share. Rows should come from a single (mode, fusion) slice.
pub fn scaling_check(rows: &[ResultRow], metric: ScalingMetric, q1: usize, q2: usize) -> Result<ScalingReport> {
    let finals = |q: usize| {
        let mut last: BTreeMap<u64, &ResultRow> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.q == q) {
            match last.get(&r.seed) {
                Some(prev) if prev.t >= r.t => {}
                _ => {
                    last.insert(r.seed, r);
                }
            }
        }
        last
    };
    let value = |r: &ResultRow| match metric {
        ScalingMetric::Regret => r.pseudo_regret,
        ScalingMetric::HvGap => r.hv_gap,
    };
    let a = finals(q1);
    let b = finals(q2);
    let shared: Vec<u64> = a.keys().filter(|s| b.contains_key(s)).copied().collect();
    if shared.len() < 2 {
        return Err(Error::MissingData(format!(
            "need >= 2 shared seeds for q = {q1} and q = {q2}, found {}",
            shared.len()
        )));
    }
    let xs: Vec<f64> = shared.iter().map(|s| value(a[s])).collect();
    let ys: Vec<f64> = shared.iter().map(|s| value(b[s])).collect();
    let ratios: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .filter_map(|(&x, &y)| {
            if y > 0.0 {
                Some(x / y)
            } else if x == 0.0 {
                Some(1.0)
            } else {
                None
            }
        })
        .collect();
    let (mean_ratio, mean_ratio_stderr) = mean_stderr(&ratios);
    let (mean_q1, _) = mean_stderr(&xs);
    let (mean_q2, _) = mean_stderr(&ys);
    let ratio_of_means = if mean_q2 > 0.0 {
        mean_q1 / mean_q2
    } else if mean_q1 == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    Ok(ScalingReport {
        metric,
        q1,
        q2,
        pairs: shared.len(),
        mean_ratio,
        mean_ratio_stderr,
        ratio_of_means,
        mean_q1,
        mean_q2,
        reference: (q2 as f64 / q1 as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub eps: f64,
    pub delta: f64,
    pub c_cal: f64,
    pub budget_scale: f64,
    pub q: usize,
    pub horizon: u64,
    pub reps: usize,
    pub frontier_size: usize,
    pub recall_fraction: f64,
    pub no_false_positive_fraction: f64,
    pub pass_fraction: f64,
    pub mean_output_size: f64,
}

/// `⌈C·K_P·d·ln(K·d/δ) / (q·ε²)⌉`, scaled by `budget_scale` (at least 1).
#[allow(clippy::too_many_arguments)]
pub fn identification_horizon(k: usize, d: usize, k_p: usize, q: usize, delta: f64, eps: f64, c_cal: f64, budget_scale: f64) -> u64 {
    let budget = c_cal * k_p as f64 * d as f64 * (k as f64 * d as f64 / delta).ln() / (q as f64 * eps * eps);
    ((budget * budget_scale).ceil() as u64).max(1)
}

/// Replicates runs to the identification budget and scores the ε-frontier
/// output of each against the instance.
pub fn identify_experiment(config: &RunConfig) -> Result<IdentifyReport> {
    let id = &config.identify;
    if !(id.eps > 0.0 && id.eps.is_finite()) {
        return Err(Error::InvalidEpsilon(id.eps));
    }
    if id.reps == 0 {
        return Err(Error::Config("identify.reps must be >= 1".into()));
    }
    if !(id.budget_scale > 0.0 && id.c_cal > 0.0) {
        return Err(Error::Config("identify.c_cal and identify.budget_scale must be positive".into()));
    }
    let inst = config.instance.build()?;
    let q = id.q.unwrap_or(config.learner.q);
    let mut learner = config.learner_config(&inst, config.learner.mode, q, config.multimodal.enabled)?;
    learner.probe_rule = id.probe_rule;
    learner.record_observations = false;
    let horizon = identification_horizon(
        inst.k(),
        inst.d(),
        inst.frontier().size(),
        q,
        learner.delta,
        id.eps,
        id.c_cal,
        id.budget_scale,
    );
    let outcomes: Vec<(bool, bool, usize)> = (id.first_seed..id.first_seed + id.reps as u64)
        .into_par_iter()
        .map(|seed| {
            let mut l = Learner::new(&learner, &inst, config.noise, seed)?;
            for _ in 0..horizon {
                l.step()?;
            }
            let out = eps_frontier_output(&l.current_bounds(), id.eps)?;
            let (recall, clean) = identification_check(&out, &inst, id.eps)?;
            Ok((recall, clean, out.len()))
        })
        .collect::<Result<_>>()?;
    let n = outcomes.len() as f64;
    let frac = |f: fn(&(bool, bool, usize)) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
    Ok(IdentifyReport {
        eps: id.eps,
        delta: learner.delta,
        c_cal: id.c_cal,
        budget_scale: id.budget_scale,
        q,
        horizon,
        reps: id.reps,
        frontier_size: inst.frontier().size(),
        recall_fraction: frac(|o| o.0),
        no_false_positive_fraction: frac(|o| o.1),
        pass_fraction: frac(|o| o.0 && o.1),
        mean_output_size: outcomes.iter().map(|o| o.2 as f64).sum::<f64>() / n,
    })
}
