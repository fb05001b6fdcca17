//! Monte-Carlo experiments: drops of the 19-cell layout, per-slot
//! optimization under proportional fairness, metrics and result files.
//!
//! Every drop owns its random streams, derived from the master seed and the
//! drop index, so results do not depend on the number of worker threads.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cellgeom::{self, PropagationParams, Reuse};
use crate::channel::{mix_key, realize_channel, BsKind, ChannelRealization, LargeScale};
use crate::downlink::{self, DownlinkSolution};
use crate::mmopt::MmTrace;
use crate::scheduler::FairnessState;
use crate::uplink::{self, PowerAllocation};
use crate::{CompressionMode, Error, Result};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CRAN_SIM_OUT";

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("cran-out"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Uplink,
    Downlink,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Uplink => "uplink",
            Direction::Downlink => "downlink",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    PointToPoint,
    Multiterminal,
    #[default]
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<CompressionMode> {
        match self {
            ModeSelection::PointToPoint => vec![CompressionMode::PointToPoint],
            ModeSelection::Multiterminal => vec![CompressionMode::Multiterminal],
            ModeSelection::Both => vec![CompressionMode::PointToPoint, CompressionMode::Multiterminal],
        }
    }
}

impl FromStr for ModeSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(ModeSelection::Both),
            other => match CompressionMode::from_str(other)? {
                CompressionMode::PointToPoint => Ok(ModeSelection::PointToPoint),
                CompressionMode::Multiterminal => Ok(ModeSelection::Multiterminal),
            },
        }
    }
}

/// Mapping from the optimized rate to the reported throughput.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateMapping {
    #[default]
    Shannon,
    /// `min(scale · R, cap)`
    Attenuated {
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default = "default_cap")]
        cap: f64,
    },
}

fn default_scale() -> f64 {
    0.6
}

fn default_cap() -> f64 {
    4.4
}

impl RateMapping {
    pub fn apply(self, rate: f64) -> f64 {
        match self {
            RateMapping::Shannon => rate,
            RateMapping::Attenuated { scale, cap } => (scale * rate).min(cap),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Single(f64),
    Sweep(Vec<f64>),
}

impl Default for AlphaSpec {
    fn default() -> Self {
        AlphaSpec::Single(0.0)
    }
}

impl AlphaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            AlphaSpec::Single(a) => vec![*a],
            AlphaSpec::Sweep(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub direction: Direction,
    pub mode: ModeSelection,
    /// MSs per cell.
    pub k: usize,
    /// Pico-BSs per cell.
    pub n: usize,
    pub c_macro: f64,
    pub c_pico: f64,
    pub alpha: AlphaSpec,
    pub beta: f64,
    /// Slots per drop.
    #[serde(alias = "t")]
    pub slots: usize,
    pub drops: usize,
    pub seed: u64,
    pub rate_mapping: RateMapping,
    pub reuse: Reuse,
    pub propagation: PropagationParams,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            direction: Direction::Uplink,
            mode: ModeSelection::Both,
            k: 5,
            n: 5,
            c_macro: 3.0,
            c_pico: 1.0,
            alpha: AlphaSpec::default(),
            beta: 0.5,
            slots: 1,
            drops: 200,
            seed: 1,
            rate_mapping: RateMapping::Shannon,
            reuse: Reuse::Third,
            propagation: PropagationParams::default(),
            jobs: 0,
        }
    }
}

/// Named configurations for the standard studies.
pub const PRESETS: [&str; 4] = ["ul-cdf", "ul-sweep", "dl-sweep", "dl-sweep-small"];

/// Fairness exponents used by the sweep presets.
pub const DEFAULT_SWEEP: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig::default();
    let sweep = AlphaSpec::Sweep(DEFAULT_SWEEP.to_vec());
    match name {
        "ul-cdf" => Ok(ExperimentConfig { slots: 1, ..base }),
        "ul-sweep" => Ok(ExperimentConfig {
            n: 3,
            k: 5,
            c_macro: 9.0,
            c_pico: 3.0,
            slots: 10,
            beta: 0.5,
            alpha: sweep,
            drops: 50,
            ..base
        }),
        "dl-sweep" => Ok(ExperimentConfig { direction: Direction::Downlink, ..preset("ul-sweep")? }),
        "dl-sweep-small" => Ok(ExperimentConfig {
            direction: Direction::Downlink,
            n: 1,
            k: 4,
            c_macro: 3.0,
            c_pico: 1.0,
            slots: 5,
            beta: 0.5,
            alpha: sweep,
            drops: 50,
            ..base
        }),
        other => Err(Error::Config(format!("unknown preset '{other}', expected one of {PRESETS:?}"))),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.drops == 0 {
            return fail("drops must be at least 1".into());
        }
        if self.slots == 0 {
            return fail("slots must be at least 1".into());
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        for (name, v) in [("c_macro", self.c_macro), ("c_pico", self.c_pico)] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        let alphas = self.alpha.values();
        if alphas.is_empty() {
            return fail("alpha sweep list is empty".into());
        }
        if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return fail(format!("alpha must be finite and >= 0, got {a}"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if let RateMapping::Attenuated { scale, cap } = self.rate_mapping {
            if !(scale > 0.0) || !(cap > 0.0) {
                return fail("attenuated rate mapping needs positive scale and cap".into());
            }
        }
        if self.direction == Direction::Downlink && 3 + self.n > downlink::MAX_SUBSET_BS {
            return fail(format!(
                "downlink clusters are limited to {} BSs, n = {} gives {}",
                downlink::MAX_SUBSET_BS,
                self.n,
                3 + self.n
            ));
        }
        self.propagation.validate()
    }

    fn capacities(&self, channel: &ChannelRealization) -> Vec<f64> {
        channel
            .bs_kinds
            .iter()
            .map(|k| match k {
                BsKind::Macro => self.c_macro,
                BsKind::Pico => self.c_pico,
            })
            .collect()
    }
}

/// Backhaul link rate in bits per second expressed per Hz of radio bandwidth.
pub fn normalize_backhaul(link_rate_bps: f64, bandwidth_hz: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth_hz}")));
    }
    if !(link_rate_bps >= 0.0) {
        return Err(Error::Domain(format!("link rate must be >= 0, got {link_rate_bps}")));
    }
    Ok(link_rate_bps / bandwidth_hz)
}

/// Linear-interpolation empirical quantile, `q` in percent.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("percentile of an empty sample".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Domain(format!("percentile level must lie in [0, 100], got {q}")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(s[lo] + (pos - lo as f64) * (s[hi] - s[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    pub drop: usize,
    pub slot: usize,
    pub mode: CompressionMode,
    pub ms: usize,
    pub rate: f64,
}

/// Aggregate behaviour of the per-slot optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverStats {
    pub runs: usize,
    pub warnings: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    /// Runs whose objective trace decreased by more than 1e-9.
    pub non_monotone: usize,
    pub worst_final_violation: f64,
    /// Slots where the multiterminal objective fell below the paired
    /// point-to-point objective by more than 1e-9 (same weights only).
    pub dominance_violations: usize,
}

impl SolverStats {
    fn record(&mut self, trace: &MmTrace, warning: bool) {
        self.runs += 1;
        self.warnings += warning as usize;
        self.total_iterations += trace.iterations;
        self.max_iterations = self.max_iterations.max(trace.iterations);
        self.non_monotone += !trace.is_monotone(1e-9) as usize;
        self.worst_final_violation = self.worst_final_violation.max(trace.final_violation());
    }

    fn merge(&mut self, o: &SolverStats) {
        self.runs += o.runs;
        self.warnings += o.warnings;
        self.total_iterations += o.total_iterations;
        self.max_iterations = self.max_iterations.max(o.max_iterations);
        self.non_monotone += o.non_monotone;
        self.worst_final_violation = self.worst_final_violation.max(o.worst_final_violation);
        self.dominance_violations += o.dominance_violations;
    }

    pub fn mean_iterations(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.total_iterations as f64 / self.runs as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeMetrics {
    pub mode: CompressionMode,
    /// Per-slot cluster sum rates, sorted ascending.
    pub sum_rate_cdf: Vec<f64>,
    pub sum_rate_p5: f64,
    pub sum_rate_p50: f64,
    /// Time-averaged rate of every MS of every drop, in drop-major order.
    pub long_run_rates: Vec<f64>,
    pub avg_spectral_efficiency: f64,
    /// 5th percentile of the long-run per-MS rates.
    pub cell_edge: f64,
    pub stats: SolverStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub alpha: f64,
    pub records: Vec<SlotRecord>,
    pub modes: Vec<ModeMetrics>,
}

impl MetricsReport {
    pub fn mode(&self, mode: CompressionMode) -> Option<&ModeMetrics> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// Relative gain of the multiterminal median sum rate over point-to-point.
    pub fn median_gain(&self) -> Option<f64> {
        let p = self.mode(CompressionMode::PointToPoint)?;
        let m = self.mode(CompressionMode::Multiterminal)?;
        Some(m.sum_rate_p50 / p.sum_rate_p50 - 1.0)
    }
}

struct DropResult {
    records: Vec<SlotRecord>,
    /// Per mode: per-slot sum rates and per-MS long-run rates.
    sums: Vec<Vec<f64>>,
    long_run: Vec<Vec<f64>>,
    stats: Vec<SolverStats>,
}

fn run_drop(cfg: &ExperimentConfig, alpha: f64, drop: usize) -> Result<DropResult> {
    let modes = cfg.mode.modes();
    let drop_key = mix_key(cfg.seed, &[drop as u64]);
    let topology = cellgeom::build_layout(drop_key, cfg.k, cfg.n, cfg.reuse, &cfg.propagation)?;
    let mut ls_rng = ChaCha8Rng::seed_from_u64(mix_key(drop_key, &[u64::MAX]));
    let large = LargeScale::compute(&topology, &cfg.propagation, &mut ls_rng)?;
    let nm = large.num_ms();

    let mut fairness = modes
        .iter()
        .map(|_| FairnessState::new(nm, alpha, cfg.beta))
        .collect::<Result<Vec<_>>>()?;
    let mut out = DropResult {
        records: Vec::with_capacity(cfg.slots * nm * modes.len()),
        sums: vec![Vec::with_capacity(cfg.slots); modes.len()],
        long_run: vec![vec![0.0; nm]; modes.len()],
        stats: vec![SolverStats::default(); modes.len()],
    };

    for slot in 0..cfg.slots {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_key(drop_key, &[slot as u64]));
        let channel = realize_channel(&large, slot as u64, &mut rng)?;
        let c = cfg.capacities(&channel);
        let weights: Vec<Vec<f64>> = fairness.iter().map(|f| f.weights()).collect();
        let rates = match cfg.direction {
            Direction::Uplink => uplink_slot(&channel, &c, &modes, &weights, &mut out.stats)?,
            Direction::Downlink => downlink_slot(&channel, &c, &modes, &weights, &mut out.stats)?,
        };
        for (m, (mode, r)) in modes.iter().zip(rates).enumerate() {
            let mapped: Vec<f64> = r.iter().map(|&v| cfg.rate_mapping.apply(v)).collect();
            fairness[m].update(&mapped)?;
            out.sums[m].push(mapped.iter().sum());
            for (ms, &rate) in mapped.iter().enumerate() {
                out.long_run[m][ms] += rate / cfg.slots as f64;
                out.records.push(SlotRecord { drop, slot, mode: *mode, ms, rate });
            }
        }
    }
    Ok(out)
}

fn uplink_slot(
    channel: &ChannelRealization,
    c: &[f64],
    modes: &[CompressionMode],
    weights: &[Vec<f64>],
    stats: &mut [SolverStats],
) -> Result<Vec<Vec<f64>>> {
    let mut cache: Option<(Vec<f64>, PowerAllocation)> = None;
    let mut objectives = Vec::with_capacity(modes.len());
    let mut out = Vec::with_capacity(modes.len());
    for (m, &mode) in modes.iter().enumerate() {
        let w = &weights[m];
        let power = match &cache {
            Some((cw, p)) if cw == w => p.clone(),
            _ => {
                let p = uplink::step_one(channel, c, w)?;
                cache = Some((w.clone(), p.clone()));
                p
            }
        };
        let sol = uplink::finish_ul(channel, c, w, mode, &power)?;
        stats[m].record(&sol.trace, sol.warning.is_some());
        objectives.push((w.clone(), sol.objective));
        out.push(sol.rates);
    }
    check_pairing(modes, &objectives, stats);
    Ok(out)
}

fn downlink_slot(
    channel: &ChannelRealization,
    c: &[f64],
    modes: &[CompressionMode],
    weights: &[Vec<f64>],
    stats: &mut [SolverStats],
) -> Result<Vec<Vec<f64>>> {
    let p_b = &channel.bs_max_power;
    let mut p2p_cache: Option<(Vec<f64>, DownlinkSolution)> = None;
    let mut objectives = Vec::with_capacity(modes.len());
    let mut out = Vec::with_capacity(modes.len());
    for (m, &mode) in modes.iter().enumerate() {
        let w = &weights[m];
        let p2p = match &p2p_cache {
            Some((cw, s)) if cw == w => s.clone(),
            _ => {
                let s = downlink::optimize_dl(channel, c, p_b, w, CompressionMode::PointToPoint)?;
                p2p_cache = Some((w.clone(), s.clone()));
                s
            }
        };
        let sol = match mode {
            CompressionMode::PointToPoint => p2p,
            CompressionMode::Multiterminal => {
                downlink::optimize_dl_from(channel, c, p_b, w, mode, Some(&p2p.design))?
            }
        };
        stats[m].record(&sol.trace, sol.warning.is_some());
        objectives.push((w.clone(), sol.objective));
        out.push(sol.rates);
    }
    check_pairing(modes, &objectives, stats);
    Ok(out)
}

fn check_pairing(modes: &[CompressionMode], objectives: &[(Vec<f64>, f64)], stats: &mut [SolverStats]) {
    if modes.len() == 2 && objectives[0].0 == objectives[1].0 && objectives[1].1 < objectives[0].1 - 1e-9 {
        stats[1].dominance_violations += 1;
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every drop for one fairness exponent.
pub fn run_experiment_at(config: &ExperimentConfig, alpha: f64) -> Result<MetricsReport> {
    config.validate()?;
    let pool = thread_pool(config.jobs)?;
    let drops: Vec<DropResult> =
        pool.install(|| (0..config.drops).into_par_iter().map(|d| run_drop(config, alpha, d)).collect::<Result<Vec<_>>>())?;

    let modes = config.mode.modes();
    let mut records = Vec::new();
    let mut metrics = Vec::with_capacity(modes.len());
    for (m, &mode) in modes.iter().enumerate() {
        let mut sums: Vec<f64> = drops.iter().flat_map(|d| d.sums[m].iter().copied()).collect();
        sums.sort_by(f64::total_cmp);
        let long_run: Vec<f64> = drops.iter().flat_map(|d| d.long_run[m].iter().copied()).collect();
        let mut stats = SolverStats::default();
        for d in &drops {
            stats.merge(&d.stats[m]);
        }
        metrics.push(ModeMetrics {
            mode,
            sum_rate_p5: percentile(&sums, 5.0)?,
            sum_rate_p50: percentile(&sums, 50.0)?,
            sum_rate_cdf: sums,
            avg_spectral_efficiency: long_run.iter().sum::<f64>() / long_run.len() as f64,
            cell_edge: percentile(&long_run, 5.0)?,
            long_run_rates: long_run,
            stats,
        });
    }
    for d in drops {
        records.extend(d.records);
    }
    Ok(MetricsReport { config: config.clone(), alpha, records, modes: metrics })
}

/// Runs a configuration with a single fairness exponent.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    match &config.alpha {
        AlphaSpec::Single(a) => run_experiment_at(config, *a),
        AlphaSpec::Sweep(v) if v.len() == 1 => run_experiment_at(config, v[0]),
        AlphaSpec::Sweep(_) => Err(Error::Config("alpha is a sweep list; use alpha_sweep".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub alpha: f64,
    pub mode: CompressionMode,
    pub avg_spectral_efficiency: f64,
    pub cell_edge: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub points: Vec<CurvePoint>,
    pub reports: Vec<MetricsReport>,
}

impl SweepReport {
    pub fn curve(&self, mode: CompressionMode) -> Vec<CurvePoint> {
        self.points.iter().filter(|p| p.mode == mode).copied().collect()
    }
}

/// One (average spectral efficiency, cell-edge) point per exponent and mode.
pub fn alpha_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    config.validate()?;
    let mut points = Vec::new();
    let mut reports = Vec::new();
    for alpha in config.alpha.values() {
        let rep = run_experiment_at(config, alpha)?;
        for m in &rep.modes {
            points.push(CurvePoint {
                alpha,
                mode: m.mode,
                avg_spectral_efficiency: m.avg_spectral_efficiency,
                cell_edge: m.cell_edge,
            });
        }
        reports.push(rep);
    }
    Ok(SweepReport { points, reports })
}

fn fmt_f(v: f64) -> String {
    format!("{v:.8e}")
}

/// CSV of per-slot per-MS rates: `drop,slot,mode,ms,rate`.
pub fn records_csv(records: &[SlotRecord]) -> String {
    let mut s = String::with_capacity(32 * records.len() + 32);
    s.push_str("drop,slot,mode,ms,rate\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{}", r.drop, r.slot, r.mode.label(), r.ms, fmt_f(r.rate));
    }
    s
}

/// Key-value summary of one run.
pub fn summary_text(report: &MetricsReport) -> String {
    let cfg = &report.config;
    let mut s = String::new();
    let _ = writeln!(s, "[run]");
    let _ = writeln!(s, "direction = \"{}\"", cfg.direction.label());
    let _ = writeln!(s, "k = {}\nn = {}", cfg.k, cfg.n);
    let _ = writeln!(s, "c_macro = {}\nc_pico = {}", fmt_f(cfg.c_macro), fmt_f(cfg.c_pico));
    let _ = writeln!(s, "alpha = {}\nbeta = {}", fmt_f(report.alpha), fmt_f(cfg.beta));
    let _ = writeln!(s, "slots = {}\ndrops = {}\nseed = {}", cfg.slots, cfg.drops, cfg.seed);
    for m in &report.modes {
        let st = &m.stats;
        let _ = writeln!(s, "\n[{}]", m.mode.label());
        let _ = writeln!(s, "sum_rate_p5 = {}", fmt_f(m.sum_rate_p5));
        let _ = writeln!(s, "sum_rate_p50 = {}", fmt_f(m.sum_rate_p50));
        let _ = writeln!(s, "avg_spectral_efficiency = {}", fmt_f(m.avg_spectral_efficiency));
        let _ = writeln!(s, "cell_edge = {}", fmt_f(m.cell_edge));
        let _ = writeln!(s, "solver_runs = {}", st.runs);
        let _ = writeln!(s, "solver_warnings = {}", st.warnings);
        let _ = writeln!(s, "mean_iterations = {}", fmt_f(st.mean_iterations()));
        let _ = writeln!(s, "max_iterations = {}", st.max_iterations);
        let _ = writeln!(s, "non_monotone_traces = {}", st.non_monotone);
        let _ = writeln!(s, "worst_final_violation = {}", fmt_f(st.worst_final_violation));
        let _ = writeln!(s, "dominance_violations = {}", st.dominance_violations);
    }
    if let Some(g) = report.median_gain() {
        let _ = writeln!(s, "\n[gain]\nsum_rate_p50 = {}", fmt_f(g));
    }
    s
}

/// Empirical CDF of the per-slot sum rate, two columns per mode.
pub fn cdf_plot_data(report: &MetricsReport) -> String {
    let mut s = String::from("#");
    for m in &report.modes {
        let _ = write!(s, " {0}_sum_rate {0}_cdf", m.mode.label());
    }
    s.push('\n');
    let rows = report.modes.iter().map(|m| m.sum_rate_cdf.len()).max().unwrap_or(0);
    for r in 0..rows {
        let cols: Vec<String> = report
            .modes
            .iter()
            .map(|m| {
                let n = m.sum_rate_cdf.len();
                format!("{} {}", fmt_f(m.sum_rate_cdf[r.min(n - 1)]), fmt_f((r.min(n - 1) + 1) as f64 / n as f64))
            })
            .collect();
        let _ = writeln!(s, "{}", cols.join(" "));
    }
    s
}

/// Cell-edge throughput against average spectral efficiency, two columns per mode.
pub fn sweep_plot_data(sweep: &SweepReport) -> String {
    let modes: Vec<CompressionMode> = sweep.reports.first().map(|r| r.modes.iter().map(|m| m.mode).collect()).unwrap_or_default();
    let mut s = String::from("# alpha");
    for m in &modes {
        let _ = write!(s, " {0}_avg_se {0}_cell_edge", m.label());
    }
    s.push('\n');
    for rep in &sweep.reports {
        let _ = write!(s, "{}", fmt_f(rep.alpha));
        for m in &rep.modes {
            let _ = write!(s, " {} {}", fmt_f(m.avg_spectral_efficiency), fmt_f(m.cell_edge));
        }
        s.push('\n');
    }
    s
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))
}

/// Writes `records.csv`, `summary.txt` and `cdf.dat` into `dir`.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    Ok(vec![
        write_file(dir, "records.csv", &records_csv(&report.records))?,
        write_file(dir, "summary.txt", &summary_text(report))?,
        write_file(dir, "cdf.dat", &cdf_plot_data(report))?,
    ])
}

/// Writes one record file and summary per exponent plus `sweep.dat`.
pub fn write_sweep(sweep: &SweepReport, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut out = Vec::new();
    for (i, rep) in sweep.reports.iter().enumerate() {
        out.push(write_file(dir, &format!("records_alpha{i}.csv"), &records_csv(&rep.records))?);
        out.push(write_file(dir, &format!("summary_alpha{i}.txt"), &summary_text(rep))?);
    }
    out.push(write_file(dir, "sweep.dat", &sweep_plot_data(sweep))?);
    Ok(out)
}
