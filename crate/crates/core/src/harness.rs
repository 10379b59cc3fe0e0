//! Monte Carlo comparison of the three estimators on simulated experiments.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basic::{estimate_basic, BasicConfig};
use crate::bootstrap::BootstrapConfig;
use crate::cmp::{estimate_tte_cmp, CmpConfig, FeatureConfig};
use crate::data::{mean, std_dev, EffectEstimate, ExperimentDataset, Method};
use crate::error::{Error, Result};
use crate::network::{estimate_ptte, NetworkConfig};
use crate::seed::{self, stream};
use crate::sim::{ground_truth_tte, simulate_experiment, DgpParams, GraphParams, RolloutParams, SimConfig, WeightMode};

/// Environment variable that replaces the configured base seed.
pub const SEED_ENV: &str = "INTERFERENCE_LAB_SEED";

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasSign {
    Positive,
    Negative,
}

impl BiasSign {
    pub fn matches(self, bias: f64) -> bool {
        match self {
            BiasSign::Positive => bias > 0.0,
            BiasSign::Negative => bias < 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    pub basic: BasicConfig,
    pub network: NetworkConfig,
    pub cmp: CmpConfig,
    pub bootstrap_replicates: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            basic: BasicConfig::default(),
            network: NetworkConfig::default(),
            cmp: CmpConfig::default(),
            bootstrap_replicates: 200,
        }
    }
}

impl EstimatorSettings {
    /// Runs one estimator on `d`.
    pub fn estimate(&self, method: Method, d: &ExperimentDataset, seed: u64) -> Result<EffectEstimate> {
        let boot = BootstrapConfig {
            replicates: self.bootstrap_replicates,
            seed,
        };
        match method {
            Method::Basic => estimate_basic(d, &self.basic, &boot),
            Method::NetworkAware => estimate_ptte(d, &self.network, &boot),
            Method::Cmp => estimate_tte_cmp(d, &self.cmp, &boot),
        }
    }
}

fn default_truth_reps() -> usize {
    1
}

/// One benchmark scenario: simulator settings plus estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(flatten)]
    pub sim: SimConfig,
    pub replicates: usize,
    /// Common-random-number repetitions per ground-truth evaluation.
    #[serde(default = "default_truth_reps")]
    pub truth_reps: usize,
    #[serde(default)]
    pub estimators: EstimatorSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_bias_sign: Option<BiasSign>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config(format!("scenario {}: replicates must be at least 1", self.name)));
        }
        if self.truth_reps == 0 {
            return Err(Error::Config(format!("scenario {}: truth_reps must be at least 1", self.name)));
        }
        self.estimators.cmp.features.validate()?;
        self.sim.validate()
    }

    /// Base seed of replicate `r`.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        seed::derive(self.sim.seed, stream::REPLICATE, r as u64)
    }
}

/// A bench config file holds either one scenario or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BenchConfig {
    Many { scenarios: Vec<ScenarioConfig> },
    One(Box<ScenarioConfig>),
}

impl BenchConfig {
    pub fn into_scenarios(self) -> Vec<ScenarioConfig> {
        match self {
            BenchConfig::Many { scenarios } => scenarios,
            BenchConfig::One(s) => vec![*s],
        }
    }
}

/// Reads the seed override, if set.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}

fn base_sim(gamma: f64, rho: f64) -> SimConfig {
    SimConfig {
        graph: GraphParams {
            n_eligible: 1000,
            n_ineligible: 200,
            n_connected: 400,
            avg_degree: 3.0,
            weight_mode: WeightMode::Unit,
        },
        dgp: DgpParams {
            beta: 1.0,
            gamma,
            rho,
            sigma: 1.0,
            baseline_mean: 10.0,
            baseline_sd: 2.0,
        },
        rollout: RolloutParams {
            stage_boundaries: vec![11],
            stage_probabilities: vec![0.5],
        },
        n_periods: 20,
        seed: 20240601,
        pre_period_end: Some(10),
    }
}

fn preset_estimators() -> EstimatorSettings {
    EstimatorSettings {
        basic: BasicConfig::default(),
        network: NetworkConfig::default(),
        cmp: CmpConfig {
            features: FeatureConfig {
                moment_order: 1,
                interaction: false,
                center_on_baseline: true,
            },
            ..CmpConfig::default()
        },
        bootstrap_replicates: 200,
    }
}

pub const PRESET_NAMES: [&str; 3] = ["no_interference", "upward_bias", "sign_reversal"];

/// Built-in scenarios; the files under `presets/` hold the same values.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let (sim, sign, what) = match name {
        "no_interference" => (
            base_sim(0.0, 0.0),
            None,
            "No spillover and no carry-over: every estimator targets the same effect.",
        ),
        "upward_bias" => (
            base_sim(-0.5, 0.3),
            Some(BiasSign::Positive),
            "Treated units draw outcome away from neighbours that share their connected units, \
             so comparing treated with control overstates the effect of full deployment.",
        ),
        "sign_reversal" => (
            base_sim(-2.5, 0.3),
            Some(BiasSign::Positive),
            "Spillover outweighs the direct effect: treated units beat control units, \
             yet deploying to everyone lowers outcomes.",
        ),
        _ => return None,
    };
    let rollout = "Single rollout stage: half of the eligible units switch on at period 11 of 20. \
                   A staggered multi-stage schedule would bias the pre/post estimators even without interference.";
    Some(ScenarioConfig {
        name: name.to_string(),
        description: Some(format!("{what} {rollout}")),
        sim,
        replicates: 200,
        truth_reps: 1,
        estimators: preset_estimators(),
        expected_bias_sign: sign,
    })
}

/// One estimator's outcome in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EffectEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MethodResult {
    pub fn point(&self) -> Option<f64> {
        self.estimate.as_ref().map(|e| e.point)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub results: Vec<MethodResult>,
}

impl ReplicateRecord {
    pub fn result(&self, m: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == m)
    }

    pub fn point(&self, m: Method) -> Option<f64> {
        self.result(m).and_then(MethodResult::point)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub sd: f64,
    pub mean_bias: f64,
    pub mean_abs_bias: f64,
    /// Monte Carlo standard error of `mean_bias`.
    pub mc_se: f64,
    pub significance_rate: f64,
    pub coverage_rate: f64,
    /// Share of replicates with a positive point estimate.
    pub positive_rate: f64,
    /// Share of replicates whose bias has the expected sign.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_bias_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub config: ScenarioConfig,
    pub mean_truth: f64,
    pub n_replicates: usize,
    pub n_failed_replicates: usize,
    pub methods: Vec<MethodSummary>,
    /// Row and column order follow `methods`.
    pub sign_agreement: Vec<Vec<f64>>,
    pub replicates: Vec<ReplicateRecord>,
}

impl ScenarioReport {
    pub fn summary(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn agreement(&self, a: Method, b: Method) -> Option<f64> {
        let i = self.methods.iter().position(|s| s.method == a)?;
        let j = self.methods.iter().position(|s| s.method == b)?;
        Some(self.sign_agreement[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: u32,
    pub scenarios: Vec<ScenarioReport>,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Share of replicates where both methods produced an estimate of the same
/// sign; 1 when no replicate has both.
pub fn sign_agreement(records: &[ReplicateRecord], a: Method, b: Method) -> f64 {
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.point(a)?, r.point(b)?)))
        .collect();
    if pairs.is_empty() {
        return 1.0;
    }
    pairs.iter().filter(|(x, y)| sign(*x) == sign(*y)).count() as f64 / pairs.len() as f64
}

fn rate(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

fn summarize(method: Method, records: &[ReplicateRecord], expected: Option<BiasSign>) -> MethodSummary {
    let mut points = Vec::new();
    let mut biases = Vec::new();
    let (mut sig, mut cover, mut n_failed) = (0, 0, 0);
    for r in records {
        match (r.result(method).and_then(|m| m.estimate.as_ref()), r.truth) {
            (Some(e), Some(truth)) => {
                points.push(e.point);
                biases.push(e.point - truth);
                sig += usize::from(e.significant_5pct);
                cover += usize::from(e.covers(truth));
            }
            _ => n_failed += 1,
        }
    }
    let n = points.len();
    MethodSummary {
        method,
        n_ok: n,
        n_failed,
        mean: mean(&points),
        sd: std_dev(&points),
        mean_bias: mean(&biases),
        mean_abs_bias: mean(&biases.iter().map(|b| b.abs()).collect::<Vec<_>>()),
        mc_se: if n == 0 { 0.0 } else { std_dev(&biases) / (n as f64).sqrt() },
        significance_rate: rate(sig, n),
        coverage_rate: rate(cover, n),
        positive_rate: rate(points.iter().filter(|&&p| p > 0.0).count(), n),
        expected_bias_rate: expected.map(|s| rate(biases.iter().filter(|&&b| s.matches(b)).count(), n)),
    }
}

fn run_replicate(cfg: &ScenarioConfig, r: usize) -> ReplicateRecord {
    let seed = cfg.replicate_seed(r);
    let mut record = ReplicateRecord {
        replicate: r,
        seed,
        truth: None,
        error: None,
        results: Vec::new(),
    };
    let sim_cfg = SimConfig { seed, ..cfg.sim.clone() };
    let experiment = match simulate_experiment(&sim_cfg) {
        Ok(e) => e,
        Err(e) => {
            record.error = Some(format!("simulation failed: {e}"));
            return record;
        }
    };
    match ground_truth_tte(experiment.graph(), &cfg.sim.dgp, cfg.sim.n_periods, seed, cfg.truth_reps) {
        Ok(t) => record.truth = Some(t),
        Err(e) => record.error = Some(format!("ground truth failed: {e}")),
    }
    record.results = Method::ALL
        .iter()
        .map(|&method| match cfg.estimators.estimate(method, &experiment.dataset, seed) {
            Ok(e) => MethodResult { method, estimate: Some(e), error: None },
            Err(e) => MethodResult { method, estimate: None, error: Some(e.to_string()) },
        })
        .collect();
    record
}

fn aggregate(cfg: &ScenarioConfig, replicates: Vec<ReplicateRecord>) -> ScenarioReport {
    let methods: Vec<MethodSummary> = Method::ALL
        .iter()
        .map(|&m| summarize(m, &replicates, cfg.expected_bias_sign))
        .collect();
    let sign_agreement = Method::ALL
        .iter()
        .map(|&a| Method::ALL.iter().map(|&b| sign_agreement(&replicates, a, b)).collect())
        .collect();
    let truths: Vec<f64> = replicates.iter().filter_map(|r| r.truth).collect();
    ScenarioReport {
        name: cfg.name.clone(),
        config: cfg.clone(),
        mean_truth: mean(&truths),
        n_replicates: replicates.len(),
        n_failed_replicates: replicates.iter().filter(|r| r.error.is_some()).count(),
        methods,
        sign_agreement,
        replicates,
    }
}

/// Runs every replicate of one scenario on the current rayon pool.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let replicates: Vec<ReplicateRecord> = (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect();
    Ok(aggregate(cfg, replicates))
}

/// Runs all scenarios with at most `jobs` worker threads (0 = all cores).
/// Output does not depend on `jobs`.
pub fn run_bench(scenarios: &[ScenarioConfig], jobs: usize) -> Result<BenchReport> {
    for s in scenarios {
        s.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let scenarios = pool.install(|| scenarios.iter().map(run_scenario).collect::<Result<Vec<_>>>())?;
    Ok(BenchReport {
        schema: REPORT_SCHEMA,
        scenarios,
    })
}

impl BenchReport {
    /// Internal consistency: schema, rate bounds, the agreement matrix shape
    /// and its recount from the replicate log, and each estimate's
    /// significance flag.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.schema != REPORT_SCHEMA {
            return Err(format!("unsupported schema {}", self.schema));
        }
        for s in &self.scenarios {
            let k = s.methods.len();
            if s.sign_agreement.len() != k || s.sign_agreement.iter().any(|r| r.len() != k) {
                return Err(format!("{}: agreement matrix is not {k}x{k}", s.name));
            }
            for i in 0..k {
                if s.sign_agreement[i][i] != 1.0 {
                    return Err(format!("{}: agreement diagonal is not 1", s.name));
                }
                for j in 0..k {
                    let v = s.sign_agreement[i][j];
                    if v != s.sign_agreement[j][i] || !(0.0..=1.0).contains(&v) {
                        return Err(format!("{}: agreement matrix is not a symmetric rate matrix", s.name));
                    }
                    let recount = sign_agreement(&s.replicates, s.methods[i].method, s.methods[j].method);
                    if recount != v {
                        return Err(format!("{}: agreement entry ({i},{j}) disagrees with the replicate log", s.name));
                    }
                }
            }
            for m in &s.methods {
                let rates = [m.significance_rate, m.coverage_rate, m.positive_rate];
                if rates.iter().chain(m.expected_bias_rate.iter()).any(|r| !(0.0..=1.0).contains(r)) {
                    return Err(format!("{}: {} has a rate outside [0, 1]", s.name, m.method.label()));
                }
            }
            for r in &s.replicates {
                for e in r.results.iter().filter_map(|m| m.estimate.as_ref()) {
                    if e.significant_5pct == (e.ci_low <= 0.0 && 0.0 <= e.ci_high) {
                        return Err(format!("{}: replicate {} has an inconsistent significance flag", s.name, r.replicate));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn render_report(report: &BenchReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Markdown => Ok(render_markdown(report)),
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn render_markdown(report: &BenchReport) -> String {
    let mut out = String::from("# Treatment effect comparison\n");
    for s in &report.scenarios {
        let c = &s.config;
        let _ = write!(
            out,
            "\n## {}\n\nGround truth (mean over replicates): {:.4}. Replicates: {} ({} failed). \
             beta = {}, gamma = {}, rho = {}, T = {}.\n\n",
            s.name, s.mean_truth, s.n_replicates, s.n_failed_replicates, c.sim.dgp.beta, c.sim.dgp.gamma, c.sim.dgp.rho, c.sim.n_periods,
        );
        out.push_str("| Method | Estimate | Sig. | Bias-vs-truth | Expected-bias match |\n");
        out.push_str("|---|---|---|---|---|\n");
        for m in &s.methods {
            let matched = m.expected_bias_rate.map_or_else(|| "n/a".to_string(), pct);
            let _ = writeln!(
                out,
                "| {} | {:.4} (sd {:.4}) | {} | {:+.4} | {} |",
                m.method.label(),
                m.mean,
                m.sd,
                pct(m.significance_rate),
                m.mean_bias,
                matched
            );
        }
        let mut agreement = BTreeMap::new();
        for (i, a) in s.methods.iter().enumerate() {
            for (j, b) in s.methods.iter().enumerate().skip(i + 1) {
                agreement.insert(format!("{}/{}", a.method.label(), b.method.label()), s.sign_agreement[i][j]);
            }
        }
        out.push_str("\nSign agreement: ");
        let parts: Vec<String> = agreement.iter().map(|(k, v)| format!("{k} {}", pct(*v))).collect();
        out.push_str(&parts.join(", "));
        out.push('\n');
    }
    out
}
