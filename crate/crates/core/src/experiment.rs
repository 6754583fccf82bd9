//! Replicated simulation runs and timing benchmarks.
//!
//! Every replicate draws its own streams from the run seed:
//! [`RngStream::derive`]`(seed, replicate, purpose)` with purpose 0 for the
//! data, 1 for the online Robbins–Monro draws and 2 for the streaming ones.
//! All methods of a replicate see the same observations, and the results do
//! not depend on how many replicates run in parallel.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::DetectionRecord;
use crate::error::{invalid, Result};
use crate::metrics::{
    frobenius_error, format_summary, MethodAggregate, OracleDetector, Trajectory, DEFAULT_CADENCE,
};
use crate::naive::NaiveState;
use crate::numerics::rng::purpose;
use crate::numerics::{RngStream, SymMatrix};
use crate::pipeline::{Mode, RobustConfig, RobustState};
use crate::simgen::{Mixture, Scenario, ScenarioParams};
use crate::step::StepSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Online,
    Streaming,
    Naive,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Online, Method::Streaming, Method::Naive, Method::Oracle];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Online => "online",
            Method::Streaming => "streaming",
            Method::Naive => "naive",
            Method::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "online" => Ok(Method::Online),
            "streaming" => Ok(Method::Streaming),
            "naive" => Ok(Method::Naive),
            "oracle" => Ok(Method::Oracle),
            other => Err(invalid(format!(
                "unknown method {other:?}; expected online, streaming, naive or oracle"
            ))),
        }
    }
}

/// Step-size constants `(c_γ, γ, n₀)` for one recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    pub c_gamma: f64,
    pub gamma: f64,
    #[serde(default)]
    pub n0: u64,
}

impl StepConfig {
    fn schedule(&self) -> Result<StepSchedule> {
        StepSchedule::new(self.c_gamma, self.gamma, self.n0)
    }
}

impl From<StepSchedule> for StepConfig {
    fn from(s: StepSchedule) -> Self {
        Self {
            c_gamma: s.c_gamma,
            gamma: s.gamma,
            n0: s.n0,
        }
    }
}

/// Everything that determines a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Named scenario; explicit `k`, `l`, `rho1` override its values.
    pub scenario: Option<Scenario>,
    pub k: Option<f64>,
    pub l: Option<f64>,
    pub rho1: Option<f64>,
    pub d: usize,
    pub n: usize,
    pub r: f64,
    pub seed: u64,
    pub replicates: usize,
    pub methods: Vec<Method>,
    /// Streaming block size; defaults to 10.
    pub batch: usize,
    /// Initialisation window; defaults to `max(100, 2d)`.
    pub n_init: Option<usize>,
    pub n_mc: u64,
    pub alpha: f64,
    pub omega: f64,
    pub median_step: StepConfig,
    pub mcm_step: StepConfig,
    pub rm_step: StepConfig,
    pub distance_step: StepConfig,
    /// Observations between trajectory checkpoints.
    pub checkpoint_every: u64,
    /// Keep per-observation verdicts in the results.
    pub keep_detections: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let robust = RobustConfig::default();
        Self {
            scenario: Some(Scenario::A),
            k: None,
            l: None,
            rho1: None,
            d: 10,
            n: 10_000,
            r: 0.05,
            seed: 1,
            replicates: 1,
            methods: Method::ALL.to_vec(),
            batch: 10,
            n_init: None,
            n_mc: robust.n_mc,
            alpha: robust.alpha,
            omega: robust.omega,
            median_step: robust.median_step.into(),
            mcm_step: robust.mcm_step.into(),
            rm_step: robust.rm_step.into(),
            distance_step: robust.distance_step.into(),
            checkpoint_every: DEFAULT_CADENCE,
            keep_detections: true,
        }
    }
}

impl RunConfig {
    pub fn n_init(&self) -> usize {
        self.n_init.unwrap_or_else(|| (2 * self.d).max(100))
    }

    pub fn scenario_params(&self) -> Result<ScenarioParams> {
        let (mut k, mut l, mut rho1) = match self.scenario {
            Some(s) => s.knobs(),
            None => (0.0, 1.0, crate::simgen::DEFAULT_RHO0),
        };
        k = self.k.unwrap_or(k);
        l = self.l.unwrap_or(l);
        rho1 = self.rho1.unwrap_or(rho1);
        ScenarioParams::new(self.d, self.r, k, l, rho1)
    }

    pub fn robust_config(&self, mode: Mode) -> Result<RobustConfig> {
        let c = RobustConfig {
            mode,
            alpha: self.alpha,
            n_mc: self.n_mc,
            omega: self.omega,
            median_step: self.median_step.schedule()?,
            mcm_step: self.mcm_step.schedule()?,
            rm_step: self.rm_step.schedule()?,
            distance_step: self.distance_step.schedule()?,
            ..RobustConfig::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d: must be at least 1"));
        }
        if self.n == 0 {
            return Err(invalid("n: must be at least 1"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates: must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods: select at least one method"));
        }
        if self.batch == 0 {
            return Err(invalid("batch: must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(invalid("checkpoint_every: must be at least 1"));
        }
        let n_init = self.n_init();
        if n_init < self.d + 1 {
            return Err(invalid(format!("n_init: {n_init} is below d + 1 = {}", self.d + 1)));
        }
        if n_init > self.n {
            return Err(invalid(format!("n_init: {n_init} exceeds n = {}", self.n)));
        }
        self.scenario_params()?;
        self.robust_config(Mode::Online)?;
        Ok(())
    }
}

/// Observations with optional labels and optional true inlier parameters.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub labels: Option<Vec<bool>>,
    /// `(μ₀, Σ₀)` when known.
    pub truth: Option<(Vec<f64>, SymMatrix)>,
}

impl Dataset {
    pub fn simulate(params: &ScenarioParams, n: usize, rng: &mut RngStream) -> Result<Self> {
        let mix = Mixture::new(params)?;
        let mut xs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let s = mix.sample(rng);
            xs.push(s.x);
            labels.push(s.is_outlier);
        }
        Ok(Self {
            xs,
            labels: Some(labels),
            truth: Some((params.mu0(), params.sigma0())),
        })
    }

    fn label(&self, i: usize) -> Option<bool> {
        self.labels.as_ref().map(|l| l[i])
    }
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub trajectory: Trajectory,
    pub records: Vec<DetectionRecord>,
    pub eigen_count: u64,
    pub seconds: f64,
    /// Final robust state, for snapshots.
    pub robust: Option<RobustState>,
    pub naive: Option<NaiveState>,
}

#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub methods: Vec<MethodOutcome>,
}

impl ReplicateOutcome {
    pub fn method(&self, m: Method) -> Option<&MethodOutcome> {
        self.methods.iter().find(|o| o.method == m)
    }
}

struct Tracker<'a> {
    data: &'a Dataset,
    trajectory: Trajectory,
    records: Vec<DetectionRecord>,
    keep: bool,
}

impl<'a> Tracker<'a> {
    fn new(data: &'a Dataset, method: Method, cadence: u64, keep: bool) -> Self {
        Self {
            data,
            trajectory: Trajectory::new(method.name(), cadence),
            records: Vec::new(),
            keep,
        }
    }

    fn push(&mut self, mut r: DetectionRecord) {
        r.truth = self.data.label(r.index as usize);
        self.trajectory.observe(&r);
        if self.keep {
            self.records.push(r);
        }
    }

    fn frob(&self, cov: impl FnOnce() -> SymMatrix) -> Option<f64> {
        self.data.truth.as_ref().map(|(_, s)| frobenius_error(&cov(), s))
    }
}

/// Runs one method over `data`, initialising on its first `n_init` rows.
pub fn run_method(
    method: Method,
    config: &RunConfig,
    data: &Dataset,
    mc_rng: RngStream,
) -> Result<MethodOutcome> {
    let n_init = config.n_init();
    if data.xs.len() < n_init {
        return Err(invalid(format!(
            "stream has {} observations, fewer than n_init = {n_init}",
            data.xs.len()
        )));
    }
    let (window, rest) = data.xs.split_at(n_init);
    let mut tr = Tracker::new(data, method, config.checkpoint_every, config.keep_detections);
    let start = Instant::now();
    let mut outcome_robust = None;
    let mut outcome_naive = None;
    let mut eigen_count = 0;

    match method {
        Method::Online | Method::Streaming => {
            let mode = if method == Method::Online {
                Mode::Online
            } else {
                Mode::Streaming { batch: config.batch }
            };
            let (mut state, init) = RobustState::initialize(window, config.robust_config(mode)?, mc_rng)?;
            for r in init {
                tr.push(r);
            }
            let checkpoint = |tr: &mut Tracker, s: &RobustState| {
                let frob = tr.frob(|| s.covariance());
                tr.trajectory.checkpoint(frob, s.log10_determinant());
            };
            checkpoint(&mut tr, &state);
            let step = if method == Method::Online { 1 } else { config.batch };
            for chunk in rest.chunks(step) {
                for r in state.process(chunk)? {
                    tr.push(r);
                }
                if tr.trajectory.due() {
                    checkpoint(&mut tr, &state);
                }
            }
            checkpoint(&mut tr, &state);
            eigen_count = state.eigen_count;
            outcome_robust = Some(state);
        }
        Method::Naive => {
            let step = config.distance_step.schedule()?;
            let (mut state, init) = NaiveState::initialize(window, config.alpha, step)?;
            for r in init {
                tr.push(r);
            }
            let checkpoint = |tr: &mut Tracker, s: &NaiveState| {
                let frob = tr.frob(|| s.covariance().clone());
                tr.trajectory.checkpoint(frob, s.log10_determinant());
            };
            checkpoint(&mut tr, &state);
            for x in rest {
                let r = state.update(x)?;
                tr.push(r);
                if tr.trajectory.due() {
                    checkpoint(&mut tr, &state);
                }
            }
            checkpoint(&mut tr, &state);
            outcome_naive = Some(state);
        }
        Method::Oracle => {
            let (mu0, sigma0) = data
                .truth
                .clone()
                .ok_or_else(|| invalid("the oracle needs the true inlier parameters"))?;
            let oracle = OracleDetector::new(mu0, &sigma0, config.alpha)?;
            let log_det = oracle.log10_determinant();
            for (i, x) in data.xs.iter().enumerate() {
                tr.push(oracle.record(i as u64, x));
                if tr.trajectory.due() {
                    tr.trajectory.checkpoint(Some(0.0), log_det);
                }
            }
            tr.trajectory.checkpoint(Some(0.0), log_det);
        }
    }

    Ok(MethodOutcome {
        method,
        trajectory: tr.trajectory,
        records: tr.records,
        eigen_count,
        seconds: start.elapsed().as_secs_f64(),
        robust: outcome_robust,
        naive: outcome_naive,
    })
}

fn mc_stream(seed: u64, replicate: usize, method: Method) -> RngStream {
    let p = match method {
        Method::Streaming => purpose::STREAMING_MC,
        _ => purpose::ONLINE_MC,
    };
    RngStream::derive(seed, replicate as u64, p)
}

/// The simulated stream of one replicate.
pub fn replicate_data(config: &RunConfig, replicate: usize) -> Result<Dataset> {
    let params = config.scenario_params()?;
    let mut rng = RngStream::derive(config.seed, replicate as u64, purpose::DATA);
    Dataset::simulate(&params, config.n, &mut rng)
}

/// Runs the configured methods on one dataset.
pub fn run_on_dataset(config: &RunConfig, replicate: usize, data: &Dataset) -> Result<ReplicateOutcome> {
    let methods = config
        .methods
        .iter()
        .filter(|m| **m != Method::Oracle || data.truth.is_some())
        .map(|&m| run_method(m, config, data, mc_stream(config.seed, replicate, m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicateOutcome { replicate, methods })
}

pub fn run_replicate(config: &RunConfig, replicate: usize) -> Result<ReplicateOutcome> {
    let data = replicate_data(config, replicate)?;
    run_on_dataset(config, replicate, &data)
}

/// All replicates, in parallel, returned in replicate order.
pub fn run_all(config: &RunConfig) -> Result<Vec<ReplicateOutcome>> {
    config.validate()?;
    (0..config.replicates)
        .into_par_iter()
        .map(|i| run_replicate(config, i))
        .collect()
}

/// Summary text over replicates, headed by the simulation settings.
pub fn summarize(config: &RunConfig, outcomes: &[ReplicateOutcome]) -> String {
    let mut header: Vec<(String, String)> = Vec::new();
    if let Some(s) = config.scenario {
        header.push(("scenario".into(), format!("{s:?}")));
    }
    if let Ok(p) = config.scenario_params() {
        header.push(("k".into(), p.k.to_string()));
        header.push(("l".into(), p.l.to_string()));
        header.push(("rho1".into(), p.rho1.to_string()));
        header.push(("kl".into(), p.kl().to_string()));
    }
    header.push(("d".into(), config.d.to_string()));
    header.push(("n".into(), config.n.to_string()));
    header.push(("r".into(), config.r.to_string()));
    header.push(("seed".into(), config.seed.to_string()));
    header.push(("replicates".into(), outcomes.len().to_string()));
    summarize_with(&header, outcomes)
}

/// Summary text over replicates under an arbitrary `key = value` header.
pub fn summarize_with(header: &[(String, String)], outcomes: &[ReplicateOutcome]) -> String {
    let mut methods: BTreeMap<String, (usize, MethodAggregate)> = BTreeMap::new();
    for o in outcomes {
        for m in &o.methods {
            let e = methods.entry(m.method.name().to_string()).or_default();
            e.0 += 1;
            e.1.add(&m.trajectory);
        }
    }
    format_summary(header, &methods)
}

/// One timing measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    pub d: usize,
    pub batch: usize,
    pub seconds: f64,
    pub eigendecompositions: u64,
}

pub const BENCH_HEADER: &str = "method,n,d,batch,seconds,eigendecompositions";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.method.name(),
            self.n,
            self.d,
            self.batch,
            self.seconds,
            self.eigendecompositions
        )
    }
}

/// Times the selected methods on one clean stream of size `n` in dimension
/// `d`; streaming uses blocks of `batch` (by default `d`).
pub fn bench(
    base: &RunConfig,
    n: usize,
    d: usize,
    batch: Option<usize>,
    methods: &[Method],
) -> Result<Vec<BenchRow>> {
    let config = RunConfig {
        d,
        n,
        batch: batch.unwrap_or(d),
        n_init: base.n_init.or(Some((2 * d).max(100))),
        ..base.clone()
    };
    config.validate()?;
    let data = replicate_data(&config, 0)?;
    methods
        .iter()
        .filter(|m| **m != Method::Oracle)
        .map(|&m| {
            let out = run_method(m, &config, &data, mc_stream(config.seed, 0, m))?;
            Ok(BenchRow {
                method: m,
                n,
                d,
                batch: if m == Method::Streaming { config.batch } else { 1 },
                seconds: out.seconds,
                eigendecompositions: out.eigen_count,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig {
            d: 3,
            n: 400,
            n_init: Some(50),
            r: 0.1,
            replicates: 2,
            ..RunConfig::default()
        }
    }

    #[test]
    fn validation_names_fields() {
        let c = RunConfig { n: 0, ..small() };
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("n:"), "{e}");
        let c = RunConfig { n_init: Some(3), ..small() };
        assert!(c.validate().unwrap_err().to_string().contains("n_init"));
    }

    #[test]
    fn default_window() {
        assert_eq!(RunConfig { d: 10, ..RunConfig::default() }.n_init(), 100);
        assert_eq!(RunConfig { d: 100, ..RunConfig::default() }.n_init(), 200);
    }

    #[test]
    fn replicates_are_deterministic_and_distinct() {
        let c = small();
        let a = run_all(&c).unwrap();
        let b = run_all(&c).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (mx, my) in x.methods.iter().zip(&y.methods) {
                assert_eq!(mx.trajectory, my.trajectory);
            }
        }
        assert_ne!(
            a[0].method(Method::Online).unwrap().trajectory,
            a[1].method(Method::Online).unwrap().trajectory
        );
    }

    #[test]
    fn counts_cover_stream() {
        let out = run_replicate(&small(), 0).unwrap();
        for m in &out.methods {
            let last = m.trajectory.last().unwrap();
            assert_eq!(last.iteration, 400);
            assert_eq!(last.confusion.total(), 400);
        }
        let online = out.method(Method::Online).unwrap();
        assert_eq!(online.eigen_count, 1 + 350);
        let streaming = out.method(Method::Streaming).unwrap();
        assert_eq!(streaming.eigen_count, 1 + 35);
    }

    #[test]
    fn unlabeled_data_without_truth() {
        let c = small();
        let mut data = replicate_data(&c, 0).unwrap();
        data.labels = None;
        data.truth = None;
        let out = run_on_dataset(&c, 0, &data).unwrap();
        assert!(out.method(Method::Oracle).is_none());
        let online = out.method(Method::Online).unwrap();
        let last = online.trajectory.last().unwrap();
        assert_eq!(last.frob, None);
        assert_eq!(last.unlabeled, 400);
    }

    #[test]
    fn summary_mentions_all_methods() {
        let c = small();
        let s = summarize(&c, &run_all(&c).unwrap());
        for m in Method::ALL {
            assert!(s.contains(&format!("{}.replicates = 2", m.name())), "{s}");
        }
    }
}
