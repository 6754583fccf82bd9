//! Evaluation: estimation error, confusion counts, the oracle detector and
//! per-checkpoint trajectories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::detection::DetectionRecord;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{chi2_quantile, Cholesky, SymMatrix};

/// `‖est − truth‖_F`.
pub fn frobenius_error(est: &SymMatrix, truth: &SymMatrix) -> f64 {
    est.frobenius_distance(truth)
}

/// Mahalanobis rule with the true inlier parameters.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    mu0: Vec<f64>,
    chol: Cholesky,
    log10_det: f64,
    pub threshold: f64,
}

impl OracleDetector {
    pub fn new(mu0: Vec<f64>, sigma0: &SymMatrix, alpha: f64) -> Result<Self> {
        check_dim(sigma0.dim(), mu0.len())?;
        let chol = Cholesky::new(sigma0)?;
        let threshold = chi2_quantile(mu0.len(), 1.0 - alpha)?;
        Ok(Self {
            mu0,
            log10_det: chol.log_det() / std::f64::consts::LN_10,
            chol,
            threshold,
        })
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mu0).map(|(a, b)| a - b).collect();
        self.chol.inv_quad_form(&diff)
    }

    pub fn classify(&self, x: &[f64]) -> bool {
        self.distance(x) > self.threshold
    }

    pub fn record(&self, index: u64, x: &[f64]) -> DetectionRecord {
        let raw = self.distance(x);
        DetectionRecord {
            index,
            raw_distance: raw,
            scaled_distance: raw,
            threshold: self.threshold,
            is_outlier: raw > self.threshold,
            truth: None,
        }
    }

    pub fn log10_determinant(&self) -> f64 {
        self.log10_det
    }
}

/// Cumulative confusion counts; "positive" means outlier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, r: &DetectionRecord) -> Result<()> {
        let truth = r.truth.ok_or(Error::MissingLabel { index: r.index })?;
        match (r.is_outlier, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// False positives over true inliers; 0 when there are none.
    pub fn fp_rate(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// False negatives over true outliers; 0 when there are none.
    pub fn fn_rate(&self) -> f64 {
        ratio(self.fn_, self.fn_ + self.tp)
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Observations consumed so far.
    pub iteration: u64,
    /// Frobenius error against the true covariance, when known.
    pub frob: Option<f64>,
    pub log10_det: f64,
    pub confusion: Confusion,
    /// Observations scored without a ground-truth label.
    pub unlabeled: u64,
}

/// Per-method evaluation state over one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: String,
    /// A checkpoint is taken every `cadence` observations and at the end.
    pub cadence: u64,
    pub checkpoints: Vec<Checkpoint>,
    pub confusion: Confusion,
    pub unlabeled: u64,
    pub consumed: u64,
}

pub const DEFAULT_CADENCE: u64 = 10;

impl Trajectory {
    pub fn new(method: impl Into<String>, cadence: u64) -> Self {
        Self {
            method: method.into(),
            cadence: cadence.max(1),
            checkpoints: Vec::new(),
            confusion: Confusion::default(),
            unlabeled: 0,
            consumed: 0,
        }
    }

    /// Counts a verdict. Unlabelled records only advance the consumed count.
    pub fn observe(&mut self, r: &DetectionRecord) {
        if r.truth.is_some() {
            self.confusion.record(r).expect("label checked");
        } else {
            self.unlabeled += 1;
        }
        self.consumed += 1;
    }

    /// Whether a checkpoint is due: a cadence boundary was crossed since the
    /// last checkpoint.
    pub fn due(&self) -> bool {
        let last = self.checkpoints.last().map(|c| c.iteration).unwrap_or(0);
        self.consumed / self.cadence > last / self.cadence
    }

    pub fn checkpoint(&mut self, frob: Option<f64>, log10_det: f64) {
        if self.checkpoints.last().map(|c| c.iteration) == Some(self.consumed) {
            return;
        }
        self.checkpoints.push(Checkpoint {
            iteration: self.consumed,
            frob,
            log10_det,
            confusion: self.confusion,
            unlabeled: self.unlabeled,
        });
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

pub const TRAJECTORY_HEADER: &str = "replicate,method,iteration,frob,log10det,fp,fn,tp,tn";

/// Appends trajectory rows; an unknown Frobenius error is left empty.
pub fn write_trajectory_rows<W: Write + ?Sized>(out: &mut W, replicate: usize, t: &Trajectory) -> std::io::Result<()> {
    for c in &t.checkpoints {
        let frob = c.frob.map(|v| format!("{v}")).unwrap_or_default();
        writeln!(
            out,
            "{replicate},{},{},{frob},{},{},{},{},{}",
            t.method, c.iteration, c.log10_det, c.confusion.fp, c.confusion.fn_, c.confusion.tp, c.confusion.tn
        )?;
    }
    Ok(())
}

pub const DETECTION_HEADER: &str = "replicate,method,index,raw_distance,scaled_distance,threshold,is_outlier,truth";

pub fn write_detection_rows<W: Write + ?Sized>(
    out: &mut W,
    replicate: usize,
    method: &str,
    records: &[DetectionRecord],
) -> std::io::Result<()> {
    for r in records {
        let truth = match r.truth {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        writeln!(
            out,
            "{replicate},{method},{},{},{},{},{},{truth}",
            r.index,
            r.raw_distance,
            r.scaled_distance,
            r.threshold,
            u8::from(r.is_outlier)
        )?;
    }
    Ok(())
}

/// Sample mean and standard deviation (denominator `n − 1`; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Final-checkpoint statistics of one method across replicates.
#[derive(Debug, Clone, Default)]
pub struct MethodAggregate {
    pub frob: Vec<f64>,
    pub log10_det: Vec<f64>,
    pub fp_rate: Vec<f64>,
    pub fn_rate: Vec<f64>,
    pub fp: Vec<f64>,
    pub fn_: Vec<f64>,
    pub totals: Confusion,
}

impl MethodAggregate {
    pub fn add(&mut self, t: &Trajectory) {
        if let Some(c) = t.last() {
            if let Some(f) = c.frob {
                self.frob.push(f);
            }
            self.log10_det.push(c.log10_det);
            self.fp_rate.push(c.confusion.fp_rate());
            self.fn_rate.push(c.confusion.fn_rate());
            self.fp.push(c.confusion.fp as f64);
            self.fn_.push(c.confusion.fn_ as f64);
            self.totals.merge(&c.confusion);
        }
    }
}

/// `key = value` summary lines, one block per method, keys sorted.
///
/// Keys are `<method>.<metric>.mean` and `<method>.<metric>.std` for
/// `frob`, `log10det`, `fp_rate`, `fn_rate`, `fp` and `fn`, plus
/// `<method>.replicates` and pooled `<method>.total.{tp,fp,tn,fn}`.
pub fn format_summary(header: &[(String, String)], methods: &BTreeMap<String, (usize, MethodAggregate)>) -> String {
    let mut s = String::new();
    for (k, v) in header {
        let _ = writeln!(s, "{k} = {v}");
    }
    for (name, (reps, agg)) in methods {
        let _ = writeln!(s);
        let _ = writeln!(s, "{name}.replicates = {reps}");
        let metrics: [(&str, &[f64]); 6] = [
            ("frob", &agg.frob),
            ("log10det", &agg.log10_det),
            ("fp_rate", &agg.fp_rate),
            ("fn_rate", &agg.fn_rate),
            ("fp", &agg.fp),
            ("fn", &agg.fn_),
        ];
        for (metric, values) in metrics {
            if values.is_empty() {
                continue;
            }
            let (m, sd) = mean_std(values);
            let _ = writeln!(s, "{name}.{metric}.mean = {m}");
            let _ = writeln!(s, "{name}.{metric}.std = {sd}");
        }
        let t = agg.totals;
        let _ = writeln!(s, "{name}.total.tp = {}", t.tp);
        let _ = writeln!(s, "{name}.total.fp = {}", t.fp);
        let _ = writeln!(s, "{name}.total.tn = {}", t.tn);
        let _ = writeln!(s, "{name}.total.fn = {}", t.fn_);
    }
    s
}
