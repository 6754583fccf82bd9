//! Result files.
//!
//! `run` writes to its output directory:
//!
//! - `trajectories.csv`: `replicate,method,iteration,frob,log10det,fp,fn,tp,tn`,
//!   one row per checkpoint; `frob` is empty when the truth is unknown
//! - `detections.csv`: `replicate,method,index,raw_distance,scaled_distance,threshold,is_outlier,truth`,
//!   one row per observation; `truth` is empty for unlabeled input
//! - `summary.txt`: `key = value` lines with final-checkpoint statistics
//! - `timings.csv`: `replicate,method,seconds,eigendecompositions`
//! - `snapshots/<method>_<replicate>.json` with `--snapshots`
//!
//! Everything except `timings.csv` is a deterministic function of the
//! configuration.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use streamcov::detection::DetectionRecord;
use streamcov::experiment::{Method, ReplicateOutcome};
use streamcov::metrics::{
    write_detection_rows, write_trajectory_rows, Trajectory, DETECTION_HEADER, TRAJECTORY_HEADER,
};

pub const TIMINGS_HEADER: &str = "replicate,method,seconds,eigendecompositions";

/// Runs `f` on a buffered writer for `path`, or standard output for `-`.
pub fn with_writer(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    if path == Path::new("-") {
        let mut out = io::stdout().lock();
        f(&mut out).context("writing to standard output")?;
        return out.flush().context("writing to standard output");
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    with_writer(path, |w| w.write_all(text.as_bytes()))
}

pub fn write_run(dir: &Path, outcomes: &[ReplicateOutcome], summary: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    with_writer(&dir.join("trajectories.csv"), |w| {
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        for o in outcomes {
            for m in &o.methods {
                write_trajectory_rows(w, o.replicate, &m.trajectory)?;
            }
        }
        Ok(())
    })?;
    with_writer(&dir.join("detections.csv"), |w| {
        writeln!(w, "{DETECTION_HEADER}")?;
        for o in outcomes {
            for m in &o.methods {
                write_detection_rows(w, o.replicate, m.method.name(), &m.records)?;
            }
        }
        Ok(())
    })?;
    write_file(&dir.join("summary.txt"), summary)?;
    with_writer(&dir.join("timings.csv"), |w| {
        writeln!(w, "{TIMINGS_HEADER}")?;
        for o in outcomes {
            for m in &o.methods {
                writeln!(w, "{},{},{},{}", o.replicate, m.method.name(), m.seconds, m.eigen_count)?;
            }
        }
        Ok(())
    })
}

pub fn write_snapshots(dir: &Path, outcomes: &[ReplicateOutcome]) -> Result<()> {
    let dir = dir.join("snapshots");
    for o in outcomes {
        for m in &o.methods {
            let text = match (&m.robust, &m.naive) {
                (Some(s), _) => s.to_snapshot()?,
                (None, Some(s)) => s.to_snapshot()?,
                (None, None) => continue,
            };
            write_file(&dir.join(format!("{}_{}.json", m.method.name(), o.replicate)), &text)?;
        }
    }
    Ok(())
}

/// `resume` output: verdicts, one final trajectory row, the new snapshot.
pub fn write_resume(
    dir: &Path,
    method: Method,
    records: &[DetectionRecord],
    trajectory: &Trajectory,
    snapshot: &str,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    with_writer(&dir.join("detections.csv"), |w| {
        writeln!(w, "{DETECTION_HEADER}")?;
        write_detection_rows(w, 0, method.name(), records)
    })?;
    with_writer(&dir.join("trajectories.csv"), |w| {
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        write_trajectory_rows(w, 0, trajectory)
    })?;
    write_file(&dir.join("snapshot.json"), snapshot)
}
