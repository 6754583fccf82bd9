//! Run configuration layering: built-in defaults, then an optional TOML
//! file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use streamcov::experiment::{Method, RunConfig, StepConfig};
use streamcov::simgen::Scenario;

/// Keys accepted in the TOML file besides the [`RunConfig`] fields.
#[derive(Debug, Default, Clone)]
pub struct Extras {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Flags mirroring the [`RunConfig`] fields.
#[derive(Debug, Default, Clone, Args)]
pub struct RunArgs {
    /// TOML file with run settings; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario A, B, C or D, or `none` for explicit parameters only.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Mean-shift magnitude (overrides the scenario).
    #[arg(long)]
    pub k: Option<f64>,
    /// Variance scale (overrides the scenario).
    #[arg(long)]
    pub l: Option<f64>,
    /// Outlier correlation (overrides the scenario).
    #[arg(long)]
    pub rho1: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Contamination rate.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated subset of online, streaming, naive, oracle.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Streaming block size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Initialisation window size.
    #[arg(long)]
    pub n_init: Option<usize>,
    /// Robbins–Monro draws per observation.
    #[arg(long)]
    pub n_mc: Option<u64>,
    /// Outlier test level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Exponent of the logarithmic averaging weights.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Median step constants as `c_gamma,gamma[,n0]`.
    #[arg(long)]
    pub median_step: Option<String>,
    /// MCM step constants as `c_gamma,gamma[,n0]`.
    #[arg(long)]
    pub mcm_step: Option<String>,
    /// Robbins–Monro step constants as `c_gamma,gamma[,n0]`.
    #[arg(long)]
    pub rm_step: Option<String>,
    /// Distance-median step constants as `c_gamma,gamma[,n0]`.
    #[arg(long)]
    pub distance_step: Option<String>,
    /// Observations between trajectory checkpoints.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Skip per-observation verdicts (detections.csv stays header-only).
    #[arg(long)]
    pub no_detections: bool,
    /// Worker threads for replicates (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

fn parse_step(field: &str, text: &str) -> Result<StepConfig> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if !(2..=3).contains(&parts.len()) {
        bail!("{field}: expected c_gamma,gamma[,n0], got {text:?}");
    }
    let num = |s: &str| s.parse::<f64>().with_context(|| format!("{field}: bad number {s:?}"));
    Ok(StepConfig {
        c_gamma: num(parts[0])?,
        gamma: num(parts[1])?,
        n0: match parts.get(2) {
            Some(s) => s.parse().with_context(|| format!("{field}: bad n0 {s:?}"))?,
            None => 0,
        },
    })
}

fn parse_scenario(text: &str) -> Result<Option<Scenario>> {
    if text.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        Ok(Some(text.parse().context("scenario")?))
    }
}

/// Reads a TOML run file into a configuration plus the CLI-only keys.
pub fn read_file(path: &Path) -> Result<(RunConfig, Extras)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing {}", path.display()))?;
    let mut extras = Extras::default();
    if let Some(v) = table.remove("out") {
        let s = v.as_str().context("out: expected a string")?;
        extras.out = Some(PathBuf::from(s));
    }
    if let Some(v) = table.remove("threads") {
        let t = v.as_integer().context("threads: expected an integer")?;
        extras.threads = Some(usize::try_from(t).context("threads: must be non-negative")?);
    }
    let mut no_scenario = false;
    if let Some(toml::Value::String(s)) = table.get("scenario") {
        if s.eq_ignore_ascii_case("none") {
            no_scenario = true;
            table.remove("scenario");
        }
    }
    let mut config: RunConfig = toml::Value::Table(table)
        .try_into()
        .with_context(|| format!("invalid settings in {}", path.display()))?;
    if no_scenario {
        config.scenario = None;
    }
    Ok((config, extras))
}

impl RunArgs {
    /// Defaults, overridden by the file, overridden by flags.
    pub fn resolve(&self) -> Result<(RunConfig, Extras)> {
        let (mut c, mut extras) = match &self.config {
            Some(p) => read_file(p)?,
            None => (RunConfig::default(), Extras::default()),
        };
        if let Some(s) = &self.scenario {
            c.scenario = parse_scenario(s)?;
        }
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        set!(d, n, r, seed, replicates, batch, n_mc, alpha, omega, checkpoint_every);
        if self.k.is_some() {
            c.k = self.k;
        }
        if self.l.is_some() {
            c.l = self.l;
        }
        if self.rho1.is_some() {
            c.rho1 = self.rho1;
        }
        if self.n_init.is_some() {
            c.n_init = self.n_init;
        }
        if let Some(ms) = &self.methods {
            c.methods = ms
                .iter()
                .map(|m| m.parse::<Method>())
                .collect::<std::result::Result<_, _>>()
                .context("methods")?;
        }
        for (field, flag, slot) in [
            ("median_step", &self.median_step, &mut c.median_step),
            ("mcm_step", &self.mcm_step, &mut c.mcm_step),
            ("rm_step", &self.rm_step, &mut c.rm_step),
            ("distance_step", &self.distance_step, &mut c.distance_step),
        ] {
            if let Some(text) = flag {
                *slot = parse_step(field, text)?;
            }
        }
        if self.no_detections {
            c.keep_detections = false;
        }
        if self.threads.is_some() {
            extras.threads = self.threads;
        }
        Ok((c, extras))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn flags_override_file_overrides_defaults() {
        let f = write("n = 500\nd = 4\nseed = 9\nout = \"results\"\n");
        let args = RunArgs {
            config: Some(f.path().to_path_buf()),
            n: Some(700),
            ..RunArgs::default()
        };
        let (c, extras) = args.resolve().unwrap();
        assert_eq!(c.n, 700);
        assert_eq!(c.d, 4);
        assert_eq!(c.seed, 9);
        assert_eq!(c.r, RunConfig::default().r);
        assert_eq!(extras.out, Some(PathBuf::from("results")));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let f = write("n = 500\nbogus = 1\n");
        let err = read_file(f.path()).unwrap_err();
        assert!(format!("{err:#}").contains("bogus"), "{err:#}");
    }

    #[test]
    fn nested_step_tables() {
        let f = write("[rm_step]\nc_gamma = 2.0\ngamma = 0.7\n");
        let (c, _) = read_file(f.path()).unwrap();
        assert_eq!(c.rm_step.c_gamma, 2.0);
        assert_eq!(c.rm_step.n0, 0);
    }

    #[test]
    fn scenario_none() {
        let f = write("scenario = \"none\"\nk = 1.5\n");
        let (c, _) = read_file(f.path()).unwrap();
        assert_eq!(c.scenario, None);
        assert_eq!(c.scenario_params().unwrap().k, 1.5);
    }

    #[test]
    fn step_flag_parsing() {
        let s = parse_step("mcm_step", "1, 0.66, 5").unwrap();
        assert_eq!((s.c_gamma, s.gamma, s.n0), (1.0, 0.66, 5));
        assert!(parse_step("mcm_step", "1").is_err());
    }
}
