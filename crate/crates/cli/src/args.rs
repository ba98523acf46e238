//! Argument parsing and config-file merging. Every knob is an `Option` at
//! the flag level so a TOML config file can fill the gaps; explicit flags
//! always win. Defaults are applied once, in [`Settings::resolve`].

use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Deserialize;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config file, or parameters a module rejects. Exit 2.
    Config(String),
    /// Quadrature or series failed to converge. Exit 3.
    Numeric(String),
    /// I/O and everything else. Exit 1.
    Other(String),
}

impl From<overgen::Error> for CliError {
    fn from(e: overgen::Error) -> Self {
        match e {
            overgen::Error::NoConvergence { .. } => CliError::Numeric(e.to_string()),
            overgen::Error::InvalidParameter(_) | overgen::Error::Infeasible(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "overgen", version, about = "Generation-coding experiment runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Subcommand)]
pub enum Command {
    /// Analytic latency curves over a generation-size grid.
    Analyze(CommonArgs),
    /// Monte-Carlo latency trials for one layout.
    Simulate(CommonArgs),
    /// Annex-size sweep: analytic estimate plus simulated schemes.
    SweepAnnex(CommonArgs),
    /// Best annex size per generation size, against the disjoint baseline.
    Compare(CommonArgs),
}

#[derive(clap::Args, Clone, Default)]
pub struct CommonArgs {
    /// Total packet count N.
    #[arg(long)]
    pub n_packets: Option<usize>,
    /// Generation size: the disjoint block, or the fixed total h+l.
    #[arg(long)]
    pub gen_size: Option<usize>,
    /// Generation-size grid lo:hi:step.
    #[arg(long)]
    pub gen_range: Option<String>,
    /// Base block size h for overlapping layouts.
    #[arg(long)]
    pub base_size: Option<usize>,
    /// Annex size l.
    #[arg(long)]
    pub annex: Option<usize>,
    /// Annex-size grid lo:hi:step.
    #[arg(long)]
    pub annex_range: Option<String>,
    /// Field order q.
    #[arg(long)]
    pub field: Option<u32>,
    /// Erasure probability.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Monte-Carlo trials per point.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Master seed; trial t uses stream t, so runs reproduce bit-exact.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Layout scheme: disjoint | annex | head-to-toe.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Output CSV path; stdout when omitted. A bare file name lands in
    /// $OVERGEN_OUT_DIR when that variable is set.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML config file supplying any of the other flags; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also emit an empirical failure-probability curve (simulate only;
    /// raises the default trial count to 100000).
    #[arg(long)]
    pub failure_curve: bool,
}

/// Config-file mirror of the flags. Unknown keys are rejected so typos
/// fail loudly instead of silently falling back to defaults.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    n_packets: Option<usize>,
    gen_size: Option<usize>,
    gen_range: Option<String>,
    base_size: Option<usize>,
    annex: Option<usize>,
    annex_range: Option<String>,
    field: Option<u32>,
    eps: Option<f64>,
    trials: Option<u64>,
    seed: Option<u64>,
    scheme: Option<String>,
    out: Option<PathBuf>,
    failure_curve: Option<bool>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Scheme {
    Disjoint,
    Annex,
    HeadToToe,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Disjoint => "disjoint",
            Scheme::Annex => "annex",
            Scheme::HeadToToe => "head-to-toe",
        }
    }
}

/// Fully resolved parameters: file config merged in, defaults applied,
/// output path routed through OVERGEN_OUT_DIR.
pub struct Settings {
    pub n_packets: usize,
    pub gen_size: Option<usize>,
    pub gen_range: Option<Vec<usize>>,
    pub base_size: Option<usize>,
    pub annex: Option<usize>,
    pub annex_range: Option<Vec<usize>>,
    pub field: u32,
    pub eps: f64,
    pub trials: Option<u64>,
    pub seed: u64,
    pub scheme: Scheme,
    pub out: Option<PathBuf>,
    pub failure_curve: bool,
}

impl Settings {
    pub fn resolve(args: CommonArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let scheme = match args
            .scheme
            .or(file.scheme)
            .as_deref()
            .unwrap_or("disjoint")
        {
            "disjoint" => Scheme::Disjoint,
            "annex" => Scheme::Annex,
            "head-to-toe" | "head_to_toe" => Scheme::HeadToToe,
            other => {
                return Err(CliError::Config(format!(
                    "unknown scheme {other:?}, expected disjoint | annex | head-to-toe"
                )))
            }
        };
        let eps = args.eps.or(file.eps).unwrap_or(0.0);
        if !(0.0..1.0).contains(&eps) {
            return Err(CliError::Config(format!(
                "eps must lie in [0, 1), got {eps}"
            )));
        }
        Ok(Settings {
            n_packets: args.n_packets.or(file.n_packets).unwrap_or(1000),
            gen_size: args.gen_size.or(file.gen_size),
            gen_range: parse_range_opt(args.gen_range.or(file.gen_range), "gen-range")?,
            base_size: args.base_size.or(file.base_size),
            annex: args.annex.or(file.annex),
            annex_range: parse_range_opt(args.annex_range.or(file.annex_range), "annex-range")?,
            field: args.field.or(file.field).unwrap_or(256),
            eps,
            trials: args.trials.or(file.trials),
            seed: args.seed.or(file.seed).unwrap_or(1),
            scheme,
            out: route_out(args.out.or(file.out)),
            failure_curve: args.failure_curve || file.failure_curve.unwrap_or(false),
        })
    }

    /// Trial count with the command's default applied. Trials must be >= 1.
    pub fn trials_or(&self, default: u64) -> Result<u64, CliError> {
        let t = self.trials.unwrap_or(default);
        if t == 0 {
            return Err(CliError::Config("trials must be >= 1".into()));
        }
        Ok(t)
    }
}

/// "lo:hi:step" -> lo, lo+step, ..., capped at hi inclusive.
fn parse_range_opt(raw: Option<String>, flag: &str) -> Result<Option<Vec<usize>>, CliError> {
    let Some(raw) = raw else { return Ok(None) };
    let parts: Vec<&str> = raw.split(':').collect();
    let bad = || CliError::Config(format!("--{flag} wants lo:hi:step, got {raw:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let (lo, hi, step) = (nums[0], nums[1], nums[2]);
    if step == 0 || lo > hi {
        return Err(CliError::Config(format!(
            "--{flag} needs lo <= hi and step >= 1, got {raw:?}"
        )));
    }
    Ok(Some((lo..=hi).step_by(step).collect()))
}

/// Bare file names are redirected into $OVERGEN_OUT_DIR when set; paths
/// with any directory component pass through untouched.
fn route_out(out: Option<PathBuf>) -> Option<PathBuf> {
    let out = out?;
    let bare = out.is_relative() && out.parent() == Some(Path::new(""));
    match std::env::var_os("OVERGEN_OUT_DIR") {
        Some(dir) if bare => Some(PathBuf::from(dir).join(out)),
        _ => Some(out),
    }
}
