//! The four subcommands. Shared conventions: one CSV row per sweep point,
//! rows written in sweep order, floats printed with Rust's shortest
//! round-trip formatting, so a given config and seed produce byte-identical
//! files across runs.

use std::io::Write;
use std::path::PathBuf;

use overgen::codec::{simulate_latencies, DecodeMode, LayoutSource};
use overgen::collector::{asymptotic_expected, SampleStats};
use overgen::gf::FieldSpec;
use overgen::latency::{
    annex_expected_latency, decode_latency_moments, erasure_scale, expected_decode_latency,
    failure_prob_lower, packets_for_failure_target, LatencyEstimate,
};
use overgen::layout::{build_disjoint, build_head_to_toe, omega, AnnexParams, GenerationLayout};
use overgen::quad::QuadConfig;

use crate::args::{Cli, CliError, Command, Scheme, Settings};

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(a) => cmd_analyze(Settings::resolve(a)?),
        Command::Simulate(a) => cmd_simulate(Settings::resolve(a)?),
        Command::SweepAnnex(a) => cmd_sweep_annex(Settings::resolve(a)?),
        Command::Compare(a) => cmd_compare(Settings::resolve(a)?),
    }
}

fn open_csv(out: &Option<PathBuf>) -> Result<csv::Writer<Box<dyn Write>>, CliError> {
    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(std::fs::File::create(path).map_err(|e| {
            CliError::Other(format!("cannot create {}: {e}", path.display()))
        })?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

/// Sibling path "<stem><suffix>.csv" next to the main output file.
fn companion(out: &PathBuf, suffix: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}{suffix}.csv"))
}

fn f(x: f64) -> String {
    x.to_string()
}

/// Nearest-rank quantile on sorted latencies.
fn quantile(sorted: &[u64], p: f64) -> u64 {
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

fn sim_stats(
    source: LayoutSource<'_>,
    field: &FieldSpec,
    eps: f64,
    trials: u64,
    seed: u64,
) -> Result<(SampleStats, Vec<u64>), CliError> {
    let mut samples = simulate_latencies(source, field, eps, DecodeMode::RankOnly, trials, seed)?;
    let stats = SampleStats::from_samples(&samples);
    samples.sort_unstable();
    Ok((stats, samples))
}

fn cmd_analyze(s: Settings) -> Result<(), CliError> {
    let grid = match (&s.gen_range, s.gen_size) {
        (Some(r), _) => r.clone(),
        (None, Some(g)) => vec![g],
        (None, None) => {
            return Err(CliError::Config(
                "analyze needs --gen-size or --gen-range".into(),
            ))
        }
    };
    FieldSpec::for_q(s.field)?;
    let cfg = QuadConfig::default();
    let keep = 1.0 - s.eps;
    let mut w = open_csv(&s.out)?;
    w.write_record([
        "n_packets",
        "field",
        "eps",
        "gen_size",
        "n_gens",
        "lower",
        "mean",
        "upper",
        "std_dev",
        "asym_log",
        "asym_saturated",
        "budget_1e3",
    ])?;
    for &g in &grid {
        let layout = build_disjoint(s.n_packets, g)?;
        let sizes: Vec<u32> = layout.sizes().iter().map(|&z| z as u32).collect();
        let mom = decode_latency_moments(layout.rho(), &sizes, s.field, &cfg)?;
        let bounds = expected_decode_latency(layout.rho(), &sizes, s.field, &cfg)?;
        let est = erasure_scale(
            &LatencyEstimate {
                mean: mom.mean,
                variance: Some(mom.variance),
                lower_bound: bounds.lower_bound,
                upper_bound: bounds.upper_bound,
                channel_eps: 0.0,
            },
            s.eps,
        )?;
        let n_gens = layout.n();
        // Asymptotics assume at least three uniform generations; the last
        // block of a ragged layout is approximated by the full size g. The
        // log-regime column goes negative once the quota dwarfs ln n, so a
        // nonpositive value prints as blank rather than as a bogus estimate.
        let (asym_log, asym_sat) = if n_gens >= 3 {
            let log_regime = asymptotic_expected(n_gens as u64, g as u32, false)?;
            (
                if log_regime > 0.0 {
                    f(log_regime / keep)
                } else {
                    String::new()
                },
                f(asymptotic_expected(n_gens as u64, g as u32, true)? / keep),
            )
        } else {
            (String::new(), String::new())
        };
        let budget = packets_for_failure_target(n_gens, g as u32, 1e-3, &cfg)? / keep;
        w.write_record([
            s.n_packets.to_string(),
            s.field.to_string(),
            f(s.eps),
            g.to_string(),
            n_gens.to_string(),
            f(est.lower_bound),
            f(est.mean),
            est.upper_bound.map(f).unwrap_or_default(),
            est.variance.map(|v| f(v.sqrt())).unwrap_or_default(),
            asym_log,
            asym_sat,
            f(budget),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Layout ownership for one simulation run.
enum Built {
    Fixed(GenerationLayout),
    Fresh(AnnexParams),
}

impl Built {
    fn source(&self, n_packets: usize) -> LayoutSource<'_> {
        match self {
            Built::Fixed(layout) => LayoutSource::Fixed(layout),
            Built::Fresh(params) => LayoutSource::FreshAnnex {
                params: *params,
                n_packets,
            },
        }
    }
}

fn cmd_simulate(s: Settings) -> Result<(), CliError> {
    if s.failure_curve && s.out.is_none() {
        return Err(CliError::Config(
            "--failure-curve needs --out for its companion file".into(),
        ));
    }
    let field = FieldSpec::for_q(s.field)?;
    let trials = s.trials_or(if s.failure_curve { 100_000 } else { 1000 })?;
    let need = |flag: &str| {
        CliError::Config(format!("simulate --scheme {} needs {flag}", s.scheme.as_str()))
    };
    let (built, base_col, annex_col, gen_col) = match s.scheme {
        Scheme::Disjoint => {
            let g = s.gen_size.ok_or_else(|| need("--gen-size"))?;
            (
                Built::Fixed(build_disjoint(s.n_packets, g)?),
                String::new(),
                String::new(),
                g,
            )
        }
        Scheme::Annex => {
            let h = s.base_size.ok_or_else(|| need("--base-size"))?;
            let l = s.annex.unwrap_or(0);
            let params = AnnexParams::new(h, l)?;
            // An empty annex is the one fixed layout; otherwise each trial
            // draws a fresh annex (ensemble averaging).
            let built = if l == 0 {
                Built::Fixed(build_disjoint(s.n_packets, h)?)
            } else {
                Built::Fresh(params)
            };
            (built, h.to_string(), l.to_string(), h + l)
        }
        Scheme::HeadToToe => {
            let h = s.base_size.ok_or_else(|| need("--base-size"))?;
            let l = s.annex.unwrap_or(0);
            (
                Built::Fixed(build_head_to_toe(s.n_packets, h, l)?),
                h.to_string(),
                l.to_string(),
                h + l,
            )
        }
    };
    let (stats, sorted) = sim_stats(built.source(s.n_packets), &field, s.eps, trials, s.seed)?;
    let mut w = open_csv(&s.out)?;
    w.write_record([
        "scheme",
        "n_packets",
        "base_size",
        "gen_size",
        "annex",
        "field",
        "eps",
        "trials",
        "seed",
        "mean",
        "std_dev",
        "min",
        "p50",
        "p90",
        "p99",
        "max",
    ])?;
    w.write_record([
        s.scheme.as_str().to_string(),
        s.n_packets.to_string(),
        base_col,
        gen_col.to_string(),
        annex_col,
        s.field.to_string(),
        f(s.eps),
        trials.to_string(),
        s.seed.to_string(),
        f(stats.mean),
        f(stats.variance.sqrt()),
        sorted[0].to_string(),
        quantile(&sorted, 0.50).to_string(),
        quantile(&sorted, 0.90).to_string(),
        quantile(&sorted, 0.99).to_string(),
        sorted[sorted.len() - 1].to_string(),
    ])?;
    w.flush()?;
    if s.failure_curve {
        let out = s.out.as_ref().expect("checked on entry");
        let path = companion(out, "_failure");
        let mut w = open_csv(&Some(path))?;
        w.write_record(["t", "empirical", "floor"])?;
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        let mut last = None;
        for i in 0..20u64 {
            let t = lo + ((hi - lo) as f64 * i as f64 / 19.0).round() as u64;
            if last == Some(t) {
                continue;
            }
            last = Some(t);
            let emp = sorted.iter().filter(|&&x| x > t).count() as f64 / sorted.len() as f64;
            // The limit-law floor applies to the disjoint collection model.
            let floor = match (&built, s.scheme) {
                (Built::Fixed(layout), Scheme::Disjoint) if layout.n() >= 3 => {
                    f(failure_prob_lower(layout.n() as u64, gen_col as u32, t as f64)?)
                }
                _ => String::new(),
            };
            w.write_record([t.to_string(), f(emp), floor])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_sweep_annex(s: Settings) -> Result<(), CliError> {
    let ls = s
        .annex_range
        .clone()
        .ok_or_else(|| CliError::Config("sweep-annex needs --annex-range".into()))?;
    let (fixed_total, anchor) = match (s.base_size, s.gen_size) {
        (Some(h), None) => (false, h),
        (None, Some(g)) => (true, g),
        _ => {
            return Err(CliError::Config(
                "sweep-annex needs exactly one of --base-size (fixed base) \
                 or --gen-size (fixed total)"
                    .into(),
            ))
        }
    };
    let field = FieldSpec::for_q(s.field)?;
    let trials = s.trials_or(1000)?;
    let cfg = QuadConfig::default();
    let keep = 1.0 - s.eps;
    let mode = if fixed_total { "fixed-total" } else { "fixed-base" };
    // Disjoint baseline at the anchor size. It shares the first sweep
    // index's seed, so an l = 0 row is bit-identical across all schemes.
    let disjoint = build_disjoint(s.n_packets, anchor)?;
    let (d_stats, _) = sim_stats(LayoutSource::Fixed(&disjoint), &field, s.eps, trials, s.seed)?;
    let mut w = open_csv(&s.out)?;
    w.write_record([
        "mode",
        "n_packets",
        "base_size",
        "gen_size",
        "annex",
        "field",
        "eps",
        "trials",
        "seed",
        "estimate",
        "annex_mean",
        "annex_std",
        "head_to_toe_mean",
        "head_to_toe_std",
        "disjoint_mean",
        "disjoint_std",
    ])?;
    let mut overlap_rows: Vec<(usize, usize, f64, f64)> = Vec::new();
    for (idx, &l) in ls.iter().enumerate() {
        let h = if fixed_total {
            anchor.checked_sub(l).filter(|&h| h >= 1).ok_or_else(|| {
                CliError::Config(format!(
                    "annex {l} leaves no base packets at total size {anchor}"
                ))
            })?
        } else {
            anchor
        };
        let params = AnnexParams::new(h, l)?;
        let (raw_est, _) = annex_expected_latency(s.n_packets, params, s.field, &cfg)?;
        let seed = s.seed + idx as u64;
        let built = if l == 0 {
            Built::Fixed(build_disjoint(s.n_packets, h)?)
        } else {
            Built::Fresh(params)
        };
        let (a_stats, _) = sim_stats(built.source(s.n_packets), &field, s.eps, trials, seed)?;
        let (ht_mean, ht_std) = if s.n_packets % h == 0 && l <= h {
            let layout = build_head_to_toe(s.n_packets, h, l)?;
            let (st, _) = sim_stats(LayoutSource::Fixed(&layout), &field, s.eps, trials, seed)?;
            (f(st.mean), f(st.variance.sqrt()))
        } else {
            (String::new(), String::new())
        };
        w.write_record([
            mode.to_string(),
            s.n_packets.to_string(),
            h.to_string(),
            (h + l).to_string(),
            l.to_string(),
            s.field.to_string(),
            f(s.eps),
            trials.to_string(),
            seed.to_string(),
            f(raw_est / keep),
            f(a_stats.mean),
            f(a_stats.variance.sqrt()),
            ht_mean,
            ht_std,
            f(d_stats.mean),
            f(d_stats.variance.sqrt()),
        ])?;
        let n_gens = s.n_packets.div_ceil(h);
        for step in 1..n_gens {
            let om = omega(step, s.n_packets, h, l)?;
            overlap_rows.push((l, step, om, (h + l) as f64 - om));
        }
    }
    w.flush()?;
    // Companion file: expected overlap growth and the residual demand
    // h + l - omega(s) per decoded-generation count s.
    match &s.out {
        Some(out) => {
            let mut w = open_csv(&Some(companion(out, "_overlap")))?;
            w.write_record(["annex", "s", "omega", "remaining"])?;
            for (l, step, om, rem) in overlap_rows {
                w.write_record([l.to_string(), step.to_string(), f(om), f(rem)])?;
            }
            w.flush()?;
        }
        None => eprintln!("note: overlap curves are written only with --out"),
    }
    Ok(())
}

fn cmd_compare(s: Settings) -> Result<(), CliError> {
    let grid = s
        .gen_range
        .clone()
        .ok_or_else(|| CliError::Config("compare needs --gen-range".into()))?;
    FieldSpec::for_q(s.field)?;
    let cfg = QuadConfig::default();
    let keep = 1.0 - s.eps;
    let mut w = open_csv(&s.out)?;
    w.write_record([
        "n_packets",
        "field",
        "eps",
        "gen_size",
        "annex_best",
        "annex_latency",
        "disjoint_latency",
    ])?;
    let mut table: Vec<(usize, usize, f64, f64)> = Vec::new();
    for &g in &grid {
        // The estimate climbs steadily past its minimum, so four straight
        // rises end the scan; the base stays at 3 packets or more to bound
        // the threshold recursion, whose cost grows with the square of the
        // generation count.
        let mut best = f64::INFINITY;
        let mut best_l = 0usize;
        let mut prev = f64::INFINITY;
        let mut rising = 0u32;
        for l in 0..=g.saturating_sub(3) {
            let params = AnnexParams::new(g - l, l)?;
            let (est, _) = annex_expected_latency(s.n_packets, params, s.field, &cfg)?;
            if est < best {
                best = est;
                best_l = l;
            }
            if est > prev {
                rising += 1;
                if rising >= 4 {
                    break;
                }
            } else {
                rising = 0;
            }
            prev = est;
        }
        let layout = build_disjoint(s.n_packets, g)?;
        let sizes: Vec<u32> = layout.sizes().iter().map(|&z| z as u32).collect();
        let disjoint = expected_decode_latency(layout.rho(), &sizes, s.field, &cfg)?.mean / keep;
        let annex = best / keep;
        w.write_record([
            s.n_packets.to_string(),
            s.field.to_string(),
            f(s.eps),
            g.to_string(),
            best_l.to_string(),
            f(annex),
            f(disjoint),
        ])?;
        table.push((g, best_l, annex, disjoint));
    }
    w.flush()?;
    if let Some(&(g, l, latency, _)) = table
        .iter()
        .min_by(|a, b| a.2.total_cmp(&b.2))
    {
        eprintln!("best annex point: gen_size {g} with annex {l}, expected latency {latency:.1}");
    }
    let annex20 = table.iter().find(|r| r.0 == 20);
    let disjoint50 = table.iter().find(|r| r.0 == 50);
    if let (Some(a), Some(d)) = (annex20, disjoint50) {
        eprintln!(
            "headline: annex at gen_size 20 reaches {:.1} vs disjoint at gen_size 50 at {:.1}",
            a.2, d.3
        );
    }
    Ok(())
}
