//! Numerical workhorses: half-line quadrature, series summation, and stable
//! regularized incomplete-gamma evaluation.
//!
//! Every analytic latency quantity reduces to integrals of smooth,
//! exponentially decaying functions on [0, inf). The fast path is a
//! Gauss-Laguerre ladder that doubles the node count until two successive
//! estimates agree; integrands whose mass sits far from the origin defeat
//! fixed rules, so a bisection-adaptive Simpson scheme over a probed cutoff
//! interval serves as the fallback.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::{Error, Result};

/// Tolerance policy for quadrature and series truncation.
#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    /// Relative tolerance on the final estimate.
    pub rel_tol: f64,
    /// Absolute floor, active when the integral itself is near zero.
    pub abs_tol: f64,
    /// Cap on refinement rounds before giving up.
    pub max_refinements: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_refinements: 12,
        }
    }
}

impl QuadConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol >= 0.0) || self.max_refinements < 1 {
            return Err(Error::InvalidParameter(format!(
                "bad tolerance config: rel {} abs {} refinements {}",
                self.rel_tol, self.abs_tol, self.max_refinements
            )));
        }
        Ok(())
    }
}

/// Gauss-Laguerre node counts tried in order. 128 is the ceiling: beyond it
/// the raw weights start flirting with f64 underflow.
const LAGUERRE_LADDER: [usize; 4] = [16, 32, 64, 128];

struct LaguerreRule {
    nodes: Vec<f64>,
    /// Weights with the e^{-x} factor divided back out, so the rule applies
    /// to a bare integrand.
    weights: Vec<f64>,
}

/// Golub-Welsch: eigenvalues of the Jacobi matrix are the nodes, squared
/// first eigenvector components the weights.
fn laguerre_rule(n: usize) -> LaguerreRule {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jacobi[(i, i)] = (2 * i + 1) as f64;
        if i + 1 < n {
            let off = (i + 1) as f64;
            jacobi[(i, i + 1)] = off;
            jacobi[(i + 1, i)] = off;
        }
    }
    let eigen = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = eigen
        .eigenvalues
        .iter()
        .zip(eigen.eigenvectors.row(0).iter())
        .map(|(&x, &v0)| (x, v0 * v0))
        .collect();
    pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    LaguerreRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        // ln w + x stays in range even where w alone is ~1e-220.
        weights: pairs.iter().map(|p| (p.1.ln() + p.0).exp()).collect(),
    }
}

fn cached_rules() -> &'static [LaguerreRule; 4] {
    static RULES: OnceLock<[LaguerreRule; 4]> = OnceLock::new();
    RULES.get_or_init(|| LAGUERRE_LADDER.map(laguerre_rule))
}

/// Integrates f over [0, inf) to the configured tolerance.
///
/// f must be continuous and eventually decay at least exponentially. Returns
/// a convergence error carrying the two last estimates when neither the
/// ladder nor the adaptive fallback settles.
pub fn integrate_halfline<F: Fn(f64) -> f64>(f: F, cfg: &QuadConfig) -> Result<f64> {
    cfg.validate()?;
    let mut prev: Option<f64> = None;
    for rule in cached_rules() {
        let est: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| w * f(x))
            .sum();
        if let Some(p) = prev {
            if (est - p).abs() <= cfg.abs_tol.max(cfg.rel_tol * est.abs()) {
                return Ok(est);
            }
        }
        prev = Some(est);
    }
    adaptive_halfline(&f, cfg)
}

/// Fallback path: probe an upper cutoff past the integrand's support, then
/// run adaptive Simpson on [0, cutoff], iterating until the tolerance scale
/// (which depends on the unknown answer) stabilizes.
fn adaptive_halfline<F: Fn(f64) -> f64>(f: &F, cfg: &QuadConfig) -> Result<f64> {
    // The probe threshold is deliberately far below abs_tol: with exponential
    // decay, f < 1e-2*abs_tol at X makes the tail beyond 2X negligible.
    let threshold = (cfg.abs_tol * 1e-2).max(1e-300);
    let mut x_cut = 1.0f64;
    let mut found = false;
    for _ in 0..64 {
        if [1.0, 1.25, 1.5, 2.0]
            .iter()
            .all(|&s| f(s * x_cut).abs() < threshold)
        {
            found = true;
            break;
        }
        x_cut *= 2.0;
    }
    if !found {
        return Err(Error::NoConvergence {
            refinements: 64,
            last: f64::NAN,
            prev: f64::NAN,
        });
    }
    let b = 2.0 * x_cut;

    // Coarse composite pass to fix the tolerance scale.
    let mut estimate = composite_simpson(f, 0.0, b, 512);
    for round in 0..cfg.max_refinements {
        let tol = cfg.abs_tol.max(cfg.rel_tol * estimate.abs()) * 0.5;
        let mut budget = PanelBudget {
            evals_left: 40_000_000,
            exhausted: false,
        };
        let refined = adaptive_panels(f, 0.0, b, tol, &mut budget);
        let close = (refined - estimate).abs() <= 4.0 * cfg.abs_tol.max(cfg.rel_tol * refined.abs());
        if close && !budget.exhausted {
            return Ok(refined);
        }
        if budget.exhausted && round + 1 == cfg.max_refinements {
            return Err(Error::NoConvergence {
                refinements: round + 1,
                last: refined,
                prev: estimate,
            });
        }
        estimate = refined;
    }
    Err(Error::NoConvergence {
        refinements: cfg.max_refinements,
        last: estimate,
        prev: estimate,
    })
}

struct PanelBudget {
    evals_left: u64,
    exhausted: bool,
}

/// Splits [a, b] into fixed panels so narrow features cannot hide from the
/// error estimator, then refines each panel adaptively.
fn adaptive_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, budget: &mut PanelBudget) -> f64 {
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    let mut total = 0.0;
    for i in 0..PANELS {
        let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
        let (flo, fmid, fhi) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        total += simpson_step(
            f,
            lo,
            hi,
            flo,
            fmid,
            fhi,
            whole,
            tol / PANELS as f64,
            48,
            budget,
        );
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    budget: &mut PanelBudget,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    if budget.evals_left < 2 {
        budget.exhausted = true;
        return whole;
    }
    budget.evals_left -= 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if diff.abs() <= 15.0 * tol || depth == 0 {
        if depth == 0 && diff.abs() > 15.0 * tol {
            budget.exhausted = true;
        }
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, budget)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, budget)
}

fn composite_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2) & !1;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Sums term(0) + term(1) + ... until three consecutive terms fall below the
/// tolerance relative to the running partial sum.
pub fn sum_series<F: Fn(usize) -> f64>(term: F, cfg: &QuadConfig) -> Result<f64> {
    cfg.validate()?;
    const CONSECUTIVE: usize = 3;
    const CAP: usize = 2_000_000;
    let mut partial = 0.0;
    let mut small_run = 0;
    let mut last = f64::NAN;
    for j in 0..CAP {
        let t = term(j);
        partial += t;
        if t.abs() <= cfg.rel_tol * partial.abs() + cfg.abs_tol {
            small_run += 1;
            if small_run == CONSECUTIVE {
                return Ok(partial);
            }
        } else {
            small_run = 0;
        }
        last = t;
    }
    Err(Error::NoConvergence {
        refinements: CAP,
        last,
        prev: partial,
    })
}

/// Regularized lower incomplete gamma P(a, x); P(0, x) = 1 by convention.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    gamma_pq(a, x).0
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    gamma_pq(a, x).1
}

/// Both regularized incomplete gamma ratios, each computed on the side where
/// it is the small one: series for P below the diagonal, continued fraction
/// for Q above it. Whichever is tiny is exact to full relative precision.
pub fn gamma_pq(a: f64, x: f64) -> (f64, f64) {
    debug_assert!(a >= 0.0 && x >= 0.0);
    if a == 0.0 {
        return (1.0, 0.0);
    }
    if x == 0.0 {
        return (0.0, 1.0);
    }
    if x < a + 1.0 {
        let p = (lower_series_scale(a, x) + lower_series_sum(a, x).ln()).exp();
        (p, 1.0 - p)
    } else {
        let q = (upper_cf_scale(a, x) + upper_cf(a, x).ln()).exp();
        (1.0 - q, q)
    }
}

/// ln P(a, x), accurate even where P underflows.
pub fn ln_gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a >= 0.0 && x >= 0.0);
    if a == 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x < a + 1.0 {
        lower_series_scale(a, x) + lower_series_sum(a, x).ln()
    } else {
        let q = (upper_cf_scale(a, x) + upper_cf(a, x).ln()).exp();
        (-q).ln_1p()
    }
}

/// ln Q(a, x), accurate even where Q underflows.
pub fn ln_gamma_q(a: f64, x: f64) -> f64 {
    debug_assert!(a >= 0.0 && x >= 0.0);
    if a == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        let p = (lower_series_scale(a, x) + lower_series_sum(a, x).ln()).exp();
        (-p).ln_1p()
    } else {
        upper_cf_scale(a, x) + upper_cf(a, x).ln()
    }
}

fn lower_series_scale(a: f64, x: f64) -> f64 {
    a * x.ln() - x - ln_gamma(a + 1.0)
}

/// Kummer series for the lower ratio: sum_{k>=0} x^k / ((a+1)...(a+k)).
fn lower_series_sum(a: f64, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut denom = a;
    for _ in 0..10_000 {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn upper_cf_scale(a: f64, x: f64) -> f64 {
    a * x.ln() - x - ln_gamma(a)
}

/// Modified Lentz evaluation of the standard continued fraction for Q.
fn upper_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// ln of the Poisson probability mass sum_{j=lo}^{hi-1} e^{-x} x^j / j!,
/// summed outward from the largest term so nothing underflows en route.
pub fn ln_poisson_window(x: f64, lo: u64, hi: u64) -> f64 {
    debug_assert!(lo < hi);
    if x == 0.0 {
        return if lo == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let peak = (x.floor() as u64).clamp(lo, hi - 1);
    let ln_peak = peak as f64 * x.ln() - x - ln_gamma(peak as f64 + 1.0);
    // Relative sums keep every term as a ratio to the peak term.
    let mut acc = 1.0f64;
    let mut r = 1.0f64;
    let mut j = peak;
    while j > lo {
        r *= j as f64 / x;
        acc += r;
        if r < acc * 1e-18 {
            break;
        }
        j -= 1;
    }
    r = 1.0;
    j = peak;
    while j + 1 < hi {
        r *= x / (j + 1) as f64;
        acc += r;
        if r < acc * 1e-18 {
            break;
        }
        j += 1;
    }
    ln_peak + acc.ln()
}
