//! Coupon-collection analytics for generation scheduling.
//!
//! Two collection models cover everything the latency analysis needs. A
//! [`QuotaVector`] asks for at least m_i copies of coupon i under sampling
//! probabilities rho; its completion time T has closed integral forms for the
//! mean and variance. A [`ThresholdSpec`] asks, under uniform sampling, that
//! at least k_j coupons reach m_j copies for each of A threshold pairs; its
//! completion time U admits a recursive integrand evaluated in O(A n^2) per
//! quadrature node. Monte-Carlo counterparts of both live here too, so every
//! analytic claim can be checked against sampled draws.

use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::quad::{self, QuadConfig};
use crate::{trial_rng, Error, Result};

/// Euler-Mascheroni constant.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Two-sided 99% normal quantile for confidence half-widths.
const Z_99: f64 = 2.575_829_303_548_901;

/// Per-coupon quota collection spec: sampling probabilities and copy quotas.
#[derive(Debug, Clone)]
pub struct QuotaVector {
    rho: Vec<f64>,
    m: Vec<u32>,
}

impl QuotaVector {
    /// Validates probabilities (nonnegative, summing to 1) and quota shape.
    pub fn new(rho: Vec<f64>, m: Vec<u32>) -> Result<Self> {
        if rho.is_empty() || rho.len() != m.len() {
            return Err(Error::InvalidParameter(format!(
                "rho and m must be nonempty and equal length, got {} and {}",
                rho.len(),
                m.len()
            )));
        }
        if rho.iter().any(|&p| !(p >= 0.0) || p > 1.0) {
            return Err(Error::InvalidParameter("probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = rho.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { rho, m })
    }

    /// Uniform sampling over n coupons, the same quota m for each.
    pub fn uniform(n: usize, m: u32) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n], vec![m; n])
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn quotas(&self) -> &[u32] {
        &self.m
    }

    fn check_feasible(&self) -> Result<()> {
        if self.rho.iter().zip(&self.m).any(|(&p, &m)| p == 0.0 && m > 0) {
            return Err(Error::Infeasible(
                "a coupon with quota > 0 has sampling probability 0".into(),
            ));
        }
        Ok(())
    }

    /// Expected draws until every coupon i has at least m_i copies.
    pub fn expected(&self, cfg: &QuadConfig) -> Result<f64> {
        self.check_feasible()?;
        if self.m.iter().all(|&m| m == 0) {
            return Ok(0.0);
        }
        let uniform = self.is_uniform();
        let n = self.len();
        let (rho, m) = (self.rho.clone(), self.m.clone());
        quad::integrate_halfline(
            move |x| {
                if uniform {
                    let q = quad::gamma_q(m[0] as f64, rho[0] * x);
                    -(n as f64 * (-q).ln_1p()).exp_m1()
                } else {
                    let mut ln_prod = 0.0;
                    for (&p, &mi) in rho.iter().zip(&m) {
                        if mi == 0 {
                            continue;
                        }
                        ln_prod += (-quad::gamma_q(mi as f64, p * x)).ln_1p();
                    }
                    -ln_prod.exp_m1()
                }
            },
            cfg,
        )
    }

    /// Mean, variance, and second moment of the completion time.
    pub fn moments(&self, cfg: &QuadConfig) -> Result<MomentResult> {
        self.check_feasible()?;
        let mean = self.expected(cfg)?;
        if self.m.iter().all(|&m| m == 0) {
            return Ok(MomentResult {
                mean: 0.0,
                variance: 0.0,
                second_moment: 0.0,
            });
        }
        let (rho, m) = (self.rho.clone(), self.m.clone());
        // Tail-generating-function derivative at 1. The i-th term pairs the
        // lowered quota m_i - 1 with the product over all other coupons,
        // assembled from prefix/suffix partial products so nothing divides by
        // a vanishing factor near x = 0.
        let phi_deriv = quad::integrate_halfline(
            move |x| {
                let n = rho.len();
                let p: Vec<f64> = rho
                    .iter()
                    .zip(&m)
                    .map(|(&pi, &mi)| reached(mi, pi * x))
                    .collect();
                let mut prefix = vec![1.0; n + 1];
                for i in 0..n {
                    prefix[i + 1] = prefix[i] * p[i];
                }
                let mut suffix = vec![1.0; n + 1];
                for i in (0..n).rev() {
                    suffix[i] = suffix[i + 1] * p[i];
                }
                let mut sum = 0.0;
                for i in 0..n {
                    let lowered = if m[i] <= 1 { 1.0 } else { reached(m[i] - 1, rho[i] * x) };
                    sum += rho[i] * lowered * prefix[i] * suffix[i + 1];
                }
                x * (1.0 - sum)
            },
            cfg,
        )?;
        let second_moment = 2.0 * phi_deriv + mean;
        let mut variance = second_moment - mean * mean;
        if variance < 0.0 && variance > -1e-6 * second_moment.max(1.0) {
            variance = 0.0;
        }
        Ok(MomentResult {
            mean,
            variance,
            second_moment,
        })
    }

    /// Simulated completion times over independent seeded trials.
    pub fn simulate(&self, trials: u64, seed: u64) -> Result<SampleStats> {
        self.check_feasible()?;
        if trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        let uniform = self.is_uniform();
        let n = self.len();
        let cdf: Vec<f64> = self
            .rho
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let samples: Vec<u64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(seed, t);
                let mut counts = vec![0u32; n];
                let mut unmet = self.m.iter().filter(|&&m| m > 0).count();
                let mut draws = 0u64;
                while unmet > 0 {
                    let i = if uniform {
                        rng.gen_range(0..n)
                    } else {
                        let u: f64 = rng.gen();
                        cdf.partition_point(|&c| c < u).min(n - 1)
                    };
                    draws += 1;
                    counts[i] += 1;
                    if counts[i] == self.m[i] {
                        unmet -= 1;
                    }
                }
                draws
            })
            .collect();
        Ok(SampleStats::from_samples(&samples))
    }

    fn is_uniform(&self) -> bool {
        self.rho.windows(2).all(|w| w[0] == w[1]) && self.m.windows(2).all(|w| w[0] == w[1])
    }
}

/// Probability that a Poisson(z) count has reached m, i.e. 1 - S_m(z)e^{-z}.
/// The m <= 0 convention is 1: no requirement is always met.
fn reached(m: u32, z: f64) -> f64 {
    if m == 0 {
        1.0
    } else {
        quad::gamma_p(m as f64, z)
    }
}

/// Threshold collection spec: for each j, at least k_j coupons must reach
/// m_j copies; sampling is uniform over n coupons.
#[derive(Debug, Clone)]
pub struct ThresholdSpec {
    n: usize,
    m: Vec<u32>,
    k: Vec<usize>,
}

impl ThresholdSpec {
    /// Requires m strictly decreasing (all positive) and k strictly
    /// increasing within 1..=n.
    pub fn new(n: usize, m: Vec<u32>, k: Vec<usize>) -> Result<Self> {
        if n == 0 || m.is_empty() || m.len() != k.len() {
            return Err(Error::InvalidParameter(
                "need n >= 1 and matching nonempty threshold vectors".into(),
            ));
        }
        if m.windows(2).any(|w| w[0] <= w[1]) || *m.last().unwrap() == 0 {
            return Err(Error::InvalidParameter(
                "copy thresholds must be strictly decreasing and positive".into(),
            ));
        }
        if k.windows(2).any(|w| w[0] >= w[1]) || k[0] < 1 || *k.last().unwrap() > n {
            return Err(Error::InvalidParameter(
                "coupon counts must be strictly increasing within 1..=n".into(),
            ));
        }
        Ok(Self { n, m, k })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn thresholds(&self) -> (&[u32], &[usize]) {
        (&self.m, &self.k)
    }

    /// Expected draws until every threshold pair is satisfied.
    ///
    /// Evaluates the recursive integrand in log space: with d_j the
    /// probability that a Poisson count falls in [m_{j+1}, m_j), the
    /// recursion over phi_{j,k} walks the threshold levels and the integral
    /// of 1 - phi_{A,n} (scaled by n) is the expectation. Binomials larger
    /// than f64 can hold are no issue since everything stays logarithmic.
    pub fn expected(&self, cfg: &QuadConfig) -> Result<f64> {
        let n = self.n;
        let a = self.m.len();
        let ln_binom = BinomTable::new(n);
        let m = self.m.clone();
        let k = self.k.clone();
        let integral = quad::integrate_halfline(
            move |x| {
                // ln d_j, j = 0..=a: head tail, interior windows, final head.
                let mut ld = vec![0.0f64; a + 1];
                ld[0] = quad::ln_gamma_p(m[0] as f64, x).min(0.0);
                for j in 1..a {
                    ld[j] = quad::ln_poisson_window(x, m[j] as u64, m[j - 1] as u64).min(0.0);
                }
                ld[a] = quad::ln_gamma_q(*m.last().unwrap() as f64, x).min(0.0);

                let mut prev = vec![f64::NEG_INFINITY; n + 1];
                for w in k[0]..=n {
                    prev[w] = w as f64 * ld[0];
                }
                let mut next = vec![f64::NEG_INFINITY; n + 1];
                let mut terms: Vec<f64> = Vec::with_capacity(n + 1);
                for j in 1..=a {
                    let k_lo = k[j - 1];
                    let k_from = if j < a { k[j] } else { n };
                    for slot in next.iter_mut() {
                        *slot = f64::NEG_INFINITY;
                    }
                    for kk in k_from..=n {
                        terms.clear();
                        let mut hi = f64::NEG_INFINITY;
                        for w in k_lo..=kk {
                            let t = ln_binom.at(kk, w) + (kk - w) as f64 * ld[j] + prev[w];
                            if t > hi {
                                hi = t;
                            }
                            terms.push(t);
                        }
                        next[kk] = if hi == f64::NEG_INFINITY {
                            f64::NEG_INFINITY
                        } else {
                            hi + terms.iter().map(|t| (t - hi).exp()).sum::<f64>().ln()
                        };
                    }
                    std::mem::swap(&mut prev, &mut next);
                }
                -(prev[n].min(0.0)).exp_m1()
            },
            cfg,
        )?;
        Ok(n as f64 * integral)
    }

    /// Simulated completion times over independent seeded trials.
    pub fn simulate(&self, trials: u64, seed: u64) -> Result<SampleStats> {
        if trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        let samples: Vec<u64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(seed, t);
                let mut counts = vec![0u32; self.n];
                let mut reached = vec![0usize; self.m.len()];
                let mut unmet = self.m.len();
                let mut draws = 0u64;
                while unmet > 0 {
                    let i = rng.gen_range(0..self.n);
                    draws += 1;
                    counts[i] += 1;
                    for (j, &mj) in self.m.iter().enumerate() {
                        if counts[i] == mj {
                            reached[j] += 1;
                            if reached[j] == self.k[j] {
                                unmet -= 1;
                            }
                            break;
                        }
                    }
                }
                draws
            })
            .collect();
        Ok(SampleStats::from_samples(&samples))
    }
}

/// Log-binomial lookup, indexed as C(k, w) for k, w <= n.
struct BinomTable {
    n: usize,
    ln: Vec<f64>,
}

impl BinomTable {
    fn new(n: usize) -> Self {
        let mut ln = vec![0.0; (n + 1) * (n + 1)];
        for kk in 0..=n {
            for w in 0..=kk {
                ln[kk * (n + 1) + w] =
                    ln_gamma(kk as f64 + 1.0) - ln_gamma(w as f64 + 1.0) - ln_gamma((kk - w) as f64 + 1.0);
            }
        }
        Self { n, ln }
    }

    #[inline]
    fn at(&self, k: usize, w: usize) -> f64 {
        self.ln[k * (self.n + 1) + w]
    }
}

/// Mean, variance, and raw second moment of a completion time.
#[derive(Debug, Clone, Copy)]
pub struct MomentResult {
    pub mean: f64,
    pub variance: f64,
    pub second_moment: f64,
}

/// Summary statistics of simulated draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub mean: f64,
    pub variance: f64,
    /// Half-width of the two-sided 99% confidence interval for the mean.
    pub ci99_half: f64,
    pub trials: u64,
}

impl SampleStats {
    pub fn from_samples(samples: &[u64]) -> Self {
        let trials = samples.len() as u64;
        let mean = samples.iter().map(|&s| s as f64).sum::<f64>() / trials as f64;
        let variance = if trials > 1 {
            samples
                .iter()
                .map(|&s| {
                    let d = s as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / (trials - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            variance,
            ci99_half: Z_99 * (variance / trials as f64).sqrt(),
            trials,
        }
    }
}

/// Truncated exponential series: 1 + x + ... + x^{m-1}/(m-1)!, zero for m <= 0.
pub fn exp_partial_sum(m: i64, x: f64) -> f64 {
    if m <= 0 {
        return 0.0;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..m {
        term *= x / j as f64;
        sum += term;
    }
    sum
}

/// Leading-term growth of the uniform expected completion time for n coupons
/// with quota m each: n ln n + (m-1) n ln ln n + (gamma - ln (m-1)!) n.
///
/// With `saturated` set, returns the n*m estimate for the regime where the
/// quota dwarfs ln n. Either way the o(n) remainder is unreported, so treat
/// results as estimates.
pub fn asymptotic_expected(n: u64, m: u32, saturated: bool) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "asymptotics need n >= 3 for ln ln n, got {n}"
        )));
    }
    if m < 1 {
        return Err(Error::InvalidParameter("quota must be >= 1".into()));
    }
    if saturated {
        return Ok(n as f64 * m as f64);
    }
    let nf = n as f64;
    Ok(nf * nf.ln()
        + (m as f64 - 1.0) * nf * nf.ln().ln()
        + (EULER_GAMMA - ln_gamma(m as f64)) * nf)
}

/// Limit law of the recentred completion time: exp(-e^{-y}/(m-1)!).
pub fn limit_law_cdf(y: f64, m: u32) -> f64 {
    debug_assert!(m >= 1);
    (-((-y - ln_gamma(m as f64)).exp())).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> QuadConfig {
        QuadConfig::default()
    }

    fn harmonic(n: u64) -> f64 {
        (1..=n).map(|i| 1.0 / i as f64).sum()
    }

    #[test]
    fn partial_sum_examples() {
        assert_eq!(exp_partial_sum(1, 7.3), 1.0);
        assert_eq!(exp_partial_sum(0, 5.0), 0.0);
        assert_eq!(exp_partial_sum(-2, 5.0), 0.0);
        assert_relative_eq!(exp_partial_sum(3, 2.0), 5.0);
        // Generous truncation approaches e^x.
        assert_relative_eq!(exp_partial_sum(60, 3.0), 3f64.exp(), max_relative = 1e-14);
    }

    #[test]
    fn single_coupon_needs_one_draw() {
        let spec = QuotaVector::uniform(1, 1).unwrap();
        assert_relative_eq!(spec.expected(&cfg()).unwrap(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn classic_collection_is_harmonic() {
        for n in [2usize, 3, 5] {
            let spec = QuotaVector::uniform(n, 1).unwrap();
            assert_relative_eq!(
                spec.expected(&cfg()).unwrap(),
                n as f64 * harmonic(n as u64),
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn moments_of_deterministic_draw() {
        let spec = QuotaVector::uniform(1, 1).unwrap();
        let m = spec.moments(&cfg()).unwrap();
        assert_relative_eq!(m.mean, 1.0, max_relative = 1e-9);
        assert!(m.variance.abs() < 1e-8);
    }

    #[test]
    fn two_coupon_moments() {
        // T = 1 + Geometric(1/2): mean 1 + 2 = 3, variance (1-p)/p^2 = 2.
        let spec = QuotaVector::uniform(2, 1).unwrap();
        let m = spec.moments(&cfg()).unwrap();
        assert_relative_eq!(m.mean, 3.0, max_relative = 1e-8);
        assert_relative_eq!(m.variance, 2.0, max_relative = 1e-6);
        assert_relative_eq!(m.second_moment, m.variance + m.mean * m.mean, max_relative = 1e-12);
    }

    #[test]
    fn quota_expectation_dominates_total_quota() {
        for (rho, m) in [
            (vec![0.5, 0.5], vec![2, 2]),
            (vec![0.7, 0.3], vec![1, 2]),
            (vec![0.2, 0.3, 0.5], vec![3, 1, 2]),
        ] {
            let total: u32 = m.iter().sum();
            let spec = QuotaVector::new(rho, m).unwrap();
            assert!(spec.expected(&cfg()).unwrap() >= total as f64);
        }
    }

    #[test]
    fn raising_any_quota_raises_expectation() {
        let base = QuotaVector::new(vec![0.6, 0.4], vec![1, 2]).unwrap();
        let base_e = base.expected(&cfg()).unwrap();
        for i in 0..2 {
            let mut m = vec![1, 2];
            m[i] += 1;
            let bumped = QuotaVector::new(vec![0.6, 0.4], m).unwrap();
            assert!(bumped.expected(&cfg()).unwrap() > base_e + 1e-6);
        }
    }

    #[test]
    fn zero_probability_with_quota_is_infeasible() {
        let spec = QuotaVector::new(vec![1.0, 0.0], vec![1, 1]).unwrap();
        assert!(matches!(spec.expected(&cfg()), Err(Error::Infeasible(_))));
        assert!(matches!(spec.simulate(10, 1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn zero_quota_coupons_are_ignored() {
        let spec = QuotaVector::new(vec![0.5, 0.5], vec![1, 0]).unwrap();
        // Only one coupon matters; each draw hits it with probability 1/2.
        assert_relative_eq!(spec.expected(&cfg()).unwrap(), 2.0, max_relative = 1e-9);
    }

    #[test]
    fn threshold_spec_validation() {
        assert!(ThresholdSpec::new(2, vec![2, 2], vec![1, 2]).is_err());
        assert!(ThresholdSpec::new(2, vec![2, 1], vec![2, 2]).is_err());
        assert!(ThresholdSpec::new(2, vec![1], vec![3]).is_err());
        assert!(ThresholdSpec::new(2, vec![0], vec![1]).is_err());
        assert!(ThresholdSpec::new(4, vec![3, 1], vec![1, 4]).is_ok());
    }

    #[test]
    fn threshold_examples() {
        // One coupon collected twice, first-of-two: 1/2 * 2 + 1/2 * 3.
        let u = ThresholdSpec::new(2, vec![2], vec![1]).unwrap();
        assert_relative_eq!(u.expected(&cfg()).unwrap(), 2.5, max_relative = 1e-7);
        // Both coupons once: same as the classic 2-coupon collection.
        let u = ThresholdSpec::new(2, vec![1], vec![2]).unwrap();
        assert_relative_eq!(u.expected(&cfg()).unwrap(), 3.0, max_relative = 1e-7);
        // Any single coupon once: the first draw settles it.
        let u = ThresholdSpec::new(5, vec![1], vec![1]).unwrap();
        assert_relative_eq!(u.expected(&cfg()).unwrap(), 1.0, max_relative = 1e-7);
    }

    #[test]
    fn threshold_matches_quota_on_uniform_specs() {
        for (n, m) in [(2usize, 2u32), (3, 1), (3, 3), (4, 2)] {
            let t = QuotaVector::uniform(n, m).unwrap().expected(&cfg()).unwrap();
            let u = ThresholdSpec::new(n, vec![m], vec![n])
                .unwrap()
                .expected(&cfg())
                .unwrap();
            assert_relative_eq!(t, u, max_relative = 1e-8);
        }
    }

    #[test]
    fn tightening_thresholds_never_helps() {
        let base = ThresholdSpec::new(4, vec![2], vec![2]).unwrap().expected(&cfg()).unwrap();
        let more_copies = ThresholdSpec::new(4, vec![3], vec![2]).unwrap().expected(&cfg()).unwrap();
        let more_coupons = ThresholdSpec::new(4, vec![2], vec![3]).unwrap().expected(&cfg()).unwrap();
        assert!(more_copies >= base - 1e-9);
        assert!(more_coupons >= base - 1e-9);
    }

    #[test]
    fn simulation_is_deterministic_and_consistent() {
        let spec = QuotaVector::uniform(3, 1).unwrap();
        let a = spec.simulate(50_000, 99).unwrap();
        let b = spec.simulate(50_000, 99).unwrap();
        assert_eq!(a, b);
        assert!((a.mean - 5.5).abs() <= a.ci99_half, "mean {} ci {}", a.mean, a.ci99_half);

        let one = QuotaVector::uniform(1, 1).unwrap().simulate(1000, 7).unwrap();
        assert_eq!(one.mean, 1.0);
        assert_eq!(one.variance, 0.0);
    }

    #[test]
    fn threshold_simulation_tracks_analytics() {
        let spec = ThresholdSpec::new(2, vec![2], vec![1]).unwrap();
        let s = spec.simulate(200_000, 3).unwrap();
        assert!((s.mean - 2.5).abs() <= s.ci99_half);

        let spec = ThresholdSpec::new(4, vec![3, 1], vec![1, 4]).unwrap();
        let s = spec.simulate(100_000, 4).unwrap();
        let analytic = spec.expected(&cfg()).unwrap();
        assert!(
            (s.mean - analytic).abs() <= s.ci99_half,
            "sim {} vs analytic {analytic} (ci {})",
            s.mean,
            s.ci99_half
        );
    }

    #[test]
    fn nonuniform_simulation_tracks_analytics() {
        let spec = QuotaVector::new(vec![0.7, 0.3], vec![1, 2]).unwrap();
        let analytic = spec.expected(&cfg()).unwrap();
        let s = spec.simulate(200_000, 11).unwrap();
        assert!((s.mean - analytic).abs() <= s.ci99_half);
    }

    #[test]
    fn asymptotic_leading_terms() {
        let a = asymptotic_expected(100, 1, false).unwrap();
        assert_relative_eq!(a, 100.0 * 100f64.ln() + EULER_GAMMA * 100.0, max_relative = 1e-12);
        assert!((a - 518.24).abs() < 0.01);
        assert_eq!(asymptotic_expected(10, 1000, true).unwrap(), 10_000.0);
        assert!(asymptotic_expected(2, 1, false).is_err());
    }

    #[test]
    fn limit_law_shape() {
        assert_relative_eq!(limit_law_cdf(0.0, 1), (-1f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(limit_law_cdf(0.0, 3), (-0.5f64).exp(), max_relative = 1e-12);
        assert!(limit_law_cdf(40.0, 2) > 1.0 - 1e-12);
        let mut prev = -1.0;
        for i in -50..=50 {
            let y = i as f64 * 0.2;
            let c = limit_law_cdf(y, 2);
            assert!((0.0..=1.0).contains(&c));
            assert!(c >= prev);
            prev = c;
        }
    }
}
