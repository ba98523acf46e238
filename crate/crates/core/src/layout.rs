//! Generation layouts over a block of information packets.
//!
//! A layout partitions packets {0, .., N-1} into n generations, possibly
//! overlapping. Three constructions are provided: disjoint contiguous blocks,
//! random-annex (each base block borrows l extra packets sampled uniformly
//! from outside itself), and head-to-toe (each block borrows the first l
//! packets of the next block, wrapping around). The closed-form ensemble
//! statistics of the random-annex construction live here too: per-packet
//! participation, exclusive/shared splits, pairwise overlap probability, and
//! the expected overlap between a union of generations and the next one.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::{trial_rng, Error, Result};

/// Which construction produced a layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    Disjoint,
    RandomAnnex,
    HeadToToe,
}

impl LayoutKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayoutKind::Disjoint => "disjoint",
            LayoutKind::RandomAnnex => "random_annex",
            LayoutKind::HeadToToe => "head_to_toe",
        }
    }
}

/// Base size and annex size of an overlapping construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnexParams {
    pub base_size: usize,
    pub annex_size: usize,
}

impl AnnexParams {
    pub fn new(base_size: usize, annex_size: usize) -> Result<Self> {
        if base_size == 0 {
            return Err(Error::InvalidParameter("base size must be >= 1".into()));
        }
        Ok(Self { base_size, annex_size })
    }

    /// Generation count for N packets: ceil(N / base).
    pub fn generation_count(&self, n_packets: usize) -> usize {
        n_packets.div_ceil(self.base_size)
    }

    /// Full generation size base + annex.
    pub fn generation_size(&self) -> usize {
        self.base_size + self.annex_size
    }
}

/// An immutable generation structure over N packets.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationLayout {
    n_packets: usize,
    members: Vec<Vec<usize>>,
    rho: Vec<f64>,
    kind: LayoutKind,
}

impl GenerationLayout {
    /// Validates and wraps raw membership lists; scheduling is uniform.
    fn assemble(n_packets: usize, members: Vec<Vec<usize>>, kind: LayoutKind) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidParameter("need at least one generation".into()));
        }
        let mut covered = vec![false; n_packets];
        for (j, g) in members.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidParameter(format!("generation {j} is empty")));
            }
            if g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter(format!(
                    "generation {j} members must be sorted and duplicate-free"
                )));
            }
            for &p in g {
                if p >= n_packets {
                    return Err(Error::InvalidParameter(format!(
                        "generation {j} references packet {p} >= {n_packets}"
                    )));
                }
                covered[p] = true;
            }
        }
        if let Some(p) = covered.iter().position(|&c| !c) {
            return Err(Error::InvalidParameter(format!(
                "packet {p} is not covered by any generation"
            )));
        }
        let n = members.len();
        Ok(Self {
            n_packets,
            members,
            rho: vec![1.0 / n as f64; n],
            kind,
        })
    }

    pub fn n_packets(&self) -> usize {
        self.n_packets
    }

    /// Number of generations.
    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn size(&self, j: usize) -> usize {
        self.members[j].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Scheduling probabilities (uniform for all constructions here).
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn kind(&self) -> LayoutKind {
        self.kind
    }

    /// One line per generation: "index: members".
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (j, g) in self.members.iter().enumerate() {
            out.push_str(&j.to_string());
            out.push(':');
            for &p in g {
                out.push(' ');
                out.push_str(&p.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Parses the `to_text` format. The format stores membership only, so
    /// the construction kind is supplied by the caller.
    pub fn from_text(text: &str, kind: LayoutKind) -> Result<Self> {
        let mut members = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (idx, rest) = line.split_once(':').ok_or_else(|| {
                Error::InvalidParameter(format!("line {}: missing ':'", lineno + 1))
            })?;
            let idx: usize = idx.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("line {}: bad generation index", lineno + 1))
            })?;
            if idx != members.len() {
                return Err(Error::InvalidParameter(format!(
                    "line {}: expected generation {}, got {idx}",
                    lineno + 1,
                    members.len()
                )));
            }
            let g: Vec<usize> = rest
                .split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| {
                        Error::InvalidParameter(format!("line {}: bad packet index", lineno + 1))
                    })
                })
                .collect::<Result<_>>()?;
            members.push(g);
        }
        let n_packets = members
            .iter()
            .flat_map(|g| g.iter().copied())
            .max()
            .map_or(0, |m| m + 1);
        Self::assemble(n_packets, members, kind)
    }
}

/// Contiguous blocks of g packets; the last block is smaller if g does not
/// divide N.
pub fn build_disjoint(n_packets: usize, g: usize) -> Result<GenerationLayout> {
    if n_packets == 0 || g == 0 || g > n_packets {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= g <= N, got g={g}, N={n_packets}"
        )));
    }
    let members: Vec<Vec<usize>> = (0..n_packets)
        .step_by(g)
        .map(|start| (start..(start + g).min(n_packets)).collect())
        .collect();
    GenerationLayout::assemble(n_packets, members, LayoutKind::Disjoint)
}

/// Base blocks of h packets, each extended by l packets drawn uniformly
/// without replacement from outside the block. Annexes are sampled
/// independently per generation; the whole layout is a pure function of the
/// seed. An empty annex returns the disjoint layout itself.
pub fn build_random_annex(
    params: AnnexParams,
    n_packets: usize,
    seed: u64,
) -> Result<GenerationLayout> {
    let (h, l) = (params.base_size, params.annex_size);
    if h > n_packets {
        return Err(Error::InvalidParameter(format!(
            "base size {h} exceeds packet count {n_packets}"
        )));
    }
    if l > n_packets - h {
        return Err(Error::InvalidParameter(format!(
            "annex size {l} exceeds available packets {}",
            n_packets - h
        )));
    }
    if l == 0 {
        return build_disjoint(n_packets, h);
    }
    let base = build_disjoint(n_packets, h)?;
    let members: Vec<Vec<usize>> = base
        .members()
        .iter()
        .enumerate()
        .map(|(i, block)| {
            let mut rng = trial_rng(seed, i as u64);
            let mut pool: Vec<usize> = (0..n_packets).filter(|p| !block.contains(p)).collect();
            // Partial shuffle: the first l slots become the annex.
            for j in 0..l {
                let swap = rng.gen_range(j..pool.len());
                pool.swap(j, swap);
            }
            let mut g: Vec<usize> = block.iter().copied().chain(pool[..l].iter().copied()).collect();
            g.sort_unstable();
            g
        })
        .collect();
    GenerationLayout::assemble(n_packets, members, LayoutKind::RandomAnnex)
}

/// Base blocks of h packets, each extended by the first l packets of the
/// next block, wrapping from the last block to the first.
pub fn build_head_to_toe(n_packets: usize, h: usize, l: usize) -> Result<GenerationLayout> {
    if h == 0 || h > n_packets || n_packets % h != 0 {
        return Err(Error::InvalidParameter(format!(
            "base size must divide packet count, got h={h}, N={n_packets}"
        )));
    }
    if l > h {
        return Err(Error::InvalidParameter(format!(
            "head-to-toe annex {l} exceeds base size {h}"
        )));
    }
    if l == 0 {
        return build_disjoint(n_packets, h);
    }
    let n = n_packets / h;
    let members: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let start = i * h;
            let next = ((i + 1) % n) * h;
            let mut g: Vec<usize> = (start..start + h).chain(next..next + l).collect();
            g.sort_unstable();
            g
        })
        .collect();
    GenerationLayout::assemble(n_packets, members, LayoutKind::HeadToToe)
}

/// Probability that a given outside packet lands in a given annex: l/(N-h).
pub fn annex_pi(n_packets: usize, h: usize, l: usize) -> Result<f64> {
    if h == 0 || n_packets <= h {
        return Err(Error::InvalidParameter(format!(
            "need N > h >= 1, got N={n_packets}, h={h}"
        )));
    }
    if l > n_packets - h {
        return Err(Error::InvalidParameter(format!(
            "annex size {l} exceeds available packets {}",
            n_packets - h
        )));
    }
    Ok(l as f64 / (n_packets - h) as f64)
}

/// Mean and variance of the number of generations a packet belongs to:
/// 1 + Binomial(n-1, pi).
pub fn participation_stats(n_packets: usize, h: usize, l: usize) -> Result<(f64, f64)> {
    let pi = annex_pi(n_packets, h, l)?;
    let n = n_packets.div_ceil(h) as f64;
    Ok((1.0 + (n - 1.0) * pi, (n - 1.0) * pi * (1.0 - pi)))
}

/// Expected number of base packets no other generation borrows, and the
/// complement: expected packets of a generation shared with at least one
/// other (its own annex plus borrowed base packets).
pub fn exclusive_shared_counts(n_packets: usize, h: usize, l: usize) -> Result<(f64, f64)> {
    let pi = annex_pi(n_packets, h, l)?;
    let n = n_packets.div_ceil(h) as f64;
    let stay = (1.0 - pi).powf(n - 1.0);
    Ok((h as f64 * stay, l as f64 + h as f64 * (1.0 - stay)))
}

/// Probability that two distinct generations share at least one packet:
/// 1 - multinomial(N-2h; l, l, N-2h-2l) / C(N-h, l)^2, evaluated in log
/// space. When the two annexes cannot avoid each other (N - 2h - 2l < 0)
/// this is exactly 1.
pub fn overlap_probability(n_packets: usize, h: usize, l: usize) -> Result<f64> {
    if h == 0 || n_packets < 2 * h {
        return Err(Error::InvalidParameter(format!(
            "need N >= 2h >= 2, got N={n_packets}, h={h}"
        )));
    }
    if l > n_packets - h {
        return Err(Error::InvalidParameter(format!(
            "annex size {l} exceeds available packets {}",
            n_packets - h
        )));
    }
    if l == 0 {
        return Ok(0.0);
    }
    let (nf, hf, lf) = (n_packets as f64, h as f64, l as f64);
    if nf - 2.0 * hf - 2.0 * lf < 0.0 {
        return Ok(1.0);
    }
    let ln_fact = |x: f64| ln_gamma(x + 1.0);
    let ln_multinomial =
        ln_fact(nf - 2.0 * hf) - 2.0 * ln_fact(lf) - ln_fact(nf - 2.0 * hf - 2.0 * lf);
    let ln_choose_sq = 2.0 * (ln_fact(nf - hf) - ln_fact(lf) - ln_fact(nf - hf - lf));
    Ok(-(ln_multinomial - ln_choose_sq).exp_m1())
}

/// Expected overlap between the union of s generations and one more, over
/// the random-annex ensemble: g(1 - (1-pi)^s) + s h pi (1-pi)^s.
pub fn omega(s: usize, n_packets: usize, h: usize, l: usize) -> Result<f64> {
    if s == 0 {
        return Ok(0.0);
    }
    let n = n_packets.div_ceil(h.max(1));
    if s > n - 1 {
        return Err(Error::InvalidParameter(format!(
            "union size {s} out of range, need s <= n-1 = {}",
            n - 1
        )));
    }
    let pi = annex_pi(n_packets, h, l)?;
    let g = (h + l) as f64;
    let stay = (1.0 - pi).powi(s as i32);
    Ok(g * (1.0 - stay) + s as f64 * h as f64 * pi * stay)
}

/// Large-n limit of `omega` with alpha = l/h fixed and beta = s/n:
/// h[(1+alpha)(1-e^{-alpha beta}) + alpha beta e^{-alpha beta}].
pub fn omega_limit(h: f64, alpha: f64, beta: f64) -> f64 {
    let decay = (-alpha * beta).exp();
    h * ((1.0 + alpha) * (1.0 - decay) + alpha * beta * decay)
}

/// Header bits per coded packet: generation index plus one field symbol per
/// generation member.
pub fn packet_overhead_bits(n: usize, g: usize, q: u32) -> u64 {
    debug_assert!(n >= 1 && g >= 1 && q >= 2);
    let ceil_log2 = |x: u64| {
        if x <= 1 {
            0
        } else {
            u64::from(64 - (x - 1).leading_zeros())
        }
    };
    ceil_log2(n as u64) + g as u64 * ceil_log2(q as u64)
}
