//! Rateless encoder, erasure channel, and cross-generation decoder.
//!
//! The encoder picks a generation by its scheduling probability and emits a
//! packet whose coefficients are i.i.d. uniform field elements (the all-zero
//! vector is allowed; it is rank-neutral at the decoder). The decoder keeps
//! one reduced row-echelon matrix per generation. Whenever a generation's
//! rank reaches its number of unresolved members it decodes, its members
//! become known everywhere, and every overlapping generation is re-reduced
//! with those variables substituted out — possibly triggering further
//! decodes, iterated to a fixpoint.
//!
//! Two decoder modes: `RankOnly` tracks coefficients alone (latency depends
//! on nothing else), `Payload` carries data symbols end to end so decoded
//! output can be compared with the source exactly.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::gf::{FieldElem, FieldSpec};
use crate::layout::{build_random_annex, AnnexParams, GenerationLayout};
use crate::{trial_rng, Error, Result};

/// Transmissions after which a trial aborts with a diagnostic error.
pub const SAFETY_CAP: u64 = 1_000_000;

/// Default payload length in field symbols.
pub const DEFAULT_PAYLOAD_SYMBOLS: usize = 16;

/// What the decoder tracks per packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Coefficient vectors only; enough for rank and latency statistics.
    RankOnly,
    /// Coefficients plus `symbols` data symbols per packet.
    Payload { symbols: usize },
}

impl DecodeMode {
    /// Payload mode with the default symbol count.
    pub fn payload() -> Self {
        DecodeMode::Payload {
            symbols: DEFAULT_PAYLOAD_SYMBOLS,
        }
    }

    fn symbols(&self) -> Option<usize> {
        match self {
            DecodeMode::RankOnly => None,
            DecodeMode::Payload { symbols } => Some(*symbols),
        }
    }
}

/// One coded packet: generation tag, coding vector, optional payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedPacket {
    pub gen_index: usize,
    pub coeffs: Vec<FieldElem>,
    pub payload: Option<Vec<FieldElem>>,
}

/// What a single ingest did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    /// The packet raised its generation's rank.
    pub rank_increased: bool,
    /// Generations fully decoded by this packet (cascades included).
    pub newly_decoded: Vec<usize>,
    /// All packets are now resolved.
    pub complete: bool,
}

/// Outcome of one transmission loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRecord {
    /// Packets transmitted (erased ones included) until success.
    pub latency: u64,
    /// Packets that survived the channel.
    pub received: u64,
    /// Received-packet count per generation.
    pub per_generation_counts: Vec<u64>,
}

/// Where simulated trials get their layout.
#[derive(Debug, Clone, Copy)]
pub enum LayoutSource<'a> {
    /// Every trial decodes the same fixed layout.
    Fixed(&'a GenerationLayout),
    /// Every trial draws a fresh random-annex layout (ensemble averaging).
    FreshAnnex {
        params: AnnexParams,
        n_packets: usize,
    },
}

/// Draws a coded packet: generation per scheduling probability, coefficients
/// i.i.d. uniform over the field, payload combined iff source data is given.
pub fn encode_next(
    layout: &GenerationLayout,
    field: &FieldSpec,
    source: Option<&[Vec<FieldElem>]>,
    rng: &mut ChaCha8Rng,
) -> CodedPacket {
    let u: f64 = rng.gen();
    let n = layout.n();
    // Scheduling is uniform for every layout this library builds, so the
    // generation draw is a direct bin lookup instead of a cumulative scan.
    let gen_index = ((u * n as f64) as usize).min(n - 1);
    let members = &layout.members()[gen_index];
    let coeffs: Vec<FieldElem> = members
        .iter()
        .map(|_| rng.gen_range(0..field.q) as FieldElem)
        .collect();
    let payload = source.map(|data| {
        let mut out = vec![0; data[0].len()];
        for (&c, &m) in coeffs.iter().zip(members) {
            field.axpy(&mut out, c, &data[m]);
        }
        out
    });
    CodedPacket {
        gen_index,
        coeffs,
        payload,
    }
}

/// One memoryless erasure draw: true means delivered, with probability
/// 1 - eps.
pub fn channel_pass(eps: f64, rng: &mut ChaCha8Rng) -> Result<bool> {
    check_eps(eps)?;
    Ok(rng.gen::<f64>() >= eps)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!(
            "erasure rate must lie in [0, 1), got {eps}"
        )));
    }
    Ok(())
}

struct GenState {
    /// Linearly independent rows, each normalized to a leading 1, kept in
    /// reduced echelon form. Columns of resolved packets are always zero.
    rows: Vec<Vec<FieldElem>>,
    /// Payload mode: right-hand sides parallel to `rows`.
    rhs: Vec<Vec<FieldElem>>,
    pivot_of_col: Vec<Option<usize>>,
    decoded: bool,
}

/// Incremental cross-generation decoder; single-owner, no internal locking.
pub struct DecoderState<'a> {
    field: &'a FieldSpec,
    layout: &'a GenerationLayout,
    mode: DecodeMode,
    gens: Vec<GenState>,
    /// packet index -> generations containing it.
    packet_gens: Vec<Vec<usize>>,
    resolved: Vec<bool>,
    resolved_count: usize,
    /// Decoded packet values (payload mode only).
    values: Vec<Vec<FieldElem>>,
    /// Generations whose stored rows mention newly resolved packets and
    /// still await re-reduction.
    dirty: Vec<bool>,
    packets_seen: u64,
}

impl<'a> DecoderState<'a> {
    pub fn new(field: &'a FieldSpec, layout: &'a GenerationLayout, mode: DecodeMode) -> Self {
        let n = layout.n();
        let n_packets = layout.n_packets();
        let mut packet_gens = vec![Vec::new(); n_packets];
        for (j, g) in layout.members().iter().enumerate() {
            for &p in g {
                packet_gens[p].push(j);
            }
        }
        let gens = (0..n)
            .map(|j| GenState {
                rows: Vec::new(),
                rhs: Vec::new(),
                pivot_of_col: vec![None; layout.size(j)],
                decoded: false,
            })
            .collect();
        let values = match mode {
            DecodeMode::RankOnly => Vec::new(),
            DecodeMode::Payload { .. } => vec![Vec::new(); n_packets],
        };
        Self {
            field,
            layout,
            mode,
            gens,
            packet_gens,
            resolved: vec![false; n_packets],
            resolved_count: 0,
            values,
            dirty: vec![false; n],
            packets_seen: 0,
        }
    }

    pub fn packets_seen(&self) -> u64 {
        self.packets_seen
    }

    pub fn resolved_count(&self) -> usize {
        self.resolved_count
    }

    pub fn is_complete(&self) -> bool {
        self.resolved_count == self.layout.n_packets()
    }

    pub fn is_resolved(&self, packet: usize) -> bool {
        self.resolved[packet]
    }

    /// Decoded value of a packet (payload mode, resolved packets only).
    pub fn value(&self, packet: usize) -> Option<&[FieldElem]> {
        if self.resolved.get(packet).copied().unwrap_or(false) && !self.values.is_empty() {
            Some(&self.values[packet])
        } else {
            None
        }
    }

    /// Independent rows currently stored for a generation (0 once decoded).
    pub fn generation_rank(&self, j: usize) -> usize {
        self.gens[j].rows.len()
    }

    pub fn generation_decoded(&self, j: usize) -> bool {
        self.gens[j].decoded
    }

    /// Feeds one received packet through elimination and any decode cascade.
    pub fn ingest(&mut self, pkt: &CodedPacket) -> IngestReport {
        self.packets_seen += 1;
        let j = pkt.gen_index;
        assert!(j < self.layout.n(), "generation index out of range");
        assert_eq!(
            pkt.coeffs.len(),
            self.layout.size(j),
            "coding vector length mismatch"
        );
        let mut report = IngestReport {
            rank_increased: false,
            newly_decoded: Vec::new(),
            complete: self.is_complete(),
        };
        if self.gens[j].decoded {
            return report;
        }
        let rhs = match (self.mode.symbols(), &pkt.payload) {
            (None, _) => Vec::new(),
            (Some(d), Some(p)) => {
                assert_eq!(p.len(), d, "payload length mismatch");
                p.clone()
            }
            (Some(_), None) => panic!("payload mode requires packet payloads"),
        };
        report.rank_increased = self.reduce_insert(j, pkt.coeffs.clone(), rhs);
        if report.rank_increased && self.generation_ready(j) {
            self.cascade(j, &mut report.newly_decoded);
        }
        report.complete = self.is_complete();
        report
    }

    /// Substitutes resolved packets out of a row, reduces it against the
    /// generation's pivots, and inserts it if independent. Returns whether
    /// rank grew.
    fn reduce_insert(&mut self, j: usize, mut row: Vec<FieldElem>, mut rhs: Vec<FieldElem>) -> bool {
        let field = self.field;
        let members = &self.layout.members()[j];
        let payload = self.mode.symbols().is_some();
        for c in 0..row.len() {
            if row[c] != 0 && self.resolved[members[c]] {
                if payload {
                    let coeff = row[c];
                    let value = &self.values[members[c]];
                    field.axpy(&mut rhs, coeff, value);
                }
                row[c] = 0;
            }
        }
        let gen = &mut self.gens[j];
        for c in 0..row.len() {
            if row[c] == 0 {
                continue;
            }
            if let Some(r) = gen.pivot_of_col[c] {
                let f = row[c];
                field.axpy(&mut row, f, &gen.rows[r]);
                if payload {
                    field.axpy(&mut rhs, f, &gen.rhs[r]);
                }
                debug_assert_eq!(row[c], 0);
            }
        }
        let Some(lead) = row.iter().position(|&x| x != 0) else {
            // Dependent equation; with correct arithmetic its right-hand
            // side must already be implied.
            debug_assert!(rhs.iter().all(|&x| x == 0), "inconsistent dependent row");
            return false;
        };
        let inv = field.inv(row[lead]).expect("leading element is nonzero");
        field.scale(&mut row, inv);
        if payload {
            field.scale(&mut rhs, inv);
        }
        for r in 0..gen.rows.len() {
            let f = gen.rows[r][lead];
            if f != 0 {
                field.axpy(&mut gen.rows[r], f, &row);
                if payload {
                    let (head, tail) = (&mut gen.rhs[r], &rhs);
                    field.axpy(head, f, tail);
                }
            }
        }
        gen.pivot_of_col[lead] = Some(gen.rows.len());
        gen.rows.push(row);
        if payload {
            gen.rhs.push(rhs);
        }
        true
    }

    fn unresolved_members(&self, j: usize) -> usize {
        self.layout.members()[j]
            .iter()
            .filter(|&&p| !self.resolved[p])
            .count()
    }

    fn generation_ready(&self, j: usize) -> bool {
        !self.gens[j].decoded && self.gens[j].rows.len() == self.unresolved_members(j)
    }

    /// Re-reduces a generation whose stored rows mention newly resolved
    /// packets, then drains the decode fixpoint starting from `start`.
    fn cascade(&mut self, start: usize, newly_decoded: &mut Vec<usize>) {
        let n = self.layout.n();
        let mut queued = vec![false; n];
        let mut queue = VecDeque::new();
        queue.push_back(start);
        queued[start] = true;
        while let Some(j) = queue.pop_front() {
            queued[j] = false;
            if self.gens[j].decoded {
                continue;
            }
            if self.dirty[j] {
                self.rebuild(j);
            }
            if !self.generation_ready(j) {
                continue;
            }
            let resolved_now = self.decode_generation(j);
            newly_decoded.push(j);
            for &p in &resolved_now {
                for &k in &self.packet_gens[p] {
                    if k != j && !self.gens[k].decoded && !queued[k] {
                        queue.push_back(k);
                        queued[k] = true;
                    }
                }
            }
        }
    }

    /// Re-runs every stored row through substitution and elimination.
    fn rebuild(&mut self, j: usize) {
        let rows = std::mem::take(&mut self.gens[j].rows);
        let rhs = std::mem::take(&mut self.gens[j].rhs);
        let g = self.layout.size(j);
        self.gens[j].pivot_of_col = vec![None; g];
        if self.mode.symbols().is_some() {
            for (row, r) in rows.into_iter().zip(rhs) {
                self.reduce_insert(j, row, r);
            }
        } else {
            for row in rows {
                self.reduce_insert(j, row, Vec::new());
            }
        }
        self.dirty[j] = false;
    }

    /// Marks a ready generation decoded. In reduced echelon form with rank
    /// equal to the unresolved count, every stored row is a unit vector, so
    /// payload rows are read off directly. Returns the newly resolved
    /// packets and flags every overlapping generation for re-reduction.
    fn decode_generation(&mut self, j: usize) -> Vec<usize> {
        let rows = std::mem::take(&mut self.gens[j].rows);
        let mut rhs = std::mem::take(&mut self.gens[j].rhs);
        self.gens[j].pivot_of_col = Vec::new();
        self.gens[j].decoded = true;
        let members = &self.layout.members()[j];
        let payload = self.mode.symbols().is_some();
        let mut newly = Vec::with_capacity(rows.len());
        for (ri, row) in rows.iter().enumerate() {
            let lead = row.iter().position(|&x| x != 0).expect("stored rows are nonzero");
            debug_assert_eq!(row[lead], 1);
            debug_assert!(row.iter().enumerate().all(|(c, &x)| c == lead || x == 0));
            let p = members[lead];
            debug_assert!(!self.resolved[p]);
            self.resolved[p] = true;
            self.resolved_count += 1;
            if payload {
                self.values[p] = std::mem::take(&mut rhs[ri]);
            }
            newly.push(p);
        }
        for &p in &newly {
            for &k in &self.packet_gens[p] {
                if k != j {
                    self.dirty[k] = true;
                }
            }
        }
        newly
    }
}

/// Runs encode -> channel -> ingest until global decoding succeeds.
/// Deterministic in the seed; aborts with a diagnostic error after
/// [`SAFETY_CAP`] transmissions.
pub fn run_trial(
    layout: &GenerationLayout,
    field: &FieldSpec,
    eps: f64,
    mode: DecodeMode,
    seed: u64,
) -> Result<TrialRecord> {
    let mut rng = trial_rng(seed, 0);
    run_trial_with_rng(layout, field, eps, mode, &mut rng)
}

fn run_trial_with_rng(
    layout: &GenerationLayout,
    field: &FieldSpec,
    eps: f64,
    mode: DecodeMode,
    rng: &mut ChaCha8Rng,
) -> Result<TrialRecord> {
    check_eps(eps)?;
    let source: Option<Vec<Vec<FieldElem>>> = mode.symbols().map(|d| {
        (0..layout.n_packets())
            .map(|_| (0..d).map(|_| rng.gen_range(0..field.q) as FieldElem).collect())
            .collect()
    });
    let mut state = DecoderState::new(field, layout, mode);
    let mut counts = vec![0u64; layout.n()];
    let mut sent = 0u64;
    loop {
        if sent >= SAFETY_CAP {
            return Err(Error::SafetyCap { cap: SAFETY_CAP });
        }
        sent += 1;
        let pkt = encode_next(layout, field, source.as_deref(), rng);
        if rng.gen::<f64>() >= eps {
            counts[pkt.gen_index] += 1;
            let report = state.ingest(&pkt);
            if report.complete {
                break;
            }
        }
    }
    if let Some(data) = &source {
        debug_assert!(
            (0..layout.n_packets()).all(|p| state.value(p) == Some(data[p].as_slice())),
            "decoded payloads must match the source"
        );
    }
    Ok(TrialRecord {
        latency: sent,
        received: state.packets_seen(),
        per_generation_counts: counts,
    })
}

/// Runs independent trials concurrently; trial t draws its randomness from
/// stream t of the master seed, so results are reproducible regardless of
/// thread scheduling. A fresh-annex source redraws the layout every trial.
pub fn simulate_many(
    source: LayoutSource<'_>,
    field: &FieldSpec,
    eps: f64,
    mode: DecodeMode,
    trials: u64,
    master_seed: u64,
) -> Result<Vec<TrialRecord>> {
    check_eps(eps)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(master_seed, t);
            let built;
            let layout = match source {
                LayoutSource::Fixed(l) => l,
                LayoutSource::FreshAnnex { params, n_packets } => {
                    built = build_random_annex(params, n_packets, rng.gen())?;
                    &built
                }
            };
            run_trial_with_rng(layout, field, eps, mode, &mut rng)
        })
        .collect()
}

/// Like [`simulate_many`], keeping only each trial's latency. Large sweeps
/// over big layouts stay in a few hundred kilobytes this way.
pub fn simulate_latencies(
    source: LayoutSource<'_>,
    field: &FieldSpec,
    eps: f64,
    mode: DecodeMode,
    trials: u64,
    master_seed: u64,
) -> Result<Vec<u64>> {
    check_eps(eps)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(master_seed, t);
            let built;
            let layout = match source {
                LayoutSource::Fixed(l) => l,
                LayoutSource::FreshAnnex { params, n_packets } => {
                    built = build_random_annex(params, n_packets, rng.gen())?;
                    &built
                }
            };
            run_trial_with_rng(layout, field, eps, mode, &mut rng).map(|r| r.latency)
        })
        .collect()
}

/// Empirical probability that `s` i.i.d. uniform coding vectors of length
/// `g` over GF(q) fail to reach full rank g.
pub fn rank_tail_mc(g: usize, q: u32, s: u64, trials: u64, seed: u64) -> Result<f64> {
    if g == 0 || s < g as u64 {
        return Err(Error::InvalidParameter(format!(
            "need s >= g >= 1, got g={g}, s={s}"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let field = FieldSpec::for_q(q)?;
    let layout = crate::layout::build_disjoint(g, g)?;
    let failures = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let mut rng = trial_rng(seed, t);
            let mut state = DecoderState::new(&field, &layout, DecodeMode::RankOnly);
            for _ in 0..s {
                if state.is_complete() {
                    break;
                }
                let pkt = encode_next(&layout, &field, None, &mut rng);
                state.ingest(&pkt);
            }
            !state.is_complete()
        })
        .count();
    Ok(failures as f64 / trials as f64)
}
