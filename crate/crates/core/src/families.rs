//! Independent set families and their indexed refinement.
//!
//! The objects here live over a finite base `{0..N-1}`:
//!
//! * [`SetFamily`] — a keyed list of subsets, checked for independence up to
//!   a combination depth `d` with a minimum witness count `s`;
//! * [`GoodSequence`] — a doubly-indexed family `rows[(alpha, n)]` for
//!   `alpha < Lambda`, `n <= W`, plus distinguished omega rows, verified
//!   against five conditions (independence, injectivity, residue-classed
//!   trace multiplicity over the `{0..m_cap-1}` prefix, the same over
//!   arbitrary small position sets, and pair separation by omega rows).
//!
//! Construction is randomized from an explicit seed with a deterministic
//! trace-overwrite schedule, then verified; failures retry with a derived
//! seed and the last report is surfaced.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitSet;
use crate::report::{CheckMode, CheckResult, VerifyReport};

/// Default enumeration budget: spaces up to this size are checked exhaustively.
pub const DEFAULT_ENUM_BUDGET: u128 = 10_000_000;
/// Default sample count for spaces that exceed the budget.
pub const DEFAULT_SAMPLES: usize = 100_000;

/// Finite stand-ins for the limit objects: base size `N`, residue modulus `W`
/// (relations are `R_0..R_W`), `Lambda` ordinary indices, multiplicity `c`,
/// independence depth `d`, minimum witness count `s`, trace-prefix bound
/// `m_cap`, constrained-row bound `n_cap`, and position-set bound `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationParams {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "Lambda")]
    pub lambda: usize,
    pub c: usize,
    pub d: usize,
    pub s: usize,
    pub m_cap: usize,
    pub n_cap: usize,
    pub t: usize,
    pub seed: u64,
    pub retries: usize,
}

impl TruncationParams {
    /// The default workbench truncation. `N = 2^{W+1}` exactly, so the
    /// bit-defined omega rows are balanced and separate every base pair;
    /// `Lambda/W = 135 >= c * 2^{m_cap * n_cap}` leaves slack for
    /// multiplicity-thinned subfamilies.
    pub fn p0() -> Self {
        TruncationParams {
            n: 256,
            w: 7,
            lambda: 945,
            c: 3,
            d: 3,
            s: 2,
            m_cap: 2,
            n_cap: 1,
            t: 1,
            seed: 1,
            retries: 20,
        }
    }

    /// A small instance for cross-checking solvers against naive oracles.
    /// Residue classes hold 32 indices so the thinned subfamilies keep
    /// enough witnesses per class for the trace conditions.
    pub fn small() -> Self {
        TruncationParams {
            n: 64,
            w: 5,
            lambda: 160,
            c: 2,
            d: 2,
            s: 1,
            m_cap: 1,
            n_cap: 1,
            t: 1,
            seed: 5,
            retries: 50,
        }
    }

    pub fn validate(&self) -> Result<(), FamilyError> {
        let fail = |msg: String| Err(FamilyError::BadParams(msg));
        if self.w < 2 {
            return fail(format!("W must be >= 2, got {}", self.w));
        }
        if self.lambda % self.w != 0 {
            return fail(format!("W={} must divide Lambda={}", self.w, self.lambda));
        }
        if self.m_cap > self.n {
            return fail(format!("m_cap={} exceeds N={}", self.m_cap, self.n));
        }
        if self.n_cap > self.w {
            return fail(format!("n_cap={} exceeds W={}", self.n_cap, self.w));
        }
        if self.d < 1 {
            return fail("d must be >= 1".to_string());
        }
        if self.t > self.d {
            return fail(format!("t={} exceeds d={}", self.t, self.d));
        }
        if self.c < 1 {
            return fail("c must be >= 1".to_string());
        }
        if self.s < 1 {
            return fail("s must be >= 1".to_string());
        }
        if self.n == 0 || self.lambda == 0 {
            return fail("N and Lambda must be positive".to_string());
        }
        if self.w > 62 {
            return fail(format!("W={} too large (max 62)", self.w));
        }
        Ok(())
    }

    /// Residue class of an ordinary index.
    pub fn residue(&self, alpha: usize) -> usize {
        alpha % self.w
    }
}

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("invalid truncation parameters: {0}")]
    BadParams(String),
    #[error("perfect family exponent {0} out of range 1..=20")]
    ExponentOutOfRange(usize),
    #[error("family of size {size} too small: need at least {need} members")]
    FamilyTooSmall { size: usize, need: usize },
    #[error("construction retries exhausted after {attempts} attempts; last failure: {last_failure}")]
    RetriesExhausted {
        attempts: usize,
        last_failure: String,
        report: Box<VerifyReport>,
    },
}

/// A keyed, ordered family of subsets of `{0..base-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetFamily {
    base: usize,
    members: Vec<(String, BitSet)>,
}

impl SetFamily {
    pub fn new(base: usize, members: Vec<(String, BitSet)>) -> Self {
        debug_assert!(members.iter().all(|(_, m)| m.len() == base));
        SetFamily { base, members }
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, i: usize) -> &BitSet {
        &self.members[i].1
    }

    pub fn key(&self, i: usize) -> &str {
        &self.members[i].0
    }

    pub fn members(&self) -> &[(String, BitSet)] {
        &self.members
    }
}

/// `perfect_independent(m)`: base `2^m`, members `A_i = { x : bit i of x = 1 }`.
/// Every Boolean combination of `k <= m` distinct members has exactly
/// `2^{m-k}` elements.
pub fn perfect_independent(m: usize) -> Result<SetFamily, FamilyError> {
    if m < 1 || m > 20 {
        return Err(FamilyError::ExponentOutOfRange(m));
    }
    let base = 1usize << m;
    let members = (0..m)
        .map(|i| {
            let set = BitSet::from_iter(base, (0..base).filter(|x| (x >> i) & 1 == 1));
            (format!("A{i}"), set)
        })
        .collect();
    Ok(SetFamily::new(base, members))
}

/// Tuning for the tiered verifiers.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Spaces of at most this many instances are enumerated exhaustively.
    pub budget: u128,
    /// Sample count used when the space exceeds the budget.
    pub samples: usize,
    /// Seed for the sampling stream (independent of family construction).
    pub sample_seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            budget: DEFAULT_ENUM_BUDGET,
            samples: DEFAULT_SAMPLES,
            sample_seed: 0x5eed_c0de,
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Number of signed combinations of 1..=d distinct members from a family of
/// size `n`: sum over k of C(n,k) * 2^k.
fn combination_count(n: usize, d: usize) -> u128 {
    (1..=d.min(n)).map(|k| binomial(n, k) << k).sum()
}

/// Evaluate one signed combination: members of `pos` intersected, members of
/// `neg` removed. `signs` bit i set means index `idxs[i]` is positive.
fn combo_size(family: &SetFamily, idxs: &[usize], signs: u32) -> usize {
    let mut cur = BitSet::full(family.base());
    for (i, &idx) in idxs.iter().enumerate() {
        if signs >> i & 1 == 1 {
            cur.intersect_with(family.member(idx));
        } else {
            cur.subtract_with(family.member(idx));
        }
    }
    cur.count()
}

fn combo_label(family: &SetFamily, idxs: &[usize], signs: u32) -> String {
    let pos: Vec<&str> = idxs
        .iter()
        .enumerate()
        .filter(|(i, _)| signs >> i & 1 == 1)
        .map(|(_, &idx)| family.key(idx))
        .collect();
    let neg: Vec<&str> = idxs
        .iter()
        .enumerate()
        .filter(|(i, _)| signs >> i & 1 == 0)
        .map(|(_, &idx)| family.key(idx))
        .collect();
    format!("F0={{{}}} F1={{{}}}", pos.join(","), neg.join(","))
}

/// Independence up to depth `d` with witness floor `s`: every combination of
/// `1..=d` distinct members (each taken positively or negatively) must keep
/// at least `s` base elements. Exhaustive when the space fits the budget,
/// uniformly sampled otherwise.
pub fn verify_independence(
    family: &SetFamily,
    d: usize,
    s: usize,
    opts: &VerifyOptions,
) -> VerifyReport {
    let total = combination_count(family.len(), d);
    // Exhaustive when the space fits the budget, and also when the sample
    // budget alone would cover the whole space (sampling a space smaller
    // than the sample count would just be a worse enumeration).
    let exhaustive = total <= opts.budget || total <= opts.samples as u128;
    let check = if exhaustive {
        verify_independence_exhaustive(family, d, s, total)
    } else {
        verify_independence_sampled(family, d, s, total, opts)
    };
    VerifyReport::from_checks(vec![check])
}

fn verify_independence_exhaustive(
    family: &SetFamily,
    d: usize,
    s: usize,
    total: u128,
) -> CheckResult {
    let name = "independence";
    let mut min_size = usize::MAX;
    let mut idxs: Vec<usize> = Vec::new();
    // Depth-first over k-subsets; signs enumerated per subset.
    fn rec(
        family: &SetFamily,
        d: usize,
        s: usize,
        start: usize,
        idxs: &mut Vec<usize>,
        min_size: &mut usize,
    ) -> Option<(Vec<usize>, u32, usize)> {
        if !idxs.is_empty() {
            for signs in 0..(1u32 << idxs.len()) {
                let size = combo_size(family, idxs, signs);
                *min_size = (*min_size).min(size);
                if size < s {
                    return Some((idxs.clone(), signs, size));
                }
            }
        }
        if idxs.len() == d {
            return None;
        }
        for next in start..family.len() {
            idxs.push(next);
            if let Some(w) = rec(family, d, s, next + 1, idxs, min_size) {
                return Some(w);
            }
            idxs.pop();
        }
        None
    }
    match rec(family, d, s, 0, &mut idxs, &mut min_size) {
        Some((idxs, signs, size)) => CheckResult::fail(
            name,
            CheckMode::Exhaustive,
            format!(
                "combination {} has {} elements, need >= {}",
                combo_label(family, &idxs, signs),
                size,
                s
            ),
        ),
        None => CheckResult::pass(
            name,
            CheckMode::Exhaustive,
            format!("all {total} combinations have >= {s} elements (min seen {min_size})"),
        ),
    }
}

fn verify_independence_sampled(
    family: &SetFamily,
    d: usize,
    s: usize,
    total: u128,
    opts: &VerifyOptions,
) -> CheckResult {
    let name = "independence";
    let mut rng = ChaCha8Rng::seed_from_u64(opts.sample_seed);
    let n = family.len();
    // Cumulative weights over k for uniform sampling across all combinations.
    let weights: Vec<u128> = (1..=d.min(n)).map(|k| binomial(n, k) << k).collect();
    let mut min_size = usize::MAX;
    for _ in 0..opts.samples {
        let mut x = rng.gen_range(0..total);
        let mut k = 1;
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                k = i + 1;
                break;
            }
            x -= w;
        }
        // k distinct indices by rejection (k is tiny relative to n).
        let mut idxs: Vec<usize> = Vec::with_capacity(k);
        while idxs.len() < k {
            let cand = rng.gen_range(0..n);
            if !idxs.contains(&cand) {
                idxs.push(cand);
            }
        }
        let signs: u32 = rng.gen_range(0..(1u32 << k));
        let size = combo_size(family, &idxs, signs);
        min_size = min_size.min(size);
        if size < s {
            return CheckResult::fail(
                name,
                CheckMode::Sampled {
                    samples: opts.samples,
                },
                format!(
                    "combination {} has {} elements, need >= {}",
                    combo_label(family, &idxs, signs),
                    size,
                    s
                ),
            );
        }
    }
    CheckResult::pass(
        name,
        CheckMode::Sampled {
            samples: opts.samples,
        },
        format!(
            "{} of {} combinations sampled, all >= {} elements (min seen {})",
            opts.samples, total, s, min_size
        ),
    )
}

/// Rewrite traces on the `{0..m_cap-1}` prefix so that every prefix pattern
/// is realized by at least `c` members. Members are shuffled into
/// `2^{m_cap}` round-robin blocks; nothing outside the prefix changes.
pub fn improve(
    family: &SetFamily,
    m_cap: usize,
    c: usize,
    seed: u64,
) -> Result<SetFamily, FamilyError> {
    let patterns = 1usize << m_cap;
    let need = c * patterns;
    if family.len() < need {
        return Err(FamilyError::FamilyTooSmall {
            size: family.len(),
            need,
        });
    }
    let mut order: Vec<usize> = (0..family.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut members = family.members().to_vec();
    for (slot, &idx) in order.iter().enumerate() {
        let pattern = slot % patterns;
        let row = &mut members[idx].1;
        for bit in 0..m_cap {
            if pattern >> bit & 1 == 1 {
                row.insert(bit);
            } else {
                row.remove(bit);
            }
        }
    }
    Ok(SetFamily::new(family.base(), members))
}

/// Exhaustive check that every prefix pattern `u ⊆ {0..m_cap-1}` is the
/// prefix trace of at least `c` members.
pub fn verify_improved(family: &SetFamily, m_cap: usize, c: usize) -> VerifyReport {
    let patterns = 1usize << m_cap;
    let mut counts = vec![0usize; patterns];
    for (_, row) in family.members() {
        let mut pat = 0usize;
        for bit in 0..m_cap {
            if row.contains(bit) {
                pat |= 1 << bit;
            }
        }
        counts[pat] += 1;
    }
    let check = match counts.iter().position(|&cnt| cnt < c) {
        Some(pat) => CheckResult::fail(
            "improved-multiplicity",
            CheckMode::Exhaustive,
            format!(
                "prefix pattern u={{{}}} realized by {} members, need >= {}",
                pattern_label(pat, m_cap),
                counts[pat],
                c
            ),
        ),
        None => CheckResult::pass(
            "improved-multiplicity",
            CheckMode::Exhaustive,
            format!(
                "all {} prefix patterns realized (min multiplicity {})",
                patterns,
                counts.iter().min().copied().unwrap_or(0)
            ),
        ),
    };
    VerifyReport::from_checks(vec![check])
}

fn pattern_label(pat: usize, width: usize) -> String {
    (0..width)
        .filter(|b| pat >> b & 1 == 1)
        .map(|b| b.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// The doubly-indexed family: `rows[alpha][n]` for `alpha < Lambda`,
/// `n <= W`, plus omega rows for `n <= W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoodSequence {
    params: TruncationParams,
    rows: Vec<Vec<BitSet>>,
    omega: Vec<BitSet>,
}

impl GoodSequence {
    pub fn params(&self) -> &TruncationParams {
        &self.params
    }

    pub fn row(&self, alpha: usize, n: usize) -> &BitSet {
        &self.rows[alpha][n]
    }

    pub fn omega_row(&self, n: usize) -> &BitSet {
        &self.omega[n]
    }

    pub fn residue(&self, alpha: usize) -> usize {
        self.params.residue(alpha)
    }

    /// All rows (ordinary then omega) as a keyed family over the base.
    pub fn all_rows_family(&self) -> SetFamily {
        let mut members = Vec::with_capacity((self.params.lambda + 1) * (self.params.w + 1));
        for (alpha, rows) in self.rows.iter().enumerate() {
            for (n, row) in rows.iter().enumerate() {
                members.push((format!("A[{alpha},{n}]"), row.clone()));
            }
        }
        for (n, row) in self.omega.iter().enumerate() {
            members.push((format!("A[omega,{n}]"), row.clone()));
        }
        SetFamily::new(self.params.n, members)
    }

    /// Retain only the ordinary indices in `kept` (ascending), reindexing
    /// residue-faithfully: kept indices are regrouped per residue class and
    /// interleaved so that the new index `alpha'` keeps `alpha' mod W` equal
    /// to the original residue. Requires equally many survivors per class.
    pub fn thin(&self, kept: &[usize], c_new: usize) -> Option<GoodSequence> {
        let w = self.params.w;
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); w];
        for &alpha in kept {
            per_class[alpha % w].push(alpha);
        }
        let k = per_class[0].len();
        if per_class.iter().any(|cls| cls.len() != k) || k == 0 {
            return None;
        }
        let mut rows = Vec::with_capacity(w * k);
        for rank in 0..k {
            for cls in per_class.iter() {
                rows.push(self.rows[cls[rank]].clone());
            }
        }
        let mut params = self.params;
        params.lambda = w * k;
        params.c = c_new;
        Some(GoodSequence {
            params,
            rows,
            omega: self.omega.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let doc = GoodSequenceDoc::from_sequence(self);
        serde_json::to_string_pretty(&doc).expect("sequence serializes")
    }

    pub fn from_json(text: &str) -> Result<GoodSequence, FamilyError> {
        let doc: GoodSequenceDoc = serde_json::from_str(text)
            .map_err(|e| FamilyError::BadParams(format!("malformed sequence document: {e}")))?;
        doc.into_sequence()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoodSequenceDoc {
    params: TruncationParams,
    rows: std::collections::BTreeMap<String, Vec<usize>>,
    omega: std::collections::BTreeMap<String, Vec<usize>>,
}

impl GoodSequenceDoc {
    fn from_sequence(g: &GoodSequence) -> Self {
        let mut rows = std::collections::BTreeMap::new();
        for (alpha, per_n) in g.rows.iter().enumerate() {
            for (n, row) in per_n.iter().enumerate() {
                rows.insert(format!("{alpha},{n}"), row.to_sorted_vec());
            }
        }
        let omega = g
            .omega
            .iter()
            .enumerate()
            .map(|(n, row)| (n.to_string(), row.to_sorted_vec()))
            .collect();
        GoodSequenceDoc {
            params: g.params,
            rows,
            omega,
        }
    }

    fn into_sequence(self) -> Result<GoodSequence, FamilyError> {
        self.params.validate()?;
        let p = self.params;
        let mut rows = vec![vec![BitSet::empty(p.n); p.w + 1]; p.lambda];
        let mut seen = vec![vec![false; p.w + 1]; p.lambda];
        for (key, elems) in &self.rows {
            let (alpha, n) = parse_row_key(key)?;
            if alpha >= p.lambda || n > p.w {
                return Err(FamilyError::BadParams(format!(
                    "row key {key} out of range (Lambda={}, W={})",
                    p.lambda, p.w
                )));
            }
            rows[alpha][n] = bits_from_sorted(p.n, key, elems)?;
            seen[alpha][n] = true;
        }
        if let Some((alpha, n)) = seen
            .iter()
            .enumerate()
            .flat_map(|(a, per_n)| per_n.iter().enumerate().map(move |(n, s)| (a, n, *s)))
            .find(|&(_, _, s)| !s)
            .map(|(a, n, _)| (a, n))
        {
            return Err(FamilyError::BadParams(format!("missing row {alpha},{n}")));
        }
        let mut omega = vec![BitSet::empty(p.n); p.w + 1];
        let mut seen = vec![false; p.w + 1];
        for (key, elems) in &self.omega {
            let n: usize = key
                .parse()
                .map_err(|_| FamilyError::BadParams(format!("bad omega key {key}")))?;
            if n > p.w {
                return Err(FamilyError::BadParams(format!(
                    "omega key {n} out of range (W={})",
                    p.w
                )));
            }
            omega[n] = bits_from_sorted(p.n, key, elems)?;
            seen[n] = true;
        }
        if let Some(n) = seen.iter().position(|s| !s) {
            return Err(FamilyError::BadParams(format!("missing omega row {n}")));
        }
        Ok(GoodSequence {
            params: p,
            rows,
            omega,
        })
    }
}

fn parse_row_key(key: &str) -> Result<(usize, usize), FamilyError> {
    let mut it = key.split(',');
    let bad = || FamilyError::BadParams(format!("bad row key {key:?}, expected \"alpha,n\""));
    let alpha = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let n = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    if it.next().is_some() {
        return Err(bad());
    }
    Ok((alpha, n))
}

fn bits_from_sorted(base: usize, key: &str, elems: &[usize]) -> Result<BitSet, FamilyError> {
    for w in elems.windows(2) {
        if w[1] <= w[0] {
            return Err(FamilyError::BadParams(format!(
                "row {key} element list not strictly ascending"
            )));
        }
    }
    if let Some(&e) = elems.iter().find(|&&e| e >= base) {
        return Err(FamilyError::BadParams(format!(
            "row {key} element {e} out of base range {base}"
        )));
    }
    Ok(BitSet::from_iter(base, elems.iter().copied()))
}

fn splitmix(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Build a verified [`GoodSequence`]: bit-defined omega rows, seeded random
/// ordinary rows, and a round-robin prefix-trace schedule per residue class
/// so the multiplicity condition holds by construction. Reseeds and retries
/// on verification failure.
pub fn build_good_sequence(p: &TruncationParams) -> Result<GoodSequence, FamilyError> {
    build_good_sequence_with(p, &VerifyOptions::default())
}

pub fn build_good_sequence_with(
    p: &TruncationParams,
    opts: &VerifyOptions,
) -> Result<GoodSequence, FamilyError> {
    p.validate()?;
    let attempts = p.retries.max(1);
    let mut last: Option<VerifyReport> = None;
    for attempt in 0..attempts {
        let g = generate_candidate(p, splitmix(p.seed, attempt as u64));
        let report = verify_good_sequence_with(&g, p, opts);
        if report.pass {
            return Ok(g);
        }
        last = Some(report);
    }
    let report = last.expect("at least one attempt");
    let last_failure = report
        .first_failure()
        .map(|c| format!("{}: {}", c.name, c.detail))
        .unwrap_or_else(|| "unknown".to_string());
    Err(FamilyError::RetriesExhausted {
        attempts,
        last_failure,
        report: Box::new(report),
    })
}

fn generate_candidate(p: &TruncationParams, seed: u64) -> GoodSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega: Vec<BitSet> = (0..=p.w)
        .map(|n| BitSet::from_iter(p.n, (0..p.n).filter(|i| i >> n & 1 == 1)))
        .collect();
    let mut rows: Vec<Vec<BitSet>> = (0..p.lambda)
        .map(|_| {
            (0..=p.w)
                .map(|_| BitSet::from_iter(p.n, (0..p.n).filter(|_| rng.gen::<bool>())))
                .collect()
        })
        .collect();
    // Round-robin prefix-trace schedule: within each residue class (slots in
    // ascending alpha order), slot r realizes tuple r mod 2^{m_cap * n_cap}.
    let tuple_count = 1usize << (p.m_cap * p.n_cap);
    for k in 0..p.w {
        let class: Vec<usize> = (0..p.lambda).filter(|a| a % p.w == k).collect();
        for (slot, &alpha) in class.iter().enumerate() {
            let tuple = slot % tuple_count;
            for l in 0..p.n_cap {
                let pattern = tuple >> (l * p.m_cap) & ((1 << p.m_cap) - 1);
                for bit in 0..p.m_cap {
                    if pattern >> bit & 1 == 1 {
                        rows[alpha][l].insert(bit);
                    } else {
                        rows[alpha][l].remove(bit);
                    }
                }
            }
        }
    }
    GoodSequence {
        params: *p,
        rows,
        omega,
    }
}

/// The five-condition verifier. Check names: `independence`, `injective`,
/// `trace-multiplicity` (prefix), `trace-positions` (arbitrary position sets
/// of size <= t), `separation` (omega rows split every base pair).
pub fn verify_good_sequence(g: &GoodSequence, p: &TruncationParams) -> VerifyReport {
    verify_good_sequence_with(g, p, &VerifyOptions::default())
}

pub fn verify_good_sequence_with(
    g: &GoodSequence,
    p: &TruncationParams,
    opts: &VerifyOptions,
) -> VerifyReport {
    let mut checks = Vec::with_capacity(5);
    let family = g.all_rows_family();
    checks.extend(verify_independence(&family, p.d, p.s, opts).checks);
    checks.push(check_injective(&family));
    checks.push(check_trace_multiplicity(g, p));
    checks.push(check_trace_positions(g, p, opts));
    checks.push(check_separation(g, p));
    VerifyReport::from_checks(checks)
}

fn check_injective(family: &SetFamily) -> CheckResult {
    let name = "injective";
    let mut seen: HashMap<&BitSet, usize> = HashMap::with_capacity(family.len());
    for i in 0..family.len() {
        if let Some(&j) = seen.get(family.member(i)) {
            return CheckResult::fail(
                name,
                CheckMode::Exhaustive,
                format!("rows {} and {} are equal as sets", family.key(j), family.key(i)),
            );
        }
        seen.insert(family.member(i), i);
    }
    CheckResult::pass(
        name,
        CheckMode::Exhaustive,
        format!("{} rows pairwise distinct", family.len()),
    )
}

/// Condition over the `{0..m_cap-1}` prefix: for every residue `k < W`,
/// every `n <= n_cap`, and every tuple of prefix patterns `(u_0..u_{n-1})`,
/// at least `c` ordinary indices of residue `k` realize the tuple on their
/// first `n` rows.
fn check_trace_multiplicity(g: &GoodSequence, p: &TruncationParams) -> CheckResult {
    let name = "trace-multiplicity";
    let mut min_count = usize::MAX;
    for k in 0..p.w {
        let class: Vec<usize> = (0..p.lambda).filter(|a| a % p.w == k).collect();
        for n in 0..=p.n_cap {
            let tuples = 1usize << (p.m_cap * n);
            for tuple in 0..tuples {
                let count = class
                    .iter()
                    .filter(|&&alpha| {
                        (0..n).all(|l| {
                            let pattern = tuple >> (l * p.m_cap) & ((1 << p.m_cap) - 1);
                            prefix_trace(g.row(alpha, l), p.m_cap) == pattern
                        })
                    })
                    .count();
                min_count = min_count.min(count);
                if count < p.c {
                    return CheckResult::fail(
                        name,
                        CheckMode::Exhaustive,
                        format!(
                            "residue {k}, {n} constrained rows, tuple {:?}: {count} witnesses, need >= {}",
                            tuple_patterns(tuple, p.m_cap, n),
                            p.c
                        ),
                    );
                }
            }
        }
    }
    CheckResult::pass(
        name,
        CheckMode::Exhaustive,
        format!("min witness multiplicity {min_count} (need >= {})", p.c),
    )
}

fn prefix_trace(row: &BitSet, m_cap: usize) -> usize {
    (0..m_cap).filter(|&b| row.contains(b)).fold(0, |acc, b| acc | 1 << b)
}

fn tuple_patterns(tuple: usize, m_cap: usize, n: usize) -> Vec<String> {
    (0..n)
        .map(|l| pattern_label(tuple >> (l * m_cap) & ((1 << m_cap) - 1), m_cap))
        .collect()
}

/// Generalized trace condition: the prefix is replaced by an arbitrary
/// position set `T` with `|T| <= t`, and patterns are subsets of `T`.
fn check_trace_positions(
    g: &GoodSequence,
    p: &TruncationParams,
    opts: &VerifyOptions,
) -> CheckResult {
    let name = "trace-positions";
    // Space size: residues * position sets (|T| <= t) * tuples over T.
    let mut position_sets: u128 = 0;
    for j in 0..=p.t {
        position_sets += binomial(p.n, j);
    }
    let tuples_bound: u128 = (1u128 << (p.t * p.n_cap)).max(1);
    let space = p.w as u128 * position_sets * tuples_bound;
    let classes: Vec<Vec<usize>> = (0..p.w)
        .map(|k| (0..p.lambda).filter(|a| a % p.w == k).collect())
        .collect();

    let eval = |k: usize, positions: &[usize], n: usize, tuple: usize| -> usize {
        classes[k]
            .iter()
            .filter(|&&alpha| {
                (0..n).all(|l| {
                    let want = tuple >> (l * positions.len()) & ((1 << positions.len()) - 1);
                    positions.iter().enumerate().all(|(bi, &pos)| {
                        g.row(alpha, l).contains(pos) == (want >> bi & 1 == 1)
                    })
                })
            })
            .count()
    };
    let describe = |k: usize, positions: &[usize], n: usize, tuple: usize, count: usize| {
        format!(
            "residue {k}, positions {positions:?}, {n} constrained rows, tuple bits {tuple:#b}: {count} witnesses, need >= {}",
            p.c
        )
    };

    if space <= opts.budget {
        let mut min_count = usize::MAX;
        let mut stack: Vec<Vec<usize>> = vec![vec![]];
        // Enumerate position sets of size <= t.
        let mut all_sets: Vec<Vec<usize>> = Vec::new();
        while let Some(cur) = stack.pop() {
            all_sets.push(cur.clone());
            if cur.len() < p.t {
                let start = cur.last().map(|&x| x + 1).unwrap_or(0);
                for next in start..p.n {
                    let mut ext = cur.clone();
                    ext.push(next);
                    stack.push(ext);
                }
            }
        }
        for k in 0..p.w {
            for positions in &all_sets {
                for n in 0..=p.n_cap {
                    let tuples = 1usize << (positions.len() * n);
                    for tuple in 0..tuples {
                        let count = eval(k, positions, n, tuple);
                        min_count = min_count.min(count);
                        if count < p.c {
                            return CheckResult::fail(
                                name,
                                CheckMode::Exhaustive,
                                describe(k, positions, n, tuple, count),
                            );
                        }
                    }
                }
            }
        }
        CheckResult::pass(
            name,
            CheckMode::Exhaustive,
            format!("min witness multiplicity {min_count} (need >= {})", p.c),
        )
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.sample_seed ^ 0x7ace);
        let mut min_count = usize::MAX;
        for _ in 0..opts.samples {
            let k = rng.gen_range(0..p.w);
            let j = rng.gen_range(0..=p.t);
            let mut positions: Vec<usize> = Vec::with_capacity(j);
            while positions.len() < j {
                let cand = rng.gen_range(0..p.n);
                if !positions.contains(&cand) {
                    positions.push(cand);
                }
            }
            positions.sort_unstable();
            let n = rng.gen_range(0..=p.n_cap);
            let tuples = 1usize << (positions.len() * n);
            let tuple = rng.gen_range(0..tuples);
            let count = eval(k, &positions, n, tuple);
            min_count = min_count.min(count);
            if count < p.c {
                return CheckResult::fail(
                    name,
                    CheckMode::Sampled {
                        samples: opts.samples,
                    },
                    describe(k, &positions, n, tuple, count),
                );
            }
        }
        CheckResult::pass(
            name,
            CheckMode::Sampled {
                samples: opts.samples,
            },
            format!("min witness multiplicity {min_count} (need >= {})", p.c),
        )
    }
}

/// Every base pair `i < j` must be split by some omega row.
fn check_separation(g: &GoodSequence, p: &TruncationParams) -> CheckResult {
    let name = "separation";
    // Signature of i = its membership bits across omega rows; pairs are
    // separated iff signatures are pairwise distinct.
    let mut sigs: Vec<(u64, usize)> = (0..p.n)
        .map(|i| {
            let sig = (0..=p.w)
                .filter(|&n| g.omega_row(n).contains(i))
                .fold(0u64, |acc, n| acc | 1 << n);
            (sig, i)
        })
        .collect();
    sigs.sort_unstable();
    for w in sigs.windows(2) {
        if w[0].0 == w[1].0 {
            let (i, j) = (w[0].1.min(w[1].1), w[0].1.max(w[1].1));
            return CheckResult::fail(
                name,
                CheckMode::Exhaustive,
                format!("no omega row separates base elements {i} and {j}"),
            );
        }
    }
    CheckResult::pass(
        name,
        CheckMode::Exhaustive,
        format!("all {} base pairs separated", p.n * (p.n - 1) / 2),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_family_shape() {
        let f = perfect_independent(2).unwrap();
        assert_eq!(f.base(), 4);
        assert_eq!(f.member(0).to_sorted_vec(), vec![1, 3]);
        assert_eq!(f.member(1).to_sorted_vec(), vec![2, 3]);
        assert!(perfect_independent(0).is_err());
        assert!(perfect_independent(21).is_err());
    }

    #[test]
    fn perfect_family_exact_combination_counts() {
        for m in 1..=4 {
            let f = perfect_independent(m).unwrap();
            // every combination of k distinct members has exactly 2^{m-k} elements
            fn rec(f: &SetFamily, m: usize, start: usize, idxs: &mut Vec<usize>) {
                if !idxs.is_empty() {
                    for signs in 0..(1u32 << idxs.len()) {
                        assert_eq!(
                            combo_size(f, idxs, signs),
                            1usize << (m - idxs.len()),
                            "m={m} idxs={idxs:?} signs={signs}"
                        );
                    }
                }
                if idxs.len() == m {
                    return;
                }
                for next in start..f.len() {
                    idxs.push(next);
                    rec(f, m, next + 1, idxs);
                    idxs.pop();
                }
            }
            rec(&f, m, 0, &mut Vec::new());
        }
    }

    #[test]
    fn perfect_passes_verify() {
        let f = perfect_independent(3).unwrap();
        let r = verify_independence(&f, 3, 1, &VerifyOptions::default());
        assert!(r.pass);
        assert_eq!(r.checks[0].mode, CheckMode::Exhaustive);
    }

    #[test]
    fn near_duplicate_family_fails_with_witness() {
        let a = BitSet::from_iter(3, [0, 1]);
        let b = BitSet::from_iter(3, [0, 1]);
        let f = SetFamily::new(3, vec![("A".into(), a), ("B".into(), b)]);
        let r = verify_independence(&f, 2, 1, &VerifyOptions::default());
        assert!(!r.pass);
        let c = r.first_failure().unwrap();
        assert!(c.detail.contains("F0={A} F1={B}") || c.detail.contains("F0={B} F1={A}"));
    }

    #[test]
    fn improve_realizes_all_prefixes_and_preserves_tail() {
        let mut members = Vec::new();
        for i in 0..8 {
            members.push((
                format!("S{i}"),
                BitSet::from_iter(6, (0..6).filter(|x| (i >> (x % 3)) & 1 == 1)),
            ));
        }
        let f = SetFamily::new(6, members);
        let improved = improve(&f, 1, 2, 42).unwrap();
        assert!(verify_improved(&improved, 1, 2).pass);
        assert_eq!(improved.len(), f.len());
        assert_eq!(improved.base(), f.base());
        for i in 0..f.len() {
            for pos in 1..6 {
                assert_eq!(improved.member(i).contains(pos), f.member(i).contains(pos));
            }
        }
        // too small
        assert!(matches!(
            improve(&f, 2, 3, 0),
            Err(FamilyError::FamilyTooSmall { .. })
        ));
    }

    #[test]
    fn verify_improved_edge_cases() {
        let f = SetFamily::new(2, vec![("E".into(), BitSet::empty(2))]);
        // m_cap = 0: single vacuous pattern, passes iff |F| >= c
        assert!(verify_improved(&f, 0, 1).pass);
        assert!(!verify_improved(&f, 0, 2).pass);
        // the empty set fails u = {0}
        let r = verify_improved(&f, 1, 1);
        assert!(!r.pass);
    }

    #[test]
    fn omega_rows_are_bit_rows() {
        let mut p = TruncationParams::small();
        p.n = 8;
        p.w = 2;
        p.lambda = 4;
        p.c = 1;
        p.m_cap = 1;
        // candidate construction alone: the omega rows are deterministic
        let g = generate_candidate(&p, 1);
        assert_eq!(g.omega_row(0).to_sorted_vec(), vec![1, 3, 5, 7]);
        assert_eq!(g.omega_row(1).to_sorted_vec(), vec![2, 3, 6, 7]);
        assert_eq!(g.omega_row(2).to_sorted_vec(), vec![4, 5, 6, 7]);
    }

    #[test]
    fn small_params_build_and_reproduce() {
        let p = TruncationParams::small();
        let g1 = build_good_sequence(&p).unwrap();
        let g2 = build_good_sequence(&p).unwrap();
        assert_eq!(g1, g2);
        let report = verify_good_sequence(&g1, &p);
        assert!(report.pass, "{}", report.to_json());
        assert_eq!(report.checks.len(), 5);
    }

    #[test]
    fn equal_rows_fail_injectivity() {
        let p = TruncationParams::small();
        let mut g = build_good_sequence(&p).unwrap();
        g.rows[3] = g.rows[8].clone();
        let report = verify_good_sequence(&g, &p);
        let inj = report.check("injective").unwrap();
        assert!(!inj.pass);
        assert!(inj.detail.contains("equal as sets"));
    }

    #[test]
    fn separation_needs_enough_omega_rows() {
        // N = 64 with W = 3: 4 bit rows cannot separate 64 elements.
        let p = TruncationParams {
            n: 64,
            w: 3,
            lambda: 12,
            c: 1,
            d: 2,
            s: 1,
            m_cap: 1,
            n_cap: 1,
            t: 1,
            seed: 1,
            retries: 2,
        };
        let g = generate_candidate(&p, 1);
        let report = verify_good_sequence(&g, &p);
        let sep = report.check("separation").unwrap();
        assert!(!sep.pass);
        // ... and bit 4 collides 0 with 16 specifically
        assert!(sep.detail.contains("0 and 16"));
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = TruncationParams::small();
        p.w = 1;
        assert!(matches!(
            build_good_sequence(&p),
            Err(FamilyError::BadParams(_))
        ));
        let mut p = TruncationParams::small();
        p.lambda = 21; // W = 5 does not divide 21
        assert!(matches!(
            build_good_sequence(&p),
            Err(FamilyError::BadParams(_))
        ));
    }

    #[test]
    fn retries_exhausted_reports_failing_check() {
        // Separation is impossible: N > 2^{W+1}.
        let p = TruncationParams {
            n: 64,
            w: 3,
            lambda: 12,
            c: 1,
            d: 2,
            s: 1,
            m_cap: 1,
            n_cap: 1,
            t: 1,
            seed: 1,
            retries: 2,
        };
        match build_good_sequence(&p) {
            Err(FamilyError::RetriesExhausted {
                attempts,
                last_failure,
                report,
            }) => {
                assert_eq!(attempts, 2);
                assert!(!report.pass);
                assert!(
                    last_failure.contains("independence") || last_failure.contains("separation"),
                    "unexpected failure: {last_failure}"
                );
            }
            other => panic!("expected RetriesExhausted, got {other:?}"),
        }
    }

    #[test]
    fn sequence_json_round_trip() {
        let p = TruncationParams::small();
        let g = build_good_sequence(&p).unwrap();
        let text = g.to_json();
        let back = GoodSequence::from_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn trace_monotonicity_in_caps() {
        // A sequence passing at (m_cap, n_cap, c) passes at all smaller caps.
        let p = TruncationParams::small();
        let g = build_good_sequence(&p).unwrap();
        for m_cap in 0..=p.m_cap {
            for n_cap in 0..=p.n_cap {
                for c in 1..=p.c {
                    let mut weaker = p;
                    weaker.m_cap = m_cap;
                    weaker.n_cap = n_cap;
                    weaker.c = c;
                    let r = verify_good_sequence(&g, &weaker);
                    let check = r.check("trace-multiplicity").unwrap();
                    assert!(check.pass, "failed at m_cap={m_cap} n_cap={n_cap} c={c}");
                }
            }
        }
    }
}
