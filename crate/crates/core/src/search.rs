//! Automorphism counting, rigidity, isomorphism search, and the pairwise
//! census over index-restricted structures.
//!
//! The engine is a complete backtracking search over sort- and
//! relation-preserving bijections. Iterated color refinement supplies the
//! candidate pruning (sound: isomorphisms preserve refinement colors);
//! correctness rests on the incremental atomic checks at every placement,
//! not on the refinement.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitSet;
use crate::families::GoodSequence;
use crate::models::{build_mz, is_robust, BuildError, BuiltStructure, IndexSet, Role};
use crate::refine::{class_size_multiset, joint_colors};
use crate::report::{CheckMode, CheckResult, VerifyReport};
use crate::structure::{PartialMap, Structure};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("structure has no distinguished point")]
    MissingDistinguishedPoint,
    #[error("index set {index} is not robust at multiplicity {c_req}")]
    NotRobust { index: usize, c_req: usize },
    #[error("index set {index} must include the distinguished point")]
    OmegaRequired { index: usize },
    #[error("build error: {0}")]
    Build(#[from] BuildError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub nodes: u64,
    pub prunes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutCount {
    Exact(u64),
    /// The count reached the caller's limit and the search stopped.
    LimitExceeded(u64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutReport {
    pub count: AutCount,
    /// First non-identity automorphism found, as an image table.
    pub nontrivial_witness: Option<Vec<usize>>,
    pub stats: SearchStats,
}

struct Adjacency {
    rels: Vec<Vec<BitSet>>,
    q: BitSet,
}

impl Adjacency {
    fn new(s: &Structure) -> Self {
        let domain = s.domain_size();
        let mut rels = vec![vec![BitSet::empty(domain); domain]; s.rel_count()];
        for (n, rel) in s.rels().iter().enumerate() {
            for &(x, y) in rel {
                rels[n][x].insert(y);
                rels[n][y].insert(x);
            }
        }
        Adjacency {
            rels,
            q: BitSet::from_iter(domain, s.q().iter().copied()),
        }
    }

    fn related(&self, n: usize, x: usize, y: usize) -> bool {
        self.rels[n][x].contains(y)
    }
}

struct BijectionSearch<'a> {
    src: &'a Adjacency,
    dst: &'a Adjacency,
    rel_count: usize,
    order: Vec<usize>,
    src_colors: &'a [usize],
    dst_by_color: BTreeMap<usize, Vec<usize>>,
    stats: SearchStats,
}

enum Visit {
    Continue,
    Stop,
}

impl<'a> BijectionSearch<'a> {
    fn new(
        s: &Structure,
        t: &Structure,
        src: &'a Adjacency,
        dst: &'a Adjacency,
        colors: &'a [Vec<usize>],
    ) -> Self {
        // Most-constrained-first: ascending color class size on the source side.
        let sizes = class_size_multiset(&colors[0]);
        let mut order: Vec<usize> = (0..s.domain_size()).collect();
        order.sort_by_key(|&x| (sizes[&colors[0][x]], colors[0][x], x));
        let mut dst_by_color: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (y, &c) in colors[1].iter().enumerate() {
            dst_by_color.entry(c).or_default().push(y);
        }
        let _ = t;
        BijectionSearch {
            src,
            dst,
            rel_count: s.rel_count(),
            order,
            src_colors: &colors[0],
            dst_by_color,
            stats: SearchStats { nodes: 0, prunes: 0 },
        }
    }

    fn consistent(&self, placed: &[(usize, usize)], x: usize, y: usize) -> bool {
        if self.src.q.contains(x) != self.dst.q.contains(y) {
            return false;
        }
        for &(u, v) in placed {
            for n in 0..self.rel_count {
                if self.src.related(n, x, u) != self.dst.related(n, y, v) {
                    return false;
                }
            }
        }
        true
    }

    /// Depth-first over complete bijections; `visit` decides whether to keep
    /// searching after each one found.
    fn run<F: FnMut(&[(usize, usize)]) -> Visit>(&mut self, visit: &mut F) {
        let mut placed: Vec<(usize, usize)> = Vec::with_capacity(self.order.len());
        let mut used = BitSet::empty(self.dst.q.len());
        self.rec(0, &mut placed, &mut used, visit);
    }

    fn rec<F: FnMut(&[(usize, usize)]) -> Visit>(
        &mut self,
        depth: usize,
        placed: &mut Vec<(usize, usize)>,
        used: &mut BitSet,
        visit: &mut F,
    ) -> Visit {
        if depth == self.order.len() {
            return visit(placed);
        }
        let x = self.order[depth];
        let color = self.src_colors[x];
        let candidates = match self.dst_by_color.get(&color) {
            Some(c) => c.clone(),
            None => return Visit::Continue,
        };
        for y in candidates {
            if used.contains(y) {
                continue;
            }
            self.stats.nodes += 1;
            if !self.consistent(placed, x, y) {
                self.stats.prunes += 1;
                continue;
            }
            placed.push((x, y));
            used.insert(y);
            let outcome = self.rec(depth + 1, placed, used, visit);
            placed.pop();
            used.remove(y);
            if matches!(outcome, Visit::Stop) {
                return Visit::Stop;
            }
        }
        Visit::Continue
    }
}

/// Count automorphisms exactly, stopping once the count would exceed
/// `limit` (0 = unlimited). The first non-identity automorphism found is
/// reported as a witness.
pub fn automorphisms(s: &Structure, limit: u64) -> AutReport {
    let colors = joint_colors(&[s, s]);
    let adj = Adjacency::new(s);
    let mut search = BijectionSearch::new(s, s, &adj, &adj, &colors);
    let mut count: u64 = 0;
    let mut witness: Option<Vec<usize>> = None;
    let mut exceeded = false;
    search.run(&mut |placed| {
        count += 1;
        if witness.is_none() && placed.iter().any(|&(x, y)| x != y) {
            let mut image = vec![0usize; placed.len()];
            for &(x, y) in placed {
                image[x] = y;
            }
            witness = Some(image);
        }
        if limit != 0 && count > limit {
            exceeded = true;
            return Visit::Stop;
        }
        Visit::Continue
    });
    AutReport {
        count: if exceeded {
            AutCount::LimitExceeded(count)
        } else {
            AutCount::Exact(count)
        },
        nontrivial_witness: witness,
        stats: search.stats,
    }
}

/// Every automorphism up to `cap` of them, as image tables.
pub fn list_automorphisms(s: &Structure, cap: usize) -> Vec<Vec<usize>> {
    let colors = joint_colors(&[s, s]);
    let adj = Adjacency::new(s);
    let mut search = BijectionSearch::new(s, s, &adj, &adj, &colors);
    let mut out = Vec::new();
    search.run(&mut |placed| {
        let mut image = vec![0usize; placed.len()];
        for &(x, y) in placed {
            image[x] = y;
        }
        out.push(image);
        if out.len() >= cap {
            Visit::Stop
        } else {
            Visit::Continue
        }
    });
    out
}

/// A structure is rigid when its only automorphism is the identity.
pub fn is_rigid(s: &Structure) -> bool {
    matches!(automorphisms(s, 2).count, AutCount::Exact(1))
}

/// Exact isomorphism search; returns a witness map if one exists.
pub fn isomorphic(s: &Structure, t: &Structure) -> Option<PartialMap> {
    // Negative fast paths: all isomorphism-invariant.
    if s.domain_size() != t.domain_size()
        || s.rel_count() != t.rel_count()
        || s.p().len() != t.p().len()
        || s.q().len() != t.q().len()
    {
        return None;
    }
    for n in 0..s.rel_count() {
        if s.rel(n).len() != t.rel(n).len() {
            return None;
        }
    }
    let colors = joint_colors(&[s, t]);
    // Joint refinement gives matching elements matching colors, so the
    // per-color counts must agree exactly.
    if class_size_multiset(&colors[0]) != class_size_multiset(&colors[1]) {
        return None;
    }
    let src_adj = Adjacency::new(s);
    let dst_adj = Adjacency::new(t);
    let mut search = BijectionSearch::new(s, t, &src_adj, &dst_adj, &colors);
    let mut found: Option<PartialMap> = None;
    search.run(&mut |placed| {
        found = Some(PartialMap::from_pairs(placed.iter().copied()).expect("bijection"));
        Visit::Stop
    });
    found
}

/// The three per-step checks behind rigidity of structures containing the
/// distinguished point:
/// * `unique-always-active`: the distinguished point is the only `P`
///   element active in every relation;
/// * `base-separation`: its rows split every pair of base points;
/// * `row-zero-distinct`: ordinary points have pairwise distinct `R_0` rows.
pub fn rigidity_lemmas(m: &BuiltStructure, g: &GoodSequence) -> Result<VerifyReport, SearchError> {
    let omega = m.omega_id().ok_or(SearchError::MissingDistinguishedPoint)?;
    let s = &m.structure;
    let rel_count = s.rel_count();
    let _ = g; // residue data is implicit in the built layout
    let mut checks = Vec::with_capacity(3);

    // L1: unique always-active P element.
    let always_active: Vec<usize> = s
        .p()
        .iter()
        .copied()
        .filter(|&c| (0..rel_count).all(|n| s.rel(n).iter().any(|&(_, y)| y == c)))
        .collect();
    checks.push(if always_active == vec![omega] {
        CheckResult::pass(
            "unique-always-active",
            CheckMode::Exhaustive,
            format!("only id {omega} is active in all {rel_count} relations"),
        )
    } else {
        CheckResult::fail(
            "unique-always-active",
            CheckMode::Exhaustive,
            format!("always-active P elements: {always_active:?}, expected exactly [{omega}]"),
        )
    });

    // L2: the distinguished point's rows separate the base block.
    let b_ids = m.b_ids();
    let mut sigs: Vec<(u64, usize)> = b_ids
        .iter()
        .map(|&b| {
            let sig = (0..rel_count)
                .filter(|&n| s.has(n, b, omega))
                .fold(0u64, |acc, n| acc | 1 << n);
            (sig, b)
        })
        .collect();
    sigs.sort_unstable();
    let collision = sigs.windows(2).find(|w| w[0].0 == w[1].0);
    checks.push(match collision {
        None => CheckResult::pass(
            "base-separation",
            CheckMode::Exhaustive,
            format!("all {} base pairs split by the distinguished rows", b_ids.len()),
        ),
        Some(w) => CheckResult::fail(
            "base-separation",
            CheckMode::Exhaustive,
            format!(
                "base ids {} and {} agree on every distinguished row",
                w[0].1.min(w[1].1),
                w[0].1.max(w[1].1)
            ),
        ),
    });

    // L3: ordinary points are told apart by their R_0 rows.
    let mut rows: Vec<(Vec<usize>, usize)> = m
        .layout
        .iter()
        .filter(|(_, r)| matches!(r, Role::C(_)))
        .map(|(&c, _)| {
            let row: Vec<usize> = s
                .rel(0)
                .iter()
                .filter(|&&(_, y)| y == c)
                .map(|&(x, _)| x)
                .collect();
            (row, c)
        })
        .collect();
    rows.sort();
    let collision = rows.windows(2).find(|w| w[0].0 == w[1].0);
    checks.push(match collision {
        None => CheckResult::pass(
            "row-zero-distinct",
            CheckMode::Exhaustive,
            format!("{} ordinary rows pairwise distinct", rows.len()),
        ),
        Some(w) => CheckResult::fail(
            "row-zero-distinct",
            CheckMode::Exhaustive,
            format!("ids {} and {} have identical R_0 rows", w[0].1, w[1].1),
        ),
    });

    Ok(VerifyReport::from_checks(checks))
}

/// Pairwise isomorphism verdicts over index-restricted structures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusResult {
    /// Domain sizes of the built structures, in input order.
    pub sizes: Vec<usize>,
    pub verdicts: Vec<Vec<bool>>,
    /// Witness maps for the isomorphic pairs, keyed `"i,j"`.
    pub witnesses: BTreeMap<String, PartialMap>,
}

impl CensusResult {
    pub fn off_diagonal_all_nonisomorphic(&self) -> bool {
        self.verdicts
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| (i == j) == v))
    }
}

/// Build the restriction for each robust index set (all must include the
/// distinguished point) and decide isomorphism for every pair. Cells run in
/// parallel; the output ordering is deterministic.
pub fn census(
    g: &GoodSequence,
    zs: &[IndexSet],
    c_req: usize,
) -> Result<CensusResult, SearchError> {
    for (index, z) in zs.iter().enumerate() {
        if !z.include_omega {
            return Err(SearchError::OmegaRequired { index });
        }
        if !is_robust(z, g, c_req) {
            return Err(SearchError::NotRobust { index, c_req });
        }
    }
    let built: Vec<BuiltStructure> = zs
        .iter()
        .map(|z| build_mz(g, z))
        .collect::<Result<_, _>>()?;
    let n = built.len();
    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .collect();
    let outcomes: Vec<((usize, usize), Option<PartialMap>)> = cells
        .par_iter()
        .map(|&(i, j)| ((i, j), isomorphic(&built[i].structure, &built[j].structure)))
        .collect();
    let mut verdicts = vec![vec![false; n]; n];
    let mut witnesses = BTreeMap::new();
    for ((i, j), outcome) in outcomes {
        let v = outcome.is_some();
        verdicts[i][j] = v;
        verdicts[j][i] = v;
        if let Some(map) = outcome {
            witnesses.insert(format!("{i},{j}"), map);
        }
    }
    Ok(CensusResult {
        sizes: built.iter().map(|b| b.structure.domain_size()).collect(),
        verdicts,
        witnesses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{build_good_sequence, TruncationParams};
    use crate::game::partial_iso_check;
    use crate::structure::{rigid_sample, Structure, Vocabulary};
    use std::collections::BTreeSet;

    #[test]
    fn rigid_sample_has_one_automorphism() {
        let s = rigid_sample();
        let report = automorphisms(&s, 0);
        assert_eq!(report.count, AutCount::Exact(1));
        assert!(report.nontrivial_witness.is_none());
        assert!(is_rigid(&s));
    }

    #[test]
    fn two_swappable_points() {
        let s = Structure::new(
            "swap",
            Vocabulary::binary(1).unwrap(),
            2,
            BTreeSet::new(),
            BTreeSet::from([0, 1]),
            vec![BTreeSet::new()],
        )
        .unwrap();
        let report = automorphisms(&s, 0);
        assert_eq!(report.count, AutCount::Exact(2));
        assert_eq!(report.nontrivial_witness, Some(vec![1, 0]));
        assert!(!is_rigid(&s));
        // limit cuts the search short
        let report = automorphisms(&s, 1);
        assert!(matches!(report.count, AutCount::LimitExceeded(_)));
    }

    #[test]
    fn automorphism_group_closure_spot_check() {
        // 3 free Q points: S_3, order 6
        let s = Structure::new(
            "free3",
            Vocabulary::binary(1).unwrap(),
            3,
            BTreeSet::new(),
            BTreeSet::from([0, 1, 2]),
            vec![BTreeSet::new()],
        )
        .unwrap();
        let all = list_automorphisms(&s, 24);
        assert_eq!(all.len(), 6);
        let set: std::collections::HashSet<Vec<usize>> = all.iter().cloned().collect();
        for a in &all {
            for b in &all {
                let composed: Vec<usize> = (0..3).map(|x| a[b[x]]).collect();
                assert!(set.contains(&composed));
            }
            let mut inverse = vec![0; 3];
            for (x, &y) in a.iter().enumerate() {
                inverse[y] = x;
            }
            assert!(set.contains(&inverse));
        }
    }

    #[test]
    fn isomorphic_finds_relabelings() {
        let s = rigid_sample();
        // identity case
        let map = isomorphic(&s, &s).unwrap();
        assert!(partial_iso_check(&s, &s, &map).unwrap());
        assert_eq!(map.len(), s.domain_size());
        // a relabeled copy
        let t = Structure::new(
            "relabeled",
            Vocabulary::binary(1).unwrap(),
            3,
            BTreeSet::from([0]),
            BTreeSet::from([1, 2]),
            vec![BTreeSet::from([(2, 0)])],
        )
        .unwrap();
        let map = isomorphic(&s, &t).unwrap();
        assert!(partial_iso_check(&s, &t, &map).unwrap());
        assert_eq!(map.get(0), Some(2));
        assert_eq!(map.get(2), Some(0));
        // size mismatch is a fast no
        let u = Structure::new(
            "bigger",
            Vocabulary::binary(1).unwrap(),
            4,
            BTreeSet::from([3]),
            BTreeSet::from([0, 1, 2]),
            vec![BTreeSet::new()],
        )
        .unwrap();
        assert!(isomorphic(&s, &u).is_none());
    }

    #[test]
    fn lemmas_and_rigidity_on_small_instance() {
        let g = build_good_sequence(&TruncationParams::small()).unwrap();
        let x = crate::models::sample_x(&g, 1, 0).unwrap();
        let mut with_omega = x.clone();
        with_omega.include_omega = true;
        let m2 = crate::models::build_m2(&g, &with_omega).unwrap();
        let report = rigidity_lemmas(&m2, &g).unwrap();
        assert!(report.pass, "{}", report.to_json());
        assert!(is_rigid(&m2.structure));
        // no distinguished point: precondition error
        let m1 = crate::models::build_m1(&g, &x).unwrap();
        assert!(matches!(
            rigidity_lemmas(&m1, &g),
            Err(SearchError::MissingDistinguishedPoint)
        ));
    }

    #[test]
    fn census_diagonal_and_duplicates() {
        let g = build_good_sequence(&TruncationParams::small()).unwrap();
        let p = *g.params();
        let z = IndexSet::new((0..p.lambda).filter(|a| a % 2 == 0), true);
        let zs = vec![z.clone(), z];
        let result = census(&g, &zs, 1).unwrap();
        assert!(result.verdicts.iter().flatten().all(|&v| v));
        // non-robust input rejected
        let bad = IndexSet::new([0], true);
        assert!(matches!(
            census(&g, &[bad], 1),
            Err(SearchError::NotRobust { .. })
        ));
        // omega required
        let no_omega = IndexSet::new(0..p.lambda, false);
        assert!(matches!(
            census(&g, &[no_omega], 1),
            Err(SearchError::OmegaRequired { .. })
        ));
    }
}
