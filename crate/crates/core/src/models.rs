//! The tower of structures derived from a verified [`GoodSequence`].
//!
//! Element layout convention: base points `b_0..b_{N-1}` take ids `0..N-1`
//! (the `Q` sort), ordinary points `c_alpha` follow in ascending `alpha`
//! (the `P` sort), and the distinguished point `c_omega` takes the last id
//! when present. A [`BuiltStructure`] carries the id → role map so
//! restrictions stay interpretable.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, StructureDoc};
use crate::families::{
    verify_good_sequence_with, FamilyError, GoodSequence, VerifyOptions,
};
use crate::structure::{Structure, StructureError, Vocabulary};

/// Role of an element id inside a built structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    /// Base point `b_i`.
    B(usize),
    /// Ordinary point `c_alpha`.
    C(usize),
    /// The distinguished point.
    COmega,
}

impl Role {
    fn encode(&self) -> String {
        match self {
            Role::B(i) => format!("b:{i}"),
            Role::C(a) => format!("c:{a}"),
            Role::COmega => "c:omega".to_string(),
        }
    }

    fn decode(text: &str) -> Option<Role> {
        if text == "c:omega" {
            return Some(Role::COmega);
        }
        if let Some(rest) = text.strip_prefix("b:") {
            return rest.parse().ok().map(Role::B);
        }
        if let Some(rest) = text.strip_prefix("c:") {
            return rest.parse().ok().map(Role::C);
        }
        None
    }
}

/// A set of ordinary indices, optionally together with the distinguished
/// point. Parametrizes restrictions of the full structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexSet {
    pub ordinaries: BTreeSet<usize>,
    #[serde(rename = "includeOmega")]
    pub include_omega: bool,
}

impl IndexSet {
    pub fn new<I: IntoIterator<Item = usize>>(ordinaries: I, include_omega: bool) -> Self {
        IndexSet {
            ordinaries: ordinaries.into_iter().collect(),
            include_omega,
        }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("index {alpha} out of range (Lambda = {lambda})")]
    IndexOutOfRange { alpha: usize, lambda: usize },
    #[error("index set must {expected} the distinguished point for this builder")]
    OmegaMismatch { expected: &'static str },
    #[error("structure construction failed: {0}")]
    Structure(#[from] StructureError),
    #[error("thinning multiplicity {c_prime} exceeds c = {c}")]
    MultiplicityTooLarge { c_prime: usize, c: usize },
    #[error("thinned index sample failed verification after {attempts} attempts; last failure: {last_failure}")]
    SampleRejected {
        attempts: usize,
        last_failure: String,
    },
    #[error("family error: {0}")]
    Family(#[from] FamilyError),
    #[error("built-structure document has no layout")]
    MissingLayout,
    #[error("built-structure layout invalid: {0}")]
    BadLayout(String),
    #[error("{0}")]
    Decode(#[from] DecodeError),
}

/// A structure together with the id → role map it was built with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltStructure {
    pub structure: Structure,
    pub layout: BTreeMap<usize, Role>,
}

impl BuiltStructure {
    pub fn role(&self, id: usize) -> Option<Role> {
        self.layout.get(&id).copied()
    }

    /// Id of the distinguished point, if present.
    pub fn omega_id(&self) -> Option<usize> {
        self.layout
            .iter()
            .find(|(_, r)| **r == Role::COmega)
            .map(|(&id, _)| id)
    }

    /// Id carrying role `c_alpha`, if present.
    pub fn c_id(&self, alpha: usize) -> Option<usize> {
        self.layout
            .iter()
            .find(|(_, r)| **r == Role::C(alpha))
            .map(|(&id, _)| id)
    }

    /// Ids of base points, ascending.
    pub fn b_ids(&self) -> Vec<usize> {
        let mut out: Vec<(usize, usize)> = self
            .layout
            .iter()
            .filter_map(|(&id, r)| match r {
                Role::B(i) => Some((*i, id)),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.into_iter().map(|(_, id)| id).collect()
    }

    /// Keep only relations `R_0..R_m`, preserving the layout.
    pub fn reduct(&self, m: usize) -> Result<BuiltStructure, StructureError> {
        Ok(BuiltStructure {
            structure: self.structure.reduct(m)?,
            layout: self.layout.clone(),
        })
    }

    /// Induced substructure with the layout carried through the renumbering.
    pub fn restrict(&self, keep: &BTreeSet<usize>) -> Result<BuiltStructure, StructureError> {
        let (structure, renumber) = self.structure.restrict(keep)?;
        let layout = self
            .layout
            .iter()
            .filter_map(|(old, role)| renumber.get(old).map(|&new| (new, *role)))
            .collect();
        Ok(BuiltStructure { structure, layout })
    }

    pub fn to_json(&self) -> String {
        let mut doc = StructureDoc::from_structure(&self.structure);
        doc.layout = Some(
            self.layout
                .iter()
                .map(|(id, role)| (id.to_string(), role.encode()))
                .collect(),
        );
        serde_json::to_string(&doc).expect("built structure serializes")
    }

    pub fn from_json(text: &str) -> Result<BuiltStructure, BuildError> {
        let doc: StructureDoc = serde_json::from_str(text).map_err(DecodeError::from)?;
        let layout_doc = doc.layout.clone().ok_or(BuildError::MissingLayout)?;
        let structure = doc.into_structure()?;
        let mut layout = BTreeMap::new();
        for (key, value) in layout_doc {
            let id: usize = key
                .parse()
                .map_err(|_| BuildError::BadLayout(format!("bad id key {key:?}")))?;
            let role = Role::decode(&value)
                .ok_or_else(|| BuildError::BadLayout(format!("bad role {value:?}")))?;
            if id >= structure.domain_size() {
                return Err(BuildError::BadLayout(format!("id {id} out of range")));
            }
            layout.insert(id, role);
        }
        let built = BuiltStructure { structure, layout };
        validate_layout(&built)?;
        Ok(built)
    }
}

fn validate_layout(built: &BuiltStructure) -> Result<(), BuildError> {
    if built.layout.len() != built.structure.domain_size() {
        return Err(BuildError::BadLayout(format!(
            "layout covers {} of {} ids",
            built.layout.len(),
            built.structure.domain_size()
        )));
    }
    for (&id, role) in &built.layout {
        let in_q = built.structure.q().contains(&id);
        let role_is_b = matches!(role, Role::B(_));
        if in_q != role_is_b {
            return Err(BuildError::BadLayout(format!(
                "id {id} sort does not match role {}",
                role.encode()
            )));
        }
    }
    let mut roles: Vec<&Role> = built.layout.values().collect();
    roles.sort();
    roles.dedup();
    if roles.len() != built.layout.len() {
        return Err(BuildError::BadLayout("duplicate roles".to_string()));
    }
    Ok(())
}

/// The full structure: all base points, all ordinary points, and the
/// distinguished point. `(b_i, c_alpha) ∈ R_n` iff `n <= residue(alpha)` and
/// `i ∈ rows[alpha][n]`; `(b_i, c_omega) ∈ R_n` iff `i ∈ omega[n]`.
pub fn build_n2(g: &GoodSequence) -> BuiltStructure {
    let p = g.params();
    let n_base = p.n;
    let domain = n_base + p.lambda + 1;
    let omega_id = n_base + p.lambda;
    let q: BTreeSet<usize> = (0..n_base).collect();
    let p_set: BTreeSet<usize> = (n_base..domain).collect();
    let mut rels: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); p.w + 1];
    for alpha in 0..p.lambda {
        let residue = g.residue(alpha);
        let c = n_base + alpha;
        for (n, rel) in rels.iter_mut().enumerate().take(residue + 1) {
            for i in g.row(alpha, n).iter() {
                rel.insert((i, c));
            }
        }
    }
    for (n, rel) in rels.iter_mut().enumerate() {
        for i in g.omega_row(n).iter() {
            rel.insert((i, omega_id));
        }
    }
    let vocab = Vocabulary::binary(p.w + 1).expect("w + 1 >= 1");
    let structure = Structure::new("N2", vocab, domain, p_set, q, rels)
        .expect("builder output satisfies structure invariants");
    let mut layout: BTreeMap<usize, Role> = (0..n_base).map(|i| (i, Role::B(i))).collect();
    for alpha in 0..p.lambda {
        layout.insert(n_base + alpha, Role::C(alpha));
    }
    layout.insert(omega_id, Role::COmega);
    BuiltStructure { structure, layout }
}

/// The full structure without its distinguished point.
pub fn build_n1(g: &GoodSequence) -> BuiltStructure {
    let n2 = build_n2(g);
    let keep: BTreeSet<usize> = (0..n2.structure.domain_size() - 1).collect();
    let mut n1 = n2.restrict(&keep).expect("prefix restriction is valid");
    n1.structure = n1.structure.with_name("N1");
    n1
}

/// Restriction to the base points plus `{c_alpha : alpha ∈ X}` (plus the
/// distinguished point when the index set includes it).
pub fn build_mz(g: &GoodSequence, z: &IndexSet) -> Result<BuiltStructure, BuildError> {
    let p = g.params();
    if let Some(&alpha) = z.ordinaries.iter().find(|&&a| a >= p.lambda) {
        return Err(BuildError::IndexOutOfRange {
            alpha,
            lambda: p.lambda,
        });
    }
    let n2 = build_n2(g);
    let mut keep: BTreeSet<usize> = (0..p.n).collect();
    for &alpha in &z.ordinaries {
        keep.insert(p.n + alpha);
    }
    if z.include_omega {
        keep.insert(p.n + p.lambda);
    }
    let mut built = n2.restrict(&keep)?;
    built.structure = built.structure.with_name("MZ");
    Ok(built)
}

/// The thinned countable stand-in without the distinguished point.
pub fn build_m1(g: &GoodSequence, x: &IndexSet) -> Result<BuiltStructure, BuildError> {
    if x.include_omega {
        return Err(BuildError::OmegaMismatch { expected: "exclude" });
    }
    let mut built = build_mz(g, x)?;
    built.structure = built.structure.with_name("M1");
    Ok(built)
}

/// The thinned stand-in including the distinguished point.
pub fn build_m2(g: &GoodSequence, x: &IndexSet) -> Result<BuiltStructure, BuildError> {
    if !x.include_omega {
        return Err(BuildError::OmegaMismatch { expected: "include" });
    }
    let mut built = build_mz(g, x)?;
    built.structure = built.structure.with_name("M2");
    Ok(built)
}

/// Pick a multiplicity-`c_prime` thinning of the ordinary indices whose
/// induced subfamily is itself a verified sequence (at multiplicity
/// `c_prime`, other parameters unchanged). Selection keeps, per residue
/// class, the slots with `(rank + rotation) mod c < c_prime`; the rotation
/// advances on verification failure.
pub fn sample_x(g: &GoodSequence, c_prime: usize, seed: u64) -> Result<IndexSet, BuildError> {
    sample_x_with(g, c_prime, seed, &VerifyOptions::default())
}

pub fn sample_x_with(
    g: &GoodSequence,
    c_prime: usize,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<IndexSet, BuildError> {
    let p = g.params();
    if c_prime > p.c {
        return Err(BuildError::MultiplicityTooLarge {
            c_prime,
            c: p.c,
        });
    }
    if c_prime == p.c {
        return Ok(IndexSet::new(0..p.lambda, false));
    }
    let class_size = p.lambda / p.w;
    let quota = class_size * c_prime / p.c;
    let attempts = p.retries.max(1);
    let mut last_failure = String::new();
    for attempt in 0..attempts {
        let rotation = (seed as usize).wrapping_add(attempt) % p.c.max(1);
        let mut kept: Vec<usize> = Vec::with_capacity(p.w * quota);
        for k in 0..p.w {
            let class: Vec<usize> = (0..p.lambda).filter(|a| a % p.w == k).collect();
            let mut chosen: Vec<usize> = class
                .iter()
                .enumerate()
                .filter(|(rank, _)| (rank + rotation) % p.c < c_prime)
                .map(|(_, &a)| a)
                .take(quota)
                .collect();
            // Top up if the rank rule undershoots the quota (ragged classes).
            if chosen.len() < quota {
                for &a in &class {
                    if !chosen.contains(&a) {
                        chosen.push(a);
                        if chosen.len() == quota {
                            break;
                        }
                    }
                }
            }
            kept.extend(chosen);
        }
        kept.sort_unstable();
        if let Some(sub) = g.thin(&kept, c_prime) {
            let report = verify_good_sequence_with(&sub, sub.params(), opts);
            if report.pass {
                return Ok(IndexSet::new(kept, false));
            }
            last_failure = report
                .first_failure()
                .map(|c| format!("{}: {}", c.name, c.detail))
                .unwrap_or_default();
        } else {
            last_failure = "unequal residue-class survivor counts".to_string();
        }
    }
    Err(BuildError::SampleRejected {
        attempts,
        last_failure,
    })
}

/// An index set is robust at `c_req` when every residue class `k < W`
/// contains at least `c_req` of its ordinary members.
pub fn is_robust(z: &IndexSet, g: &GoodSequence, c_req: usize) -> bool {
    let p = g.params();
    let mut counts = vec![0usize; p.w];
    for &alpha in &z.ordinaries {
        if alpha < p.lambda {
            counts[alpha % p.w] += 1;
        }
    }
    counts.iter().all(|&cnt| cnt >= c_req)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{build_good_sequence, TruncationParams};

    fn small_sequence() -> GoodSequence {
        build_good_sequence(&TruncationParams::small()).unwrap()
    }

    #[test]
    fn n2_layout_and_activity() {
        let g = small_sequence();
        let p = *g.params();
        let n2 = build_n2(&g);
        assert_eq!(n2.structure.domain_size(), p.n + p.lambda + 1);
        assert_eq!(n2.structure.rel_count(), p.w + 1);
        let omega = n2.omega_id().unwrap();
        assert_eq!(omega, p.n + p.lambda);
        // an ordinary point of residue r is active in R_n exactly for n <= r
        for alpha in 0..p.lambda {
            let c = n2.c_id(alpha).unwrap();
            for n in 0..=p.w {
                let active = n2.structure.rel(n).iter().any(|&(_, y)| y == c);
                assert_eq!(
                    active,
                    n <= g.residue(alpha),
                    "alpha={alpha} n={n} residue={}",
                    g.residue(alpha)
                );
            }
        }
        // the distinguished point is active everywhere, including the top
        // relation where no ordinary point is
        for n in 0..=p.w {
            assert!(n2.structure.rel(n).iter().any(|&(_, y)| y == omega));
        }
        let top_active: BTreeSet<usize> =
            n2.structure.rel(p.w).iter().map(|&(_, y)| y).collect();
        assert_eq!(top_active, BTreeSet::from([omega]));
        // pair counts match row sizes
        let r0: usize = (0..p.lambda).map(|a| g.row(a, 0).count()).sum::<usize>()
            + g.omega_row(0).count();
        assert_eq!(n2.structure.rel(0).len(), r0);
    }

    #[test]
    fn n1_is_n2_without_omega() {
        let g = small_sequence();
        let n2 = build_n2(&g);
        let n1 = build_n1(&g);
        assert_eq!(n1.structure.domain_size(), n2.structure.domain_size() - 1);
        assert!(n1.omega_id().is_none());
        let keep: BTreeSet<usize> = (0..n2.structure.domain_size() - 1).collect();
        let direct = n2.restrict(&keep).unwrap();
        assert!(n1.structure.same_shape(&direct.structure));
        assert_eq!(n1.layout, direct.layout);
        // no point of the reduced structure is active in the top relation
        assert!(n1.structure.rel(g.params().w).is_empty());
    }

    #[test]
    fn m_builders_enforce_omega() {
        let g = small_sequence();
        let x = sample_x(&g, 1, 0).unwrap();
        assert!(build_m1(&g, &x).is_ok());
        assert!(matches!(
            build_m2(&g, &x),
            Err(BuildError::OmegaMismatch { .. })
        ));
        let mut with_omega = x.clone();
        with_omega.include_omega = true;
        let m2 = build_m2(&g, &with_omega).unwrap();
        let m1 = build_m1(&g, &x).unwrap();
        assert_eq!(m2.structure.domain_size(), m1.structure.domain_size() + 1);
        // m1 equals m 2 without its last element
        let keep: BTreeSet<usize> = (0..m2.structure.domain_size() - 1).collect();
        let direct = m2.restrict(&keep).unwrap();
        assert!(m1.structure.same_shape(&direct.structure));
    }

    #[test]
    fn sample_x_full_multiplicity_is_identity() {
        let g = small_sequence();
        let p = *g.params();
        let x = sample_x(&g, p.c, 0).unwrap();
        assert_eq!(x.ordinaries.len(), p.lambda);
    }

    #[test]
    fn sample_x_thins_proportionally() {
        let g = small_sequence();
        let p = *g.params();
        let x = sample_x(&g, 1, 0).unwrap();
        assert_eq!(x.ordinaries.len(), p.lambda / p.c);
        assert!(x.ordinaries.iter().all(|&a| a < p.lambda));
        // the thinned subfamily re-verifies at multiplicity 1
        let kept: Vec<usize> = x.ordinaries.iter().copied().collect();
        let sub = g.thin(&kept, 1).unwrap();
        assert!(crate::families::verify_good_sequence(&sub, sub.params()).pass);
    }

    #[test]
    fn mz_edges() {
        let g = small_sequence();
        let p = *g.params();
        // all ordinaries, no omega = the no-distinguished-point structure
        let z = IndexSet::new(0..p.lambda, false);
        let mz = build_mz(&g, &z).unwrap();
        assert!(mz.structure.same_shape(&build_n1(&g).structure));
        // empty ordinaries with omega: base points plus the distinguished point
        let z = IndexSet::new([], true);
        let mz = build_mz(&g, &z).unwrap();
        assert_eq!(mz.structure.domain_size(), p.n + 1);
        assert!(mz.omega_id().is_some());
        // restriction composition: Z1 ⊂ Z2 means MZ1 is a restriction of MZ2
        let z1 = IndexSet::new([0, 5], true);
        let z2 = IndexSet::new([0, 3, 5], true);
        let m1 = build_mz(&g, &z1).unwrap();
        let m2 = build_mz(&g, &z2).unwrap();
        let keep: BTreeSet<usize> = m2
            .layout
            .iter()
            .filter(|(_, r)| !matches!(r, Role::C(3)))
            .map(|(&id, _)| id)
            .collect();
        let direct = m2.restrict(&keep).unwrap();
        assert!(m1.structure.same_shape(&direct.structure));
        // out of range
        let z = IndexSet::new([p.lambda], false);
        assert!(matches!(
            build_mz(&g, &z),
            Err(BuildError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn robustness_thresholds() {
        let g = small_sequence();
        let p = *g.params();
        let all = IndexSet::new(0..p.lambda, false);
        assert!(is_robust(&all, &g, p.lambda / p.w));
        assert!(!is_robust(&all, &g, p.lambda / p.w + 1));
        // empty a residue class
        let no_class_1 = IndexSet::new((0..p.lambda).filter(|a| a % p.w != 1), false);
        assert!(!is_robust(&no_class_1, &g, 1));
        // removing one member of a class at exactly c_req flips the verdict
        let c_req = p.lambda / p.w;
        let mut one_less: BTreeSet<usize> = (0..p.lambda).collect();
        one_less.remove(&1); // residue 1
        let thinned = IndexSet {
            ordinaries: one_less,
            include_omega: false,
        };
        assert!(!is_robust(&thinned, &g, c_req));
        assert!(is_robust(&thinned, &g, c_req - 1));
    }

    #[test]
    fn built_json_round_trip() {
        let g = small_sequence();
        let n2 = build_n2(&g);
        let text = n2.to_json();
        let back = BuiltStructure::from_json(&text).unwrap();
        assert_eq!(back, n2);
        // layout is required
        let plain = crate::codec::encode(&n2.structure);
        assert!(matches!(
            BuiltStructure::from_json(&plain),
            Err(BuildError::MissingLayout)
        ));
    }
}
