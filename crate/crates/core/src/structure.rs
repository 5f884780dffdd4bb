//! Finite two-sorted relational structures.
//!
//! A [`Structure`] has a domain `{0..domain_size-1}` partitioned into unary
//! predicates `P` and `Q`, and binary relations `R_0..R_{relCount-1}` with
//! `R_n ⊆ Q × P`. Structures are immutable once built; every operation
//! returns a fresh validated value.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A purely relational signature: `P`, `Q`, and `rel_count` binary relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocabulary {
    rel_count: usize,
}

impl Vocabulary {
    pub fn binary(rel_count: usize) -> Result<Self, StructureError> {
        if rel_count == 0 {
            return Err(StructureError::EmptyVocabulary);
        }
        Ok(Vocabulary { rel_count })
    }

    pub fn rel_count(&self) -> usize {
        self.rel_count
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StructureError {
    #[error("vocabulary must contain at least one binary relation")]
    EmptyVocabulary,
    #[error("element id {id} out of range for domain of size {domain_size}")]
    IdOutOfRange { id: usize, domain_size: usize },
    #[error("element {id} is in both P and Q")]
    Overlap { id: usize },
    #[error("element {id} is in neither P nor Q")]
    Uncovered { id: usize },
    #[error("expected {expected} relation sets, got {got}")]
    WrongRelCount { expected: usize, got: usize },
    #[error("relation R_{rel} pair ({q}, {p}) is not in Q × P")]
    PairNotBipartite { rel: usize, q: usize, p: usize },
    #[error("reduct index {m} out of range (relation count {rel_count})")]
    ReductOutOfRange { m: usize, rel_count: usize },
    #[error("map pair uses out-of-range id {id} (domain of size {domain_size})")]
    MapIdOutOfRange { id: usize, domain_size: usize },
    #[error("partial map repeats source {id}")]
    DuplicateSource { id: usize },
    #[error("partial map repeats target {target}")]
    DuplicateTarget { target: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Structure {
    name: String,
    vocab: Vocabulary,
    domain_size: usize,
    p: BTreeSet<usize>,
    q: BTreeSet<usize>,
    rels: Vec<BTreeSet<(usize, usize)>>,
}

impl Structure {
    /// Build and validate a structure. Pairs in `rels[n]` are `(q, p)`.
    pub fn new(
        name: impl Into<String>,
        vocab: Vocabulary,
        domain_size: usize,
        p: BTreeSet<usize>,
        q: BTreeSet<usize>,
        rels: Vec<BTreeSet<(usize, usize)>>,
    ) -> Result<Self, StructureError> {
        for &id in p.iter().chain(q.iter()) {
            if id >= domain_size {
                return Err(StructureError::IdOutOfRange { id, domain_size });
            }
        }
        if let Some(&id) = p.intersection(&q).next() {
            return Err(StructureError::Overlap { id });
        }
        for id in 0..domain_size {
            if !p.contains(&id) && !q.contains(&id) {
                return Err(StructureError::Uncovered { id });
            }
        }
        if rels.len() != vocab.rel_count() {
            return Err(StructureError::WrongRelCount {
                expected: vocab.rel_count(),
                got: rels.len(),
            });
        }
        for (n, rel) in rels.iter().enumerate() {
            for &(x, y) in rel {
                if x >= domain_size {
                    return Err(StructureError::IdOutOfRange { id: x, domain_size });
                }
                if y >= domain_size {
                    return Err(StructureError::IdOutOfRange { id: y, domain_size });
                }
                if !q.contains(&x) || !p.contains(&y) {
                    return Err(StructureError::PairNotBipartite { rel: n, q: x, p: y });
                }
            }
        }
        Ok(Structure {
            name: name.into(),
            vocab,
            domain_size,
            p,
            q,
            rels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    pub fn rel_count(&self) -> usize {
        self.vocab.rel_count()
    }

    pub fn domain_size(&self) -> usize {
        self.domain_size
    }

    pub fn p(&self) -> &BTreeSet<usize> {
        &self.p
    }

    pub fn q(&self) -> &BTreeSet<usize> {
        &self.q
    }

    pub fn rel(&self, n: usize) -> &BTreeSet<(usize, usize)> {
        &self.rels[n]
    }

    pub fn rels(&self) -> &[BTreeSet<(usize, usize)>] {
        &self.rels
    }

    pub fn has(&self, n: usize, q: usize, p: usize) -> bool {
        self.rels[n].contains(&(q, p))
    }

    /// Equality of everything except the name.
    pub fn same_shape(&self, other: &Structure) -> bool {
        self.vocab == other.vocab
            && self.domain_size == other.domain_size
            && self.p == other.p
            && self.q == other.q
            && self.rels == other.rels
    }

    /// Keep only relations `R_0..R_m`; domain, `P`, `Q` unchanged.
    pub fn reduct(&self, m: usize) -> Result<Structure, StructureError> {
        if m >= self.vocab.rel_count() {
            return Err(StructureError::ReductOutOfRange {
                m,
                rel_count: self.vocab.rel_count(),
            });
        }
        Ok(Structure {
            name: self.name.clone(),
            vocab: Vocabulary::binary(m + 1).expect("m + 1 >= 1"),
            domain_size: self.domain_size,
            p: self.p.clone(),
            q: self.q.clone(),
            rels: self.rels[..=m].to_vec(),
        })
    }

    /// Induced substructure on `keep`, with ids renumbered densely in
    /// ascending original order. Returns the old-id → new-id map alongside.
    pub fn restrict(
        &self,
        keep: &BTreeSet<usize>,
    ) -> Result<(Structure, BTreeMap<usize, usize>), StructureError> {
        for &id in keep {
            if id >= self.domain_size {
                return Err(StructureError::IdOutOfRange {
                    id,
                    domain_size: self.domain_size,
                });
            }
        }
        let renumber: BTreeMap<usize, usize> =
            keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let map_set = |s: &BTreeSet<usize>| {
            s.iter()
                .filter_map(|id| renumber.get(id).copied())
                .collect::<BTreeSet<usize>>()
        };
        let rels = self
            .rels
            .iter()
            .map(|rel| {
                rel.iter()
                    .filter_map(|&(x, y)| match (renumber.get(&x), renumber.get(&y)) {
                        (Some(&nx), Some(&ny)) => Some((nx, ny)),
                        _ => None,
                    })
                    .collect::<BTreeSet<(usize, usize)>>()
            })
            .collect();
        let restricted = Structure {
            name: self.name.clone(),
            vocab: self.vocab,
            domain_size: keep.len(),
            p: map_set(&self.p),
            q: map_set(&self.q),
            rels,
        };
        Ok((restricted, renumber))
    }
}

/// An injective partial function between element ids of two structures.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartialMap {
    forward: BTreeMap<usize, usize>,
    backward: BTreeMap<usize, usize>,
}

impl PartialMap {
    pub fn empty() -> Self {
        PartialMap::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (usize, usize)>>(
        pairs: I,
    ) -> Result<Self, StructureError> {
        let mut m = PartialMap::empty();
        for (s, t) in pairs {
            m.insert(s, t)?;
        }
        Ok(m)
    }

    pub fn insert(&mut self, source: usize, target: usize) -> Result<(), StructureError> {
        if self.forward.contains_key(&source) {
            return Err(StructureError::DuplicateSource { id: source });
        }
        if self.backward.contains_key(&target) {
            return Err(StructureError::DuplicateTarget { target });
        }
        self.forward.insert(source, target);
        self.backward.insert(target, source);
        Ok(())
    }

    pub fn get(&self, source: usize) -> Option<usize> {
        self.forward.get(&source).copied()
    }

    pub fn get_inv(&self, target: usize) -> Option<usize> {
        self.backward.get(&target).copied()
    }

    pub fn contains_source(&self, source: usize) -> bool {
        self.forward.contains_key(&source)
    }

    pub fn contains_target(&self, target: usize) -> bool {
        self.backward.contains_key(&target)
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Pairs in ascending source order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.forward.iter().map(|(&s, &t)| (s, t))
    }

    pub fn inverted(&self) -> PartialMap {
        PartialMap {
            forward: self.backward.clone(),
            backward: self.forward.clone(),
        }
    }
}

impl Serialize for PartialMap {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(usize, usize)> = self.pairs().collect();
        pairs.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for PartialMap {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let pairs = Vec::<(usize, usize)>::deserialize(de)?;
        PartialMap::from_pairs(pairs).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
pub(crate) fn rigid_sample() -> Structure {
    // Q = {0,1}, P = {2}, R_0 = {(0,2)}: the only automorphism is the identity.
    Structure::new(
        "S_rigid",
        Vocabulary::binary(1).unwrap(),
        3,
        BTreeSet::from([2]),
        BTreeSet::from([0, 1]),
        vec![BTreeSet::from([(0, 2)])],
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_structure_validates() {
        let v = Vocabulary::binary(1).unwrap();
        assert!(Vocabulary::binary(0).is_err());
        // valid
        let s = rigid_sample();
        assert_eq!(s.domain_size(), 3);
        // P ∩ Q ≠ ∅
        let err = Structure::new(
            "bad",
            v,
            2,
            BTreeSet::from([0]),
            BTreeSet::from([0, 1]),
            vec![BTreeSet::new()],
        )
        .unwrap_err();
        assert_eq!(err, StructureError::Overlap { id: 0 });
        // pair not in Q × P
        let err = Structure::new(
            "bad",
            v,
            3,
            BTreeSet::from([2]),
            BTreeSet::from([0, 1]),
            vec![BTreeSet::from([(2, 0)])],
        )
        .unwrap_err();
        assert!(matches!(err, StructureError::PairNotBipartite { .. }));
        // wrong rels length
        let err = Structure::new(
            "bad",
            v,
            3,
            BTreeSet::from([2]),
            BTreeSet::from([0, 1]),
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, StructureError::WrongRelCount { .. }));
        // uncovered element
        let err = Structure::new(
            "bad",
            v,
            3,
            BTreeSet::from([2]),
            BTreeSet::from([0]),
            vec![BTreeSet::new()],
        )
        .unwrap_err();
        assert_eq!(err, StructureError::Uncovered { id: 1 });
        // out-of-range id in P
        let err = Structure::new(
            "bad",
            v,
            2,
            BTreeSet::from([5]),
            BTreeSet::from([0, 1]),
            vec![BTreeSet::new()],
        )
        .unwrap_err();
        assert!(matches!(err, StructureError::IdOutOfRange { id: 5, .. }));
    }

    #[test]
    fn reduct_full_arity_is_identity() {
        let s = rigid_sample();
        assert_eq!(s.reduct(0).unwrap(), s);
        assert!(s.reduct(1).is_err());
    }

    #[test]
    fn restrict_renumbers_densely() {
        let s = rigid_sample();
        let (full, renum) = s.restrict(&BTreeSet::from([0, 1, 2])).unwrap();
        assert_eq!(full, s);
        assert!(renum.iter().all(|(o, n)| o == n));

        let (sub, renum) = s.restrict(&BTreeSet::from([0, 2])).unwrap();
        assert_eq!(sub.q(), &BTreeSet::from([0]));
        assert_eq!(sub.p(), &BTreeSet::from([1]));
        assert_eq!(sub.rel(0), &BTreeSet::from([(0, 1)]));
        assert_eq!(renum, BTreeMap::from([(0, 0), (2, 1)]));

        assert!(s.restrict(&BTreeSet::from([7])).is_err());
    }

    #[test]
    fn partial_map_rejects_collisions() {
        let mut m = PartialMap::empty();
        m.insert(0, 5).unwrap();
        assert!(m.insert(0, 6).is_err());
        assert!(m.insert(1, 5).is_err());
        m.insert(1, 6).unwrap();
        assert_eq!(m.get(1), Some(6));
        assert_eq!(m.get_inv(5), Some(0));
        let inv = m.inverted();
        assert_eq!(inv.get(5), Some(0));
    }
}
