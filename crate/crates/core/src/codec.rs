//! Deterministic JSON interchange for structures.
//!
//! Format:
//! `{"name": str, "relCount": int, "domainSize": int, "P": [int...],
//!   "Q": [int...], "R": [[[q,p],...], ...]}`
//! with every integer list strictly ascending and `R` of length `relCount`.
//! Encoding a given structure is byte-identical across runs. Built
//! structures carry an extra `"layout"` object (see [`crate::models`]).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::structure::{Structure, StructureError, Vocabulary};

#[derive(Debug, Error)]
pub enum DecodeError {
    /// Syntactic or shape errors; the message carries line and column.
    #[error("malformed structure document at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("integer list `{field}` is not strictly ascending at index {index}")]
    NotAscending { field: String, index: usize },
    #[error("invalid structure: {0}")]
    Invalid(#[from] StructureError),
}

impl From<serde_json::Error> for DecodeError {
    fn from(e: serde_json::Error) -> Self {
        DecodeError::Malformed {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct StructureDoc {
    pub name: String,
    #[serde(rename = "relCount")]
    pub rel_count: usize,
    #[serde(rename = "domainSize")]
    pub domain_size: usize,
    #[serde(rename = "P")]
    pub p: Vec<usize>,
    #[serde(rename = "Q")]
    pub q: Vec<usize>,
    #[serde(rename = "R")]
    pub rels: Vec<Vec<(usize, usize)>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layout: Option<BTreeMap<String, String>>,
}

impl StructureDoc {
    pub(crate) fn from_structure(s: &Structure) -> Self {
        StructureDoc {
            name: s.name().to_string(),
            rel_count: s.rel_count(),
            domain_size: s.domain_size(),
            p: s.p().iter().copied().collect(),
            q: s.q().iter().copied().collect(),
            rels: s
                .rels()
                .iter()
                .map(|rel| rel.iter().copied().collect())
                .collect(),
            layout: None,
        }
    }

    pub(crate) fn into_structure(self) -> Result<Structure, DecodeError> {
        check_ascending("P", &self.p)?;
        check_ascending("Q", &self.q)?;
        for (n, rel) in self.rels.iter().enumerate() {
            check_ascending_pairs(&format!("R[{n}]"), rel)?;
        }
        let vocab = Vocabulary::binary(self.rel_count)?;
        let rels: Vec<BTreeSet<(usize, usize)>> = self
            .rels
            .into_iter()
            .map(|rel| rel.into_iter().collect())
            .collect();
        Ok(Structure::new(
            self.name,
            vocab,
            self.domain_size,
            self.p.into_iter().collect(),
            self.q.into_iter().collect(),
            rels,
        )?)
    }
}

fn check_ascending(field: &str, xs: &[usize]) -> Result<(), DecodeError> {
    for i in 1..xs.len() {
        if xs[i] <= xs[i - 1] {
            return Err(DecodeError::NotAscending {
                field: field.to_string(),
                index: i,
            });
        }
    }
    Ok(())
}

fn check_ascending_pairs(field: &str, xs: &[(usize, usize)]) -> Result<(), DecodeError> {
    for i in 1..xs.len() {
        if xs[i] <= xs[i - 1] {
            return Err(DecodeError::NotAscending {
                field: field.to_string(),
                index: i,
            });
        }
    }
    Ok(())
}

/// Deterministic textual encoding of a structure.
pub fn encode(s: &Structure) -> String {
    serde_json::to_string(&StructureDoc::from_structure(s)).expect("structure serializes")
}

/// Parse and validate a structure document.
pub fn decode(text: &str) -> Result<Structure, DecodeError> {
    let doc: StructureDoc = serde_json::from_str(text)?;
    doc.into_structure()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::rigid_sample;

    #[test]
    fn round_trip_identity() {
        let s = rigid_sample();
        let text = encode(&s);
        let back = decode(&text).unwrap();
        assert_eq!(back, s);
        // determinism: encoding twice is byte-identical
        assert_eq!(text, encode(&s));
    }

    #[test]
    fn decode_rejects_invalid() {
        // P ∩ Q ≠ ∅
        let bad = r#"{"name":"x","relCount":1,"domainSize":2,"P":[0],"Q":[0,1],"R":[[]]}"#;
        assert!(matches!(decode(bad), Err(DecodeError::Invalid(_))));
        // syntax error carries a position
        let err = decode("{\"name\": ").unwrap_err();
        match err {
            DecodeError::Malformed { line, .. } => assert!(line >= 1),
            other => panic!("expected Malformed, got {other:?}"),
        }
        // non-ascending list
        let bad = r#"{"name":"x","relCount":1,"domainSize":3,"P":[2],"Q":[1,0],"R":[[]]}"#;
        assert!(matches!(decode(bad), Err(DecodeError::NotAscending { .. })));
        // unknown field
        let bad = r#"{"name":"x","relCount":1,"domainSize":3,"P":[2],"Q":[0,1],"R":[[]],"bogus":1}"#;
        assert!(matches!(decode(bad), Err(DecodeError::Malformed { .. })));
    }

    #[test]
    fn layout_field_is_tolerated() {
        let withlayout = r#"{"name":"x","relCount":1,"domainSize":3,"P":[2],"Q":[0,1],"R":[[[0,2]]],"layout":{"0":"b:0","1":"b:1","2":"c:0"}}"#;
        let s = decode(withlayout).unwrap();
        assert_eq!(s.domain_size(), 3);
    }
}
