//! Workbench for finite two-sorted relational structures built from
//! independent set families.
//!
//! The pieces:
//!
//! * [`structure`] — validated structures over `{P, Q, R_0..R_k}` with
//!   reducts, induced substructures, and partial maps;
//! * [`codec`] — deterministic JSON interchange;
//! * [`families`] — independent families, improved families, and the
//!   doubly-indexed verified sequences everything else is built from;
//! * [`models`] — the tower of structures derived from a verified sequence
//!   (full, no-distinguished-point, thinned, and index-restricted variants)
//!   plus robustness of index sets;
//! * [`game`] — exact bounded-round back-and-forth game solver with
//!   checkable winner certificates;
//! * [`extension`] — the relation-preserving partial-map family with the
//!   residue congruence, its extension search, and the closure verifier;
//! * [`search`] — automorphism counting, rigidity, isomorphism search, and
//!   the pairwise census over index-restricted structures;
//! * [`pipeline`] — the end-to-end verification pipeline used by the CLI.

pub mod bits;
pub mod codec;
pub mod extension;
pub mod families;
pub mod game;
pub mod models;
pub mod pipeline;
mod refine;
pub mod report;
pub mod search;
pub mod structure;

pub use codec::{decode, encode, DecodeError};
pub use families::{
    build_good_sequence, improve, perfect_independent, verify_good_sequence, verify_improved,
    verify_independence, FamilyError, GoodSequence, SetFamily, TruncationParams, VerifyOptions,
};
pub use game::{ef_certificate_check, ef_decide, partial_iso_check, GameConfig, GameResult, Winner};
pub use models::{
    build_m1, build_m2, build_mz, build_n1, build_n2, is_robust, sample_x, BuiltStructure,
    IndexSet, Role,
};
pub use report::{CheckMode, CheckResult, VerifyReport};
pub use search::{automorphisms, census, is_rigid, isomorphic, rigidity_lemmas, AutReport};
pub use structure::{PartialMap, Structure, StructureError, Vocabulary};
