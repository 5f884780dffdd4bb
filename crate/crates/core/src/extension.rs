//! The relation-preserving partial-map family with the residue congruence,
//! and its two-sided extension property.
//!
//! A map `f` belongs to the family when it is a partial isomorphism, maps
//! ordinary points only to ordinary points of the same residue class, and —
//! in the pinned variant — maps the designated pin source to the
//! distinguished point (that pair alone is exempt from the congruence).
//! [`verify_back_and_forth`] closes the family under challenges up to a
//! round bound: a pass certifies that the second player wins the game of
//! that length by playing inside the family.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::game::partial_iso_check;
use crate::models::{build_m1, build_n1, build_n2, BuildError, BuiltStructure, IndexSet, Role};
use crate::families::GoodSequence;
use crate::report::{CheckMode, CheckResult, VerifyReport};
use crate::structure::{PartialMap, StructureError};

/// Default cap on extension attempts per verification call.
pub const DEFAULT_BF_BUDGET: u64 = 200_000;

/// Which pair of structures the family relates. Both variants live on the
/// `R_0..R_m` reduct: coverage of the residue-classed traces shrinks like
/// `2^{m+1}` against the class size, so only small reducts are adequate at
/// desk-scale truncations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Full structure without vs. with its distinguished point, pinned:
    /// `c_{pin_source}` (an ordinary index of residue `m`) maps to the
    /// distinguished point and is exempt from the residue congruence.
    N1N2 { m: usize, pin_source: usize },
    /// Thinned structure vs. full structure, both without the distinguished
    /// point, no pins.
    M1N1 { m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameSide {
    Left,
    Right,
}

#[derive(Debug, Error)]
pub enum ExtensionError {
    #[error("pin source {alpha} has residue {residue}, expected {expected}")]
    PinResidueMismatch {
        alpha: usize,
        residue: usize,
        expected: usize,
    },
    #[error("challenge {id} on {side:?} is already covered")]
    AlreadyCovered { id: usize, side: GameSide },
    #[error("id {id} out of range on {side:?}")]
    IdOutOfRange { id: usize, side: GameSide },
    #[error("map is not in the extension family: {0}")]
    NotInFamily(String),
    #[error("no extension exists: {0}")]
    NoExtension(String),
    #[error("structure error: {0}")]
    Structure(#[from] StructureError),
    #[error("build error: {0}")]
    Build(#[from] BuildError),
    #[error("reduct index {m} out of range for modulus {w}")]
    ReductOutOfRange { m: usize, w: usize },
}

/// The two structures of a variant plus the residue data the family needs.
pub struct ProofContext {
    pub left: BuiltStructure,
    pub right: BuiltStructure,
    pub variant: Variant,
    w: usize,
    left_roles: Vec<Role>,
    right_roles: Vec<Role>,
    right_c_of_alpha: HashMap<usize, usize>,
    left_c_of_alpha: HashMap<usize, usize>,
    left_b_of_index: HashMap<usize, usize>,
    right_b_of_index: HashMap<usize, usize>,
    right_omega: Option<usize>,
    /// residue class -> left ordinary ids, ascending
    left_class: Vec<Vec<usize>>,
    right_class: Vec<Vec<usize>>,
}

impl ProofContext {
    /// Pinned variant on the `R_0..R_m` reduct. The pin source defaults to
    /// the least ordinary index of residue `m`.
    pub fn n1n2(g: &GoodSequence, m: usize) -> Result<ProofContext, ExtensionError> {
        Self::n1n2_with_pin(g, m, m)
    }

    /// Pinned variant with an explicit pin source (must have residue `m`).
    pub fn n1n2_with_pin(
        g: &GoodSequence,
        m: usize,
        pin_source: usize,
    ) -> Result<ProofContext, ExtensionError> {
        let p = g.params();
        if m >= p.w {
            return Err(ExtensionError::ReductOutOfRange { m, w: p.w });
        }
        if g.residue(pin_source) != m {
            return Err(ExtensionError::PinResidueMismatch {
                alpha: pin_source,
                residue: g.residue(pin_source),
                expected: m,
            });
        }
        let left = build_n1(g).reduct(m)?;
        let right = build_n2(g).reduct(m)?;
        Ok(Self::assemble(
            left,
            right,
            Variant::N1N2 { m, pin_source },
            p.w,
        ))
    }

    /// Unpinned variant between the thinned and full structures, on the
    /// `R_0..R_m` reduct.
    pub fn m1n1(g: &GoodSequence, x: &IndexSet, m: usize) -> Result<ProofContext, ExtensionError> {
        let p = g.params();
        if m >= p.w {
            return Err(ExtensionError::ReductOutOfRange { m, w: p.w });
        }
        let left = build_m1(g, x)?.reduct(m)?;
        let right = build_n1(g).reduct(m)?;
        Ok(Self::assemble(left, right, Variant::M1N1 { m }, p.w))
    }

    fn assemble(
        left: BuiltStructure,
        right: BuiltStructure,
        variant: Variant,
        w: usize,
    ) -> ProofContext {
        let roles = |b: &BuiltStructure| -> Vec<Role> {
            (0..b.structure.domain_size())
                .map(|id| b.role(id).expect("layout is total"))
                .collect()
        };
        let left_roles = roles(&left);
        let right_roles = roles(&right);
        let mut ctx = ProofContext {
            w,
            left_c_of_alpha: HashMap::new(),
            right_c_of_alpha: HashMap::new(),
            left_b_of_index: HashMap::new(),
            right_b_of_index: HashMap::new(),
            right_omega: None,
            left_class: vec![Vec::new(); w],
            right_class: vec![Vec::new(); w],
            left_roles,
            right_roles,
            left,
            right,
            variant,
        };
        for (id, role) in ctx.left_roles.iter().enumerate() {
            match role {
                Role::B(i) => {
                    ctx.left_b_of_index.insert(*i, id);
                }
                Role::C(a) => {
                    ctx.left_c_of_alpha.insert(*a, id);
                    ctx.left_class[*a % w].push(id);
                }
                Role::COmega => {}
            }
        }
        for (id, role) in ctx.right_roles.iter().enumerate() {
            match role {
                Role::B(i) => {
                    ctx.right_b_of_index.insert(*i, id);
                }
                Role::C(a) => {
                    ctx.right_c_of_alpha.insert(*a, id);
                    ctx.right_class[*a % w].push(id);
                }
                Role::COmega => ctx.right_omega = Some(id),
            }
        }
        ctx
    }

    /// The variant's initial position.
    pub fn pins(&self) -> PartialMap {
        match self.variant {
            Variant::N1N2 { pin_source, .. } => {
                let src = self.left_c_of_alpha[&pin_source];
                let dst = self.right_omega.expect("pinned variant has the point");
                PartialMap::from_pairs([(src, dst)]).expect("single pair")
            }
            Variant::M1N1 { .. } => PartialMap::empty(),
        }
    }

    fn role_of(&self, side: GameSide, id: usize) -> Result<Role, ExtensionError> {
        let roles = match side {
            GameSide::Left => &self.left_roles,
            GameSide::Right => &self.right_roles,
        };
        roles
            .get(id)
            .copied()
            .ok_or(ExtensionError::IdOutOfRange { id, side })
    }

    fn pin_pair(&self) -> Option<(usize, usize)> {
        match self.variant {
            Variant::N1N2 { pin_source, .. } => Some((
                self.left_c_of_alpha[&pin_source],
                self.right_omega.expect("pinned variant has the point"),
            )),
            Variant::M1N1 { .. } => None,
        }
    }
}

/// Family membership: partial isomorphism, residue congruence on ordinary
/// pairs, pin handling per variant.
pub fn proof_family_contains(ctx: &ProofContext, f: &PartialMap) -> Result<bool, ExtensionError> {
    for (s, t) in f.pairs() {
        ctx.role_of(GameSide::Left, s)?;
        ctx.role_of(GameSide::Right, t)?;
    }
    if !partial_iso_check(&ctx.left.structure, &ctx.right.structure, f)
        .map_err(|_| ExtensionError::NotInFamily("id out of range".to_string()))?
    {
        return Ok(false);
    }
    let pin = ctx.pin_pair();
    for (s, t) in f.pairs() {
        let rs = ctx.role_of(GameSide::Left, s)?;
        let rt = ctx.role_of(GameSide::Right, t)?;
        match (rs, rt) {
            (Role::B(_), Role::B(_)) => {}
            (Role::C(a), Role::C(b)) => {
                if Some((s, t)) == pin {
                    continue; // exempt pair (unreachable: pin target is the distinguished point)
                }
                if matches!(ctx.variant, Variant::N1N2 { pin_source, .. } if pin_source == a) {
                    return Ok(false); // pin source may only map to the distinguished point
                }
                if a % ctx.w != b % ctx.w {
                    return Ok(false);
                }
            }
            (Role::C(_), Role::COmega) => {
                if Some((s, t)) != pin {
                    return Ok(false);
                }
            }
            _ => return Ok(false),
        }
    }
    Ok(true)
}

fn pair_extends(ctx: &ProofContext, f: &PartialMap, x: usize, y: usize) -> bool {
    let sl = &ctx.left.structure;
    let sr = &ctx.right.structure;
    if sl.q().contains(&x) != sr.q().contains(&y) {
        return false;
    }
    let rels = sl.rel_count().max(sr.rel_count());
    for (u, v) in f.pairs() {
        for n in 0..rels {
            let in_l = n < sl.rel_count() && (sl.has(n, x, u) || sl.has(n, u, x));
            let in_r = n < sr.rel_count() && (sr.has(n, y, v) || sr.has(n, v, y));
            if in_l != in_r {
                return false;
            }
        }
    }
    true
}

fn trace_description(ctx: &ProofContext, f: &PartialMap, side: GameSide, id: usize) -> String {
    let (s, pick): (&BuiltStructure, fn((usize, usize)) -> usize) = match side {
        GameSide::Left => (&ctx.left, |p| p.0),
        GameSide::Right => (&ctx.right, |p| p.1),
    };
    let rels = s.structure.rel_count();
    let placed: Vec<String> = f
        .pairs()
        .map(|pair| {
            let u = pick(pair);
            let bits: Vec<String> = (0..rels)
                .filter(|&n| s.structure.has(n, id, u) || s.structure.has(n, u, id))
                .map(|n| n.to_string())
                .collect();
            format!("vs {:?}: R{{{}}}", s.role(u).unwrap(), bits.join(","))
        })
        .collect();
    format!(
        "challenge {:?} on {:?} with trace [{}]",
        s.role(id).unwrap(),
        side,
        placed.join("; ")
    )
}

/// Extend `f` (a family member) to cover `challenge`, staying inside the
/// family. Base challenges search base points realizing the required trace
/// over the placed pairs; ordinary challenges search the matching residue
/// class. Failure reports the unrealizable trace.
pub fn proof_extend(
    ctx: &ProofContext,
    f: &PartialMap,
    challenge: (GameSide, usize),
) -> Result<PartialMap, ExtensionError> {
    let (side, id) = challenge;
    let role = ctx.role_of(side, id)?;
    let covered = match side {
        GameSide::Left => f.contains_source(id),
        GameSide::Right => f.contains_target(id),
    };
    if covered {
        return Err(ExtensionError::AlreadyCovered { id, side });
    }
    if !proof_family_contains(ctx, f)? {
        return Err(ExtensionError::NotInFamily(
            "position is outside the family".to_string(),
        ));
    }

    let candidates: Vec<usize> = match (side, role) {
        (GameSide::Left, Role::B(i)) => {
            // identity first, then the rest of the base block
            let mut cands = Vec::new();
            if let Some(&same) = ctx.right_b_of_index.get(&i) {
                cands.push(same);
            }
            cands.extend(
                ctx.right_b_of_index
                    .values()
                    .copied()
                    .filter(|&y| Some(y) != ctx.right_b_of_index.get(&i).copied()),
            );
            cands
        }
        (GameSide::Right, Role::B(i)) => {
            let mut cands = Vec::new();
            if let Some(&same) = ctx.left_b_of_index.get(&i) {
                cands.push(same);
            }
            cands.extend(
                ctx.left_b_of_index
                    .values()
                    .copied()
                    .filter(|&x| Some(x) != ctx.left_b_of_index.get(&i).copied()),
            );
            cands
        }
        (GameSide::Left, Role::C(a)) => {
            if matches!(ctx.variant, Variant::N1N2 { pin_source, .. } if pin_source == a) {
                ctx.right_omega.into_iter().collect()
            } else {
                let class = &ctx.right_class[a % ctx.w];
                let mut cands = Vec::new();
                if let Some(&same) = ctx.right_c_of_alpha.get(&a) {
                    cands.push(same);
                }
                cands.extend(class.iter().copied().filter(|&y| {
                    Some(y) != ctx.right_c_of_alpha.get(&a).copied()
                }));
                cands
            }
        }
        (GameSide::Right, Role::C(b)) => {
            let class: Vec<usize> = ctx.left_class[b % ctx.w]
                .iter()
                .copied()
                .filter(|&x| {
                    // the pin source may only pair with the distinguished point
                    !matches!(
                        (ctx.variant, ctx.left_roles[x]),
                        (Variant::N1N2 { pin_source, .. }, Role::C(a)) if a == pin_source
                    )
                })
                .collect();
            let mut cands = Vec::new();
            if let Some(&same) = ctx.left_c_of_alpha.get(&b) {
                if class.contains(&same) {
                    cands.push(same);
                }
            }
            cands.extend(
                class
                    .iter()
                    .copied()
                    .filter(|&x| Some(x) != ctx.left_c_of_alpha.get(&b).copied()),
            );
            cands
        }
        (GameSide::Right, Role::COmega) => match ctx.variant {
            Variant::N1N2 { pin_source, .. } => vec![ctx.left_c_of_alpha[&pin_source]],
            Variant::M1N1 { .. } => Vec::new(),
        },
        (GameSide::Left, Role::COmega) => Vec::new(), // left structures carry no distinguished point
    };

    for w in candidates {
        let (x, y, used) = match side {
            GameSide::Left => (id, w, f.contains_target(w)),
            GameSide::Right => (w, id, f.contains_source(w)),
        };
        if used {
            continue;
        }
        if pair_extends(ctx, f, x, y) {
            let mut next = f.clone();
            next.insert(x, y).expect("collision checked above");
            debug_assert!(proof_family_contains(ctx, &next).unwrap_or(false));
            return Ok(next);
        }
    }
    Err(ExtensionError::NoExtension(trace_description(
        ctx, f, side, id,
    )))
}

fn position_pairs(f: &PartialMap) -> Vec<(usize, usize)> {
    f.pairs().collect()
}

/// Close the family under challenges, level by level, up to `rounds`.
/// Exhaustive while the (position × challenge) count at a level fits the
/// remaining budget, sampled (seeded) otherwise; mode is recorded per level.
/// A pass certifies the second player wins the `rounds`-round game from the
/// variant's pins by playing inside the family.
pub fn verify_back_and_forth(
    ctx: &ProofContext,
    rounds: usize,
    budget: u64,
    seed: u64,
) -> VerifyReport {
    let mut checks = Vec::new();
    let pins = ctx.pins();
    match proof_family_contains(ctx, &pins) {
        Ok(true) => {}
        Ok(false) => {
            return VerifyReport::from_checks(vec![CheckResult::fail(
                "pins-in-family",
                CheckMode::Exhaustive,
                "pinned position is outside the family".to_string(),
            )])
        }
        Err(e) => {
            return VerifyReport::from_checks(vec![CheckResult::fail(
                "pins-in-family",
                CheckMode::Exhaustive,
                format!("pin validation failed: {e}"),
            )])
        }
    }
    if rounds == 0 {
        return VerifyReport::from_checks(vec![CheckResult::pass(
            "extension",
            CheckMode::Exhaustive,
            "vacuous at zero rounds",
        )]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spent: u64 = 0;
    let mut frontier: Vec<PartialMap> = vec![pins];
    for level in 0..rounds {
        let challenge_list = |f: &PartialMap| -> Vec<(GameSide, usize)> {
            let mut out = Vec::new();
            for x in 0..ctx.left.structure.domain_size() {
                if !f.contains_source(x) {
                    out.push((GameSide::Left, x));
                }
            }
            for y in 0..ctx.right.structure.domain_size() {
                if !f.contains_target(y) {
                    out.push((GameSide::Right, y));
                }
            }
            out
        };
        let per_position = (ctx.left.structure.domain_size() + ctx.right.structure.domain_size()
            - 2 * frontier[0].len()) as u64;
        let total = frontier.len() as u64 * per_position;
        let remaining = budget.saturating_sub(spent);
        let exhaustive = total <= remaining;

        let mut next: Vec<PartialMap> = Vec::new();
        let mut seen: HashSet<Vec<(usize, usize)>> = HashSet::new();
        let mut tested: u64 = 0;
        let mut failure: Option<String> = None;

        let run_one = |f: &PartialMap,
                           ch: (GameSide, usize),
                           next: &mut Vec<PartialMap>,
                           seen: &mut HashSet<Vec<(usize, usize)>>|
         -> Option<String> {
            match proof_extend(ctx, f, ch) {
                Ok(ext) => {
                    if level + 1 < rounds && seen.insert(position_pairs(&ext)) {
                        next.push(ext);
                    }
                    None
                }
                Err(ExtensionError::NoExtension(detail)) => Some(format!(
                    "position {:?} has no family extension: {detail}",
                    position_pairs(f)
                )),
                Err(other) => Some(format!(
                    "extension error at position {:?}: {other}",
                    position_pairs(f)
                )),
            }
        };

        if exhaustive {
            'outer: for f in &frontier {
                for ch in challenge_list(f) {
                    tested += 1;
                    if let Some(msg) = run_one(f, ch, &mut next, &mut seen) {
                        failure = Some(msg);
                        break 'outer;
                    }
                }
            }
        } else {
            let samples = remaining.min(total) as usize;
            for _ in 0..samples {
                let f = &frontier[rng.gen_range(0..frontier.len())];
                let chs = challenge_list(f);
                let ch = chs[rng.gen_range(0..chs.len())];
                tested += 1;
                if let Some(msg) = run_one(f, ch, &mut next, &mut seen) {
                    failure = Some(msg);
                    break;
                }
            }
        }
        spent += tested;
        let mode = if exhaustive {
            CheckMode::Exhaustive
        } else {
            CheckMode::Sampled {
                samples: tested as usize,
            }
        };
        let name = format!("extend-level-{level}");
        match failure {
            Some(msg) => {
                checks.push(CheckResult::fail(&name, mode, msg));
                return VerifyReport::from_checks(checks);
            }
            None => checks.push(CheckResult::pass(
                &name,
                mode,
                format!(
                    "{} positions, {} extension attempts, all succeeded",
                    frontier.len(),
                    tested
                ),
            )),
        }
        if level + 1 < rounds {
            if next.is_empty() {
                // sampled runs may not have recorded extensions; keep frontier
                next = frontier.clone();
            }
            frontier = next;
        }
    }
    VerifyReport::from_checks(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{build_good_sequence, TruncationParams};
    use crate::models::sample_x;

    fn small() -> GoodSequence {
        build_good_sequence(&TruncationParams::small()).unwrap()
    }

    #[test]
    fn empty_map_is_in_family() {
        let g = small();
        let x = sample_x(&g, 1, 0).unwrap();
        let ctx = ProofContext::m1n1(&g, &x, 0).unwrap();
        assert!(proof_family_contains(&ctx, &PartialMap::empty()).unwrap());
    }

    #[test]
    fn residue_mismatch_is_rejected() {
        let g = small();
        let x = sample_x(&g, 1, 0).unwrap();
        let ctx = ProofContext::m1n1(&g, &x, 0).unwrap();
        // find two left/right ordinaries with different residues
        let a = *x.ordinaries.iter().find(|&&a| a % 5 == 1).unwrap();
        let left_id = ctx.left_c_of_alpha[&a];
        let right_id = ctx.right_c_of_alpha[&2]; // residue 2
        let f = PartialMap::from_pairs([(left_id, right_id)]).unwrap();
        assert!(!proof_family_contains(&ctx, &f).unwrap());
    }

    #[test]
    fn pin_pair_is_exempt_and_required() {
        let g = small();
        let ctx = ProofContext::n1n2(&g, 1).unwrap();
        let pins = ctx.pins();
        assert!(proof_family_contains(&ctx, &pins).unwrap());
        // pin source mapped to an ordinary is outside the family
        let Variant::N1N2 { pin_source, .. } = ctx.variant else {
            unreachable!()
        };
        let src = ctx.left_c_of_alpha[&pin_source];
        let same_class_other = ctx.right_class[1]
            .iter()
            .copied()
            .find(|&y| ctx.right_roles[y] != Role::C(pin_source))
            .unwrap();
        let f = PartialMap::from_pairs([(src, same_class_other)]).unwrap();
        assert!(!proof_family_contains(&ctx, &f).unwrap());
    }

    #[test]
    fn extend_identity_for_base_points() {
        let g = small();
        let x = sample_x(&g, 1, 0).unwrap();
        let ctx = ProofContext::m1n1(&g, &x, 0).unwrap();
        let f = PartialMap::empty();
        let ext = proof_extend(&ctx, &f, (GameSide::Left, 0)).unwrap();
        assert_eq!(ext.get(0), Some(0));
        // covered challenge errors
        assert!(matches!(
            proof_extend(&ctx, &ext, (GameSide::Left, 0)),
            Err(ExtensionError::AlreadyCovered { .. })
        ));
    }

    #[test]
    fn verify_small_rounds() {
        let g = small();
        let x = sample_x(&g, 1, 0).unwrap();
        let ctx = ProofContext::m1n1(&g, &x, 0).unwrap();
        // zero rounds: vacuous pass
        let r0 = verify_back_and_forth(&ctx, 0, 1_000, 7);
        assert!(r0.pass);
        let r2 = verify_back_and_forth(&ctx, 2, 200_000, 7);
        assert!(r2.pass, "{}", r2.to_json());
        let ctx = ProofContext::n1n2(&g, 1).unwrap();
        let r2 = verify_back_and_forth(&ctx, 2, 200_000, 7);
        assert!(r2.pass, "{}", r2.to_json());
    }

    #[test]
    fn pin_requires_matching_residue() {
        let g = small();
        assert!(matches!(
            ProofContext::n1n2_with_pin(&g, 1, 0),
            Err(ExtensionError::PinResidueMismatch { .. })
        ));
    }
}
