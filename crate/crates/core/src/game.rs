//! Exact bounded-round back-and-forth games.
//!
//! Positions are injective partial maps that preserve sorts and relations
//! both ways. Each round the first player picks any element on either side;
//! the second player must extend the map so it stays a partial isomorphism,
//! and wins by surviving all rounds. [`ef_decide`] solves the game exactly
//! (memoized search, with challenge collapse by atomic type at the final
//! round, where game value provably depends on atomic type alone) and emits
//! a certificate that [`ef_certificate_check`] replays independently.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitSet;
use crate::refine::joint_colors;
use crate::structure::{PartialMap, Structure};

/// Default cap on solver work (counted in atomic pair validations).
pub const DEFAULT_GAME_BUDGET: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    Duplicator,
    Spoiler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Round count plus the initial pinned position.
#[derive(Debug, Clone)]
pub struct GameConfig {
    pub rounds: usize,
    pub pins: PartialMap,
}

impl GameConfig {
    pub fn new(rounds: usize) -> Self {
        GameConfig {
            rounds,
            pins: PartialMap::empty(),
        }
    }

    pub fn with_pins(rounds: usize, pins: PartialMap) -> Self {
        GameConfig { rounds, pins }
    }
}

#[derive(Debug, Error)]
pub enum GameError {
    #[error("element id {id} out of range for {side:?} structure of size {size}")]
    IdOutOfRange { id: usize, side: Side, size: usize },
    #[error("search budget of {budget} nodes exceeded")]
    BudgetExceeded { budget: u64 },
    #[error("malformed certificate: {0}")]
    MalformedCertificate(String),
}

/// Winner plus a replayable certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameResult {
    pub winner: Winner,
    pub rounds: usize,
    pub certificate: Certificate,
    /// Atomic pair validations performed by the solver.
    pub nodes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Certificate {
    /// The pinned position itself is not a partial isomorphism.
    SpoilerRound0 { reason: String },
    /// Position key → (challenge key → response id). At positions with one
    /// round left, entries are stored per atomic type representative; the
    /// checker matches other challenges of the same type to them.
    Duplicator {
        entries: BTreeMap<String, BTreeMap<String, usize>>,
    },
    /// A challenge tree: for every legal response, a losing subtree.
    Spoiler { tree: SpoilerTree },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpoilerTree {
    pub side: Side,
    pub challenge: usize,
    /// One entry per legal response; empty when no legal response exists.
    pub responses: BTreeMap<usize, SpoilerTree>,
}

/// True iff `f` is a partial isomorphism from `s` to `t`: injective (by
/// construction of [`PartialMap`]), sort-preserving, and relation-preserving
/// in both directions on its domain.
pub fn partial_iso_check(s: &Structure, t: &Structure, f: &PartialMap) -> Result<bool, GameError> {
    for (x, y) in f.pairs() {
        if x >= s.domain_size() {
            return Err(GameError::IdOutOfRange {
                id: x,
                side: Side::Left,
                size: s.domain_size(),
            });
        }
        if y >= t.domain_size() {
            return Err(GameError::IdOutOfRange {
                id: y,
                side: Side::Right,
                size: t.domain_size(),
            });
        }
    }
    let rel_count = s.rel_count().max(t.rel_count());
    for (x, y) in f.pairs() {
        if s.q().contains(&x) != t.q().contains(&y) {
            return Ok(false);
        }
        for (u, v) in f.pairs() {
            for n in 0..rel_count {
                let in_s = n < s.rel_count() && (s.has(n, x, u) || s.has(n, u, x));
                let in_t = n < t.rel_count() && (t.has(n, y, v) || t.has(n, v, y));
                if in_s != in_t {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Adjacency bitsets for one structure: `adj[n][x]` holds the `R_n`
/// neighbors of `x` in either direction.
struct AdjSide {
    domain: usize,
    q_mask: BitSet,
    adj: Vec<Vec<BitSet>>,
    colors: Vec<usize>,
    /// Element ids grouped by color, for response ordering.
    by_color: HashMap<usize, Vec<usize>>,
}

impl AdjSide {
    fn new(s: &Structure, rel_count: usize, colors: Vec<usize>) -> Self {
        let domain = s.domain_size();
        let mut adj = vec![vec![BitSet::empty(domain); domain]; rel_count];
        for (n, rel) in s.rels().iter().enumerate() {
            for &(x, y) in rel {
                adj[n][x].insert(y);
                adj[n][y].insert(x);
            }
        }
        let q_mask = BitSet::from_iter(domain, s.q().iter().copied());
        let mut by_color: HashMap<usize, Vec<usize>> = HashMap::new();
        for (x, &c) in colors.iter().enumerate() {
            by_color.entry(c).or_default().push(x);
        }
        AdjSide {
            domain,
            q_mask,
            adj,
            colors,
            by_color,
        }
    }

    fn related(&self, n: usize, x: usize, y: usize) -> bool {
        self.adj[n][x].contains(y)
    }

    fn is_q(&self, x: usize) -> bool {
        self.q_mask.contains(x)
    }
}

/// Position pairs, sorted by left id.
type Position = Vec<(u32, u32)>;

struct Solver {
    left: AdjSide,
    right: AdjSide,
    rel_count: usize,
    budget: u64,
    nodes: u64,
    memo: HashMap<(Position, usize), bool>,
}

impl Solver {
    fn new(s: &Structure, t: &Structure, budget: u64) -> Self {
        let colors = joint_colors(&[s, t]);
        let rel_count = s.rel_count().max(t.rel_count());
        Solver {
            left: AdjSide::new(s, rel_count, colors[0].clone()),
            right: AdjSide::new(t, rel_count, colors[1].clone()),
            rel_count,
            budget,
            nodes: 0,
            memo: HashMap::new(),
        }
    }

    fn spend(&mut self, amount: u64) -> Result<(), GameError> {
        self.nodes += amount;
        if self.nodes > self.budget {
            Err(GameError::BudgetExceeded {
                budget: self.budget,
            })
        } else {
            Ok(())
        }
    }

    /// Atomic validity of appending (x, y) to the position.
    fn pair_ok(&mut self, pos: &Position, x: usize, y: usize) -> Result<bool, GameError> {
        self.spend(1)?;
        if self.left.is_q(x) != self.right.is_q(y) {
            return Ok(false);
        }
        for &(u, v) in pos {
            for n in 0..self.rel_count {
                if self.left.related(n, x, u as usize) != self.right.related(n, y, v as usize) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    fn covered_left(&self, pos: &Position, x: usize) -> bool {
        pos.iter().any(|&(s, _)| s as usize == x)
    }

    fn covered_right(&self, pos: &Position, y: usize) -> bool {
        pos.iter().any(|&(_, t)| t as usize == y)
    }

    /// Atomic type of a prospective challenge over the position: sort bit
    /// plus the relation bits against every placed element on its own side.
    fn challenge_sig(&self, pos: &Position, side: Side, z: usize) -> u64 {
        let (adj_side, pick): (&AdjSide, fn(&(u32, u32)) -> usize) = match side {
            Side::Left => (&self.left, |p| p.0 as usize),
            Side::Right => (&self.right, |p| p.1 as usize),
        };
        let mut sig: u64 = u64::from(adj_side.is_q(z));
        let mut shift = 1;
        for pair in pos {
            let u = pick(pair);
            for n in 0..self.rel_count {
                sig |= u64::from(adj_side.related(n, z, u)) << shift;
                shift += 1;
            }
        }
        sig
    }

    /// Bitset of valid responses for a challenge with signature `sig` played
    /// on `side` (responses live on the opposite side).
    fn response_set(&mut self, pos: &Position, side: Side, sig: u64) -> Result<BitSet, GameError> {
        let (resp_side, pick): (&AdjSide, fn(&(u32, u32)) -> usize) = match side {
            Side::Left => (&self.right, |p| p.1 as usize),
            Side::Right => (&self.left, |p| p.0 as usize),
        };
        let mut cand = if sig & 1 == 1 {
            resp_side.q_mask.clone()
        } else {
            let mut all = BitSet::full(resp_side.domain);
            all.subtract_with(&resp_side.q_mask);
            all
        };
        let mut shift = 1;
        for pair in pos {
            let v = pick(pair);
            for n in 0..self.rel_count {
                if sig >> shift & 1 == 1 {
                    cand.intersect_with(&resp_side.adj[n][v]);
                } else {
                    cand.subtract_with(&resp_side.adj[n][v]);
                }
                shift += 1;
            }
        }
        for pair in pos {
            cand.remove(pick(pair));
        }
        self.spend(pos.len() as u64 + 1)?;
        Ok(cand)
    }

    fn challenges<'p>(&self, pos: &'p Position) -> Vec<(Side, usize)> {
        let mut out = Vec::new();
        for x in 0..self.left.domain {
            if !self.covered_left(pos, x) {
                out.push((Side::Left, x));
            }
        }
        for y in 0..self.right.domain {
            if !self.covered_right(pos, y) {
                out.push((Side::Right, y));
            }
        }
        out
    }

    /// One round left: the second player survives iff every challenge type
    /// has a valid response. Exact because, with no rounds after this one,
    /// game value depends only on the atomic type of the extended position.
    fn last_round_ok(&mut self, pos: &Position) -> Result<bool, GameError> {
        let mut seen: HashSet<(Side, u64)> = HashSet::new();
        let challenges = self.challenges(pos);
        self.spend(challenges.len() as u64)?;
        for (side, z) in challenges {
            let sig = self.challenge_sig(pos, side, z);
            if !seen.insert((side, sig)) {
                continue;
            }
            let responses = self.response_set(pos, side, sig)?;
            if responses.is_empty() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Ordered response candidates for a challenge: same joint color first.
    fn ordered_candidates(
        &mut self,
        pos: &Position,
        side: Side,
        z: usize,
    ) -> Result<Vec<usize>, GameError> {
        let sig = self.challenge_sig(pos, side, z);
        let valid = self.response_set(pos, side, sig)?;
        let (chal_side, resp_side) = match side {
            Side::Left => (&self.left, &self.right),
            Side::Right => (&self.right, &self.left),
        };
        let color = chal_side.colors[z];
        let mut first: Vec<usize> = Vec::new();
        if let Some(mates) = resp_side.by_color.get(&color) {
            first.extend(mates.iter().copied().filter(|&w| valid.contains(w)));
        }
        let mut rest: Vec<usize> = valid
            .iter()
            .filter(|&w| resp_side.colors[w] != color)
            .collect();
        first.append(&mut rest);
        Ok(first)
    }

    fn insert_pair(pos: &Position, side: Side, z: usize, w: usize) -> Position {
        let pair = match side {
            Side::Left => (z as u32, w as u32),
            Side::Right => (w as u32, z as u32),
        };
        let mut next = pos.clone();
        let at = next.partition_point(|p| *p < pair);
        next.insert(at, pair);
        next
    }

    fn solve(&mut self, pos: &Position, rounds: usize) -> Result<bool, GameError> {
        if rounds == 0 {
            return Ok(true);
        }
        if let Some(&hit) = self.memo.get(&(pos.clone(), rounds)) {
            return Ok(hit);
        }
        let win = if rounds == 1 {
            self.last_round_ok(pos)?
        } else {
            let mut all_ok = true;
            for (side, z) in self.challenges(pos) {
                let mut survivable = false;
                for w in self.ordered_candidates(pos, side, z)? {
                    self.spend(1)?;
                    let next = Self::insert_pair(pos, side, z, w);
                    if self.solve(&next, rounds - 1)? {
                        survivable = true;
                        break;
                    }
                }
                if !survivable {
                    all_ok = false;
                    break;
                }
            }
            all_ok
        };
        self.memo.insert((pos.clone(), rounds), win);
        Ok(win)
    }
}

fn position_key(pos: &Position) -> String {
    pos.iter()
        .map(|(s, t)| format!("{s}:{t}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn challenge_key(side: Side, z: usize) -> String {
    match side {
        Side::Left => format!("L:{z}"),
        Side::Right => format!("R:{z}"),
    }
}

fn parse_challenge_key(key: &str) -> Result<(Side, usize), GameError> {
    let bad = || GameError::MalformedCertificate(format!("bad challenge key {key:?}"));
    let (side, rest) = key.split_once(':').ok_or_else(bad)?;
    let z = rest.parse().map_err(|_| bad())?;
    match side {
        "L" => Ok((Side::Left, z)),
        "R" => Ok((Side::Right, z)),
        _ => Err(bad()),
    }
}

fn pins_to_position(pins: &PartialMap) -> Position {
    let mut pos: Position = pins.pairs().map(|(s, t)| (s as u32, t as u32)).collect();
    pos.sort_unstable();
    pos
}

fn validate_ids(s: &Structure, t: &Structure, pins: &PartialMap) -> Result<(), GameError> {
    for (x, y) in pins.pairs() {
        if x >= s.domain_size() {
            return Err(GameError::IdOutOfRange {
                id: x,
                side: Side::Left,
                size: s.domain_size(),
            });
        }
        if y >= t.domain_size() {
            return Err(GameError::IdOutOfRange {
                id: y,
                side: Side::Right,
                size: t.domain_size(),
            });
        }
    }
    Ok(())
}

/// Decide the bounded-round game exactly and emit a certificate.
pub fn ef_decide(
    s: &Structure,
    t: &Structure,
    cfg: &GameConfig,
    budget: u64,
) -> Result<GameResult, GameError> {
    validate_ids(s, t, &cfg.pins)?;
    if !partial_iso_check(s, t, &cfg.pins)? {
        return Ok(GameResult {
            winner: Winner::Spoiler,
            rounds: cfg.rounds,
            certificate: Certificate::SpoilerRound0 {
                reason: "pinned position is not a partial isomorphism".to_string(),
            },
            nodes: 0,
        });
    }
    let mut solver = Solver::new(s, t, budget);
    let root = pins_to_position(&cfg.pins);
    let win = solver.solve(&root, cfg.rounds)?;
    let certificate = if win {
        extract_duplicator(&mut solver, &root, cfg.rounds)?
    } else {
        extract_spoiler(&mut solver, &root, cfg.rounds)?
    };
    Ok(GameResult {
        winner: if win { Winner::Duplicator } else { Winner::Spoiler },
        rounds: cfg.rounds,
        certificate,
        nodes: solver.nodes,
    })
}

fn extract_duplicator(
    solver: &mut Solver,
    root: &Position,
    rounds: usize,
) -> Result<Certificate, GameError> {
    let mut entries: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut queue: Vec<(Position, usize)> = vec![(root.clone(), rounds)];
    let mut seen: HashSet<(Position, usize)> = HashSet::new();
    while let Some((pos, remaining)) = queue.pop() {
        if remaining == 0 || !seen.insert((pos.clone(), remaining)) {
            continue;
        }
        let mut local: BTreeMap<String, usize> = BTreeMap::new();
        if remaining == 1 {
            let mut reps: HashSet<(Side, u64)> = HashSet::new();
            for (side, z) in solver.challenges(&pos) {
                let sig = solver.challenge_sig(&pos, side, z);
                if !reps.insert((side, sig)) {
                    continue;
                }
                let responses = solver.response_set(&pos, side, sig)?;
                let w = responses.first().ok_or_else(|| {
                    GameError::MalformedCertificate(
                        "winning position lost a response during extraction".to_string(),
                    )
                })?;
                local.insert(challenge_key(side, z), w);
            }
        } else {
            for (side, z) in solver.challenges(&pos) {
                let mut chosen = None;
                for w in solver.ordered_candidates(&pos, side, z)? {
                    let next = Solver::insert_pair(&pos, side, z, w);
                    if solver.solve(&next, remaining - 1)? {
                        chosen = Some((w, next));
                        break;
                    }
                }
                let (w, next) = chosen.ok_or_else(|| {
                    GameError::MalformedCertificate(
                        "winning position lost a response during extraction".to_string(),
                    )
                })?;
                local.insert(challenge_key(side, z), w);
                queue.push((next, remaining - 1));
            }
        }
        entries.insert(position_key(&pos), local);
    }
    Ok(Certificate::Duplicator { entries })
}

fn extract_spoiler(
    solver: &mut Solver,
    pos: &Position,
    rounds: usize,
) -> Result<Certificate, GameError> {
    let tree = extract_spoiler_tree(solver, pos, rounds)?;
    Ok(Certificate::Spoiler { tree })
}

fn extract_spoiler_tree(
    solver: &mut Solver,
    pos: &Position,
    rounds: usize,
) -> Result<SpoilerTree, GameError> {
    debug_assert!(rounds >= 1);
    for (side, z) in solver.challenges(pos) {
        let sig = solver.challenge_sig(pos, side, z);
        let valid = solver.response_set(pos, side, sig)?;
        let mut responses = BTreeMap::new();
        let mut refuted = true;
        for w in valid.iter() {
            let next = Solver::insert_pair(pos, side, z, w);
            if rounds == 1 {
                // any valid response survives the last round
                refuted = false;
                break;
            }
            if solver.solve(&next, rounds - 1)? {
                refuted = false;
                break;
            }
            responses.insert(w, extract_spoiler_tree(solver, &next, rounds - 1)?);
        }
        if refuted {
            return Ok(SpoilerTree {
                side,
                challenge: z,
                responses,
            });
        }
    }
    Err(GameError::MalformedCertificate(
        "losing position has no refuting challenge".to_string(),
    ))
}

/// Replay a certificate against the game it claims to decide.
pub fn ef_certificate_check(
    s: &Structure,
    t: &Structure,
    cfg: &GameConfig,
    result: &GameResult,
) -> Result<bool, GameError> {
    validate_ids(s, t, &cfg.pins)?;
    let pins_ok = partial_iso_check(s, t, &cfg.pins)?;
    let root = pins_to_position(&cfg.pins);
    let mut solver = Solver::new(s, t, u64::MAX);
    match (&result.certificate, result.winner) {
        (Certificate::SpoilerRound0 { .. }, Winner::Spoiler) => Ok(!pins_ok),
        (Certificate::SpoilerRound0 { .. }, Winner::Duplicator) => Ok(false),
        (Certificate::Duplicator { entries }, Winner::Duplicator) => {
            if !pins_ok {
                return Ok(false);
            }
            check_duplicator(&mut solver, entries, &root, cfg.rounds)
        }
        (Certificate::Spoiler { tree }, Winner::Spoiler) => {
            if !pins_ok {
                return Ok(false);
            }
            check_spoiler(&mut solver, tree, &root, cfg.rounds)
        }
        _ => Ok(false),
    }
}

fn check_duplicator(
    solver: &mut Solver,
    entries: &BTreeMap<String, BTreeMap<String, usize>>,
    root: &Position,
    rounds: usize,
) -> Result<bool, GameError> {
    // Pre-parse challenge keys per position.
    let mut queue: Vec<(Position, usize)> = vec![(root.clone(), rounds)];
    let mut seen: HashSet<(Position, usize)> = HashSet::new();
    while let Some((pos, remaining)) = queue.pop() {
        if remaining == 0 || !seen.insert((pos.clone(), remaining)) {
            continue;
        }
        let key = position_key(&pos);
        let Some(local) = entries.get(&key) else {
            return Ok(false); // missing position branch
        };
        let mut parsed: Vec<((Side, usize), usize)> = Vec::with_capacity(local.len());
        for (ck, &w) in local {
            let (side, z) = parse_challenge_key(ck)?;
            let domain = match side {
                Side::Left => solver.left.domain,
                Side::Right => solver.right.domain,
            };
            if z >= domain {
                return Err(GameError::MalformedCertificate(format!(
                    "challenge {ck} out of range"
                )));
            }
            parsed.push(((side, z), w));
        }
        for (side, z) in solver.challenges(&pos) {
            // exact entry, else (final round only) an entry of the same atomic type
            let mut response = parsed
                .iter()
                .find(|((es, ez), _)| *es == side && *ez == z)
                .map(|&(_, w)| w);
            if response.is_none() && remaining == 1 {
                let sig = solver.challenge_sig(&pos, side, z);
                response = parsed
                    .iter()
                    .find(|((es, ez), _)| {
                        *es == side && solver.challenge_sig(&pos, side, *ez) == sig
                    })
                    .map(|&(_, w)| w);
            }
            let Some(w) = response else {
                return Ok(false); // missing challenge branch
            };
            let (x, y) = match side {
                Side::Left => (z, w),
                Side::Right => (w, z),
            };
            if x >= solver.left.domain || y >= solver.right.domain {
                return Err(GameError::MalformedCertificate(format!(
                    "response pair ({x}, {y}) out of range"
                )));
            }
            if solver.covered_left(&pos, x) || solver.covered_right(&pos, y) {
                return Ok(false); // response reuses a placed element
            }
            if !solver.pair_ok(&pos, x, y)? {
                return Ok(false); // response breaks the partial isomorphism
            }
            if remaining > 1 {
                queue.push((Solver::insert_pair(&pos, side, z, w), remaining - 1));
            }
        }
    }
    Ok(true)
}

fn check_spoiler(
    solver: &mut Solver,
    tree: &SpoilerTree,
    pos: &Position,
    remaining: usize,
) -> Result<bool, GameError> {
    if remaining == 0 {
        return Ok(false); // claimed win with no rounds left
    }
    let z = tree.challenge;
    let (domain, covered) = match tree.side {
        Side::Left => (solver.left.domain, solver.covered_left(pos, z)),
        Side::Right => (solver.right.domain, solver.covered_right(pos, z)),
    };
    if z >= domain {
        return Err(GameError::MalformedCertificate(format!(
            "challenge {z} out of range"
        )));
    }
    if covered {
        return Ok(false); // challenge must be an unplaced element
    }
    let sig = solver.challenge_sig(pos, tree.side, z);
    let legal = solver.response_set(pos, tree.side, sig)?;
    // every legal response must be refuted by a subtree, and nothing else
    if remaining == 1 {
        return Ok(legal.is_empty() && tree.responses.is_empty());
    }
    let legal_ids: Vec<usize> = legal.iter().collect();
    if legal_ids.len() != tree.responses.len() {
        return Ok(false);
    }
    for w in legal_ids {
        let Some(sub) = tree.responses.get(&w) else {
            return Ok(false);
        };
        let next = Solver::insert_pair(pos, tree.side, z, w);
        if !check_spoiler(solver, sub, &next, remaining - 1)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{rigid_sample, Vocabulary};
    use std::collections::BTreeSet;

    fn all_q(name: &str, size: usize) -> Structure {
        Structure::new(
            name,
            Vocabulary::binary(1).unwrap(),
            size,
            BTreeSet::new(),
            (0..size).collect(),
            vec![BTreeSet::new()],
        )
        .unwrap()
    }

    #[test]
    fn partial_iso_check_basics() {
        let s = rigid_sample();
        // empty map
        assert!(partial_iso_check(&s, &s, &PartialMap::empty()).unwrap());
        // identity
        let id = PartialMap::from_pairs([(0, 0), (1, 1), (2, 2)]).unwrap();
        assert!(partial_iso_check(&s, &s, &id).unwrap());
        // sending the R_0-active base point to the isolated one flips an atom
        let twist = PartialMap::from_pairs([(0, 1), (2, 2)]).unwrap();
        assert!(!partial_iso_check(&s, &s, &twist).unwrap());
        // out of range
        let oob = PartialMap::from_pairs([(9, 0)]).unwrap();
        assert!(partial_iso_check(&s, &s, &oob).is_err());
    }

    #[test]
    fn identity_game_is_duplicator_win() {
        let s = rigid_sample();
        for rounds in 0..=3 {
            let r = ef_decide(&s, &s, &GameConfig::new(rounds), DEFAULT_GAME_BUDGET).unwrap();
            assert_eq!(r.winner, Winner::Duplicator, "rounds={rounds}");
            assert!(ef_certificate_check(&s, &s, &GameConfig::new(rounds), &r).unwrap());
        }
    }

    #[test]
    fn pigeonhole_sizes() {
        let s = all_q("s2", 2);
        let t = all_q("t3", 3);
        let r2 = ef_decide(&s, &t, &GameConfig::new(2), DEFAULT_GAME_BUDGET).unwrap();
        assert_eq!(r2.winner, Winner::Duplicator);
        assert!(ef_certificate_check(&s, &t, &GameConfig::new(2), &r2).unwrap());
        let r3 = ef_decide(&s, &t, &GameConfig::new(3), DEFAULT_GAME_BUDGET).unwrap();
        assert_eq!(r3.winner, Winner::Spoiler);
        assert!(ef_certificate_check(&s, &t, &GameConfig::new(3), &r3).unwrap());
    }

    #[test]
    fn invalid_pins_lose_at_round_zero() {
        let s = rigid_sample();
        let pins = PartialMap::from_pairs([(0, 2)]).unwrap(); // Q to P
        let cfg = GameConfig::with_pins(1, pins);
        let r = ef_decide(&s, &s, &cfg, DEFAULT_GAME_BUDGET).unwrap();
        assert_eq!(r.winner, Winner::Spoiler);
        assert!(matches!(r.certificate, Certificate::SpoilerRound0 { .. }));
        assert!(ef_certificate_check(&s, &s, &cfg, &r).unwrap());
    }

    #[test]
    fn atomic_type_collapse_is_not_applied_where_unsound() {
        // t has an isolated P element, s does not: at two rounds the first
        // player wins by playing it, even though both of t's P elements have
        // the same atomic type over the empty position.
        let v = Vocabulary::binary(1).unwrap();
        let s = Structure::new(
            "s",
            v,
            2,
            BTreeSet::from([1]),
            BTreeSet::from([0]),
            vec![BTreeSet::from([(0, 1)])],
        )
        .unwrap();
        let t = Structure::new(
            "t",
            v,
            3,
            BTreeSet::from([1, 2]),
            BTreeSet::from([0]),
            vec![BTreeSet::from([(0, 1)])],
        )
        .unwrap();
        let r = ef_decide(&s, &t, &GameConfig::new(2), DEFAULT_GAME_BUDGET).unwrap();
        assert_eq!(r.winner, Winner::Spoiler);
        assert!(ef_certificate_check(&s, &t, &GameConfig::new(2), &r).unwrap());
    }

    #[test]
    fn side_symmetry_and_monotonicity() {
        let s = rigid_sample();
        let t = all_q("t", 3);
        for rounds in 1..=3 {
            let st = ef_decide(&s, &t, &GameConfig::new(rounds), DEFAULT_GAME_BUDGET).unwrap();
            let ts = ef_decide(&t, &s, &GameConfig::new(rounds), DEFAULT_GAME_BUDGET).unwrap();
            assert_eq!(st.winner, ts.winner, "rounds={rounds}");
        }
        // monotonicity: a win at r implies a win at every smaller r
        let big = ef_decide(&s, &s, &GameConfig::new(3), DEFAULT_GAME_BUDGET).unwrap();
        assert_eq!(big.winner, Winner::Duplicator);
        for r in 0..3 {
            let small = ef_decide(&s, &s, &GameConfig::new(r), DEFAULT_GAME_BUDGET).unwrap();
            assert_eq!(small.winner, Winner::Duplicator);
        }
    }

    #[test]
    fn budget_is_an_error_not_a_verdict() {
        let s = all_q("s", 6);
        let t = all_q("t", 7);
        match ef_decide(&s, &t, &GameConfig::new(3), 5) {
            Err(GameError::BudgetExceeded { .. }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn duplicator_certificate_missing_branch_fails() {
        let s = all_q("s", 3);
        let t = all_q("t", 3);
        let cfg = GameConfig::new(2);
        let mut r = ef_decide(&s, &t, &cfg, DEFAULT_GAME_BUDGET).unwrap();
        assert_eq!(r.winner, Winner::Duplicator);
        if let Certificate::Duplicator { entries } = &mut r.certificate {
            let key = entries.keys().next().unwrap().clone();
            entries.get_mut(&key).unwrap().clear();
        }
        assert!(!ef_certificate_check(&s, &t, &cfg, &r).unwrap());
    }

    #[test]
    fn spoiler_certificate_with_surviving_leaf_fails() {
        let s = all_q("s", 2);
        let t = all_q("t", 3);
        let cfg = GameConfig::new(3);
        let r = ef_decide(&s, &t, &cfg, DEFAULT_GAME_BUDGET).unwrap();
        assert_eq!(r.winner, Winner::Spoiler);
        // claim the same tree wins a game it does not (extra rounds make the
        // leaf positions extendable)
        let fake = GameResult {
            winner: Winner::Spoiler,
            rounds: 2,
            certificate: r.certificate.clone(),
            nodes: 0,
        };
        let cfg2 = GameConfig::new(2);
        assert!(!ef_certificate_check(&s, &t, &cfg2, &fake).unwrap());
    }
}
