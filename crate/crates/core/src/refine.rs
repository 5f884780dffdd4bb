//! Iterated color refinement over one or more structures.
//!
//! Colors are isomorphism-invariant: they start from (sort, per-relation
//! degree) and are refined by per-relation neighbor-color multisets until
//! stable. Refining several structures jointly yields colors comparable
//! across them, which is what both the game solver (response ordering) and
//! the isomorphism search (sound candidate pruning) need.

use std::collections::BTreeMap;

use crate::structure::Structure;

/// Stable joint coloring. `colors[si][x]` is the color of element `x` of
/// structure `si`; equal colors mean "not yet distinguished".
pub(crate) fn joint_colors(structs: &[&Structure]) -> Vec<Vec<usize>> {
    let rel_count = structs
        .iter()
        .map(|s| s.rel_count())
        .max()
        .unwrap_or(1);
    // Neighbor lists (both directions folded together; relations are Q x P).
    let adj: Vec<Vec<Vec<Vec<usize>>>> = structs
        .iter()
        .map(|s| {
            let mut per_rel = vec![vec![Vec::new(); s.domain_size()]; s.rel_count()];
            for (n, rel) in s.rels().iter().enumerate() {
                for &(x, y) in rel {
                    per_rel[n][x].push(y);
                    per_rel[n][y].push(x);
                }
            }
            per_rel
        })
        .collect();

    // Initial color: sort plus per-relation degree vector.
    let mut palette: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut colors: Vec<Vec<usize>> = structs
        .iter()
        .enumerate()
        .map(|(si, s)| {
            (0..s.domain_size())
                .map(|x| {
                    let mut key = vec![usize::from(s.q().contains(&x))];
                    for n in 0..rel_count {
                        key.push(adj[si].get(n).map_or(0, |per| per[x].len()));
                    }
                    let next = palette.len();
                    *palette.entry(key).or_insert(next)
                })
                .collect()
        })
        .collect();

    loop {
        let mut palette: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let next: Vec<Vec<usize>> = structs
            .iter()
            .enumerate()
            .map(|(si, s)| {
                (0..s.domain_size())
                    .map(|x| {
                        let mut key = vec![colors[si][x]];
                        for n in 0..s.rel_count() {
                            let mut neigh: Vec<usize> =
                                adj[si][n][x].iter().map(|&y| colors[si][y]).collect();
                            neigh.sort_unstable();
                            key.push(usize::MAX); // relation separator
                            key.extend(neigh);
                        }
                        let id = palette.len();
                        *palette.entry(key).or_insert(id)
                    })
                    .collect()
            })
            .collect();
        let old_count = count_distinct(&colors);
        let new_count = count_distinct(&next);
        colors = next;
        if new_count == old_count {
            return colors;
        }
    }
}

fn count_distinct(colors: &[Vec<usize>]) -> usize {
    let mut all: Vec<usize> = colors.iter().flatten().copied().collect();
    all.sort_unstable();
    all.dedup();
    all.len()
}

/// Multiset of color-class sizes for one structure of a joint coloring.
pub(crate) fn class_size_multiset(colors: &[usize]) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for &c in colors {
        *out.entry(c).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{Structure, Vocabulary};
    use std::collections::BTreeSet;

    #[test]
    fn refinement_separates_active_from_isolated() {
        // two P elements: one related, one isolated
        let s = Structure::new(
            "s",
            Vocabulary::binary(1).unwrap(),
            3,
            BTreeSet::from([1, 2]),
            BTreeSet::from([0]),
            vec![BTreeSet::from([(0, 1)])],
        )
        .unwrap();
        let colors = joint_colors(&[&s]);
        assert_ne!(colors[0][1], colors[0][2]);
        assert_ne!(colors[0][0], colors[0][1]);
    }

    #[test]
    fn joint_colors_align_isomorphic_structures() {
        let v = Vocabulary::binary(1).unwrap();
        let a = Structure::new(
            "a",
            v,
            2,
            BTreeSet::from([1]),
            BTreeSet::from([0]),
            vec![BTreeSet::from([(0, 1)])],
        )
        .unwrap();
        let b = Structure::new(
            "b",
            v,
            2,
            BTreeSet::from([0]),
            BTreeSet::from([1]),
            vec![BTreeSet::from([(1, 0)])],
        )
        .unwrap();
        let colors = joint_colors(&[&a, &b]);
        assert_eq!(colors[0][0], colors[1][1]);
        assert_eq!(colors[0][1], colors[1][0]);
    }
}
