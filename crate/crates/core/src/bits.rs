//! Fixed-width bitsets over a dense id universe.
//!
//! Every hot path in this crate (family verification, game solving,
//! isomorphism search) reduces to intersecting subsets of `{0..n-1}`, so
//! rows and adjacency columns are stored as packed `u64` words.

/// A subset of `{0..len-1}` packed into `u64` words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitSet {
    len: usize,
    words: Vec<u64>,
}

impl BitSet {
    pub fn empty(len: usize) -> Self {
        BitSet {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn full(len: usize) -> Self {
        let mut s = Self::empty(len);
        for i in 0..s.words.len() {
            s.words[i] = !0;
        }
        s.trim();
        s
    }

    pub fn from_iter<I: IntoIterator<Item = usize>>(len: usize, it: I) -> Self {
        let mut s = Self::empty(len);
        for i in it {
            s.insert(i);
        }
        s
    }

    /// Universe size (not the number of members).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn insert(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn contains(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn intersect_with(&mut self, other: &BitSet) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= b;
        }
    }

    pub fn subtract_with(&mut self, other: &BitSet) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    pub fn union_with(&mut self, other: &BitSet) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    /// Count of members after intersecting with `other`, without allocating.
    pub fn intersection_count(&self, other: &BitSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, w)| {
            let mut w = *w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + b)
                }
            })
        })
    }

    pub fn to_sorted_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }

    /// First member, if any.
    pub fn first(&self) -> Option<usize> {
        self.iter().next()
    }

    fn trim(&mut self) {
        let tail = self.len % 64;
        if tail != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_ops() {
        let a = BitSet::from_iter(10, [1, 3, 5, 9]);
        let b = BitSet::from_iter(10, [3, 4, 5]);
        assert_eq!(a.count(), 4);
        assert!(a.contains(9));
        assert!(!a.contains(0));
        assert_eq!(a.intersection_count(&b), 2);
        let mut c = a.clone();
        c.subtract_with(&b);
        assert_eq!(c.to_sorted_vec(), vec![1, 9]);
        assert_eq!(BitSet::full(70).count(), 70);
    }

    #[test]
    fn iter_matches_contains() {
        let a = BitSet::from_iter(130, [0, 63, 64, 65, 128, 129]);
        assert_eq!(a.to_sorted_vec(), vec![0, 63, 64, 65, 128, 129]);
    }
}
