//! Fixed-length bitsets over observation indices.
//!
//! Every moment in the test statistic is a sum of `±1` over a subset of
//! observations. Keeping those subsets as packed words turns each moment
//! evaluation into a handful of `AND` + `popcount` operations, and keeps the
//! sums integral so they do not depend on evaluation order.

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexSet {
    len: usize,
    words: Vec<u64>,
}

impl IndexSet {
    pub fn empty(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut set = Self::empty(len);
        for i in 0..len {
            if f(i) {
                set.insert(i);
            }
        }
        set
    }

    /// Builds a set from raw words; bits past `len` are cleared.
    pub fn from_words(len: usize, mut words: Vec<u64>) -> Self {
        words.resize(words_for(len), 0);
        let rem = len % 64;
        if rem != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
        Self { len, words }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.len, "index {i} out of range for set of length {}", self.len);
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] & (1u64 << (i % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn intersection_count(&self, other: &IndexSet) -> usize {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn intersection(&self, other: &IndexSet) -> IndexSet {
        debug_assert_eq!(self.len, other.len);
        IndexSet {
            len: self.len,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.contains(i))
    }
}

fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}
