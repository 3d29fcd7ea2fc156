//! LZ digests, the Lempel-Ziv Jaccard distance, and a k-NN classifier on top.
//!
//! A digest is built with a sliding window: the window grows while its
//! contents are already stored, the first unseen window is inserted, and the
//! window restarts right after it. A trailing window that is still a stored
//! entry when the input ends is dropped.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Token types a digest can be built over.
pub trait Token: Copy + Eq + Hash + Into<u64> {}

impl<T: Copy + Eq + Hash + Into<u64>> Token for T {}

/// Set of unique subsequences, kept in insertion order.
#[derive(Debug, Clone)]
pub struct Digest<T> {
    entries: Vec<Vec<T>>,
    index: HashSet<Vec<T>>,
}

impl<T: Token> Digest<T> {
    pub fn entries(&self) -> &[Vec<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, entry: &[T]) -> bool {
        self.index.contains(entry)
    }
}

impl<T: Token> PartialEq for Digest<T> {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index
    }
}

/// Digest stored as 64-bit polynomial hashes of its entries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HashedDigest {
    hashes: HashSet<u64>,
}

impl HashedDigest {
    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }
}

/// Set operations needed by [`jaccard_distance`].
pub trait DigestSet {
    fn size(&self) -> usize;
    fn intersection_size(&self, other: &Self) -> usize;
}

impl<T: Token> DigestSet for Digest<T> {
    fn size(&self) -> usize {
        self.index.len()
    }

    fn intersection_size(&self, other: &Self) -> usize {
        let (small, large) = if self.index.len() <= other.index.len() {
            (&self.index, &other.index)
        } else {
            (&other.index, &self.index)
        };
        small.iter().filter(|e| large.contains(*e)).count()
    }
}

impl DigestSet for HashedDigest {
    fn size(&self) -> usize {
        self.hashes.len()
    }

    fn intersection_size(&self, other: &Self) -> usize {
        let (small, large) = if self.hashes.len() <= other.hashes.len() {
            (&self.hashes, &other.hashes)
        } else {
            (&other.hashes, &self.hashes)
        };
        small.iter().filter(|h| large.contains(*h)).count()
    }
}

/// Exact LZ digest of `seq`.
pub fn lz_digest<T: Token>(seq: &[T]) -> Digest<T> {
    // The store is prefix-closed, so the window can be tracked as a walk down
    // a trie of stored entries: node 0 is the empty window.
    let mut children: HashMap<(usize, T), usize> = HashMap::new();
    let mut node_count = 1;
    let mut entries = Vec::new();
    let mut start = 0;
    let mut node = 0;
    for (end, &tok) in seq.iter().enumerate() {
        match children.get(&(node, tok)) {
            Some(&next) => node = next,
            None => {
                children.insert((node, tok), node_count);
                node_count += 1;
                entries.push(seq[start..=end].to_vec());
                start = end + 1;
                node = 0;
            }
        }
    }
    let index = entries.iter().cloned().collect();
    Digest { entries, index }
}

const HASH_MUL: u64 = 0x9E37_79B9_7F4A_7C15;

/// LZ digest stored as rolling hashes; extends the window in O(1) per token.
pub fn lz_digest_hashed<T: Token>(seq: &[T]) -> HashedDigest {
    let mut hashes = HashSet::new();
    let mut h: u64 = 0;
    for &tok in seq {
        let t: u64 = tok.into();
        h = h
            .wrapping_mul(HASH_MUL)
            .wrapping_add(t.wrapping_add(1).wrapping_mul(0xD6E8_FEB8_6659_FD93));
        if hashes.insert(h) {
            h = 0;
        }
    }
    HashedDigest { hashes }
}

/// `1 − |A∩B| / |A∪B|`; two empty digests are at distance 0.
pub fn jaccard_distance<D: DigestSet>(a: &D, b: &D) -> f64 {
    let inter = a.intersection_size(b);
    let union = a.size() + b.size() - inter;
    if union == 0 {
        return 0.0;
    }
    1.0 - inter as f64 / union as f64
}

pub fn lzjd<T: Token>(s1: &[T], s2: &[T]) -> f64 {
    jaccard_distance(&lz_digest(s1), &lz_digest(s2))
}

/// Pairwise LZJD over precomputed digests, row-major `n x n`.
pub fn lzjd_matrix<T: Token + Send + Sync>(digests: &[Digest<T>]) -> Vec<Vec<f64>> {
    (0..digests.len())
        .into_par_iter()
        .map(|i| {
            digests
                .iter()
                .map(|dj| jaccard_distance(&digests[i], dj))
                .collect()
        })
        .collect()
}

/// k-nearest-neighbour classifier over LZJD.
///
/// Neighbours are ranked by distance, then by training index. Among the `k`
/// neighbours the most frequent label wins; label ties go to the smallest summed
/// distance, then to the label seen first.
pub fn knn_classify<T: Token, L: Clone + Eq>(train: &[(Vec<T>, L)], query: &[T], k: usize) -> Result<L> {
    let digests: Vec<Digest<T>> = train.iter().map(|(s, _)| lz_digest(s)).collect();
    let labels: Vec<L> = train.iter().map(|(_, l)| l.clone()).collect();
    knn_with_digests(&digests, &labels, &lz_digest(query), k)
}

pub fn knn_with_digests<T: Token, L: Clone + Eq>(
    digests: &[Digest<T>],
    labels: &[L],
    query: &Digest<T>,
    k: usize,
) -> Result<L> {
    if digests.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if digests.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: digests.len(),
            got: labels.len(),
        });
    }
    if k == 0 || k > digests.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            digests.len()
        )));
    }
    let mut ranked: Vec<(f64, usize)> = digests
        .iter()
        .enumerate()
        .map(|(i, d)| (jaccard_distance(query, d), i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    // (label, votes, summed distance) in first-seen order
    let mut tally: Vec<(L, usize, f64)> = Vec::new();
    for &(dist, i) in &ranked[..k] {
        match tally.iter_mut().find(|(l, _, _)| *l == labels[i]) {
            Some(entry) => {
                entry.1 += 1;
                entry.2 += dist;
            }
            None => tally.push((labels[i].clone(), 1, dist)),
        }
    }
    let mut best = 0;
    for (j, entry) in tally.iter().enumerate().skip(1) {
        let cur = &tally[best];
        if entry.1 > cur.1 || (entry.1 == cur.1 && entry.2 < cur.2) {
            best = j;
        }
    }
    Ok(tally.swap_remove(best).0)
}
