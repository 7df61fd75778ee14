//! Random partitions of `{1, …, n}` induced by a tag sequence.
//!
//! Blocks are kept in order-of-appearance normal form: block `k` is the
//! `k`-th distinct tag value observed, its indices sorted ascending. All
//! indices are 1-based, matching the observation numbering.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{GosError, Result};

/// Largest `n` accepted by [`enumerate_partitions`]. Bell(12) = 4 213 597.
pub const MAX_ENUMERATION_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    n: usize,
}

impl Partition {
    /// The partition of the empty set (no observations yet).
    pub fn empty() -> Self {
        Partition {
            blocks: Vec::new(),
            n: 0,
        }
    }

    /// Build from explicit blocks, validating the normal-form invariants.
    pub fn from_blocks(blocks: Vec<Vec<usize>>) -> Result<Self> {
        let n: usize = blocks.iter().map(Vec::len).sum();
        let mut seen = vec![false; n + 1];
        let mut prev_min = 0;
        for block in &blocks {
            let first = *block
                .first()
                .ok_or_else(|| GosError::domain("partition blocks must be nonempty"))?;
            if first <= prev_min {
                return Err(GosError::domain(
                    "blocks must be ordered by their least element",
                ));
            }
            prev_min = first;
            for w in block.windows(2) {
                if w[0] >= w[1] {
                    return Err(GosError::domain("block indices must be strictly ascending"));
                }
            }
            for &i in block {
                if i == 0 || i > n || seen[i] {
                    return Err(GosError::domain(format!(
                        "index {i} is out of range or repeated for n = {n}"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(Partition { blocks, n })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &[usize] {
        &self.blocks[j]
    }

    /// Number of partitioned observations.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of blocks, `L_n`.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Sizes `|π_j|` of each block.
    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// 0-based block index for every observation `1..=n`.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.n];
        for (j, block) in self.blocks.iter().enumerate() {
            for &i in block {
                labels[i - 1] = j;
            }
        }
        labels
    }

    /// `[π]_{j+}`: put observation `n + 1` into block `j` (1-based).
    pub fn augment_into_block(&self, j: usize) -> Result<Self> {
        if j == 0 || j > self.blocks.len() {
            return Err(GosError::domain(format!(
                "block index {j} out of range 1..={}",
                self.blocks.len()
            )));
        }
        let mut next = self.clone();
        next.push_into_block(j - 1);
        Ok(next)
    }

    /// `[π; (n+1)]`: open a new singleton block for observation `n + 1`.
    pub fn augment_new_block(&self) -> Self {
        let mut next = self.clone();
        next.push_new_block();
        next
    }

    /// In-place variant of [`augment_into_block`](Self::augment_into_block)
    /// with a 0-based block index. Panics when out of range.
    pub(crate) fn push_into_block(&mut self, block: usize) {
        self.n += 1;
        self.blocks[block].push(self.n);
    }

    pub(crate) fn push_new_block(&mut self) {
        self.n += 1;
        self.blocks.push(vec![self.n]);
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (j, block) in self.blocks.iter().enumerate() {
            if j > 0 {
                write!(f, ";")?;
            }
            write!(f, "(")?;
            for (k, i) in block.iter().enumerate() {
                if k > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{i}")?;
            }
            write!(f, ")")?;
        }
        write!(f, "]")
    }
}

/// Canonical key for exact tag equality. `-0.0` and `0.0` compare equal as
/// reals, so they share a key.
pub(crate) fn tag_key(tag: f64) -> u64 {
    if tag == 0.0 {
        0
    } else {
        tag.to_bits()
    }
}

/// The partition induced by exact equality of tags, blocks in order of first
/// appearance.
pub fn induced_partition(tags: &[f64]) -> Result<Partition> {
    if tags.is_empty() {
        return Err(GosError::domain("induced_partition needs at least one tag"));
    }
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut partition = Partition::empty();
    for &tag in tags {
        match index.get(&tag_key(tag)) {
            Some(&block) => partition.push_into_block(block),
            None => {
                index.insert(tag_key(tag), partition.len());
                partition.push_new_block();
            }
        }
    }
    Ok(partition)
}

/// Every partition of `{1, …, n}` exactly once, in order-of-appearance normal
/// form.
///
/// Generated from restricted growth strings `a_1 … a_n` with `a_1 = 0` and
/// `a_{i+1} ≤ 1 + max(a_1..a_i)`, which are in bijection with set partitions.
pub fn enumerate_partitions(n: usize) -> Result<PartitionIter> {
    if n == 0 || n > MAX_ENUMERATION_N {
        return Err(GosError::domain(format!(
            "enumerate_partitions supports 1 <= n <= {MAX_ENUMERATION_N}, got {n}"
        )));
    }
    Ok(PartitionIter {
        growth: vec![0; n],
        maxima: vec![0; n],
        done: false,
    })
}

#[derive(Debug, Clone)]
pub struct PartitionIter {
    growth: Vec<usize>,
    // maxima[i] = max(growth[0..=i])
    maxima: Vec<usize>,
    done: bool,
}

impl PartitionIter {
    fn current(&self) -> Partition {
        let num_blocks = self.maxima[self.growth.len() - 1] + 1;
        let mut blocks = vec![Vec::new(); num_blocks];
        for (i, &b) in self.growth.iter().enumerate() {
            blocks[b].push(i + 1);
        }
        Partition {
            blocks,
            n: self.growth.len(),
        }
    }

    fn advance(&mut self) {
        let n = self.growth.len();
        // rightmost position that can still be incremented
        let mut i = n;
        while i > 1 {
            i -= 1;
            if self.growth[i] <= self.maxima[i - 1] {
                self.growth[i] += 1;
                self.maxima[i] = self.maxima[i - 1].max(self.growth[i]);
                for k in i + 1..n {
                    self.growth[k] = 0;
                    self.maxima[k] = self.maxima[i];
                }
                return;
            }
        }
        self.done = true;
    }
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let p = self.current();
        self.advance();
        Some(p)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    fn blocks(p: &Partition) -> Vec<Vec<usize>> {
        p.blocks().to_vec()
    }

    /// Independent oracle: insert element `n` into every block of every
    /// partition of `{1..n-1}`, or as a new block.
    fn recursive_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in recursive_partitions(n - 1) {
            for j in 0..p.len() {
                let mut q = p.clone();
                q[j].push(n);
                out.push(q);
            }
            let mut q = p.clone();
            q.push(vec![n]);
            out.push(q);
        }
        out
    }

    #[test]
    fn induced_partition_examples() {
        let p = induced_partition(&[0.3, 0.7, 0.3]).unwrap();
        assert_eq!(blocks(&p), vec![vec![1, 3], vec![2]]);
        assert_eq!(p.len(), 2);
        assert_eq!(p.to_string(), "[(1,3);(2)]");

        let p = induced_partition(&[0.5]).unwrap();
        assert_eq!(blocks(&p), vec![vec![1]]);

        let p = induced_partition(&[0.1; 4]).unwrap();
        assert_eq!(blocks(&p), vec![vec![1, 2, 3, 4]]);
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn induced_partition_rejects_empty() {
        assert!(matches!(induced_partition(&[]), Err(GosError::Domain(_))));
    }

    #[test]
    fn signed_zero_tags_are_equal() {
        let p = induced_partition(&[0.0, -0.0]).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn augment_examples() {
        let p = Partition::from_blocks(vec![vec![1, 3], vec![2]]).unwrap();
        assert_eq!(
            blocks(&p.augment_into_block(2).unwrap()),
            vec![vec![1, 3], vec![2, 4]]
        );
        assert_eq!(
            blocks(&p.augment_new_block()),
            vec![vec![1, 3], vec![2], vec![4]]
        );

        let single = Partition::from_blocks(vec![vec![1]]).unwrap();
        assert_eq!(blocks(&single.augment_into_block(1).unwrap()), vec![vec![1, 2]]);
        assert_eq!(blocks(&single.augment_new_block()), vec![vec![1], vec![2]]);

        let q = Partition::from_blocks(vec![vec![1, 2], vec![3]]).unwrap();
        assert_eq!(
            blocks(&q.augment_into_block(1).unwrap()),
            vec![vec![1, 2, 4], vec![3]]
        );
        let r = Partition::from_blocks(vec![vec![1, 2, 3]]).unwrap();
        assert_eq!(blocks(&r.augment_new_block()), vec![vec![1, 2, 3], vec![4]]);
    }

    #[test]
    fn augment_into_block_out_of_range() {
        let p = Partition::from_blocks(vec![vec![1, 3], vec![2]]).unwrap();
        assert!(p.augment_into_block(0).is_err());
        assert!(p.augment_into_block(3).is_err());
    }

    #[test]
    fn from_blocks_rejects_bad_forms() {
        assert!(Partition::from_blocks(vec![vec![2], vec![1]]).is_err());
        assert!(Partition::from_blocks(vec![vec![1, 1]]).is_err());
        assert!(Partition::from_blocks(vec![vec![1, 3]]).is_err());
        assert!(Partition::from_blocks(vec![vec![1], vec![]]).is_err());
        assert!(Partition::from_blocks(vec![vec![3, 1], vec![2]]).is_err());
    }

    #[test]
    fn enumeration_counts_match_oracle() {
        // Bell numbers frozen from the recursive oracle.
        let oracle: Vec<usize> = (1..=8).map(|n| recursive_partitions(n).len()).collect();
        assert_eq!(oracle, vec![1, 2, 5, 15, 52, 203, 877, 4140]);
        for n in 1..=8 {
            assert_eq!(enumerate_partitions(n).unwrap().count(), oracle[n - 1]);
        }
    }

    #[test]
    fn enumeration_matches_oracle_as_sets() {
        for n in 1..=6 {
            let ours: HashSet<Vec<Vec<usize>>> =
                enumerate_partitions(n).unwrap().map(|p| blocks(&p)).collect();
            let theirs: HashSet<Vec<Vec<usize>>> = recursive_partitions(n).into_iter().collect();
            assert_eq!(ours, theirs, "n = {n}");
        }
    }

    #[test]
    fn enumeration_yields_valid_normal_forms() {
        for p in enumerate_partitions(6).unwrap() {
            let again = Partition::from_blocks(p.blocks().to_vec()).unwrap();
            assert_eq!(again, p);
        }
    }

    #[test]
    fn enumeration_range_guard() {
        assert!(enumerate_partitions(0).is_err());
        assert!(enumerate_partitions(13).is_err());
        assert_eq!(enumerate_partitions(1).unwrap().count(), 1);
    }

    #[test]
    #[ignore = "Bell(12) = 4 213 597 partitions; slow"]
    fn enumeration_bell_12() {
        assert_eq!(enumerate_partitions(12).unwrap().count(), 4_213_597);
    }

    fn small_tags() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..5, 1..20)
    }

    proptest! {
        #[test]
        fn induced_partition_depends_only_on_equality_pattern(
            codes in small_tags(),
            shift in 0.0f64..10.0,
            scale in 0.5f64..3.0,
        ) {
            let a: Vec<f64> = codes.iter().map(|&c| c as f64).collect();
            // an injective relabeling of the values
            let b: Vec<f64> = codes.iter().map(|&c| shift + scale * (c as f64).powi(3)).collect();
            prop_assert_eq!(induced_partition(&a).unwrap(), induced_partition(&b).unwrap());
        }

        #[test]
        fn appending_tags_matches_augment_operators(codes in small_tags(), pick in 0usize..20) {
            let tags: Vec<f64> = codes.iter().map(|&c| c as f64).collect();
            let p = induced_partition(&tags).unwrap();

            let mut fresh = tags.clone();
            fresh.push(99.0);
            prop_assert_eq!(induced_partition(&fresh).unwrap(), p.augment_new_block());
            prop_assert_eq!(p.augment_new_block().len(), p.len() + 1);

            let j = pick % p.len();
            let mut dup = tags.clone();
            dup.push(tags[p.block(j)[0] - 1]);
            let q = p.augment_into_block(j + 1).unwrap();
            prop_assert_eq!(q.len(), p.len());
            prop_assert_eq!(induced_partition(&dup).unwrap(), q);
        }
    }
}
