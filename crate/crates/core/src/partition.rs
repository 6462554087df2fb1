//! Random assignment of observations to subsets.
//!
//! The algorithm is fixed so that assignments can be reproduced outside this
//! crate:
//!
//! 1. Seed ChaCha20 with `seed_from_u64(seed)`.
//! 2. Fisher–Yates shuffle `0..n`, drawing the swap index for position `i`
//!    (from `n − 1` down to 1) with [`uniform_below`]`(i + 1)`.
//! 3. Cut the permutation into `k` contiguous chunks; the first `n mod k`
//!    chunks get one extra element.
//! 4. With overlap, subset `j` (in order) additionally receives
//!    `⌊f · m_j⌋` indices drawn without replacement from outside its chunk,
//!    again by a partial Fisher–Yates shuffle on the same stream.
//! 5. Each membership list is sorted ascending.

use rand::RngCore;

use crate::error::{DiskError, Result};
use crate::rng::{rng_from_seed, uniform_below};

/// Row indices per subset and the matching likelihood exponents `n / m_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetAssignment {
    pub n: usize,
    pub memberships: Vec<Vec<usize>>,
    pub exponents: Vec<f64>,
}

impl SubsetAssignment {
    /// Builds an assignment from explicit memberships, checking coverage.
    pub fn from_memberships(n: usize, memberships: Vec<Vec<usize>>) -> Result<Self> {
        if memberships.is_empty() {
            return Err(DiskError::input("assignment has no subsets"));
        }
        let mut seen = vec![false; n];
        for (j, m) in memberships.iter().enumerate() {
            if m.is_empty() {
                return Err(DiskError::input(format!("subset {j} is empty")));
            }
            let mut local = std::collections::HashSet::with_capacity(m.len());
            for &i in m {
                if i >= n {
                    return Err(DiskError::input(format!("subset {j} has row {i} >= n={n}")));
                }
                if !local.insert(i) {
                    return Err(DiskError::input(format!("subset {j} lists row {i} twice")));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(DiskError::input(format!("row {missing} is not assigned to any subset")));
        }
        let exponents = memberships.iter().map(|m| n as f64 / m.len() as f64).collect();
        Ok(SubsetAssignment {
            n,
            memberships,
            exponents,
        })
    }

    pub fn k(&self) -> usize {
        self.memberships.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.memberships.iter().map(Vec::len).collect()
    }
}

/// Extension point for other partitioning schemes.
pub trait Partitioner {
    fn partition(&self, n: usize, k: usize, seed: u64) -> Result<SubsetAssignment>;
}

/// Uniformly random near-equal partition, optionally with overlap.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RandomPartitioner {
    pub overlap_fraction: f64,
}

impl Partitioner for RandomPartitioner {
    fn partition(&self, n: usize, k: usize, seed: u64) -> Result<SubsetAssignment> {
        random_partition(n, k, seed, self.overlap_fraction)
    }
}

fn shuffle<R: RngCore>(rng: &mut R, v: &mut [usize]) {
    for i in (1..v.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        v.swap(i, j);
    }
}

pub fn random_partition(n: usize, k: usize, seed: u64, overlap_fraction: f64) -> Result<SubsetAssignment> {
    if k == 0 || n == 0 {
        return Err(DiskError::input(format!("need n >= 1 and k >= 1, got n={n}, k={k}")));
    }
    if k > n {
        return Err(DiskError::input(format!("cannot split {n} rows into {k} subsets")));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(DiskError::input(format!(
            "overlap fraction must lie in [0, 1), got {overlap_fraction}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    shuffle(&mut rng, &mut perm);

    let base = n / k;
    let extra = n % k;
    let mut chunks = Vec::with_capacity(k);
    let mut start = 0;
    for j in 0..k {
        let len = base + usize::from(j < extra);
        chunks.push(perm[start..start + len].to_vec());
        start += len;
    }

    let mut memberships = Vec::with_capacity(k);
    for chunk in &chunks {
        let mut members = chunk.clone();
        let add = (overlap_fraction * chunk.len() as f64).floor() as usize;
        if add > 0 && k > 1 {
            let mut inside = vec![false; n];
            for &i in chunk {
                inside[i] = true;
            }
            let mut pool: Vec<usize> = (0..n).filter(|&i| !inside[i]).collect();
            let add = add.min(pool.len());
            // Partial Fisher–Yates: the first `add` slots become the sample.
            for t in 0..add {
                let r = t + uniform_below(&mut rng, (pool.len() - t) as u64) as usize;
                pool.swap(t, r);
            }
            members.extend_from_slice(&pool[..add]);
        }
        members.sort_unstable();
        memberships.push(members);
    }
    SubsetAssignment::from_memberships(n, memberships)
}
