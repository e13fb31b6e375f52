use std::fmt;

use serde::{Deserialize, Serialize};

use super::check_cutoffs;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Many,
    Medium,
    Few,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Many, Bucket::Medium, Bucket::Few];
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bucket::Many => "many",
            Bucket::Medium => "medium",
            Bucket::Few => "few",
        })
    }
}

/// Bucket of every class, indexed by class id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketAssignment {
    pub buckets: Vec<Bucket>,
    /// Class ids from most to least frequent.
    pub frequency_order: Vec<usize>,
}

impl BucketAssignment {
    pub fn of(&self, class: usize) -> Bucket {
        self.buckets[class]
    }

    pub fn num_classes(&self) -> usize {
        self.buckets.len()
    }

    pub fn size(&self, bucket: Bucket) -> usize {
        self.buckets.iter().filter(|&&b| b == bucket).count()
    }

    /// Position of each class in the frequency order (0 = most frequent).
    pub fn frequency_rank(&self) -> Vec<usize> {
        let mut rank = vec![0; self.buckets.len()];
        for (r, &c) in self.frequency_order.iter().enumerate() {
            rank[c] = r;
        }
        rank
    }
}

/// Sorts classes by descending count (ties to the lower id) and assigns the
/// first `many` to [`Bucket::Many`], the next `medium` to [`Bucket::Medium`]
/// and the rest to [`Bucket::Few`].
pub fn bucket_classes(counts: &[usize], (many, medium): (usize, usize)) -> Result<BucketAssignment> {
    check_cutoffs((many, medium), counts.len())?;
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut buckets = vec![Bucket::Few; counts.len()];
    for (rank, &c) in order.iter().enumerate() {
        buckets[c] = if rank < many {
            Bucket::Many
        } else if rank < many + medium {
            Bucket::Medium
        } else {
            Bucket::Few
        };
    }
    Ok(BucketAssignment {
        buckets,
        frequency_order: order,
    })
}
