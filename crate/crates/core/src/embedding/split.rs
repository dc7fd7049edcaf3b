use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

/// Leave-one-out bookkeeping: every sample is queried once against a gallery
/// made of all the other samples. No data is copied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaveOneOut {
    query_order: Vec<usize>,
    count: usize,
}

impl LeaveOneOut {
    pub fn queries(&self) -> &[usize] {
        &self.query_order
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn gallery_for(&self, query: usize) -> impl Iterator<Item = usize> {
        (0..self.count).filter(move |&g| g != query)
    }
}

/// Requires labels with at least two samples per class so that every query
/// has a same-class gallery item. The seed only fixes the query visiting order.
pub fn split_gallery_query(set: &EmbeddingSet, seed: u64) -> Result<LeaveOneOut> {
    for (label, members) in set.class_members()? {
        if members.len() < 2 {
            return Err(Error::SingletonClass { label });
        }
    }
    let mut query_order: Vec<usize> = (0..set.count()).collect();
    query_order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(LeaveOneOut {
        query_order,
        count: set.count(),
    })
}
