use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tally, ClassLabel, DatasetManifest, ImageRecord, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub const fn new(train: usize, val: usize, test: usize) -> Self {
        SplitSizes { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes::new(220, 30, 50)
    }
}

/// Assign train/val/test so that every split holds exactly half of each
/// class. The assignment depends only on the seed and on each record's
/// (content hash, id): record order in the input does not matter.
pub fn stratified_split(
    manifest: &DatasetManifest,
    sizes: SplitSizes,
    seed: u64,
) -> Result<DatasetManifest> {
    let n = manifest.len();
    if sizes.total() != n {
        return Err(Error::SizesDoNotSum {
            sizes: [sizes.train, sizes.val, sizes.test],
            count: n,
        });
    }
    if let Some(r) = manifest.records().iter().find(|r| r.split != Split::Unassigned) {
        return Err(Error::invalid(format!(
            "record {} already assigned to {:?}",
            r.id, r.split
        )));
    }
    for (name, s) in [("train", sizes.train), ("val", sizes.val), ("test", sizes.test)] {
        if s % 2 != 0 {
            return Err(Error::InfeasibleSplit(format!(
                "{name} size {s} cannot be split 50:50"
            )));
        }
    }
    let per_class = n / 2;
    for c in ClassLabel::ALL {
        if manifest.count(c) != per_class {
            return Err(Error::InfeasibleSplit(format!(
                "class {c} has {} records, balanced splits need {per_class}",
                manifest.count(c)
            )));
        }
    }

    let mut assignment = std::collections::HashMap::with_capacity(n);
    for c in ClassLabel::ALL {
        let mut members: Vec<&ImageRecord> =
            manifest.records().iter().filter(|r| r.label == c).collect();
        members.sort_by(|a, b| (a.content_hash, &a.id).cmp(&(b.content_hash, &b.id)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5851_F42D_4C95_7F2D * (c.index() as u64 + 1)));
        members.shuffle(&mut rng);
        let (tr, va) = (sizes.train / 2, sizes.val / 2);
        for (i, r) in members.into_iter().enumerate() {
            let split = if i < tr {
                Split::Train
            } else if i < tr + va {
                Split::Val
            } else {
                Split::Test
            };
            assignment.insert(r.id.clone(), split);
        }
    }
    let records: Vec<ImageRecord> = manifest
        .records()
        .iter()
        .cloned()
        .map(|mut r| {
            r.split = assignment[&r.id];
            r
        })
        .collect();
    let mut provenance = manifest.provenance().clone();
    provenance.description = format!(
        "{}; stratified split {}/{}/{} seed {seed}",
        provenance.description, sizes.train, sizes.val, sizes.test
    );
    provenance.seed = seed;
    let counts = tally(&records);
    Ok(DatasetManifest::from_parts_unchecked(records, counts, provenance))
}
