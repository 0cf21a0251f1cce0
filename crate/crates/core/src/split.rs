//! Train/test split schemes.
//!
//! * **Random**: a uniform sample without replacement of the observed
//!   pairs at the requested fraction becomes the test set.
//! * **Block-wise**: two disjoint random output groups are drawn; every
//!   output in the first group loses its first `block_length`
//!   time-ordered observations to the test set, every output in the
//!   second group loses its last `block_length`.  Time order is the
//!   first input coordinate (ties broken by input index).
//!
//! Both schemes partition the original observations: train ∪ test is the
//! original multiset and the two sides are disjoint.  Splits are a pure
//! function of the dataset and the seed.

use rand::seq::index;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{purpose, stream};

#[derive(Clone, Debug, PartialEq)]
pub enum SplitScheme {
    /// Hold out this fraction of the observed pairs, uniformly.
    Random { fraction: f64 },
    /// Hold out head/tail time blocks for two disjoint output groups of
    /// this size.
    BlockWise {
        outputs_per_block: usize,
        block_length: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub scheme: SplitScheme,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        match &self.scheme {
            SplitScheme::Random { fraction } => {
                if !(fraction.is_finite() && *fraction > 0.0 && *fraction < 1.0) {
                    return Err(Error::argument(
                        "split",
                        format!("test fraction must lie strictly between 0 and 1, got {fraction}"),
                    ));
                }
            }
            SplitScheme::BlockWise { outputs_per_block, block_length } => {
                if *outputs_per_block == 0 || *block_length == 0 {
                    return Err(Error::argument(
                        "split",
                        "block-wise splits need positive group size and block length",
                    ));
                }
                if 2 * outputs_per_block > ds.output_count() {
                    return Err(Error::InfeasibleSplit(format!(
                        "two disjoint groups of {outputs_per_block} outputs need {} outputs, dataset has {}",
                        2 * outputs_per_block,
                        ds.output_count()
                    )));
                }
                if *block_length >= ds.input_count() {
                    return Err(Error::InfeasibleSplit(format!(
                        "block length {block_length} must be below the input count {}",
                        ds.input_count()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Split the dataset's observations into (train, test).  Both halves
/// keep the full input and output tables, so indices stay aligned.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    ds.validate()?;
    spec.validate(ds)?;
    if ds.observations.is_empty() {
        return Err(Error::argument("split", "dataset has no observations"));
    }
    let mut rng = stream(spec.seed, &[purpose::SPLIT]);
    let total = ds.observations.len();
    let mut in_test = vec![false; total];

    match &spec.scheme {
        SplitScheme::Random { fraction } => {
            let k = ((fraction * total as f64).round() as usize).clamp(1, total - 1);
            for i in index::sample(&mut rng, total, k) {
                in_test[i] = true;
            }
        }
        SplitScheme::BlockWise { outputs_per_block, block_length } => {
            let picked =
                index::sample(&mut rng, ds.output_count(), 2 * outputs_per_block).into_vec();
            let (head_group, tail_group) = picked.split_at(*outputs_per_block);
            for (group, from_head) in [(head_group, true), (tail_group, false)] {
                for &p in group {
                    // This output's observations in time order.
                    let mut idx: Vec<usize> = (0..total)
                        .filter(|&k| ds.observations[k].output == p)
                        .collect();
                    if idx.len() <= *block_length {
                        return Err(Error::InfeasibleSplit(format!(
                            "output {:?} has {} observations, not more than the block length {}",
                            ds.output_ids[p],
                            idx.len(),
                            block_length
                        )));
                    }
                    idx.sort_by(|&a, &b| {
                        let oa = &ds.observations[a];
                        let ob = &ds.observations[b];
                        let ta = ds.inputs.at(oa.input, 0);
                        let tb = ds.inputs.at(ob.input, 0);
                        ta.partial_cmp(&tb).unwrap().then(oa.input.cmp(&ob.input))
                    });
                    let held: &[usize] = if from_head {
                        &idx[..*block_length]
                    } else {
                        &idx[idx.len() - block_length..]
                    };
                    for &k in held {
                        in_test[k] = true;
                    }
                }
            }
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, o) in ds.observations.iter().enumerate() {
        if in_test[k] {
            test.push(*o);
        } else {
            train.push(*o);
        }
    }
    Ok((ds.with_observations(train), ds.with_observations(test)))
}
