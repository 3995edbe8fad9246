use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trajectory::Trajectory;
use super::DataError;

pub const MIN_CONVERSATIONS: usize = 10;

/// 70/20/10 train/test/validation partition, grouped by conversation.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
}

/// Shuffles conversations with `seed` and assigns whole conversations to a
/// split. Trajectories keep their input order inside each split.
pub fn split_dataset(trajectories: &[Trajectory], seed: u64) -> Result<DatasetSplit, DataError> {
    let mut groups: Vec<&str> = Vec::new();
    let mut group_of: HashMap<&str, usize> = HashMap::new();
    for t in trajectories {
        group_of.entry(&t.conversation_id).or_insert_with(|| {
            groups.push(&t.conversation_id);
            groups.len() - 1
        });
    }
    let n = groups.len();
    if n < MIN_CONVERSATIONS {
        return Err(DataError::TooFewConversations {
            found: n,
            needed: MIN_CONVERSATIONS,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = (0.7 * n as f64).round() as usize;
    let n_test = (0.2 * n as f64).round() as usize;
    // 0 = train, 1 = test, 2 = validation
    let mut assignment = vec![0u8; n];
    for (rank, &g) in order.iter().enumerate() {
        assignment[g] = if rank < n_train {
            0
        } else if rank < n_train + n_test {
            1
        } else {
            2
        };
    }

    let mut split = DatasetSplit::default();
    for t in trajectories {
        let bucket = match assignment[group_of[t.conversation_id.as_str()]] {
            0 => &mut split.train,
            1 => &mut split.test,
            _ => &mut split.validation,
        };
        bucket.push(t.clone());
    }
    Ok(split)
}
