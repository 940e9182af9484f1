use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    Iid,
    BySource,
}

/// Client id → sample indices (ascending). Every client id in
/// `0..n_clients` has an entry, possibly empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub assignments: BTreeMap<usize, Vec<usize>>,
    pub mode: PartitionMode,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.values().map(Vec::len).collect()
    }
}

/// Splits `0..n_samples` across clients.
///
/// `Iid` shuffles with `seed` and deals round-robin. `BySource` gives each
/// distinct source id (in order of first appearance) to one client; with
/// more sources than clients, sources are dealt round-robin, and with fewer
/// some clients stay empty.
pub fn partition(n_samples: usize, sources: &[String], mode: PartitionMode, n_clients: usize, seed: u64) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("n_clients must be >= 1".into()));
    }
    let mut assignments: BTreeMap<usize, Vec<usize>> = (0..n_clients).map(|c| (c, Vec::new())).collect();
    match mode {
        PartitionMode::Iid => {
            let mut order: Vec<usize> = (0..n_samples).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            for (j, idx) in order.into_iter().enumerate() {
                assignments.get_mut(&(j % n_clients)).expect("client").push(idx);
            }
        }
        PartitionMode::BySource => {
            if sources.len() != n_samples {
                return Err(Error::InvalidArgument(format!(
                    "{} source ids for {} samples",
                    sources.len(),
                    n_samples
                )));
            }
            let mut seen: Vec<&str> = Vec::new();
            for (idx, s) in sources.iter().enumerate() {
                let k = match seen.iter().position(|&x| x == s) {
                    Some(k) => k,
                    None => {
                        seen.push(s);
                        seen.len() - 1
                    }
                };
                assignments.get_mut(&(k % n_clients)).expect("client").push(idx);
            }
        }
    }
    for v in assignments.values_mut() {
        v.sort_unstable();
    }
    Ok(Partition { assignments, mode })
}
