//! Worker throughput profiles and cluster configuration.
//!
//! Throughput is measured in partitions per unit time and is the only
//! per-worker signal the allocator needs. A `ClusterConfig` bundles the
//! worker profiles with the partition count `k` and the straggler budget
//! `s`; it is the single input every downstream stage starts from.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

/// A single worker's measured compute rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    /// 1-based worker index, unique within a config.
    #[serde(rename = "id")]
    pub worker_id: usize,
    /// Partitions processed per unit time; strictly positive.
    pub throughput: f64,
}

/// Cluster shape shared by every stage: `m` workers, `k` partitions,
/// tolerance for up to `s` stragglers per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Worker profiles, kept sorted by `worker_id` (ids are exactly `1..=m`).
    pub workers: Vec<WorkerProfile>,
    /// Number of data partitions `k`.
    #[serde(rename = "partitions")]
    pub num_partitions: usize,
    /// Straggler budget `s`; must satisfy `0 <= s < m`.
    #[serde(rename = "stragglers")]
    pub num_stragglers: usize,
    /// Seed for all randomized construction; `None` falls back to 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config has no workers")]
    NoWorkers,
    #[error("duplicate worker id {0}")]
    DuplicateWorkerId(usize),
    #[error("worker id {id} out of range 1..={m}")]
    WorkerIdOutOfRange { id: usize, m: usize },
    #[error("worker {id} has non-positive throughput {value}")]
    NonPositiveThroughput { id: usize, value: f64 },
    #[error("partition count must be at least 1")]
    NoPartitions,
    #[error("straggler budget {s} must be less than worker count {m}")]
    TooManyStragglers { s: usize, m: usize },
    #[error("no throughput samples")]
    NoSamples,
    #[error("sample {index} has non-positive elapsed time {value}")]
    NonPositiveElapsed { index: usize, value: f64 },
}

/// Estimates a worker's throughput from repeated timing samples.
///
/// Each sample is `(work_items, elapsed)`. The estimate is the aggregate
/// rate `sum(work) / sum(elapsed)`, which weights longer runs more heavily
/// than a mean of per-sample rates would.
pub fn estimate_throughput(samples: &[(u64, f64)]) -> Result<f64, ProfileError> {
    if samples.is_empty() {
        return Err(ProfileError::NoSamples);
    }
    let mut work = 0u64;
    let mut elapsed = 0.0f64;
    for (index, &(w, e)) in samples.iter().enumerate() {
        if !(e > 0.0) || !e.is_finite() {
            return Err(ProfileError::NonPositiveElapsed { index, value: e });
        }
        work += w;
        elapsed += e;
    }
    Ok(work as f64 / elapsed)
}

impl ClusterConfig {
    /// Number of workers `m`.
    pub fn num_workers(&self) -> usize {
        self.workers.len()
    }

    /// Throughputs in worker order.
    pub fn throughputs(&self) -> Vec<f64> {
        self.workers.iter().map(|w| w.throughput).collect()
    }

    /// Sum of all worker throughputs.
    pub fn total_throughput(&self) -> f64 {
        self.workers.iter().map(|w| w.throughput).sum()
    }

    /// Seed to use for randomized construction.
    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Builds a validated config from parts; worker ids are assigned `1..=m`
    /// in the order given.
    pub fn from_throughputs(
        throughputs: &[f64],
        num_partitions: usize,
        num_stragglers: usize,
        seed: Option<u64>,
    ) -> Result<Self, ProfileError> {
        let workers = throughputs
            .iter()
            .enumerate()
            .map(|(i, &c)| WorkerProfile {
                worker_id: i + 1,
                throughput: c,
            })
            .collect();
        let mut config = ClusterConfig {
            workers,
            num_partitions,
            num_stragglers,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks all structural invariants and sorts workers by id.
    ///
    /// Worker ids must be exactly the set `1..=m` (any order in the input),
    /// throughputs strictly positive, `k >= 1`, and `s < m`.
    pub fn validate(&mut self) -> Result<(), ProfileError> {
        let m = self.workers.len();
        if m == 0 {
            return Err(ProfileError::NoWorkers);
        }
        if self.num_partitions == 0 {
            return Err(ProfileError::NoPartitions);
        }
        if self.num_stragglers >= m {
            return Err(ProfileError::TooManyStragglers {
                s: self.num_stragglers,
                m,
            });
        }
        let mut seen = vec![false; m];
        for w in &self.workers {
            if w.worker_id == 0 || w.worker_id > m {
                return Err(ProfileError::WorkerIdOutOfRange { id: w.worker_id, m });
            }
            if seen[w.worker_id - 1] {
                return Err(ProfileError::DuplicateWorkerId(w.worker_id));
            }
            seen[w.worker_id - 1] = true;
            if !(w.throughput > 0.0) || !w.throughput.is_finite() {
                return Err(ProfileError::NonPositiveThroughput {
                    id: w.worker_id,
                    value: w.throughput,
                });
            }
        }
        self.workers.sort_by_key(|w| w.worker_id);
        Ok(())
    }

    /// Parses and validates a config from its JSON text.
    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let mut config: ClusterConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Serializes the config back to JSON. Field order is fixed, so the
    /// output is byte-stable for a given config.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Reads and validates a cluster config from a JSON file.
pub fn load_config(path: &Path) -> Result<ClusterConfig, ProfileError> {
    let text = fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ClusterConfig::from_json(&text)
}
