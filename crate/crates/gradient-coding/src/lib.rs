//! Straggler-tolerant gradient aggregation via coded redundancy.
//!
//! A master splits a dataset into `k` partitions and hands each of `m`
//! workers a subset of them. Every round, worker `i` computes the partial
//! gradients for its partitions and sends back a single linear combination
//! (its row of a coding matrix `B`). The master recovers the full-dataset
//! gradient from any subset of workers that is large enough, so up to `s`
//! stragglers per round cost nothing but redundancy.
//!
//! The toolkit is heterogeneity-aware: partition counts are proportional to
//! measured worker throughput, which makes all workers finish at the same
//! time and drives the straggler-adjusted makespan down to its lower bound
//! `(s+1)k / sum(c_i)`.
//!
//! Pipeline:
//!
//! ```text
//!   profiles ──> allocation ──> coding ──> decode
//!      │             │            │          │
//!      │             └── groups ──┘          │
//!      └────────────── sim ──────────────────┘
//!                       net (TCP master/worker)
//! ```
//!
//! * [`profiles`]: throughput measurement and cluster configuration.
//! * [`allocation`]: proportional partition counts and cyclic placement.
//! * [`coding`]: coding matrix construction and robustness verification.
//! * [`groups`]: exact-cover worker groups for cheap, exact decoding.
//! * [`decode`]: encoding/decoding of gradients at runtime.
//! * [`sim`]: straggler simulation and scheme comparison.
//! * [`net`]: length-prefixed TCP protocol, master and worker loops.
//! * [`cli`]: command-line entry points.

pub mod allocation;
pub mod cli;
pub mod coding;
pub mod decode;
pub mod groups;
mod linalg;
pub mod net;
pub mod profiles;
pub mod sim;
