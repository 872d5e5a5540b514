//! Round-by-round simulation of coded training under stragglers.
//!
//! A round is timing-only: each worker finishes its assigned load at
//! `load_i / c_i`, the straggler model perturbs (or removes) arrivals, and
//! the master decodes at the first arrival whose accumulated set spans the
//! all-ones row. The same decoding routines back the live network path, so
//! a simulated round and a real round with the same survivors recover
//! bit-identical gradients.
//!
//! Worker indices are 0-based throughout; CSV output shifts to 1-based.

use crate::coding::{self, CodingError, CodingStrategy, SchemeKind};
use crate::decode::{self, DecodingVector};
use crate::linalg;
use crate::profiles::ClusterConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Which workers a model slows or kills.
#[derive(Debug, Clone)]
pub enum Targets {
    /// The same 0-based workers every round.
    Fixed(Vec<usize>),
    /// `count` distinct workers drawn fresh each round from the run seed.
    Random { count: usize },
}

/// Per-round perturbation of worker arrivals.
#[derive(Debug, Clone)]
pub enum StragglerModel {
    /// Every worker arrives exactly on time.
    None,
    /// Targets arrive `factor` times later than their compute time.
    Delay { factor: f64, targets: Targets },
    /// Targets never arrive.
    Failure { targets: Targets },
}

impl StragglerModel {
    fn targets(&self) -> Option<&Targets> {
        match self {
            StragglerModel::None => None,
            StragglerModel::Delay { targets, .. } | StragglerModel::Failure { targets } => {
                Some(targets)
            }
        }
    }

    /// The 0-based straggler set for one round, sorted ascending.
    pub fn stragglers_for_round(&self, num_workers: usize, seed: u64, round: u32) -> Vec<usize> {
        let targets = match self.targets() {
            Some(t) => t,
            None => return Vec::new(),
        };
        match targets {
            Targets::Fixed(list) => {
                let mut out: Vec<usize> =
                    list.iter().copied().filter(|&w| w < num_workers).collect();
                out.sort_unstable();
                out.dedup();
                out
            }
            Targets::Random { count } => {
                let mut key = [0u8; 32];
                key[0..8].copy_from_slice(&seed.to_le_bytes());
                key[8..16].copy_from_slice(&(round as u64).to_le_bytes());
                key[16..24].copy_from_slice(&0x6772_7473u64.to_le_bytes());
                let mut rng = ChaCha8Rng::from_seed(key);
                let take = (*count).min(num_workers);
                let mut out = rand::seq::index::sample(&mut rng, num_workers, take).into_vec();
                out.sort_unstable();
                out
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error("straggler pattern {pattern:?} is undecodable")]
    Undecodable { pattern: Vec<usize> },
}

// ---------------------------------------------------------------------------
// One round
// ---------------------------------------------------------------------------

/// How a decodable round ended.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    /// Arrival time of the worker that completed the decode.
    pub makespan: f64,
    /// Workers whose rows the decode used, ascending.
    pub active: Vec<usize>,
    pub vector: DecodingVector,
}

#[derive(Debug, Clone)]
pub struct RoundTrace {
    /// 1-based round number.
    pub round: u32,
    /// 0-based stragglers this round, ascending.
    pub stragglers: Vec<usize>,
    /// Unperturbed completion times `load_i / c_i`.
    pub compute_times: Vec<f64>,
    /// Post-model arrival times; infinity for failed workers.
    pub arrival_times: Vec<f64>,
    /// `None` when even the full arrived set cannot decode.
    pub outcome: Option<RoundOutcome>,
}

/// Runs one round: applies the model, replays arrivals in time order
/// (ties to the lower index) and decodes at the first feasible set.
pub fn simulate_round(
    strategy: &CodingStrategy,
    model: &StragglerModel,
    seed: u64,
    round: u32,
) -> RoundTrace {
    let m = strategy.num_workers;
    let stragglers = model.stragglers_for_round(m, seed, round);
    let compute_times = decode::completion_times(strategy, &strategy.throughputs);
    let mut arrival_times = compute_times.clone();
    for &w in &stragglers {
        match model {
            StragglerModel::Delay { factor, .. } => arrival_times[w] *= factor,
            StragglerModel::Failure { .. } => arrival_times[w] = f64::INFINITY,
            StragglerModel::None => unreachable!("no stragglers without a model"),
        }
    }

    let mut order: Vec<usize> = (0..m).filter(|&i| arrival_times[i].is_finite()).collect();
    order.sort_by(|&a, &b| {
        arrival_times[a]
            .partial_cmp(&arrival_times[b])
            .expect("finite arrivals")
            .then(a.cmp(&b))
    });
    let mut arrived: Vec<usize> = Vec::new();
    let mut outcome = None;
    for &w in &order {
        arrived.push(w);
        if let Some(vector) = decode::solve_decoding_vector(strategy, &arrived) {
            let mut active = arrived.clone();
            active.sort_unstable();
            outcome = Some(RoundOutcome { makespan: arrival_times[w], active, vector });
            break;
        }
    }

    RoundTrace { round, stragglers, compute_times, arrival_times, outcome }
}

/// Runs rounds `1..=rounds`.
pub fn simulate(
    strategy: &CodingStrategy,
    model: &StragglerModel,
    seed: u64,
    rounds: u32,
) -> Vec<RoundTrace> {
    (1..=rounds).map(|r| simulate_round(strategy, model, seed, r)).collect()
}

/// Re-runs a simulated round's decode on synthetic gradients, exactly as
/// the live master would: encode each active worker's partials with its
/// row, then combine with the round's decoding vector.
pub fn recover_for_trace(
    strategy: &CodingStrategy,
    trace: &RoundTrace,
    seed: u64,
    dim: usize,
) -> Result<Option<Vec<f64>>, decode::DecodeError> {
    let outcome = match &trace.outcome {
        Some(o) => o,
        None => return Ok(None),
    };
    let mut coded = BTreeMap::new();
    for &i in &outcome.active {
        let partials: Vec<_> = (0..strategy.num_partitions)
            .filter(|&j| strategy.support.get(i, j))
            .map(|j| decode::synthetic_partial(seed, trace.round, j, dim))
            .collect();
        coded.insert(i, decode::encode_local(i, strategy.row(i), &partials)?);
    }
    decode::recover_gradient(&outcome.vector, &coded).map(Some)
}

// ---------------------------------------------------------------------------
// Aggregates
// ---------------------------------------------------------------------------

/// Useful-compute and capacity totals for a decodable round: each
/// non-failed worker computes until it finishes or the round ends,
/// whichever is first, out of a capacity of one makespan per worker.
fn usage_parts(trace: &RoundTrace) -> Option<(f64, f64)> {
    let outcome = trace.outcome.as_ref()?;
    let m = trace.compute_times.len();
    let computed: f64 = (0..m)
        .map(|i| {
            if trace.arrival_times[i].is_finite() {
                trace.arrival_times[i].min(outcome.makespan)
            } else {
                0.0
            }
        })
        .sum();
    Some((computed, m as f64 * outcome.makespan))
}

/// Fraction of a round's worker-time spent computing, `None` if the round
/// failed.
pub fn round_usage(trace: &RoundTrace) -> Option<f64> {
    usage_parts(trace).map(|(work, capacity)| work / capacity)
}

/// Aggregate resource usage over the decodable rounds, `None` if there are
/// none.
pub fn resource_usage(traces: &[RoundTrace]) -> Option<f64> {
    let (mut work, mut capacity) = (0.0, 0.0);
    for trace in traces {
        if let Some((w, c)) = usage_parts(trace) {
            work += w;
            capacity += c;
        }
    }
    (capacity > 0.0).then(|| work / capacity)
}

/// Slowest decode time over every straggler pattern of size up to the
/// strategy's tolerance, with stragglers treated as never arriving.
pub fn worst_case_time(strategy: &CodingStrategy) -> Result<f64, SimError> {
    let m = strategy.num_workers;
    let s = strategy.num_stragglers;
    coding::enumeration_guard(m, s)?;
    let mut worst = 0.0f64;
    for size in 0..=s {
        let mut failed: Option<Vec<usize>> = None;
        linalg::for_each_combination(m, size, |pattern| {
            if failed.is_some() {
                return;
            }
            match decode::earliest_decodable(strategy, &strategy.throughputs, pattern) {
                Some(hit) => worst = worst.max(hit.time),
                None => failed = Some(pattern.iter().map(|&w| w + 1).collect()),
            }
        });
        if let Some(pattern) = failed {
            return Err(SimError::Undecodable { pattern });
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Scheme comparison
// ---------------------------------------------------------------------------

/// One scheme's simulated rounds, plus a note when construction degraded
/// or failed outright.
#[derive(Debug)]
pub struct SchemeReport {
    pub scheme: SchemeKind,
    pub note: String,
    pub traces: Vec<RoundTrace>,
}

impl SchemeReport {
    pub fn successes(&self) -> usize {
        self.traces.iter().filter(|t| t.outcome.is_some()).count()
    }

    pub fn success_rate(&self) -> f64 {
        if self.traces.is_empty() {
            0.0
        } else {
            self.successes() as f64 / self.traces.len() as f64
        }
    }

    /// Mean makespan over decodable rounds, `None` if there are none.
    pub fn mean_makespan(&self) -> Option<f64> {
        let times: Vec<f64> = self
            .traces
            .iter()
            .filter_map(|t| t.outcome.as_ref().map(|o| o.makespan))
            .collect();
        (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
    }

    pub fn usage(&self) -> Option<f64> {
        resource_usage(&self.traces)
    }
}

/// Builds and simulates every scheme on the same config, model and seed.
/// A scheme whose construction fails is reported with a note instead of
/// aborting the comparison.
pub fn compare_schemes(
    config: &ClusterConfig,
    model: &StragglerModel,
    rounds: u32,
    seed: u64,
) -> Vec<SchemeReport> {
    SchemeKind::all()
        .iter()
        .map(|&scheme| match coding::build_strategy(config, scheme, Some(seed)) {
            Ok(strategy) => {
                let note = match &strategy.groups {
                    Some(groups) if groups.is_empty() => {
                        "no exact-cover groups; used randomized rows".to_string()
                    }
                    Some(groups) => format!("groups used: {}", groups.len()),
                    None => String::new(),
                };
                SchemeReport { scheme, note, traces: simulate(&strategy, model, seed, rounds) }
            }
            Err(err) => SchemeReport {
                scheme,
                note: format!("construction failed: {err}"),
                traces: Vec::new(),
            },
        })
        .collect()
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn straggler_field(stragglers: &[usize]) -> String {
    stragglers.iter().map(|&w| (w + 1).to_string()).collect::<Vec<_>>().join(";")
}

/// Per-round rows: `scheme,round,makespan,decode_success,resource_usage,
/// straggler_set`. Failed rounds leave the makespan and usage blank;
/// stragglers are 1-based and `;`-separated.
pub fn simulate_csv(scheme: SchemeKind, traces: &[RoundTrace]) -> String {
    let mut out = String::from("scheme,round,makespan,decode_success,resource_usage,straggler_set\n");
    for trace in traces {
        let makespan =
            trace.outcome.as_ref().map(|o| o.makespan.to_string()).unwrap_or_default();
        let usage = round_usage(trace).map(|u| u.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            scheme,
            trace.round,
            makespan,
            trace.outcome.is_some(),
            usage,
            straggler_field(&trace.stragglers),
        );
    }
    out
}

/// Summary rows: `scheme,rounds,mean_makespan,resource_usage,
/// decode_success_rate,note`. Schemes that never decoded leave the means
/// blank.
pub fn compare_csv(reports: &[SchemeReport]) -> String {
    let mut out =
        String::from("scheme,rounds,mean_makespan,resource_usage,decode_success_rate,note\n");
    for report in reports {
        let mean = report.mean_makespan().map(|v| v.to_string()).unwrap_or_default();
        let usage = report.usage().map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            report.scheme,
            report.traces.len(),
            mean,
            usage,
            report.success_rate(),
            csv_escape(&report.note),
        );
    }
    out
}
