//! The master: accepts workers, assigns rows, runs decode rounds.
//!
//! One thread accepts connections and one reader thread per worker
//! forwards its frames into an mpsc channel; the coordinator thread is the
//! only place round state changes, so arrivals are applied in a single
//! serialized order. A connection that breaks, times out or sends a
//! malformed frame is dropped and its worker is treated as a straggler;
//! a worker may reconnect later and is re-assigned its row.

use super::protocol::{read_message, write_message, Message};
use super::NetError;
use crate::coding::CodingStrategy;
use crate::decode::{self, CodedGradient};
use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct MasterOptions {
    /// Rounds to run once the session starts.
    pub rounds: u32,
    /// Gradient dimension workers must produce.
    pub dim: usize,
    /// Seed for the session's synthetic gradients, shipped in every
    /// assignment.
    pub seed: u64,
    /// How long a round may wait for a decodable set before it is declared
    /// failed.
    pub round_timeout: Duration,
    /// How long to wait for the full cluster before starting anyway.
    pub connect_grace: Duration,
}

impl Default for MasterOptions {
    fn default() -> Self {
        MasterOptions {
            rounds: 1,
            dim: 16,
            seed: 0,
            round_timeout: Duration::from_secs(5),
            connect_grace: Duration::from_secs(10),
        }
    }
}

/// What one round produced.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u32,
    pub success: bool,
    /// Wall time from the round broadcast to decode (or to the timeout).
    pub elapsed: Duration,
    /// 0-based workers whose gradients the decode used, ascending.
    pub active: Vec<usize>,
    pub gradient: Option<Vec<f64>>,
}

enum Event {
    Joined(u16, TcpStream),
    Frame(u16, Message),
    Gone(u16),
}

pub struct Master {
    listener: TcpListener,
    strategy: Arc<CodingStrategy>,
    options: MasterOptions,
}

impl Master {
    /// Binds the listening socket; `addr` may use port 0 to pick one.
    pub fn bind(
        strategy: CodingStrategy,
        addr: &str,
        options: MasterOptions,
    ) -> Result<Master, NetError> {
        let listener = TcpListener::bind(addr)?;
        Ok(Master { listener, strategy: Arc::new(strategy), options })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, NetError> {
        Ok(self.listener.local_addr()?)
    }

    /// Runs the whole session and reports each round through `on_round` as
    /// it completes. Failed rounds are results, not errors.
    pub fn run(self, mut on_round: impl FnMut(&RoundReport)) -> Result<Vec<RoundReport>, NetError> {
        let Master { listener, strategy, options } = self;
        let m = strategy.num_workers;
        let (tx, rx) = mpsc::channel::<Event>();
        let stop = Arc::new(AtomicBool::new(false));
        let accept_thread = spawn_accept_loop(listener, Arc::clone(&strategy), &options, tx, &stop);

        // Wait for the cluster, then start regardless: missing workers are
        // stragglers from the first broadcast.
        let mut live: BTreeMap<u16, TcpStream> = BTreeMap::new();
        let grace_deadline = Instant::now() + options.connect_grace;
        while live.len() < m {
            let now = Instant::now();
            if now >= grace_deadline {
                break;
            }
            match rx.recv_timeout(grace_deadline - now) {
                Ok(Event::Joined(id, stream)) => {
                    live.insert(id, stream);
                }
                Ok(Event::Gone(id)) => {
                    live.remove(&id);
                }
                Ok(Event::Frame(..)) => {}
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        log::info!("starting rounds with {}/{} workers connected", live.len(), m);

        let mut reports = Vec::with_capacity(options.rounds as usize);
        for round in 1..=options.rounds {
            let report = run_round(&strategy, &options, round, &mut live, &rx);
            on_round(&report);
            let done = Message::RoundDone { round, success: report.success };
            broadcast(&mut live, &done);
            reports.push(report);
        }

        broadcast(&mut live, &Message::Shutdown);
        for (_, stream) in live {
            let _ = stream.shutdown(Shutdown::Both);
        }
        stop.store(true, Ordering::Relaxed);
        let _ = accept_thread.join();
        Ok(reports)
    }
}

fn run_round(
    strategy: &CodingStrategy,
    options: &MasterOptions,
    round: u32,
    live: &mut BTreeMap<u16, TcpStream>,
    rx: &Receiver<Event>,
) -> RoundReport {
    broadcast(live, &Message::StartRound { round });
    let started = Instant::now();
    let deadline = started + options.round_timeout;
    let mut coded: BTreeMap<usize, CodedGradient> = BTreeMap::new();

    loop {
        let now = Instant::now();
        if now >= deadline {
            break;
        }
        let event = match rx.recv_timeout(deadline - now) {
            Ok(event) => event,
            Err(RecvTimeoutError::Timeout) => break,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        match event {
            Event::Joined(id, stream) => {
                // A (re)connected worker sits out the current round.
                live.insert(id, stream);
            }
            Event::Gone(id) => {
                live.remove(&id);
            }
            Event::Frame(id, Message::CodedGradient { round: r, values, .. }) => {
                if r != round {
                    log::debug!("discarding round-{r} gradient from worker {id}");
                    continue;
                }
                let worker = id as usize - 1;
                coded.insert(worker, CodedGradient { worker, values });
                let active: Vec<usize> = coded.keys().copied().collect();
                if let Some(vector) = decode::solve_decoding_vector(strategy, &active) {
                    match decode::recover_gradient(&vector, &coded) {
                        Ok(gradient) => {
                            return RoundReport {
                                round,
                                success: true,
                                elapsed: started.elapsed(),
                                active,
                                gradient: Some(gradient),
                            };
                        }
                        Err(err) => log::warn!("round {round}: recovery failed: {err}"),
                    }
                }
            }
            Event::Frame(id, other) => {
                log::debug!("ignoring unexpected {other:?} from worker {id}");
            }
        }
    }

    RoundReport {
        round,
        success: false,
        elapsed: started.elapsed(),
        active: coded.keys().copied().collect(),
        gradient: None,
    }
}

/// Sends to every live worker, dropping the ones whose send fails.
fn broadcast(live: &mut BTreeMap<u16, TcpStream>, message: &Message) {
    let mut dead = Vec::new();
    for (&id, stream) in live.iter_mut() {
        if let Err(err) = write_message(stream, message) {
            log::warn!("worker {id} dropped on send: {err}");
            dead.push(id);
        }
    }
    for id in dead {
        live.remove(&id);
    }
}

fn spawn_accept_loop(
    listener: TcpListener,
    strategy: Arc<CodingStrategy>,
    options: &MasterOptions,
    tx: Sender<Event>,
    stop: &Arc<AtomicBool>,
) -> thread::JoinHandle<()> {
    let stop = Arc::clone(stop);
    let dim = options.dim;
    let seed = options.seed;
    thread::spawn(move || {
        listener.set_nonblocking(true).expect("nonblocking listener");
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let strategy = Arc::clone(&strategy);
                    let tx = tx.clone();
                    thread::spawn(move || handshake(stream, strategy, dim, seed, tx));
                }
                Err(err) if err.kind() == ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(20));
                }
                Err(err) => {
                    log::warn!("accept failed: {err}");
                    thread::sleep(Duration::from_millis(100));
                }
            }
        }
    })
}

/// Validates the hello, ships the assignment, then pumps frames into the
/// event channel until the connection dies.
fn handshake(
    mut stream: TcpStream,
    strategy: Arc<CodingStrategy>,
    dim: usize,
    seed: u64,
    tx: Sender<Event>,
) {
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok();
    let worker_id = match read_message(&mut stream) {
        Ok(Message::Hello { worker_id })
            if (1..=strategy.num_workers as u16).contains(&worker_id) =>
        {
            worker_id
        }
        Ok(other) => {
            log::warn!("dropping connection: expected a valid hello, got {other:?}");
            return;
        }
        Err(err) => {
            log::warn!("dropping connection: {err}");
            return;
        }
    };

    let i = worker_id as usize - 1;
    let k = strategy.num_partitions;
    let assign = Message::Assign {
        worker_id,
        partitions: k as u32,
        dim: dim as u32,
        seed,
        assigned: (0..k).filter(|&j| strategy.support.get(i, j)).map(|j| j as u32 + 1).collect(),
        row: strategy.row(i).to_vec(),
    };
    if let Err(err) = write_message(&mut stream, &assign) {
        log::warn!("worker {worker_id}: assignment failed: {err}");
        return;
    }

    let mut reader = match stream.try_clone() {
        Ok(reader) => reader,
        Err(err) => {
            log::warn!("worker {worker_id}: clone failed: {err}");
            return;
        }
    };
    reader.set_read_timeout(None).ok();
    if tx.send(Event::Joined(worker_id, stream)).is_err() {
        return; // session already over
    }
    loop {
        match read_message(&mut reader) {
            Ok(message) => {
                let id = match &message {
                    Message::CodedGradient { worker_id: claimed, .. } => *claimed,
                    _ => worker_id,
                };
                if id != worker_id {
                    log::warn!("worker {worker_id} claimed id {id}; dropping");
                    let _ = tx.send(Event::Gone(worker_id));
                    return;
                }
                if tx.send(Event::Frame(worker_id, message)).is_err() {
                    return;
                }
            }
            Err(err) => {
                log::debug!("worker {worker_id} disconnected: {err}");
                let _ = tx.send(Event::Gone(worker_id));
                return;
            }
        }
    }
}
