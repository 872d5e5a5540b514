//! A worker process: connect, receive a row, answer rounds.
//!
//! Compute is emulated: each round the worker sleeps in proportion to its
//! assigned partitions (scaled by `delay_factor`, so a slow or overloaded
//! machine can be staged), generates the synthetic partial gradients for
//! its partitions, folds them with its matrix row and sends the result.
//! If the connection drops mid-session it retries a bounded number of
//! times, re-introducing itself for a fresh assignment.

use super::protocol::{read_message, write_message, Message};
use super::NetError;
use crate::decode::{self, PartialGradient};
use std::net::TcpStream;
use std::thread;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    /// Master address, e.g. `127.0.0.1:7000`.
    pub connect: String,
    /// 1-based worker id; must match a row of the master's strategy.
    pub worker_id: u16,
    /// Multiplier on the emulated compute time. 1.0 is nominal; large
    /// values stage a straggler.
    pub delay_factor: f64,
    /// Emulated milliseconds of work per assigned partition.
    pub work_ms: u64,
    /// Connection attempts per outage before giving up.
    pub connect_attempts: u32,
    /// Pause between connection attempts.
    pub retry_delay: Duration,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        WorkerOptions {
            connect: "127.0.0.1:7000".to_string(),
            worker_id: 1,
            delay_factor: 1.0,
            work_ms: 20,
            connect_attempts: 40,
            retry_delay: Duration::from_millis(250),
        }
    }
}

/// Runs the session to completion: returns `Ok` on a clean shutdown from
/// the master, `Err` once reconnection attempts are exhausted.
pub fn run_worker(options: &WorkerOptions) -> Result<(), NetError> {
    let mut outages = 0u32;
    loop {
        let mut stream = connect(options)?;
        match serve(&mut stream, options) {
            Ok(()) => return Ok(()),
            Err(err) if outages < options.connect_attempts => {
                outages += 1;
                log::warn!(
                    "worker {}: connection lost ({err}); reconnecting ({outages}/{})",
                    options.worker_id,
                    options.connect_attempts
                );
            }
            Err(err) => return Err(err),
        }
    }
}

fn connect(options: &WorkerOptions) -> Result<TcpStream, NetError> {
    let mut last: Option<std::io::Error> = None;
    for attempt in 0..options.connect_attempts {
        if attempt > 0 {
            thread::sleep(options.retry_delay);
        }
        match TcpStream::connect(&options.connect) {
            Ok(stream) => {
                stream.set_nodelay(true).ok();
                return Ok(stream);
            }
            Err(err) => last = Some(err),
        }
    }
    Err(match last {
        Some(err) => NetError::Io(err),
        None => NetError::Protocol("no connection attempts allowed".to_string()),
    })
}

/// One connection's lifetime: hello, assignment, then rounds until the
/// master shuts the session down.
fn serve(stream: &mut TcpStream, options: &WorkerOptions) -> Result<(), NetError> {
    let id = options.worker_id;
    write_message(stream, &Message::Hello { worker_id: id })?;
    let (dim, seed, assigned, row) = match read_message(stream)? {
        Message::Assign { worker_id, dim, seed, assigned, row, .. } if worker_id == id => {
            (dim as usize, seed, assigned, row)
        }
        other => return Err(NetError::Protocol(format!("expected an assignment, got {other:?}"))),
    };
    log::info!("worker {id}: assigned {} partitions", assigned.len());

    loop {
        match read_message(stream)? {
            Message::StartRound { round } => {
                let work = options.work_ms as f64 * assigned.len() as f64 * options.delay_factor;
                if work > 0.0 {
                    thread::sleep(Duration::from_secs_f64(work / 1000.0));
                }
                let partials: Vec<PartialGradient> = assigned
                    .iter()
                    .map(|&p| decode::synthetic_partial(seed, round, p as usize - 1, dim))
                    .collect();
                let coded = decode::encode_local(id as usize - 1, &row, &partials)
                    .map_err(|err| NetError::Protocol(format!("bad assignment: {err}")))?;
                write_message(
                    stream,
                    &Message::CodedGradient { round, worker_id: id, values: coded.values },
                )?;
            }
            Message::RoundDone { round, success } => {
                log::debug!("worker {id}: round {round} done (success: {success})");
            }
            Message::Shutdown => return Ok(()),
            other => log::debug!("worker {id}: ignoring {other:?}"),
        }
    }
}
