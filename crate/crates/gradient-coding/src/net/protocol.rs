//! Wire format for master/worker sessions.
//!
//! Every frame is a 4-byte little-endian length followed by that many
//! bytes: a 1-byte message tag, a fixed header (round `u32`, worker id
//! `u16`, both little-endian, zero where not meaningful), then the
//! payload. Numbers are little-endian throughout; gradient values are
//! `f64` bits. Worker and partition ids are 1-based on the wire.
//!
//! A malformed frame is unrecoverable for its connection: the reader
//! reports it and the peer is dropped, which the master simply treats as
//! a straggler.

use super::NetError;
use std::io::{Read, Write};

/// Upper bound on a frame body; anything larger is malformed.
pub const MAX_FRAME_BYTES: u32 = 64 * 1024 * 1024;

const TAG_HELLO: u8 = 1;
const TAG_ASSIGN: u8 = 2;
const TAG_START_ROUND: u8 = 3;
const TAG_CODED_GRADIENT: u8 = 4;
const TAG_ROUND_DONE: u8 = 5;
const TAG_SHUTDOWN: u8 = 6;

/// Header length: tag + round + worker id.
const HEADER_BYTES: u32 = 7;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Worker announces itself (1-based id) after connecting.
    Hello { worker_id: u16 },
    /// Master ships a worker its slice of the strategy: the partition
    /// count, gradient dimension and synthetic seed for the session, the
    /// 1-based partitions it must compute, and its full matrix row.
    Assign {
        worker_id: u16,
        partitions: u32,
        dim: u32,
        seed: u64,
        assigned: Vec<u32>,
        row: Vec<f64>,
    },
    /// Master opens a round.
    StartRound { round: u32 },
    /// Worker's folded gradient for a round; empty values are a
    /// participation notice from a worker that holds no partitions.
    CodedGradient { round: u32, worker_id: u16, values: Vec<f64> },
    /// Master closes a round, reporting whether it decoded.
    RoundDone { round: u32, success: bool },
    /// Master ends the session.
    Shutdown,
}

impl Message {
    fn tag(&self) -> u8 {
        match self {
            Message::Hello { .. } => TAG_HELLO,
            Message::Assign { .. } => TAG_ASSIGN,
            Message::StartRound { .. } => TAG_START_ROUND,
            Message::CodedGradient { .. } => TAG_CODED_GRADIENT,
            Message::RoundDone { .. } => TAG_ROUND_DONE,
            Message::Shutdown => TAG_SHUTDOWN,
        }
    }

    fn header(&self) -> (u32, u16) {
        match self {
            Message::Hello { worker_id } => (0, *worker_id),
            Message::Assign { worker_id, .. } => (0, *worker_id),
            Message::StartRound { round } => (*round, 0),
            Message::CodedGradient { round, worker_id, .. } => (*round, *worker_id),
            Message::RoundDone { round, .. } => (*round, 0),
            Message::Shutdown => (0, 0),
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::Hello { .. } | Message::StartRound { .. } | Message::Shutdown => {}
            Message::Assign { partitions, dim, seed, assigned, row, .. } => {
                out.extend_from_slice(&partitions.to_le_bytes());
                out.extend_from_slice(&dim.to_le_bytes());
                out.extend_from_slice(&seed.to_le_bytes());
                out.extend_from_slice(&(assigned.len() as u32).to_le_bytes());
                for id in assigned {
                    out.extend_from_slice(&id.to_le_bytes());
                }
                for v in row {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::CodedGradient { values, .. } => {
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::RoundDone { success, .. } => out.push(u8::from(*success)),
        }
        out
    }

    /// Serializes the full frame, length prefix included.
    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let (round, worker_id) = self.header();
        let len = HEADER_BYTES + payload.len() as u32;
        let mut out = Vec::with_capacity(4 + len as usize);
        out.extend_from_slice(&len.to_le_bytes());
        out.push(self.tag());
        out.extend_from_slice(&round.to_le_bytes());
        out.extend_from_slice(&worker_id.to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    fn parse(tag: u8, round: u32, worker_id: u16, payload: &[u8]) -> Result<Message, NetError> {
        let malformed = |what: &str| Err(NetError::Malformed(what.to_string()));
        match tag {
            TAG_HELLO if payload.is_empty() => Ok(Message::Hello { worker_id }),
            TAG_ASSIGN => {
                if payload.len() < 20 {
                    return malformed("assignment header truncated");
                }
                let partitions = u32::from_le_bytes(payload[0..4].try_into().unwrap());
                let dim = u32::from_le_bytes(payload[4..8].try_into().unwrap());
                let seed = u64::from_le_bytes(payload[8..16].try_into().unwrap());
                let n = u32::from_le_bytes(payload[16..20].try_into().unwrap()) as usize;
                let row_start = 20 + 4 * n;
                let want = row_start + 8 * partitions as usize;
                if payload.len() != want {
                    return malformed("assignment length mismatch");
                }
                let assigned = (0..n)
                    .map(|i| u32::from_le_bytes(payload[20 + 4 * i..24 + 4 * i].try_into().unwrap()))
                    .collect();
                let row = payload[row_start..]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Ok(Message::Assign { worker_id, partitions, dim, seed, assigned, row })
            }
            TAG_START_ROUND if payload.is_empty() => Ok(Message::StartRound { round }),
            TAG_CODED_GRADIENT => {
                if payload.len() % 8 != 0 {
                    return malformed("gradient bytes not a multiple of 8");
                }
                let values = payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Ok(Message::CodedGradient { round, worker_id, values })
            }
            TAG_ROUND_DONE if payload.len() == 1 => {
                Ok(Message::RoundDone { round, success: payload[0] != 0 })
            }
            TAG_SHUTDOWN if payload.is_empty() => Ok(Message::Shutdown),
            _ => malformed("unknown tag or bad payload size"),
        }
    }
}

/// Writes one frame and flushes it.
pub fn write_message<W: Write>(writer: &mut W, message: &Message) -> Result<(), NetError> {
    writer.write_all(&message.encode())?;
    writer.flush()?;
    Ok(())
}

/// Reads one frame. I/O errors (including EOF) surface as
/// [`NetError::Io`]; structural problems as [`NetError::Malformed`].
pub fn read_message<R: Read>(reader: &mut R) -> Result<Message, NetError> {
    let mut len_bytes = [0u8; 4];
    reader.read_exact(&mut len_bytes)?;
    let len = u32::from_le_bytes(len_bytes);
    if len < HEADER_BYTES || len > MAX_FRAME_BYTES {
        return Err(NetError::Malformed(format!("frame length {len}")));
    }
    let mut frame = vec![0u8; len as usize];
    reader.read_exact(&mut frame)?;
    let tag = frame[0];
    let round = u32::from_le_bytes(frame[1..5].try_into().unwrap());
    let worker_id = u16::from_le_bytes(frame[5..7].try_into().unwrap());
    Message::parse(tag, round, worker_id, &frame[7..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(message: Message) {
        let bytes = message.encode();
        let mut cursor = &bytes[..];
        assert_eq!(read_message(&mut cursor).unwrap(), message);
        assert!(cursor.is_empty(), "frame not fully consumed");
    }

    #[test]
    fn every_message_survives_a_round_trip() {
        round_trip(Message::Hello { worker_id: 3 });
        round_trip(Message::Assign {
            worker_id: 2,
            partitions: 4,
            dim: 8,
            seed: 0xdead_beef,
            assigned: vec![1, 2, 4],
            row: vec![1.5, 0.0, -2.25, 0.125],
        });
        round_trip(Message::Assign {
            worker_id: 9,
            partitions: 2,
            dim: 1,
            seed: 0,
            assigned: vec![],
            row: vec![0.0, 0.0],
        });
        round_trip(Message::StartRound { round: 7 });
        round_trip(Message::CodedGradient { round: 7, worker_id: 2, values: vec![0.5, -0.5] });
        round_trip(Message::CodedGradient { round: 1, worker_id: 1, values: vec![] });
        round_trip(Message::RoundDone { round: 7, success: true });
        round_trip(Message::RoundDone { round: 8, success: false });
        round_trip(Message::Shutdown);
    }

    #[test]
    fn gradient_values_keep_exact_bits() {
        let values = vec![f64::MIN_POSITIVE, -0.1, 1.0 / 3.0];
        let message = Message::CodedGradient { round: 1, worker_id: 1, values: values.clone() };
        match read_message(&mut &message.encode()[..]).unwrap() {
            Message::CodedGradient { values: got, .. } => {
                let want: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
                let bits: Vec<u64> = got.iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits, want);
            }
            other => panic!("wrong message {other:?}"),
        }
    }

    #[test]
    fn malformed_frames_are_rejected() {
        // Unknown tag.
        let mut bad = Message::Shutdown.encode();
        bad[4] = 99;
        assert!(matches!(read_message(&mut &bad[..]), Err(NetError::Malformed(_))));

        // Length below the fixed header.
        let short = 3u32.to_le_bytes();
        let mut frame = short.to_vec();
        frame.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(read_message(&mut &frame[..]), Err(NetError::Malformed(_))));

        // Oversized length.
        let huge = (MAX_FRAME_BYTES + 1).to_le_bytes().to_vec();
        assert!(matches!(read_message(&mut &huge[..]), Err(NetError::Malformed(_))));

        // Gradient payload not divisible by 8.
        let mut odd = Message::CodedGradient { round: 1, worker_id: 1, values: vec![1.0] }.encode();
        odd.truncate(odd.len() - 1);
        let len = (odd.len() - 4) as u32;
        odd[0..4].copy_from_slice(&len.to_le_bytes());
        assert!(matches!(read_message(&mut &odd[..]), Err(NetError::Malformed(_))));

        // Truncated stream surfaces as I/O.
        let partial = &Message::Shutdown.encode()[..5];
        assert!(matches!(read_message(&mut &partial[..]), Err(NetError::Io(_))));
    }
}
