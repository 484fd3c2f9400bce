//! Binary frame format for server/node exchange.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset size  field
//! 0      4     magic "DIR1" (44 49 52 31)
//! 4      1     kind: 0 = Broadcast, 1 = Report
//! 5      8     round tag (u64; round index * 16 + step-halving count)
//! 13     4     node_id (u32, 0 for broadcasts)
//! 17     4     payload length L (u32, number of f64 scalars)
//! 21     8*L   payload, f64 little-endian
//! ```
//!
//! Total frame size `21 + 8 L` bytes.

use std::io::Read;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DIR1";
pub const HEADER_LEN: usize = 21;
/// Hard cap on payload scalars per frame.
pub const MAX_PAYLOAD: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsgKind {
    Broadcast = 0,
    Report = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub kind: MsgKind,
    pub round: u64,
    pub node_id: u32,
    pub payload: Vec<f64>,
}

impl Message {
    pub fn broadcast(round: u64, payload: Vec<f64>) -> Self {
        Message {
            kind: MsgKind::Broadcast,
            round,
            node_id: 0,
            payload,
        }
    }

    pub fn report(round: u64, node_id: u32, payload: Vec<f64>) -> Self {
        Message {
            kind: MsgKind::Report,
            round,
            node_id,
            payload,
        }
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let l = msg.payload.len();
    if l > MAX_PAYLOAD {
        return Err(Error::PayloadTooLarge(l));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * l);
    out.extend_from_slice(&MAGIC);
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.round.to_le_bytes());
    out.extend_from_slice(&msg.node_id.to_le_bytes());
    out.extend_from_slice(&(l as u32).to_le_bytes());
    for v in &msg.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Message> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::FrameIncomplete {
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[0..4]);
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let kind = match bytes[4] {
        0 => MsgKind::Broadcast,
        1 => MsgKind::Report,
        other => return Err(Error::BadKind(other)),
    };
    let round = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let node_id = u32::from_le_bytes(bytes[13..17].try_into().unwrap());
    let l = u32::from_le_bytes(bytes[17..21].try_into().unwrap()) as usize;
    if l > MAX_PAYLOAD {
        return Err(Error::PayloadTooLarge(l));
    }
    let needed = HEADER_LEN + 8 * l;
    if bytes.len() < needed {
        return Err(Error::FrameIncomplete {
            needed,
            got: bytes.len(),
        });
    }
    let mut payload = Vec::with_capacity(l);
    for i in 0..l {
        let at = HEADER_LEN + 8 * i;
        payload.push(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
    }
    Ok(Message {
        kind,
        round,
        node_id,
        payload,
    })
}

/// Blocking read of one frame from a stream. EOF before the first header
/// byte returns `Ok(None)`, a clean end of session.
pub fn read_frame(stream: &mut dyn Read) -> Result<Option<Message>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0usize;
    while got < HEADER_LEN {
        match stream.read(&mut header[got..]) {
            Ok(0) => {
                if got == 0 {
                    return Ok(None);
                }
                return Err(Error::FrameIncomplete {
                    needed: HEADER_LEN,
                    got,
                });
            }
            Ok(k) => got += k,
            Err(e) => return Err(e.into()),
        }
    }
    let l = u32::from_le_bytes(header[17..21].try_into().unwrap()) as usize;
    if l > MAX_PAYLOAD {
        return Err(Error::PayloadTooLarge(l));
    }
    let mut body = vec![0u8; 8 * l];
    let mut read_total = 0usize;
    while read_total < body.len() {
        match stream.read(&mut body[read_total..]) {
            Ok(0) => {
                return Err(Error::FrameIncomplete {
                    needed: HEADER_LEN + body.len(),
                    got: HEADER_LEN + read_total,
                })
            }
            Ok(k) => read_total += k,
            Err(e) => return Err(e.into()),
        }
    }
    let mut whole = Vec::with_capacity(HEADER_LEN + body.len());
    whole.extend_from_slice(&header);
    whole.extend_from_slice(&body);
    decode(&whole).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn broadcast_layout_hand_checked() {
        let msg = Message::broadcast(0, vec![1.0]);
        let bytes = encode(&msg).unwrap();
        assert_eq!(bytes.len(), 29);
        assert_eq!(&bytes[0..5], &[0x44, 0x49, 0x52, 0x31, 0x00]);
        assert_eq!(decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn roundtrip_random_messages() {
        let mut rng = crate::rng::rng_from(77, &[1]);
        for _ in 0..1000 {
            let kind = if rng.random::<f64>() < 0.5 {
                MsgKind::Broadcast
            } else {
                MsgKind::Report
            };
            let l = rng.random_range(0..40);
            let msg = Message {
                kind,
                round: rng.random(),
                node_id: if kind == MsgKind::Broadcast {
                    0
                } else {
                    rng.random()
                },
                payload: (0..l).map(|_| f64::from_bits(rng.random())).collect(),
            };
            let back = decode(&encode(&msg).unwrap()).unwrap();
            assert_eq!(back.kind, msg.kind);
            assert_eq!(back.round, msg.round);
            assert_eq!(back.node_id, msg.node_id);
            assert_eq!(back.payload.len(), msg.payload.len());
            for (a, b) in back.payload.iter().zip(&msg.payload) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn malformed_frames() {
        let good = encode(&Message::broadcast(3, vec![2.5, -1.0])).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = 0;
        assert!(matches!(decode(&bad_magic), Err(Error::BadMagic(_))));
        let mut bad_kind = good.clone();
        bad_kind[4] = 7;
        assert!(matches!(decode(&bad_kind), Err(Error::BadKind(7))));
        assert!(matches!(
            decode(&good[..good.len() - 3]),
            Err(Error::FrameIncomplete { .. })
        ));
        assert!(matches!(
            decode(&good[..10]),
            Err(Error::FrameIncomplete { .. })
        ));
        // Empty payload is a legal frame.
        let empty = encode(&Message::report(1, 4, vec![])).unwrap();
        assert_eq!(decode(&empty).unwrap().payload.len(), 0);
        // Oversized payloads are rejected at encode time.
        let huge = Message::broadcast(0, vec![0.0; MAX_PAYLOAD + 1]);
        assert!(matches!(encode(&huge), Err(Error::PayloadTooLarge(_))));
    }
}
