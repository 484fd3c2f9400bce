//! Loopback TCP realization of the round protocol: one blocking
//! connection per node, length-prefixed binary frames, a 30 s default
//! read deadline, and reports re-ordered by node id before aggregation
//! so network scheduling never changes results.
//!
//! Workers never learn the objective; the server's step-size halving
//! schedule reaches them through the low bits of the round tag, keeping
//! every round at exactly `2 m p` transmitted scalars.

use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::harness::transport::{RoundTransport, TransportCounters};
use crate::harness::wire::{encode, read_frame, Message, MsgKind};
use crate::model::{NodeDataset, SignalVector};
use crate::objective::{GradientVariant, PenaltyScale};
use crate::solver::{decompose_round_tag, local_update};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Server-side socket transport over `m` already-accepted connections.
pub struct SocketTransport {
    conns: Vec<TcpStream>,
    m: usize,
    counters: TransportCounters,
}

impl SocketTransport {
    /// Accept exactly `m` node connections.
    pub fn accept(listener: &TcpListener, m: usize, timeout: Duration) -> Result<Self> {
        let mut conns = Vec::with_capacity(m);
        for _ in 0..m {
            let (stream, _) = listener.accept()?;
            stream.set_read_timeout(Some(timeout))?;
            stream.set_nodelay(true)?;
            conns.push(stream);
        }
        Ok(SocketTransport {
            conns,
            m,
            counters: TransportCounters::default(),
        })
    }

    fn send(&mut self, conn_idx: usize, msg: &Message) -> Result<()> {
        use std::io::Write;
        let bytes = encode(msg)?;
        self.conns[conn_idx].write_all(&bytes)?;
        self.counters.messages_sent += 1;
        self.counters.scalars_sent += msg.payload.len() as u64;
        self.counters.bytes_sent += bytes.len() as u64;
        Ok(())
    }
}

impl RoundTransport for SocketTransport {
    fn exchange(
        &mut self,
        round_tag: u64,
        _alpha: f64,
        psi: &DVector<f64>,
    ) -> Result<Vec<SignalVector>> {
        let payload: Vec<f64> = psi.iter().copied().collect();
        for i in 0..self.m {
            self.send(i, &Message::broadcast(round_tag, payload.clone()))?;
        }
        let mut reports: Vec<Option<SignalVector>> = vec![None; self.m];
        for i in 0..self.m {
            let msg = match read_frame(&mut self.conns[i]) {
                Ok(Some(msg)) => msg,
                Ok(None) => {
                    return Err(Error::FrameIncomplete { needed: 21, got: 0 });
                }
                Err(Error::Io(e))
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    return Err(Error::NodeTimeout(i as u32));
                }
                Err(e) => return Err(e),
            };
            if msg.kind != MsgKind::Report {
                return Err(Error::BadKind(msg.kind as u8));
            }
            if msg.round != round_tag {
                return Err(Error::RoundMismatch {
                    expected: round_tag,
                    got: msg.round,
                });
            }
            let id = msg.node_id as usize;
            if id >= self.m {
                return Err(Error::MismatchedNodes(format!(
                    "report from unknown node {id}"
                )));
            }
            if reports[id].is_some() {
                return Err(Error::MismatchedNodes(format!(
                    "duplicate report from node {id}"
                )));
            }
            self.counters.messages_sent += 1;
            self.counters.scalars_sent += msg.payload.len() as u64;
            self.counters.bytes_sent += (21 + 8 * msg.payload.len()) as u64;
            reports[id] = Some(DVector::from_vec(msg.payload));
        }
        // Ascending node id by construction of the slot vector.
        reports
            .into_iter()
            .enumerate()
            .map(|(id, r)| {
                r.ok_or_else(|| Error::MismatchedNodes(format!("missing report from node {id}")))
            })
            .collect()
    }

    fn counters(&self) -> TransportCounters {
        self.counters
    }
}

/// Per-worker solver parameters; must match the server configuration for
/// the run to be well-defined.
#[derive(Clone, Copy, Debug)]
pub struct WorkerParams {
    pub alpha: f64,
    pub epochs: usize,
    pub scale: PenaltyScale,
    pub variant: GradientVariant,
}

/// Node-side loop: consume broadcasts, run the local update, report back
/// with the same round tag. Returns the final estimate on clean shutdown
/// (server closed the connection).
pub fn worker_loop(
    mut stream: TcpStream,
    node_id: u32,
    ds: &NodeDataset,
    initial: SignalVector,
    params: WorkerParams,
) -> Result<SignalVector> {
    use std::io::Write;
    stream.set_nodelay(true)?;
    let mut beta = initial;
    let mut prev_psi: Option<DVector<f64>> = None;
    let mut expected_round = 1u64;
    while let Some(msg) = read_frame(&mut stream)? {
        if msg.kind != MsgKind::Broadcast {
            return Err(Error::BadKind(msg.kind as u8));
        }
        let (round, halvings) = decompose_round_tag(msg.round);
        if round != expected_round {
            return Err(Error::RoundMismatch {
                expected: expected_round,
                got: round,
            });
        }
        let psi = DVector::from_vec(msg.payload);
        let alpha = params.alpha / f64::powi(2.0, halvings as i32);
        // Orientation sign the server used for this node's last report:
        // +1 for the plain initial aggregate, then against the previous
        // broadcast, mirroring the server's sign-coherent aggregation.
        let sigma = prev_psi
            .as_ref()
            .map_or(1.0, |r| crate::solver::orientation_sign(&beta, r));
        beta = local_update(
            &beta,
            ds,
            &psi,
            sigma,
            params.scale,
            alpha,
            params.epochs,
            params.variant,
        )?;
        let report = Message::report(msg.round, node_id, beta.iter().copied().collect());
        stream.write_all(&encode(&report)?)?;
        prev_psi = Some(psi);
        expected_round += 1;
    }
    Ok(beta)
}

/// Connect a worker to a listening server.
pub fn connect_worker(addr: impl ToSocketAddrs) -> Result<TcpStream> {
    Ok(TcpStream::connect(addr)?)
}
