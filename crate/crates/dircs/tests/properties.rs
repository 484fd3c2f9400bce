//! Property tests for the structural invariants.

use dircs::datagen::allocate_sizes;
use dircs::harness::{decode, encode, Message, MsgKind};
use dircs::model::{extract, lift, project, AllocationSpec};
use dircs::rng::rng_from;
use nalgebra::DVector;
use proptest::prelude::*;

proptest! {
    /// decode . encode is the identity on the message space, bit for bit.
    #[test]
    fn wire_roundtrip(
        kind in 0u8..2,
        round in any::<u64>(),
        node_id in any::<u32>(),
        payload_bits in proptest::collection::vec(any::<u64>(), 0..48),
    ) {
        let msg = Message {
            kind: if kind == 0 { MsgKind::Broadcast } else { MsgKind::Report },
            round,
            node_id,
            payload: payload_bits.iter().map(|&b| f64::from_bits(b)).collect(),
        };
        let back = decode(&encode(&msg).unwrap()).unwrap();
        prop_assert_eq!(back.kind, msg.kind);
        prop_assert_eq!(back.round, msg.round);
        prop_assert_eq!(back.node_id, msg.node_id);
        prop_assert_eq!(back.payload.len(), msg.payload.len());
        for (a, b) in back.payload.iter().zip(&msg.payload) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// Truncating any strict prefix of a frame fails with FrameIncomplete.
    #[test]
    fn wire_truncation_detected(cut in 0usize..28, payload_len in 1usize..8) {
        let msg = Message::broadcast(3, vec![1.5; payload_len]);
        let bytes = encode(&msg).unwrap();
        let cut = cut.min(bytes.len() - 1);
        let truncated = matches!(
            decode(&bytes[..cut]),
            Err(dircs::Error::FrameIncomplete { .. })
        );
        prop_assert!(truncated);
    }

    /// lift/extract round-trips and project is idempotent and leaves the
    /// signal block untouched.
    #[test]
    fn lift_project_laws(entries in proptest::collection::vec(-1e6f64..1e6, 1..12)) {
        let beta = DVector::from_vec(entries);
        let lifted = lift(&beta);
        prop_assert_eq!(extract(&lifted).unwrap(), beta.clone());
        let mut off = lifted.clone();
        off[beta.len()] = 42.0;
        let once = project(&off);
        prop_assert_eq!(project(&once).clone(), once.clone());
        prop_assert_eq!(once[beta.len()], 1.0);
        prop_assert_eq!(once.rows(0, beta.len()).clone_owned(), beta);
    }

    /// Allocations hit the total exactly and respect the per-node floor.
    #[test]
    fn allocation_total_and_floor(
        m in 1usize..40,
        floor in 5usize..30,
        slack in 0usize..500,
        kind in 0u8..3,
        param in 0.1f64..3.0,
        seed in any::<u64>(),
    ) {
        let total = m * floor + slack;
        let alloc = match kind {
            0 => AllocationSpec::Equal,
            1 => AllocationSpec::PowerLaw { exponent: param },
            _ => AllocationSpec::Dirichlet { alpha: param },
        };
        let mut rng = rng_from(seed, &[1]);
        let sizes = allocate_sizes(total, m, &alloc, floor, &mut rng).unwrap();
        prop_assert_eq!(sizes.iter().sum::<usize>(), total);
        prop_assert!(sizes.iter().all(|&s| s >= floor));
        prop_assert_eq!(sizes.len(), m);
    }
}
