use std::time::Duration;

use duopath_core::{BufferConfig, Phase, PlayoutBuffer};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Ingest(u64),
    Consume(u64),
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![(0u64..5_000_000).prop_map(Op::Ingest), (0u64..30_000_000_000).prop_map(Op::Consume)],
        1..300,
    )
}

proptest! {
    #[test]
    fn bytes_are_conserved_and_phases_legal(bitrate in 1u64..2_000_000, media in 0u64..200_000_000, ops in ops()) {
        let cfg = BufferConfig { bitrate, ..BufferConfig::default() };
        let mut b = PlayoutBuffer::new(cfg, media).unwrap();
        let mut fed = 0u64;
        for op in ops {
            let before = b.phase();
            let transitions = match op {
                Op::Ingest(n) => {
                    let n = n.min(media - fed);
                    fed += n;
                    b.ingest(n).unwrap()
                }
                Op::Consume(ns) => b.consume(Duration::from_nanos(ns)),
            };
            let mut at = before;
            for t in &transitions {
                prop_assert_eq!(t.from, at);
                prop_assert!(Phase::is_legal_transition(t.from, t.to), "{:?} -> {:?}", t.from, t.to);
                at = t.to;
            }
            prop_assert_eq!(at, b.phase());
            prop_assert_eq!(b.ingested_bytes() - b.consumed_bytes(), b.buffered_bytes());
            prop_assert_eq!(b.ingested_bytes(), fed);
            prop_assert!(b.consumed_bytes() <= b.media_bytes());
        }
    }
}
