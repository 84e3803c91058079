use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use streamsift::mqlog::{LogConfig, MessageLog};

/// Appends `per_producer` records from each of `producers` threads and checks
/// that every partition holds offsets 0..hw without gaps, each producer's
/// records in the order it wrote them.
fn check_concurrent_appends(
    producers: usize,
    per_producer: usize,
    partitions: u32,
    segment_bytes: u64,
) {
    let dir = tempfile::tempdir().unwrap();
    let log = Arc::new(
        MessageLog::open_with(
            dir.path().join("mqlog"),
            LogConfig {
                segment_bytes,
                index_interval: 7,
            },
        )
        .unwrap(),
    );
    log.create_topic("t", partitions).unwrap();
    let handles: Vec<_> = (0..producers)
        .map(|p| {
            let log = Arc::clone(&log);
            std::thread::spawn(move || {
                let mut positions = Vec::new();
                for i in 0..per_producer {
                    let key = format!("k{}", (p * 31 + i) % 13);
                    let payload = format!("{p}:{i}");
                    positions.push(log.append("t", &key, i as u64, payload.as_bytes()).unwrap());
                }
                positions
            })
        })
        .collect();
    let returned: Vec<_> = handles
        .into_iter()
        .flat_map(|h| h.join().unwrap())
        .collect();
    assert_eq!(returned.len(), producers * per_producer);

    let mut total = 0;
    for part in 0..partitions {
        let hw = log.high_watermark("t", part).unwrap();
        let records = log.read("t", part, 0, usize::MAX).unwrap();
        assert_eq!(records.len() as u64, hw);
        let mut last_seq: HashMap<usize, usize> = HashMap::new();
        for (expected, r) in records.iter().enumerate() {
            assert_eq!(r.position.offset, expected as u64);
            let text = std::str::from_utf8(&r.payload).unwrap();
            let (p, i) = text.split_once(':').unwrap();
            let (p, i): (usize, usize) = (p.parse().unwrap(), i.parse().unwrap());
            if let Some(prev) = last_seq.insert(p, i) {
                assert!(i > prev, "producer {p} reordered in partition {part}");
            }
        }
        total += records.len();
    }
    assert_eq!(total, producers * per_producer);
    let mut offsets: Vec<_> = returned.iter().map(|p| (p.partition, p.offset)).collect();
    offsets.sort_unstable();
    offsets.dedup();
    assert_eq!(offsets.len(), producers * per_producer);
}

#[test]
fn eight_producers_gapless() {
    check_concurrent_appends(8, 500, 4, 16 * 1024);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn concurrent_offsets_are_gapless_and_monotone(
        per_producer in 1usize..120,
        partitions in 1u32..5,
        segment_bytes in 200u64..4096,
    ) {
        check_concurrent_appends(8, per_producer, partitions, segment_bytes);
    }
}

#[test]
fn uncommitted_records_are_redelivered_after_crash() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("mqlog");
    let first_poll;
    {
        let log = MessageLog::open(&root).unwrap();
        log.create_topic("in", 2).unwrap();
        for i in 0..20u64 {
            log.append("in", &format!("d{i}"), i, format!("r{i}").as_bytes())
                .unwrap();
        }
        log.flush_all().unwrap();
        let batch = log.poll("g", "in", 8).unwrap();
        let committed: Vec<_> = batch[..3].iter().map(|r| r.position.clone()).collect();
        log.commit("g", &committed).unwrap();
        first_poll = batch;
        // dropped here without committing the rest of the batch
    }
    let log = MessageLog::open(&root).unwrap();
    let again = log.poll("g", "in", 100).unwrap();
    let committed_through: HashMap<u32, u64> =
        first_poll[..3].iter().fold(HashMap::new(), |mut m, r| {
            let e = m.entry(r.position.partition).or_insert(0);
            *e = (*e).max(r.position.offset + 1);
            m
        });
    for r in &first_poll[3..] {
        let done = committed_through
            .get(&r.position.partition)
            .copied()
            .unwrap_or(0);
        if r.position.offset >= done {
            assert!(again
                .iter()
                .any(|a| a.position == r.position && a.payload == r.payload));
        }
    }
    let expected = 20 - committed_through.values().sum::<u64>();
    assert_eq!(again.len() as u64, expected);
    assert_eq!(log.lag("g", "in").unwrap(), expected);
}

#[test]
fn reads_survive_reopen_across_segments() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("mqlog");
    let cfg = LogConfig {
        segment_bytes: 300,
        index_interval: 3,
    };
    {
        let log = MessageLog::open_with(&root, cfg).unwrap();
        log.create_topic("t", 1).unwrap();
        for i in 0..200u64 {
            log.append("t", "k", i, format!("payload-{i}").as_bytes())
                .unwrap();
        }
    }
    let log = MessageLog::open_with(&root, cfg).unwrap();
    assert_eq!(log.high_watermark("t", 0).unwrap(), 200);
    for from in [0u64, 1, 57, 150, 199, 200] {
        let got = log.read("t", 0, from, 5).unwrap();
        let expect: Vec<u64> = (from..(from + 5).min(200)).collect();
        assert_eq!(
            got.iter().map(|r| r.position.offset).collect::<Vec<_>>(),
            expect
        );
        for r in got {
            assert_eq!(
                r.payload,
                format!("payload-{}", r.position.offset).into_bytes()
            );
            assert_eq!(r.event_time, r.position.offset);
        }
    }
}
