mod support;

use proptest::prelude::*;
use ssd_cache::kvcache::{append_buffered, CacheHandle, CachePolicyConfig, HeadCache, HeadKind, PolicyKind, RowBuffer};
use ssd_cache::profiler::{HeadLabel, HeadPartition};
use support::{heavy_hitter_oracle, window_oracle};

fn cfg(policy: PolicyKind, window: usize, budget: usize, recent: usize, sink: usize, buffer_rows: usize) -> CachePolicyConfig {
    CachePolicyConfig {
        policy,
        window,
        budget,
        recent,
        sink,
        buffer_rows,
        ..CachePolicyConfig::default()
    }
}

/// Attention weights in eighths so every score sum is exact and ties are common.
fn eighths(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u8..=8, n).prop_map(|v| v.into_iter().map(|x| f64::from(x) / 8.0).collect())
}

fn step_attention(max_steps: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    // One row per step, long enough for any resident count; truncated on use.
    prop::collection::vec(eighths(max_steps + 1), max_steps)
}

fn kv(p: usize) -> ([f64; 1], [f64; 1]) {
    ([p as f64], [-(p as f64)])
}

proptest! {
    #[test]
    fn heavy_hitter_matches_full_sort(
        budget in 1usize..6,
        recent in 0usize..5,
        pinned in 0usize..4,
        attn in step_attention(40),
    ) {
        let c = cfg(PolicyKind::H2o, 4, budget, recent, 0, 1);
        let mut head = HeadCache::new(0, 0, HeadKind::H2o, 1, pinned);
        let mut reference: Vec<(usize, f64)> = Vec::new();
        for (p, row) in attn.iter().enumerate() {
            let n = head.len();
            let a = &row[..n];
            let (k, v) = kv(p);
            head.append_and_evict(&c, &k, &v, p, (n > 0).then_some(a)).unwrap();

            for (e, x) in reference.iter_mut().zip(a) {
                e.1 += x;
            }
            let keep = heavy_hitter_oracle(&reference, pinned, budget, recent, p);
            reference = keep
                .iter()
                .map(|&q| reference.iter().find(|e| e.0 == q).map_or((q, 0.0), |e| *e))
                .collect();

            prop_assert_eq!(head.positions(), &keep[..]);
            let scores: Vec<f64> = reference.iter().map(|e| e.1).collect();
            prop_assert_eq!(head.scores(), &scores[..]);
            let keys: Vec<f64> = keep.iter().map(|&q| q as f64).collect();
            prop_assert_eq!(head.keys(), &keys[..]);
        }
    }

    #[test]
    fn window_matches_oracle(window in 1usize..8, sink in 0usize..4, pinned in 0usize..5, steps in 1usize..40) {
        let c = cfg(PolicyKind::Streaming, window, 1, 0, sink, 1);
        let mut head = HeadCache::new(0, 0, HeadKind::Streaming, 1, pinned);
        let mut reference: Vec<usize> = Vec::new();
        for p in 0..steps {
            let (k, v) = kv(p);
            head.append_and_evict(&c, &k, &v, p, None).unwrap();
            reference = window_oracle(&reference, pinned, sink, window, p);
            prop_assert_eq!(head.positions(), &reference[..]);
        }
    }

    /// The buffered path equals staging every entry, then one unbuffered
    /// compaction over the combined set whenever the buffer fills.
    #[test]
    fn row_buffer_matches_staged_replay(
        semantic in any::<bool>(),
        buffer_rows in 1usize..7,
        window in 1usize..6,
        budget in 1usize..5,
        recent in 0usize..4,
        sink in 0usize..3,
        attn in step_attention(50),
    ) {
        let kind = if semantic { HeadKind::Semantic } else { HeadKind::Spatial };
        let c = cfg(PolicyKind::SsdBuffer, window, budget, recent, sink, buffer_rows);
        let mut head = HeadCache::new(0, 0, kind, 1, 0);
        let mut buffer = RowBuffer::new(buffer_rows, 1);
        let mut committed: Vec<(usize, f64)> = Vec::new();
        let mut staged: Vec<(usize, f64)> = Vec::new();
        for (p, row) in attn.iter().enumerate() {
            let n = head.len() + buffer.fill();
            let a = &row[..n];
            let (k, v) = kv(p);
            let tracked = semantic && n > 0;
            append_buffered(&mut head, &c, &mut buffer, &k, &v, p, tracked.then_some(a)).unwrap();

            if semantic {
                for (e, x) in committed.iter_mut().chain(staged.iter_mut()).zip(a) {
                    e.1 += x;
                }
            }
            staged.push((p, 0.0));
            if staged.len() == buffer_rows {
                let (last, last_score) = staged.pop().unwrap();
                let mut all = std::mem::take(&mut committed);
                all.append(&mut staged);
                let keep = if semantic {
                    heavy_hitter_oracle(&all, 0, budget, recent, last)
                } else {
                    let pos: Vec<usize> = all.iter().map(|e| e.0).collect();
                    window_oracle(&pos, 0, sink, window, last)
                };
                committed = keep
                    .iter()
                    .map(|&q| all.iter().find(|e| e.0 == q).copied().unwrap_or((last, last_score)))
                    .collect();
            }

            let pos: Vec<usize> = committed.iter().map(|e| e.0).collect();
            prop_assert_eq!(head.positions(), &pos[..]);
            let staged_pos: Vec<usize> = staged.iter().map(|e| e.0).collect();
            prop_assert_eq!(buffer.positions(), &staged_pos[..]);
            if semantic {
                let scores: Vec<f64> = committed.iter().map(|e| e.1).collect();
                prop_assert_eq!(head.scores(), &scores[..]);
            }
        }
    }

    /// Every policy through the handle: bounded size, increasing positions,
    /// prompt never evicted, new token always resident.
    #[test]
    fn handle_invariants(
        policy in prop::sample::select(PolicyKind::ALL.to_vec()),
        prefix_len in 1usize..6,
        window in 1usize..6,
        budget in 1usize..5,
        recent in 0usize..4,
        sink in 0usize..3,
        buffer_rows in 1usize..5,
        labels in prop::collection::vec(any::<bool>(), 4),
        attn in step_attention(45),
    ) {
        let partition = HeadPartition::new(
            2,
            2,
            labels.iter().map(|&s| if s { HeadLabel::Semantic } else { HeadLabel::Spatial }).collect(),
        )
        .unwrap();
        let mut c = cfg(policy, window, budget, recent, sink, buffer_rows);
        if policy.needs_partition() {
            c = c.with_partition(partition);
        }
        let mut handle = CacheHandle::new(c.clone(), 2, 2, 1, prefix_len).unwrap();
        for (p, row) in attn.iter().enumerate() {
            for layer in 0..2 {
                for h in 0..2 {
                    let n = handle.slot(layer, h).len();
                    let (k, v) = kv(p);
                    handle.update_head(layer, h, &k, &v, &row[..n]).unwrap();
                }
            }
            handle.advance();
            for layer in 0..2 {
                for h in 0..2 {
                    let slot = handle.slot(layer, h);
                    let positions = slot.positions();
                    prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
                    prop_assert_eq!(positions.last().copied(), Some(p));
                    let prompt_seen = prefix_len.min(p + 1);
                    prop_assert!(positions.iter().take(prompt_seen).copied().eq(0..prompt_seen));
                    let kind = c.head_kind(layer, h);
                    if let Some(bound) = c.retention_bound(kind, prompt_seen) {
                        prop_assert!(slot.cache().len() <= bound, "committed {} > {}", slot.cache().len(), bound);
                        let staged_max = if c.is_buffered() { buffer_rows - 1 } else { 0 };
                        prop_assert!(slot.len() <= bound + staged_max);
                    } else {
                        prop_assert_eq!(slot.len(), p + 1);
                    }
                }
            }
        }
    }
}

#[test]
fn out_of_order_append_is_rejected() {
    let c = cfg(PolicyKind::Streaming, 2, 1, 0, 1, 1);
    let mut head = HeadCache::new(0, 0, HeadKind::Streaming, 1, 0);
    head.append_and_evict(&c, &[0.0], &[0.0], 3, None).unwrap();
    assert!(head.append_and_evict(&c, &[0.0], &[0.0], 3, None).is_err());
    assert!(head.append_and_evict(&c, &[0.0], &[0.0], 2, None).is_err());
}

#[test]
fn attention_length_must_match_residents() {
    let c = cfg(PolicyKind::H2o, 2, 1, 0, 0, 1);
    let mut head = HeadCache::new(0, 0, HeadKind::H2o, 1, 0);
    head.append_and_evict(&c, &[0.0], &[0.0], 0, None).unwrap();
    assert!(head.append_and_evict(&c, &[0.0], &[0.0], 1, Some(&[0.5, 0.5])).is_err());
    assert!(head.append_and_evict(&c, &[0.0], &[0.0], 1, None).is_err());
}
