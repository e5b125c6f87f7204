//! A windowed head with and without a row buffer: the buffered head
//! stages new entries and compacts once per `buffer_rows` steps.

use ssd_cache::kvcache::{append_buffered, CachePolicyConfig, HeadCache, HeadKind, PolicyKind, RowBuffer};

fn main() -> ssd_cache::Result<()> {
    let cfg = CachePolicyConfig {
        policy: PolicyKind::SsdBuffer,
        window: 4,
        sink: 1,
        buffer_rows: 3,
        ..CachePolicyConfig::default()
    };
    let mut plain = HeadCache::new(0, 0, HeadKind::Spatial, 1, 0);
    let mut buffered = HeadCache::new(0, 0, HeadKind::Spatial, 1, 0);
    let mut buffer = RowBuffer::new(cfg.buffer_rows, 1);

    for pos in 0..10 {
        let kv = [pos as f64];
        plain.append_and_evict(&cfg, &kv, &kv, pos, None)?;
        append_buffered(&mut buffered, &cfg, &mut buffer, &kv, &kv, pos, None)?;
        println!(
            "step {pos}: plain {:?}  buffered {:?} + staged {:?}",
            plain.positions(),
            buffered.positions(),
            buffer.positions()
        );
    }
    Ok(())
}
