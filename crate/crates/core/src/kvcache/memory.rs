use super::handle::CacheHandle;

/// Bytes per stored scalar (f64).
pub const ELEMENT_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadEntryCount {
    pub layer: usize,
    pub head: usize,
    pub entries: usize,
}

/// Exact retained-KV totals over a set of cache handles. Staged row-buffer
/// entries are resident memory and are counted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryReport {
    /// Per (handle, layer, head), in handle order then layer-major.
    pub heads: Vec<HeadEntryCount>,
    pub total_entries: usize,
    /// `sum(entries * d_head * 2)`: keys plus values.
    pub total_scalars: usize,
    pub bytes: usize,
    pub element_width: usize,
}

pub fn memory_report<'a>(caches: impl IntoIterator<Item = &'a CacheHandle>) -> MemoryReport {
    let mut report = MemoryReport {
        element_width: ELEMENT_WIDTH,
        ..MemoryReport::default()
    };
    for handle in caches {
        for slot in handle.slots() {
            let entries = slot.len();
            report.heads.push(HeadEntryCount {
                layer: slot.cache().layer(),
                head: slot.cache().head(),
                entries,
            });
            report.total_entries += entries;
            report.total_scalars += entries * slot.cache().d_head() * 2;
        }
    }
    report.bytes = report.total_scalars * ELEMENT_WIDTH;
    report
}
