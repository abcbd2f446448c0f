use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::backend::{BufferKind, RawBuffer};

/// Smallest size class, in bytes.
pub const MIN_SIZE_CLASS: u64 = 256;

/// Power-of-two size class for a request of `bytes`.
pub fn size_class(bytes: u64) -> u64 {
    bytes.max(MIN_SIZE_CLASS).next_power_of_two()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PoolStats {
    /// Size class (bytes) → number of idle buffers of that class.
    pub buckets: BTreeMap<u64, usize>,
    /// Bytes held by idle pooled buffers.
    pub bytes_resident: u64,
    pub high_watermark: u64,
}

/// Idle buffers bucketed by kind and capacity.
#[derive(Debug)]
pub(crate) struct Pool {
    cap: u64,
    free: HashMap<(BufferKind, u64), Vec<RawBuffer>>,
    resident: u64,
    high: u64,
}

impl Pool {
    pub fn new(cap: u64) -> Self {
        Pool {
            cap,
            free: HashMap::new(),
            resident: 0,
            high: 0,
        }
    }

    pub fn take(&mut self, kind: BufferKind, capacity: u64) -> Option<RawBuffer> {
        let raw = self.free.get_mut(&(kind, capacity))?.pop()?;
        self.resident -= capacity;
        Some(raw)
    }

    /// Keeps `raw` for reuse. Returns it back if the pool is full.
    pub fn put(&mut self, kind: BufferKind, capacity: u64, raw: RawBuffer) -> Option<RawBuffer> {
        if self.resident + capacity > self.cap {
            return Some(raw);
        }
        self.free.entry((kind, capacity)).or_default().push(raw);
        self.resident += capacity;
        self.high = self.high.max(self.resident);
        None
    }

    /// Empties the pool, returning every idle buffer.
    pub fn drain(&mut self) -> Vec<RawBuffer> {
        self.resident = 0;
        self.free.drain().flat_map(|(_, v)| v).collect()
    }

    pub fn stats(&self) -> PoolStats {
        let mut buckets = BTreeMap::new();
        for (&(_, class), bufs) in &self.free {
            if !bufs.is_empty() {
                *buckets.entry(class).or_insert(0) += bufs.len();
            }
        }
        PoolStats {
            buckets,
            bytes_resident: self.resident,
            high_watermark: self.high,
        }
    }
}
