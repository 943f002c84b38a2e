use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_ARRAY_ID: AtomicU64 = AtomicU64::new(0);

/// An array in the core group's main memory.
///
/// Storage is a run of 64-bit words addressed by byte offset in little-endian
/// order, so arbitrary byte ranges can be moved by DMA while `f64` element
/// `i` is word `i`. Cloning yields another handle to the same memory.
#[derive(Clone)]
pub struct SharedArray {
    id: u64,
    words: Arc<[AtomicU64]>,
}

impl fmt::Debug for SharedArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SharedArray").field("id", &self.id).field("len", &self.len()).finish()
    }
}

impl SharedArray {
    /// Zero-filled array of `len` doubles.
    pub fn zeros(len: usize) -> Self {
        let words: Arc<[AtomicU64]> = (0..len).map(|_| AtomicU64::new(0)).collect();
        SharedArray { id: NEXT_ARRAY_ID.fetch_add(1, Ordering::Relaxed), words }
    }

    pub fn from_f64(values: &[f64]) -> Self {
        let words: Arc<[AtomicU64]> = values.iter().map(|v| AtomicU64::new(v.to_bits())).collect();
        SharedArray { id: NEXT_ARRAY_ID.fetch_add(1, Ordering::Relaxed), words }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Length in doubles.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn len_bytes(&self) -> usize {
        self.words.len() * 8
    }

    /// Direct, uncached load. Used by the host side to stage data.
    pub fn load(&self, index: usize) -> f64 {
        f64::from_bits(self.load_bits(index))
    }

    pub fn store(&self, index: usize, value: f64) {
        self.store_bits(index, value.to_bits());
    }

    pub(crate) fn load_bits(&self, index: usize) -> u64 {
        self.words[index].load(Ordering::Acquire)
    }

    pub(crate) fn store_bits(&self, index: usize, bits: u64) {
        self.words[index].store(bits, Ordering::Release);
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }

    pub fn copy_from(&self, values: &[f64]) {
        assert_eq!(values.len(), self.len(), "length mismatch");
        for (i, v) in values.iter().enumerate() {
            self.store(i, *v);
        }
    }

    /// Reads `out.len()` bytes starting at byte `offset`. Bounds are the
    /// caller's responsibility.
    pub(crate) fn read_bytes(&self, offset: usize, out: &mut [u8]) {
        if offset.is_multiple_of(8) && out.len().is_multiple_of(8) {
            for (k, chunk) in out.chunks_exact_mut(8).enumerate() {
                chunk.copy_from_slice(&self.load_bits(offset / 8 + k).to_le_bytes());
            }
            return;
        }
        for (k, byte) in out.iter_mut().enumerate() {
            let at = offset + k;
            *byte = (self.load_bits(at / 8) >> ((at % 8) * 8)) as u8;
        }
    }

    pub(crate) fn write_bytes(&self, offset: usize, data: &[u8]) {
        if offset.is_multiple_of(8) && data.len().is_multiple_of(8) {
            for (k, chunk) in data.chunks_exact(8).enumerate() {
                let bits = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
                self.store_bits(offset / 8 + k, bits);
            }
            return;
        }
        for (k, &byte) in data.iter().enumerate() {
            let at = offset + k;
            let shift = (at % 8) * 8;
            let mask = 0xffu64 << shift;
            // Partial-word writes from different workers must not clobber each other.
            let _ = self.words[at / 8]
                .fetch_update(Ordering::AcqRel, Ordering::Acquire, |w| Some((w & !mask) | ((byte as u64) << shift)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unaligned_byte_ranges_roundtrip() {
        let a = SharedArray::zeros(4);
        let pattern: Vec<u8> = (1..=13).collect();
        a.write_bytes(3, &pattern);
        let mut back = vec![0u8; 13];
        a.read_bytes(3, &mut back);
        assert_eq!(back, pattern);
        let mut head = [0xffu8; 3];
        a.read_bytes(0, &mut head);
        assert_eq!(head, [0, 0, 0]);
    }

    #[test]
    fn words_are_little_endian_doubles() {
        let a = SharedArray::from_f64(&[1.5, -2.0]);
        let mut raw = [0u8; 8];
        a.read_bytes(8, &mut raw);
        assert_eq!(f64::from_le_bytes(raw), -2.0);
        assert_eq!(a.to_vec(), vec![1.5, -2.0]);
    }
}
