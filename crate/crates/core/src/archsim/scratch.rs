use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use super::rma::RmaToken;
use super::{ArchError, CpeId, GroupShared, SharedArray};

/// Granularity of the cached window onto shared arrays.
pub const CACHE_SEGMENT_BYTES: usize = 256;
const SEGMENT_WORDS: usize = CACHE_SEGMENT_BYTES / 8;

/// A live LDM allocation. Offsets are 8-byte aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LdmBlock {
    offset: usize,
    len: usize,
}

impl LdmBlock {
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// LDM byte offset of the `i`-th double in this block.
    pub fn f64_offset(&self, i: usize) -> usize {
        self.offset + 8 * i
    }
}

struct Segment {
    array: SharedArray,
    base: usize,
    words: [u64; SEGMENT_WORDS],
    fetched: [u64; SEGMENT_WORDS],
    dirty: u32,
}

impl Segment {
    fn valid_words(&self) -> usize {
        (self.array.len() - self.base).min(SEGMENT_WORDS)
    }
}

#[derive(Default)]
struct SegmentCache {
    capacity: usize,
    entries: HashMap<(u64, usize), Segment>,
    order: VecDeque<(u64, usize)>,
}

/// One processing element's scratchpad: LDM storage and allocator, the
/// cached window onto shared arrays, and DMA/RMA endpoints.
///
/// A view is owned by a single worker. Writes made through
/// [`ScratchView::cached_write`] stay private to the view until
/// [`ScratchView::flush`]; another view only observes them once it has also
/// dropped its own stale copy with [`ScratchView::invalidate`].
pub struct ScratchView {
    owner: CpeId,
    group: Arc<GroupShared>,
    mem: Vec<u64>,
    allocations: BTreeMap<usize, usize>,
    used_bytes: usize,
    stack_bytes: usize,
    cache: SegmentCache,
}

fn align8(n: usize) -> usize {
    (n + 7) & !7
}

impl ScratchView {
    pub(crate) fn new(owner: CpeId, group: Arc<GroupShared>) -> Result<Self, ArchError> {
        let ldm = group.spec.ldm_bytes;
        let mut mem = Vec::new();
        mem.try_reserve_exact(ldm.div_ceil(8))
            .map_err(|e| ArchError::InvalidSpec(format!("cannot allocate LDM: {e}")))?;
        mem.resize(ldm.div_ceil(8), 0);
        let cache = SegmentCache { capacity: group.spec.cache_bytes() / CACHE_SEGMENT_BYTES, ..Default::default() };
        Ok(ScratchView { owner, group, mem, allocations: BTreeMap::new(), used_bytes: 0, stack_bytes: 0, cache })
    }

    pub fn owner(&self) -> CpeId {
        self.owner
    }

    pub fn capacity(&self) -> usize {
        self.group.spec.ldm_bytes
    }

    pub fn used_bytes(&self) -> usize {
        self.used_bytes
    }

    pub fn stack_bytes(&self) -> usize {
        self.stack_bytes
    }

    pub fn cache_bytes(&self) -> usize {
        self.cache.capacity * CACHE_SEGMENT_BYTES
    }

    /// Upper end of the region explicit allocations may use.
    fn alloc_limit(&self) -> usize {
        self.capacity() - self.cache_bytes() - self.stack_bytes
    }

    /// Bytes still available for explicit allocations (ignoring
    /// fragmentation).
    pub fn available(&self) -> usize {
        self.alloc_limit() - self.used_bytes
    }

    fn top_of_allocations(&self) -> usize {
        self.allocations.iter().next_back().map_or(0, |(off, len)| off + len)
    }

    pub fn allocations(&self) -> impl Iterator<Item = LdmBlock> + '_ {
        self.allocations.iter().map(|(&offset, &len)| LdmBlock { offset, len })
    }

    /// First-fit allocation of `nbytes` at an 8-byte aligned offset.
    pub fn ldm_alloc(&mut self, nbytes: usize) -> Result<LdmBlock, ArchError> {
        if nbytes == 0 {
            return Ok(LdmBlock { offset: 0, len: 0 });
        }
        let limit = self.alloc_limit();
        let mut cursor = 0;
        let mut slot = None;
        for (&off, &len) in &self.allocations {
            if align8(cursor) + nbytes <= off {
                slot = Some(align8(cursor));
                break;
            }
            cursor = off + len;
        }
        let offset = match slot {
            Some(off) => off,
            None if align8(cursor) + nbytes <= limit => align8(cursor),
            None => return Err(ArchError::CapacityExceeded { requested: nbytes, available: self.available() }),
        };
        self.allocations.insert(offset, nbytes);
        self.used_bytes += nbytes;
        Ok(LdmBlock { offset, len: nbytes })
    }

    pub fn ldm_free(&mut self, block: LdmBlock) -> Result<(), ArchError> {
        if block.len == 0 {
            return Ok(());
        }
        match self.allocations.get(&block.offset) {
            Some(&len) if len == block.len => {
                self.allocations.remove(&block.offset);
                self.used_bytes -= len;
                Ok(())
            }
            _ => Err(ArchError::NotAllocated { offset: block.offset, len: block.len }),
        }
    }

    /// Frees every explicit allocation.
    pub fn ldm_reset(&mut self) {
        self.allocations.clear();
        self.used_bytes = 0;
    }

    /// Places a stack of `nbytes` at the top of the allocatable LDM.
    pub fn reserve_stack(&mut self, nbytes: usize) -> Result<(), ArchError> {
        let room = self.capacity() - self.cache_bytes() - self.top_of_allocations();
        if nbytes > room {
            return Err(ArchError::CapacityExceeded { requested: nbytes, available: room });
        }
        self.stack_bytes = nbytes;
        Ok(())
    }

    pub fn release_stack(&mut self) {
        self.stack_bytes = 0;
    }

    fn check_range(&self, offset: usize, len: usize) -> Result<(), ArchError> {
        if len == 0 {
            return Ok(());
        }
        match self.allocations.range(..=offset).next_back() {
            Some((&start, &alen)) if offset + len <= start + alen => Ok(()),
            _ => Err(ArchError::NotAllocated { offset, len }),
        }
    }

    fn check_shared(array: &SharedArray, offset: usize, len: usize) -> Result<(), ArchError> {
        if offset.checked_add(len).is_none_or(|end| end > array.len_bytes()) {
            return Err(ArchError::OutOfRange { offset, len, size: array.len_bytes() });
        }
        Ok(())
    }

    fn bytes(&self) -> &[u8] {
        bytemuck::cast_slice(&self.mem)
    }

    fn bytes_mut(&mut self) -> &mut [u8] {
        bytemuck::cast_slice_mut(&mut self.mem)
    }

    /// Raw bytes of an allocated LDM range.
    pub fn ldm_bytes(&self, offset: usize, len: usize) -> Result<&[u8], ArchError> {
        self.check_range(offset, len)?;
        Ok(&self.bytes()[offset..offset + len])
    }

    pub fn ldm_bytes_mut(&mut self, offset: usize, len: usize) -> Result<&mut [u8], ArchError> {
        self.check_range(offset, len)?;
        Ok(&mut self.bytes_mut()[offset..offset + len])
    }

    /// The block's contents as doubles (trailing bytes beyond a whole double
    /// are not exposed).
    pub fn f64s(&self, block: LdmBlock) -> &[f64] {
        let start = block.offset / 8;
        bytemuck::cast_slice(&self.mem[start..start + block.len / 8])
    }

    pub fn f64s_mut(&mut self, block: LdmBlock) -> &mut [f64] {
        let start = block.offset / 8;
        bytemuck::cast_slice_mut(&mut self.mem[start..start + block.len / 8])
    }

    fn record_transfer(&self, nbytes: usize) {
        // The MPE has no DMA engine; its traffic goes straight to memory.
        if self.owner.is_mpe() {
            self.group.ledger.record_gmem(nbytes);
        } else {
            self.group.ledger.record_dma(nbytes);
        }
    }

    /// Copies `nbytes` from byte `src_offset` of a shared array into LDM.
    /// DMA bypasses the cached window.
    pub fn dma_get(
        &mut self,
        src: &SharedArray,
        src_offset: usize,
        ldm_offset: usize,
        nbytes: usize,
    ) -> Result<(), ArchError> {
        if nbytes == 0 {
            return Ok(());
        }
        self.check_range(ldm_offset, nbytes)?;
        Self::check_shared(src, src_offset, nbytes)?;
        src.read_bytes(src_offset, &mut self.bytes_mut()[ldm_offset..ldm_offset + nbytes]);
        self.record_transfer(nbytes);
        Ok(())
    }

    pub fn dma_put(
        &mut self,
        ldm_offset: usize,
        dst: &SharedArray,
        dst_offset: usize,
        nbytes: usize,
    ) -> Result<(), ArchError> {
        if nbytes == 0 {
            return Ok(());
        }
        self.check_range(ldm_offset, nbytes)?;
        Self::check_shared(dst, dst_offset, nbytes)?;
        dst.write_bytes(dst_offset, &self.bytes()[ldm_offset..ldm_offset + nbytes]);
        self.record_transfer(nbytes);
        Ok(())
    }

    /// `dma_get` in units of doubles: `count` elements starting at element
    /// `src_index` land at LDM byte offset `ldm_offset`.
    pub fn dma_get_f64(
        &mut self,
        src: &SharedArray,
        src_index: usize,
        ldm_offset: usize,
        count: usize,
    ) -> Result<(), ArchError> {
        self.dma_get(src, src_index * 8, ldm_offset, count * 8)
    }

    pub fn dma_put_f64(
        &mut self,
        ldm_offset: usize,
        dst: &SharedArray,
        dst_index: usize,
        count: usize,
    ) -> Result<(), ArchError> {
        self.dma_put(ldm_offset, dst, dst_index * 8, count * 8)
    }

    // ---- cached window -------------------------------------------------

    fn segment_key(array: &SharedArray, index: usize) -> (u64, usize) {
        (array.id(), index / SEGMENT_WORDS)
    }

    fn write_back(&self, seg: &mut Segment) {
        if seg.dirty == 0 {
            return;
        }
        let mut written = 0;
        for w in 0..seg.valid_words() {
            if seg.dirty & (1 << w) == 0 {
                continue;
            }
            let current = seg.array.load_bits(seg.base + w);
            if current != seg.fetched[w] && current != seg.words[w] {
                self.group.ledger.record_conflict();
            }
            seg.array.store_bits(seg.base + w, seg.words[w]);
            seg.fetched[w] = seg.words[w];
            written += 1;
        }
        seg.dirty = 0;
        self.group.ledger.record_gmem(written * 8);
    }

    fn segment(&mut self, array: &SharedArray, index: usize) -> &mut Segment {
        let key = Self::segment_key(array, index);
        if !self.cache.entries.contains_key(&key) {
            if self.cache.entries.len() >= self.cache.capacity {
                if let Some(victim) = self.cache.order.pop_front() {
                    if let Some(mut seg) = self.cache.entries.remove(&victim) {
                        self.write_back(&mut seg);
                    }
                }
            }
            let base = key.1 * SEGMENT_WORDS;
            let mut words = [0u64; SEGMENT_WORDS];
            let valid = (array.len() - base).min(SEGMENT_WORDS);
            for (w, slot) in words.iter_mut().enumerate().take(valid) {
                *slot = array.load_bits(base + w);
            }
            self.group.ledger.record_gmem(valid * 8);
            let seg = Segment { array: array.clone(), base, words, fetched: words, dirty: 0 };
            self.cache.entries.insert(key, seg);
            self.cache.order.push_back(key);
        }
        self.cache.entries.get_mut(&key).expect("segment present")
    }

    /// Reads element `index` through the cached window. With no cache
    /// configured the load goes straight to memory.
    pub fn cached_read(&mut self, array: &SharedArray, index: usize) -> f64 {
        assert!(index < array.len(), "index {index} out of bounds");
        if self.cache.capacity == 0 {
            self.group.ledger.record_gmem(8);
            return array.load(index);
        }
        let seg = self.segment(array, index);
        f64::from_bits(seg.words[index % SEGMENT_WORDS])
    }

    /// Writes element `index` into the cached copy and marks it dirty.
    pub fn cached_write(&mut self, array: &SharedArray, index: usize, value: f64) {
        assert!(index < array.len(), "index {index} out of bounds");
        if self.cache.capacity == 0 {
            self.group.ledger.record_gmem(8);
            array.store(index, value);
            return;
        }
        let seg = self.segment(array, index);
        seg.words[index % SEGMENT_WORDS] = value.to_bits();
        seg.dirty |= 1 << (index % SEGMENT_WORDS);
    }

    /// Writes every dirty cached word back to memory. Cached copies stay.
    pub fn flush(&mut self) {
        let mut entries = std::mem::take(&mut self.cache.entries);
        for seg in entries.values_mut() {
            self.write_back(seg);
        }
        self.cache.entries = entries;
    }

    /// Drops every cached copy, writing dirty words back first.
    pub fn invalidate(&mut self) {
        self.flush();
        self.cache.entries.clear();
        self.cache.order.clear();
    }

    pub fn cached_segments(&self) -> usize {
        self.cache.entries.len()
    }

    // ---- RMA ----------------------------------------------------------

    /// Sends `nbytes` from local LDM to `peer_offset` in a peer's LDM. The
    /// bytes land only when the peer completes the returned token.
    pub fn rma_put(
        &mut self,
        peer: CpeId,
        ldm_offset: usize,
        peer_offset: usize,
        nbytes: usize,
    ) -> Result<RmaToken, ArchError> {
        if self.owner.is_mpe() {
            return Err(ArchError::MpeRma);
        }
        if peer.group != self.owner.group {
            return Err(ArchError::CrossGroupRma { from: self.owner.group, to: peer.group });
        }
        if peer.is_mpe() || peer.index >= self.group.spec.n_cpes {
            return Err(ArchError::UnknownPeer { group: peer.group, index: peer.index });
        }
        self.check_range(ldm_offset, nbytes)?;
        let data = self.bytes()[ldm_offset..ldm_offset + nbytes].to_vec();
        let seq = self.group.rma.post(self.owner.index, peer.index, peer_offset, data);
        self.group.ledger.record_rma(nbytes);
        Ok(RmaToken { src: self.owner, dst: peer, seq })
    }

    /// Applies every put covered by `token` to this view's LDM.
    pub fn rma_complete(&mut self, token: RmaToken) -> Result<(), ArchError> {
        if token.dst != self.owner {
            return Err(ArchError::RmaTokenMismatch { token, by: self.owner });
        }
        let puts = self
            .group
            .rma
            .take_upto(self.owner.index, token.src.index, token.seq)
            .ok_or(ArchError::StaleRmaToken(token))?;
        for put in puts {
            self.check_range(put.peer_offset, put.data.len())?;
            let at = put.peer_offset;
            self.bytes_mut()[at..at + put.data.len()].copy_from_slice(&put.data);
        }
        Ok(())
    }

    /// Hands a token to its destination element.
    pub fn rma_signal(&self, token: RmaToken) {
        self.group.rma.signal(token);
    }

    /// Blocks until `src` signals a token addressed to this view, then
    /// completes it.
    pub fn rma_wait(&mut self, src: CpeId, timeout: Duration) -> Result<RmaToken, ArchError> {
        if self.owner.is_mpe() {
            return Err(ArchError::MpeRma);
        }
        let token =
            self.group.rma.wait_token(self.owner.index, src.index, timeout).ok_or(ArchError::RmaTimeout(src))?;
        self.rma_complete(token)?;
        Ok(token)
    }
}
