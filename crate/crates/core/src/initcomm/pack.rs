//! Packed record buffers: per record a `(src, dst, len)` header of
//! little-endian u64 followed by `len` payload bytes.

use super::InitError;

const HEADER: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Record {
    pub src: usize,
    pub dst: usize,
    pub data: Vec<u8>,
}

pub(crate) fn packed_len(records: &[Record]) -> usize {
    records.iter().map(|r| HEADER + r.data.len()).sum()
}

pub(crate) fn pack(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::with_capacity(packed_len(records));
    for r in records {
        out.extend_from_slice(&(r.src as u64).to_le_bytes());
        out.extend_from_slice(&(r.dst as u64).to_le_bytes());
        out.extend_from_slice(&(r.data.len() as u64).to_le_bytes());
        out.extend_from_slice(&r.data);
    }
    out
}

/// Splits a buffer back into records, rejecting truncated headers, lengths
/// past the end, and records `accept` refuses.
pub(crate) fn unpack(buf: &[u8], rank: usize, accept: impl Fn(usize, usize) -> bool) -> Result<Vec<Record>, InitError> {
    let bad = |reason: String| InitError::MalformedPack { rank, reason };
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        if buf.len() - pos < HEADER {
            return Err(bad(format!("truncated header at byte {pos}")));
        }
        let word = |k: usize| u64::from_le_bytes(buf[pos + 8 * k..pos + 8 * k + 8].try_into().unwrap());
        let (src, dst, len) = (word(0) as usize, word(1) as usize, word(2));
        pos += HEADER;
        if len > (buf.len() - pos) as u64 {
            return Err(bad(format!("record {src}->{dst} claims {len} bytes, {} left", buf.len() - pos)));
        }
        if !accept(src, dst) {
            return Err(bad(format!("unexpected record {src}->{dst}")));
        }
        let len = len as usize;
        out.push(Record { src, dst, data: buf[pos..pos + len].to_vec() });
        pos += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let recs = vec![Record { src: 1, dst: 2, data: vec![9, 8, 7] }, Record { src: 3, dst: 0, data: vec![] }];
        let buf = pack(&recs);
        assert_eq!(buf.len(), packed_len(&recs));
        assert_eq!(unpack(&buf, 0, |_, _| true).unwrap(), recs);
    }

    #[test]
    fn corrupt_buffers_are_rejected() {
        let buf = pack(&[Record { src: 1, dst: 2, data: vec![1; 4] }]);
        assert!(unpack(&buf[..10], 0, |_, _| true).is_err());
        assert!(unpack(&buf[..buf.len() - 1], 0, |_, _| true).is_err());
        assert!(unpack(&buf, 0, |_, dst| dst == 5).is_err());
    }
}
