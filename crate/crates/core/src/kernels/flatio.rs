//! Flat binary array files.
//!
//! Layout, all little-endian: the number of dimensions as `u64`, each
//! dimension as `u64`, then the payload as `f64` in row-major order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn write_flat<W: Write>(mut w: W, dims: &[u64], data: &[f64]) -> io::Result<()> {
    let expected = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d));
    if expected != Some(data.len() as u64) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("dims {dims:?} do not match {} values", data.len()),
        ));
    }
    w.write_all(&(dims.len() as u64).to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_flat<R: Read>(mut r: R) -> io::Result<(Vec<u64>, Vec<f64>)> {
    let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let ndims = read_u64(&mut r)?;
    if ndims > 64 {
        return Err(invalid(format!("implausible dimension count {ndims}")));
    }
    let dims = (0..ndims).map(|_| read_u64(&mut r)).collect::<io::Result<Vec<_>>>()?;
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| invalid("dimension product overflows".into()))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() as u64 != count * 8 {
        return Err(invalid(format!("payload has {} bytes, dims {dims:?} need {}", raw.len(), count * 8)));
    }
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((dims, data))
}

pub fn save(path: &Path, dims: &[u64], data: &[f64]) -> io::Result<()> {
    write_flat(BufWriter::new(File::create(path)?), dims, data)
}

pub fn load(path: &Path) -> io::Result<(Vec<u64>, Vec<f64>)> {
    read_flat(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_flat(&mut buf, &[2, 1], &[1.0, -0.0]).unwrap();
        assert_eq!(buf.len(), 8 * 5);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[32..40], &(-0.0f64).to_le_bytes());
        let (dims, data) = read_flat(&buf[..]).unwrap();
        assert_eq!(dims, vec![2, 1]);
        assert_eq!(data[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut buf = Vec::new();
        write_flat(&mut buf, &[3], &[1.0, 2.0, 3.0]).unwrap();
        buf.pop();
        assert!(read_flat(&buf[..]).is_err());
        assert!(write_flat(Vec::new(), &[2], &[1.0]).is_err());
    }

    #[test]
    fn zero_dims_means_one_scalar() {
        let mut buf = Vec::new();
        write_flat(&mut buf, &[], &[4.0]).unwrap();
        assert_eq!(read_flat(&buf[..]).unwrap(), (vec![], vec![4.0]));
    }
}
