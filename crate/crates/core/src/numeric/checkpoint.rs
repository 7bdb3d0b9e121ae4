//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "MEGCKPT\0"
//! version  u32       1
//! count    u32       number of entries
//! entry*   count times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   ndim     u32, dims (ndim × u64)
//!   data     product(dims) × f64 (IEEE-754 binary64, little-endian)
//! ```
//!
//! Entries are written in registry order. Readers must not depend on order.

use std::io::{Read, Write};

use super::{NumericError, Tensor};

const MAGIC: &[u8; 8] = b"MEGCKPT\0";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(out: &mut W, entries: &[(String, Tensor)]) -> Result<(), NumericError> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&u32::try_from(entries.len()).map_err(|_| too_large())?.to_le_bytes())?;
    for (name, tensor) in entries {
        let name = name.as_bytes();
        out.write_all(&u32::try_from(name.len()).map_err(|_| too_large())?.to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&u32::try_from(tensor.shape().len()).map_err(|_| too_large())?.to_le_bytes())?;
        for &d in tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn to_bytes(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, entries).expect("writing to a Vec cannot fail");
    buf
}

fn too_large() -> NumericError {
    NumericError::Checkpoint("entry too large".into())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, NumericError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, NumericError> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Vec<(String, Tensor)>, NumericError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NumericError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(NumericError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(input)?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| NumericError::Checkpoint("non UTF-8 name".into()))?;
        let ndim = read_u32(input)?;
        let shape = (0..ndim)
            .map(|_| read_u64(input).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 8];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(values in prop::collection::vec(any::<f64>(), 0..40), rows in 1usize..4) {
            let cols = values.len() / rows;
            let data: Vec<f64> = values[..rows * cols].to_vec();
            let entries = vec![
                ("a.weight".to_string(), Tensor::new(vec![rows, cols], data).unwrap()),
                ("b".to_string(), Tensor::vector(vec![1.5, -0.0])),
            ];
            let bytes = to_bytes(&entries);
            let back = read_checkpoint(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 2);
            for ((n1, t1), (n2, t2)) in entries.iter().zip(&back) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }

    #[test]
    fn header_is_stable() {
        let bytes = to_bytes(&[("x".to_string(), Tensor::vector(vec![1.0]))]);
        assert_eq!(&bytes[..8], b"MEGCKPT\0");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 4 + 4 + 4 + 1 + 4 + 8 + 8);
        assert_eq!(&bytes[bytes.len() - 8..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_input_is_error() {
        let bytes = to_bytes(&[("x".to_string(), Tensor::vector(vec![1.0, 2.0]))]);
        assert!(read_checkpoint(&mut &bytes[..bytes.len() - 3]).is_err());
        assert!(read_checkpoint(&mut &b"NOTACKPT"[..]).is_err());
    }
}
