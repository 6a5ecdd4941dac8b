//! Flat binary tensor bundles for fixtures.
//!
//! Layout: an 8-byte little-endian `u64` header length `N`, then `N` bytes
//! of UTF-8 JSON `{"tensors":[{"name":..,"shape":[rows,cols],"offset":..}]}`,
//! then the data as little-endian `f64`. `offset` counts values (not bytes)
//! from the start of the data section.

use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

pub fn write_tensors(tensors: &[(&str, &Matrix)]) -> Result<Vec<u8>> {
    let mut offset = 0;
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, m) in tensors {
        entries.push(Entry {
            name: name.to_string(),
            shape: [m.rows(), m.cols()],
            offset,
        });
        offset += m.data().len();
    }
    let header = serde_json::to_vec(&Header { tensors: entries })?;
    let mut out = Vec::with_capacity(8 + header.len() + offset * 8);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, m) in tensors {
        for x in m.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_tensors(bytes: &[u8]) -> Result<Vec<(String, Matrix)>> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::invalid("tensor bundle shorter than its length prefix"))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let header_bytes = bytes
        .get(8..8 + header_len)
        .ok_or_else(|| Error::invalid("truncated tensor header"))?;
    let header: Header = serde_json::from_slice(header_bytes)?;
    let data = &bytes[8 + header_len..];
    if !data.chunks_exact(8).remainder().is_empty() {
        return Err(Error::invalid("tensor data is not a whole number of f64 values"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    header
        .tensors
        .into_iter()
        .map(|e| {
            let n = e.shape[0] * e.shape[1];
            let slice = values
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::invalid(format!("tensor {:?} runs past the data", e.name)))?;
            Ok((e.name, Matrix::new(e.shape[0], e.shape[1], slice.to_vec())?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prefix_and_header() {
        let m = Matrix::new(1, 2, vec![1.5, -2.0]).unwrap();
        let bytes = write_tensors(&[("z", &m)]).unwrap();
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        assert_eq!(header["tensors"][0]["shape"], serde_json::json!([1, 2]));
        assert_eq!(&bytes[8 + n..8 + n + 8], &1.5f64.to_le_bytes());
    }

    #[test]
    fn truncated_input_rejected() {
        let m = Matrix::new(2, 2, vec![1.0; 4]).unwrap();
        let bytes = write_tensors(&[("a", &m)]).unwrap();
        assert!(read_tensors(&bytes[..bytes.len() - 8]).is_err());
        assert!(read_tensors(&bytes[..4]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(
            a in prop::collection::vec(-1e6f64..1e6, 6),
            b in prop::collection::vec(-1e6f64..1e6, 4),
        ) {
            let ma = Matrix::new(2, 3, a).unwrap();
            let mb = Matrix::new(4, 1, b).unwrap();
            let bytes = write_tensors(&[("a", &ma), ("b", &mb)]).unwrap();
            let back = read_tensors(&bytes).unwrap();
            prop_assert_eq!(back, vec![("a".to_string(), ma), ("b".to_string(), mb)]);
        }
    }
}
