//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "SEPTNET\0"
//! version      u32
//! layer_count  u32
//! per layer:
//!   in_dim     u32
//!   out_dim    u32
//!   activation u8       0 = relu, 1 = tanh, 2 = identity
//!   weights    f64 * in_dim * out_dim   (row-major, out x in)
//!   biases     f64 * out_dim
//! ```
//!
//! The JSON twin is plain `serde_json` of [`DenseNet`]; `f64` values are
//! written with shortest round-trip formatting, so it also reloads exactly.

use super::{Activation, DenseNet, Layer, NetError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEPTNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(net: &DenseNet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + net.param_count() * 8 + net.layers().len() * 9);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        out.push(layer.activation().tag());
        for v in layer.weights().iter().chain(layer.biases()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            NetError::Checkpoint(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| NetError::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DenseNet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let tag = r.take(1)?[0];
        let act = Activation::from_tag(tag)
            .ok_or_else(|| NetError::Checkpoint(format!("unknown activation tag {tag}")))?;
        let weights = r.f64s(in_dim * out_dim)?;
        let biases = r.f64s(out_dim)?;
        layers.push(Layer::from_parts(in_dim, out_dim, act, weights, biases)?);
    }
    if r.pos != bytes.len() {
        return Err(NetError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    DenseNet::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let net = DenseNet::new(&[2, 3], Activation::Tanh, Activation::Tanh, 1).unwrap();
        let bytes = encode_checkpoint(&net);
        assert_eq!(&bytes[..8], b"SEPTNET\0");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &3u32.to_le_bytes());
        assert_eq!(bytes[24], 1);
        assert_eq!(bytes.len(), 25 + 8 * (6 + 3));
    }

    #[test]
    fn binary_and_json_round_trip_exactly() {
        let net = DenseNet::new(&[6, 9, 4], Activation::Relu, Activation::Tanh, 77).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&net)).unwrap();
        assert_eq!(back, net);
        let json = serde_json::to_string(&net).unwrap();
        let from_json: DenseNet = serde_json::from_str(&json).unwrap();
        assert_eq!(from_json, net);
        let x = [0.1, 0.9, 0.3, 0.0, 1.0, 0.5];
        assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let net = DenseNet::new(&[2, 2], Activation::Relu, Activation::Identity, 1).unwrap();
        let bytes = encode_checkpoint(&net);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut bad_tag = bytes.clone();
        bad_tag[24] = 9;
        assert!(decode_checkpoint(&bad_tag).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(decode_checkpoint(&trailing).is_err());
    }
}
