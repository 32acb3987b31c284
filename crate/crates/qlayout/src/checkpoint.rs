//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PRCL" | u16 version | u32 header length | header (JSON: spec + training meta)
//!        | u64 parameter count | f64 parameters | u32 CRC32 of everything before it
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use qlayout_core::network::NetworkSpec;
use qlayout_core::train::{Checkpoint, TrainingMeta};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PRCL";
pub const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    meta: TrainingMeta,
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        spec: ck.spec.clone(),
        meta: ck.meta.clone(),
    })?;
    let mut out = Vec::with_capacity(4 + 2 + 4 + header.len() + 8 + 8 * ck.params.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(ck.params.len() as u64).to_le_bytes());
    for p in &ck.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 6 {
        return Err(Error::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < 10 {
        return Err(Error::Truncated);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 6 };
    let header_len = u32::from_le_bytes(r.array()?) as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)?;
    let count = u64::from_le_bytes(r.array()?) as usize;
    let payload = r.take(count.checked_mul(8).ok_or(Error::Truncated)?)?;
    if r.pos != body.len() {
        return Err(Error::Truncated);
    }
    let params = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let ck = Checkpoint {
        spec: header.spec,
        params,
        meta: header.meta,
    };
    // Validates the payload length against the spec.
    ck.network()?;
    Ok(ck)
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ck)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qlayout_core::network::{LayerSpec, LossKind};
    use qlayout_core::Network;

    fn sample() -> Checkpoint {
        let spec = NetworkSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::dense(2, 3), LayerSpec::Relu, LayerSpec::dense(3, 2)],
            loss: LossKind::SoftmaxCrossEntropy,
        };
        let net = Network::build(spec.clone(), 5).unwrap();
        Checkpoint {
            spec,
            params: net.flat_params(),
            meta: TrainingMeta {
                final_loss: 0.25,
                grad_norm: 1e-4,
                grad_norm_target: 1e-3,
                epochs_run: 3,
                seed: 5,
                dataset_id: "two_moons(n=8,seed=0)".into(),
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = decode(&encode(&ck).unwrap()).unwrap();
        assert_eq!(back, ck);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&ck.params));
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&sample()).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 9]),
            Err(Error::ChecksumMismatch { .. })
        ));
        assert!(matches!(decode(b"NOPE"), Err(Error::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = 9;
        assert!(matches!(decode(&v2), Err(Error::VersionMismatch { found: 9, .. })));
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 12] ^= 1;
        assert!(matches!(decode(&flipped), Err(Error::ChecksumMismatch { .. })));
        assert!(matches!(decode(&bytes[..5]), Err(Error::Truncated)));
        let codes = [
            Error::BadMagic.code(),
            Error::VersionMismatch { found: 0, expected: 1 }.code(),
            Error::Truncated.code(),
            Error::ChecksumMismatch { stored: 0, computed: 1 }.code(),
        ];
        let mut unique = codes.to_vec();
        unique.dedup();
        assert_eq!(unique.len(), 4);
    }

    #[test]
    fn consistent_but_short_payload_is_truncated() {
        let mut ck = sample();
        ck.params.pop();
        let mut bytes = encode(&ck).unwrap();
        // Rewrite the count so the payload ends early but the CRC still matches.
        let n = bytes.len();
        bytes.truncate(n - 4);
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let at = 10 + header_len;
        bytes[at..at + 8].copy_from_slice(&((ck.params.len() + 1) as u64).to_le_bytes());
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Truncated)));
    }
}
