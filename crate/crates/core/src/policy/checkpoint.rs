use std::io::{Read, Write};
use std::path::Path;

use super::{PolicyConfig, PolicyError, PolicyParams, TrainConfig};
use crate::features::NormStats;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SNAVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a policy for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub stats: NormStats,
    pub train: TrainConfig,
}

/// FNV-1a over the payload, appended as a trailer.
fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

pub fn encode_checkpoint(params: &PolicyParams, stats: &NormStats, train: &TrainConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_bytes(
        &mut out,
        serde_json::to_string(&params.config)
            .expect("config serializes")
            .as_bytes(),
    );
    put_bytes(
        &mut out,
        serde_json::to_string(train)
            .expect("config serializes")
            .as_bytes(),
    );
    out.extend_from_slice(&stats.mu.to_le_bytes());
    out.extend_from_slice(&stats.sigma.to_le_bytes());
    out.extend_from_slice(&(params.set.len() as u64).to_le_bytes());
    for (_, name, t) in params.set.iter() {
        put_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PolicyError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end =
            end.ok_or_else(|| PolicyError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, PolicyError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, PolicyError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn bytes(&mut self) -> Result<&'a [u8], PolicyError> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self) -> Result<T, PolicyError> {
        serde_json::from_slice(self.bytes()?).map_err(|e| PolicyError::Corrupt(e.to_string()))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint, PolicyError> {
    if buf.len() < 12 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(PolicyError::Corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(PolicyError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if buf.len() < 20 {
        return Err(PolicyError::Corrupt("missing checksum".into()));
    }
    let (body, trailer) = buf.split_at(buf.len() - 8);
    if checksum(body) != u64::from_le_bytes(trailer.try_into().expect("8 bytes")) {
        return Err(PolicyError::Corrupt("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let config: PolicyConfig = r.json()?;
    let train: TrainConfig = r.json()?;
    let stats = NormStats {
        mu: r.f64()?,
        sigma: r.f64()?,
    };
    let mut params = PolicyParams::init(config, 0)?;
    let n = r.u64()? as usize;
    if n != params.set.len() {
        return Err(PolicyError::Corrupt(format!(
            "{n} tensors, expected {}",
            params.set.len()
        )));
    }
    let ids: Vec<_> = params.set.ids().collect();
    for id in ids {
        let name =
            std::str::from_utf8(r.bytes()?).map_err(|e| PolicyError::Corrupt(e.to_string()))?;
        if name != params.set.name(id) {
            return Err(PolicyError::Corrupt(format!("unexpected tensor '{name}'")));
        }
        let ndim = r.u64()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        if shape != params.set.get(id).shape() {
            return Err(PolicyError::Corrupt(format!(
                "tensor '{name}' has shape {shape:?}"
            )));
        }
        for v in params.set.get_mut(id).data_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != body.len() {
        return Err(PolicyError::Corrupt("trailing bytes".into()));
    }
    Ok(Checkpoint {
        params,
        stats,
        train,
    })
}

pub fn save_checkpoint(
    params: &PolicyParams,
    stats: &NormStats,
    train: &TrainConfig,
    path: &Path,
) -> Result<(), PolicyError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(params, stats, train))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PolicyError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::tests::tiny;

    #[test]
    fn round_trip_is_bitwise() {
        let params = PolicyParams::init(tiny(), 17).unwrap();
        let stats = NormStats {
            mu: 0.123,
            sigma: 4.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_checkpoint(&params, &stats, &TrainConfig::default(), &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.params, params);
        assert_eq!(ck.stats.mu.to_bits(), stats.mu.to_bits());
        assert_eq!(ck.stats.sigma.to_bits(), stats.sigma.to_bits());
        assert_eq!(ck.train, TrainConfig::default());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let params = PolicyParams::init(tiny(), 1).unwrap();
        let mut buf = encode_checkpoint(&params, &NormStats::IDENTITY, &TrainConfig::default());
        buf[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&buf),
            Err(PolicyError::Version {
                found: 7,
                expected: 1
            })
        ));
    }

    #[test]
    fn corruption_is_detected() {
        let params = PolicyParams::init(tiny(), 1).unwrap();
        let buf = encode_checkpoint(&params, &NormStats::IDENTITY, &TrainConfig::default());
        let mut flipped = buf.clone();
        flipped[100] ^= 0x10;
        assert!(matches!(
            decode_checkpoint(&flipped),
            Err(PolicyError::Corrupt(_))
        ));
        assert!(matches!(
            decode_checkpoint(&buf[..buf.len() - 3]),
            Err(PolicyError::Corrupt(_))
        ));
        assert!(matches!(
            decode_checkpoint(b"nonsense"),
            Err(PolicyError::Corrupt(_))
        ));
    }
}
