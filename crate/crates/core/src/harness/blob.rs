//! Versioned container: JSON header followed by named, shape-prefixed
//! row-major `f64` arrays.

use super::HarnessError;

pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(name: &str, shape: &[usize], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        }
    }
}

pub fn encode(magic: &[u8; 8], version: u32, header: &[u8], arrays: &[Array]) -> Vec<u8> {
    let payload: usize = arrays
        .iter()
        .map(|a| a.data.len() * 8 + a.name.len() + 16 + a.shape.len() * 8)
        .sum();
    let mut out = Vec::with_capacity(32 + header.len() + payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.name.len() as u64).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.extend_from_slice(&(a.shape.len() as u64).to_le_bytes());
        for d in &a.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarnessError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| HarnessError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize, HarnessError> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|n| *n <= self.buf.len())
            .ok_or_else(|| HarnessError::Format(format!("implausible length {n}")))
    }
}

/// Returns the header bytes and arrays after checking magic and version.
pub fn decode<'a>(
    buf: &'a [u8],
    magic: &[u8; 8],
    version: u32,
) -> Result<(&'a [u8], Vec<Array>), HarnessError> {
    if buf.len() < 12 || &buf[..8] != magic {
        return Err(HarnessError::Format("bad magic".into()));
    }
    let found = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if found != version {
        return Err(HarnessError::Version {
            found,
            expected: version,
        });
    }
    let mut c = Cursor { buf, pos: 12 };
    let hl = c.len()?;
    let header = c.take(hl)?;
    let n = c.len()?;
    let mut arrays = Vec::with_capacity(n);
    for _ in 0..n {
        let nl = c.len()?;
        let name = std::str::from_utf8(c.take(nl)?)
            .map_err(|e| HarnessError::Format(e.to_string()))?
            .to_string();
        let nd = c.len()?;
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            shape.push(c.len()?);
        }
        let count: usize = shape.iter().product();
        let bytes = c.take(
            count
                .checked_mul(8)
                .ok_or_else(|| HarnessError::Format("overflow".into()))?,
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        arrays.push(Array { name, shape, data });
    }
    if c.pos != buf.len() {
        return Err(HarnessError::Format("trailing bytes".into()));
    }
    Ok((header, arrays))
}
