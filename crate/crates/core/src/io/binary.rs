//! Little-endian primitives shared by the dataset and checkpoint files.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

/// Reader that counts consumed bytes so truncation errors can report them.
pub(crate) struct Counting<R> {
    inner: R,
    pub consumed: u64,
    /// Total size the header promised, once known.
    pub expected: Option<u64>,
}

impl<R: Read> Counting<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            consumed: 0,
            expected: None,
        }
    }

    pub fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    let actual = self.consumed + filled as u64;
                    return Err(Error::Truncated {
                        expected: self.expected.unwrap_or(self.consumed + buf.len() as u64),
                        actual,
                    });
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.consumed += buf.len() as u64;
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 8];
        self.exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.exact(&mut b)?;
        Ok(b)
    }

    /// Checks that nothing follows the declared payload.
    pub fn finish(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => {
                    return Err(Error::Format(format!(
                        "trailing data after the declared {} bytes",
                        self.consumed
                    )))
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub(crate) fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub(crate) fn put_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(v.len() * 8);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    Ok(w.write_all(&buf)?)
}

pub(crate) fn check_magic<R: Read>(r: &mut Counting<R>, magic: &[u8; 4], version: u32) -> Result<()> {
    let got = r.bytes(4)?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = r.u32()?;
    if v != version {
        return Err(Error::UnsupportedVersion {
            found: v,
            expected: version,
        });
    }
    Ok(())
}
