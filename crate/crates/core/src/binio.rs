//! Little-endian helpers shared by the binary file formats.

use std::io::{self, Read, Write};

use crate::{Error, Result};

pub fn write_u8(w: &mut impl Write, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

pub fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f32(w: &mut impl Write, v: f32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

/// Reader that maps short reads onto a structured format error.
pub struct LeReader<R> {
    inner: R,
    what: &'static str,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R, what: &'static str) -> Self {
        Self { inner, what }
    }

    fn fill(&mut self, buf: &mut [u8], field: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Format {
                what: self.what,
                msg: format!("truncated while reading {field}"),
            },
            _ => Error::Io(e),
        })
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut buf = [0u8; 4];
        self.fill(&mut buf, "magic")?;
        if &buf != expected {
            return Err(Error::Format {
                what: self.what,
                msg: format!("bad magic {:?}", String::from_utf8_lossy(&buf)),
            });
        }
        Ok(())
    }

    pub fn u8(&mut self, field: &str) -> Result<u8> {
        let mut buf = [0u8; 1];
        self.fill(&mut buf, field)?;
        Ok(buf[0])
    }

    pub fn u32(&mut self, field: &str) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.fill(&mut buf, field)?;
        Ok(u32::from_le_bytes(buf))
    }

    pub fn u64(&mut self, field: &str) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.fill(&mut buf, field)?;
        Ok(u64::from_le_bytes(buf))
    }

    pub fn f32(&mut self, field: &str) -> Result<f32> {
        let mut buf = [0u8; 4];
        self.fill(&mut buf, field)?;
        Ok(f32::from_le_bytes(buf))
    }

    pub fn error(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            msg: msg.into(),
        }
    }
}
