use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::binary::{check_magic, put_f64, put_f64s, put_u32, put_u64, Counting};
use crate::error::{Error, Result};
use crate::surrogate::{PulseKind, SurrogateSample};

pub const DATASET_MAGIC: &[u8; 4] = b"DMLD";
pub const DATASET_VERSION: u32 = 1;

/// magic, version, symbol rate, frame count, frame length.
const HEADER_BYTES: u64 = 4 + 4 + 8 + 8 + 8;
/// bias, swing, pulse code, seed, index.
const META_BYTES: u64 = 8 + 8 + 4 + 8 + 8;

fn frame_bytes(len: u64) -> u64 {
    META_BYTES + 2 * 8 * len
}

/// Writes `frames` (all of equal length) recorded at `symbol_rate`.
pub fn write_dataset(w: &mut impl Write, symbol_rate: f64, frames: &[SurrogateSample]) -> Result<()> {
    let len = frames.first().map_or(0, |f| f.input.len());
    if let Some(bad) = frames.iter().find(|f| f.input.len() != len || f.target.len() != len) {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: bad.input.len().min(bad.target.len()),
        });
    }
    w.write_all(DATASET_MAGIC)?;
    put_u32(w, DATASET_VERSION)?;
    put_f64(w, symbol_rate)?;
    put_u64(w, frames.len() as u64)?;
    put_u64(w, len as u64)?;
    for f in frames {
        put_f64(w, f.i_bias)?;
        put_f64(w, f.i_pp)?;
        put_u32(w, f.pulse.code())?;
        put_u64(w, f.seed)?;
        put_u64(w, f.index)?;
        put_f64s(w, &f.input)?;
        put_f64s(w, &f.target)?;
    }
    Ok(())
}

pub fn write_dataset_file(path: &Path, symbol_rate: f64, frames: &[SurrogateSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, symbol_rate, frames)?;
    w.flush()?;
    Ok(())
}

/// Streaming reader: the header is parsed up front, frames one at a time.
pub struct DatasetReader<R> {
    r: Counting<R>,
    pub symbol_rate: f64,
    pub frame_count: u64,
    pub frame_len: usize,
    read: u64,
}

impl<R: Read> DatasetReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut r = Counting::new(inner);
        check_magic(&mut r, DATASET_MAGIC, DATASET_VERSION)?;
        let symbol_rate = r.f64()?;
        let frame_count = r.u64()?;
        let frame_len = r.u64()?;
        r.expected = frame_count
            .checked_mul(frame_bytes(frame_len))
            .and_then(|b| b.checked_add(HEADER_BYTES));
        if r.expected.is_none() {
            return Err(Error::Format(format!(
                "implausible header: {frame_count} frames of {frame_len}"
            )));
        }
        Ok(Self {
            r,
            symbol_rate,
            frame_count,
            frame_len: frame_len as usize,
            read: 0,
        })
    }

    /// Total file size the header declares.
    pub fn declared_bytes(&self) -> u64 {
        self.r.expected.expect("set in new")
    }

    fn next_frame(&mut self) -> Result<SurrogateSample> {
        let i_bias = self.r.f64()?;
        let i_pp = self.r.f64()?;
        let pulse = PulseKind::from_code(self.r.u32()?)?;
        let seed = self.r.u64()?;
        let index = self.r.u64()?;
        let input = self.r.f64s(self.frame_len)?;
        let target = self.r.f64s(self.frame_len)?;
        self.read += 1;
        if self.read == self.frame_count {
            self.r.finish()?;
        }
        Ok(SurrogateSample {
            input,
            target,
            i_bias,
            i_pp,
            pulse,
            seed,
            index,
        })
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<SurrogateSample>;

    fn next(&mut self) -> Option<Self::Item> {
        (self.read < self.frame_count).then(|| {
            let f = self.next_frame();
            if f.is_err() {
                // Stop after the first error.
                self.read = self.frame_count;
            }
            f
        })
    }
}

/// Opens a dataset file, checking its size against the header before any
/// frame is read.
pub fn open_dataset(path: &Path) -> Result<DatasetReader<BufReader<File>>> {
    let file = File::open(path)?;
    let actual = file.metadata()?.len();
    let reader = DatasetReader::new(BufReader::new(file))?;
    let expected = reader.declared_bytes();
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    Ok(reader)
}

/// Symbol rate and every frame of a dataset file.
pub fn read_dataset_file(path: &Path) -> Result<(f64, Vec<SurrogateSample>)> {
    let reader = open_dataset(path)?;
    let rate = reader.symbol_rate;
    let frames = reader.collect::<Result<Vec<_>>>()?;
    Ok((rate, frames))
}
