//! In-memory datasets and their binary container.
//!
//! Layout (all little endian):
//!
//! ```text
//! magic     4 bytes  "FSDS"
//! version   u16
//! task      u8       0 = ofdm, 1 = mmwave
//! k_sub     u32
//! pilots    u32
//! count     u32      number of samples (d_i)
//! x_len     u32
//! y_len     u32
//! values    f64 * count * (x_len + y_len), row by row: x then y
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Sample;

const MAGIC: &[u8; 4] = b"FSDS";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Ofdm,
    Mmwave,
}

impl TaskKind {
    fn code(self) -> u8 {
        match self {
            TaskKind::Ofdm => 0,
            TaskKind::Mmwave => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(TaskKind::Ofdm),
            1 => Ok(TaskKind::Mmwave),
            other => Err(Error::Format(format!("unknown task kind {other}"))),
        }
    }
}

/// Labelled samples from one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentDataset {
    pub kind: TaskKind,
    /// Subcarrier count of the generating link.
    pub k_sub: usize,
    /// Pilot symbols per frame (OFDM) or training beams (mmWave).
    pub pilots: usize,
    pub samples: Vec<Sample>,
}

impl EnvironmentDataset {
    pub fn new(kind: TaskKind, k_sub: usize, pilots: usize, samples: Vec<Sample>) -> Self {
        Self {
            kind,
            k_sub,
            pilots,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn x_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn y_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.y.len())
    }

    /// First `n` samples as a new dataset.
    pub fn head(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return Err(Error::usage(format!(
                "asked for {n} samples from a dataset of {}",
                self.len()
            )));
        }
        Ok(Self {
            samples: self.samples[..n].to_vec(),
            ..self.clone()
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (xl, yl) = (self.x_len(), self.y_len());
        if self
            .samples
            .iter()
            .any(|s| s.x.len() != xl || s.y.len() != yl)
        {
            return Err(Error::Format("samples have inconsistent lengths".into()));
        }
        let u32_of = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
        };
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[self.kind.code()])?;
        for (v, what) in [
            (self.k_sub, "k_sub"),
            (self.pilots, "pilots"),
            (self.len(), "count"),
            (xl, "x_len"),
            (yl, "y_len"),
        ] {
            w.write_all(&u32_of(v, what)?.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(8 * self.len() * (xl + yl));
        for s in &self.samples {
            for v in s.x.iter().chain(&s.y) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        let kind = TaskKind::from_code(b1[0])?;
        let mut header = [0usize; 5];
        for h in &mut header {
            let mut b4 = [0u8; 4];
            r.read_exact(&mut b4)?;
            *h = u32::from_le_bytes(b4) as usize;
        }
        let [k_sub, pilots, count, xl, yl] = header;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * count * (xl + yl) {
            return Err(Error::Format(format!(
                "payload has {} bytes, header promises {}",
                bytes.len(),
                8 * count * (xl + yl)
            )));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let samples = (0..count)
            .map(|_| Sample {
                x: values.by_ref().take(xl).collect(),
                y: values.by_ref().take(yl).collect(),
            })
            .collect();
        Ok(Self::new(kind, k_sub, pilots, samples))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn any_f64() -> impl Strategy<Value = f64> {
        // raw bit patterns, NaNs and infinities included
        any::<u64>().prop_map(f64::from_bits)
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(
            kind in prop_oneof![Just(TaskKind::Ofdm), Just(TaskKind::Mmwave)],
            k_sub in 1usize..100,
            pilots in 0usize..100,
            xl in 0usize..6,
            yl in 0usize..4,
            raw in proptest::collection::vec(any_f64(), 0..60),
        ) {
            let per = xl + yl;
            let count = raw.len().checked_div(per).unwrap_or(0);
            let samples: Vec<Sample> = (0..count)
                .map(|i| Sample {
                    x: raw[i * per..i * per + xl].to_vec(),
                    y: raw[i * per + xl..(i + 1) * per].to_vec(),
                })
                .collect();
            let ds = EnvironmentDataset::new(kind, k_sub, pilots, samples);
            let mut buf = Vec::new();
            ds.write_to(&mut buf).unwrap();
            let back = EnvironmentDataset::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back.kind, ds.kind);
            prop_assert_eq!(back.k_sub, ds.k_sub);
            prop_assert_eq!(back.pilots, ds.pilots);
            prop_assert_eq!(back.len(), ds.len());
            for (a, b) in back.samples.iter().zip(&ds.samples) {
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&a.x), bits(&b.x));
                prop_assert_eq!(bits(&a.y), bits(&b.y));
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            EnvironmentDataset::read_from(&b"NOPE\x01\x00"[..]),
            Err(Error::Format(_))
        ));
        let ds = EnvironmentDataset::new(
            TaskKind::Ofdm,
            4,
            1,
            vec![Sample {
                x: vec![1.0, 2.0],
                y: vec![0.0],
            }],
        );
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        buf.pop();
        assert!(matches!(
            EnvironmentDataset::read_from(buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let ds = EnvironmentDataset::new(
            TaskKind::Mmwave,
            32,
            16,
            vec![Sample {
                x: vec![0.5; 3],
                y: vec![0.25; 2],
            }],
        );
        ds.save(&path).unwrap();
        assert_eq!(EnvironmentDataset::load(&path).unwrap(), ds);
    }
}
