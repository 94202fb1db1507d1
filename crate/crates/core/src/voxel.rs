//! Binary voxel dump of component labels.
//!
//! Layout, little-endian throughout: the magic `TFRG`, a `u16` format
//! version, `d` and `N` as `u32`, then `N^d` `u32` labels in row-major order
//! with the last coordinate fastest. Label 0 marks occupied sites.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::components::ComponentStats;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TFRG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelDump {
    pub d: u32,
    pub n: u32,
    pub labels: Vec<u32>,
}

impl VoxelDump {
    pub fn from_stats(stats: &ComponentStats) -> Result<Self> {
        let (d, n) = (stats.grid.d, stats.grid.side);
        let dump = VoxelDump {
            d: u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} does not fit in u32")))?,
            n: u32::try_from(n).map_err(|_| Error::Format(format!("side {n} does not fit in u32")))?,
            labels: stats.labels.clone(),
        };
        dump.check_len(dump.labels.len())?;
        Ok(dump)
    }

    fn expected_len(&self) -> Option<usize> {
        (self.n as usize).checked_pow(self.d)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        match self.expected_len() {
            Some(want) if want == got => Ok(()),
            want => Err(Error::Format(format!(
                "{got} labels for d={} N={} (expected {want:?})",
                self.d, self.n
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.labels.len());
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.d.to_le_bytes())?;
        w.write_all(&self.n.to_le_bytes())?;
        for l in &self.labels {
            w.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing TFRG header".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported voxel format version {version}")));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("four bytes"));
        let mut dump = VoxelDump {
            d: word(6),
            n: word(10),
            labels: Vec::new(),
        };
        let payload = &bytes[HEADER_LEN..];
        if !payload.len().is_multiple_of(4) {
            return Err(Error::Format(format!(
                "payload of {} bytes is not a whole number of labels",
                payload.len()
            )));
        }
        dump.check_len(payload.len() / 4)?;
        dump.labels = payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        Ok(dump)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let ctx = || format!("writing voxels to {}", path.display());
        let file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(ctx(), e))?;
        w.flush().map_err(|e| Error::io(ctx(), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(format!("reading voxels from {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes the labels of `stats` to `path`.
pub fn dump_voxels(stats: &ComponentStats, path: &Path) -> Result<()> {
    VoxelDump::from_stats(stats)?.write(path)
}
