//! Binary feature files: magic `FVEC`, little-endian u32 count and dim,
//! then count x dim little-endian f32 values, rows contiguous.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

const MAGIC: &[u8; 4] = b"FVEC";

/// An entire feature file held in memory; rows are addressed by index.
pub struct FvecFile {
    dim: usize,
    values: Vec<f32>,
}

impl FvecFile {
    pub fn count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, index: usize) -> Option<&[f32]> {
        if index >= self.count() {
            return None;
        }
        Some(&self.values[index * self.dim..(index + 1) * self.dim])
    }
}

pub fn read(path: &Path) -> Result<FvecFile> {
    let bytes = fs::read(path).with_context(|| format!("reading feature file {}", path.display()))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        bail!("{}: not a feature file (expected FVEC magic)", path.display());
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(12));
    if expected != Some(bytes.len()) {
        bail!(
            "{}: payload holds {} bytes, header promises {} vectors of dim {}",
            path.display(),
            bytes.len() - 12,
            count,
            dim
        );
    }
    let mut values = Vec::with_capacity(count * dim);
    for chunk in bytes[12..].chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(FvecFile { dim, values })
}

/// Write rows in iteration order; every row must have length `dim`.
pub fn write<'a>(path: &Path, dim: usize, rows: impl ExactSizeIterator<Item = &'a [f64]>) -> Result<()> {
    let count = rows.len();
    let mut bytes = Vec::with_capacity(12 + count * dim * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&u32::try_from(count).context("too many vectors for the file format")?.to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(dim).context("dimension too large for the file format")?.to_le_bytes());
    for row in rows {
        if row.len() != dim {
            bail!("feature row of length {} in a dim-{} file", row.len(), dim);
        }
        for v in row {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing feature file {}", path.display()))
}

/// In-memory encode of f32 rows, for payloads embedded in other files.
pub fn encode_f32(dim: usize, rows: &[Vec<f32>]) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(12 + rows.len() * dim * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&u32::try_from(rows.len()).context("too many vectors for the file format")?.to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(dim).context("dimension too large for the file format")?.to_le_bytes());
    for row in rows {
        if row.len() != dim {
            bail!("feature row of length {} in a dim-{} file", row.len(), dim);
        }
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

/// Decode a payload produced by [`encode_f32`].
pub fn decode_f32(bytes: &[u8], what: &str) -> Result<(usize, Vec<Vec<f32>>)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        bail!("{what}: missing FVEC payload magic");
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if count.checked_mul(dim).and_then(|n| n.checked_mul(4)).and_then(|n| n.checked_add(12))
        != Some(bytes.len())
    {
        bail!("{what}: FVEC payload length disagrees with its header");
    }
    let mut rows = Vec::with_capacity(count);
    for r in 0..count {
        let mut row = Vec::with_capacity(dim);
        for chunk in bytes[12 + r * dim * 4..12 + (r + 1) * dim * 4].chunks_exact(4) {
            row.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        rows.push(row);
    }
    Ok((dim, rows))
}
