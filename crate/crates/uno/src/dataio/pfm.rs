//! PFM (portable float map) reading and writing for depth maps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Grid;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Write a grid as a single-channel little-endian PFM (scale -1.0).
///
/// PFM stores rows bottom-to-top; values are truncated to f32 as required by
/// the format.
pub fn write_pfm(path: &Path, grid: &Grid) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "Pf\n{} {}\n-1.0\n", grid.width, grid.height).map_err(|e| io_err(path, e))?;
    for y in (0..grid.height).rev() {
        for x in 0..grid.width {
            let v = grid.at(x, y) as f32;
            w.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Read a single-channel PFM into a grid.
pub fn read_pfm(path: &Path) -> Result<Grid> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;

    // Header: magic, dims, scale — three whitespace-terminated tokens.
    let mut idx = 0;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while idx < bytes.len() && bytes[idx].is_ascii_whitespace() {
            idx += 1;
        }
        let start = idx;
        while idx < bytes.len() && !bytes[idx].is_ascii_whitespace() {
            idx += 1;
        }
        if start == idx {
            return Err(bad(path, "truncated PFM header"));
        }
        let s = std::str::from_utf8(&bytes[start..idx])
            .map_err(|_| bad(path, "non-utf8 PFM header"))?
            .to_string();
        idx += 1; // consume the single whitespace after the token
        Ok(s)
    };

    let magic = token(&bytes)?;
    if magic != "Pf" {
        return Err(bad(path, format!("unsupported PFM magic {magic:?}")));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| bad(path, "bad PFM width"))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| bad(path, "bad PFM height"))?;
    let scale: f64 = token(&bytes)?
        .parse()
        .map_err(|_| bad(path, "bad PFM scale"))?;
    let little_endian = scale < 0.0;

    let expected = width * height * 4;
    if bytes.len() < idx + expected {
        return Err(bad(
            path,
            format!("PFM payload truncated: need {expected} bytes"),
        ));
    }
    let payload = &bytes[idx..idx + expected];
    let mut grid = Grid::new(width, height, 0.0);
    for row in 0..height {
        let y = height - 1 - row; // bottom-to-top storage
        for x in 0..width {
            let off = (row * width + x) * 4;
            let raw: [u8; 4] = payload[off..off + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            if !v.is_finite() {
                return Err(bad(path, format!("non-finite depth at pixel ({x},{y})")));
            }
            grid.set(x, y, v as f64);
        }
    }
    Ok(grid)
}
