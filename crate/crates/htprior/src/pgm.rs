//! Binary PGM (P5) read/write.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes 8-bit grayscale data as P5 with maxval 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::Data(format!(
            "pgm buffer holds {} bytes, want {}x{}",
            data.len(),
            width,
            height
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(data);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a P5 file with maxval 255; returns (width, height, data).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Data(format!("{}: {msg}", path.display()));

    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data(format!(
                "{}: truncated header",
                path.display()
            )));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(bad("not a P5 file"));
    }
    let width: usize = token(&bytes)?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = token(&bytes)?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("unsupported maxval"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let expected = width * height;
    if bytes.len() < pos + expected {
        return Err(bad("truncated raster"));
    }
    Ok((width, height, bytes[pos..pos + expected].to_vec()))
}
