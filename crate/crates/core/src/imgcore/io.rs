//! Two on-disk formats:
//!
//! * `LPIMG001` float container: 8 magic bytes, `u32` height, `u32` width
//!   (little-endian), then `height * width` little-endian `f32` samples,
//!   row-major. Lossless for `f32` values, including values outside [0, 1].
//! * binary PGM (`P5`, maxval <= 255) for 8-bit visualization. Samples are
//!   clamped to [0, 1] on export.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

pub const LIMG_MAGIC: &[u8; 8] = b"LPIMG001";

/// Reads either supported format, dispatching on the leading magic bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path.as_ref())?;
    decode_image(&bytes)
}

/// Writes `.pgm` files as 8-bit PGM and everything else as the float container.
pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    atomic_write(path, &encode_for_path(path, image))
}

pub(crate) fn encode_for_path(path: &Path, image: &Image) -> Vec<u8> {
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        encode_pgm(image)
    } else {
        encode_limg(image)
    }
}

pub(crate) fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.is_empty() {
        return Err(Error::MalformedImage("empty file".into()));
    }
    if bytes.starts_with(LIMG_MAGIC) {
        decode_limg(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else {
        Err(Error::UnsupportedFormat)
    }
}

pub fn read_limg(path: impl AsRef<Path>) -> Result<Image> {
    decode_limg(&fs::read(path.as_ref())?)
}

pub fn write_limg(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    atomic_write(path.as_ref(), &encode_limg(image))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    decode_pgm(&fs::read(path.as_ref())?)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    atomic_write(path.as_ref(), &encode_pgm(image))
}

pub(crate) fn encode_limg(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * image.len());
    out.extend_from_slice(LIMG_MAGIC);
    out.extend_from_slice(&(image.height() as u32).to_le_bytes());
    out.extend_from_slice(&(image.width() as u32).to_le_bytes());
    for &x in image.as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub(crate) fn decode_limg(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 16 || !bytes.starts_with(LIMG_MAGIC) {
        return Err(Error::MalformedImage("truncated LPIMG001 header".into()));
    }
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MalformedImage("dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(Error::MalformedImage(format!(
            "{height}x{width} image needs {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Image::from_vec(height, width, data).map_err(|e| Error::MalformedImage(e.to_string()))
}

fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .as_slice()
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and '#' comments may separate header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedImage("bad PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::MalformedImage("bad PGM header number".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::MalformedImage(format!(
            "only 8-bit PGM supported (maxval {maxval})"
        )));
    }
    // exactly one whitespace byte ends the header
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::MalformedImage("bad PGM header terminator".into()));
    }
    let body = &bytes[pos + 1..];
    if body.len() != width * height {
        return Err(Error::MalformedImage(format!(
            "{width}x{height} PGM needs {} bytes, found {}",
            width * height,
            body.len()
        )));
    }
    let scale = maxval as f64;
    let data = body.iter().map(|&b| b as f64 / scale).collect();
    Image::from_vec(height, width, data).map_err(|e| Error::MalformedImage(e.to_string()))
}

/// Writes to a temporary file in the destination directory, then renames.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write_all(&[(path, bytes)])
}

/// Stages every file in a temporary sibling and renames only once all of
/// them were written, so a failure leaves none of the targets touched.
pub(crate) fn atomic_write_all(files: &[(&Path, &[u8])]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = staging_builder().tempfile_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, *path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    }
    Ok(())
}

/// Temp files default to mode 0600; outputs should get the usual 0666 minus
/// umask, as a plain `File::create` would.
fn staging_builder() -> tempfile::Builder<'static, 'static> {
    let mut b = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        b.permissions(std::fs::Permissions::from_mode(0o666));
    }
    b
}
