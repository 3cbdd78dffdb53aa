//! 8-bit grayscale images and the binary PGM (P5) codec.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Smallest side accepted for training inputs.
pub const MIN_TRAIN_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSample {
    pub id: String,
    width: usize,
    height: usize,
    /// Row-major, `height * width` values.
    pixels: Vec<u8>,
    pub label: Option<usize>,
}

impl ImageSample {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        label: Option<usize>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::input("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::input(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            pixels,
            label,
        })
    }

    /// Builds from a list of rows.
    pub fn from_rows(id: impl Into<String>, rows: &[&[u8]], label: Option<usize>) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::input("ragged rows"));
        }
        Self::new(id, width, rows.len(), rows.concat(), label)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Same id and label, new pixel grid.
    pub fn with_pixels(&self, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        Self::new(self.id.clone(), width, height, pixels, self.label)
    }

    /// Training inputs must be at least 8×8.
    pub fn check_trainable(&self) -> Result<()> {
        if self.width < MIN_TRAIN_SIDE || self.height < MIN_TRAIN_SIDE {
            return Err(Error::input(format!(
                "image `{}` is {}x{}; training inputs must be at least {MIN_TRAIN_SIDE}x{MIN_TRAIN_SIDE}",
                self.id, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Nearest-neighbour resize.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                out.push(self.get(x * self.width / width, sy));
            }
        }
        self.with_pixels(width, height, out)
    }

    /// Intensities scaled to `[0, 1]`.
    pub fn to_unit_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| p as f32 / 255.0).collect()
    }
}

/// Encodes as binary PGM with maxval 255.
pub fn encode_pgm(sample: &ImageSample) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", sample.width, sample.height).into_bytes();
    out.extend_from_slice(&sample.pixels);
    out
}

pub fn save_pgm(sample: &ImageSample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(sample)).map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: impl AsRef<Path>, id: impl Into<String>, label: Option<usize>) -> Result<ImageSample> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, id, label)
}

/// Decodes a binary PGM. Only `P5` with maxval 255 is accepted.
pub fn decode_pgm(bytes: &[u8], id: impl Into<String>, label: Option<usize>) -> Result<ImageSample> {
    let parse_err = |offset: usize, message: &str| Error::Parse {
        offset,
        message: message.to_string(),
    };
    if bytes.len() < 2 {
        return Err(parse_err(0, "file too short for a PGM header"));
    }
    match &bytes[..2] {
        b"P5" => {}
        b"P2" => return Err(Error::UnsupportedFormat("ASCII PGM (P2); only binary P5 is supported".into())),
        m if m[0] == b'P' => {
            return Err(Error::UnsupportedFormat(format!(
                "Netpbm variant `{}`; only binary P5 is supported",
                String::from_utf8_lossy(m)
            )))
        }
        _ => return Err(parse_err(0, "missing P5 magic")),
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(parse_err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][i];
            return Err(parse_err(start, &format!("expected {what}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, "number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}; only 255 is supported")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(parse_err(pos, "expected whitespace after maxval"));
    }
    pos += 1;
    if width == 0 || height == 0 {
        return Err(parse_err(pos, "zero image dimension"));
    }
    let need = width
        .checked_mul(height)
        .ok_or_else(|| parse_err(pos, "image dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(parse_err(
            bytes.len(),
            &format!("truncated payload: need {need} bytes, found {}", payload.len()),
        ));
    }
    ImageSample::new(id, width, height, payload[..need].to_vec(), label)
}
