//! 8-bit binary PGM (P5) / PPM (P6) encoding and decoding, plus the image
//! manifest that maps row ids to files and subgroup labels.

use std::path::{Path, PathBuf};

use super::{ImageTensor, VisionError};

/// Binary PPM from interleaved RGB bytes.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "rgb buffer size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Binary PGM from grayscale bytes.
pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height, "gray buffer size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grayscale PGM of a [0, 1] plane.
pub fn plane_to_pgm(width: usize, height: usize, plane: &[f64]) -> Vec<u8> {
    let bytes: Vec<u8> = plane.iter().map(|&v| to_byte(v)).collect();
    encode_pgm(width, height, &bytes)
}

/// PGM for 1-channel images, PPM for 3-channel images.
pub fn encode_image(img: &ImageTensor) -> Result<Vec<u8>, VisionError> {
    let (h, w) = (img.height(), img.width());
    match img.channels() {
        1 => Ok(plane_to_pgm(w, h, img.data())),
        3 => {
            let mut rgb = Vec::with_capacity(h * w * 3);
            for p in 0..h * w {
                for c in 0..3 {
                    rgb.push(to_byte(img.data()[c * h * w + p]));
                }
            }
            Ok(encode_ppm(w, h, &rgb))
        }
        c => Err(VisionError::Shape(format!("cannot encode {c}-channel image"))),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize, VisionError> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| VisionError::Image(format!("expected a number at byte {start}")))
    }
}

/// Decodes an 8-bit binary PGM or PPM into [0, 1] values.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageTensor, VisionError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(VisionError::Image("not a binary PGM/PPM (P5/P6)".into())),
    };
    let mut hdr = Header { bytes, pos: 2 };
    let width = hdr.number()?;
    let height = hdr.number()?;
    let maxval = hdr.number()?;
    if width == 0 || height == 0 {
        return Err(VisionError::Image("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(VisionError::Image(format!("unsupported maxval {maxval} (8-bit only)")));
    }
    // exactly one whitespace byte separates header and raster
    let start = hdr.pos + 1;
    let n = width * height * channels;
    let raster = bytes
        .get(start..start + n)
        .ok_or_else(|| VisionError::Image(format!("raster truncated: need {n} bytes")))?;
    let mut data = vec![0.0; n];
    for p in 0..width * height {
        for c in 0..channels {
            data[c * width * height + p] = f64::from(raster[p * channels + c]) / maxval as f64;
        }
    }
    ImageTensor::new(channels, height, width, data)
}

pub fn read_image(path: &Path) -> Result<ImageTensor, VisionError> {
    let bytes = std::fs::read(path).map_err(|source| VisionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_pnm(&bytes).map_err(|e| VisionError::Image(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub row_id: String,
    pub path: PathBuf,
    pub young: u8,
    pub male: u8,
    pub attractive: u8,
}

/// Parses `row_id,path,Young,Male,Attractive` CSV (header required, labels
/// 0/1 or -1/1). Relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, VisionError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| VisionError::Empty("manifest has no header".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| VisionError::Image(format!("manifest lacks column {name}")))
    };
    let (ci, cp, cy, cm, ca) = (col("row_id")?, col("path")?, col("Young")?, col("Male")?, col("Attractive")?);
    let label = |v: &str, line: usize| match v.trim() {
        "1" => Ok(1),
        "0" | "-1" => Ok(0),
        other => Err(VisionError::Image(format!("manifest line {line}: bad label {other:?}"))),
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(VisionError::Image(format!("manifest line {}: wrong field count", i + 2)));
            }
            let p = Path::new(f[cp].trim());
            Ok(ManifestEntry {
                row_id: f[ci].trim().to_string(),
                path: if p.is_absolute() { p.to_path_buf() } else { base.join(p) },
                young: label(f[cy], i + 2)?,
                male: label(f[cm], i + 2)?,
                attractive: label(f[ca], i + 2)?,
            })
        })
        .collect()
}

pub fn manifest_to_csv(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("row_id,path,Young,Male,Attractive\n");
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.row_id,
            e.path.display(),
            e.young,
            e.male,
            e.attractive
        ));
    }
    out
}
