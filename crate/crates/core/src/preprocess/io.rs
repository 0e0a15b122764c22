//! Image file formats: binary PGM (P5), headerless CSV, and the JSON sidecar
//! carrying trace spacing and the declared value range.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BScanImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub col_spacing_cm: f64,
    pub vmin: f64,
    pub vmax: f64,
}

impl Sidecar {
    pub fn of(img: &BScanImage) -> Self {
        let (vmin, vmax) = img.value_range();
        Self {
            col_spacing_cm: img.col_spacing_cm(),
            vmin,
            vmax,
        }
    }

    /// `road.pgm` -> `road.json`.
    pub fn path_for(image_path: &Path) -> PathBuf {
        image_path.with_extension("json")
    }

    pub fn read(path: &Path) -> Result<Option<Self>> {
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn apply(&self, img: &mut BScanImage) -> Result<()> {
        img.set_col_spacing_cm(self.col_spacing_cm)?;
        img.set_value_range(self.vmin, self.vmax)
    }
}

/// Writes a P5 PGM with `bits` = 8 or 16. Values are mapped linearly from the
/// image's declared value range onto `[0, maxval]`, clamping outliers.
pub fn write_pgm(path: &Path, img: &BScanImage, bits: u8) -> Result<()> {
    let maxval: u32 = match bits {
        8 => 255,
        16 => 65535,
        _ => {
            return Err(Error::param(format!(
                "PGM depth must be 8 or 16, got {bits}"
            )))
        }
    };
    let (vmin, vmax) = img.value_range();
    let span = vmax - vmin;
    let quantize = |v: f64| -> u32 {
        if span <= 0.0 {
            return 0;
        }
        (((v - vmin) / span).clamp(0.0, 1.0) * maxval as f64).round() as u32
    };
    let mut buf = format!("P5\n{} {}\n{}\n", img.cols(), img.rows(), maxval).into_bytes();
    for &v in img.data() {
        let q = quantize(v);
        if bits == 8 {
            buf.push(q as u8);
        } else {
            buf.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a P5 PGM. Without a range the stored integers are returned as-is;
/// with `range = (vmin, vmax)` they are mapped back linearly.
pub fn read_pgm(path: &Path, range: Option<(f64, f64)>) -> Result<BScanImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, offset) = parse_pgm_header(&bytes)?;
    let [cols, rows, maxval] = header;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::data(format!("bad PGM maxval {maxval}")));
    }
    let width = if maxval < 256 { 1 } else { 2 };
    let body = &bytes[offset..];
    if body.len() < rows * cols * width {
        return Err(Error::data(format!(
            "PGM body truncated: {} bytes for {cols}x{rows}",
            body.len()
        )));
    }
    let raw = (0..rows * cols).map(|i| {
        if width == 1 {
            body[i] as f64
        } else {
            u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as f64
        }
    });
    let data: Vec<f64> = match range {
        Some((vmin, vmax)) => raw
            .map(|q| vmin + q / maxval as f64 * (vmax - vmin))
            .collect(),
        None => raw.collect(),
    };
    let mut img = BScanImage::new(rows, cols, data)?;
    if let Some((vmin, vmax)) = range {
        img.set_value_range(vmin, vmax)?;
    }
    Ok(img)
}

fn parse_pgm_header(bytes: &[u8]) -> Result<([usize; 3], usize)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::data("not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
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
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::data("malformed PGM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::data("malformed PGM header"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::data("malformed PGM header"));
    }
    Ok((fields, pos + 1))
}

/// One image row per line, comma separated, no header.
pub fn write_csv(path: &Path, img: &BScanImage) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for r in 0..img.rows() {
        w.write_record(img.row(r).iter().map(|v| format!("{v:?}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<BScanImage> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::data(format!("bad number {s:?} in {}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    BScanImage::from_rows(&rows)
}

/// Loads `.pgm` or `.csv` by extension, applying the sidecar if one exists.
pub fn load_image(path: &Path) -> Result<BScanImage> {
    let sidecar = Sidecar::read(&Sidecar::path_for(path))?;
    let mut img = match extension(path).as_deref() {
        Some("pgm") => read_pgm(path, sidecar.map(|s| (s.vmin, s.vmax)))?,
        Some("csv") => read_csv(path)?,
        _ => {
            return Err(Error::param(format!(
                "unsupported image format: {}",
                path.display()
            )))
        }
    };
    if let Some(s) = sidecar {
        s.apply(&mut img)?;
    }
    Ok(img)
}

/// Saves `.pgm` (16-bit) or `.csv` by extension and writes the sidecar next to it.
pub fn save_image(path: &Path, img: &BScanImage) -> Result<()> {
    match extension(path).as_deref() {
        Some("pgm") => write_pgm(path, img, 16)?,
        Some("csv") => write_csv(path, img)?,
        _ => {
            return Err(Error::param(format!(
                "unsupported image format: {}",
                path.display()
            )))
        }
    }
    Sidecar::of(img).write(&Sidecar::path_for(path))
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BScanImage {
        BScanImage::from_rows(&[vec![0.0, 0.5, 1.0], vec![-1.0, 0.25, 0.75]]).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.csv");
        let mut img = sample();
        img.set_col_spacing_cm(0.5).unwrap();
        save_image(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        for bits in [8u8, 16] {
            let path = dir.path().join(format!("img{bits}.pgm"));
            let img = sample();
            write_pgm(&path, &img, bits).unwrap();
            let back = read_pgm(&path, Some(img.value_range())).unwrap();
            let step = 2.0 / if bits == 8 { 255.0 } else { 65535.0 };
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= step / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn pgm_header_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 1]);
        fs::write(&path, bytes).unwrap();
        let img = read_pgm(&path, None).unwrap();
        assert_eq!(img.data(), &[0.0, 255.0, 128.0, 1.0]);
    }

    #[test]
    fn rejects_non_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        fs::write(&path, b"P2\n2 2\n255\n0 0 0 0").unwrap();
        assert!(matches!(read_pgm(&path, None), Err(Error::InvalidData(_))));
    }
}
