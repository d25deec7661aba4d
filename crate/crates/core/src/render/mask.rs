use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::PartId;

/// Row-major grid of part label codes (0..=3).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

/// False colors used for inspection PNGs, indexed by label code.
pub const PALETTE: [[u8; 3]; 4] = [[0, 0, 0], [60, 110, 220], [240, 200, 40], [230, 40, 60]];

impl LabelMask {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMask {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::MaskSize(width, height, labels.len(), 1));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 3) {
            return Err(Error::InvalidLabel(bad));
        }
        Ok(LabelMask {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.labels[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, label: PartId) {
        self.labels[v * self.width + u] = label.code();
    }

    pub fn count(&self, label: PartId) -> usize {
        let c = label.code();
        self.labels.iter().filter(|&&l| l == c).count()
    }

    /// Sorted distinct label codes present.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 4];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..4u8).filter(|&l| seen[l as usize]).collect()
    }

    pub fn same_size(&self, other: &LabelMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::MaskSize(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Nearest-neighbor upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> LabelMask {
        assert!(factor >= 1);
        if factor == 1 {
            return self.clone();
        }
        let w = self.width * factor;
        let mut labels = vec![0u8; w * self.height * factor];
        for (v, src) in self.labels.chunks_exact(self.width.max(1)).enumerate() {
            let first = v * factor * w;
            let row = &mut labels[first..first + w];
            if factor == 2 {
                for (d, &l) in row.chunks_exact_mut(2).zip(src) {
                    d[0] = l;
                    d[1] = l;
                }
            } else {
                for (d, &l) in row.chunks_exact_mut(factor).zip(src) {
                    d.fill(l);
                }
            }
            for k in 1..factor {
                labels.copy_within(first..first + w, first + k * w);
            }
        }
        LabelMask {
            width: w,
            height: self.height * factor,
            labels,
        }
    }

    /// Binary PGM (P5), maxval 255, pixel values are the label codes.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let (w, h, maxval, payload) = parse_pnm_header(bytes, b"P5")?;
        if maxval > 255 {
            return Err(Error::Dataset("16-bit PGM not supported".into()));
        }
        if payload.len() < w * h {
            return Err(Error::Dataset(format!(
                "PGM payload {} < {}",
                payload.len(),
                w * h
            )));
        }
        LabelMask::from_labels(w, h, payload[..w * h].to_vec())
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_pgm())
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgm(&bytes)
    }

    pub fn write_false_color_png(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in img.pixels_mut().enumerate() {
            *px = image::Rgb(PALETTE[self.labels[i] as usize]);
        }
        img.save(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Parses a binary PNM header, returning (width, height, maxval, payload).
pub(crate) fn parse_pnm_header<'a>(
    bytes: &'a [u8],
    magic: &[u8],
) -> Result<(usize, usize, usize, &'a [u8])> {
    if !bytes.starts_with(magic) {
        return Err(Error::Dataset(format!(
            "expected {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Dataset("malformed PNM header".into()))?;
    }
    // exactly one whitespace byte separates header and payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Dataset("malformed PNM header".into()));
    }
    Ok((fields[0], fields[1], fields[2], &bytes[pos + 1..]))
}
