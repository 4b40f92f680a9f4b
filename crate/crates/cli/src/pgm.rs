//! 16-bit binary PGM (P5) images with a fixed display window.

use std::io::Write;

/// Linear display window; values are clamped into `[min, max]` and mapped
/// onto `0..=65535`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn level(&self, v: f64) -> u16 {
        let span = self.max - self.min;
        if !(span > 0.0) || !v.is_finite() {
            return 0;
        }
        let t = ((v - self.min) / span).clamp(0.0, 1.0);
        (t * 65535.0).round() as u16
    }
}

/// Encodes a `rows × cols` image (row-major) as P5 with maxval 65535 and
/// big-endian samples. `comment` lines land in the header after `#`.
pub fn encode(rows: usize, cols: usize, values: &[f64], window: Window, comments: &[String]) -> Vec<u8> {
    assert_eq!(values.len(), rows * cols, "image size mismatch");
    let mut out = Vec::with_capacity(64 + 2 * values.len());
    out.extend_from_slice(b"P5\n");
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = write!(out, "{cols} {rows}\n65535\n");
    for &v in values {
        out.extend_from_slice(&window.level(v).to_be_bytes());
    }
    out
}

/// Text sidecar recording the window of an image.
pub fn sidecar(window: Window, quantity: &str, config_hash: &str) -> String {
    format!(
        "quantity {quantity}\nmin {:e}\nmax {:e}\nlevels 0 65535\nconfig_hash {config_hash}\n",
        window.min, window.max
    )
}

/// Parses a P5 image back into `(cols, rows, samples)`. Test helper for
/// golden comparisons.
pub fn decode(bytes: &[u8]) -> Option<(usize, usize, Vec<u16>)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if bytes.get(i) == Some(&b'#') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).ok()?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "65535" {
        return None;
    }
    let cols: usize = fields[1].parse().ok()?;
    let rows: usize = fields[2].parse().ok()?;
    let body = &bytes[i + 1..];
    if body.len() != 2 * rows * cols {
        return None;
    }
    Some((cols, rows, body.chunks(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()))
}
