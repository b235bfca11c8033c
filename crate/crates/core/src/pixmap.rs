//! Minimal RGB image buffer with a binary PPM (P6) encoder, enough to
//! render heatmaps and histogram charts without an image dependency.

use std::io;
use std::path::Path;

use crate::fsutil::atomic_write;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pixmap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Pixmap {
    /// A white image of the given dimensions (both must be positive).
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "pixmap dimensions must be positive");
        Pixmap { width, height, data: vec![255; width * height * 3] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sets one pixel; `(0, 0)` is the top-left corner.
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Binary PPM encoding (magic `P6`, max value 255).
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> io::Result<()> {
        atomic_write(path.as_ref(), &self.encode_ppm())
    }
}

/// Maps a value in `[0, 1]` onto a blue-to-red ramp (low values cold,
/// high values warm). Out-of-range inputs are clamped.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.5 } else { t.clamp(0.0, 1.0) };
    let r = (255.0 * t).round() as u8;
    [r, 0, 255 - r]
}

/// Renders counts as a bar chart: one `bar_width`-pixel column per
/// bin, bars bottom-aligned and scaled to the tallest bin.
pub fn bar_chart(counts: &[u64], bar_width: usize, height: usize) -> Pixmap {
    assert!(bar_width > 0 && height > 0, "bar chart dimensions must be positive");
    let width = counts.len().max(1) * bar_width;
    let mut img = Pixmap::new(width, height);
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return img;
    }
    for (i, &count) in counts.iter().enumerate() {
        let bar = ((count as f64 / max as f64) * height as f64).round() as usize;
        for y in (height - bar)..height {
            for x in 0..bar_width {
                img.set(i * bar_width + x, y, [54, 92, 141]);
            }
        }
    }
    img
}
