//! 8-bit RGB rasters. PNG decoding/encoding and resampling go through the
//! `image` crate; everything else is plain slice arithmetic.

use std::path::Path;

use image::{imageops, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Row-major interleaved RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&fill);
        }
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::shape(
                "raster",
                format!("{} bytes for {width}x{height}x3", data.len()),
            ));
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&px);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_image(img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn from_image(img: RgbImage) -> Self {
        let (width, height) = img.dimensions();
        Raster {
            width,
            height,
            data: img.into_raw(),
        }
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("raster buffer length matches dimensions")
    }

    /// Bilinear resample to `width x height`.
    pub fn resize(&self, width: u32, height: u32) -> Raster {
        if width == self.width && height == self.height {
            return self.clone();
        }
        Self::from_image(imageops::resize(
            &self.to_image(),
            width,
            height,
            imageops::FilterType::Triangle,
        ))
    }

    /// Copies the window `[x, x + w) x [y, y + h)`, which must lie inside the raster.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Raster {
        assert!(x + w <= self.width && y + h <= self.height, "crop outside raster");
        let mut out = Vec::with_capacity(w as usize * h as usize * 3);
        for row in y..y + h {
            let start = self.offset(x, row);
            out.extend_from_slice(&self.data[start..start + w as usize * 3]);
        }
        Raster {
            width: w,
            height: h,
            data: out,
        }
    }

    /// Pastes `src` with its top-left corner at `(x, y)`; out-of-bounds parts are dropped.
    pub fn paste(&mut self, src: &Raster, x: u32, y: u32) {
        for sy in 0..src.height {
            let ty = y + sy;
            if ty >= self.height {
                break;
            }
            let w = src.width.min(self.width.saturating_sub(x));
            if w == 0 {
                return;
            }
            let s = src.offset(0, sy);
            let t = self.offset(x, ty);
            self.data[t..t + w as usize * 3].copy_from_slice(&src.data[s..s + w as usize * 3]);
        }
    }

    /// One-pixel rectangle outline, used for visual QA overlays.
    pub fn draw_box(&mut self, b: &BBox, color: [u8; 3]) {
        if self.width == 0 || self.height == 0 {
            return;
        }
        let clip = |v: f64, hi: u32| (v.round().max(0.0) as u32).min(hi - 1);
        let (x0, x1) = (clip(b.xmin, self.width), clip(b.xmax, self.width));
        let (y0, y1) = (clip(b.ymin, self.height), clip(b.ymax, self.height));
        for x in x0..=x1 {
            self.put(x, y0, color);
            self.put(x, y1, color);
        }
        for y in y0..=y1 {
            self.put(x0, y, color);
            self.put(x1, y, color);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_paste_round_trip() {
        let mut r = Raster::new(8, 6, [0, 0, 0]);
        for y in 0..6 {
            for x in 0..8 {
                r.put(x, y, [x as u8, y as u8, 7]);
            }
        }
        let c = r.crop(2, 1, 3, 4);
        assert_eq!(c.get(0, 0), [2, 1, 7]);
        assert_eq!(c.get(2, 3), [4, 4, 7]);
        let mut blank = Raster::new(8, 6, [0, 0, 0]);
        blank.paste(&c, 2, 1);
        assert_eq!(blank.get(4, 4), r.get(4, 4));
        assert_eq!(blank.get(0, 0), [0, 0, 0]);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let mut r = Raster::new(5, 4, [10, 20, 30]);
        r.put(1, 2, [255, 0, 128]);
        r.save_png(&path).unwrap();
        assert_eq!(Raster::load(&path).unwrap(), r);
    }

    #[test]
    fn from_raw_checks_length() {
        assert!(Raster::from_raw(2, 2, vec![0; 11]).is_err());
    }
}
