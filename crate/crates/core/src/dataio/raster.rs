use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat, ImageReader};

use super::DataError;

/// 8-bit grayscale or RGB pixel grid, row-major, interleaved channels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::InvalidDimensions { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(DataError::UnsupportedChannels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(DataError::BufferLength { expected, actual: data.len() });
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, DataError> {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; len])
    }

    /// Single-channel image from a per-pixel function.
    pub fn gray_from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> u8,
    ) -> Result<Self, DataError> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn is_gray(&self) -> bool {
        self.channels == 1
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    /// Sample `c` of pixel `(x, y)`.
    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.offset(x, y) + c as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u8, v: u8) {
        let o = self.offset(x, y) + c as usize;
        self.data[o] = v;
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels as usize]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let o = self.offset(x, y);
        let c = self.channels as usize;
        &mut self.data[o..o + c]
    }

    /// Rec. 601 luma, rounded half up. Grayscale images are returned as-is.
    pub fn to_luma(&self) -> RasterImage {
        if self.is_gray() {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| {
                let y = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
                ((y + 500) / 1000) as u8
            })
            .collect();
        RasterImage { width: self.width, height: self.height, channels: 1, data }
    }

    /// Luma samples as floating point (unrounded for RGB inputs).
    pub fn luma_f64(&self) -> Vec<f64> {
        if self.is_gray() {
            return self.data.iter().map(|&v| v as f64).collect();
        }
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub(crate) fn from_dynamic(img: DynamicImage) -> Result<Self, DataError> {
        let (w, h) = (img.width(), img.height());
        match img.color() {
            ColorType::L8 => Self::new(w, h, 1, img.into_luma8().into_raw()),
            ColorType::La8 => Self::new(w, h, 1, img.into_luma8().into_raw()),
            ColorType::Rgb8 => Self::new(w, h, 3, img.into_rgb8().into_raw()),
            ColorType::Rgba8 => Self::new(w, h, 3, img.into_rgb8().into_raw()),
            other => Err(DataError::UnsupportedBitDepth(format!("{other:?}"))),
        }
    }

    pub(crate) fn to_dynamic(&self) -> DynamicImage {
        if self.is_gray() {
            DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(self.width, self.height, self.data.clone())
                    .expect("validated buffer"),
            )
        } else {
            DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(self.width, self.height, self.data.clone())
                    .expect("validated buffer"),
            )
        }
    }

    /// Encode as PNG bytes.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, DataError> {
        let mut buf = Cursor::new(Vec::new());
        self.to_dynamic()
            .write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| DataError::Encode(e.to_string()))?;
        Ok(buf.into_inner())
    }

    /// Decode PNG or JPEG bytes.
    pub fn from_encoded_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        let reader = ImageReader::new(Cursor::new(bytes))
            .with_guessed_format()
            .map_err(|e| DataError::Undecodable(e.to_string()))?;
        decode_reader(reader)
    }
}

fn decode_reader<R: std::io::BufRead + std::io::Seek>(
    reader: ImageReader<R>,
) -> Result<RasterImage, DataError> {
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        Some(other) => return Err(DataError::Undecodable(format!("unsupported format {other:?}"))),
        None => return Err(DataError::Undecodable("unrecognized image signature".into())),
    }
    let img = reader.decode().map_err(|e| DataError::Undecodable(e.to_string()))?;
    RasterImage::from_dynamic(img)
}

/// Decode a PNG or JPEG file. 16-bit and float inputs are rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    RasterImage::from_encoded_bytes(&bytes)
}

/// Write an image as PNG.
pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let bytes = img.to_png_bytes()?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            RasterImage::new(0, 3, 1, vec![]),
            Err(DataError::InvalidDimensions { .. })
        ));
        assert!(matches!(RasterImage::new(2, 2, 2, vec![0; 8]), Err(DataError::UnsupportedChannels(2))));
        assert!(matches!(RasterImage::new(2, 2, 3, vec![0; 11]), Err(DataError::BufferLength { .. })));
    }

    #[test]
    fn black_png_decodes_to_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("black.png");
        image::RgbImage::new(4, 4).save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.dimensions(), (4, 4));
        assert_eq!(img.channels(), 3);
        assert!(img.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn truncated_file_is_undecodable() {
        let img = RasterImage::filled(8, 8, 1, 7).unwrap();
        let bytes = img.to_png_bytes().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cut.png");
        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&p), Err(DataError::Undecodable(_))));
    }

    #[test]
    fn missing_file_is_not_found() {
        assert!(matches!(load_image("/nonexistent/nope.png"), Err(DataError::NotFound(_))));
    }

    #[test]
    fn sixteen_bit_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let deep: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_pixel(3, 3, image::Luma([1000u16]));
        deep.save(&p).unwrap();
        assert!(matches!(load_image(&p), Err(DataError::UnsupportedBitDepth(_))));
    }

    #[test]
    fn png_roundtrip_matches_reference_codec() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ref.png");
        let reference = image::RgbImage::from_fn(7, 5, |x, y| image::Rgb([x as u8 * 30, y as u8 * 40, 9]));
        reference.save(&p).unwrap();
        let loaded = load_image(&p).unwrap();
        assert_eq!(loaded.data(), reference.as_raw().as_slice());
        let q = dir.path().join("again.png");
        save_image(&loaded, &q).unwrap();
        let reloaded = image::open(&q).unwrap().into_rgb8();
        assert_eq!(reloaded.as_raw(), reference.as_raw());
        assert_eq!(load_image(&q).unwrap(), loaded);
    }

    #[test]
    fn luma_of_gray_pixel_is_exact() {
        let img = RasterImage::new(1, 1, 3, vec![90, 90, 90]).unwrap();
        assert_eq!(img.to_luma().data(), &[90]);
    }
}
