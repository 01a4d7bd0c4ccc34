//! Porosity extraction from optical-microscopy images: crop, Gaussian blur,
//! intensity threshold, pore-area ratio, and a pixel histogram for threshold
//! diagnosis.
//!
//! All operations are integer-in, integer-out with a specified rounding rule,
//! so results are bit-exact across platforms.

use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width * height != data.len() {
            return Err(Error::domain(format!(
                "pixel buffer length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage { width, height, data: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Converts an RGB buffer to luma with integer BT.601 weights.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::domain(format!(
                "rgb buffer length {} does not match {width}x{height}x3",
                rgb.len()
            )));
        }
        let data = rgb
            .chunks_exact(3)
            .map(|px| {
                let y = 299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32;
                ((y + 500) / 1000) as u8
            })
            .collect();
        Ok(GrayImage { width, height, data })
    }
}

/// Margins to remove from each edge, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropMargins {
    pub top: usize,
    pub right: usize,
    pub left: usize,
    pub bottom: usize,
}

impl Default for CropMargins {
    /// 50 px from top/right/left, 80 px from the bottom (the bottom carries a
    /// larger instrument frame).
    fn default() -> Self {
        CropMargins { top: 50, right: 50, left: 50, bottom: 80 }
    }
}

pub fn crop_margins(img: &GrayImage, margins: CropMargins) -> Result<GrayImage> {
    let CropMargins { top, right, left, bottom } = margins;
    if left + right >= img.width || top + bottom >= img.height {
        return Err(Error::domain(format!(
            "margins ({top},{right},{left},{bottom}) exceed image size {}x{}",
            img.width, img.height
        )));
    }
    let w = img.width - left - right;
    let h = img.height - top - bottom;
    let mut data = Vec::with_capacity(w * h);
    for y in top..top + h {
        let row = &img.data[y * img.width + left..y * img.width + left + w];
        data.extend_from_slice(row);
    }
    Ok(GrayImage { width: w, height: h, data })
}

/// Normalized 1-D Gaussian taps for an odd kernel size. A sigma of `None`
/// uses 0.3*((k-1)/2 - 1) + 0.8.
fn gaussian_taps(kernel_size: usize, sigma: Option<f64>) -> Result<Vec<f64>> {
    if kernel_size % 2 == 0 || kernel_size == 0 {
        return Err(Error::domain(format!(
            "blur kernel size must be odd and >= 1, got {kernel_size}"
        )));
    }
    let r = (kernel_size / 2) as isize;
    let sigma = sigma.unwrap_or(0.3 * (r as f64 - 1.0) + 0.8);
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("blur sigma must be positive, got {sigma}")));
    }
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    Ok(taps)
}

fn round_half_away(v: f64) -> u8 {
    let r = if v >= 0.0 { (v + 0.5).floor() } else { (v - 0.5).ceil() };
    r.clamp(0.0, 255.0) as u8
}

/// Separable Gaussian convolution with edge replication, re-quantized to
/// 8 bits by round-half-away-from-zero.
pub fn gaussian_blur(img: &GrayImage, kernel_size: usize, sigma: Option<f64>) -> Result<GrayImage> {
    let taps = gaussian_taps(kernel_size, sigma)?;
    let r = (kernel_size / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);

    // horizontal pass, kept in f64 until the final quantization
    let mut tmp = vec![0.0f64; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xs = (x + k as isize - r).clamp(0, w - 1);
                acc += t * img.data[(y * w + xs) as usize] as f64;
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut data = vec![0u8; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let ys = (y + k as isize - r).clamp(0, h - 1);
                acc += t * tmp[(ys * w + x) as usize];
            }
            data[(y * w + x) as usize] = round_half_away(acc);
        }
    }
    Ok(GrayImage { width: img.width, height: img.height, data })
}

/// Fraction of pixels strictly below `threshold` ("brightness below 75" is
/// implemented as `< 75`).
pub fn porosity_fraction(img: &GrayImage, threshold: u32) -> Result<f64> {
    if img.data.is_empty() {
        return Err(Error::domain("cannot compute porosity of an empty image"));
    }
    let pores = img.data.iter().filter(|&&v| (v as u32) < threshold).count();
    Ok(pores as f64 / img.data.len() as f64)
}

/// Exact 256-bin intensity counts.
pub fn pixel_histogram(img: &GrayImage) -> [u64; 256] {
    let mut bins = [0u64; 256];
    for &v in &img.data {
        bins[v as usize] += 1;
    }
    bins
}

/// The full extraction pipeline: crop, blur, threshold.
pub fn extract_porosity(
    img: &GrayImage,
    margins: CropMargins,
    kernel_size: usize,
    sigma: Option<f64>,
    threshold: u32,
) -> Result<f64> {
    let cropped = crop_margins(img, margins)?;
    let blurred = if kernel_size > 1 {
        gaussian_blur(&cropped, kernel_size, sigma)?
    } else {
        cropped
    };
    porosity_fraction(&blurred, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_default_margins() {
        let img = GrayImage::filled(200, 200, 128);
        let out = crop_margins(&img, CropMargins::default()).unwrap();
        assert_eq!((out.width(), out.height()), (100, 70));
    }

    #[test]
    fn crop_zero_margins_is_identity() {
        let img = GrayImage::new(7, 5, (0..35).collect()).unwrap();
        let m = CropMargins { top: 0, right: 0, left: 0, bottom: 0 };
        assert_eq!(crop_margins(&img, m).unwrap(), img);
    }

    #[test]
    fn crop_rejects_oversized_margins() {
        let img = GrayImage::filled(99, 99, 0);
        assert!(crop_margins(&img, CropMargins::default()).is_err());
    }

    #[test]
    fn crop_takes_the_right_window() {
        let img = GrayImage::new(4, 4, (0..16).collect()).unwrap();
        let m = CropMargins { top: 1, right: 1, left: 1, bottom: 1 };
        let out = crop_margins(&img, m).unwrap();
        assert_eq!(out.pixels(), &[5, 6, 9, 10]);
    }

    #[test]
    fn blur_constant_image_unchanged() {
        let img = GrayImage::filled(20, 20, 200);
        let out = gaussian_blur(&img, 5, None).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn blur_kernel_size_one_is_identity() {
        let img = GrayImage::new(6, 6, (0..36).map(|i| (i * 7) as u8).collect()).unwrap();
        assert_eq!(gaussian_blur(&img, 1, None).unwrap(), img);
    }

    #[test]
    fn blur_rejects_even_kernel() {
        let img = GrayImage::filled(10, 10, 0);
        assert!(gaussian_blur(&img, 4, None).is_err());
    }

    #[test]
    fn blur_single_bright_pixel_matches_direct_convolution_oracle() {
        let mut img = GrayImage::filled(15, 15, 0);
        img.set(7, 7, 255);
        let out = gaussian_blur(&img, 5, Some(1.1)).unwrap();

        // dense 2-D convolution, replicate padding
        let taps = gaussian_taps(5, Some(1.1)).unwrap();
        for y in 0..15usize {
            for x in 0..15usize {
                let mut acc = 0.0;
                for ky in 0..5usize {
                    for kx in 0..5usize {
                        let xs = (x as isize + kx as isize - 2).clamp(0, 14) as usize;
                        let ys = (y as isize + ky as isize - 2).clamp(0, 14) as usize;
                        acc += taps[ky] * taps[kx] * img.get(xs, ys) as f64;
                    }
                }
                assert_eq!(out.get(x, y), round_half_away(acc), "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn porosity_exact_counts() {
        assert_eq!(porosity_fraction(&GrayImage::filled(10, 10, 150), 75).unwrap(), 0.0);
        let mut img = GrayImage::filled(100, 100, 150);
        for i in 0..250usize {
            img.data[i * 3] = 20;
        }
        assert_eq!(porosity_fraction(&img, 75).unwrap(), 0.025);
        assert_eq!(porosity_fraction(&img, 256).unwrap(), 1.0);
    }

    #[test]
    fn porosity_monotone_in_threshold() {
        let img = GrayImage::new(16, 16, (0..256).map(|i| i as u8).collect()).unwrap();
        let mut prev = 0.0;
        for t in 0..=256 {
            let f = porosity_fraction(&img, t).unwrap();
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn histogram_matches_counting_oracle() {
        let data: Vec<u8> = (0..1000).map(|i| ((i * 2654435761u64) % 256) as u8).collect();
        let img = GrayImage::new(40, 25, data.clone()).unwrap();
        let bins = pixel_histogram(&img);
        assert_eq!(bins.iter().sum::<u64>(), 1000);
        let mut oracle = [0u64; 256];
        for v in data {
            oracle[v as usize] += 1;
        }
        assert_eq!(bins, oracle);
    }

    #[test]
    fn histogram_single_value() {
        let bins = pixel_histogram(&GrayImage::filled(8, 8, 42));
        assert_eq!(bins[42], 64);
        assert_eq!(bins.iter().sum::<u64>(), 64);
    }

    #[test]
    fn luma_conversion_is_deterministic() {
        let rgb = vec![255, 0, 0, 0, 255, 0, 0, 0, 255, 128, 128, 128];
        let img = GrayImage::from_rgb(2, 2, &rgb).unwrap();
        assert_eq!(img.pixels(), &[76, 150, 29, 128]);
    }
}
