//! Planar float images as consumed by the networks.

use alloc::vec::Vec;

use crate::patch::RgbImage;

/// Channel-planar (`C × H × W`) image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == channels * height * width).then_some(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_rgb(rgb: &RgbImage) -> Self {
        let (w, h) = (rgb.width as usize, rgb.height as usize);
        let mut data = alloc::vec![0.0; 3 * w * h];
        for (i, px) in rgb.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = px[c] as f32 / 255.0;
            }
        }
        Image {
            channels: 3,
            height: h,
            width: w,
            data,
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        let (w, h) = (self.width, self.height);
        let mut data = Vec::with_capacity(3 * w * h);
        for i in 0..w * h {
            for c in 0..3.min(self.channels) {
                let v = self.data[c * w * h + i].clamp(0.0, 1.0);
                data.push(libm::roundf(v * 255.0) as u8);
            }
        }
        RgbImage::new(w as u32, h as u32, data).expect("three channels")
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }
}
