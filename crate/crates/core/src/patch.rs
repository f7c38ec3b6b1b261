//! Fixed-size patch tiling of a focus region.

use alloc::vec::Vec;

/// Interleaved 8-bit RGB image, row-major (`height × width × 3`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn crop(&self, x0: u32, y0: u32, size: u32) -> RgbImage {
        let mut data = Vec::with_capacity(size as usize * size as usize * 3);
        for y in y0..y0 + size {
            let start = (y as usize * self.width as usize + x0 as usize) * 3;
            data.extend_from_slice(&self.data[start..start + size as usize * 3]);
        }
        RgbImage {
            width: size,
            height: size,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn full(image: &RgbImage) -> Rect {
        Rect {
            x: 0,
            y: 0,
            width: image.width,
            height: image.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatchError {
    #[error("focus region {region:?} exceeds the {width}x{height} image")]
    RegionOutOfBounds { region: Rect, width: u32, height: u32 },
    #[error("patch size must be at least 1")]
    ZeroPatchSize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub image: RgbImage,
    /// Top-left corner in source-image coordinates.
    pub origin: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchExtraction {
    pub patches: Vec<Patch>,
    /// Set when the region is smaller than one patch.
    pub region_too_small: bool,
}

/// Tiles `region` with non-overlapping `patch_size` squares anchored at its
/// top-left corner. Partial cells at the right and bottom borders are dropped.
/// Patches are emitted row by row.
pub fn extract_patches(
    image: &RgbImage,
    patch_size: u32,
    region: Rect,
) -> Result<PatchExtraction, PatchError> {
    if patch_size == 0 {
        return Err(PatchError::ZeroPatchSize);
    }
    let fits = region.x.checked_add(region.width).is_some_and(|r| r <= image.width)
        && region.y.checked_add(region.height).is_some_and(|b| b <= image.height);
    if !fits {
        return Err(PatchError::RegionOutOfBounds {
            region,
            width: image.width,
            height: image.height,
        });
    }
    let cols = region.width / patch_size;
    let rows = region.height / patch_size;
    let mut patches = Vec::with_capacity((cols * rows) as usize);
    for row in 0..rows {
        for col in 0..cols {
            let x = region.x + col * patch_size;
            let y = region.y + row * patch_size;
            patches.push(Patch {
                image: image.crop(x, y, patch_size),
                origin: (x, y),
            });
        }
    }
    Ok(PatchExtraction {
        region_too_small: patches.is_empty(),
        patches,
    })
}
