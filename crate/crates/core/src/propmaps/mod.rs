//! Intrinsic property maps of an aligned frame: illuminant, saliency and
//! depth.

pub mod color;
pub mod depth;
pub mod illuminant;
pub mod saliency;
pub mod superpixel;

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::model::PropertyKind;
use crate::preprocess::Frame;
use crate::raster::Raster;

pub use depth::{DepthMode, DepthProviderConfig};
pub use illuminant::IlluminantParams;
pub use saliency::SaliencyParams;
pub use superpixel::{segment_superpixels, SlicParams, SuperpixelGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyMap {
    pub kind: PropertyKind,
    /// Depth and saliency: one channel in [0,1]. Illuminant: three
    /// chromaticity channels summing to 1.
    pub data: Raster,
    pub source_frame: usize,
}

impl PropertyMap {
    pub fn check(&self) -> Result<()> {
        let expected = match self.kind {
            PropertyKind::Illuminant => 3,
            _ => 1,
        };
        if self.data.channels != expected {
            return Err(PadError::Dimension {
                what: format!("{} map channels", self.kind),
                expected: expected.to_string(),
                found: self.data.channels.to_string(),
            });
        }
        match self.kind {
            PropertyKind::Illuminant => {
                for px in self.data.data.chunks(3) {
                    let s: f64 = px.iter().map(|&v| v as f64).sum();
                    if px.iter().any(|&v| v < 0.0) || (s - 1.0).abs() > 1e-6 {
                        return Err(PadError::InvalidInput(format!("illuminant pixel {px:?} not a chromaticity")));
                    }
                }
            }
            _ => {
                if self.data.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(PadError::InvalidInput(format!("{} map outside [0,1]", self.kind)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PropMapParams {
    #[serde(default)]
    pub slic: SlicParams,
    #[serde(default)]
    pub illuminant: IlluminantParams,
    #[serde(default)]
    pub saliency: SaliencyParams,
    #[serde(default)]
    pub depth: DepthProviderConfig,
}

pub fn estimate_illuminant_map(frame: &Frame, graph: &SuperpixelGraph, p: &IlluminantParams) -> PropertyMap {
    PropertyMap {
        kind: PropertyKind::Illuminant,
        data: illuminant::illuminant_raster(&frame.pixels, graph, p),
        source_frame: frame.index,
    }
}

pub fn estimate_saliency_map(frame: &Frame, graph: &SuperpixelGraph, p: &SaliencyParams) -> Result<PropertyMap> {
    let s = saliency::region_saliency(graph, p)?;
    let data = graph.labels.iter().map(|&l| s[l as usize] as f32).collect();
    Ok(PropertyMap {
        kind: PropertyKind::Saliency,
        data: Raster {
            width: frame.pixels.width() as usize,
            height: frame.pixels.height() as usize,
            channels: 1,
            data,
        },
        source_frame: frame.index,
    })
}

pub fn provide_depth_map(
    frame: &Frame,
    sample_id: &str,
    cfg: &DepthProviderConfig,
    strict: bool,
    frame_png: Option<&Path>,
) -> Result<PropertyMap> {
    let size = (frame.pixels.width() as usize, frame.pixels.height() as usize);
    Ok(PropertyMap {
        kind: PropertyKind::Depth,
        data: depth::provide_depth(cfg, sample_id, frame.index, size, strict, frame_png)?,
        source_frame: frame.index,
    })
}

/// All three maps of one aligned frame, in (D, I, S) order. The superpixel
/// segmentation is shared by the illuminant and saliency estimators.
pub fn compute_maps(
    frame: &Frame,
    sample_id: &str,
    params: &PropMapParams,
    strict: bool,
    frame_png: Option<&Path>,
) -> Result<[PropertyMap; 3]> {
    let graph = segment_superpixels(&frame.pixels, &params.slic)?;
    let depth = provide_depth_map(frame, sample_id, &params.depth, strict, frame_png)?;
    let illum = estimate_illuminant_map(frame, &graph, &params.illuminant);
    let sal = estimate_saliency_map(frame, &graph, &params.saliency)?;
    Ok([depth, illum, sal])
}

/// Illuminant map as 8-bit RGB, chromaticity times 255 rounded.
pub fn illuminant_png(map: &Raster) -> RgbImage {
    RgbImage::from_fn(map.width as u32, map.height as u32, |x, y| {
        let p = map.pixel(x as usize, y as usize);
        Rgb([0, 1, 2].map(|c| (p[c] * 255.0).round().clamp(0.0, 255.0) as u8))
    })
}

/// Writes a map in its interchange format: PFM for depth and saliency, PNG
/// for the illuminant.
pub fn write_map(path: &Path, map: &PropertyMap) -> Result<()> {
    match map.kind {
        PropertyKind::Illuminant => {
            let mut bytes = Vec::new();
            illuminant_png(&map.data)
                .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
                .map_err(|e| PadError::format(path, e.to_string()))?;
            crate::cache::write_atomic(path, &bytes)
        }
        _ => crate::pfm::write(path, &map.data),
    }
}
