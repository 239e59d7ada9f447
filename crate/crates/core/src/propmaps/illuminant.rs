//! Illuminant chromaticity per superpixel in inverse-intensity chromaticity
//! space.
//!
//! Under the dichromatic model a pixel is `m_d * diffuse + m_s * illum`
//! (both chromaticities). Plotting channel chromaticity `I_c / sum(I)`
//! against `1 / sum(I)`, pixels of one surface with varying specular
//! strength fall on a line whose intercept at zero inverse intensity is the
//! illuminant chromaticity of that channel. Every pair of usable pixels
//! votes for the intercept of the line through them; the densest intercept
//! bin wins.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::superpixel::SuperpixelGraph;
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IlluminantParams {
    /// Pixels with normalised total intensity outside [low, high] are unused.
    pub intensity_low: f64,
    pub intensity_high: f64,
    pub bin_width: f64,
    /// Regions with fewer usable pixels inherit the frame-wide estimate.
    pub min_pixels: usize,
    /// Pairs closer than this fraction of their larger inverse intensity
    /// are too short to define a line.
    pub min_pair_spread: f64,
    /// Pairs whose chromaticities differ by less than this in every channel
    /// are one colour seen at two brightnesses and carry no line.
    pub min_chroma_spread: f64,
    /// Pairs per estimate before switching to seeded sampling.
    pub max_pairs: usize,
}

impl Default for IlluminantParams {
    fn default() -> Self {
        IlluminantParams {
            intensity_low: 0.03,
            intensity_high: 0.98,
            bin_width: 0.01,
            min_pixels: 16,
            min_pair_spread: 0.2,
            min_chroma_spread: 0.01,
            max_pairs: 100_000,
        }
    }
}

pub const NEUTRAL: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

/// (inverse intensity, chromaticity per channel) of a usable pixel.
#[derive(Debug, Clone, Copy)]
struct IicPoint {
    inv: f64,
    chroma: [f64; 3],
}

fn iic_point(rgb: [u8; 3], p: &IlluminantParams) -> Option<IicPoint> {
    let v = rgb.map(|c| c as f64 / 255.0);
    let sum = v[0] + v[1] + v[2];
    let t = sum / 3.0;
    if t < p.intensity_low || t > p.intensity_high || sum <= 0.0 {
        return None;
    }
    Some(IicPoint {
        inv: 1.0 / sum,
        chroma: v.map(|c| c / sum),
    })
}

fn pair_intercepts(a: &IicPoint, b: &IicPoint, p: &IlluminantParams) -> Option<[f64; 3]> {
    let dx = b.inv - a.inv;
    if dx.abs() < p.min_pair_spread * a.inv.max(b.inv) {
        return None;
    }
    if (0..3).all(|c| (b.chroma[c] - a.chroma[c]).abs() < p.min_chroma_spread) {
        return None;
    }
    Some(std::array::from_fn(|c| {
        let slope = (b.chroma[c] - a.chroma[c]) / dx;
        a.chroma[c] - slope * a.inv
    }))
}

/// Votes intercepts into bins over [0,1]; returns the mean intercept inside
/// the fullest bin (lowest bin on ties), or `None` without votes.
struct InterceptVotes {
    bin_width: f64,
    counts: Vec<u32>,
    sums: Vec<f64>,
}

impl InterceptVotes {
    fn new(bin_width: f64) -> Self {
        let n = (1.0 / bin_width).round() as usize;
        InterceptVotes {
            bin_width,
            counts: vec![0; n],
            sums: vec![0.0; n],
        }
    }

    fn vote(&mut self, v: f64) {
        if !(0.0..=1.0).contains(&v) {
            return;
        }
        let i = ((v / self.bin_width) as usize).min(self.counts.len() - 1);
        self.counts[i] += 1;
        self.sums[i] += v;
    }

    fn peak(&self) -> Option<f64> {
        let (i, &c) = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (c > 0).then(|| self.sums[i] / c as f64)
    }
}

fn estimate_from_points(points: &[IicPoint], p: &IlluminantParams, seed: u64) -> Option<[f64; 3]> {
    if points.len() < p.min_pixels {
        return None;
    }
    let mut votes = [
        InterceptVotes::new(p.bin_width),
        InterceptVotes::new(p.bin_width),
        InterceptVotes::new(p.bin_width),
    ];
    let mut cast = |a: &IicPoint, b: &IicPoint| {
        if let Some(ic) = pair_intercepts(a, b, p) {
            for c in 0..3 {
                votes[c].vote(ic[c]);
            }
        }
    };
    let n = points.len();
    let total_pairs = n * (n - 1) / 2;
    if total_pairs <= p.max_pairs {
        for i in 0..n {
            for j in i + 1..n {
                cast(&points[i], &points[j]);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..p.max_pairs {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            cast(&points[i], &points[j]);
        }
    }
    let g = [votes[0].peak()?, votes[1].peak()?, votes[2].peak()?];
    normalize(g)
}

fn normalize(g: [f64; 3]) -> Option<[f64; 3]> {
    let g = g.map(|v| v.max(0.0));
    let s = g[0] + g[1] + g[2];
    (s > 0.0).then(|| g.map(|v| v / s))
}

/// Per-region illuminant chromaticities (each summing to 1).
pub fn region_illuminants(img: &RgbImage, graph: &SuperpixelGraph, p: &IlluminantParams) -> Vec<[f64; 3]> {
    let mut per_region: Vec<Vec<IicPoint>> = vec![Vec::new(); graph.len()];
    let mut all = Vec::new();
    for (px, &l) in img.pixels().zip(&graph.labels) {
        if let Some(pt) = iic_point(px.0, p) {
            per_region[l as usize].push(pt);
            all.push(pt);
        }
    }
    let mut global: Option<[f64; 3]> = None;
    let mut global_of = || *global.get_or_insert_with(|| estimate_from_points(&all, p, 0).unwrap_or(NEUTRAL));
    per_region
        .iter()
        .enumerate()
        .map(|(r, pts)| estimate_from_points(pts, p, r as u64 + 1).unwrap_or_else(&mut global_of))
        .collect()
}

/// Paints each superpixel with its illuminant chromaticity.
pub fn illuminant_raster(img: &RgbImage, graph: &SuperpixelGraph, p: &IlluminantParams) -> Raster {
    let gammas = region_illuminants(img, graph, p);
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Raster::new(w, h, 3);
    for (i, &l) in graph.labels.iter().enumerate() {
        let g = gammas[l as usize];
        // keep the f32 channel sum at 1
        let r = g[0] as f32;
        let gg = g[1] as f32;
        let b = (1.0f64 - r as f64 - gg as f64) as f32;
        out.data[i * 3] = r;
        out.data[i * 3 + 1] = gg;
        out.data[i * 3 + 2] = b.max(0.0);
    }
    out
}
