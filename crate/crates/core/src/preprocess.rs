//! Frame extraction at a fixed rate, eye-level alignment and face cropping.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::external;

pub const DEFAULT_RATE_HZ: f64 = 10.0;
pub const DEFAULT_DECODER: &str =
    "ffmpeg -loglevel error -i {input} -vf fps={rate} {output_dir}/%06d.png";

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: RgbImage,
    pub timestamp_s: f64,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub sample_id: String,
    pub frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Eye centres in image pixels; `left` is the one with smaller x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeLandmarks {
    pub left: (f64, f64),
    pub right: (f64, f64),
}

impl EyeLandmarks {
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        let inside = |(x, y): (f64, f64)| {
            x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64
        };
        if !inside(self.left) || !inside(self.right) {
            return Err(PadError::Landmarks(format!(
                "eyes {self:?} outside {width}x{height} frame"
            )));
        }
        if self.interocular() <= 1e-9 {
            return Err(PadError::Landmarks("coincident eyes".into()));
        }
        Ok(())
    }

    pub fn interocular(&self) -> f64 {
        (self.right.0 - self.left.0).hypot(self.right.1 - self.left.1)
    }
}

/// Target geometry of the aligned crop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignGeometry {
    pub canonical_size: u32,
    pub eye_row_frac: f64,
    pub eye_dist_frac: f64,
}

impl Default for AlignGeometry {
    fn default() -> Self {
        AlignGeometry {
            canonical_size: 224,
            eye_row_frac: 0.40,
            eye_dist_frac: 0.42,
        }
    }
}

impl AlignGeometry {
    /// Where the eyes land in the aligned crop.
    pub fn canonical_landmarks(&self) -> EyeLandmarks {
        let s = self.canonical_size as f64;
        let half = 0.5 * self.eye_dist_frac * s;
        let y = self.eye_row_frac * s;
        EyeLandmarks {
            left: (s / 2.0 - half, y),
            right: (s / 2.0 + half, y),
        }
    }
}

/// Rotation + uniform scale + translation, `p' = scale * R * p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub a: f64, // scale * cos
    pub b: f64, // scale * sin
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (self.a * x - self.b * y + self.tx, self.b * x + self.a * y + self.ty)
    }

    pub fn inverse(&self) -> Similarity {
        let det = self.a * self.a + self.b * self.b;
        let a = self.a / det;
        let b = -self.b / det;
        Similarity {
            a,
            b,
            tx: -(a * self.tx - b * self.ty),
            ty: -(b * self.tx + a * self.ty),
        }
    }
}

/// Source-to-crop transform that puts the eye midpoint at
/// `(size/2, eye_row_frac*size)`, levels the eyes and sets their distance
/// to `eye_dist_frac*size`.
pub fn alignment_transform(lm: &EyeLandmarks, geom: &AlignGeometry) -> Result<Similarity> {
    let dx = lm.right.0 - lm.left.0;
    let dy = lm.right.1 - lm.left.1;
    let dist = dx.hypot(dy);
    if dist <= 1e-9 {
        return Err(PadError::Landmarks("coincident eyes".into()));
    }
    let s = geom.canonical_size as f64;
    let scale = geom.eye_dist_frac * s / dist;
    let (sin, cos) = (-dy / dist, dx / dist);
    let a = scale * cos;
    let b = scale * sin;
    let mx = 0.5 * (lm.left.0 + lm.right.0);
    let my = 0.5 * (lm.left.1 + lm.right.1);
    let target = (s / 2.0, geom.eye_row_frac * s);
    Ok(Similarity {
        a,
        b,
        tx: target.0 - (a * mx - b * my),
        ty: target.1 - (b * mx + a * my),
    })
}

/// Bilinear sample; neighbours outside the image contribute black.
fn sample_black(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if x <= -1.0 || y <= -1.0 || x >= w as f64 || y >= h as f64 {
        return [0.0; 3];
    }
    let x0 = x.floor() as i64;
    let y0 = y.floor() as i64;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let mut out = [0.0; 3];
    for (dx, dy, wgt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        let (xx, yy) = (x0 + dx, y0 + dy);
        if wgt == 0.0 || xx < 0 || yy < 0 || xx >= w || yy >= h {
            continue;
        }
        let p = img.get_pixel(xx as u32, yy as u32);
        for c in 0..3 {
            out[c] += wgt * p[c] as f64;
        }
    }
    out
}

/// Warps `frame` into the canonical crop defined by `geom`.
pub fn align_and_crop(frame: &Frame, landmarks: &EyeLandmarks, geom: &AlignGeometry) -> Result<Frame> {
    landmarks.validate(frame.pixels.width(), frame.pixels.height())?;
    let fwd = alignment_transform(landmarks, geom)?;
    Ok(Frame {
        pixels: warp(&frame.pixels, &fwd, geom.canonical_size, geom.canonical_size),
        timestamp_s: frame.timestamp_s,
        index: frame.index,
    })
}

/// Resamples `src` through the source-to-destination transform `fwd`.
pub fn warp(src: &RgbImage, fwd: &Similarity, width: u32, height: u32) -> RgbImage {
    let inv = fwd.inverse();
    RgbImage::from_fn(width, height, |x, y| {
        let (sx, sy) = inv.apply((x as f64, y as f64));
        let v = sample_black(src, sx, sy);
        Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8))
    })
}

/// Parses a landmark sidecar: one `lx ly rx ry` line per extracted frame.
/// Blank lines, `-` or non-finite values mark a frame without landmarks.
pub fn read_landmarks(path: &Path) -> Result<Vec<Option<EyeLandmarks>>> {
    let text = fs::read_to_string(path).map_err(|e| PadError::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.trim();
            if line.is_empty() || line == "-" {
                return Ok(None);
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| PadError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if vals.len() != 4 {
                return Err(PadError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected 4 values, found {}", vals.len()),
                });
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Ok(None);
            }
            Ok(Some(EyeLandmarks {
                left: (vals[0], vals[1]),
                right: (vals[2], vals[3]),
            }))
        })
        .collect()
}

pub fn format_landmarks(lm: &EyeLandmarks) -> String {
    format!("{} {} {} {}", lm.left.0, lm.left.1, lm.right.0, lm.right.1)
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub rate_hz: f64,
    /// Native rate of frame-directory media.
    pub fps_native: Option<f64>,
    /// Command template for video files; `{input}`, `{rate}` and
    /// `{output_dir}` are substituted.
    pub decoder: String,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            rate_hz: DEFAULT_RATE_HZ,
            fps_native: None,
            decoder: DEFAULT_DECODER.to_string(),
        }
    }
}

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
}

fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| PadError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

fn sorted_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| PadError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Samples frames at `opts.rate_hz` from `media`.
///
/// A still image is a one-frame video. A directory holds numbered frames at
/// `opts.fps_native`. Anything else is handed to the decoder command, which
/// writes numbered PNGs already sampled at the target rate.
pub fn extract_frames(sample_id: &str, media: &Path, opts: &ExtractOptions) -> Result<FrameSequence> {
    if !(opts.rate_hz > 0.0 && opts.rate_hz.is_finite()) {
        return Err(PadError::InvalidInput(format!("rate {} Hz", opts.rate_hz)));
    }
    let frames = if media.is_dir() {
        let files = sorted_pngs(media)?;
        let fps = opts.fps_native.ok_or_else(|| {
            PadError::Config(format!("{}: frame directory needs fps_native", media.display()))
        })?;
        if opts.rate_hz > fps + 1e-9 {
            return Err(PadError::InvalidInput(format!(
                "rate {} Hz exceeds native {fps} fps",
                opts.rate_hz
            )));
        }
        if files.is_empty() {
            return Err(PadError::Decode {
                path: media.to_path_buf(),
                message: "zero-duration input".into(),
            });
        }
        let duration = files.len() as f64 / fps;
        let count = ((duration * opts.rate_hz + 1e-9).floor() as usize).max(1);
        (0..count)
            .map(|k| {
                let src = ((k as f64 * fps / opts.rate_hz) + 1e-9).floor() as usize;
                Ok(Frame {
                    pixels: load_rgb(&files[src.min(files.len() - 1)])?,
                    timestamp_s: k as f64 / opts.rate_hz,
                    index: k,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else if is_image(media) {
        vec![Frame {
            pixels: load_rgb(media)?,
            timestamp_s: 0.0,
            index: 0,
        }]
    } else {
        decode_video(media, opts)?
    };
    Ok(FrameSequence {
        sample_id: sample_id.to_string(),
        frames,
    })
}

fn decode_video(media: &Path, opts: &ExtractOptions) -> Result<Vec<Frame>> {
    if !media.is_file() {
        return Err(PadError::Decode {
            path: media.to_path_buf(),
            message: "no such file".into(),
        });
    }
    let scratch = ScratchDir::new()?;
    external::run_template(
        &opts.decoder,
        &[
            ("input", media.display().to_string()),
            ("rate", opts.rate_hz.to_string()),
            ("output_dir", scratch.0.display().to_string()),
        ],
    )
    .map_err(|e| PadError::Decode {
        path: media.to_path_buf(),
        message: e.to_string(),
    })?;
    let files = sorted_pngs(&scratch.0)?;
    if files.is_empty() {
        return Err(PadError::Decode {
            path: media.to_path_buf(),
            message: "decoder produced no frames (zero-duration input?)".into(),
        });
    }
    files
        .iter()
        .enumerate()
        .map(|(k, f)| {
            Ok(Frame {
                pixels: load_rgb(f)?,
                timestamp_s: k as f64 / opts.rate_hz,
                index: k,
            })
        })
        .collect()
}

struct ScratchDir(PathBuf);

impl ScratchDir {
    fn new() -> Result<Self> {
        use std::sync::atomic::{AtomicU64, Ordering};
        static N: AtomicU64 = AtomicU64::new(0);
        let dir = std::env::temp_dir().join(format!(
            "pad-decode-{}-{}",
            std::process::id(),
            N.fetch_add(1, Ordering::Relaxed)
        ));
        fs::create_dir_all(&dir).map_err(|e| PadError::io(&dir, e))?;
        Ok(ScratchDir(dir))
    }
}

impl Drop for ScratchDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

/// Aligns every frame that has landmarks; frames without them are dropped
/// with a warning. Without a sidecar the frames are taken as pre-aligned
/// crops and only resized to the canonical size.
pub fn align_sequence(
    seq: &FrameSequence,
    landmarks: Option<&[Option<EyeLandmarks>]>,
    geom: &AlignGeometry,
) -> Result<FrameSequence> {
    let size = geom.canonical_size;
    let mut frames = Vec::with_capacity(seq.frames.len());
    for frame in &seq.frames {
        match landmarks {
            None => {
                let pixels = if frame.pixels.dimensions() == (size, size) {
                    frame.pixels.clone()
                } else {
                    image::imageops::resize(&frame.pixels, size, size, image::imageops::FilterType::Triangle)
                };
                frames.push(Frame {
                    pixels,
                    ..frame.clone()
                });
            }
            Some(lms) => match lms.get(frame.index).copied().flatten() {
                Some(lm) => match align_and_crop(frame, &lm, geom) {
                    Ok(f) => frames.push(f),
                    Err(e) => log::warn!("{}: frame {} dropped: {e}", seq.sample_id, frame.index),
                },
                None => log::warn!("{}: frame {} has no landmarks, dropped", seq.sample_id, frame.index),
            },
        }
    }
    if frames.is_empty() {
        return Err(PadError::Landmarks(format!(
            "{}: every frame was dropped",
            seq.sample_id
        )));
    }
    Ok(FrameSequence {
        sample_id: seq.sample_id.clone(),
        frames,
    })
}
