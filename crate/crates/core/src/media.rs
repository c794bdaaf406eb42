//! Frame sampling: flow-based keyframes for short videos, uniform sampling
//! for long ones, the OCR frame stream, and blank-frame filtering.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PipelineConfig, VideoAsset};

/// One decoded frame. `luma` is a row-major plane of `width * height`
/// values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub timestamp_s: f64,
    pub width: u32,
    pub height: u32,
    pub luma: Vec<f32>,
}

impl Frame {
    pub fn mean_luma(&self) -> f64 {
        if self.luma.is_empty() {
            return 0.0;
        }
        self.luma.iter().map(|&v| v as f64).sum::<f64>() / self.luma.len() as f64
    }
}

/// Motion magnitude between a frame and its predecessor. Defined for
/// `frame_index >= 1` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowScore {
    pub frame_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    Flow,
    Uniform,
}

/// The selected frames of one video, ordered by index.
#[derive(Debug, Clone)]
pub struct KeyframeSet {
    pub method: SamplingMethod,
    pub frames: Vec<Frame>,
    /// Aligned with `frames` when `method` is flow; absent for uniform.
    pub scores: Option<Vec<FlowScore>>,
}

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("frame dimension mismatch: {prev_w}x{prev_h} vs {next_w}x{next_h}")]
    DimensionMismatch {
        prev_w: u32,
        prev_h: u32,
        next_w: u32,
        next_h: u32,
    },

    #[error("video {video_id:?}: frame stream is empty")]
    EmptyStream { video_id: String },

    #[error("cannot decode frame file {path}: {source}")]
    Undecodable {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("frame directory {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("frame index {index} out of range ({len} frames)")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Supplies decoded frames plus the encoded bytes that go to image
/// backends.
pub trait FrameSource {
    fn fps(&self) -> f64;
    fn len(&self) -> usize;
    fn frame(&self, index: usize) -> Result<Frame, MediaError>;
    /// PNG-encoded bytes of the frame, for backend requests.
    fn frame_png(&self, index: usize) -> Result<Vec<u8>, MediaError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn all_frames(&self) -> Result<Vec<Frame>, MediaError> {
        (0..self.len()).map(|i| self.frame(i)).collect()
    }
}

/// Reads a directory of PNG frames, ordered by file name. This is the
/// bit-exact path used by tests and golden fixtures; a system video decoder
/// can sit behind the same trait.
pub struct DirFrameSource {
    fps: f64,
    paths: Vec<PathBuf>,
}

impl DirFrameSource {
    pub fn open(dir: &Path, fps: f64) -> Result<Self, MediaError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|source| MediaError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        paths.sort();
        Ok(Self { fps, paths })
    }
}

impl FrameSource for DirFrameSource {
    fn fps(&self) -> f64 {
        self.fps
    }

    fn len(&self) -> usize {
        self.paths.len()
    }

    fn frame(&self, index: usize) -> Result<Frame, MediaError> {
        let path = self
            .paths
            .get(index)
            .ok_or(MediaError::IndexOutOfRange {
                index,
                len: self.paths.len(),
            })?;
        let img = image::open(path).map_err(|source| MediaError::Undecodable {
            path: path.clone(),
            source,
        })?;
        let luma = img.to_luma32f();
        Ok(Frame {
            index,
            timestamp_s: index as f64 / self.fps,
            width: luma.width(),
            height: luma.height(),
            luma: luma.into_raw(),
        })
    }

    fn frame_png(&self, index: usize) -> Result<Vec<u8>, MediaError> {
        let path = self
            .paths
            .get(index)
            .ok_or(MediaError::IndexOutOfRange {
                index,
                len: self.paths.len(),
            })?;
        std::fs::read(path).map_err(|source| MediaError::Io {
            path: path.clone(),
            source,
        })
    }
}

/// In-memory source for synthetic clips.
pub struct MemoryFrameSource {
    fps: f64,
    frames: Vec<Frame>,
}

impl MemoryFrameSource {
    pub fn new(fps: f64, frames: Vec<Frame>) -> Self {
        Self { fps, frames }
    }
}

impl FrameSource for MemoryFrameSource {
    fn fps(&self) -> f64 {
        self.fps
    }

    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame(&self, index: usize) -> Result<Frame, MediaError> {
        self.frames
            .get(index)
            .cloned()
            .ok_or(MediaError::IndexOutOfRange {
                index,
                len: self.frames.len(),
            })
    }

    fn frame_png(&self, index: usize) -> Result<Vec<u8>, MediaError> {
        let frame = self.frame(index)?;
        Ok(encode_png(&frame))
    }
}

/// Encodes a luma frame as an 8-bit grayscale PNG.
pub fn encode_png(frame: &Frame) -> Vec<u8> {
    let pixels: Vec<u8> = frame
        .luma
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(frame.width, frame.height, pixels)
        .expect("luma length matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encode");
    out.into_inner()
}

const BLOCK: usize = 16;
const SEARCH: i64 = 8;
/// The published motion threshold is model-relative; this factor puts the
/// native estimator's per-block displacement means on the same scale.
const FLOW_SCALE: f64 = 10.0;

/// Motion between consecutive frames by exhaustive block matching: 16x16
/// blocks, +/-8 px search, mean per-block displacement magnitude, scaled
/// x10. Ties in block error prefer the smallest displacement, so identical
/// frames score exactly 0.
///
/// Blocks sit on a grid inset by the search radius so the whole search
/// window is always in-bounds; frames too small for that fall back to a
/// single centered block with a clamped window, and frames narrower than a
/// block score 0.
pub fn estimate_flow(prev: &Frame, next: &Frame) -> Result<FlowScore, MediaError> {
    if prev.width != next.width || prev.height != next.height {
        return Err(MediaError::DimensionMismatch {
            prev_w: prev.width,
            prev_h: prev.height,
            next_w: next.width,
            next_h: next.height,
        });
    }
    let w = prev.width as usize;
    let h = prev.height as usize;
    let xs = grid_positions(w);
    let ys = grid_positions(h);
    let mut total_mag = 0.0;
    let mut blocks = 0usize;
    for &by in &ys {
        for &bx in &xs {
            total_mag += best_displacement(prev, next, bx, by, w, h);
            blocks += 1;
        }
    }
    let score = if blocks == 0 {
        0.0
    } else {
        total_mag / blocks as f64 * FLOW_SCALE
    };
    Ok(FlowScore {
        frame_index: next.index,
        score,
    })
}

fn grid_positions(extent: usize) -> Vec<usize> {
    let search = SEARCH as usize;
    if extent >= BLOCK + 2 * search {
        (search..)
            .step_by(BLOCK)
            .take_while(|&p| p + BLOCK + search <= extent)
            .collect()
    } else if extent >= BLOCK {
        vec![(extent - BLOCK) / 2]
    } else {
        Vec::new()
    }
}

/// Magnitude of the displacement minimizing the sum of absolute differences
/// for the block of `prev` at (bx, by) against `next`. Ties prefer smaller
/// magnitude, then smaller (dy, dx).
fn best_displacement(prev: &Frame, next: &Frame, bx: usize, by: usize, w: usize, h: usize) -> f64 {
    let mut best_sad = f64::INFINITY;
    let mut best_mag2 = i64::MAX;
    let mut best_key = (i64::MAX, i64::MAX);
    for dy in -SEARCH..=SEARCH {
        let ny = by as i64 + dy;
        if ny < 0 || ny as usize + BLOCK > h {
            continue;
        }
        for dx in -SEARCH..=SEARCH {
            let nx = bx as i64 + dx;
            if nx < 0 || nx as usize + BLOCK > w {
                continue;
            }
            let sad = block_sad(prev, next, bx, by, nx as usize, ny as usize, w);
            let mag2 = dx * dx + dy * dy;
            if sad < best_sad
                || (sad == best_sad && (mag2, (dy, dx)) < (best_mag2, best_key))
            {
                best_sad = sad;
                best_mag2 = mag2;
                best_key = (dy, dx);
            }
        }
    }
    (best_mag2 as f64).sqrt()
}

fn block_sad(
    prev: &Frame,
    next: &Frame,
    px: usize,
    py: usize,
    nx: usize,
    ny: usize,
    w: usize,
) -> f64 {
    let mut sad = 0.0f64;
    for row in 0..BLOCK {
        let p_off = (py + row) * w + px;
        let n_off = (ny + row) * w + nx;
        for col in 0..BLOCK {
            sad += (prev.luma[p_off + col] - next.luma[n_off + col]).abs() as f64;
        }
    }
    sad
}

/// Keeps exactly the frames with mean luma strictly inside
/// (blank_low_luma, blank_high_luma); order preserved.
pub fn filter_blank(frames: Vec<Frame>, cfg: &PipelineConfig) -> Vec<Frame> {
    frames
        .into_iter()
        .filter(|f| {
            let mean = f.mean_luma();
            mean > cfg.blank_low_luma && mean < cfg.blank_high_luma
        })
        .collect()
}

fn is_blank(frame: &Frame, cfg: &PipelineConfig) -> bool {
    let mean = frame.mean_luma();
    mean <= cfg.blank_low_luma || mean >= cfg.blank_high_luma
}

/// Evenly spaced selection of `cap` items, endpoints included.
fn truncate_uniformly<T>(items: Vec<T>, cap: usize) -> Vec<T> {
    let len = items.len();
    if len <= cap {
        return items;
    }
    if cap == 1 {
        return items.into_iter().take(1).collect();
    }
    let keep: Vec<usize> = (0..cap).map(|i| i * (len - 1) / (cap - 1)).collect();
    items
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.binary_search(i).is_ok())
        .map(|(_, item)| item)
        .collect()
}

fn uniform_select(
    frames: &[Frame],
    fps: f64,
    cfg: &PipelineConfig,
) -> KeyframeSet {
    let stride = (fps.round() as usize).max(1);
    let sampled: Vec<Frame> = frames
        .iter()
        .step_by(stride)
        .filter(|f| !is_blank(f, cfg))
        .cloned()
        .collect();
    KeyframeSet {
        method: SamplingMethod::Uniform,
        frames: truncate_uniformly(sampled, cfg.max_keyframes),
        scores: None,
    }
}

/// Selects keyframes for one video.
///
/// Short videos (duration < short_video_max_s): per-pair motion scores,
/// blank frames dropped, frames with score above flow_threshold ranked by
/// descending score (ties to the lower index), truncated to max_keyframes,
/// then re-sorted by index. An empty selection falls back to the uniform
/// path.
///
/// Long videos: one frame per second (index stride = round(fps)), blanks
/// dropped, truncated evenly to max_keyframes.
pub fn select_keyframes(
    video: &VideoAsset,
    source: &dyn FrameSource,
    cfg: &PipelineConfig,
) -> Result<KeyframeSet, MediaError> {
    if source.is_empty() {
        return Err(MediaError::EmptyStream {
            video_id: video.video_id.clone(),
        });
    }
    let frames = source.all_frames()?;
    if video.duration_s >= cfg.short_video_max_s {
        return Ok(uniform_select(&frames, source.fps(), cfg));
    }

    let mut scored: Vec<(Frame, FlowScore)> = Vec::new();
    for pair in frames.windows(2) {
        let score = estimate_flow(&pair[0], &pair[1])?;
        scored.push((pair[1].clone(), score));
    }
    let mut selected: Vec<(Frame, FlowScore)> = scored
        .into_iter()
        .filter(|(frame, _)| !is_blank(frame, cfg))
        .filter(|(_, s)| s.score > cfg.flow_threshold)
        .collect();
    selected.sort_by(|(fa, sa), (fb, sb)| {
        sb.score
            .partial_cmp(&sa.score)
            .expect("flow scores are finite")
            .then(fa.index.cmp(&fb.index))
    });
    selected.truncate(cfg.max_keyframes);
    selected.sort_by_key(|(frame, _)| frame.index);

    if selected.is_empty() {
        return Ok(uniform_select(&frames, source.fps(), cfg));
    }
    let (frames, scores): (Vec<Frame>, Vec<FlowScore>) = selected.into_iter().unzip();
    Ok(KeyframeSet {
        method: SamplingMethod::Flow,
        frames,
        scores: Some(scores),
    })
}

/// Frames at indices 0, stride, 2*stride, ... with stride =
/// ocr_frame_stride; order preserved.
pub fn sample_ocr_frames(frames: &[Frame], cfg: &PipelineConfig) -> Vec<Frame> {
    frames
        .iter()
        .step_by(cfg.ocr_frame_stride.max(1))
        .cloned()
        .collect()
}
