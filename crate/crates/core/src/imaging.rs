//! Images, binary masks, masking/composition and procedural mask generation.
//!
//! Convention used everywhere: a mask value of 1 marks a corrupted (hole)
//! pixel, 0 marks a visible pixel. Images are square power-of-two grids in
//! channel-major layout with values in [-1, 1]; masked pixels are set to
//! exactly 0, the midpoint of the range.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods are std-only
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::reject;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::tensor::{el, Element, Tensor};
use crate::Result;

/// A square image, channels x side x side, values in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    side: usize,
    data: Vec<f32>,
}

impl Image {
    /// Validates squareness (side a power of two, at least 2), finiteness and
    /// the value range.
    pub fn new(channels: usize, side: usize, data: Vec<f32>) -> Result<Image> {
        if channels == 0 || side < 2 || !side.is_power_of_two() {
            return reject(format!(
                "image side must be a power of two >= 2, got {side} ({channels} channels)"
            ));
        }
        if data.len() != channels * side * side {
            return reject(format!(
                "image data length {} does not match {channels}x{side}x{side}",
                data.len()
            ));
        }
        if !data.iter().all(|v| v.is_finite() && v.abs() <= 1.0) {
            return reject("image values must be finite and within [-1, 1]");
        }
        Ok(Image {
            channels,
            side,
            data,
        })
    }

    /// Build from possibly out-of-range data by clamping into [-1, 1]
    /// (the I/O boundary rule).
    pub fn from_clamped(channels: usize, side: usize, mut data: Vec<f32>) -> Result<Image> {
        for v in &mut data {
            *v = v.clamp(-1.0, 1.0);
        }
        Image::new(channels, side, data)
    }

    pub fn constant(channels: usize, side: usize, value: f32) -> Result<Image> {
        Image::new(channels, side, vec![value; channels * side * side])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.side + y) * self.side + x]
    }

    /// `[1, C, s, s]` tensor view of the image.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|v| el::<T>(*v as f64)).collect();
        Tensor::new(&[1, self.channels, self.side, self.side], data)
    }

    /// Image from a `[1, C, s, s]` (or `[C, s, s]`) tensor, clamping into
    /// range.
    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Image> {
        let dims = t.shape();
        let (c, side) = match dims {
            [1, c, h, w] | [c, h, w] if h == w => (*c, *h),
            _ => return reject(format!("tensor shape {dims:?} is not a square image")),
        };
        let data = t.data().iter().map(|v| Element::to_f64(*v) as f32).collect();
        Image::from_clamped(c, side, data)
    }
}

/// A binary mask, 1 = corrupted pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    side: usize,
    values: Vec<u8>,
}

impl Mask {
    /// Rejects anything that is not strictly 0/1; silent thresholding is a
    /// data bug, not a convenience.
    pub fn new(side: usize, values: Vec<u8>) -> Result<Mask> {
        if side < 2 || !side.is_power_of_two() {
            return reject(format!("mask side must be a power of two >= 2, got {side}"));
        }
        if values.len() != side * side {
            return reject(format!(
                "mask data length {} does not match {side}x{side}",
                values.len()
            ));
        }
        if !values.iter().all(|v| *v <= 1) {
            return reject("mask entries must be 0 or 1");
        }
        Ok(Mask { side, values })
    }

    pub fn zeros(side: usize) -> Result<Mask> {
        Mask::new(side, vec![0; side * side])
    }

    pub fn ones(side: usize) -> Result<Mask> {
        Mask::new(side, vec![1; side * side])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.side + x]
    }

    /// Fraction of hole pixels, recomputed exactly from the entries.
    pub fn coverage(&self) -> f64 {
        let ones: usize = self.values.iter().map(|v| *v as usize).sum();
        ones as f64 / (self.side * self.side) as f64
    }

    /// `[1, 1, s, s]` tensor with entries 0/1.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|v| el::<T>(*v as f64)).collect();
        Tensor::new(&[1, 1, self.side, self.side], data)
    }
}

/// Mask difficulty bands by coverage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DifficultyLevel {
    Hard,
    Extreme,
    All,
}

impl DifficultyLevel {
    pub const LEVELS: [DifficultyLevel; 3] =
        [DifficultyLevel::Hard, DifficultyLevel::Extreme, DifficultyLevel::All];

    /// Closed coverage interval of the band.
    pub fn coverage_range(self) -> (f64, f64) {
        match self {
            DifficultyLevel::Hard => (0.50, 0.60),
            DifficultyLevel::Extreme => (0.70, 0.90),
            DifficultyLevel::All => (0.10, 0.90),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DifficultyLevel::Hard => "Hard",
            DifficultyLevel::Extreme => "Extreme",
            DifficultyLevel::All => "All",
        }
    }

    pub fn contains(self, coverage: f64) -> bool {
        let (lo, hi) = self.coverage_range();
        (lo..=hi).contains(&coverage)
    }
}

impl core::fmt::Display for DifficultyLevel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Mask families the generator can produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum MaskKind {
    Freeform,
    Box,
    Outpaint,
}

impl MaskKind {
    pub const KINDS: [MaskKind; 3] = [MaskKind::Freeform, MaskKind::Box, MaskKind::Outpaint];

    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Freeform => "freeform",
            MaskKind::Box => "box",
            MaskKind::Outpaint => "outpaint",
        }
    }

    pub fn parse(s: &str) -> Result<MaskKind> {
        match s {
            "freeform" => Ok(MaskKind::Freeform),
            "box" => Ok(MaskKind::Box),
            "outpaint" => Ok(MaskKind::Outpaint),
            other => reject(format!("unknown mask kind `{other}`")),
        }
    }
}

impl core::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Zero out corrupted pixels: output = input where mask = 0, exactly 0 where
/// mask = 1.
pub fn apply_mask(image: &Image, mask: &Mask) -> Result<Image> {
    if image.side != mask.side {
        return reject(format!(
            "apply_mask: image side {} vs mask side {}",
            image.side, mask.side
        ));
    }
    let s = image.side;
    let mut data = image.data.clone();
    for c in 0..image.channels {
        let base = c * s * s;
        for (i, m) in mask.values.iter().enumerate() {
            if *m == 1 {
                data[base + i] = 0.0;
            }
        }
    }
    Image::new(image.channels, s, data)
}

/// Hard-constraint composition: visible pixels come bit-exactly from
/// `original`, hole pixels bit-exactly from `generated`.
pub fn compose(original: &Image, generated: &Image, mask: &Mask) -> Result<Image> {
    if original.side != generated.side
        || original.side != mask.side
        || original.channels != generated.channels
    {
        return reject("compose: images and mask must share dimensions");
    }
    let s = original.side;
    let mut data = original.data.clone();
    for c in 0..original.channels {
        let base = c * s * s;
        for (i, m) in mask.values.iter().enumerate() {
            if *m == 1 {
                data[base + i] = generated.data[base + i];
            }
        }
    }
    Image::new(original.channels, s, data)
}

/// Narrowest difficulty band containing the mask's coverage, if any.
pub fn classify_mask(mask: &Mask) -> Option<DifficultyLevel> {
    let c = mask.coverage();
    if DifficultyLevel::Hard.contains(c) {
        Some(DifficultyLevel::Hard)
    } else if DifficultyLevel::Extreme.contains(c) {
        Some(DifficultyLevel::Extreme)
    } else if DifficultyLevel::All.contains(c) {
        Some(DifficultyLevel::All)
    } else {
        None
    }
}

/// Deterministic procedural mask generation.
///
/// The base pattern depends on the kind; afterwards the hole set is grown or
/// eroded along its boundary until the pixel count matches
/// `round(target_coverage * size^2)` exactly, so the achieved coverage is
/// within one pixel of the target.
pub fn generate_mask(kind: MaskKind, target_coverage: f64, size: usize, seed: u64) -> Result<Mask> {
    if !(target_coverage > 0.0 && target_coverage < 1.0) {
        return reject(format!(
            "target coverage must lie strictly inside (0, 1), got {target_coverage}"
        ));
    }
    if size < 8 || !size.is_power_of_two() {
        return reject(format!("mask size must be a power of two >= 8, got {size}"));
    }
    let total = size * size;
    let target = ((target_coverage * total as f64).round() as usize).clamp(1, total - 1);

    // Fold every argument into the stream so the same seed with different
    // parameters yields unrelated masks.
    let counter = derive_seed(
        (kind as u64) ^ ((size as u64) << 8),
        Stream::MaskGeneration,
        target_coverage.to_bits(),
    );
    let mut rng = stream_rng(seed, Stream::MaskGeneration, counter);

    let mut grid = vec![0u8; total];
    match kind {
        MaskKind::Freeform => freeform_base(&mut grid, size, target, &mut rng),
        MaskKind::Box => box_base(&mut grid, size, target, &mut rng),
        MaskKind::Outpaint => outpaint_base(&mut grid, size, target_coverage, &mut rng)?,
    }
    adjust_to_count(&mut grid, size, target, &mut rng);
    Mask::new(size, grid)
}

fn count_ones(grid: &[u8]) -> usize {
    grid.iter().map(|v| *v as usize).sum()
}

/// Thick random strokes: walks of 3-8 vertices, brush radius from
/// [size/16, size/8].
fn freeform_base<R: Rng>(grid: &mut [u8], size: usize, target: usize, rng: &mut R) {
    let min_brush = (size / 16).max(1);
    let max_brush = (size / 8).max(2);
    for _ in 0..256 {
        if count_ones(grid) >= target {
            break;
        }
        let vertices = rng.gen_range(3..=8);
        let brush = rng.gen_range(min_brush..=max_brush);
        let mut y = rng.gen_range(0..size) as i64;
        let mut x = rng.gen_range(0..size) as i64;
        for _ in 0..vertices {
            let step = (size / 4).max(2) as i64;
            let ny = (y + rng.gen_range(-step..=step)).clamp(0, size as i64 - 1);
            let nx = (x + rng.gen_range(-step..=step)).clamp(0, size as i64 - 1);
            stamp_segment(grid, size, (y, x), (ny, nx), brush);
            y = ny;
            x = nx;
        }
    }
}

/// Paint a disc of radius `brush` at every point of the segment.
fn stamp_segment(grid: &mut [u8], size: usize, a: (i64, i64), b: (i64, i64), brush: usize) {
    let steps = (a.0 - b.0).abs().max((a.1 - b.1).abs()).max(1);
    let r = brush as i64;
    for t in 0..=steps {
        let cy = a.0 + (b.0 - a.0) * t / steps;
        let cx = a.1 + (b.1 - a.1) * t / steps;
        for dy in -r..=r {
            for dx in -r..=r {
                if dy * dy + dx * dx > r * r {
                    continue;
                }
                let (y, x) = (cy + dy, cx + dx);
                if y >= 0 && y < size as i64 && x >= 0 && x < size as i64 {
                    grid[y as usize * size + x as usize] = 1;
                }
            }
        }
    }
}

/// Union of random axis-aligned rectangles.
fn box_base<R: Rng>(grid: &mut [u8], size: usize, target: usize, rng: &mut R) {
    for _ in 0..256 {
        if count_ones(grid) >= target {
            break;
        }
        let h = rng.gen_range(size / 8..=size / 2).max(1);
        let w = rng.gen_range(size / 8..=size / 2).max(1);
        let y0 = rng.gen_range(0..size - h + 1);
        let x0 = rng.gen_range(0..size - w + 1);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                grid[y * size + x] = 1;
            }
        }
    }
}

/// Mask the outside of a kept window: either a frame around a centered
/// window or a side band (half-plane style). Needs at least the full
/// one-pixel outer ring of holes.
fn outpaint_base<R: Rng>(
    grid: &mut [u8],
    size: usize,
    target_coverage: f64,
    rng: &mut R,
) -> Result<()> {
    let total = (size * size) as f64;
    let min_cov = (4 * size - 4) as f64 / total;
    if target_coverage < min_cov {
        return reject(format!(
            "outpaint mask needs coverage >= {min_cov:.4} at size {size} (full border ring), got {target_coverage}"
        ));
    }
    if rng.gen_bool(0.5) {
        // Frame: keep a centered window of area ~ (1 - c) * total.
        let window = (((1.0 - target_coverage) * total).sqrt().round() as usize)
            .clamp(1, size - 2);
        let y0 = (size - window) / 2;
        let x0 = (size - window) / 2;
        for y in 0..size {
            for x in 0..size {
                let inside = y >= y0 && y < y0 + window && x >= x0 && x < x0 + window;
                grid[y * size + x] = u8::from(!inside);
            }
        }
    } else {
        // Side band, but always keep the outer ring masked so the kind stays
        // an outpainting task.
        let cols = ((target_coverage * size as f64).round() as usize).clamp(1, size - 2);
        let from_left = rng.gen_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let in_band = if from_left { x < cols } else { x >= size - cols };
                let on_ring = y == 0 || x == 0 || y == size - 1 || x == size - 1;
                grid[y * size + x] = u8::from(in_band || on_ring);
            }
        }
    }
    Ok(())
}

/// Grow or erode the hole region along its boundary until it holds exactly
/// `target` pixels.
fn adjust_to_count<R: Rng>(grid: &mut [u8], size: usize, target: usize, rng: &mut R) {
    loop {
        let current = count_ones(grid);
        if current == target {
            return;
        }
        if current < target {
            let mut frontier = boundary(grid, size, 0);
            if frontier.is_empty() {
                // Hole region is empty; seed one pixel.
                let y = rng.gen_range(0..size);
                let x = rng.gen_range(0..size);
                grid[y * size + x] = 1;
                continue;
            }
            frontier.shuffle(rng);
            for idx in frontier.into_iter().take(target - current) {
                grid[idx] = 1;
            }
        } else {
            let mut frontier = boundary(grid, size, 1);
            if frontier.is_empty() {
                // Solid grid: free any pixel.
                let y = rng.gen_range(0..size);
                let x = rng.gen_range(0..size);
                grid[y * size + x] = 0;
                continue;
            }
            frontier.shuffle(rng);
            for idx in frontier.into_iter().take(current - target) {
                grid[idx] = 0;
            }
        }
    }
}

/// Indices of pixels with `value` that touch (4-adjacency) a pixel of the
/// opposite value.
fn boundary(grid: &[u8], size: usize, value: u8) -> Vec<usize> {
    let mut out = Vec::new();
    for y in 0..size {
        for x in 0..size {
            let idx = y * size + x;
            if grid[idx] != value {
                continue;
            }
            let other = 1 - value;
            let touches = (y > 0 && grid[idx - size] == other)
                || (y + 1 < size && grid[idx + size] == other)
                || (x > 0 && grid[idx - 1] == other)
                || (x + 1 < size && grid[idx + 1] == other);
            if touches {
                out.push(idx);
            }
        }
    }
    out
}

/// Test/dataset helper: a deterministic random image.
pub fn random_image(channels: usize, side: usize, seed: u64) -> Image {
    let mut rng = stream_rng(seed, Stream::ToyData, 0xf00d);
    let data = (0..channels * side * side)
        .map(|_| rng.gen_range(-1.0f32..=1.0))
        .collect();
    Image::new(channels, side, data).expect("valid random image")
}

/// Short human-readable description used in manifests and reports.
pub fn level_summary(mask: &Mask) -> String {
    match classify_mask(mask) {
        Some(level) => format!("{} ({:.3})", level.name(), mask.coverage()),
        None => format!("unclassified ({:.3})", mask.coverage()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_mask_identity_and_full() {
        let img = random_image(3, 8, 1);
        let zero = Mask::zeros(8).unwrap();
        let one = Mask::ones(8).unwrap();
        assert_eq!(apply_mask(&img, &zero).unwrap(), img);
        let blanked = apply_mask(&img, &one).unwrap();
        assert!(blanked.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn apply_mask_two_by_two_oracle() {
        let img = Image::new(1, 2, vec![0.5, -0.5, 1.0, -1.0]).unwrap();
        let mask = Mask::new(2, vec![1, 0, 0, 1]).unwrap();
        let out = apply_mask(&img, &mask).unwrap();
        assert_eq!(out.data(), &[0.0, -0.5, 1.0, 0.0]);
    }

    #[test]
    fn apply_mask_is_idempotent() {
        let img = random_image(3, 16, 2);
        let mask = generate_mask(MaskKind::Freeform, 0.4, 16, 3).unwrap();
        let once = apply_mask(&img, &mask).unwrap();
        let twice = apply_mask(&once, &mask).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn compose_trivial_masks_and_checkerboard() {
        let a = random_image(3, 8, 4);
        let b = random_image(3, 8, 5);
        assert_eq!(compose(&a, &b, &Mask::zeros(8).unwrap()).unwrap(), a);
        assert_eq!(compose(&a, &b, &Mask::ones(8).unwrap()).unwrap(), b);

        let checker: Vec<u8> = (0..64).map(|i| ((i / 8 + i % 8) % 2) as u8).collect();
        let mask = Mask::new(8, checker).unwrap();
        let out = compose(&a, &b, &mask).unwrap();
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    let expect = if mask.get(y, x) == 1 {
                        b.get(c, y, x)
                    } else {
                        a.get(c, y, x)
                    };
                    assert_eq!(out.get(c, y, x).to_bits(), expect.to_bits());
                }
            }
        }
    }

    #[test]
    fn compose_of_identical_images_is_identity() {
        let a = random_image(3, 8, 6);
        let mask = generate_mask(MaskKind::Box, 0.3, 8, 7).unwrap();
        assert_eq!(compose(&a, &a, &mask).unwrap(), a);
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(Mask::new(8, vec![2; 64]).is_err());
    }

    #[test]
    fn classification_narrowest_band() {
        let make = |cov: f64| {
            let total = 64 * 64;
            let ones = (cov * total as f64).round() as usize;
            let mut v = vec![0u8; total];
            v[..ones].fill(1);
            Mask::new(64, v).unwrap()
        };
        assert_eq!(classify_mask(&make(0.55)), Some(DifficultyLevel::Hard));
        assert_eq!(classify_mask(&make(0.80)), Some(DifficultyLevel::Extreme));
        assert_eq!(classify_mask(&make(0.30)), Some(DifficultyLevel::All));
        assert_eq!(classify_mask(&make(0.05)), None);
        assert_eq!(classify_mask(&make(0.95)), None);
    }

    #[test]
    fn generated_masks_hit_target_and_repeat() {
        for kind in MaskKind::KINDS {
            let m1 = generate_mask(kind, 0.25, 64, 7).unwrap();
            let m2 = generate_mask(kind, 0.25, 64, 7).unwrap();
            assert_eq!(m1, m2, "{kind} not deterministic");
            assert!(
                (m1.coverage() - 0.25).abs() <= 0.02,
                "{kind} coverage {}",
                m1.coverage()
            );
            let m3 = generate_mask(kind, 0.25, 64, 8).unwrap();
            assert_ne!(m1, m3, "{kind} ignores the seed");
        }
    }

    #[test]
    fn freeform_hard_example() {
        let mask = generate_mask(MaskKind::Freeform, 0.55, 256, 1).unwrap();
        assert_eq!(classify_mask(&mask), Some(DifficultyLevel::Hard));
    }

    #[test]
    fn outpaint_rejects_unreachable_coverage() {
        // below the one-pixel border ring at size 64
        assert!(generate_mask(MaskKind::Outpaint, 0.01, 64, 1).is_err());
    }

    #[test]
    fn coverage_is_recomputed_exactly() {
        let mask = generate_mask(MaskKind::Box, 0.5, 32, 9).unwrap();
        let ones: usize = mask.values().iter().map(|v| *v as usize).sum();
        assert_eq!(mask.coverage(), ones as f64 / 1024.0);
    }
}
