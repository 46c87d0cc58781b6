//! Dataset assembly: sample extraction with precomputed neighborhoods,
//! deterministic splitting, augmentation, and the benchmark generators
//! (neighborhood ring, scale, misregistration, target-size strata).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    self, assemble_window, band_corner_placements, build_tile_grid, quantize_u8, PadPolicy,
    TileRef, BAND_NAMES,
};
use crate::network::BatchInput;
use crate::raster::Raster;
use crate::rng::{seed_offset, Rng};
use crate::tensor::Tensor;

/// Identification of where a sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub scene_id: String,
    pub tile: TileRef,
    /// 3x3 neighborhood validity, row-major.
    pub validity: [bool; 9],
}

/// One training/evaluation sample: aligned center patches, downsampled
/// neighborhood images, and the binary change label.
#[derive(Debug, Clone, PartialEq)]
pub struct BiTemporalSample {
    pub center_t1: Raster<u8>,
    pub center_t2: Raster<u8>,
    /// Quantized factor-3 block averages of the 3s x 3s mosaics.
    pub neigh_t1: Raster<u8>,
    pub neigh_t2: Raster<u8>,
    pub label: Raster<u8>,
    pub meta: SampleMeta,
}

impl BiTemporalSample {
    pub fn patch_size(&self) -> usize {
        self.center_t1.height
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.patch_size();
        for (r, what) in [
            (&self.center_t1, "center_t1"),
            (&self.center_t2, "center_t2"),
            (&self.neigh_t1, "neigh_t1"),
            (&self.neigh_t2, "neigh_t2"),
        ] {
            if r.height != s || r.width != s || r.channels != 3 {
                return Err(Error::InvalidInput(format!(
                    "{} is {}x{}x{}, expected {}x{}x3",
                    what, r.height, r.width, r.channels, s, s
                )));
            }
        }
        if self.label.height != s || self.label.width != s || self.label.channels != 1 {
            return Err(Error::InvalidInput("label shape mismatch".to_string()));
        }
        if self.label.data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("label values must be 0/1".to_string()));
        }
        Ok(())
    }
}

fn imagery_to_chw(rasters: &[&Raster<u8>]) -> Tensor {
    let n = rasters.len();
    let (h, w) = (rasters[0].height, rasters[0].width);
    let mut t = Tensor::zeros([n, 3, h, w]);
    for (i, r) in rasters.iter().enumerate() {
        for ch in 0..3 {
            for row in 0..h {
                for col in 0..w {
                    *t.at_mut(i, ch, row, col) = r.get(row, col, ch) as f64 / 255.0;
                }
            }
        }
    }
    t
}

/// Stacks samples into network inputs (NCHW, [0,1]).
pub fn to_batch(samples: &[&BiTemporalSample], with_neighborhood: bool) -> BatchInput {
    BatchInput {
        center_t1: imagery_to_chw(&samples.iter().map(|s| &s.center_t1).collect::<Vec<_>>()),
        center_t2: imagery_to_chw(&samples.iter().map(|s| &s.center_t2).collect::<Vec<_>>()),
        neigh_t1: with_neighborhood
            .then(|| imagery_to_chw(&samples.iter().map(|s| &s.neigh_t1).collect::<Vec<_>>())),
        neigh_t2: with_neighborhood
            .then(|| imagery_to_chw(&samples.iter().map(|s| &s.neigh_t2).collect::<Vec<_>>())),
    }
}

/// Flattens labels batch-major, matching the loss op's expectations.
pub fn labels_flat(samples: &[&BiTemporalSample]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in samples {
        out.extend_from_slice(&s.label.data);
    }
    out
}

fn extract_sample(
    scene_id: &str,
    t1: &Raster<u8>,
    t2: &Raster<u8>,
    label: &Raster<u8>,
    tile: TileRef,
    tile_size: usize,
) -> Result<BiTemporalSample> {
    let center_t1 = t1.window(tile.origin.0, tile.origin.1, tile_size, tile_size)?;
    let center_t2 = t2.window(tile.origin.0, tile.origin.1, tile_size, tile_size)?;
    let label_patch = label.window(tile.origin.0, tile.origin.1, tile_size, tile_size)?;
    let m1 = assemble_window(t1, tile.origin, tile_size, PadPolicy::ReplicateEdge)?;
    let m2 = assemble_window(t2, tile.origin, tile_size, PadPolicy::ReplicateEdge)?;
    let neigh_t1 = quantize_u8(&geometry::downsample_neighborhood(&m1)?);
    let neigh_t2 = quantize_u8(&geometry::downsample_neighborhood(&m2)?);
    let sample = BiTemporalSample {
        center_t1,
        center_t2,
        neigh_t1,
        neigh_t2,
        label: label_patch,
        meta: SampleMeta {
            scene_id: scene_id.to_string(),
            tile,
            validity: m1.validity_bits(),
        },
    };
    sample.validate()?;
    Ok(sample)
}

/// Tiles a bitemporal scene pair into samples with precomputed
/// neighborhood images.
pub fn prepare_dataset(
    scene_id: &str,
    scene_t1: &Raster<u8>,
    scene_t2: &Raster<u8>,
    label_scene: &Raster<u8>,
    tile_size: usize,
    stride: usize,
) -> Result<Vec<BiTemporalSample>> {
    if !scene_t1.same_dims(scene_t2)
        || scene_t1.height != label_scene.height
        || scene_t1.width != label_scene.width
    {
        return Err(Error::InvalidInput(
            "scene pair and label dimensions differ".to_string(),
        ));
    }
    let grid = build_tile_grid(scene_t1.width, scene_t1.height, tile_size, stride)?;
    grid.tiles()
        .map(|tile| extract_sample(scene_id, scene_t1, scene_t2, label_scene, tile, tile_size))
        .collect()
}

/// Deterministic 6:2:2-style split: shuffle by seed, train and validation
/// sizes round to the nearest sample, the remainder is the test set.
pub fn split_indices(
    n: usize,
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidInput("cannot split an empty dataset".to_string()));
    }
    if ratios.0 == 0 || ratios.1 == 0 || ratios.2 == 0 {
        return Err(Error::InvalidInput("split ratios must be positive".to_string()));
    }
    let total = (ratios.0 + ratios.1 + ratios.2) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::derive(seed, seed_offset::SPLIT, 0);
    rng.shuffle(&mut order);
    let n_train = libm::round(n as f64 * ratios.0 as f64 / total) as usize;
    let n_val = libm::round(n as f64 * ratios.1 as f64 / total) as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    Ok((train, val, test))
}

/// Which augmentations are enabled and with what strength.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    /// Subset of {90, 180, 270} degrees.
    pub rotations: Vec<u16>,
    /// Relative brightness/contrast amplitude; applies to imagery only.
    pub color_jitter: f64,
    /// When set, training scenes are additionally re-tiled at this stride
    /// to raise the overlap rate.
    pub extra_overlap_stride: Option<usize>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            horizontal_flip: true,
            vertical_flip: true,
            rotations: vec![90, 180, 270],
            color_jitter: 0.1,
            extra_overlap_stride: None,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rotations.iter().any(|r| ![90, 180, 270].contains(r)) {
            return Err(Error::InvalidInput(format!(
                "rotations must be among 90/180/270, got {:?}",
                self.rotations
            )));
        }
        if !(0.0..1.0).contains(&self.color_jitter) {
            return Err(Error::InvalidInput("color jitter must be in [0,1)".to_string()));
        }
        Ok(())
    }
}

fn flip_h<T: Copy + Default>(r: &Raster<T>) -> Raster<T> {
    let mut out = Raster::zeros(r.height, r.width, r.channels);
    for row in 0..r.height {
        for col in 0..r.width {
            for ch in 0..r.channels {
                out.set(row, col, ch, r.get(row, r.width - 1 - col, ch));
            }
        }
    }
    out
}

fn flip_v<T: Copy + Default>(r: &Raster<T>) -> Raster<T> {
    let mut out = Raster::zeros(r.height, r.width, r.channels);
    for row in 0..r.height {
        for col in 0..r.width {
            for ch in 0..r.channels {
                out.set(row, col, ch, r.get(r.height - 1 - row, col, ch));
            }
        }
    }
    out
}

/// Clockwise rotation by 90/180/270 degrees; square rasters only.
fn rotate<T: Copy + Default>(r: &Raster<T>, degrees: u16) -> Raster<T> {
    debug_assert_eq!(r.height, r.width);
    let n = r.height;
    let mut out = Raster::zeros(n, n, r.channels);
    for row in 0..n {
        for col in 0..n {
            let (sr, sc) = match degrees {
                90 => (n - 1 - col, row),
                180 => (n - 1 - row, n - 1 - col),
                270 => (col, n - 1 - row),
                _ => (row, col),
            };
            for ch in 0..r.channels {
                out.set(row, col, ch, r.get(sr, sc, ch));
            }
        }
    }
    out
}

fn jitter(r: &Raster<u8>, brightness: f64, contrast: f64) -> Raster<u8> {
    r.map(|v| {
        let x = v as f64 / 255.0;
        let x = (x - 0.5) * contrast + 0.5 + brightness;
        libm::round(x.clamp(0.0, 1.0) * 255.0) as u8
    })
}

/// Applies a seed-determined sequence of enabled augmentations. Geometric
/// operations hit all five rasters identically; photometric jitter touches
/// imagery only and never the label.
pub fn augment(sample: &BiTemporalSample, spec: &AugmentationSpec, seed: u64) -> BiTemporalSample {
    let mut rng = Rng::derive(seed, seed_offset::AUGMENT, 0);
    let mut out = sample.clone();
    let geo = |f: &dyn Fn(&Raster<u8>) -> Raster<u8>, s: &mut BiTemporalSample| {
        s.center_t1 = f(&s.center_t1);
        s.center_t2 = f(&s.center_t2);
        s.neigh_t1 = f(&s.neigh_t1);
        s.neigh_t2 = f(&s.neigh_t2);
        s.label = f(&s.label);
    };
    if spec.horizontal_flip && rng.coin() {
        geo(&|r| flip_h(r), &mut out);
    }
    if spec.vertical_flip && rng.coin() {
        geo(&|r| flip_v(r), &mut out);
    }
    if !spec.rotations.is_empty() {
        let pick = rng.below(spec.rotations.len() + 1);
        if pick < spec.rotations.len() {
            let deg = spec.rotations[pick];
            geo(&move |r| rotate(r, deg), &mut out);
        }
    }
    if spec.color_jitter > 0.0 {
        let a = spec.color_jitter;
        let (b1, c1) = (rng.range_f64(-a, a), rng.range_f64(1.0 - a, 1.0 + a));
        let (b2, c2) = (rng.range_f64(-a, a), rng.range_f64(1.0 - a, 1.0 + a));
        out.center_t1 = jitter(&out.center_t1, b1, c1);
        out.neigh_t1 = jitter(&out.neigh_t1, b1, c1);
        out.center_t2 = jitter(&out.center_t2, b2, c2);
        out.neigh_t2 = jitter(&out.neigh_t2, b2, c2);
    }
    out
}

/// Kinds of grouped evaluation suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuiteKind {
    NeighborhoodRing,
    Scale,
    Misregistration,
    TargetSize,
}

/// One test set of a benchmark suite.
#[derive(Debug, Clone)]
pub struct BenchmarkSet {
    pub name: String,
    pub samples: Vec<BiTemporalSample>,
    /// Detection-region mask at its in-patch placement (ring suites).
    pub region_mask: Option<Raster<bool>>,
    /// Region origin within the patch (ring suites).
    pub region_origin: Option<(usize, usize)>,
    /// Degradation factor (scale suites).
    pub factor: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkGroup {
    pub name: String,
    pub sets: Vec<BenchmarkSet>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkSuite {
    pub kind: SuiteKind,
    pub groups: Vec<BenchmarkGroup>,
    pub seed: u64,
    pub params: String,
}

/// Re-crops the scene so one fixed detection region lands at the four
/// corner placements of each ring band: 4 groups x 4 test sets. The
/// region's pixel content is bit-identical across all 16 sets.
pub fn generate_neighborhood_benchmark(
    scene_t1: &Raster<u8>,
    scene_t2: &Raster<u8>,
    label_scene: &Raster<u8>,
    tile_size: usize,
    seed: u64,
    regions: usize,
) -> Result<BenchmarkSuite> {
    if tile_size % 8 != 0 {
        return Err(Error::InvalidGeometry(format!(
            "tile size {} not divisible by 8",
            tile_size
        )));
    }
    let s = tile_size;
    let region = s / 8;
    let (h, w) = (scene_t1.height, scene_t1.width);
    // the detection region must keep >= 2s margin so every re-crop and its
    // mosaic stay inside the scene
    if h < 4 * s + region || w < 4 * s + region {
        return Err(Error::InvalidGeometry(format!(
            "scene {}x{} too small for tile size {} (needs >= {})",
            h,
            w,
            s,
            4 * s + region
        )));
    }
    let mut rng = Rng::derive(seed, seed_offset::BENCH, 0);
    let region_origins: Vec<(usize, usize)> = (0..regions.max(1))
        .map(|_| {
            (
                2 * s + rng.below(h - 4 * s - region + 1),
                2 * s + rng.below(w - 4 * s - region + 1),
            )
        })
        .collect();
    let mut groups = Vec::with_capacity(4);
    for band in BAND_NAMES {
        let placements = band_corner_placements(s, band)?;
        let mut sets = Vec::with_capacity(4);
        for (pi, &placement) in placements.iter().enumerate() {
            let mut samples = Vec::new();
            for (ri, &(rr, rc)) in region_origins.iter().enumerate() {
                let origin = (rr - placement.0, rc - placement.1);
                let tile = TileRef {
                    grid_row: 0,
                    grid_col: 0,
                    origin,
                };
                let scene_id = format!("bench_r{ri}");
                samples.push(extract_sample(
                    &scene_id, scene_t1, scene_t2, label_scene, tile, s,
                )?);
            }
            let mut mask = Raster::<bool>::zeros(s, s, 1);
            for r in 0..region {
                for c in 0..region {
                    mask.set(placement.0 + r, placement.1 + c, 0, true);
                }
            }
            sets.push(BenchmarkSet {
                name: format!("{}_corner{}", band.as_str(), pi),
                samples,
                region_mask: Some(mask),
                region_origin: Some(placement),
                factor: None,
            });
        }
        groups.push(BenchmarkGroup {
            name: band.as_str().to_string(),
            sets,
        });
    }
    Ok(BenchmarkSuite {
        kind: SuiteKind::NeighborhoodRing,
        groups,
        seed,
        params: format!("tile_size={s} regions={}", regions.max(1)),
    })
}

/// Block-average by `factor`, then nearest-neighbor restore to the original
/// size: the paper's resolution degradation.
pub fn degrade(r: &Raster<u8>, factor: usize) -> Result<Raster<u8>> {
    if factor == 1 {
        return Ok(r.clone());
    }
    let small = quantize_u8(&geometry::block_average(&r.map(|v| v as f64), factor)?);
    let mut out = Raster::<u8>::zeros(r.height, r.width, r.channels);
    for row in 0..r.height {
        for col in 0..r.width {
            for ch in 0..r.channels {
                out.set(row, col, ch, small.get(row / factor, col / factor, ch));
            }
        }
    }
    Ok(out)
}

/// Builds the scale suite: the original test set plus one degraded copy per
/// factor. Labels are left untouched.
pub fn generate_scale_benchmark(
    test_samples: &[BiTemporalSample],
    factors: &[usize],
) -> Result<BenchmarkSuite> {
    if test_samples.is_empty() {
        return Err(Error::InvalidInput("empty test manifest".to_string()));
    }
    let s = test_samples[0].patch_size();
    let max_factor = factors.iter().copied().max().unwrap_or(1);
    if max_factor == 0 || s % max_factor != 0 {
        return Err(Error::InvalidGeometry(format!(
            "patch size {} not divisible by factor {}",
            s, max_factor
        )));
    }
    let mut sets = vec![BenchmarkSet {
        name: "f1".to_string(),
        samples: test_samples.to_vec(),
        region_mask: None,
        region_origin: None,
        factor: Some(1),
    }];
    for &f in factors {
        let samples = test_samples
            .iter()
            .map(|sample| -> Result<BiTemporalSample> {
                let mut out = sample.clone();
                out.center_t1 = degrade(&sample.center_t1, f)?;
                out.center_t2 = degrade(&sample.center_t2, f)?;
                out.neigh_t1 = degrade(&sample.neigh_t1, f)?;
                out.neigh_t2 = degrade(&sample.neigh_t2, f)?;
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        sets.push(BenchmarkSet {
            name: format!("f{f}"),
            samples,
            region_mask: None,
            region_origin: None,
            factor: Some(f),
        });
    }
    Ok(BenchmarkSuite {
        kind: SuiteKind::Scale,
        groups: vec![BenchmarkGroup {
            name: "scale".to_string(),
            sets,
        }],
        seed: 0,
        params: format!("factors={:?}", factors),
    })
}

/// Translates the T2 rasters by (dr, dc) pixels with replicate-edge fill,
/// modeling residual misregistration. T1 and labels stay unchanged.
pub fn generate_misregistered(
    samples: &[BiTemporalSample],
    shift: (i64, i64),
) -> Vec<BiTemporalSample> {
    samples
        .iter()
        .map(|s| {
            let mut out = s.clone();
            out.center_t2 = s.center_t2.translate(shift.0, shift.1);
            out.neigh_t2 = s.neigh_t2.translate(shift.0, shift.1);
            out
        })
        .collect()
}

/// Largest 4-connected component area of a binary raster.
pub fn max_component_area(label: &Raster<u8>) -> usize {
    let (h, w) = (label.height, label.width);
    let mut seen = vec![false; h * w];
    let mut best = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if label.data[start] != 1 || seen[start] {
            continue;
        }
        let mut area = 0;
        stack.push(start);
        seen[start] = true;
        while let Some(px) = stack.pop() {
            area += 1;
            let (r, c) = (px / w, px % w);
            let mut visit = |rr: usize, cc: usize| {
                let i = rr * w + cc;
                if label.data[i] == 1 && !seen[i] {
                    seen[i] = true;
                    stack.push(i);
                }
            };
            if r > 0 {
                visit(r - 1, c);
            }
            if r + 1 < h {
                visit(r + 1, c);
            }
            if c > 0 {
                visit(r, c - 1);
            }
            if c + 1 < w {
                visit(r, c + 1);
            }
        }
        best = best.max(area);
    }
    best
}

/// Empirical tercile thresholds of max-component areas over a set.
pub fn tercile_thresholds(samples: &[BiTemporalSample]) -> (usize, usize) {
    let mut areas: Vec<usize> = samples.iter().map(|s| max_component_area(&s.label)).collect();
    areas.sort_unstable();
    let n = areas.len().max(1);
    (areas[n / 3], areas[(2 * n) / 3])
}

/// Splits a test set into small/medium/large subsets by the maximum
/// connected-component area of each label. Zero-change samples go to
/// `small`.
pub fn stratify_by_target_size(
    samples: &[BiTemporalSample],
    thresholds: (usize, usize),
) -> Result<[Vec<BiTemporalSample>; 3]> {
    let (a1, a2) = thresholds;
    if a1 >= a2 {
        return Err(Error::InvalidInput(format!(
            "thresholds must satisfy a1 < a2, got ({a1}, {a2})"
        )));
    }
    let mut out: [Vec<BiTemporalSample>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for s in samples {
        let area = max_component_area(&s.label);
        let idx = if area < a1 {
            0
        } else if area < a2 {
            1
        } else {
            2
        };
        out[idx].push(s.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::assemble_neighborhood;
    use crate::synth::{synthesize_scene, SynthParams};

    fn scene(seed: u64, side: usize) -> crate::synth::SceneSynthesis {
        synthesize_scene(seed, side, side, &SynthParams::default()).unwrap()
    }

    #[test]
    fn prepare_768_gives_9_samples_with_valid_center() {
        let s = scene(1, 768);
        let samples = prepare_dataset("sc", &s.t1, &s.t2, &s.label, 256, 256).unwrap();
        assert_eq!(samples.len(), 9);
        // the middle tile of the 3x3 grid has every neighbor
        let center = &samples[4];
        assert!(center.meta.validity.iter().all(|&v| v));
    }

    #[test]
    fn prepare_512_corner_validity() {
        let s = scene(2, 512);
        let samples = prepare_dataset("sc", &s.t1, &s.t2, &s.label, 256, 256).unwrap();
        assert_eq!(samples.len(), 4);
        for sample in &samples {
            // corner tiles: center plus 3 real neighbors, 5 padded cells
            let valid = sample.meta.validity.iter().filter(|&&v| v).count();
            assert_eq!(valid, 4);
            assert!(sample.meta.validity[4]);
        }
    }

    #[test]
    fn neighborhood_recomputation_oracle() {
        let s = scene(3, 768);
        let samples = prepare_dataset("sc", &s.t1, &s.t2, &s.label, 256, 256).unwrap();
        let grid = build_tile_grid(768, 768, 256, 256).unwrap();
        for (sample, tile) in samples.iter().zip(grid.tiles()) {
            let mosaic =
                assemble_neighborhood(&s.t1, &grid, &tile, PadPolicy::ReplicateEdge).unwrap();
            let expect = quantize_u8(&geometry::downsample_neighborhood(&mosaic).unwrap());
            assert_eq!(sample.neigh_t1, expect);
        }
    }

    #[test]
    fn prepare_rejects_dimension_mismatch() {
        let s = scene(4, 512);
        let bad = Raster::<u8>::zeros(256, 512, 1);
        assert!(prepare_dataset("sc", &s.t1, &s.t2, &bad, 256, 256).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (tr, va, te) = split_indices(10, (6, 2, 2), 7).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (6, 2, 2));
        let (tr2, va2, te2) = split_indices(10, (6, 2, 2), 7).unwrap();
        assert_eq!((tr, va, te), (tr2, va2, te2));

        // the paper-sized case: 2693 -> (1616, 539, 538)
        let (tr, va, te) = split_indices(2693, (6, 2, 2), 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (1616, 539, 538));
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let (tr, va, te) = split_indices(101, (6, 2, 2), 99).unwrap();
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_empty() {
        assert!(split_indices(0, (6, 2, 2), 1).is_err());
    }

    fn marked_sample(side: usize) -> BiTemporalSample {
        let mut sample = BiTemporalSample {
            center_t1: Raster::zeros(side, side, 3),
            center_t2: Raster::zeros(side, side, 3),
            neigh_t1: Raster::zeros(side, side, 3),
            neigh_t2: Raster::zeros(side, side, 3),
            label: Raster::zeros(side, side, 1),
            meta: SampleMeta {
                scene_id: "m".to_string(),
                tile: TileRef {
                    grid_row: 0,
                    grid_col: 0,
                    origin: (0, 0),
                },
                validity: [true; 9],
            },
        };
        sample.center_t1.set(3, 5, 0, 255);
        sample.label.set(3, 5, 0, 1);
        sample
    }

    #[test]
    fn flip_moves_image_and_label_together() {
        let sample = marked_sample(16);
        let spec = AugmentationSpec {
            horizontal_flip: true,
            vertical_flip: false,
            rotations: vec![],
            color_jitter: 0.0,
            extra_overlap_stride: None,
        };
        // find a seed whose coin lands on flip
        let mut flipped = None;
        for seed in 0..32 {
            let aug = augment(&sample, &spec, seed);
            if aug != sample {
                flipped = Some(aug);
                break;
            }
        }
        let aug = flipped.expect("some seed must flip");
        assert_eq!(aug.center_t1.get(3, 10, 0), 255);
        assert_eq!(aug.label.get(3, 10, 0), 1);
        assert_eq!(aug.center_t1.get(3, 5, 0), 0);
    }

    #[test]
    fn rotation_180_twice_is_identity() {
        let sample = marked_sample(16);
        let once = {
            let mut s = sample.clone();
            s.center_t1 = rotate(&s.center_t1, 180);
            s.label = rotate(&s.label, 180);
            s
        };
        let twice = {
            let mut s = once.clone();
            s.center_t1 = rotate(&s.center_t1, 180);
            s.label = rotate(&s.label, 180);
            s
        };
        assert_eq!(twice, sample);
        assert_ne!(once, sample);
    }

    #[test]
    fn color_jitter_never_touches_label() {
        let sample = marked_sample(16);
        let spec = AugmentationSpec {
            horizontal_flip: false,
            vertical_flip: false,
            rotations: vec![],
            color_jitter: 0.3,
            extra_overlap_stride: None,
        };
        for seed in 0..8 {
            let aug = augment(&sample, &spec, seed);
            assert_eq!(aug.label, sample.label);
        }
    }

    #[test]
    fn neighborhood_benchmark_structure_and_content_invariance() {
        let sc = scene(5, 9 * 64);
        let suite =
            generate_neighborhood_benchmark(&sc.t1, &sc.t2, &sc.label, 64, 11, 1).unwrap();
        assert_eq!(suite.groups.len(), 4);
        let region = 64 / 8;
        let mut reference: Option<Vec<u8>> = None;
        let mut total_sets = 0;
        for group in &suite.groups {
            assert_eq!(group.sets.len(), 4);
            for set in &group.sets {
                total_sets += 1;
                let (pr, pc) = set.region_origin.unwrap();
                let mask = set.region_mask.as_ref().unwrap();
                assert_eq!(mask.data.iter().filter(|&&v| v).count(), region * region);
                let window = set.samples[0]
                    .center_t1
                    .window(pr, pc, region, region)
                    .unwrap();
                match &reference {
                    None => reference = Some(window.data),
                    Some(r) => assert_eq!(&window.data, r, "set {}", set.name),
                }
            }
        }
        assert_eq!(total_sets, 16);
    }

    #[test]
    fn neighborhood_benchmark_rejects_small_scene() {
        let sc = scene(6, 128);
        assert!(generate_neighborhood_benchmark(&sc.t1, &sc.t2, &sc.label, 64, 1, 1).is_err());
    }

    #[test]
    fn scale_benchmark_block_constancy() {
        let sc = scene(7, 256);
        let samples = prepare_dataset("sc", &sc.t1, &sc.t2, &sc.label, 64, 64).unwrap();
        let suite = generate_scale_benchmark(&samples, &[2, 4, 8, 16]).unwrap();
        assert_eq!(suite.groups[0].sets.len(), 5);
        for set in &suite.groups[0].sets {
            let f = set.factor.unwrap();
            for sample in &set.samples {
                for r in (0..64).step_by(f.max(1)) {
                    for c in (0..64).step_by(f.max(1)) {
                        let v = sample.center_t1.get(r, c, 0);
                        for br in 0..f {
                            for bc in 0..f {
                                assert_eq!(sample.center_t1.get(r + br, c + bc, 0), v);
                            }
                        }
                    }
                }
                // labels untouched
            }
        }
        // factor-1 set is the original
        assert_eq!(suite.groups[0].sets[0].samples, samples);
    }

    #[test]
    fn degrade_checkerboard_to_gray() {
        let mut board = Raster::<u8>::zeros(4, 4, 1);
        for r in 0..4 {
            for c in 0..4 {
                board.set(r, c, 0, if (r + c) % 2 == 0 { 0 } else { 200 });
            }
        }
        let out = degrade(&board, 2).unwrap();
        assert!(out.data.iter().all(|&v| v == 100));
    }

    #[test]
    fn misregistration_shift_and_identity() {
        let sc = scene(8, 256);
        let samples = prepare_dataset("sc", &sc.t1, &sc.t2, &sc.label, 64, 64).unwrap();
        let same = generate_misregistered(&samples, (0, 0));
        assert_eq!(same, samples);
        let shifted = generate_misregistered(&samples, (0, 3));
        assert_eq!(
            shifted[0].center_t2.get(10, 13, 1),
            samples[0].center_t2.get(10, 10, 1)
        );
        assert_eq!(shifted[0].center_t1, samples[0].center_t1);
        assert_eq!(shifted[0].label, samples[0].label);
        // shifting back recovers the interior
        let back = generate_misregistered(&shifted, (0, -3));
        for c in 3..61 {
            assert_eq!(
                back[0].center_t2.get(20, c, 0),
                samples[0].center_t2.get(20, c, 0)
            );
        }
    }

    #[test]
    fn stratification_against_flood_fill() {
        let sc = scene(9, 320);
        let samples = prepare_dataset("sc", &sc.t1, &sc.t2, &sc.label, 64, 64).unwrap();
        let thr = tercile_thresholds(&samples);
        let thr = if thr.0 >= thr.1 { (thr.0, thr.0 + 1) } else { thr };
        let strata = stratify_by_target_size(&samples, thr).unwrap();
        assert_eq!(
            strata.iter().map(|s| s.len()).sum::<usize>(),
            samples.len()
        );
        // all-zero labels land in `small`
        let mut zero = samples[0].clone();
        zero.label = Raster::zeros(64, 64, 1);
        let out = stratify_by_target_size(&[zero], (10, 100)).unwrap();
        assert_eq!(out[0].len(), 1);
        // a 10x10 square (area 100) with thresholds (200, 2000) is small
        let mut sq = samples[0].clone();
        sq.label = Raster::zeros(64, 64, 1);
        for r in 0..10 {
            for c in 0..10 {
                sq.label.set(20 + r, 20 + c, 0, 1);
            }
        }
        assert_eq!(max_component_area(&sq.label), 100);
        let out = stratify_by_target_size(&[sq], (200, 2000)).unwrap();
        assert_eq!(out[0].len(), 1);
    }
}
