//! Scene tiling, 8-neighborhood mosaics, prediction stitching and the
//! ring-band masks used by the neighborhood benchmark.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Deterministic tiling of a scene into `tile_size` patches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub scene_width: usize,
    pub scene_height: usize,
    pub tile_size: usize,
    pub stride: usize,
    /// Row-major, unique (row, col) pixel origins.
    pub origins: Vec<(usize, usize)>,
    rows: usize,
    cols: usize,
}

/// One tile of a grid, addressed both by grid index and pixel origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRef {
    pub grid_row: usize,
    pub grid_col: usize,
    pub origin: (usize, usize),
}

/// How out-of-scene mosaic cells are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PadPolicy {
    ReplicateEdge,
}

/// A 3s x 3s mosaic of a tile and its 8 neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodMosaic {
    pub pixels: Raster<u8>,
    /// True where the cell came from a real neighbor tile.
    pub validity: [[bool; 3]; 3],
    pub pad_policy: PadPolicy,
}

/// Ring bands of a patch, outermost to innermost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandName {
    Outer,
    Middle,
    Inner,
    Core,
}

pub const BAND_NAMES: [BandName; 4] = [
    BandName::Outer,
    BandName::Middle,
    BandName::Inner,
    BandName::Core,
];

impl BandName {
    pub fn as_str(&self) -> &'static str {
        match self {
            BandName::Outer => "outer",
            BandName::Middle => "middle",
            BandName::Inner => "inner",
            BandName::Core => "core",
        }
    }
}

/// A named band with its boolean membership mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBand {
    pub name: BandName,
    pub mask: Raster<bool>,
}

fn axis_origins(dim: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut origins = Vec::new();
    let mut pos = 0;
    loop {
        origins.push(pos);
        if pos + tile >= dim {
            break;
        }
        pos += stride;
        if pos + tile > dim {
            origins.push(dim - tile);
            break;
        }
    }
    origins
}

/// Enumerates stride-spaced tile origins, appending an edge-anchored final
/// tile per axis when the stride does not reach the scene edge exactly.
pub fn build_tile_grid(
    scene_width: usize,
    scene_height: usize,
    tile_size: usize,
    stride: usize,
) -> Result<TileGrid> {
    if tile_size == 0 || tile_size > scene_width || tile_size > scene_height {
        return Err(Error::InvalidGeometry(format!(
            "tile size {} does not fit scene {}x{}",
            tile_size, scene_height, scene_width
        )));
    }
    if stride == 0 || stride > tile_size {
        return Err(Error::InvalidGeometry(format!(
            "stride {} must be in 1..={}",
            stride, tile_size
        )));
    }
    let row_origins = axis_origins(scene_height, tile_size, stride);
    let col_origins = axis_origins(scene_width, tile_size, stride);
    let mut origins = Vec::with_capacity(row_origins.len() * col_origins.len());
    for &r in &row_origins {
        for &c in &col_origins {
            origins.push((r, c));
        }
    }
    Ok(TileGrid {
        scene_width,
        scene_height,
        tile_size,
        stride,
        origins,
        rows: row_origins.len(),
        cols: col_origins.len(),
    })
}

impl TileGrid {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn tile(&self, grid_row: usize, grid_col: usize) -> Result<TileRef> {
        if grid_row >= self.rows || grid_col >= self.cols {
            return Err(Error::InvalidGeometry(format!(
                "tile ({},{}) outside {}x{} grid",
                grid_row, grid_col, self.rows, self.cols
            )));
        }
        Ok(TileRef {
            grid_row,
            grid_col,
            origin: self.origins[grid_row * self.cols + grid_col],
        })
    }

    pub fn tiles(&self) -> impl Iterator<Item = TileRef> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| self.tile(r, c).unwrap()))
    }
}

/// Extracts the tile's pixels from the scene, bit-exactly.
pub fn crop_patch(scene: &Raster<u8>, tile: &TileRef, tile_size: usize) -> Result<Raster<u8>> {
    scene.window(tile.origin.0, tile.origin.1, tile_size, tile_size)
}

/// Assembles the 3s x 3s window centered on `tile`, filling out-of-scene
/// pixels per `pad_policy` and recording which cells hold real neighbors.
///
/// Requires an abutting grid (stride == tile_size): neighborhood semantics
/// are only well-defined when neighbor tiles share edges with the center.
pub fn assemble_neighborhood(
    scene: &Raster<u8>,
    grid: &TileGrid,
    tile: &TileRef,
    pad_policy: PadPolicy,
) -> Result<NeighborhoodMosaic> {
    if grid.stride != grid.tile_size {
        return Err(Error::InvalidGeometry(format!(
            "neighborhood mosaics need stride == tile_size, got {} != {}",
            grid.stride, grid.tile_size
        )));
    }
    if scene.height != grid.scene_height || scene.width != grid.scene_width {
        return Err(Error::Shape(format!(
            "scene {}x{} does not match grid {}x{}",
            scene.height, scene.width, grid.scene_height, grid.scene_width
        )));
    }
    let expected = grid.tile(tile.grid_row, tile.grid_col)?;
    if expected.origin != tile.origin {
        return Err(Error::InvalidGeometry(format!(
            "tile origin {:?} does not match grid entry {:?}",
            tile.origin, expected.origin
        )));
    }
    let s = grid.tile_size;
    let (or, oc) = tile.origin;
    let mut pixels = Raster::<u8>::zeros(3 * s, 3 * s, scene.channels);
    let mut validity = [[false; 3]; 3];
    for cell_r in 0..3usize {
        for cell_c in 0..3usize {
            let nr = tile.grid_row as i64 + cell_r as i64 - 1;
            let nc = tile.grid_col as i64 + cell_c as i64 - 1;
            validity[cell_r][cell_c] = nr >= 0
                && nc >= 0
                && (nr as usize) < grid.rows()
                && (nc as usize) < grid.cols();
        }
    }
    // Fill pixel-by-pixel from clamped scene coordinates; for in-scene
    // pixels this is the exact neighbor content, outside it replicates
    // the nearest edge pixel.
    let PadPolicy::ReplicateEdge = pad_policy;
    for r in 0..3 * s {
        let sr = (or as i64 + r as i64 - s as i64).clamp(0, scene.height as i64 - 1) as usize;
        for c in 0..3 * s {
            let sc = (oc as i64 + c as i64 - s as i64).clamp(0, scene.width as i64 - 1) as usize;
            for ch in 0..scene.channels {
                pixels.set(r, c, ch, scene.get(sr, sc, ch));
            }
        }
    }
    Ok(NeighborhoodMosaic {
        pixels,
        validity,
        pad_policy,
    })
}

/// Assembles a 3s x 3s neighborhood window around an arbitrary tile origin,
/// independent of any grid. Validity marks the cells whose full window lies
/// inside the scene. Used for overlap re-tiling and benchmark re-crops,
/// where tiles do not sit on an abutting grid.
pub fn assemble_window(
    scene: &Raster<u8>,
    origin: (usize, usize),
    tile_size: usize,
    pad_policy: PadPolicy,
) -> Result<NeighborhoodMosaic> {
    let s = tile_size;
    let (or, oc) = origin;
    if or + s > scene.height || oc + s > scene.width {
        return Err(Error::InvalidGeometry(format!(
            "tile {}x{} at {:?} exceeds scene {}x{}",
            s, s, origin, scene.height, scene.width
        )));
    }
    let mut validity = [[false; 3]; 3];
    for (cell_r, row) in validity.iter_mut().enumerate() {
        for (cell_c, v) in row.iter_mut().enumerate() {
            let r0 = or as i64 + (cell_r as i64 - 1) * s as i64;
            let c0 = oc as i64 + (cell_c as i64 - 1) * s as i64;
            *v = r0 >= 0
                && c0 >= 0
                && (r0 + s as i64) <= scene.height as i64
                && (c0 + s as i64) <= scene.width as i64;
        }
    }
    let PadPolicy::ReplicateEdge = pad_policy;
    let mut pixels = Raster::<u8>::zeros(3 * s, 3 * s, scene.channels);
    for r in 0..3 * s {
        let sr = (or as i64 + r as i64 - s as i64).clamp(0, scene.height as i64 - 1) as usize;
        for c in 0..3 * s {
            let sc = (oc as i64 + c as i64 - s as i64).clamp(0, scene.width as i64 - 1) as usize;
            for ch in 0..scene.channels {
                pixels.set(r, c, ch, scene.get(sr, sc, ch));
            }
        }
    }
    Ok(NeighborhoodMosaic {
        pixels,
        validity,
        pad_policy,
    })
}

impl NeighborhoodMosaic {
    pub fn side(&self) -> usize {
        self.pixels.height
    }

    /// The central s x s block, which equals the center tile bit-exactly.
    pub fn center_block(&self) -> Raster<u8> {
        let s = self.side() / 3;
        self.pixels.window(s, s, s, s).unwrap()
    }

    pub fn validity_bits(&self) -> [bool; 9] {
        let mut bits = [false; 9];
        for r in 0..3 {
            for c in 0..3 {
                bits[r * 3 + c] = self.validity[r][c];
            }
        }
        bits
    }
}

/// Factor-3 block-average reduction of a mosaic back to the patch size.
pub fn downsample_neighborhood(mosaic: &NeighborhoodMosaic) -> Result<Raster<f64>> {
    block_average(&mosaic.pixels.map(|v| v as f64), 3)
}

/// Block-average downsample by `factor`; the raster side must divide.
pub fn block_average(raster: &Raster<f64>, factor: usize) -> Result<Raster<f64>> {
    if factor == 0 || raster.height % factor != 0 || raster.width % factor != 0 {
        return Err(Error::InvalidGeometry(format!(
            "raster {}x{} not divisible by factor {}",
            raster.height, raster.width, factor
        )));
    }
    let oh = raster.height / factor;
    let ow = raster.width / factor;
    let mut out = Raster::<f64>::zeros(oh, ow, raster.channels);
    let norm = 1.0 / (factor * factor) as f64;
    for r in 0..oh {
        for c in 0..ow {
            for ch in 0..raster.channels {
                let mut acc = 0.0;
                for br in 0..factor {
                    for bc in 0..factor {
                        acc += raster.get(r * factor + br, c * factor + bc, ch);
                    }
                }
                out.set(r, c, ch, acc * norm);
            }
        }
    }
    Ok(out)
}

/// Rounds a float raster to u8 (nearest, clamped). Used when block-averaged
/// imagery is stored back into 8-bit files.
pub fn quantize_u8(raster: &Raster<f64>) -> Raster<u8> {
    raster.map(|v| libm::round(v).clamp(0.0, 255.0) as u8)
}

/// How overlapping per-tile probabilities are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendPolicy {
    /// Average class probabilities over covering tiles, then argmax;
    /// ties resolve to the unchanged class.
    AverageProbability,
}

/// Stitches per-tile 2-class probability maps back into a scene-sized
/// binary change map.
pub fn stitch(
    grid: &TileGrid,
    patch_probability_maps: &[Raster<f64>],
    _blend: BlendPolicy,
) -> Result<Raster<u8>> {
    if patch_probability_maps.len() != grid.len() {
        return Err(Error::Contract(format!(
            "expected {} tile maps, got {}",
            grid.len(),
            patch_probability_maps.len()
        )));
    }
    let s = grid.tile_size;
    for (i, map) in patch_probability_maps.iter().enumerate() {
        if map.height != s || map.width != s || map.channels != 2 {
            return Err(Error::Shape(format!(
                "tile map {} is {}x{}x{}, expected {}x{}x2",
                i, map.height, map.width, map.channels, s, s
            )));
        }
        for px in 0..s * s {
            let p0 = map.data[px * 2];
            let p1 = map.data[px * 2 + 1];
            if libm::fabs(p0 + p1 - 1.0) > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "tile map {} pixel {} probabilities sum to {}",
                    i,
                    px,
                    p0 + p1
                )));
            }
        }
    }
    let mut acc = Raster::<f64>::zeros(grid.scene_height, grid.scene_width, 2);
    let mut cover = vec![0u32; grid.scene_height * grid.scene_width];
    for (tile, map) in grid.tiles().zip(patch_probability_maps) {
        let (or, oc) = tile.origin;
        for r in 0..s {
            for c in 0..s {
                let i = acc.idx(or + r, oc + c, 0);
                acc.data[i] += map.get(r, c, 0);
                acc.data[i + 1] += map.get(r, c, 1);
                cover[(or + r) * grid.scene_width + oc + c] += 1;
            }
        }
    }
    let mut out = Raster::<u8>::zeros(grid.scene_height, grid.scene_width, 1);
    for px in 0..grid.scene_height * grid.scene_width {
        debug_assert!(cover[px] > 0, "grid coverage invariant violated");
        let p0 = acc.data[px * 2];
        let p1 = acc.data[px * 2 + 1];
        out.data[px] = if p1 > p0 { 1 } else { 0 };
    }
    Ok(out)
}

/// Splits an s x s patch into outer/middle/inner rings of width s/8 plus
/// the central core square of side s/4.
pub fn ring_masks(patch_size: usize) -> Result<[RegionBand; 4]> {
    if patch_size == 0 || patch_size % 8 != 0 {
        return Err(Error::InvalidGeometry(format!(
            "patch size {} not divisible by 8",
            patch_size
        )));
    }
    let s = patch_size;
    let w = s / 8;
    let band_of = |r: usize, c: usize| -> usize {
        // distance to the nearest border
        let d = r.min(c).min(s - 1 - r).min(s - 1 - c);
        (d / w).min(3)
    };
    let mut masks: Vec<Raster<bool>> = (0..4).map(|_| Raster::zeros(s, s, 1)).collect();
    for r in 0..s {
        for c in 0..s {
            masks[band_of(r, c)].set(r, c, 0, true);
        }
    }
    let mut it = masks.into_iter();
    Ok([
        RegionBand {
            name: BandName::Outer,
            mask: it.next().unwrap(),
        },
        RegionBand {
            name: BandName::Middle,
            mask: it.next().unwrap(),
        },
        RegionBand {
            name: BandName::Inner,
            mask: it.next().unwrap(),
        },
        RegionBand {
            name: BandName::Core,
            mask: it.next().unwrap(),
        },
    ])
}

/// Corner origins of an (s/8)-sided detection region inside each band of an
/// s-sided patch. Outer/middle/inner corners sit at the band's four corner
/// squares; the core's are its four corner quadrants.
pub fn band_corner_placements(patch_size: usize, band: BandName) -> Result<[(usize, usize); 4]> {
    if patch_size % 8 != 0 {
        return Err(Error::InvalidGeometry(format!(
            "patch size {} not divisible by 8",
            patch_size
        )));
    }
    let s = patch_size;
    let w = s / 8;
    let (lo, hi) = match band {
        BandName::Outer => (0, s - w),
        BandName::Middle => (w, s - 2 * w),
        BandName::Inner => (2 * w, s - 3 * w),
        BandName::Core => (3 * w, s - 4 * w),
    };
    Ok([(lo, lo), (lo, hi), (hi, lo), (hi, hi)])
}
