//! Synthetic bitemporal scene generation: textured background, convex
//! "mine" polygons, and change events between the two epochs. Desk-scale
//! stand-in for real imagery; fully determined by the seed.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::rng::{seed_offset, Rng};

/// Convex polygon in (row, col) pixel coordinates.
pub type Polygon = Vec<(f64, f64)>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Mine sites present at T1.
    pub num_sites: usize,
    /// Change events applied for T2: grown, shrunk, added or removed sites.
    pub change_events: usize,
    /// Mean site radius in pixels.
    pub mean_radius: f64,
    /// Amplitude of the background texture variation (0..1).
    pub texture_amplitude: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            num_sites: 6,
            change_events: 4,
            mean_radius: 40.0,
            texture_amplitude: 0.25,
        }
    }
}

/// Generator output: both epochs, the change label, and the polygon lists
/// the label was rasterized from (kept for independent verification).
#[derive(Debug, Clone)]
pub struct SceneSynthesis {
    pub t1: Raster<u8>,
    pub t2: Raster<u8>,
    pub label: Raster<u8>,
    pub sites_t1: Vec<Polygon>,
    pub sites_t2: Vec<Polygon>,
}

/// Convex hull (Andrew monotone chain), counter-clockwise in (row, col).
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Polygon {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().chain(pts.iter().rev().skip(1)) {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    // contains() expects counter-clockwise orientation in the (col, row)
    // plane, which is clockwise in (row, col)
    hull.reverse();
    hull
}

fn random_convex_polygon(rng: &mut Rng, center: (f64, f64), radius: f64) -> Polygon {
    let n = 6 + rng.below(6);
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let a = rng.uniform() * core::f64::consts::TAU;
            let r = radius * (0.4 + 0.6 * rng.uniform());
            (center.0 + r * libm::sin(a), center.1 + r * libm::cos(a))
        })
        .collect();
    convex_hull(pts)
}

fn scale_polygon(poly: &Polygon, factor: f64) -> Polygon {
    let (mut cr, mut cc) = (0.0, 0.0);
    for &(r, c) in poly {
        cr += r;
        cc += c;
    }
    cr /= poly.len() as f64;
    cc /= poly.len() as f64;
    poly.iter()
        .map(|&(r, c)| (cr + (r - cr) * factor, cc + (c - cc) * factor))
        .collect()
}

/// Point-in-convex-polygon via consistent cross-product sign. Vertices are
/// ordered by angle, so the polygon is convex and counter-clockwise.
fn contains(poly: &Polygon, r: f64, c: f64) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (r1, c1) = poly[i];
        let (r2, c2) = poly[(i + 1) % n];
        let cross = (c2 - c1) * (r - r1) - (r2 - r1) * (c - c1);
        if cross < 0.0 {
            return false;
        }
    }
    true
}

/// Rasterizes the union of polygons into a binary mask (pixel centers).
pub fn rasterize_union(polys: &[Polygon], height: usize, width: usize) -> Raster<u8> {
    let mut mask = Raster::<u8>::zeros(height, width, 1);
    for poly in polys {
        let (mut r0, mut r1, mut c0, mut c1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(r, c) in poly {
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
        let rr0 = r0.max(0.0) as usize;
        let rr1 = (libm::ceil(r1).max(0.0) as usize).min(height.saturating_sub(1));
        let cc0 = c0.max(0.0) as usize;
        let cc1 = (libm::ceil(c1).max(0.0) as usize).min(width.saturating_sub(1));
        for r in rr0..=rr1.min(height - 1) {
            for c in cc0..=cc1 {
                if mask.get(r, c, 0) == 0 && contains(poly, r as f64 + 0.5, c as f64 + 0.5) {
                    mask.set(r, c, 0, 1);
                }
            }
        }
    }
    mask
}

fn background(rng: &mut Rng, height: usize, width: usize, amplitude: f64) -> Raster<f64> {
    // a few low-frequency cosine plaids plus fine per-pixel noise
    let mut waves = Vec::new();
    for _ in 0..4 {
        waves.push((
            rng.range_f64(0.5, 3.0) * core::f64::consts::TAU / height.max(1) as f64,
            rng.range_f64(0.5, 3.0) * core::f64::consts::TAU / width.max(1) as f64,
            rng.uniform() * core::f64::consts::TAU,
            rng.range_f64(0.3, 1.0),
        ));
    }
    let mut out = Raster::<f64>::zeros(height, width, 3);
    for r in 0..height {
        for c in 0..width {
            let mut v = 0.0;
            for &(fr, fc, ph, a) in &waves {
                v += a * libm::cos(fr * r as f64 + fc * c as f64 + ph);
            }
            let v = 0.55 + amplitude * v / 4.0;
            let noise = amplitude * 0.15 * (rng.uniform() - 0.5);
            // greenish-brown terrain tint
            out.set(r, c, 0, (v + noise) * 0.75);
            out.set(r, c, 1, (v + noise) * 0.85);
            out.set(r, c, 2, (v + noise) * 0.60);
        }
    }
    out
}

fn render(base: &Raster<f64>, mask: &Raster<u8>, rng: &mut Rng) -> Raster<u8> {
    let mut out = Raster::<u8>::zeros(base.height, base.width, 3);
    // per-scene sensor jitter so the two epochs differ photometrically
    let gain = rng.range_f64(0.95, 1.05);
    let bias = rng.range_f64(-0.02, 0.02);
    for r in 0..base.height {
        for c in 0..base.width {
            for ch in 0..3 {
                let mut v = base.get(r, c, ch);
                if mask.get(r, c, 0) == 1 {
                    // exposed pit: darker, desaturated
                    v = 0.30 * v + [0.18, 0.16, 0.15][ch];
                }
                let v = (v * gain + bias).clamp(0.0, 1.0);
                out.set(r, c, ch, libm::round(v * 255.0) as u8);
            }
        }
    }
    out
}

/// Generates a bitemporal scene pair plus change label. Identical seeds
/// produce bit-identical outputs.
pub fn synthesize_scene(
    seed: u64,
    width: usize,
    height: usize,
    params: &SynthParams,
) -> Result<SceneSynthesis> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("empty scene".into()));
    }
    let mut rng = Rng::derive(seed, seed_offset::SYNTH, 0);
    let base = background(&mut rng, height, width, params.texture_amplitude);

    let mut sites_t1: Vec<Polygon> = Vec::new();
    for _ in 0..params.num_sites {
        let center = (
            rng.range_f64(0.1, 0.9) * height as f64,
            rng.range_f64(0.1, 0.9) * width as f64,
        );
        let radius = params.mean_radius * rng.range_f64(0.5, 1.5);
        sites_t1.push(random_convex_polygon(&mut rng, center, radius));
    }

    let mut sites_t2 = sites_t1.clone();
    for _ in 0..params.change_events {
        match rng.below(4) {
            0 => {
                // new site
                let center = (
                    rng.range_f64(0.1, 0.9) * height as f64,
                    rng.range_f64(0.1, 0.9) * width as f64,
                );
                let radius = params.mean_radius * rng.range_f64(0.5, 1.5);
                sites_t2.push(random_convex_polygon(&mut rng, center, radius));
            }
            1 if !sites_t2.is_empty() => {
                // expansion
                let i = rng.below(sites_t2.len());
                sites_t2[i] = scale_polygon(&sites_t2[i], rng.range_f64(1.3, 1.8));
            }
            2 if !sites_t2.is_empty() => {
                // shrinkage
                let i = rng.below(sites_t2.len());
                sites_t2[i] = scale_polygon(&sites_t2[i], rng.range_f64(0.4, 0.7));
            }
            _ if !sites_t2.is_empty() => {
                // reclamation
                let i = rng.below(sites_t2.len());
                sites_t2.remove(i);
            }
            _ => {}
        }
    }

    let mask_t1 = rasterize_union(&sites_t1, height, width);
    let mask_t2 = rasterize_union(&sites_t2, height, width);
    let mut label = Raster::<u8>::zeros(height, width, 1);
    for i in 0..label.data.len() {
        label.data[i] = mask_t1.data[i] ^ mask_t2.data[i];
    }

    let t1 = render(&base, &mask_t1, &mut rng);
    let t2 = render(&base, &mask_t2, &mut rng);
    Ok(SceneSynthesis {
        t1,
        t2,
        label,
        sites_t1,
        sites_t2,
    })
}
