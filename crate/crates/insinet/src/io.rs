//! File formats: PNG rasters, JSONL manifests, JSON checkpoints and
//! reports. Checkpoint writes go through a temp file plus rename so a
//! crash never leaves a half-written file behind.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::{GrayImage, RgbImage};
use insinet_core::dataset::{BiTemporalSample, SampleMeta};
use insinet_core::raster::Raster;
use insinet_core::synth::SceneSynthesis;
use insinet_core::train::Checkpoint;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Writes a 3-channel raster as an 8-bit RGB PNG.
pub fn write_rgb(path: &Path, raster: &Raster<u8>) -> Result<()> {
    if raster.channels != 3 {
        bail!("expected 3 channels, got {}", raster.channels);
    }
    let img = RgbImage::from_raw(
        raster.width as u32,
        raster.height as u32,
        raster.data.clone(),
    )
    .context("raster buffer size mismatch")?;
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_rgb(path: &Path) -> Result<Raster<u8>> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Raster::from_data(h, w, 3, img.into_raw()).map_err(|e| anyhow::anyhow!("{e}"))
}

/// Writes a binary label raster as an 8-bit grayscale PNG (0 or 255).
pub fn write_label(path: &Path, raster: &Raster<u8>) -> Result<()> {
    if raster.channels != 1 {
        bail!("expected 1 channel, got {}", raster.channels);
    }
    let data: Vec<u8> = raster.data.iter().map(|&v| v * 255).collect();
    let img = GrayImage::from_raw(raster.width as u32, raster.height as u32, data)
        .context("raster buffer size mismatch")?;
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_label(path: &Path) -> Result<Raster<u8>> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<u8> = img.into_raw().iter().map(|&v| u8::from(v >= 128)).collect();
    Raster::from_data(h, w, 1, data).map_err(|e| anyhow::anyhow!("{e}"))
}

/// Writes a probability map as an 8-bit grayscale PNG.
pub fn write_prob(path: &Path, prob: &Raster<f64>) -> Result<()> {
    let data: Vec<u8> = prob
        .data
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = GrayImage::from_raw(prob.width as u32, prob.height as u32, data)
        .context("raster buffer size mismatch")?;
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One line of the scene manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneEntry {
    pub scene_id: String,
    pub seed: u64,
    pub dir: PathBuf,
}

pub fn write_scene(dir: &Path, scene: &SceneSynthesis) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rgb(&dir.join("t1.png"), &scene.t1)?;
    write_rgb(&dir.join("t2.png"), &scene.t2)?;
    write_label(&dir.join("label.png"), &scene.label)?;
    Ok(())
}

pub fn read_scene(dir: &Path) -> Result<(Raster<u8>, Raster<u8>, Raster<u8>)> {
    Ok((
        read_rgb(&dir.join("t1.png"))?,
        read_rgb(&dir.join("t2.png"))?,
        read_label(&dir.join("label.png"))?,
    ))
}

/// One line of the sample manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub sample_id: String,
    pub dir: PathBuf,
    pub meta: SampleMeta,
}

pub fn write_sample(dir: &Path, sample: &BiTemporalSample) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rgb(&dir.join("center_t1.png"), &sample.center_t1)?;
    write_rgb(&dir.join("center_t2.png"), &sample.center_t2)?;
    write_rgb(&dir.join("neigh_t1.png"), &sample.neigh_t1)?;
    write_rgb(&dir.join("neigh_t2.png"), &sample.neigh_t2)?;
    write_label(&dir.join("label.png"), &sample.label)?;
    Ok(())
}

pub fn read_sample(entry: &SampleEntry) -> Result<BiTemporalSample> {
    let dir = &entry.dir;
    let sample = BiTemporalSample {
        center_t1: read_rgb(&dir.join("center_t1.png"))?,
        center_t2: read_rgb(&dir.join("center_t2.png"))?,
        neigh_t1: read_rgb(&dir.join("neigh_t1.png"))?,
        neigh_t2: read_rgb(&dir.join("neigh_t2.png"))?,
        label: read_label(&dir.join("label.png"))?,
        meta: entry.meta.clone(),
    };
    sample.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(sample)
}

/// Appends records to a JSONL file, one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{}:{}: malformed record", path.display(), i + 1))
        })
        .collect()
}

/// Writes JSON via a temp file in the same directory, then renames, so
/// readers never observe a torn file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let dir = path.parent().context("path has no parent directory")?;
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)
        .with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_json_atomic(path, ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_json(path)
}

/// The train/val/test id partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub ratios: (u32, u32, u32),
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use insinet_core::synth::{synthesize_scene, SynthParams};

    #[test]
    fn rgb_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = synthesize_scene(1, 48, 40, &SynthParams::default()).unwrap();
        let path = dir.path().join("t1.png");
        write_rgb(&path, &scene.t1).unwrap();
        let back = read_rgb(&path).unwrap();
        assert_eq!(back, scene.t1);
    }

    #[test]
    fn label_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = synthesize_scene(2, 40, 48, &SynthParams::default()).unwrap();
        let path = dir.path().join("label.png");
        write_label(&path, &scene.label).unwrap();
        let back = read_label(&path).unwrap();
        assert_eq!(back, scene.label);
    }

    #[test]
    fn sample_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = synthesize_scene(3, 128, 128, &SynthParams::default()).unwrap();
        let samples = insinet_core::dataset::prepare_dataset(
            "sc0", &scene.t1, &scene.t2, &scene.label, 64, 64,
        )
        .unwrap();
        let sdir = dir.path().join("s0");
        write_sample(&sdir, &samples[0]).unwrap();
        let entry = SampleEntry {
            sample_id: "s0".into(),
            dir: sdir,
            meta: samples[0].meta.clone(),
        };
        let back = read_sample(&entry).unwrap();
        assert_eq!(back, samples[0]);
    }

    #[test]
    fn jsonl_roundtrip_and_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let records = vec![
            SceneEntry { scene_id: "a".into(), seed: 1, dir: "x".into() },
            SceneEntry { scene_id: "b".into(), seed: 2, dir: "y".into() },
        ];
        write_jsonl(&path, &records).unwrap();
        let back: Vec<SceneEntry> = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].scene_id, "b");
        std::fs::write(&path, "{not json\n").unwrap();
        assert!(read_jsonl::<SceneEntry>(&path).is_err());
    }

    #[test]
    fn atomic_json_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_json_atomic(&path, &vec![1, 2, 3]).unwrap();
        let back: Vec<i32> = read_json(&path).unwrap();
        assert_eq!(back, vec![1, 2, 3]);
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .ends_with(".tmp")
            })
            .collect();
        assert!(leftovers.is_empty());
    }
}
