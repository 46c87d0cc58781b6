//! Implementations behind the CLI subcommands. Kept as library functions so
//! integration tests can drive the whole pipeline in-process.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use insinet_core::dataset::{
    augment, generate_misregistered, generate_neighborhood_benchmark, generate_scale_benchmark,
    prepare_dataset, split_indices, stratify_by_target_size, tercile_thresholds,
    BiTemporalSample,
};
use insinet_core::geometry::{build_tile_grid, stitch, BlendPolicy};
use insinet_core::gradcheck::{standard_check, GradCheckConfig, GradCheckReport};
use insinet_core::metrics::{
    evaluate_samples, ring_evaluate, scale_evaluate, MetricReport, RingBandScore,
};
use insinet_core::network::{Components, Model};
use insinet_core::profile::{profile, EfficiencyReport};
use insinet_core::raster::Raster;
use insinet_core::rng::{seed_offset, Rng};
use insinet_core::synth::synthesize_scene;
use insinet_core::train::{
    predict_binary, predict_prob, run_ablation, train, AblationRow, Checkpoint, MetricObserver,
    TrainResult,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::io::{
    self, read_json, read_jsonl, read_sample, read_scene, write_json_atomic, write_jsonl,
    SampleEntry, SceneEntry, SplitFile,
};
use crate::plots::{line_chart, Series};
use crate::runs::RunDir;

/// Generates the configured number of synthetic scene pairs.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Vec<SceneEntry>> {
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(cfg.data.scenes);
    for i in 0..cfg.data.scenes {
        let seed = Rng::mix(cfg.data.seed, seed_offset::SYNTH, i as u64);
        let scene = synthesize_scene(
            seed,
            cfg.data.scene_width,
            cfg.data.scene_height,
            &cfg.data.synth,
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        let dir = out.join("scenes").join(format!("scene_{i}"));
        io::write_scene(&dir, &scene)?;
        entries.push(SceneEntry {
            scene_id: format!("scene_{i}"),
            seed,
            dir,
        });
    }
    write_jsonl(&out.join("scenes.jsonl"), &entries)?;
    Ok(entries)
}

/// Tiles every scene into samples with precomputed neighborhood images.
pub fn prepare(cfg: &RunConfig, out: &Path) -> Result<Vec<SampleEntry>> {
    let scenes: Vec<SceneEntry> = read_jsonl(&out.join("scenes.jsonl"))
        .context("no scene manifest; run `synth` first")?;
    let mut entries = Vec::new();
    for scene in &scenes {
        let (t1, t2, label) = read_scene(&scene.dir)?;
        let samples = prepare_dataset(
            &scene.scene_id,
            &t1,
            &t2,
            &label,
            cfg.data.tile_size,
            cfg.data.stride(),
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        for sample in &samples {
            let sample_id = format!(
                "{}_r{}c{}",
                scene.scene_id, sample.meta.tile.grid_row, sample.meta.tile.grid_col
            );
            let dir = out.join("samples").join(&sample_id);
            io::write_sample(&dir, sample)?;
            entries.push(SampleEntry {
                sample_id,
                dir,
                meta: sample.meta.clone(),
            });
        }
    }
    if entries.is_empty() {
        bail!("tiling produced no samples");
    }
    write_jsonl(&out.join("samples.jsonl"), &entries)?;
    Ok(entries)
}

/// Partitions the sample manifest into train/val/test.
pub fn split(cfg: &RunConfig, out: &Path) -> Result<SplitFile> {
    let entries: Vec<SampleEntry> = read_jsonl(&out.join("samples.jsonl"))
        .context("no sample manifest; run `prepare` first")?;
    let (tr, va, te) = split_indices(entries.len(), cfg.data.split_ratios, cfg.data.seed)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| entries[i].sample_id.clone()).collect();
    let file = SplitFile {
        seed: cfg.data.seed,
        ratios: cfg.data.split_ratios,
        train: pick(&tr),
        val: pick(&va),
        test: pick(&te),
    };
    write_json_atomic(&out.join("splits.json"), &file)?;
    Ok(file)
}

fn load_all(out: &Path) -> Result<BTreeMap<String, BiTemporalSample>> {
    let entries: Vec<SampleEntry> = read_jsonl(&out.join("samples.jsonl"))?;
    entries
        .iter()
        .map(|e| Ok((e.sample_id.clone(), read_sample(e)?)))
        .collect()
}

fn select<'a>(
    all: &'a BTreeMap<String, BiTemporalSample>,
    ids: &[String],
) -> Result<Vec<BiTemporalSample>> {
    ids.iter()
        .map(|id| {
            all.get(id)
                .cloned()
                .with_context(|| format!("sample {id} missing from manifest"))
        })
        .collect()
}

/// Loads the train/val/test sample sets from disk.
pub fn load_splits(
    out: &Path,
) -> Result<(Vec<BiTemporalSample>, Vec<BiTemporalSample>, Vec<BiTemporalSample>)> {
    let splits: SplitFile =
        read_json(&out.join("splits.json")).context("no split file; run `split` first")?;
    let all = load_all(out)?;
    Ok((
        select(&all, &splits.train)?,
        select(&all, &splits.val)?,
        select(&all, &splits.test)?,
    ))
}

/// Expands the training set with one deterministic augmented copy per
/// sample when any augmentation is enabled.
fn augmented_train_set(cfg: &RunConfig, train_set: &[BiTemporalSample]) -> Vec<BiTemporalSample> {
    let spec = &cfg.data.augment;
    let enabled = spec.horizontal_flip
        || spec.vertical_flip
        || !spec.rotations.is_empty()
        || spec.color_jitter > 0.0;
    let mut samples = train_set.to_vec();
    if enabled {
        for (i, s) in train_set.iter().enumerate() {
            samples.push(augment(s, spec, Rng::mix(cfg.data.seed, seed_offset::AUGMENT, i as u64)));
        }
    }
    samples
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: usize,
    pub final_train_loss: f64,
    pub best_val_f1: f64,
    pub best_epoch: usize,
    pub params: u64,
    pub macs: u64,
}

/// Trains from the prepared splits, writing the checkpoint, log and report
/// into the run directory.
pub fn train_cmd(cfg: &RunConfig, out: &Path, run: &RunDir) -> Result<TrainResult> {
    run.create()?;
    cfg.save(&run.config("resolved.toml"))?;
    let (train_set, val_set, _) = load_splits(out)?;
    let train_set = augmented_train_set(cfg, &train_set);
    let network = cfg.network.build(cfg.data.tile_size)?;
    let mut model = Model::new(network, Components::full()).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut observer = MetricObserver::default();
    let result = train(&mut model, &train_set, &val_set, &cfg.train, &mut observer)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    write_jsonl(&run.log("train.jsonl"), &observer.epochs)?;
    let ckpt = Checkpoint::capture(&model, &cfg.train, &result);
    io::save_checkpoint(&run.checkpoint("best.json"), &ckpt)?;
    let eff = profile(&mut model, cfg.data.tile_size).map_err(|e| anyhow::anyhow!("{e}"))?;
    let report = TrainReport {
        epochs: result.epoch_losses.len(),
        steps: result.loss_trace.len(),
        final_train_loss: result.epoch_losses.last().copied().unwrap_or(f64::NAN),
        best_val_f1: result.best_val_f1,
        best_epoch: result.best_epoch,
        params: eff.params,
        macs: eff.macs,
    };
    write_json_atomic(&run.report("train.json"), &report)?;
    write_json_atomic(&run.report("loss_trace.json"), &result.loss_trace)?;
    Ok(result)
}

pub fn load_model(run: &RunDir) -> Result<Model> {
    let ckpt = io::load_checkpoint(&run.checkpoint("best.json"))
        .context("no checkpoint; run `train` first")?;
    ckpt.restore().map_err(|e| anyhow::anyhow!("{e}"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricReport,
    pub small: MetricReport,
    pub medium: MetricReport,
    pub large: MetricReport,
    pub thresholds: (usize, usize),
    pub test_samples: usize,
}

/// Evaluates the checkpoint on the test split, overall and per target-size
/// stratum.
pub fn eval_cmd(out: &Path, run: &RunDir) -> Result<EvalReport> {
    let (_, _, test_set) = load_splits(out)?;
    let mut model = load_model(run)?;
    let overall = evaluate_samples(&test_set, None, &mut |s| predict_binary(&mut model, s))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let raw = tercile_thresholds(&test_set);
    let thresholds = if raw.0 >= raw.1 { (raw.0, raw.0 + 1) } else { raw };
    let strata = stratify_by_target_size(&test_set, thresholds)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut per = Vec::new();
    for stratum in &strata {
        per.push(if stratum.is_empty() {
            MetricReport::default()
        } else {
            evaluate_samples(stratum, None, &mut |s| predict_binary(&mut model, s))
                .map_err(|e| anyhow::anyhow!("{e}"))?
        });
    }
    let report = EvalReport {
        overall,
        small: per[0],
        medium: per[1],
        large: per[2],
        thresholds,
        test_samples: test_set.len(),
    };
    write_json_atomic(&run.report("eval.json"), &report)?;
    Ok(report)
}

/// Predicts a full scene: per-tile probability maps stitched back to scene
/// size, plus the binary map and its score against the scene label.
pub fn predict_cmd(cfg: &RunConfig, out: &Path, run: &RunDir, scene_id: &str) -> Result<MetricReport> {
    let scenes: Vec<SceneEntry> = read_jsonl(&out.join("scenes.jsonl"))?;
    let scene = scenes
        .iter()
        .find(|s| s.scene_id == scene_id)
        .with_context(|| format!("scene {scene_id} not in manifest"))?;
    let (t1, t2, label) = read_scene(&scene.dir)?;
    let mut model = load_model(run)?;
    let s = cfg.data.tile_size;
    let grid = build_tile_grid(t1.width, t1.height, s, s).map_err(|e| anyhow::anyhow!("{e}"))?;
    let samples = prepare_dataset(scene_id, &t1, &t2, &label, s, s)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut maps = Vec::with_capacity(samples.len());
    for sample in &samples {
        let p = predict_prob(&mut model, sample).map_err(|e| anyhow::anyhow!("{e}"))?;
        let mut two = Raster::<f64>::zeros(s, s, 2);
        for px in 0..s * s {
            two.data[px * 2] = 1.0 - p.data[px];
            two.data[px * 2 + 1] = p.data[px];
        }
        maps.push(two);
    }
    let stitched = stitch(&grid, &maps, BlendPolicy::AverageProbability)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    run.create()?;
    io::write_label(&run.report(&format!("{scene_id}_pred.png")), &stitched)?;
    let mut counts = insinet_core::metrics::ConfusionCounts::default();
    counts
        .accumulate(&stitched, &label, None)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let report = MetricReport::from_counts(counts);
    write_json_atomic(&run.report(&format!("{scene_id}_pred.json")), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RingReport {
    pub bands: Vec<RingBandScore>,
    pub tile_size: usize,
}

/// Neighborhood-ring benchmark: one detection region re-cropped so it falls
/// into each ring band, scored with the trained model.
pub fn bench_neigh(cfg: &RunConfig, out: &Path, run: &RunDir) -> Result<RingReport> {
    let scenes: Vec<SceneEntry> = read_jsonl(&out.join("scenes.jsonl"))?;
    let s = cfg.data.tile_size;
    let need = 4 * s + s / 8;
    let mut suite = None;
    for scene in &scenes {
        let (t1, t2, label) = read_scene(&scene.dir)?;
        if t1.height >= need && t1.width >= need {
            suite = Some(
                generate_neighborhood_benchmark(
                    &t1,
                    &t2,
                    &label,
                    s,
                    cfg.data.seed,
                    cfg.bench.ring_regions,
                )
                .map_err(|e| anyhow::anyhow!("{e}"))?,
            );
            break;
        }
    }
    let suite = suite.with_context(|| {
        format!("no scene is at least {need}x{need}; enlarge data.scene_height/width")
    })?;
    let mut model = load_model(run)?;
    let bands = ring_evaluate(&suite, &mut |s| predict_binary(&mut model, s))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let report = RingReport {
        bands,
        tile_size: s,
    };
    write_json_atomic(&run.report("ring.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleReport {
    pub scores: Vec<(usize, MetricReport)>,
}

/// Resolution-degradation benchmark over the test split.
pub fn bench_scale(cfg: &RunConfig, out: &Path, run: &RunDir) -> Result<ScaleReport> {
    let (_, _, test_set) = load_splits(out)?;
    let suite = generate_scale_benchmark(&test_set, &cfg.bench.scale_factors)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut model = load_model(run)?;
    let scores = scale_evaluate(&suite, &mut |s| predict_binary(&mut model, s))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let report = ScaleReport { scores };
    write_json_atomic(&run.report("scale.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MisregReport {
    pub shift: (i64, i64),
    pub aligned: MetricReport,
    pub shifted: MetricReport,
}

/// Misregistration robustness: score the test split with T2 translated.
pub fn bench_misreg(cfg: &RunConfig, out: &Path, run: &RunDir) -> Result<MisregReport> {
    let (_, _, test_set) = load_splits(out)?;
    let mut model = load_model(run)?;
    let aligned = evaluate_samples(&test_set, None, &mut |s| predict_binary(&mut model, s))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let shifted_set = generate_misregistered(&test_set, cfg.bench.misreg_shift);
    let shifted = evaluate_samples(&shifted_set, None, &mut |s| predict_binary(&mut model, s))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let report = MisregReport {
        shift: cfg.bench.misreg_shift,
        aligned,
        shifted,
    };
    write_json_atomic(&run.report("misreg.json"), &report)?;
    Ok(report)
}

/// Cumulative component ablation, trained from scratch per row.
pub fn ablate_cmd(cfg: &RunConfig, out: &Path, run: &RunDir) -> Result<Vec<AblationRow>> {
    run.create()?;
    let (train_set, val_set, test_set) = load_splits(out)?;
    let network = cfg.network.build(cfg.data.tile_size)?;
    let rows = run_ablation(
        &network,
        &train_set,
        &val_set,
        &test_set,
        &cfg.train,
        &mut insinet_core::train::NullObserver,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    write_json_atomic(&run.report("ablation.json"), &rows)?;
    Ok(rows)
}

/// Parameter and multiply-accumulate counts for the configured network.
pub fn profile_cmd(cfg: &RunConfig, run: &RunDir) -> Result<EfficiencyReport> {
    run.create()?;
    let network = cfg.network.build(cfg.data.tile_size)?;
    let mut model = Model::new(network, Components::full()).map_err(|e| anyhow::anyhow!("{e}"))?;
    let report = profile(&mut model, cfg.data.tile_size).map_err(|e| anyhow::anyhow!("{e}"))?;
    write_json_atomic(&run.report("profile.json"), &report)?;
    Ok(report)
}

/// Finite-difference verification of the backward pass.
pub fn gradcheck_cmd(seed: u64, run: &RunDir) -> Result<GradCheckReport> {
    run.create()?;
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    let report = standard_check(&cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
    write_json_atomic(&run.report("gradcheck.json"), &report)?;
    if !report.passed {
        bail!(
            "gradient check failed: max relative error {:.3e}",
            report.max_rel_err
        );
    }
    Ok(report)
}

/// Renders SVG charts for whichever reports exist in the run directory.
/// Errors when none are found.
pub fn plot_cmd(run: &RunDir) -> Result<Vec<String>> {
    let mut made = Vec::new();
    if let Ok(report) = read_json::<RingReport>(&run.report("ring.json")) {
        let series = vec![Series {
            name: "mean F1 over corners".into(),
            points: report
                .bands
                .iter()
                .map(|b| (b.band.clone(), b.mean_f1))
                .collect(),
        }];
        line_chart(&run.plot("ring.svg"), "Detection region vs ring band", "F1", &series)?;
        made.push("ring.svg".into());
    }
    if let Ok(report) = read_json::<ScaleReport>(&run.report("scale.json")) {
        let series = vec![Series {
            name: "F1".into(),
            points: report
                .scores
                .iter()
                .map(|(f, m)| (format!("1/{f}"), m.f1))
                .collect(),
        }];
        line_chart(&run.plot("scale.svg"), "Resolution degradation", "F1", &series)?;
        made.push("scale.svg".into());
    }
    if let Ok(report) = read_json::<MisregReport>(&run.report("misreg.json")) {
        let series = vec![Series {
            name: "F1".into(),
            points: vec![
                ("aligned".into(), report.aligned.f1),
                (
                    format!("shift ({},{})", report.shift.0, report.shift.1),
                    report.shifted.f1,
                ),
            ],
        }];
        line_chart(&run.plot("misreg.svg"), "Misregistration", "F1", &series)?;
        made.push("misreg.svg".into());
    }
    if let Ok(report) = read_json::<EvalReport>(&run.report("eval.json")) {
        let series = vec![Series {
            name: "F1".into(),
            points: vec![
                ("small".into(), report.small.f1),
                ("medium".into(), report.medium.f1),
                ("large".into(), report.large.f1),
            ],
        }];
        line_chart(&run.plot("strata.svg"), "Target size strata", "F1", &series)?;
        made.push("strata.svg".into());
    }
    if let Ok(trace) = read_json::<Vec<f64>>(&run.report("loss_trace.json")) {
        if !trace.is_empty() {
            let series = vec![Series {
                name: "training loss".into(),
                points: trace
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (format!("{i}"), *l))
                    .collect(),
            }];
            line_chart(&run.plot("loss.svg"), "Training loss", "cross-entropy", &series)?;
            made.push("loss.svg".into());
        }
    }
    if made.is_empty() {
        bail!("no reports found in {}; nothing to plot", run.root.display());
    }
    Ok(made)
}
