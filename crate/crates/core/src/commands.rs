//! The pipeline stages behind each CLI subcommand, plus the in-memory
//! helpers they share.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::architectures::{build_with, instantiate, ModelName};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::par;
use crate::signal_io::{
    generate_synthetic, load_labels, load_record, save_labels, save_record, ArrhythmiaClass,
    EcgRecord, LabelTable, LoadOptions,
};
use crate::tfr::{standardize, stfs, wrap_to_1d, FeaturizeConfig, Featurizer, RgbImage, StackedScalogramImage};
use crate::train_eval::{
    evaluate, split_dataset, train, Checkpoint, CheckpointHeader, Evaluation, Granularity,
    MetricsReport, Sample, TrainOutcome, CHECKPOINT_VERSION,
};

pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "features.csv";
pub const FEATURIZE_FILE: &str = "featurize.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Seed of the `index`-th synthetic record of a class.
pub fn record_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_000).wrapping_add(index as u64)
}

/// `n_per_class` records of every class, ordered class-major.
pub fn synth_records(config: &RunConfig) -> Result<Vec<EcgRecord>> {
    let d = &config.data;
    let jobs: Vec<(ArrhythmiaClass, u64)> = ArrhythmiaClass::ALL
        .into_iter()
        .flat_map(|c| (0..d.n_per_class).map(move |i| (c, record_seed(config.seed, i))))
        .collect();
    par::map(&jobs, |&(c, s)| generate_synthetic(c, s, d.duration_s, d.sampling_rate_hz))
        .into_iter()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Writes synthetic records as CSV files plus `labels.csv`.
pub fn cmd_synth(out_dir: &Path, config: &RunConfig) -> Result<usize> {
    config.validate()?;
    create_dir(out_dir)?;
    let records = synth_records(config)?;
    par::map(&records, |r| save_record(out_dir, r))
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut table = LabelTable::new();
    for r in &records {
        table.insert(r.record_id(), r.label());
    }
    save_labels(&out_dir.join(LABELS_FILE), &table)?;
    config.write_to_dir(out_dir)?;
    Ok(records.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub record_id: String,
    pub segment_index: usize,
    pub class: ArrhythmiaClass,
    pub path: String,
}

/// Sidecar describing how a feature directory was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureInfo {
    pub config_hash: String,
    pub sampling_rate_hz: f64,
    pub segments_per_record: usize,
    pub featurize: FeaturizeConfig,
}

#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub dir: PathBuf,
    pub info: FeatureInfo,
    pub rows: Vec<ManifestRow>,
}

pub fn feature_file_stem(record_id: &str, segment_index: usize) -> String {
    format!("{record_id}_s{segment_index}")
}

fn to_png(image: &RgbImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = image
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(image.width as u32, image.height as u32, bytes)
        .ok_or_else(|| Error::Format("image buffer size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Featurizes every record listed in `data_dir/labels.csv`. Records are
/// processed in parallel; each writes only its own files, and the manifest
/// is assembled afterwards in record-id order.
pub fn cmd_featurize(data_dir: &Path, out_dir: &Path, config: &RunConfig, export_png: bool) -> Result<FeatureSet> {
    config.validate()?;
    let labels = load_labels(&data_dir.join(LABELS_FILE))?;
    let mut ids: Vec<&str> = labels.entries().iter().map(|(id, _)| id.as_str()).collect();
    ids.sort_unstable();
    create_dir(out_dir)?;
    let fcfg = config.featurize();
    let fs = config.data.sampling_rate_hz;
    let featurizer = Featurizer::new(&fcfg, fs)?;
    let opts = LoadOptions {
        sampling_rate_hz: fs,
        duration_s: config.data.duration_s,
    };
    let per_record = par::map(&ids, |id| -> Result<Vec<ManifestRow>> {
        let record = load_record(&data_dir.join(format!("{id}.csv")), &labels, &opts)?;
        let images = featurizer.featurize_record(&record)?;
        images.iter().map(|img| write_image(out_dir, img, export_png)).collect()
    });
    let mut rows = Vec::new();
    for r in per_record {
        rows.extend(r?);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &rows {
        *counts.entry(&r.record_id).or_default() += 1;
    }
    let segments_per_record = counts.values().copied().max().unwrap_or(0);
    if let Some((id, n)) = counts.iter().find(|(_, &n)| n != segments_per_record) {
        return Err(Error::Format(format!(
            "record `{id}` produced {n} images, others {segments_per_record}"
        )));
    }
    let info = FeatureInfo {
        config_hash: fcfg.hash(),
        sampling_rate_hz: fs,
        segments_per_record,
        featurize: fcfg,
    };
    write_manifest(&out_dir.join(MANIFEST_FILE), &rows)?;
    write_file(
        &out_dir.join(FEATURIZE_FILE),
        serde_json::to_string_pretty(&info).expect("feature info serializes"),
    )?;
    config.write_to_dir(out_dir)?;
    Ok(FeatureSet {
        dir: out_dir.to_path_buf(),
        info,
        rows,
    })
}

fn write_image(out_dir: &Path, img: &StackedScalogramImage, export_png: bool) -> Result<ManifestRow> {
    let stem = feature_file_stem(&img.record_id, img.segment_index);
    let name = format!("{stem}.stfs");
    let path = out_dir.join(&name);
    stfs::write_file(&path, &img.image.dims(), &img.image.data)?;
    if export_png {
        to_png(&img.image, &out_dir.join(format!("{stem}.png")))?;
    }
    Ok(ManifestRow {
        record_id: img.record_id.clone(),
        segment_index: img.segment_index,
        class: img.label,
        path: name,
    })
}

fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_feature_set(dir: &Path) -> Result<FeatureSet> {
    let info_path = dir.join(FEATURIZE_FILE);
    let text = fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
    let info: FeatureInfo =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", info_path.display())))?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut reader =
        csv::Reader::from_path(&manifest).map_err(|e| Error::Format(format!("{}: {e}", manifest.display())))?;
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<ManifestRow>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", manifest.display())))?;
    Ok(FeatureSet {
        dir: dir.to_path_buf(),
        info,
        rows,
    })
}

impl FeatureSet {
    pub fn records(&self) -> Vec<(String, ArrhythmiaClass)> {
        let mut seen = BTreeMap::new();
        for r in &self.rows {
            seen.entry(r.record_id.clone()).or_insert(r.class);
        }
        seen.into_iter().collect()
    }

    pub fn read_image(&self, row: &ManifestRow) -> Result<RgbImage> {
        let (dims, data) = stfs::read_file(&self.dir.join(&row.path))?;
        match dims[..] {
            [h, w, 3] => Ok(RgbImage { height: h, width: w, data }),
            _ => Err(Error::Format(format!("{}: expected [h, w, 3], got {dims:?}", row.path))),
        }
    }

    /// Model inputs for the rows whose record is in `ids` (all rows if
    /// `None`), in manifest order.
    pub fn samples(&self, model: ModelName, pool_k: usize, ids: Option<&HashSet<String>>) -> Result<Vec<Sample>> {
        let rows: Vec<&ManifestRow> = self
            .rows
            .iter()
            .filter(|r| ids.is_none_or(|s| s.contains(&r.record_id)))
            .collect();
        par::map(&rows, |row| -> Result<Sample> {
            let image = self.read_image(row)?;
            Ok(Sample {
                record_id: row.record_id.clone(),
                segment_index: row.segment_index,
                label: row.class,
                input: model_input(&image, model, pool_k),
            })
        })
        .into_iter()
        .collect()
    }
}

/// Flattened network input for one image. 1D models get the wrapped
/// vector standardized per sample.
pub fn model_input(image: &RgbImage, model: ModelName, pool_k: usize) -> Vec<f32> {
    if model.is_1d() {
        let mut v = wrap_to_1d(image, pool_k);
        standardize(&mut v);
        v
    } else {
        image.data.clone()
    }
}

/// Per-sample input shape passed to the architecture builder.
pub fn input_shape(model: ModelName, image_dims: [usize; 3], pool_k: usize) -> Vec<usize> {
    if model.is_1d() {
        vec![crate::tfr::wrapped_len(image_dims[0], image_dims[1], pool_k)]
    } else {
        image_dims.to_vec()
    }
}

pub fn samples_from_images(images: &[StackedScalogramImage], model: ModelName, pool_k: usize) -> Vec<Sample> {
    par::map(images, |img| Sample {
        record_id: img.record_id.clone(),
        segment_index: img.segment_index,
        label: img.label,
        input: model_input(&img.image, model, pool_k),
    })
}

pub fn select(samples: &[Sample], ids: &[String]) -> Vec<Sample> {
    let set: HashSet<&str> = ids.iter().map(String::as_str).collect();
    samples
        .iter()
        .filter(|s| set.contains(s.record_id.as_str()))
        .cloned()
        .collect()
}

/// Splits, builds, trains and wraps the result in a checkpoint.
pub fn train_on_samples(
    samples: &[Sample],
    records: &[(String, ArrhythmiaClass)],
    shape: &[usize],
    config: &RunConfig,
    feature_hash: &str,
) -> Result<(Checkpoint, TrainOutcome)> {
    let split = split_dataset(records, config.split, config.seed)?;
    let spec = build_with(config.model.name, shape, &config.model.build_options())?;
    let mut net = instantiate::<f32>(&spec, config.seed)?;
    let train_set = select(samples, &split.train);
    let val_set = select(samples, &split.val);
    log::info!(
        "training {} ({} parameters) on {} images, validating on {}",
        spec.name,
        net.param_count(),
        train_set.len(),
        val_set.len()
    );
    let outcome = train(&mut net, &train_set, &val_set, &config.train, config.seed)?;
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        model: spec,
        feature_hash: feature_hash.to_string(),
        pool_k: config.model.name.is_1d().then_some(config.wrap.pool_k),
        seed: config.seed,
        split,
        train: config.train,
        best_epoch: outcome.best_epoch,
    };
    Ok((Checkpoint::from_network(header, &net), outcome))
}

fn check_hash(expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::ConfigMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

pub fn history_csv(outcome: &TrainOutcome) -> String {
    let mut s = String::from("epoch,train_loss,val_acc\n");
    for h in &outcome.history {
        s.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.val_acc));
    }
    s
}

/// Trains `config.model` on a feature directory and writes the checkpoint,
/// `history.csv` and the resolved config into `out_dir`.
pub fn cmd_train(features_dir: &Path, out_dir: &Path, config: &RunConfig) -> Result<(Checkpoint, TrainOutcome)> {
    config.validate()?;
    let set = load_feature_set(features_dir)?;
    check_hash(&config.featurize().hash(), &set.info.config_hash)?;
    let first = set
        .rows
        .first()
        .ok_or_else(|| Error::Format(format!("{}: empty feature manifest", features_dir.display())))?;
    let dims = set.read_image(first)?.dims();
    let model = config.model.name;
    let samples = set.samples(model, config.wrap.pool_k, None)?;
    let shape = input_shape(model, dims, config.wrap.pool_k);
    let (checkpoint, outcome) = train_on_samples(&samples, &set.records(), &shape, config, &set.info.config_hash)?;
    create_dir(out_dir)?;
    checkpoint.save(&out_dir.join(CHECKPOINT_FILE))?;
    write_file(&out_dir.join(HISTORY_FILE), history_csv(&outcome))?;
    config.write_to_dir(out_dir)?;
    Ok((checkpoint, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub model: ModelName,
    pub feature_hash: String,
    pub seed: u64,
    pub image: MetricsReport,
    pub record: MetricsReport,
}

impl MetricsFile {
    pub fn report(&self, granularity: Granularity) -> &MetricsReport {
        match granularity {
            Granularity::Image => &self.image,
            Granularity::Record => &self.record,
        }
    }
}

pub fn metrics_csv(m: &MetricsFile) -> String {
    let mut s = String::from("granularity,class,precision,recall,specificity,support,accuracy\n");
    for (name, r) in [("image", &m.image), ("record", &m.record)] {
        for c in &r.per_class {
            s.push_str(&format!(
                "{name},{},{},{},{},{},\n",
                c.class, c.precision, c.recall, c.specificity, c.support
            ));
        }
        s.push_str(&format!(
            "{name},macro,{},{},{},{},{}\n",
            r.macro_precision, r.macro_recall, r.macro_specificity, r.n_items, r.accuracy
        ));
    }
    s
}

/// Evaluates a checkpoint on the test split of a feature directory whose
/// config hash must match the one the checkpoint was trained on.
pub fn cmd_eval(checkpoint_path: &Path, features_dir: &Path, out_dir: &Path, config: &RunConfig) -> Result<Evaluation> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let set = load_feature_set(features_dir)?;
    let h = &checkpoint.header;
    check_hash(&h.feature_hash, &set.info.config_hash)?;
    let ids: HashSet<String> = h.split.test.iter().cloned().collect();
    let samples = set.samples(h.model.name, h.pool_k.unwrap_or(1), Some(&ids))?;
    let mut net = checkpoint.to_network()?;
    let evaluation = evaluate(&mut net, &samples, &h.split, set.info.segments_per_record, config.train.batch_size)?;
    let file = MetricsFile {
        model: h.model.name,
        feature_hash: h.feature_hash.clone(),
        seed: h.seed,
        image: evaluation.image.clone(),
        record: evaluation.record.clone(),
    };
    create_dir(out_dir)?;
    write_file(
        &out_dir.join(METRICS_JSON),
        serde_json::to_string_pretty(&file).expect("metrics serialize"),
    )?;
    write_file(&out_dir.join(METRICS_CSV), metrics_csv(&file))?;
    if !out_dir.join(crate::config::RUN_CONFIG_FILE).exists() {
        config.write_to_dir(out_dir)?;
    }
    Ok(evaluation)
}

/// One `Model,A,P,R,S` row per run directory, macro-averaged at the given
/// granularity.
pub fn cmd_report(run_dirs: &[PathBuf], granularity: Granularity) -> Result<String> {
    let mut s = String::from("Model,A,P,R,S\n");
    for dir in run_dirs {
        let path = dir.join(METRICS_JSON);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: MetricsFile =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let r = m.report(granularity);
        s.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4}\n",
            m.model, r.accuracy, r.macro_precision, r.macro_recall, r.macro_specificity
        ));
    }
    Ok(s)
}

/// Writes a PNG next to each feature file listed in a feature directory's
/// manifest, into `out_dir`.
pub fn cmd_export_images(features_dir: &Path, out_dir: &Path) -> Result<usize> {
    let set = load_feature_set(features_dir)?;
    create_dir(out_dir)?;
    let done = par::map(&set.rows, |row| -> Result<()> {
        let image = set.read_image(row)?;
        to_png(&image, &out_dir.join(format!("{}.png", feature_file_stem(&row.record_id, row.segment_index))))
    });
    done.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(set.rows.len())
}

/// Featurizes in memory (no files), for tests and benchmarks.
pub fn featurize_records(records: &[EcgRecord], config: &FeaturizeConfig) -> Result<Vec<StackedScalogramImage>> {
    let fs = records.first().map_or(500.0, |r| r.sampling_rate_hz());
    let featurizer = Featurizer::new(config, fs)?;
    let per = par::map(records, |r| featurizer.featurize_record(r));
    let mut out = Vec::new();
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}
