//! The pipeline commands. Each one reads the manifest, writes its artifacts
//! next to it, audits the result and saves the manifest again.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{replica_g0, shape_g1, AugmentedSet, Origin};
use crate::codec::{read_pnm, resize, tile, to_grayscale, write_pnm, ImageBuffer, ResizeMethod};
use crate::edge::detect_edges;
use crate::error::{Error, Result, ResultExt};
use crate::eval::{
    bf_score, compare_runs, default_bf_tolerance, metrics, overlay, Comparison, ConfusionMatrix, MetricReport,
    RunReport, BASELINE,
};
use crate::gan::{self, GanTrainer, GeneratorNet, DEFAULT_SMOOTHING_WINDOW};
use crate::label::{class_weights, count_pixels, encode_classes, fuse as fuse_label, FusedLabel, LabelMask};
use crate::seg::{self, split_train_test, SegNetToy, NUM_CLASSES};

use super::config::{stage, PipelineConfig};
use super::manifest::{resolve, root_of, DatasetManifest, SampleRecord, Split, MANIFEST_FILE};
use super::toy;

/// Display names by class id.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["backgrd", "ROI"];
/// Column order of the comparison table.
pub const COMPARISON_CLASSES: [(usize, &str); NUM_CLASSES] = [(1, "ROI"), (0, "backgrd")];

pub const GAN_DIR: &str = "gan";
pub const SYNTH_DIR: &str = "synth";
pub const RUNS_DIR: &str = "runs";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
}

fn save_audited(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.audit(&root_of(path))?;
    manifest.save(path)
}

fn write_image(root: &Path, rel: &str, image: &ImageBuffer) -> Result<()> {
    let path = resolve(root, rel);
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    write_pnm(image, &path)
}

fn read_mask(root: &Path, rel: &str) -> Result<LabelMask> {
    LabelMask::new(read_pnm(&resolve(root, rel))?)
}

fn read_fused(root: &Path, rel: &str) -> Result<FusedLabel> {
    FusedLabel::new(read_pnm(&resolve(root, rel))?)
}

fn resize_mask(mask: &LabelMask, w: usize, h: usize) -> Result<LabelMask> {
    LabelMask::new(resize(mask.image(), w, h, ResizeMethod::Nearest)?)
}

fn resize_fused(label: &FusedLabel, w: usize, h: usize) -> Result<FusedLabel> {
    FusedLabel::new(resize(label.image(), w, h, ResizeMethod::Nearest)?)
}

/// Renders the toy set into `out/images`, `out/masks` and `out/manifest.jsonl`.
pub fn toygen(cfg: &PipelineConfig, out: &Path) -> Result<DatasetManifest> {
    let spec = cfg.toy_spec()?;
    let mut manifest = DatasetManifest::new(None, cfg.seed()?);
    for i in 0..spec.count {
        let sample = toy::render(&spec, i)?;
        let image = format!("images/{}.ppm", sample.id);
        let label = format!("masks/{}.pgm", sample.id);
        write_image(out, &image, &sample.image)?;
        write_image(out, &label, sample.mask.image())?;
        manifest.records.push(SampleRecord {
            id: sample.id,
            image,
            label,
            fused: None,
            split: Split::Train,
            origin: Origin::Real,
        });
    }
    save_audited(&manifest, &out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn pnm_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = vec![];
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if matches!(ext, "pgm" | "ppm" | "pnm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Per-class pixel counts and weights over the prepared tiles.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    pub pixels: Vec<u64>,
    /// `None` when some class never occurs.
    pub weights: Option<Vec<f64>>,
}

impl ClassStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,pixels,weight\n");
        for (k, &n) in self.pixels.iter().enumerate() {
            let w = self.weights.as_ref().map(|w| format!("{:.6}", w[k])).unwrap_or_default();
            out.push_str(&format!("{},{n},{w}\n", CLASS_NAMES[k]));
        }
        out
    }
}

/// Tiles every `raw/images/<stem>` with its `raw/masks/<stem>` into `out`,
/// splits the tiles and writes `class_stats.csv` plus the manifest.
pub fn prepare(cfg: &PipelineConfig, raw: &Path, out: &Path) -> Result<(DatasetManifest, ClassStats)> {
    let block = cfg.usize("prepare.block")?;
    let images = pnm_stems(&raw.join("images"))?;
    let masks = pnm_stems(&raw.join("masks"))?;
    if images.is_empty() {
        return Err(Error::EmptyDataset(format!("no PNM images under {}", raw.join("images").display())));
    }
    let mut manifest = DatasetManifest::new(Some(block), cfg.seed()?);
    let mut maps = vec![];
    for (stem, image_path) in &images {
        let mask_path = masks
            .iter()
            .find(|(s, _)| s == stem)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Config(format!("image {stem} has no mask")))?;
        let name = image_path.display().to_string();
        let image = read_pnm(image_path)?;
        let mask = LabelMask::binarize(&read_pnm(mask_path)?)?;
        if (image.width(), image.height()) != (mask.width(), mask.height()) {
            return Err(Error::Shape(format!("{stem}: image and mask extents differ")));
        }
        let image_tiles = tile(&image, block, stem).context(|| name.clone())?;
        let mask_tiles = tile(mask.image(), block, stem).context(|| mask_path.display().to_string())?;
        for r in 0..image_tiles.rows {
            for c in 0..image_tiles.cols {
                let id = format!("{stem}_r{r}c{c}");
                let mask_tile = LabelMask::new(mask_tiles.tile(r, c).clone())?;
                let image_rel = format!("tiles/images/{id}.{}", crate::codec::pnm_extension(image.channels()));
                let label_rel = format!("tiles/masks/{id}.pgm");
                write_image(out, &image_rel, image_tiles.tile(r, c))?;
                write_image(out, &label_rel, mask_tile.image())?;
                maps.push(encode_classes(&mask_tile)?);
                manifest.records.push(SampleRecord {
                    id,
                    image: image_rel,
                    label: label_rel,
                    fused: None,
                    split: Split::Train,
                    origin: Origin::Real,
                });
            }
        }
    }
    let fraction = cfg.f64("split.test_fraction")?;
    let (_, test) = split_train_test(&manifest.records, |r| r.origin == Origin::Real, fraction, cfg.stage_seed(stage::SPLIT)?)?;
    for i in test {
        manifest.records[i].split = Split::Test;
    }
    let pixels = count_pixels(&maps, NUM_CLASSES)?;
    let weights = match class_weights(&pixels) {
        Ok(w) => Some(w.as_slice().to_vec()),
        Err(Error::ZeroClass(_)) => None,
        Err(e) => return Err(e),
    };
    let stats = ClassStats { pixels, weights };
    write_text(&out.join("class_stats.csv"), &stats.to_csv())?;
    save_audited(&manifest, &out.join(MANIFEST_FILE))?;
    Ok((manifest, stats))
}

/// Writes `fused/<id>.pgm` for every real sample and records its path.
pub fn fuse(cfg: &PipelineConfig, manifest_path: &Path) -> Result<DatasetManifest> {
    let root = root_of(manifest_path);
    let mut manifest = DatasetManifest::load(manifest_path)?;
    let method = cfg.edge_method()?;
    let params = cfg.canny_params()?;
    for record in manifest.records.iter_mut().filter(|r| r.origin == Origin::Real) {
        let id = record.id.clone();
        (|| -> Result<()> {
            let image = read_pnm(&resolve(&root, &record.image))?;
            let mask = read_mask(&root, &record.label)?;
            let edges = detect_edges(&to_grayscale(&image), method, &params)?;
            let fused = fuse_label(&mask, &edges)?;
            let rel = format!("fused/{id}.pgm");
            write_image(&root, &rel, fused.image())?;
            record.fused = Some(rel);
            Ok(())
        })()
        .context(|| format!("sample {id}"))?;
    }
    save_audited(&manifest, manifest_path)?;
    Ok(manifest)
}

/// Settings needed to reload a saved generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanModelInfo {
    pub image_size: usize,
    pub gen_width: usize,
    pub iterations: usize,
    pub pairs: usize,
}

fn real_train_fused(manifest: &DatasetManifest) -> Result<Vec<&SampleRecord>> {
    let records: Vec<&SampleRecord> = manifest
        .records
        .iter()
        .filter(|r| r.origin == Origin::Real && r.split == Split::Train)
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset("no real training samples".into()));
    }
    if let Some(r) = records.iter().find(|r| r.fused.is_none()) {
        return Err(Error::Config(format!("sample {} has no fused label; run fuse first", r.id)));
    }
    Ok(records)
}

/// Trains the generator on the real training pairs and writes `gan/`.
/// A numerical failure still saves the last good generator.
pub fn train_gan(cfg: &PipelineConfig, manifest_path: &Path) -> Result<gan::LossLog> {
    let root = root_of(manifest_path);
    let manifest = DatasetManifest::load(manifest_path)?;
    let gan_cfg = cfg.gan_config()?;
    let s = gan_cfg.image_size;
    let dataset = real_train_fused(&manifest)?
        .into_iter()
        .map(|r| {
            let label = read_fused(&root, r.fused.as_deref().expect("checked"))?;
            let image = read_pnm(&resolve(&root, &r.image))?;
            Ok((resize_fused(&label, s, s)?, resize(&image, s, s, ResizeMethod::Bilinear)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = root.join(GAN_DIR);
    create_dir(&dir)?;
    let mut trainer = GanTrainer::new(gan_cfg.clone())?;
    let outcome = gan::train_with(&mut trainer, &dataset, |_, _| {});
    trainer.generator().save(&dir.join("generator.ckpt"))?;
    let log = outcome?;
    write_text(&dir.join("loss.csv"), &log.to_csv())?;
    let window = cfg.usize("gan.smoothing_window").unwrap_or(DEFAULT_SMOOTHING_WINDOW);
    write_text(&dir.join("loss_smoothed.csv"), &log.smoothed_csv(window)?)?;
    write_json(
        &dir.join("model.json"),
        &GanModelInfo {
            image_size: s,
            gen_width: gan_cfg.gen_width,
            iterations: log.len(),
            pairs: dataset.len(),
        },
    )?;
    Ok(log)
}

/// Synthesizes one image per real training label (`g0`) or per shape
/// transformed label (`g1`), replacing earlier samples of that origin.
pub fn synth(cfg: &PipelineConfig, manifest_path: &Path, mode: Origin) -> Result<DatasetManifest> {
    if mode == Origin::Real {
        return Err(Error::Config("synthesis mode must be g0 or g1".into()));
    }
    let root = root_of(manifest_path);
    let mut manifest = DatasetManifest::load(manifest_path)?;
    let gan_dir = root.join(GAN_DIR);
    let info: GanModelInfo = read_json(&gan_dir.join("model.json"))?;
    let generator = GeneratorNet::load(&gan_dir.join("generator.ckpt"), info.image_size, info.gen_width)?;
    let sources = real_train_fused(&manifest)?;
    let ids: Vec<String> = sources.iter().map(|r| r.id.clone()).collect();
    let labels = sources
        .iter()
        .map(|r| read_fused(&root, r.fused.as_deref().expect("checked")))
        .collect::<Result<Vec<_>>>()?;
    let labels = match mode {
        Origin::G1 => {
            let block = match manifest.meta.block_size {
                Some(b) => b,
                None => labels[0].width(),
            };
            if let Some(l) = labels.iter().find(|l| (l.width(), l.height()) != (block, block)) {
                return Err(Error::Shape(format!(
                    "shape transforms need {block}x{block} labels, got {}x{}",
                    l.width(),
                    l.height()
                )));
            }
            shape_g1(&labels, block, cfg.stage_seed(stage::SHAPE)?)?
        }
        _ => replica_g0(&labels)?,
    };
    let s = generator.image_size();
    let images = labels
        .iter()
        .map(|l| {
            let small = resize_fused(l, s, s)?;
            let out = gan::synthesize(&generator, std::slice::from_ref(&small))?.remove(0);
            resize(&out, l.width(), l.height(), ResizeMethod::Bilinear)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = AugmentedSet::new(mode, labels, images, cfg.bool("augment.edge_to_roi")?)?;

    manifest.records.retain(|r| r.origin != mode);
    for (id, pair) in ids.iter().zip(&set.pairs) {
        let new_id = format!("{}_{id}", mode.as_str());
        let image = format!("{SYNTH_DIR}/{new_id}.ppm");
        let fused = format!("{SYNTH_DIR}/{new_id}_fused.pgm");
        let label = format!("{SYNTH_DIR}/{new_id}_mask.pgm");
        write_image(&root, &image, &pair.image)?;
        write_image(&root, &fused, pair.label.image())?;
        write_image(&root, &label, pair.mask.image())?;
        manifest.records.push(SampleRecord {
            id: new_id,
            image,
            label,
            fused: Some(fused),
            split: Split::Train,
            origin: mode,
        });
    }
    save_audited(&manifest, manifest_path)?;
    Ok(manifest)
}

/// What a segmentation run was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub architecture: String,
    pub augmentation: String,
    pub origins: Vec<Origin>,
    pub input_size: usize,
    pub depth: usize,
    pub width: usize,
    pub train_count: usize,
    pub class_weights: Vec<f64>,
}

fn parse_origins(text: &str) -> Result<BTreeSet<Origin>> {
    let origins = text
        .split(',')
        .map(|s| s.trim().parse::<Origin>())
        .collect::<Result<BTreeSet<_>>>()?;
    if !origins.contains(&Origin::Real) {
        return Err(Error::Config(format!("seg.origins must include real, got {text:?}")));
    }
    Ok(origins)
}

/// Row label for a training set built from `origins` (always including real).
pub fn augmentation_label(origins: &BTreeSet<Origin>) -> String {
    match (origins.contains(&Origin::G0), origins.contains(&Origin::G1)) {
        (false, false) => BASELINE.to_string(),
        (true, false) => "+replica(G0)".to_string(),
        (true, true) => "+shape(G1)".to_string(),
        (false, true) => "+shape(G1) only".to_string(),
    }
}

pub fn run_dir(manifest_path: &Path, run: &str) -> Result<PathBuf> {
    if run.is_empty() || run.contains(['/', '\\']) || run == "." || run == ".." {
        return Err(Error::Config(format!("invalid run name {run:?}")));
    }
    Ok(root_of(manifest_path).join(RUNS_DIR).join(run))
}

/// Trains the segmenter on the training samples of the configured origins
/// and writes `runs/<run>/`.
pub fn train_seg(cfg: &PipelineConfig, manifest_path: &Path, run: &str) -> Result<RunInfo> {
    let root = root_of(manifest_path);
    let dir = run_dir(manifest_path, run)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    if manifest.count(Split::Test, None) == 0 {
        return Err(Error::Split("manifest has no test split".into()));
    }
    let origins = parse_origins(cfg.get("seg.origins"))?;
    let s = cfg.usize("seg.input_size")?;
    let dataset = manifest
        .records
        .iter()
        .filter(|r| r.split == Split::Train && origins.contains(&r.origin))
        .map(|r| {
            let image = resize(&read_pnm(&resolve(&root, &r.image))?, s, s, ResizeMethod::Bilinear)?;
            let mask = resize_mask(&read_mask(&root, &r.label)?, s, s)?;
            Ok((image, mask))
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = match cfg.seg_class_weights()? {
        Some(w) => w,
        None => {
            let maps = dataset.iter().map(|(_, m)| encode_classes(m)).collect::<Result<Vec<_>>>()?;
            class_weights(&count_pixels(&maps, NUM_CLASSES)?)?
        }
    };
    let seg_cfg = cfg.seg_config(weights)?;
    let (net, log) = seg::train(&dataset, &seg_cfg)?;
    create_dir(&dir)?;
    net.save(&dir.join("seg.ckpt"))?;
    write_text(&dir.join("seg_loss.csv"), &log.to_csv())?;
    let info = RunInfo {
        architecture: cfg.get("seg.architecture").to_string(),
        augmentation: augmentation_label(&origins),
        origins: origins.into_iter().collect(),
        input_size: s,
        depth: seg_cfg.depth,
        width: seg_cfg.width,
        train_count: dataset.len(),
        class_weights: seg_cfg.class_weights.as_slice().to_vec(),
    };
    write_json(&dir.join("run.json"), &info)?;
    Ok(info)
}

/// Predicts every test sample with the run's segmenter, writes predictions,
/// overlays and `metrics.csv`, then refreshes the run comparison.
pub fn eval(cfg: &PipelineConfig, manifest_path: &Path, run: &str) -> Result<MetricReport> {
    let root = root_of(manifest_path);
    let dir = run_dir(manifest_path, run)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    manifest.audit(&root)?;
    let info: RunInfo = read_json(&dir.join("run.json"))?;
    let net = SegNetToy::load(&dir.join("seg.ckpt"), info.depth, info.width)?;
    let tolerance = cfg.bf_tolerance()?;
    let test: Vec<&SampleRecord> = manifest.records.iter().filter(|r| r.split == Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Split("manifest has no test split".into()));
    }
    let s = info.input_size;
    let mut cm = ConfusionMatrix::new(NUM_CLASSES);
    let mut bf_sum = vec![0.0; NUM_CLASSES];
    for r in &test {
        (|| -> Result<()> {
            let image = read_pnm(&resolve(&root, &r.image))?;
            let gt = read_mask(&root, &r.label)?;
            let (w, h) = (gt.width(), gt.height());
            let small = resize(&image, s, s, ResizeMethod::Bilinear)?;
            let pred = resize_mask(&seg::predict(&net, &small)?, w, h)?;
            write_pnm(pred.image(), &dir.join(format!("pred_{}.pgm", r.id)))?;
            write_pnm(&overlay(&gt, &pred)?, &dir.join(format!("overlay_{}.ppm", r.id)))?;
            let (g, p) = (encode_classes(&gt)?, encode_classes(&pred)?);
            cm.accumulate(&g, &p)?;
            let theta = tolerance.unwrap_or_else(|| default_bf_tolerance(w, h));
            for (k, sum) in bf_sum.iter_mut().enumerate() {
                *sum += bf_score(&g, &p, k, theta)?;
            }
            Ok(())
        })()
        .context(|| format!("sample {}", r.id))?;
    }
    let mut report = metrics(&cm);
    report.bf_score = Some(bf_sum.iter().map(|b| b / test.len() as f64).collect());
    write_text(&dir.join("metrics.csv"), &report.to_csv(&CLASS_NAMES))?;

    let runs = load_runs(manifest_path)?;
    if runs.len() >= 2 && runs.iter().any(|r| r.augmentation == BASELINE) {
        write_comparison(manifest_path, &runs)?;
    }
    Ok(report)
}

/// Every evaluated run, ordered by training-set composition then name.
pub fn load_runs(manifest_path: &Path) -> Result<Vec<RunReport>> {
    let runs_root = root_of(manifest_path).join(RUNS_DIR);
    if !runs_root.is_dir() {
        return Ok(vec![]);
    }
    let mut found = vec![];
    for entry in std::fs::read_dir(&runs_root).map_err(|e| Error::io(&runs_root, e))? {
        let dir = entry.map_err(|e| Error::io(&runs_root, e))?.path();
        let metrics_path = dir.join("metrics.csv");
        if !dir.is_dir() || !metrics_path.is_file() {
            continue;
        }
        let info: RunInfo = read_json(&dir.join("run.json"))?;
        let text = std::fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let report = MetricReport::from_csv(&text).context(|| metrics_path.display().to_string())?;
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        found.push(((info.origins.clone(), name), RunReport {
            architecture: info.architecture,
            augmentation: info.augmentation,
            report,
        }));
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(found.into_iter().map(|(_, r)| r).collect())
}

fn write_comparison(manifest_path: &Path, runs: &[RunReport]) -> Result<Comparison> {
    let table = compare_runs(runs, &COMPARISON_CLASSES)?;
    let runs_root = root_of(manifest_path).join(RUNS_DIR);
    write_text(&runs_root.join("comparison.csv"), &table.to_csv())?;
    write_text(&runs_root.join("comparison_deltas.csv"), &table.deltas_csv())?;
    Ok(table)
}

/// Recomputes the comparison tables from the stored run reports.
pub fn report(manifest_path: &Path) -> Result<Comparison> {
    write_comparison(manifest_path, &load_runs(manifest_path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augmentation_labels() {
        let set = |o: &[Origin]| o.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(augmentation_label(&set(&[Origin::Real])), "initial");
        assert_eq!(augmentation_label(&set(&[Origin::Real, Origin::G0])), "+replica(G0)");
        assert_eq!(augmentation_label(&set(&[Origin::Real, Origin::G0, Origin::G1])), "+shape(G1)");
        assert!(parse_origins("g0,g1").is_err());
        assert!(parse_origins("real,g2").is_err());
    }

    #[test]
    fn run_names_stay_inside_runs() {
        let m = Path::new("/d/manifest.jsonl");
        assert_eq!(run_dir(m, "initial").unwrap(), PathBuf::from("/d/runs/initial"));
        assert!(run_dir(m, "../x").is_err());
        assert!(run_dir(m, "").is_err());
    }

    #[test]
    fn prepare_rejects_an_empty_raw_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        std::fs::create_dir_all(dir.path().join("masks")).unwrap();
        let err = prepare(&PipelineConfig::default(), dir.path(), &dir.path().join("out")).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }

    #[test]
    fn prepare_names_the_non_divisible_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.set("toygen.count", "2").unwrap();
        toygen(&cfg, dir.path()).unwrap();
        cfg.set("prepare.block", "48").unwrap();
        let err = prepare(&cfg, dir.path(), &dir.path().join("out")).unwrap_err();
        assert!(matches!(err.root(), Error::NonDivisible { .. }));
        assert!(err.to_string().contains("toy000"), "{err}");
    }
}
