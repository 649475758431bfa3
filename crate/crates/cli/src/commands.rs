use std::path::{Path, PathBuf};

use log::info;
use pimc_core::dataset::{extract_eval_region, extract_region, plot_labels, PairDataset};
use pimc_core::encoder::EncoderParams;
use pimc_core::eval::{
    classify_landcover, classify_pixels, compare_runs, forecast_index, ranking_csv, ForecastSet, LabeledInputs,
    MetricsReport,
};
use pimc_core::ingest::{
    read_cube, read_tensor, synth_cube, write_cube, write_tensor, DatasetManifest, LabelRaster, RegionEntry, SitsCube,
    Split,
};
use pimc_core::pipeline::{slice_patches, IndexSeriesSet};
use pimc_core::representation::{resize_bilinear, RpBatch};
use pimc_core::rng::derive_seed;
use pimc_core::trainer::{retrieval_top1, RunPaths};
use pimc_core::Error;
use pimc_tensor::Tensor;

use crate::config::{RunConfig, Task};
use crate::{svg, CliError, EncoderKind};

type Result<T> = std::result::Result<T, CliError>;

const RETRIEVAL_PAIRS: usize = 256;

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Fail with an actionable message when an earlier stage's output is missing.
fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        return Ok(());
    }
    Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, format!("not found; {hint}"))).into())
}

fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

fn extract_dir(out: &Path, region: &str) -> PathBuf {
    out.join("extract").join(region)
}

fn load_manifest(out: &Path) -> Result<DatasetManifest> {
    let path = data_dir(out).join("manifest.json");
    require(&path, "run `pimc synthdata` first")?;
    Ok(DatasetManifest::load(&path)?)
}

pub fn synthdata(cfg: &RunConfig, out: &Path) -> Result<()> {
    let syn = cfg.synth_config();
    let s = &cfg.synth;
    let splits = std::iter::repeat_n(Split::Train, s.train_regions)
        .chain(std::iter::repeat_n(Split::Val, s.val_regions))
        .chain(std::iter::repeat_n(Split::Test, s.test_regions));
    let dir = data_dir(out);
    let mut regions = Vec::new();
    for (i, split) in splits.enumerate() {
        let id = format!("region{i:03}");
        let (cube, labels) = synth_cube(derive_seed(cfg.seed, "synth-region", i as u64), &id, &syn)?;
        let cube_file = PathBuf::from(format!("{id}.pimc"));
        let label_file = PathBuf::from(format!("{id}_labels.pimc"));
        write_cube(&cube, &dir.join(&cube_file))?;
        labels.save(&dir.join(&label_file))?;
        regions.push(RegionEntry {
            region_id: id,
            cube: cube_file,
            labels: Some(label_file),
            split,
        });
    }
    let manifest = DatasetManifest::new(&dir, regions);
    manifest.save(&dir.join("manifest.json"))?;
    info!("wrote {} regions to {}", manifest.regions.len(), dir.display());
    Ok(())
}

fn save_sets(dir: &Path, sets: &[IndexSeriesSet]) -> Result<()> {
    for (i, set) in sets.iter().enumerate() {
        set.save(&dir.join(format!("{i:05}.pimc")))?;
    }
    Ok(())
}

fn load_sets(dir: &Path) -> Result<Vec<IndexSeriesSet>> {
    require(dir, "run `pimc extract` first")?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pimc"))
        .collect();
    files.sort();
    Ok(files.iter().map(|p| IndexSeriesSet::load(p)).collect::<pimc_core::Result<_>>()?)
}

pub fn extract(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_manifest(out)?;
    let ex = cfg.extract_config();
    for r in &manifest.regions {
        let cube = read_cube(&manifest.resolve(&r.cube))?;
        let dir = extract_dir(out, &r.region_id);
        let (sets, plots) = extract_region(&cube, &ex, cfg.seed)?;
        save_sets(&dir.join("series"), &sets)?;
        plots.save(&dir.join("plots.pimc"))?;
        let (eval_sets, eval_plots) = extract_eval_region(&cube, &ex, ex.pixels, cfg.extract.eval_pixels, cfg.seed)?;
        save_sets(&dir.join("eval_series"), &eval_sets)?;
        eval_plots.save(&dir.join("eval_plots.pimc"))?;
        info!("{}: {} plots, {} eval plots", r.region_id, plots.len(), eval_plots.len());
    }
    Ok(())
}

fn load_plots(out: &Path, region: &str, name: &str) -> Result<RpBatch> {
    let path = extract_dir(out, region).join(name);
    require(&path, "run `pimc extract` first")?;
    Ok(RpBatch::load(&path)?)
}

fn concat(batches: Vec<RpBatch>, size: usize) -> RpBatch {
    let mut all = RpBatch::new(size);
    for b in batches {
        all.data.extend(b.data);
        all.sources.extend(b.sources);
    }
    all
}

/// Cubes and extracted plots of one split.
fn pair_dataset(cfg: &RunConfig, out: &Path, manifest: &DatasetManifest, split: Split) -> Result<Option<PairDataset>> {
    let entries: Vec<&RegionEntry> = manifest.split(split).collect();
    if entries.is_empty() {
        return Ok(None);
    }
    let mut cubes = Vec::new();
    let mut plots = Vec::new();
    for r in entries {
        cubes.push(read_cube(&manifest.resolve(&r.cube))?);
        plots.push(load_plots(out, &r.region_id, "plots.pimc")?);
    }
    let size = plots[0].size;
    if size != cfg.extract.plot_size {
        return Err(CliError::Usage(format!(
            "extracted plots are {size}px but the config asks for {}; rerun `pimc extract`",
            cfg.extract.plot_size
        )));
    }
    Ok(Some(PairDataset::new(cubes, concat(plots, size), cfg.extract.ps, cfg.encoder.image_size)?))
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_manifest(out)?;
    let ds = pair_dataset(cfg, out, &manifest, Split::Train)?
        .ok_or_else(|| CliError::Usage("manifest has no training regions".into()))?;
    info!("training on {} patches", ds.len());
    let paths = RunPaths { dir: out.join("train") };
    let outcome = pimc_core::trainer::train(&ds, &cfg.image_encoder(), &cfg.series_encoder(), &cfg.train_config(), Some(&paths))?;
    if let Some(test) = pair_dataset(cfg, out, &manifest, Split::Test)? {
        let pairs = test.fixed_pairs(cfg.seed, RETRIEVAL_PAIRS)?;
        let (i2s, s2i) = retrieval_top1(
            &outcome.image.encode_chunked(&pairs.images, 128)?,
            &outcome.series.encode_chunked(&pairs.plots, 128)?,
        )?;
        info!("held-out retrieval top-1: image->series {i2s:.3}, series->image {s2i:.3}");
        let csv = format!(
            "split,pairs,image_to_series,series_to_image\ntest,{},{i2s:?},{s2i:?}\n",
            pairs.patch_ids.len()
        );
        write(&paths.dir.join("retrieval.csv"), csv.as_bytes())?;
    }
    Ok(())
}

fn load_encoder(out: &Path, kind: EncoderKind, tag: &str) -> Result<EncoderParams> {
    let paths = RunPaths { dir: out.join("train") };
    Ok(EncoderParams::load(&paths.checkpoint(kind.name(), tag))?.0)
}

fn pixel_inputs(out: &Path, manifest: &DatasetManifest, split: Split) -> Result<LabeledInputs> {
    let (mut data, mut labels, mut size) = (Vec::new(), Vec::new(), 0);
    for r in manifest.split(split) {
        let plots = load_plots(out, &r.region_id, "eval_plots.pimc")?;
        let raster = region_labels(manifest, r)?;
        labels.extend(plot_labels(&plots, &raster));
        size = plots.size;
        data.extend(plots.data);
    }
    Ok(LabeledInputs {
        inputs: Tensor::new(vec![labels.len(), 3, size, size], data)?,
        labels,
    })
}

fn region_labels(manifest: &DatasetManifest, r: &RegionEntry) -> Result<LabelRaster> {
    let file = r
        .labels
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("region {} has no label raster", r.region_id)))?;
    Ok(LabelRaster::load(&manifest.resolve(file))?)
}

fn forecast_inputs(cfg: &RunConfig, out: &Path, manifest: &DatasetManifest, split: Split) -> Result<ForecastSet> {
    let mut sets = Vec::new();
    for r in manifest.split(split) {
        sets.extend(load_sets(&extract_dir(out, &r.region_id).join("eval_series"))?);
    }
    let e = &cfg.eval;
    Ok(ForecastSet::from_series(&sets, e.context, e.horizon, e.stride, cfg.extract.plot_size)?)
}

/// RGB crops of every patch at every `stride`-th timestamp, resized to
/// `size` and labeled by the patch majority class.
fn landcover_images(cube: &SitsCube, labels: &LabelRaster, ps: usize, size: usize, stride: usize) -> Result<(Vec<f32>, Vec<u16>)> {
    let grid = slice_patches(cube, ps)?;
    let (mut data, mut y) = (Vec::new(), Vec::new());
    for p in &grid.patches {
        let label = labels.majority(p.row, p.col, ps);
        for t in (0..cube.t()).step_by(stride.max(1)) {
            let crop = cube.rgb_patch(t, p.row, p.col, ps)?;
            data.extend(resize_bilinear(&crop, 3, ps, ps, size, size));
            y.push(label);
        }
    }
    Ok((data, y))
}

fn landcover_inputs(cfg: &RunConfig, manifest: &DatasetManifest, split: Split) -> Result<LabeledInputs> {
    let size = cfg.encoder.image_size;
    let (mut data, mut labels) = (Vec::new(), Vec::new());
    for r in manifest.split(split) {
        let cube = read_cube(&manifest.resolve(&r.cube))?;
        let (d, y) = landcover_images(&cube, &region_labels(manifest, r)?, cfg.extract.ps, size, cfg.eval.landcover_stride)?;
        data.extend(d);
        labels.extend(y);
    }
    Ok(LabeledInputs {
        inputs: Tensor::new(vec![labels.len(), 3, size, size], data)?,
        labels,
    })
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_manifest(out)?;
    if manifest.split(Split::Test).next().is_none() {
        return Err(CliError::Usage("evaluation needs test regions (synth.test_regions)".into()));
    }
    let probe = cfg.probe_config();
    let tag = &cfg.eval.checkpoint;
    let report = match cfg.eval.task {
        Task::PixelCls => {
            let enc = load_encoder(out, EncoderKind::Series, tag)?;
            let train = pixel_inputs(out, &manifest, Split::Train)?;
            let test = pixel_inputs(out, &manifest, Split::Test)?;
            classify_pixels(&enc, &train, &test, &probe)?
        }
        Task::Forecast => {
            let enc = load_encoder(out, EncoderKind::Series, tag)?;
            let train = forecast_inputs(cfg, out, &manifest, Split::Train)?;
            let test = forecast_inputs(cfg, out, &manifest, Split::Test)?;
            forecast_index(&enc, &train, &test, &probe)?
        }
        Task::Landcover => {
            let enc = load_encoder(out, EncoderKind::Image, tag)?;
            let train = landcover_inputs(cfg, &manifest, Split::Train)?;
            let test = landcover_inputs(cfg, &manifest, Split::Test)?;
            classify_landcover(&enc, &train, &test, &probe)?
        }
    };
    let stem = format!("{}_{}", cfg.eval.task.name(), cfg.eval.attach);
    report.save(&out.join("eval"), &stem)?;
    if let Some(c) = &report.classification {
        info!("{stem}: acc {:.4} balanced {:.4} macro-F1 {:.4}", c.acc, c.balanced_acc, c.macro_f1);
    }
    if let Some(f) = &report.forecast {
        info!("{stem}: mae {:.5} rmse {:.5}", f.overall.mae, f.overall.rmse);
    }
    Ok(())
}

fn save_embeddings(path: &Path, feats: &Tensor, sources: &impl serde::Serialize) -> Result<()> {
    write_tensor(path, feats, None)?;
    let json = serde_json::to_string_pretty(sources).map_err(|e| Error::Format(e.to_string()))?;
    write(&path.with_extension("json"), format!("{json}\n").as_bytes())
}

fn embed_cube(cfg: &RunConfig, enc: &EncoderParams, kind: EncoderKind, cube: &SitsCube, path: &Path) -> Result<()> {
    match kind {
        EncoderKind::Series => {
            let (_, plots) = extract_region(cube, &cfg.extract_config(), cfg.seed)?;
            let s = plots.size;
            let x = Tensor::new(vec![plots.len(), 3, s, s], plots.data.clone())?;
            save_embeddings(path, &enc.encode_chunked(&x, 128)?, &plots.sources)
        }
        EncoderKind::Image => {
            let size = cfg.encoder.image_size;
            let grid = slice_patches(cube, cfg.extract.ps)?;
            let mut data = Vec::new();
            let mut sources = Vec::new();
            for p in &grid.patches {
                for t in 0..cube.t() {
                    let crop = cube.rgb_patch(t, p.row, p.col, cfg.extract.ps)?;
                    data.extend(resize_bilinear(&crop, 3, cfg.extract.ps, cfg.extract.ps, size, size));
                    sources.push((p.clone(), t));
                }
            }
            let x = Tensor::new(vec![sources.len(), 3, size, size], data)?;
            save_embeddings(path, &enc.encode_chunked(&x, 128)?, &sources)
        }
    }
}

/// Every `*.pimc` tensor in `dir`, each `[n, 3, h, w]`, resized to the
/// image encoder's input size.
fn embed_folder(enc: &EncoderParams, dir: &Path, size: usize, path: &Path) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pimc"))
        .collect();
    files.sort();
    let (mut data, mut sources) = (Vec::new(), Vec::new());
    for f in &files {
        let t = read_tensor(f, None)?;
        let &[n, 3, h, w] = t.shape() else {
            return Err(Error::Validation(format!("{}: expected an [n, 3, h, w] tensor, got {:?}", f.display(), t.shape())).into());
        };
        for (i, img) in t.data().chunks(3 * h * w).enumerate().take(n) {
            data.extend(resize_bilinear(img, 3, h, w, size, size));
            sources.push((f.file_name().map(|s| s.to_string_lossy().into_owned()), i));
        }
    }
    if sources.is_empty() {
        return Err(Error::Validation(format!("{}: no .pimc image tensors", dir.display())).into());
    }
    let x = Tensor::new(vec![sources.len(), 3, size, size], data)?;
    save_embeddings(path, &enc.encode_chunked(&x, 128)?, &sources)
}

pub fn embed(cfg: &RunConfig, out: &Path, input: Option<&Path>, kind: EncoderKind) -> Result<()> {
    let enc = load_encoder(out, kind, &cfg.eval.checkpoint)?;
    let dir = out.join("embed");
    let target = |name: &str| dir.join(format!("{name}_{}.pimc", kind.name()));
    match input {
        Some(p) if p.is_dir() => {
            if kind != EncoderKind::Image {
                return Err(CliError::Usage("image folders need `--encoder image`".into()));
            }
            let name = p.file_name().map_or("images".into(), |s| s.to_string_lossy().into_owned());
            embed_folder(&enc, p, cfg.encoder.image_size, &target(&name))
        }
        Some(p) => {
            require(p, "pass a cube file or a folder of image tensors")?;
            let cube = read_cube(p)?;
            embed_cube(cfg, &enc, kind, &cube, &target(&cube.region_id))
        }
        None => {
            let manifest = load_manifest(out)?;
            for r in &manifest.regions {
                let cube = read_cube(&manifest.resolve(&r.cube))?;
                embed_cube(cfg, &enc, kind, &cube, &target(&r.region_id))?;
            }
            Ok(())
        }
    }
}

fn collect_reports(dir: &Path, label: &str, into: &mut Vec<(String, MetricsReport)>) -> Result<()> {
    let eval = dir.join("eval");
    require(&eval, "run `pimc eval` first")?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&eval)
        .map_err(|e| Error::io(&eval, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    for f in files {
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        into.push((format!("{label}/{stem}"), MetricsReport::load(&f)?));
    }
    Ok(())
}

fn run_label(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn report(out: &Path, compare: &[PathBuf]) -> Result<()> {
    let mut runs = Vec::new();
    collect_reports(out, &run_label(out), &mut runs)?;
    for d in compare {
        collect_reports(d, &run_label(d), &mut runs)?;
    }
    let rows = compare_runs(&runs);
    let dir = out.join("report");
    write(&dir.join("ranking.csv"), ranking_csv(&rows).as_bytes())?;
    write(&dir.join("metrics.svg"), svg::metric_bars(&rows).as_bytes())?;
    let loss = out.join("train").join("loss.csv");
    if loss.exists() {
        let text = std::fs::read_to_string(&loss).map_err(|e| Error::io(&loss, e))?;
        let points = svg::parse_loss_csv(&text).map_err(|m| Error::Format(format!("{}: {m}", loss.display())))?;
        write(&dir.join("loss.svg"), svg::loss_curve(&points).as_bytes())?;
    }
    info!("ranked {} reports into {}", rows.len(), dir.display());
    Ok(())
}
