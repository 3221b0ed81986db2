//! One function per subcommand. Every JSON artifact carries the resolved
//! config and the content hashes of the inputs it was built from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bvrm_core::checks::{gradient_suite, CheckOutcome};
use bvrm_core::data::{
    load_dataset, load_truth, make_world, save_dataset, save_truth, CategoryMap, Dataset, GrayImage, TRUTH_FILE,
};
use bvrm_core::decoder::{accuracy, decoder_train, DecoderModel};
use bvrm_core::encoder::{mean_corr, train_encoder, EncoderModel};
use bvrm_core::fsio;
use bvrm_core::generator::{sample_latent, FiniteLibrary, SyntheticGenerator};
use bvrm_core::metrics::{evaluate as evaluate_items, EvalItem, MetricReport};
use bvrm_core::numerics::RngStream;
use bvrm_core::reconstructor::{
    fit_calibration, load_report, reconstruct as run_search, write_report, EffectiveMask, ReconstructionResult,
    Scorer, SearchConfig, SearchContext, SearchMode,
};
use rand::Rng;
use serde::Serialize;
use serde_json::Value;

use crate::config::{ConfigError, RunConfig};

/// At least one gradient check failed; maps to exit status 4.
#[derive(Debug)]
pub struct GradcheckFailed(pub usize);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} gradient check(s) failed", self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

type Inputs = BTreeMap<String, String>;

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    config: Value,
    inputs: &'a Inputs,
    #[serde(flatten)]
    body: &'a T,
}

fn write_artifact<T: Serialize>(path: &Path, cfg: &RunConfig, inputs: &Inputs, body: &T) -> Result<()> {
    let a = Artifact {
        config: cfg.echo(),
        inputs,
        body,
    };
    fsio::write_json(path, &a)?;
    Ok(())
}

fn history_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    model.with_file_name(format!("{stem}.history.json"))
}

fn mode_dir(cfg: &RunConfig, mode: SearchMode) -> PathBuf {
    cfg.paths.output.join("reconstruct").join(mode.to_string().replace(':', "-"))
}

struct Loaded {
    raw: Dataset,
    z: Dataset,
    hash: String,
}

fn load_data(cfg: &RunConfig) -> Result<Loaded> {
    let raw = load_dataset(&cfg.paths.dataset)?;
    let z = raw.zscored()?;
    let hash = raw.content_hash();
    Ok(Loaded { raw, z, hash })
}

fn generator_for(data: &Dataset, dir: &Path) -> Result<SyntheticGenerator> {
    let Some(gcfg) = data.meta.generator.clone() else {
        bail!(ConfigError(format!("{}: dataset metadata names no generator", dir.join("meta.json").display())));
    };
    Ok(SyntheticGenerator::new(gcfg)?)
}

fn category_map(cfg: &RunConfig, gen: &SyntheticGenerator) -> Result<CategoryMap> {
    Ok(match &cfg.paths.category_map {
        Some(p) => CategoryMap::load(p, gen.n_categories())?,
        None => CategoryMap::standard(),
    })
}

pub fn datagen(cfg: &RunConfig) -> Result<()> {
    let (data, truth) = make_world(cfg.seed, &cfg.world)?;
    let dir = &cfg.paths.dataset;
    save_dataset(&data, dir)?;
    save_truth(&truth, dir)?;
    #[derive(Serialize)]
    struct Body {
        dataset: String,
        n_train: usize,
        n_test: usize,
        roi_sizes: [usize; 5],
    }
    let body = Body {
        dataset: data.content_hash(),
        n_train: data.train.len(),
        n_test: data.test.len(),
        roi_sizes: data.meta.roi_sizes,
    };
    write_artifact(&dir.join("datagen.json"), cfg, &Inputs::new(), &body)?;
    println!("wrote {} train / {} test samples to {}", body.n_train, body.n_test, dir.display());
    Ok(())
}

pub fn train_decoder(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let (model, history) = decoder_train(&cfg.decoder, &data.z.train, Some(&data.z.test))?;
    model.save(&cfg.paths.decoder)?;
    let heldout = accuracy(&model, &data.z.test)?;
    #[derive(Serialize)]
    struct Body<'a> {
        model: String,
        heldout_accuracy: f64,
        history: &'a bvrm_core::decoder::DecoderHistory,
    }
    let inputs = Inputs::from([("dataset".to_string(), data.hash)]);
    let body = Body {
        model: model.content_hash(),
        heldout_accuracy: heldout,
        history: &history,
    };
    write_artifact(&history_path(&cfg.paths.decoder), cfg, &inputs, &body)?;
    println!("decoder held-out accuracy {heldout:.3}; saved {}", cfg.paths.decoder.display());
    Ok(())
}

pub fn train_encoder_cmd(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let (model, history) = train_encoder(&cfg.encoder, &data.z.train, Some(&data.z.test))?;
    model.save(&cfg.paths.encoder)?;
    let heldout = mean_corr(&model, &data.z.test)?;
    #[derive(Serialize)]
    struct Body<'a> {
        model: String,
        heldout_mean_pc: f64,
        history: &'a bvrm_core::encoder::EncoderHistory,
    }
    let inputs = Inputs::from([("dataset".to_string(), data.hash)]);
    let body = Body {
        model: model.content_hash(),
        heldout_mean_pc: heldout,
        history: &history,
    };
    write_artifact(&history_path(&cfg.paths.encoder), cfg, &inputs, &body)?;
    println!("encoder held-out mean PC {heldout:.3}; saved {}", cfg.paths.encoder.display());
    Ok(())
}

/// Models and derived state shared by every search of one invocation.
struct SearchAssets {
    data: Loaded,
    generator: SyntheticGenerator,
    encoder: EncoderModel,
    decoder: Option<DecoderModel>,
    scorer: Scorer,
    map: CategoryMap,
    library: Option<FiniteLibrary>,
    inputs: Inputs,
}

fn needs_decoder(search: &SearchConfig) -> bool {
    match search.mode {
        SearchMode::Predicted => true,
        SearchMode::Library => search.library_filter,
        SearchMode::Random | SearchMode::Fixed(_) => false,
    }
}

fn search_assets(cfg: &RunConfig, modes: &[SearchMode]) -> Result<SearchAssets> {
    let encoder = EncoderModel::load(&cfg.paths.encoder)?;
    let data = load_data(cfg)?;
    let decoder = if modes.iter().any(|&m| needs_decoder(&SearchConfig { mode: m, ..cfg.search.clone() })) {
        Some(DecoderModel::load(&cfg.paths.decoder)?)
    } else {
        None
    };
    let generator = generator_for(&data.raw, &cfg.paths.dataset)?;
    let map = category_map(cfg, &generator)?;
    // calibration and effective voxels come from the training split only
    let preds = data
        .z
        .train
        .iter()
        .map(|s| encoder.encode_concat(&s.image))
        .collect::<bvrm_core::Result<Vec<_>>>()?;
    let measured: Vec<Vec<f64>> = data.z.train.iter().map(|s| s.voxels.encoded_concat()).collect();
    let calibration = fit_calibration(&preds, &measured)?;
    let corr: Vec<f64> = encoder.rois.iter().flat_map(|r| r.train_corr.iter().copied()).collect();
    let mask = EffectiveMask::from_corr(&corr, cfg.search.effective_threshold)?;
    let scorer = Scorer::new(calibration, mask)?;
    let library = if modes.contains(&SearchMode::Library) {
        Some(FiniteLibrary::from_generator(
            &generator,
            cfg.library.size,
            cfg.library.seed,
            &data.raw.meta.mask,
        )?)
    } else {
        None
    };
    let mut inputs = Inputs::from([
        ("dataset".to_string(), data.hash.clone()),
        ("encoder".to_string(), encoder.content_hash()),
    ]);
    if let Some(d) = &decoder {
        inputs.insert("decoder".into(), d.content_hash());
    }
    Ok(SearchAssets {
        data,
        generator,
        encoder,
        decoder,
        scorer,
        map,
        library,
        inputs,
    })
}

fn select_targets<'a>(data: &'a Dataset, ids: &[String]) -> Result<Vec<&'a bvrm_core::data::Sample>> {
    if ids.is_empty() {
        return Ok(data.test.iter().collect());
    }
    ids.iter()
        .map(|id| {
            data.test
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| ConfigError(format!("--targets: no test sample `{id}`")).into())
        })
        .collect()
}

fn run_mode(
    cfg: &RunConfig,
    assets: &SearchAssets,
    mode: SearchMode,
    targets: &[String],
) -> Result<Vec<ReconstructionResult>> {
    let search = SearchConfig {
        mode,
        ..cfg.search.clone()
    };
    let ctx = SearchContext {
        generator: &assets.generator,
        mask: &assets.data.raw.meta.mask,
        encoder: &assets.encoder,
        scorer: &assets.scorer,
        category_map: &assets.map,
        decoder: assets.decoder.as_ref(),
        library: assets.library.as_ref(),
    };
    select_targets(&assets.data.z, targets)?
        .into_iter()
        .map(|s| {
            run_search(&ctx, &s.id, &s.voxels, &search, cfg.workers).with_context(|| format!("target {}", s.id))
        })
        .collect()
}

#[derive(Serialize)]
struct TargetSummary {
    id: String,
    top1_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    decoded_label: Option<usize>,
}

#[derive(Serialize)]
struct ModeSummary {
    mode: String,
    effective_voxels: usize,
    mean_top1_score: f64,
    targets: Vec<TargetSummary>,
}

fn summarize(mode: SearchMode, assets: &SearchAssets, results: &[ReconstructionResult]) -> ModeSummary {
    let targets: Vec<TargetSummary> = results
        .iter()
        .map(|r| TargetSummary {
            id: r.target_id.clone(),
            top1_score: r.candidates[0].score,
            decoded_label: r.decoded.as_ref().map(|d| d.label),
        })
        .collect();
    ModeSummary {
        mode: mode.to_string(),
        effective_voxels: assets.scorer.mask().count(),
        mean_top1_score: targets.iter().map(|t| t.top1_score).sum::<f64>() / targets.len() as f64,
        targets,
    }
}

pub fn reconstruct(cfg: &RunConfig, targets: &[String]) -> Result<()> {
    let mode = cfg.search.mode;
    let assets = search_assets(cfg, &[mode])?;
    let results = run_mode(cfg, &assets, mode, targets)?;
    let dir = mode_dir(cfg, mode);
    let mut inputs = assets.inputs.clone();
    inputs.insert("config".into(), cfg.hash());
    for r in &results {
        let mut with_echo = inputs.clone();
        with_echo.insert("resolved_config".into(), cfg.echo().to_string());
        write_report(r, &dir.join(&r.target_id), with_echo)?;
    }
    let summary = summarize(mode, &assets, &results);
    write_artifact(&dir.join("summary.json"), cfg, &inputs, &summary)?;
    println!(
        "{mode}: {} targets, mean Top-1 score {:.4} ({} effective voxels); wrote {}",
        results.len(),
        summary.mean_top1_score,
        summary.effective_voxels,
        dir.display()
    );
    Ok(())
}

/// Generator images of uniformly random categories, shared by every stimulus.
fn baseline_images(cfg: &RunConfig, gen: &SyntheticGenerator, data: &Dataset) -> Result<Vec<GrayImage>> {
    let mut rng = RngStream::new(cfg.metrics.baseline_seed).child("baseline");
    (0..cfg.metrics.random_baseline)
        .map(|_| {
            let c = rng.random_range(0..gen.n_categories());
            let z = sample_latent(&mut rng, None)?;
            Ok(gen.generate_preprocessed(c, &z, &data.meta.mask)?)
        })
        .collect()
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let mode = cfg.search.mode;
    let dir = mode_dir(cfg, mode);
    let data = load_data(cfg)?;
    let gen = generator_for(&data.raw, &cfg.paths.dataset)?;
    let mut inputs = Inputs::from([("dataset".to_string(), data.hash.clone())]);
    let encoder = if cfg.metrics.perceptual {
        let e = EncoderModel::load(&cfg.paths.encoder)?;
        inputs.insert("encoder".into(), e.content_hash());
        Some(e)
    } else {
        None
    };
    // ground truth: regenerated exactly from the world truth when present,
    // otherwise the stored (quantized) stimuli
    let truth_path = cfg.paths.dataset.join(TRUTH_FILE);
    let truth = if truth_path.is_file() {
        Some(load_truth(&cfg.paths.dataset)?)
    } else {
        None
    };
    let mut stimuli = Vec::new();
    let mut ranked = Vec::new();
    for s in &data.raw.test {
        let report_dir = dir.join(&s.id);
        if !report_dir.join("report.json").is_file() {
            continue;
        }
        let (report, images) = load_report(&report_dir)?;
        for (k, v) in &report.inputs {
            if k == "dataset" && v != &data.hash {
                bail!(ConfigError(format!(
                    "{}: built from a different dataset",
                    report_dir.join("report.json").display()
                )));
            }
        }
        let stimulus = match truth.as_ref().and_then(|t| t.find_test(&s.id)) {
            Some(t) => gen.generate_preprocessed(t.fine_category, &t.latent, &data.raw.meta.mask)?,
            None => s.image.clone(),
        };
        stimuli.push((s.id.clone(), stimulus));
        ranked.push(images);
    }
    if stimuli.len() < 2 {
        return Err(bvrm_core::Error::MissingSamples {
            ids: data.raw.test.iter().map(|s| format!("{}/{}/report.json", dir.display(), s.id)).collect(),
        }
        .into());
    }
    let baseline = baseline_images(cfg, &gen, &data.raw)?;
    let items: Vec<EvalItem<'_>> = stimuli
        .iter()
        .zip(&ranked)
        .map(|((id, stim), r)| EvalItem {
            id,
            stimulus: stim,
            ranked: r,
            baseline: (!baseline.is_empty()).then_some(baseline.as_slice()),
        })
        .collect();
    let report = evaluate_items(&items, encoder.as_ref())?;
    #[derive(Serialize)]
    struct Body<'a> {
        mode: String,
        ground_truth: &'static str,
        #[serde(flatten)]
        report: &'a MetricReport,
    }
    let body = Body {
        mode: mode.to_string(),
        ground_truth: if truth.is_some() { "world truth" } else { "dataset stimuli" },
        report: &report,
    };
    inputs.insert("config".into(), cfg.hash());
    write_artifact(&dir.join("metrics.json"), cfg, &inputs, &body)?;
    for row in &report.summary {
        println!("{:>6}  MSE {:.4}  SSIM {:.4}  PCC {:.4}", row.name, row.mse, row.ssim, row.pcc);
    }
    if let Some(b) = report.beats_random_baseline {
        println!("Top-1 SSIM above random baseline for {b}/{} stimuli", report.stimuli.len());
    }
    Ok(())
}

pub fn compare_library(cfg: &RunConfig, targets: &[String]) -> Result<()> {
    let generator_mode = match cfg.search.mode {
        SearchMode::Library => SearchMode::Predicted,
        m => m,
    };
    let modes = [generator_mode, SearchMode::Library];
    let assets = search_assets(cfg, &modes)?;
    let gen_results = run_mode(cfg, &assets, generator_mode, targets)?;
    let lib_results = run_mode(cfg, &assets, SearchMode::Library, targets)?;
    #[derive(Serialize)]
    struct Pair {
        id: String,
        generator_top1: f64,
        library_top1: f64,
        generator_better: bool,
    }
    #[derive(Serialize)]
    struct Body {
        generator_mode: String,
        library_size: usize,
        library_filter: bool,
        budget: usize,
        pairs: Vec<Pair>,
        generator_better: usize,
        mean_generator_top1: f64,
        mean_library_top1: f64,
    }
    let pairs: Vec<Pair> = gen_results
        .iter()
        .zip(&lib_results)
        .map(|(g, l)| Pair {
            id: g.target_id.clone(),
            generator_top1: g.candidates[0].score,
            library_top1: l.candidates[0].score,
            generator_better: g.candidates[0].score < l.candidates[0].score,
        })
        .collect();
    let n = pairs.len() as f64;
    let body = Body {
        generator_mode: generator_mode.to_string(),
        library_size: cfg.library.size,
        library_filter: cfg.search.library_filter,
        budget: cfg.search.budget(),
        generator_better: pairs.iter().filter(|p| p.generator_better).count(),
        mean_generator_top1: pairs.iter().map(|p| p.generator_top1).sum::<f64>() / n,
        mean_library_top1: pairs.iter().map(|p| p.library_top1).sum::<f64>() / n,
        pairs,
    };
    let mut inputs = assets.inputs.clone();
    inputs.insert("config".into(), cfg.hash());
    write_artifact(&cfg.paths.output.join("compare_library.json"), cfg, &inputs, &body)?;
    println!(
        "generator better on {}/{} targets (mean Top-1 {:.4} vs library {:.4})",
        body.generator_better,
        body.pairs.len(),
        body.mean_generator_top1,
        body.mean_library_top1
    );
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let outcomes = gradient_suite(cfg.seed);
    for c in &outcomes {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        match &c.error {
            None => println!(
                "{status}  {:<44} max rel err {:.2e} over {:>3} entries (worst {})",
                c.name,
                c.max_relative_error,
                c.checked,
                c.worst.as_deref().unwrap_or("-")
            ),
            Some(e) => println!("{status}  {:<44} {e}", c.name),
        }
    }
    #[derive(Serialize)]
    struct Body<'a> {
        checks: &'a [CheckOutcome],
    }
    write_artifact(&cfg.paths.output.join("gradcheck.json"), cfg, &Inputs::new(), &Body { checks: &outcomes })?;
    let failed = outcomes.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(GradcheckFailed(failed).into());
    }
    Ok(())
}

pub fn show_config(cfg: &RunConfig) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&cfg.echo())?);
    Ok(())
}
