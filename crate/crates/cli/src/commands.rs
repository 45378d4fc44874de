use std::fs;
use std::path::{Path, PathBuf};

use semsegdepth::config::RunConfig;
use semsegdepth::data::{generate_toy_dataset, load_dataset, write_dataset, ClassMap, Dataset, ImageSample};
use semsegdepth::harness::{
    self, config_digest, read_log, render_table, run_ablation, write_log, AblationReport, GroundTruthStub,
    MetricsReport, Predictor, Splits, Trained,
};
use semsegdepth::params::ParamStore;
use semsegdepth::zoo::{Model, VariantName};
use semsegdepth::{Error, Result};

use crate::{plot, Common, Failure, SplitName};

type CmdResult = std::result::Result<(), Failure>;

/// The run configuration after file loading and command-line overrides.
fn resolve_config(common: &Common, fallback: Option<&Path>) -> std::result::Result<RunConfig, Failure> {
    let path = common.config.as_deref().or(fallback);
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).map_err(|e| Failure { code: 1, error: e })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(root) = &common.data_root {
        cfg.data.root = Some(root.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_variant(cfg: &mut RunConfig, name: Option<&str>) -> Result<()> {
    if let Some(n) = name {
        cfg.variant = n.parse()?;
    }
    Ok(())
}

/// Creates `dir` and freezes the fully materialized config inside it.
fn prepare_run_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = load_dataset(&cfg.data_root())?;
    if ds.nc() != cfg.data.nc {
        return Err(Error::Config {
            key: "data.nc".into(),
            message: format!("dataset at {} has {} classes", ds.paths.root.display(), ds.nc()),
        });
    }
    Ok(ds)
}

fn load_split(cfg: &RunConfig, ds: &Dataset, ids: &[String]) -> Result<Vec<ImageSample>> {
    cfg.data.prepare(ds.load_all(ids)?)
}

pub fn generate_data(
    common: &Common,
    n: Option<usize>,
    nc: Option<usize>,
    height: Option<usize>,
    width: Option<usize>,
) -> CmdResult {
    let mut cfg = resolve_config(common, None)?;
    let toy = &mut cfg.data.toy;
    toy.n_samples = n.unwrap_or(toy.n_samples);
    toy.height = height.unwrap_or(toy.height);
    toy.width = width.unwrap_or(toy.width);
    cfg.data.nc = nc.unwrap_or(cfg.data.nc);
    cfg.validate()?;
    let root = common.out.clone().unwrap_or_else(|| cfg.data_root());

    let toy = &cfg.data.toy;
    let (samples, split) = generate_toy_dataset(
        toy.n_samples,
        cfg.seed,
        cfg.data.nc,
        toy.height,
        toy.width,
        &cfg.data.sparsify,
        toy.counts(),
    )?;
    prepare_run_dir(&root, &cfg)?;
    write_dataset(&root, &samples, &ClassMap::toy(cfg.data.nc), &split)?;
    log::info!(
        "wrote {} samples ({} train / {} val / {} test) to {}",
        samples.len(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        root.display()
    );
    Ok(())
}

fn default_run_dir(cfg: &RunConfig, verb: &str) -> PathBuf {
    cfg.out_dir.join(format!("{verb}-{}-seed{}", cfg.variant, cfg.seed))
}

pub fn train(common: &Common, variant: Option<&str>) -> CmdResult {
    let mut cfg = resolve_config(common, None)?;
    parse_variant(&mut cfg, variant)?;
    let dir = common.out.clone().unwrap_or_else(|| default_run_dir(&cfg, "train"));
    cfg.data.root = Some(cfg.data_root());
    prepare_run_dir(&dir, &cfg)?;

    let ds = open_dataset(&cfg)?;
    let train_set = load_split(&cfg, &ds, &ds.split.train)?;
    let val_set = load_split(&cfg, &ds, &ds.split.val)?;
    let model = Model::new(cfg.variant.spec(), &cfg.model_config())?;
    let init = model.init_params(cfg.seed);
    log::info!(
        "training {} ({} parameters) on {} samples for {} steps",
        cfg.variant,
        init.num_scalars(),
        train_set.len(),
        cfg.optim.steps
    );
    let outcome = harness::train(&model, init, &train_set, &val_set, &cfg.train_config(), cfg.seed)?;
    write_log(&outcome.log, fs::File::create(dir.join("log.jsonl"))?)?;
    outcome.best.save(&dir.join("checkpoint.bin"))?;
    outcome.last.save(&dir.join("last.bin"))?;
    plot::loss_curves(&dir.join("loss.svg"), &[(cfg.variant.to_string(), outcome.log.clone())])?;

    let eval_ids = if ds.split.test.is_empty() { &ds.split.val } else { &ds.split.test };
    if !eval_ids.is_empty() {
        let samples = load_split(&cfg, &ds, eval_ids)?;
        let trained = Trained {
            model: &model,
            params: &outcome.best,
        };
        let report = score(&trained, &cfg, &samples)?;
        write_json(&dir.join("metrics.json"), &report)?;
        print!("{}", table_for(&[report]));
    }
    log::info!("best checkpoint (step {}) in {}", outcome.best_step, dir.display());
    Ok(())
}

fn score(predictor: &dyn Predictor, cfg: &RunConfig, samples: &[ImageSample]) -> Result<MetricsReport> {
    let digest = config_digest(&(cfg.variant, cfg.run_settings()));
    harness::evaluate(predictor, cfg.data.nc, samples, &cfg.eval, &digest)
}

fn table_for(reports: &[MetricsReport]) -> String {
    let rows: Vec<_> = reports
        .iter()
        .map(|r| (r.variant.clone(), r.miou, r.rmse_mm, r.variant.parse::<VariantName>().ok()))
        .collect();
    render_table(&rows, &[])
}

pub fn evaluate(
    common: &Common,
    variant: Option<&str>,
    checkpoint: Option<&Path>,
    oracle_stub: bool,
    split: SplitName,
) -> CmdResult {
    // A checkpoint inside a run directory brings its frozen config along.
    let sibling = checkpoint
        .and_then(Path::parent)
        .map(|d| d.join("config.toml"))
        .filter(|p| p.exists());
    let mut cfg = resolve_config(common, sibling.as_deref())?;
    parse_variant(&mut cfg, variant)?;
    cfg.data.root = Some(cfg.data_root());
    let ds = open_dataset(&cfg)?;
    let ids = match split {
        SplitName::Train => &ds.split.train,
        SplitName::Val => &ds.split.val,
        SplitName::Test => &ds.split.test,
    };
    let samples = load_split(&cfg, &ds, ids)?;

    let report = if oracle_stub {
        let stub = GroundTruthStub {
            outputs: cfg.variant.spec().outputs.to_vec(),
        };
        score(&stub, &cfg, &samples)?
    } else {
        let path = checkpoint.ok_or_else(|| Error::MissingCheckpoint(PathBuf::from("<none given>")))?;
        let params = ParamStore::load(path)?;
        let model = Model::new(cfg.variant.spec(), &cfg.model_config())?;
        model.check_params(&params)?;
        score(&Trained { model: &model, params: &params }, &cfg, &samples)?
    };
    let dir = common.out.clone().unwrap_or_else(|| default_run_dir(&cfg, "eval"));
    prepare_run_dir(&dir, &cfg)?;
    write_json(&dir.join("metrics.json"), &report)?;
    print!("{}", table_for(std::slice::from_ref(&report)));
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn ablate(common: &Common, variants: &[String]) -> CmdResult {
    let mut cfg = resolve_config(common, None)?;
    if !variants.is_empty() {
        cfg.ablation.variants = variants.iter().map(|v| v.parse()).collect::<Result<_>>()?;
    }
    cfg.data.root = Some(cfg.data_root());
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("ablation-seed{}", cfg.seed)));
    prepare_run_dir(&dir, &cfg)?;
    let ds = open_dataset(&cfg)?;
    let train_set = load_split(&cfg, &ds, &ds.split.train)?;
    let val_set = load_split(&cfg, &ds, &ds.split.val)?;
    let test_set = load_split(&cfg, &ds, &ds.split.test)?;
    let splits = Splits {
        train: &train_set,
        val: &val_set,
        test: &test_set,
    };
    let report = run_ablation(&cfg.ablation.variants, &splits, &cfg.run_settings());
    let table = report.render();
    write_json(&dir.join("ablation.json"), &report)?;
    fs::write(dir.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// Reads `metrics.json`, `ablation.json` and `log.jsonl` from each run
/// directory and renders one comparison table and one loss plot.
pub fn report(common: &Common, runs: &[PathBuf]) -> CmdResult {
    let cfg = resolve_config(common, None)?;
    let dir = common.out.clone().unwrap_or_else(|| cfg.out_dir.join("report"));
    if runs.is_empty() {
        return Err(Error::Config {
            key: "runs".into(),
            message: "name at least one run directory".into(),
        }
        .into());
    }
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let mut curves = Vec::new();
    for run in runs {
        if !run.is_dir() {
            return Err(Error::MissingFile(run.clone()).into());
        }
        let tag = run.file_name().map_or_else(|| run.display().to_string(), |n| n.to_string_lossy().into_owned());
        let mut found = false;
        let metrics = run.join("metrics.json");
        if metrics.exists() {
            let r: MetricsReport = serde_json::from_str(&fs::read_to_string(&metrics)?)?;
            rows.push((format!("{} ({tag})", r.variant), r.miou, r.rmse_mm, r.variant.parse().ok()));
            found = true;
        }
        let ablation = run.join("ablation.json");
        if ablation.exists() {
            let a: AblationReport = serde_json::from_str(&fs::read_to_string(&ablation)?)?;
            for row in &a.rows {
                let (m, d) = row.report.as_ref().map_or((None, None), |r| (r.miou, r.rmse_mm));
                rows.push((format!("{} ({tag})", row.variant), m, d, Some(row.variant)));
                if let Some(e) = &row.error {
                    notes.push(format!("{} ({tag}) failed: {e}", row.variant));
                }
            }
            found = true;
        }
        let log = run.join("log.jsonl");
        if log.exists() {
            curves.push((tag.clone(), read_log(&fs::read_to_string(&log)?)?));
            found = true;
        }
        if !found {
            notes.push(format!("{tag}: no metrics, ablation or log found"));
        }
    }
    prepare_run_dir(&dir, &cfg)?;
    let table = render_table(&rows, &notes);
    fs::write(dir.join("report.txt"), &table)?;
    plot::loss_curves(&dir.join("loss_curves.svg"), &curves)?;
    print!("{table}");
    Ok(())
}
