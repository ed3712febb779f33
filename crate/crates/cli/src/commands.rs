//! One function per subcommand. Each resolves its inputs, calls the library and writes artifacts.

use std::cell::Cell;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rankpilot::condense::{cohort_errors_with, proxy_baseline_error, sample_correlations_with, select_from_correlations, CondenseManifest};
use rankpilot::controller::ControllerParams;
use rankpilot::evaluator::external::ExternalEvaluator;
use rankpilot::evaluator::toy::{build_toy_profile, cohort_models, ToyProfile};
use rankpilot::evaluator::train::{retrain, TrainConfig};
use rankpilot::evaluator::{Dataset, EvalResult, Evaluator, Split};
use rankpilot::netmodel::{apply_scheme, scheme_speedup, CompressedModel, LayeredModel, Scheme};
use rankpilot::search::{explored_from_log, read_log, replay_log, report_csv, run_search, select_best, top_k, SearchConfig, StepRecord};
use rankpilot::space::{build_space, manual_scheme, sensitivity_sweep, SearchSpace};
use rankpilot::Error;
use serde::Serialize;
use serde_json::json;

use crate::config::{CondenseRun, EvaluatorBinding, RunConfig, SearchRun, SelectRun, SpaceRun, SpaceSource, SweepRun, ToyRun};
use crate::exit::{CliError, CliResult};

pub const LOG_FILE: &str = "search.jsonl";
pub const CHECKPOINT_FILE: &str = "controller.lrcp";
pub const EXPLORED_FILE: &str = "explored.json";
pub const SEARCH_CONFIG_FILE: &str = "search_config.json";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const MODEL_FILE: &str = "model.lrfm";
pub const PROFILE_FILE: &str = "profile.json";

/// An evaluator that remembers whether any call failed, so errors can be attributed to it.
pub struct Bound {
    inner: Box<dyn Evaluator>,
    failed: Cell<bool>,
}

impl Bound {
    fn new(inner: Box<dyn Evaluator>) -> Self {
        Self { inner, failed: Cell::new(false) }
    }

    /// Exit code 3 if the evaluator failed at any point, otherwise the error's own code.
    pub fn fail(&self, err: Error) -> CliError {
        if self.failed.get() {
            CliError::evaluator(err)
        } else {
            err.into()
        }
    }
}

impl Evaluator for Bound {
    fn evaluate(&self, model: &CompressedModel, with_per_sample: bool) -> rankpilot::Result<EvalResult> {
        let result = self.inner.evaluate(model, with_per_sample);
        if result.is_err() {
            self.failed.set(true);
        }
        result
    }
}

/// Model, evaluator and (for the toy binding) the profile and split behind them.
pub struct Workbench {
    pub model: LayeredModel,
    pub evaluator: Bound,
    pub profile: Option<ToyProfile>,
    pub dataset: Option<Dataset>,
}

pub fn load_model(path: &Path) -> CliResult<LayeredModel> {
    LayeredModel::load(path).map_err(|e| CliError::input(&format!("model {}", path.display()), e))
}

fn toy_profile(seed: u64) -> CliResult<ToyProfile> {
    log::info!("building toy profile (seed {seed})");
    let profile = build_toy_profile(seed)?;
    log::info!("toy profile ready: dev error {:.2}, test error {:.2}", profile.baseline_error, profile.test_error);
    Ok(profile)
}

pub fn workbench(binding: &EvaluatorBinding, model_path: Option<&Path>, layers: Option<&[String]>) -> CliResult<Workbench> {
    let (model, evaluator, profile, dataset) = match binding {
        EvaluatorBinding::Toy { profile_seed, split } => {
            let profile = toy_profile(*profile_seed)?;
            let dataset = profile
                .split(*split)
                .ok_or_else(|| CliError::config("the toy evaluator has no fixed condensed split; point `condensed` at a manifest"))?
                .clone();
            let model = match model_path {
                Some(p) => load_model(p)?,
                None => profile.model.clone(),
            };
            (model, Bound::new(Box::new(dataset.clone())), Some(profile), Some(dataset))
        }
        EvaluatorBinding::External { command, dataset, timeout_secs } => {
            let path = model_path.ok_or_else(|| CliError::config("the external evaluator needs a `model` path"))?;
            if command.is_empty() {
                return Err(CliError::config("external evaluator command is empty"));
            }
            let mut ext = ExternalEvaluator::new(command.clone(), dataset.clone());
            ext.timeout = Duration::from_secs(*timeout_secs);
            (load_model(path)?, Bound::new(Box::new(ext)), None, None)
        }
    };
    let model = match layers {
        Some(names) => model.with_searchable(names)?,
        None => model,
    };
    Ok(Workbench { model, evaluator, profile, dataset })
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::new(crate::exit::OTHER, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::new(crate::exit::OTHER, format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::new(crate::exit::OTHER, format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::new(crate::exit::OTHER, format!("cannot create {}: {e}", dir.display())))
}

pub fn toy(run: &ToyRun, resolved: &RunConfig) -> CliResult<()> {
    let profile = toy_profile(run.seed)?;
    create_dir(&run.output_dir)?;
    write_json(&run.output_dir.join(RUN_CONFIG_FILE), resolved)?;
    profile.model.save(run.output_dir.join(MODEL_FILE))?;
    let layers: Vec<_> = profile
        .model
        .layers()
        .iter()
        .map(|l| json!({"name": l.name, "rows": l.weights.rows(), "cols": l.weights.cols(), "searchable": l.searchable}))
        .collect();
    let summary = json!({
        "seed": profile.seed,
        "layers": layers,
        "baseline_error": profile.baseline_error,
        "test_error": profile.test_error,
        "clean_dev_error": profile.clean_dev_error,
        "samples": {"train": profile.train.len(), "dev": profile.dev.len(), "test": profile.test.len()},
        "noisy_dev_samples": profile.noisy_ids.len(),
    });
    write_json(&run.output_dir.join(PROFILE_FILE), &summary)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(())
}

pub fn sweep(run: &SweepRun) -> CliResult<()> {
    let wb = workbench(&run.evaluator, run.model.as_deref(), run.layers.as_deref())?;
    let report = sensitivity_sweep(&wb.model, &wb.evaluator, &run.energies).map_err(|e| wb.evaluator.fail(e))?;
    write_text(&run.output, &report.to_csv())?;
    log::info!("wrote {} sweep rows to {}", report.entries.len(), run.output.display());
    Ok(())
}

pub fn space(run: &SpaceRun) -> CliResult<()> {
    let model = match (&run.model, &run.evaluator) {
        (Some(path), _) => load_model(path)?,
        (None, Some(EvaluatorBinding::Toy { profile_seed, .. })) => toy_profile(*profile_seed)?.model,
        (None, _) => return Err(CliError::config("space needs a `model` path or a toy evaluator binding")),
    };
    let model = match &run.layers {
        Some(names) => model.with_searchable(names)?,
        None => model,
    };
    let space = build_space(&model, &run.energies.resolve(&model)?)?;
    write_json(&run.output, &space)?;
    println!("{} layers x {} options = {} schemes", space.num_layers(), space.num_options(), space.cardinality());
    Ok(())
}

fn load_space(path: &Path) -> CliResult<SearchSpace> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(&format!("space {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(&format!("space {}", path.display()), e))
}

pub fn search(run: &SearchRun, resolved: &RunConfig) -> CliResult<()> {
    // Everything that can be checked without evaluating anything is checked first.
    run.reward.resolve(run.reward.baseline_error.unwrap_or(1.0))?;
    let mut wb = workbench(&run.evaluator, run.model.as_deref(), run.layers.as_deref())?;
    let space = match &run.space {
        SpaceSource::Path(path) => load_space(path)?,
        SpaceSource::Energies(ranges) => build_space(&wb.model, &ranges.resolve(&wb.model)?)?,
    };
    let mut config = SearchConfig::new(space, run.reward.resolve(run.reward.baseline_error.unwrap_or(1.0))?, run.max_steps, run.seed);
    config.controller = run.controller.clone();
    config.top_k = run.top_k;
    config.validate(&wb.model)?;

    if let Some(manifest_path) = &run.condensed {
        let (Some(profile), EvaluatorBinding::Toy { split: Split::Dev, .. }) = (&wb.profile, &run.evaluator) else {
            return Err(CliError::config("`condensed` requires the toy evaluator on the dev split"));
        };
        let manifest = CondenseManifest::load(manifest_path).map_err(|e| CliError::input(&format!("manifest {}", manifest_path.display()), e))?;
        let condensed = profile.dev.subset_by_ids(&manifest.selected, Split::Condensed)?;
        log::info!("searching on {} condensed samples of {}", condensed.len(), profile.dev.len());
        wb.evaluator = Bound::new(Box::new(condensed.clone()));
        wb.dataset = Some(condensed);
    }

    if run.reward.baseline_error.is_none() {
        let dense = CompressedModel::from(&wb.model);
        let measured = wb.evaluator.evaluate(&dense, false).map_err(|e| wb.evaluator.fail(e.context("baseline evaluation")))?.error;
        let baseline = match &wb.dataset {
            Some(dataset) => proxy_baseline_error(measured, dataset),
            None => measured,
        };
        log::info!("baseline error on the search split: {baseline} (measured {measured})");
        config.reward = run.reward.resolve(baseline)?;
    }

    let dir = &run.output_dir;
    create_dir(dir)?;
    write_json(&dir.join(RUN_CONFIG_FILE), resolved)?;
    write_json(&dir.join(SEARCH_CONFIG_FILE), &config)?;
    wb.model.save(dir.join(MODEL_FILE))?;

    let mut log_writer = BufWriter::new(File::create(dir.join(LOG_FILE))?);
    let result = run_search(&config, &wb.model, &wb.evaluator, Some(&mut log_writer));
    log_writer.flush()?;
    let outcome = result.map_err(|e| wb.evaluator.fail(e))?;
    outcome.controller.save(dir.join(CHECKPOINT_FILE))?;
    write_json(&dir.join(EXPLORED_FILE), &outcome.explored)?;

    let rejected = outcome.records.iter().filter(|r| r.rejected).count();
    let eval_ms: f64 = outcome.records.iter().map(|r| r.wall_ms).sum();
    log::info!(
        "{} steps, {} rejected, {} evaluated schemes, {:.0} ms evaluating",
        outcome.records.len(),
        rejected,
        outcome.explored.len(),
        eval_ms
    );
    match top_k(&outcome.explored, config.top_k) {
        Ok(best) => {
            for p in best {
                println!("step {:>6}  speedup {:.4}  error {:.4}  ranks {:?}", p.step, p.speedup, p.error, p.scheme.ranks());
            }
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

fn read_records(path: &Path) -> CliResult<Vec<StepRecord>> {
    let file = File::open(path).map_err(|e| CliError::input(&format!("log {}", path.display()), e))?;
    read_log(BufReader::new(file)).map_err(|e| CliError::input(&format!("log {}", path.display()), e))
}

/// Rebuilds the controller from a search directory's log and compares it with the saved one.
pub fn replay(dir: &Path, out: Option<&Path>) -> CliResult<()> {
    let config_path = dir.join(SEARCH_CONFIG_FILE);
    let text = fs::read_to_string(&config_path).map_err(|e| CliError::input(&config_path.display().to_string(), e))?;
    let config: SearchConfig = serde_json::from_str(&text).map_err(|e| CliError::input(&config_path.display().to_string(), e))?;
    let model = load_model(&dir.join(MODEL_FILE))?;
    let records = read_records(&dir.join(LOG_FILE))?;
    let controller = replay_log(&config, &model, &records)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("replayed.lrcp"));
    controller.save(&out)?;
    let saved = dir.join(CHECKPOINT_FILE);
    if saved.exists() {
        let original = ControllerParams::load(&saved)?;
        if original.to_bytes()? != controller.to_bytes()? {
            return Err(CliError::new(crate::exit::NUMERICAL, format!("replayed controller differs from {}", saved.display())));
        }
        println!("replayed {} steps; controller matches {}", records.len(), saved.display());
    } else {
        println!("replayed {} steps into {}", records.len(), out.display());
    }
    Ok(())
}

pub fn condense(run: &CondenseRun) -> CliResult<()> {
    run.condense.validate()?;
    let wb = workbench(&run.evaluator, run.model.as_deref(), None)?;
    let (cohorts, cohort_ids) = match (&run.cohorts, &wb.profile) {
        (Some(paths), _) => {
            let models = paths
                .iter()
                .map(|p| CompressedModel::load(p).map_err(|e| CliError::input(&format!("cohort {}", p.display()), e)))
                .collect::<CliResult<Vec<_>>>()?;
            (models, paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>())
        }
        (None, Some(profile)) => {
            let models = cohort_models(profile, run.seed)?;
            let ids = (0..models.len()).map(|i| format!("toy-cohort-{i}")).collect();
            (models, ids)
        }
        (None, None) => return Err(CliError::config("an external evaluator needs explicit `cohorts`")),
    };
    let (ids, lengths) = match (&wb.dataset, &run.samples) {
        (_, Some(index)) => (index.ids.clone(), index.lengths.clone()),
        (Some(dataset), None) => (dataset.ids.clone(), dataset.lengths.clone()),
        (None, None) => return Err(CliError::config("an external evaluator needs a `samples` index")),
    };
    if ids.len() != lengths.len() {
        return Err(CliError::config(format!("`samples` has {} ids but {} lengths", ids.len(), lengths.len())));
    }
    let ce = cohort_errors_with(&ids, &lengths, &cohorts, &wb.evaluator).map_err(|e| wb.evaluator.fail(e))?;
    let correlations = sample_correlations_with(&ce, run.condense.correlation)?;
    let selected = select_from_correlations(&ce, &correlations, &run.condense)?;
    let manifest = CondenseManifest::new(&run.condense, cohort_ids, &ce, &correlations, selected);
    manifest.save(&run.output)?;
    println!("selected {} of {} samples (correl_min {})", manifest.selected.len(), ids.len(), run.condense.correl_min);
    Ok(())
}

#[derive(Debug, Serialize)]
struct CandidateReport {
    rank: usize,
    scheme: Vec<usize>,
    speedup: f64,
    proxy_error: f64,
    step: u64,
    holdout_error: Option<f64>,
    failure: Option<String>,
}

#[derive(Debug, Serialize)]
struct SelectionReport {
    best: Vec<usize>,
    best_speedup: f64,
    holdout_error: f64,
    candidates: Vec<CandidateReport>,
}

pub fn select(run: &SelectRun) -> CliResult<()> {
    let records = read_records(&run.search_dir.join(LOG_FILE))?;
    let model_path = run.search_dir.join(MODEL_FILE);
    let wb = workbench(&run.evaluator, Some(&model_path), None)?;
    let candidates = top_k(&explored_from_log(&records), run.k)?;
    let schemes: Vec<Scheme> = candidates.iter().map(|p| p.scheme.clone()).collect();
    let selection = select_best(&wb.model, &schemes, &wb.evaluator).map_err(|e| wb.evaluator.fail(e))?;
    let report = SelectionReport {
        best: selection.best.ranks().to_vec(),
        best_speedup: scheme_speedup(&wb.model, &selection.best)?,
        holdout_error: selection.error,
        candidates: candidates
            .iter()
            .zip(&selection.candidates)
            .enumerate()
            .map(|(i, (p, o))| CandidateReport {
                rank: i + 1,
                scheme: p.scheme.ranks().to_vec(),
                speedup: p.speedup,
                proxy_error: p.error,
                step: p.step,
                holdout_error: o.holdout_error,
                failure: o.failure.clone(),
            })
            .collect(),
    };
    write_json(&run.output, &report)?;
    println!("best {:?}: holdout error {:.4} at speedup {:.4}", report.best, report.holdout_error, report.best_speedup);
    Ok(())
}

pub fn parse_scheme(text: &str) -> CliResult<Scheme> {
    text.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| CliError::config(format!("scheme entry `{t}`: {e}"))))
        .collect::<CliResult<Vec<_>>>()
        .map(Scheme::new)
}

pub fn compress(model: &Path, scheme: Option<&str>, energy: Option<f64>, out: &Path) -> CliResult<()> {
    let model = load_model(model)?;
    let scheme = match (scheme, energy) {
        (Some(text), None) => parse_scheme(text)?,
        (None, Some(e)) => manual_scheme(&model, e)?,
        _ => return Err(CliError::config("give exactly one of --scheme and --energy")),
    };
    let compressed = apply_scheme(&model, &scheme)?;
    compressed.save(out)?;
    let summary = json!({
        "scheme": scheme.ranks(),
        "speedup": scheme_speedup(&model, &scheme)?,
        "params": compressed.param_count(),
        "dense_params": CompressedModel::from(&model).param_count(),
    });
    println!("{summary}");
    Ok(())
}

pub fn eval(model: &Path, binding: &EvaluatorBinding, per_sample: bool) -> CliResult<()> {
    let compressed = CompressedModel::load(model).map_err(|e| CliError::input(&format!("model {}", model.display()), e))?;
    let evaluator: Box<dyn Evaluator> = match binding {
        EvaluatorBinding::Toy { profile_seed, split } => {
            let profile = toy_profile(*profile_seed)?;
            Box::new(profile.split(*split).ok_or_else(|| CliError::config("the toy profile has no fixed condensed split"))?.clone())
        }
        EvaluatorBinding::External { command, dataset, timeout_secs } => {
            let mut ext = ExternalEvaluator::new(command.clone(), dataset.clone());
            ext.timeout = Duration::from_secs(*timeout_secs);
            Box::new(ext)
        }
    };
    let result = evaluator.evaluate(&compressed, per_sample).map_err(CliError::evaluator)?;
    println!("{}", json!({"error": result.error, "per_sample": result.per_sample, "params": compressed.param_count()}));
    Ok(())
}

pub fn retrain_model(model: &Path, profile_seed: u64, epochs: usize, seed: u64, out: &Path) -> CliResult<()> {
    let compressed = CompressedModel::load(model).map_err(|e| CliError::input(&format!("model {}", model.display()), e))?;
    let profile = toy_profile(profile_seed)?;
    let before = profile.dev.evaluate(&compressed, false)?.error;
    let outcome = retrain(&compressed, &profile.train, &TrainConfig::new(epochs, seed))?;
    let after = profile.dev.evaluate(&outcome.model, false)?.error;
    outcome.model.save(out)?;
    println!("{}", json!({"dev_error_before": before, "dev_error_after": after, "train_history": outcome.history}));
    Ok(())
}

pub fn report(log_path: &Path, out: Option<&PathBuf>) -> CliResult<()> {
    let csv = report_csv(&read_records(log_path)?);
    match out {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
