//! The constrained search loop: sample a scheme, punish it if it misses the speedup target,
//! otherwise evaluate it on the proxy evaluator and reward it, then take a policy-gradient step.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerParams, ControllerShape, PolicyOutput};
use crate::error::{Error, Result};
use crate::evaluator::{Evaluator, Stopwatch};
use crate::netmodel::{apply_scheme_with, scheme_speedup, LayeredModel, ModelFactors, Scheme};
use crate::reward::RewardConfig;
use crate::space::SearchSpace;

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_embed")]
    pub embed: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Decay of an exponential moving-average reward baseline; `None` uses raw rewards.
    #[serde(default)]
    pub baseline_decay: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_hidden() -> usize {
    100
}
fn default_embed() -> usize {
    100
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    1
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { hidden: 100, embed: 100, learning_rate: 1e-3, baseline_decay: None, batch_size: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub reward: RewardConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    pub max_steps: usize,
    pub seed: u64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

impl SearchConfig {
    pub fn new(space: SearchSpace, reward: RewardConfig, max_steps: usize, seed: u64) -> Self {
        Self { space, reward, controller: ControllerConfig::default(), max_steps, seed, top_k: DEFAULT_TOP_K }
    }

    pub fn validate(&self, model: &LayeredModel) -> Result<()> {
        self.space.validate(model)?;
        self.reward.validate()?;
        if self.controller.batch_size == 0 {
            return Err(Error::ContractViolation("batch_size must be at least 1".into()));
        }
        if let Some(decay) = self.controller.baseline_decay {
            if !(0.0..1.0).contains(&decay) {
                return Err(Error::ContractViolation(format!("baseline_decay must lie in [0, 1), got {decay}")));
            }
        }
        Ok(())
    }

    pub fn controller_shape(&self) -> ControllerShape {
        ControllerShape {
            layers: self.space.num_layers(),
            options: self.space.num_options(),
            embed: self.controller.embed,
            hidden: self.controller.hidden,
        }
    }

    pub fn init_controller(&self) -> Result<ControllerParams> {
        ControllerParams::init(self.controller_shape(), self.seed)
    }

    fn sampling_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        rng
    }
}

/// A scheme that met the speedup target and was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploredPoint {
    pub scheme: Scheme,
    pub error: f64,
    pub speedup: f64,
    pub step: u64,
    pub reward: f64,
}

/// One line of the search log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: u64,
    pub scheme: Vec<usize>,
    pub indices: Vec<usize>,
    pub probs: Vec<f64>,
    pub speedup: f64,
    pub rejected: bool,
    pub error: Option<f64>,
    pub reward: f64,
    /// Evaluation wall time; zero for rejected steps and memo hits.
    pub wall_ms: f64,
}

impl StepRecord {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// The same record with its wall-clock field zeroed, for determinism comparisons.
    pub fn masked(&self) -> Self {
        Self { wall_ms: 0.0, ..self.clone() }
    }
}

pub fn read_log(reader: impl BufRead) -> Result<Vec<StepRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::from(e).context(format!("log line {}", i + 1)))?);
    }
    Ok(records)
}

/// Mutable search state: controller, sampling RNG, explored set and evaluation memo.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub controller: ControllerParams,
    pub explored: Vec<ExploredPoint>,
    pub step: u64,
    rng: ChaCha8Rng,
    memo: HashMap<Scheme, f64>,
    reward_baseline: Option<f64>,
    pending: Vec<f64>,
    pending_count: usize,
}

/// A search bound to a model and a proxy evaluator.
pub struct Search<'a> {
    config: SearchConfig,
    model: &'a LayeredModel,
    factors: ModelFactors,
    evaluator: &'a dyn Evaluator,
    pub state: SearchState,
}

impl<'a> Search<'a> {
    pub fn new(config: SearchConfig, model: &'a LayeredModel, evaluator: &'a dyn Evaluator) -> Result<Self> {
        let factors = ModelFactors::new(model)?;
        Self::with_factors(config, model, factors, evaluator)
    }

    pub fn with_factors(config: SearchConfig, model: &'a LayeredModel, factors: ModelFactors, evaluator: &'a dyn Evaluator) -> Result<Self> {
        config.validate(model)?;
        let controller = config.init_controller()?;
        let pending = vec![0.0; controller.theta().len()];
        let state = SearchState {
            controller,
            explored: Vec::new(),
            step: 0,
            rng: config.sampling_rng(),
            memo: HashMap::new(),
            reward_baseline: None,
            pending,
            pending_count: 0,
        };
        Ok(Self { config, model, factors, evaluator, state })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    /// One search step. On evaluator failure the state is left untouched.
    pub fn step(&mut self) -> Result<StepRecord> {
        let output = self.state.controller.forward()?;
        let mut rng = self.state.rng.clone();
        let sampled = output.sample(&mut rng);
        let scheme = self.config.space.scheme(&sampled.indices)?;
        let speedup = scheme_speedup(self.model, &scheme)?;
        let step = self.state.step;

        let (rejected, error, reward, wall_ms) = if speedup < self.config.reward.target_speedup {
            (true, None, self.config.reward.punish(speedup)?, 0.0)
        } else {
            let (error, wall_ms) = match self.state.memo.get(&scheme) {
                Some(&w) => (w, 0.0),
                None => {
                    let compressed = apply_scheme_with(self.model, &self.factors, &scheme)?;
                    let watch = Stopwatch::start();
                    let result = self
                        .evaluator
                        .evaluate(&compressed, false)
                        .map_err(|e| e.context(format!("evaluation failed at step {step}")))?;
                    (result.error, watch.elapsed_secs_f64() * 1000.0)
                }
            };
            (false, Some(error), self.config.reward.reward(error)?, wall_ms)
        };

        let record = StepRecord {
            step,
            scheme: scheme.ranks().to_vec(),
            indices: sampled.indices,
            probs: sampled.probs,
            speedup,
            rejected,
            error,
            reward,
            wall_ms,
        };
        self.commit(&output, &record)?;
        self.state.rng = rng;
        Ok(record)
    }

    /// Applies a (new or replayed) record: policy update, explored set and memo.
    fn commit(&mut self, output: &PolicyOutput, record: &StepRecord) -> Result<()> {
        let state = &mut self.state;
        let advantage = match self.config.controller.baseline_decay {
            None => record.reward,
            Some(decay) => {
                let baseline = state.reward_baseline.unwrap_or(record.reward);
                state.reward_baseline = Some(decay * baseline + (1.0 - decay) * record.reward);
                record.reward - baseline
            }
        };
        let sampled = crate::controller::SampledScheme { indices: record.indices.clone(), probs: record.probs.clone() };
        let grad = state.controller.policy_gradient(output, &sampled, advantage)?;
        state.pending.iter_mut().zip(&grad).for_each(|(p, g)| *p += g);
        state.pending_count += 1;
        if state.pending_count == self.config.controller.batch_size {
            let scale = 1.0 / state.pending_count as f64;
            state.pending.iter_mut().for_each(|p| *p *= scale);
            state.controller.apply_update(&state.pending, self.config.controller.learning_rate)?;
            state.pending.iter_mut().for_each(|p| *p = 0.0);
            state.pending_count = 0;
        }
        if let Some(error) = record.error {
            let scheme = Scheme::new(record.scheme.clone());
            state.memo.insert(scheme.clone(), error);
            state.explored.push(ExploredPoint { scheme, error, speedup: record.speedup, step: record.step, reward: record.reward });
        }
        state.step += 1;
        Ok(())
    }

    /// Re-applies logged records without evaluating anything.
    ///
    /// Sampling is repeated with the search RNG and must reproduce the logged indices, which
    /// checks that the log belongs to this configuration.
    pub fn replay(&mut self, records: &[StepRecord]) -> Result<()> {
        for record in records {
            if record.step != self.state.step {
                return Err(Error::ContractViolation(format!("log record {} out of order (expected step {})", record.step, self.state.step)));
            }
            let output = self.state.controller.forward()?;
            let mut rng = self.state.rng.clone();
            let sampled = output.sample(&mut rng);
            if sampled.indices != record.indices {
                return Err(Error::ContractViolation(format!("log diverges from the configuration at step {}", record.step)));
            }
            self.commit(&output, record)?;
            self.state.rng = rng;
        }
        Ok(())
    }

    /// Runs until `max_steps` total steps, writing one JSON line per step to `log`.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>) -> Result<Vec<StepRecord>> {
        let mut records = Vec::new();
        while (self.state.step as usize) < self.config.max_steps {
            let record = self.step()?;
            if let Some(sink) = log.as_deref_mut() {
                writeln!(sink, "{}", record.to_json_line()?)?;
            }
            records.push(record);
        }
        if let Some(sink) = log {
            sink.flush()?;
        }
        Ok(records)
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub explored: Vec<ExploredPoint>,
    pub controller: ControllerParams,
    pub records: Vec<StepRecord>,
}

pub fn run_search(
    config: &SearchConfig,
    model: &LayeredModel,
    evaluator: &dyn Evaluator,
    log: Option<&mut dyn Write>,
) -> Result<SearchOutcome> {
    let mut search = Search::new(config.clone(), model, evaluator)?;
    let records = search.run(log)?;
    Ok(SearchOutcome { explored: search.state.explored, controller: search.state.controller, records })
}

/// Rebuilds the controller a logged run ended with.
pub fn replay_log(config: &SearchConfig, model: &LayeredModel, records: &[StepRecord]) -> Result<ControllerParams> {
    struct NoEval;
    impl Evaluator for NoEval {
        fn evaluate(&self, _: &crate::netmodel::CompressedModel, _: bool) -> Result<crate::evaluator::EvalResult> {
            Err(Error::ContractViolation("replay never evaluates".into()))
        }
    }
    let mut search = Search::new(config.clone(), model, &NoEval)?;
    search.replay(records)?;
    Ok(search.state.controller)
}

/// The explored set of a logged run: every evaluated (non-rejected) step, in log order.
pub fn explored_from_log(records: &[StepRecord]) -> Vec<ExploredPoint> {
    records
        .iter()
        .filter_map(|r| {
            let error = r.error.filter(|_| !r.rejected)?;
            Some(ExploredPoint { scheme: Scheme::new(r.scheme.clone()), error, speedup: r.speedup, step: r.step, reward: r.reward })
        })
        .collect()
}

/// Up to `k` distinct schemes with the lowest error; ties prefer higher speedup, then earlier steps.
pub fn top_k(explored: &[ExploredPoint], k: usize) -> Result<Vec<ExploredPoint>> {
    if explored.is_empty() {
        return Err(Error::NoFeasiblePoint);
    }
    let mut sorted: Vec<&ExploredPoint> = explored.iter().collect();
    sorted.sort_by(|a, b| {
        a.error
            .total_cmp(&b.error)
            .then_with(|| b.speedup.total_cmp(&a.speedup))
            .then_with(|| a.step.cmp(&b.step))
    });
    let mut seen = std::collections::HashSet::new();
    Ok(sorted.into_iter().filter(|p| seen.insert(p.scheme.clone())).take(k).cloned().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub scheme: Scheme,
    pub holdout_error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: Scheme,
    pub error: f64,
    pub candidates: Vec<CandidateOutcome>,
}

/// Re-evaluates candidates on a holdout evaluator and keeps the one with the lowest error
/// (earliest candidate on ties). Fails only if no candidate evaluates.
pub fn select_best(model: &LayeredModel, candidates: &[Scheme], holdout: &dyn Evaluator) -> Result<Selection> {
    let factors = ModelFactors::new(model)?;
    let mut outcomes = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, scheme) in candidates.iter().enumerate() {
        let result = apply_scheme_with(model, &factors, scheme).and_then(|c| holdout.evaluate(&c, false));
        match result {
            Ok(r) => {
                if best.map_or(true, |(_, e)| r.error < e) {
                    best = Some((i, r.error));
                }
                outcomes.push(CandidateOutcome { scheme: scheme.clone(), holdout_error: Some(r.error), failure: None });
            }
            Err(e) => outcomes.push(CandidateOutcome { scheme: scheme.clone(), holdout_error: None, failure: Some(e.to_string()) }),
        }
    }
    let (i, error) = best.ok_or(Error::NoFeasiblePoint)?;
    Ok(Selection { best: candidates[i].clone(), error, candidates: outcomes })
}

/// `step,speedup,error,rejected` rows for speedup/error scatter plots; rejected steps leave
/// the error column empty.
pub fn report_csv(records: &[StepRecord]) -> String {
    let mut out = String::from("step,speedup,error,rejected\n");
    for r in records {
        let error = r.error.map(|e| e.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.step, r.speedup, error, r.rejected));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(error: f64, speedup: f64, step: u64, ranks: Vec<usize>) -> ExploredPoint {
        ExploredPoint { scheme: Scheme::new(ranks), error, speedup, step, reward: -error }
    }

    #[test]
    fn top_k_ordering() {
        let pts = vec![point(5.0, 1.3, 0, vec![1]), point(4.0, 1.3, 1, vec![2]), point(6.0, 1.3, 2, vec![3])];
        let top = top_k(&pts, 5).unwrap();
        assert_eq!(top.iter().map(|p| p.error).collect::<Vec<_>>(), vec![4.0, 5.0, 6.0]);

        let tied = vec![point(5.0, 1.3, 0, vec![1]), point(5.0, 1.5, 1, vec![2])];
        assert_eq!(top_k(&tied, 1).unwrap()[0].speedup, 1.5);

        let dup = vec![point(5.0, 1.3, 0, vec![1]), point(5.0, 1.3, 4, vec![1]), point(6.0, 1.3, 2, vec![2])];
        let top = top_k(&dup, 5).unwrap();
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].step, 0);

        assert!(matches!(top_k(&[], 5), Err(Error::NoFeasiblePoint)));
    }

    #[test]
    fn report_rows() {
        let r = StepRecord {
            step: 3,
            scheme: vec![1, 0],
            indices: vec![0, 1],
            probs: vec![0.5, 0.5],
            speedup: 1.25,
            rejected: false,
            error: Some(4.5),
            reward: -1.0,
            wall_ms: 2.0,
        };
        let rej = StepRecord { rejected: true, error: None, ..r.clone() };
        assert_eq!(report_csv(&[r, rej]), "step,speedup,error,rejected\n3,1.25,4.5,false\n3,1.25,,true\n");
    }

    #[test]
    fn log_line_fields() {
        let r = StepRecord {
            step: 0,
            scheme: vec![2],
            indices: vec![1],
            probs: vec![0.25],
            speedup: 1.5,
            rejected: true,
            error: None,
            reward: -10.0,
            wall_ms: 0.0,
        };
        let line = r.to_json_line().unwrap();
        assert_eq!(
            line,
            r#"{"step":0,"scheme":[2],"indices":[1],"probs":[0.25],"speedup":1.5,"rejected":true,"error":null,"reward":-10.0,"wall_ms":0.0}"#
        );
        assert_eq!(read_log(line.as_bytes()).unwrap(), vec![r]);
    }
}
