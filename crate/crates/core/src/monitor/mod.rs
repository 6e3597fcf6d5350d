//! Stream-based active learning loop.
//!
//! Each arriving observation is appended to the data seen so far, the model
//! is refitted and the number of states selected by AIC, the newest row is
//! classified from its filtered posterior, and a label may be bought when the
//! posterior is unusually uncertain (exploitation) or the observation sits
//! far from every known state (exploration).

mod criteria;
mod log;

pub use criteria::{
    bootstrap_entropies, entropy, exploitation_pvalue, exploration_pvalue, pvalue_from_sorted, MewmaState,
};
pub use log::{read_decision_log, write_decision_log, LogRow};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{best_of, init_candidates, init_one_state, InitLadder, InitSearchConfig};
use crate::phmm::{aic, fit, predict_state, FitOptions, FitResult, ModelParams, ObservationStream, Prepared};
use crate::seeds::derive;

const SEED_BOOTSTRAP: u64 = 1;
const SEED_RANDOM: u64 = 2;
/// Longest pause, in steps, before a failed fresh initialization is retried.
const MAX_BACKOFF: usize = 32;
/// Uniform weight mixed into a warm start's π and A when new labels make it
/// impossible.
const WARM_SMOOTHING: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    /// Entropy and MEWMA criteria.
    Proposed,
    /// Label with probability equal to the remaining label rate.
    Random,
    /// Label every 1/B steps.
    Equispaced,
    /// Never label.
    None,
}

/// Extra condition a criterion must meet before a label is bought.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetGuard {
    /// Labels spent so far per elapsed step must stay below B.
    SpentRate,
    /// Remaining labels per remaining step must be below B. With ⌊B·T⌋ = B·T
    /// this never holds, so the criteria stop labeling altogether.
    RemainingRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub budget: f64,
    pub w_exr: f64,
    pub lambda: f64,
    pub bootstrap_m: usize,
    pub bootstrap_len: usize,
    pub init: InitSearchConfig,
    pub policy: LabelPolicy,
    pub budget_guard: BudgetGuard,
    /// Exploration only fires while the point prediction is out of control.
    /// Off by default: with it on, a fault class the model cannot yet
    /// predict is never explored.
    pub exploration_gate: bool,
    /// EM iterations per step when warm-starting.
    pub warm_iterations: usize,
    /// Largest parameter change that keeps the cached bootstrap distribution.
    pub drift_tol: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            budget: 0.1,
            w_exr: 0.5,
            lambda: 0.3,
            bootstrap_m: 199,
            bootstrap_len: 50,
            init: InitSearchConfig::default(),
            policy: LabelPolicy::Proposed,
            budget_guard: BudgetGuard::SpentRate,
            exploration_gate: false,
            warm_iterations: 10,
            drift_tol: 1e-3,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.budget) {
            return Err(Error::Config("budget must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.w_exr) {
            return Err(Error::Config("w_exr must lie in [0, 1]".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config("lambda must lie in (0, 1]".into()));
        }
        if self.bootstrap_m == 0 || self.bootstrap_len == 0 || self.warm_iterations == 0 {
            return Err(Error::Config(
                "bootstrap_m, bootstrap_len and warm_iterations must be positive".into(),
            ));
        }
        self.init.validate()
    }

    pub fn w_exp(&self) -> f64 {
        1.0 - self.w_exr
    }
}

/// Answers label queries with the true class (0 = in control).
pub trait LabelOracle {
    /// `t` is the 0-based position in the monitored stream.
    fn query(&mut self, t: usize) -> Result<usize>;
}

impl<F: FnMut(usize) -> Result<usize>> LabelOracle for F {
    fn query(&mut self, t: usize) -> Result<usize> {
        self(t)
    }
}

/// Oracle backed by a known state sequence; counts its queries.
#[derive(Debug, Clone)]
pub struct SliceOracle<'a> {
    truth: &'a [usize],
    pub queries: usize,
}

impl<'a> SliceOracle<'a> {
    pub fn new(truth: &'a [usize]) -> Self {
        Self { truth, queries: 0 }
    }
}

impl LabelOracle for SliceOracle<'_> {
    fn query(&mut self, t: usize) -> Result<usize> {
        self.queries += 1;
        self.truth.get(t).copied().ok_or_else(|| Error::Oracle {
            t,
            reason: "no true state recorded".into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    None,
    Exploitation,
    Exploration,
    Random,
    Schedule,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::None => "none",
            LabelSource::Exploitation => "exploitation",
            LabelSource::Exploration => "exploration",
            LabelSource::Random => "random",
            LabelSource::Schedule => "schedule",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    /// 0-based stream position.
    pub t: usize,
    /// Emitted class (see [`MonitorOutput::predictions`]).
    pub predicted: usize,
    pub posterior: Vec<f64>,
    pub entropy: f64,
    /// Only computed by the proposed policy; 1 when the model has one state.
    pub p_exp: Option<f64>,
    pub v2: f64,
    pub p_exr: f64,
    pub label_source: LabelSource,
    pub true_class: Option<usize>,
    pub b_t: f64,
    pub n_states: usize,
}

impl DecisionRecord {
    pub fn labeled(&self) -> bool {
        self.label_source != LabelSource::None
    }
}

#[derive(Debug, Clone)]
pub struct MonitorOutput {
    /// One class per stream step. Classes the oracle has named keep their
    /// number; a model state not yet tied to a class is emitted as
    /// `n_classes + k`, k counting unnamed states from 0.
    pub predictions: Vec<usize>,
    /// Stream positions whose label was bought, ascending.
    pub labeled: Vec<usize>,
    pub log: Vec<DecisionRecord>,
    /// ⌊B·T⌋.
    pub budget_total: usize,
    pub final_model: Option<ModelParams>,
    /// Model in use when each label was bought.
    pub snapshots: Vec<(usize, ModelParams)>,
    /// Set when the oracle failed; the log stops at the failing step.
    pub aborted: Option<String>,
}

/// How fresh models are seeded.
#[derive(Debug, Clone)]
pub enum InitStrategy {
    Search,
    /// Start from the generating parameters, one mean per class in class
    /// order. States beyond the named ones take the unnamed classes' means.
    TrueParameters {
        means: Vec<DVector<f64>>,
        covariance: DMatrix<f64>,
    },
    /// Search starts plus the generating parameters; the largest likelihood
    /// wins.
    Both {
        means: Vec<DVector<f64>>,
        covariance: DMatrix<f64>,
    },
}

impl InitStrategy {
    fn searches(&self) -> bool {
        !matches!(self, InitStrategy::TrueParameters { .. })
    }

    fn truth(&self) -> Option<(&[DVector<f64>], &DMatrix<f64>)> {
        match self {
            InitStrategy::Search => None,
            InitStrategy::TrueParameters { means, covariance } | InitStrategy::Both { means, covariance } => {
                Some((means, covariance))
            }
        }
    }
}

/// Runs the monitoring loop over `stream` after the in-control `init` rows.
pub fn run_stream(
    init: &ObservationStream,
    stream: &DMatrix<f64>,
    oracle: &mut dyn LabelOracle,
    cfg: &MonitorConfig,
    n_classes: usize,
    seed: u64,
) -> Result<MonitorOutput> {
    Monitor::new(cfg.clone(), n_classes).run(init, stream, oracle, seed)
}

#[derive(Debug, Clone)]
pub struct Monitor {
    cfg: MonitorConfig,
    n_classes: usize,
    strategy: InitStrategy,
}

impl Monitor {
    pub fn new(cfg: MonitorConfig, n_classes: usize) -> Self {
        Self {
            cfg,
            n_classes,
            strategy: InitStrategy::Search,
        }
    }

    pub fn with_strategy(mut self, strategy: InitStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn run(
        &self,
        init: &ObservationStream,
        stream: &DMatrix<f64>,
        oracle: &mut dyn LabelOracle,
        seed: u64,
    ) -> Result<MonitorOutput> {
        self.cfg.validate()?;
        if init.labels().iter().any(|l| l.is_some_and(|s| s != 0)) {
            return Err(Error::invalid("the initial stream must be in control"));
        }
        if stream.ncols() != init.dim() {
            return Err(Error::DimensionMismatch {
                expected: init.dim(),
                actual: stream.ncols(),
            });
        }
        let mut run = Run::new(self, init, stream, seed)?;
        for s in 0..stream.nrows() {
            if let Err(e) = run.step(s, oracle) {
                match e {
                    Error::Oracle { .. } => {
                        run.aborted = Some(e.to_string());
                        break;
                    }
                    other => return Err(other),
                }
            }
        }
        Ok(run.finish())
    }
}

struct Run<'a> {
    monitor: &'a Monitor,
    cfg: &'a MonitorConfig,
    data: DMatrix<f64>,
    labels: Vec<Option<usize>>,
    t_init: usize,
    t_len: usize,
    seed: u64,
    budget_total: usize,
    remaining: usize,
    /// Class of each internal state that has been named by a label.
    class_of_state: Vec<usize>,
    /// Warm model per state count (index N − 1).
    warm: Vec<Option<ModelParams>>,
    retry_at: Vec<usize>,
    failures: Vec<u32>,
    needs_reset: bool,
    full_refit: bool,
    mewma: MewmaState,
    bootstrap: Option<(ModelParams, Vec<f64>)>,
    random: ChaCha8Rng,
    schedule: Vec<usize>,
    predictions: Vec<usize>,
    labeled: Vec<usize>,
    log: Vec<DecisionRecord>,
    snapshots: Vec<(usize, ModelParams)>,
    current: Option<ModelParams>,
    aborted: Option<String>,
}

impl<'a> Run<'a> {
    fn new(monitor: &'a Monitor, init: &ObservationStream, stream: &DMatrix<f64>, seed: u64) -> Result<Self> {
        let cfg = &monitor.cfg;
        let t_init = init.len();
        let t_len = stream.nrows();
        let p = init.dim();
        let mut data = DMatrix::zeros(t_init + t_len, p);
        data.rows_mut(0, t_init).copy_from(init.observations());
        data.rows_mut(t_init, t_len).copy_from(stream);
        let mut labels = vec![None; t_init + t_len];
        labels[..t_init].iter_mut().for_each(|l| *l = Some(0));

        let budget_total = (cfg.budget * t_len as f64 + 1e-9).floor() as usize;
        let schedule = if cfg.policy == LabelPolicy::Equispaced && budget_total > 0 {
            (1..=budget_total)
                .map(|j| (j as f64 / cfg.budget).round() as usize)
                .filter(|&k| (1..=t_len).contains(&k))
                .map(|k| k - 1)
                .collect()
        } else {
            Vec::new()
        };

        // The one-state model of the in-control rows.
        let init_labeled = ObservationStream::with_initial_ic(init.observations().clone(), t_init)?;
        let mut starts = Vec::new();
        if monitor.strategy.searches() {
            starts.push(init_one_state(&init_labeled)?);
        }
        if let Some((means, covariance)) = monitor.strategy.truth() {
            starts.push(ModelParams::new(
                vec![1.0],
                DMatrix::from_element(1, 1, 1.0),
                vec![means[0].clone()],
                covariance.clone(),
            )?);
        }
        let one = best_of(&init_labeled, &starts, cfg.init.fit)?;

        Ok(Self {
            monitor,
            cfg,
            data,
            labels,
            t_init,
            t_len,
            seed,
            budget_total,
            remaining: budget_total,
            class_of_state: vec![0],
            warm: vec![Some(one.model.clone())],
            retry_at: vec![0],
            failures: vec![0],
            needs_reset: false,
            full_refit: false,
            mewma: MewmaState::default(),
            bootstrap: None,
            random: ChaCha8Rng::seed_from_u64(derive(seed, &[SEED_RANDOM])),
            schedule,
            predictions: Vec::with_capacity(t_len),
            labeled: Vec::new(),
            log: Vec::with_capacity(t_len),
            snapshots: Vec::new(),
            current: Some(one.model),
            aborted: None,
        })
    }

    fn n_known(&self) -> usize {
        self.class_of_state.len()
    }

    fn emit(&self, state: usize) -> usize {
        match self.class_of_state.get(state) {
            Some(&c) => c,
            None => self.monitor.n_classes + (state - self.n_known()),
        }
    }

    fn ensure_slots(&mut self, n: usize) {
        while self.warm.len() < n {
            self.warm.push(None);
            self.retry_at.push(0);
            self.failures.push(0);
        }
    }

    fn backoff(&mut self, n: usize, s: usize) {
        let i = n - 1;
        self.warm[i] = None;
        self.failures[i] += 1;
        let wait = (1usize << self.failures[i].min(5)).min(MAX_BACKOFF);
        self.retry_at[i] = s + wait;
    }

    /// Model with `n` states built from the generating parameters.
    fn true_start(&self, n: usize, means: &[DVector<f64>], cov: &DMatrix<f64>) -> Result<ModelParams> {
        let mut unnamed = (0..means.len()).filter(|c| !self.class_of_state.contains(c));
        let mut chosen = Vec::with_capacity(n);
        for state in 0..n {
            let class = match self.class_of_state.get(state) {
                Some(&c) => c,
                None => unnamed
                    .next()
                    .ok_or_else(|| Error::invalid("more states than generating classes"))?,
            };
            chosen.push(means[class].clone());
        }
        ModelParams::with_sticky_transitions(chosen, cov.clone(), self.cfg.init.diag_init)
    }

    /// Search starts for `n` states; at most `n_try` of them.
    fn search_starts(&self, stream: &ObservationStream, n: usize, n_try: usize) -> Result<Vec<ModelParams>> {
        let robust = init_one_state(stream)?;
        if n == 1 {
            return Ok(vec![robust]);
        }
        let prev = match (n, &self.warm[n - 2]) {
            (2, _) => vec![robust],
            (_, Some(carry)) => vec![robust, carry.clone()],
            (_, None) => return Err(Error::ModelSelection(format!("no fitted model with {} states", n - 1))),
        };
        let cfg = InitSearchConfig { n_try, ..self.cfg.init };
        init_candidates(stream, &prev, n, &cfg)
    }

    /// Starts for `n` states: up to `n_try` search starts and/or the
    /// generating parameters, depending on the strategy.
    fn starts(&self, stream: &ObservationStream, n: usize, n_try: usize) -> Vec<ModelParams> {
        let mut out = Vec::new();
        if self.monitor.strategy.searches() {
            out.extend(self.search_starts(stream, n, n_try).unwrap_or_default());
        }
        if let Some((means, cov)) = self.monitor.strategy.truth() {
            out.extend(self.true_start(n, means, cov).ok());
        }
        out
    }

    /// Fresh fit with `n` states; search starts are seeded from the fitted
    /// `n − 1` model.
    fn fresh(&self, stream: &ObservationStream, n: usize) -> Result<FitResult> {
        best_of(stream, &self.starts(stream, n, self.cfg.init.n_try), self.cfg.init.fit)
    }

    /// Refits every candidate state count on the first `rows` rows and returns
    /// the AIC winner.
    fn refit(&mut self, rows: usize, s: usize) -> Result<FitResult> {
        let stream = ObservationStream::new(
            self.data.rows(0, rows).into_owned(),
            self.labels[..rows].to_vec(),
            self.t_init,
        )?;
        let lo = self.n_known();
        let hi = lo + 1;
        self.ensure_slots(hi);
        let opts = if self.full_refit {
            self.cfg.init.fit
        } else {
            FitOptions {
                max_iter: self.cfg.warm_iterations,
                ..self.cfg.init.fit
            }
        };

        let mut fits: Vec<Option<FitResult>> = vec![None; hi + 1];
        if self.needs_reset {
            self.warm.iter_mut().for_each(|w| *w = None);
            self.retry_at.iter_mut().for_each(|r| *r = 0);
            self.failures.iter_mut().for_each(|f| *f = 0);
            if self.monitor.strategy.searches() {
                let mut ladder = InitLadder::new(&stream, &self.cfg.init)?;
                while ladder.top() < hi {
                    if ladder.climb(&stream, &self.cfg.init).is_err() {
                        break;
                    }
                }
                for n in lo..=hi.min(ladder.top()) {
                    let res = ladder.level(n).expect("climbed").clone();
                    self.warm[n - 1] = Some(res.model.clone());
                    fits[n] = Some(res);
                }
                if ladder.top() < hi {
                    self.backoff(ladder.top() + 1, s);
                }
            }
            if let Some((means, cov)) = self.monitor.strategy.truth() {
                for n in lo..=hi {
                    let Ok(start) = self.true_start(n, means, cov) else {
                        continue;
                    };
                    let Ok(res) = fit(&stream, &start, self.cfg.init.fit) else {
                        continue;
                    };
                    if fits[n]
                        .as_ref()
                        .is_none_or(|f| res.log_likelihood() > f.log_likelihood())
                    {
                        self.warm[n - 1] = Some(res.model.clone());
                        self.failures[n - 1] = 0;
                        fits[n] = Some(res);
                    }
                }
            }
            self.needs_reset = false;
        }

        let prep = Prepared::new(&stream)?;
        for n in lo..=hi {
            if fits[n].is_some() {
                continue;
            }
            let result = match self.warm[n - 1].clone() {
                Some(m) if n >= 2 => {
                    // One fresh start per kind is refitted next to the warm
                    // model so a poor optimum found early can be abandoned.
                    let mut best = match prep.fit(&m, opts) {
                        Err(Error::ImpossibleLabeling { .. }) => prep.fit(&m.smoothed(WARM_SMOOTHING)?, opts),
                        other => other,
                    };
                    for start in self.starts(&stream, n, 1) {
                        if let Ok(c) = prep.fit(&start, opts) {
                            if best.as_ref().is_err()
                                || best.as_ref().is_ok_and(|b| c.log_likelihood() > b.log_likelihood())
                            {
                                best = Ok(c);
                            }
                        }
                    }
                    best
                }
                Some(m) => prep.fit(&m, opts),
                None if s >= self.retry_at[n - 1]
                    && (n == 1 || self.warm[n - 2].is_some() || self.monitor.strategy.truth().is_some()) =>
                {
                    self.fresh(&stream, n)
                }
                None => continue,
            };
            match result {
                Ok(res) => {
                    self.warm[n - 1] = Some(res.model.clone());
                    self.failures[n - 1] = 0;
                    fits[n] = Some(res);
                }
                Err(_) => self.backoff(n, s),
            }
        }
        self.full_refit = false;

        let mut best: Option<(f64, FitResult)> = None;
        for res in fits.into_iter().flatten() {
            let a = aic(&res.model, res.log_likelihood());
            if a.is_finite() && best.as_ref().is_none_or(|(b, _)| a < *b) {
                best = Some((a, res));
            }
        }
        best.map(|(_, r)| r)
            .ok_or_else(|| Error::ModelSelection(format!("no model with {lo} or {hi} states could be fitted at t={s}")))
    }

    fn bootstrap_pvalue(&mut self, model: &ModelParams, observed: f64, s: usize) -> Result<f64> {
        let stale = match &self.bootstrap {
            Some((m, _)) => m.max_abs_diff(model).is_none_or(|d| d > self.cfg.drift_tol),
            None => true,
        };
        if stale {
            let seed = derive(self.seed, &[SEED_BOOTSTRAP, s as u64]);
            let sims = bootstrap_entropies(model, self.cfg.bootstrap_m, self.cfg.bootstrap_len, seed)?;
            self.bootstrap = Some((model.clone(), sims));
        }
        let sims = &self.bootstrap.as_ref().expect("filled above").1;
        Ok(pvalue_from_sorted(sims, observed))
    }

    fn guard_allows(&self, s: usize, b_t: f64) -> bool {
        match self.cfg.budget_guard {
            BudgetGuard::SpentRate => (self.labeled.len() as f64) / ((s + 1) as f64) < self.cfg.budget,
            BudgetGuard::RemainingRate => b_t < self.cfg.budget,
        }
    }

    fn step(&mut self, s: usize, oracle: &mut dyn LabelOracle) -> Result<()> {
        let rows = self.t_init + s + 1;
        let b_t = self.remaining as f64 / (self.t_len - s) as f64;

        let sel = self.refit(rows, s)?;
        let model = sel.model;
        let (posterior, state) = predict_state(&sel.posterior, rows - 1);
        let h = entropy(&posterior);
        let y: Vec<f64> = self.data.row(rows - 1).iter().copied().collect();
        let v2 = self.mewma.update(&y, &model, self.cfg.lambda);
        let p_exr = exploration_pvalue(v2, model.dim());

        let mut p_exp = None;
        let source = match self.cfg.policy {
            LabelPolicy::Proposed => {
                let pe = if model.n_states() >= 2 {
                    self.bootstrap_pvalue(&model, h, s)?
                } else {
                    1.0
                };
                p_exp = Some(pe);
                let open = self.remaining > 0 && self.guard_allows(s, b_t);
                if open && model.n_states() >= 2 && pe < self.cfg.w_exp() * b_t {
                    LabelSource::Exploitation
                } else if open && p_exr < self.cfg.w_exr * b_t && (!self.cfg.exploration_gate || state != 0) {
                    LabelSource::Exploration
                } else {
                    LabelSource::None
                }
            }
            LabelPolicy::Random => {
                let u: f64 = self.random.random();
                if self.remaining > 0 && u < b_t {
                    LabelSource::Random
                } else {
                    LabelSource::None
                }
            }
            LabelPolicy::Equispaced => {
                if self.remaining > 0 && self.schedule.binary_search(&s).is_ok() {
                    LabelSource::Schedule
                } else {
                    LabelSource::None
                }
            }
            LabelPolicy::None => LabelSource::None,
        };

        let mut predicted = self.emit(state);
        let mut true_class = None;
        if source != LabelSource::None {
            let class = oracle.query(s)?;
            assert!(self.remaining > 0, "label budget exhausted");
            self.remaining -= 1;
            self.labeled.push(s);
            self.snapshots.push((s, model.clone()));
            let internal = match self.class_of_state.iter().position(|&c| c == class) {
                Some(i) => i,
                None => {
                    self.class_of_state.push(class);
                    self.needs_reset = true;
                    self.class_of_state.len() - 1
                }
            };
            self.labels[rows - 1] = Some(internal);
            self.full_refit = true;
            predicted = class;
            true_class = Some(class);
        }
        assert!(
            self.labeled.len() <= self.budget_total,
            "labels used {} exceed budget {}",
            self.labeled.len(),
            self.budget_total
        );

        self.predictions.push(predicted);
        self.log.push(DecisionRecord {
            t: s,
            predicted,
            posterior,
            entropy: h,
            p_exp,
            v2,
            p_exr,
            label_source: source,
            true_class,
            b_t,
            n_states: model.n_states(),
        });
        self.current = Some(model);
        Ok(())
    }

    fn finish(self) -> MonitorOutput {
        MonitorOutput {
            predictions: self.predictions,
            labeled: self.labeled,
            log: self.log,
            budget_total: self.budget_total,
            final_model: self.current,
            snapshots: self.snapshots,
            aborted: self.aborted,
        }
    }
}
