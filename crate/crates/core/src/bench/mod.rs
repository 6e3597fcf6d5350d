//! Simulation study: scenario generation, competitor strategies, metrics,
//! the experiment grid and its reports.

mod grid;
mod ingest;
mod methods;
mod metrics;
mod plot;

pub use grid::{
    aggregate, read_results_csv, run_grid, write_failures_csv, write_results_csv, write_summary_csv, CellFailure,
    CellSummary, ExperimentConfig, GridOutput, MeanSe, ResultRow, RunRecord,
};
pub use ingest::{read_feature_stream, write_feature_stream, FeatureStream, LABEL_COLUMN};

pub use methods::{
    competitor_equispaced, competitor_mewma, competitor_proposed, competitor_random, competitor_unsupervised,
    run_method, Method, MethodRun, MewmaChart, MewmaConfig,
};
pub use metrics::{compute_metrics, BinaryMetrics, ConfusionMatrix, Metrics};
pub use plot::{figure_f1_vs_budget, figure_f1_vs_delta, figure_weight_sweep, write_figures, PanelGrid, Series};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phmm::{ModelParams, ObservationStream};
use crate::sampler::{simulate_sequence, EndpointConstraint};
use crate::stats::CholeskyFactor;

/// Number of classes in the generated streams: in control plus two faults.
pub const SCENARIO_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Deterministic alternation of in-control runs and fixed-length fault runs.
    Alternating,
    /// Markov chain whose expected run lengths match the alternating layout.
    Markov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub p: usize,
    pub delta: f64,
    pub budget: f64,
    pub t_init: usize,
    pub t_stream: usize,
    /// Inclusive bounds of the in-control run length.
    pub ic_run_range: (usize, usize),
    pub oc_run_len: usize,
    /// Fault rows at stream steps `<= class_switch` (1-based) belong to the
    /// first fault class, later ones to the second.
    pub class_switch: usize,
    pub generator: Generator,
    pub replicates: usize,
    pub root_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            p: 10,
            delta: 3.0,
            budget: 0.105,
            t_init: 100,
            t_stream: 500,
            ic_run_range: (60, 85),
            oc_run_len: 5,
            class_switch: 250,
            generator: Generator::Alternating,
            replicates: 16,
            root_seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ic_run_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "ic_run_range ({lo}, {hi}) must satisfy 0 < lower <= upper"
            )));
        }
        if self.p == 0 || self.t_init == 0 || self.t_stream == 0 || self.oc_run_len == 0 || self.replicates == 0 {
            return Err(Error::Config(
                "p, t_init, t_stream, oc_run_len and replicates must be positive".into(),
            ));
        }
        if !self.delta.is_finite() {
            return Err(Error::Config("delta must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.budget) {
            return Err(Error::Config("budget must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// σ_ij = 0.75^|i−j|.
pub fn scenario_covariance(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| 0.75f64.powi(i.abs_diff(j) as i32))
}

/// Class means: 0, δe₁, δe₂.
pub fn scenario_means(p: usize, delta: f64) -> Vec<DVector<f64>> {
    let mut d1 = DVector::zeros(p);
    let mut d2 = DVector::zeros(p);
    d1[0] = delta;
    if p > 1 {
        d2[1] = delta;
    } else {
        d2[0] = delta;
    }
    vec![DVector::zeros(p), d1, d2]
}

/// One generated replicate.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// `t_init` in-control rows.
    pub init: DMatrix<f64>,
    /// `t_stream` monitored rows.
    pub stream: DMatrix<f64>,
    /// Class of every monitored row: 0 in control, 1 and 2 the faults.
    pub truth: Vec<usize>,
    pub means: Vec<DVector<f64>>,
    pub covariance: DMatrix<f64>,
}

impl Scenario {
    pub fn init_stream(&self) -> Result<ObservationStream> {
        ObservationStream::with_initial_ic(self.init.clone(), self.init.nrows())
    }

    pub fn dim(&self) -> usize {
        self.stream.ncols()
    }
}

fn alternating_states<R: Rng>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<usize> {
    let (lo, hi) = cfg.ic_run_range;
    let mut states = Vec::with_capacity(cfg.t_stream);
    while states.len() < cfg.t_stream {
        let ic = rng.random_range(lo..=hi);
        states.extend(std::iter::repeat_n(0, ic));
        for _ in 0..cfg.oc_run_len {
            let step = states.len() + 1;
            states.push(if step <= cfg.class_switch { 1 } else { 2 });
        }
    }
    states.truncate(cfg.t_stream);
    states
}

/// Three-state chain with geometric run lengths of the same means as the
/// alternating layout. Faults of both classes are equally likely.
pub fn markov_scenario_model(cfg: &ScenarioConfig) -> Result<ModelParams> {
    let (lo, hi) = cfg.ic_run_range;
    let leave_ic = 2.0 / (lo + hi) as f64;
    let leave_oc = 1.0 / cfg.oc_run_len as f64;
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[
            1.0 - leave_ic,
            leave_ic / 2.0,
            leave_ic / 2.0,
            leave_oc,
            1.0 - leave_oc,
            0.0,
            leave_oc,
            0.0,
            1.0 - leave_oc,
        ],
    );
    ModelParams::new(
        vec![1.0, 0.0, 0.0],
        a,
        scenario_means(cfg.p, cfg.delta),
        scenario_covariance(cfg.p),
    )
}

/// Generates the in-control block, the monitored stream and its true classes.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let means = scenario_means(cfg.p, cfg.delta);
    let covariance = scenario_covariance(cfg.p);
    let factor = CholeskyFactor::new(&covariance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let draw = |rng: &mut ChaCha8Rng, class: usize| {
        let z: Vec<f64> = (0..cfg.p).map(|_| rng.sample(StandardNormal)).collect();
        factor.color(means[class].as_slice(), &z)
    };

    let (truth, stream) = match cfg.generator {
        Generator::Alternating => {
            let truth = alternating_states(cfg, &mut rng);
            let mut stream = DMatrix::zeros(cfg.t_stream, cfg.p);
            // Init rows are drawn after the state path so both generators
            // share the init block layout below.
            let rows: Vec<Vec<f64>> = truth.iter().map(|&c| draw(&mut rng, c)).collect();
            for (s, row) in rows.iter().enumerate() {
                stream.row_mut(s).copy_from_slice(row);
            }
            (truth, stream)
        }
        Generator::Markov => {
            let model = markov_scenario_model(cfg)?;
            let constraint = EndpointConstraint {
                start: Some(0),
                end: None,
                length: cfg.t_stream,
            };
            simulate_sequence(&model, constraint, rng.random())?
        }
    };

    let mut init = DMatrix::zeros(cfg.t_init, cfg.p);
    for r in 0..cfg.t_init {
        let row = draw(&mut rng, 0);
        init.row_mut(r).copy_from_slice(&row);
    }
    Ok(Scenario {
        init,
        stream,
        truth,
        means,
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn covariance_entries() {
        for p in [3, 10, 30] {
            let s = scenario_covariance(p);
            assert_eq!(s[(0, 0)], 1.0);
            assert_eq!(s[(0, 1)], 0.75);
            assert_eq!(s[(0, 2)], 0.5625);
            assert_eq!(s[(2, 0)], 0.5625);
        }
    }

    #[test]
    fn shift_vectors() {
        let m = scenario_means(3, 1.2);
        assert_eq!(m[1].as_slice(), &[1.2, 0.0, 0.0]);
        assert_eq!(m[2].as_slice(), &[0.0, 1.2, 0.0]);
        assert!(m[0].iter().all(|&v| v == 0.0));
    }

    fn cfg(p: usize, delta: f64) -> ScenarioConfig {
        ScenarioConfig {
            p,
            delta,
            ..Default::default()
        }
    }

    #[test]
    fn run_layout() {
        for seed in 0..20 {
            let sc = generate_scenario(&cfg(3, 2.0), seed).unwrap();
            assert_eq!(sc.init.shape(), (100, 3));
            assert_eq!(sc.stream.shape(), (500, 3));
            assert_eq!(sc.truth.len(), 500);
            let mut s = 0;
            while s < 500 {
                let start = s;
                while s < 500 && sc.truth[s] == 0 {
                    s += 1;
                }
                let ic = s - start;
                if s < 500 {
                    assert!((60..=85).contains(&ic), "ic run {ic}");
                    let oc_start = s;
                    while s < 500 && sc.truth[s] != 0 {
                        let want = if s < 250 { 1 } else { 2 };
                        assert_eq!(sc.truth[s], want, "step {s}");
                        s += 1;
                    }
                    assert!(s - oc_start == 5 || s == 500);
                } else {
                    assert!(ic <= 85);
                }
            }
        }
    }

    #[test]
    fn zero_shift_classes_share_the_in_control_law() {
        let sc = generate_scenario(&cfg(2, 0.0), 4).unwrap();
        assert!(sc.means.iter().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn emissions_have_the_configured_moments() {
        let p = 4;
        let sc = generate_scenario(
            &ScenarioConfig {
                t_stream: 20_000,
                ..cfg(p, 3.0)
            },
            9,
        )
        .unwrap();
        let sigma = scenario_covariance(p);
        let mut sums = vec![DVector::<f64>::zeros(p); 3];
        let mut counts = [0usize; 3];
        let mut scatter = DMatrix::<f64>::zeros(p, p);
        for (s, &c) in sc.truth.iter().enumerate() {
            let y = sc.stream.row(s).transpose();
            let d = &y - &sc.means[c];
            scatter += &d * d.transpose();
            sums[c] += y;
            counts[c] += 1;
        }
        for c in 0..3 {
            let mean = &sums[c] / counts[c] as f64;
            let se = (1.0 / counts[c] as f64).sqrt();
            for j in 0..p {
                assert!((mean[j] - sc.means[c][j]).abs() < 4.0 * se, "class {c} coord {j}");
            }
        }
        let cov = scatter / sc.truth.len() as f64;
        for i in 0..p {
            for j in 0..p {
                assert_abs_diff_eq!(cov[(i, j)], sigma[(i, j)], epsilon = 0.05);
            }
        }
    }

    #[test]
    fn same_seed_same_scenario() {
        let a = generate_scenario(&cfg(3, 1.0), 5).unwrap();
        let b = generate_scenario(&cfg(3, 1.0), 5).unwrap();
        assert_eq!(a.stream, b.stream);
        assert_eq!(a.init, b.init);
        assert_eq!(a.truth, b.truth);
        let c = generate_scenario(&cfg(3, 1.0), 6).unwrap();
        assert_ne!(a.stream, c.stream);
    }

    #[test]
    fn markov_generator_starts_in_control() {
        let c = ScenarioConfig {
            generator: Generator::Markov,
            ..cfg(3, 2.0)
        };
        let sc = generate_scenario(&c, 1).unwrap();
        assert_eq!(sc.truth[0], 0);
        assert_eq!(sc.truth.len(), 500);
        assert!(sc.truth.iter().any(|&s| s != 0));
    }

    #[test]
    fn rejects_bad_ranges() {
        let bad = ScenarioConfig {
            ic_run_range: (90, 60),
            ..Default::default()
        };
        assert!(generate_scenario(&bad, 0).is_err());
    }
}
