use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{Scenario, SCENARIO_CLASSES};
use crate::error::{Error, Result};
use crate::monitor::{InitStrategy, LabelPolicy, Monitor, MonitorConfig, SliceOracle};
use crate::stats::{robust_location_scatter, CholeskyFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mewma,
    Unsupervised,
    Random,
    Equispaced,
    Proposed,
    /// The proposed method with models seeded from the generating parameters.
    ProposedTrueInit,
    /// Both starting schemes; the larger likelihood wins.
    ProposedBothInit,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Mewma,
        Method::Unsupervised,
        Method::Random,
        Method::Equispaced,
        Method::Proposed,
        Method::ProposedTrueInit,
        Method::ProposedBothInit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mewma => "mewma",
            Method::Unsupervised => "unsupervised",
            Method::Random => "random",
            Method::Equispaced => "equispaced",
            Method::Proposed => "proposed",
            Method::ProposedTrueInit => "proposed_true_init",
            Method::ProposedBothInit => "proposed_both_init",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Whether the method's output depends on the label budget.
    pub fn uses_budget(self) -> bool {
        !matches!(self, Method::Mewma | Method::Unsupervised)
    }

    /// Whether the method's output depends on the exploitation weight.
    pub fn uses_weight(self) -> bool {
        matches!(
            self,
            Method::Proposed | Method::ProposedTrueInit | Method::ProposedBothInit
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MewmaConfig {
    pub lambda: f64,
    /// False-alarm level of the χ²_p control limit.
    pub alpha: f64,
}

impl Default for MewmaConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            alpha: 0.01,
        }
    }
}

impl MewmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config("mewma lambda must lie in (0, 1]".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("mewma alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Single-state MEWMA chart with a steady-state χ²_p control limit.
#[derive(Debug, Clone)]
pub struct MewmaChart {
    mean: Vec<f64>,
    factor: CholeskyFactor,
    lambda: f64,
    ucl: f64,
    z: Vec<f64>,
}

impl MewmaChart {
    /// Estimates the in-control mean and covariance robustly from `data`.
    pub fn fit(data: &DMatrix<f64>, cfg: &MewmaConfig) -> Result<Self> {
        cfg.validate()?;
        let est = robust_location_scatter(data)?;
        let p = data.ncols();
        let chi = ChiSquared::new(p as f64).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self {
            mean: est.location.as_slice().to_vec(),
            factor: CholeskyFactor::with_ridge(&est.scatter)?,
            lambda: cfg.lambda,
            ucl: chi.inverse_cdf(1.0 - cfg.alpha),
            z: vec![0.0; p],
        })
    }

    pub fn ucl(&self) -> f64 {
        self.ucl
    }

    /// Advances the accumulator with `y` and returns V².
    pub fn update(&mut self, y: &[f64]) -> f64 {
        let l = self.lambda;
        for ((z, &v), &m) in self.z.iter_mut().zip(y).zip(&self.mean) {
            *z = l * (v - m) + (1.0 - l) * *z;
        }
        let zero = vec![0.0; self.z.len()];
        (2.0 - l) / l * self.factor.mahalanobis_sq(&self.z, &zero)
    }

    /// 1 when the chart signals, else 0.
    pub fn classify(&mut self, y: &[f64]) -> usize {
        usize::from(self.update(y) > self.ucl)
    }
}

/// Binary in-control (0) / out-of-control (1) classification of every stream
/// row. The chart is estimated robustly from the initial and monitored rows
/// together, so the fault rows are a minority the trimming discards.
pub fn competitor_mewma(init: &DMatrix<f64>, stream: &DMatrix<f64>, cfg: &MewmaConfig) -> Result<Vec<usize>> {
    if stream.ncols() != init.ncols() {
        return Err(Error::DimensionMismatch {
            expected: init.ncols(),
            actual: stream.ncols(),
        });
    }
    let (ni, ns) = (init.nrows(), stream.nrows());
    let all = DMatrix::from_fn(ni + ns, init.ncols(), |i, j| {
        if i < ni {
            init[(i, j)]
        } else {
            stream[(i - ni, j)]
        }
    });
    let mut chart = MewmaChart::fit(&all, cfg)?;
    Ok(stream
        .row_iter()
        .map(|r| chart.classify(&r.iter().copied().collect::<Vec<_>>()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub predictions: Vec<usize>,
    pub labels_used: usize,
    pub budget_total: usize,
}

fn monitor_run(
    scenario: &Scenario,
    cfg: &MonitorConfig,
    policy: LabelPolicy,
    strategy: InitStrategy,
    seed: u64,
) -> Result<MethodRun> {
    let cfg = MonitorConfig { policy, ..cfg.clone() };
    let init = scenario.init_stream()?;
    let mut oracle = SliceOracle::new(&scenario.truth);
    let out =
        Monitor::new(cfg, SCENARIO_CLASSES)
            .with_strategy(strategy)
            .run(&init, &scenario.stream, &mut oracle, seed)?;
    if let Some(reason) = out.aborted {
        return Err(Error::Oracle {
            t: out.log.len(),
            reason,
        });
    }
    Ok(MethodRun {
        labels_used: out.labeled.len(),
        budget_total: out.budget_total,
        predictions: out.predictions,
    })
}

pub fn competitor_unsupervised(scenario: &Scenario, cfg: &MonitorConfig, seed: u64) -> Result<MethodRun> {
    monitor_run(scenario, cfg, LabelPolicy::None, InitStrategy::Search, seed)
}

pub fn competitor_random(scenario: &Scenario, cfg: &MonitorConfig, seed: u64) -> Result<MethodRun> {
    monitor_run(scenario, cfg, LabelPolicy::Random, InitStrategy::Search, seed)
}

pub fn competitor_equispaced(scenario: &Scenario, cfg: &MonitorConfig, seed: u64) -> Result<MethodRun> {
    monitor_run(scenario, cfg, LabelPolicy::Equispaced, InitStrategy::Search, seed)
}

pub fn competitor_proposed(scenario: &Scenario, cfg: &MonitorConfig, seed: u64) -> Result<MethodRun> {
    monitor_run(scenario, cfg, LabelPolicy::Proposed, InitStrategy::Search, seed)
}

/// Runs `method` on `scenario`. `cfg` supplies budget and weights for the
/// label-buying methods; its policy field is ignored.
pub fn run_method(
    method: Method,
    scenario: &Scenario,
    cfg: &MonitorConfig,
    mewma: &MewmaConfig,
    seed: u64,
) -> Result<MethodRun> {
    match method {
        Method::Mewma => Ok(MethodRun {
            predictions: competitor_mewma(&scenario.init, &scenario.stream, mewma)?,
            labels_used: 0,
            budget_total: 0,
        }),
        Method::Unsupervised => competitor_unsupervised(scenario, cfg, seed),
        Method::Random => competitor_random(scenario, cfg, seed),
        Method::Equispaced => competitor_equispaced(scenario, cfg, seed),
        Method::Proposed => competitor_proposed(scenario, cfg, seed),
        Method::ProposedTrueInit => monitor_run(
            scenario,
            cfg,
            LabelPolicy::Proposed,
            InitStrategy::TrueParameters {
                means: scenario.means.clone(),
                covariance: scenario.covariance.clone(),
            },
            seed,
        ),
        Method::ProposedBothInit => monitor_run(
            scenario,
            cfg,
            LabelPolicy::Proposed,
            InitStrategy::Both {
                means: scenario.means.clone(),
                covariance: scenario.covariance.clone(),
            },
            seed,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate_scenario, ScenarioConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()), Some(m));
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
    }

    #[test]
    fn observation_at_the_mean_is_in_control() {
        let init = DMatrix::from_fn(60, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let mut chart = MewmaChart::fit(&init, &MewmaConfig::default()).unwrap();
        let mean = chart.mean.clone();
        assert_eq!(chart.update(&mean), 0.0);
        assert_eq!(chart.classify(&mean), 0);
    }

    #[test]
    fn control_limit_is_the_chi_square_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init = DMatrix::from_fn(60, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let chart = MewmaChart::fit(&init, &MewmaConfig::default()).unwrap();
        // χ²_10 upper 1% point.
        assert!((chart.ucl() - 23.209_251_158_954_356).abs() < 1e-9);
    }

    #[test]
    fn mewma_output_is_binary_and_detects_large_shifts() {
        let sc = generate_scenario(
            &ScenarioConfig {
                p: 3,
                delta: 4.0,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let pred = competitor_mewma(&sc.init, &sc.stream, &MewmaConfig::default()).unwrap();
        assert!(pred.iter().all(|&c| c <= 1));
        let hits = sc.truth.iter().zip(&pred).filter(|(&t, &p)| t != 0 && p == 1).count();
        let oc = sc.truth.iter().filter(|&&t| t != 0).count();
        assert!(hits * 2 > oc, "{hits}/{oc}");
    }

    #[test]
    fn mewma_recursion_matches_direct_sum() {
        let init = DMatrix::from_fn(50, 1, |i, _| ((i * 13) % 17) as f64 / 4.0);
        let cfg = MewmaConfig {
            lambda: 0.2,
            alpha: 0.05,
        };
        let mut chart = MewmaChart::fit(&init, &cfg).unwrap();
        let mu = chart.mean[0];
        let var = chart.factor.lower()[(0, 0)].powi(2);
        let ys = [1.0, 4.0, -2.0, 0.5, 3.3];
        for (t, &y) in ys.iter().enumerate() {
            let v = chart.update(&[y]);
            // z_t = Σ_k λ(1−λ)^(t−k) (y_k − μ)
            let z: f64 = (0..=t).map(|k| 0.2 * 0.8f64.powi((t - k) as i32) * (ys[k] - mu)).sum();
            let want = (2.0 - 0.2) / 0.2 * z * z / var;
            assert!((v - want).abs() < 1e-12 * want.max(1.0));
        }
    }
}
