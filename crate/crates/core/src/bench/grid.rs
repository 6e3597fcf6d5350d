use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    compute_metrics, generate_scenario, run_method, ConfusionMatrix, Generator, Method, MewmaConfig, ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::monitor::MonitorConfig;
use crate::seeds::derive;

const SEED_MONITOR: u64 = 1;

/// Benchmark grid: every method on every (p, δ, B, w_exp) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: Vec<usize>,
    pub deltas: Vec<f64>,
    pub budgets: Vec<f64>,
    /// Exploitation weights; only the proposed variants are swept over them.
    pub w_exp: Vec<f64>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub root_seed: u64,
    pub t_init: usize,
    pub t_stream: usize,
    pub ic_run_range: (usize, usize),
    pub oc_run_len: usize,
    pub class_switch: usize,
    pub generator: Generator,
    /// Base monitor settings; budget, policy and w_exr are set per cell.
    pub monitor: MonitorConfig,
    pub mewma: MewmaConfig,
    /// Fill `runtime_ms`; off by default so reruns are byte-identical.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sc = ScenarioConfig::default();
        Self {
            dims: vec![10, 20, 30],
            deltas: vec![0.0, 0.6, 1.2, 1.8, 2.4, 3.0],
            budgets: vec![0.01, 0.0575, 0.105, 0.1525, 0.2],
            w_exp: vec![0.5],
            methods: vec![
                Method::Mewma,
                Method::Unsupervised,
                Method::Random,
                Method::Equispaced,
                Method::Proposed,
            ],
            replicates: 16,
            root_seed: 0,
            t_init: sc.t_init,
            t_stream: sc.t_stream,
            ic_run_range: sc.ic_run_range,
            oc_run_len: sc.oc_run_len,
            class_switch: sc.class_switch,
            generator: sc.generator,
            monitor: MonitorConfig::default(),
            mewma: MewmaConfig::default(),
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn scenario(&self, p: usize, delta: f64, budget: f64) -> ScenarioConfig {
        ScenarioConfig {
            p,
            delta,
            budget,
            t_init: self.t_init,
            t_stream: self.t_stream,
            ic_run_range: self.ic_run_range,
            oc_run_len: self.oc_run_len,
            class_switch: self.class_switch,
            generator: self.generator,
            replicates: self.replicates,
            root_seed: self.root_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.deltas.is_empty() || self.budgets.is_empty() || self.methods.is_empty() {
            return Err(Error::Config(
                "dims, deltas, budgets and methods must be non-empty".into(),
            ));
        }
        if self.methods.iter().any(|m| m.uses_weight()) && self.w_exp.is_empty() {
            return Err(Error::Config("w_exp must be non-empty for the proposed methods".into()));
        }
        if let Some(w) = self.w_exp.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Config(format!("w_exp {w} outside [0, 1]")));
        }
        for &p in &self.dims {
            for &d in &self.deltas {
                for &b in &self.budgets {
                    self.scenario(p, d, b).validate()?;
                }
            }
        }
        self.monitor.validate()?;
        self.mewma.validate()
    }

    /// Seed of the generated stream; shared by all methods, budgets and weights.
    pub fn stream_seed(&self, p: usize, delta: f64, replicate: usize) -> u64 {
        derive(self.root_seed, &[p as u64, delta.to_bits(), replicate as u64])
    }

    pub fn monitor_seed(&self, p: usize, delta: f64, replicate: usize) -> u64 {
        derive(self.stream_seed(p, delta, replicate), &[SEED_MONITOR])
    }

    /// Number of (method, p, δ, B, w, replicate) rows the grid produces.
    pub fn row_count(&self) -> usize {
        let per_method: usize = self
            .methods
            .iter()
            .map(|m| if m.uses_weight() { self.w_exp.len() } else { 1 })
            .sum();
        per_method * self.dims.len() * self.deltas.len() * self.budgets.len() * self.replicates
    }
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub p: usize,
    pub delta: f64,
    pub budget: f64,
    pub w_exp: f64,
    pub replicate: usize,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub labels_used: usize,
    pub runtime_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub row: ResultRow,
    /// ⌊B·T⌋ for the cell.
    pub budget_total: usize,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub p: usize,
    pub delta: f64,
    /// Empty for methods that ignore the budget.
    pub budget: Option<f64>,
    pub w_exp: Option<f64>,
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct GridOutput {
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
}

impl GridOutput {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.records.iter().map(|r| r.row.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    method: Method,
    p: usize,
    delta: f64,
    budget: Option<f64>,
    w_exp: Option<f64>,
    replicate: usize,
}

struct JobResult {
    f1: f64,
    precision: f64,
    recall: f64,
    macro_f1: f64,
    labels_used: usize,
    budget_total: usize,
    runtime_ms: u64,
    confusion: ConfusionMatrix,
}

type JobKey = (Method, usize, u64, Option<u64>, Option<u64>, usize);

fn key(j: &Job) -> JobKey {
    (
        j.method,
        j.p,
        j.delta.to_bits(),
        j.budget.map(f64::to_bits),
        j.w_exp.map(f64::to_bits),
        j.replicate,
    )
}

fn jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut out = Vec::new();
    for &p in &cfg.dims {
        for &delta in &cfg.deltas {
            for &method in &cfg.methods {
                let budgets: Vec<Option<f64>> = if method.uses_budget() {
                    cfg.budgets.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                let weights: Vec<Option<f64>> = if method.uses_weight() {
                    cfg.w_exp.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                for &budget in &budgets {
                    for &w_exp in &weights {
                        for replicate in 0..cfg.replicates {
                            out.push(Job {
                                method,
                                p,
                                delta,
                                budget,
                                w_exp,
                                replicate,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

fn run_job(cfg: &ExperimentConfig, job: &Job) -> Result<JobResult> {
    let budget = job.budget.unwrap_or(0.0);
    let scenario = generate_scenario(
        &cfg.scenario(job.p, job.delta, budget),
        cfg.stream_seed(job.p, job.delta, job.replicate),
    )?;
    let mut monitor = MonitorConfig {
        budget,
        ..cfg.monitor.clone()
    };
    if let Some(w) = job.w_exp {
        monitor.w_exr = 1.0 - w;
    }
    let start = Instant::now();
    let run = run_method(
        job.method,
        &scenario,
        &monitor,
        &cfg.mewma,
        cfg.monitor_seed(job.p, job.delta, job.replicate),
    )?;
    let runtime_ms = if cfg.record_timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let m = compute_metrics(&scenario.truth, &run.predictions)?;
    Ok(JobResult {
        f1: m.binary.f1,
        precision: m.binary.precision,
        recall: m.binary.recall,
        macro_f1: m.macro_f1,
        labels_used: run.labels_used,
        budget_total: run.budget_total,
        runtime_ms,
        confusion: m.confusion,
    })
}

/// Runs every cell on `workers` threads. Budget- and weight-independent
/// methods run once per (p, δ, replicate) and are reported under every
/// budget. Row order depends only on the configuration.
pub fn run_grid(cfg: &ExperimentConfig, workers: usize) -> Result<GridOutput> {
    cfg.validate()?;
    let jobs = jobs(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let results: Vec<Result<JobResult>> = pool.install(|| jobs.par_iter().map(|j| run_job(cfg, j)).collect());

    let mut done: BTreeMap<JobKey, &JobResult> = BTreeMap::new();
    let mut out = GridOutput::default();
    for (job, res) in jobs.iter().zip(&results) {
        match res {
            Ok(r) => {
                done.insert(key(job), r);
            }
            Err(e) => out.failures.push(CellFailure {
                method: job.method,
                p: job.p,
                delta: job.delta,
                budget: job.budget,
                w_exp: job.w_exp,
                replicate: job.replicate,
                error: e.to_string(),
            }),
        }
    }

    let base_w = cfg.monitor.w_exp();
    for &p in &cfg.dims {
        for &delta in &cfg.deltas {
            for &budget in &cfg.budgets {
                for &method in &cfg.methods {
                    let weights: Vec<Option<f64>> = if method.uses_weight() {
                        cfg.w_exp.iter().copied().map(Some).collect()
                    } else {
                        vec![None]
                    };
                    for &w_exp in &weights {
                        for replicate in 0..cfg.replicates {
                            let job = Job {
                                method,
                                p,
                                delta,
                                budget: method.uses_budget().then_some(budget),
                                w_exp,
                                replicate,
                            };
                            let Some(r) = done.get(&key(&job)) else {
                                continue;
                            };
                            out.records.push(RunRecord {
                                row: ResultRow {
                                    method,
                                    p,
                                    delta,
                                    budget,
                                    w_exp: w_exp.unwrap_or(base_w),
                                    replicate,
                                    f1: r.f1,
                                    precision: r.precision,
                                    recall: r.recall,
                                    macro_f1: r.macro_f1,
                                    labels_used: r.labels_used,
                                    runtime_ms: r.runtime_ms,
                                },
                                budget_total: if method.uses_budget() {
                                    r.budget_total
                                } else {
                                    (budget * cfg.t_stream as f64 + 1e-9).floor() as usize
                                },
                                confusion: r.confusion.clone(),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn write_results_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv_writer(out);
    if rows.is_empty() {
        w.write_record([
            "method",
            "p",
            "delta",
            "budget",
            "w_exp",
            "replicate",
            "f1",
            "precision",
            "recall",
            "macro_f1",
            "labels_used",
            "runtime_ms",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        rows.push(rec.map_err(|e| Error::invalid(format!("results row {}: {e}", i + 2)))?);
    }
    Ok(rows)
}

pub fn write_failures_csv<W: Write>(out: W, failures: &[CellFailure]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["method", "p", "delta", "budget", "w_exp", "replicate", "error"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for f in failures {
        w.write_record([
            f.method.as_str().to_string(),
            f.p.to_string(),
            f.delta.to_string(),
            opt(f.budget),
            opt(f.w_exp),
            f.replicate.to_string(),
            f.error.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard error over replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        };
        Self { mean, se }
    }
}

/// Replicate summary of one (method, p, δ, B, w_exp) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub p: usize,
    pub delta: f64,
    pub budget: f64,
    pub w_exp: f64,
    pub n: usize,
    pub f1: MeanSe,
    pub precision: MeanSe,
    pub recall: MeanSe,
    pub macro_f1: MeanSe,
    pub labels_used: MeanSe,
}

/// Groups rows by cell, keeping first-appearance order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut order: Vec<(Method, usize, u64, u64, u64)> = Vec::new();
    let mut groups: BTreeMap<(Method, usize, u64, u64, u64), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let k = (r.method, r.p, r.delta.to_bits(), r.budget.to_bits(), r.w_exp.to_bits());
        groups
            .entry(k)
            .or_insert_with(|| {
                order.push(k);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let g = &groups[&k];
            let col = |f: fn(&ResultRow) -> f64| MeanSe::of(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            CellSummary {
                method: g[0].method,
                p: g[0].p,
                delta: g[0].delta,
                budget: g[0].budget,
                w_exp: g[0].w_exp,
                n: g.len(),
                f1: col(|r| r.f1),
                precision: col(|r| r.precision),
                recall: col(|r| r.recall),
                macro_f1: col(|r| r.macro_f1),
                labels_used: col(|r| r.labels_used as f64),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(out: W, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record([
        "method",
        "p",
        "delta",
        "budget",
        "w_exp",
        "n",
        "f1_mean",
        "f1_se",
        "precision_mean",
        "precision_se",
        "recall_mean",
        "recall_se",
        "macro_f1_mean",
        "macro_f1_se",
        "labels_used_mean",
    ])?;
    for c in cells {
        w.write_record([
            c.method.as_str().to_string(),
            c.p.to_string(),
            c.delta.to_string(),
            c.budget.to_string(),
            c.w_exp.to_string(),
            c.n.to_string(),
            c.f1.mean.to_string(),
            c.f1.se.to_string(),
            c.precision.mean.to_string(),
            c.precision.se.to_string(),
            c.recall.mean.to_string(),
            c.recall.se.to_string(),
            c.macro_f1.mean.to_string(),
            c.macro_f1.se.to_string(),
            c.labels_used.mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(methods: Vec<Method>) -> ExperimentConfig {
        ExperimentConfig {
            dims: vec![3],
            deltas: vec![3.0],
            budgets: vec![0.1],
            methods,
            replicates: 1,
            t_init: 60,
            t_stream: 80,
            ic_run_range: (20, 30),
            class_switch: 40,
            ..Default::default()
        }
    }

    #[test]
    fn one_cell_one_row() {
        let out = run_grid(&tiny(vec![Method::Mewma]), 1).unwrap();
        assert_eq!(out.records.len(), 1);
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &out.rows()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(
            "method,p,delta,budget,w_exp,replicate,f1,precision,recall,macro_f1,labels_used,runtime_ms\n"
        ));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = ExperimentConfig {
            replicates: 2,
            budgets: vec![0.05, 0.1],
            ..tiny(vec![Method::Mewma, Method::Unsupervised, Method::Random])
        };
        let csv_of = |workers| {
            let out = run_grid(&cfg, workers).unwrap();
            let mut buf = Vec::new();
            write_results_csv(&mut buf, &out.rows()).unwrap();
            buf
        };
        let a = csv_of(1);
        assert_eq!(a, csv_of(1));
        assert_eq!(a, csv_of(3));
        assert_eq!(
            String::from_utf8(a.clone()).unwrap().lines().count(),
            1 + cfg.row_count()
        );
        assert_eq!(
            read_results_csv(a.as_slice()).unwrap(),
            run_grid(&cfg, 1).unwrap().rows()
        );
    }

    #[test]
    fn budget_free_methods_repeat_across_budgets() {
        let cfg = ExperimentConfig {
            budgets: vec![0.05, 0.1],
            ..tiny(vec![Method::Mewma])
        };
        let out = run_grid(&cfg, 1).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].row.f1, out.records[1].row.f1);
        assert_eq!(out.records[0].row.budget, 0.05);
        assert_eq!(out.records[1].row.budget, 0.1);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        // Too few in-control rows for the robust one-state estimate.
        let cfg = ExperimentConfig {
            t_init: 3,
            ..tiny(vec![Method::Unsupervised])
        };
        let out = run_grid(&cfg, 1).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.failures.len(), 1);
        let mut buf = Vec::new();
        write_failures_csv(&mut buf, &out.failures).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }

    #[test]
    fn default_grid_shape() {
        let cfg = ExperimentConfig {
            methods: Method::ALL[..6].to_vec(),
            replicates: 1,
            ..Default::default()
        };
        cfg.validate().unwrap();
        assert_eq!(
            cfg.budgets.len() * cfg.deltas.len() * cfg.dims.len() * cfg.methods.len(),
            5 * 6 * 3 * 6
        );
        assert_eq!(cfg.row_count(), 5 * 6 * 3 * 6);
    }

    #[test]
    fn mean_and_standard_error() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        // sd = sqrt(5/3), se = sd / 2
        assert!((m.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(MeanSe::of(&[0.7]).se, 0.0);
    }

    #[test]
    fn aggregate_groups_by_cell() {
        let row = |method, rep, f1| ResultRow {
            method,
            p: 10,
            delta: 1.2,
            budget: 0.1,
            w_exp: 0.5,
            replicate: rep,
            f1,
            precision: f1,
            recall: f1,
            macro_f1: f1,
            labels_used: 3,
            runtime_ms: 0,
        };
        let rows = vec![
            row(Method::Random, 0, 0.5),
            row(Method::Random, 1, 0.7),
            row(Method::Mewma, 0, 0.1),
        ];
        let cells = aggregate(&rows);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].method, Method::Random);
        assert_eq!(cells[0].n, 2);
        assert!((cells[0].f1.mean - 0.6).abs() < 1e-15);
        assert_eq!(cells[1].labels_used.mean, 3.0);
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"budgetz": [0.1]}"#).unwrap_err();
        assert!(err.to_string().contains("budgetz"));
    }
}
