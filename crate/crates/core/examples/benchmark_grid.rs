//! A small benchmark grid: results, replicate summaries and SVG figures.
//!
//! Writes into the directory given as the first argument, or a temporary one.

use phmm_monitor::bench::{
    aggregate, run_grid, write_figures, write_results_csv, write_summary_csv, ExperimentConfig, Method,
};

fn main() -> phmm_monitor::Result<()> {
    let cfg = ExperimentConfig {
        dims: vec![5],
        deltas: vec![1.8, 3.0],
        budgets: vec![0.05, 0.15],
        methods: vec![Method::Mewma, Method::Equispaced, Method::Proposed],
        replicates: 2,
        t_stream: 250,
        class_switch: 125,
        ..ExperimentConfig::default()
    };
    let dir = match std::env::args().nth(1) {
        Some(d) => std::path::PathBuf::from(d),
        None => std::env::temp_dir().join("phmm-monitor-grid"),
    };
    std::fs::create_dir_all(&dir)?;

    let out = run_grid(&cfg, 1)?;
    let rows = out.rows();
    write_results_csv(std::fs::File::create(dir.join("results.csv"))?, &rows)?;
    let cells = aggregate(&rows);
    write_summary_csv(std::fs::File::create(dir.join("summary.csv"))?, &cells)?;
    let figures = write_figures(&dir.join("figures"), &cells)?;

    for c in &cells {
        println!(
            "{:11} δ={:3.1} B={:4.2}  F1 {:.3} ± {:.3}",
            c.method.as_str(),
            c.delta,
            c.budget,
            c.f1.mean,
            c.f1.se
        );
    }
    println!(
        "{} rows, {} failures, {} figures in {}",
        rows.len(),
        out.failures.len(),
        figures.len(),
        dir.display()
    );
    Ok(())
}
