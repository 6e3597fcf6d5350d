//! Minimal SVG panel grids for the benchmark figures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{CellSummary, MeanSe, Method};
use crate::error::Result;

const PANEL_W: f64 = 220.0;
const PANEL_H: f64 = 160.0;
const GAP: f64 = 36.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 70.0;
const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

/// One line in a panel: (x, mean, standard error) points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelGrid {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// `panels[row][col]`.
    pub panels: Vec<Vec<Vec<Series>>>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

impl PanelGrid {
    pub fn to_svg(&self) -> String {
        let rows = self.panels.len();
        let cols = self.panels.iter().map(Vec::len).max().unwrap_or(0);
        let width = LEFT + cols as f64 * (PANEL_W + GAP) + 20.0;
        let height = TOP + rows as f64 * (PANEL_H + GAP) + 40.0;

        let mut xs: Vec<f64> = self
            .panels
            .iter()
            .flatten()
            .flatten()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let (x0, x1) = match (xs.first(), xs.last()) {
            (Some(&a), Some(&b)) if b > a => (a, b),
            (Some(&a), _) => (a - 0.5, a + 0.5),
            _ => (0.0, 1.0),
        };
        let pad = 0.05 * (x1 - x0);
        let (x0, x1) = (x0 - pad, x1 + pad);

        let mut names: Vec<&str> = Vec::new();
        for s in self.panels.iter().flatten().flatten() {
            if !names.contains(&s.name.as_str()) {
                names.push(&s.name);
            }
        }
        let color = |name: &str| PALETTE[names.iter().position(|n| *n == name).unwrap_or(0) % PALETTE.len()];

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            width / 2.0,
            esc(&self.title)
        );
        let mut lx = LEFT;
        for name in &names {
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="38" x2="{}" y2="38" stroke="{}" stroke-width="2"/><text x="{}" y="42">{}</text>"#,
                lx + 18.0,
                color(name),
                lx + 22.0,
                esc(name)
            );
            lx += 30.0 + 7.0 * name.len() as f64;
        }

        for (r, row) in self.panels.iter().enumerate() {
            for (c, panel) in row.iter().enumerate() {
                let ox = LEFT + c as f64 * (PANEL_W + GAP);
                let oy = TOP + r as f64 * (PANEL_H + GAP);
                let px = |x: f64| ox + (x - x0) / (x1 - x0) * PANEL_W;
                let py = |y: f64| oy + (1.0 - y.clamp(0.0, 1.0)) * PANEL_H;
                let _ = writeln!(
                    out,
                    r##"<rect x="{ox}" y="{oy}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>"##
                );
                if r == 0 {
                    if let Some(label) = self.col_labels.get(c) {
                        let _ = writeln!(
                            out,
                            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                            ox + PANEL_W / 2.0,
                            oy - 8.0,
                            esc(label)
                        );
                    }
                }
                if c == 0 {
                    if let Some(label) = self.row_labels.get(r) {
                        let _ = writeln!(
                            out,
                            r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
                            oy + PANEL_H / 2.0,
                            oy + PANEL_H / 2.0,
                            esc(label)
                        );
                    }
                    for k in 0..=4 {
                        let y = k as f64 / 4.0;
                        let _ = writeln!(
                            out,
                            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                            ox - 4.0,
                            py(y) + 4.0,
                            fmt_tick(y)
                        );
                    }
                }
                for k in 1..4 {
                    let y = py(k as f64 / 4.0);
                    let _ = writeln!(
                        out,
                        r##"<line x1="{ox}" y1="{y}" x2="{}" y2="{y}" stroke="#eee"/>"##,
                        ox + PANEL_W
                    );
                }
                if r + 1 == rows {
                    for &x in &xs {
                        let _ = writeln!(
                            out,
                            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                            px(x),
                            oy + PANEL_H + 14.0,
                            fmt_tick(x)
                        );
                    }
                }
                for s in panel {
                    let col = color(&s.name);
                    let pts: Vec<String> = s
                        .points
                        .iter()
                        .map(|&(x, y, _)| format!("{:.2},{:.2}", px(x), py(y)))
                        .collect();
                    let _ = writeln!(
                        out,
                        r#"<polyline points="{}" fill="none" stroke="{col}" stroke-width="1.5"/>"#,
                        pts.join(" ")
                    );
                    for &(x, y, se) in &s.points {
                        if se > 0.0 {
                            let _ = writeln!(
                                out,
                                r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{col}"/>"#,
                                px(x),
                                py(y - se),
                                py(y + se)
                            );
                        }
                        let _ = writeln!(
                            out,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{col}"/>"#,
                            px(x),
                            py(y)
                        );
                    }
                }
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{} (error bars: ±1 standard error)</text>"#,
            LEFT + cols as f64 * (PANEL_W + GAP) / 2.0,
            height - 8.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="36" y="{}" transform="rotate(-90 36 {})" text-anchor="middle">{}</text>"#,
            TOP + rows as f64 * (PANEL_H + GAP) / 2.0,
            TOP + rows as f64 * (PANEL_H + GAP) / 2.0,
            esc(&self.y_label)
        );
        out.push_str("</svg>\n");
        out
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn distinct_usize(values: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = values.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Weight used for the proposed variants in the method-comparison figures:
/// 0.5 when swept, else the first one present.
fn comparison_weight(cells: &[CellSummary]) -> Option<f64> {
    let ws = distinct(cells.iter().filter(|c| c.method.uses_weight()).map(|c| c.w_exp));
    ws.iter().copied().find(|&w| w == 0.5).or(ws.first().copied())
}

fn series_by<F>(
    cells: &[&CellSummary],
    name: F,
    x: fn(&CellSummary) -> f64,
    y: fn(&CellSummary) -> MeanSe,
) -> Vec<Series>
where
    F: Fn(&CellSummary) -> String,
{
    let mut out: Vec<Series> = Vec::new();
    for c in cells {
        let n = name(c);
        let v = y(c);
        let point = (x(c), v.mean, v.se);
        match out.iter_mut().find(|s| s.name == n) {
            Some(s) => s.points.push(point),
            None => out.push(Series {
                name: n,
                points: vec![point],
            }),
        }
    }
    for s in &mut out {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

fn comparison_cells<'a>(cells: &'a [CellSummary], methods: &[Method]) -> Vec<&'a CellSummary> {
    let w = comparison_weight(cells);
    cells
        .iter()
        .filter(|c| methods.contains(&c.method))
        .filter(|c| !c.method.uses_weight() || Some(c.w_exp) == w)
        .collect()
}

/// F1 against δ; rows are dimensions, columns budgets.
pub fn figure_f1_vs_delta(cells: &[CellSummary], methods: &[Method], title: &str) -> Option<PanelGrid> {
    let sel = comparison_cells(cells, methods);
    if sel.is_empty() {
        return None;
    }
    let dims = distinct_usize(sel.iter().map(|c| c.p));
    let budgets = distinct(sel.iter().map(|c| c.budget));
    let panels = dims
        .iter()
        .map(|&p| {
            budgets
                .iter()
                .map(|&b| {
                    let here: Vec<&CellSummary> = sel.iter().copied().filter(|c| c.p == p && c.budget == b).collect();
                    series_by(&here, |c| c.method.as_str().to_string(), |c| c.delta, |c| c.f1)
                })
                .collect()
        })
        .collect();
    Some(PanelGrid {
        title: title.into(),
        x_label: "shift size δ".into(),
        y_label: "F1".into(),
        row_labels: dims.iter().map(|p| format!("p = {p}")).collect(),
        col_labels: budgets.iter().map(|b| format!("B = {}", fmt_tick(*b))).collect(),
        panels,
    })
}

/// F1 against budget; rows are dimensions, columns shift sizes.
pub fn figure_f1_vs_budget(cells: &[CellSummary], methods: &[Method]) -> Option<PanelGrid> {
    let sel = comparison_cells(cells, methods);
    if sel.is_empty() {
        return None;
    }
    let dims = distinct_usize(sel.iter().map(|c| c.p));
    let deltas = distinct(sel.iter().map(|c| c.delta));
    let panels = dims
        .iter()
        .map(|&p| {
            deltas
                .iter()
                .map(|&d| {
                    let here: Vec<&CellSummary> = sel.iter().copied().filter(|c| c.p == p && c.delta == d).collect();
                    series_by(&here, |c| c.method.as_str().to_string(), |c| c.budget, |c| c.f1)
                })
                .collect()
        })
        .collect();
    Some(PanelGrid {
        title: "F1 by budget".into(),
        x_label: "budget B".into(),
        y_label: "F1".into(),
        row_labels: dims.iter().map(|p| format!("p = {p}")).collect(),
        col_labels: deltas.iter().map(|d| format!("δ = {}", fmt_tick(*d))).collect(),
        panels,
    })
}

/// Proposed method for each exploitation weight at one dimension; rows are
/// F1, precision and recall, columns budgets.
pub fn figure_weight_sweep(cells: &[CellSummary], p: usize) -> Option<PanelGrid> {
    let sel: Vec<&CellSummary> = cells
        .iter()
        .filter(|c| c.method == Method::Proposed && c.p == p)
        .collect();
    if distinct(sel.iter().map(|c| c.w_exp)).len() < 2 {
        return None;
    }
    let budgets = distinct(sel.iter().map(|c| c.budget));
    let metrics: [(&str, fn(&CellSummary) -> MeanSe); 3] = [
        ("F1", |c| c.f1),
        ("precision", |c| c.precision),
        ("recall", |c| c.recall),
    ];
    let panels = metrics
        .iter()
        .map(|&(_, metric)| {
            budgets
                .iter()
                .map(|&b| {
                    let here: Vec<&CellSummary> = sel.iter().copied().filter(|c| c.budget == b).collect();
                    series_by(&here, |c| format!("w_exp = {}", fmt_tick(c.w_exp)), |c| c.delta, metric)
                })
                .collect()
        })
        .collect();
    Some(PanelGrid {
        title: format!("Exploitation weight sweep, p = {p}"),
        x_label: "shift size δ".into(),
        y_label: "score".into(),
        row_labels: metrics.iter().map(|m| m.0.to_string()).collect(),
        col_labels: budgets.iter().map(|b| format!("B = {}", fmt_tick(*b))).collect(),
        panels,
    })
}

/// Writes every figure the summaries support into `dir`; returns the paths.
pub fn write_figures(dir: &Path, cells: &[CellSummary]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: String, grid: Option<PanelGrid>| -> Result<()> {
        if let Some(g) = grid {
            let path = dir.join(name);
            std::fs::write(&path, g.to_svg())?;
            written.push(path);
        }
        Ok(())
    };
    let comparison = [
        Method::Mewma,
        Method::Unsupervised,
        Method::Random,
        Method::Equispaced,
        Method::Proposed,
    ];
    emit(
        "f1_vs_delta_rows-p_cols-budget.svg".into(),
        figure_f1_vs_delta(cells, &comparison, "F1 by shift size"),
    )?;
    for p in distinct_usize(cells.iter().map(|c| c.p)) {
        emit(
            format!("weight_sweep_p{p}_rows-metric_cols-budget.svg"),
            figure_weight_sweep(cells, p),
        )?;
    }
    if cells
        .iter()
        .any(|c| matches!(c.method, Method::ProposedTrueInit | Method::ProposedBothInit))
    {
        emit(
            "initialization_rows-p_cols-budget.svg".into(),
            figure_f1_vs_delta(
                cells,
                &[Method::Proposed, Method::ProposedTrueInit, Method::ProposedBothInit],
                "F1 by initialization",
            ),
        )?;
    }
    emit(
        "f1_vs_budget_rows-p_cols-delta.svg".into(),
        figure_f1_vs_budget(cells, &comparison),
    )?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(method: Method, p: usize, delta: f64, budget: f64, w: f64, f1: f64) -> CellSummary {
        let m = MeanSe { mean: f1, se: 0.02 };
        CellSummary {
            method,
            p,
            delta,
            budget,
            w_exp: w,
            n: 4,
            f1: m,
            precision: m,
            recall: m,
            macro_f1: m,
            labels_used: m,
        }
    }

    fn sample() -> Vec<CellSummary> {
        let mut v = Vec::new();
        for p in [10, 20] {
            for d in [1.2, 2.4] {
                for b in [0.05, 0.1] {
                    v.push(cell(Method::Mewma, p, d, b, 0.5, 0.3));
                    v.push(cell(Method::Random, p, d, b, 0.5, 0.6));
                    for w in [0.0, 0.5, 1.0] {
                        v.push(cell(Method::Proposed, p, d, b, w, 0.7 + w / 10.0));
                    }
                }
            }
        }
        v
    }

    #[test]
    fn figure_layouts() {
        let cells = sample();
        let g = figure_f1_vs_delta(&cells, &[Method::Mewma, Method::Random, Method::Proposed], "t").unwrap();
        assert_eq!(g.panels.len(), 2);
        assert_eq!(g.panels[0].len(), 2);
        assert_eq!(g.panels[0][0].len(), 3);
        let proposed = g.panels[0][0].iter().find(|s| s.name == "proposed").unwrap();
        assert_eq!(proposed.points, vec![(1.2, 0.75, 0.02), (2.4, 0.75, 0.02)]);

        let w = figure_weight_sweep(&cells, 20).unwrap();
        assert_eq!(w.row_labels, vec!["F1", "precision", "recall"]);
        assert_eq!(w.panels[0][0].len(), 3);

        let b = figure_f1_vs_budget(&cells, &[Method::Random]).unwrap();
        assert_eq!(b.col_labels, vec!["δ = 1.2", "δ = 2.4"]);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let g = figure_f1_vs_delta(&sample(), &[Method::Mewma, Method::Random], "a < b & c").unwrap();
        let svg = g.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b &amp; c"));
        assert_eq!(svg.matches("<polyline").count(), 2 * 2 * 2);
    }

    #[test]
    fn writes_files_named_by_facets() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_figures(dir.path(), &sample()).unwrap();
        let names: Vec<String> = paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"f1_vs_delta_rows-p_cols-budget.svg".to_string()));
        assert!(names.contains(&"weight_sweep_p10_rows-metric_cols-budget.svg".to_string()));
        assert!(names.contains(&"f1_vs_budget_rows-p_cols-delta.svg".to_string()));
        assert!(!names.iter().any(|n| n.starts_with("initialization")));
    }
}
