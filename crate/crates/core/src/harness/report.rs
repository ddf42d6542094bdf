use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentReport;
use crate::error::{Error, Result};
use crate::models::EvalMetrics;

/// One line of the report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub round: usize,
    pub phase: String,
    pub accuracy: f64,
    pub loss: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Client ids joined by `;`.
    pub accepted_clients: String,
    pub rejected_clients: String,
}

fn join(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn row(round: usize, phase: &str, m: &EvalMetrics, accepted: &[usize], rejected: &[usize]) -> CsvRow {
    CsvRow {
        round,
        phase: phase.into(),
        accuracy: m.accuracy,
        loss: m.loss,
        macro_precision: m.macro_precision(),
        macro_recall: m.macro_recall(),
        macro_f1: m.macro_f1(),
        accepted_clients: join(accepted),
        rejected_clients: join(rejected),
    }
}

impl ExperimentReport {
    /// R round rows followed by one final row.
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut rows: Vec<CsvRow> = self
            .rounds
            .iter()
            .map(|r| row(r.round, "round", &r.metrics, &r.accepted, &r.rejected))
            .collect();
        let last = self.rounds.last().expect("reports hold at least one round");
        rows.push(row(
            last.round,
            "final",
            &self.final_metrics,
            &last.accepted,
            &last.rejected,
        ));
        rows
    }
}

pub fn emit_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in report.csv_rows() {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    })?;
    r.deserialize()
        .collect::<std::result::Result<Vec<CsvRow>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// One bar: final accuracy of `model` under `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotEntry {
    pub model: String,
    pub label: String,
    pub accuracy: f64,
}

impl From<&ExperimentReport> for PlotEntry {
    fn from(r: &ExperimentReport) -> Self {
        Self {
            model: r.model.to_string(),
            label: r.label.clone(),
            accuracy: r.final_accuracy(),
        }
    }
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Grouped bar chart: one group per model, one bar per label.
pub fn render_svg(entries: &[PlotEntry]) -> String {
    let mut models: Vec<&str> = Vec::new();
    let mut labels: Vec<&str> = Vec::new();
    for e in entries {
        if !models.contains(&e.model.as_str()) {
            models.push(&e.model);
        }
        if !labels.contains(&e.label.as_str()) {
            labels.push(&e.label);
        }
    }
    let (left, top, plot_h, bar_w, gap) = (50.0, 20.0, 240.0, 22.0, 30.0);
    let group_w = bar_w * labels.len().max(1) as f64 + gap;
    let width = left + group_w * models.len().max(1) as f64 + 20.0;
    let legend_y = top + plot_h + 45.0;
    let height = legend_y + 20.0 * labels.len() as f64 + 10.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            width - 20.0,
            left - 5.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.1}" transform="rotate(-90 12 {:.1})" text-anchor="middle">accuracy</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for (g, model) in models.iter().enumerate() {
        let x0 = left + gap / 2.0 + g as f64 * group_w;
        let _ = writeln!(s, r#"<g class="group" data-model="{}">"#, escape(model));
        for e in entries.iter().filter(|e| e.model == *model) {
            let b = labels
                .iter()
                .position(|l| *l == e.label)
                .expect("label collected above");
            let h = plot_h * e.accuracy.clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-label="{}" data-accuracy="{}" x="{:.1}" y="{:.1}" width="{bar_w}" height="{h:.1}" fill="{}"><title>{} {}: {}</title></rect>"#,
                escape(&e.label),
                e.accuracy,
                x0 + b as f64 * bar_w,
                top + plot_h - h,
                PALETTE[b % PALETTE.len()],
                escape(model),
                escape(&e.label),
                e.accuracy
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text></g>"#,
            x0 + bar_w * labels.len() as f64 / 2.0,
            top + plot_h + 16.0,
            escape(model)
        );
    }
    for (b, label) in labels.iter().enumerate() {
        let y = legend_y + 20.0 * b as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            y - 10.0,
            PALETTE[b % PALETTE.len()],
            left + 18.0,
            y,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_plot(entries: &[PlotEntry], path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(entries)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_group_per_model() {
        let entries = vec![
            PlotEntry {
                model: "mlp".into(),
                label: "FULL".into(),
                accuracy: 0.5,
            },
            PlotEntry {
                model: "cnn".into(),
                label: "FULL".into(),
                accuracy: 0.25,
            },
            PlotEntry {
                model: "mlp".into(),
                label: "MID".into(),
                accuracy: 0.75,
            },
        ];
        let svg = render_svg(&entries);
        assert_eq!(svg.matches(r#"class="group""#).count(), 2);
        assert_eq!(svg.matches(r#"class="bar""#).count(), 3);
        assert!(svg.contains(r#"data-accuracy="0.75""#));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = render_svg(&[PlotEntry {
            model: "a<b".into(),
            label: "x&y".into(),
            accuracy: 1.0,
        }]);
        assert!(svg.contains("a&lt;b") && svg.contains("x&amp;y"));
    }
}
