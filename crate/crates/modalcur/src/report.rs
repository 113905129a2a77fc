//! Report emission: CSV tables as ground truth, SVG renderings generated
//! from the same data. All output is deterministic (no timestamps).

use std::fmt::Write as _;

use crate::eval::EvalReport;
use crate::modal::ModalModel;

/// Split label for a level in a summary table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitLabel {
    Train,
    Holdout,
}

impl SplitLabel {
    fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Holdout => "holdout",
        }
    }
}

/// Frequency summary table for a modal model.
pub fn frequency_csv(model: &ModalModel) -> String {
    let mut out = String::from("mode,frequency_hz\n");
    for (i, f) in model.frequencies.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, f).unwrap();
    }
    out
}

/// Per-level evaluation table. `split_of` labels each level index.
pub fn eval_csv(report: &EvalReport, split_of: impl Fn(usize) -> SplitLabel) -> String {
    let mut out = String::from(
        "level,theta,split,mean_det,std_det,baseline_det,solved_rate,best_det,best_cells\n",
    );
    for row in &report.rows {
        writeln!(
            out,
            "{},{}-{},{},{},{},{},{},{},{}",
            row.level_index,
            row.theta_first,
            row.theta_last,
            split_of(row.level_index).as_str(),
            row.mean_det,
            row.std_det,
            row.baseline_det,
            row.solved_rate,
            row.best_det,
            row.best_cells
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        )
        .unwrap();
    }
    out
}

/// Baseline table: EfI det per level plus the exhaustive oracle where the
/// combinatorial budget permits.
#[derive(Debug, Clone)]
pub struct BaselineRow {
    pub level_index: usize,
    pub theta_first: usize,
    pub theta_last: usize,
    pub efi_det: f64,
    pub efi_cells: Vec<usize>,
    /// `None` marks "budget exceeded".
    pub exhaustive_det: Option<f64>,
}

pub fn baseline_csv(rows: &[BaselineRow]) -> String {
    let mut out =
        String::from("level,theta,efi_det,efi_cells,exhaustive_det,oracle_verified\n");
    for row in rows {
        let (det, verified) = match row.exhaustive_det {
            Some(d) => (d.to_string(), "yes"),
            None => ("budget_exceeded".to_string(), "no"),
        };
        writeln!(
            out,
            "{},{}-{},{},{},{},{}",
            row.level_index,
            row.theta_first,
            row.theta_last,
            row.efi_det,
            row.efi_cells
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            det,
            verified,
        )
        .unwrap();
    }
    out
}

/// Ablation comparison: one row per level with mean ± std per edit count,
/// and a final column-mean row.
#[derive(Debug, Clone)]
pub struct AblationTable {
    pub edit_counts: Vec<usize>,
    /// `(level label, per-count (mean, std))`, aligned with `edit_counts`.
    pub rows: Vec<(String, Vec<(f64, f64)>)>,
}

pub fn ablation_csv(table: &AblationTable) -> String {
    let mut out = String::from("environment");
    for k in &table.edit_counts {
        write!(out, ",mean_det_{k}_edit,std_det_{k}_edit").unwrap();
    }
    out.push('\n');
    for (label, cells) in &table.rows {
        write!(out, "{label}").unwrap();
        for (mean, std) in cells {
            write!(out, ",{mean},{std}").unwrap();
        }
        out.push('\n');
    }
    // column mean row, as in the published ablation table
    write!(out, "mean").unwrap();
    for ki in 0..table.edit_counts.len() {
        let n = table.rows.len() as f64;
        let mean = table.rows.iter().map(|(_, c)| c[ki].0).sum::<f64>() / n;
        let std = table.rows.iter().map(|(_, c)| c[ki].1).sum::<f64>() / n;
        write!(out, ",{mean},{std}").unwrap();
    }
    out.push('\n');
    out
}

fn svg_header(width: usize, height: usize) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    )
}

/// Heatmap of a MAC matrix (values in [0,1]).
pub fn mac_svg(mac: &[Vec<f64>], title: &str) -> String {
    let n = mac.len();
    let cell = 48usize;
    let margin = 40usize;
    let width = margin * 2 + cell * n;
    let height = margin * 2 + cell * n + 20;
    let mut out = svg_header(width, height);
    writeln!(
        out,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\">{title}</text>",
        width / 2
    )
    .unwrap();
    for (i, row) in mac.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let v = v.clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let x = margin + j * cell;
            let y = margin + i * cell;
            writeln!(
                out,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb(255,{shade},{shade})\" stroke=\"black\" stroke-width=\"1\"/>"
            )
            .unwrap();
            let tx = x + cell / 2;
            let ty = y + cell / 2 + 4;
            writeln!(
                out,
                "<text x=\"{tx}\" y=\"{ty}\" text-anchor=\"middle\" \
                 font-family=\"sans-serif\" font-size=\"11\">{v:.2}</text>"
            )
            .unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Bar chart of per-level solved rates.
pub fn solved_rate_svg(labels: &[String], rates: &[f64], title: &str) -> String {
    assert_eq!(labels.len(), rates.len());
    let bar = 40usize;
    let gap = 16usize;
    let margin = 50usize;
    let plot_h = 200usize;
    let width = margin * 2 + labels.len() * (bar + gap);
    let height = margin * 2 + plot_h;
    let mut out = svg_header(width, height);
    writeln!(
        out,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\">{title}</text>",
        width / 2
    )
    .unwrap();
    // y axis with 0, 0.5, 1 gridlines
    for (frac, label) in [(0.0, "0"), (0.5, "0.5"), (1.0, "1")] {
        let y = margin + plot_h - (plot_h as f64 * frac) as usize;
        writeln!(
            out,
            "<line x1=\"{margin}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" \
             stroke=\"lightgray\" stroke-width=\"1\"/>",
            width - margin
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"11\">{label}</text>",
            margin - 6,
            y + 4
        )
        .unwrap();
    }
    for (i, (label, &rate)) in labels.iter().zip(rates).enumerate() {
        let r = rate.clamp(0.0, 1.0);
        let h = (plot_h as f64 * r).round() as usize;
        let x = margin + i * (bar + gap);
        let y = margin + plot_h - h;
        writeln!(
            out,
            "<rect x=\"{x}\" y=\"{y}\" width=\"{bar}\" height=\"{h}\" \
             fill=\"steelblue\" stroke=\"black\" stroke-width=\"1\"/>"
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{label}</text>",
            x + bar / 2,
            margin + plot_h + 16
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
