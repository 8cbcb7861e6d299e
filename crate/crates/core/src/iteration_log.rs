//! Tabular log of major and minor iterations.
//!
//! One row per minor iteration (active-set solve), grouped by major
//! iteration. The step size and merit are printed on the last row of each
//! major iteration, and a footer reports wall-clock totals and the number of
//! LQ solves.

use std::fmt::Write as _;
use std::time::Duration;

use crate::game_model::Dimensions;
use crate::working_set::{format_row, WorkingSet};

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub minor: String,
    pub working_set: String,
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MajorIteration {
    pub index: usize,
    pub rows: Vec<LogRow>,
    pub alpha: Option<f64>,
    pub merit: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timing {
    pub total: Duration,
    pub solve: Duration,
    pub function_eval: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationLog {
    pub majors: Vec<MajorIteration>,
    pub lq_solves: usize,
    /// Free-form lines printed between the table and the footer.
    pub notes: Vec<String>,
    pub timing: Timing,
}

/// `{(101,1),(101,2)}` style rendering, one-based, with the row index
/// dropped for single-row blocks.
pub fn format_working_set(ws: &WorkingSet, dims: &Dimensions) -> String {
    let parts: Vec<String> = ws
        .iter()
        .map(|id| format_row(id, dims.b(id.stage, id.player), &|s| s))
        .collect();
    format!("{{{}}}", parts.join(","))
}

fn format_merit(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if (1e-2..1e4).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

const HEADER: [&str; 6] = ["Major", "Minor", "Working Set", "Comment", "alpha", "Merit"];

impl IterationLog {
    pub fn final_merit(&self) -> Option<f64> {
        self.majors.last().and_then(|m| m.merit)
    }

    /// The table and the LQ-solve count, without timing.
    pub fn render_table(&self) -> String {
        let mut lines: Vec<[String; 6]> = Vec::new();
        for major in &self.majors {
            let last = major.rows.len().saturating_sub(1);
            for (k, row) in major.rows.iter().enumerate() {
                let lead = if k == 0 { major.index.to_string() } else { String::new() };
                let (alpha, merit) = if k == last {
                    (
                        major.alpha.map(|a| a.to_string()).unwrap_or_default(),
                        major.merit.map(format_merit).unwrap_or_default(),
                    )
                } else {
                    (String::new(), String::new())
                };
                lines.push([
                    lead,
                    row.minor.clone(),
                    row.working_set.clone(),
                    row.comment.clone(),
                    alpha,
                    merit,
                ]);
            }
        }
        let mut widths = HEADER.map(str::len);
        for l in &lines {
            for (w, cell) in widths.iter_mut().zip(l) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let push = |out: &mut String, cells: &[String]| {
            let mut line = String::new();
            for (k, c) in cells.iter().enumerate() {
                if k + 1 == cells.len() {
                    line.push_str(c);
                } else {
                    let pad = widths[k] - c.chars().count();
                    line.push_str(c);
                    line.push_str(&" ".repeat(pad + 2));
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        };
        push(&mut out, &HEADER.map(String::from));
        for l in &lines {
            push(&mut out, l);
        }
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        let _ = writeln!(out, "Total LQ Solves: {}", self.lq_solves);
        out
    }

    /// Full log with the timing footer.
    pub fn render(&self) -> String {
        let mut out = self.render_table();
        let t = &self.timing;
        let _ = writeln!(out, "Total Time  Total LQ Solves  Solve Time  Function Eval Time");
        let _ = writeln!(
            out,
            "{:<10.2}  {:<15}  {:<10.2}  {:.2}",
            t.total.as_secs_f64(),
            self.lq_solves,
            t.solve.as_secs_f64(),
            t.function_eval.as_secs_f64()
        );
        out
    }
}

/// Drops the timing footer (the last two lines) from a rendered log.
pub fn strip_timing(rendered: &str) -> String {
    let lines: Vec<&str> = rendered.lines().collect();
    let keep = lines.len().saturating_sub(2);
    let mut out = lines[..keep].join("\n");
    out.push('\n');
    out
}
