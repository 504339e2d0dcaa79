//! Method-by-direction F-score tables.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{median, MetricsReport};
use crate::error::{Error, Result};

/// Published F-scores in percent: `(method, [DRIVE->STARE, STARE->DRIVE])`.
pub const PUBLISHED_TABLE: [(&str, [f64; 2]); 4] = [
    ("Baseline", [68.08, 63.82]),
    ("Javanmardi et al.", [76.75, 67.09]),
    ("CycleGAN", [72.82, 71.05]),
    ("EdgeCycleGAN", [77.84, 76.29]),
];

pub const PUBLISHED_DIRECTIONS: [&str; 2] = ["DRIVE->STARE", "STARE->DRIVE"];

const METHOD_ORDER: [(&str, &str); 3] =
    [("baseline", "Baseline"), ("cyclegan", "CycleGAN"), ("edgecyclegan", "EdgeCycleGAN")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    /// Pooled DICE in percent per direction, median over the runs given.
    pub scores: Vec<Option<f64>>,
    pub runs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub directions: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

fn display_name(method: &str) -> String {
    METHOD_ORDER
        .iter()
        .find(|(k, _)| *k == method)
        .map(|(_, v)| v.to_string())
        .unwrap_or_else(|| method.to_string())
}

/// Groups reports by method and direction; repeated seeds are reduced by median.
pub fn compare_report(reports: &[MetricsReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::Empty("report list".into()));
    }
    let mut directions: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    for r in reports {
        if !directions.contains(&r.direction) {
            directions.push(r.direction.clone());
        }
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let rank = |m: &String| METHOD_ORDER.iter().position(|(k, _)| k == m).unwrap_or(METHOD_ORDER.len());
    methods.sort_by_key(|m| rank(m));
    let rows = methods
        .iter()
        .map(|m| {
            let (scores, runs) = directions
                .iter()
                .map(|d| {
                    let v: Vec<f64> = reports
                        .iter()
                        .filter(|r| &r.method == m && &r.direction == d)
                        .filter_map(|r| r.dice_percent())
                        .collect();
                    ((!v.is_empty()).then(|| median(&v)), v.len())
                })
                .unzip();
            ComparisonRow { method: display_name(m), scores, runs }
        })
        .collect();
    Ok(ComparisonTable { directions, rows })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

impl ComparisonTable {
    pub fn score(&self, method: &str, direction: &str) -> Option<f64> {
        let d = self.directions.iter().position(|x| x == direction)?;
        self.rows.iter().find(|r| r.method == display_name(method))?.scores[d]
    }

    /// Aligned text table, with the published rows appended when `published` is set.
    pub fn to_text(&self, published: bool) -> String {
        let mut header = vec!["Model".to_string()];
        header.extend(self.directions.iter().cloned());
        let mut lines: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| std::iter::once(r.method.clone()).chain(r.scores.iter().map(|&s| cell(s))).collect())
            .collect();
        let mut reference: Vec<Vec<String>> = Vec::new();
        if published {
            for (m, vals) in PUBLISHED_TABLE {
                let mut row = vec![format!("{m} (published)")];
                for d in &self.directions {
                    let i = PUBLISHED_DIRECTIONS.iter().position(|p| p == d);
                    row.push(i.map_or_else(|| "-".to_string(), |i| format!("{:.2}", vals[i])));
                }
                reference.push(row);
            }
        }
        let cols = header.len();
        let width: Vec<usize> = (0..cols)
            .map(|c| {
                std::iter::once(&header)
                    .chain(&lines)
                    .chain(&reference)
                    .map(|r| r[c].len())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let fmt = |r: &Vec<String>| {
            r.iter()
                .enumerate()
                .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = width[c]) } else { format!("{s:>w$}", w = width[c]) })
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let mut out = String::new();
        let rule = "-".repeat(width.iter().sum::<usize>() + 3 * (cols - 1));
        let _ = writeln!(out, "{}", fmt(&header));
        let _ = writeln!(out, "{rule}");
        for l in lines.drain(..) {
            let _ = writeln!(out, "{}", fmt(&l));
        }
        if !reference.is_empty() {
            let _ = writeln!(out, "{rule}");
            for l in &reference {
                let _ = writeln!(out, "{}", fmt(l));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for d in &self.directions {
            let _ = write!(out, ",{d}");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.method);
            for &s in &r.scores {
                let _ = write!(out, ",{}", s.map_or_else(String::new, |v| format!("{v:.2}")));
            }
            out.push('\n');
        }
        out
    }

    /// Grouped bar chart, one group per direction with a bar per method,
    /// bar heights proportional to the score on a 0..100 axis.
    pub fn save_bar_chart(&self, path: impl AsRef<Path>) -> Result<()> {
        const PALETTE: [[u8; 3]; 4] = [[128, 128, 128], [66, 116, 196], [214, 96, 52], [90, 160, 90]];
        let (bar, gap, plot_h, margin) = (28u32, 24u32, 200u32, 16u32);
        let n_methods = self.rows.len().max(1) as u32;
        let group = n_methods * bar + gap;
        let w = 2 * margin + group * self.directions.len().max(1) as u32;
        let h = plot_h + 2 * margin;
        let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
        let base = margin + plot_h;
        for tick in 0..=4 {
            let y = base - tick * plot_h / 4;
            for x in margin / 2..w - margin / 2 {
                img.put_pixel(x, y, Rgb([220, 220, 220]));
            }
        }
        for (d, _) in self.directions.iter().enumerate() {
            for (m, row) in self.rows.iter().enumerate() {
                let Some(score) = row.scores[d] else { continue };
                let top = base - ((score.clamp(0.0, 100.0) / 100.0) * plot_h as f64).round() as u32;
                let x0 = margin + gap / 2 + d as u32 * group + m as u32 * bar;
                for x in x0 + 2..x0 + bar - 2 {
                    for y in top..base {
                        img.put_pixel(x, y, Rgb(PALETTE[m % PALETTE.len()]));
                    }
                }
            }
        }
        img.save(path.as_ref())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::SegMetrics;

    fn rep(method: &str, dir: &str, dice: f64) -> MetricsReport {
        MetricsReport {
            method: method.into(),
            direction: dir.into(),
            aggregate: Some(SegMetrics { dice, ..Default::default() }),
            ..Default::default()
        }
    }

    #[test]
    fn three_by_two_table() {
        let mut reports = Vec::new();
        for (i, m) in ["edgecyclegan", "baseline", "cyclegan"].iter().enumerate() {
            for d in ["A->B", "B->A"] {
                reports.push(rep(m, d, 0.5 + 0.1 * i as f64));
            }
        }
        let t = compare_report(&reports).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.directions, vec!["A->B", "B->A"]);
        assert_eq!(t.rows[0].method, "Baseline");
        assert_eq!(t.rows[2].method, "EdgeCycleGAN");
        let text = t.to_text(false);
        assert!(text.contains("60.00"), "{text}");
        assert_eq!(t.to_csv().lines().count(), 4);
        assert_eq!(compare_report(&reports).unwrap(), t);
    }

    #[test]
    fn median_over_seeds() {
        let reports = [rep("baseline", "A->B", 0.1), rep("baseline", "A->B", 0.9), rep("baseline", "A->B", 0.3)];
        let t = compare_report(&reports).unwrap();
        assert!((t.score("baseline", "A->B").unwrap() - 30.0).abs() < 1e-9);
        assert_eq!(t.rows[0].runs, vec![3]);
    }

    #[test]
    fn published_rows_annotate_matching_directions() {
        let t = compare_report(&[rep("baseline", "DRIVE->STARE", 0.7)]).unwrap();
        let text = t.to_text(true);
        assert!(text.contains("77.84"));
        assert!(text.contains("76.75"));
        assert!(!text.contains("76.29"));
    }

    #[test]
    fn empty_list_is_an_error() {
        assert!(compare_report(&[]).is_err());
    }
}
