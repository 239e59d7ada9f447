//! Evaluation reports and their text, CSV and JSON renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionCounts, Rates};
use crate::error::{PadError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Column label for all attack types pooled (also called "All").
pub const OVERALL: &str = "Overall";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub counts: ConfusionCounts,
    pub rates: Rates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub attack_type: String,
    /// `None` when the test split has no attacks of this type.
    pub cell: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub threshold: f64,
    pub overall: Cell,
    pub slices: Vec<Slice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub protocol: String,
    /// How the fused row was produced.
    pub fusion_mode: String,
    pub seed: u64,
    pub config_digest: String,
    pub attack_types: Vec<String>,
    pub rows: Vec<MethodRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown format {s:?} (text, csv, json)")),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Text => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

/// Percentage with two decimals.
pub fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

pub fn render(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(std::slice::from_ref(report)),
        ReportFormat::Csv => render_csv(std::slice::from_ref(report)),
        ReportFormat::Json => to_json(report),
    }
}

pub fn to_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Several reports as one JSON array.
pub fn render_json(reports: &[EvalReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<EvalReport> {
    let r: EvalReport = serde_json::from_str(text).map_err(|e| PadError::Config(format!("report JSON: {e}")))?;
    if r.schema_version != SCHEMA_VERSION {
        return Err(PadError::Config(format!(
            "report schema version {} (expected {SCHEMA_VERSION})",
            r.schema_version
        )));
    }
    Ok(r)
}

/// Method rows by attack-type HTER, pooled HTER, APCER and BPCER, in percent.
pub fn render_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for (k, r) in reports.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "Protocol: {}", r.protocol);
        let _ = writeln!(out, "Fusion: {}  Seed: {}  Config: {}", r.fusion_mode, r.seed, r.config_digest);
        let mut header = vec!["Method".to_string()];
        header.extend(r.attack_types.iter().cloned());
        header.extend([OVERALL.to_string(), "APCER".into(), "BPCER".into()]);
        let mut lines = vec![header];
        for row in &r.rows {
            let mut line = vec![row.method.clone()];
            for t in &r.attack_types {
                let cell = row.slices.iter().find(|s| &s.attack_type == t).and_then(|s| s.cell.as_ref());
                line.push(cell.map_or("-".into(), |c| percent(c.rates.hter)));
            }
            line.push(percent(row.overall.rates.hter));
            line.push(percent(row.overall.rates.apcer));
            line.push(percent(row.overall.rates.bpcer));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
    }
    out
}

pub const CSV_HEADER: &str = "method,attack_type,hter,apcer,bpcer,threshold,n_test,seed";

pub fn render_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        for row in &r.rows {
            let mut line = |t: &str, c: Option<&Cell>| {
                let _ = match c {
                    Some(c) => writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        row.method,
                        t,
                        c.rates.hter,
                        c.rates.apcer,
                        c.rates.bpcer,
                        row.threshold,
                        c.counts.attacks_total + c.counts.bonafide_total,
                        r.seed
                    ),
                    None => writeln!(out, "{},{},,,,{},0,{}", row.method, t, row.threshold, r.seed),
                };
            };
            for s in &row.slices {
                line(&s.attack_type, s.cell.as_ref());
            }
            line(OVERALL, Some(&row.overall));
        }
    }
    out
}

/// Reports rendered together must come from one configuration.
pub fn check_same_digest(reports: &[EvalReport], force: bool) -> Result<()> {
    if let Some(first) = reports.first() {
        for r in &reports[1..] {
            if r.config_digest != first.config_digest {
                let msg = format!("{} vs {}", first.config_digest, r.config_digest);
                if force {
                    log::warn!("merging reports with different config digests ({msg})");
                } else {
                    return Err(PadError::DigestMismatch(msg));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::compute_rates;
    use proptest::prelude::*;

    fn cell(at: u64, aa: u64, bt: u64, br: u64) -> Cell {
        let counts = ConfusionCounts {
            attacks_total: at,
            attacks_accepted: aa,
            bonafide_total: bt,
            bonafide_rejected: br,
        };
        Cell {
            counts,
            rates: compute_rates(&counts).unwrap(),
        }
    }

    pub(crate) fn sample_report() -> EvalReport {
        EvalReport {
            schema_version: SCHEMA_VERSION,
            protocol: "intra replay".into(),
            fusion_mode: "probabilities".into(),
            seed: 7,
            config_digest: "d1".into(),
            attack_types: vec!["mobile".into(), "print".into()],
            rows: vec![MethodRow {
                method: "Illuminant".into(),
                threshold: 0.4375,
                overall: Cell {
                    counts: ConfusionCounts {
                        attacks_total: 10,
                        attacks_accepted: 1,
                        bonafide_total: 10,
                        bonafide_rejected: 0,
                    },
                    rates: Rates {
                        apcer: 0.0776,
                        bpcer: 0.0,
                        hter: 0.0388,
                    },
                },
                slices: vec![
                    Slice {
                        attack_type: "mobile".into(),
                        cell: Some(cell(10, 1, 10, 0)),
                    },
                    Slice {
                        attack_type: "print".into(),
                        cell: None,
                    },
                ],
            }],
        }
    }

    #[test]
    fn text_table_layout() {
        let t = render_text(&[sample_report()]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[2].starts_with("Method"));
        assert!(lines[2].contains("mobile") && lines[2].contains("Overall"));
        let row = lines[3];
        assert!(row.starts_with("Illuminant"));
        let cols: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cols, ["Illuminant", "5.00", "-", "3.88", "7.76", "0.00"]);
    }

    #[test]
    fn csv_rows() {
        let c = render_csv(&[sample_report()]);
        let lines: Vec<&str> = c.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "Illuminant,mobile,0.05,0.1,0,0.4375,20,7");
        assert_eq!(lines[2], "Illuminant,print,,,,0.4375,0,7");
        assert_eq!(lines[3], "Illuminant,Overall,0.0388,0.0776,0,0.4375,20,7");
    }

    #[test]
    fn json_round_trip() {
        let r = sample_report();
        assert_eq!(from_json(&to_json(&r)).unwrap(), r);
        let mut bad = r;
        bad.schema_version = 99;
        assert!(from_json(&to_json(&bad)).is_err());
    }

    #[test]
    fn digest_mismatch_needs_force() {
        let a = sample_report();
        let mut b = a.clone();
        b.config_digest = "other".into();
        assert!(matches!(check_same_digest(&[a.clone(), b.clone()], false), Err(PadError::DigestMismatch(_))));
        assert!(check_same_digest(&[a, b], true).is_ok());
    }

    proptest! {
        #[test]
        fn rendered_percent_within_half_unit(v in 0.0f64..=1.0) {
            let back: f64 = percent(v).parse().unwrap();
            prop_assert!((back - v * 100.0).abs() <= 0.005 + 1e-9);
        }

        #[test]
        fn json_round_trip_arbitrary_rates(a in 0.0f64..1.0, b in 0.0f64..1.0, t in -10.0f64..10.0, seed in any::<u64>()) {
            let mut r = sample_report();
            r.seed = seed;
            r.rows[0].threshold = t;
            r.rows[0].overall.rates = Rates { apcer: a, bpcer: b, hter: (a + b) / 2.0 };
            prop_assert_eq!(from_json(&to_json(&r)).unwrap(), r);
        }
    }
}
