//! `compare`: side-by-side probe series of two run bundles.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use cwdpo_core::diagnostics::{read_jsonl, ProbeReport};
use cwdpo_core::trainer::RunSummary;

use crate::error::{CliError, CliResult};

/// Probe metrics carried into the comparison, in column order.
pub const METRICS: [&str; 7] = [
    "entropy",
    "positive_avg_log_prob",
    "delta_logp_positive",
    "tv",
    "js",
    "ece",
    "top1_mass",
];

fn metric(p: &ProbeReport, name: &str) -> f64 {
    match name {
        "entropy" => p.entropy,
        "positive_avg_log_prob" => p.positive_avg_log_prob,
        "delta_logp_positive" => p.delta_logp_positive,
        "tv" => p.tv,
        "js" => p.js,
        "ece" => p.ece,
        "top1_mass" => p.top1_mass,
        _ => unreachable!("unknown metric {name}"),
    }
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub summary: RunSummary,
    pub probes: Vec<ProbeReport>,
}

impl Bundle {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join("summary.json");
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let summary = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let probes = read_jsonl(&dir.join("probes.jsonl"))?;
        Ok(Self { summary, probes })
    }
}

/// One aligned checkpoint: `(a, b, b − a)` per metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub stage: u8,
    pub step: usize,
    pub values: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Final probe metrics: `(name, a, b, b − a)`.
    pub finals: Vec<(&'static str, f64, f64, f64)>,
}

impl Comparison {
    pub fn header() -> String {
        let mut cols = vec!["stage".to_string(), "step".to_string()];
        for m in METRICS {
            cols.extend([format!("{m}_a"), format!("{m}_b"), format!("{m}_delta")]);
        }
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| CliError::Input(format!("writing comparison CSV: {e}"));
        w.write_record(Self::header().split(',')).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![r.stage.to_string(), r.step.to_string()];
            for (a, b, d) in &r.values {
                rec.extend([a.to_string(), b.to_string(), d.to_string()]);
            }
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()
            .map_err(|e| CliError::Input(format!("writing comparison CSV: {e}")))?;
        Ok(())
    }
}

/// Align the probe series of two bundles on `(stage, step)`.
///
/// Both runs must have measured the same probe set drawn from the same data
/// seed; otherwise their numbers are not comparable.
pub fn compare_bundles(a: &Bundle, b: &Bundle) -> CliResult<Comparison> {
    if a.summary.data_seed != b.summary.data_seed {
        return Err(CliError::Comparison(format!(
            "bundles come from different data seeds ({} vs {})",
            a.summary.data_seed, b.summary.data_seed
        )));
    }
    if a.summary.probe_fingerprint != b.summary.probe_fingerprint {
        return Err(CliError::Comparison(
            "bundles were measured on different probe sets".into(),
        ));
    }
    let index: BTreeMap<(u8, usize), &ProbeReport> =
        b.probes.iter().map(|p| ((p.stage, p.step), p)).collect();
    let delta = |pa: &ProbeReport, pb: &ProbeReport| {
        METRICS
            .iter()
            .map(|m| (metric(pa, m), metric(pb, m), metric(pb, m) - metric(pa, m)))
            .collect()
    };
    let rows: Vec<ComparisonRow> = a
        .probes
        .iter()
        .filter_map(|pa| {
            index.get(&(pa.stage, pa.step)).map(|pb| ComparisonRow {
                stage: pa.stage,
                step: pa.step,
                values: delta(pa, pb),
            })
        })
        .collect();
    if rows.is_empty() {
        return Err(CliError::Comparison(
            "the two bundles share no probe checkpoint".into(),
        ));
    }
    let (fa, fb) = (&a.summary.final_probe, &b.summary.final_probe);
    let finals = METRICS
        .iter()
        .map(|&m| {
            (
                m,
                metric(fa, m),
                metric(fb, m),
                metric(fb, m) - metric(fa, m),
            )
        })
        .collect();
    Ok(Comparison { rows, finals })
}
