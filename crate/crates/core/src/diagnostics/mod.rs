//! Probe-set measurements: entropy, distribution shift, calibration,
//! `Δlog p` probes, top-k snapshots and curriculum traces.

mod curriculum;
mod metrics;

pub use curriculum::{
    cooling_weight_trace, curated_negatives, measure_curriculum, CurriculumRecord, CurriculumTrace,
};
pub use metrics::{
    expected_calibration_error, js_divergence, tv_distance, CalibrationBins, Prediction,
    DEFAULT_CALIBRATION_BINS,
};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledExample, Tier};
use crate::error::{Error, Result};
use crate::numeric::mean;
use crate::policy::{ranked, PolicyParameters};

/// Mean `ℓ̄_current − ℓ̄_baseline` over probe positives and, by tier, negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaLogp {
    pub positive: f64,
    pub negative: BTreeMap<Tier, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub tv: f64,
    pub js: f64,
}

/// Everything measured on the probe set at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub stage: u8,
    pub step: usize,
    /// Mean next-token entropy over probe positive positions (nats).
    pub entropy: f64,
    pub positive_avg_log_prob: f64,
    pub delta_logp_positive: f64,
    pub delta_logp_negative: BTreeMap<Tier, f64>,
    /// Mean per-position TV distance to the baseline checkpoint.
    pub tv: f64,
    pub js: f64,
    pub ece: f64,
    /// Mean probability of the most likely next token.
    pub top1_mass: f64,
}

impl ProbeReport {
    pub fn check_ranges(&self, vocab_size: usize) -> Result<()> {
        let ln_v = (vocab_size as f64).ln();
        let checks = [
            ("entropy", self.entropy, 0.0, ln_v + 1e-12),
            ("tv", self.tv, 0.0, 1.0),
            ("js", self.js, 0.0, std::f64::consts::LN_2),
            ("ece", self.ece, 0.0, 1.0),
            ("top1_mass", self.top1_mass, 0.0, 1.0),
        ];
        for (name, v, lo, hi) in checks {
            if !(v >= lo && v <= hi) {
                return Err(Error::Input(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

fn same_shape(a: &PolicyParameters, b: &PolicyParameters) -> Result<()> {
    if a.architecture() != b.architecture() {
        return Err(Error::Input(format!(
            "checkpoints have different architectures: {:?} vs {:?}",
            a.architecture(),
            b.architecture()
        )));
    }
    Ok(())
}

pub fn delta_logp_probe(
    current: &PolicyParameters,
    baseline: &PolicyParameters,
    probe: &[LabeledExample],
) -> Result<DeltaLogp> {
    same_shape(current, baseline)?;
    let mut pos = Vec::with_capacity(probe.len());
    let mut neg: BTreeMap<Tier, Vec<f64>> = BTreeMap::new();
    for ex in probe {
        let d = |y| -> Result<f64> {
            Ok(current.forward(&ex.context, y)?.avg_token_log_prob()
                - baseline.forward(&ex.context, y)?.avg_token_log_prob())
        };
        pos.push(d(&ex.positive)?);
        for n in &ex.negatives {
            neg.entry(n.tier).or_default().push(d(&n.tokens)?);
        }
    }
    Ok(DeltaLogp {
        positive: mean(&pos),
        negative: neg.into_iter().map(|(t, v)| (t, mean(&v))).collect(),
    })
}

/// Per-position next-token TV and JS between two checkpoints, averaged over
/// every position of every probe positive.
pub fn distribution_shift_report(
    a: &PolicyParameters,
    b: &PolicyParameters,
    probe: &[LabeledExample],
) -> Result<ShiftReport> {
    same_shape(a, b)?;
    let (mut tv, mut js, mut n) = (0.0, 0.0, 0usize);
    for ex in probe {
        let fa = a.forward(&ex.context, &ex.positive)?;
        let fb = b.forward(&ex.context, &ex.positive)?;
        for l in 0..fa.len() {
            let (p, q) = (fa.probs_at(l), fb.probs_at(l));
            tv += metrics::tv_unchecked(&p, &q);
            js += metrics::js_unchecked(&p, &q);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Input("empty probe set".into()));
    }
    Ok(ShiftReport {
        tv: tv / n as f64,
        js: js / n as f64,
    })
}

/// All probe metrics for `current`, with shift and `Δlog p` relative to `baseline`.
pub fn probe_report(
    stage: u8,
    step: usize,
    current: &PolicyParameters,
    baseline: &PolicyParameters,
    probe: &[LabeledExample],
) -> Result<ProbeReport> {
    same_shape(current, baseline)?;
    if probe.is_empty() {
        return Err(Error::Input("empty probe set".into()));
    }
    let mut cal = CalibrationBins::new(DEFAULT_CALIBRATION_BINS)?;
    let (mut entropy, mut top1, mut tv, mut js, mut positions) = (0.0, 0.0, 0.0, 0.0, 0usize);
    let mut lbar = Vec::with_capacity(probe.len());
    for ex in probe {
        let fc = current.forward(&ex.context, &ex.positive)?;
        let fb = baseline.forward(&ex.context, &ex.positive)?;
        lbar.push(fc.avg_token_log_prob());
        for (l, &gold) in fc.target().iter().enumerate() {
            let p = fc.probs_at(l);
            let q = fb.probs_at(l);
            let best = ranked(fc.log_probs_at(l))[0];
            entropy += fc.entropy_at(l);
            top1 += p[best];
            cal.add(Prediction {
                confidence: p[best].clamp(0.0, 1.0),
                correct: best == gold as usize,
            })?;
            tv += metrics::tv_unchecked(&p, &q);
            js += metrics::js_unchecked(&p, &q);
            positions += 1;
        }
    }
    let n = positions as f64;
    let delta = delta_logp_probe(current, baseline, probe)?;
    let report = ProbeReport {
        stage,
        step,
        entropy: entropy / n,
        positive_avg_log_prob: mean(&lbar),
        delta_logp_positive: delta.positive,
        delta_logp_negative: delta.negative,
        tv: tv / n,
        js: js / n,
        ece: cal.ece()?,
        top1_mass: top1 / n,
    };
    report.check_ranges(current.vocabulary().size())?;
    Ok(report)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                detail: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Top-k next-token probabilities at one probe position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSnapshot {
    pub example_id: usize,
    pub position: usize,
    pub top: Vec<(u32, f64)>,
    pub distribution: Vec<f64>,
}

/// Snapshots at every positive position of the given probe examples.
pub fn top_k_snapshots(
    params: &PolicyParameters,
    probe: &[LabeledExample],
    examples: usize,
    k: usize,
) -> Result<Vec<DistributionSnapshot>> {
    let mut out = Vec::new();
    for ex in probe.iter().take(examples) {
        let f = params.forward(&ex.context, &ex.positive)?;
        for l in 0..f.len() {
            let distribution = f.probs_at(l);
            let top = ranked(f.log_probs_at(l))
                .into_iter()
                .take(k)
                .map(|t| (t as u32, distribution[t]))
                .collect();
            out.push(DistributionSnapshot {
                example_id: ex.id,
                position: l,
                top,
                distribution,
            });
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct SnapshotRow {
    example_id: usize,
    position: usize,
    rank: usize,
    token: u32,
    probability: f64,
}

/// CSV with columns `example_id,position,rank,token,probability`.
pub fn write_snapshots_csv(path: &Path, snapshots: &[DistributionSnapshot]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for s in snapshots {
        for (rank, &(token, probability)) in s.top.iter().enumerate() {
            w.serialize(SnapshotRow {
                example_id: s.example_id,
                position: s.position,
                rank: rank + 1,
                token,
                probability,
            })
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Input(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_probe_set, DatasetSpec};
    use crate::objectives::{sft_loss, SftExample};
    use crate::policy::Architecture;

    fn probe() -> Vec<LabeledExample> {
        let spec = DatasetSpec {
            corpus_size: 10,
            probe_size: 12,
            holdout_pool: 20,
            seed: 5,
            ..DatasetSpec::default()
        };
        build_probe_set(&spec, &[]).unwrap()
    }

    #[test]
    fn identical_checkpoints_report_zero_shift() {
        let p = PolicyParameters::init_uniform(Architecture::default(), 3).unwrap();
        let pr = probe();
        let r = probe_report(2, 0, &p, &p, &pr).unwrap();
        assert_eq!((r.tv, r.js, r.delta_logp_positive), (0.0, 0.0, 0.0));
        assert!(r.delta_logp_negative.values().all(|&v| v == 0.0));
        assert_eq!(
            distribution_shift_report(&p, &p, &pr).unwrap(),
            ShiftReport { tv: 0.0, js: 0.0 }
        );
    }

    #[test]
    fn uniform_policy_report() {
        let p = PolicyParameters::zeros(Architecture::default()).unwrap();
        let r = probe_report(1, 0, &p, &p, &probe()).unwrap();
        assert!((r.entropy - 32f64.ln()).abs() < 1e-12);
        assert!((r.top1_mass - 1.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn sft_step_on_probe_positive_raises_its_logp() {
        let base = PolicyParameters::init_uniform(Architecture::default(), 3).unwrap();
        let pr = probe();
        let one = &pr[..1];
        let g = sft_loss(
            &base,
            &[SftExample::new(
                one[0].context.clone(),
                one[0].positive.clone(),
            )],
        )
        .unwrap();
        let mut cur = base.clone();
        cur.axpy(-0.05, &g.gradient);
        assert!(delta_logp_probe(&cur, &base, one).unwrap().positive > 0.0);
    }

    #[test]
    fn mismatched_architectures_rejected() {
        let a = PolicyParameters::zeros(Architecture::default()).unwrap();
        let b = PolicyParameters::zeros(Architecture::mlp(32, 4, 8, 16)).unwrap();
        assert!(distribution_shift_report(&a, &b, &probe()).is_err());
    }

    #[test]
    fn snapshots_sorted_and_written() {
        let p = PolicyParameters::init_uniform(Architecture::default(), 9).unwrap();
        let snaps = top_k_snapshots(&p, &probe(), 2, 5).unwrap();
        for s in &snaps {
            assert_eq!(s.top.len(), 5);
            assert!(s.top.windows(2).all(|w| w[0].1 >= w[1].1));
            assert!(s.top.iter().map(|t| t.1).sum::<f64>() <= 1.0 + 1e-12);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.csv");
        write_snapshots_csv(&path, &snaps).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "example_id,position,rank,token,probability"
        );
        assert_eq!(text.lines().count(), 1 + 5 * snaps.len());
    }

    #[test]
    fn jsonl_roundtrip() {
        let p = PolicyParameters::init_uniform(Architecture::default(), 3).unwrap();
        let r = probe_report(2, 25, &p, &p, &probe()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probes.jsonl");
        write_jsonl(&path, &[r.clone(), r.clone()]).unwrap();
        let back: Vec<ProbeReport> = read_jsonl(&path).unwrap();
        assert_eq!(back, vec![r.clone(), r]);
    }
}
