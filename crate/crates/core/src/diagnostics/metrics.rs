//! Distribution distances and calibration error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MASS_TOLERANCE: f64 = 1e-6;

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Input(format!(
            "distributions have support sizes {} and {}",
            p.len(),
            q.len()
        )));
    }
    for (name, d) in [("p", p), ("q", q)] {
        if d.iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err(Error::Input(format!("{name} has a negative or NaN entry")));
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Input(format!("{name} sums to {s}, not 1")));
        }
    }
    Ok(())
}

/// `½ Σ |p − q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(tv_unchecked(p, q))
}

/// Jensen-Shannon divergence in nats, `½KL(p‖m) + ½KL(q‖m)` with `m = (p+q)/2`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(js_unchecked(p, q))
}

pub(crate) fn tv_unchecked(p: &[f64], q: &[f64]) -> f64 {
    (0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()).min(1.0)
}

pub(crate) fn js_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            s += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            s += 0.5 * b * (b / m).ln();
        }
    }
    s.clamp(0.0, std::f64::consts::LN_2)
}

/// One next-token prediction: confidence of the argmax and whether it was right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub confidence: f64,
    pub correct: bool,
}

pub const DEFAULT_CALIBRATION_BINS: usize = 15;

/// Equal-width reliability bins over `[0, 1]`; the top bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub confidence_sum: Vec<f64>,
    pub accuracy_sum: Vec<f64>,
    pub count: Vec<usize>,
}

impl CalibrationBins {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("calibration needs at least one bin".into()));
        }
        Ok(Self {
            confidence_sum: vec![0.0; bins],
            accuracy_sum: vec![0.0; bins],
            count: vec![0; bins],
        })
    }

    pub fn bins(&self) -> usize {
        self.count.len()
    }

    pub fn bin_of(&self, confidence: f64) -> usize {
        let b = self.bins();
        ((confidence * b as f64).floor() as usize).min(b - 1)
    }

    pub fn add(&mut self, p: Prediction) -> Result<()> {
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(Error::Input(format!(
                "confidence {} outside [0, 1]",
                p.confidence
            )));
        }
        let b = self.bin_of(p.confidence);
        self.confidence_sum[b] += p.confidence;
        self.accuracy_sum[b] += if p.correct { 1.0 } else { 0.0 };
        self.count[b] += 1;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.count.iter().sum()
    }

    /// `Σ_b (n_b/N)·|acc_b − conf_b|`.
    pub fn ece(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::Input("no predictions to calibrate".into()));
        }
        let mut e = 0.0;
        for b in 0..self.bins() {
            if self.count[b] > 0 {
                e += (self.accuracy_sum[b] - self.confidence_sum[b]).abs() / n as f64;
            }
        }
        Ok(e)
    }
}

pub fn expected_calibration_error(predictions: &[Prediction], bins: usize) -> Result<f64> {
    let mut cal = CalibrationBins::new(bins)?;
    for &p in predictions {
        cal.add(p)?;
    }
    cal.ece()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tv_closed_forms() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 0.5);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
        assert!(tv_distance(&[0.9, 0.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn js_closed_forms() {
        assert_eq!(js_divergence(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!(
            (js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - std::f64::consts::LN_2).abs()
                < 1e-15
        );
        assert!(js_divergence(&[0.5, 0.5], &[1.0]).is_err());
    }

    #[test]
    fn ece_closed_forms() {
        let one = [Prediction {
            confidence: 0.9,
            correct: false,
        }];
        assert!((expected_calibration_error(&one, 15).unwrap() - 0.9).abs() < 1e-15);
        assert!(expected_calibration_error(&[], 15).is_err());
        // Two predictions at 0.5 in one bin, one right and one wrong.
        let matched = [
            Prediction {
                confidence: 0.5,
                correct: true,
            },
            Prediction {
                confidence: 0.5,
                correct: false,
            },
        ];
        assert_eq!(expected_calibration_error(&matched, 15).unwrap(), 0.0);
        let top = [Prediction {
            confidence: 1.0,
            correct: true,
        }];
        assert_eq!(expected_calibration_error(&top, 15).unwrap(), 0.0);
        assert!(expected_calibration_error(
            &[Prediction {
                confidence: 1.2,
                correct: true
            }],
            15
        )
        .is_err());
    }

    #[test]
    fn bin_boundaries_partition_unit_interval() {
        let cal = CalibrationBins::new(15).unwrap();
        assert_eq!(cal.bin_of(0.0), 0);
        assert_eq!(cal.bin_of(1.0), 14);
        assert_eq!(cal.bin_of(1.0 / 15.0), 1);
        assert_eq!(cal.bin_of(0.999), 14);
    }

    fn dist(raw: Vec<f64>) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in prop::collection::vec(0.01f64..1.0, 2..12), seed in 0u64..1000) {
            let p = dist(a.clone());
            let q = dist(a.iter().enumerate().map(|(i, x)| x * (1.0 + ((i as u64 * 7 + seed) % 5) as f64)).collect());
            let (t1, t2) = (tv_distance(&p, &q).unwrap(), tv_distance(&q, &p).unwrap());
            let (j1, j2) = (js_divergence(&p, &q).unwrap(), js_divergence(&q, &p).unwrap());
            prop_assert!((t1 - t2).abs() <= 1e-12 && (j1 - j2).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&t1));
            prop_assert!((0.0..=std::f64::consts::LN_2).contains(&j1));
        }

        #[test]
        fn ece_permutation_invariant(conf in prop::collection::vec(0.0f64..=1.0, 1..60), shift in 0usize..60) {
            let preds: Vec<Prediction> = conf.iter().enumerate().map(|(i, &c)| Prediction { confidence: c, correct: i % 3 == 0 }).collect();
            let mut rotated = preds.clone();
            let k = shift % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let a = expected_calibration_error(&preds, 15).unwrap();
            let b = expected_calibration_error(&rotated, 15).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
