//! Central finite-difference checks of analytic parameter gradients.
//!
//! The numeric side only ever evaluates loss values, so it shares no code
//! path with the hand-derived backward passes it checks.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::policy::PolicyParameters;

pub const FD_STEP: f64 = 1e-4;

/// Denominator floor for the relative error, so that coordinates whose true
/// derivative is zero are judged on absolute agreement.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h`.
pub fn central_difference<F>(
    f: &F,
    params: &PolicyParameters,
    coord: usize,
    step: f64,
) -> Result<f64>
where
    F: Fn(&PolicyParameters) -> Result<f64>,
{
    let mut p = params.clone();
    let x = p.as_slice()[coord];
    p.as_mut_slice()[coord] = x + step;
    let up = f(&p)?;
    p.as_mut_slice()[coord] = x - step;
    let down = f(&p)?;
    Ok((up - down) / (2.0 * step))
}

/// `count` distinct coordinates of a `len`-parameter vector (all of them if fewer).
pub fn random_coordinates(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = index::sample(&mut rng, len, count.min(len)).into_vec();
    c.sort_unstable();
    c
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst: usize,
}

pub fn check_gradient<F>(
    f: F,
    params: &PolicyParameters,
    analytic: &[f64],
    coords: &[usize],
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&PolicyParameters) -> Result<f64>,
{
    let mut report = GradCheckReport {
        coords: coords.to_vec(),
        analytic: Vec::with_capacity(coords.len()),
        numeric: Vec::with_capacity(coords.len()),
        max_rel_error: 0.0,
        worst: coords.first().copied().unwrap_or(0),
    };
    for &c in coords {
        let n = central_difference(&f, params, c, step)?;
        let a = analytic[c];
        let e = relative_error(a, n);
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst = c;
        }
        report.analytic.push(a);
        report.numeric.push(n);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Architecture;

    #[test]
    fn quadratic_is_exact() {
        let p = PolicyParameters::init_uniform(Architecture::linear(3, 2), 0).unwrap();
        let f = |q: &PolicyParameters| Ok(q.as_slice().iter().map(|x| x * x).sum::<f64>());
        let analytic: Vec<f64> = p.as_slice().iter().map(|x| 2.0 * x).collect();
        let coords = random_coordinates(p.len(), 10, 1);
        let r = check_gradient(f, &p, &analytic, &coords, FD_STEP).unwrap();
        assert!(r.max_rel_error < 1e-9);
        let wrong: Vec<f64> = analytic.iter().map(|x| x + 0.01).collect();
        assert!(
            check_gradient(f, &p, &wrong, &coords, FD_STEP)
                .unwrap()
                .max_rel_error
                > 1e-3
        );
    }

    #[test]
    fn coordinates_distinct_and_bounded() {
        let c = random_coordinates(100, 50, 3);
        assert_eq!(c.len(), 50);
        assert!(c.windows(2).all(|w| w[0] < w[1]) && *c.last().unwrap() < 100);
        assert_eq!(random_coordinates(5, 50, 3).len(), 5);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-6).abs() < 1e-18);
    }
}
