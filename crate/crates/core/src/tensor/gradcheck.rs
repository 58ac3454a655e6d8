//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Floor of the relative-error denominator.
    pub floor: f64,
    /// Check at most this many coordinates per input (chosen at random);
    /// `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-8,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate, analytic, numeric) of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    pub passed: bool,
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares tape gradients of the scalar `f(inputs)` against central
/// differences, perturbing one coordinate of one input at a time.
pub fn check_gradients<F>(inputs: &[Tensor], cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    for (ii, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        let n = inputs[ii].numel();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = work[ii].data()[c];
            work[ii].data_mut()[c] = orig + cfg.step;
            let plus = eval(&work)?;
            work[ii].data_mut()[c] = orig - cfg.step;
            let minus = eval(&work)?;
            work[ii].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.data()[c];
            let err = relative_error(a, numeric, cfg.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ii, c, a, numeric));
            }
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}

/// Compares the directional derivative `⟨∇f, v⟩` along random directions
/// covering every coordinate of every input at once.
pub fn check_directional<F>(inputs: &[Tensor], directions: usize, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    for d in 0..directions {
        let dirs: Vec<Tensor> = inputs.iter().map(|t| Tensor::uniform(t.shape().to_vec(), -1.0, 1.0, &mut rng)).collect();
        let shifted = |sign: f64| -> Vec<Tensor> {
            inputs
                .iter()
                .zip(&dirs)
                .map(|(t, v)| {
                    let data = t.data().iter().zip(v.data()).map(|(a, b)| a + sign * cfg.step * b).collect();
                    Tensor::from_parts(t.shape().to_vec(), data)
                })
                .collect()
        };
        let numeric = (eval(&shifted(1.0))? - eval(&shifted(-1.0))?) / (2.0 * cfg.step);
        let a: f64 = analytic
            .iter()
            .zip(&dirs)
            .map(|(g, v)| g.data().iter().zip(v.data()).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        let err = relative_error(a, numeric, cfg.floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((usize::MAX, d, a, numeric));
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x = Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = check_gradients(&[x], &GradCheckConfig::default(), |t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // max_axis routes gradient to the argmax; with a tie broken toward
        // the first element, the one-sided kink is visible to differences.
        let x = Tensor::new([2], vec![1.0, 1.0]).unwrap();
        let r = check_gradients(&[x], &GradCheckConfig::default(), |t, v| t.max_axis(v[0], 0)).unwrap();
        assert!(!r.passed);
    }
}
