//! Finite-difference checks of whole blocks, over both the input and every
//! trainable parameter in a store.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{BnMode, ParamStore, Session};
use crate::error::Result;
use crate::tensor::gradcheck::{relative_error, GradCheckConfig, GradCheckReport};
use crate::tensor::{Tensor, Var};

/// Checks `Σ R ⊙ (f(x) − f(x₀))` for a fixed random `R`, differentiating with respect
/// to `x` and every trainable entry of `store`. With `cfg.max_coords` set,
/// that many coordinates are sampled per tensor.
pub fn check_block<F>(store: &ParamStore, x: &Tensor, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Session, Var) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let (weights, offset) = {
        let mut s = Session::new(store, BnMode::Eval, false);
        let xv = s.tape.constant(x.clone());
        let y = f(&mut s, xv)?;
        let base = s.tape.value(y).map(|v| -v);
        (Tensor::uniform(base.shape().to_vec(), -1.0, 1.0, &mut rng), base)
    };
    // Σ R ⊙ (y − y₀): subtracting the base output elementwise keeps the
    // differenced sums free of the large constant terms.
    let objective = |s: &mut Session, y: Var| -> Result<Var> {
        let c = s.tape.constant(offset.clone());
        let d = s.tape.add(y, c)?;
        s.tape.dot_const(d, &weights)
    };
    let eval = |st: &ParamStore, xt: &Tensor| -> Result<f64> {
        let mut s = Session::new(st, BnMode::Eval, false);
        let xv = s.tape.constant(xt.clone());
        let y = f(&mut s, xv)?;
        let out = objective(&mut s, y)?;
        Ok(s.tape.value(out).item())
    };

    let (x_grad, mut param_grads) = {
        let mut s = Session::new(store, BnMode::Eval, true);
        let xv = s.tape.param(x.clone());
        let y = f(&mut s, xv)?;
        let out = objective(&mut s, y)?;
        let g = s.tape.backward(out)?;
        (g.get_or_zeros(xv), s.param_grads(&g))
    };
    param_grads.sort_by_key(|(id, _)| *id);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        match cfg.max_coords {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        }
    };
    let note = |report: &mut GradCheckReport, which: usize, c: usize, a: f64, num: f64| {
        let err = relative_error(a, num, cfg.floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((which, c, a, num));
        }
    };

    let mut xw = x.clone();
    for c in pick(x.numel(), &mut rng) {
        let orig = xw.data()[c];
        xw.data_mut()[c] = orig + cfg.step;
        let plus = eval(store, &xw)?;
        xw.data_mut()[c] = orig - cfg.step;
        let minus = eval(store, &xw)?;
        xw.data_mut()[c] = orig;
        note(&mut report, 0, c, x_grad.data()[c], (plus - minus) / (2.0 * cfg.step));
    }

    let mut work = store.clone();
    for (id, grad) in &param_grads {
        for c in pick(grad.numel(), &mut rng) {
            let orig = work.get(*id).data()[c];
            work.get_mut(*id).data_mut()[c] = orig + cfg.step;
            let plus = eval(&work, x)?;
            work.get_mut(*id).data_mut()[c] = orig - cfg.step;
            let minus = eval(&work, x)?;
            work.get_mut(*id).data_mut()[c] = orig;
            note(&mut report, 1 + id.index(), c, grad.data()[c], (plus - minus) / (2.0 * cfg.step));
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}
