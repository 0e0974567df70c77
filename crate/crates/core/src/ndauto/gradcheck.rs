use super::{ParamStore, Tape, Var};
use crate::error::Result;

/// Finite-difference step used by [`grad_check`].
pub const FD_EPS: f64 = 1e-5;

/// Denominator floor for relative errors, so entries whose true gradient is
/// ~0 are judged by absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every entry of every non-frozen parameter in `store`.
///
/// `loss_fn` must build a scalar loss from the parameters on a fresh tape
/// and be deterministic. Parameter values are restored afterwards and all
/// gradients are left zeroed.
pub fn grad_check<F>(store: &mut ParamStore, loss_fn: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    check_with(store, loss_fn, tolerance, |_| {})
}

fn check_with<F, T>(
    store: &mut ParamStore,
    mut loss_fn: F,
    tolerance: f64,
    mut tamper: T,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
    T: FnMut(&mut [f64]),
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss, store)?;

    let mut analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| {
            store
                .get(id)
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_default()
        })
        .collect();
    analytic.iter_mut().for_each(|g| tamper(g));
    store.zero_grads();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, store)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
        tolerance,
    };
    for id in store.ids().collect::<Vec<_>>() {
        if store.is_frozen(id) {
            continue;
        }
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + FD_EPS;
            let plus = eval(store);
            store.get_mut(id).data_mut()[i] = orig - FD_EPS;
            let minus = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * FD_EPS);
            let err = relative_error(analytic[id.index()][i], numeric);
            report.entries += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndauto::Tensor;

    fn linear_regression(
        store: &mut ParamStore,
    ) -> impl FnMut(&mut Tape, &ParamStore) -> Result<Var> {
        let x = Tensor::from_rows(&[[1.0, 0.5], [2.0, -1.0], [0.0, 1.0], [-1.5, 2.0]]).unwrap();
        let y = Tensor::from_rows(&[[1.0], [-2.0], [0.5], [3.0]]).unwrap();
        let w = store.add("w", Tensor::from_rows(&[[0.3], [-0.7]]).unwrap());
        move |tape, store| {
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let wv = tape.param(store, w);
            let pred = tape.matmul(xv, wv)?;
            let diff = tape.sub(pred, yv)?;
            let sq = tape.hadamard(diff, diff)?;
            tape.mean_all(sq)
        }
    }

    #[test]
    fn linear_regression_passes_and_matches_closed_form() {
        let mut store = ParamStore::new();
        let f = linear_regression(&mut store);
        let report = grad_check(&mut store, f, 1e-5).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.entries, 2);

        // closed form: 2/n X^T (Xw - y)
        let mut store = ParamStore::new();
        let mut f = linear_regression(&mut store);
        let mut tape = Tape::new();
        let loss = f(&mut tape, &store).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let x = [[1.0, 0.5], [2.0, -1.0], [0.0, 1.0], [-1.5, 2.0]];
        let y = [1.0, -2.0, 0.5, 3.0];
        let w = [0.3, -0.7];
        let mut expect = [0.0; 2];
        for (row, yi) in x.iter().zip(y) {
            let r = row[0] * w[0] + row[1] * w[1] - yi;
            expect[0] += 2.0 / 4.0 * row[0] * r;
            expect[1] += 2.0 / 4.0 * row[1] * r;
        }
        let got = store.get(store.ids().next().unwrap()).grad().unwrap();
        approx::assert_abs_diff_eq!(got[0], expect[0], epsilon = 1e-12);
        approx::assert_abs_diff_eq!(got[1], expect[1], epsilon = 1e-12);
    }

    #[test]
    fn doubled_gradient_fails() {
        let mut store = ParamStore::new();
        let f = linear_regression(&mut store);
        let report = check_with(&mut store, f, 1e-4, |g| {
            g.iter_mut().for_each(|v| *v *= 2.0)
        })
        .unwrap();
        assert!(!report.passed());
        assert!(report.max_rel_error > 0.4);
    }

    #[test]
    fn params_are_restored() {
        let mut store = ParamStore::new();
        let f = linear_regression(&mut store);
        let before = store.snapshot();
        grad_check(&mut store, f, 1e-5).unwrap();
        assert_eq!(store.snapshot(), before);
    }
}
