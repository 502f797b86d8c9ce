use super::tape::{Tape, Var};
use super::tensor::{ParamStore, Precision};
use super::AutodiffError;

/// Seed used for every tape built during a gradient check, so that any
/// tape-drawn randomness (dropout masks) repeats across rebuilds and the
/// finite-difference evaluations see the same function as the analytic pass.
const GRADCHECK_SEED: u64 = 0x6ead_c4ec;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat element index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub params_checked: usize,
    pub elements_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Compare analytic gradients against central finite differences
/// (f(θ+ε) − f(θ−ε)) / 2ε over every element of every trainable parameter.
///
/// `build` must construct the scalar loss from scratch on the tape it is
/// given; it is re-invoked 2 ε-perturbed times per element. The check runs in
/// 64-bit mode regardless of the model's configured precision. The store's
/// gradient buffers are used as scratch and are cleared.
///
/// The relative error is |a−n| / max(|a|+|n|, 1e-3); the floor absorbs
/// finite-difference roundoff (~1e-10 here) on near-zero gradients while
/// still flagging structural errors.
pub fn grad_check<F>(
    store: &mut ParamStore,
    eps: f64,
    tolerance: f64,
    build: F,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, AutodiffError>,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    store.zero_grads();

    let mut tape = Tape::with_seed(Precision::Double, true, GRADCHECK_SEED);
    let loss = build(&mut tape, store)?;
    tape.backward(loss)?;
    tape.export_grads(store);

    let trainable = store.trainable_ids();
    let mut analytic: Vec<Vec<f64>> = Vec::with_capacity(trainable.len());
    for &id in &trainable {
        let t = store.get(id);
        let g = match t.grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; t.numel()],
        };
        for (i, v) in g.iter().enumerate() {
            if !v.is_finite() {
                return Err(AutodiffError::NonFinite {
                    param: format!("{}[{}]", store.name(id), i),
                });
            }
        }
        analytic.push(g);
    }
    store.zero_grads();

    let eval = |store: &ParamStore| -> Result<f64, AutodiffError> {
        let mut tape = Tape::with_seed(Precision::Double, true, GRADCHECK_SEED);
        let loss = build(&mut tape, store)?;
        Ok(tape.value(loss)[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        params_checked: trainable.len(),
        elements_checked: 0,
        tolerance,
    };

    for (k, &id) in trainable.iter().enumerate() {
        for i in 0..store.get(id).numel() {
            let original = store.get(id).values()[i];
            store.get_mut(id).values_mut()[i] = original + eps;
            let f_plus = eval(store)?;
            store.get_mut(id).values_mut()[i] = original - eps;
            let f_minus = eval(store)?;
            store.get_mut(id).values_mut()[i] = original;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(AutodiffError::NonFinite {
                    param: format!("{}[{}]", store.name(id), i),
                });
            }
            let a = analytic[k][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-3);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((store.name(id).to_string(), i));
            }
            report.elements_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_function_checks_out() {
        // f = x², x = 3: analytic 6 vs numeric ≈ 6
        let mut store = ParamStore::new();
        let x = store
            .add("x", Tensor::vector(vec![3.0]).with_requires_grad(true))
            .unwrap();
        let report = grad_check(&mut store, 1e-5, 1e-8, |tape, store| {
            let v = tape.param(store, x);
            let sq = tape.mul(v, v)?;
            Ok(tape.sum_elements(sq))
        })
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
        assert_eq!(report.elements_checked, 1);
    }

    #[test]
    fn detects_genuine_mismatch_at_relu_kink() {
        // At x = 0 the analytic subgradient of relu is 0 but the central
        // difference is 0.5; the check must flag it, not smooth it over.
        let mut store = ParamStore::new();
        let x = store
            .add("x", Tensor::vector(vec![0.0]).with_requires_grad(true))
            .unwrap();
        let report = grad_check(&mut store, 1e-5, 1e-4, |tape, store| {
            let v = tape.param(store, x);
            let r = tape.relu(v);
            Ok(tape.sum_elements(r))
        })
        .unwrap();
        assert!(!report.passed(), "max rel err {}", report.max_rel_err);
        assert_eq!(report.worst.as_ref().unwrap().0, "x");
    }

    #[test]
    fn randomized_primitives_match_finite_differences() {
        // Every primitive participates in at least one composed loss; all
        // must match central differences at 1e-4 in 64-bit mode.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..5 {
            let mut store = ParamStore::new();
            let rand_vec =
                |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
                    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
                };
            let w = store
                .add(
                    "w",
                    Tensor::matrix(3, 4, rand_vec(&mut rng, 12))
                        .unwrap()
                        .with_requires_grad(true),
                )
                .unwrap();
            let x = store
                .add(
                    "x",
                    Tensor::vector(rand_vec(&mut rng, 4)).with_requires_grad(true),
                )
                .unwrap();
            let b = store
                .add(
                    "b",
                    Tensor::vector(rand_vec(&mut rng, 3)).with_requires_grad(true),
                )
                .unwrap();
            let table = store
                .add(
                    "table",
                    Tensor::matrix(5, 3, rand_vec(&mut rng, 15))
                        .unwrap()
                        .with_requires_grad(true),
                )
                .unwrap();
            let gate = store
                .add(
                    "gate",
                    Tensor::vector(rand_vec(&mut rng, 1)).with_requires_grad(true),
                )
                .unwrap();

            let report = grad_check(&mut store, 1e-5, 1e-4, |tape, store| {
                let wv = tape.param(store, w);
                let xv = tape.param(store, x);
                let bv = tape.param(store, b);
                let gv = tape.param(store, gate);
                let row = tape.lookup_row(store, table, 2)?;
                let h = tape.matvec(wv, xv)?;
                let h = tape.add(h, bv)?;
                let s = tape.sigmoid(h);
                let t = tape.tanh(row);
                let m = tape.mul(s, t)?;
                let r = tape.relu(m);
                let g = tape.sigmoid(gv);
                let gated = tape.mul_scalar(r, g)?;
                let other = tape.lookup_row(store, table, 0)?;
                let summed = tape.sum_set(&[gated, other])?;
                let scaled = tape.scale(summed, 0.7);
                let dropped = tape.dropout(scaled, 0.3)?;
                let cat = tape.concat(&[dropped, bv])?;
                let probs = tape.softmax(cat)?;
                tape.cross_entropy(probs, trial % 6)
            })
            .unwrap();
            assert!(
                report.passed(),
                "trial {trial}: max rel err {} at {:?}",
                report.max_rel_err,
                report.worst
            );
        }
    }
}
