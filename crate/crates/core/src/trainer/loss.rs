//! Training objectives. Each returns the mean loss and its gradient with
//! respect to the tensor it consumes.

use ndarray::{s, Array2};

use crate::error::{Error, Result};

fn check_shapes(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean of `(pred - target)^2`; gradient with respect to `pred`.
pub fn loss_l2(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_shapes(pred, target, "l2 loss")?;
    let n = pred.len().max(1) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean of `-log sigmoid(sign(target) * logit)`; gradient with respect to
/// the logits. Targets are analog bits in `{-b, +b}`.
pub fn loss_sigmoid_ce(logits: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_shapes(logits, target, "sigmoid cross-entropy")?;
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((g, &z), &y) in grad.iter_mut().zip(logits.iter()).zip(target.iter()) {
        let y = if y > 0.0 { 1.0 } else { -1.0 };
        loss += softplus(-y * z);
        *g = -y * sigmoid(-y * z) / n;
    }
    Ok((loss / n, grad))
}

/// Sampler-facing prediction for a sigmoid-trained network: `b (2 sigmoid(z) - 1)`.
pub fn sigmoid_prediction(logits: &Array2<f64>, scale: f64) -> Array2<f64> {
    logits.mapv(|z| scale * (2.0 * sigmoid(z) - 1.0))
}

/// Mean over positions of `-sum_k y_k log softmax(z)_k`, logits laid out as
/// `[batch, positions * K]`; gradient with respect to the logits.
pub fn loss_softmax_ce(
    logits: &Array2<f64>,
    target_onehot: &Array2<f64>,
    vocab_size: usize,
) -> Result<(f64, Array2<f64>)> {
    check_shapes(logits, target_onehot, "softmax cross-entropy")?;
    if vocab_size == 0 || !logits.ncols().is_multiple_of(vocab_size) {
        return Err(Error::shape(format!(
            "{} logits not divisible into groups of {vocab_size}",
            logits.ncols()
        )));
    }
    let positions = logits.ncols() / vocab_size;
    let groups = (logits.nrows() * positions).max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for p in 0..positions {
        let cols = s![.., p * vocab_size..(p + 1) * vocab_size];
        let z = logits.slice(cols);
        let y = target_onehot.slice(cols);
        let mut g = grad.slice_mut(cols);
        for ((zr, yr), mut gr) in z.rows().into_iter().zip(y.rows()).zip(g.rows_mut()) {
            let max = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + zr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let ysum: f64 = yr.sum();
            for ((gi, &zi), &yi) in gr.iter_mut().zip(zr.iter()).zip(yr.iter()) {
                loss -= yi * (zi - lse);
                *gi = (ysum * (zi - lse).exp() - yi) / groups;
            }
        }
    }
    Ok((loss / groups, grad))
}

/// One-hot targets `[batch, positions * K]` from class indices.
pub fn one_hot_targets(classes: &Array2<u32>, vocab_size: usize) -> Array2<f64> {
    let (batch, positions) = classes.dim();
    let mut out = Array2::zeros((batch, positions * vocab_size));
    for ((i, p), &c) in classes.indexed_iter() {
        out[[i, p * vocab_size + c as usize]] = 1.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arr(rows: usize, v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((rows, v.len() / rows), v.to_vec()).unwrap()
    }

    #[test]
    fn l2_examples() {
        let t = arr(1, &[1.0, -1.0, 1.0]);
        assert_eq!(loss_l2(&t, &t).unwrap().0, 0.0);
        assert_eq!(loss_l2(&Array2::zeros((1, 3)), &t).unwrap().0, 1.0);
        assert_eq!(loss_l2(&arr(1, &[0.5]), &arr(1, &[1.0])).unwrap().0, 0.25);
    }

    #[test]
    fn sigmoid_ce_examples() {
        let (l, _) = loss_sigmoid_ce(&Array2::zeros((2, 2)), &arr(2, &[1.0, -1.0, -1.0, 1.0])).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = loss_sigmoid_ce(&arr(1, &[30.0]), &arr(1, &[1.0])).unwrap();
        assert!(l < 1e-9);
        assert_eq!(sigmoid_prediction(&arr(1, &[0.0]), 1.0)[[0, 0]], 0.0);
    }

    #[test]
    fn softmax_ce_examples() {
        let y = one_hot_targets(&Array2::from_elem((1, 1), 2), 4);
        let (l, _) = loss_softmax_ce(&Array2::zeros((1, 4)), &y, 4).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        let (l, _) = loss_softmax_ce(&arr(1, &[0.0, 0.0, 30.0, 0.0]), &y, 4).unwrap();
        assert!(l < 1e-12);
    }

    // log(sum exp) - z_y, computed naively without the max shift
    fn naive_softmax_ce(z: &[f64], y: usize) -> f64 {
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        lse - z[y]
    }

    proptest! {
        #[test]
        fn softmax_ce_matches_reference(z in prop::collection::vec(-5.0f64..5.0, 8), c0 in 0u32..4, c1 in 0u32..4) {
            let logits = arr(1, &z);
            let classes = Array2::from_shape_vec((1, 2), vec![c0, c1]).unwrap();
            let y = one_hot_targets(&classes, 4);
            let (l, _) = loss_softmax_ce(&logits, &y, 4).unwrap();
            let want = (naive_softmax_ce(&z[..4], c0 as usize) + naive_softmax_ce(&z[4..], c1 as usize)) / 2.0;
            prop_assert!((l - want).abs() < 1e-10);
        }

        #[test]
        fn losses_non_negative(z in prop::collection::vec(-20.0f64..20.0, 4), signs in prop::collection::vec(any::<bool>(), 4)) {
            let t: Vec<f64> = signs.iter().map(|&s| if s { 1.0 } else { -1.0 }).collect();
            let (a, b) = (arr(1, &z), arr(1, &t));
            prop_assert!(loss_l2(&a, &b).unwrap().0 >= 0.0);
            prop_assert!(loss_sigmoid_ce(&a, &b).unwrap().0 >= 0.0);
            let y = one_hot_targets(&Array2::from_elem((1, 1), 1), 4);
            prop_assert!(loss_softmax_ce(&a, &y, 4).unwrap().0 >= 0.0);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let z = [0.3, -1.2, 2.0, 0.7, -0.4, 1.5, 0.0, -2.2];
        let target = [1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0];
        let onehot = one_hot_targets(&Array2::from_shape_vec((1, 2), vec![3, 1]).unwrap(), 4);
        type LossFn = Box<dyn Fn(&Array2<f64>) -> (f64, Array2<f64>)>;
        let t = arr(1, &target);
        let cases: Vec<LossFn> = vec![
            Box::new(move |a| loss_l2(a, &t).unwrap()),
            Box::new(move |a| loss_sigmoid_ce(a, &arr(1, &target)).unwrap()),
            Box::new(move |a| loss_softmax_ce(a, &onehot, 4).unwrap()),
        ];
        for f in cases {
            let base = arr(1, &z);
            let (_, g) = f(&base);
            for j in 0..z.len() {
                let h = 1e-5;
                let mut up = base.clone();
                up[[0, j]] += h;
                let mut dn = base.clone();
                dn[[0, j]] -= h;
                let fd = (f(&up).0 - f(&dn).0) / (2.0 * h);
                assert!((fd - g[[0, j]]).abs() < 1e-8, "{fd} vs {}", g[[0, j]]);
            }
        }
    }
}
