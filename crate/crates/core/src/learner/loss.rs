//! Per-sample losses and their gradients with respect to the model outputs.

use crate::citygraph::Action;
use crate::labeling::PairLabel;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceLoss<T> {
    pub value: T,
    /// Every class was a sentinel; the sample carries no signal.
    pub fully_masked: bool,
}

/// Sum of squared errors over classes whose label is present.
pub fn loss_distance<T: Scalar>(pred: &[T], label: &[Option<T>]) -> DistanceLoss<T> {
    let (value, _) = loss_distance_grad(pred, label);
    DistanceLoss { value, fully_masked: label.iter().all(Option::is_none) }
}

pub fn loss_distance_grad<T: Scalar>(pred: &[T], label: &[Option<T>]) -> (T, Vec<T>) {
    debug_assert_eq!(pred.len(), label.len());
    let two = T::lit(2.0);
    let mut value = T::zero();
    let grad = pred
        .iter()
        .zip(label)
        .map(|(&p, l)| match l {
            Some(y) => {
                let d = p - *y;
                value = value + d * d;
                two * d
            }
            None => T::zero(),
        })
        .collect();
    (value, grad)
}

/// Softmax over `scores`, computed with the max subtracted.
fn softmax<T: Scalar>(scores: &[T]) -> (Vec<T>, T) {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let log_z = max + sum.ln();
    (exps.into_iter().map(|e| e / sum).collect(), log_z)
}

/// Weighted softmax loss applied independently to each class's four action
/// scores. `scores[c * 4 + a]` is the score of action `a` for class `c`.
pub fn loss_direction<T: Scalar>(scores: &[T], labels: &[Option<Action>], geo_w: &[T]) -> T {
    loss_direction_grad(scores, labels, geo_w).0
}

pub fn loss_direction_grad<T: Scalar>(scores: &[T], labels: &[Option<Action>], geo_w: &[T]) -> (T, Vec<T>) {
    debug_assert_eq!(scores.len(), labels.len() * 4);
    let mut value = T::zero();
    let mut grad = vec![T::zero(); scores.len()];
    for (c, label) in labels.iter().enumerate() {
        let Some(action) = label else { continue };
        let col = &scores[c * 4..c * 4 + 4];
        let (p, log_z) = softmax(col);
        let w = geo_w[c];
        value = value + w * (log_z - col[action.index()]);
        for j in 0..4 {
            let target = if j == action.index() { T::one() } else { T::zero() };
            grad[c * 4 + j] = w * (p[j] - target);
        }
    }
    (value, grad)
}

/// Weighted two-way softmax loss between the scores of the two pair members,
/// per class. Ignored classes contribute nothing.
pub fn loss_pair<T: Scalar>(first: &[T], second: &[T], labels: &[PairLabel], geo_w: &[T]) -> T {
    loss_pair_grad(first, second, labels, geo_w).0
}

pub fn loss_pair_grad<T: Scalar>(first: &[T], second: &[T], labels: &[PairLabel], geo_w: &[T]) -> (T, Vec<T>, Vec<T>) {
    let mut value = T::zero();
    let mut g1 = vec![T::zero(); first.len()];
    let mut g2 = vec![T::zero(); second.len()];
    for (c, label) in labels.iter().enumerate() {
        let favorable_first = match label {
            PairLabel::First => true,
            PairLabel::Second => false,
            PairLabel::Ignore => continue,
        };
        let (p, log_z) = softmax(&[first[c], second[c]]);
        let w = geo_w[c];
        let s = if favorable_first { first[c] } else { second[c] };
        value = value + w * (log_z - s);
        let (t1, t2) = if favorable_first { (T::one(), T::zero()) } else { (T::zero(), T::one()) };
        g1[c] = w * (p[0] - t1);
        g2[c] = w * (p[1] - t2);
    }
    (value, g1, g2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    const H: f64 = 1e-5;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    /// Central differences of `f` at `x`.
    fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut up = x.to_vec();
                let mut dn = x.to_vec();
                up[i] += H;
                dn[i] -= H;
                (f(&up) - f(&dn)) / (2.0 * H)
            })
            .collect()
    }

    #[test]
    fn distance_examples() {
        let l = [Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0)];
        let p = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(loss_distance(&p, &l).value, 0.0);
        let l = [Some(3.0), None, None, None, None];
        let p = [1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(loss_distance(&p, &l), DistanceLoss { value: 4.0, fully_masked: false });
        let masked = loss_distance(&p, &[None; 5]);
        assert_eq!(masked, DistanceLoss { value: 0.0, fully_masked: true });
    }

    #[test]
    fn distance_matches_recomputation() {
        let mut rng = rng::seeded(1, &[]);
        for _ in 0..100 {
            let p: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let l: Vec<Option<f64>> = (0..5).map(|_| rng.gen_bool(0.6).then(|| rng.gen_range(0.0..40.0))).collect();
            let mut expect = 0.0;
            for i in 0..5 {
                if let Some(y) = l[i] {
                    expect += (p[i] - y) * (p[i] - y);
                }
            }
            assert!((loss_distance(&p, &l).value - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn direction_examples() {
        let scores = [0.0f64; 20];
        let mut labels = [None; 5];
        labels[2] = Some(Action::Left);
        let ones = [1.0; 5];
        assert!((loss_direction(&scores, &labels, &ones) - 4f64.ln()).abs() < 1e-12);
        let w = [0.81; 5];
        assert!((loss_direction(&scores, &labels, &w) - 0.81 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(loss_direction(&scores, &[None; 5], &ones), 0.0);
    }

    #[test]
    fn pair_examples() {
        let z = [0.0f64; 5];
        let mut labels = [PairLabel::Ignore; 5];
        labels[0] = PairLabel::First;
        assert!((loss_pair(&z, &z, &labels, &[1.0; 5]) - 2f64.ln()).abs() < 1e-12);
        let mut big = [0.0; 5];
        big[0] = 60.0;
        assert!(loss_pair(&big, &z, &labels, &[1.0; 5]) < 1e-20);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = rng::seeded(2, &[]);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let p: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let l: Vec<Option<f64>> = (0..5).map(|_| rng.gen_bool(0.7).then(|| rng.gen_range(0.0..10.0))).collect();
            let (_, g) = loss_distance_grad(&p, &l);
            for (a, b) in g.iter().zip(numeric_grad(&p, |x| loss_distance(x, &l).value)) {
                worst = worst.max(rel_err(*a, b));
            }

            let s: Vec<f64> = (0..20).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let al: Vec<Option<Action>> = (0..5).map(|_| rng.gen_bool(0.7).then(|| Action::from_index(rng.gen_range(0..4)))).collect();
            let w: Vec<f64> = (0..5).map(|_| rng.gen_range(0.1..1.0)).collect();
            let (_, g) = loss_direction_grad(&s, &al, &w);
            for (a, b) in g.iter().zip(numeric_grad(&s, |x| loss_direction(x, &al, &w))) {
                worst = worst.max(rel_err(*a, b));
            }

            let s1: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let s2: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let pl: Vec<PairLabel> =
                (0..5).map(|_| [PairLabel::First, PairLabel::Second, PairLabel::Ignore][rng.gen_range(0..3)]).collect();
            let (_, g1, g2) = loss_pair_grad(&s1, &s2, &pl, &w);
            let joint: Vec<f64> = s1.iter().chain(&s2).copied().collect();
            let num = numeric_grad(&joint, |x| loss_pair(&x[..5], &x[5..], &pl, &w));
            for (a, b) in g1.iter().chain(&g2).zip(num) {
                worst = worst.max(rel_err(*a, b));
            }
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_losses_are_shift_invariant_and_nonnegative(
                s in proptest::collection::vec(-20.0f64..20.0, 20),
                s2 in proptest::collection::vec(-20.0f64..20.0, 5),
                shift in -50.0f64..50.0,
                class in 0usize..5,
                action in 0usize..4,
            ) {
                let mut labels = [None; 5];
                labels[class] = Some(Action::from_index(action));
                let w = [1.0; 5];
                let base = loss_direction(&s, &labels, &w);
                let mut shifted = s.clone();
                for v in &mut shifted[class * 4..class * 4 + 4] { *v += shift; }
                prop_assert!(base >= 0.0);
                prop_assert!((base - loss_direction(&shifted, &labels, &w)).abs() < 1e-9);

                let mut pl = [PairLabel::Ignore; 5];
                pl[class] = if action % 2 == 0 { PairLabel::First } else { PairLabel::Second };
                let a = &s[..5];
                let pb = loss_pair(a, &s2, &pl, &w);
                let a2: Vec<f64> = a.iter().map(|v| v + shift).collect();
                let b2: Vec<f64> = s2.iter().map(|v| v + shift).collect();
                prop_assert!(pb >= 0.0);
                prop_assert!((pb - loss_pair(&a2, &b2, &pl, &w)).abs() < 1e-9);
            }
        }
    }
}
