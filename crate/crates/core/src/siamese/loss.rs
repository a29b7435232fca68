use super::{DistanceMode, Scalar};

fn pair_distance<T: Scalar>(p1: &[T], p2: &[T], mode: DistanceMode) -> T {
    let sq: T = p1.iter().zip(p2).map(|(&a, &b)| (a - b) * (a - b)).sum();
    match mode {
        DistanceMode::Euclidean => sq.sqrt(),
        DistanceMode::Squared => sq,
    }
}

/// `0.5 * ((1 - y) * d^2 + y * max(0, m - d)^2)`; `y = 0` marks a positive
/// pair, `y = 1` a negative one.
pub fn contrastive_loss<T: Scalar>(p1: &[T], p2: &[T], y: u8, margin: T, mode: DistanceMode) -> T {
    let half = T::from_f64(0.5).unwrap();
    let d = pair_distance(p1, p2, mode);
    if y == 0 {
        half * d * d
    } else {
        // written out so a NaN distance propagates instead of clamping to 0
        let gap = margin - d;
        let gap = if gap < T::zero() { T::zero() } else { gap };
        half * gap * gap
    }
}

/// Gradient of [`contrastive_loss`] with respect to `p1`; the gradient with
/// respect to `p2` is its negation.
///
/// At the hinge boundary `d == m` the zero branch is taken, and a negative
/// pair with `d == 0` (no defined direction) also gets a zero gradient.
pub fn contrastive_grad<T: Scalar>(p1: &[T], p2: &[T], y: u8, margin: T, mode: DistanceMode) -> Vec<T> {
    let diff: Vec<T> = p1.iter().zip(p2).map(|(&a, &b)| a - b).collect();
    let sq: T = diff.iter().map(|&v| v * v).sum();
    let two = T::from_f64(2.0).unwrap();
    // scale such that dL/dp1 = scale * (p1 - p2)
    let scale = match (mode, y) {
        (DistanceMode::Euclidean, 0) => T::one(),
        (DistanceMode::Euclidean, _) => {
            let d = sq.sqrt();
            if d >= margin || d == T::zero() {
                T::zero()
            } else {
                -(margin - d) / d
            }
        }
        (DistanceMode::Squared, 0) => two * sq,
        (DistanceMode::Squared, _) => {
            if sq >= margin {
                T::zero()
            } else {
                -two * (margin - sq)
            }
        }
    };
    diff.into_iter().map(|v| v * scale).collect()
}
