//! Forward rules live as methods on [`Graph`](crate::Graph); the matching
//! backward rules are free functions called from the tape replay.

pub(crate) mod conv;
pub(crate) mod linear;
pub(crate) mod loss;
pub(crate) mod norm;
pub(crate) mod pointwise;
pub(crate) mod pool;
pub(crate) mod shape;

pub use norm::{Mode, RunningStats, BN_EPS, BN_MOMENTUM, LN_EPS};

/// Splits `shape` around `axis` into `(outer, axis_len, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Views a rank-2 `[C, L]` or rank-3 `[B, C, L]` shape as `(B, C, L)`.
pub(crate) fn as_bcl(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [c, l] => Some((1, c, l)),
        [b, c, l] => Some((b, c, l)),
        _ => None,
    }
}
