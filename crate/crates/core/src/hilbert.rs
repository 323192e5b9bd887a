use ndarray::ArrayView1;

use crate::error::{Error, Result};

/// Hilbert projective metric on the positive orthant:
/// `log(max_i(u_i/v_i) / min_i(u_i/v_i))`.
pub fn hilbert_metric(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    if u.is_empty() {
        return Err(Error::invalid("hilbert metric of empty vectors"));
    }
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for (&a, &b) in u.iter().zip(v.iter()) {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::invalid(format!(
                "hilbert metric needs strictly positive finite entries, got {a} and {b}"
            )));
        }
        let r = a / b;
        hi = hi.max(r);
        lo = lo.min(r);
    }
    Ok((hi / lo).ln())
}
