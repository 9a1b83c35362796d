//! Trailing-alignment broadcasting: shapes are right-aligned and a dimension
//! of extent 1 stretches to match the other operand.

use crate::error::{DiffError, Result};
use crate::scalar::Real;
use crate::tensor::{numel, strides, Tensor};

pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(DiffError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (0 on stretched or missing axes).
fn view_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every output position with the matching flat offsets into `a`
/// and `b` under broadcasting.
fn for_each_offset(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel(out);
    if out.is_empty() {
        f(0, 0);
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut done = 0;
    while done < n {
        for j in 0..inner {
            f(oa + j * ia, ob + j * ib);
        }
        done += inner;
        // advance the outer multi-index
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub fn zip_broadcast<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    let out = broadcast_shape(op, a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(numel(&out));
    if out == a.shape() && out.ends_with(b.shape()) {
        let m = bd.len();
        data.extend(ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % m])));
    } else {
        let sa = view_strides(a.shape(), &out);
        let sb = view_strides(b.shape(), &out);
        for_each_offset(&out, &sa, &sb, |i, j| data.push(f(ad[i], bd[j])));
    }
    Tensor::new(out, data)
}

/// Sums `g` (shaped like the broadcast output) down to `shape`.
pub fn sum_to<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let out = g.shape().to_vec();
    let mut acc = vec![T::zero(); numel(shape)];
    let gd = g.data();
    if out.ends_with(shape) {
        let m = acc.len();
        for (i, &v) in gd.iter().enumerate() {
            acc[i % m] = acc[i % m] + v;
        }
    } else {
        let sg = strides(&out);
        let st = view_strides(shape, &out);
        for_each_offset(&out, &sg, &st, |i, j| acc[j] = acc[j] + gd[i]);
    }
    Tensor::from_parts(shape.to_vec(), acc)
}

/// Replicates `x` to `shape` under the broadcasting rule.
pub fn broadcast_to<T: Real>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if x.shape() == shape {
        return Ok(x.clone());
    }
    let out = broadcast_shape("broadcast_to", shape, x.shape())?;
    if out != shape {
        return Err(DiffError::ShapeMismatch {
            op: "broadcast_to",
            lhs: x.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let xd = x.data();
    let mut data = Vec::with_capacity(numel(shape));
    let sx = view_strides(x.shape(), shape);
    let so = strides(shape);
    for_each_offset(shape, &so, &sx, |_, j| data.push(xd[j]));
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(broadcast_shape("t", &[4, 3], &[3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast_shape("t", &[2, 1, 5], &[4, 1]).unwrap(), vec![2, 4, 5]);
        assert_eq!(broadcast_shape("t", &[], &[2]).unwrap(), vec![2]);
        let e = broadcast_shape("add", &[4, 3], &[4]).unwrap_err();
        assert!(e.to_string().contains("[4, 3]") && e.to_string().contains("[4]"));
    }

    #[test]
    fn column_broadcast_and_reduce() {
        let a = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 1], &[10., 20.]).unwrap();
        let c = zip_broadcast("add", &a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.data(), &[11., 12., 13., 24., 25., 26.]);
        let s = sum_to(&c, &[2, 1]);
        assert_eq!(s.data(), &[36., 75.]);
        let r = broadcast_to(&b, &[2, 3]).unwrap();
        assert_eq!(r.data(), &[10., 10., 10., 20., 20., 20.]);
    }
}
