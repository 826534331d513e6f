use super::{strides, Tensor};
use crate::error::{Error, Result};

/// Right-aligned broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out`, the flat offset of the element of a tensor with
/// shape `input` that broadcasts onto it.
pub(crate) fn source_offsets(out: &[usize], input: &[usize]) -> Vec<usize> {
    let n: usize = out.iter().product();
    let rank = out.len();
    let in_strides = strides(input);
    // stride 0 on broadcast axes
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i + input.len() < rank {
                0
            } else {
                let j = i + input.len() - rank;
                if input[j] == 1 {
                    0
                } else {
                    in_strides[j]
                }
            }
        })
        .collect();
    let mut offs = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offs.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    offs
}

pub(crate) fn zip_map(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::shape(op, a.shape(), b.shape()))?;
    if b.len() == 1 {
        let y = b.data()[0];
        let data = a.data().iter().map(|&x| f(x, y)).collect();
        return Ok(Tensor::from_parts(out, data));
    }
    if a.len() == 1 {
        let x = a.data()[0];
        let data = b.data().iter().map(|&y| f(x, y)).collect();
        return Ok(Tensor::from_parts(out, data));
    }
    let oa = source_offsets(&out, a.shape());
    let ob = source_offsets(&out, b.shape());
    let (da, db) = (a.data(), b.data());
    let data = oa.iter().zip(&ob).map(|(&i, &j)| f(da[i], db[j])).collect();
    Ok(Tensor::from_parts(out, data))
}

/// Sums a gradient of broadcast shape back down to `shape`.
pub(crate) fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let n: usize = shape.iter().product();
    let mut acc = vec![0.0; n];
    if n == 1 {
        acc[0] = grad.data().iter().sum();
    } else {
        let offs = source_offsets(grad.shape(), shape);
        for (g, &o) in grad.data().iter().zip(&offs) {
            acc[o] += g;
        }
    }
    Tensor::from_parts(shape.to_vec(), acc)
}
