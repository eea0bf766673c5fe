//! Elementwise, reduction and shape operations.
//!
//! No broadcasting beyond tensor-scalar: binary ops demand equal shapes and
//! return an explicit shape error otherwise.

use std::rc::Rc;

use crate::scalar::{sc, Scalar};

use super::{Graph, Tensor, TensorError};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Scalar> Tensor<T> {
    fn check_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.check_same_shape(other, "add")?;
        let a = self.data();
        let b = other.data();
        let data = a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect();
        Ok(self.graph.record(
            self.shape.clone(),
            data,
            &[self, other],
            Box::new(|g| vec![g.to_vec(), g.to_vec()]),
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.check_same_shape(other, "sub")?;
        let a = self.data();
        let b = other.data();
        let data = a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect();
        Ok(self.graph.record(
            self.shape.clone(),
            data,
            &[self, other],
            Box::new(|g| vec![g.to_vec(), g.iter().map(|&v| -v).collect()]),
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.check_same_shape(other, "mul")?;
        let a = self.data();
        let b = other.data();
        let data = a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect();
        let (ar, br) = (Rc::clone(&a), Rc::clone(&b));
        Ok(self.graph.record(
            self.shape.clone(),
            data,
            &[self, other],
            Box::new(move |g| {
                vec![
                    g.iter().zip(br.iter()).map(|(&gv, &y)| gv * y).collect(),
                    g.iter().zip(ar.iter()).map(|(&gv, &x)| gv * x).collect(),
                ]
            }),
        ))
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.check_same_shape(other, "div")?;
        let a = self.data();
        let b = other.data();
        let data = a.iter().zip(b.iter()).map(|(&x, &y)| x / y).collect();
        let (ar, br) = (Rc::clone(&a), Rc::clone(&b));
        Ok(self.graph.record(
            self.shape.clone(),
            data,
            &[self, other],
            Box::new(move |g| {
                vec![
                    g.iter().zip(br.iter()).map(|(&gv, &y)| gv / y).collect(),
                    g.iter()
                        .zip(ar.iter().zip(br.iter()))
                        .map(|(&gv, (&x, &y))| -gv * x / (y * y))
                        .collect(),
                ]
            }),
        ))
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x * c).collect();
        self.graph.record(
            self.shape.clone(),
            data,
            &[self],
            Box::new(move |g| vec![g.iter().map(|&v| v * c).collect()]),
        )
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x + c).collect();
        self.graph.record(
            self.shape.clone(),
            data,
            &[self],
            Box::new(|g| vec![g.to_vec()]),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|x| x.exp()).collect();
        let out = Rc::new(data.clone());
        self.graph.record(
            self.shape.clone(),
            data,
            &[self],
            Box::new(move |g| vec![g.iter().zip(out.iter()).map(|(&gv, &y)| gv * y).collect()]),
        )
    }

    pub fn ln(&self) -> Tensor<T> {
        let x = self.data();
        let data = x.iter().map(|v| v.ln()).collect();
        self.graph.record(
            self.shape.clone(),
            data,
            &[self],
            Box::new(move |g| vec![g.iter().zip(x.iter()).map(|(&gv, &v)| gv / v).collect()]),
        )
    }

    /// Square root; subgradient 0 at x == 0 (used by the euclidean loss at
    /// zero distance).
    pub fn sqrt(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|x| x.sqrt()).collect();
        let out = Rc::new(data.clone());
        self.graph.record(
            self.shape.clone(),
            data,
            &[self],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(out.iter())
                    .map(|(&gv, &y)| {
                        if y == T::zero() {
                            T::zero()
                        } else {
                            gv / (sc::<T>(2.0) * y)
                        }
                    })
                    .collect()]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&x| T::one() / (T::one() + (-x).exp()))
            .collect();
        let out = Rc::new(data.clone());
        self.graph.record(
            self.shape.clone(),
            data,
            &[self],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(out.iter())
                    .map(|(&gv, &s)| gv * s * (T::one() - s))
                    .collect()]
            }),
        )
    }

    /// max(x, 0); subgradient 0 at x == 0.
    pub fn relu(&self) -> Tensor<T> {
        let x = self.data();
        let data = x
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        self.graph.record(
            self.shape.clone(),
            data,
            &[self],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(x.iter())
                    .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                    .collect()]
            }),
        )
    }

    pub fn powf(&self, p: T) -> Tensor<T> {
        let x = self.data();
        let data = x.iter().map(|v| v.powf(p)).collect();
        self.graph.record(
            self.shape.clone(),
            data,
            &[self],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(x.iter())
                    .map(|(&gv, &v)| gv * p * v.powf(p - T::one()))
                    .collect()]
            }),
        )
    }

    /// max(x, floor); gradient passes only where x > floor.
    pub fn clamp_min(&self, floor: T) -> Tensor<T> {
        let x = self.data();
        let data = x.iter().map(|&v| v.max(floor)).collect();
        self.graph.record(
            self.shape.clone(),
            data,
            &[self],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(x.iter())
                    .map(|(&gv, &v)| if v > floor { gv } else { T::zero() })
                    .collect()]
            }),
        )
    }

    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let n = self.numel();
        self.graph.record(
            vec![1],
            vec![total],
            &[self],
            Box::new(move |g| vec![vec![g[0]; n]]),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / sc::<T>(n as f64);
        let total = self.data().iter().fold(T::zero(), |acc, &v| acc + v) * inv;
        self.graph.record(
            vec![1],
            vec![total],
            &[self],
            Box::new(move |g| vec![vec![g[0] * inv; n]]),
        )
    }

    /// Sum over one axis, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>, TensorError> {
        self.reduce_axis(axis, false)
    }

    /// Mean over one axis, removing it from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>, TensorError> {
        self.reduce_axis(axis, true)
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Tensor<T>, TensorError> {
        if axis >= self.shape.len() {
            return Err(TensorError::BadAxis {
                op: if mean { "mean_axis" } else { "sum_axis" },
                axis,
                shape: self.shape.clone(),
            });
        }
        let shape = &self.shape;
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let scale = if mean {
            T::one() / sc::<T>(mid as f64)
        } else {
            T::one()
        };
        let x = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let obase = o * inner;
                for i in 0..inner {
                    out[obase + i] += x[base + i];
                }
            }
        }
        if mean {
            for v in &mut out {
                *v *= scale;
            }
        }
        let mut out_shape: Vec<usize> = shape[..axis].to_vec();
        out_shape.extend_from_slice(&shape[axis + 1..]);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.graph.record(
            out_shape,
            out,
            &[self],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); outer * mid * inner];
                for o in 0..outer {
                    for m in 0..mid {
                        let base = (o * mid + m) * inner;
                        let obase = o * inner;
                        for i in 0..inner {
                            dx[base + i] = g[obase + i] * scale;
                        }
                    }
                }
                vec![dx]
            }),
        ))
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        if new_shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                shape: new_shape.to_vec(),
                reason: format!("element count differs from {:?}", self.shape),
            });
        }
        let data = self.to_vec();
        Ok(self.graph.record(
            new_shape.to_vec(),
            data,
            &[self],
            Box::new(|g| vec![g.to_vec()]),
        ))
    }

    /// Generalized transpose: permute axes.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>, TensorError> {
        let rank = self.shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::InvalidShape {
                op: "permute",
                shape: axes.to_vec(),
                reason: format!("not a permutation of 0..{rank}"),
            });
        }
        let old_strides = strides(&self.shape);
        let new_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let new_strides = strides(&new_shape);
        let x = self.data();
        let n = self.numel();
        let mut out = vec![T::zero(); n];
        // out[multi-index m] = x[m permuted back]
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut rem = flat;
            let mut src = 0;
            for d in 0..rank {
                let idx = rem / new_strides[d];
                rem %= new_strides[d];
                src += idx * old_strides[axes[d]];
            }
            *slot = x[src];
        }
        let axes_owned = axes.to_vec();
        let old_shape = self.shape.clone();
        Ok(self.graph.record(
            new_shape.clone(),
            out,
            &[self],
            Box::new(move |g| {
                let rank = old_shape.len();
                let old_strides = strides(&old_shape);
                let new_strides = strides(&new_shape);
                let mut dx = vec![T::zero(); g.len()];
                for (flat, &gv) in g.iter().enumerate() {
                    let mut rem = flat;
                    let mut src = 0;
                    for d in 0..rank {
                        let idx = rem / new_strides[d];
                        rem %= new_strides[d];
                        src += idx * old_strides[axes_owned[d]];
                    }
                    dx[src] = gv;
                }
                vec![dx]
            }),
        ))
    }

    /// Slice `[lo, hi)` along axis 1 (the channel axis in NCHW).
    pub fn slice_channels(&self, lo: usize, hi: usize) -> Result<Tensor<T>, TensorError> {
        if self.shape.len() < 2 || hi > self.shape[1] || lo >= hi {
            return Err(TensorError::InvalidShape {
                op: "slice_channels",
                shape: self.shape.clone(),
                reason: format!("invalid channel range {lo}..{hi}"),
            });
        }
        let shape = &self.shape;
        let outer = shape[0];
        let mid = shape[1];
        let inner: usize = shape[2..].iter().product();
        let width = hi - lo;
        let x = self.data();
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = (o * mid + lo) * inner;
            out.extend_from_slice(&x[base..base + width * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[1] = width;
        Ok(self.graph.record(
            out_shape,
            out,
            &[self],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); outer * mid * inner];
                for o in 0..outer {
                    let base = (o * mid + lo) * inner;
                    let gbase = o * width * inner;
                    dx[base..base + width * inner]
                        .copy_from_slice(&g[gbase..gbase + width * inner]);
                }
                vec![dx]
            }),
        ))
    }
}

/// Concatenate along axis 1 (channels) in argument order.
pub fn concat_channels<T: Scalar>(
    graph: &Graph<T>,
    xs: &[&Tensor<T>],
) -> Result<Tensor<T>, TensorError> {
    assert!(!xs.is_empty(), "concat_channels: empty input list");
    let first = xs[0];
    let rank = first.shape().len();
    for x in xs {
        let s = x.shape();
        if s.len() != rank
            || s[0] != first.shape()[0]
            || s[2..] != first.shape()[2..]
        {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: first.shape().to_vec(),
                rhs: s.to_vec(),
            });
        }
    }
    let outer = first.shape()[0];
    let inner: usize = first.shape()[2..].iter().product();
    let widths: Vec<usize> = xs.iter().map(|x| x.shape()[1]).collect();
    let total: usize = widths.iter().sum();
    let datas: Vec<Rc<Vec<T>>> = xs.iter().map(|x| x.data()).collect();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (w, d) in widths.iter().zip(&datas) {
            let base = o * w * inner;
            out.extend_from_slice(&d[base..base + w * inner]);
        }
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[1] = total;
    let widths_b = widths.clone();
    Ok(graph.record(
        out_shape,
        out,
        xs,
        Box::new(move |g| {
            let mut grads: Vec<Vec<T>> = widths_b
                .iter()
                .map(|w| Vec::with_capacity(outer * w * inner))
                .collect();
            let mut pos = 0;
            for _o in 0..outer {
                for (gi, w) in widths_b.iter().enumerate() {
                    grads[gi].extend_from_slice(&g[pos..pos + w * inner]);
                    pos += w * inner;
                }
            }
            grads
        }),
    ))
}
