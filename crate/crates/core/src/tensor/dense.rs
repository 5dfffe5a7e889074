use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense array of f64. Rank 0 (scalar), 1 and 2 are used in
/// practice; no dimension may be zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero dimension in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} wants {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![], data: vec![x] }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor { shape: other.shape.clone(), data: vec![0.0; other.data.len()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Number of rows when interpreted as a matrix ((n) counts as n rows of 1).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[0],
        }
    }
}

/// Broadcast relationship between two operand shapes.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// Left operand is a single element, applied to every right element.
    LhsScalar,
    RhsScalar,
    /// Right operand is one row (1,d) applied to every row of left (n,d).
    RhsRow,
}

pub(crate) fn infer_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape == b.shape {
        return Ok(Broadcast::Same);
    }
    if b.numel() == 1 {
        return Ok(Broadcast::RhsScalar);
    }
    if a.numel() == 1 {
        return Ok(Broadcast::LhsScalar);
    }
    if a.shape.len() == 2 && b.shape.len() == 2 && b.shape[0] == 1 && a.shape[1] == b.shape[1] {
        return Ok(Broadcast::RhsRow);
    }
    Err(Error::Shape { op, left: a.shape.clone(), right: b.shape.clone() })
}

pub(crate) fn binary_map(
    a: &Tensor,
    b: &Tensor,
    bc: Broadcast,
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    match bc {
        Broadcast::Same => {
            let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
            Tensor { shape: a.shape.clone(), data }
        }
        Broadcast::RhsScalar => {
            let y = b.data[0];
            let data = a.data.iter().map(|&x| f(x, y)).collect();
            Tensor { shape: a.shape.clone(), data }
        }
        Broadcast::LhsScalar => {
            let x = a.data[0];
            let data = b.data.iter().map(|&y| f(x, y)).collect();
            Tensor { shape: b.shape.clone(), data }
        }
        Broadcast::RhsRow => {
            let cols = a.shape[1];
            let data = a
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data[i % cols]))
                .collect();
            Tensor { shape: a.shape.clone(), data }
        }
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Shape { op: "matmul", left: a.shape.clone(), right: b.shape.clone() });
    }
    let (n, k) = (a.shape[0], a.shape[1]);
    let m = b.shape[1];
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![n, m], out)
}

pub(crate) fn transpose(a: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 {
        return Err(Error::Shape { op: "transpose", left: a.shape.clone(), right: vec![] });
    }
    let (n, m) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a.data[i * m + j];
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn map_unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor { shape: a.shape.clone(), data: a.data.iter().map(|&x| f(x)).collect() }
}

/// Overflow-safe log-sum-exp of a slice (max subtraction).
pub fn logsumexp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub(crate) fn softmax_1d(a: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 1 {
        return Err(Error::Shape { op: "softmax", left: a.shape.clone(), right: vec![] });
    }
    let m = a.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = a.data.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Tensor::new(a.shape.clone(), exps.into_iter().map(|e| e / z).collect())
}

pub(crate) fn logsumexp_1d(a: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 1 {
        return Err(Error::Shape { op: "logsumexp", left: a.shape.clone(), right: vec![] });
    }
    Ok(Tensor::scalar(logsumexp_slice(&a.data)))
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Joint log-density of `y` under independent Gaussians N(mu, sigma^2),
/// summed over all elements.
pub(crate) fn gaussian_log_pdf(y: &Tensor, mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    if y.shape != mu.shape || y.shape != sigma.shape {
        return Err(Error::Shape {
            op: "gaussian_log_pdf",
            left: mu.shape.clone(),
            right: if y.shape != mu.shape { y.shape.clone() } else { sigma.shape.clone() },
        });
    }
    let mut acc = 0.0;
    for i in 0..y.data.len() {
        let s = sigma.data[i];
        let z = (y.data[i] - mu.data[i]) / s;
        acc += -0.5 * LN_2PI - s.ln() - 0.5 * z * z;
    }
    Ok(Tensor::scalar(acc))
}

pub(crate) fn concat0(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    match first.shape.len() {
        1 => {
            let mut data = Vec::new();
            for p in parts {
                if p.shape.len() != 1 {
                    return Err(Error::Shape {
                        op: "concat",
                        left: first.shape.clone(),
                        right: p.shape.clone(),
                    });
                }
                data.extend_from_slice(&p.data);
            }
            let n = data.len();
            Tensor::new(vec![n], data)
        }
        2 => {
            let cols = first.shape[1];
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                if p.shape.len() != 2 || p.shape[1] != cols {
                    return Err(Error::Shape {
                        op: "concat",
                        left: first.shape.clone(),
                        right: p.shape.clone(),
                    });
                }
                rows += p.shape[0];
                data.extend_from_slice(&p.data);
            }
            Tensor::new(vec![rows, cols], data)
        }
        _ => Err(Error::Shape { op: "concat", left: first.shape.clone(), right: vec![] }),
    }
}

pub(crate) fn slice_1d(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if a.shape.len() != 1 || start + len > a.shape[0] || len == 0 {
        return Err(Error::invalid(format!(
            "slice [{start}, {}) out of bounds for shape {:?}",
            start + len,
            a.shape
        )));
    }
    Tensor::new(vec![len], a.data[start..start + len].to_vec())
}
