use std::fmt;

use serde::{Deserialize, Serialize};

use super::KernelError;

/// Extent of a `[batch, channels, length]` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
}

impl Shape3 {
    pub const fn new(batch: usize, channels: usize, len: usize) -> Self {
        Self {
            batch,
            channels,
            len,
        }
    }

    pub const fn numel(&self) -> usize {
        self.batch * self.channels * self.len
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}]", self.batch, self.channels, self.len)
    }
}

/// Dense row-major `[B, C, L]` array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    shape: Shape3,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(shape: Shape3) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn filled(shape: Shape3, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape3, data: Vec<f64>) -> Result<Self, KernelError> {
        if data.len() != shape.numel() {
            return Err(KernelError::ShapeMismatch {
                layer: "tensor".into(),
                expected: format!("{} elements for {shape}", shape.numel()),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, t: usize) -> usize {
        (b * self.shape.channels + c) * self.shape.len + t
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, t: usize) -> f64 {
        self.data[self.index(b, c, t)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, t: usize, value: f64) {
        let i = self.index(b, c, t);
        self.data[i] = value;
    }

    /// Contiguous slice holding one channel of one batch row.
    #[inline]
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let start = self.index(b, c, 0);
        &self.data[start..start + self.shape.len]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let start = self.index(b, c, 0);
        let len = self.shape.len;
        &mut self.data[start..start + len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor3) -> Result<(), KernelError> {
        if self.shape != other.shape {
            return Err(KernelError::ShapeMismatch {
                layer: "add".into(),
                expected: self.shape.to_string(),
                got: other.shape.to_string(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Concatenates along the channel axis; all parts must share batch and length.
    pub fn concat_channels(parts: &[&Tensor3]) -> Result<Self, KernelError> {
        let first = parts.first().ok_or_else(|| KernelError::InvalidInput(
            "concat of zero tensors".into(),
        ))?;
        let (batch, len) = (first.shape.batch, first.shape.len);
        let mut channels = 0;
        for p in parts {
            if p.shape.batch != batch || p.shape.len != len {
                return Err(KernelError::ShapeMismatch {
                    layer: "concat".into(),
                    expected: format!("[{batch}, *, {len}]"),
                    got: p.shape.to_string(),
                });
            }
            channels += p.shape.channels;
        }
        let shape = Shape3::new(batch, channels, len);
        let mut out = Self::zeros(shape);
        for b in 0..batch {
            let mut c0 = 0;
            for p in parts {
                for c in 0..p.shape.channels {
                    out.row_mut(b, c0 + c).copy_from_slice(p.row(b, c));
                }
                c0 += p.shape.channels;
            }
        }
        Ok(out)
    }

    /// Inverse of [`Tensor3::concat_channels`].
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Self>, KernelError> {
        if sizes.iter().sum::<usize>() != self.shape.channels {
            return Err(KernelError::ShapeMismatch {
                layer: "split".into(),
                expected: format!("{} channels", sizes.iter().sum::<usize>()),
                got: self.shape.to_string(),
            });
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut c0 = 0;
        for &n in sizes {
            let mut part = Self::zeros(Shape3::new(self.shape.batch, n, self.shape.len));
            for b in 0..self.shape.batch {
                for c in 0..n {
                    part.row_mut(b, c).copy_from_slice(self.row(b, c0 + c));
                }
            }
            c0 += n;
            out.push(part);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_is_identity() {
        let a = Tensor3::from_vec(Shape3::new(2, 1, 3), (0..6).map(f64::from).collect()).unwrap();
        let b = Tensor3::from_vec(Shape3::new(2, 2, 3), (10..22).map(f64::from).collect()).unwrap();
        let c = Tensor3::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape3::new(2, 3, 3));
        assert_eq!(c.row(1, 0), &[3.0, 4.0, 5.0]);
        assert_eq!(c.row(1, 1), &[16.0, 17.0, 18.0]);
        let parts = c.split_channels(&[1, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor3::from_vec(Shape3::new(1, 2, 3), vec![0.0; 5]).is_err());
    }
}
