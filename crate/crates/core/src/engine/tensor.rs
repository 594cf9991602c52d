use std::fmt;

use super::EngineError;

/// Extents of a batch of planar images: batch × channels × height × width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }

    fn validate(&self) -> Result<(), EngineError> {
        if self.batch == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(EngineError::InvalidShape(*self));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.batch, self.channels, self.height, self.width)
    }
}

/// Row-major `f64` array with an optional gradient companion of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Checks extents, length and finiteness.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, EngineError> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(EngineError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite {
                what: format!("tensor element {i}"),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Result<Self, EngineError> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Result<Self, EngineError> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn from_fn(shape: Shape, f: impl FnMut(usize) -> f64) -> Result<Self, EngineError> {
        Self::new(shape, (0..shape.len()).map(f).collect())
    }

    /// Internal constructor for results of operations on valid tensors.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.channels + c) * s.height + y) * s.width + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<(), EngineError> {
        if grad.len() != self.data.len() {
            return Err(EngineError::LengthMismatch {
                shape: self.shape,
                len: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub(crate) fn require_shape(&self, op: &'static str, expected: Shape) -> Result<(), EngineError> {
        if self.shape != expected {
            return Err(EngineError::ShapeMismatch {
                op,
                expected,
                found: self.shape,
            });
        }
        Ok(())
    }

    pub(crate) fn require_channels(&self, op: &'static str, channels: usize) -> Result<(), EngineError> {
        self.require_shape(op, self.shape.with_channels(channels))
    }
}
