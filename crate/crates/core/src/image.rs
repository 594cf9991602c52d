//! Labelled rasters in the `[0, 255]` pixel domain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Shape, Tensor};

/// What an image stands for in the denoising procedure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// Ground truth `x`.
    Clean,
    /// The corrupted test image `y = x + n_o`.
    Observed,
    /// The doubly corrupted training input `z = y + n_s`.
    Simulated,
    Denoised,
}

/// Concrete noise parameters that produced an image, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub sigma: f64,
    /// Poisson peak parameter; `None` when there is no signal-dependent component.
    pub lambda: Option<f64>,
}

impl NoiseLevel {
    pub const ZERO: NoiseLevel = NoiseLevel {
        sigma: 0.0,
        lambda: None,
    };

    pub fn is_zero(&self) -> bool {
        self.sigma == 0.0 && self.lambda.is_none()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageBufferError {
    #[error("image dimensions must be at least 1, got {channels}x{height}x{width}")]
    EmptyDimensions {
        channels: usize,
        height: usize,
        width: usize,
    },
    #[error("{channels} channels unsupported; expected 1 or 3")]
    Channels { channels: usize },
    #[error("{len} samples do not fill {channels}x{height}x{width}")]
    Length {
        channels: usize,
        height: usize,
        width: usize,
        len: usize,
    },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("expected a {expected:?} image, got {found:?}")]
    Role { expected: Role, found: Role },
    #[error("image shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
}

/// Planar (channel-major) float image with a role tag.
///
/// Samples nominally lie in `[0, 255]` but are not clipped: noisy and
/// denoised images may leave the range until they are written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    role: Role,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    noise: Option<NoiseLevel>,
}

impl ImageBuffer {
    pub fn new(role: Role, channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, ImageBufferError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(ImageBufferError::EmptyDimensions { channels, height, width });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageBufferError::Channels { channels });
        }
        if data.len() != channels * height * width {
            return Err(ImageBufferError::Length {
                channels,
                height,
                width,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageBufferError::NonFinite { index });
        }
        Ok(Self {
            role,
            channels,
            height,
            width,
            data,
            noise: None,
        })
    }

    pub fn gray(role: Role, height: usize, width: usize, data: Vec<f64>) -> Result<Self, ImageBufferError> {
        Self::new(role, 1, height, width, data)
    }

    pub fn filled(role: Role, channels: usize, height: usize, width: usize, value: f64) -> Result<Self, ImageBufferError> {
        Self::new(role, channels, height, width, vec![value; channels * height * width])
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Noise parameters recorded when this image was synthesised.
    pub fn noise(&self) -> Option<NoiseLevel> {
        self.noise
    }

    pub fn with_noise(mut self, level: NoiseLevel) -> Self {
        self.noise = Some(level);
        self
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Same geometry and provenance, new samples. Fails on length mismatch or non-finite samples.
    pub fn with_data(&self, role: Role, data: Vec<f64>) -> Result<Self, ImageBufferError> {
        let mut img = Self::new(role, self.channels, self.height, self.width, data)?;
        img.noise = self.noise;
        Ok(img)
    }

    pub fn require_role(&self, expected: Role) -> Result<(), ImageBufferError> {
        if self.role == expected {
            Ok(())
        } else {
            Err(ImageBufferError::Role {
                expected,
                found: self.role,
            })
        }
    }

    pub fn require_same_dims(&self, other: &ImageBuffer) -> Result<(), ImageBufferError> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(ImageBufferError::ShapeMismatch {
                a: self.dims(),
                b: other.dims(),
            })
        }
    }

    /// Samples clamped to `[0, 255]`.
    pub fn clipped(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.clamp(0.0, 255.0)).collect()
    }

    /// Stacks images of identical dimensions into one batch, scaled by `1/255`.
    pub fn stack(images: &[&ImageBuffer]) -> Result<Tensor, ImageBufferError> {
        let first = images[0];
        let mut data = Vec::with_capacity(images.len() * first.len());
        for img in images {
            first.require_same_dims(img)?;
            data.extend(img.data.iter().map(|v| v / 255.0));
        }
        let shape = Shape::new(images.len(), first.channels, first.height, first.width);
        Ok(Tensor::new(shape, data).expect("dimensions and finiteness checked"))
    }

    /// Single-image network input in `[0, 1]` units.
    pub fn to_tensor(&self) -> Tensor {
        Self::stack(&[self]).expect("one image")
    }

    /// Inverse of [`ImageBuffer::stack`] for sample `n` of `t`.
    pub fn from_tensor(t: &Tensor, n: usize, role: Role) -> Result<Self, ImageBufferError> {
        let s = t.shape();
        let data = t.sample(n).iter().map(|v| v * 255.0).collect();
        Self::new(role, s.channels, s.height, s.width, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(ImageBuffer::new(Role::Clean, 1, 0, 4, vec![]).is_err());
        assert!(ImageBuffer::new(Role::Clean, 2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageBuffer::new(Role::Clean, 1, 2, 2, vec![0.0; 3]).is_err());
        assert!(matches!(
            ImageBuffer::new(Role::Clean, 1, 1, 2, vec![0.0, f64::NAN]),
            Err(ImageBufferError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn tensor_round_trip() {
        let img = ImageBuffer::new(Role::Observed, 3, 2, 3, (0..18).map(|v| v as f64 * 10.0).collect()).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 3));
        let back = ImageBuffer::from_tensor(&t, 0, Role::Observed).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn role_checks() {
        let img = ImageBuffer::filled(Role::Clean, 1, 8, 8, 1.0).unwrap();
        assert!(img.require_role(Role::Clean).is_ok());
        assert_eq!(
            img.require_role(Role::Observed).unwrap_err(),
            ImageBufferError::Role {
                expected: Role::Observed,
                found: Role::Clean
            }
        );
    }
}
