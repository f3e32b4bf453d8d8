use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum ObsError {
    #[error("observation has {found} pixels, expected {height}x{width}")]
    Shape {
        height: usize,
        width: usize,
        found: usize,
    },
    #[error("pixel {index} = {value} lies outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
}

/// An H×W grayscale observation with every pixel in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obs {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Obs {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, ObsError> {
        if pixels.len() != height * width {
            return Err(ObsError::Shape {
                height,
                width,
                found: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(ObsError::OutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    /// Clips every pixel into [0, 1]. NaN maps to 0.
    pub fn clamped(height: usize, width: usize, mut pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), height * width, "observation shape mismatch");
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self::clamped(m.rows(), m.cols(), m.as_slice().to_vec())
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.height, self.width, self.pixels.clone())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!((0.0..=1.0).contains(&value));
        self.pixels[row * self.width + col] = value;
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_range_and_shape() {
        assert!(Obs::new(2, 2, vec![0.0, 0.5, 1.0, 0.25]).is_ok());
        assert_eq!(
            Obs::new(2, 2, vec![0.0; 3]),
            Err(ObsError::Shape {
                height: 2,
                width: 2,
                found: 3
            })
        );
        assert!(matches!(
            Obs::new(1, 2, vec![0.0, 1.5]),
            Err(ObsError::OutOfRange { index: 1, .. })
        ));
        assert_eq!(
            Obs::clamped(1, 3, vec![-1.0, f64::NAN, 2.0]).pixels(),
            &[0.0, 0.0, 1.0]
        );
    }
}
