use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major `height × width × channels` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<S> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<S>,
}

impl<S: Scalar> Grid<S> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![S::zero(); height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: S) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "grid {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixels (`height · width`).
    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    /// Channel vector of pixel `(row, col)`.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[S] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [S] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Channel vector of the pixel with flat index `idx = row · width + col`.
    #[inline]
    pub fn pixel_at(&self, idx: usize) -> &[S] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> S {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: S) {
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, factor: S) {
        self.data.iter_mut().for_each(|v| *v = *v * factor);
    }
}
