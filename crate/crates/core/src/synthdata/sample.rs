use crate::error::{Error, Result};
use crate::numerics::Grid;
use crate::scalar::Scalar;

/// Label of pixels that belong to no currently learned class.
pub const BACKGROUND: u16 = 0;
/// Void pixels, excluded from every loss and metric.
pub const IGNORE: u16 = 65535;

/// Row-major map of class ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn filled(height: usize, width: usize, value: u16) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "label map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u16) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [u16] {
        &mut self.data
    }

    pub fn contains(&self, class: u16) -> bool {
        self.data.contains(&class)
    }
}

/// An RGB image with values in `[0, 1]` and its label map.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample<S> {
    pub image: Grid<S>,
    pub labels: LabelMap,
}

impl<S: Scalar> SegSample<S> {
    pub fn new(image: Grid<S>, labels: LabelMap) -> Result<Self> {
        if image.channels() != 3 {
            return Err(Error::Dimension(format!(
                "image must have 3 channels, has {}",
                image.channels()
            )));
        }
        if image.height() != labels.height() || image.width() != labels.width() {
            return Err(Error::Dimension(format!(
                "image {}x{} vs labels {}x{}",
                image.height(),
                image.width(),
                labels.height(),
                labels.width()
            )));
        }
        Ok(Self { image, labels })
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}
