//! Minimal HWC raster container shared by the tiling and dataset code.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A dense raster in row-major HWC layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T: Copy> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Raster<T> {
    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Raster {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::default())
    }
}

impl<T: Copy> Raster<T> {
    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "raster data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Raster {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[self.idx(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: T) {
        let i = self.idx(row, col, ch);
        self.data[i] = value;
    }

    pub fn same_dims<U: Copy>(&self, other: &Raster<U>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Copies the `height x width` window at `(row0, col0)` out of `self`.
    /// Clamps nothing: the window must lie fully inside.
    pub fn window(&self, row0: usize, col0: usize, height: usize, width: usize) -> Result<Self> {
        if row0 + height > self.height || col0 + width > self.width {
            return Err(Error::InvalidGeometry(format!(
                "window {}x{} at ({},{}) exceeds raster {}x{}",
                height, width, row0, col0, self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in 0..height {
            let start = self.idx(row0 + r, col0, 0);
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Raster::from_data(height, width, self.channels, data)
    }

    /// Writes `patch` into `self` at `(row0, col0)`.
    pub fn blit(&mut self, patch: &Raster<T>, row0: usize, col0: usize) -> Result<()> {
        if patch.channels != self.channels
            || row0 + patch.height > self.height
            || col0 + patch.width > self.width
        {
            return Err(Error::InvalidGeometry(format!(
                "blit {}x{}x{} at ({},{}) into {}x{}x{}",
                patch.height,
                patch.width,
                patch.channels,
                row0,
                col0,
                self.height,
                self.width,
                self.channels
            )));
        }
        for r in 0..patch.height {
            let src = patch.idx(r, 0, 0);
            let dst = self.idx(row0 + r, col0, 0);
            let n = patch.width * self.channels;
            self.data[dst..dst + n].copy_from_slice(&patch.data[src..src + n]);
        }
        Ok(())
    }

    pub fn map<U: Copy, F: FnMut(T) -> U>(&self, mut f: F) -> Raster<U> {
        Raster {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Raster<u8> {
    /// Translates by (dr, dc) pixels with replicate-edge fill.
    pub fn translate(&self, dr: i64, dc: i64) -> Raster<u8> {
        let mut out = Raster::zeros(self.height, self.width, self.channels);
        for r in 0..self.height {
            let sr = (r as i64 - dr).clamp(0, self.height as i64 - 1) as usize;
            for c in 0..self.width {
                let sc = (c as i64 - dc).clamp(0, self.width as i64 - 1) as usize;
                for ch in 0..self.channels {
                    out.set(r, c, ch, self.get(sr, sc, ch));
                }
            }
        }
        out
    }
}
