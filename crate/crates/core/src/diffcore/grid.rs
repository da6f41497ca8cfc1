use crate::error::{Error, Result};

/// Dense rank-3 array (channels x height x width) of `f32`, row-major
/// within each channel. The universal value type for network activations,
/// parameters and images.
///
/// The shape is fixed at construction. A gradient buffer of identical
/// shape is allocated when the grid participates in differentiation.
#[derive(Debug, Clone)]
pub struct Grid {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Grid {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::shape(
                "Grid::new",
                format!("{}x{}x{} = {} values", c, h, w, c * h * w),
                format!("{} values", data.len()),
            ));
        }
        Ok(Grid {
            c,
            h,
            w,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Grid {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(c: usize, h: usize, w: usize, value: f32) -> Self {
        Grid {
            c,
            h,
            w,
            data: vec![value; c * h * w],
            requires_grad: false,
            grad: None,
        }
    }

    /// 1x1x1 grid holding a single scalar.
    pub fn scalar(value: f32) -> Self {
        Grid::full(1, 1, 1, value)
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// One channel's HxW plane.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.h * self.w;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, zero-initialized on first access.
    pub fn grad_mut(&mut self) -> &mut [f32] {
        self.grad.get_or_insert_with(|| vec![0.0; self.c * self.h * self.w])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Values mutable and gradient readable at once (optimizer update).
    pub fn data_and_grad(&mut self) -> (&mut [f32], Option<&[f32]>) {
        (&mut self.data, self.grad.as_deref())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.shape() == other.shape()
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.c, self.h, self.w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_element_count() {
        assert!(Grid::new(1, 2, 2, vec![0.0; 4]).is_ok());
        assert!(Grid::new(1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn grad_buffer_matches_shape() {
        let mut g = Grid::zeros(2, 3, 4);
        g.set_requires_grad(true);
        assert_eq!(g.grad_mut().len(), 24);
        g.grad_mut()[0] = 1.0;
        g.zero_grad();
        assert_eq!(g.grad().unwrap()[0], 0.0);
    }

    #[test]
    fn indexing_is_row_major_per_channel() {
        let mut g = Grid::zeros(2, 2, 3);
        g.set(1, 1, 2, 7.0);
        assert_eq!(g.data()[1 * 6 + 1 * 3 + 2], 7.0);
        assert_eq!(g.at(1, 1, 2), 7.0);
    }
}
