//! Convolution and dense layers with hand-written reverse-mode passes.
//!
//! Activations are channel-major (`C x H x W`). Convolutions go through an
//! im2col buffer so the forward and both backward products are plain
//! row-by-row loops over contiguous memory.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type a network can be instantiated with.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("finite value")
}

/// Output extent of a valid (unpadded) convolution: `floor((n - k) / s) + 1`.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if input < kernel || stride == 0 {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    /// `[out][in][kh][kw]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel_h: usize, kernel_w: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            weight: vec![T::zero(); out_channels * in_channels * kernel_h * kernel_w],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn output_shape(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((conv_output_len(h, self.kernel_h, self.stride)?, conv_output_len(w, self.kernel_w, self.stride)?))
    }

    /// Fills `col` (`patch_len x oh*ow`) and `out` (`out_channels x oh*ow`).
    /// No activation is applied.
    pub fn forward(&self, input: &[T], h: usize, w: usize, col: &mut Vec<T>, out: &mut Vec<T>) {
        let (oh, ow) = self.output_shape(h, w).expect("input smaller than kernel");
        debug_assert_eq!(input.len(), self.in_channels * h * w);
        let positions = oh * ow;
        col.clear();
        col.resize(self.patch_len() * positions, T::zero());
        let mut row = 0;
        for c in 0..self.in_channels {
            let plane = &input[c * h * w..(c + 1) * h * w];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let dst = &mut col[row * positions..(row + 1) * positions];
                    for oy in 0..oh {
                        let src = &plane[(oy * self.stride + ki) * w..];
                        let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            *d = src[ox * self.stride + kj];
                        }
                    }
                    row += 1;
                }
            }
        }

        out.clear();
        out.resize(self.out_channels * positions, T::zero());
        let k_len = self.patch_len();
        for o in 0..self.out_channels {
            let out_row = &mut out[o * positions..(o + 1) * positions];
            out_row.iter_mut().for_each(|v| *v = self.bias[o]);
            let wrow = &self.weight[o * k_len..(o + 1) * k_len];
            for (k, &wk) in wrow.iter().enumerate() {
                let col_row = &col[k * positions..(k + 1) * positions];
                for (y, &x) in out_row.iter_mut().zip(col_row) {
                    *y = *y + wk * x;
                }
            }
        }
    }

    /// Accumulates parameter gradients and, when `grad_input` is given, writes
    /// (overwrites) the gradient with respect to the layer input.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        col: &[T],
        h: usize,
        w: usize,
        grad_out: &[T],
        grad_weight: &mut [T],
        grad_bias: &mut [T],
        grad_input: Option<&mut [T]>,
    ) {
        let (oh, ow) = self.output_shape(h, w).expect("input smaller than kernel");
        let positions = oh * ow;
        let k_len = self.patch_len();
        for o in 0..self.out_channels {
            let g = &grad_out[o * positions..(o + 1) * positions];
            grad_bias[o] = grad_bias[o] + g.iter().copied().sum::<T>();
            let gw = &mut grad_weight[o * k_len..(o + 1) * k_len];
            for (k, gwk) in gw.iter_mut().enumerate() {
                let col_row = &col[k * positions..(k + 1) * positions];
                let dot: T = col_row.iter().zip(g).map(|(&a, &b)| a * b).sum();
                *gwk = *gwk + dot;
            }
        }

        let Some(grad_input) = grad_input else { return };
        let mut dcol = vec![T::zero(); k_len * positions];
        for o in 0..self.out_channels {
            let g = &grad_out[o * positions..(o + 1) * positions];
            let wrow = &self.weight[o * k_len..(o + 1) * k_len];
            for (k, &wk) in wrow.iter().enumerate() {
                let drow = &mut dcol[k * positions..(k + 1) * positions];
                for (d, &gv) in drow.iter_mut().zip(g) {
                    *d = *d + wk * gv;
                }
            }
        }
        grad_input.iter_mut().for_each(|v| *v = T::zero());
        let mut row = 0;
        for c in 0..self.in_channels {
            let plane = &mut grad_input[c * h * w..(c + 1) * h * w];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let src = &dcol[row * positions..(row + 1) * positions];
                    for oy in 0..oh {
                        let base = (oy * self.stride + ki) * w + kj;
                        for ox in 0..ow {
                            let idx = base + ox * self.stride;
                            plane[idx] = plane[idx] + src[oy * ow + ox];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    pub fn forward(&self, input: &[T], out: &mut Vec<T>) {
        debug_assert_eq!(input.len(), self.inputs);
        out.clear();
        out.extend((0..self.outputs).map(|o| {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            self.bias[o] + row.iter().zip(input).map(|(&a, &b)| a * b).sum::<T>()
        }));
    }

    pub fn backward(
        &self,
        input: &[T],
        grad_out: &[T],
        grad_weight: &mut [T],
        grad_bias: &mut [T],
        grad_input: Option<&mut [T]>,
    ) {
        for (o, &g) in grad_out.iter().enumerate() {
            grad_bias[o] = grad_bias[o] + g;
            if g == T::zero() {
                continue;
            }
            let gw = &mut grad_weight[o * self.inputs..(o + 1) * self.inputs];
            for (w, &x) in gw.iter_mut().zip(input) {
                *w = *w + g * x;
            }
        }
        if let Some(gi) = grad_input {
            gi.iter_mut().for_each(|v| *v = T::zero());
            for (o, &g) in grad_out.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                for (d, &w) in gi.iter_mut().zip(row) {
                    *d = *d + w * g;
                }
            }
        }
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the post-activation value is not positive.
pub fn relu_backward_inplace<T: Scalar>(activated: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, independent of the im2col path.
    fn conv_direct(layer: &Conv2d<f64>, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = layer.output_shape(h, w).unwrap();
        let mut out = vec![0.0; layer.out_channels * oh * ow];
        for o in 0..layer.out_channels {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = layer.bias[o];
                    for c in 0..layer.in_channels {
                        for i in 0..layer.kernel_h {
                            for j in 0..layer.kernel_w {
                                let wv = layer.weight
                                    [((o * layer.in_channels + c) * layer.kernel_h + i) * layer.kernel_w + j];
                                acc += wv * input[(c * h + y * layer.stride + i) * w + x * layer.stride + j];
                            }
                        }
                    }
                    out[(o * oh + y) * ow + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn output_len_formula() {
        assert_eq!(conv_output_len(41, 8, 4), Some(9));
        assert_eq!(conv_output_len(82, 8, 4), Some(19));
        assert_eq!(conv_output_len(9, 4, 2), Some(3));
        assert_eq!(conv_output_len(19, 4, 2), Some(8));
        assert_eq!(conv_output_len(3, 3, 1), Some(1));
        assert_eq!(conv_output_len(8, 3, 1), Some(6));
        assert_eq!(conv_output_len(7, 8, 4), None);
    }

    #[test]
    fn im2col_forward_matches_direct() {
        let mut layer = Conv2d::<f64>::zeros(2, 3, 3, 2, 2);
        for (i, v) in layer.weight.iter_mut().enumerate() {
            *v = ((i * 7 % 11) as f64 - 5.0) / 10.0;
        }
        layer.bias = vec![0.1, -0.2, 0.3];
        let (h, w) = (7, 8);
        let input: Vec<f64> = (0..2 * h * w).map(|i| ((i * 13 % 17) as f64) / 17.0).collect();
        let (mut col, mut out) = (Vec::new(), Vec::new());
        layer.forward(&input, h, w, &mut col, &mut out);
        let expected = conv_direct(&layer, &input, h, w);
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_backward_input_gradient_is_transpose() {
        let mut d = Dense::<f64>::zeros(3, 2);
        d.weight = vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
        let mut gi = vec![0.0; 3];
        let (mut gw, mut gb) = (vec![0.0; 6], vec![0.0; 2]);
        d.backward(&[1.0, 1.0, 1.0], &[1.0, 2.0], &mut gw, &mut gb, Some(&mut gi));
        assert_eq!(gi, vec![-1.0, 3.0, 3.0]);
        assert_eq!(gb, vec![1.0, 2.0]);
        assert_eq!(gw, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }
}
