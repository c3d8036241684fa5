use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// 2D convolution over a `channels × height × width` input stored
/// channel-major, with square kernels and zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_height: usize,
    pub in_width: usize,
    /// `[out][in][kh][kw]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_height: usize,
        in_width: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::InvalidArgument("conv dimensions must be positive".into()));
        }
        if in_height + 2 * padding < kernel || in_width + 2 * padding < kernel {
            return Err(Error::shape("Conv2d::new", "kernel larger than padded input"));
        }
        let expected = out_channels * in_channels * kernel * kernel;
        if weight.len() != expected || bias.len() != out_channels {
            return Err(Error::shape(
                "Conv2d::new",
                format!(
                    "weight needs {expected} and bias {out_channels} entries, got {} and {}",
                    weight.len(),
                    bias.len()
                ),
            ));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite conv parameter".into()));
        }
        Ok(Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            in_height,
            in_width,
            weight,
            bias,
        })
    }

    pub fn out_height(&self) -> usize {
        (self.in_height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    /// Calls `f(out_index, in_index, weight_index)` for every kernel tap that
    /// lands inside the (unpadded) input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        for o in 0..self.out_channels {
            for y in 0..oh {
                for x in 0..ow {
                    let out_idx = (o * oh + y) * ow + x;
                    for c in 0..self.in_channels {
                        for ky in 0..k {
                            let iy = (y * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= self.in_height as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (x * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= self.in_width as isize {
                                    continue;
                                }
                                let in_idx =
                                    (c * self.in_height + iy as usize) * self.in_width + ix as usize;
                                let w_idx = ((o * self.in_channels + c) * k + ky) * k + kx;
                                f(out_idx, in_idx, w_idx);
                            }
                        }
                    }
                }
            }
        }
    }

    /// `K x` with the given kernel values (no bias).
    pub fn apply_kernel(&self, kernel: &[f64], input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_len()];
        self.for_each_tap(|o, i, w| out[o] += kernel[w] * input[i]);
        out
    }

    /// `Kᵀ g` with the given kernel values.
    pub fn apply_kernel_transpose(&self, kernel: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.in_len()];
        self.for_each_tap(|o, i, w| out[i] += kernel[w] * grad_out[o]);
        out
    }

    /// Adds `∂(gᵀ K x)/∂K` into `acc`.
    pub fn accumulate_kernel_grad(&self, grad_out: &[f64], input: &[f64], acc: &mut [f64]) {
        self.for_each_tap(|o, i, w| acc[w] += grad_out[o] * input[i]);
    }

    /// The convolution as an explicit `out_len × in_len` matrix.
    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.out_len(), self.in_len());
        self.for_each_tap(|o, i, w| m[(o, i)] += self.weight[w]);
        m
    }

    /// Bias broadcast over every output position.
    pub fn bias_vector(&self) -> Vec<f64> {
        let plane = self.out_height() * self.out_width();
        self.bias.iter().flat_map(|&b| std::iter::repeat_n(b, plane)).collect()
    }
}
