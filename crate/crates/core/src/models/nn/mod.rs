//! Minimal CPU neural-network kernels: NCHW tensors, convolution through im2col + SGEMM,
//! batch normalization, pooling and an Adam optimizer. Enough to train a UNet on tiles.

mod adam;
mod layers;
mod unet;

pub use adam::Adam;
pub use layers::{BatchNorm2d, Conv1x1, Conv3x3, ConvTranspose2x2, MaxPool2x2};
pub use unet::{UNet, UNetConfig};

/// Dense `n x c x h x w` tensor of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Tensor { n, c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        (self.n, self.c, self.h, self.w) == (other.n, other.c, other.h, other.w)
    }

    /// Channel concatenation `[a, b]` per sample.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat shape");
        let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
        let (la, lb) = (a.sample_len(), b.sample_len());
        for i in 0..a.n {
            let dst = out.sample_mut(i);
            dst[..la].copy_from_slice(a.sample(i));
            dst[la..la + lb].copy_from_slice(b.sample(i));
        }
        out
    }

    /// Inverse of [`Tensor::concat_channels`]: splits off the first `c_first` channels.
    pub fn split_channels(&self, c_first: usize) -> (Tensor, Tensor) {
        let mut a = Tensor::zeros(self.n, c_first, self.h, self.w);
        let mut b = Tensor::zeros(self.n, self.c - c_first, self.h, self.w);
        let la = a.sample_len();
        for i in 0..self.n {
            let src = self.sample(i);
            a.sample_mut(i).copy_from_slice(&src[..la]);
            b.sample_mut(i).copy_from_slice(&src[la..]);
        }
        (a, b)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert!(self.same_shape(other), "add shape");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

/// A trainable parameter with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Row-major matrix operand for [`gemm`], optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    /// Row stride of the stored (untransposed) matrix.
    pub stride: usize,
    pub trans: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            stride: cols,
            trans: false,
        }
    }

    pub fn strided(data: &'a [f32], rows: usize, cols: usize, stride: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            stride,
            trans: false,
        }
    }

    pub fn t(self) -> Self {
        Mat {
            trans: !self.trans,
            ..self
        }
    }

    /// (rows, cols, row_stride, col_stride) of the logical matrix.
    fn layout(&self) -> (usize, usize, isize, isize) {
        if self.trans {
            (self.cols, self.rows, 1, self.stride as isize)
        } else {
            (self.rows, self.cols, self.stride as isize, 1)
        }
    }
}

/// `c = a * b + beta * c` where `c` is row-major `m x n` with row stride `c_stride`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32], c_stride: usize) {
    let (m, k, rsa, csa) = a.layout();
    let (kb, n, rsb, csb) = b.layout();
    assert_eq!(k, kb, "gemm inner dimension");
    if m == 0 || n == 0 {
        return;
    }
    let need = |rows: usize, cols: usize, rs: isize, cs: isize| {
        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    };
    if k > 0 {
        assert!(a.data.len() >= need(m, k, rsa, csa), "gemm a bounds");
        assert!(b.data.len() >= need(k, n, rsb, csb), "gemm b bounds");
    }
    assert!(c.len() >= (m - 1) * c_stride + n, "gemm c bounds");
    // SAFETY: all three operands were bounds-checked against their strides above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            c_stride as isize,
            1,
        );
    }
}
