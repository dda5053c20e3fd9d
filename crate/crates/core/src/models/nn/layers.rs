use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{gemm, Mat, Param, Tensor};

/// Upper bound on the im2col buffer, in floats. Large images are processed in row bands.
const MAX_COL_FLOATS: usize = 1 << 22;

fn he_normal(rng: &mut impl Rng, len: usize, fan_in: usize) -> Vec<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..len).map(|_| dist.sample(rng) as f32).collect()
}

/// Fills `cols` (`cin*9` rows of `(r1-r0)*w`) with the 3x3 zero-padded neighborhoods of
/// rows `r0..r1`.
fn im2col(x: &[f32], cin: usize, h: usize, w: usize, r0: usize, r1: usize, cols: &mut [f32]) {
    let l = (r1 - r0) * w;
    let hw = h * w;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let krow = ci * 9 + ky * 3 + kx;
                let dst_rows = &mut cols[krow * l..(krow + 1) * l];
                for r in r0..r1 {
                    let dst = &mut dst_rows[(r - r0) * w..(r - r0 + 1) * w];
                    let sr = r as isize + ky as isize - 1;
                    if sr < 0 || sr >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sr as usize * w..(sr as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back into `dx`.
fn col2im(cols: &[f32], cin: usize, h: usize, w: usize, r0: usize, r1: usize, dx: &mut [f32]) {
    let l = (r1 - r0) * w;
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let krow = ci * 9 + ky * 3 + kx;
                let src_rows = &cols[krow * l..(krow + 1) * l];
                for r in r0..r1 {
                    let sr = r as isize + ky as isize - 1;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let src = &src_rows[(r - r0) * w..(r - r0 + 1) * w];
                    let dst = &mut plane[sr as usize * w..(sr as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
    /// `cout x (cin * 9)`, row-major.
    pub weight: Param,
    pub bias: Option<Param>,
    col_budget: usize,
    input: Option<Tensor>,
}

impl Conv3x3 {
    pub fn new(cin: usize, cout: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Conv3x3 {
            cin,
            cout,
            weight: Param::new(he_normal(rng, cout * cin * 9, cin * 9)),
            bias: bias.then(|| Param::new(vec![0.0; cout])),
            col_budget: MAX_COL_FLOATS,
            input: None,
        }
    }

    fn band_rows(&self, h: usize, w: usize) -> usize {
        (self.col_budget / (self.cin * 9 * w)).clamp(1, h)
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let k = self.cin * 9;
        let band = self.band_rows(h, w);
        let mut cols = vec![0.0f32; k * band * w];
        let mut y = Tensor::zeros(x.n, self.cout, h, w);
        for i in 0..x.n {
            let xs = x.sample(i);
            let ys = y.sample_mut(i);
            let mut r0 = 0;
            while r0 < h {
                let r1 = (r0 + band).min(h);
                let l = (r1 - r0) * w;
                im2col(xs, self.cin, h, w, r0, r1, &mut cols[..k * l]);
                gemm(
                    Mat::new(&self.weight.value, self.cout, k),
                    Mat::new(&cols[..k * l], k, l),
                    0.0,
                    &mut ys[r0 * w..],
                    hw,
                );
                r0 = r1;
            }
            if let Some(b) = &self.bias {
                for (co, plane) in ys.chunks_mut(hw).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b.value[co]);
                }
            }
        }
        if train {
            self.input = Some(x.clone());
        }
        y
    }

    /// Accumulates parameter gradients; returns the input gradient when `need_dx`.
    pub fn backward(&mut self, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
        let x = self.input.take().expect("Conv3x3::backward without a training forward");
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let k = self.cin * 9;
        let band = self.band_rows(h, w);
        let mut cols = vec![0.0f32; k * band * w];
        let mut dcols = if need_dx { vec![0.0f32; k * band * w] } else { Vec::new() };
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, h, w));
        for i in 0..x.n {
            let xs = x.sample(i);
            let dys = dy.sample(i);
            if let Some(b) = &mut self.bias {
                for (co, plane) in dys.chunks(hw).enumerate() {
                    b.grad[co] += plane.iter().sum::<f32>();
                }
            }
            let mut r0 = 0;
            while r0 < h {
                let r1 = (r0 + band).min(h);
                let l = (r1 - r0) * w;
                im2col(xs, self.cin, h, w, r0, r1, &mut cols[..k * l]);
                let dy_band = Mat::strided(&dys[r0 * w..], self.cout, l, hw);
                gemm(dy_band, Mat::new(&cols[..k * l], k, l).t(), 1.0, &mut self.weight.grad, k);
                if let Some(dx) = dx.as_mut() {
                    gemm(
                        Mat::new(&self.weight.value, self.cout, k).t(),
                        dy_band,
                        0.0,
                        &mut dcols[..k * l],
                        l,
                    );
                    col2im(&dcols[..k * l], self.cin, h, w, r0, r1, dx.sample_mut(i));
                }
                r0 = r1;
            }
        }
        dx
    }
}

/// Per-channel batch normalization with running statistics for inference.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub c: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        BatchNorm2d {
            c,
            gamma: Param::new(vec![1.0; c]),
            beta: Param::new(vec![0.0; c]),
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c, self.c, "batchnorm channels");
        let hw = x.plane();
        let mut y = x.clone();
        if !train {
            for i in 0..x.n {
                for (ch, plane) in y.sample_mut(i).chunks_mut(hw).enumerate() {
                    let inv = 1.0 / (self.running_var[ch] + self.eps).sqrt();
                    let (g, b, m) = (self.gamma.value[ch], self.beta.value[ch], self.running_mean[ch]);
                    plane.iter_mut().for_each(|v| *v = g * (*v - m) * inv + b);
                }
            }
            return y;
        }
        let count = (x.n * hw) as f64;
        let mut inv_std = vec![0.0f32; self.c];
        let mut xhat = x.clone();
        for ch in 0..self.c {
            let mut sum = 0.0f64;
            for i in 0..x.n {
                sum += x.sample(i)[ch * hw..(ch + 1) * hw].iter().map(|v| *v as f64).sum::<f64>();
            }
            let mean = sum / count;
            let mut ss = 0.0f64;
            for i in 0..x.n {
                ss += x.sample(i)[ch * hw..(ch + 1) * hw]
                    .iter()
                    .map(|v| (*v as f64 - mean).powi(2))
                    .sum::<f64>();
            }
            let var = ss / count;
            let inv = 1.0 / (var + self.eps as f64).sqrt();
            inv_std[ch] = inv as f32;
            let unbiased = if count > 1.0 { ss / (count - 1.0) } else { var };
            self.running_mean[ch] =
                (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean as f32;
            self.running_var[ch] =
                (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased as f32;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for i in 0..x.n {
                let xh = &mut xhat.sample_mut(i)[ch * hw..(ch + 1) * hw];
                xh.iter_mut().for_each(|v| *v = ((*v as f64 - mean) * inv) as f32);
                let ys = &mut y.sample_mut(i)[ch * hw..(ch + 1) * hw];
                ys.iter_mut().zip(xh.iter()).for_each(|(o, h)| *o = g * h + b);
            }
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.take().expect("BatchNorm2d::backward without a training forward");
        let hw = dy.plane();
        let m = (dy.n * hw) as f64;
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        for ch in 0..self.c {
            let mut dbeta = 0.0f64;
            let mut dgamma = 0.0f64;
            for i in 0..dy.n {
                let d = &dy.sample(i)[ch * hw..(ch + 1) * hw];
                let xh = &xhat.sample(i)[ch * hw..(ch + 1) * hw];
                for (a, b) in d.iter().zip(xh) {
                    dbeta += *a as f64;
                    dgamma += *a as f64 * *b as f64;
                }
            }
            self.beta.grad[ch] += dbeta as f32;
            self.gamma.grad[ch] += dgamma as f32;
            let scale = self.gamma.value[ch] as f64 * inv_std[ch] as f64 / m;
            for i in 0..dy.n {
                let d = &dy.sample(i)[ch * hw..(ch + 1) * hw];
                let xh = &xhat.sample(i)[ch * hw..(ch + 1) * hw];
                let out = &mut dx.sample_mut(i)[ch * hw..(ch + 1) * hw];
                for ((o, a), b) in out.iter_mut().zip(d).zip(xh) {
                    *o = (scale * (m * *a as f64 - dbeta - *b as f64 * dgamma)) as f32;
                }
            }
        }
        dx
    }
}

/// 2x2 max pooling with stride 2.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2x2 {
    argmax: Option<(Vec<u8>, usize, usize)>,
}

impl MaxPool2x2 {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert!(x.h % 2 == 0 && x.w % 2 == 0, "max pool needs even sides");
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut y = Tensor::zeros(x.n, x.c, oh, ow);
        let mut arg = if train { vec![0u8; y.data.len()] } else { Vec::new() };
        let mut o = 0;
        for plane in x.data.chunks(x.plane()) {
            for r in 0..oh {
                for c in 0..ow {
                    let base = 2 * r * x.w + 2 * c;
                    let cand = [plane[base], plane[base + 1], plane[base + x.w], plane[base + x.w + 1]];
                    let mut best = 0;
                    for k in 1..4 {
                        if cand[k] > cand[best] {
                            best = k;
                        }
                    }
                    y.data[o] = cand[best];
                    if train {
                        arg[o] = best as u8;
                    }
                    o += 1;
                }
            }
        }
        if train {
            self.argmax = Some((arg, x.h, x.w));
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (arg, h, w) = self.argmax.take().expect("MaxPool2x2::backward without a training forward");
        let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
        let (oh, ow) = (dy.h, dy.w);
        for (p, plane) in dx.data.chunks_mut(h * w).enumerate() {
            for r in 0..oh {
                for c in 0..ow {
                    let o = p * oh * ow + r * ow + c;
                    let k = arg[o] as usize;
                    plane[(2 * r + k / 2) * w + 2 * c + k % 2] += dy.data[o];
                }
            }
        }
        dx
    }
}

/// 2x2 transposed convolution with stride 2 (doubles the spatial size).
#[derive(Debug, Clone)]
pub struct ConvTranspose2x2 {
    pub cin: usize,
    pub cout: usize,
    /// `(cout * 4) x cin`: row `co * 4 + a * 2 + b` maps to output offset (a, b).
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl ConvTranspose2x2 {
    pub fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        ConvTranspose2x2 {
            cin,
            cout,
            weight: Param::new(he_normal(rng, cout * 4 * cin, cin)),
            bias: Param::new(vec![0.0; cout]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c, self.cin, "transposed conv input channels");
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let mut y = Tensor::zeros(x.n, self.cout, 2 * h, 2 * w);
        let mut m = vec![0.0f32; self.cout * 4 * hw];
        for i in 0..x.n {
            gemm(
                Mat::new(&self.weight.value, self.cout * 4, self.cin),
                Mat::new(x.sample(i), self.cin, hw),
                0.0,
                &mut m,
                hw,
            );
            let ys = y.sample_mut(i);
            for co in 0..self.cout {
                let b = self.bias.value[co];
                let out = &mut ys[co * 4 * hw..(co + 1) * 4 * hw];
                for k in 0..4 {
                    let (a, bb) = (k / 2, k % 2);
                    let src = &m[(co * 4 + k) * hw..(co * 4 + k + 1) * hw];
                    for r in 0..h {
                        for c in 0..w {
                            out[(2 * r + a) * 2 * w + 2 * c + bb] = src[r * w + c] + b;
                        }
                    }
                }
            }
        }
        if train {
            self.input = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("ConvTranspose2x2::backward without a training forward");
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let mut dm = vec![0.0f32; self.cout * 4 * hw];
        let mut dx = Tensor::zeros(x.n, x.c, h, w);
        for i in 0..x.n {
            let dys = dy.sample(i);
            for co in 0..self.cout {
                let g = &dys[co * 4 * hw..(co + 1) * 4 * hw];
                self.bias.grad[co] += g.iter().sum::<f32>();
                for k in 0..4 {
                    let (a, bb) = (k / 2, k % 2);
                    let dst = &mut dm[(co * 4 + k) * hw..(co * 4 + k + 1) * hw];
                    for r in 0..h {
                        for c in 0..w {
                            dst[r * w + c] = g[(2 * r + a) * 2 * w + 2 * c + bb];
                        }
                    }
                }
            }
            gemm(
                Mat::new(&dm, self.cout * 4, hw),
                Mat::new(x.sample(i), self.cin, hw).t(),
                1.0,
                &mut self.weight.grad,
                self.cin,
            );
            gemm(
                Mat::new(&self.weight.value, self.cout * 4, self.cin).t(),
                Mat::new(&dm, self.cout * 4, hw),
                0.0,
                dx.sample_mut(i),
                hw,
            );
        }
        dx
    }
}

/// Pointwise (1x1) convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv1x1 {
    pub cin: usize,
    pub cout: usize,
    /// `cout x cin`.
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Conv1x1 {
    pub fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let std = (1.0 / cin as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("positive std");
        Conv1x1 {
            cin,
            cout,
            weight: Param::new((0..cin * cout).map(|_| dist.sample(rng) as f32).collect()),
            bias: Param::new(vec![0.0; cout]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c, self.cin, "1x1 conv input channels");
        let hw = x.plane();
        let mut y = Tensor::zeros(x.n, self.cout, x.h, x.w);
        for i in 0..x.n {
            let ys = y.sample_mut(i);
            gemm(
                Mat::new(&self.weight.value, self.cout, self.cin),
                Mat::new(x.sample(i), self.cin, hw),
                0.0,
                ys,
                hw,
            );
            for (co, plane) in ys.chunks_mut(hw).enumerate() {
                plane.iter_mut().for_each(|v| *v += self.bias.value[co]);
            }
        }
        if train {
            self.input = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("Conv1x1::backward without a training forward");
        let hw = x.plane();
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        for i in 0..x.n {
            let dys = dy.sample(i);
            for (co, plane) in dys.chunks(hw).enumerate() {
                self.bias.grad[co] += plane.iter().sum::<f32>();
            }
            gemm(
                Mat::new(dys, self.cout, hw),
                Mat::new(x.sample(i), self.cin, hw).t(),
                1.0,
                &mut self.weight.grad,
                self.cin,
            );
            gemm(
                Mat::new(&self.weight.value, self.cout, self.cin).t(),
                Mat::new(dys, self.cout, hw),
                0.0,
                dx.sample_mut(i),
                hw,
            );
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Direct 3x3 convolution used as an oracle for the im2col path.
    fn direct_conv(x: &Tensor, wgt: &[f32], cout: usize) -> Tensor {
        let mut y = Tensor::zeros(x.n, cout, x.h, x.w);
        for i in 0..x.n {
            for co in 0..cout {
                for r in 0..x.h as isize {
                    for c in 0..x.w as isize {
                        let mut acc = 0.0f64;
                        for ci in 0..x.c {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let (sr, sc) = (r + ky - 1, c + kx - 1);
                                    if sr < 0 || sc < 0 || sr >= x.h as isize || sc >= x.w as isize {
                                        continue;
                                    }
                                    let xv = x.sample(i)[ci * x.plane() + sr as usize * x.w + sc as usize];
                                    acc += xv as f64 * wgt[co * x.c * 9 + ci * 9 + (ky * 3 + kx) as usize] as f64;
                                }
                            }
                        }
                        y.sample_mut(i)[co * x.plane() + r as usize * x.w + c as usize] = acc as f32;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv3x3::new(3, 4, false, &mut rng);
        let x = random_tensor(&mut rng, 2, 3, 5, 6);
        let y = conv.forward(&x, false);
        let expect = direct_conv(&x, &conv.weight.value, 4);
        for (a, b) in y.data.iter().zip(&expect.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    /// Finite-difference check of `sum(out * probe)` for a layer closure.
    fn check_input_grad(
        mut fwd: impl FnMut(&Tensor) -> Tensor,
        analytic: &Tensor,
        x: &Tensor,
        probe: &Tensor,
    ) {
        let f = |t: &Tensor, fwd: &mut dyn FnMut(&Tensor) -> Tensor| -> f64 {
            fwd(t).data.iter().zip(&probe.data).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let eps = 1e-2f32;
        for idx in (0..x.data.len()).step_by(7) {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let fd = (f(&xp, &mut fwd) - f(&xm, &mut fwd)) / (2.0 * eps as f64);
            let an = analytic.data[idx] as f64;
            assert!((fd - an).abs() < 2e-2 * (1.0 + an.abs()), "idx {idx}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv3x3::new(2, 3, true, &mut rng);
        let x = random_tensor(&mut rng, 2, 2, 4, 5);
        let y = conv.forward(&x, true);
        let probe = random_tensor(&mut rng, y.n, y.c, y.h, y.w);
        let dx = conv.backward(&probe, true).unwrap();
        let mut c2 = conv.clone();
        check_input_grad(|t| c2.forward(t, false), &dx, &x, &probe);

        // Weight gradient of sum(out * probe) at one entry.
        let k = 5;
        let mut cp = conv.clone();
        cp.weight.value[k] += 1e-2;
        let mut cm = conv.clone();
        cm.weight.value[k] -= 1e-2;
        let s = |c: &mut Conv3x3| -> f64 {
            c.forward(&x, false).data.iter().zip(&probe.data).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let fd = (s(&mut cp) - s(&mut cm)) / 2e-2;
        assert!((fd - conv.weight.grad[k] as f64).abs() < 1e-2 * (1.0 + fd.abs()));
    }

    #[test]
    fn conv_banding_matches_single_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv3x3::new(2, 2, false, &mut rng);
        let x = random_tensor(&mut rng, 1, 2, 7, 4);
        conv.col_budget = 2 * 9 * 4 * 2;
        assert_eq!(conv.band_rows(7, 4), 2);
        let full = conv.forward(&x, false);
        let expect = direct_conv(&x, &conv.weight.value, 2);
        for (a, b) in full.data.iter().zip(&expect.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bn = BatchNorm2d::new(2);
        bn.gamma.value = vec![1.5, 0.7];
        bn.beta.value = vec![0.1, -0.2];
        let x = random_tensor(&mut rng, 3, 2, 3, 3);
        let y = bn.forward(&x, true);
        let probe = random_tensor(&mut rng, y.n, y.c, y.h, y.w);
        let dx = bn.backward(&probe);
        let mut b2 = bn.clone();
        check_input_grad(|t| b2.forward(t, true), &dx, &x, &probe);
    }

    #[test]
    fn transposed_conv_and_pool_and_1x1_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, 2, 3, 2, 3);

        let mut up = ConvTranspose2x2::new(3, 2, &mut rng);
        let y = up.forward(&x, true);
        assert_eq!((y.c, y.h, y.w), (2, 4, 6));
        let probe = random_tensor(&mut rng, y.n, y.c, y.h, y.w);
        let dx = up.backward(&probe);
        let mut u2 = up.clone();
        check_input_grad(|t| u2.forward(t, false), &dx, &x, &probe);

        let mut head = Conv1x1::new(3, 2, &mut rng);
        let y = head.forward(&x, true);
        let probe = random_tensor(&mut rng, y.n, y.c, y.h, y.w);
        let dx = head.backward(&probe);
        let mut h2 = head.clone();
        check_input_grad(|t| h2.forward(t, false), &dx, &x, &probe);

        let x = random_tensor(&mut rng, 1, 2, 4, 4);
        let mut pool = MaxPool2x2::default();
        let y = pool.forward(&x, true);
        assert_eq!((y.h, y.w), (2, 2));
        let probe = random_tensor(&mut rng, y.n, y.c, y.h, y.w);
        let dx = pool.backward(&probe);
        let total: f32 = dx.data.iter().sum();
        let expect: f32 = probe.data.iter().sum();
        assert!((total - expect).abs() < 1e-5);
        assert_eq!(dx.data.iter().filter(|v| **v != 0.0).count(), 8);
    }
}
