//! Batched layers with hand-written backpropagation.
//!
//! Activations are row-major `(batch, features)` buffers; convolutional
//! features are laid out channel-major `(c, h, w)` inside each row.

use matrixmultiply::dgemm;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// `c = a · b (+ c when accumulate)` on row-major/strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: callers pass slices covering every index reachable through the
    // given dimensions and strides; `c` is a dense m×n row-major block.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut y = vec![0.0; n * self.outputs];
        for row in y.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.bias);
        }
        // y += x · Wᵀ
        gemm(n, self.inputs, self.outputs, x, (self.inputs, 1), &self.weight, (1, self.inputs), &mut y, true);
        y
    }

    fn backward(&self, x: &[f64], dy: &[f64], n: usize, gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        // dW += dyᵀ · x
        gemm(self.outputs, n, self.inputs, dy, (1, self.outputs), x, (self.inputs, 1), gw, true);
        for row in dy.chunks_exact(self.outputs) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; n * self.inputs];
        gemm(n, self.outputs, self.inputs, dy, (self.outputs, 1), &self.weight, (self.inputs, 1), &mut dx, false);
        dx
    }
}

/// 2-D convolution, stride 1, no padding.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Conv2d {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    /// `out_c × (in_c · kernel · kernel)`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_c: usize, in_h: usize, in_w: usize, out_c: usize, kernel: usize) -> Self {
        Self {
            in_c,
            in_h,
            in_w,
            out_c,
            kernel,
            weight: vec![0.0; out_c * in_c * kernel * kernel],
            bias: vec![0.0; out_c],
        }
    }

    pub fn out_h(&self) -> usize {
        self.in_h + 1 - self.kernel
    }

    pub fn out_w(&self) -> usize {
        self.in_w + 1 - self.kernel
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let (k, oh, ow, p) = (self.kernel, self.out_h(), self.out_w(), self.positions());
        for ci in 0..self.in_c {
            let plane = &img[ci * self.in_h * self.in_w..(ci + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let src = &plane[(oy + ky) * self.in_w + kx..][..ow];
                        row[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let (k, oh, ow, p) = (self.kernel, self.out_h(), self.out_w(), self.positions());
        for ci in 0..self.in_c {
            let plane = &mut img[ci * self.in_h * self.in_w..(ci + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let dst = &mut plane[(oy + ky) * self.in_w + kx..][..ow];
                        for (d, s) in dst.iter_mut().zip(&row[oy * ow..(oy + 1) * ow]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let (in_len, p, pl) = (self.in_c * self.in_h * self.in_w, self.positions(), self.patch_len());
        let out_len = self.out_c * p;
        let mut y = vec![0.0; n * out_len];
        let mut cols = vec![0.0; pl * p];
        for (img, out) in x.chunks_exact(in_len).zip(y.chunks_exact_mut(out_len)) {
            self.im2col(img, &mut cols);
            for (o, plane) in out.chunks_exact_mut(p).enumerate() {
                plane.fill(self.bias[o]);
            }
            gemm(self.out_c, pl, p, &self.weight, (pl, 1), &cols, (p, 1), out, true);
        }
        y
    }

    fn backward(&self, x: &[f64], dy: &[f64], n: usize, gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        let (in_len, p, pl) = (self.in_c * self.in_h * self.in_w, self.positions(), self.patch_len());
        let out_len = self.out_c * p;
        let mut dx = vec![0.0; n * in_len];
        let mut cols = vec![0.0; pl * p];
        let mut dcols = vec![0.0; pl * p];
        for ((img, dimg), dout) in x.chunks_exact(in_len).zip(dx.chunks_exact_mut(in_len)).zip(dy.chunks_exact(out_len)) {
            self.im2col(img, &mut cols);
            // dW += dY · colsᵀ
            gemm(self.out_c, p, pl, dout, (p, 1), &cols, (1, p), gw, true);
            for (g, plane) in gb.iter_mut().zip(dout.chunks_exact(p)) {
                *g += plane.iter().sum::<f64>();
            }
            // dcols = Wᵀ · dY
            gemm(pl, self.out_c, p, &self.weight, (1, pl), dout, (p, 1), &mut dcols, false);
            self.col2im(&dcols, dimg);
        }
        dx
    }
}

/// 2×2 max-pool with stride 2; odd trailing rows/columns are dropped.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MaxPool2 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl MaxPool2 {
    pub fn out_h(&self) -> usize {
        self.h / 2
    }

    pub fn out_w(&self) -> usize {
        self.w / 2
    }

    /// Index (within the input plane) of the winning element of each window;
    /// ties go to the first element in row-major window order.
    fn winner(&self, plane: &[f64], oy: usize, ox: usize) -> usize {
        let mut best = (2 * oy) * self.w + 2 * ox;
        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
            let i = (2 * oy + dy) * self.w + 2 * ox + dx;
            if plane[i] > plane[best] {
                best = i;
            }
        }
        best
    }

    fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let mut y = Vec::with_capacity(n * self.c * oh * ow);
        for plane in x.chunks_exact(self.h * self.w) {
            for oy in 0..oh {
                for ox in 0..ow {
                    y.push(plane[self.winner(plane, oy, ox)]);
                }
            }
        }
        y
    }

    fn backward(&self, x: &[f64], dy: &[f64], n: usize) -> Vec<f64> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let mut dx = vec![0.0; n * self.c * self.h * self.w];
        for ((plane, dplane), dout) in
            x.chunks_exact(self.h * self.w).zip(dx.chunks_exact_mut(self.h * self.w)).zip(dy.chunks_exact(oh * ow))
        {
            for oy in 0..oh {
                for ox in 0..ow {
                    dplane[self.winner(plane, oy, ox)] += dout[oy * ow + ox];
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Dense(Dense),
    Conv(Conv2d),
    Relu,
    MaxPool(MaxPool2),
}

impl Layer {
    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        match self {
            Layer::Dense(d) => d.forward(x, n),
            Layer::Conv(c) => c.forward(x, n),
            Layer::Relu => x.iter().map(|v| v.max(0.0)).collect(),
            Layer::MaxPool(p) => p.forward(x, n),
        }
    }

    /// Accumulates parameter gradients into `grads` (weight then bias, for
    /// parametric layers) and returns the gradient w.r.t. the layer input.
    pub fn backward(&self, x: &[f64], dy: &[f64], n: usize, grads: &mut [Vec<f64>]) -> Vec<f64> {
        match self {
            Layer::Dense(d) => {
                let (gw, gb) = grads.split_at_mut(1);
                d.backward(x, dy, n, &mut gw[0], &mut gb[0])
            }
            Layer::Conv(c) => {
                let (gw, gb) = grads.split_at_mut(1);
                c.backward(x, dy, n, &mut gw[0], &mut gb[0])
            }
            Layer::Relu => x.iter().zip(dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect(),
            Layer::MaxPool(p) => p.backward(x, dy, n),
        }
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }

    /// He-normal weights (fan-in scaled), zero biases.
    pub fn init<R: Rng>(&mut self, rng: &mut R, gain: f64) {
        let fan_in = match self {
            Layer::Dense(d) => d.inputs,
            Layer::Conv(c) => c.patch_len(),
            _ => return,
        };
        let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
        for (i, p) in self.params_mut().into_iter().enumerate() {
            if i == 0 {
                p.iter_mut().for_each(|w| *w = normal.sample(rng));
            } else {
                p.fill(0.0);
            }
        }
    }
}
