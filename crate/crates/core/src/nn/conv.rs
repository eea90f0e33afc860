use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding; output spatial dims equal input dims (odd kernels only).
    Same,
    /// No padding; each axis shrinks by `kernel − 1`.
    Valid,
}

/// Bias-free multi-channel cross-correlation with weights `(out, in, k0, k1, k2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub padding: Padding,
    pub weights: Vec<f64>,
}

impl ConvLayer {
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 3], padding: Padding) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel.contains(&0) {
            return Err(Error::invalid("convolution extents must be positive"));
        }
        if padding == Padding::Same && kernel.iter().any(|k| k % 2 == 0) {
            return Err(Error::invalid(format!("same padding needs odd kernels, got {kernel:?}")));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            padding,
            weights: vec![0.0; out_channels * in_channels * kernel.iter().product::<usize>()],
        })
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_volume()
    }

    /// Uniform in `±sqrt(1 / fan_in)`.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        let b = (1.0 / self.fan_in() as f64).sqrt();
        let dist = Uniform::new_inclusive(-b, b);
        for w in &mut self.weights {
            *w = dist.sample(rng);
        }
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, k: [usize; 3]) -> f64 {
        let kv = (k[0] * self.kernel[1] + k[1]) * self.kernel[2] + k[2];
        self.weights[(o * self.in_channels + i) * self.kernel_volume() + kv]
    }

    fn pad_amount(&self) -> [usize; 3] {
        match self.padding {
            Padding::Same => self.kernel.map(|k| (k - 1) / 2),
            Padding::Valid => [0; 3],
        }
    }

    pub fn output_spatial(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let p = self.pad_amount();
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * p[a];
            if padded < self.kernel[a] {
                return Err(Error::shape(format!(
                    "input {input:?} smaller than kernel {:?}",
                    self.kernel
                )));
            }
            out[a] = padded - self.kernel[a] + 1;
        }
        Ok(out)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "layer expects {} channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        self.output_spatial(x.spatial())?;
        let p = self.pad_amount();
        if p == [0; 3] {
            Ok(self.valid_forward(x))
        } else {
            Ok(self.valid_forward(&x.pad(p, p)))
        }
    }

    /// Accumulates the weight gradient into `dw` and returns the input gradient.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, dw: &mut [f64]) -> Tensor {
        assert_eq!(dw.len(), self.weights.len());
        let p = self.pad_amount();
        if p == [0; 3] {
            self.valid_backward(x, dy, dw)
        } else {
            let xp = x.pad(p, p);
            self.valid_backward(&xp, dy, dw).crop(p, x.spatial())
        }
    }

    fn geometry(&self, d: [usize; 3]) -> Geometry {
        let k = self.kernel;
        let plane = d[0] * d[1] * d[2];
        let max_off = (k[0] - 1) * d[1] * d[2] + (k[1] - 1) * d[2] + (k[2] - 1);
        let mut offsets = Vec::with_capacity(self.kernel_volume());
        for a in 0..k[0] {
            for b in 0..k[1] {
                for c in 0..k[2] {
                    offsets.push(a * d[1] * d[2] + b * d[2] + c);
                }
            }
        }
        Geometry {
            plane,
            span: plane - max_off,
            offsets,
            out: [d[0] - k[0] + 1, d[1] - k[1] + 1, d[2] - k[2] + 1],
            dims: d,
        }
    }

    /// Each kernel tap is one GEMM over the flattened input, shifted by the
    /// tap offset; outputs that wrap across rows are computed and discarded.
    fn valid_forward(&self, x: &Tensor) -> Tensor {
        let g = self.geometry(x.spatial());
        let (cout, cin, kv) = (self.out_channels, self.in_channels, self.kernel_volume());
        let mut full = vec![0.0; cout * g.span];
        for (kk, &off) in g.offsets.iter().enumerate() {
            // SAFETY: reads of x stay below (cin - 1)·plane + off + span ≤ cin·plane;
            // weight reads stay inside (cout, cin, kv); C is cout x span.
            unsafe {
                matrixmultiply::dgemm(
                    cout,
                    cin,
                    g.span,
                    1.0,
                    self.weights.as_ptr().add(kk),
                    (cin * kv) as isize,
                    kv as isize,
                    x.data().as_ptr().add(off),
                    g.plane as isize,
                    1,
                    1.0,
                    full.as_mut_ptr(),
                    g.span as isize,
                    1,
                );
            }
        }
        let mut out = Tensor::zeros(cout, g.out);
        for o in 0..cout {
            for i in 0..g.out[0] {
                for j in 0..g.out[1] {
                    let src = o * g.span + (i * g.dims[1] + j) * g.dims[2];
                    let dst = out.index(o, i, j, 0);
                    out.data_mut()[dst..dst + g.out[2]].copy_from_slice(&full[src..src + g.out[2]]);
                }
            }
        }
        out
    }

    fn valid_backward(&self, x: &Tensor, dy: &Tensor, dw: &mut [f64]) -> Tensor {
        let g = self.geometry(x.spatial());
        assert_eq!(dy.spatial(), g.out, "output gradient shape");
        let (cout, cin, kv) = (self.out_channels, self.in_channels, self.kernel_volume());
        let mut full = vec![0.0; cout * g.span];
        for o in 0..cout {
            for i in 0..g.out[0] {
                for j in 0..g.out[1] {
                    let dst = o * g.span + (i * g.dims[1] + j) * g.dims[2];
                    let src = dy.index(o, i, j, 0);
                    full[dst..dst + g.out[2]].copy_from_slice(&dy.data()[src..src + g.out[2]]);
                }
            }
        }
        let mut dx = Tensor::zeros(cin, g.dims);
        for (kk, &off) in g.offsets.iter().enumerate() {
            // SAFETY: same index bounds as the forward pass; dW_k is read and
            // written through the (cout, cin) strides of tap kk, dX through
            // the shifted (cin, span) window.
            unsafe {
                matrixmultiply::dgemm(
                    cout,
                    g.span,
                    cin,
                    1.0,
                    full.as_ptr(),
                    g.span as isize,
                    1,
                    x.data().as_ptr().add(off),
                    1,
                    g.plane as isize,
                    1.0,
                    dw.as_mut_ptr().add(kk),
                    (cin * kv) as isize,
                    kv as isize,
                );
                matrixmultiply::dgemm(
                    cin,
                    cout,
                    g.span,
                    1.0,
                    self.weights.as_ptr().add(kk),
                    kv as isize,
                    (cin * kv) as isize,
                    full.as_ptr(),
                    g.span as isize,
                    1,
                    1.0,
                    dx.data_mut().as_mut_ptr().add(off),
                    g.plane as isize,
                    1,
                );
            }
        }
        dx
    }
}

struct Geometry {
    plane: usize,
    span: usize,
    offsets: Vec<usize>,
    out: [usize; 3],
    dims: [usize; 3],
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_layer(cin: usize, cout: usize, k: [usize; 3], pad: Padding, seed: u64) -> ConvLayer {
        let mut l = ConvLayer::new(cin, cout, k, pad).unwrap();
        l.init_uniform(&mut ChaCha8Rng::seed_from_u64(seed));
        l
    }

    fn random_tensor(c: usize, s: [usize; 3], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = c * s.iter().product::<usize>();
        Tensor::new(c, s, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop cross-correlation with explicit zero padding.
    fn reference(l: &ConvLayer, x: &Tensor) -> Tensor {
        let p = l.pad_amount().map(|v| v as isize);
        let out_s = l.output_spatial(x.spatial()).unwrap();
        let s = x.spatial();
        let mut y = Tensor::zeros(l.out_channels, out_s);
        for o in 0..l.out_channels {
            for i in 0..out_s[0] {
                for j in 0..out_s[1] {
                    for k in 0..out_s[2] {
                        let mut acc = 0.0;
                        for ci in 0..l.in_channels {
                            for a in 0..l.kernel[0] {
                                for b in 0..l.kernel[1] {
                                    for c in 0..l.kernel[2] {
                                        let xi = i as isize + a as isize - p[0];
                                        let xj = j as isize + b as isize - p[1];
                                        let xk = k as isize + c as isize - p[2];
                                        if xi < 0 || xj < 0 || xk < 0 {
                                            continue;
                                        }
                                        let (xi, xj, xk) = (xi as usize, xj as usize, xk as usize);
                                        if xi >= s[0] || xj >= s[1] || xk >= s[2] {
                                            continue;
                                        }
                                        acc += l.weight(o, ci, [a, b, c]) * x.data()[x.index(ci, xi, xj, xk)];
                                    }
                                }
                            }
                        }
                        let idx = y.index(o, i, j, k);
                        y.data_mut()[idx] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut l = ConvLayer::new(1, 1, [3, 3, 1], Padding::Same).unwrap();
        l.weights[4] = 1.0;
        let x = random_tensor(1, [5, 4, 1], 1);
        assert_eq!(l.forward(&x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_ones() {
        let mut l = ConvLayer::new(1, 1, [3, 3, 1], Padding::Same).unwrap();
        l.weights.iter_mut().for_each(|w| *w = 1.0);
        let x = Tensor::new(1, [5, 5, 1], vec![1.0; 25]).unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.data()[y.index(0, 2, 2, 0)], 9.0);
        assert_eq!(y.data()[y.index(0, 0, 0, 0)], 4.0);
        assert_eq!(y.data()[y.index(0, 0, 2, 0)], 6.0);
    }

    #[test]
    fn matches_reference_same_and_valid() {
        for (k, pad, s) in [
            ([3, 3, 1], Padding::Same, [6, 5, 1]),
            ([3, 3, 3], Padding::Same, [4, 5, 3]),
            ([5, 2, 1], Padding::Valid, [7, 6, 1]),
            ([3, 1, 2], Padding::Valid, [5, 4, 3]),
        ] {
            let l = random_layer(3, 2, k, pad, 7);
            let x = random_tensor(3, s, 8);
            let y = l.forward(&x).unwrap();
            let r = reference(&l, &x);
            assert_eq!(y.spatial(), r.spatial());
            for (a, b) in y.data().iter().zip(r.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// `<dy, conv(x)>` is bilinear: its gradients are exact adjoints.
    #[test]
    fn backward_is_adjoint_of_forward() {
        for (k, pad, s) in [([3, 3, 1], Padding::Same, [6, 5, 1]), ([3, 2, 1], Padding::Valid, [6, 5, 2])] {
            let l = random_layer(2, 3, k, pad, 9);
            let x = random_tensor(2, s, 10);
            let y = l.forward(&x).unwrap();
            let dy = random_tensor(3, y.spatial(), 11);
            let mut dw = vec![0.0; l.weights.len()];
            let dx = l.backward(&x, &dy, &mut dw);
            let inner: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
            let via_x: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
            let via_w: f64 = l.weights.iter().zip(&dw).map(|(a, b)| a * b).sum();
            assert!((inner - via_x).abs() < 1e-10 * inner.abs().max(1.0));
            assert!((inner - via_w).abs() < 1e-10 * inner.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_even_same_kernels_and_bad_channels() {
        assert!(ConvLayer::new(1, 1, [2, 3, 1], Padding::Same).is_err());
        let l = ConvLayer::new(2, 1, [3, 3, 1], Padding::Same).unwrap();
        assert!(l.forward(&Tensor::zeros(1, [4, 4, 1])).is_err());
        let v = ConvLayer::new(1, 1, [5, 1, 1], Padding::Valid).unwrap();
        assert!(v.forward(&Tensor::zeros(1, [4, 4, 1])).is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = random_layer(4, 3, [3, 3, 1], Padding::Same, 5);
        let b = random_layer(4, 3, [3, 3, 1], Padding::Same, 5);
        assert_eq!(a, b);
        let bound = (1.0f64 / 36.0).sqrt();
        assert!(a.weights.iter().all(|w| w.abs() <= bound));
    }
}
