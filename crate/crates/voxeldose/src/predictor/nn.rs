//! Minimal f64 neural-network primitives: strided 3x3 convolutions, dense
//! layers, leaky ReLU, average pooling. Forward passes cache nothing; the
//! caller keeps the activations it needs and drives the backward passes with
//! externally owned gradient buffers so batches can run in parallel.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Channel-major dense 3D activation tensor (c, h, w).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor3 {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn plane(&self, ch: usize) -> &[f64] {
        let hw = self.h * self.w;
        &self.data[ch * hw..(ch + 1) * hw]
    }
}

fn he_normal(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| {
            // Box-Muller keeps the dependency surface small and is plenty
            // fast for initialization.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * std
        })
        .collect()
}

/// 3x3 convolution, stride 2, zero padding 1.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    /// [out_c][in_c][3][3]
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

pub const CONV_STRIDE: usize = 2;
pub const CONV_K: usize = 3;

pub fn conv_out_dim(input: usize) -> usize {
    // padding 1, kernel 3, stride 2
    (input + 2 - CONV_K) / CONV_STRIDE + 1
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_c * CONV_K * CONV_K;
        Conv2d {
            in_c,
            out_c,
            w: he_normal(rng, fan_in, out_c * fan_in),
            b: vec![0.0; out_c],
        }
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        debug_assert_eq!(x.c, self.in_c);
        let (oh, ow) = (conv_out_dim(x.h), conv_out_dim(x.w));
        let mut out = Tensor3::zeros(self.out_c, oh, ow);
        let hw_in = x.h * x.w;
        let hw_out = oh * ow;
        for oc in 0..self.out_c {
            let o_base = oc * hw_out;
            out.data[o_base..o_base + hw_out].fill(self.b[oc]);
            for ic in 0..self.in_c {
                let x_base = ic * hw_in;
                let w_base = (oc * self.in_c + ic) * 9;
                for ky in 0..CONV_K {
                    for kx in 0..CONV_K {
                        let wv = self.w[w_base + ky * 3 + kx];
                        let (ox_lo, ox_hi) = ox_range(kx, x.w, ow);
                        for oy in 0..oh {
                            let iy = (oy * CONV_STRIDE + ky) as isize - 1;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let xrow = x_base + iy as usize * x.w;
                            let orow = o_base + oy * ow;
                            for ox in ox_lo..ox_hi {
                                let ix = ox * CONV_STRIDE + kx - 1;
                                out.data[orow + ox] += wv * x.data[xrow + ix];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Backpropagate through the convolution: returns the input gradient and
    /// accumulates weight/bias gradients into `gw`/`gb`.
    pub fn backward(
        &self,
        x: &Tensor3,
        gy: &Tensor3,
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> Tensor3 {
        let (oh, ow) = (gy.h, gy.w);
        let hw_in = x.h * x.w;
        let hw_out = oh * ow;
        let mut gx = Tensor3::zeros(x.c, x.h, x.w);
        for oc in 0..self.out_c {
            let o_base = oc * hw_out;
            let mut gb_acc = 0.0;
            for v in &gy.data[o_base..o_base + hw_out] {
                gb_acc += v;
            }
            gb[oc] += gb_acc;
            for ic in 0..self.in_c {
                let x_base = ic * hw_in;
                let w_base = (oc * self.in_c + ic) * 9;
                for ky in 0..CONV_K {
                    for kx in 0..CONV_K {
                        let wv = self.w[w_base + ky * 3 + kx];
                        let mut gw_acc = 0.0;
                        let (ox_lo, ox_hi) = ox_range(kx, x.w, ow);
                        for oy in 0..oh {
                            let iy = (oy * CONV_STRIDE + ky) as isize - 1;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let xrow = x_base + iy as usize * x.w;
                            let orow = o_base + oy * ow;
                            for ox in ox_lo..ox_hi {
                                let ix = ox * CONV_STRIDE + kx - 1;
                                let g = gy.data[orow + ox];
                                gw_acc += g * x.data[xrow + ix];
                                gx.data[xrow + ix] += wv * g;
                            }
                        }
                        gw[w_base + ky * 3 + kx] += gw_acc;
                    }
                }
            }
        }
        gx
    }
}

#[inline]
fn ox_range(kx: usize, in_w: usize, out_w: usize) -> (usize, usize) {
    // valid ox where ix = 2*ox + kx - 1 lies in [0, in_w)
    let lo = if kx == 0 { 1 } else { 0 };
    let hi_ix = in_w as isize - 1 - (kx as isize - 1);
    if hi_ix < 0 {
        return (0, 0);
    }
    let hi = (hi_ix as usize) / CONV_STRIDE + 1;
    (lo.min(out_w), hi.min(out_w))
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_d: usize,
    pub out_d: usize,
    /// [out][in]
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn new(in_d: usize, out_d: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            in_d,
            out_d,
            w: he_normal(rng, in_d, out_d * in_d),
            b: vec![0.0; out_d],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_d);
        let mut out = self.b.clone();
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.in_d..(o + 1) * self.in_d];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            *slot += acc;
        }
        out
    }

    pub fn backward(
        &self,
        x: &[f64],
        gy: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_d];
        for (o, &g) in gy.iter().enumerate() {
            gb[o] += g;
            let row = &self.w[o * self.in_d..(o + 1) * self.in_d];
            let grow = &mut gw[o * self.in_d..(o + 1) * self.in_d];
            for i in 0..self.in_d {
                grow[i] += g * x[i];
                gx[i] += row[i] * g;
            }
        }
        gx
    }
}

pub fn leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect()
}

pub fn leaky_relu_backward(pre: &[f64], gy: &[f64], slope: f64) -> Vec<f64> {
    pre.iter()
        .zip(gy)
        .map(|(&p, &g)| if p > 0.0 { g } else { slope * g })
        .collect()
}

pub fn leaky_relu_tensor(x: &Tensor3, slope: f64) -> Tensor3 {
    Tensor3 {
        c: x.c,
        h: x.h,
        w: x.w,
        data: leaky_relu(&x.data, slope),
    }
}

pub fn leaky_relu_tensor_backward(pre: &Tensor3, gy: &Tensor3, slope: f64) -> Tensor3 {
    Tensor3 {
        c: pre.c,
        h: pre.h,
        w: pre.w,
        data: leaky_relu_backward(&pre.data, &gy.data, slope),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Average pool with square kernel = stride (the downsampling stem). Input
/// rows/cols that do not fill a whole block are dropped.
pub fn avg_pool(x: &Tensor3, k: usize) -> Tensor3 {
    let (oh, ow) = (x.h / k, x.w / k);
    let mut out = Tensor3::zeros(x.c, oh, ow);
    let inv = 1.0 / (k * k) as f64;
    for c in 0..x.c {
        let plane = x.plane(c);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..k {
                    let row = (oy * k + dy) * x.w + ox * k;
                    for dx in 0..k {
                        acc += plane[row + dx];
                    }
                }
                out.data[(c * oh + oy) * ow + ox] = acc * inv;
            }
        }
    }
    out
}

/// Global average pool to one value per channel.
pub fn global_avg_pool(x: &Tensor3) -> Vec<f64> {
    let hw = (x.h * x.w) as f64;
    (0..x.c)
        .map(|c| x.plane(c).iter().sum::<f64>() / hw)
        .collect()
}

pub fn global_avg_pool_backward(shape: (usize, usize, usize), gy: &[f64]) -> Tensor3 {
    let (c, h, w) = shape;
    let inv = 1.0 / (h * w) as f64;
    let mut out = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        let g = gy[ch] * inv;
        let hw = h * w;
        out.data[ch * hw..(ch + 1) * hw].fill(g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn conv_out_dims() {
        assert_eq!(conv_out_dim(172), 86);
        assert_eq!(conv_out_dim(5), 3);
        assert_eq!(conv_out_dim(4), 2);
    }

    #[test]
    fn conv_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::new(2, 3, &mut rng);
        let mut x = Tensor3::zeros(2, 7, 6);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let y = conv.forward(&x);
        // naive loop oracle
        for oc in 0..3 {
            for oy in 0..y.h {
                for ox in 0..y.w {
                    let mut acc = conv.b[oc];
                    for ic in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= 7 || ix >= 6 {
                                    continue;
                                }
                                acc += conv.w[((oc * 2 + ic) * 3 + ky) * 3 + kx]
                                    * x.data[(ic * 7 + iy as usize) * 6 + ix as usize];
                            }
                        }
                    }
                    let got = y.data[(oc * y.h + oy) * y.w + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(1, 2, &mut rng);
        let mut x = Tensor3::zeros(1, 5, 5);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = ((i * 7 % 11) as f64 - 5.0) * 0.1;
        }
        // scalar objective: sum of outputs squared / 2
        let loss = |c: &Conv2d, x: &Tensor3| -> f64 {
            c.forward(x).data.iter().map(|v| v * v).sum::<f64>() / 2.0
        };
        let y = conv.forward(&x);
        let gy = y.clone(); // dL/dy = y
        let mut gw = vec![0.0; conv.w.len()];
        let mut gb = vec![0.0; conv.b.len()];
        let gx = conv.backward(&x, &gy, &mut gw, &mut gb);
        let h = 1e-6;
        for i in 0..conv.w.len() {
            let orig = conv.w[i];
            conv.w[i] = orig + h;
            let lp = loss(&conv, &x);
            conv.w[i] = orig - h;
            let lm = loss(&conv, &x);
            conv.w[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - gw[i]).abs() <= 1e-6 * num.abs().max(1.0), "w[{i}]");
        }
        for i in 0..x.data.len() {
            let orig = x.data[i];
            let mut xp = x.clone();
            xp.data[i] = orig + h;
            let lp = loss(&conv, &xp);
            xp.data[i] = orig - h;
            let lm = loss(&conv, &xp);
            let num = (lp - lm) / (2.0 * h);
            assert!((num - gx.data[i]).abs() <= 1e-6 * num.abs().max(1.0), "x[{i}]");
        }
    }

    #[test]
    fn pooling_reference_values() {
        let mut x = Tensor3::zeros(1, 4, 4);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let p = avg_pool(&x, 2);
        assert_eq!(p.h, 2);
        assert_eq!(p.data[0], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        let g = global_avg_pool(&x);
        assert_eq!(g[0], 7.5);
    }
}
