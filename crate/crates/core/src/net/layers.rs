//! Dense kernels on `[channel][row][col]` planes.

/// Square convolution with zero padding `kernel / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvShape {
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad() - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad() - self.kernel) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.kernel * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    /// Output columns `ox` whose input column `ox·stride + k - pad` lies inside the row.
    #[inline]
    fn valid_range(&self, k: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad() as isize);
        let off = k as isize - p;
        // smallest o with o*s + off >= 0, largest with o*s + off <= n_in - 1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_incl = (n_in as isize - 1 - off).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, n_out as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    pub fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let (k, s, p) = (self.kernel, self.stride, self.pad());
        let plane_in = self.in_h * self.in_w;
        for oc in 0..self.out_c {
            let o = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            o.fill(bias[oc]);
            for ic in 0..self.in_c {
                let inp = &input[ic * plane_in..(ic + 1) * plane_in];
                let wbase = (oc * self.in_c + ic) * k * k;
                for ky in 0..k {
                    let (y0, y1) = self.valid_range(ky, self.in_h, oh);
                    for kx in 0..k {
                        let w = weight[wbase + ky * k + kx];
                        let (x0, x1) = self.valid_range(kx, self.in_w, ow);
                        if x0 >= x1 {
                            continue;
                        }
                        for oy in y0..y1 {
                            let iy = oy * s + ky - p;
                            let row = &inp[iy * self.in_w..(iy + 1) * self.in_w];
                            let orow = &mut o[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let ix0 = x0 + kx - p;
                                for (ov, iv) in orow[x0..x1].iter_mut().zip(&row[ix0..ix0 + (x1 - x0)]) {
                                    *ov += w * iv;
                                }
                            } else {
                                for ox in x0..x1 {
                                    orow[ox] += w * row[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients and, when `grad_in` is given, the input gradient.
    pub fn backward(
        &self,
        input: &[f64],
        weight: &[f64],
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        mut grad_in: Option<&mut [f64]>,
    ) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let (k, s, p) = (self.kernel, self.stride, self.pad());
        let plane_in = self.in_h * self.in_w;
        for oc in 0..self.out_c {
            let go = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
            grad_b[oc] += go.iter().sum::<f64>();
            for ic in 0..self.in_c {
                let inp = &input[ic * plane_in..(ic + 1) * plane_in];
                let wbase = (oc * self.in_c + ic) * k * k;
                for ky in 0..k {
                    let (y0, y1) = self.valid_range(ky, self.in_h, oh);
                    for kx in 0..k {
                        let (x0, x1) = self.valid_range(kx, self.in_w, ow);
                        if x0 >= x1 {
                            continue;
                        }
                        let w = weight[wbase + ky * k + kx];
                        let mut gw = 0.0;
                        for oy in y0..y1 {
                            let iy = oy * s + ky - p;
                            let grow = &go[oy * ow..(oy + 1) * ow];
                            let row = &inp[iy * self.in_w..(iy + 1) * self.in_w];
                            if s == 1 {
                                let ix0 = x0 + kx - p;
                                let n = x1 - x0;
                                gw += grow[x0..x1].iter().zip(&row[ix0..ix0 + n]).map(|(g, v)| g * v).sum::<f64>();
                                if let Some(gi) = grad_in.as_deref_mut() {
                                    let girow = &mut gi[ic * plane_in + iy * self.in_w..][..self.in_w];
                                    for (gv, g) in girow[ix0..ix0 + n].iter_mut().zip(&grow[x0..x1]) {
                                        *gv += w * g;
                                    }
                                }
                            } else {
                                for ox in x0..x1 {
                                    let ix = ox * s + kx - p;
                                    gw += grow[ox] * row[ix];
                                    if let Some(gi) = grad_in.as_deref_mut() {
                                        gi[ic * plane_in + iy * self.in_w + ix] += w * grow[ox];
                                    }
                                }
                            }
                        }
                        grad_w[wbase + ky * k + kx] += gw;
                    }
                }
            }
        }
    }
}

pub fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the pre-activation was not positive.
pub fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, p) in grad.iter_mut().zip(pre) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Non-overlapping `size × size` max pooling; returns the output and the
/// flat input index that won each window.
pub fn maxpool_forward(input: &[f64], c: usize, h: usize, w: usize, size: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * size * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = base + (oy * size + dy) * w + ox * size + dx;
                        if input[i] > input[best] {
                            best = i;
                        }
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(grad_out: &[f64], arg: &[usize], grad_in: &mut [f64]) {
    for (g, &i) in grad_out.iter().zip(arg) {
        grad_in[i] += g;
    }
}

/// `out = W · x + b` with `W` stored row-major as `[out][in]`.
pub fn dense_forward(x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (row, b)) in out.iter_mut().zip(weight.chunks_exact(n_in).zip(bias)) {
        *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

pub fn dense_backward(x: &[f64], weight: &[f64], grad_out: &[f64], grad_w: &mut [f64], grad_b: &mut [f64], grad_in: Option<&mut [f64]>) {
    let n_in = x.len();
    for (o, &g) in grad_out.iter().enumerate() {
        grad_b[o] += g;
        if g != 0.0 {
            for (gw, v) in grad_w[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                *gw += g * v;
            }
        }
    }
    if let Some(gi) = grad_in {
        for (o, &g) in grad_out.iter().enumerate() {
            if g != 0.0 {
                for (gv, w) in gi.iter_mut().zip(&weight[o * n_in..(o + 1) * n_in]) {
                    *gv += g * w;
                }
            }
        }
    }
}
