//! Inner loops for same-padded 2-D cross-correlation.
//!
//! Every routine works on one sample whose input planes were already
//! zero-padded by `(k - 1) / 2` on each side. An AVX-512 backend is picked at
//! runtime when the CPU supports it; otherwise a portable backend runs. The
//! forward routine accumulates taps in the same `(ci, ky, kx)` order with fused
//! multiply-adds on both backends, so they agree bit for bit. The weight
//! gradient reduces lanes in a backend-specific but fixed order.

use std::sync::OnceLock;

/// Output channels processed together by the forward kernel.
pub(crate) const CO_BLOCK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Backend {
    #[cfg(target_arch = "x86_64")]
    Avx512,
    Portable,
}

/// Selected once per process. `NAC_KERNEL=portable` forces the portable loops.
pub(crate) fn backend() -> Backend {
    static BACKEND: OnceLock<Backend> = OnceLock::new();
    *BACKEND.get_or_init(|| {
        if std::env::var("NAC_KERNEL").map(|v| v == "portable").unwrap_or(false) {
            return Backend::Portable;
        }
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                return Backend::Avx512;
            }
        }
        Backend::Portable
    })
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub cin: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl Geometry {
    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn padded_height(&self) -> usize {
        self.height + self.kernel - 1
    }

    pub fn padded_width(&self) -> usize {
        self.width + self.kernel - 1
    }

    pub fn padded_len(&self) -> usize {
        self.cin * self.padded_height() * self.padded_width()
    }
}

/// Copies one `cin × h × w` sample into a zeroed, padded buffer.
pub(crate) fn pad_sample(g: &Geometry, src: &[f64], dst: &mut Vec<f64>) {
    let (ph, pw, p) = (g.padded_height(), g.padded_width(), g.pad());
    dst.clear();
    dst.resize(g.padded_len(), 0.0);
    for ci in 0..g.cin {
        for y in 0..g.height {
            let s = &src[(ci * g.height + y) * g.width..][..g.width];
            let d = &mut dst[(ci * ph + y + p) * pw + p..][..g.width];
            d.copy_from_slice(s);
        }
    }
}

/// Weights regrouped as `[co_block][ci][ky][kx][CO_BLOCK]`, zero-filled past `cout`.
#[derive(Clone, Debug)]
pub(crate) struct PackedWeights {
    data: Vec<f64>,
    cout: usize,
    cin: usize,
    kernel: usize,
}

impl PackedWeights {
    fn pack(cout: usize, cin: usize, k: usize, get: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let blocks = cout.div_ceil(CO_BLOCK);
        let mut data = vec![0.0; blocks * cin * k * k * CO_BLOCK];
        let mut i = 0;
        for cb in 0..blocks {
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        for c in 0..CO_BLOCK {
                            let co = cb * CO_BLOCK + c;
                            if co < cout {
                                data[i] = get(co, ci, ky, kx);
                            }
                            i += 1;
                        }
                    }
                }
            }
        }
        Self { data, cout, cin, kernel: k }
    }

    /// Packing for the forward pass of a `cout × cin × k × k` weight.
    pub fn forward(weight: &[f64], cout: usize, cin: usize, k: usize) -> Self {
        Self::pack(cout, cin, k, |co, ci, ky, kx| weight[((co * cin + ci) * k + ky) * k + kx])
    }

    /// Packing that turns the forward kernel into the input-gradient map:
    /// channels swapped and taps rotated by 180 degrees.
    pub fn input_gradient(weight: &[f64], cout: usize, cin: usize, k: usize) -> Self {
        Self::pack(cin, cout, k, |ci, co, ky, kx| {
            weight[((co * cin + ci) * k + (k - 1 - ky)) * k + (k - 1 - kx)]
        })
    }

    fn blocks(&self) -> usize {
        self.cout.div_ceil(CO_BLOCK)
    }

    fn taps(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }
}

/// `out[co] = bias[co] + Σ w[co, ci, ky, kx] · pad[ci, y + ky, x + kx]`, overwriting `out`.
pub(crate) fn correlate(g: &Geometry, pad: &[f64], w: &PackedWeights, bias: Option<&[f64]>, out: &mut [f64]) {
    assert_eq!(w.cin, g.cin);
    assert_eq!(w.kernel, g.kernel);
    assert!(pad.len() >= g.padded_len());
    assert!(out.len() >= w.cout * g.height * g.width);
    if let Some(b) = bias {
        assert!(b.len() >= w.cout);
    }
    match backend() {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: the backend is only selected when avx512f is available; bounds asserted above.
        Backend::Avx512 => unsafe { avx512::correlate(g, pad, w, bias, out) },
        Backend::Portable => portable::correlate_dispatch(g, pad, w, bias, out),
    }
}

/// `dw[co, ci, ky, kx] += Σ grad_out[co, y, x] · pad[ci, y + ky, x + kx]`.
pub(crate) fn weight_grad(g: &Geometry, pad: &[f64], grad_out: &[f64], cout: usize, dw: &mut [f64]) {
    let k = g.kernel;
    assert!(pad.len() >= g.padded_len());
    assert!(grad_out.len() >= cout * g.height * g.width);
    assert!(dw.len() >= cout * g.cin * k * k);
    match backend() {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: as in `correlate`.
        Backend::Avx512 => unsafe {
            match k {
                1 => avx512::weight_grad::<8, 1>(g, pad, grad_out, cout, dw),
                3 => avx512::weight_grad::<8, 3>(g, pad, grad_out, cout, dw),
                5 => avx512::weight_grad::<4, 5>(g, pad, grad_out, cout, dw),
                _ => portable::weight_grad(g, pad, grad_out, cout, dw),
            }
        },
        Backend::Portable => portable::weight_grad(g, pad, grad_out, cout, dw),
    }
}

mod portable {
    use super::*;

    pub(super) fn correlate_dispatch(
        g: &Geometry,
        pad: &[f64],
        w: &PackedWeights,
        bias: Option<&[f64]>,
        out: &mut [f64],
    ) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: features checked just above.
                unsafe { correlate_fma(g, pad, w, bias, out) };
                return;
            }
        }
        correlate(g, pad, w, bias, out)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn correlate_fma(g: &Geometry, pad: &[f64], w: &PackedWeights, bias: Option<&[f64]>, out: &mut [f64]) {
        correlate(g, pad, w, bias, out)
    }

    #[inline(always)]
    pub(super) fn correlate(g: &Geometry, pad: &[f64], w: &PackedWeights, bias: Option<&[f64]>, out: &mut [f64]) {
        let (h, wd, k) = (g.height, g.width, g.kernel);
        let (ph, pw) = (g.padded_height(), g.padded_width());
        let plane = h * wd;
        let taps = w.taps();
        for co in 0..w.cout {
            let (cb, c) = (co / CO_BLOCK, co % CO_BLOCK);
            let o = &mut out[co * plane..(co + 1) * plane];
            o.fill(bias.map_or(0.0, |b| b[co]));
            let mut t = 0;
            for ci in 0..g.cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w.data[(cb * taps + t) * CO_BLOCK + c];
                        t += 1;
                        for y in 0..h {
                            let src = &pad[(ci * ph + y + ky) * pw + kx..][..wd];
                            let dst = &mut o[y * wd..(y + 1) * wd];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d = wv.mul_add(*s, *d);
                            }
                        }
                    }
                }
            }
        }
    }

    pub(super) fn weight_grad(g: &Geometry, pad: &[f64], grad_out: &[f64], cout: usize, dw: &mut [f64]) {
        let (h, wd, k, cin) = (g.height, g.width, g.kernel, g.cin);
        let (ph, pw) = (g.padded_height(), g.padded_width());
        let plane = h * wd;
        for co in 0..cout {
            let go = &grad_out[co * plane..(co + 1) * plane];
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = 0.0;
                        for y in 0..h {
                            let src = &pad[(ci * ph + y + ky) * pw + kx..][..wd];
                            for (d, s) in go[y * wd..(y + 1) * wd].iter().zip(src) {
                                acc = d.mul_add(*s, acc);
                            }
                        }
                        dw[((co * cin + ci) * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use super::*;
    use std::arch::x86_64::*;

    #[inline(always)]
    fn lane_mask(n: usize) -> __mmask8 {
        if n >= 8 {
            0xff
        } else {
            ((1u16 << n) - 1) as u8
        }
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn correlate(
        g: &Geometry,
        pad: &[f64],
        w: &PackedWeights,
        bias: Option<&[f64]>,
        out: &mut [f64],
    ) {
        let (h, wd, k) = (g.height, g.width, g.kernel);
        let (ph, pw) = (g.padded_height(), g.padded_width());
        let plane = h * wd;
        let taps = w.taps();
        for cb in 0..w.blocks() {
            let wb = w.data.as_ptr().add(cb * taps * CO_BLOCK);
            let mut init = [0.0; CO_BLOCK];
            if let Some(b) = bias {
                for (c, v) in init.iter_mut().enumerate() {
                    let co = cb * CO_BLOCK + c;
                    if co < w.cout {
                        *v = b[co];
                    }
                }
            }
            for y in 0..h {
                let mut x0 = 0;
                while x0 < wd {
                    let rem = wd - x0;
                    let m0 = lane_mask(rem);
                    let m1 = lane_mask(rem.saturating_sub(8));
                    let mut acc0 = [_mm512_setzero_pd(); CO_BLOCK];
                    let mut acc1 = [_mm512_setzero_pd(); CO_BLOCK];
                    for c in 0..CO_BLOCK {
                        acc0[c] = _mm512_set1_pd(init[c]);
                        acc1[c] = acc0[c];
                    }
                    let mut wp = wb;
                    for ci in 0..g.cin {
                        for ky in 0..k {
                            let row = pad.as_ptr().wrapping_add((ci * ph + y + ky) * pw + x0);
                            for kx in 0..k {
                                let s0 = _mm512_maskz_loadu_pd(m0, row.wrapping_add(kx));
                                let s1 = _mm512_maskz_loadu_pd(m1, row.wrapping_add(kx + 8));
                                for c in 0..CO_BLOCK {
                                    let wv = _mm512_set1_pd(*wp.add(c));
                                    acc0[c] = _mm512_fmadd_pd(wv, s0, acc0[c]);
                                    acc1[c] = _mm512_fmadd_pd(wv, s1, acc1[c]);
                                }
                                wp = wp.add(CO_BLOCK);
                            }
                        }
                    }
                    for c in 0..CO_BLOCK {
                        let co = cb * CO_BLOCK + c;
                        if co >= w.cout {
                            break;
                        }
                        let o = out.as_mut_ptr().wrapping_add(co * plane + y * wd + x0);
                        _mm512_mask_storeu_pd(o, m0, acc0[c]);
                        _mm512_mask_storeu_pd(o.wrapping_add(8), m1, acc1[c]);
                    }
                    x0 += 16;
                }
            }
        }
    }

    /// Full blocks of `CO` output channels, then single channels for the rest.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn weight_grad<const CO: usize, const K: usize>(
        g: &Geometry,
        pad: &[f64],
        grad_out: &[f64],
        cout: usize,
        dw: &mut [f64],
    ) {
        let full = cout / CO * CO;
        let mut cb = 0;
        while cb < full {
            weight_grad_block::<CO, K>(g, pad, grad_out, cb, dw);
            cb += CO;
        }
        for co in full..cout {
            weight_grad_block::<1, K>(g, pad, grad_out, co, dw);
        }
    }

    #[inline(always)]
    unsafe fn weight_grad_block<const CO: usize, const K: usize>(
        g: &Geometry,
        pad: &[f64],
        grad_out: &[f64],
        cb: usize,
        dw: &mut [f64],
    ) {
        debug_assert_eq!(g.kernel, K);
        let (h, wd, cin) = (g.height, g.width, g.cin);
        let (ph, pw) = (g.padded_height(), g.padded_width());
        let plane = h * wd;
        for ci in 0..cin {
            for ky in 0..K {
                let mut acc = [[_mm512_setzero_pd(); K]; CO];
                for y in 0..h {
                    let row = pad.as_ptr().wrapping_add((ci * ph + y + ky) * pw);
                    let gorow = grad_out.as_ptr().wrapping_add(cb * plane + y * wd);
                    let mut x0 = 0;
                    while x0 < wd {
                        let m = lane_mask(wd - x0);
                        let mut s = [_mm512_setzero_pd(); K];
                        for (kx, sv) in s.iter_mut().enumerate() {
                            *sv = _mm512_maskz_loadu_pd(m, row.wrapping_add(x0 + kx));
                        }
                        for (c, a) in acc.iter_mut().enumerate() {
                            let d = _mm512_maskz_loadu_pd(m, gorow.wrapping_add(c * plane + x0));
                            for kx in 0..K {
                                a[kx] = _mm512_fmadd_pd(d, s[kx], a[kx]);
                            }
                        }
                        x0 += 8;
                    }
                }
                for (c, a) in acc.iter().enumerate() {
                    for (kx, v) in a.iter().enumerate() {
                        dw[(((cb + c) * cin + ci) * K + ky) * K + kx] += _mm512_reduce_add_pd(*v);
                    }
                }
            }
        }
    }
}
