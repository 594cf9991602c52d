//! Winograd F(2×2, 3×3) path for 3×3 convolutions with enough channels.
//!
//! A 4×4 input tile `d` and a 3×3 kernel `g` give the 2×2 output tile
//! `Aᵀ [(G g Gᵀ) ⊙ (Bᵀ d B)] A`, so each pair of channels needs 16 multiplies
//! per tile instead of 36. The sums over channels become 16 independent matrix
//! products, one per tile position. Input and output transforms run on 8
//! horizontally adjacent tiles at once. The weight gradient transforms the
//! output gradient from a channel-last copy, 8 channels at once, so its matrix
//! products need no horizontal reductions. Rows of tiles are processed in
//! chunks that stay in cache.
//!
//! Both backends agree bit for bit: the transforms use the same add/subtract
//! sequence, and every matrix-product entry accumulates in ascending order
//! with fused multiply-adds.

use super::kernels::{backend, Backend};

/// Positions in a transformed 4×4 tile.
const POS: usize = 16;
/// Tiles transformed together; the tile grid width is padded to a multiple.
const GROUP: usize = 8;
/// Approximate tiles per chunk in the forward map and the weight gradient.
const FORWARD_CHUNK: usize = 64;
const GRADIENT_CHUNK: usize = 256;

/// Whether a convolution takes this path. Narrow layers stay on the direct
/// kernels, where the matrix products would be mostly padding.
pub(crate) fn applies(kernel: usize, cin: usize, cout: usize) -> bool {
    kernel == 3 && cin >= 8 && cout >= 8
}

/// Tile grid of one sample: `tiles_y` rows of `tiles_x` tiles of 2×2 outputs,
/// with `tiles_x` padded up to a multiple of [`GROUP`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub cin: usize,
    pub height: usize,
    pub width: usize,
}

impl Layout {
    fn tiles_y(&self) -> usize {
        self.height.div_ceil(2)
    }

    fn tiles_x(&self) -> usize {
        self.width.div_ceil(2).next_multiple_of(GROUP)
    }

    /// One zero row/column before the image, enough after to complete every tile.
    fn padded_height(&self) -> usize {
        2 * self.tiles_y() + 2
    }

    fn padded_width(&self) -> usize {
        2 * self.tiles_x() + 2
    }

    fn pad(&self, src: &[f64], dst: &mut Vec<f64>) {
        let (h, w, ph, pw) = (self.height, self.width, self.padded_height(), self.padded_width());
        dst.clear();
        dst.resize(self.cin * ph * pw, 0.0);
        for ci in 0..self.cin {
            for y in 0..h {
                dst[(ci * ph + y + 1) * pw + 1..][..w].copy_from_slice(&src[(ci * h + y) * w..][..w]);
            }
        }
    }

    /// Tile rows per chunk for a target chunk size.
    fn chunk_rows(&self, target: usize) -> usize {
        (target / self.tiles_x()).max(1)
    }
}

/// Kernels in the transformed domain, stored `[position][cout][cin]`.
#[derive(Clone, Debug)]
pub(crate) struct TransformedWeights {
    data: Vec<f64>,
    cin: usize,
    cout: usize,
}

impl TransformedWeights {
    fn build(cout: usize, cin: usize, get: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; POS * cin * cout];
        for co in 0..cout {
            for ci in 0..cin {
                let mut g = [[0.0; 3]; 3];
                for (ky, row) in g.iter_mut().enumerate() {
                    for (kx, v) in row.iter_mut().enumerate() {
                        *v = get(co, ci, ky, kx);
                    }
                }
                for (p, v) in kernel_transform(&g).iter().enumerate() {
                    data[(p * cout + co) * cin + ci] = *v;
                }
            }
        }
        Self { data, cin, cout }
    }

    /// For the forward pass of a `cout × cin × 3 × 3` weight.
    pub fn forward(weight: &[f64], cout: usize, cin: usize) -> Self {
        Self::build(cout, cin, |co, ci, ky, kx| weight[((co * cin + ci) * 3 + ky) * 3 + kx])
    }

    /// For the input-gradient map: channels swapped and taps rotated by 180 degrees.
    pub fn input_gradient(weight: &[f64], cout: usize, cin: usize) -> Self {
        Self::build(cin, cout, |ci, co, ky, kx| {
            weight[((co * cin + ci) * 3 + (2 - ky)) * 3 + (2 - kx)]
        })
    }
}

/// `G g Gᵀ` with `G = [[1,0,0],[½,½,½],[½,-½,½],[0,0,1]]`, flattened row-major.
fn kernel_transform(g: &[[f64; 3]; 3]) -> [f64; POS] {
    let col = |a: f64, b: f64, c: f64| [a, 0.5 * (a + b + c), 0.5 * (a - b + c), c];
    let mut t = [[0.0; 3]; 4];
    for kx in 0..3 {
        let v = col(g[0][kx], g[1][kx], g[2][kx]);
        for r in 0..4 {
            t[r][kx] = v[r];
        }
    }
    let mut u = [0.0; POS];
    for r in 0..4 {
        u[r * 4..r * 4 + 4].copy_from_slice(&col(t[r][0], t[r][1], t[r][2]));
    }
    u
}

/// `Gᵀ u G`, the adjoint of [`kernel_transform`].
fn kernel_transform_adjoint(u: &[f64; POS]) -> [[f64; 3]; 3] {
    let row = |v: [f64; 4]| [v[0] + 0.5 * (v[1] + v[2]), 0.5 * (v[1] - v[2]), 0.5 * (v[1] + v[2]) + v[3]];
    let mut t = [[0.0; 3]; 4];
    for r in 0..4 {
        t[r] = row([u[r * 4], u[r * 4 + 1], u[r * 4 + 2], u[r * 4 + 3]]);
    }
    let mut g = [[0.0; 3]; 3];
    for kx in 0..3 {
        let v = row([t[0][kx], t[1][kx], t[2][kx], t[3][kx]]);
        for ky in 0..3 {
            g[ky][kx] = v[ky];
        }
    }
    g
}

/// Arithmetic shared by the scalar and vector transforms. Keeping a single
/// definition fixes the operation order, which makes both backends agree.
trait Lane: Copy {
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn neg(self) -> Self;
}

impl Lane for f64 {
    #[inline(always)]
    fn add(self, o: Self) -> Self {
        self + o
    }
    #[inline(always)]
    fn sub(self, o: Self) -> Self {
        self - o
    }
    #[inline(always)]
    fn neg(self) -> Self {
        -self
    }
}

/// `Bᵀ d B` for `Bᵀ = [[1,0,-1,0],[0,1,1,0],[0,-1,1,0],[0,1,0,-1]]`, flattened row-major.
#[inline(always)]
fn input_transform<L: Lane>(d: &[[L; 4]; 4]) -> [L; POS] {
    let f = |a: L, b: L, c: L, e: L| [a.sub(c), b.add(c), c.sub(b), b.sub(e)];
    let cols: [[L; 4]; 4] = std::array::from_fn(|x| f(d[0][x], d[1][x], d[2][x], d[3][x]));
    let rows: [[L; 4]; 4] = std::array::from_fn(|r| f(cols[0][r], cols[1][r], cols[2][r], cols[3][r]));
    std::array::from_fn(|p| rows[p / 4][p % 4])
}

/// `Aᵀ m A` for `Aᵀ = [[1,1,1,0],[0,1,-1,-1]]`.
#[inline(always)]
fn output_transform<L: Lane>(m: &[L; POS]) -> [[L; 2]; 2] {
    let f = |a: L, b: L, c: L, e: L| [a.add(b).add(c), b.sub(c).sub(e)];
    let cols: [[L; 2]; 4] = std::array::from_fn(|x| f(m[x], m[4 + x], m[8 + x], m[12 + x]));
    std::array::from_fn(|r| f(cols[0][r], cols[1][r], cols[2][r], cols[3][r]))
}

/// `A e Aᵀ` for a 2×2 output-gradient tile, the adjoint of [`output_transform`].
#[inline(always)]
fn output_transform_adjoint<L: Lane>(e: &[[L; 2]; 2]) -> [L; POS] {
    let f = |a: L, b: L| [a, a.add(b), a.sub(b), b.neg()];
    let rows = [f(e[0][0], e[0][1]), f(e[1][0], e[1][1])];
    let cols: [[L; 4]; 4] = std::array::from_fn(|x| f(rows[0][x], rows[1][x]));
    std::array::from_fn(|p| cols[p % 4][p / 4])
}

/// Distance between consecutive tile positions in a chunk buffer holding
/// `len` values per position. The padding keeps the 16 streams off a
/// power-of-two stride, which would map them onto the same cache sets.
fn position_stride(len: usize) -> usize {
    len + 8
}

/// Per-sample buffers.
#[derive(Default)]
struct Scratch {
    pad: Vec<f64>,
    v: Vec<f64>,
    m: Vec<f64>,
}

/// Same-padded 3×3 cross-correlation of one `cin × h × w` sample, overwriting `out`.
pub(crate) fn correlate(l: &Layout, src: &[f64], u: &TransformedWeights, bias: Option<&[f64]>, out: &mut [f64]) {
    assert_eq!(u.cin, l.cin);
    assert!(src.len() >= l.cin * l.height * l.width);
    assert!(out.len() >= u.cout * l.height * l.width);
    if let Some(b) = bias {
        assert!(b.len() >= u.cout);
    }
    let be = backend();
    let (cin, cout, tx) = (l.cin, u.cout, l.tiles_x());
    let mut s = Scratch::default();
    l.pad(src, &mut s.pad);
    let rows = l.chunk_rows(FORWARD_CHUNK);
    s.v.resize(POS * position_stride(cin * rows * tx), 0.0);
    s.m.resize(POS * position_stride(cout * rows * tx), 0.0);
    let mut ty0 = 0;
    while ty0 < l.tiles_y() {
        let nr = (l.tiles_y() - ty0).min(rows);
        let n = nr * tx;
        let (sv, sm) = (position_stride(cin * n), position_stride(cout * n));
        transform_inputs(be, l, &s.pad, ty0, nr, &mut s.v);
        for p in 0..POS {
            gemm(
                be,
                Accumulate::Overwrite,
                cout,
                cin,
                n,
                &u.data[p * cout * cin..(p + 1) * cout * cin],
                &s.v[p * sv..p * sv + cin * n],
                &mut s.m[p * sm..p * sm + cout * n],
            );
        }
        for co in 0..cout {
            let b = bias.map_or(0.0, |b| b[co]);
            let plane = &mut out[co * l.height * l.width..(co + 1) * l.height * l.width];
            for r in 0..nr {
                tiles::output(be, l, &s.m, sm, co * n + r * tx, ty0 + r, b, plane);
            }
        }
        ty0 += nr;
    }
}

/// Transforms tile rows `ty0..ty0 + nr` into `v[position][cin][tile]`.
fn transform_inputs(be: Backend, l: &Layout, pad: &[f64], ty0: usize, nr: usize, v: &mut [f64]) {
    let (ph, pw, tx, cin) = (l.padded_height(), l.padded_width(), l.tiles_x(), l.cin);
    let n = nr * tx;
    let stride = position_stride(cin * n);
    for ci in 0..cin {
        let plane = &pad[ci * ph * pw..(ci + 1) * ph * pw];
        for r in 0..nr {
            tiles::input(be, plane, pw, tx, ty0 + r, v, stride, ci * n + r * tx);
        }
    }
}

/// Weight gradient of one sample in the transformed domain, stored
/// `[position][cin][cout]` and accumulated into `du`.
pub(crate) fn weight_grad(l: &Layout, src: &[f64], grad_out: &[f64], cout: usize, du: &mut [f64]) {
    let (cin, h, w, tx) = (l.cin, l.height, l.width, l.tiles_x());
    assert!(src.len() >= cin * h * w);
    assert!(grad_out.len() >= cout * h * w);
    assert!(du.len() >= POS * cin * cout);
    let be = backend();
    let mut s = Scratch::default();
    l.pad(src, &mut s.pad);
    // Output gradient laid out channel-last over the full tile grid, zero past the image.
    let (gh, gw) = (2 * l.tiles_y(), 2 * tx);
    let mut go = vec![0.0; gh * gw * cout];
    for y in 0..h {
        for x in 0..w {
            let dst = &mut go[(y * gw + x) * cout..][..cout];
            for (co, d) in dst.iter_mut().enumerate() {
                *d = grad_out[(co * h + y) * w + x];
            }
        }
    }
    let rows = l.chunk_rows(GRADIENT_CHUNK);
    s.v.resize(POS * position_stride(cin * rows * tx), 0.0);
    s.m.resize(POS * position_stride(cout * rows * tx), 0.0);
    let mut ty0 = 0;
    while ty0 < l.tiles_y() {
        let nr = (l.tiles_y() - ty0).min(rows);
        let n = nr * tx;
        let (sv, sm) = (position_stride(cin * n), position_stride(cout * n));
        transform_inputs(be, l, &s.pad, ty0, nr, &mut s.v);
        for r in 0..nr {
            tiles::gradient(be, &go, gw, cout, tx, ty0 + r, &mut s.m, sm, r * tx * cout);
        }
        for p in 0..POS {
            gemm(
                be,
                Accumulate::Add,
                cin,
                n,
                cout,
                &s.v[p * sv..p * sv + cin * n],
                &s.m[p * sm..p * sm + n * cout],
                &mut du[p * cin * cout..(p + 1) * cin * cout],
            );
        }
        ty0 += nr;
    }
}

/// Maps a transformed-domain weight gradient back to `cout × cin × 3 × 3`, adding into `dw`.
pub(crate) fn weight_grad_finish(du: &[f64], cin: usize, cout: usize, dw: &mut [f64]) {
    for co in 0..cout {
        for ci in 0..cin {
            let u: [f64; POS] = std::array::from_fn(|p| du[(p * cin + ci) * cout + co]);
            for (ky, row) in kernel_transform_adjoint(&u).iter().enumerate() {
                for (kx, v) in row.iter().enumerate() {
                    dw[((co * cin + ci) * 3 + ky) * 3 + kx] += v;
                }
            }
        }
    }
}

/// Length of a transformed-domain weight gradient.
pub(crate) fn transformed_len(cin: usize, cout: usize) -> usize {
    POS * cin * cout
}

/// Tile-row transforms. Each call handles one tile row of one channel; values
/// for position `p` and tile `t` live at `base + p * stride + t`.
mod tiles {
    use super::*;

    /// Input tiles of padded tile row `ty`.
    #[allow(clippy::too_many_arguments)]
    pub(super) fn input(be: Backend, plane: &[f64], pw: usize, tx: usize, ty: usize, v: &mut [f64], stride: usize, base: usize) {
        assert!(plane.len() >= (2 * ty + 4) * pw && pw >= 2 * tx + 2);
        assert!(v.len() >= base + (POS - 1) * stride + tx);
        match be {
            #[cfg(target_arch = "x86_64")]
            // SAFETY: avx512f is present when this backend is selected; bounds asserted above.
            Backend::Avx512 => unsafe { avx512::input(plane, pw, tx, ty, v, stride, base) },
            Backend::Portable => {
                for t in 0..tx {
                    let d: [[f64; 4]; 4] = std::array::from_fn(|r| {
                        std::array::from_fn(|c| plane[(2 * ty + r) * pw + 2 * t + c])
                    });
                    for (p, val) in input_transform(&d).iter().enumerate() {
                        v[base + p * stride + t] = *val;
                    }
                }
            }
        }
    }

    /// Output tiles of tile row `ty` plus `bias`, written into the `h × w` plane.
    #[allow(clippy::too_many_arguments)]
    pub(super) fn output(be: Backend, l: &Layout, m: &[f64], stride: usize, base: usize, ty: usize, bias: f64, plane: &mut [f64]) {
        let (h, w, tx) = (l.height, l.width, l.tiles_x());
        assert!(m.len() >= base + (POS - 1) * stride + tx);
        assert!(plane.len() >= h * w && 2 * ty < h);
        match be {
            #[cfg(target_arch = "x86_64")]
            // SAFETY: as in `input`.
            Backend::Avx512 => unsafe { avx512::output(h, w, tx, m, stride, base, ty, bias, plane) },
            Backend::Portable => {
                for t in 0..tx {
                    let vals: [f64; POS] = std::array::from_fn(|p| m[base + p * stride + t]);
                    let y = output_transform(&vals);
                    for (dy, row) in y.iter().enumerate() {
                        for (dx, val) in row.iter().enumerate() {
                            let (oy, ox) = (2 * ty + dy, 2 * t + dx);
                            if oy < h && ox < w {
                                plane[oy * w + ox] = val + bias;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint-transformed output-gradient tiles of tile row `ty`, read from a
    /// channel-last buffer `go` with `gw` columns and written tile-major:
    /// position `p`, tile `t`, channel `c` lands at `base + p * stride + t * c_count + c`.
    #[allow(clippy::too_many_arguments)]
    pub(super) fn gradient(
        be: Backend,
        go: &[f64],
        gw: usize,
        channels: usize,
        tx: usize,
        ty: usize,
        m: &mut [f64],
        stride: usize,
        base: usize,
    ) {
        assert!(go.len() >= (2 * ty + 2) * gw * channels && gw >= 2 * tx);
        assert!(m.len() >= base + (POS - 1) * stride + tx * channels);
        match be {
            #[cfg(target_arch = "x86_64")]
            // SAFETY: as in `input`.
            Backend::Avx512 => unsafe { avx512::gradient(go, gw, channels, tx, ty, m, stride, base) },
            Backend::Portable => {
                for t in 0..tx {
                    for c in 0..channels {
                        let e: [[f64; 2]; 2] = std::array::from_fn(|dy| {
                            std::array::from_fn(|dx| go[((2 * ty + dy) * gw + 2 * t + dx) * channels + c])
                        });
                        for (p, val) in output_transform_adjoint(&e).iter().enumerate() {
                            m[base + p * stride + t * channels + c] = *val;
                        }
                    }
                }
            }
        }
    }

    #[cfg(target_arch = "x86_64")]
    mod avx512 {
        use super::super::{input_transform, output_transform, output_transform_adjoint, Lane, GROUP, POS};
        use std::arch::x86_64::*;

        #[derive(Clone, Copy)]
        struct V(__m512d);

        impl Lane for V {
            #[inline(always)]
            fn add(self, o: Self) -> Self {
                // SAFETY: only reached from functions compiled with avx512f.
                V(unsafe { _mm512_add_pd(self.0, o.0) })
            }
            #[inline(always)]
            fn sub(self, o: Self) -> Self {
                V(unsafe { _mm512_sub_pd(self.0, o.0) })
            }
            #[inline(always)]
            fn neg(self) -> Self {
                // Multiplying by -1 flips the sign of zeros too, matching scalar negation.
                V(unsafe { _mm512_mul_pd(self.0, _mm512_set1_pd(-1.0)) })
            }
        }

        #[inline(always)]
        fn mask(n: usize) -> __mmask8 {
            if n >= 8 {
                0xff
            } else {
                ((1u16 << n) - 1) as u8
            }
        }

        /// Even and odd lanes of the 16 values in `lo` then `hi`.
        #[inline(always)]
        unsafe fn split(lo: __m512d, hi: __m512d) -> (V, V) {
            let even = _mm512_set_epi64(14, 12, 10, 8, 6, 4, 2, 0);
            let odd = _mm512_set_epi64(15, 13, 11, 9, 7, 5, 3, 1);
            (V(_mm512_permutex2var_pd(lo, even, hi)), V(_mm512_permutex2var_pd(lo, odd, hi)))
        }

        #[target_feature(enable = "avx512f")]
        pub(super) unsafe fn input(
            plane: &[f64],
            pw: usize,
            tx: usize,
            ty: usize,
            v: &mut [f64],
            stride: usize,
            base: usize,
        ) {
            let src = plane.as_ptr();
            let dst = v.as_mut_ptr();
            for t0 in (0..tx).step_by(GROUP) {
                let mut d = [[V(_mm512_setzero_pd()); 4]; 4];
                for (r, row) in d.iter_mut().enumerate() {
                    let p = src.add((2 * ty + r) * pw + 2 * t0);
                    let (c0, c1) = split(_mm512_loadu_pd(p), _mm512_loadu_pd(p.add(8)));
                    let (c2, c3) = split(_mm512_loadu_pd(p.add(2)), _mm512_loadu_pd(p.add(10)));
                    *row = [c0, c1, c2, c3];
                }
                for (p, val) in input_transform(&d).iter().enumerate() {
                    _mm512_storeu_pd(dst.add(base + p * stride + t0), val.0);
                }
            }
        }

        #[target_feature(enable = "avx512f")]
        #[allow(clippy::too_many_arguments)]
        pub(super) unsafe fn output(
            h: usize,
            w: usize,
            tx: usize,
            m: &[f64],
            stride: usize,
            base: usize,
            ty: usize,
            bias: f64,
            plane: &mut [f64],
        ) {
            let lo_idx = _mm512_set_epi64(11, 3, 10, 2, 9, 1, 8, 0);
            let hi_idx = _mm512_set_epi64(15, 7, 14, 6, 13, 5, 12, 4);
            let b = _mm512_set1_pd(bias);
            let src = m.as_ptr();
            let dst = plane.as_mut_ptr();
            for t0 in (0..tx).step_by(GROUP) {
                let x0 = 2 * t0;
                if x0 >= w {
                    break;
                }
                let vals: [V; POS] = std::array::from_fn(|p| V(_mm512_loadu_pd(src.add(base + p * stride + t0))));
                let y = output_transform(&vals);
                let (m0, m1) = (mask(w - x0), mask(w.saturating_sub(x0 + 8)));
                for (dy, row) in y.iter().enumerate() {
                    let oy = 2 * ty + dy;
                    if oy >= h {
                        break;
                    }
                    let lo = _mm512_add_pd(_mm512_permutex2var_pd(row[0].0, lo_idx, row[1].0), b);
                    let hi = _mm512_add_pd(_mm512_permutex2var_pd(row[0].0, hi_idx, row[1].0), b);
                    let o = dst.add(oy * w + x0);
                    _mm512_mask_storeu_pd(o, m0, lo);
                    _mm512_mask_storeu_pd(o.wrapping_add(8), m1, hi);
                }
            }
        }

        #[target_feature(enable = "avx512f")]
        #[allow(clippy::too_many_arguments)]
        pub(super) unsafe fn gradient(
            go: &[f64],
            gw: usize,
            channels: usize,
            tx: usize,
            ty: usize,
            m: &mut [f64],
            stride: usize,
            base: usize,
        ) {
            let src = go.as_ptr();
            let dst = m.as_mut_ptr();
            for t in 0..tx {
                let mut c = 0;
                while c < channels {
                    let k = mask(channels - c);
                    let e: [[V; 2]; 2] = std::array::from_fn(|dy| {
                        std::array::from_fn(|dx| {
                            V(_mm512_maskz_loadu_pd(k, src.add(((2 * ty + dy) * gw + 2 * t + dx) * channels + c)))
                        })
                    });
                    for (p, val) in output_transform_adjoint(&e).iter().enumerate() {
                        _mm512_mask_storeu_pd(dst.add(base + p * stride + t * channels + c), k, val.0);
                    }
                    c += 8;
                }
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Accumulate {
    Overwrite,
    Add,
}

/// `c = a · b` or `c += a · b` for row-major `a: m × k`, `b: k × n`, `c: m × n`.
/// Each entry sums its `k` products in ascending order from zero before it is
/// stored or added.
#[allow(clippy::too_many_arguments)]
fn gemm(be: Backend, mode: Accumulate, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    match be {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: the backend is only selected when avx512f is available; bounds asserted above.
        Backend::Avx512 => unsafe { avx512::gemm(mode == Accumulate::Add, m, k, n, a, b, c) },
        Backend::Portable => {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc = a[i * k + p].mul_add(b[p * n + j], acc);
                    }
                    match mode {
                        Accumulate::Overwrite => c[i * n + j] = acc,
                        Accumulate::Add => c[i * n + j] += acc,
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    /// Vectors of 8 columns per register block.
    const VECS: usize = 4;

    #[inline(always)]
    fn masks(cols: usize) -> [__mmask8; VECS] {
        std::array::from_fn(|j| {
            let left = cols.saturating_sub(8 * j);
            if left >= 8 {
                0xff
            } else {
                ((1u16 << left) - 1) as u8
            }
        })
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn gemm(add: bool, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        let (a, b, c) = (a.as_ptr(), b.as_ptr(), c.as_mut_ptr());
        let mut j0 = 0;
        while j0 < n {
            let mk = masks(n - j0);
            let mut i0 = 0;
            while i0 + 6 <= m {
                block::<6>(add, k, n, a.add(i0 * k), b.add(j0), c.add(i0 * n + j0), mk);
                i0 += 6;
            }
            while i0 < m {
                block::<1>(add, k, n, a.add(i0 * k), b.add(j0), c.add(i0 * n + j0), mk);
                i0 += 1;
            }
            j0 += 8 * VECS;
        }
    }

    #[inline(always)]
    unsafe fn block<const R: usize>(
        add: bool,
        k: usize,
        n: usize,
        a: *const f64,
        b: *const f64,
        c: *mut f64,
        mk: [__mmask8; VECS],
    ) {
        let mut acc = [[_mm512_setzero_pd(); VECS]; R];
        for p in 0..k {
            let bv: [__m512d; VECS] =
                std::array::from_fn(|j| _mm512_maskz_loadu_pd(mk[j], b.wrapping_add(p * n + 8 * j)));
            for (r, row) in acc.iter_mut().enumerate() {
                let av = _mm512_set1_pd(*a.add(r * k + p));
                for (j, v) in row.iter_mut().enumerate() {
                    *v = _mm512_fmadd_pd(av, bv[j], *v);
                }
            }
        }
        for (r, row) in acc.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let dst = c.wrapping_add(r * n + 8 * j);
                let out = if add { _mm512_add_pd(_mm512_maskz_loadu_pd(mk[j], dst), *v) } else { *v };
                _mm512_mask_storeu_pd(dst, mk[j], out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct same-padded 3×3 cross-correlation of one sample.
    fn direct(cin: usize, cout: usize, h: usize, w: usize, x: &[f64], wt: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (iy, ix) = (y + ky - 1, xx + kx - 1);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += wt[((co * cin + ci) * 3 + ky as usize) * 3 + kx as usize]
                                    * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(co * h + y as usize) * w + xx as usize] = acc;
                }
            }
        }
        out
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    const SHAPES: [(usize, usize, usize, usize); 6] =
        [(8, 8, 6, 6), (9, 13, 7, 5), (8, 33, 1, 1), (16, 8, 19, 70), (8, 8, 2, 131), (8, 16, 66, 9)];

    #[test]
    fn centre_tap_reproduces_the_tile_interior() {
        let mut g = [[0.0; 3]; 3];
        g[1][1] = 1.0;
        let u = kernel_transform(&g);
        let d: [[f64; 4]; 4] = std::array::from_fn(|r| std::array::from_fn(|c| (r * 4 + c) as f64));
        let v = input_transform(&d);
        let m: [f64; POS] = std::array::from_fn(|p| u[p] * v[p]);
        assert_eq!(output_transform(&m), [[d[1][1], d[1][2]], [d[2][1], d[2][2]]]);
    }

    #[test]
    fn adjoint_transforms_satisfy_inner_product_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let u: [f64; POS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let lhs: f64 = kernel_transform(&g).iter().zip(&u).map(|(a, b)| a * b).sum();
        let back = kernel_transform_adjoint(&u);
        let rhs: f64 = g.iter().flatten().zip(back.iter().flatten()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let m: [f64; POS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let e = [[0.3, -1.2], [0.7, 2.0]];
        let lhs: f64 = output_transform(&m).iter().flatten().zip(e.iter().flatten()).map(|(a, b)| a * b).sum();
        let rhs: f64 = output_transform_adjoint(&e).iter().zip(&m).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn correlate_matches_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &(cin, cout, h, w) in &SHAPES {
            let x = random(cin * h * w, &mut rng);
            let wt = random(cout * cin * 9, &mut rng);
            let bias = random(cout, &mut rng);
            let l = Layout { cin, height: h, width: w };
            let mut out = vec![f64::NAN; cout * h * w];
            correlate(&l, &x, &TransformedWeights::forward(&wt, cout, cin), Some(&bias), &mut out);
            let want = direct(cin, cout, h, w, &x, &wt);
            for (i, (a, b)) in out.iter().zip(&want).enumerate() {
                let b = b + bias[i / (h * w)];
                assert!((a - b).abs() < 1e-12, "{cin} {cout} {h} {w}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn weight_gradient_matches_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for &(cin, cout, h, w) in &SHAPES {
            let x = random(cin * h * w, &mut rng);
            let go = random(cout * h * w, &mut rng);
            let l = Layout { cin, height: h, width: w };
            let mut du = vec![0.0; transformed_len(cin, cout)];
            weight_grad(&l, &x, &go, cout, &mut du);
            let mut dw = vec![0.0; cout * cin * 9];
            weight_grad_finish(&du, cin, cout, &mut dw);
            for idx in (0..dw.len()).step_by(7) {
                let mut unit = vec![0.0; dw.len()];
                unit[idx] = 1.0;
                let want: f64 = direct(cin, cout, h, w, &x, &unit).iter().zip(&go).map(|(a, b)| a * b).sum();
                assert!((dw[idx] - want).abs() < 1e-11, "{} vs {want}", dw[idx]);
            }
        }
    }

    #[test]
    fn backends_agree_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for &(cin, cout, h, w) in &SHAPES {
            let l = Layout { cin, height: h, width: w };
            let x = random(cin * h * w, &mut rng);
            let go = random(cout * h * w, &mut rng);
            let u = TransformedWeights::forward(&random(cout * cin * 9, &mut rng), cout, cin);
            let mut pad = Vec::new();
            l.pad(&x, &mut pad);
            let (tx, ty) = (l.tiles_x(), l.tiles_y());
            let n = ty * tx;
            let (gh, gw) = (2 * ty, 2 * tx);
            let mut hwc = vec![0.0; gh * gw * cout];
            for co in 0..cout {
                for y in 0..h {
                    for x in 0..w {
                        hwc[(y * gw + x) * cout + co] = go[(co * h + y) * w + x];
                    }
                }
            }
            let run = |be: Backend| {
                let sv = position_stride(cin * n);
                let mut v = vec![0.0; POS * sv];
                transform_inputs(be, &l, &pad, 0, ty, &mut v);
                let mut m = vec![0.0; POS * cout * n];
                for p in 0..POS {
                    let (u, v) = (&u.data[p * cout * cin..], &v[p * sv..]);
                    gemm(be, Accumulate::Overwrite, cout, cin, n, u, v, &mut m[p * cout * n..]);
                }
                let mut out = vec![0.0; cout * h * w];
                for co in 0..cout {
                    for r in 0..ty {
                        tiles::output(be, &l, &m, cout * n, co * n + r * tx, r, 0.5, &mut out[co * h * w..]);
                    }
                }
                let mut g = vec![0.0; POS * n * cout];
                for r in 0..ty {
                    tiles::gradient(be, &hwc, gw, cout, tx, r, &mut g, n * cout, r * tx * cout);
                }
                let mut du = vec![1.0; POS * cin * cout];
                for p in 0..POS {
                    let (v, g) = (&v[p * sv..], &g[p * n * cout..]);
                    gemm(be, Accumulate::Add, cin, n, cout, v, g, &mut du[p * cin * cout..]);
                }
                (v, m, out, g, du)
            };
            let fast = run(backend());
            let slow = run(Backend::Portable);
            assert!(fast == slow, "{cin} {cout} {h} {w}");
        }
    }
}

