//! Row kernels of the representation sweep, one path per SIMD lane.
//!
//! The portable versions are elementwise passes over `[f64; LANES]` that the
//! compiler vectorizes at its preferred width. On AVX-512 hardware the same
//! operations are issued as 512-bit intrinsics, in the same order and with
//! the same fused/unfused split, so both routes give identical bits.

use crate::fastmath::exp_nonpositive_lanes;

pub(crate) const LANES: usize = 8;

pub(crate) type Lanes = [f64; LANES];

#[inline(always)]
pub(crate) fn lane_diff<const D: usize>(x: [Lanes; D], y: [Lanes; D]) -> [Lanes; D] {
    std::array::from_fn(|i| std::array::from_fn(|l| x[i][l] - y[i][l]))
}

/// Chooses the widest available implementation once.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowKernels {
    wide: bool,
}

impl RowKernels {
    pub(crate) fn detect() -> Self {
        Self { wide: wide_available() }
    }

    #[cfg(test)]
    pub(crate) fn portable() -> Self {
        Self { wide: false }
    }

    /// `Σ_b c_b exp(s_b |A|²)` for a difference `A` shared by every lag.
    pub(crate) fn lag_sum<const D: usize>(&self, diff: &[Lanes; D], coef: &[f64], scale: &[f64]) -> Lanes {
        #[cfg(target_arch = "x86_64")]
        if self.wide {
            // SAFETY: `wide` is only set after runtime detection of AVX-512F.
            return unsafe { avx512::lag_sum(diff, coef, scale) };
        }
        lag_sum(diff, coef, scale)
    }

    /// `acc += Σ_b (col_b - col_a) c_b exp(s_b |x_b - p|²) (x_b - p)` over
    /// one row; `xs[i]` holds coordinate `i` of `x_b`, lane-interleaved.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn pair_row<const D: usize>(
        &self,
        p: &[Lanes; D],
        xs: [&[f64]; D],
        col_a: f64,
        col: &[f64],
        coef: &[f64],
        scale: &[f64],
        acc: &mut [Lanes; D],
    ) {
        let m = coef.len();
        assert!(col.len() >= m && scale.len() >= m && xs.iter().all(|x| x.len() >= m * LANES));
        #[cfg(target_arch = "x86_64")]
        if self.wide {
            // SAFETY: AVX-512F was detected and the lengths were checked above.
            return unsafe { avx512::pair_row(p, xs, col_a, col, coef, scale, acc) };
        }
        pair_row(p, xs, col_a, col, coef, scale, acc)
    }
}

fn wide_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx512f")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

#[inline(never)]
fn lag_sum<const D: usize>(diff: &[Lanes; D], coef: &[f64], scale: &[f64]) -> Lanes {
    let mut r2 = [0.0; LANES];
    for i in 0..D {
        for l in 0..LANES {
            r2[l] += diff[i][l] * diff[i][l];
        }
    }
    let mut w = [0.0; LANES];
    for (&c, &sc) in coef.iter().zip(scale) {
        let mut arg = [0.0; LANES];
        for l in 0..LANES {
            arg[l] = sc * r2[l];
        }
        let e = exp_nonpositive_lanes(arg);
        for l in 0..LANES {
            w[l] += c * e[l];
        }
    }
    w
}

#[inline(never)]
fn pair_row<const D: usize>(
    p: &[Lanes; D],
    xs: [&[f64]; D],
    col_a: f64,
    col: &[f64],
    coef: &[f64],
    scale: &[f64],
    acc: &mut [Lanes; D],
) {
    let m = coef.len();
    let (col, scale) = (&col[..m], &scale[..m]);
    let xs: [&[f64]; D] = std::array::from_fn(|i| &xs[i][..m * LANES]);
    let mut sum = *acc;
    for b in 0..m {
        let mut diff = [[0.0; LANES]; D];
        let mut arg = [0.0; LANES];
        for i in 0..D {
            let x = &xs[i][b * LANES..(b + 1) * LANES];
            for l in 0..LANES {
                diff[i][l] = x[l] - p[i][l];
                arg[l] += diff[i][l] * diff[i][l];
            }
        }
        let sc = scale[b];
        for l in 0..LANES {
            arg[l] *= sc;
        }
        let e = exp_nonpositive_lanes(arg);
        let w = (col[b] - col_a) * coef[b];
        for i in 0..D {
            for l in 0..LANES {
                sum[i][l] += w * e[l] * diff[i][l];
            }
        }
    }
    *acc = sum;
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use super::{Lanes, LANES};
    use crate::fastmath::{EXP_COEFFICIENTS, LN2_HI, LN2_LO, LOG2_E, SHIFTER};
    use std::arch::x86_64::*;

    #[inline]
    #[target_feature(enable = "avx512f")]
    fn exp(x: __m512d) -> __m512d {
        let floor = _mm512_set1_pd(-700.0);
        let keep = _mm512_cmp_pd_mask::<_CMP_NLT_UQ>(x, floor);
        let x = _mm512_max_pd(x, floor);
        let shifter = _mm512_set1_pd(SHIFTER);
        let shifted = _mm512_fmadd_pd(x, _mm512_set1_pd(LOG2_E), shifter);
        let k = _mm512_sub_pd(shifted, shifter);
        let r = _mm512_sub_pd(
            _mm512_sub_pd(x, _mm512_mul_pd(k, _mm512_set1_pd(LN2_HI))),
            _mm512_mul_pd(k, _mm512_set1_pd(LN2_LO)),
        );
        let mut p = _mm512_set1_pd(EXP_COEFFICIENTS[12]);
        for c in EXP_COEFFICIENTS[..12].iter().rev() {
            p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(*c));
        }
        let bits = _mm512_add_epi64(
            _mm512_sub_epi64(_mm512_castpd_si512(shifted), _mm512_set1_epi64(SHIFTER.to_bits() as i64)),
            _mm512_set1_epi64(1023),
        );
        let scale = _mm512_castsi512_pd(_mm512_slli_epi64::<52>(bits));
        _mm512_maskz_mov_pd(keep, _mm512_mul_pd(p, scale))
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    unsafe fn load(x: &[f64]) -> __m512d {
        debug_assert!(x.len() >= LANES);
        _mm512_loadu_pd(x.as_ptr())
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    unsafe fn store(v: __m512d) -> Lanes {
        let mut out = [0.0; LANES];
        _mm512_storeu_pd(out.as_mut_ptr(), v);
        out
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn lag_sum<const D: usize>(diff: &[Lanes; D], coef: &[f64], scale: &[f64]) -> Lanes {
        let mut r2 = _mm512_setzero_pd();
        for d in diff {
            let v = load(d);
            r2 = _mm512_add_pd(r2, _mm512_mul_pd(v, v));
        }
        let mut w = _mm512_setzero_pd();
        for (&c, &sc) in coef.iter().zip(scale) {
            let e = exp(_mm512_mul_pd(_mm512_set1_pd(sc), r2));
            w = _mm512_add_pd(w, _mm512_mul_pd(_mm512_set1_pd(c), e));
        }
        store(w)
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn pair_row<const D: usize>(
        p: &[Lanes; D],
        xs: [&[f64]; D],
        col_a: f64,
        col: &[f64],
        coef: &[f64],
        scale: &[f64],
        acc: &mut [Lanes; D],
    ) {
        let m = coef.len();
        let centre: [__m512d; D] = std::array::from_fn(|i| load(&p[i]));
        let mut sum: [__m512d; D] = std::array::from_fn(|i| load(&acc[i]));
        let base: [*const f64; D] = std::array::from_fn(|i| xs[i].as_ptr());
        for b in 0..m {
            let mut diff = [_mm512_setzero_pd(); D];
            let mut arg = _mm512_setzero_pd();
            for i in 0..D {
                let x = _mm512_loadu_pd(base[i].add(b * LANES));
                diff[i] = _mm512_sub_pd(x, centre[i]);
                arg = _mm512_add_pd(arg, _mm512_mul_pd(diff[i], diff[i]));
            }
            let arg = _mm512_mul_pd(arg, _mm512_set1_pd(*scale.get_unchecked(b)));
            let e = exp(arg);
            let w = (*col.get_unchecked(b) - col_a) * *coef.get_unchecked(b);
            let we = _mm512_mul_pd(_mm512_set1_pd(w), e);
            for i in 0..D {
                sum[i] = _mm512_add_pd(sum[i], _mm512_mul_pd(we, diff[i]));
            }
        }
        for i in 0..D {
            acc[i] = store(sum[i]);
        }
    }
}
