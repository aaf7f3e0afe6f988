//! Counter-based random draws.
//!
//! Every random number consumed anywhere in a run is a pure function of
//! `(master_seed, individual_id, time_step, consumer_tag, draw_index)`.
//! There is no sequential generator state, so results do not depend on
//! how the population is partitioned across workers, and any draw can be
//! replayed in isolation.

use crate::error::{Result, SimError};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer (Stafford mix 13). Bijective with strong avalanche.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline(always)]
fn absorb(h: u64, w: u64) -> u64 {
    mix64(h ^ w.wrapping_mul(GOLDEN).wrapping_add(0x1656_67b1_9e37_79f9))
}

/// Identifies the consumer of a stream of draws (an event, a sampler, the
/// event-order shuffle, ...). Derived stably from the consumer's name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamTag(pub u64);

impl StreamTag {
    /// FNV-1a over the name; stable across platforms and versions.
    pub fn from_name(name: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        StreamTag(h)
    }
}

/// Sentinel id for draws that are not attached to any individual
/// (accumulation counts, shared event order, sampling shuffles).
pub const NO_INDIVIDUAL: u64 = u64::MAX;

/// Key for a (seed, step, consumer) stream; per-row draws only mix in
/// `(id, index)` on top of this, which keeps the hot path short.
#[derive(Debug, Clone, Copy)]
pub struct StreamKey(u64);

impl StreamKey {
    #[inline(always)]
    pub fn draw_u64(self, id: u64, index: u64) -> u64 {
        absorb(absorb(self.0, id), index)
    }

    #[inline(always)]
    pub fn draw(self, id: u64, index: u64) -> f64 {
        uniform_from_u64(self.draw_u64(id, index))
    }
}

/// Maps a 64-bit word to the open interval (0, 1); the offset of half an
/// ulp keeps inverse-CDF transforms away from both endpoints.
#[inline(always)]
pub fn uniform_from_u64(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// The latent-variable source psi: a pure function view over the master seed.
#[derive(Debug, Clone, Copy)]
pub struct LatentDraws {
    master_seed: u64,
}

impl LatentDraws {
    pub fn new(master_seed: u64) -> Self {
        LatentDraws { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    #[inline]
    pub fn key(&self, t: u64, tag: StreamTag) -> StreamKey {
        StreamKey(absorb(absorb(self.master_seed ^ GOLDEN, t), tag.0))
    }

    /// Uniform draw in [0, 1) for the full 5-tuple.
    #[inline]
    pub fn draw(&self, id: u64, t: u64, tag: StreamTag, index: u64) -> f64 {
        self.key(t, tag).draw(id, index)
    }

    #[inline]
    pub fn draw_u64(&self, id: u64, t: u64, tag: StreamTag, index: u64) -> u64 {
        self.key(t, tag).draw_u64(id, index)
    }
}

/// Free-function form of the 5-tuple draw.
#[inline]
pub fn uniform_draw(seed: u64, id: u64, t: u64, tag: StreamTag, index: u64) -> f64 {
    LatentDraws::new(seed).draw(id, t, tag, index)
}

/// Distributions supported by the inverse-transform sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Bernoulli { p: f64 },
    Exponential { rate: f64 },
    Normal { mean: f64, sd: f64 },
    /// CDF F(x) = 1 - exp(-(x / scale)^shape).
    Weibull { shape: f64, scale: f64 },
}

/// Inverse-CDF transform of a uniform draw.
pub fn draw_transform(u: f64, dist: Dist) -> Result<f64> {
    match dist {
        Dist::Bernoulli { p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::BadDistribution(format!("bernoulli p = {p}")));
            }
            Ok(if u < p { 1.0 } else { 0.0 })
        }
        Dist::Exponential { rate } => {
            if rate <= 0.0 {
                return Err(SimError::BadDistribution(format!("exponential rate = {rate}")));
            }
            Ok(-(-u).ln_1p() / rate)
        }
        Dist::Normal { mean, sd } => {
            if sd < 0.0 {
                return Err(SimError::BadDistribution(format!("normal sd = {sd}")));
            }
            Ok(mean + sd * normal_quantile(u))
        }
        Dist::Weibull { shape, scale } => {
            if shape <= 0.0 || scale <= 0.0 {
                return Err(SimError::BadDistribution(format!(
                    "weibull shape = {shape}, scale = {scale}"
                )));
            }
            Ok(scale * (-(-u).ln_1p()).powf(1.0 / shape))
        }
    }
}

/// Standard normal quantile, Acklam's rational approximation.
/// Relative error below 1.2e-9 over (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (-p).ln_1p()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Logistic sigmoid, numerically stable on both tails.
#[inline(always)]
pub fn inverse_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(p / (1 - p)).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
