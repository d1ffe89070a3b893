//! Random affine perturbation of the foreground mask and texture.
//!
//! Coordinates are normalized to `[-1, 1]` across the full image extent
//! with pixel centers at `(2i + 1) / W - 1`. A parameter set maps a point
//! `p` to `R(θ)·(s·p) + 2t`: scale, then rotation about the center, then
//! translation by `t` image widths. Warping samples the source at the
//! inverse map with bilinear interpolation.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use c3gan_tensor::{par, Array, Real, Var};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// Named perturbation strength.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    Weak,
    Strong,
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyName::Weak => "weak",
            PolicyName::Strong => "strong",
        })
    }
}

impl FromStr for PolicyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(PolicyName::Weak),
            "strong" => Ok(PolicyName::Strong),
            other => Err(invalid(format!("unknown perturbation policy {other:?} (expected weak or strong)"))),
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(invalid(format!("empty or non-finite interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub(crate) fn sample(&self, rng: &mut Rng) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        rng.random_range(self.lo..=self.hi)
    }
}

/// Ranges from which affine parameters are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbPolicy {
    pub scale: Interval,
    pub rotation_deg: Interval,
    /// Per-axis translation as a fraction of the image width/height.
    pub translate: Interval,
}

impl PerturbPolicy {
    pub fn new(scale: Interval, rotation_deg: Interval, translate: Interval) -> Result<Self> {
        if scale.lo <= 0.0 {
            return Err(invalid("scale range must be positive"));
        }
        Ok(Self { scale, rotation_deg, translate })
    }

    pub fn named(name: PolicyName) -> Self {
        match name {
            PolicyName::Weak => Self {
                scale: Interval { lo: 0.9, hi: 1.1 },
                rotation_deg: Interval { lo: -2.0, hi: 2.0 },
                translate: Interval { lo: -0.08, hi: 0.08 },
            },
            PolicyName::Strong => Self {
                scale: Interval { lo: 0.8, hi: 1.5 },
                rotation_deg: Interval { lo: -15.0, hi: 15.0 },
                translate: Interval { lo: -0.15, hi: 0.15 },
            },
        }
    }

    /// Degenerate policy that always yields the identity transform.
    pub fn identity() -> Self {
        Self { scale: Interval::point(1.0), rotation_deg: Interval::point(0.0), translate: Interval::point(0.0) }
    }

    pub fn contains(&self, p: &AffineParams) -> bool {
        self.scale.contains(p.scale)
            && self.rotation_deg.contains(p.rotation_deg)
            && self.translate.contains(p.translate_xy.0)
            && self.translate.contains(p.translate_xy.1)
    }
}

/// Looks up the weak/strong ranges by name.
pub fn policy_for(name: &str) -> Result<PerturbPolicy> {
    Ok(PerturbPolicy::named(name.parse()?))
}

/// Parameters of one affine transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub scale: f64,
    pub rotation_deg: f64,
    pub translate_xy: (f64, f64),
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams { scale: 1.0, rotation_deg: 0.0, translate_xy: (0.0, 0.0) };

    /// Source point (normalized) that lands on output point `(x, y)`.
    pub fn inverse_map(&self, x: f64, y: f64) -> (f64, f64) {
        let (qx, qy) = (x - 2.0 * self.translate_xy.0, y - 2.0 * self.translate_xy.1);
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        // R(-θ)
        let (rx, ry) = (c * qx + s * qy, -s * qx + c * qy);
        (rx / self.scale, ry / self.scale)
    }
}

/// Draws `batch` independent parameter sets, each entry uniform on its range.
pub fn sample_affine(policy: &PerturbPolicy, batch: usize, rng: &mut Rng) -> Vec<AffineParams> {
    (0..batch)
        .map(|_| AffineParams {
            scale: policy.scale.sample(rng),
            rotation_deg: policy.rotation_deg.sample(rng),
            translate_xy: (policy.translate.sample(rng), policy.translate.sample(rng)),
        })
        .collect()
}

/// How samples falling outside the source are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fill {
    Zero,
    /// Replicate the nearest border pixel.
    Clamp,
}

/// Precomputed bilinear taps for warping `[B, C, H, W]` arrays: four
/// `(source offset, weight)` pairs per output pixel and batch element.
#[derive(Clone, Debug)]
pub struct WarpPlan {
    batch: usize,
    height: usize,
    width: usize,
    taps: Vec<[(u32, f64); 4]>,
}

impl WarpPlan {
    /// Builds taps from `inverse(b, x, y) -> (x_src, y_src)` in normalized
    /// coordinates.
    pub fn from_inverse_map<F>(batch: usize, height: usize, width: usize, fill: Fill, inverse: F) -> Self
    where
        F: Fn(usize, f64, f64) -> (f64, f64) + Sync,
    {
        let hw = height * width;
        let per_sample = par::map_indexed(batch, |b| {
            let mut taps = Vec::with_capacity(hw);
            for i in 0..height {
                let yn = (2 * i + 1) as f64 / height as f64 - 1.0;
                for j in 0..width {
                    let xn = (2 * j + 1) as f64 / width as f64 - 1.0;
                    let (xs, ys) = inverse(b, xn, yn);
                    let sx = ((xs + 1.0) * width as f64 - 1.0) / 2.0;
                    let sy = ((ys + 1.0) * height as f64 - 1.0) / 2.0;
                    taps.push(bilinear_taps(sx, sy, height, width, fill));
                }
            }
            taps
        });
        Self { batch, height, width, taps: per_sample.concat() }
    }

    /// One affine transform per batch element.
    pub fn affine(params: &[AffineParams], height: usize, width: usize, fill: Fill) -> Self {
        Self::from_inverse_map(params.len(), height, width, fill, |b, x, y| params[b].inverse_map(x, y))
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    fn apply<T: Real>(&self, x: &Array<T>) -> Array<T> {
        let &[b, c, h, w] = x.shape() else { panic!("warp needs [B,C,H,W]") };
        assert_eq!((b, h, w), (self.batch, self.height, self.width), "warp plan does not match input");
        let hw = h * w;
        let mut out = vec![T::zero(); x.len()];
        let xd = x.data();
        par::for_each_chunk_mut(&mut out, c * hw, |bi, o| {
            let taps = &self.taps[bi * hw..(bi + 1) * hw];
            for ci in 0..c {
                let src = &xd[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                for (ov, t) in o[ci * hw..(ci + 1) * hw].iter_mut().zip(taps) {
                    *ov = t.iter().map(|&(k, wgt)| src[k as usize] * T::c(wgt)).sum();
                }
            }
        });
        Array::new(x.shape(), out)
    }

    fn apply_transpose<T: Real>(&self, g: &Array<T>) -> Array<T> {
        let &[_, c, h, w] = g.shape() else { unreachable!() };
        let hw = h * w;
        let mut out = vec![T::zero(); g.len()];
        let gd = g.data();
        par::for_each_chunk_mut(&mut out, c * hw, |bi, o| {
            let taps = &self.taps[bi * hw..(bi + 1) * hw];
            for ci in 0..c {
                let src = &gd[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                let dst = &mut o[ci * hw..(ci + 1) * hw];
                for (&gv, t) in src.iter().zip(taps) {
                    for &(k, wgt) in t {
                        dst[k as usize] += gv * T::c(wgt);
                    }
                }
            }
        });
        Array::new(g.shape(), out)
    }

    /// Warps a plain array.
    pub fn warp_array<T: Real>(&self, x: &Array<T>) -> Array<T> {
        self.apply(x)
    }

    /// Differentiable warp with respect to pixel values.
    pub fn warp<'g, T: Real>(self: &Rc<Self>, x: Var<'g, T>) -> Var<'g, T> {
        let y = self.apply(&x.value());
        let plan = Rc::clone(self);
        x.graph().custom(&[x], y, move |g, _| vec![Some(plan.apply_transpose(g))])
    }
}

fn bilinear_taps(sx: f64, sy: f64, h: usize, w: usize, fill: Fill) -> [(u32, f64); 4] {
    let (sx, sy) = match fill {
        Fill::Zero => (sx, sy),
        Fill::Clamp => (sx.clamp(0.0, (w - 1) as f64), sy.clamp(0.0, (h - 1) as f64)),
    };
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = (sx - x0, sy - y0);
    let mut taps = [(0u32, 0.0f64); 4];
    let corners = [(0.0, 0.0, (1.0 - fx) * (1.0 - fy)), (1.0, 0.0, fx * (1.0 - fy)), (0.0, 1.0, (1.0 - fx) * fy), (1.0, 1.0, fx * fy)];
    for (slot, (dx, dy, wgt)) in taps.iter_mut().zip(corners) {
        let (xi, yi) = (x0 + dx, y0 + dy);
        if wgt > 0.0 && xi >= 0.0 && yi >= 0.0 && (xi as usize) < w && (yi as usize) < h {
            *slot = ((yi as usize * w + xi as usize) as u32, wgt);
        }
    }
    taps
}

/// Warps mask and texture with the same per-sample transform; zero fill.
pub fn warp<'g, T: Real>(mask: Var<'g, T>, texture: Var<'g, T>, params: &[AffineParams]) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let (ms, ts) = (mask.shape(), texture.shape());
    if ms.len() != 4 || ts.len() != 4 || ms[0] != ts[0] || ms[2..] != ts[2..] {
        return Err(invalid(format!("mask {ms:?} and texture {ts:?} must share batch and spatial shape")));
    }
    if params.len() != ms[0] {
        return Err(invalid(format!("{} affine parameter sets for batch of {}", params.len(), ms[0])));
    }
    let plan = Rc::new(WarpPlan::affine(params, ms[2], ms[3], Fill::Zero));
    Ok((plan.warp(mask), plan.warp(texture)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use c3gan_tensor::Graph;

    #[test]
    fn named_policies() {
        let weak = policy_for("weak").unwrap();
        assert_eq!((weak.scale.lo, weak.scale.hi), (0.9, 1.1));
        assert_eq!((weak.rotation_deg.lo, weak.rotation_deg.hi), (-2.0, 2.0));
        assert_eq!((weak.translate.lo, weak.translate.hi), (-0.08, 0.08));
        let strong = policy_for("strong").unwrap();
        assert_eq!((strong.rotation_deg.lo, strong.rotation_deg.hi), (-15.0, 15.0));
        assert_eq!((strong.scale.lo, strong.scale.hi), (0.8, 1.5));
        assert_eq!((strong.translate.lo, strong.translate.hi), (-0.15, 0.15));
        assert!(matches!(policy_for("medium"), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let p = PerturbPolicy::named(PolicyName::Strong);
        let a = sample_affine(&p, 100, &mut Rng::seed_from(4));
        let b = sample_affine(&p, 100, &mut Rng::seed_from(4));
        assert_eq!(a, b);
        assert!(a.iter().all(|x| p.contains(x)));
    }

    #[test]
    fn translation_moves_left_half_to_right_half() {
        let (h, w) = (8, 8);
        let mask = Array::<f64>::from_fn(&[1, 1, h, w], |i| if i % w < w / 2 { 1.0 } else { 0.0 });
        let tex = Array::<f64>::zeros(&[1, 3, h, w]);
        let g = Graph::no_grad();
        let p = AffineParams { translate_xy: (0.5, 0.0), ..AffineParams::IDENTITY };
        let (wm, _) = warp(g.constant(mask.clone()), g.constant(tex), &[p]).unwrap();
        let wm = wm.value();
        for i in 0..h {
            for j in 0..w {
                let expected = if j >= w / 2 { mask.at(&[0, 0, i, j - w / 2]) } else { 0.0 };
                assert!((wm.at(&[0, 0, i, j]) - expected).abs() < 1e-9, "({i},{j})");
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = Graph::no_grad();
        let m = g.constant(Array::<f64>::zeros(&[2, 1, 4, 4]));
        let t = g.constant(Array::<f64>::zeros(&[2, 3, 4, 5]));
        assert!(warp(m, t, &[AffineParams::IDENTITY; 2]).is_err());
        let t = g.constant(Array::<f64>::zeros(&[2, 3, 4, 4]));
        assert!(warp(m, t, &[AffineParams::IDENTITY]).is_err());
    }
}
