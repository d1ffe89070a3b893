//! Background/foreground generator and the compositing step.
//!
//! Layer schedule (for a 128×128 output and bottleneck width `C`):
//!
//! * background: `Linear, BN, GLU → C×4×4`, five `[Up, Conv3, BN, GLU]`
//!   stages, three residual blocks, `Conv3, Tanh`.
//! * condition head: `Linear, BN, GLU` turning the one-hot code into
//!   `(μ, log σ²)`; `c′ = μ + σ ⊙ ε`.
//! * foreground base: like the background, with `c′` tiled over the 4×4
//!   map before the first stage; ends at `C/32` channels.
//! * mask head: `Conv3, BN, GLU, Conv3, Sigmoid`.
//! * texture head: the raw one-hot code is tiled and concatenated to the
//!   base features, then `Conv3, BN, GLU`, two residual blocks,
//!   `Conv3, BN, GLU, Conv3, Tanh`.
//!
//! Smaller images drop the highest-resolution stages so every layer keeps
//! the width it has at the same resolution in the 128×128 network.

use c3gan_tensor::{concat, Array, Graph, Real, Var};

use crate::config::RunConfig;
use crate::error::{invalid, Result};
use crate::nn::{BatchNorm, Binder, Conv2d, Linear, Mode, ParamStore};
use crate::rng::Rng;
use crate::sampling::{onehot_matrix, LatentCode};

/// Constant written outside the mask in the foreground-only image.
pub const FOREGROUND_FILL: f64 = 0.0;
/// Rounding allowance for interpolated masks, which can land a few ulps
/// outside `[0, 1]`.
const MASK_SLACK: f64 = 1e-5;

/// Channel width of the foreground path at resolution `res`.
pub(crate) fn fg_channels(base: usize, res: usize) -> usize {
    (base * 4 / res).max(1)
}

/// Channel width of the background path at resolution `res`.
pub(crate) fn bg_channels(base: usize, res: usize) -> usize {
    (base * 4 / res).max(base / 8).max(1)
}

#[derive(Clone, Debug)]
struct UpBlock {
    conv: Conv2d,
    bn: BatchNorm,
}

impl UpBlock {
    fn new(name: &str, cin: usize, cout: usize) -> Self {
        Self { conv: Conv2d::same3(format!("{name}.conv"), cin, 2 * cout, false), bn: BatchNorm::new(format!("{name}.bn"), 2 * cout) }
    }

    fn init<T: Real>(&self, s: &mut ParamStore<T>, rng: &mut Rng) {
        self.conv.init(s, rng);
        self.bn.init(s, rng);
    }

    fn forward<'g, T: Real>(&self, b: &Binder<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        self.bn.forward(b, self.conv.forward(b, x.upsample2x())).glu()
    }
}

/// `Conv3, BN, GLU` without upsampling.
#[derive(Clone, Debug)]
struct GluConv {
    conv: Conv2d,
    bn: BatchNorm,
}

impl GluConv {
    fn new(name: &str, cin: usize, cout: usize) -> Self {
        Self { conv: Conv2d::same3(format!("{name}.conv"), cin, 2 * cout, false), bn: BatchNorm::new(format!("{name}.bn"), 2 * cout) }
    }

    fn init<T: Real>(&self, s: &mut ParamStore<T>, rng: &mut Rng) {
        self.conv.init(s, rng);
        self.bn.init(s, rng);
    }

    fn forward<'g, T: Real>(&self, b: &Binder<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        self.bn.forward(b, self.conv.forward(b, x)).glu()
    }
}

/// `x + BN(Conv3(GLU(BN(Conv3(x)))))`.
#[derive(Clone, Debug)]
struct ResBlock {
    first: GluConv,
    conv: Conv2d,
    bn: BatchNorm,
}

impl ResBlock {
    fn new(name: &str, c: usize) -> Self {
        Self {
            first: GluConv::new(&format!("{name}.0"), c, c),
            conv: Conv2d::same3(format!("{name}.1.conv"), c, c, false),
            bn: BatchNorm::new(format!("{name}.1.bn"), c),
        }
    }

    fn init<T: Real>(&self, s: &mut ParamStore<T>, rng: &mut Rng) {
        self.first.init(s, rng);
        self.conv.init(s, rng);
        self.bn.init(s, rng);
    }

    fn forward<'g, T: Real>(&self, b: &Binder<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        let y = self.first.forward(b, x);
        x.add(self.bn.forward(b, self.conv.forward(b, y)))
    }
}

/// `Linear, BN, GLU` then reshape to `[B, C, 4, 4]`.
#[derive(Clone, Debug)]
struct Stem {
    fc: Linear,
    bn: BatchNorm,
    channels: usize,
}

impl Stem {
    fn new(name: &str, d_z: usize, channels: usize) -> Self {
        Self {
            fc: Linear::new(format!("{name}.fc"), d_z, 2 * channels * 16, false),
            bn: BatchNorm::new(format!("{name}.bn"), 2 * channels * 16),
            channels,
        }
    }

    fn init<T: Real>(&self, s: &mut ParamStore<T>, rng: &mut Rng) {
        self.fc.init(s, rng);
        self.bn.init(s, rng);
    }

    fn forward<'g, T: Real>(&self, b: &Binder<'g, '_, T>, z: Var<'g, T>) -> Var<'g, T> {
        let batch = z.shape()[0];
        self.bn.forward(b, self.fc.forward(b, z)).glu().reshape(&[batch, self.channels, 4, 4])
    }
}

/// Symbolic foreground condition `c′ = μ + σ ⊙ ε`.
#[derive(Clone, Copy, Debug)]
pub struct FgCondition<'g, T> {
    pub values: Var<'g, T>,
    pub mu: Var<'g, T>,
    pub sigma: Var<'g, T>,
}

/// Generator outputs before perturbation.
#[derive(Clone, Copy, Debug)]
pub struct SceneComponents<'g, T> {
    pub background: Var<'g, T>,
    pub mask: Var<'g, T>,
    pub texture: Var<'g, T>,
}

/// Result of compositing.
#[derive(Clone, Copy, Debug)]
pub struct ComposedImage<'g, T> {
    pub image: Var<'g, T>,
    pub foreground_only: Var<'g, T>,
    pub warped_mask: Var<'g, T>,
    pub warped_texture: Var<'g, T>,
}

/// The full generator: background path, condition head and foreground path.
#[derive(Clone, Debug)]
pub struct Generator {
    num_codes: usize,
    d_z: usize,
    d_c: usize,
    cond_fc: Linear,
    cond_bn: BatchNorm,
    bg_stem: Stem,
    bg_up: Vec<UpBlock>,
    bg_res: Vec<ResBlock>,
    bg_out: Conv2d,
    fg_stem: Stem,
    fg_up: Vec<UpBlock>,
    fg_res: Vec<ResBlock>,
    mask_hidden: GluConv,
    mask_out: Conv2d,
    tex_in: GluConv,
    tex_res: Vec<ResBlock>,
    tex_hidden: GluConv,
    tex_out: Conv2d,
}

impl Generator {
    pub fn new(cfg: &RunConfig) -> Self {
        let base = cfg.base_channels;
        let y = cfg.effective_clusters();
        let stages = cfg.stages();
        let res_at = |i: usize| 8usize << i;

        let mut bg_up = Vec::new();
        let mut cin = base;
        for i in 0..stages {
            let cout = bg_channels(base, res_at(i));
            bg_up.push(UpBlock::new(&format!("bg.up{i}"), cin, cout));
            cin = cout;
        }
        let bg_c = cin;

        let mut fg_up = Vec::new();
        let mut cin = base + cfg.d_c;
        for i in 0..stages {
            let cout = fg_channels(base, res_at(i));
            fg_up.push(UpBlock::new(&format!("fg.up{i}"), cin, cout));
            cin = cout;
        }
        let fg_c = cin;

        Self {
            num_codes: y,
            d_z: cfg.d_z,
            d_c: cfg.d_c,
            cond_fc: Linear::new("cond.fc", y, 4 * cfg.d_c, false),
            cond_bn: BatchNorm::new("cond.bn", 4 * cfg.d_c),
            bg_stem: Stem::new("bg.stem", cfg.d_z, base),
            bg_up,
            bg_res: (0..3).map(|i| ResBlock::new(&format!("bg.res{i}"), bg_c)).collect(),
            bg_out: Conv2d::same3("bg.out", bg_c, 3, true),
            fg_stem: Stem::new("fg.stem", cfg.d_z, base),
            fg_up,
            fg_res: (0..3).map(|i| ResBlock::new(&format!("fg.res{i}"), fg_c)).collect(),
            mask_hidden: GluConv::new("mask.hidden", fg_c, 4 * fg_c),
            mask_out: Conv2d::same3("mask.out", 4 * fg_c, 1, true),
            tex_in: GluConv::new("tex.in", fg_c + y, fg_c),
            tex_res: (0..2).map(|i| ResBlock::new(&format!("tex.res{i}"), fg_c)).collect(),
            tex_hidden: GluConv::new("tex.hidden", fg_c, fg_c),
            tex_out: Conv2d::same3("tex.out", fg_c, 3, true),
        }
    }

    pub fn num_codes(&self) -> usize {
        self.num_codes
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    pub fn d_c(&self) -> usize {
        self.d_c
    }

    /// Freshly initialized parameters.
    pub fn init<T: Real>(&self, rng: &mut Rng) -> ParamStore<T> {
        let mut s = ParamStore::new();
        self.cond_fc.init(&mut s, rng);
        self.cond_bn.init(&mut s, rng);
        self.bg_stem.init(&mut s, rng);
        self.bg_up.iter().for_each(|l| l.init(&mut s, rng));
        self.bg_res.iter().for_each(|l| l.init(&mut s, rng));
        self.bg_out.init(&mut s, rng);
        self.fg_stem.init(&mut s, rng);
        self.fg_up.iter().for_each(|l| l.init(&mut s, rng));
        self.fg_res.iter().for_each(|l| l.init(&mut s, rng));
        self.mask_hidden.init(&mut s, rng);
        self.mask_out.init(&mut s, rng);
        self.tex_in.init(&mut s, rng);
        self.tex_res.iter().for_each(|l| l.init(&mut s, rng));
        self.tex_hidden.init(&mut s, rng);
        self.tex_out.init(&mut s, rng);
        s
    }

    /// Parameter-name prefixes of the mask head.
    pub fn mask_head_prefixes() -> &'static [&'static str] {
        &["mask."]
    }

    /// `c′ = μ + σ ⊙ ε` from the one-hot codes `[B, Y]` and noise `ε: [B, d_c]`.
    pub fn reparameterize<'g, T: Real>(&self, b: &Binder<'g, '_, T>, onehot: Var<'g, T>, eps: Var<'g, T>) -> FgCondition<'g, T> {
        let h = self.cond_bn.forward(b, self.cond_fc.forward(b, onehot)).glu();
        let mu = h.narrow(1, 0, self.d_c);
        let sigma = h.narrow(1, self.d_c, self.d_c).scale(T::c(0.5)).exp();
        FgCondition { values: mu.add(sigma.mul(eps)), mu, sigma }
    }

    /// Background image from noise alone.
    pub fn generate_background<'g, T: Real>(&self, b: &Binder<'g, '_, T>, z: Var<'g, T>) -> Var<'g, T> {
        let mut x = self.bg_stem.forward(b, z);
        for l in &self.bg_up {
            x = l.forward(b, x);
        }
        for l in &self.bg_res {
            x = l.forward(b, x);
        }
        self.bg_out.forward(b, x).tanh()
    }

    /// Mask (sigmoid) and texture (tanh) from noise, one-hot codes and `c′`.
    pub fn generate_foreground<'g, T: Real>(
        &self,
        b: &Binder<'g, '_, T>,
        z: Var<'g, T>,
        onehot: Var<'g, T>,
        cond: Var<'g, T>,
    ) -> (Var<'g, T>, Var<'g, T>) {
        let batch = z.shape()[0];
        let stem = self.fg_stem.forward(b, z);
        let tiled = cond.reshape(&[batch, self.d_c, 1, 1]).broadcast_to(&[batch, self.d_c, 4, 4]);
        let mut x = concat(&[stem, tiled], 1);
        for l in &self.fg_up {
            x = l.forward(b, x);
        }
        for l in &self.fg_res {
            x = l.forward(b, x);
        }
        let feat = x;
        let shape = feat.shape();
        let (h, w) = (shape[2], shape[3]);

        let mask = self.mask_out.forward(b, self.mask_hidden.forward(b, feat)).sigmoid();

        let y = self.num_codes;
        let code_map = onehot.reshape(&[batch, y, 1, 1]).broadcast_to(&[batch, y, h, w]);
        let mut t = self.tex_in.forward(b, concat(&[feat, code_map], 1));
        for l in &self.tex_res {
            t = l.forward(b, t);
        }
        t = self.tex_hidden.forward(b, t);
        let texture = self.tex_out.forward(b, t).tanh();
        (mask, texture)
    }

    /// Full forward pass for a batch of codes with explicit `ε`.
    pub fn forward<'g, T: Real>(
        &self,
        b: &Binder<'g, '_, T>,
        z: Var<'g, T>,
        codes: &[LatentCode],
        eps: Var<'g, T>,
    ) -> (SceneComponents<'g, T>, FgCondition<'g, T>) {
        let onehot = b.graph().constant(onehot_matrix(codes));
        let cond = self.reparameterize(b, onehot, eps);
        let background = self.generate_background(b, z);
        let (mask, texture) = self.generate_foreground(b, z, onehot, cond.values);
        (SceneComponents { background, mask, texture }, cond)
    }

    /// Inference-mode layers without perturbation.
    pub fn render<T: Real>(&self, store: &ParamStore<T>, z: &Array<T>, codes: &[LatentCode], eps: &Array<T>) -> Result<Rendered<T>> {
        if z.dim(0) != codes.len() || eps.dim(0) != codes.len() {
            return Err(invalid(format!("z, codes and eps disagree on batch: {}, {}, {}", z.dim(0), codes.len(), eps.dim(0))));
        }
        if codes.iter().any(|c| c.width() != self.num_codes) {
            return Err(invalid(format!("latent codes must have width {}", self.num_codes)));
        }
        let g = Graph::no_grad();
        let b = Binder::frozen(&g, store, Mode::Eval);
        let (parts, _) = self.forward(&b, g.constant(z.clone()), codes, g.constant(eps.clone()));
        let composed = compose(parts.background, parts.mask, parts.texture)?;
        let take = |v: Var<'_, T>| (*v.value()).clone();
        Ok(Rendered {
            background: take(parts.background),
            mask: take(parts.mask),
            texture: take(parts.texture),
            foreground: take(composed.foreground_only),
            composite: take(composed.image),
        })
    }
}

/// Plain-valued scene layers of a batch.
#[derive(Clone, Debug)]
pub struct Rendered<T> {
    pub background: Array<T>,
    pub mask: Array<T>,
    pub texture: Array<T>,
    pub foreground: Array<T>,
    pub composite: Array<T>,
}

/// `image = bg ⊙ (1 − m′) + t′ ⊙ m′`; the foreground-only image replaces
/// the background with [`FOREGROUND_FILL`].
pub fn compose<'g, T: Real>(background: Var<'g, T>, warped_mask: Var<'g, T>, warped_texture: Var<'g, T>) -> Result<ComposedImage<'g, T>> {
    let (bs, ms, ts) = (background.shape(), warped_mask.shape(), warped_texture.shape());
    if bs != ts || ms.len() != 4 || ms[0] != bs[0] || ms[1] != 1 || ms[2..] != bs[2..] {
        return Err(invalid(format!("compose shapes disagree: bg {bs:?}, mask {ms:?}, texture {ts:?}")));
    }
    let m = warped_mask.value();
    let slack = T::c(MASK_SLACK);
    if m.data().iter().any(|&v| v.is_nan() || v < -slack || v > T::one() + slack) {
        return Err(invalid("mask values must lie in [0, 1]"));
    }
    let g = background.graph();
    let inv = warped_mask.neg().add_scalar(T::one());
    let fg = warped_texture.mul(warped_mask);
    let image = background.mul(inv).add(fg);
    let foreground_only = if FOREGROUND_FILL == 0.0 { fg } else { fg.add(inv.mul(g.scalar(T::c(FOREGROUND_FILL)))) };
    Ok(ComposedImage { image, foreground_only, warped_mask, warped_texture })
}

/// Draws `ε ~ N(0, I)` of shape `[B, d_c]`.
pub fn sample_eps<T: Real>(batch: usize, d_c: usize, rng: &mut Rng) -> Array<T> {
    crate::sampling::sample_noise(d_c, batch, rng).expect("d_c >= 1")
}
