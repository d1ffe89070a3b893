//! Dual-head discriminator, centroid embedding and the cluster posterior.

use c3gan_tensor::{Array, Graph, Real, Var};

use crate::config::RunConfig;
use crate::error::{invalid, Error, Result};
use crate::nn::{BatchNorm, Binder, Conv2d, Linear, Mode, ParamStore};
use crate::rng::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;
/// Added to vector norms in cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

/// Channel width of the encoder at resolution `res`.
fn d_channels(base: usize, res: usize) -> usize {
    (base * 8 / res).min(base).max(1)
}

#[derive(Clone, Debug)]
struct DownBlock {
    conv: Conv2d,
    bn: Option<BatchNorm>,
}

/// Adversarial score `r: [B]` and semantic embedding `h: [B, d_h]`.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorOutput<'g, T> {
    pub r: Var<'g, T>,
    pub h: Var<'g, T>,
}

/// Encoder `D_base` with heads `ψ_r`, `ψ_h`, plus the centroid map `ψ_c`.
#[derive(Clone, Debug)]
pub struct Discriminator {
    image_size: usize,
    num_codes: usize,
    d_h: usize,
    down: Vec<DownBlock>,
    base_conv: Conv2d,
    base_bn: BatchNorm,
    r_head: Conv2d,
    h_conv: Conv2d,
    h_bn: BatchNorm,
    h_out: Conv2d,
    centroid_map: Linear,
}

impl Discriminator {
    pub fn new(cfg: &RunConfig) -> Self {
        let base = cfg.base_channels;
        let mut down = Vec::new();
        let mut res = cfg.image_size / 2;
        let first = d_channels(base, res);
        down.push(DownBlock { conv: Conv2d::new("d.down0.conv", 3, first, 4, 2, 1, false), bn: None });
        let mut cin = first;
        let mut i = 1;
        while res > 4 {
            res /= 2;
            let cout = d_channels(base, res);
            down.push(DownBlock {
                conv: Conv2d::new(format!("d.down{i}.conv"), cin, cout, 4, 2, 1, false),
                bn: Some(BatchNorm::new(format!("d.down{i}.bn"), cout)),
            });
            cin = cout;
            i += 1;
        }
        Self {
            image_size: cfg.image_size,
            num_codes: cfg.effective_clusters(),
            d_h: cfg.d_h,
            down,
            base_conv: Conv2d::same3("d.base.conv", cin, base, false),
            base_bn: BatchNorm::new("d.base.bn", base),
            r_head: Conv2d::new("psi_r.conv", base, 1, 4, 4, 0, true),
            h_conv: Conv2d::same3("psi_h.conv", base, base, false),
            h_bn: BatchNorm::new("psi_h.bn", base),
            h_out: Conv2d::new("psi_h.out", base, cfg.d_h, 4, 4, 0, true),
            centroid_map: Linear::new("psi_c", cfg.effective_clusters(), cfg.d_h, true),
        }
    }

    pub fn num_codes(&self) -> usize {
        self.num_codes
    }

    pub fn d_h(&self) -> usize {
        self.d_h
    }

    pub fn init<T: Real>(&self, rng: &mut Rng) -> ParamStore<T> {
        let mut s = ParamStore::new();
        for d in &self.down {
            d.conv.init(&mut s, rng);
            if let Some(bn) = &d.bn {
                bn.init(&mut s, rng);
            }
        }
        self.base_conv.init(&mut s, rng);
        self.base_bn.init(&mut s, rng);
        self.r_head.init(&mut s, rng);
        self.h_conv.init(&mut s, rng);
        self.h_bn.init(&mut s, rng);
        self.h_out.init(&mut s, rng);
        self.centroid_map.init(&mut s, rng);
        s
    }

    /// Shared encoder features `[B, C, 4, 4]`.
    fn encode<'g, T: Real>(&self, b: &Binder<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        let slope = T::c(LEAKY_SLOPE);
        let mut f = x;
        for d in &self.down {
            f = d.conv.forward(b, f);
            if let Some(bn) = &d.bn {
                f = bn.forward(b, f);
            }
            f = f.leaky_relu(slope);
        }
        self.base_bn.forward(b, self.base_conv.forward(b, f)).leaky_relu(slope)
    }

    /// Checks the input is `[B, 3, H, W]` at the configured size.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != 3 || shape[2] != self.image_size || shape[3] != self.image_size || shape[0] == 0 {
            return Err(invalid(format!("discriminator expects [B,3,{s},{s}], got {shape:?}", s = self.image_size)));
        }
        Ok(())
    }

    pub fn discriminate<'g, T: Real>(&self, b: &Binder<'g, '_, T>, x: Var<'g, T>) -> Result<DiscriminatorOutput<'g, T>> {
        self.check_input(&x.shape())?;
        Ok(self.forward(b, x))
    }

    pub(crate) fn forward<'g, T: Real>(&self, b: &Binder<'g, '_, T>, x: Var<'g, T>) -> DiscriminatorOutput<'g, T> {
        let batch = x.shape()[0];
        let feat = self.encode(b, x);
        let r = self.r_head.forward(b, feat).reshape(&[batch]);
        let hf = self.h_bn.forward(b, self.h_conv.forward(b, feat)).leaky_relu(T::c(LEAKY_SLOPE));
        let h = self.h_out.forward(b, hf).reshape(&[batch, self.d_h]);
        DiscriminatorOutput { r, h }
    }

    /// `l = ψ_c(I_Y)`: one centroid row per latent code.
    pub fn centroids<'g, T: Real>(&self, b: &Binder<'g, '_, T>) -> Var<'g, T> {
        let y = self.num_codes;
        let eye = Array::from_fn(&[y, y], |i| if i / y == i % y { T::one() } else { T::zero() });
        self.centroid_map.forward(b, b.graph().constant(eye))
    }

    /// Centroid matrix as plain values.
    pub fn centroid_matrix<T: Real>(&self, store: &ParamStore<T>) -> CentroidMatrix<T> {
        let g = Graph::no_grad();
        let b = Binder::frozen(&g, store, Mode::Eval);
        CentroidMatrix { l: (*self.centroids(&b).value()).clone() }
    }

    /// Inference-mode embeddings `h` of a batch.
    pub fn embed<T: Real>(&self, store: &ParamStore<T>, images: &Array<T>) -> Result<Array<T>> {
        self.check_input(images.shape())?;
        let g = Graph::no_grad();
        let b = Binder::frozen(&g, store, Mode::Eval);
        Ok((*self.forward(&b, g.constant(images.clone())).h.value()).clone())
    }
}

/// `[Y_eff, d_h]` centroid rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidMatrix<T> {
    pub l: Array<T>,
}

/// Row-stochastic `[B, Y_eff]` posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPosterior {
    pub q: Array<f64>,
}

impl ClusterPosterior {
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.q.data().chunks(self.q.dim(1))
    }

    /// `(argmax, max)` of each row; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<(usize, f64)> {
        self.rows()
            .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }))
            .collect()
    }
}

/// Cosine similarities divided by `τ`: `[B, Y]`.
pub fn cosine_logits<'g, T: Real>(h: Var<'g, T>, l: Var<'g, T>, temperature: f64) -> Var<'g, T> {
    let eps = T::c(COSINE_EPS);
    h.l2_normalize_rows(eps).matmul(l.l2_normalize_rows(eps).t()).scale(T::c(1.0 / temperature))
}

/// `log q` with `q[b, y] ∝ exp(cos(h_b, l_y) / τ)`.
pub fn log_posterior<'g, T: Real>(h: Var<'g, T>, l: Var<'g, T>, temperature: f64) -> Var<'g, T> {
    cosine_logits(h, l, temperature).log_softmax_rows()
}

/// Posterior of plain embeddings against plain centroids.
pub fn posterior<T: Real>(h: &Array<T>, l: &Array<T>, temperature: f64) -> Result<ClusterPosterior> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(invalid("temperature must be > 0"));
    }
    if h.ndim() != 2 || l.ndim() != 2 || h.dim(1) != l.dim(1) {
        return Err(invalid(format!("embeddings {:?} and centroids {:?} disagree", h.shape(), l.shape())));
    }
    for (what, a) in [("embedding", h), ("centroid", l)] {
        if let Some(i) = a.data().chunks(a.dim(1)).position(|r| r.iter().all(|v| *v == T::zero())) {
            return Err(Error::NumericDegeneracy(format!("{what} row {i} has zero norm")));
        }
    }
    let g = Graph::no_grad();
    let h64 = g.constant(h.cast::<f64>());
    let l64 = g.constant(l.cast::<f64>());
    let q = log_posterior(h64, l64, temperature).exp().value();
    Ok(ClusterPosterior { q: (*q).clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> RunConfig {
        RunConfig { image_size: 32, base_channels: 32, d_h: 16, num_clusters: 2, overcluster_factor: 2, ..Default::default() }
    }

    #[test]
    fn softmax_of_matching_centroid() {
        let h = Array::<f64>::from_f64(&[1, 2], &[1.0, 0.0]);
        let l = Array::<f64>::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let q = posterior(&h, &l, 0.1).unwrap();
        let expected = 10f64.exp() / (10f64.exp() + 1.0);
        assert!((q.q.data()[0] - expected).abs() < 1e-6);
        assert!((expected - 0.9999546).abs() < 1e-7);
    }

    #[test]
    fn identical_centroids_give_uniform_rows() {
        let h = Array::<f64>::from_f64(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let l = Array::<f64>::from_f64(&[4, 3], &[0.3, 0.1, 0.2].repeat(4));
        let q = posterior(&h, &l, 0.1).unwrap();
        assert!(q.q.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn zero_norm_is_degenerate() {
        let h = Array::<f64>::zeros(&[1, 3]);
        let l = Array::<f64>::ones(&[2, 3]);
        assert!(matches!(posterior(&h, &l, 0.1), Err(Error::NumericDegeneracy(_))));
        assert!(matches!(posterior(&l, &h.reshape(&[1, 3]), 0.1), Err(Error::NumericDegeneracy(_))));
    }

    #[test]
    fn output_shapes_and_centroid_rows() {
        let cfg = small_cfg();
        let d = Discriminator::new(&cfg);
        let store: ParamStore<f64> = d.init(&mut Rng::seed_from(0));
        let x = Array::<f64>::from_fn(&[2, 3, 32, 32], |i| ((i % 17) as f64 / 8.0) - 1.0);
        let g = Graph::no_grad();
        let b = Binder::frozen(&g, &store, Mode::Eval);
        let out = d.discriminate(&b, g.constant(x)).unwrap();
        assert_eq!(out.r.shape(), vec![2]);
        assert_eq!(out.h.shape(), vec![2, 16]);
        let l = d.centroid_matrix(&store).l;
        assert_eq!(l.shape(), &[4, 16]);
        let w = store.param("psi_c.weight");
        let bias = store.param("psi_c.bias");
        for y in 0..4 {
            for j in 0..16 {
                assert_eq!(l.at(&[y, j]), w.at(&[j, y]) + bias.data()[j]);
            }
        }
        assert!(d.discriminate(&b, g.constant(Array::zeros(&[1, 3, 16, 16]))).is_err());
    }
}
