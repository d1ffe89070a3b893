//! Training objectives. Every function builds on the tape so gradients
//! flow to whatever produced its inputs.

use c3gan_tensor::{Real, Var};
use serde::{Deserialize, Serialize};

use crate::config::LossWeights;
use crate::discriminator::cosine_logits;
use crate::error::{invalid, Error, Result};

/// Floor applied inside every logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Discriminator hinge: `E[max(0, 1 − r)] + E[max(0, 1 + r̂)]`.
pub fn hinge_d<'g, T: Real>(r_real: Var<'g, T>, r_fake: Var<'g, T>) -> Var<'g, T> {
    let real = r_real.neg().add_scalar(T::one()).relu().mean_all();
    let fake = r_fake.add_scalar(T::one()).relu().mean_all();
    real.add(fake)
}

/// Generator adversarial loss `E[−r̂]`.
pub fn hinge_g<'g, T: Real>(r_fake: Var<'g, T>) -> Var<'g, T> {
    r_fake.mean_all().neg()
}

/// `E[−log q[b, k_b]]` for posterior rows `q: [B, Y]`.
pub fn info_loss<'g, T: Real>(q: Var<'g, T>, k: &[usize]) -> Result<Var<'g, T>> {
    let shape = q.shape();
    if shape.len() != 2 || shape[0] != k.len() || k.is_empty() {
        return Err(invalid(format!("posterior {shape:?} does not match {} indices", k.len())));
    }
    if let Some(bad) = k.iter().find(|&&i| i >= shape[1]) {
        return Err(invalid(format!("latent index {bad} out of range {}", shape[1])));
    }
    Ok(q.pick_rows(k).ln_clamped(T::c(LOG_CLAMP)).mean_all().neg())
}

/// Image-level contrastive loss between two index-aligned views:
/// `E_b[−log softmax_j(cos(h_b, h′_j)/τ)[b]]`, negatives from the second view.
pub fn img_contrastive<'g, T: Real>(h: Var<'g, T>, h_prime: Var<'g, T>, temperature: f64) -> Result<Var<'g, T>> {
    let (s1, s2) = (h.shape(), h_prime.shape());
    if s1 != s2 || s1.len() != 2 {
        return Err(invalid(format!("view embeddings disagree: {s1:?} vs {s2:?}")));
    }
    if s1[0] < 2 {
        return Err(invalid("contrastive loss needs at least two images"));
    }
    let diag: Vec<usize> = (0..s1[0]).collect();
    Ok(cosine_logits(h, h_prime, temperature).log_softmax_rows().pick_rows(&diag).mean_all().neg())
}

/// `E_b[H(q_b)] + KL(q̄ ‖ u)` in nats.
pub fn entropy_reg<'g, T: Real>(q: Var<'g, T>) -> Var<'g, T> {
    let shape = q.shape();
    let y = shape[1];
    let eps = T::c(LOG_CLAMP);
    let row_entropy = q.mul(q.ln_clamped(eps)).sum_axis(1).neg().mean_all();
    let q_bar = q.mean_axis(0);
    // KL(q̄‖u) = Σ q̄ (log q̄ + log Y)
    let kl = q_bar.mul(q_bar.ln_clamped(eps).add_scalar(T::c((y as f64).ln()))).sum_all();
    row_entropy.add(kl)
}

/// Pushes the mask towards binary values covering 10–90% of the frame:
/// per-sample spatial mean of the binary entropy plus two coverage hinges,
/// averaged over the batch. `mask: [B, 1, H, W]`.
pub fn mask_reg<'g, T: Real>(mask: Var<'g, T>) -> Var<'g, T> {
    let shape = mask.shape();
    let batch = shape[0];
    let eps = T::c(LOG_CLAMP);
    let flat = mask.reshape(&[batch, shape[1..].iter().product()]);
    let inv = flat.neg().add_scalar(T::one());
    let entropy = flat.mul(flat.ln_clamped(eps)).add(inv.mul(inv.ln_clamped(eps))).neg().mean_axis(1);
    let coverage = flat.mean_axis(1);
    let low = coverage.neg().add_scalar(T::c(0.1)).relu();
    let high = coverage.add_scalar(T::c(-0.9)).relu();
    entropy.add(low).add(high).mean_all()
}

/// Scalar values of every objective term for one step, and their
/// weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_d: f64,
    pub adv_g: f64,
    pub info: f64,
    pub info_fg: f64,
    pub img_cont: f64,
    pub entropy: f64,
    pub mask: f64,
    pub total: f64,
}

/// Unweighted loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub adv_d: f64,
    pub adv_g: f64,
    pub info: f64,
    pub info_fg: f64,
    pub img_cont: f64,
    pub entropy: f64,
    pub mask: f64,
}

/// Weighted total
/// `adv_d + adv_g + λ0·info + λ1·info_fg + λ2·img_cont + λ3·entropy + λ4·mask`.
pub fn total_objective(terms: &LossTerms, w: &LossWeights, step: u64) -> Result<LossReport> {
    let named = [
        ("adv_d", terms.adv_d),
        ("adv_g", terms.adv_g),
        ("info", terms.info),
        ("info_fg", terms.info_fg),
        ("img_cont", terms.img_cont),
        ("entropy", terms.entropy),
        ("mask", terms.mask),
    ];
    if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Divergence { term: name.to_string(), step });
    }
    let total = terms.adv_d
        + terms.adv_g
        + w.info * terms.info
        + w.info_fg * terms.info_fg
        + w.img_cont * terms.img_cont
        + w.entropy * terms.entropy
        + w.mask * terms.mask;
    Ok(LossReport {
        adv_d: terms.adv_d,
        adv_g: terms.adv_g,
        info: terms.info,
        info_fg: terms.info_fg,
        img_cont: terms.img_cont,
        entropy: terms.entropy,
        mask: terms.mask,
        total,
    })
}
