use std::rc::Rc;

use c3gan::generator::compose;
use c3gan::losses::{entropy_reg, hinge_d, hinge_g, img_contrastive, info_loss, mask_reg};
use c3gan::perturb::{AffineParams, Fill, WarpPlan};
use c3gan::tensor::gradcheck::{check_gradient, spread_coords};
use c3gan::tensor::{Array, Graph, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Random rows on the simplex with entries bounded away from 0.
fn simplex_rows(b: usize, y: usize, seed: u64) -> Array<f64> {
    let raw = uniform(&[b, y], 0.05, 1.0, seed);
    let mut out = raw.clone();
    for (row, src) in out.data_mut().chunks_mut(y).zip(raw.data().chunks(y)) {
        let s: f64 = src.iter().sum();
        row.iter_mut().zip(src).for_each(|(o, &v)| *o = v / s);
    }
    out
}

fn grad_ok<F>(x: &Array<f64>, f: F)
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Var<'g, f64>,
{
    let r = check_gradient(x, &spread_coords(x.len(), 50, 11), 1e-6, 1e-8, f);
    assert!(r.passes(TOL), "{r:?}");
}

/// Values away from the hinge kinks at ±1.
fn off_kink(shape: &[usize], seed: u64) -> Array<f64> {
    uniform(shape, -2.5, 2.5, seed).map(|v| if (v.abs() - 1.0).abs() < 0.05 { v + 0.2 } else { v })
}

#[test]
fn hinge_gradients() {
    let real = off_kink(&[60], 1);
    let fake = off_kink(&[60], 2);
    grad_ok(&real, |g, v| hinge_d(v, g.constant(fake.clone())));
    grad_ok(&fake, |g, v| hinge_d(g.constant(real.clone()), v));
    grad_ok(&fake, |_, v| hinge_g(v));
}

#[test]
fn info_gradient() {
    let q = simplex_rows(12, 6, 3);
    let k: Vec<usize> = (0..12).map(|i| (i * 5) % 6).collect();
    grad_ok(&q, |_, v| info_loss(v, &k).unwrap());
}

#[test]
fn contrastive_gradient() {
    let h = uniform(&[6, 5], -1.0, 1.0, 4);
    let h2 = uniform(&[6, 5], -1.0, 1.0, 5);
    grad_ok(&h, |g, v| img_contrastive(v, g.constant(h2.clone()), 0.5).unwrap());
    grad_ok(&h2, |g, v| img_contrastive(g.constant(h.clone()), v, 0.5).unwrap());
}

#[test]
fn entropy_gradient() {
    grad_ok(&simplex_rows(8, 5, 6), |_, v| entropy_reg(v));
}

#[test]
fn mask_gradient() {
    grad_ok(&uniform(&[3, 1, 5, 5], 0.02, 0.98, 7), |_, v| mask_reg(v));
    // coverage hinges active
    grad_ok(&uniform(&[2, 1, 4, 4], 0.01, 0.15, 8), |_, v| mask_reg(v));
    grad_ok(&uniform(&[2, 1, 4, 4], 0.9, 0.99, 9), |_, v| mask_reg(v));
}

fn project<'g>(g: &'g Graph<f64>, y: Var<'g, f64>, seed: u64) -> Var<'g, f64> {
    y.mul(g.constant(uniform(&y.shape(), -1.0, 1.0, seed))).sum_all()
}

#[test]
fn warp_gradient() {
    let params = [
        AffineParams { scale: 1.07, rotation_deg: 1.5, translate_xy: (0.05, -0.03) },
        AffineParams { scale: 0.93, rotation_deg: -12.0, translate_xy: (-0.1, 0.12) },
    ];
    let plan = Rc::new(WarpPlan::affine(&params, 6, 6, Fill::Zero));
    let x = uniform(&[2, 3, 6, 6], -1.0, 1.0, 10);
    grad_ok(&x, |g, v| project(g, plan.warp(v), 12));
}

#[test]
fn compose_gradient() {
    let bg = uniform(&[2, 3, 4, 4], -1.0, 1.0, 13);
    let m = uniform(&[2, 1, 4, 4], 0.05, 0.95, 14);
    let t = uniform(&[2, 3, 4, 4], -1.0, 1.0, 15);
    fn both(c: c3gan::generator::ComposedImage<'_, f64>) -> Var<'_, f64> {
        c.image.mul(c.image).sum_all().add(c.foreground_only.sum_all())
    }
    grad_ok(&bg, |g, v| both(compose(v, g.constant(m.clone()), g.constant(t.clone())).unwrap()));
    grad_ok(&m, |g, v| both(compose(g.constant(bg.clone()), v, g.constant(t.clone())).unwrap()));
    grad_ok(&t, |g, v| both(compose(g.constant(bg.clone()), g.constant(m.clone()), v).unwrap()));
}

fn value<F>(x: &Array<f64>, f: F) -> f64
where
    F: for<'g> Fn(Var<'g, f64>) -> Var<'g, f64>,
{
    let g = Graph::no_grad();
    f(g.constant(x.clone())).item()
}

#[test]
fn info_loss_matches_cross_entropy_oracle() {
    for seed in 0..20 {
        let q = simplex_rows(7, 5, seed);
        let k: Vec<usize> = (0..7).map(|i| (i + seed as usize) % 5).collect();
        let oracle = k.iter().enumerate().map(|(b, &kb)| -q.data()[b * 5 + kb].ln()).sum::<f64>() / 7.0;
        assert!((value(&q, |v| info_loss(v, &k).unwrap()) - oracle).abs() < 1e-12);
    }
}

#[test]
fn contrastive_small_temperature_limit() {
    let h = Array::from_f64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let v = value(&h, |x| img_contrastive(x, x, 0.01).unwrap());
    assert!(v < 1e-20, "{v}");
}

#[test]
fn entropy_reg_terms_vanish_on_balanced_one_hot() {
    let mut q = Array::<f64>::zeros(&[6, 3]);
    for b in 0..6 {
        q.data_mut()[b * 3 + b % 3] = 1.0;
    }
    assert!(value(&q, entropy_reg).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_nonnegative(seed in 0u64..1000, b in 2usize..6, y in 2usize..6) {
        let q = simplex_rows(b, y, seed);
        let k: Vec<usize> = (0..b).map(|i| (i * 3 + seed as usize) % y).collect();
        prop_assert!(value(&q, |v| info_loss(v, &k).unwrap()) >= 0.0);
        prop_assert!(value(&q, entropy_reg) >= -1e-12);
        let m = uniform(&[b, 1, 3, 3], 0.0, 1.0, seed + 1);
        prop_assert!(value(&m, mask_reg) >= 0.0);
    }

    #[test]
    fn contrastive_ignores_negative_order(seed in 0u64..1000, b in 2usize..6) {
        let h = uniform(&[b, 4], -1.0, 1.0, seed);
        let h2 = uniform(&[b, 4], -1.0, 1.0, seed + 7);
        let base = {
            let g = Graph::<f64>::no_grad();
            img_contrastive(g.constant(h.clone()), g.constant(h2.clone()), 0.3).unwrap().item()
        };
        // Permute rows of both views together: the positives stay aligned
        // and each row's negatives are reordered.
        let perm: Vec<usize> = (0..b).map(|i| (i + 1 + seed as usize) % b).collect();
        let permute = |a: &Array<f64>| Array::from_fn(&[b, 4], |i| a.data()[perm[i / 4] * 4 + i % 4]);
        let g = Graph::<f64>::no_grad();
        let v = img_contrastive(g.constant(permute(&h)), g.constant(permute(&h2)), 0.3).unwrap().item();
        prop_assert!((v - base).abs() < 1e-12);
    }

    #[test]
    fn hinge_g_decreasing(seed in 0u64..1000, i in 0usize..8, delta in 0.01f64..3.0) {
        let r = uniform(&[8], -2.0, 2.0, seed);
        let mut r2 = r.clone();
        r2.data_mut()[i] += delta;
        prop_assert!(value(&r2, hinge_g) < value(&r, hinge_g));
    }

    #[test]
    fn info_loss_decreases_with_target_mass(seed in 0u64..1000, bump in 0.01f64..0.5) {
        let q = simplex_rows(1, 4, seed);
        let k = [2usize];
        let p = q.data()[2];
        let p2 = p + bump * (1.0 - p);
        let scale = (1.0 - p2) / (1.0 - p);
        let q2 = Array::from_fn(&[1, 4], |i| if i == 2 { p2 } else { q.data()[i] * scale });
        prop_assert!(value(&q2, |v| info_loss(v, &k).unwrap()) < value(&q, |v| info_loss(v, &k).unwrap()));
    }
}

#[test]
fn saturated_mask_survives_warp_and_compose() {
    use c3gan::perturb::{sample_affine, warp, PerturbPolicy, PolicyName};
    let params = sample_affine(&PerturbPolicy::named(PolicyName::Strong), 64, &mut c3gan::Rng::seed_from(4));
    let g = Graph::<f32>::no_grad();
    let mask = g.constant(Array::ones(&[64, 1, 16, 16]));
    let texture = g.constant(Array::zeros(&[64, 3, 16, 16]));
    let (wm, wt) = warp(mask, texture, &params).unwrap();
    let c = compose(g.constant(Array::zeros(&[64, 3, 16, 16])), wm, wt).unwrap();
    assert!(c.image.value().all_finite());
}
