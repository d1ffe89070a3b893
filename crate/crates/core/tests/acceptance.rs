//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 1-5 always run. The desk-scale training experiments (6, 7)
//! need hours of CPU time and only run with `C3_ACCEPTANCE_FULL=1`;
//! `C3_DESK_STEPS`, `C3_DESK_BASE` and `C3_DESK_OUT` adjust the budget,
//! channel width and where per-run results are written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::rc::Rc;
use std::time::{Duration, Instant};

use c3gan::data::{synth_shapes, Dataset};
use c3gan::discriminator::posterior;
use c3gan::eval::{assign_embeddings, contingency, evaluate, hungarian_accuracy, nmi, ContingencyTable, DiscriminatorEmbedder, Scores};
use c3gan::generator::compose;
use c3gan::losses::{entropy_reg, hinge_d, hinge_g, img_contrastive, info_loss, mask_reg};
use c3gan::perturb::{sample_affine, AffineParams, Fill, PerturbPolicy, PolicyName, WarpPlan};
use c3gan::tensor::gradcheck::{check_gradient, spread_coords};
use c3gan::tensor::{Array, Graph, Var};
use c3gan::trainer::{checkpoint_bytes, parse_checkpoint, StepLog, TrainEvent, Trainer};
use c3gan::{LossWeights, Rng, RunConfig};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn value<F>(x: &Array<f64>, f: F) -> f64
where
    F: for<'g> Fn(Var<'g, f64>) -> Var<'g, f64>,
{
    let g = Graph::no_grad();
    f(g.constant(x.clone())).item()
}

fn tiny() -> RunConfig {
    RunConfig {
        num_clusters: 2,
        overcluster_factor: 2,
        d_z: 8,
        d_c: 4,
        d_h: 32,
        image_size: 32,
        base_channels: 32,
        batch_size: 4,
        seed: 5,
        ..RunConfig::default()
    }
}

fn analytic_oracles() -> Check {
    let ln2 = 2f64.ln();
    let ln4 = 4f64.ln();
    let mut worst = 0f64;
    let mut close = |name: &str, got: f64, want: f64| {
        let err = (got - want).abs();
        worst = worst.max(err);
        ensure(err <= 1e-6, format!("{name} = {got}, expected {want}"))
    };
    close("mask_reg(0.5)", value(&Array::full(&[3, 1, 8, 8], 0.5), mask_reg), ln2)?;
    close("mask_reg(1)", value(&Array::full(&[3, 1, 8, 8], 1.0), mask_reg), 0.1)?;
    let q = Array::full(&[5, 4], 0.25);
    close("info_loss(uniform, 4)", value(&q, |v| info_loss(v, &[0, 1, 2, 3, 1]).unwrap()), ln4)?;
    for y in [2usize, 4, 8, 12] {
        let q = Array::full(&[6, y], 1.0 / y as f64);
        close(&format!("entropy_reg(uniform, {y})"), value(&q, entropy_reg), (y as f64).ln())?;
    }
    let g = Graph::<f64>::no_grad();
    let h = hinge_d(g.constant(Array::zeros(&[4])), g.constant(Array::zeros(&[4]))).item();
    ensure(h == 2.0, format!("hinge_d(0, 0) = {h}"))?;
    Ok(format!("max error {worst:.1e}, hinge_d(0,0) = 2"))
}

fn gradient_checks() -> Check {
    type Loss = Box<dyn for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Var<'g, f64>>;
    let simplex = |b: usize, y: usize, seed: u64| {
        let raw = uniform(&[b, y], 0.05, 1.0, seed);
        Array::from_fn(&[b, y], |i| raw.data()[i] / raw.data()[i / y * y..(i / y + 1) * y].iter().sum::<f64>())
    };
    let off_kink = |n: usize, seed: u64| uniform(&[n], -2.5, 2.5, seed).map(|v| if (v.abs() - 1.0).abs() < 0.05 { v + 0.2 } else { v });
    let project = |shape: &[usize], seed: u64| uniform(shape, -1.0, 1.0, seed);

    let real = off_kink(60, 1);
    let fake = off_kink(60, 2);
    let h = uniform(&[6, 5], -1.0, 1.0, 4);
    let h2 = uniform(&[6, 5], -1.0, 1.0, 5);
    let k: Vec<usize> = (0..12).map(|i| (i * 5) % 6).collect();
    let bg = uniform(&[2, 3, 4, 4], -1.0, 1.0, 13);
    let m = uniform(&[2, 1, 4, 4], 0.05, 0.95, 14);
    let t = uniform(&[2, 3, 4, 4], -1.0, 1.0, 15);
    let params = [
        AffineParams { scale: 1.07, rotation_deg: 1.5, translate_xy: (0.05, -0.03) },
        AffineParams { scale: 0.93, rotation_deg: -12.0, translate_xy: (-0.1, 0.12) },
    ];
    let plan = Rc::new(WarpPlan::affine(&params, 6, 6, Fill::Zero));
    let wproj = project(&[2, 3, 6, 6], 12);
    let cproj = project(&[2, 3, 4, 4], 16);

    let composed = move |which: usize| -> Loss {
        let (bg, m, t, p) = (bg.clone(), m.clone(), t.clone(), cproj.clone());
        Box::new(move |g, v| {
            let c = |a: &Array<f64>| g.constant(a.clone());
            let out = match which {
                0 => compose(v, c(&m), c(&t)),
                1 => compose(c(&bg), v, c(&t)),
                _ => compose(c(&bg), c(&m), v),
            }
            .unwrap();
            out.image.mul(c(&p)).sum_all().add(out.foreground_only.mul(out.foreground_only).sum_all())
        })
    };

    let cases: Vec<(&str, Array<f64>, Loss)> = vec![
        (
            "hinge_d/real",
            real.clone(),
            Box::new({
                let f = fake.clone();
                move |g, v| hinge_d(v, g.constant(f.clone()))
            }),
        ),
        ("hinge_d/fake", fake.clone(), Box::new(move |g, v| hinge_d(g.constant(real.clone()), v))),
        ("hinge_g", fake, Box::new(|_, v| hinge_g(v))),
        ("info_loss", simplex(12, 6, 3), Box::new(move |_, v| info_loss(v, &k).unwrap())),
        (
            "img_contrastive/a",
            h.clone(),
            Box::new({
                let h2 = h2.clone();
                move |g, v| img_contrastive(v, g.constant(h2.clone()), 0.5).unwrap()
            }),
        ),
        ("img_contrastive/b", h2, Box::new(move |g, v| img_contrastive(g.constant(h.clone()), v, 0.5).unwrap())),
        ("entropy_reg", simplex(8, 5, 6), Box::new(|_, v| entropy_reg(v))),
        ("mask_reg", uniform(&[3, 1, 5, 5], 0.02, 0.98, 7), Box::new(|_, v| mask_reg(v))),
        ("mask_reg/low", uniform(&[2, 1, 4, 4], 0.01, 0.15, 8), Box::new(|_, v| mask_reg(v))),
        ("mask_reg/high", uniform(&[2, 1, 4, 4], 0.9, 0.99, 9), Box::new(|_, v| mask_reg(v))),
        ("warp", uniform(&[2, 3, 6, 6], -1.0, 1.0, 10), Box::new(move |g, v| plan.warp(v).mul(g.constant(wproj.clone())).sum_all())),
        ("compose/background", uniform(&[2, 3, 4, 4], -1.0, 1.0, 13), composed(0)),
        ("compose/mask", uniform(&[2, 1, 4, 4], 0.05, 0.95, 14), composed(1)),
        ("compose/texture", uniform(&[2, 3, 4, 4], -1.0, 1.0, 15), composed(2)),
    ];
    let mut worst = 0f64;
    for (i, (name, x, f)) in cases.iter().enumerate() {
        let r = check_gradient(x, &spread_coords(x.len(), 50, i), 1e-6, 1e-8, |g, v| f(g, v));
        worst = worst.max(r.max_rel_err);
        ensure(r.passes(1e-3), format!("{name}: relative error {:.2e} at {:?}", r.max_rel_err, r.worst))?;
    }
    Ok(format!("{} checks, max relative error {worst:.1e}", cases.len()))
}

fn brute_force_accuracy(t: &ContingencyTable) -> f64 {
    fn search(t: &ContingencyTable, row: usize, used: &mut Vec<bool>) -> u64 {
        if row == t.rows() {
            return 0;
        }
        let mut best = search(t, row + 1, used);
        for c in 0..t.cols() {
            if !used[c] {
                used[c] = true;
                best = best.max(t.counts[row][c] + search(t, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    search(t, 0, &mut vec![false; t.cols()]) as f64 / t.n as f64
}

fn nmi_oracle(t: &ContingencyTable) -> f64 {
    let n = t.n as f64;
    let a: Vec<f64> = t.counts.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let b: Vec<f64> = (0..t.cols()).map(|j| t.counts.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let h = |m: &[f64]| -m.iter().filter(|&&v| v > 0.0).map(|&v| v / n * (v / n).ln()).sum::<f64>();
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (a[i] * b[j])).ln();
            }
        }
    }
    let (ha, hb) = (h(&a), h(&b));
    if ha == 0.0 || hb == 0.0 {
        0.0
    } else {
        mi / (ha * hb).sqrt()
    }
}

fn brute_force_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut random_table = |rows: usize, cols: usize| {
        let counts: Vec<Vec<u64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random_range(0..20)).collect()).collect();
        let mut counts = counts;
        counts[0][0] += 1;
        ContingencyTable::from_counts(counts).unwrap()
    };
    for i in 0..200 {
        let (r, c) = (1 + i % 5, 1 + (i / 5) % 5);
        let t = random_table(r, c);
        let (got, want) = (hungarian_accuracy(&t).unwrap(), brute_force_accuracy(&t));
        ensure(got == want, format!("hungarian {got} vs exhaustive {want} on {r}x{c}"))?;
    }
    let mut worst = 0f64;
    for _ in 0..200 {
        let t = random_table(5, 5);
        let err = (nmi(&t).unwrap() - nmi_oracle(&t)).abs();
        worst = worst.max(err);
        ensure(err <= 1e-10, format!("nmi differs by {err:e}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..200 {
        let (ye, yt, n) = (rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..300));
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..ye)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..yt)).collect();
        let t = contingency(&pred, &truth, ye, yt).unwrap();
        for i in 0..ye {
            for j in 0..yt {
                let count = (0..n).filter(|&k| pred[k] == i && truth[k] == j).count() as u64;
                ensure(t.counts[i][j] == count, "contingency count mismatch")?;
            }
        }
    }
    Ok(format!("200 hungarian tables exact, nmi max error {worst:.1e}, 200 contingency tables exact"))
}

fn structural_invariants() -> Check {
    let bg = uniform(&[3, 3, 8, 8], -1.0, 1.0, 21);
    let m = uniform(&[3, 1, 8, 8], 0.0, 1.0, 22);
    let t = uniform(&[3, 3, 8, 8], -1.0, 1.0, 23);
    let g = Graph::<f64>::no_grad();
    let c = compose(g.constant(bg.clone()), g.constant(m.clone()), g.constant(t.clone())).map_err(|e| e.to_string())?;
    let img = c.image.value();
    let mut comp_err = 0f64;
    for (i, &v) in img.data().iter().enumerate() {
        let (b, p) = (i / (3 * 64), i % 64);
        let mv = m.data()[b * 64 + p];
        comp_err = comp_err.max((v - (bg.data()[i] * (1.0 - mv) + t.data()[i] * mv)).abs());
    }
    ensure(comp_err <= 4.0 * f64::EPSILON, format!("composition error {comp_err:e}"))?;

    let h = uniform(&[40, 16], -1.0, 1.0, 24).cast::<f32>();
    let l = uniform(&[8, 16], -1.0, 1.0, 25).cast::<f32>();
    let q = posterior(&h, &l, 0.1).map_err(|e| e.to_string())?;
    let row_err = q.rows().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    ensure(row_err <= 1e-5, format!("posterior row sum off by {row_err:e}"))?;
    let base = assign_embeddings(&h, &l, 0.1).map_err(|e| e.to_string())?;
    for s in [1e-3f32, 0.5, 7.0, 1e3] {
        let scaled = assign_embeddings(&h.map(|v| v * s), &l, 0.1).map_err(|e| e.to_string())?;
        ensure(scaled.cluster_ids == base.cluster_ids, format!("assignments change under scale {s}"))?;
    }

    let cfg = tiny();
    let trainer = Trainer::new(&cfg);
    let mut state = trainer.init_state();
    let data = synth_shapes(2, 4, 32, &Rng::seed_from(2)).and_then(|s| s.dataset()).map_err(|e| e.to_string())?;
    let real = data.batch(&[0, 1, 2, 3]).images().clone();
    let (g0, d0) = (state.generator.param_digest(), state.discriminator.param_digest());
    trainer.d_step(&mut state, &real).map_err(|e| e.to_string())?;
    ensure(state.generator.param_digest() == g0, "d_step changed generator parameters")?;
    ensure(state.discriminator.param_digest() != d0, "d_step left discriminator unchanged")?;
    let d1 = state.discriminator.param_digest();
    trainer.g_step(&mut state).map_err(|e| e.to_string())?;
    ensure(state.discriminator.param_digest() == d1, "g_step changed discriminator parameters")?;
    ensure(state.generator.param_digest() != g0, "g_step left generator unchanged")?;

    let bytes = checkpoint_bytes(&state).map_err(|e| e.to_string())?;
    let back = parse_checkpoint(&bytes).map_err(|e| e.to_string())?;
    ensure(back == state, "checkpoint state differs after round trip")?;
    ensure(checkpoint_bytes(&back).map_err(|e| e.to_string())? == bytes, "checkpoint bytes differ after round trip")?;
    Ok(format!("composition error {comp_err:.1e}, posterior row error {row_err:.1e}, partitions and checkpoint exact"))
}

fn policy_conformance() -> Check {
    // (scale, rotation in degrees, translation) ranges of the weak and strong policies.
    let table =
        [(PolicyName::Weak, (0.9, 1.1), (-2.0, 2.0), (-0.08, 0.08)), (PolicyName::Strong, (0.8, 1.5), (-15.0, 15.0), (-0.15, 0.15))];
    let inside = |v: f64, (lo, hi): (f64, f64)| lo <= v && v <= hi;
    for (i, (name, s, r, t)) in table.into_iter().enumerate() {
        let draws = sample_affine(&PerturbPolicy::named(name), 100_000, &mut Rng::seed_from(i as u64));
        let bad = draws
            .iter()
            .filter(|p| !(inside(p.scale, s) && inside(p.rotation_deg, r) && inside(p.translate_xy.0, t) && inside(p.translate_xy.1, t)))
            .count();
        ensure(bad == 0, format!("{name}: {bad} of 100000 draws outside the table ranges"))?;
        let spread = |f: fn(&AffineParams) -> f64, (lo, hi): (f64, f64)| {
            let (mn, mx) = draws.iter().map(f).fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
            mn < lo + 0.01 * (hi - lo) && mx > hi - 0.01 * (hi - lo)
        };
        ensure(
            spread(|p| p.scale, s) && spread(|p| p.rotation_deg, r) && spread(|p| p.translate_xy.1, t),
            format!("{name}: draws do not cover the ranges"),
        )?;
    }
    let x = uniform(&[4, 3, 32, 32], -1.0, 1.0, 31);
    let mut err = 0f64;
    for fill in [Fill::Zero, Fill::Clamp] {
        let plan = WarpPlan::affine(&[AffineParams::IDENTITY; 4], 32, 32, fill);
        err = err.max(plan.warp_array(&x).max_abs_diff(&x));
    }
    ensure(err < 1e-6, format!("identity warp error {err:e}"))?;
    Ok(format!("2x100000 draws inside ranges, identity warp error {err:.1e}"))
}

struct DeskRun {
    label: String,
    finite: bool,
    coverage: f64,
    scores: Option<Scores>,
    error: Option<String>,
    hours: f64,
}

struct Desk {
    steps: u64,
    base: usize,
    out: Option<PathBuf>,
    train: Dataset,
    eval: Dataset,
    runs: BTreeMap<String, DeskRun>,
}

impl Desk {
    fn from_env() -> Result<Self, String> {
        let env = |k: &str| std::env::var(k).ok();
        let steps = env("C3_DESK_STEPS").map_or(Ok(20_000), |v| v.parse()).map_err(|e| format!("C3_DESK_STEPS: {e}"))?;
        let base = env("C3_DESK_BASE").map_or(Ok(64), |v| v.parse()).map_err(|e| format!("C3_DESK_BASE: {e}"))?;
        let root = Rng::seed_from(2024);
        let make = |fork: u64, n: usize| synth_shapes(4, n, 64, &root.fork(fork)).and_then(|s| s.dataset()).map_err(|e| e.to_string());
        Ok(Self {
            steps,
            base,
            out: env("C3_DESK_OUT").map(PathBuf::from),
            train: make(0, 500)?,
            eval: make(1, 100)?,
            runs: BTreeMap::new(),
        })
    }

    fn config(&self, seed: u64, overcluster: usize, weights: LossWeights) -> RunConfig {
        RunConfig {
            num_clusters: 4,
            overcluster_factor: overcluster,
            image_size: 64,
            perturb_policy: PolicyName::Weak,
            loss_weights: weights,
            base_channels: self.base,
            seed,
            steps: self.steps,
            checkpoint_interval: self.steps,
            ..RunConfig::default()
        }
    }

    fn run(&mut self, label: &str, cfg: RunConfig) -> &DeskRun {
        if !self.runs.contains_key(label) {
            let r = self.execute(label, &cfg);
            self.runs.insert(label.to_string(), r);
        }
        &self.runs[label]
    }

    fn execute(&self, label: &str, cfg: &RunConfig) -> DeskRun {
        let started = Instant::now();
        let trainer = Trainer::new(cfg);
        let mut state = trainer.init_state();
        let mut log = String::new();
        let result = trainer.train(&mut state, &self.train, cfg.steps, |event| {
            if let TrainEvent::Step(s) = event {
                record(&mut log, s);
                if s.step % 100 == 0 {
                    eprintln!("  [{label}] step {} d {:.3} g {:.3} cov {:.3}", s.step, s.d_loss.total, s.g_loss.total, s.mask_coverage);
                }
            }
            Ok(())
        });
        let mut run = DeskRun { label: label.to_string(), finite: true, coverage: f64::NAN, scores: None, error: None, hours: 0.0 };
        if let Err(e) = result {
            run.finite = !matches!(e, c3gan::Error::Divergence { .. });
            run.error = Some(e.to_string());
        } else {
            run.coverage = trainer.mask_coverage(&state, 256, 99).unwrap_or(f64::NAN);
            let model = DiscriminatorEmbedder { discriminator: trainer.discriminator(), params: &state.discriminator };
            let l = trainer.discriminator().centroid_matrix(&state.discriminator).l;
            match evaluate(&self.eval, &model, &l, cfg.temperature, 50) {
                Ok((_, s)) => run.scores = Some(s),
                Err(e) => run.error = Some(e.to_string()),
            }
        }
        run.hours = started.elapsed().as_secs_f64() / 3600.0;
        eprintln!("  [{label}] {}", describe(&run));
        if let Some(dir) = &self.out {
            let _ = std::fs::create_dir_all(dir);
            let _ = std::fs::write(dir.join(format!("{label}.log.jsonl")), &log);
            let summary = serde_json::json!({
                "label": label, "steps": cfg.steps, "base_channels": cfg.base_channels, "finite": run.finite,
                "coverage": run.coverage, "scores": run.scores, "error": run.error, "hours": run.hours,
            });
            let _ = std::fs::write(dir.join(format!("{label}.json")), summary.to_string());
        }
        run
    }
}

fn record(log: &mut String, s: &StepLog) {
    if let Ok(line) = serde_json::to_string(s) {
        let _ = writeln!(log, "{line}");
    }
}

fn describe(r: &DeskRun) -> String {
    let scores = r.scores.as_ref().map_or("no scores".to_string(), |s| format!("acc {:.3} nmi {:.3}", s.acc, s.nmi));
    let err = r.error.as_ref().map_or(String::new(), |e| format!(", error: {e}"));
    format!("{}: {scores}, coverage {:.3}, {:.2} h{err}", r.label, r.coverage, r.hours)
}

fn acc(r: &DeskRun) -> f64 {
    r.scores.as_ref().map_or(f64::NAN, |s| s.acc)
}

fn desk_end_to_end(desk: &mut Desk) -> Check {
    let mut lines = Vec::new();
    for seed in 0..3 {
        let cfg = desk.config(seed, 2, LossWeights::default());
        lines.push(describe(desk.run(&format!("seed{seed}"), cfg)));
    }
    let ablated = LossWeights { info: 0.0, info_fg: 0.0, ..LossWeights::default() };
    let cfg = desk.config(0, 2, ablated);
    lines.push(describe(desk.run("seed0_no_info", cfg)));

    let seeds: Vec<&DeskRun> = (0..3).map(|s| &desk.runs[&format!("seed{s}")]).collect();
    let ablation = &desk.runs["seed0_no_info"];
    let summary = format!("{} steps, base {}: {}", desk.steps, desk.base, lines.join("; "));
    let mut all = seeds.iter().copied().chain([ablation]);
    let passing = seeds.iter().filter(|r| acc(r) >= 0.60).count();
    let failures: Vec<String> = [
        (all.clone().all(|r| r.finite), "(a) non-finite loss".to_string()),
        (all.all(|r| r.error.is_none()), "run failed".to_string()),
        (seeds.iter().all(|r| (0.1..=0.9).contains(&r.coverage)), "(b) mask coverage outside [0.1, 0.9]".to_string()),
        (passing >= 2, format!("(c) {passing}/3 seeds reach Acc >= 0.60")),
        (acc(ablation) < acc(seeds[0]), "(d) ablation Acc not lower".to_string()),
    ]
    .into_iter()
    .filter_map(|(ok, msg)| (!ok).then_some(msg))
    .collect();
    ensure(failures.is_empty(), format!("{}; {summary}", failures.join(", ")))?;
    Ok(summary)
}

fn overclustering_sweep(desk: &mut Desk) -> Check {
    let mut lines = Vec::new();
    for factor in [1usize, 2, 3] {
        let label = if factor == 2 { "seed0".to_string() } else { format!("seed0_yeff{}", 4 * factor) };
        let cfg = desk.config(0, factor, LossWeights::default());
        let r = desk.run(&label, cfg);
        let s = r.scores.as_ref().ok_or_else(|| format!("Y_eff {}: {}", 4 * factor, describe(r)))?;
        ensure(s.acc.is_finite() && s.nmi.is_finite(), format!("Y_eff {}: non-finite scores", 4 * factor))?;
        lines.push(format!("Y_eff {}: acc {:.3} nmi {:.3}", s.y_eff, s.acc, s.nmi));
    }
    Ok(lines.join("; "))
}

fn main() {
    let full = std::env::var("C3_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let mut failed = 0;
    let mut report = |id: u32, name: &str, budget: Option<Duration>, f: &mut dyn FnMut() -> Check| {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(&mut *f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = started.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if took > b => Err(format!("took {took:.1?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {id} [{name}]: PASS ({detail}; {took:.2?})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} [{name}]: FAIL ({detail}; {took:.2?})");
            }
        }
    };
    report(1, "analytic loss oracles", Some(Duration::from_secs(1)), &mut analytic_oracles);
    report(2, "gradient checks", Some(Duration::from_secs(60)), &mut gradient_checks);
    report(3, "brute-force metric oracles", Some(Duration::from_secs(30)), &mut brute_force_oracles);
    report(4, "structural invariants", Some(Duration::from_secs(60)), &mut structural_invariants);
    report(5, "affine policy conformance", Some(Duration::from_secs(30)), &mut policy_conformance);
    if full {
        match Desk::from_env() {
            Ok(mut desk) => {
                report(6, "desk-scale end-to-end", None, &mut || desk_end_to_end(&mut desk));
                report(7, "overclustering sweep", None, &mut || overclustering_sweep(&mut desk));
            }
            Err(e) => {
                report(6, "desk-scale end-to-end", None, &mut || Err(e.clone()));
                report(7, "overclustering sweep", None, &mut || Err(e.clone()));
            }
        }
    } else {
        let note = "set C3_ACCEPTANCE_FULL=1; 6 training runs of 20000 steps, about 16 CPU-hours each at 64x64 with base 64";
        println!("criterion 6 [desk-scale end-to-end]: NOT RUN ({note})");
        println!("criterion 7 [overclustering sweep]: NOT RUN ({note})");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
