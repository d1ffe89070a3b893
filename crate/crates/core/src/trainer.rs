//! Alternating discriminator/generator optimization, step logs and
//! checkpoints.
//!
//! Loss partition per iteration:
//!
//! * discriminator step (updates `D_base`, `ψ_r`, `ψ_h`, `ψ_c`): hinge on
//!   real vs. fresh fakes, `λ0·info + λ1·info_fg` on fakes, `λ2·img_cont`
//!   on two augmented views of the real batch, `λ3·entropy` on the real
//!   posterior.
//! * generator step: `hinge_g + λ0·info + λ1·info_fg + λ4·mask` with the
//!   discriminator frozen.
//!
//! Batch-norm running statistics of each network are only updated by that
//! network's own step; the discriminator records them from real images.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use c3gan_tensor::{Array, Graph, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{LossWeights, RunConfig};
use crate::data::{augment_pair, AugmentPolicy, AugmentedPair, Dataset};
use crate::discriminator::{cosine_logits, Discriminator};
use crate::error::{invalid, Error, Result};
use crate::generator::{compose, sample_eps, ComposedImage, Generator};
use crate::losses::{entropy_reg, hinge_d, hinge_g, img_contrastive, info_loss, mask_reg, total_objective, LossReport, LossTerms};
use crate::nn::{grad_norm, Adam, Binder, Mode, ParamStore};
use crate::perturb::{sample_affine, warp, AffineParams, PerturbPolicy};
use crate::rng::{Rng, RngState};
use crate::sampling::{sample_latent, sample_noise, LatentCode};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"C3GANCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Number of fixed probe samples used for progress grids.
pub const PROBE_SIZE: usize = 16;

const TRAIN: Mode = Mode::Train { record_stats: true };
const TRAIN_NO_STATS: Mode = Mode::Train { record_stats: false };

/// Fixed latent inputs drawn once at initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub z: Array<f32>,
    pub codes: Vec<usize>,
    pub eps: Array<f32>,
}

impl Probe {
    pub fn latent_codes(&self, num_codes: usize) -> Result<Vec<LatentCode>> {
        self.codes.iter().map(|&i| LatentCode::new(i, num_codes)).collect()
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub config: RunConfig,
    pub generator: ParamStore<f32>,
    pub discriminator: ParamStore<f32>,
    pub gen_opt: Adam<f32>,
    pub disc_opt: Adam<f32>,
    pub rng: Rng,
    pub probe: Probe,
}

/// Gradient L2 norms of the two parameter groups.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradNorms {
    pub generator: f64,
    pub discriminator: f64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: u64,
    pub d_loss: LossReport,
    pub g_loss: LossReport,
    /// Mean generated mask value in the generator step.
    pub mask_coverage: f64,
    pub wall_ms: f64,
    pub grad_norm: GradNorms,
}

/// Notifications emitted by [`Trainer::train`].
pub enum TrainEvent<'a> {
    Step(&'a StepLog),
    Checkpoint(&'a TrainState),
}

/// Stochastic generator inputs of one step.
#[derive(Clone, Debug)]
pub struct GeneratorInputs {
    pub z: Array<f32>,
    pub codes: Vec<LatentCode>,
    pub eps: Array<f32>,
    pub affine: Vec<AffineParams>,
}

impl GeneratorInputs {
    pub fn sample(cfg: &RunConfig, perturb: &PerturbPolicy, batch: usize, rng: &mut Rng) -> Result<Self> {
        let codes = sample_latent(cfg.effective_clusters(), batch, rng)?;
        let z = sample_noise(cfg.d_z, batch, rng)?;
        let eps = sample_eps(batch, cfg.d_c, rng);
        let affine = sample_affine(perturb, batch, rng);
        Ok(Self { z, codes, eps, affine })
    }

    fn indices(&self) -> Vec<usize> {
        self.codes.iter().map(LatentCode::index).collect()
    }
}

/// Generator-side loss terms on the tape.
pub struct GeneratorTerms<'g> {
    pub adv: Var<'g, f32>,
    pub info: Option<Var<'g, f32>>,
    pub info_fg: Option<Var<'g, f32>>,
    pub mask: Var<'g, f32>,
    pub mask_coverage: f64,
}

impl<'g> GeneratorTerms<'g> {
    /// `adv + Σ λ·term` on the tape.
    pub fn weighted_total(&self, w: &LossWeights) -> Var<'g, f32> {
        let mut total = self.adv;
        for (term, lambda) in [(self.info, w.info), (self.info_fg, w.info_fg), (Some(self.mask), w.mask)] {
            if let Some(t) = term {
                if lambda != 0.0 {
                    total = total.add(t.scale(lambda as f32));
                }
            }
        }
        total
    }

    /// Scalar values of the terms; skipped terms are zero.
    pub fn loss_terms(&self) -> LossTerms {
        let v = |t: Option<Var<'g, f32>>| t.map_or(0.0, |t| t.item() as f64);
        LossTerms { adv_g: v(Some(self.adv)), info: v(self.info), info_fg: v(self.info_fg), mask: v(Some(self.mask)), ..Default::default() }
    }
}

/// Networks and policies of a run; stateless apart from the configuration.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: RunConfig,
    generator: Generator,
    discriminator: Discriminator,
    perturb: PerturbPolicy,
    augment: AugmentPolicy,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Self {
        let perturb = PerturbPolicy::named(config.perturb_policy);
        Self {
            config: config.clone(),
            generator: Generator::new(config),
            discriminator: Discriminator::new(config),
            perturb,
            augment: AugmentPolicy::new(perturb),
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    /// Replaces the augmentation used for the contrastive views.
    pub fn with_augment(mut self, augment: AugmentPolicy) -> Self {
        self.augment = augment;
        self
    }

    /// Fresh parameters, optimizers, probe batch and training generator.
    pub fn init_state(&self) -> TrainState {
        let cfg = &self.config;
        let mut root = Rng::seed_from(cfg.seed);
        let generator = self.generator.init(&mut root.split());
        let discriminator = self.discriminator.init(&mut root.split());
        let mut probe_rng = root.split();
        let y = cfg.effective_clusters();
        let probe = Probe {
            z: sample_noise(cfg.d_z, PROBE_SIZE, &mut probe_rng).expect("d_z >= 1"),
            codes: (0..PROBE_SIZE).map(|i| i % y).collect(),
            eps: sample_eps(PROBE_SIZE, cfg.d_c, &mut probe_rng),
        };
        let opt = cfg.optimizer;
        TrainState {
            step: 0,
            epoch: 0,
            config: cfg.clone(),
            generator,
            discriminator,
            gen_opt: Adam::new(opt.learning_rate, opt.beta1, opt.beta2),
            disc_opt: Adam::new(opt.learning_rate, opt.beta1, opt.beta2),
            rng: root.split(),
            probe,
        }
    }

    fn fake_images<'g>(&self, gb: &Binder<'g, '_, f32>, inputs: &GeneratorInputs) -> Result<(ComposedImage<'g, f32>, Var<'g, f32>)> {
        let g = gb.graph();
        let (parts, _) = self.generator.forward(gb, g.constant(inputs.z.clone()), &inputs.codes, g.constant(inputs.eps.clone()));
        let (wm, wt) = warp(parts.mask, parts.texture, &inputs.affine)?;
        Ok((compose(parts.background, wm, wt)?, parts.mask))
    }

    /// Discriminator step with inputs drawn from the state's generator.
    pub fn d_step(&self, state: &mut TrainState, real: &Array<f32>) -> Result<(LossReport, f64)> {
        let inputs = GeneratorInputs::sample(&self.config, &self.perturb, real.dim(0), &mut state.rng)?;
        let views = if self.config.loss_weights.img_cont != 0.0 { Some(augment_pair(real, &self.augment, &mut state.rng)?) } else { None };
        self.d_step_with(state, real, &inputs, views.as_ref())
    }

    /// Discriminator step with explicit fakes' inputs and real views.
    pub fn d_step_with(
        &self,
        state: &mut TrainState,
        real: &Array<f32>,
        inputs: &GeneratorInputs,
        views: Option<&AugmentedPair>,
    ) -> Result<(LossReport, f64)> {
        let cfg = &self.config;
        let w = cfg.loss_weights;
        let tau = cfg.temperature;
        self.discriminator.check_input(real.shape())?;

        let (fake, fake_fg) = {
            let g = Graph::no_grad();
            let gb = Binder::frozen(&g, &state.generator, TRAIN_NO_STATS);
            let (c, _) = self.fake_images(&gb, inputs)?;
            ((*c.image.value()).clone(), (*c.foreground_only.value()).clone())
        };

        let g = Graph::new();
        let db = Binder::trainable(&g, &state.discriminator, TRAIN);
        let real_out = self.discriminator.forward(&db, g.constant(real.clone()));
        db.set_mode(TRAIN_NO_STATS);
        let fake_out = self.discriminator.forward(&db, g.constant(fake));
        let l = self.discriminator.centroids(&db);
        let k = inputs.indices();

        let mut terms = LossTerms::default();
        let adv = hinge_d(real_out.r, fake_out.r);
        terms.adv_d = adv.item() as f64;
        let mut total = adv;
        fn add<'g>(slot: &mut f64, v: Var<'g, f32>, lambda: f64) -> Var<'g, f32> {
            *slot = v.item() as f64;
            v.scale(lambda as f32)
        }
        if w.info != 0.0 {
            let q = cosine_logits(fake_out.h, l, tau).softmax_rows();
            total = total.add(add(&mut terms.info, info_loss(q, &k)?, w.info));
        }
        if w.info_fg != 0.0 {
            let h_fg = self.discriminator.forward(&db, g.constant(fake_fg)).h;
            let q = cosine_logits(h_fg, l, tau).softmax_rows();
            total = total.add(add(&mut terms.info_fg, info_loss(q, &k)?, w.info_fg));
        }
        if w.img_cont != 0.0 {
            let views = views.ok_or_else(|| invalid("contrastive weight is set but no augmented views were given"))?;
            let ha = self.discriminator.forward(&db, g.constant(views.view_a.clone())).h;
            let hb = self.discriminator.forward(&db, g.constant(views.view_b.clone())).h;
            total = total.add(add(&mut terms.img_cont, img_contrastive(ha, hb, tau)?, w.img_cont));
        }
        if w.entropy != 0.0 {
            let q = cosine_logits(real_out.h, l, tau).softmax_rows();
            total = total.add(add(&mut terms.entropy, entropy_reg(q), w.entropy));
        }
        let report = total_objective(&terms, &w, state.step)?;

        let grads = db.param_grads(&g.backward(total));
        let norm = grad_norm(&grads);
        if !norm.is_finite() {
            return Err(Error::Divergence { term: "discriminator gradient".into(), step: state.step });
        }
        let stats = db.take_stats();
        state.disc_opt.step(&mut state.discriminator, &grads);
        stats.apply(&mut state.discriminator);
        Ok((report, norm))
    }

    /// Generator-side terms for fixed inputs, discriminator frozen.
    pub fn generator_terms<'g>(
        &self,
        gb: &Binder<'g, '_, f32>,
        disc: &ParamStore<f32>,
        inputs: &GeneratorInputs,
    ) -> Result<GeneratorTerms<'g>> {
        let w = self.config.loss_weights;
        let tau = self.config.temperature;
        let g = gb.graph();
        let (composed, mask) = self.fake_images(gb, inputs)?;
        let db = Binder::frozen(g, disc, TRAIN_NO_STATS);
        let out = self.discriminator.forward(&db, composed.image);
        let l = self.discriminator.centroids(&db);
        let k = inputs.indices();
        let info = if w.info != 0.0 { Some(info_loss(cosine_logits(out.h, l, tau).softmax_rows(), &k)?) } else { None };
        let info_fg = if w.info_fg != 0.0 {
            let h = self.discriminator.forward(&db, composed.foreground_only).h;
            Some(info_loss(cosine_logits(h, l, tau).softmax_rows(), &k)?)
        } else {
            None
        };
        Ok(GeneratorTerms { adv: hinge_g(out.r), info, info_fg, mask: mask_reg(mask), mask_coverage: mask.value().mean() as f64 })
    }

    /// Generator gradients for fixed inputs without updating anything.
    pub fn generator_gradients(&self, state: &TrainState, inputs: &GeneratorInputs) -> Result<BTreeMap<String, Array<f32>>> {
        let g = Graph::new();
        let gb = Binder::trainable(&g, &state.generator, TRAIN_NO_STATS);
        let terms = self.generator_terms(&gb, &state.discriminator, inputs)?;
        Ok(gb.param_grads(&g.backward(terms.weighted_total(&self.config.loss_weights))))
    }

    /// Generator step; returns the report, gradient norm and mask coverage.
    pub fn g_step(&self, state: &mut TrainState) -> Result<(LossReport, f64, f64)> {
        let inputs = GeneratorInputs::sample(&self.config, &self.perturb, self.config.batch_size, &mut state.rng)?;
        self.g_step_with(state, &inputs)
    }

    pub fn g_step_with(&self, state: &mut TrainState, inputs: &GeneratorInputs) -> Result<(LossReport, f64, f64)> {
        let w = self.config.loss_weights;
        let g = Graph::new();
        let gb = Binder::trainable(&g, &state.generator, TRAIN);
        let terms = self.generator_terms(&gb, &state.discriminator, inputs)?;
        let report = total_objective(&terms.loss_terms(), &w, state.step)?;
        let grads = gb.param_grads(&g.backward(terms.weighted_total(&w)));
        let norm = grad_norm(&grads);
        if !norm.is_finite() {
            return Err(Error::Divergence { term: "generator gradient".into(), step: state.step });
        }
        let stats = gb.take_stats();
        state.gen_opt.step(&mut state.generator, &grads);
        stats.apply(&mut state.generator);
        Ok((report, norm, terms.mask_coverage))
    }

    /// Runs iterations until `state.step == until`: one discriminator and
    /// one generator update each. The real batch of iteration `s` depends
    /// only on `(seed, s)`, so resuming from a checkpoint reproduces the
    /// uninterrupted run.
    pub fn train<F>(&self, state: &mut TrainState, data: &Dataset, until: u64, mut on_event: F) -> Result<()>
    where
        F: FnMut(TrainEvent<'_>) -> Result<()>,
    {
        if data.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        let cfg = &self.config;
        if data.image_size() != cfg.image_size {
            return Err(invalid(format!("dataset images are {}², model expects {}²", data.image_size(), cfg.image_size)));
        }
        while state.step < until {
            let started = Instant::now();
            let (epoch, batch) = data.batch_at(cfg.seed, state.step, cfg.batch_size)?;
            state.epoch = epoch;
            let (d_loss, d_norm) = self.d_step(state, batch.images())?;
            let (g_loss, g_norm, mask_coverage) = self.g_step(state)?;
            let log = StepLog {
                step: state.step,
                epoch,
                d_loss,
                g_loss,
                mask_coverage,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
                grad_norm: GradNorms { generator: g_norm, discriminator: d_norm },
            };
            state.step += 1;
            on_event(TrainEvent::Step(&log))?;
            if state.step.is_multiple_of(cfg.checkpoint_interval.max(1)) || state.step == until {
                on_event(TrainEvent::Checkpoint(state))?;
            }
        }
        Ok(())
    }

    /// Mean mask value over `n` inference-mode samples.
    pub fn mask_coverage(&self, state: &TrainState, n: usize, seed: u64) -> Result<f64> {
        let cfg = &self.config;
        let mut rng = Rng::seed_from(seed);
        let codes = sample_latent(cfg.effective_clusters(), n, &mut rng)?;
        let z = sample_noise(cfg.d_z, n, &mut rng)?;
        let eps = sample_eps(n, cfg.d_c, &mut rng);
        Ok(self.generator.render(&state.generator, &z, &codes, &eps)?.mask.mean() as f64)
    }

    /// Errors naming every parameter whose shape differs from this model.
    pub fn check_compatible(&self, state: &TrainState) -> Result<()> {
        let mut rng = Rng::seed_from(0);
        let expected_d: ParamStore<f32> = self.discriminator.init(&mut rng);
        let expected_g: ParamStore<f32> = self.generator.init(&mut rng);
        let mut bad = Vec::new();
        for (group, want, have) in [("discriminator", &expected_d, &state.discriminator), ("generator", &expected_g, &state.generator)] {
            let w_all = want.params().iter().chain(want.buffers());
            for (name, w) in w_all {
                let h = have.params().get(name).or_else(|| have.buffers().get(name));
                match h {
                    None => bad.push(format!("{group} {name} missing")),
                    Some(h) if h.shape() != w.shape() => {
                        bad.push(format!("{group} {name} has shape {:?}, model expects {:?}", h.shape(), w.shape()))
                    }
                    _ => {}
                }
            }
            let known = want.params().len() + want.buffers().len();
            if have.params().len() + have.buffers().len() != known {
                bad.push(format!("{group} has unexpected parameters"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Incompatible(bad.join("; ")))
        }
    }
}

/// Appends one JSON line per record.
pub struct JsonLines<W: std::io::Write> {
    out: W,
}

impl<W: std::io::Write> JsonLines<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    step: u64,
    epoch: u64,
    rng: RngState,
    probe_codes: Vec<usize>,
    gen_adam_t: u64,
    disc_adam_t: u64,
    tensors: Vec<TensorEntry>,
}

fn collect_tensors(state: &TrainState) -> Vec<(String, &Array<f32>)> {
    let mut out = Vec::new();
    for (group, store, opt) in [("generator", &state.generator, &state.gen_opt), ("discriminator", &state.discriminator, &state.disc_opt)] {
        out.extend(store.params().iter().map(|(n, a)| (format!("{group}/param/{n}"), a)));
        out.extend(store.buffers().iter().map(|(n, a)| (format!("{group}/buffer/{n}"), a)));
        out.extend(opt.m.iter().map(|(n, a)| (format!("{group}/adam_m/{n}"), a)));
        out.extend(opt.v.iter().map(|(n, a)| (format!("{group}/adam_v/{n}"), a)));
    }
    out.push(("probe/z".into(), &state.probe.z));
    out.push(("probe/eps".into(), &state.probe.eps));
    out
}

/// Serializes a state: magic, version, JSON header, little-endian `f32`
/// tensor data, then a SHA-256 of everything before it.
pub fn checkpoint_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let tensors = collect_tensors(state);
    let header = Header {
        config: state.config.clone(),
        step: state.step,
        epoch: state.epoch,
        rng: state.rng.state(),
        probe_codes: state.probe.codes.clone(),
        gen_adam_t: state.gen_opt.t,
        disc_adam_t: state.disc_opt.t,
        tensors: tensors.iter().map(|(n, a)| TensorEntry { name: n.clone(), shape: a.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, a) in &tensors {
        for v in a.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(state)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses a checkpoint; the whole file is verified before anything is
/// decoded.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    const PREFIX: usize = 8 + 4 + 8;
    if bytes.len() < PREFIX + 32 {
        return Err(Error::Checksum);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(Error::Checksum);
    }
    if &body[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Incompatible("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let json = body.get(PREFIX..PREFIX + header_len).ok_or(Error::Checksum)?;
    let header: Header = serde_json::from_slice(json)?;
    let mut data = &body[PREFIX + header_len..];

    let opt = header.config.optimizer;
    let mut state = TrainState {
        step: header.step,
        epoch: header.epoch,
        config: header.config.clone(),
        generator: ParamStore::new(),
        discriminator: ParamStore::new(),
        gen_opt: Adam::new(opt.learning_rate, opt.beta1, opt.beta2),
        disc_opt: Adam::new(opt.learning_rate, opt.beta1, opt.beta2),
        rng: Rng::from_state(&header.rng),
        probe: Probe { z: Array::zeros(&[0]), codes: header.probe_codes, eps: Array::zeros(&[0]) },
    };
    state.gen_opt.t = header.gen_adam_t;
    state.disc_opt.t = header.disc_adam_t;
    for entry in header.tensors {
        let len: usize = entry.shape.iter().product();
        let raw = data.get(..len * 4).ok_or_else(|| Error::Incompatible(format!("tensor {} exceeds file", entry.name)))?;
        data = &data[len * 4..];
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let array = Array::new(&entry.shape, values);
        let (group, rest) = entry.name.split_once('/').unwrap_or((entry.name.as_str(), ""));
        let (kind, name) = rest.split_once('/').unwrap_or((rest, ""));
        let (store, opt) = match group {
            "generator" => (&mut state.generator, &mut state.gen_opt),
            "discriminator" => (&mut state.discriminator, &mut state.disc_opt),
            "probe" => {
                match kind {
                    "z" => state.probe.z = array,
                    "eps" => state.probe.eps = array,
                    _ => return Err(Error::Incompatible(format!("unknown tensor {}", entry.name))),
                }
                continue;
            }
            _ => return Err(Error::Incompatible(format!("unknown tensor {}", entry.name))),
        };
        match kind {
            "param" => store.insert_param(name, array),
            "buffer" => store.insert_buffer(name, array),
            "adam_m" => {
                opt.m.insert(name.to_string(), array);
            }
            "adam_v" => {
                opt.v.insert(name.to_string(), array);
            }
            _ => return Err(Error::Incompatible(format!("unknown tensor {}", entry.name))),
        }
    }
    if !data.is_empty() {
        return Err(Error::Incompatible("trailing bytes after tensor data".into()));
    }
    Trainer::new(&state.config).check_compatible(&state)?;
    Ok(state)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    parse_checkpoint(&fs::read(path)?)
}

/// Loads a checkpoint and checks it fits the model described by `config`.
pub fn load_checkpoint_for(path: &Path, config: &RunConfig) -> Result<TrainState> {
    let state = load_checkpoint(path)?;
    Trainer::new(config).check_compatible(&state)?;
    Ok(state)
}
