//! The four translation losses and the alternating optimization of the
//! generators `{G, F}` against the discriminators `{D_A, D_B}`.
//!
//! `G` maps domain A to domain B and is judged by `D_B`; `F` maps B to A and
//! is judged by `D_A`. Generator updates descend
//! `adv_AtoB + adv_BtoA + lambda * cyc + gamma * edge`; discriminator updates
//! descend their own adversarial loss on real images and pooled fakes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::edgeops::{soft_edges_tensor, CannyParams};
use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::networks::{Architecture, DiscriminatorSpec, ForwardOutput, GeneratorSpec, ModelBundle};
use crate::ops::{grayscale, mean_abs_diff, mean_sq_to, scalar};

/// Probability clamp for the log-form adversarial loss.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// `E[log D(real)] + E[log(1 - D(fake))]`, probabilities clamped to `[eps, 1 - eps]`.
    Log,
    /// Discriminator loss `(E[(D(real) - 1)^2] + E[D(fake)^2]) / 2`.
    LeastSquares,
}

/// Adversarial loss over flattened score maps.
///
/// The log form takes discriminator probabilities and returns the value of
/// the min-max game; the least-squares form takes raw scores and returns the
/// discriminator's squared-error loss.
pub fn adversarial_loss(real: &[f64], fake: &[f64], form: AdversarialForm) -> f64 {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    match form {
        AdversarialForm::Log => {
            let clamp = |p: f64| p.clamp(LOG_EPS, 1.0 - LOG_EPS);
            mean(real, &|p| clamp(p).ln()) + mean(fake, &|p| (1.0 - clamp(p)).ln())
        }
        AdversarialForm::LeastSquares => {
            0.5 * (mean(real, &|s| (s - 1.0).powi(2)) + mean(fake, &|s| s * s))
        }
    }
}

/// Log-form game value on probability tensors.
pub fn log_gan_value(real_prob: &Tensor, fake_prob: &Tensor) -> Result<Tensor> {
    let real = real_prob.clamp(LOG_EPS, 1.0 - LOG_EPS)?.log()?.mean_all()?;
    let fake = fake_prob
        .clamp(LOG_EPS, 1.0 - LOG_EPS)?
        .affine(-1.0, 1.0)?
        .log()?
        .mean_all()?;
    Ok((real + fake)?)
}

pub fn ls_discriminator_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    Ok(((mean_sq_to(real_scores, 1.0)? + mean_sq_to(fake_scores, 0.0)?)? * 0.5)?)
}

pub fn ls_generator_loss(fake_scores: &Tensor) -> Result<Tensor> {
    mean_sq_to(fake_scores, 1.0)
}

fn check_pair(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `mean|x_rec - x| + mean|y_rec - y|` on tensors of any matching shape.
pub fn cycle_loss_tensor(x: &Tensor, x_rec: &Tensor, y: &Tensor, y_rec: &Tensor) -> Result<Tensor> {
    check_pair(x, x_rec, "cycle loss x")?;
    check_pair(y, y_rec, "cycle loss y")?;
    Ok((mean_abs_diff(x_rec, x)? + mean_abs_diff(y_rec, y)?)?)
}

/// Soft-edge L1 between originals and reconstructions, all `(N, C, H, W)` in `[0, 1]`.
pub fn edge_loss_tensor(
    x: &Tensor,
    x_rec: &Tensor,
    y: &Tensor,
    y_rec: &Tensor,
    p: &CannyParams,
) -> Result<Tensor> {
    check_pair(x, x_rec, "edge loss x")?;
    check_pair(y, y_rec, "edge loss y")?;
    let e = |t: &Tensor| soft_edges_tensor(&grayscale(t)?, p);
    Ok((mean_abs_diff(&e(x_rec)?, &e(x)?)? + mean_abs_diff(&e(y_rec)?, &e(y)?)?)?)
}

fn unit_tensors(images: [&Image; 4]) -> Result<[Tensor; 4]> {
    let t = |im: &Image| im.to_unit_tensor(DType::F64, &Device::Cpu);
    Ok([t(images[0])?, t(images[1])?, t(images[2])?, t(images[3])?])
}

pub fn cycle_loss(x: &Image, x_rec: &Image, y: &Image, y_rec: &Image) -> Result<f64> {
    let [x, xr, y, yr] = unit_tensors([x, x_rec, y, y_rec])?;
    scalar(&cycle_loss_tensor(&x, &xr, &y, &yr)?)
}

pub fn edge_loss(x: &Image, x_rec: &Image, y: &Image, y_rec: &Image, p: &CannyParams) -> Result<f64> {
    let [x, xr, y, yr] = unit_tensors([x, x_rec, y, y_rec])?;
    scalar(&edge_loss_tensor(&x, &xr, &y, &yr, p)?)
}

/// The four terms before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv_a_to_b: f64,
    pub adv_b_to_a: f64,
    pub cyc: f64,
    pub edge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_a_to_b: f64,
    pub adv_b_to_a: f64,
    pub cyc: f64,
    pub edge: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("adv_AtoB", self.adv_a_to_b),
            ("adv_BtoA", self.adv_b_to_a),
            ("cyc", self.cyc),
            ("edge", self.edge),
            ("total", self.total),
        ]
    }
}

/// `total = adv_AtoB + adv_BtoA + lambda * cyc + gamma * edge`.
pub fn total_objective(c: &LossComponents, cfg: &GanConfig) -> LossBreakdown {
    LossBreakdown {
        adv_a_to_b: c.adv_a_to_b,
        adv_b_to_a: c.adv_b_to_a,
        cyc: c.cyc,
        edge: c.edge,
        total: c.adv_a_to_b + c.adv_b_to_a + cfg.lambda_cyc * c.cyc + cfg.gamma_edge * c.edge,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub lambda_cyc: f64,
    pub gamma_edge: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub canny: CannyParams,
    pub use_least_squares_adv: bool,
    /// Historical fakes kept for discriminator updates; 0 disables the pool.
    pub pool_size: usize,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            lambda_cyc: 10.0,
            gamma_edge: 3.0,
            epochs: 200,
            batch_size: 1,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            canny: CannyParams::default(),
            use_least_squares_adv: true,
            pool_size: 50,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cyc >= 0.0 && self.gamma_edge >= 0.0) {
            return Err(Error::Config("lambda_cyc and gamma_edge must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.generator.input_channels != self.discriminator.input_channels {
            return Err(Error::Config("generator and discriminator channel counts differ".into()));
        }
        self.canny.validate()?;
        Architecture::Generator(self.generator.clone()).validate()?;
        Architecture::Discriminator(self.discriminator.clone()).validate()
    }

    pub fn form(&self) -> AdversarialForm {
        if self.use_least_squares_adv {
            AdversarialForm::LeastSquares
        } else {
            AdversarialForm::Log
        }
    }

    /// Constant rate for the first half of training, then linear decay towards zero.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let keep = self.epochs - self.epochs / 2;
        let decay = self.epochs / 2;
        let past = (epoch + 1).saturating_sub(keep);
        self.learning_rate * (1.0 - past as f64 / (decay + 1) as f64)
    }
}

/// Which generator objective a step optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorObjective {
    /// Adversarial plus cycle terms only; the edge term is measured but not optimized.
    Vanilla,
    /// All four terms, the edge term weighted by `gamma_edge`.
    EdgePreserving,
}

/// Buffer of previously generated images replayed to the discriminator.
#[derive(Debug)]
struct ImagePool {
    capacity: usize,
    images: Vec<Tensor>,
}

impl ImagePool {
    fn new(capacity: usize) -> Self {
        Self { capacity, images: Vec::new() }
    }

    fn query(&mut self, batch: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        if self.capacity == 0 {
            return Ok(batch.clone());
        }
        let n = batch.dim(0)?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let img = batch.narrow(0, i, 1)?;
            if self.images.len() < self.capacity {
                self.images.push(img.clone());
                out.push(img);
            } else if rng.random::<f64>() < 0.5 {
                let j = rng.random_range(0..self.capacity);
                out.push(std::mem::replace(&mut self.images[j], img));
            } else {
                out.push(img);
            }
        }
        Ok(Tensor::cat(&out, 0)?)
    }
}

/// Per-step or per-epoch record.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepRecord {
    pub objective: LossBreakdown,
    /// Log-form game values, reported whatever form drives training.
    pub log_adv_a_to_b: f64,
    pub log_adv_b_to_a: f64,
    pub disc_a: f64,
    pub disc_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    #[serde(flatten)]
    pub mean: StepRecord,
}

/// Output of one generator update.
pub struct GeneratorStep {
    pub components: LossComponents,
    pub fake_a: Tensor,
    pub fake_b: Tensor,
    pub fake_a_scores: Tensor,
    pub fake_b_scores: Tensor,
}

/// Owns the four networks and their optimizers.
pub struct CycleGanTrainer {
    pub cfg: GanConfig,
    pub g: ModelBundle,
    pub f: ModelBundle,
    pub d_a: ModelBundle,
    pub d_b: ModelBundle,
    opt_gen: AdamW,
    opt_disc: AdamW,
    pool_a: ImagePool,
    pool_b: ImagePool,
    rng: ChaCha8Rng,
}

fn adam(vars: Vec<candle_core::Var>, cfg: &GanConfig) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

fn to_prob(scores: &Tensor, form: AdversarialForm) -> Result<Tensor> {
    match form {
        AdversarialForm::LeastSquares => Ok(scores.clone()),
        AdversarialForm::Log => Ok(candle_nn::ops::sigmoid(scores)?),
    }
}

fn unit(t: &Tensor) -> Result<Tensor> {
    Ok(t.affine(0.5, 0.5)?)
}

fn finite(term: &'static str, v: f64, epoch: usize, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term, epoch, step })
    }
}

impl CycleGanTrainer {
    pub fn new(cfg: GanConfig) -> Result<Self> {
        cfg.validate()?;
        let gen = Architecture::Generator(cfg.generator.clone());
        let disc = Architecture::Discriminator(cfg.discriminator.clone());
        let g = ModelBundle::build(gen.clone(), derive_seed(cfg.seed, 1))?;
        let f = ModelBundle::build(gen, derive_seed(cfg.seed, 2))?;
        let d_a = ModelBundle::build(disc.clone(), derive_seed(cfg.seed, 3))?;
        let d_b = ModelBundle::build(disc, derive_seed(cfg.seed, 4))?;
        let opt_gen = adam(g.vars().into_iter().chain(f.vars()).collect(), &cfg)?;
        let opt_disc = adam(d_a.vars().into_iter().chain(d_b.vars()).collect(), &cfg)?;
        Ok(Self {
            pool_a: ImagePool::new(cfg.pool_size),
            pool_b: ImagePool::new(cfg.pool_size),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 5)),
            cfg,
            g,
            f,
            d_a,
            d_b,
            opt_gen,
            opt_disc,
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt_gen.set_learning_rate(lr);
        self.opt_disc.set_learning_rate(lr);
    }

    /// Generator loss graph for one batch; `real_*` are `(N, C, H, W)` in `[-1, 1]`.
    fn generator_graph(
        &self,
        real_a: &Tensor,
        real_b: &Tensor,
        objective: GeneratorObjective,
    ) -> Result<(Tensor, GeneratorStep)> {
        let fake_b = self.g.forward(real_a)?;
        let rec_a = self.f.forward(&fake_b)?;
        let fake_a = self.f.forward(real_b)?;
        let rec_b = self.g.forward(&fake_a)?;
        let sb = self.d_b.forward(&fake_b)?;
        let sa = self.d_a.forward(&fake_a)?;
        let form = self.cfg.form();
        let (adv_ab, adv_ba) = match form {
            AdversarialForm::LeastSquares => (ls_generator_loss(&sb)?, ls_generator_loss(&sa)?),
            AdversarialForm::Log => {
                let real_pb = to_prob(&self.d_b.forward(real_b)?.detach(), form)?;
                let real_pa = to_prob(&self.d_a.forward(real_a)?.detach(), form)?;
                (
                    log_gan_value(&real_pb, &to_prob(&sb, form)?)?,
                    log_gan_value(&real_pa, &to_prob(&sa, form)?)?,
                )
            }
        };
        let cyc = cycle_loss_tensor(real_a, &rec_a, real_b, &rec_b)?;
        let mut total = ((&adv_ab + &adv_ba)? + (&cyc * self.cfg.lambda_cyc)?)?;
        let edge = match objective {
            GeneratorObjective::EdgePreserving => {
                let e = edge_loss_tensor(
                    &unit(real_a)?,
                    &unit(&rec_a)?,
                    &unit(real_b)?,
                    &unit(&rec_b)?,
                    &self.cfg.canny,
                )?;
                total = (total + (&e * self.cfg.gamma_edge)?)?;
                scalar(&e)?
            }
            GeneratorObjective::Vanilla => scalar(&edge_loss_tensor(
                &unit(real_a)?,
                &unit(&rec_a.detach())?,
                &unit(real_b)?,
                &unit(&rec_b.detach())?,
                &self.cfg.canny,
            )?)?,
        };
        let components = LossComponents {
            adv_a_to_b: scalar(&adv_ab)?,
            adv_b_to_a: scalar(&adv_ba)?,
            cyc: scalar(&cyc)?,
            edge,
        };
        Ok((
            total,
            GeneratorStep {
                components,
                fake_a: fake_a.detach(),
                fake_b: fake_b.detach(),
                fake_a_scores: sa.detach(),
                fake_b_scores: sb.detach(),
            },
        ))
    }

    /// Gradients of the generator objective with respect to `G` then `F`
    /// parameters, in declaration order. Nothing is updated.
    pub fn generator_gradients(
        &self,
        real_a: &Tensor,
        real_b: &Tensor,
        objective: GeneratorObjective,
    ) -> Result<Vec<Tensor>> {
        let (total, _) = self.generator_graph(real_a, real_b, objective)?;
        let grads = total.backward()?;
        self.g
            .vars()
            .iter()
            .chain(self.f.vars().iter())
            .map(|v| {
                grads
                    .get(v.as_tensor())
                    .cloned()
                    .map_or_else(|| Ok(v.as_tensor().zeros_like()?), Ok)
            })
            .collect()
    }

    /// Gradient of `gamma * edge` alone with respect to every generator parameter.
    pub fn edge_term_gradients(&self, real_a: &Tensor, real_b: &Tensor) -> Result<Vec<Tensor>> {
        let rec_a = self.f.forward(&self.g.forward(real_a)?)?;
        let rec_b = self.g.forward(&self.f.forward(real_b)?)?;
        let e = edge_loss_tensor(&unit(real_a)?, &unit(&rec_a)?, &unit(real_b)?, &unit(&rec_b)?, &self.cfg.canny)?;
        let grads = (e * self.cfg.gamma_edge)?.backward()?;
        self.g
            .vars()
            .iter()
            .chain(self.f.vars().iter())
            .map(|v| {
                grads
                    .get(v.as_tensor())
                    .cloned()
                    .map_or_else(|| Ok(v.as_tensor().zeros_like()?), Ok)
            })
            .collect()
    }

    /// Unweighted gradient of each loss term: the generator terms over `G`
    /// then `F` parameters, the discriminator terms over `D_A` then `D_B`.
    pub fn loss_term_gradients(&self, real_a: &Tensor, real_b: &Tensor) -> Result<Vec<(&'static str, Vec<Tensor>)>> {
        let fake_b = self.g.forward(real_a)?;
        let rec_a = self.f.forward(&fake_b)?;
        let fake_a = self.f.forward(real_b)?;
        let rec_b = self.g.forward(&fake_a)?;
        let form = self.cfg.form();
        let adv = |d: &ModelBundle, real: &Tensor, fake: &Tensor| -> Result<Tensor> {
            let sf = d.forward(fake)?;
            match form {
                AdversarialForm::LeastSquares => ls_generator_loss(&sf),
                AdversarialForm::Log => {
                    log_gan_value(&to_prob(&d.forward(real)?.detach(), form)?, &to_prob(&sf, form)?)
                }
            }
        };
        let disc = |d: &ModelBundle, real: &Tensor, fake: &Tensor| -> Result<Tensor> {
            let (sr, sf) = (d.forward(real)?, d.forward(&fake.detach())?);
            match form {
                AdversarialForm::LeastSquares => ls_discriminator_loss(&sr, &sf),
                AdversarialForm::Log => Ok(log_gan_value(&to_prob(&sr, form)?, &to_prob(&sf, form)?)?.neg()?),
            }
        };
        let terms = [
            ("adv_AtoB", adv(&self.d_b, real_b, &fake_b)?, false),
            ("adv_BtoA", adv(&self.d_a, real_a, &fake_a)?, false),
            ("cyc", cycle_loss_tensor(real_a, &rec_a, real_b, &rec_b)?, false),
            (
                "edge",
                edge_loss_tensor(&unit(real_a)?, &unit(&rec_a)?, &unit(real_b)?, &unit(&rec_b)?, &self.cfg.canny)?,
                false,
            ),
            ("disc_A", disc(&self.d_a, real_a, &fake_a)?, true),
            ("disc_B", disc(&self.d_b, real_b, &fake_b)?, true),
        ];
        terms
            .into_iter()
            .map(|(name, loss, is_disc)| {
                let grads = loss.backward()?;
                let vars = if is_disc {
                    self.d_a.vars().into_iter().chain(self.d_b.vars()).collect::<Vec<_>>()
                } else {
                    self.g.vars().into_iter().chain(self.f.vars()).collect()
                };
                let g = vars
                    .iter()
                    .map(|v| grads.get(v.as_tensor()).cloned().map_or_else(|| Ok(v.as_tensor().zeros_like()?), Ok))
                    .collect::<Result<Vec<_>>>()?;
                Ok((name, g))
            })
            .collect()
    }

    pub fn generator_step(
        &mut self,
        real_a: &Tensor,
        real_b: &Tensor,
        objective: GeneratorObjective,
    ) -> Result<GeneratorStep> {
        let (total, out) = self.generator_graph(real_a, real_b, objective)?;
        let grads = total.backward()?;
        self.opt_gen.step(&grads)?;
        self.g.step += 1;
        self.f.step += 1;
        Ok(out)
    }

    /// Discriminator update; returns `(disc_A, disc_B, real_A_scores, real_B_scores)`.
    pub fn discriminator_step(
        &mut self,
        real_a: &Tensor,
        real_b: &Tensor,
        fake_a: &Tensor,
        fake_b: &Tensor,
    ) -> Result<(f64, f64, Tensor, Tensor)> {
        let fa = self.pool_a.query(fake_a, &mut self.rng)?;
        let fb = self.pool_b.query(fake_b, &mut self.rng)?;
        let form = self.cfg.form();
        let loss = |d: &ModelBundle, real: &Tensor, fake: &Tensor| -> Result<(Tensor, Tensor)> {
            let sr = d.forward(real)?;
            let sf = d.forward(fake)?;
            let l = match form {
                AdversarialForm::LeastSquares => ls_discriminator_loss(&sr, &sf)?,
                AdversarialForm::Log => log_gan_value(&to_prob(&sr, form)?, &to_prob(&sf, form)?)?.neg()?,
            };
            Ok((l, sr.detach()))
        };
        let (la, sra) = loss(&self.d_a, real_a, &fa)?;
        let (lb, srb) = loss(&self.d_b, real_b, &fb)?;
        let grads = (&la + &lb)?.backward()?;
        self.opt_disc.step(&grads)?;
        self.d_a.step += 1;
        self.d_b.step += 1;
        Ok((scalar(&la)?, scalar(&lb)?, sra, srb))
    }

    /// One alternating update: generators first, then discriminators.
    pub fn train_step(&mut self, real_a: &Tensor, real_b: &Tensor, epoch: usize, step: usize) -> Result<StepRecord> {
        let gs = self.generator_step(real_a, real_b, GeneratorObjective::EdgePreserving)?;
        let (disc_a, disc_b, sra, srb) = self.discriminator_step(real_a, real_b, &gs.fake_a, &gs.fake_b)?;
        let form = self.cfg.form();
        let log_ab = scalar(&log_gan_value(&to_prob(&srb, form)?, &to_prob(&gs.fake_b_scores, form)?)?)?;
        let log_ba = scalar(&log_gan_value(&to_prob(&sra, form)?, &to_prob(&gs.fake_a_scores, form)?)?)?;
        let objective = total_objective(&gs.components, &self.cfg);
        for (term, v) in objective.terms() {
            finite(term, v, epoch, step)?;
        }
        finite("disc_A", disc_a, epoch, step)?;
        finite("disc_B", disc_b, epoch, step)?;
        Ok(StepRecord { objective, log_adv_a_to_b: log_ab, log_adv_b_to_a: log_ba, disc_a, disc_b })
    }
}

/// Where and how often training writes artifacts.
#[derive(Debug, Clone, Default)]
pub struct GanRunOptions {
    pub output_dir: Option<PathBuf>,
    /// Save all four networks every this many epochs (and after the last one).
    pub checkpoint_every: Option<usize>,
    /// Write an input | translated | reconstructed strip every this many epochs.
    pub sample_every: Option<usize>,
}

pub struct GanOutcome {
    pub g: ModelBundle,
    pub f: ModelBundle,
    pub d_a: ModelBundle,
    pub d_b: ModelBundle,
    pub history: Vec<EpochRecord>,
}

fn uniform_dims(images: &[Image], what: &str) -> Result<(usize, usize, usize)> {
    let first = images.first().ok_or_else(|| Error::Empty(format!("domain {what}")))?;
    if let Some(bad) = images.iter().find(|im| im.dims() != first.dims()) {
        return Err(Error::DimMismatch(format!(
            "domain {what} mixes {:?} and {:?} patches",
            first.dims(),
            bad.dims()
        )));
    }
    Ok(first.dims())
}

fn mean_record(records: &[StepRecord]) -> StepRecord {
    let n = records.len() as f64;
    let mut m = StepRecord::default();
    for r in records {
        m.objective.adv_a_to_b += r.objective.adv_a_to_b / n;
        m.objective.adv_b_to_a += r.objective.adv_b_to_a / n;
        m.objective.cyc += r.objective.cyc / n;
        m.objective.edge += r.objective.edge / n;
        m.log_adv_a_to_b += r.log_adv_a_to_b / n;
        m.log_adv_b_to_a += r.log_adv_b_to_a / n;
        m.disc_a += r.disc_a / n;
        m.disc_b += r.disc_b / n;
    }
    m
}

/// Trains `G: A -> B` and `F: B -> A` on unpaired patches.
pub fn train_edgecyclegan(
    domain_a: &[Image],
    domain_b: &[Image],
    cfg: &GanConfig,
    opts: &GanRunOptions,
) -> Result<GanOutcome> {
    let dims_a = uniform_dims(domain_a, "A")?;
    let dims_b = uniform_dims(domain_b, "B")?;
    if dims_a != dims_b {
        return Err(Error::DimMismatch(format!("domain patches {dims_a:?} vs {dims_b:?}")));
    }
    if dims_a.2 != cfg.generator.input_channels {
        return Err(Error::DimMismatch(format!(
            "patches have {} channels, generator expects {}",
            dims_a.2, cfg.generator.input_channels
        )));
    }
    let mut trainer = CycleGanTrainer::new(cfg.clone())?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 6));
    let ta: Vec<Tensor> = domain_a.iter().map(|im| im.to_tensor(&Device::Cpu)).collect::<Result<_>>()?;
    let tb: Vec<Tensor> = domain_b.iter().map(|im| im.to_tensor(&Device::Cpu)).collect::<Result<_>>()?;
    let (na, nb) = (ta.len(), tb.len());
    let bs = cfg.batch_size;
    let steps = na.max(nb).div_ceil(bs);

    if let Some(dir) = &opts.output_dir {
        fs::create_dir_all(dir)?;
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        trainer.set_learning_rate(lr);
        let mut order_a: Vec<usize> = (0..na).collect();
        let mut order_b: Vec<usize> = (0..nb).collect();
        order_a.shuffle(&mut order_rng);
        order_b.shuffle(&mut order_rng);
        let mut records = Vec::with_capacity(steps);
        for s in 0..steps {
            let pick = |order: &[usize], ts: &[Tensor]| -> Result<Tensor> {
                let batch: Vec<&Tensor> = (0..bs).map(|j| &ts[order[(s * bs + j) % order.len()]]).collect();
                Ok(Tensor::cat(&batch, 0)?)
            };
            let (a, b) = (pick(&order_a, &ta)?, pick(&order_b, &tb)?);
            records.push(trainer.train_step(&a, &b, epoch, s)?);
        }
        let mut mean = mean_record(&records);
        // recombine so the weighting identity holds exactly on the means too
        let c = LossComponents {
            adv_a_to_b: mean.objective.adv_a_to_b,
            adv_b_to_a: mean.objective.adv_b_to_a,
            cyc: mean.objective.cyc,
            edge: mean.objective.edge,
        };
        mean.objective = total_objective(&c, cfg);
        log::info!(
            "gan epoch {}/{} lr {:.2e}: adv {:.4}/{:.4} cyc {:.4} edge {:.4} total {:.4}",
            epoch + 1,
            cfg.epochs,
            lr,
            c.adv_a_to_b,
            c.adv_b_to_a,
            c.cyc,
            c.edge,
            mean.objective.total
        );
        history.push(EpochRecord { epoch: epoch + 1, learning_rate: lr, mean });

        if let Some(dir) = &opts.output_dir {
            let last = epoch + 1 == cfg.epochs;
            let due = |every: Option<usize>| every.is_some_and(|k| k > 0 && ((epoch + 1) % k == 0 || last));
            if due(opts.checkpoint_every) {
                let ck = dir.join(format!("epoch_{:04}", epoch + 1));
                save_networks(&trainer, &ck)?;
            }
            if due(opts.sample_every) {
                let strip = sample_strip(&trainer.g, &trainer.f, &domain_a[0])?;
                strip.save(dir.join(format!("sample_{:04}.png", epoch + 1)))?;
            }
            write_gan_history_csv(&dir.join("history.csv"), &history)?;
        }
    }
    if let Some(dir) = &opts.output_dir {
        save_networks(&trainer, &dir.join("final"))?;
        fs::write(dir.join("history.json"), serde_json::to_string_pretty(&history)?)?;
    }
    Ok(GanOutcome { g: trainer.g, f: trainer.f, d_a: trainer.d_a, d_b: trainer.d_b, history })
}

fn save_networks(t: &CycleGanTrainer, dir: &Path) -> Result<()> {
    t.g.save(dir.join("G"))?;
    t.f.save(dir.join("F"))?;
    t.d_a.save(dir.join("D_A"))?;
    t.d_b.save(dir.join("D_B"))?;
    Ok(())
}

/// `input | G(input) | F(G(input))` side by side.
pub fn sample_strip(g: &ModelBundle, f: &ModelBundle, input: &Image) -> Result<Image> {
    let fake = translate(g, std::slice::from_ref(input))?.remove(0);
    let rec = translate(f, std::slice::from_ref(&fake))?.remove(0);
    Image::hstack(&[input, &fake, &rec])
}

/// Comma-separated history: `epoch,adv_AtoB,adv_BtoA,cyc,edge,total`.
pub fn write_gan_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "epoch,adv_AtoB,adv_BtoA,cyc,edge,total")?;
    for r in history {
        let o = &r.mean.objective;
        writeln!(out, "{},{},{},{},{},{}", r.epoch, o.adv_a_to_b, o.adv_b_to_a, o.cyc, o.edge, o.total)?;
    }
    Ok(())
}

/// Runs a generator over unit-range images and maps the output back to `[0, 1]`.
pub fn translate(gen: &ModelBundle, images: &[Image]) -> Result<Vec<Image>> {
    if !gen.architecture.is_generator() {
        return Err(Error::Config("translate needs a generator bundle".into()));
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(8) {
        match gen.forward_images(chunk)? {
            ForwardOutput::Images(v) => out.extend(v),
            _ => unreachable!("generators return images"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_form_fixed_points() {
        let half = vec![0.5; 4];
        let v = adversarial_loss(&half, &half, AdversarialForm::Log);
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((v + 1.3863).abs() < 1e-4);

        let real = vec![1.0 - LOG_EPS; 4];
        let fake = vec![LOG_EPS; 4];
        let v = adversarial_loss(&real, &fake, AdversarialForm::Log);
        assert!((v - 2.0 * (1.0 - LOG_EPS).ln()).abs() < 1e-15);
        assert!(v.abs() < 1e-6);
        // clamping keeps saturated probabilities finite
        assert!(adversarial_loss(&[0.0], &[1.0], AdversarialForm::Log).is_finite());
    }

    #[test]
    fn least_squares_fixture() {
        // (0.3^2 + 0.4^2) / 2 over a 2x2 map
        let v = adversarial_loss(&[0.7; 4], &[0.4; 4], AdversarialForm::LeastSquares);
        assert!((v - 0.125).abs() < 1e-12);
        let r = Tensor::full(0.7f64, (1, 1, 2, 2), &Device::Cpu).unwrap();
        let f = Tensor::full(0.4f64, (1, 1, 2, 2), &Device::Cpu).unwrap();
        assert!((scalar(&ls_discriminator_loss(&r, &f).unwrap()).unwrap() - 0.125).abs() < 1e-12);
        let h = Tensor::full(0.5f64, (1, 1, 2, 2), &Device::Cpu).unwrap();
        assert!((scalar(&log_gan_value(&h, &h).unwrap()).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cycle_loss_constant_offset() {
        let x = Image::filled(4, 4, 3, 0.0).unwrap();
        let xr = Image::filled(4, 4, 3, 0.1).unwrap();
        let y = Image::filled(4, 4, 3, 0.6).unwrap();
        let v = cycle_loss(&x, &xr, &y, &y).unwrap();
        assert!((v - 0.1).abs() < 1e-7);
        assert_eq!(cycle_loss(&x, &x, &y, &y).unwrap(), 0.0);
        let small = Image::filled(2, 2, 3, 0.0).unwrap();
        assert!(matches!(cycle_loss(&x, &small, &y, &y), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn edge_loss_offset_invariant_for_constants() {
        let p = CannyParams::default();
        let a = Image::filled(16, 16, 3, 0.2).unwrap();
        let b = Image::filled(16, 16, 3, 0.7).unwrap();
        let v = edge_loss(&a, &b, &b, &a, &p).unwrap();
        assert!(v.abs() < 1e-12);
        assert_eq!(edge_loss(&a, &a, &b, &b, &p).unwrap(), 0.0);
    }

    #[test]
    fn weighting_identity() {
        let cfg = GanConfig::default();
        assert!(cfg.gamma_edge < cfg.lambda_cyc);
        let zero = total_objective(&LossComponents::default(), &cfg);
        assert_eq!(zero.total, 0.0);
        let c = LossComponents { adv_a_to_b: 0.0, adv_b_to_a: 0.0, cyc: 1.0, edge: 1.0 };
        assert_eq!(total_objective(&c, &cfg).total, 13.0);
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = GanConfig { epochs: 4, learning_rate: 1.0, ..Default::default() };
        let lrs: Vec<f64> = (0..4).map(|e| cfg.learning_rate_at(e)).collect();
        assert_eq!(lrs[0], 1.0);
        assert_eq!(lrs[1], 1.0);
        assert!((lrs[2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((lrs[3] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(GanConfig { gamma_edge: -1.0, ..Default::default() }.validate().is_err());
        assert!(GanConfig { epochs: 0, ..Default::default() }.validate().is_err());
        GanConfig::default().validate().unwrap();
    }

    #[test]
    fn empty_domain_is_rejected() {
        let img = Image::filled(16, 16, 3, 0.5).unwrap();
        let r = train_edgecyclegan(&[], &[img], &GanConfig::default(), &GanRunOptions::default());
        assert!(matches!(r, Err(Error::Empty(_))));
    }

    #[test]
    fn translate_rejects_non_generators() {
        let d = ModelBundle::build(
            Architecture::Discriminator(DiscriminatorSpec { input_channels: 3, base_filters: 2, layers: 1 }),
            0,
        )
        .unwrap();
        let img = Image::filled(8, 8, 3, 0.5).unwrap();
        assert!(translate(&d, &[img]).is_err());
    }
}
