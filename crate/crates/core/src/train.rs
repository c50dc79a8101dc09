//! Training loops for the denoiser and the router.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chem::AminoAcid;
use crate::cyclization::{infer_spec, CyclizationSpec};
use crate::data_io::ComplexRecord;
use crate::denoiser::{prepare, recon_loss_on_tape, ComplexInput, DenoiserConfig};
use crate::error::{Error, Result};
use crate::geometry::{centroid, translate};
use crate::harmonic::{build_operator, perturb, sigma_p_from_pocket, BetaSchedule, HarmonicOperator};
use crate::router::{logits, router_example, router_loss_on_tape, sample_sequence, DecodeMode};
use crate::tensor::{AdamW, AdamWConfig, ParamSet, Tape};

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub steps: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub schedule: BetaSchedule,
    /// Diffusion times are drawn uniformly from this interval.
    pub t_range: (f64, f64),
    /// `false` trains against isotropic noise.
    pub harmonic: bool,
    pub sigma_p: Option<f64>,
}

impl TrainOptions {
    /// `t ~ U[0, 1]`.
    pub fn denoiser() -> Self {
        TrainOptions {
            steps: 2000,
            optimizer: AdamWConfig::default(),
            seed: 0,
            schedule: BetaSchedule::default(),
            t_range: (0.0, 1.0),
            harmonic: true,
            sigma_p: None,
        }
    }

    /// `t ~ U[0, 0.5]`.
    pub fn router() -> Self {
        TrainOptions {
            t_range: (0.0, 0.5),
            ..TrainOptions::denoiser()
        }
    }
}

/// Per-step training losses and the times they were drawn at.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub times: Vec<f64>,
}

impl TrainLog {
    /// Mean of the first `w` losses.
    pub fn head_mean(&self, w: usize) -> f64 {
        let w = w.min(self.losses.len()).max(1);
        self.losses[..w].iter().sum::<f64>() / w as f64
    }

    /// Mean of the last `w` losses.
    pub fn tail_mean(&self, w: usize) -> f64 {
        let w = w.min(self.losses.len()).max(1);
        self.losses[self.losses.len() - w..].iter().sum::<f64>() / w as f64
    }

    /// One `step t loss` line per step.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, (l, t)) in self.losses.iter().zip(&self.times).enumerate() {
            let _ = writeln!(s, "{i} {t:.6} {l:.9e}");
        }
        s
    }
}

/// A complex moved into the pocket frame, with its spec and noise operator.
#[derive(Clone, Debug)]
pub struct TrainingComplex {
    pub record: ComplexRecord,
    pub spec: CyclizationSpec,
    pub op: HarmonicOperator,
}

impl TrainingComplex {
    pub fn new(record: &ComplexRecord, harmonic: bool, sigma_p: Option<f64>) -> Result<Self> {
        let c = centroid(&record.receptor.positions);
        let shift = c.map(|v| -v);
        let mut record = record.clone();
        record.receptor.positions = translate(&record.receptor.positions, shift);
        record.ligand_positions = translate(&record.ligand_positions, shift);
        let sigma = sigma_p.unwrap_or_else(|| sigma_p_from_pocket(&record.receptor.positions));
        let op = if harmonic {
            build_operator(&record.graph, sigma)?
        } else {
            HarmonicOperator::isotropic(record.graph.n_atoms(), sigma)?
        };
        let spec = infer_spec(&record.graph)?;
        Ok(TrainingComplex { record, spec, op })
    }
}

fn prepare_set(data: &[ComplexRecord], opts: &TrainOptions) -> Result<Vec<TrainingComplex>> {
    if data.is_empty() {
        return Err(Error::contract("train", "empty dataset"));
    }
    data.iter()
        .map(|r| TrainingComplex::new(r, opts.harmonic, opts.sigma_p))
        .collect()
}

/// Uniform on `(lo, hi]`, so a zero lower bound never yields `t = 0`.
fn draw_t(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * (1.0 - rng.random::<f64>())
}

/// Trains `params` in place. On a non-finite loss or gradient the loop stops
/// with a divergence error and `params` keeps the last good values.
pub fn train_denoiser(
    params: &mut ParamSet,
    config: &DenoiserConfig,
    data: &[ComplexRecord],
    opts: &TrainOptions,
) -> Result<TrainLog> {
    let set = prepare_set(data, opts)?;
    let mut opt = AdamW::new(opts.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut log = TrainLog::default();
    for step in 0..opts.steps {
        let c = &set[rng.random_range(0..set.len())];
        let t = draw_t(&mut rng, opts.t_range);
        let x0 = &c.record.ligand_positions;
        let x_t = perturb(&c.op, &opts.schedule, x0, t, &mut rng)?;
        let prep = prepare(
            config,
            &ComplexInput {
                receptor: &c.record.receptor,
                graph: &c.record.graph,
                x_t: &x_t,
                t,
            },
        )?;
        let mut tape = Tape::new();
        let loss = recon_loss_on_tape(&mut tape, params, config, &prep, x0)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Divergence {
                step,
                msg: format!("loss is {value}"),
            });
        }
        let grads = tape.backward(loss)?;
        params.accumulate(&grads);
        opt.step(params).map_err(|e| match e {
            Error::Divergence { msg, .. } => Error::Divergence { step, msg },
            e => e,
        })?;
        log.losses.push(value);
        log.times.push(t);
    }
    Ok(log)
}

/// Trains the router against a frozen denoiser; `denoiser` is only read.
pub fn train_router(
    router: &mut ParamSet,
    denoiser: &ParamSet,
    config: &DenoiserConfig,
    data: &[ComplexRecord],
    opts: &TrainOptions,
) -> Result<TrainLog> {
    let set = prepare_set(data, opts)?;
    let mut opt = AdamW::new(opts.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut log = TrainLog::default();
    for step in 0..opts.steps {
        let c = &set[rng.random_range(0..set.len())];
        let t = draw_t(&mut rng, opts.t_range);
        let x_t = perturb(&c.op, &opts.schedule, &c.record.ligand_positions, t, &mut rng)?;
        let ex = router_example(
            denoiser,
            config,
            &c.record.receptor,
            &c.record.graph,
            &x_t,
            &c.spec,
            t,
        )?;
        let mut tape = Tape::new();
        let loss = router_loss_on_tape(&mut tape, router, config, &ex)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Divergence {
                step,
                msg: format!("loss is {value}"),
            });
        }
        let grads = tape.backward(loss)?;
        router.accumulate(&grads);
        opt.step(router).map_err(|e| match e {
            Error::Divergence { msg, .. } => Error::Divergence { step, msg },
            e => e,
        })?;
        log.losses.push(value);
        log.times.push(t);
    }
    Ok(log)
}

/// Mean squared error of the denoiser over `n_draws` fixed noise draws per
/// complex at times spread evenly over `t_range`.
pub fn eval_denoiser(
    params: &ParamSet,
    config: &DenoiserConfig,
    data: &[ComplexRecord],
    opts: &TrainOptions,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    let set = prepare_set(data, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut n = 0usize;
    for c in &set {
        for k in 0..n_draws {
            let u = (k as f64 + 0.5) / n_draws as f64;
            let t = opts.t_range.0 + (opts.t_range.1 - opts.t_range.0) * u;
            let x0 = &c.record.ligand_positions;
            let x_t = perturb(&c.op, &opts.schedule, x0, t, &mut rng)?;
            let prep = prepare(
                config,
                &ComplexInput {
                    receptor: &c.record.receptor,
                    graph: &c.record.graph,
                    x_t: &x_t,
                    t,
                },
            )?;
            let mut tape = Tape::new();
            let l = recon_loss_on_tape(&mut tape, params, config, &prep, x0)?;
            total += tape.scalar(l);
            n += 1;
        }
    }
    Ok(total / n as f64)
}

/// Fraction of free residues the router decodes correctly (argmax) from the
/// frozen denoiser's output at time `t`, averaged over `n_draws` noise draws.
#[allow(clippy::too_many_arguments)]
pub fn router_accuracy(
    router: &ParamSet,
    denoiser: &ParamSet,
    config: &DenoiserConfig,
    record: &ComplexRecord,
    opts: &TrainOptions,
    t: f64,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    let c = TrainingComplex::new(record, opts.harmonic, opts.sigma_p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let free: Vec<usize> = (0..c.spec.n_residues)
        .filter(|&r| !c.spec.is_anchor(r))
        .collect();
    if free.is_empty() {
        return Err(Error::contract("router_accuracy", "no free residues"));
    }
    let mut hits = 0usize;
    for _ in 0..n_draws {
        let x_t = perturb(&c.op, &opts.schedule, &c.record.ligand_positions, t, &mut rng)?;
        let ex = router_example(
            denoiser,
            config,
            &c.record.receptor,
            &c.record.graph,
            &x_t,
            &c.spec,
            t,
        )?;
        let l = logits(router, config, &ex.input)?;
        let seq: Vec<AminoAcid> = sample_sequence(&l, DecodeMode::Argmax, &c.spec, &mut rng)?;
        hits += free.iter().filter(|&&r| seq[r] == ex.truth[r]).count();
    }
    Ok(hits as f64 / (free.len() * n_draws) as f64)
}
