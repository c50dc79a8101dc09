//! Self-checks with measured values, shared by the CLI `check` command and
//! the acceptance tests.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chem::{layout, templates, Atom, Bond, BondOrder, ChemGraph, Element, ATOM37};
use crate::error::Result;
use crate::geometry::{Coords, Vec3};
use crate::harmonic::{
    build_operator, em_forward_at, log_kernel_density, perturb, sample_prior, score, BetaSchedule,
    HarmonicOperator,
};

/// One measured quantity against its limit (`value <= limit` passes).
#[derive(Clone, Debug)]
pub struct Measurement {
    pub label: String,
    pub value: f64,
    pub limit: f64,
}

impl Measurement {
    pub fn new(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Measurement {
            label: label.into(),
            value,
            limit,
        }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub id: String,
    pub title: String,
    pub measurements: Vec<Measurement>,
    /// Failures that are not numeric (e.g. a broken invariant).
    pub errors: Vec<String>,
    /// Informational context printed after the measurements.
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        CheckOutcome {
            id: id.into(),
            title: title.into(),
            measurements: Vec::new(),
            errors: Vec::new(),
            notes: Vec::new(),
            seconds: 0.0,
        }
    }

    pub fn measure(&mut self, label: impl Into<String>, value: f64, limit: f64) {
        self.measurements
            .push(Measurement::new(label, value, limit));
    }

    /// Records a boolean requirement as `0 <= 0` or `1 <= 0`.
    pub fn require(&mut self, label: impl Into<String>, ok: bool) {
        self.measure(label, if ok { 0.0 } else { 1.0 }, 0.0);
    }

    pub fn fail(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    pub fn passed(&self) -> bool {
        self.errors.is_empty()
            && !self.measurements.is_empty()
            && self
                .measurements
                .iter()
                .all(|m| m.passed() && m.value.is_finite())
    }

    /// Runs `body`, timing it and turning an error into a failure entry.
    pub fn run(
        id: impl Into<String>,
        title: impl Into<String>,
        body: impl FnOnce(&mut CheckOutcome) -> Result<()>,
    ) -> CheckOutcome {
        let mut out = CheckOutcome::new(id, title);
        let start = std::time::Instant::now();
        if let Err(e) = body(&mut out) {
            out.fail(e.to_string());
        }
        out.seconds = start.elapsed().as_secs_f64();
        out
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {} ({:.1}s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.seconds
        )?;
        for m in &self.measurements {
            write!(
                f,
                "; {}={:.4e}{}{:.4e}",
                m.label,
                m.value,
                if m.passed() { "<=" } else { ">" },
                m.limit
            )?;
        }
        for e in &self.errors {
            write!(f, "; error: {e}")?;
        }
        for n in &self.notes {
            write!(f, "; {n}")?;
        }
        Ok(())
    }
}

/// Carbon chain of `n` atoms, closed into a ring when `ring` is set.
pub fn carbon_graph(n: usize, ring: bool) -> ChemGraph {
    let atoms = (0..n).map(|i| Atom::ligand(Element::C, "C", i)).collect();
    let mut bonds: Vec<Bond> = (1..n)
        .map(|i| Bond::new(i - 1, i, BondOrder::Single))
        .collect();
    if ring && n > 2 {
        bonds.push(Bond::new(n - 1, 0, BondOrder::Single));
    }
    ChemGraph::new(atoms, bonds, vec![]).expect("well-formed chain")
}

/// Atoms evenly spaced 1.5 apart on a line or a circle.
pub fn carbon_geometry(n: usize, ring: bool) -> Coords {
    if ring {
        let r = 1.5 / (2.0 * (std::f64::consts::PI / n as f64).sin());
        (0..n)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                [r * a.cos(), r * a.sin(), 0.3 * (i % 2) as f64]
            })
            .collect()
    } else {
        (0..n)
            .map(|i| [1.5 * i as f64 - 1.5, 0.2 * i as f64, 0.5])
            .collect()
    }
}

/// Per-column sample mean and pooled covariance of `N x 3` draws.
pub fn sample_moments(draws: &[Coords]) -> (Coords, DMatrix<f64>) {
    let n = draws[0].len();
    let m = draws.len() as f64;
    let mut mean = vec![[0.0; 3]; n];
    for x in draws {
        for (mu, p) in mean.iter_mut().zip(x) {
            for d in 0..3 {
                mu[d] += p[d] / m;
            }
        }
    }
    let mut cov = DMatrix::zeros(n, n);
    for x in draws {
        for d in 0..3 {
            let r: Vec<f64> = (0..n).map(|i| x[i][d] - mean[i][d]).collect();
            for i in 0..n {
                for j in 0..n {
                    cov[(i, j)] += r[i] * r[j];
                }
            }
        }
    }
    cov /= 3.0 * (m - 1.0);
    (mean, cov)
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Empirical EM statistics against the analytic kernel on a 3-path and a
/// 12-ring at t in {0.25, 0.5, 1}.
pub fn kernel_sde_consistency(n_paths: usize, n_steps: usize, seed: u64) -> CheckOutcome {
    CheckOutcome::run("1", "kernel/SDE consistency", |out| {
        let schedule = BetaSchedule::default();
        let times = [0.25, 0.5, 1.0];
        for (name, n, ring) in [("path3", 3, false), ("ring12", 12, true)] {
            let op = build_operator(&carbon_graph(n, ring), 1.0)?;
            let x0 = carbon_geometry(n, ring);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut per_time: Vec<Vec<Coords>> = vec![Vec::with_capacity(n_paths); times.len()];
            for _ in 0..n_paths {
                let snaps = em_forward_at(&op, &schedule, &x0, n_steps, &times, &mut rng)?;
                for (bucket, s) in per_time.iter_mut().zip(snaps) {
                    bucket.push(s);
                }
            }
            for (t, draws) in times.iter().zip(&per_time) {
                let (mean, cov) = sample_moments(draws);
                let alpha = schedule.alpha(*t)?;
                let mean_err = mean
                    .iter()
                    .zip(&x0)
                    .flat_map(|(m, x)| (0..3).map(move |d| (m[d] - alpha * x[d]).abs()))
                    .fold(0.0, f64::max);
                let cov_err = rel_frobenius(&cov, &op.kernel_covariance(&schedule, *t)?);
                out.measure(format!("{name}@{t}:mean_abs"), mean_err, 0.02);
                out.measure(format!("{name}@{t}:cov_rel"), cov_err, 0.05);
            }
        }
        Ok(())
    })
}

/// Prior draws on the 12-ring: per-mode variance, mean, and bonded versus
/// farthest-pair spread.
pub fn prior_correctness(n_draws: usize, seed: u64) -> CheckOutcome {
    CheckOutcome::run("2", "prior correctness", |out| {
        let op = build_operator(&carbon_graph(12, true), 1.0)?;
        let center: Vec3 = [1.5, -2.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<Coords> = (0..n_draws)
            .map(|_| sample_prior(&op, &mut rng, center))
            .collect();
        let n = op.n_atoms();
        let mut mode_var = vec![0.0; n];
        let mut mean = vec![[0.0; 3]; n];
        let (mut bonded, mut far) = (0.0, 0.0);
        for x in &draws {
            for d in 0..3 {
                for (k, v) in mode_var.iter_mut().enumerate() {
                    let y: f64 = (0..n).map(|i| op.p[(i, k)] * (x[i][d] - center[d])).sum();
                    *v += y * y;
                }
                for (m, p) in mean.iter_mut().zip(x) {
                    m[d] += p[d];
                }
            }
            bonded += crate::geometry::dist2(x[0], x[1]);
            far += crate::geometry::dist2(x[0], x[6]);
        }
        let worst_mode = mode_var
            .iter()
            .zip(op.lambda.iter())
            .map(|(v, l)| (v / (3.0 * n_draws as f64) * l - 1.0).abs())
            .fold(0.0, f64::max);
        out.measure("mode_var_rel", worst_mode, 0.05);
        let mean_err = mean
            .iter()
            .flat_map(|m| (0..3).map(move |d| (m[d] / n_draws as f64 - center[d]).abs()))
            .fold(0.0, f64::max);
        out.measure("mean_abs", mean_err, 0.02);
        let (bonded, far) = (bonded / n_draws as f64, far / n_draws as f64);
        // bonded - far must be strictly negative
        out.measure("bonded_minus_far_sq", bonded - far, -1e-12);
        Ok(())
    })
}

/// Analytic score against a central-difference gradient of the log kernel
/// density on a 3-atom path.
pub fn score_exactness(seed: u64) -> CheckOutcome {
    CheckOutcome::run("3", "score exactness", |out| {
        let schedule = BetaSchedule::default();
        let op = build_operator(&carbon_graph(3, false), 1.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for &t in &[0.1, 0.5, 0.9] {
            let x0 = carbon_geometry(3, false);
            let xt = perturb(&op, &schedule, &x0, t, &mut rng)?;
            let analytic = score(&op, &schedule, &xt, &x0, t)?;
            worst = worst.max(numeric_score_error(&op, &schedule, &xt, &x0, t, &analytic)?);
        }
        out.measure("max_abs_err", worst, 1e-6);
        Ok(())
    })
}

fn numeric_score_error(
    op: &HarmonicOperator,
    schedule: &BetaSchedule,
    xt: &[Vec3],
    x0: &[Vec3],
    t: f64,
    analytic: &[Vec3],
) -> Result<f64> {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..xt.len() {
        for d in 0..3 {
            let mut plus = xt.to_vec();
            let mut minus = xt.to_vec();
            plus[i][d] += h;
            minus[i][d] -= h;
            let fd = (log_kernel_density(op, schedule, &plus, x0, t)?
                - log_kernel_density(op, schedule, &minus, x0, t)?)
                / (2.0 * h);
            worst = worst.max((fd - analytic[i][d]).abs());
        }
    }
    Ok(worst)
}

/// Atom73 width from the templates and the atom37 vocabulary.
pub fn layout_check() -> CheckOutcome {
    CheckOutcome::run("9", "layout", |out| {
        let reg = templates();
        let beyond_cb: usize = reg.iter().map(|t| t.n_atoms().saturating_sub(5)).sum();
        out.measure(
            "width_from_templates_minus_73",
            (5 + beyond_cb).abs_diff(73) as f64,
            0.0,
        );
        out.measure(
            "layout_width_minus_73",
            layout().width().abs_diff(73) as f64,
            0.0,
        );
        let mut vocab: BTreeSet<&str> = reg.iter().flat_map(|t| t.atom_names.clone()).collect();
        vocab.insert("OXT");
        let listed: BTreeSet<&str> = ATOM37.iter().copied().collect();
        out.require(
            "atom37_matches_templates",
            vocab == listed && ATOM37.len() == 37,
        );
        Ok(())
    })
}

/// A six-atom mixed-element ring with a small receptor, for gradient checks.
pub fn tiny_complex(seed: u64) -> (ChemGraph, Coords, Coords, crate::denoiser::Receptor) {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = carbon_graph(6, true);
    for (i, el) in [
        Element::C,
        Element::N,
        Element::C,
        Element::O,
        Element::C,
        Element::S,
    ]
    .into_iter()
    .enumerate()
    {
        graph.atoms[i].element = el;
    }
    graph.bonds[1].order = BondOrder::Double;
    // A high-noise state whose six ring bonds span the RBF range. The first
    // four steps are random; atom 5 closes the ring on the circle where the
    // spheres around atoms 0 and 4 meet.
    use crate::geometry::{add, dot, norm, scale, sub};
    let unit = |rng: &mut ChaCha8Rng| -> Vec3 {
        let v: Vec3 = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal));
        scale(v, 1.0 / norm(v))
    };
    let (r45, r50) = (11.25, 13.75);
    let x_t = loop {
        let mut x: Coords = vec![[0.0; 3]];
        for step in [1.25, 3.75, 6.25, 8.75] {
            let d = unit(&mut rng);
            x.push(add(*x.last().unwrap(), scale(d, step)));
        }
        let p4 = x[4];
        let d = norm(p4);
        if !(r50 - r45 + 0.5..r50 + r45 - 0.5).contains(&d) {
            continue;
        }
        let axis = scale(p4, 1.0 / d);
        let a = (r50 * r50 - r45 * r45 + d * d) / (2.0 * d);
        let h = (r50 * r50 - a * a).sqrt();
        let w = unit(&mut rng);
        let perp = sub(w, scale(axis, dot(w, axis)));
        x.push(add(scale(axis, a), scale(perp, h / norm(perp))));
        let c = crate::geometry::centroid(&x);
        break crate::geometry::translate(&x, scale(c, -1.0));
    };
    let x0: Coords = x_t
        .iter()
        .map(|p| std::array::from_fn(|k| p[k] + 0.1 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    // receptor atoms at radii spread over the whole RBF range
    let n_rec = 10;
    let positions: Coords = (0..n_rec)
        .map(|i| {
            let v: Vec3 = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal));
            let r = 2.5 + 10.5 * i as f64 / (n_rec - 1) as f64;
            let n = crate::geometry::norm(v);
            crate::geometry::scale(v, r / n)
        })
        .collect();
    // one close contact so the shortest RBF centers see an edge
    let mut positions = positions;
    positions[0] = add(x_t[0], scale(unit(&mut rng), 0.6));
    let receptor = crate::denoiser::Receptor::new(
        positions,
        (0..n_rec).map(|i| Element::ALL[i % 4]).collect(),
        (0..n_rec).map(|i| i % 2 == 0).collect(),
    )
    .expect("consistent receptor");
    (graph, x0, x_t, receptor)
}

/// The gradient-check instance: config, prepared input, parameters and a
/// target a short offset from the current output (which keeps the loss, and
/// with it central-difference roundoff, small).
pub fn gradient_check_instance(
    seed: u64,
) -> Result<(
    crate::denoiser::DenoiserConfig,
    crate::denoiser::Prepared,
    crate::tensor::ParamSet,
    Coords,
)> {
    use crate::denoiser::{forward_prepared, init_params, prepare, ComplexInput, DenoiserConfig};
    let (graph, offset_target, x_t, receptor) = tiny_complex(seed);
    let config = DenoiserConfig {
        k_neighbors: 15,
        n_layers: 1,
        hidden_dim: 16,
        time_embed_dim: 8,
        pocket_radius: 20.0,
        position_init_scale: 0.1,
    };
    let input = ComplexInput {
        receptor: &receptor,
        graph: &graph,
        x_t: &x_t,
        t: 0.9,
    };
    let prep = prepare(&config, &input)?;
    let params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(seed + 1));
    let x_hat = forward_prepared(&params, &config, &prep)?.x0_hat;
    let x0: Coords = x_hat
        .iter()
        .zip(&offset_target)
        .zip(&x_t)
        .map(|((h, z), xt)| std::array::from_fn(|k| h[k] + (z[k] - xt[k])))
        .collect();
    Ok((config, prep, params, x0))
}

/// Central-difference step for [`denoiser_gradient_check`].
pub const GRADIENT_CHECK_EPS: f64 = 3e-5;

/// Reverse-mode gradients of the reconstruction loss against central
/// differences on a 1-layer, width-16 denoiser.
pub fn denoiser_gradient_check(seed: u64) -> CheckOutcome {
    use crate::denoiser::recon_loss_on_tape;
    use crate::tensor::finite_difference_check;
    CheckOutcome::run("5", "denoiser differentiation", |out| {
        let (config, prep, params, x0) = gradient_check_instance(seed)?;
        let report = finite_difference_check(&params, GRADIENT_CHECK_EPS, |tape, p| {
            recon_loss_on_tape(tape, p, &config, &prep, &x0)
        })?;
        out.measure("n_non_finite", report.n_non_finite as f64, 0.0);
        out.measure("max_rel_err", report.max_rel_error, 1e-5);
        if let Some((name, i)) = report.worst {
            let (a, c) = report.worst_values;
            out.note(format!(
                "worst {name}[{i}] of {} (analytic {a:.3e}, central {c:.3e})",
                report.n_checked
            ));
        }
        Ok(())
    })
}

fn synthetic_complex(
    ctype: crate::cyclization::CyclizationType,
    length: usize,
    seed: u64,
) -> Result<crate::data_io::ComplexRecord> {
    use crate::data_io::{gen_synthetic_dataset, SyntheticOptions};
    let opts = SyntheticOptions {
        ctypes: vec![ctype],
        lengths: length..=length,
        ..SyntheticOptions::default()
    };
    Ok(gen_synthetic_dataset(1, seed, &opts)?.remove(0))
}

/// Denoiser output equivariance and router logit invariance under random
/// rigid motions of the whole complex.
pub fn equivariance_check(n_motions: usize, seed: u64) -> CheckOutcome {
    use crate::cyclization::{infer_spec, CyclizationType};
    use crate::denoiser::{forward, init_params, ComplexInput, DenoiserConfig, Receptor};
    use crate::geometry::{max_abs_diff, RigidMotion};
    use crate::router::{init_router, predict};
    CheckOutcome::run("4", "SE(3) equivariance", |out| {
        let rec = synthetic_complex(CyclizationType::SideToSide, 8, seed)?;
        let spec = infer_spec(&rec.graph)?;
        let config = DenoiserConfig {
            k_neighbors: 12,
            n_layers: 2,
            hidden_dim: 16,
            time_embed_dim: 8,
            position_init_scale: 0.3,
            ..DenoiserConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let dp = init_params(&config, &mut rng);
        let rp = init_router(&config, &mut rng);
        let t = 0.4;
        let x_t = perturb(
            &build_operator(&rec.graph, 3.0)?,
            &BetaSchedule::default(),
            &rec.ligand_positions,
            t,
            &mut rng,
        )?;
        let input = |r: &Receptor, x: &[Vec3]| -> Result<(Coords, Vec<f64>)> {
            let d = forward(
                &dp,
                &config,
                &ComplexInput {
                    receptor: r,
                    graph: &rec.graph,
                    x_t: x,
                    t,
                },
            )?
            .x0_hat;
            let l = predict(&rp, &config, r, &rec.graph, &d, &spec, t)?;
            Ok((d, l.data().to_vec()))
        };
        let (base_x, base_l) = input(&rec.receptor, &x_t)?;
        let mut worst_x = 0.0f64;
        let mut worst_l = 0.0f64;
        for _ in 0..n_motions {
            let m = RigidMotion::random(&mut rng, 10.0);
            let mut r = rec.receptor.clone();
            r.positions = m.apply_all(&r.positions);
            let (x, l) = input(&r, &m.apply_all(&x_t))?;
            worst_x = worst_x.max(max_abs_diff(&x, &m.apply_all(&base_x)));
            worst_l = worst_l.max(
                l.iter()
                    .zip(&base_l)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
        }
        out.measure("denoiser_max_dev", worst_x, 1e-8);
        out.measure("router_max_dev", worst_l, 1e-8);
        out.note(format!("{n_motions} motions, {} ligand atoms", rec.graph.n_atoms()));
        Ok(())
    })
}

/// Model size used by the desk-scale training and structural checks.
pub fn desk_config() -> crate::denoiser::DenoiserConfig {
    crate::denoiser::DenoiserConfig {
        k_neighbors: 12,
        n_layers: 2,
        hidden_dim: 32,
        time_embed_dim: 8,
        ..crate::denoiser::DenoiserConfig::default()
    }
}

/// Both networks overfit on one side-to-side complex, with their logs.
#[derive(Clone, Debug)]
pub struct OverfitModels {
    pub record: crate::data_io::ComplexRecord,
    pub config: crate::denoiser::DenoiserConfig,
    pub denoiser: crate::tensor::ParamSet,
    pub router: crate::tensor::ParamSet,
    pub denoiser_log: crate::train::TrainLog,
    pub router_log: crate::train::TrainLog,
    pub eval_before: f64,
    pub eval_after: f64,
    pub seconds: f64,
}

/// Trains the denoiser then the router, `steps` AdamW steps each at the
/// default optimizer settings.
pub fn train_overfit(steps: usize, seed: u64) -> Result<OverfitModels> {
    use crate::cyclization::CyclizationType;
    use crate::denoiser::init_params;
    use crate::router::init_router;
    use crate::train::{eval_denoiser, train_denoiser, train_router, TrainOptions};
    let start = std::time::Instant::now();
    let record = synthetic_complex(CyclizationType::SideToSide, 8, seed)?;
    let config = desk_config();
    let data = [record.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut denoiser = init_params(&config, &mut rng);
    let mut router = init_router(&config, &mut rng);
    let dopts = TrainOptions {
        steps,
        seed: seed + 2,
        ..TrainOptions::denoiser()
    };
    let eval_before = eval_denoiser(&denoiser, &config, &data, &dopts, 20, seed + 3)?;
    let denoiser_log = train_denoiser(&mut denoiser, &config, &data, &dopts)?;
    let eval_after = eval_denoiser(&denoiser, &config, &data, &dopts, 20, seed + 3)?;
    let ropts = TrainOptions {
        steps,
        seed: seed + 4,
        ..TrainOptions::router()
    };
    let router_log = train_router(&mut router, &denoiser, &config, &data, &ropts)?;
    Ok(OverfitModels {
        record,
        config,
        denoiser,
        router,
        denoiser_log,
        router_log,
        eval_before,
        eval_after,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Loss reduction of the overfit denoiser and router accuracy at t = 0.05.
pub fn desk_training(models: &Result<OverfitModels>) -> CheckOutcome {
    use crate::train::{router_accuracy, TrainOptions};
    CheckOutcome::run("6", "desk-scale training", |out| {
        let m = models.as_ref().map_err(|e| crate::Error::Numeric {
            stage: "training".into(),
            msg: e.to_string(),
        })?;
        let (head, tail) = (m.denoiser_log.head_mean(10), m.denoiser_log.tail_mean(10));
        out.measure("loss_tail_over_head", tail / head, 0.01);
        let acc = router_accuracy(
            &m.router,
            &m.denoiser,
            &m.config,
            &m.record,
            &TrainOptions::router(),
            0.05,
            10,
            7,
        )?;
        out.measure("router_error_rate_t0.05", 1.0 - acc, 0.0);
        out.measure("train_seconds", m.seconds, 900.0);
        out.note(format!(
            "loss head {head:.4} tail {tail:.4}; fixed-draw eval {:.4} -> {:.4}; router loss {:.4} -> {:.4}",
            m.eval_before,
            m.eval_after,
            m.router_log.head_mean(10),
            m.router_log.tail_mean(10)
        ));
        Ok(())
    })
}

/// Per-run statistics collected by [`checked_run`].
#[derive(Clone, Debug, Default)]
pub struct RunAudit {
    pub steps: usize,
    pub timer_violations: usize,
    pub invalid_graphs: usize,
    pub anchor_violations: usize,
    pub closing_bond_losses: usize,
    pub router_calls_above_half: usize,
    pub router_calls: usize,
}

struct Probe<'a, R: ?Sized> {
    inner: &'a mut R,
    calls: Vec<f64>,
}

impl<R: crate::sampler::SequenceRouter + ?Sized> crate::sampler::SequenceRouter for Probe<'_, R> {
    fn route(
        &mut self,
        receptor: &crate::denoiser::Receptor,
        graph: &ChemGraph,
        denoised: &[Vec3],
        spec: &crate::cyclization::CyclizationSpec,
        t: f64,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<crate::chem::AminoAcid>> {
        self.calls.push(t);
        self.inner.route(receptor, graph, denoised, spec, t, rng)
    }
}

/// The same loop as [`crate::sampler::run`], auditing the state from the
/// outside after every step. Returns the final coordinates (original frame)
/// and the audit.
pub fn checked_run<D, R>(
    spec: &crate::cyclization::CyclizationSpec,
    receptor: &crate::denoiser::Receptor,
    denoiser: &D,
    router: &mut R,
    options: &crate::sampler::SamplerOptions,
    seed: u64,
) -> Result<(Coords, RunAudit)>
where
    D: crate::sampler::StructureDenoiser + ?Sized,
    R: crate::sampler::SequenceRouter + ?Sized,
{
    use crate::chem::validate_graph;
    use crate::sampler::SamplerState;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = SamplerState::init(spec, receptor, options, &mut rng)?;
    let mut probe = Probe {
        inner: router,
        calls: Vec::new(),
    };
    let mut audit = RunAudit::default();
    let n = options.n_steps;
    let mut k = 0;
    while state.t > options.epsilon && k < n {
        let before = probe.calls.len();
        let t_start = state.t;
        state.step_to(denoiser, &mut probe, (n - k - 1) as f64 / n as f64, &mut rng)?;
        k += 1;
        audit.steps += 1;
        if probe.calls.len() > before && t_start > 0.5 {
            audit.router_calls_above_half += 1;
        }
        let mut selected: BTreeSet<usize> = state.index.iter().copied().collect();
        selected.extend((0..spec.cyclization_atoms().len()).map(|c| state.slots.cyc_slot(c)));
        if selected.iter().any(|&s| state.timer[s] != state.t) {
            audit.timer_violations += 1;
        }
        let assembled = crate::cyclization::assemble(&state.sequence, spec)?;
        if !validate_graph(&state.graph).is_valid() || assembled != state.graph {
            audit.invalid_graphs += 1;
        }
        if spec
            .anchors
            .iter()
            .any(|&(p, aa)| state.graph.residue_types[p] != aa)
        {
            audit.anchor_violations += 1;
        }
        if let Some(cb) = spec.closing_bond {
            let a = state.graph.find_atom(cb.a.residue, cb.a.name);
            let b = state.graph.find_atom(cb.b.residue, cb.b.name);
            let ok = matches!((a, b), (Some(a), Some(b)) if state.graph.has_bond(a, b));
            if !ok {
                audit.closing_bond_losses += 1;
            }
        }
    }
    audit.router_calls = probe.calls.len();
    audit.router_calls_above_half += probe.calls.iter().filter(|&&t| t > 0.5).count();
    let (x, _) = state.extract();
    let x0 = denoiser.denoise(state.receptor(), &state.graph, &x, state.t)?;
    Ok((crate::geometry::translate(&x0, state.center()), audit))
}

/// Routed-sampling invariants over every cyclization type at two lengths
/// with small untrained networks.
pub fn sampling_invariants(n_steps: usize, seed: u64) -> CheckOutcome {
    use crate::cyclization::{make_spec, CyclizationType};
    use crate::denoiser::{init_params, DenoiserConfig};
    use crate::router::init_router;
    use crate::sampler::{run, NeuralDenoiser, NeuralRouter, SamplerOptions};
    CheckOutcome::run("7", "routed-sampling invariants", |out| {
        let config = DenoiserConfig {
            k_neighbors: 8,
            n_layers: 1,
            hidden_dim: 8,
            time_embed_dim: 4,
            position_init_scale: 0.05,
            ..DenoiserConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = NeuralDenoiser {
            params: init_params(&config, &mut rng),
            config: config.clone(),
        };
        let r = NeuralRouter {
            params: init_router(&config, &mut rng),
            config,
            decode: None,
        };
        let receptor = synthetic_complex(CyclizationType::HeadToTail, 8, seed)?.receptor;
        let opts = SamplerOptions {
            n_steps,
            ..SamplerOptions::default()
        };
        let mut total = RunAudit::default();
        let mut mismatched = 0usize;
        let mut runs = 0usize;
        for ctype in CyclizationType::ALL {
            for length in [8, 12] {
                let spec = make_spec(ctype, length)?;
                let run_seed = seed + 100 + runs as u64;
                let (x, a) = checked_run(&spec, &receptor, &d, &mut r.clone(), &opts, run_seed)?;
                let again = run(&spec, &receptor, &d, &mut r.clone(), &opts, run_seed)?;
                let bits = |c: &Coords| -> Vec<u64> {
                    c.iter().flatten().map(|v| v.to_bits()).collect()
                };
                if bits(&x) != bits(&again.coords) {
                    mismatched += 1;
                }
                if a.steps != n_steps {
                    total.timer_violations += 1;
                }
                total.steps += a.steps;
                total.timer_violations += a.timer_violations;
                total.invalid_graphs += a.invalid_graphs;
                total.anchor_violations += a.anchor_violations;
                total.closing_bond_losses += a.closing_bond_losses;
                total.router_calls_above_half += a.router_calls_above_half;
                total.router_calls += a.router_calls;
                runs += 1;
            }
        }
        out.measure("timer_violations", total.timer_violations as f64, 0.0);
        out.measure("invalid_graphs", total.invalid_graphs as f64, 0.0);
        out.measure("anchor_violations", total.anchor_violations as f64, 0.0);
        out.measure("closing_bond_losses", total.closing_bond_losses as f64, 0.0);
        out.measure(
            "router_calls_above_half",
            total.router_calls_above_half as f64,
            0.0,
        );
        out.measure("non_reproducible_runs", mismatched as f64, 0.0);
        out.note(format!(
            "{runs} runs, {} steps, {} router calls",
            total.steps, total.router_calls
        ));
        Ok(())
    })
}

/// Bond-length and disulfide statistics of samples from the overfit models
/// in their training pocket.
pub fn structural_sanity(models: &Result<OverfitModels>, n_runs: usize, n_steps: usize) -> CheckOutcome {
    use crate::cyclization::infer_spec;
    use crate::metrics::{validity_report, BOND_TOLERANCE};
    use crate::sampler::{run, NeuralDenoiser, NeuralRouter, SamplerOptions};
    CheckOutcome::run("8", "structural sanity", |out| {
        let m = models.as_ref().map_err(|e| crate::Error::Numeric {
            stage: "training".into(),
            msg: e.to_string(),
        })?;
        let spec = infer_spec(&m.record.graph)?;
        let d = NeuralDenoiser {
            params: m.denoiser.clone(),
            config: m.config.clone(),
        };
        let mut r = NeuralRouter {
            params: m.router.clone(),
            config: m.config.clone(),
            decode: None,
        };
        let opts = SamplerOptions {
            n_steps,
            ..SamplerOptions::default()
        };
        let (mut within, mut bonds, mut ss_ok) = (0usize, 0usize, 0usize);
        let mut lengths = Vec::new();
        for k in 0..n_runs {
            let s = run(&spec, &m.record.receptor, &d, &mut r, &opts, 500 + k as u64)?;
            let rep = validity_report(&s.coords, &s.graph)?;
            within += rep.bonds_within(BOND_TOLERANCE);
            bonds += rep.bonds.len();
            if let Some(c) = &rep.closure {
                lengths.push(c.length);
                if c.disulfide_ok == Some(true) {
                    ss_ok += 1;
                }
            }
        }
        let frac = within as f64 / bonds.max(1) as f64;
        let ss_frac = ss_ok as f64 / n_runs as f64;
        out.measure("bond_fraction_outside_tol", 1.0 - frac, 0.10);
        out.measure("disulfide_fraction_outside_window", 1.0 - ss_frac, 0.50);
        lengths.sort_by(f64::total_cmp);
        let median = lengths.get(lengths.len() / 2).copied().unwrap_or(f64::NAN);
        out.note(format!(
            "{n_runs} runs; bonds within {BOND_TOLERANCE}: {within}/{bonds}; S-S in window {ss_ok}/{n_runs}; median S-S {median:.3}"
        ));
        Ok(())
    })
}

/// Runs with a fixed-target denoiser end exactly on the target.
pub fn oracle_collapse(n_steps: usize, seed: u64) -> CheckOutcome {
    use crate::cyclization::{make_spec, CyclizationType};
    use crate::sampler::{run, RandomSequence, SamplerOptions, SlotIndex, TargetOracle};
    use rand::Rng;
    use rand_distr::StandardNormal;
    CheckOutcome::run("10", "mock-oracle collapse", |out| {
        let receptor = synthetic_complex(CyclizationType::HeadToTail, 8, seed)?.receptor;
        let centre = crate::geometry::centroid(&receptor.positions);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let opts = SamplerOptions {
            n_steps,
            ..SamplerOptions::default()
        };
        let mut worst = 0.0f64;
        for ctype in CyclizationType::ALL {
            let spec = make_spec(ctype, 8)?;
            let slots = SlotIndex::new(&spec);
            let target = (0..slots.n_slots())
                .map(|_| std::array::from_fn(|_| 5.0 * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let oracle = TargetOracle { slots, target };
            let s = run(&spec, &receptor, &oracle, &mut RandomSequence, &opts, seed + 2)?;
            let expect =
                crate::geometry::translate(&oracle.target_for(&s.graph)?, centre);
            worst = worst.max(crate::geometry::max_abs_diff(&s.coords, &expect));
        }
        out.measure("max_abs_err", worst, 1e-9);
        Ok(())
    })
}
