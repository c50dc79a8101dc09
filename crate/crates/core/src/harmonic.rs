//! The graph-conditioned variance-preserving SDE: schedule, operator
//! `H = L + sigma_P^-2 I`, analytic kernel, prior, score and integrators.
//!
//! Covariances are `H^-1 (1 - alpha_t^2)` per spatial column; the prior is
//! `N(0, H^-1)`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::chem::{graph_laplacian, ChemGraph};
use crate::error::{Error, Result};
use crate::geometry::{centroid, dist, Coords, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule {
            beta_min: 0.01,
            beta_max: 3.0,
        }
    }
}

fn check_t(op: &'static str, t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::contract(op, format!("t = {t} outside [0, 1]")))
    }
}

impl BetaSchedule {
    /// Accepts `0 <= beta_min <= beta_max`; a zero schedule is a valid
    /// degenerate case.
    pub fn new(beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(beta_min.is_finite()
            && beta_max.is_finite()
            && 0.0 <= beta_min
            && beta_min <= beta_max)
        {
            return Err(Error::contract(
                "beta schedule",
                format!("need 0 <= beta_min <= beta_max, got {beta_min}, {beta_max}"),
            ));
        }
        Ok(BetaSchedule { beta_min, beta_max })
    }

    pub fn beta(&self, t: f64) -> Result<f64> {
        check_t("beta", t)?;
        Ok(self.beta_raw(t))
    }

    pub fn int_beta(&self, t: f64) -> Result<f64> {
        check_t("int_beta", t)?;
        Ok(self.int_beta_raw(t))
    }

    pub fn alpha(&self, t: f64) -> Result<f64> {
        check_t("alpha", t)?;
        Ok(self.alpha_raw(t))
    }

    fn beta_raw(&self, t: f64) -> f64 {
        (self.beta_max - self.beta_min) * t + self.beta_min
    }

    fn int_beta_raw(&self, t: f64) -> f64 {
        0.5 * (self.beta_max - self.beta_min) * t * t + self.beta_min * t
    }

    fn alpha_raw(&self, t: f64) -> f64 {
        (-0.5 * self.int_beta_raw(t)).exp()
    }
}

/// Mean scaling and per-eigenmode variance of the kernel at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMoments {
    pub alpha_t: f64,
    pub eigen_variances: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HarmonicOperator {
    pub sigma_p: f64,
    /// `L + sigma_P^-2 I`.
    pub h: DMatrix<f64>,
    /// Orthonormal eigenvectors as columns, matching `lambda`.
    pub p: DMatrix<f64>,
    /// Ascending eigenvalues.
    pub lambda: DVector<f64>,
}

const EIGEN_TOL: f64 = 1e-10;

impl HarmonicOperator {
    /// Decomposes `L + sigma_p^-2 I` for an arbitrary Laplacian-like matrix.
    pub fn from_laplacian(l: &DMatrix<f64>, sigma_p: f64) -> Result<Self> {
        if !(sigma_p > 0.0 && sigma_p.is_finite()) {
            return Err(Error::contract(
                "build_operator",
                format!("sigma_p = {sigma_p}"),
            ));
        }
        let n = l.nrows();
        if n == 0 || l.ncols() != n {
            return Err(Error::contract(
                "build_operator",
                "need a nonempty square matrix",
            ));
        }
        let h = l + DMatrix::identity(n, n) / (sigma_p * sigma_p);
        let eig =
            SymmetricEigen::try_new(h.clone(), EIGEN_TOL * 1e-3, 10_000).ok_or_else(|| {
                Error::Numeric {
                    stage: "eigensolve".into(),
                    msg: format!("no convergence on\n{h}"),
                }
            })?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut p = DMatrix::zeros(n, n);
        let mut lambda = DVector::zeros(n);
        for (k, &src) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(src).clone_owned();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v = -v;
                }
            }
            p.set_column(k, &v);
            lambda[k] = eig.eigenvalues[src];
        }
        let floor = 1.0 / (sigma_p * sigma_p);
        if lambda
            .iter()
            .any(|&l| !l.is_finite() || l < floor * (1.0 - 1e-8))
        {
            return Err(Error::Numeric {
                stage: "eigensolve".into(),
                msg: format!("eigenvalue below sigma_p^-2 = {floor}: {lambda}\n{h}"),
            });
        }
        let residual = (&p * DMatrix::from_diagonal(&lambda) * p.transpose() - &h)
            .abs()
            .max();
        if residual > 1e-9 * (1.0 + h.abs().max()) {
            return Err(Error::Numeric {
                stage: "eigensolve".into(),
                msg: format!("reconstruction residual {residual:e}\n{h}"),
            });
        }
        Ok(HarmonicOperator {
            sigma_p,
            h,
            p,
            lambda,
        })
    }

    /// `H = sigma_p^-2 I`: the harmonic term switched off.
    pub fn isotropic(n: usize, sigma_p: f64) -> Result<Self> {
        Self::from_laplacian(&DMatrix::zeros(n, n), sigma_p)
    }

    pub fn n_atoms(&self) -> usize {
        self.lambda.len()
    }

    pub fn kernel_moments(&self, schedule: &BetaSchedule, t: f64) -> Result<KernelMoments> {
        let alpha_t = schedule.alpha(t)?;
        let s = 1.0 - alpha_t * alpha_t;
        Ok(KernelMoments {
            alpha_t,
            eigen_variances: self.lambda.iter().map(|l| s / l).collect(),
        })
    }

    /// Full per-column covariance `H^-1 (1 - alpha_t^2)`.
    pub fn kernel_covariance(&self, schedule: &BetaSchedule, t: f64) -> Result<DMatrix<f64>> {
        let m = self.kernel_moments(schedule, t)?;
        let d = DVector::from_vec(m.eigen_variances);
        Ok(&self.p * DMatrix::from_diagonal(&d) * self.p.transpose())
    }

    /// `P diag(scale_i) z` per spatial column.
    fn color(&self, z: &[Vec3], scale: impl Fn(usize) -> f64) -> Coords {
        let n = self.n_atoms();
        let mut out = vec![[0.0; 3]; n];
        for k in 0..n {
            let s = scale(k);
            if s == 0.0 {
                continue;
            }
            let zk = [z[k][0] * s, z[k][1] * s, z[k][2] * s];
            for i in 0..n {
                let pik = self.p[(i, k)];
                out[i][0] += pik * zk[0];
                out[i][1] += pik * zk[1];
                out[i][2] += pik * zk[2];
            }
        }
        out
    }

    /// `P^T x` per spatial column.
    fn to_eigenbasis(&self, x: &[Vec3]) -> Coords {
        let n = self.n_atoms();
        let mut out = vec![[0.0; 3]; n];
        for (i, xi) in x.iter().enumerate() {
            for (k, ok) in out.iter_mut().enumerate() {
                let pik = self.p[(i, k)];
                ok[0] += pik * xi[0];
                ok[1] += pik * xi[1];
                ok[2] += pik * xi[2];
            }
        }
        out
    }

    /// Multiplies by `H^-1` through the eigenbasis.
    pub fn apply_h_inverse(&self, x: &[Vec3]) -> Coords {
        let y = self.to_eigenbasis(x);
        let lambda = &self.lambda;
        let scaled: Coords = y
            .iter()
            .enumerate()
            .map(|(k, v)| [v[0] / lambda[k], v[1] / lambda[k], v[2] / lambda[k]])
            .collect();
        self.color(&scaled, |_| 1.0)
    }

    fn check_len(&self, op: &'static str, x: &[Vec3]) -> Result<()> {
        if x.len() != self.n_atoms() {
            return Err(Error::shape(
                op,
                format!(
                    "{} atoms against an operator over {}",
                    x.len(),
                    self.n_atoms()
                ),
            ));
        }
        Ok(())
    }
}

pub fn build_operator(graph: &ChemGraph, sigma_p: f64) -> Result<HarmonicOperator> {
    HarmonicOperator::from_laplacian(&graph_laplacian(graph)?, sigma_p)
}

/// Standard normal `N x 3` draw.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Coords {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
        .collect()
}

/// One draw from `N(center, H^-1)` per spatial column.
pub fn sample_prior<R: Rng + ?Sized>(op: &HarmonicOperator, rng: &mut R, center: Vec3) -> Coords {
    let z = standard_normal(rng, op.n_atoms());
    let lambda = &op.lambda;
    let mut x = op.color(&z, |k| 1.0 / lambda[k].sqrt());
    for p in &mut x {
        for d in 0..3 {
            p[d] += center[d];
        }
    }
    x
}

/// Prior draw from the precision matrix by Cholesky, for graphs too large to
/// eigendecompose cheaply. Same law as [`sample_prior`].
pub fn sample_prior_cholesky<R: Rng + ?Sized>(
    h: &DMatrix<f64>,
    rng: &mut R,
    center: Vec3,
) -> Result<Coords> {
    let n = h.nrows();
    let chol = Cholesky::new(h.clone()).ok_or_else(|| Error::Numeric {
        stage: "prior cholesky".into(),
        msg: "precision matrix is not positive definite".into(),
    })?;
    // H = L L^T, so x = L^-T z has covariance H^-1.
    let lt = chol.l().transpose();
    let mut out = vec![center; n];
    for d in 0..3 {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numeric {
                stage: "prior cholesky".into(),
                msg: "singular factor".into(),
            })?;
        for i in 0..n {
            out[i][d] += x[i];
        }
    }
    Ok(out)
}

/// The kernel sample for a given eigenbasis noise `z` (`N x 3`).
pub fn perturb_with_noise(
    op: &HarmonicOperator,
    schedule: &BetaSchedule,
    x0: &[Vec3],
    t: f64,
    z: &[Vec3],
) -> Result<Coords> {
    op.check_len("perturb", x0)?;
    op.check_len("perturb", z)?;
    let m = op.kernel_moments(schedule, t)?;
    let mut x = op.color(z, |k| m.eigen_variances[k].sqrt());
    for (xi, x0i) in x.iter_mut().zip(x0) {
        for d in 0..3 {
            xi[d] += m.alpha_t * x0i[d];
        }
    }
    Ok(x)
}

pub fn perturb<R: Rng + ?Sized>(
    op: &HarmonicOperator,
    schedule: &BetaSchedule,
    x0: &[Vec3],
    t: f64,
    rng: &mut R,
) -> Result<Coords> {
    if t <= 0.0 {
        return Err(Error::contract(
            "perturb",
            format!("t = {t} must be positive"),
        ));
    }
    let z = standard_normal(rng, op.n_atoms());
    perturb_with_noise(op, schedule, x0, t, &z)
}

/// `-Sigma_t^-1 (x_t - alpha_t x0_hat)` evaluated in the eigenbasis.
pub fn score(
    op: &HarmonicOperator,
    schedule: &BetaSchedule,
    x_t: &[Vec3],
    x0_hat: &[Vec3],
    t: f64,
) -> Result<Coords> {
    op.check_len("score", x_t)?;
    op.check_len("score", x0_hat)?;
    let alpha = schedule.alpha(t)?;
    let s = 1.0 - alpha * alpha;
    if t <= 0.0 || s <= 0.0 {
        return Err(Error::contract(
            "score",
            format!("kernel variance vanishes at t = {t}"),
        ));
    }
    let r: Coords = x_t
        .iter()
        .zip(x0_hat)
        .map(|(a, b)| std::array::from_fn(|d| a[d] - alpha * b[d]))
        .collect();
    let y = op.to_eigenbasis(&r);
    let lambda = &op.lambda;
    let scaled: Coords = y
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let c = -lambda[k] / s;
            [v[0] * c, v[1] * c, v[2] * c]
        })
        .collect();
    Ok(op.color(&scaled, |_| 1.0))
}

/// Log density of the kernel, built from `H` directly (Cholesky for the
/// determinant) rather than from the eigenbasis.
pub fn log_kernel_density(
    op: &HarmonicOperator,
    schedule: &BetaSchedule,
    x_t: &[Vec3],
    x0: &[Vec3],
    t: f64,
) -> Result<f64> {
    let alpha = schedule.alpha(t)?;
    let s = 1.0 - alpha * alpha;
    if s <= 0.0 {
        return Err(Error::contract("log_kernel_density", "zero variance"));
    }
    let n = op.h.nrows();
    let chol = Cholesky::new(op.h.clone()).ok_or_else(|| Error::Numeric {
        stage: "log density".into(),
        msg: "H is not positive definite".into(),
    })?;
    let logdet_h: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    // log det Sigma = n ln s - log det H
    let logdet_sigma = n as f64 * s.ln() - logdet_h;
    let mut quad = 0.0;
    for d in 0..3 {
        let r = DVector::from_fn(n, |i, _| x_t[i][d] - alpha * x0[i][d]);
        quad += r.dot(&(&op.h * &r)) / s;
    }
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    Ok(-0.5 * quad - 1.5 * (logdet_sigma + n as f64 * ln2pi))
}

/// Euler-Maruyama over `[0, 1]` with drift `-beta x / 2` and diffusion
/// `sqrt(beta) P Lambda^-1/2`. Returns all `n_steps + 1` states.
pub fn em_forward<R: Rng + ?Sized>(
    op: &HarmonicOperator,
    schedule: &BetaSchedule,
    x0: &[Vec3],
    n_steps: usize,
    rng: &mut R,
) -> Result<Vec<Coords>> {
    let mut traj = Vec::with_capacity(n_steps + 1);
    em_integrate(
        op,
        schedule,
        x0,
        n_steps,
        rng,
        |_| true,
        |_, x| traj.push(x),
    )?;
    Ok(traj)
}

/// Euler-Maruyama keeping only the states at the requested times (rounded to
/// the step grid).
pub fn em_forward_at<R: Rng + ?Sized>(
    op: &HarmonicOperator,
    schedule: &BetaSchedule,
    x0: &[Vec3],
    n_steps: usize,
    times: &[f64],
    rng: &mut R,
) -> Result<Vec<Coords>> {
    let steps: Vec<usize> = times
        .iter()
        .map(|t| (t * n_steps as f64).round() as usize)
        .collect();
    let mut out = vec![Vec::new(); times.len()];
    em_integrate(
        op,
        schedule,
        x0,
        n_steps,
        rng,
        |k| steps.contains(&k),
        |k, x| {
            for (slot, &s) in out.iter_mut().zip(&steps) {
                if s == k {
                    *slot = x.clone();
                }
            }
        },
    )?;
    Ok(out)
}

// The drift is a scalar multiple of x, so the recursion runs on eigenbasis
// coordinates and is mapped back only for visited steps.
fn em_integrate<R: Rng + ?Sized>(
    op: &HarmonicOperator,
    schedule: &BetaSchedule,
    x0: &[Vec3],
    n_steps: usize,
    rng: &mut R,
    wanted: impl Fn(usize) -> bool,
    mut visit: impl FnMut(usize, Coords),
) -> Result<()> {
    op.check_len("em_forward", x0)?;
    if n_steps == 0 {
        return Err(Error::contract("em_forward", "n_steps must be positive"));
    }
    let dt = 1.0 / n_steps as f64;
    let inv_sqrt_lambda: Vec<f64> = op.lambda.iter().map(|l| 1.0 / l.sqrt()).collect();
    let y0 = op.to_eigenbasis(x0);
    let mut y = y0.clone();
    // mapped back as x0 + P (y - y0) so an unmoved state is returned exactly
    let back = |y: &Coords| -> Coords {
        let dy: Coords = y
            .iter()
            .zip(&y0)
            .map(|(a, b)| std::array::from_fn(|d| a[d] - b[d]))
            .collect();
        op.color(&dy, |_| 1.0)
            .iter()
            .zip(x0)
            .map(|(a, b)| std::array::from_fn(|d| a[d] + b[d]))
            .collect()
    };
    if wanted(0) {
        visit(0, x0.to_vec());
    }
    for k in 0..n_steps {
        let beta = schedule.beta_raw(k as f64 * dt);
        let drift = 1.0 - 0.5 * beta * dt;
        let amp = (beta * dt).sqrt();
        for (m, ym) in y.iter_mut().enumerate() {
            let s = amp * inv_sqrt_lambda[m];
            for v in ym.iter_mut() {
                *v = *v * drift + s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if wanted(k + 1) {
            visit(k + 1, back(&y));
        }
    }
    Ok(())
}

/// One reverse-time Euler-Maruyama step driven by a score:
/// `x + (beta x / 2 + beta H^-1 s) dt + sqrt(beta dt) P Lambda^-1/2 z`.
pub fn reverse_em_step<R: Rng + ?Sized>(
    op: &HarmonicOperator,
    schedule: &BetaSchedule,
    x: &[Vec3],
    score: &[Vec3],
    t: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Coords> {
    let beta = schedule.beta(t)?;
    let hs = op.apply_h_inverse(score);
    let z = standard_normal(rng, op.n_atoms());
    let amp = (beta * dt).sqrt();
    let lambda = &op.lambda;
    let noise = op.color(&z, |m| amp / lambda[m].sqrt());
    Ok((0..x.len())
        .map(|i| {
            std::array::from_fn(|d| {
                x[i][d] + (0.5 * beta * x[i][d] + beta * hs[i][d]) * dt + noise[i][d]
            })
        })
        .collect())
}

/// Denoise-renoise: a fresh kernel draw around `x0_hat` at `t - dt`; exactly
/// `x0_hat` once the target time reaches zero.
pub fn denoise_renoise_step<R: Rng + ?Sized>(
    op: &HarmonicOperator,
    schedule: &BetaSchedule,
    x0_hat: &[Vec3],
    t: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Coords> {
    if !(dt > 0.0 && dt <= t + 1e-12) {
        return Err(Error::contract(
            "denoise_renoise_step",
            format!("need 0 < dt <= t, got dt = {dt}, t = {t}"),
        ));
    }
    let target = t - dt;
    if target <= 1e-12 {
        op.check_len("denoise_renoise_step", x0_hat)?;
        return Ok(x0_hat.to_vec());
    }
    perturb(op, schedule, x0_hat, target, rng)
}

/// Brings atoms recorded at later times down to `target_t` with one joint
/// kernel draw around the cache; atoms already at `target_t` keep their
/// coordinates bit for bit.
pub fn align_time<R: Rng + ?Sized>(
    op: &HarmonicOperator,
    schedule: &BetaSchedule,
    coords: &[Vec3],
    x0_cache: &[Vec3],
    times: &[f64],
    target_t: f64,
    rng: &mut R,
) -> Result<Coords> {
    op.check_len("align_time", coords)?;
    op.check_len("align_time", x0_cache)?;
    if times.len() != coords.len() {
        return Err(Error::shape(
            "align_time",
            "times and coords differ in length",
        ));
    }
    if let Some((i, t)) = times.iter().enumerate().find(|(_, &t)| t < target_t) {
        return Err(Error::contract(
            "align_time",
            format!("atom {i} is at t = {t}, earlier than target {target_t}"),
        ));
    }
    if times.iter().all(|&t| t == target_t) {
        return Ok(coords.to_vec());
    }
    let fresh = if target_t <= 0.0 {
        x0_cache.to_vec()
    } else {
        perturb(op, schedule, x0_cache, target_t, rng)?
    };
    Ok(coords
        .iter()
        .zip(fresh)
        .zip(times)
        .map(|((c, f), &t)| if t == target_t { *c } else { f })
        .collect())
}

/// Default `sigma_P`: RMS distance of pocket atoms from their centroid,
/// clamped to `[1, 20]`.
pub fn sigma_p_from_pocket(pocket: &[Vec3]) -> f64 {
    if pocket.is_empty() {
        return 1.0;
    }
    let c = centroid(pocket);
    let ms = pocket.iter().map(|p| dist(*p, c).powi(2)).sum::<f64>() / pocket.len() as f64;
    ms.sqrt().clamp(1.0, 20.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{Atom, Bond, BondOrder, Element};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> ChemGraph {
        let atoms = (0..n).map(|i| Atom::ligand(Element::C, "C", i)).collect();
        let bonds = (1..n)
            .map(|i| Bond::new(i - 1, i, BondOrder::Single))
            .collect();
        ChemGraph::new(atoms, bonds, vec![]).unwrap()
    }

    #[test]
    fn schedule_values() {
        let s = BetaSchedule::default();
        assert_eq!(s.beta(0.0).unwrap(), 0.01);
        assert!((s.beta(1.0).unwrap() - 3.0).abs() < 1e-15);
        assert!((s.int_beta(1.0).unwrap() - 1.505).abs() < 1e-15);
        assert_eq!(s.alpha(0.0).unwrap(), 1.0);
        assert!((s.alpha(1.0).unwrap() - (-0.7525f64).exp()).abs() < 1e-15);
        assert!(s.alpha(1.5).is_err());
        assert!(s.beta(-0.1).is_err());
    }

    #[test]
    fn path_eigenvalues() {
        let op = build_operator(&path(3), 1.0).unwrap();
        for (a, b) in op.lambda.iter().zip([1.0, 2.0, 4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_atom_operator() {
        let op = build_operator(&path(1), 2.0).unwrap();
        assert!((op.h[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((op.lambda[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sign_convention() {
        let op = build_operator(&path(6), 1.5).unwrap();
        for k in 0..6 {
            let first =
                op.p.column(k)
                    .iter()
                    .copied()
                    .find(|v| v.abs() > 1e-12)
                    .unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn renoise_collapses_at_zero() {
        let op = build_operator(&path(3), 1.0).unwrap();
        let x0 = vec![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [-1.0, 0.5, 2.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out =
            denoise_renoise_step(&op, &BetaSchedule::default(), &x0, 0.3, 0.3, &mut rng).unwrap();
        assert_eq!(out, x0);
    }

    #[test]
    fn score_vanishes_at_mean() {
        let op = build_operator(&path(3), 1.0).unwrap();
        let s = BetaSchedule::default();
        let x0 = vec![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [-1.0, 0.5, 2.0]];
        let a = s.alpha(0.4).unwrap();
        let xt: Coords = x0.iter().map(|p| p.map(|v| v * a)).collect();
        let sc = score(&op, &s, &xt, &x0, 0.4).unwrap();
        assert!(sc.iter().flatten().all(|v| v.abs() < 1e-14));
        assert!(score(&op, &s, &xt, &x0, 0.0).is_err());
    }

    #[test]
    fn align_rejects_early_atoms() {
        let op = build_operator(&path(2), 1.0).unwrap();
        let x = vec![[0.0; 3]; 2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = align_time(
            &op,
            &BetaSchedule::default(),
            &x,
            &x,
            &[0.5, 0.3],
            0.4,
            &mut rng,
        );
        assert!(r.is_err());
    }

    #[test]
    fn sigma_p_clamped() {
        assert_eq!(sigma_p_from_pocket(&[[0.0; 3], [0.1, 0.0, 0.0]]), 1.0);
        assert_eq!(
            sigma_p_from_pocket(&[[100.0, 0.0, 0.0], [-100.0, 0.0, 0.0]]),
            20.0
        );
        assert!((sigma_p_from_pocket(&[[3.0, 0.0, 0.0], [-3.0, 0.0, 0.0]]) - 3.0).abs() < 1e-12);
    }
}
