//! Routed sampling over a time-dependent atom73 state.
//!
//! Every residue owns 73 coordinate slots (one per atom73 column) and the
//! spec's cyclization atoms own one slot each after the residue block. The
//! current sequence selects which slots form the ligand; the rest keep their
//! last coordinates and times until a residue switches back to them.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chem::{layout, templates, validate_graph, AminoAcid, ChemGraph};
use crate::cyclization::{assemble, AtomRef, CyclizationSpec, CyclizationType};
use crate::denoiser::{forward, ComplexInput, DenoiserConfig, Receptor};
use crate::error::{Error, Result};
use crate::geometry::{centroid, translate, Coords, Vec3};
use crate::harmonic::{
    align_time, build_operator, denoise_renoise_step, sample_prior_cholesky, sigma_p_from_pocket,
    BetaSchedule, HarmonicOperator,
};
use crate::router::{predict, sample_sequence, DecodeMode};
use crate::tensor::ParamSet;

/// Structure model: predicts clean coordinates for the ligand in `graph`.
pub trait StructureDenoiser {
    fn denoise(
        &self,
        receptor: &Receptor,
        graph: &ChemGraph,
        x_t: &[Vec3],
        t: f64,
    ) -> Result<Coords>;
}

/// Sequence model: proposes the next sequence from a denoised structure.
/// Anchor positions are forced by the caller afterwards.
pub trait SequenceRouter {
    fn route(
        &mut self,
        receptor: &Receptor,
        graph: &ChemGraph,
        denoised: &[Vec3],
        spec: &CyclizationSpec,
        t: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<AminoAcid>>;
}

/// Trained denoiser parameters.
#[derive(Clone, Debug)]
pub struct NeuralDenoiser {
    pub params: ParamSet,
    pub config: DenoiserConfig,
}

impl StructureDenoiser for NeuralDenoiser {
    fn denoise(
        &self,
        receptor: &Receptor,
        graph: &ChemGraph,
        x_t: &[Vec3],
        t: f64,
    ) -> Result<Coords> {
        let input = ComplexInput {
            receptor,
            graph,
            x_t,
            t,
        };
        Ok(forward(&self.params, &self.config, &input)?.x0_hat)
    }
}

/// Trained router parameters. `decode` overrides the time-based default of
/// [`DecodeMode::for_time`].
#[derive(Clone, Debug)]
pub struct NeuralRouter {
    pub params: ParamSet,
    pub config: DenoiserConfig,
    pub decode: Option<DecodeMode>,
}

impl SequenceRouter for NeuralRouter {
    fn route(
        &mut self,
        receptor: &Receptor,
        graph: &ChemGraph,
        denoised: &[Vec3],
        spec: &CyclizationSpec,
        t: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<AminoAcid>> {
        let logits = predict(
            &self.params,
            &self.config,
            receptor,
            graph,
            denoised,
            spec,
            t,
        )?;
        let mode = self.decode.unwrap_or_else(|| DecodeMode::for_time(t));
        sample_sequence(&logits, mode, spec, rng)
    }
}

/// Keeps whatever sequence the state already has.
#[derive(Clone, Copy, Debug, Default)]
pub struct FixedSequence;

impl SequenceRouter for FixedSequence {
    fn route(
        &mut self,
        _: &Receptor,
        graph: &ChemGraph,
        _: &[Vec3],
        _: &CyclizationSpec,
        _: f64,
        _: &mut dyn RngCore,
    ) -> Result<Vec<AminoAcid>> {
        Ok(graph.residue_types.clone())
    }
}

/// Draws every free residue uniformly at each routing step.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomSequence;

impl SequenceRouter for RandomSequence {
    fn route(
        &mut self,
        _: &Receptor,
        graph: &ChemGraph,
        _: &[Vec3],
        _: &CyclizationSpec,
        _: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<AminoAcid>> {
        Ok(random_sequence(graph.n_residues(), rng))
    }
}

fn random_sequence<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<AminoAcid> {
    (0..n)
        .map(|_| AminoAcid::CANONICAL[rng.random_range(0..AminoAcid::CANONICAL.len())])
        .collect()
}

/// Denoiser stand-in that always answers with a fixed structure `x*`,
/// given per slot so it covers every sequence the sampler may visit.
#[derive(Clone, Debug)]
pub struct TargetOracle {
    pub slots: SlotIndex,
    pub target: Coords,
}

impl TargetOracle {
    /// `x*` restricted to the atoms of `graph`.
    pub fn target_for(&self, graph: &ChemGraph) -> Result<Coords> {
        Ok(self.slots.map(graph)?.iter().map(|&s| self.target[s]).collect())
    }
}

impl StructureDenoiser for TargetOracle {
    fn denoise(&self, _: &Receptor, graph: &ChemGraph, _: &[Vec3], _: f64) -> Result<Coords> {
        self.target_for(graph)
    }
}

/// Addressing of the flat slot array: `residue * 73 + column`, then the
/// spec's cyclization atoms in [`CyclizationSpec::cyclization_atoms`] order.
#[derive(Clone, Debug)]
pub struct SlotIndex {
    n_residues: usize,
    width: usize,
    cyc: Vec<AtomRef>,
}

impl SlotIndex {
    pub fn new(spec: &CyclizationSpec) -> Self {
        SlotIndex {
            n_residues: spec.n_residues,
            width: layout().width(),
            cyc: spec.cyclization_atoms(),
        }
    }

    pub fn n_slots(&self) -> usize {
        self.n_residues * self.width + self.cyc.len()
    }

    pub fn n_atom73(&self) -> usize {
        self.n_residues * self.width
    }

    pub fn cyclization_atoms(&self) -> &[AtomRef] {
        &self.cyc
    }

    pub fn residue_slot(&self, residue: usize, column: usize) -> usize {
        residue * self.width + column
    }

    pub fn cyc_slot(&self, k: usize) -> usize {
        self.n_atom73() + k
    }

    /// Slot of every atom of `graph`, in atom order.
    pub fn map(&self, graph: &ChemGraph) -> Result<Vec<usize>> {
        let lay = layout();
        graph
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let missing = || {
                    Error::contract(
                        "extract",
                        format!("atom {i} ({}) has no slot", a.name),
                    )
                };
                let r = a.residue.ok_or_else(missing)?;
                if let Some(k) = self
                    .cyc
                    .iter()
                    .position(|c| c.residue == r && c.name == a.name)
                {
                    return Ok(self.cyc_slot(k));
                }
                let aa = *graph.residue_types.get(r).ok_or_else(missing)?;
                let col = lay.column(aa, &a.name).ok_or_else(missing)?;
                if r >= self.n_residues {
                    return Err(missing());
                }
                Ok(self.residue_slot(r, col))
            })
            .collect()
    }

    /// Edges of the super-graph: every residue's slots joined by the bonds of
    /// all twenty templates (side chains hang off the shared backbone and
    /// CB columns), plus every bond the spec adds between residues and to the
    /// cyclization atoms.
    pub fn super_edges(&self, spec: &CyclizationSpec) -> Result<BTreeSet<(usize, usize)>> {
        let lay = layout();
        let mut edges = BTreeSet::new();
        let mut add = |a: usize, b: usize| {
            edges.insert((a.min(b), a.max(b)));
        };
        for r in 0..self.n_residues {
            for t in templates().iter() {
                let cols = lay.columns(t.code).expect("canonical");
                for &(a, b, _) in &t.intra_bonds {
                    add(self.residue_slot(r, cols[a]), self.residue_slot(r, cols[b]));
                }
            }
        }
        let g = assemble(&vec![AminoAcid::Ala; self.n_residues], spec)?;
        let map = self.map(&g)?;
        for b in &g.bonds {
            add(map[b.a], map[b.b]);
        }
        Ok(edges)
    }

    /// `L + sigma_P^-2 I` over all slots.
    pub fn super_precision(&self, spec: &CyclizationSpec, sigma_p: f64) -> Result<DMatrix<f64>> {
        let n = self.n_slots();
        let mut h = DMatrix::from_diagonal_element(n, n, sigma_p.powi(-2));
        for (a, b) in self.super_edges(spec)? {
            h[(a, a)] += 1.0;
            h[(b, b)] += 1.0;
            h[(a, b)] -= 1.0;
            h[(b, a)] -= 1.0;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
pub struct SamplerOptions {
    pub n_steps: usize,
    /// Terminal time; the loop runs while `t > epsilon`.
    pub epsilon: f64,
    pub schedule: BetaSchedule,
    /// `false` swaps the graph operator for the isotropic `sigma_P^-2 I`.
    pub harmonic: bool,
    /// Routing happens only at `t <= route_below`.
    pub route_below: f64,
    /// Overrides the pocket-derived `sigma_P`.
    pub sigma_p: Option<f64>,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            n_steps: 1000,
            epsilon: 1e-4,
            schedule: BetaSchedule::default(),
            harmonic: true,
            route_below: 0.5,
            sigma_p: None,
        }
    }
}

/// One line of the step trace.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Time at the start of the step.
    pub t: f64,
    pub routed: bool,
    /// Sequence after the step, one-letter codes.
    pub sequence: String,
}

/// The sampler's full state. Coordinates are held in a frame centred on the
/// pocket centroid.
#[derive(Clone, Debug)]
pub struct SamplerState {
    pub spec: CyclizationSpec,
    pub slots: SlotIndex,
    /// All slots: the atom73 block followed by the cyclization atoms.
    pub x: Coords,
    pub x0_cache: Coords,
    /// Whether `x0_cache[s]` came from a denoiser call (otherwise alignment
    /// falls back to the current coordinate).
    pub x0_valid: Vec<bool>,
    pub timer: Vec<f64>,
    pub sequence: Vec<AminoAcid>,
    pub graph: ChemGraph,
    /// Slot of each atom of `graph`.
    pub index: Vec<usize>,
    pub t: f64,
    pub step: usize,
    pub router_calls: usize,
    /// Largest `t` at which the router was called.
    pub max_routed_t: Option<f64>,
    pub trace: Vec<StepRecord>,
    receptor: Receptor,
    center: Vec3,
    sigma_p: f64,
    options: SamplerOptions,
    op: HarmonicOperator,
}

impl SamplerState {
    /// Random free residues, anchors fixed, every slot drawn jointly from the
    /// super-graph prior, all timers at 1.
    pub fn init<R: Rng + ?Sized>(
        spec: &CyclizationSpec,
        receptor: &Receptor,
        options: &SamplerOptions,
        rng: &mut R,
    ) -> Result<Self> {
        if receptor.is_empty() {
            return Err(Error::contract("sampler init", "empty receptor"));
        }
        let center = centroid(&receptor.positions);
        let mut receptor = receptor.clone();
        receptor.positions = translate(&receptor.positions, center.map(|c| -c));
        let sigma_p = options
            .sigma_p
            .unwrap_or_else(|| sigma_p_from_pocket(&receptor.positions));

        let mut sequence = random_sequence(spec.n_residues, rng);
        spec.force_anchors(&mut sequence);
        let graph = assemble(&sequence, spec)?;
        let slots = SlotIndex::new(spec);
        let index = slots.map(&graph)?;

        let h = slots.super_precision(spec, sigma_p)?;
        let x = sample_prior_cholesky(&h, rng, [0.0; 3])?;
        let n = x.len();
        let op = operator_for(&graph, sigma_p, options.harmonic)?;
        Ok(SamplerState {
            spec: spec.clone(),
            x0_cache: x.clone(),
            x,
            x0_valid: vec![false; n],
            timer: vec![1.0; n],
            sequence,
            graph,
            index,
            slots,
            t: 1.0,
            step: 0,
            router_calls: 0,
            max_routed_t: None,
            trace: Vec::new(),
            receptor,
            center,
            sigma_p,
            options: options.clone(),
            op,
        })
    }

    pub fn sigma_p(&self) -> f64 {
        self.sigma_p
    }

    /// Pocket centroid subtracted from every coordinate.
    pub fn center(&self) -> Vec3 {
        self.center
    }

    /// Receptor in the sampler's frame.
    pub fn receptor(&self) -> &Receptor {
        &self.receptor
    }

    pub fn operator(&self) -> &HarmonicOperator {
        &self.op
    }

    /// Atom73 block as `[residue][column]`.
    pub fn atom73(&self, residue: usize) -> &[Vec3] {
        let s = self.slots.residue_slot(residue, 0);
        &self.x[s..s + layout().width()]
    }

    pub fn x_cyc(&self) -> &[Vec3] {
        &self.x[self.slots.n_atom73()..]
    }

    /// Coordinates of the current graph's atoms, with the slot of each.
    pub fn extract(&self) -> (Coords, Vec<usize>) {
        (
            self.index.iter().map(|&s| self.x[s]).collect(),
            self.index.clone(),
        )
    }

    /// Writes `coords` back to the slots in `index`; nothing else changes.
    pub fn cache(&mut self, coords: &[Vec3], index: &[usize]) -> Result<()> {
        if coords.len() != index.len() {
            return Err(Error::shape("cache", "coords and index differ in length"));
        }
        for (&s, p) in index.iter().zip(coords) {
            self.x[s] = *p;
        }
        Ok(())
    }

    /// Takes the state from `self.t` to `self.t - dt`.
    pub fn step<D, R>(
        &mut self,
        denoiser: &D,
        router: &mut R,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()>
    where
        D: StructureDenoiser + ?Sized,
        R: SequenceRouter + ?Sized,
    {
        let target = self.t - dt;
        if !(dt > 0.0) || target < -1e-9 {
            return Err(Error::contract(
                "sampler step",
                format!("need 0 < dt <= t, got dt = {dt}, t = {}", self.t),
            ));
        }
        self.step_to(denoiser, router, target.max(0.0), rng)
    }

    /// [`Self::step`] with an explicit target time; targets within 1e-9 of
    /// zero are snapped to zero so the last step lands on `x0_hat` exactly.
    pub fn step_to<D, R>(
        &mut self,
        denoiser: &D,
        router: &mut R,
        target: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()>
    where
        D: StructureDenoiser + ?Sized,
        R: SequenceRouter + ?Sized,
    {
        let t = self.t;
        let target = if target < 1e-9 { 0.0 } else { target };
        if !(target < t) {
            return Err(Error::contract(
                "sampler step",
                format!("target {target} is not before t = {t}"),
            ));
        }
        let sched = self.options.schedule;

        let (x_t, index) = self.extract();
        let x0_hat = denoiser.denoise(&self.receptor, &self.graph, &x_t, t)?;
        if x0_hat.len() != index.len() {
            return Err(Error::shape("sampler step", "denoiser changed the atom count"));
        }
        for (&s, p) in index.iter().zip(&x0_hat) {
            self.x0_cache[s] = *p;
            self.x0_valid[s] = true;
        }
        let x_next = denoise_renoise_step(&self.op, &sched, &x0_hat, t, t - target, rng)?;
        self.cache(&x_next, &index)?;
        for &s in &index {
            self.timer[s] = target;
        }

        let routed = t <= self.options.route_below;
        if routed {
            self.router_calls += 1;
            self.max_routed_t = Some(self.max_routed_t.map_or(t, |m| m.max(t)));
            let mut seq =
                router.route(&self.receptor, &self.graph, &x0_hat, &self.spec, t, rng)?;
            if seq.len() != self.spec.n_residues {
                return Err(Error::shape("sampler step", "router changed the length"));
            }
            self.spec.force_anchors(&mut seq);
            if seq != self.sequence {
                self.graph = assemble(&seq, &self.spec)?;
                self.index = self.slots.map(&self.graph)?;
                self.op = operator_for(&self.graph, self.sigma_p, self.options.harmonic)?;
                self.sequence = seq;
            }
        }

        let (x_sel, index) = self.extract();
        let times: Vec<f64> = index.iter().map(|&s| self.timer[s]).collect();
        let anchor: Coords = index
            .iter()
            .map(|&s| if self.x0_valid[s] { self.x0_cache[s] } else { self.x[s] })
            .collect();
        let aligned = align_time(&self.op, &sched, &x_sel, &anchor, &times, target, rng)?;
        self.cache(&aligned, &index)?;
        for &s in &index {
            self.timer[s] = target;
        }

        self.t = target;
        self.trace.push(StepRecord {
            step: self.step,
            t,
            routed,
            sequence: crate::chem::sequence_string(&self.sequence),
        });
        self.step += 1;
        self.check_invariants()
    }

    fn violation(&self, msg: String) -> Error {
        Error::Invariant {
            step: self.step,
            msg,
            dump: self.dump(),
        }
    }

    /// Short human-readable summary used in invariant errors.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "t = {}", self.t);
        let _ = writeln!(
            s,
            "sequence = {}",
            crate::chem::sequence_string(&self.sequence)
        );
        let _ = writeln!(s, "selected atoms = {}", self.index.len());
        let (lo, hi) = self
            .timer
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        let _ = write!(s, "timer range = [{lo}, {hi}]");
        s
    }

    /// Timer coherence and range, anchors, closing bond, graph validity.
    pub fn check_invariants(&self) -> Result<()> {
        if let Some(v) = self.timer.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(self.violation(format!("timer value {v} outside [0, 1]")));
        }
        if let Some(&s) = self.index.iter().find(|&&s| self.timer[s] != self.t) {
            return Err(self.violation(format!(
                "selected slot {s} is at time {} instead of {}",
                self.timer[s], self.t
            )));
        }
        for k in 0..self.slots.cyclization_atoms().len() {
            let s = self.slots.cyc_slot(k);
            if self.timer[s] != self.t {
                return Err(self.violation(format!("cyclization slot {s} is out of step")));
            }
        }
        for &(p, aa) in &self.spec.anchors {
            if self.sequence[p] != aa || self.graph.residue_types[p] != aa {
                return Err(self.violation(format!("anchor {p} is no longer {aa}")));
            }
        }
        if self.graph.residue_types != self.sequence {
            return Err(self.violation("graph and sequence disagree".into()));
        }
        if let Some(cb) = self.spec.closing_bond {
            let ends = (
                self.graph.find_atom(cb.a.residue, cb.a.name),
                self.graph.find_atom(cb.b.residue, cb.b.name),
            );
            match ends {
                (Some(a), Some(b)) if self.graph.has_bond(a, b) => {}
                _ => return Err(self.violation("closing bond lost".into())),
            }
        }
        let report = validate_graph(&self.graph);
        if !report.is_valid() {
            return Err(self.violation(format!("invalid graph: {report}")));
        }
        if !crate::geometry::all_finite(&self.x) {
            return Err(self.violation("non-finite coordinates".into()));
        }
        Ok(())
    }
}

fn operator_for(graph: &ChemGraph, sigma_p: f64, harmonic: bool) -> Result<HarmonicOperator> {
    if harmonic {
        build_operator(graph, sigma_p)
    } else {
        HarmonicOperator::isotropic(graph.n_atoms(), sigma_p)
    }
}

/// Result of a full sampling run, in the receptor's original frame.
#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub coords: Coords,
    pub sequence: Vec<AminoAcid>,
    pub graph: ChemGraph,
    pub seed: u64,
    pub ctype: CyclizationType,
    pub n_steps: usize,
    pub router_calls: usize,
    pub max_routed_t: Option<f64>,
    pub trace: Vec<StepRecord>,
}

impl SampleOutput {
    /// Plain-text run log: a header, then one line per step.
    pub fn sidecar(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# seed {}", self.seed);
        let _ = writeln!(s, "# ctype {}", self.ctype);
        let _ = writeln!(s, "# n_steps {}", self.n_steps);
        let _ = writeln!(
            s,
            "# final {}",
            crate::chem::sequence_string(&self.sequence)
        );
        for r in &self.trace {
            let _ = writeln!(
                s,
                "{} {:.6} {} {}",
                r.step,
                r.t,
                u8::from(r.routed),
                r.sequence
            );
        }
        s
    }
}

/// The full loop: `n_steps` uniform steps from 1 down to `epsilon`, then a
/// final denoiser call on the last state.
pub fn run<D, R>(
    spec: &CyclizationSpec,
    receptor: &Receptor,
    denoiser: &D,
    router: &mut R,
    options: &SamplerOptions,
    seed: u64,
) -> Result<SampleOutput>
where
    D: StructureDenoiser + ?Sized,
    R: SequenceRouter + ?Sized,
{
    if options.n_steps < 2 {
        return Err(Error::contract("sampler run", "n_steps must be at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = SamplerState::init(spec, receptor, options, &mut rng)?;
    run_from(&mut state, denoiser, router, &mut rng)?;
    let (x, _) = state.extract();
    let x0 = denoiser.denoise(&state.receptor, &state.graph, &x, state.t)?;
    Ok(SampleOutput {
        coords: translate(&x0, state.center),
        sequence: state.sequence.clone(),
        graph: state.graph.clone(),
        seed,
        ctype: spec.ctype,
        n_steps: options.n_steps,
        router_calls: state.router_calls,
        max_routed_t: state.max_routed_t,
        trace: std::mem::take(&mut state.trace),
    })
}

/// Steps an initialised state through the whole schedule. Step `k` moves
/// from `(n - k) / n` to `(n - k - 1) / n`, so the times carry no
/// accumulated rounding.
pub fn run_from<D, R>(
    state: &mut SamplerState,
    denoiser: &D,
    router: &mut R,
    rng: &mut ChaCha8Rng,
) -> Result<()>
where
    D: StructureDenoiser + ?Sized,
    R: SequenceRouter + ?Sized,
{
    let n = state.options.n_steps;
    let eps = state.options.epsilon;
    let mut k = 0;
    while state.t > eps && k < n {
        let target = (n - k - 1) as f64 / n as f64;
        state.step_to(denoiser, router, target, rng)?;
        k += 1;
    }
    Ok(())
}
