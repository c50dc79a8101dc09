//! Residue-type router: a separate copy of the denoiser trunk run on the
//! denoised, side-chain-stripped ligand, with a per-residue classifier over
//! the backbone hidden states.

use std::sync::Arc;

use rand::Rng;

use crate::chem::{AminoAcid, ChemGraph};
use crate::cyclization::{find_side_chain_leak, subgraph, CyclizationSpec};
use crate::denoiser::{
    forward_prepared, init_trunk, prepare, trunk, ComplexInput, DenoiserConfig, Prepared, Receptor,
};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::tensor::{ParamSet, Tape, Tensor, Var};

pub const N_RESIDUE_TYPES: usize = 20;
const TRUNK: &str = "trunk.";
const BACKBONE_ORDER: [&str; 4] = ["N", "CA", "C", "O"];

/// Router parameters live in their own [`ParamSet`] with names under
/// `trunk.` and `head.`.
pub fn init_router<R: Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> ParamSet {
    use rand_distr::StandardNormal;
    let mut ps = ParamSet::new();
    init_trunk(&mut ps, TRUNK, config, true, rng);
    let h = config.hidden_dim;
    let mut gauss = |rows: usize, cols: usize| {
        let s = (1.0 / rows as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::new(vec![rows, cols], data).expect("consistent shape")
    };
    ps.insert("head.w1", gauss(4 * h, h));
    ps.insert("head.w2", gauss(h, N_RESIDUE_TYPES));
    ps.insert("head.b1", Tensor::zeros(&[1, h]));
    ps.insert("head.b2", Tensor::zeros(&[1, N_RESIDUE_TYPES]));
    ps
}

/// Router input prepared from a stripped graph, plus the atom rows holding
/// each residue's N, CA, C and O.
#[derive(Clone, Debug)]
pub struct RouterInput {
    pub prepared: Prepared,
    pub n_residues: usize,
    backbone_rows: [Arc<[usize]>; 4],
}

/// Leak guard plus feature preparation. `graph` must already be stripped
/// (see [`crate::cyclization::subgraph`]).
pub fn prepare_router(
    config: &DenoiserConfig,
    receptor: &Receptor,
    graph: &ChemGraph,
    positions: &[Vec3],
    spec: &CyclizationSpec,
    t: f64,
) -> Result<RouterInput> {
    if let Some(atom) = find_side_chain_leak(graph, spec) {
        let a = &graph.atoms[atom];
        return Err(Error::contract(
            "router",
            format!(
                "side-chain atom {} of free residue {} reached the router",
                a.name,
                a.residue.unwrap_or(0)
            ),
        ));
    }
    let n_res = graph.n_residues();
    let mut rows: [Vec<usize>; 4] = Default::default();
    for r in 0..n_res {
        for (k, name) in BACKBONE_ORDER.iter().enumerate() {
            let i = graph.find_atom(r, name).ok_or_else(|| {
                Error::contract("router", format!("residue {r} lacks backbone atom {name}"))
            })?;
            rows[k].push(i);
        }
    }
    let prepared = prepare(
        config,
        &ComplexInput {
            receptor,
            graph,
            x_t: positions,
            t,
        },
    )?;
    Ok(RouterInput {
        prepared,
        n_residues: n_res,
        backbone_rows: rows.map(Arc::from),
    })
}

/// Logits `[N_res, 20]` recorded on `tape`.
pub fn logits_on_tape(
    tape: &mut Tape,
    params: &ParamSet,
    config: &DenoiserConfig,
    input: &RouterInput,
) -> Result<Var> {
    let out = trunk(tape, params, TRUNK, config, &input.prepared, true)?;
    let parts = input
        .backbone_rows
        .iter()
        .map(|rows| tape.gather_rows(out.h, rows.clone()))
        .collect::<Result<Vec<_>>>()?;
    let feat = tape.concat(&parts)?;
    let w1 = tape.param(params, "head.w1")?;
    let b1 = tape.param(params, "head.b1")?;
    let z = tape.matmul(feat, w1)?;
    let z = tape.add_row(z, b1)?;
    let z = tape.silu(z);
    let w2 = tape.param(params, "head.w2")?;
    let b2 = tape.param(params, "head.b2")?;
    let z = tape.matmul(z, w2)?;
    tape.add_row(z, b2)
}

pub fn logits(params: &ParamSet, config: &DenoiserConfig, input: &RouterInput) -> Result<Tensor> {
    let mut tape = Tape::new();
    let l = logits_on_tape(&mut tape, params, config, input)?;
    Ok(tape.to_tensor(l))
}

/// Everything the router needs from one denoiser call: strips the graph and
/// reads positions from the denoised structure.
pub fn predict(
    params: &ParamSet,
    config: &DenoiserConfig,
    receptor: &Receptor,
    graph: &ChemGraph,
    denoised: &[Vec3],
    spec: &CyclizationSpec,
    t: f64,
) -> Result<Tensor> {
    let input = routed_input(config, receptor, graph, denoised, spec, t)?;
    logits(params, config, &input)
}

/// Subgraph extraction followed by [`prepare_router`].
pub fn routed_input(
    config: &DenoiserConfig,
    receptor: &Receptor,
    graph: &ChemGraph,
    denoised: &[Vec3],
    spec: &CyclizationSpec,
    t: f64,
) -> Result<RouterInput> {
    if denoised.len() != graph.n_atoms() {
        return Err(Error::shape("router", "positions do not match the graph"));
    }
    let (sub, old) = subgraph(graph, spec);
    let pos: Vec<Vec3> = old.iter().map(|&i| denoised[i]).collect();
    prepare_router(config, receptor, &sub, &pos, spec, t)
}

/// Mean negative log-likelihood of `truth` over non-anchor residues.
pub fn nll_on_tape(
    tape: &mut Tape,
    logits: Var,
    truth: &[AminoAcid],
    spec: &CyclizationSpec,
) -> Result<Var> {
    let free: Vec<usize> = (0..truth.len()).filter(|&r| !spec.is_anchor(r)).collect();
    if free.is_empty() {
        return Err(Error::contract("router_loss", "no free residues"));
    }
    let targets = free
        .iter()
        .map(|&r| {
            truth[r]
                .index()
                .ok_or_else(|| Error::contract("router_loss", "unknown residue in the labels"))
        })
        .collect::<Result<Vec<_>>>()?;
    let ls = tape.log_softmax(logits)?;
    let rows = tape.gather_rows(ls, free.into())?;
    let picked = tape.pick_cols(rows, targets.into())?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -1.0))
}

/// One training example for the router, with the frozen denoiser's output
/// already computed (off-tape, so no gradient can reach it).
#[derive(Clone, Debug)]
pub struct RouterExample {
    pub input: RouterInput,
    pub truth: Vec<AminoAcid>,
    pub spec: CyclizationSpec,
}

/// Runs the frozen denoiser on `x_t` and prepares the router input from its
/// output.
#[allow(clippy::too_many_arguments)]
pub fn router_example(
    denoiser: &ParamSet,
    config: &DenoiserConfig,
    receptor: &Receptor,
    graph: &ChemGraph,
    x_t: &[Vec3],
    spec: &CyclizationSpec,
    t: f64,
) -> Result<RouterExample> {
    let prep = prepare(
        config,
        &ComplexInput {
            receptor,
            graph,
            x_t,
            t,
        },
    )?;
    let denoised = forward_prepared(denoiser, config, &prep)?.x0_hat;
    Ok(RouterExample {
        input: routed_input(config, receptor, graph, &denoised, spec, t)?,
        truth: graph.residue_types.clone(),
        spec: spec.clone(),
    })
}

pub fn router_loss_on_tape(
    tape: &mut Tape,
    params: &ParamSet,
    config: &DenoiserConfig,
    example: &RouterExample,
) -> Result<Var> {
    let l = logits_on_tape(tape, params, config, &example.input)?;
    nll_on_tape(tape, l, &example.truth, &example.spec)
}

pub fn router_loss(params: &ParamSet, config: &DenoiserConfig, example: &RouterExample) -> Result<f64> {
    let mut tape = Tape::new();
    let l = router_loss_on_tape(&mut tape, params, config, example)?;
    Ok(tape.scalar(l))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    Argmax,
    Categorical { temperature: f64 },
}

impl DecodeMode {
    /// Sampling default: categorical at temperature 1 above t = 0.25,
    /// argmax at or below.
    pub fn for_time(t: f64) -> Self {
        if t > 0.25 {
            DecodeMode::Categorical { temperature: 1.0 }
        } else {
            DecodeMode::Argmax
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Decodes one residue type per row; anchor positions take the spec's codes.
pub fn sample_sequence<R: Rng + ?Sized>(
    logits: &Tensor,
    mode: DecodeMode,
    spec: &CyclizationSpec,
    rng: &mut R,
) -> Result<Vec<AminoAcid>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[1] != N_RESIDUE_TYPES {
        return Err(Error::shape("sample_sequence", format!("{shape:?}")));
    }
    let mut seq = Vec::with_capacity(shape[0]);
    for r in 0..shape[0] {
        let row = logits.row(r);
        let k = match mode {
            DecodeMode::Argmax => argmax(row),
            DecodeMode::Categorical { temperature } if temperature <= 0.0 => argmax(row),
            DecodeMode::Categorical { temperature } => {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = row.iter().map(|v| ((v - m) / temperature).exp()).collect();
                let total: f64 = w.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = N_RESIDUE_TYPES - 1;
                for (i, wi) in w.iter().enumerate() {
                    if u < *wi {
                        pick = i;
                        break;
                    }
                    u -= wi;
                }
                pick
            }
        };
        seq.push(AminoAcid::CANONICAL[k]);
    }
    spec.force_anchors(&mut seq);
    Ok(seq)
}
