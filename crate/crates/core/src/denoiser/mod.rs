//! Structure denoiser: an SE(3)-equivariant network mapping a noisy ligand
//! pose in its pocket to a clean pose estimate.

mod knn;
mod net;

use std::sync::Arc;

use rand::Rng;

pub use knn::{build_knn_graph, truncate_receptor, EdgeType, KnnEdge, RECEPTOR_FALLBACK};
pub(crate) use net::{init_trunk, trunk};
pub use net::{MAX_DISPLACEMENT, NODE_FEATURES, RBF_COUNT, RBF_MAX};

use crate::chem::{ChemGraph, Element};
use crate::error::{Error, Result};
use crate::geometry::{Coords, Vec3};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub k_neighbors: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub time_embed_dim: usize,
    /// Receptor atoms farther than this from every ligand atom are dropped.
    pub pocket_radius: f64,
    /// Output-layer init scale of the position networks.
    pub position_init_scale: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            k_neighbors: 16,
            n_layers: 4,
            hidden_dim: 64,
            time_embed_dim: 16,
            pocket_radius: 10.0,
            position_init_scale: 1e-3,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k_neighbors > 0
            && self.n_layers > 0
            && self.hidden_dim > 0
            && self.time_embed_dim > 0
            && self.time_embed_dim % 2 == 0
            && self.pocket_radius > 0.0
            && self.position_init_scale.is_finite()
            && self.position_init_scale >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(
                "denoiser config",
                format!("sizes must be positive (time_embed_dim even): {self:?}"),
            ))
        }
    }
}

/// Fixed receptor atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct Receptor {
    pub positions: Coords,
    pub elements: Vec<Element>,
    /// Backbone (`true`) or side-chain atom.
    pub backbone: Vec<bool>,
}

impl Receptor {
    pub fn new(positions: Coords, elements: Vec<Element>, backbone: Vec<bool>) -> Result<Self> {
        if positions.len() != elements.len() || positions.len() != backbone.len() {
            return Err(Error::contract("receptor", "field lengths differ"));
        }
        Ok(Receptor {
            positions,
            elements,
            backbone,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// A noisy ligand in its pocket at diffusion time `t`.
#[derive(Clone, Copy, Debug)]
pub struct ComplexInput<'a> {
    pub receptor: &'a Receptor,
    pub graph: &'a ChemGraph,
    pub x_t: &'a [Vec3],
    pub t: f64,
}

/// Sinusoidal embedding of `t` with `dim / 2` log-spaced frequencies.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = if half > 1 {
            (k as f64 * (100f64).ln() / (half - 1) as f64).exp()
        } else {
            1.0
        };
        out.push((freq * t).sin());
        out.push((freq * t).cos());
    }
    out
}

/// Everything a forward pass needs besides parameters: features, edges and
/// index arrays.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub n_ligand: usize,
    /// Original indices of the receptor atoms kept after truncation.
    pub receptor_kept: Vec<usize>,
    pub x_t: Tensor,
    pub receptor_positions: Tensor,
    pub node_features: Tensor,
    pub time_embedding: Tensor,
    pub knn: Vec<KnnEdge>,
    pub edge_types: Tensor,
    pub bond_features: Tensor,
    pub(crate) ligand_rows: Arc<[usize]>,
    pub(crate) receptor_rows: Arc<[usize]>,
    pub(crate) knn_src: Arc<[usize]>,
    pub(crate) knn_dst: Arc<[usize]>,
    /// Directed bonds `(i, j)`: atom `i` with neighbour `j`.
    pub(crate) bond_i: Arc<[usize]>,
    pub(crate) bond_j: Arc<[usize]>,
    /// Paths `i - j - k`: `p` is the directed bond `(i, j)`, `q` is `(j, k)`.
    pub(crate) path_p: Arc<[usize]>,
    pub(crate) path_q: Arc<[usize]>,
    pub(crate) path_i: Arc<[usize]>,
    pub(crate) path_j: Arc<[usize]>,
    pub(crate) path_k: Arc<[usize]>,
}

fn coords_tensor(x: &[Vec3]) -> Tensor {
    Tensor::new(vec![x.len(), 3], x.iter().flatten().copied().collect()).expect("n x 3")
}

pub fn tensor_coords(t: &[f64]) -> Coords {
    t.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Builds features and edges; the knn graph comes from `input.x_t`.
pub fn prepare(config: &DenoiserConfig, input: &ComplexInput) -> Result<Prepared> {
    config.validate()?;
    let n_l = input.graph.n_atoms();
    if n_l == 0 || input.x_t.len() != n_l {
        return Err(Error::contract(
            "denoiser input",
            format!("{} positions for {} ligand atoms", input.x_t.len(), n_l),
        ));
    }
    if input.receptor.is_empty() {
        return Err(Error::contract("denoiser input", "empty receptor"));
    }
    if !crate::geometry::all_finite(input.x_t) {
        return Err(Error::contract(
            "denoiser input",
            "non-finite ligand positions",
        ));
    }
    let kept = truncate_receptor(input.x_t, &input.receptor.positions, config.pocket_radius);
    let rec_pos: Coords = kept.iter().map(|&i| input.receptor.positions[i]).collect();
    let knn = build_knn_graph(input.x_t, &rec_pos, config.k_neighbors);
    prepare_with_edges(config, input, kept, knn)
}

/// Like [`prepare`] but with a caller-chosen receptor subset and knn edge
/// list (indices as in [`build_knn_graph`] over that subset).
pub fn prepare_with_edges(
    config: &DenoiserConfig,
    input: &ComplexInput,
    kept: Vec<usize>,
    knn: Vec<KnnEdge>,
) -> Result<Prepared> {
    let g = input.graph;
    let n_l = g.n_atoms();
    let n_r = kept.len();
    let in_cycle = g.in_cycle();
    let mut feats = vec![0.0; (n_l + n_r) * NODE_FEATURES];
    for (i, a) in g.atoms.iter().enumerate() {
        let row = &mut feats[i * NODE_FEATURES..(i + 1) * NODE_FEATURES];
        row[a.element.index()] = 1.0;
        row[8] = 1.0;
        row[9] = f64::from(u8::from(in_cycle[i]));
    }
    for (r, &src) in kept.iter().enumerate() {
        let row = &mut feats[(n_l + r) * NODE_FEATURES..(n_l + r + 1) * NODE_FEATURES];
        row[input.receptor.elements[src].index()] = 1.0;
        if input.receptor.backbone[src] {
            row[10] = 1.0;
        } else {
            row[11] = 1.0;
        }
    }

    let mut bond_i = Vec::new();
    let mut bond_j = Vec::new();
    let mut bond_feats = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for b in &g.bonds {
        if !seen.insert(b.key()) {
            continue;
        }
        for (i, j) in [(b.a, b.b), (b.b, b.a)] {
            bond_i.push(i);
            bond_j.push(j);
            let mut f = [0.0; 3];
            f[b.order.index()] = 1.0;
            bond_feats.extend_from_slice(&f);
        }
    }
    // directed bonds leaving each atom
    let mut out_of: Vec<Vec<usize>> = vec![Vec::new(); n_l];
    for (p, &i) in bond_i.iter().enumerate() {
        out_of[i].push(p);
    }
    let (mut pp, mut pq, mut pi, mut pj, mut pk) = (vec![], vec![], vec![], vec![], vec![]);
    for p in 0..bond_i.len() {
        let (i, j) = (bond_i[p], bond_j[p]);
        for &q in &out_of[j] {
            let k = bond_j[q];
            if k != i {
                pp.push(p);
                pq.push(q);
                pi.push(i);
                pj.push(j);
                pk.push(k);
            }
        }
    }
    let mut etypes = vec![0.0; knn.len() * 2];
    for (e, edge) in knn.iter().enumerate() {
        etypes[e * 2 + edge.kind.index()] = 1.0;
    }
    let rec_pos: Coords = kept.iter().map(|&i| input.receptor.positions[i]).collect();
    let n_b = bond_i.len();
    Ok(Prepared {
        n_ligand: n_l,
        x_t: coords_tensor(input.x_t),
        receptor_positions: Tensor::new(vec![n_r, 3], rec_pos.iter().flatten().copied().collect())?,
        node_features: Tensor::new(vec![n_l + n_r, NODE_FEATURES], feats)?,
        time_embedding: Tensor::new(
            vec![1, config.time_embed_dim],
            time_embedding(input.t, config.time_embed_dim),
        )?,
        edge_types: Tensor::new(vec![knn.len(), 2], etypes)?,
        bond_features: Tensor::new(vec![n_b, 3], bond_feats)?,
        ligand_rows: (0..n_l).collect(),
        receptor_rows: (n_l..n_l + n_r).collect(),
        knn_src: knn.iter().map(|e| e.src).collect(),
        knn_dst: knn.iter().map(|e| e.dst).collect(),
        bond_i: bond_i.into(),
        bond_j: bond_j.into(),
        path_p: pp.into(),
        path_q: pq.into(),
        path_i: pi.into(),
        path_j: pj.into(),
        path_k: pk.into(),
        receptor_kept: kept,
        knn,
    })
}

impl Prepared {
    /// Same graph and features with new ligand positions.
    pub fn with_positions(&self, x_t: &[Vec3]) -> Result<Prepared> {
        if x_t.len() != self.n_ligand {
            return Err(Error::shape("with_positions", "ligand size changed"));
        }
        let mut p = self.clone();
        p.x_t = coords_tensor(x_t);
        Ok(p)
    }
}

pub fn init_params<R: Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> ParamSet {
    let mut ps = ParamSet::new();
    init_trunk(&mut ps, "", config, false, rng);
    ps
}

#[derive(Clone, Debug)]
pub struct DenoiserOutput {
    pub x0_hat: Coords,
    /// Ligand hidden states, `[N_L, hidden_dim]`.
    pub hidden: Tensor,
}

/// Records the network on `tape`; returns `(x0_hat [N_L,3], hidden [N_L,H])`.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &ParamSet,
    config: &DenoiserConfig,
    prep: &Prepared,
) -> Result<(Var, Var)> {
    let out = trunk(tape, params, "", config, prep, false)?;
    Ok((out.x, out.h))
}

pub fn forward_prepared(
    params: &ParamSet,
    config: &DenoiserConfig,
    prep: &Prepared,
) -> Result<DenoiserOutput> {
    let mut tape = Tape::new();
    let (x, h) = forward_on_tape(&mut tape, params, config, prep)?;
    Ok(DenoiserOutput {
        x0_hat: tensor_coords(tape.value(x)),
        hidden: tape.to_tensor(h),
    })
}

pub fn forward(
    params: &ParamSet,
    config: &DenoiserConfig,
    input: &ComplexInput,
) -> Result<DenoiserOutput> {
    forward_prepared(params, config, &prepare(config, input)?)
}

/// Mean squared coordinate error of the denoiser output against `x0`.
pub fn recon_loss_on_tape(
    tape: &mut Tape,
    params: &ParamSet,
    config: &DenoiserConfig,
    prep: &Prepared,
    x0: &[Vec3],
) -> Result<Var> {
    if x0.len() != prep.n_ligand {
        return Err(Error::shape("recon_loss", "x0 does not match the ligand"));
    }
    let out = trunk(tape, params, "", config, prep, false)?;
    // (x_t - x0) + displacement keeps rounding at the scale of the residual
    let offset: Vec<f64> = prep
        .x_t
        .data()
        .iter()
        .zip(x0.iter().flatten())
        .map(|(a, b)| a - b)
        .collect();
    let offset = tape.constant(Tensor::new(vec![prep.n_ligand, 3], offset)?);
    let r = tape.add(offset, out.disp)?;
    let sq = tape.square(r);
    Ok(tape.mean(sq))
}

pub fn recon_loss(
    params: &ParamSet,
    config: &DenoiserConfig,
    input: &ComplexInput,
    x0: &[Vec3],
) -> Result<f64> {
    let prep = prepare(config, input)?;
    let mut tape = Tape::new();
    let l = recon_loss_on_tape(&mut tape, params, config, &prep, x0)?;
    Ok(tape.scalar(l))
}
