//! The equivariant message-passing trunk shared by the denoiser and the
//! router.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{DenoiserConfig, Prepared};
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

/// Largest per-layer displacement of a ligand atom, in Å.
pub const MAX_DISPLACEMENT: f64 = 10.0;

/// Radial basis centres (Å) and width for distance features.
pub const RBF_COUNT: usize = 20;
pub const RBF_MAX: f64 = 15.0;

pub(crate) fn rbf_centers() -> Arc<[f64]> {
    (0..RBF_COUNT)
        .map(|i| RBF_MAX * i as f64 / (RBF_COUNT - 1) as f64)
        .collect()
}

pub(crate) fn rbf_gamma() -> f64 {
    let spacing = RBF_MAX / (RBF_COUNT - 1) as f64;
    0.5 / (spacing * spacing)
}

/// Element one-hot (8), ligand flag, in-cycle flag, receptor backbone flag,
/// receptor side-chain flag.
pub const NODE_FEATURES: usize = 12;
pub const BOND_FEATURES: usize = 3;
pub const EDGE_TYPES: usize = 2;

fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("consistent shape")
}

/// Two-layer perceptron whose first layer is stored as one block per input
/// (equivalent to a single matrix over the concatenated input).
fn init_mlp<R: Rng + ?Sized>(
    ps: &mut ParamSet,
    name: &str,
    blocks: &[(&str, usize)],
    hidden: usize,
    out: usize,
    out_scale: f64,
    rng: &mut R,
) {
    let fan_in: usize = blocks.iter().map(|b| b.1).sum();
    for (block, width) in blocks {
        ps.insert(
            format!("{name}.w1.{block}"),
            gaussian(rng, *width, hidden, (1.0 / fan_in as f64).sqrt()),
        );
    }
    ps.insert(format!("{name}.b1"), Tensor::zeros(&[1, hidden]));
    ps.insert(
        format!("{name}.w2"),
        gaussian(rng, hidden, out, out_scale / (hidden as f64).sqrt()),
    );
    ps.insert(format!("{name}.b2"), Tensor::zeros(&[1, out]));
}

/// With `hidden_only`, the last layer's position networks are left out
/// (they cannot affect the hidden states).
pub(crate) fn init_trunk<R: Rng + ?Sized>(
    ps: &mut ParamSet,
    prefix: &str,
    config: &DenoiserConfig,
    hidden_only: bool,
    rng: &mut R,
) {
    let h = config.hidden_dim;
    let te = config.time_embed_dim;
    let r = RBF_COUNT;
    ps.insert(
        format!("{prefix}embed.node.w"),
        gaussian(rng, NODE_FEATURES, h, 1.0),
    );
    ps.insert(format!("{prefix}embed.node.b"), Tensor::zeros(&[1, h]));
    ps.insert(
        format!("{prefix}embed.bond.w"),
        gaussian(rng, BOND_FEATURES, h, 1.0),
    );
    ps.insert(format!("{prefix}embed.bond.b"), Tensor::zeros(&[1, h]));
    for l in 0..config.n_layers {
        let p = |n: &str| format!("{prefix}l{l}.{n}");
        init_mlp(
            ps,
            &p("phi_k"),
            &[("hi", h), ("hj", h), ("d", r), ("e", EDGE_TYPES), ("t", te)],
            h,
            h,
            1.0,
            rng,
        );
        init_mlp(
            ps,
            &p("phi_e"),
            &[("d", r), ("b", h), ("t", te)],
            h,
            h,
            1.0,
            rng,
        );
        init_mlp(
            ps,
            &p("phi_c"),
            &[("hi", h), ("hj", h), ("e", h), ("t", te)],
            h,
            h,
            1.0,
            rng,
        );
        init_mlp(ps, &p("phi_h"), &[("m", h), ("t", te)], h, h, 1.0, rng);
        // the last layer's bond update would never reach the output
        if l + 1 < config.n_layers {
            init_mlp(
                ps,
                &p("phi_b"),
                &[
                    ("hi", h),
                    ("hj", h),
                    ("hk", h),
                    ("eij", h),
                    ("ejk", h),
                    ("t", te),
                ],
                h,
                h,
                1.0,
                rng,
            );
        }
        if hidden_only && l + 1 == config.n_layers {
            continue;
        }
        init_mlp(
            ps,
            &p("psi_k"),
            &[("hi", h), ("hj", h), ("d", r), ("t", te)],
            h,
            1,
            config.position_init_scale,
            rng,
        );
        init_mlp(
            ps,
            &p("psi_c"),
            &[("hi", h), ("hj", h), ("d", r), ("e", h), ("t", te)],
            h,
            1,
            config.position_init_scale,
            rng,
        );
    }
}

enum In<'a> {
    /// Node-level input projected first, then gathered onto edges.
    Gathered(Var, &'a str, &'a Arc<[usize]>),
    Direct(Var, &'a str),
}

fn mlp(tape: &mut Tape, ps: &ParamSet, name: &str, inputs: &[In], temb: Var) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for input in inputs {
        let (v, block, index) = match input {
            In::Gathered(v, b, i) => (*v, *b, Some(*i)),
            In::Direct(v, b) => (*v, *b, None),
        };
        let w = tape.param(ps, &format!("{name}.w1.{block}"))?;
        let mut proj = tape.matmul(v, w)?;
        if let Some(index) = index {
            proj = tape.gather_rows(proj, index.clone())?;
        }
        acc = Some(match acc {
            None => proj,
            Some(a) => tape.add(a, proj)?,
        });
    }
    let acc = acc.expect("mlp needs at least one input");
    let wt = tape.param(ps, &format!("{name}.w1.t"))?;
    let tb = tape.matmul(temb, wt)?;
    let b1 = tape.param(ps, &format!("{name}.b1"))?;
    let row = tape.add(tb, b1)?;
    let pre = tape.add_row(acc, row)?;
    let act = tape.silu(pre);
    let w2 = tape.param(ps, &format!("{name}.w2"))?;
    let out = tape.matmul(act, w2)?;
    let b2 = tape.param(ps, &format!("{name}.b2"))?;
    tape.add_row(out, b2)
}

pub(crate) struct TrunkOut {
    /// Ligand positions `[N_L, 3]`.
    pub x: Var,
    /// Ligand hidden states `[N_L, H]`.
    pub h: Var,
    /// Summed per-layer displacements, `x - x_t`.
    pub disp: Var,
}

fn check_finite(tape: &Tape, vars: &[Var], stage: impl FnOnce() -> String) -> Result<()> {
    if vars
        .iter()
        .all(|v| tape.value(*v).iter().all(|x| x.is_finite()))
    {
        Ok(())
    } else {
        Err(Error::Numeric {
            stage: stage(),
            msg: "non-finite activations".into(),
        })
    }
}

pub(crate) fn trunk(
    tape: &mut Tape,
    ps: &ParamSet,
    prefix: &str,
    config: &DenoiserConfig,
    prep: &Prepared,
    hidden_only: bool,
) -> Result<TrunkOut> {
    let n_l = prep.n_ligand;
    let inv_k = 1.0 / config.k_neighbors as f64;
    let centers = rbf_centers();
    let gamma = rbf_gamma();
    let temb = tape.constant(prep.time_embedding.clone());

    let feats = tape.constant(prep.node_features.clone());
    let w = tape.param(ps, &format!("{prefix}embed.node.w"))?;
    let b = tape.param(ps, &format!("{prefix}embed.node.b"))?;
    let h0 = tape.matmul(feats, w)?;
    let h0 = tape.add_row(h0, b)?;
    let mut h_l = tape.gather_rows(h0, prep.ligand_rows.clone())?;
    let h_r = if prep.receptor_rows.is_empty() {
        None
    } else {
        Some(tape.gather_rows(h0, prep.receptor_rows.clone())?)
    };

    let has_bonds = !prep.bond_i.is_empty();
    let mut bond_state = if has_bonds {
        let bf = tape.constant(prep.bond_features.clone());
        let w = tape.param(ps, &format!("{prefix}embed.bond.w"))?;
        let b = tape.param(ps, &format!("{prefix}embed.bond.b"))?;
        let v = tape.matmul(bf, w)?;
        Some(tape.add_row(v, b)?)
    } else {
        None
    };
    let etype = tape.constant(prep.edge_types.clone());

    let mut x_l = tape.leaf(&prep.x_t);
    let mut disp = None;
    let x_r = if prep.receptor_positions.numel() > 0 {
        Some(tape.constant(prep.receptor_positions.clone()))
    } else {
        None
    };

    for l in 0..config.n_layers {
        let name = |n: &str| format!("{prefix}l{l}.{n}");
        let x_all = match x_r {
            Some(xr) => tape.concat_rows(&[x_l, xr])?,
            None => x_l,
        };
        let h_all = match h_r {
            Some(hr) => tape.concat_rows(&[h_l, hr])?,
            None => h_l,
        };

        // knn complex graph
        let xs = tape.gather_rows(x_all, prep.knn_src.clone())?;
        let xd = tape.gather_rows(x_all, prep.knn_dst.clone())?;
        let diff_k = tape.sub(xs, xd)?;
        let d_k = tape.norm_rows(diff_k)?;
        let rbf_k = tape.rbf(d_k, centers.clone(), gamma)?;
        let m_k = mlp(
            tape,
            ps,
            &name("phi_k"),
            &[
                In::Gathered(h_all, "hi", &prep.knn_dst),
                In::Gathered(h_all, "hj", &prep.knn_src),
                In::Direct(rbf_k, "d"),
                In::Direct(etype, "e"),
            ],
            temb,
        )?;
        let agg_k = tape.segment_sum(m_k, prep.knn_dst.clone(), n_l)?;
        let mut msg = tape.scale(agg_k, inv_k);

        // chemical graph
        let mut chem = None;
        if let Some(bs) = bond_state {
            let xi = tape.gather_rows(x_l, prep.bond_i.clone())?;
            let xj = tape.gather_rows(x_l, prep.bond_j.clone())?;
            let diff_c = tape.sub(xj, xi)?;
            let d_c = tape.norm_rows(diff_c)?;
            let rbf_c = tape.rbf(d_c, centers.clone(), gamma)?;
            let e = mlp(
                tape,
                ps,
                &name("phi_e"),
                &[In::Direct(rbf_c, "d"), In::Direct(bs, "b")],
                temb,
            )?;
            let m_c = mlp(
                tape,
                ps,
                &name("phi_c"),
                &[
                    In::Gathered(h_l, "hi", &prep.bond_i),
                    In::Gathered(h_l, "hj", &prep.bond_j),
                    In::Direct(e, "e"),
                ],
                temb,
            )?;
            let agg_c = tape.segment_sum(m_c, prep.bond_i.clone(), n_l)?;
            msg = tape.add(msg, agg_c)?;
            chem = Some((diff_c, rbf_c, e, bs));
        }

        let dh = mlp(tape, ps, &name("phi_h"), &[In::Direct(msg, "m")], temb)?;
        h_l = tape.add(h_l, dh)?;
        let h_all = match h_r {
            Some(hr) => tape.concat_rows(&[h_l, hr])?,
            None => h_l,
        };

        // bond update over paths i-j-k
        if let Some((_, _, e, bs)) = chem {
            if !prep.path_p.is_empty() && l + 1 < config.n_layers {
                let e_ij = tape.gather_rows(e, prep.path_p.clone())?;
                let e_jk = tape.gather_rows(e, prep.path_q.clone())?;
                let m_b = mlp(
                    tape,
                    ps,
                    &name("phi_b"),
                    &[
                        In::Gathered(h_l, "hi", &prep.path_i),
                        In::Gathered(h_l, "hj", &prep.path_j),
                        In::Gathered(h_l, "hk", &prep.path_k),
                        In::Direct(e_ij, "eij"),
                        In::Direct(e_jk, "ejk"),
                    ],
                    temb,
                )?;
                let db = tape.segment_sum(m_b, prep.path_p.clone(), prep.bond_i.len())?;
                bond_state = Some(tape.add(bs, db)?);
            }
        }

        if hidden_only && l + 1 == config.n_layers {
            check_finite(tape, &[h_l], || format!("{prefix}layer {l}"))?;
            continue;
        }

        // position update
        let s_k = mlp(
            tape,
            ps,
            &name("psi_k"),
            &[
                In::Gathered(h_all, "hi", &prep.knn_dst),
                In::Gathered(h_all, "hj", &prep.knn_src),
                In::Direct(rbf_k, "d"),
            ],
            temb,
        )?;
        let v_k = tape.mul_col(diff_k, s_k)?;
        let dx_k = tape.segment_sum(v_k, prep.knn_dst.clone(), n_l)?;
        let mut dx = tape.scale(dx_k, inv_k);
        if let Some((diff_c, rbf_c, e, _)) = chem {
            let s_c = mlp(
                tape,
                ps,
                &name("psi_c"),
                &[
                    In::Gathered(h_l, "hi", &prep.bond_i),
                    In::Gathered(h_l, "hj", &prep.bond_j),
                    In::Direct(rbf_c, "d"),
                    In::Direct(e, "e"),
                ],
                temb,
            )?;
            let v_c = tape.mul_col(diff_c, s_c)?;
            let dx_c = tape.segment_sum(v_c, prep.bond_i.clone(), n_l)?;
            dx = tape.add(dx, dx_c)?;
        }
        let dx = tape.clip_norm_rows(dx, MAX_DISPLACEMENT)?;
        x_l = tape.add(x_l, dx)?;
        disp = Some(match disp {
            Some(d) => tape.add(d, dx)?,
            None => dx,
        });
        check_finite(tape, &[x_l, h_l], || format!("{prefix}layer {l}"))?;
    }
    let disp = match disp {
        Some(d) => d,
        None => tape.constant(Tensor::zeros(&[n_l, 3])),
    };
    Ok(TrunkOut {
        x: x_l,
        h: h_l,
        disp,
    })
}
