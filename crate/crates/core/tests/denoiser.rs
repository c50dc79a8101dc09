use std::collections::{BTreeSet, VecDeque};

use cpsde::check::{denoiser_gradient_check, gradient_check_instance, GRADIENT_CHECK_EPS};
use cpsde::chem::{Atom, Bond, ChemGraph};
use cpsde::data_io::{gen_synthetic_dataset, ComplexRecord, SyntheticOptions};
use cpsde::denoiser::*;
use cpsde::geometry::{dist, max_abs_diff, Coords, RigidMotion, Vec3};
use cpsde::harmonic::{build_operator, perturb, BetaSchedule};
use cpsde::tensor::{ParamSet, Tape, Tensor};
use cpsde::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_cloud(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Coords {
    (0..n)
        .map(|_| std::array::from_fn(|_| s * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn knn_oracle(lig: &[Vec3], rec: &[Vec3], k: usize) -> BTreeSet<(usize, usize, bool)> {
    let all: Vec<Vec3> = lig.iter().chain(rec).copied().collect();
    let mut out = BTreeSet::new();
    for i in 0..lig.len() {
        let mut c: Vec<(f64, usize)> = (0..all.len())
            .filter(|&j| j != i)
            .map(|j| (dist(all[i], all[j]), j))
            .collect();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, j) in c.iter().take(k) {
            out.insert((j, i, j < lig.len()));
        }
    }
    out
}

#[test]
fn knn_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..100 {
        let n_l = rng.random_range(1..12);
        let n_r = rng.random_range(0..20);
        let k = rng.random_range(1..20);
        let mut lig = gaussian_cloud(&mut rng, n_l, 3.0);
        let rec = gaussian_cloud(&mut rng, n_r, 5.0);
        if trial % 10 == 0 && n_l > 1 {
            // exact duplicate distances exercise the index tie-break
            lig[1] = [-lig[0][0], -lig[0][1], -lig[0][2]];
        }
        let got: BTreeSet<_> = build_knn_graph(&lig, &rec, k)
            .into_iter()
            .map(|e| (e.src, e.dst, e.kind == EdgeType::LigandLigand))
            .collect();
        assert_eq!(got, knn_oracle(&lig, &rec, k), "trial {trial}");
        for i in 0..n_l {
            let deg = build_knn_graph(&lig, &rec, k)
                .iter()
                .filter(|e| e.dst == i)
                .count();
            assert_eq!(deg, k.min(n_l + n_r - 1));
        }
    }
}

#[test]
fn knn_small_cases() {
    let lig = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
    let rec = vec![[0.0, 5.0, 0.0]];
    let e = build_knn_graph(&lig, &rec, 3);
    assert_eq!(e.len(), 4);
    let e = build_knn_graph(&lig, &rec, 1);
    assert_eq!(e.len(), 2);
    assert!(e
        .iter()
        .all(|e| e.src == 1 - e.dst && e.kind == EdgeType::LigandLigand));
    // equidistant neighbors: the lower index wins
    let lig = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
    let e = build_knn_graph(&lig, &[], 1);
    assert_eq!(e[0].src, 1);
}

#[test]
fn receptor_truncation_and_fallback() {
    let lig = vec![[0.0; 3]];
    let rec = vec![[20.0, 0.0, 0.0], [5.0, 0.0, 0.0], [0.0, 9.9, 0.0]];
    assert_eq!(truncate_receptor(&lig, &rec, 10.0), vec![1, 2]);
    assert_eq!(truncate_receptor(&lig, &rec, 1.0), vec![0, 1, 2]);
    let far: Coords = (0..600).map(|i| [50.0 + i as f64, 0.0, 0.0]).collect();
    let kept = truncate_receptor(&lig, &far, 10.0);
    assert_eq!(kept.len(), RECEPTOR_FALLBACK);
    assert_eq!(kept[0], 0);
    assert_eq!(*kept.last().unwrap(), RECEPTOR_FALLBACK - 1);
}

fn fixture(seed: u64) -> (ComplexRecord, Coords) {
    let opts = SyntheticOptions {
        lengths: 3..=4,
        receptor_atoms: 60..=70,
        ..SyntheticOptions::default()
    };
    let rec = gen_synthetic_dataset(1, seed, &opts).unwrap().remove(0);
    let op = build_operator(&rec.graph, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xt = perturb(
        &op,
        &BetaSchedule::default(),
        &rec.ligand_positions,
        0.4,
        &mut rng,
    )
    .unwrap();
    (rec, xt)
}

fn small_config() -> DenoiserConfig {
    DenoiserConfig {
        k_neighbors: 8,
        n_layers: 2,
        hidden_dim: 16,
        time_embed_dim: 8,
        position_init_scale: 0.3,
        ..DenoiserConfig::default()
    }
}

#[test]
fn forward_is_se3_equivariant() {
    let (rec, xt) = fixture(3);
    let config = small_config();
    let params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(4));
    let input = ComplexInput {
        receptor: &rec.receptor,
        graph: &rec.graph,
        x_t: &xt,
        t: 0.4,
    };
    let base = forward(&params, &config, &input).unwrap();
    assert!(
        max_abs_diff(&base.x0_hat, &xt) > 1e-3,
        "network should move atoms"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let m = RigidMotion::random(&mut rng, 20.0);
        let receptor = Receptor {
            positions: m.apply_all(&rec.receptor.positions),
            ..rec.receptor.clone()
        };
        let moved = m.apply_all(&xt);
        let out = forward(
            &params,
            &config,
            &ComplexInput {
                receptor: &receptor,
                graph: &rec.graph,
                x_t: &moved,
                t: 0.4,
            },
        )
        .unwrap();
        assert!(max_abs_diff(&out.x0_hat, &m.apply_all(&base.x0_hat)) < 1e-8);
        let dh = out
            .hidden
            .data()
            .iter()
            .zip(base.hidden.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dh < 1e-8, "hidden invariance {dh}");
    }
}

#[test]
fn zero_position_networks_give_identity() {
    let (rec, xt) = fixture(6);
    let config = small_config();
    let mut params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(1));
    for (name, t) in params.iter_mut() {
        if name.contains("psi_") && (name.ends_with(".w2") || name.ends_with(".b2")) {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let input = ComplexInput {
        receptor: &rec.receptor,
        graph: &rec.graph,
        x_t: &xt,
        t: 0.7,
    };
    let out = forward(&params, &config, &input).unwrap();
    assert_eq!(out.x0_hat, xt);
}

fn permute_graph(g: &ChemGraph, perm: &[usize]) -> ChemGraph {
    // new atom a is old atom perm[a]
    let mut inv = vec![0; perm.len()];
    for (a, &o) in perm.iter().enumerate() {
        inv[o] = a;
    }
    let atoms: Vec<Atom> = perm.iter().map(|&o| g.atoms[o].clone()).collect();
    let bonds: Vec<Bond> = g
        .bonds
        .iter()
        .map(|b| Bond::new(inv[b.a], inv[b.b], b.order))
        .collect();
    ChemGraph::new(atoms, bonds, g.residue_types.clone()).unwrap()
}

#[test]
fn permuting_ligand_atoms_permutes_outputs() {
    let (rec, xt) = fixture(8);
    let config = small_config();
    let params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(9));
    let input = ComplexInput {
        receptor: &rec.receptor,
        graph: &rec.graph,
        x_t: &xt,
        t: 0.3,
    };
    let base = forward(&params, &config, &input).unwrap();
    let n = rec.graph.n_atoms();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..3 {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let g = permute_graph(&rec.graph, &perm);
        let x: Coords = perm.iter().map(|&o| xt[o]).collect();
        let out = forward(
            &params,
            &config,
            &ComplexInput {
                receptor: &rec.receptor,
                graph: &g,
                x_t: &x,
                t: 0.3,
            },
        )
        .unwrap();
        let want: Coords = perm.iter().map(|&o| base.x0_hat[o]).collect();
        assert!(max_abs_diff(&out.x0_hat, &want) < 1e-10);
        for (a, &o) in perm.iter().enumerate() {
            for (u, v) in out.hidden.row(a).iter().zip(base.hidden.row(o)) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn receptor_is_untouched_and_forward_deterministic() {
    let (rec, xt) = fixture(2);
    let before = rec.receptor.clone();
    let config = small_config();
    let params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(2));
    let input = ComplexInput {
        receptor: &rec.receptor,
        graph: &rec.graph,
        x_t: &xt,
        t: 0.5,
    };
    let a = forward(&params, &config, &input).unwrap();
    let b = forward(&params, &config, &input).unwrap();
    assert_eq!(rec.receptor, before);
    assert_eq!(a.x0_hat, b.x0_hat);
    assert_eq!(a.hidden.data(), b.hidden.data());
    assert_eq!(a.x0_hat.len(), rec.graph.n_atoms());
}

/// Hop distances over the ligand message graph: bonds plus ligand-ligand
/// knn edges, both directions.
fn message_hops(g: &ChemGraph, knn: &[KnnEdge], from: usize) -> Vec<usize> {
    let n = g.n_atoms();
    let mut adj = vec![Vec::new(); n];
    for b in &g.bonds {
        adj[b.a].push(b.b);
        adj[b.b].push(b.a);
    }
    for e in knn.iter().filter(|e| e.kind == EdgeType::LigandLigand) {
        adj[e.src].push(e.dst);
        adj[e.dst].push(e.src);
    }
    let mut d = vec![usize::MAX; n];
    d[from] = 0;
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if d[v] == usize::MAX {
                d[v] = d[u] + 1;
                q.push_back(v);
            }
        }
    }
    d
}

#[test]
fn perturbation_stays_local() {
    // one layer reaches three hops: neighbor messages, then the bond
    // update over two-bond paths feeding the position update
    let opts = SyntheticOptions {
        lengths: 8..=8,
        receptor_atoms: 60..=60,
        ctypes: vec![cpsde::cyclization::CyclizationType::Linear],
        ..SyntheticOptions::default()
    };
    let rec = gen_synthetic_dataset(1, 12, &opts).unwrap().remove(0);
    let xt = rec.ligand_positions.clone();
    for n_layers in [1, 2] {
        let config = DenoiserConfig {
            k_neighbors: 2,
            n_layers,
            ..small_config()
        };
        let params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(3));
        let input = ComplexInput {
            receptor: &rec.receptor,
            graph: &rec.graph,
            x_t: &xt,
            t: 0.5,
        };
        let prep = prepare(&config, &input).unwrap();
        let base = forward_prepared(&params, &config, &prep).unwrap();
        let mut far_checked = 0;
        for atom in [0, rec.graph.n_atoms() / 2] {
            let mut moved = xt.clone();
            moved[atom][0] += 0.37;
            let out =
                forward_prepared(&params, &config, &prep.with_positions(&moved).unwrap()).unwrap();
            let hops = message_hops(&rec.graph, &prep.knn, atom);
            for (i, &h) in hops.iter().enumerate() {
                if h > 3 * n_layers {
                    far_checked += 1;
                    assert_eq!(out.x0_hat[i], base.x0_hat[i], "atom {i} at {h} hops");
                }
            }
            assert_ne!(out.x0_hat[atom], base.x0_hat[atom]);
        }
        assert!(far_checked > 0);
    }
}

#[test]
fn loss_is_nonnegative_and_vanishes_at_the_output() {
    let (rec, xt) = fixture(4);
    let config = small_config();
    let params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(4));
    let input = ComplexInput {
        receptor: &rec.receptor,
        graph: &rec.graph,
        x_t: &xt,
        t: 0.5,
    };
    let out = forward(&params, &config, &input).unwrap();
    let l0 = recon_loss(&params, &config, &input, &out.x0_hat).unwrap();
    assert!((0.0..1e-24).contains(&l0), "{l0}");
    let l = recon_loss(&params, &config, &input, &rec.ligand_positions).unwrap();
    let naive: f64 = out
        .x0_hat
        .iter()
        .zip(&rec.ligand_positions)
        .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).powi(2)))
        .sum::<f64>()
        / (3 * xt.len()) as f64;
    assert!(l > 0.0);
    assert!((l - naive).abs() < 1e-10 * naive.max(1.0));
}

#[test]
fn non_finite_activation_names_the_layer() {
    let (rec, xt) = fixture(4);
    let config = small_config();
    let mut params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(4));
    params.get_mut("l1.phi_h.b2").unwrap().data_mut()[0] = f64::NAN;
    let input = ComplexInput {
        receptor: &rec.receptor,
        graph: &rec.graph,
        x_t: &xt,
        t: 0.5,
    };
    match forward(&params, &config, &input) {
        Err(Error::Numeric { stage, .. }) => assert!(stage.contains("layer 1"), "{stage}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_rejects_zero_sizes() {
    for c in [
        DenoiserConfig {
            k_neighbors: 0,
            ..DenoiserConfig::default()
        },
        DenoiserConfig {
            hidden_dim: 0,
            ..DenoiserConfig::default()
        },
        DenoiserConfig {
            time_embed_dim: 3,
            ..DenoiserConfig::default()
        },
        DenoiserConfig {
            pocket_radius: 0.0,
            ..DenoiserConfig::default()
        },
    ] {
        assert!(c.validate().is_err());
    }
}

#[test]
fn gradient_check_passes() {
    let out = denoiser_gradient_check(0);
    println!("{out}");
    assert!(out.passed(), "{out}");
}

/// Every parameter's central difference converges to the reverse-mode value
/// at some step in the allowed range, including on an instance where a
/// single fixed step cannot resolve the smallest gradients.
#[test]
fn every_gradient_converges_under_step_refinement() {
    let (config, prep, params, x0) = gradient_check_instance(2).unwrap();
    let loss = |p: &ParamSet| {
        let mut t = Tape::new();
        let v = recon_loss_on_tape(&mut t, p, &config, &prep, &x0).unwrap();
        t.scalar(v)
    };
    let mut tape = Tape::new();
    let l = recon_loss_on_tape(&mut tape, &params, &config, &prep, &x0).unwrap();
    let grads = tape.backward(l).unwrap();
    let steps = [1e-4, GRADIENT_CHECK_EPS, 1e-5, 3e-6, 1e-6, 3e-7];
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let n = params.get(&name).unwrap().numel();
        let analytic = grads.param(&name).map_or(vec![0.0; n], <[f64]>::to_vec);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = params.get(&name).unwrap().data()[i];
            let mut best = f64::INFINITY;
            for &h in &steps {
                probe.get_mut(&name).unwrap().data_mut()[i] = orig + h;
                let up = loss(&probe);
                probe.get_mut(&name).unwrap().data_mut()[i] = orig - h;
                let down = loss(&probe);
                let c = (up - down) / (2.0 * h);
                best = best.min((a - c).abs() / (a.abs() + c.abs() + 1e-12));
                if best < 1e-6 {
                    break;
                }
            }
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;
            worst = worst.max(best);
        }
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn time_embedding_is_bounded_and_distinct() {
    let a = time_embedding(0.1, 16);
    let b = time_embedding(0.9, 16);
    assert_eq!(a.len(), 16);
    assert!(a.iter().all(|v| v.abs() <= 1.0));
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3));
    let _ = Tensor::zeros(&[1, 1]);
}
