use cpsde::chem::AminoAcid;
use cpsde::cyclization::{infer_spec, CyclizationType};
use cpsde::data_io::{gen_synthetic_dataset, ComplexRecord, SyntheticOptions};
use cpsde::denoiser::{init_params, DenoiserConfig, Receptor};
use cpsde::geometry::RigidMotion;
use cpsde::router::*;
use cpsde::tensor::{Tape, Tensor};
use cpsde::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config() -> DenoiserConfig {
    DenoiserConfig {
        k_neighbors: 8,
        n_layers: 2,
        hidden_dim: 16,
        time_embed_dim: 8,
        position_init_scale: 0.3,
        ..DenoiserConfig::default()
    }
}

fn record(seed: u64, ctype: CyclizationType) -> ComplexRecord {
    let opts = SyntheticOptions {
        ctypes: vec![ctype],
        lengths: 5..=6,
        receptor_atoms: 60..=70,
        ..SyntheticOptions::default()
    };
    gen_synthetic_dataset(1, seed, &opts).unwrap().remove(0)
}

#[test]
fn logits_are_rigid_motion_invariant() {
    let rec = record(1, CyclizationType::SideToSide);
    let spec = infer_spec(&rec.graph).unwrap();
    let cfg = config();
    let params = init_router(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
    let base = predict(&params, &cfg, &rec.receptor, &rec.graph, &rec.ligand_positions, &spec, 0.2).unwrap();
    assert_eq!(base.shape(), &[rec.graph.n_residues(), 20]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let m = RigidMotion::random(&mut rng, 15.0);
        let receptor = Receptor {
            positions: m.apply_all(&rec.receptor.positions),
            ..rec.receptor.clone()
        };
        let moved = m.apply_all(&rec.ligand_positions);
        let l = predict(&params, &cfg, &receptor, &rec.graph, &moved, &spec, 0.2).unwrap();
        let d = l.data().iter().zip(base.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-8, "{d}");
    }
}

#[test]
fn zero_parameters_give_uniform_logits_and_ln20_loss() {
    let rec = record(4, CyclizationType::HeadToTail);
    let spec = infer_spec(&rec.graph).unwrap();
    let cfg = config();
    let mut params = init_router(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
    for (_, t) in params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let l = predict(&params, &cfg, &rec.receptor, &rec.graph, &rec.ligand_positions, &spec, 0.2).unwrap();
    assert!(l.data().iter().all(|v| *v == 0.0));
    let den = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
    let ex = router_example(&den, &cfg, &rec.receptor, &rec.graph, &rec.ligand_positions, &spec, 0.2).unwrap();
    let loss = router_loss(&params, &cfg, &ex).unwrap();
    assert!((loss - 20f64.ln()).abs() < 1e-12, "{loss}");
}

#[test]
fn confident_correct_logits_have_vanishing_loss() {
    let rec = record(4, CyclizationType::Linear);
    let spec = infer_spec(&rec.graph).unwrap();
    let n = rec.graph.n_residues();
    let mut data = vec![0.0; n * 20];
    for (r, aa) in rec.graph.residue_types.iter().enumerate() {
        data[r * 20 + aa.index().unwrap()] = 60.0;
    }
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::new(vec![n, 20], data).unwrap());
    let nll = nll_on_tape(&mut tape, l, &rec.graph.residue_types, &spec).unwrap();
    assert!(tape.scalar(nll) < 1e-20);
}

#[test]
fn leak_guard_rejects_full_side_chains() {
    let rec = record(6, CyclizationType::HeadToTail);
    let spec = infer_spec(&rec.graph).unwrap();
    let cfg = config();
    let r = prepare_router(&cfg, &rec.receptor, &rec.graph, &rec.ligand_positions, &spec, 0.1);
    let has_side_chain = rec
        .graph
        .residue_types
        .iter()
        .any(|aa| *aa != AminoAcid::Gly);
    if has_side_chain {
        assert!(matches!(r, Err(Error::Contract { .. })));
    }
}

#[test]
fn frozen_denoiser_receives_no_gradient() {
    let rec = record(7, CyclizationType::HeadToSide);
    let spec = infer_spec(&rec.graph).unwrap();
    let cfg = config();
    let den = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
    let params = init_router(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
    let ex = router_example(&den, &cfg, &rec.receptor, &rec.graph, &rec.ligand_positions, &spec, 0.3).unwrap();
    let mut tape = Tape::new();
    let l = router_loss_on_tape(&mut tape, &params, &cfg, &ex).unwrap();
    let g = tape.backward(l).unwrap();
    let mut n = 0;
    for (name, grad) in g.params() {
        assert!(name.starts_with("trunk.") || name.starts_with("head."), "{name}");
        assert!(grad.iter().all(|v| v.is_finite()));
        n += 1;
    }
    assert_eq!(n, params.len(), "every router parameter gets a gradient");
    for name in den.names() {
        assert!(g.param(name).is_none());
    }
}

#[test]
fn decoding_modes_and_anchors() {
    let rec = record(8, CyclizationType::SideToSide);
    let spec = infer_spec(&rec.graph).unwrap();
    let n = rec.graph.n_residues();
    let mut data = vec![0.0; n * 20];
    for r in 0..n {
        data[r * 20 + (r * 7) % 20] = 1.0;
        data[r * 20 + (r * 7 + 3) % 20] = 0.5;
    }
    let logits = Tensor::new(vec![n, 20], data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let am = sample_sequence(&logits, DecodeMode::Argmax, &spec, &mut rng).unwrap();
    for r in 0..n {
        match spec.anchor_code(r) {
            Some(code) => assert_eq!(am[r], code),
            None => assert_eq!(am[r], AminoAcid::CANONICAL[(r * 7) % 20]),
        }
    }
    // near-zero temperature matches argmax on every draw
    for _ in 0..1000 {
        let s = sample_sequence(&logits, DecodeMode::Categorical { temperature: 1e-3 }, &spec, &mut rng).unwrap();
        assert_eq!(s, am);
    }
    // temperature 1 explores but never moves anchors
    let mut differs = false;
    for _ in 0..200 {
        let s = sample_sequence(&logits, DecodeMode::Categorical { temperature: 1.0 }, &spec, &mut rng).unwrap();
        differs |= s != am;
        for (p, code) in &spec.anchors {
            assert_eq!(s[*p], *code);
        }
    }
    assert!(differs);
    assert_eq!(DecodeMode::for_time(0.3), DecodeMode::Categorical { temperature: 1.0 });
    assert_eq!(DecodeMode::for_time(0.25), DecodeMode::Argmax);
}

#[test]
fn categorical_frequencies_follow_softmax() {
    let spec = cpsde::cyclization::make_spec(CyclizationType::Linear, 5).unwrap();
    let row: Vec<f64> = (0..20).map(|i| (i as f64) * 0.1).collect();
    let logits = Tensor::new(vec![5, 20], row.repeat(5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 20];
    let draws = 4000;
    for _ in 0..draws {
        let s = sample_sequence(&logits, DecodeMode::Categorical { temperature: 1.0 }, &spec, &mut rng).unwrap();
        for aa in s {
            counts[aa.index().unwrap()] += 1;
        }
    }
    let z: f64 = row.iter().map(|v| v.exp()).sum();
    let total = (draws * 5) as f64;
    for (k, c) in counts.iter().enumerate() {
        let p = row[k].exp() / z;
        let se = (p * (1.0 - p) / total).sqrt();
        assert!(((*c as f64 / total) - p).abs() < 5.0 * se, "type {k}");
    }
}
