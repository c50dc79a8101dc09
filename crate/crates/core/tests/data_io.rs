use std::path::Path;

use cpsde::chem::{validate_graph, AminoAcid, Element};
use cpsde::cyclization::{assemble, make_spec, CyclizationType};
use cpsde::data_io::*;
use cpsde::geometry::{centroid, dist, norm};
use cpsde::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_options() -> SyntheticOptions {
    SyntheticOptions {
        lengths: 3..=5,
        receptor_atoms: 60..=80,
        ..SyntheticOptions::default()
    }
}

#[test]
fn same_seed_same_dataset() {
    let a = gen_synthetic_dataset(3, 11, &small_options()).unwrap();
    let b = gen_synthetic_dataset(3, 11, &small_options()).unwrap();
    assert_eq!(a, b);
    let c = gen_synthetic_dataset(3, 12, &small_options()).unwrap();
    assert_ne!(a, c);
    // prefix stability
    let d = gen_synthetic_dataset(1, 11, &small_options()).unwrap();
    assert_eq!(d[0], a[0]);
}

#[test]
fn generator_sweep() {
    let opts = SyntheticOptions {
        lengths: 3..=8,
        ..SyntheticOptions::default()
    };
    let data = gen_synthetic_dataset(10, 5, &opts).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for rec in &data {
        assert!(validate_graph(&rec.graph).is_valid());
        let n_res = rec.graph.n_residues();
        assert!((3..=8).contains(&n_res) || n_res == 8);
        assert!((60..=200).contains(&rec.receptor.len()));
        // pocket centered on the receptor
        let c = centroid(&rec.receptor.positions);
        assert!(norm(c) < 1e-9, "{c:?}");
        for b in &rec.graph.bonds {
            let d = dist(rec.ligand_positions[b.a], rec.ligand_positions[b.b]);
            let ss = rec.graph.atoms[b.a].element == Element::S
                && rec.graph.atoms[b.b].element == Element::S;
            let target = if ss { 2.05 } else { 1.5 };
            assert!((d - target).abs() <= 0.2, "bond {d} vs {target}");
        }
        // ligand sits inside the shell
        let lc = centroid(&rec.ligand_positions);
        let min_r = rec
            .ligand_positions
            .iter()
            .flat_map(|p| rec.receptor.positions.iter().map(move |q| dist(*p, *q)))
            .fold(f64::INFINITY, f64::min);
        assert!(min_r > 2.5, "receptor clash {min_r}");
        let shell_r = rec
            .receptor
            .positions
            .iter()
            .map(|q| dist(*q, lc))
            .sum::<f64>()
            / rec.receptor.len() as f64;
        let lig_r = rec
            .ligand_positions
            .iter()
            .map(|p| dist(*p, lc))
            .fold(0.0, f64::max);
        assert!(shell_r > lig_r);
        seen.insert(rec.graph.n_atoms());
    }
    assert!(seen.len() > 1);
}

#[test]
fn zero_n_is_a_contract_error() {
    assert!(matches!(
        gen_synthetic_dataset(0, 1, &small_options()),
        Err(Error::Contract { .. })
    ));
}

#[test]
fn record_round_trip() {
    for rec in gen_synthetic_dataset(4, 3, &small_options()).unwrap() {
        let text = write_complex_string(&rec);
        let back = parse_complex_str(&text, Path::new("mem")).unwrap();
        assert_eq!(back, rec);
    }
}

#[test]
fn record_round_trip_through_file() {
    let rec = gen_synthetic_dataset(1, 9, &small_options())
        .unwrap()
        .remove(0);
    let dir = std::env::temp_dir().join(format!("cpsde-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("c.txt");
    write_complex(&rec, &path).unwrap();
    assert_eq!(parse_complex(&path).unwrap(), rec);
    std::fs::remove_dir_all(&dir).ok();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn round_trip_arbitrary_coordinates(
        coords in prop::collection::vec(-1e4f64..1e4, 3 * 60),
        scale in prop::sample::select(vec![1e-7, 1.0, 123.456]),
    ) {
        let seq = [AminoAcid::Gly, AminoAcid::Ala, AminoAcid::Ser, AminoAcid::Trp, AminoAcid::Pro];
        let spec = make_spec(CyclizationType::HeadToTail, 5).unwrap();
        let graph = assemble(&seq, &spec).unwrap();
        let n = graph.n_atoms();
        let lig: Vec<[f64; 3]> = (0..n)
            .map(|i| std::array::from_fn(|k| coords[(3 * i + k) % coords.len()] * scale))
            .collect();
        let rec = ComplexRecord {
            id: "fuzz".into(),
            receptor: cpsde::denoiser::Receptor::new(
                lig.iter().take(5).map(|p| [p[0] + 1.0, p[1], p[2]]).collect(),
                vec![Element::C, Element::N, Element::O, Element::S, Element::C],
                vec![true, false, true, false, false],
            ).unwrap(),
            graph,
            ligand_positions: lig,
        };
        let back = parse_complex_str(&write_complex_string(&rec), Path::new("mem")).unwrap();
        prop_assert_eq!(back, rec);
    }
}

const TINY: &str = "complex tiny
R C 0 0 0 bb
L N 0 N 0 0 1
L C 0 CA 1.5 0 1
L C 0 C 2.2 1.2 1
L O 0 O 1.8 2.3 1
B 0 1 1
B 1 2 1
B 2 3 2
";

#[test]
fn tiny_record_parses() {
    let rec = parse_complex_str(TINY, Path::new("tiny")).unwrap();
    assert_eq!(rec.graph.n_atoms(), 4);
    assert_eq!(rec.receptor.len(), 1);
}

#[test]
fn phosphorus_is_rejected() {
    let text = TINY.replace("L O 0 O", "L P 0 O");
    let err = parse_complex_str(&text, Path::new("p")).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("P"), "{msg}");
    let text = TINY.replace("R C", "R P");
    assert!(parse_complex_str(&text, Path::new("p")).is_err());
}

#[test]
fn empty_ligand_is_a_parse_error() {
    let text = "complex e\nR C 0 0 0 bb\n";
    assert!(matches!(
        parse_complex_str(text, Path::new("e")),
        Err(Error::Parse { .. })
    ));
}

#[test]
fn malformed_bond_cites_line() {
    let text = TINY.replace("B 1 2 1", "B 1 x 1");
    match parse_complex_str(&text, Path::new("m")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
        other => panic!("{other:?}"),
    }
    let text = TINY.replace("B 1 2 1", "B 1 99 1");
    assert!(matches!(
        parse_complex_str(&text, Path::new("m")),
        Err(Error::Parse { line: 8, .. })
    ));
}

#[test]
fn pdb_head_to_tail_closure_and_bonds() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for ctype in CyclizationType::ALL {
        let n = if ctype == CyclizationType::SideToSide {
            8
        } else {
            5
        };
        let seq: Vec<AminoAcid> = (0..n)
            .map(|i| AminoAcid::CANONICAL[(3 * i + 1) % 20])
            .collect();
        let rec = gen_complex("p".into(), ctype, &seq, &small_options(), &mut rng).unwrap();
        let text = pdb_string(&rec.ligand_positions, &rec.graph).unwrap();
        let atoms = text.lines().filter(|l| l.starts_with("ATOM")).count();
        assert_eq!(atoms, rec.graph.n_atoms());
        for l in text.lines().filter(|l| l.starts_with("ATOM")) {
            // fixed-width 8.3 coordinates
            for k in 0..3 {
                let f = &l[30 + 8 * k..38 + 8 * k];
                assert_eq!(f.len(), 8);
                assert_eq!(f.trim().split('.').nth(1).unwrap().len(), 3);
            }
        }
        let back = read_pdb_str(&text).unwrap();
        let want: std::collections::BTreeSet<(usize, usize)> =
            rec.graph.bonds.iter().map(|b| b.key()).collect();
        assert_eq!(back.bonds, want, "{ctype:?}");
        assert_eq!(back.atoms.len(), rec.graph.n_atoms());
        if ctype == CyclizationType::HeadToTail {
            let last_c = rec.graph.find_atom(n - 1, "C").unwrap();
            let first_n = rec.graph.find_atom(0, "N").unwrap();
            let conect = text.lines().filter(|l| l.starts_with("CONECT")).any(|l| {
                let v: Vec<usize> = l[6..]
                    .split_whitespace()
                    .map(|x| x.parse().unwrap())
                    .collect();
                v.contains(&(last_c + 1)) && v.contains(&(first_n + 1))
            });
            assert!(conect);
        }
    }
}
