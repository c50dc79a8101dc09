use cpsde::chem::*;
use cpsde::cyclization::*;
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

fn residue() -> impl Strategy<Value = AminoAcid> {
    (0usize..20).prop_map(|i| AminoAcid::CANONICAL[i])
}

fn ctype() -> impl Strategy<Value = CyclizationType> {
    (0usize..5).prop_map(|i| CyclizationType::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_symmetric_psd_zero_rows(n in 1usize..25, edges in prop::collection::vec((0usize..25, 0usize..25), 0..60)) {
        let atoms = (0..n).map(|i| Atom::ligand(Element::C, "C", i)).collect();
        let bonds = edges
            .into_iter()
            .filter(|(a, b)| a < &n && b < &n && a != b)
            .map(|(a, b)| Bond::new(a, b, BondOrder::Single))
            .collect();
        let g = ChemGraph::new(atoms, bonds, vec![]).unwrap();
        let l = graph_laplacian(&g).unwrap();
        prop_assert!((&l - l.transpose()).abs().max() < 1e-12);
        for i in 0..n {
            prop_assert!(l.row(i).sum().abs() < 1e-12);
        }
        let ev = SymmetricEigen::new(l).eigenvalues;
        prop_assert!(ev.iter().all(|&v| v > -1e-10));
    }

    #[test]
    fn assembled_graphs_hold_invariants(c in ctype(), len in 8usize..16, seq in prop::collection::vec(residue(), 16)) {
        let spec = make_spec(c, len).unwrap();
        let g = assemble(&seq[..len], &spec).unwrap();
        prop_assert!(validate_graph(&g).is_valid());
        prop_assert_eq!(g.components().1, 1);
        let expected = usize::from(c != CyclizationType::Linear);
        prop_assert_eq!(macrocycle_count(&g), expected);
        for &(p, aa) in &spec.anchors {
            prop_assert_eq!(g.residue_types[p], aa);
        }
        if let Some(cb) = spec.closing_bond {
            let a = g.find_atom(cb.a.residue, cb.a.name).unwrap();
            let b = g.find_atom(cb.b.residue, cb.b.name).unwrap();
            prop_assert!(g.has_bond(a, b));
        }
        prop_assert_eq!(g.find_atom(len - 1, "OXT").is_some(), spec.has_oxt());

        let (sub, map) = subgraph(&g, &spec);
        prop_assert_eq!(find_side_chain_leak(&sub, &spec), None);
        for (k, &old) in map.iter().enumerate() {
            prop_assert_eq!(&sub.atoms[k], &g.atoms[old]);
        }
        let again = assemble(&sub.residue_types, &spec).unwrap();
        prop_assert_eq!(&again, &g);
    }
}

#[test]
fn layout_round_trip_all_residues() {
    let l = layout();
    for t in templates().iter() {
        let cols = l.columns(t.code).unwrap();
        let mut row: Vec<Option<&str>> = vec![None; l.width()];
        for (name, &c) in t.atom_names.iter().zip(cols) {
            assert!(row[c].is_none());
            row[c] = Some(name);
        }
        let back: Vec<&str> = cols.iter().map(|&c| row[c].unwrap()).collect();
        assert_eq!(back, t.atom_names);
        for (name, &c) in t.atom_names.iter().zip(cols) {
            assert_eq!(l.column(t.code, name), Some(c));
        }
    }
}

#[test]
fn pentapeptide_head_to_tail_is_valid() {
    let spec = make_spec(CyclizationType::HeadToTail, 5).unwrap();
    let g = assemble(&[AminoAcid::Gly; 5], &spec).unwrap();
    assert!(validate_graph(&g).is_valid());
}

#[test]
fn head_to_tail_subgraph_is_backbone_ring() {
    let spec = make_spec(CyclizationType::HeadToTail, 6).unwrap();
    let seq = [
        AminoAcid::Trp,
        AminoAcid::Lys,
        AminoAcid::Ala,
        AminoAcid::Phe,
        AminoAcid::Arg,
        AminoAcid::Tyr,
    ];
    let g = assemble(&seq, &spec).unwrap();
    let (sub, _) = subgraph(&g, &spec);
    assert_eq!(sub.n_atoms(), 24);
    assert_eq!(sub.bonds.len(), 24);
    assert_eq!(sub.circuit_rank(), 1);
}

#[test]
fn free_alanine_contributes_backbone_only() {
    let spec = make_spec(CyclizationType::SideToTail, 6).unwrap();
    let g = assemble(&[AminoAcid::Ala; 6], &spec).unwrap();
    let (sub, _) = subgraph(&g, &spec);
    let names: Vec<&str> = sub
        .atoms
        .iter()
        .filter(|a| a.residue == Some(3))
        .map(|a| a.name.as_str())
        .collect();
    assert_eq!(names, ["N", "CA", "C", "O"]);
}

#[test]
fn constrained_atoms_cover_anchor_residues() {
    let spec = make_spec(CyclizationType::SideToSide, 10).unwrap();
    let set = spec.constrained_atoms();
    for r in [1, 8] {
        for n in ["N", "CA", "C", "O", "CB", "SG"] {
            assert!(set.contains(&AtomRef::new(r, n)));
        }
    }
    assert!(set.contains(&AtomRef::new(9, "OXT")));
    assert_eq!(set.len(), 13);
}
