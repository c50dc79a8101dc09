//! Heavy-atom connectivity of the 20 canonical residues, transcribed from the
//! PDB Chemical Component Dictionary with hydrogens and the terminal OXT
//! removed.

use std::sync::OnceLock;

use super::{AminoAcid, BondOrder, Element};

use BondOrder::{Aromatic as Ar, Double as D, Single as S};

type Table = (
    &'static [&'static str],
    &'static [(&'static str, &'static str, BondOrder)],
);

const BACKBONE_BONDS: &[(&str, &str, BondOrder)] = &[("N", "CA", S), ("CA", "C", S), ("C", "O", D)];

fn side_chain(aa: AminoAcid) -> Table {
    match aa {
        AminoAcid::Ala => (&["CB"], &[("CA", "CB", S)]),
        AminoAcid::Arg => (
            &["CB", "CG", "CD", "NE", "CZ", "NH1", "NH2"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "CD", S),
                ("CD", "NE", S),
                ("NE", "CZ", S),
                ("CZ", "NH1", S),
                ("CZ", "NH2", D),
            ],
        ),
        AminoAcid::Asn => (
            &["CB", "CG", "OD1", "ND2"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "OD1", D),
                ("CG", "ND2", S),
            ],
        ),
        AminoAcid::Asp => (
            &["CB", "CG", "OD1", "OD2"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "OD1", D),
                ("CG", "OD2", S),
            ],
        ),
        AminoAcid::Cys => (&["CB", "SG"], &[("CA", "CB", S), ("CB", "SG", S)]),
        AminoAcid::Gln => (
            &["CB", "CG", "CD", "OE1", "NE2"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "CD", S),
                ("CD", "OE1", D),
                ("CD", "NE2", S),
            ],
        ),
        AminoAcid::Glu => (
            &["CB", "CG", "CD", "OE1", "OE2"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "CD", S),
                ("CD", "OE1", D),
                ("CD", "OE2", S),
            ],
        ),
        AminoAcid::Gly => (&[], &[]),
        AminoAcid::His => (
            &["CB", "CG", "ND1", "CD2", "CE1", "NE2"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "ND1", Ar),
                ("CG", "CD2", Ar),
                ("ND1", "CE1", Ar),
                ("CD2", "NE2", Ar),
                ("CE1", "NE2", Ar),
            ],
        ),
        AminoAcid::Ile => (
            &["CB", "CG1", "CG2", "CD1"],
            &[
                ("CA", "CB", S),
                ("CB", "CG1", S),
                ("CB", "CG2", S),
                ("CG1", "CD1", S),
            ],
        ),
        AminoAcid::Leu => (
            &["CB", "CG", "CD1", "CD2"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "CD1", S),
                ("CG", "CD2", S),
            ],
        ),
        AminoAcid::Lys => (
            &["CB", "CG", "CD", "CE", "NZ"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "CD", S),
                ("CD", "CE", S),
                ("CE", "NZ", S),
            ],
        ),
        AminoAcid::Met => (
            &["CB", "CG", "SD", "CE"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "SD", S),
                ("SD", "CE", S),
            ],
        ),
        AminoAcid::Phe => (
            &["CB", "CG", "CD1", "CD2", "CE1", "CE2", "CZ"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "CD1", Ar),
                ("CG", "CD2", Ar),
                ("CD1", "CE1", Ar),
                ("CD2", "CE2", Ar),
                ("CE1", "CZ", Ar),
                ("CE2", "CZ", Ar),
            ],
        ),
        AminoAcid::Pro => (
            &["CB", "CG", "CD"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "CD", S),
                ("CD", "N", S),
            ],
        ),
        AminoAcid::Ser => (&["CB", "OG"], &[("CA", "CB", S), ("CB", "OG", S)]),
        AminoAcid::Thr => (
            &["CB", "OG1", "CG2"],
            &[("CA", "CB", S), ("CB", "OG1", S), ("CB", "CG2", S)],
        ),
        AminoAcid::Trp => (
            &[
                "CB", "CG", "CD1", "CD2", "NE1", "CE2", "CE3", "CZ2", "CZ3", "CH2",
            ],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "CD1", Ar),
                ("CG", "CD2", Ar),
                ("CD1", "NE1", Ar),
                ("NE1", "CE2", Ar),
                ("CD2", "CE2", Ar),
                ("CD2", "CE3", Ar),
                ("CE2", "CZ2", Ar),
                ("CE3", "CZ3", Ar),
                ("CZ2", "CH2", Ar),
                ("CZ3", "CH2", Ar),
            ],
        ),
        AminoAcid::Tyr => (
            &["CB", "CG", "CD1", "CD2", "CE1", "CE2", "CZ", "OH"],
            &[
                ("CA", "CB", S),
                ("CB", "CG", S),
                ("CG", "CD1", Ar),
                ("CG", "CD2", Ar),
                ("CD1", "CE1", Ar),
                ("CD2", "CE2", Ar),
                ("CE1", "CZ", Ar),
                ("CE2", "CZ", Ar),
                ("CZ", "OH", S),
            ],
        ),
        AminoAcid::Val => (
            &["CB", "CG1", "CG2"],
            &[("CA", "CB", S), ("CB", "CG1", S), ("CB", "CG2", S)],
        ),
        AminoAcid::Unk => (&[], &[]),
    }
}

/// Element implied by a PDB heavy-atom name in a canonical residue.
pub fn element_of(name: &str) -> Element {
    match name.as_bytes().first() {
        Some(b'N') => Element::N,
        Some(b'O') => Element::O,
        Some(b'S') => Element::S,
        _ => Element::C,
    }
}

/// Heavy-atom template of one canonical residue.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidueTemplate {
    pub code: AminoAcid,
    /// N, CA, C, O, then side-chain atoms (CB first).
    pub atom_names: Vec<&'static str>,
    pub elements: Vec<Element>,
    /// Intra-residue bonds as indices into `atom_names`.
    pub intra_bonds: Vec<(usize, usize, BondOrder)>,
}

impl ResidueTemplate {
    pub const BACKBONE: [&'static str; 4] = ["N", "CA", "C", "O"];

    fn build(code: AminoAcid) -> Self {
        let (side, side_bonds) = side_chain(code);
        let atom_names: Vec<&'static str> = Self::BACKBONE
            .iter()
            .copied()
            .chain(side.iter().copied())
            .collect();
        let index = |n: &str| {
            atom_names
                .iter()
                .position(|a| *a == n)
                .expect("template atom")
        };
        let intra_bonds = BACKBONE_BONDS
            .iter()
            .chain(side_bonds)
            .map(|(a, b, o)| (index(a), index(b), *o))
            .collect();
        let elements = atom_names.iter().map(|n| element_of(n)).collect();
        ResidueTemplate {
            code,
            atom_names,
            elements,
            intra_bonds,
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.atom_names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.atom_names.iter().position(|a| *a == name)
    }

    /// Side-chain atoms, CB included.
    pub fn side_chain(&self) -> &[&'static str] {
        &self.atom_names[4..]
    }

    /// Independent cycles inside the template (aromatic rings, the proline
    /// ring).
    pub fn ring_count(&self) -> usize {
        self.intra_bonds.len() + 1 - self.n_atoms()
    }

    /// Atom14 row: template order padded to 14 with `None`.
    pub fn atom14(&self) -> [Option<&'static str>; 14] {
        let mut row = [None; 14];
        for (slot, name) in row.iter_mut().zip(&self.atom_names) {
            *slot = Some(*name);
        }
        row
    }

    fn check(&self) -> Result<(), String> {
        if self.atom_names.len() > 14 {
            return Err(format!("{} has more than 14 heavy atoms", self.code));
        }
        for (a, b, _) in &self.intra_bonds {
            if a == b || *a >= self.n_atoms() || *b >= self.n_atoms() {
                return Err(format!("{} has a malformed bond", self.code));
            }
        }
        Ok(())
    }
}

/// The 20 canonical templates, indexed by [`AminoAcid::index`].
#[derive(Clone, Debug)]
pub struct TemplateRegistry {
    templates: Vec<ResidueTemplate>,
}

impl TemplateRegistry {
    pub fn get(&self, aa: AminoAcid) -> Option<&ResidueTemplate> {
        aa.index().map(|i| &self.templates[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &ResidueTemplate> {
        self.templates.iter()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Residue whose template atom names equal `names` (order ignored, OXT
    /// ignored).
    pub fn identify<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Option<AminoAcid> {
        let mut names: Vec<&str> = names.into_iter().filter(|n| *n != "OXT").collect();
        names.sort_unstable();
        self.templates.iter().find_map(|t| {
            let mut own = t.atom_names.clone();
            own.sort_unstable();
            (own == names).then_some(t.code)
        })
    }
}

pub fn load_templates() -> TemplateRegistry {
    let templates: Vec<_> = AminoAcid::CANONICAL
        .iter()
        .map(|&aa| ResidueTemplate::build(aa))
        .collect();
    for t in &templates {
        if let Err(e) = t.check() {
            panic!("static template table is inconsistent: {e}");
        }
    }
    TemplateRegistry { templates }
}

/// Process-wide template registry.
pub fn templates() -> &'static TemplateRegistry {
    static REGISTRY: OnceLock<TemplateRegistry> = OnceLock::new();
    REGISTRY.get_or_init(load_templates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_templates_with_canonical_sizes() {
        let reg = load_templates();
        assert_eq!(reg.len(), 20);
        let size = |aa| reg.get(aa).unwrap().n_atoms();
        assert_eq!(size(AminoAcid::Trp), 14);
        assert_eq!(size(AminoAcid::Gly), 4);
        assert_eq!(size(AminoAcid::Ala), 5);
        let max = reg.iter().map(ResidueTemplate::n_atoms).max().unwrap();
        assert_eq!(max, 14);
    }

    #[test]
    fn side_chain_atoms_beyond_cb_sum_to_68() {
        let reg = load_templates();
        let total: usize = reg
            .iter()
            .map(|t| t.side_chain().iter().filter(|n| **n != "CB").count())
            .sum();
        assert_eq!(total, 68);
        assert_eq!(5 + total, 73);
    }

    #[test]
    fn ring_counts() {
        let reg = load_templates();
        let rings = |aa| reg.get(aa).unwrap().ring_count();
        assert_eq!(rings(AminoAcid::His), 1);
        assert_eq!(rings(AminoAcid::Phe), 1);
        assert_eq!(rings(AminoAcid::Tyr), 1);
        assert_eq!(rings(AminoAcid::Trp), 2);
        assert_eq!(rings(AminoAcid::Pro), 1);
        assert_eq!(rings(AminoAcid::Lys), 0);
    }

    #[test]
    fn identify_by_atom_names() {
        let reg = load_templates();
        for t in reg.iter() {
            let mut names = t.atom_names.clone();
            names.reverse();
            assert_eq!(reg.identify(names.iter().copied()), Some(t.code));
        }
        assert_eq!(
            reg.identify(["N", "CA", "C", "O", "OXT"]),
            Some(AminoAcid::Gly)
        );
        assert_eq!(reg.identify(["N", "CA", "C", "O", "CB", "XX"]), None);
    }
}
