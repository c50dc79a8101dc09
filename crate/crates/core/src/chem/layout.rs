use std::ops::Range;
use std::sync::OnceLock;

use super::templates::{templates, TemplateRegistry};
use super::AminoAcid;

/// The atom37 vocabulary in its conventional column order.
pub const ATOM37: [&str; 37] = [
    "N", "CA", "C", "CB", "O", "CG", "CG1", "CG2", "OG", "OG1", "SG", "CD", "CD1", "CD2", "ND1",
    "ND2", "OD1", "OD2", "SD", "CE", "CE1", "CE2", "CE3", "NE", "NE1", "NE2", "OE1", "OE2", "CH2",
    "NH1", "NH2", "OH", "CZ", "CZ2", "CZ3", "NZ", "OXT",
];

/// Columns shared by every residue type.
pub const SHARED_COLUMNS: [&str; 5] = ["N", "CA", "C", "CB", "O"];

/// Fixed-width per-residue layout: five shared columns, then each residue
/// type's side-chain atoms beyond CB in their own disjoint block.
#[derive(Clone, Debug)]
pub struct Atom73Layout {
    labels: Vec<String>,
    /// Column of every template atom, in template order, per residue index.
    residue_columns: Vec<Vec<usize>>,
    side_ranges: Vec<Range<usize>>,
}

impl Atom73Layout {
    pub fn width(&self) -> usize {
        self.labels.len()
    }

    /// Column label such as `CA` or `Q-NE2`.
    pub fn label(&self, col: usize) -> &str {
        &self.labels[col]
    }

    /// Columns occupied by `aa`, aligned with its template atom order.
    pub fn columns(&self, aa: AminoAcid) -> Option<&[usize]> {
        aa.index().map(|i| self.residue_columns[i].as_slice())
    }

    pub fn column(&self, aa: AminoAcid, atom_name: &str) -> Option<usize> {
        let i = aa.index()?;
        let t = templates().get(aa)?;
        t.index_of(atom_name).map(|k| self.residue_columns[i][k])
    }

    /// Residue-specific block (atoms beyond CB).
    pub fn side_chain_range(&self, aa: AminoAcid) -> Option<Range<usize>> {
        aa.index().map(|i| self.side_ranges[i].clone())
    }
}

pub fn build_layout(registry: &TemplateRegistry) -> Atom73Layout {
    let mut labels: Vec<String> = SHARED_COLUMNS.iter().map(|s| s.to_string()).collect();
    let mut residue_columns = Vec::with_capacity(registry.len());
    let mut side_ranges = Vec::with_capacity(registry.len());
    for t in registry.iter() {
        let start = labels.len();
        let mut cols = Vec::with_capacity(t.n_atoms());
        for name in &t.atom_names {
            match SHARED_COLUMNS.iter().position(|s| s == name) {
                Some(c) => cols.push(c),
                None => {
                    cols.push(labels.len());
                    labels.push(format!("{}-{}", t.code.code1(), name));
                }
            }
        }
        side_ranges.push(start..labels.len());
        residue_columns.push(cols);
    }
    Atom73Layout {
        labels,
        residue_columns,
        side_ranges,
    }
}

/// Process-wide atom73 layout over the static templates.
pub fn layout() -> &'static Atom73Layout {
    static LAYOUT: OnceLock<Atom73Layout> = OnceLock::new();
    LAYOUT.get_or_init(|| build_layout(templates()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::templates::load_templates;

    #[test]
    fn width_is_73() {
        assert_eq!(build_layout(&load_templates()).width(), 73);
    }

    #[test]
    fn shared_block_order() {
        let l = layout();
        let first: Vec<_> = (0..5).map(|c| l.label(c)).collect();
        assert_eq!(first, ["N", "CA", "C", "CB", "O"]);
    }

    #[test]
    fn ala_has_empty_side_block_and_gly_four_columns() {
        let l = layout();
        assert!(l.side_chain_range(AminoAcid::Ala).unwrap().is_empty());
        assert_eq!(l.columns(AminoAcid::Gly).unwrap(), &[0, 1, 2, 4]);
    }

    #[test]
    fn residue_blocks_are_disjoint_and_cover_the_tail() {
        let l = layout();
        let mut seen = vec![false; 73];
        for aa in AminoAcid::CANONICAL {
            for c in l.side_chain_range(aa).unwrap() {
                assert!(!seen[c]);
                seen[c] = true;
            }
        }
        assert!(seen[5..].iter().all(|s| *s));
        assert_eq!(l.label(l.column(AminoAcid::Gln, "NE2").unwrap()), "Q-NE2");
    }

    #[test]
    fn template_round_trip_through_columns() {
        let l = layout();
        for t in templates().iter() {
            let mut row: Vec<Option<&str>> = vec![None; 73];
            for (name, &c) in t.atom_names.iter().zip(l.columns(t.code).unwrap()) {
                assert!(row[c].is_none());
                row[c] = Some(name);
            }
            let back: Vec<&str> = l
                .columns(t.code)
                .unwrap()
                .iter()
                .map(|&c| row[c].unwrap())
                .collect();
            assert_eq!(back, t.atom_names);
        }
    }

    #[test]
    fn atom37_vocabulary_covers_templates() {
        assert_eq!(ATOM37.len(), 37);
        for t in templates().iter() {
            for n in &t.atom_names {
                assert!(ATOM37.contains(n), "{n}");
            }
        }
    }
}
