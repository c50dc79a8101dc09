//! Cyclization topologies, graph assembly and side-chain stripping.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use crate::chem::{
    templates, validate_graph, AminoAcid, Atom, Bond, BondOrder, ChemGraph, Element,
    ResidueTemplate,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CyclizationType {
    HeadToTail,
    HeadToSide,
    SideToTail,
    SideToSide,
    Linear,
}

impl CyclizationType {
    pub const ALL: [CyclizationType; 5] = [
        CyclizationType::HeadToTail,
        CyclizationType::HeadToSide,
        CyclizationType::SideToTail,
        CyclizationType::SideToSide,
        CyclizationType::Linear,
    ];

    pub fn abbrev(self) -> &'static str {
        match self {
            CyclizationType::HeadToTail => "h2t",
            CyclizationType::HeadToSide => "h2s",
            CyclizationType::SideToTail => "s2t",
            CyclizationType::SideToSide => "s2s",
            CyclizationType::Linear => "linear",
        }
    }

    /// Default peptide lengths enumerated at sampling time.
    pub fn default_lengths(self) -> RangeInclusive<usize> {
        match self {
            CyclizationType::SideToSide => 8..=23,
            _ => 5..=20,
        }
    }

    /// Whether the C-terminal carboxyl keeps its OXT.
    pub fn has_oxt(self) -> bool {
        !matches!(
            self,
            CyclizationType::HeadToTail | CyclizationType::SideToTail
        )
    }
}

impl fmt::Display for CyclizationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

impl FromStr for CyclizationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        CyclizationType::ALL
            .into_iter()
            .find(|c| c.abbrev() == s)
            .ok_or_else(|| {
                Error::Spec(format!(
                    "unknown cyclization `{s}` (h2t|h2s|s2t|s2s|linear)"
                ))
            })
    }
}

/// An atom addressed by residue index and name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomRef {
    pub residue: usize,
    pub name: &'static str,
}

impl AtomRef {
    pub fn new(residue: usize, name: &'static str) -> Self {
        AtomRef { residue, name }
    }
}

impl fmt::Display for AtomRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.residue)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClosingBond {
    pub a: AtomRef,
    pub b: AtomRef,
    pub order: BondOrder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CyclizationSpec {
    pub ctype: CyclizationType,
    pub n_residues: usize,
    /// Anchor residues and their fixed codes, ascending by position.
    pub anchors: Vec<(usize, AminoAcid)>,
    pub closing_bond: Option<ClosingBond>,
}

/// Optional overrides for [`make_spec_with`].
#[derive(Clone, Debug, Default)]
pub struct SpecOptions {
    pub anchors: Option<Vec<usize>>,
    pub lengths: Option<RangeInclusive<usize>>,
}

/// Minimum inclusive residue span between the two side-to-side anchors.
pub const MIN_SIDE_TO_SIDE_SPAN: usize = 6;

pub fn make_spec(ctype: CyclizationType, n_residues: usize) -> Result<CyclizationSpec> {
    make_spec_with(ctype, n_residues, &SpecOptions::default())
}

pub fn make_spec_with(
    ctype: CyclizationType,
    n_residues: usize,
    options: &SpecOptions,
) -> Result<CyclizationSpec> {
    use CyclizationType::*;
    let lengths = options
        .lengths
        .clone()
        .unwrap_or_else(|| ctype.default_lengths());
    if !lengths.contains(&n_residues) {
        return Err(Error::Spec(format!(
            "{ctype} needs {}..={} residues, got {n_residues}",
            lengths.start(),
            lengths.end()
        )));
    }
    if n_residues < 2 {
        return Err(Error::Spec("a peptide needs at least 2 residues".into()));
    }
    let last = n_residues - 1;
    let default_anchors = match ctype {
        HeadToTail | Linear => vec![],
        HeadToSide => vec![last],
        SideToTail => vec![0],
        SideToSide => vec![1, n_residues.saturating_sub(2)],
    };
    let positions = options.anchors.clone().unwrap_or(default_anchors);
    let expected = match ctype {
        HeadToTail | Linear => 0,
        HeadToSide | SideToTail => 1,
        SideToSide => 2,
    };
    if positions.len() != expected {
        return Err(Error::Spec(format!(
            "{ctype} takes {expected} anchor(s), got {}",
            positions.len()
        )));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= n_residues) {
        return Err(Error::Spec(format!("anchor {p} outside 0..{n_residues}")));
    }
    let n = |r| AtomRef::new(r, "N");
    let c = |r| AtomRef::new(r, "C");
    let single = BondOrder::Single;
    let (anchors, closing_bond) = match ctype {
        Linear => (vec![], None),
        HeadToTail => (
            vec![],
            Some(ClosingBond {
                a: c(last),
                b: n(0),
                order: single,
            }),
        ),
        HeadToSide => {
            let p = positions[0];
            // the ring must span at least three residues
            if p < 2 {
                return Err(Error::Spec(format!(
                    "head-to-side anchor {p} is too close to the N-terminus"
                )));
            }
            (
                vec![(p, AminoAcid::Glu)],
                Some(ClosingBond {
                    a: n(0),
                    b: AtomRef::new(p, "CD"),
                    order: single,
                }),
            )
        }
        SideToTail => {
            let p = positions[0];
            if p + 2 > last {
                return Err(Error::Spec(format!(
                    "side-to-tail anchor {p} is too close to the C-terminus"
                )));
            }
            (
                vec![(p, AminoAcid::Cys)],
                Some(ClosingBond {
                    a: AtomRef::new(p, "SG"),
                    b: c(last),
                    order: single,
                }),
            )
        }
        SideToSide => {
            let (i, j) = (
                positions[0].min(positions[1]),
                positions[0].max(positions[1]),
            );
            if j + 1 - i < MIN_SIDE_TO_SIDE_SPAN {
                return Err(Error::Spec(format!(
                    "side-to-side anchors {i} and {j} span fewer than {MIN_SIDE_TO_SIDE_SPAN} residues"
                )));
            }
            (
                vec![(i, AminoAcid::Cys), (j, AminoAcid::Cys)],
                Some(ClosingBond {
                    a: AtomRef::new(i, "SG"),
                    b: AtomRef::new(j, "SG"),
                    order: single,
                }),
            )
        }
    };
    Ok(CyclizationSpec {
        ctype,
        n_residues,
        anchors,
        closing_bond,
    })
}

impl CyclizationSpec {
    pub fn anchor_positions(&self) -> Vec<usize> {
        self.anchors.iter().map(|(p, _)| *p).collect()
    }

    pub fn anchor_code(&self, residue: usize) -> Option<AminoAcid> {
        self.anchors
            .iter()
            .find(|(p, _)| *p == residue)
            .map(|(_, aa)| *aa)
    }

    pub fn is_anchor(&self, residue: usize) -> bool {
        self.anchor_code(residue).is_some()
    }

    pub fn has_oxt(&self) -> bool {
        self.ctype.has_oxt()
    }

    /// Overwrites anchor positions with their fixed codes.
    pub fn force_anchors(&self, seq: &mut [AminoAcid]) {
        for &(p, aa) in &self.anchors {
            if p < seq.len() {
                seq[p] = aa;
            }
        }
    }

    /// Atoms whose identity does not depend on the sequence beyond the
    /// backbone: anchor side chains (CB onward) and OXT, in a fixed order.
    pub fn cyclization_atoms(&self) -> Vec<AtomRef> {
        let mut out = Vec::new();
        for &(p, aa) in &self.anchors {
            let t = templates().get(aa).expect("anchor codes are canonical");
            out.extend(t.side_chain().iter().map(|name| AtomRef::new(p, name)));
        }
        if self.has_oxt() {
            out.push(AtomRef::new(self.n_residues - 1, "OXT"));
        }
        out
    }

    /// Every atom with chemistry fixed by the spec: anchor residues in full,
    /// plus OXT.
    pub fn constrained_atoms(&self) -> BTreeSet<AtomRef> {
        let mut set: BTreeSet<AtomRef> = self.cyclization_atoms().into_iter().collect();
        for &(p, _) in &self.anchors {
            set.extend(ResidueTemplate::BACKBONE.iter().map(|n| AtomRef::new(p, n)));
        }
        set
    }
}

fn atom_index(graph: &ChemGraph, r: AtomRef) -> Result<usize> {
    graph
        .find_atom(r.residue, r.name)
        .ok_or_else(|| Error::Assembly(format!("closing-bond atom {r} missing")))
}

/// Builds the ligand graph for `sequence` under `spec`. Anchor residues are
/// forced to the spec's codes; the returned graph's `residue_types` holds the
/// sequence actually used.
pub fn assemble(sequence: &[AminoAcid], spec: &CyclizationSpec) -> Result<ChemGraph> {
    if sequence.len() != spec.n_residues {
        return Err(Error::Assembly(format!(
            "sequence has {} residues, spec expects {}",
            sequence.len(),
            spec.n_residues
        )));
    }
    let mut seq = sequence.to_vec();
    spec.force_anchors(&mut seq);
    let reg = templates();
    let mut atoms = Vec::new();
    let mut bonds = Vec::new();
    let mut prev_c: Option<usize> = None;
    for (r, &aa) in seq.iter().enumerate() {
        let t = reg
            .get(aa)
            .ok_or_else(|| Error::Assembly(format!("residue {r} has unknown type")))?;
        let base = atoms.len();
        for (name, el) in t.atom_names.iter().zip(&t.elements) {
            atoms.push(Atom::ligand(*el, *name, r));
        }
        for &(a, b, order) in &t.intra_bonds {
            bonds.push(Bond::new(base + a, base + b, order));
        }
        let n = base + t.index_of("N").expect("backbone N");
        if let Some(c) = prev_c {
            bonds.push(Bond::new(c, n, BondOrder::Single));
        }
        prev_c = Some(base + t.index_of("C").expect("backbone C"));
    }
    if spec.has_oxt() {
        let oxt = atoms.len();
        atoms.push(Atom::ligand(Element::O, "OXT", seq.len() - 1));
        bonds.push(Bond::new(prev_c.expect("nonempty"), oxt, BondOrder::Single));
    }
    let mut graph = ChemGraph::new(atoms, bonds, seq)?;
    if let Some(cb) = spec.closing_bond {
        let a = atom_index(&graph, cb.a)?;
        let b = atom_index(&graph, cb.b)?;
        graph.bonds.push(Bond::new(a, b, cb.order));
    }
    let report = validate_graph(&graph);
    if !report.is_valid() {
        return Err(Error::Assembly(format!(
            "assembled graph invalid: {report}"
        )));
    }
    Ok(graph)
}

/// Keeps every backbone atom and the anchors' complete residues (closing
/// bond included); drops all other side-chain atoms, CB included, and a
/// free OXT. Returns the stripped graph and the original index of each kept
/// atom.
pub fn subgraph(graph: &ChemGraph, spec: &CyclizationSpec) -> (ChemGraph, Vec<usize>) {
    let keep: Vec<bool> = graph
        .atoms
        .iter()
        .map(|a| {
            let anchored = a.residue.is_some_and(|r| spec.is_anchor(r));
            anchored || ResidueTemplate::BACKBONE.contains(&a.name.as_str())
        })
        .collect();
    graph.induced(&keep)
}

/// Macrocycles in an assembled graph: the circuit rank minus the rings that
/// live inside residue templates.
pub fn macrocycle_count(graph: &ChemGraph) -> usize {
    let internal: usize = graph
        .residue_types
        .iter()
        .filter_map(|aa| templates().get(*aa))
        .map(ResidueTemplate::ring_count)
        .sum();
    graph.circuit_rank() - internal
}

/// First atom of a non-anchor residue carrying a side-chain atom, if any.
pub fn find_side_chain_leak(graph: &ChemGraph, spec: &CyclizationSpec) -> Option<usize> {
    graph.atoms.iter().position(|a| match a.residue {
        Some(r) => !spec.is_anchor(r) && !ResidueTemplate::BACKBONE.contains(&a.name.as_str()),
        None => false,
    })
}

/// Recovers a spec from an assembled graph: the sequence comes from atom
/// names and the topology from the inter-residue bond that is not a peptide
/// link.
pub fn infer_spec(graph: &ChemGraph) -> Result<CyclizationSpec> {
    let n = graph.n_residues();
    let has_oxt = graph.atoms.iter().any(|a| a.name == "OXT");
    let mut extra = None;
    for b in &graph.bonds {
        let (x, y) = (&graph.atoms[b.a], &graph.atoms[b.b]);
        let (Some(rx), Some(ry)) = (x.residue, y.residue) else {
            continue;
        };
        if rx == ry {
            continue;
        }
        let peptide = (rx + 1 == ry && x.name == "C" && y.name == "N")
            || (ry + 1 == rx && y.name == "C" && x.name == "N");
        if !peptide {
            if extra.is_some() {
                return Err(Error::Spec("more than one closing bond".into()));
            }
            extra = Some((rx, x.name.as_str(), ry, y.name.as_str()));
        }
    }
    let lengths = Some(1..=usize::MAX);
    let opts = |anchors: Vec<usize>| SpecOptions {
        anchors: Some(anchors),
        lengths: lengths.clone(),
    };
    use CyclizationType::*;
    let spec = match extra {
        None => make_spec_with(Linear, n, &opts(vec![]))?,
        Some((rx, nx, ry, ny)) => {
            let mut ends = [(rx, nx), (ry, ny)];
            ends.sort();
            match ends {
                [(0, "N"), (r, "C")] if r + 1 == n => make_spec_with(HeadToTail, n, &opts(vec![]))?,
                [(0, "N"), (r, "CD")] => make_spec_with(HeadToSide, n, &opts(vec![r]))?,
                [(r, "SG"), (s, "C")] if s + 1 == n => {
                    make_spec_with(SideToTail, n, &opts(vec![r]))?
                }
                [(r, "SG"), (s, "SG")] => make_spec_with(SideToSide, n, &opts(vec![r, s]))?,
                _ => {
                    return Err(Error::Spec(format!(
                        "unrecognized closing bond {nx}@{rx}-{ny}@{ry}"
                    )))
                }
            }
        }
    };
    if spec.has_oxt() != has_oxt {
        return Err(Error::Spec(format!(
            "{} peptides {} OXT",
            spec.ctype,
            if spec.has_oxt() {
                "need"
            } else {
                "cannot carry"
            }
        )));
    }
    Ok(spec)
}

/// Residue codes recovered from atom names in each residue.
pub fn infer_sequence(atoms: &[Atom], n_residues: usize) -> Result<Vec<AminoAcid>> {
    (0..n_residues)
        .map(|r| {
            let names = atoms
                .iter()
                .filter(|a| a.residue == Some(r))
                .map(|a| a.name.as_str());
            templates()
                .identify(names)
                .ok_or_else(|| Error::Assembly(format!("residue {r} matches no template")))
        })
        .collect()
}
