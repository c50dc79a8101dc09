//! Elements, residues, chemical graphs and residue layouts.

mod layout;
mod templates;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use layout::{build_layout, layout, Atom73Layout, ATOM37, SHARED_COLUMNS};
pub use templates::{element_of, load_templates, templates, ResidueTemplate, TemplateRegistry};

/// The heavy elements a ligand or receptor atom may carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    C,
    N,
    O,
    F,
    S,
    Cl,
    Se,
    Br,
}

impl Element {
    pub const ALL: [Element; 8] = [
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::S,
        Element::Cl,
        Element::Se,
        Element::Br,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Se => "Se",
            Element::Br => "Br",
        }
    }

    /// Maximum number of heavy-atom neighbours.
    pub fn valence_cap(self) -> usize {
        match self {
            Element::C | Element::N | Element::S => 4,
            Element::O | Element::Se => 2,
            Element::F | Element::Cl | Element::Br => 1,
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Element::ALL
            .into_iter()
            .find(|e| e.symbol().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::contract(
                    "element",
                    format!("`{s}` is not one of C, N, O, F, S, Cl, Se, Br"),
                )
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Aromatic,
}

impl BondOrder {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Residue identity. The canonical twenty are in alphabetical order of their
/// three-letter codes; `Unk` marks an unassigned residue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AminoAcid {
    Ala,
    Arg,
    Asn,
    Asp,
    Cys,
    Gln,
    Glu,
    Gly,
    His,
    Ile,
    Leu,
    Lys,
    Met,
    Phe,
    Pro,
    Ser,
    Thr,
    Trp,
    Tyr,
    Val,
    Unk,
}

const CODES3: [&str; 21] = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU", "LYS", "MET",
    "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL", "UNK",
];
const CODES1: [char; 21] = [
    'A', 'R', 'N', 'D', 'C', 'Q', 'E', 'G', 'H', 'I', 'L', 'K', 'M', 'F', 'P', 'S', 'T', 'W', 'Y',
    'V', 'X',
];

impl AminoAcid {
    pub const CANONICAL: [AminoAcid; 20] = [
        AminoAcid::Ala,
        AminoAcid::Arg,
        AminoAcid::Asn,
        AminoAcid::Asp,
        AminoAcid::Cys,
        AminoAcid::Gln,
        AminoAcid::Glu,
        AminoAcid::Gly,
        AminoAcid::His,
        AminoAcid::Ile,
        AminoAcid::Leu,
        AminoAcid::Lys,
        AminoAcid::Met,
        AminoAcid::Phe,
        AminoAcid::Pro,
        AminoAcid::Ser,
        AminoAcid::Thr,
        AminoAcid::Trp,
        AminoAcid::Tyr,
        AminoAcid::Val,
    ];

    /// Class index in `0..20`; `None` for `Unk`.
    pub fn index(self) -> Option<usize> {
        match self {
            AminoAcid::Unk => None,
            aa => Some(aa as usize),
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::CANONICAL.get(i).copied()
    }

    pub fn code3(self) -> &'static str {
        CODES3[self as usize]
    }

    pub fn code1(self) -> char {
        CODES1[self as usize]
    }

    pub fn from_code1(c: char) -> Option<Self> {
        let c = c.to_ascii_uppercase();
        CODES1[..20]
            .iter()
            .position(|x| *x == c)
            .map(|i| Self::CANONICAL[i])
    }
}

impl fmt::Display for AminoAcid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code3())
    }
}

impl FromStr for AminoAcid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        CODES3
            .iter()
            .position(|c| *c == up)
            .map(|i| {
                if i < 20 {
                    Self::CANONICAL[i]
                } else {
                    AminoAcid::Unk
                }
            })
            .ok_or_else(|| Error::contract("residue code", format!("unknown residue `{s}`")))
    }
}

/// Renders a sequence as one-letter codes.
pub fn sequence_string(seq: &[AminoAcid]) -> String {
    seq.iter().map(|a| a.code1()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    /// PDB-style atom name such as `CA`, `SG` or `OXT`.
    pub name: String,
    /// 0-based residue index; `None` marks a receptor atom.
    pub residue: Option<usize>,
    pub is_ligand: bool,
}

impl Atom {
    pub fn ligand(element: Element, name: impl Into<String>, residue: usize) -> Self {
        Atom {
            element,
            name: name.into(),
            residue: Some(residue),
            is_ligand: true,
        }
    }

    pub fn is_backbone(&self) -> bool {
        ResidueTemplate::BACKBONE.contains(&self.name.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn new(a: usize, b: usize, order: BondOrder) -> Self {
        Bond { a, b, order }
    }

    /// Endpoints in ascending order.
    pub fn key(&self) -> (usize, usize) {
        (self.a.min(self.b), self.a.max(self.b))
    }

    pub fn other(&self, i: usize) -> usize {
        if self.a == i {
            self.b
        } else {
            self.a
        }
    }
}

/// Target length of a bond between two heavy elements: 2.05 Å for S-S,
/// 1.5 Å otherwise.
pub fn ideal_bond_length(a: Element, b: Element) -> f64 {
    if a == Element::S && b == Element::S {
        2.05
    } else {
        1.5
    }
}

/// Atoms plus typed bonds, with per-residue type assignments.
#[derive(Clone, Debug, PartialEq)]
pub struct ChemGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub residue_types: Vec<AminoAcid>,
}

impl ChemGraph {
    /// Checks endpoint ranges and self-loops. Duplicate bonds and valence are
    /// left to [`validate_graph`].
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>, residue_types: Vec<AminoAcid>) -> Result<Self> {
        for b in &bonds {
            if b.a >= atoms.len() || b.b >= atoms.len() {
                return Err(Error::contract(
                    "chem graph",
                    format!(
                        "bond {}-{} out of range for {} atoms",
                        b.a,
                        b.b,
                        atoms.len()
                    ),
                ));
            }
            if b.a == b.b {
                return Err(Error::contract(
                    "chem graph",
                    format!("self bond on atom {}", b.a),
                ));
            }
        }
        Ok(ChemGraph {
            atoms,
            bonds,
            residue_types,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_residues(&self) -> usize {
        self.residue_types.len()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        let mut seen = BTreeSet::new();
        for b in &self.bonds {
            if seen.insert(b.key()) {
                adj[b.a].push(b.b);
                adj[b.b].push(b.a);
            }
        }
        adj
    }

    pub fn find_atom(&self, residue: usize, name: &str) -> Option<usize> {
        self.atoms
            .iter()
            .position(|a| a.residue == Some(residue) && a.name == name)
    }

    pub fn has_bond(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.bonds.iter().any(|b| b.key() == key)
    }

    /// Connected component label of every atom, and the component count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let adj = self.adjacency();
        let mut label = vec![usize::MAX; self.atoms.len()];
        let mut count = 0;
        for s in 0..self.atoms.len() {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = count;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = count;
                        queue.push_back(v);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Circuit rank |E| - |V| + components over distinct bonds.
    pub fn circuit_rank(&self) -> usize {
        let distinct: BTreeSet<_> = self.bonds.iter().map(Bond::key).collect();
        let (_, c) = self.components();
        distinct.len() + c - self.atoms.len()
    }

    /// Hop distances from `src` along bonds; `usize::MAX` when unreachable.
    pub fn hop_distances(&self, src: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let mut dist = vec![usize::MAX; self.atoms.len()];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Flags atoms that lie on at least one cycle, i.e. touch a bond that is
    /// not a bridge.
    pub fn in_cycle(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let adj = self.adjacency();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut flags = vec![false; n];
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // iterative DFS: (node, parent, next neighbour position)
            let mut stack = vec![(root, usize::MAX, 0usize)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (u, parent, ref mut pos)) = stack.last_mut() {
                if *pos < adj[u].len() {
                    let v = adj[u][*pos];
                    *pos += 1;
                    if v == parent {
                        continue;
                    }
                    if disc[v] == usize::MAX {
                        disc[v] = timer;
                        low[v] = timer;
                        timer += 1;
                        stack.push((v, u, 0));
                    } else {
                        low[u] = low[u].min(disc[v]);
                    }
                } else {
                    stack.pop();
                    if parent != usize::MAX {
                        low[parent] = low[parent].min(low[u]);
                        if low[u] <= disc[parent] {
                            // edge parent-u is not a bridge
                            flags[u] = true;
                            flags[parent] = true;
                        }
                    }
                }
            }
        }
        flags
    }

    /// Sub-graph on the atoms with `keep[i] == true`. Returns the graph and,
    /// for every kept atom, its index in `self`.
    pub fn induced(&self, keep: &[bool]) -> (ChemGraph, Vec<usize>) {
        let mut new_index = vec![usize::MAX; self.atoms.len()];
        let mut old_index = Vec::new();
        let mut atoms = Vec::new();
        for (i, a) in self.atoms.iter().enumerate() {
            if keep[i] {
                new_index[i] = atoms.len();
                old_index.push(i);
                atoms.push(a.clone());
            }
        }
        let bonds = self
            .bonds
            .iter()
            .filter(|b| keep[b.a] && keep[b.b])
            .map(|b| Bond::new(new_index[b.a], new_index[b.b], b.order))
            .collect();
        (
            ChemGraph {
                atoms,
                bonds,
                residue_types: self.residue_types.clone(),
            },
            old_index,
        )
    }
}

/// Degree minus adjacency, unweighted over distinct bonds.
pub fn graph_laplacian(graph: &ChemGraph) -> Result<DMatrix<f64>> {
    let n = graph.n_atoms();
    if n == 0 {
        return Err(Error::contract("graph_laplacian", "empty graph"));
    }
    let mut l = DMatrix::zeros(n, n);
    for (i, nbrs) in graph.adjacency().iter().enumerate() {
        l[(i, i)] = nbrs.len() as f64;
        for &j in nbrs {
            l[(i, j)] = -1.0;
        }
    }
    Ok(l)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidityReport {
    /// `(atom, degree, cap)` for atoms over their element's valence cap.
    pub valence_violations: Vec<(usize, usize, usize)>,
    pub duplicate_bonds: Vec<(usize, usize)>,
    pub n_components: usize,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.valence_violations.is_empty()
            && self.duplicate_bonds.is_empty()
            && self.n_components <= 1
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return f.write_str("valid");
        }
        for (i, d, cap) in &self.valence_violations {
            writeln!(f, "valence: atom {i} has {d} bonds (cap {cap})")?;
        }
        for (i, j) in &self.duplicate_bonds {
            writeln!(f, "duplicate bond {i}-{j}")?;
        }
        if self.n_components > 1 {
            writeln!(f, "{} disconnected components", self.n_components)?;
        }
        Ok(())
    }
}

pub fn validate_graph(graph: &ChemGraph) -> ValidityReport {
    let mut report = ValidityReport::default();
    let mut seen = BTreeSet::new();
    for b in &graph.bonds {
        if !seen.insert(b.key()) {
            report.duplicate_bonds.push(b.key());
        }
    }
    for (i, nbrs) in graph.adjacency().iter().enumerate() {
        let cap = graph.atoms[i].element.valence_cap();
        if nbrs.len() > cap {
            report.valence_violations.push((i, nbrs.len(), cap));
        }
    }
    report.n_components = graph.components().1;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn carbon_path(n: usize) -> ChemGraph {
        let atoms = (0..n).map(|i| Atom::ligand(Element::C, "C", i)).collect();
        let bonds = (1..n)
            .map(|i| Bond::new(i - 1, i, BondOrder::Single))
            .collect();
        ChemGraph::new(atoms, bonds, vec![]).unwrap()
    }

    #[test]
    fn element_whitelist() {
        assert_eq!("Cl".parse::<Element>().unwrap(), Element::Cl);
        assert_eq!("SE".parse::<Element>().unwrap(), Element::Se);
        assert!("P".parse::<Element>().is_err());
        assert!("H".parse::<Element>().is_err());
    }

    #[test]
    fn path_laplacian() {
        let l = graph_laplacian(&carbon_path(3)).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1., -1., 0., -1., 2., -1., 0., -1., 1.]);
        assert_eq!(l, expected);
        let mut ev: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip([0.0, 1.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_atom_laplacian() {
        let l = graph_laplacian(&carbon_path(1)).unwrap();
        assert_eq!(l, DMatrix::from_element(1, 1, 0.0));
        let empty = ChemGraph::new(vec![], vec![], vec![]).unwrap();
        assert!(graph_laplacian(&empty).is_err());
    }

    #[test]
    fn pentavalent_carbon_reported() {
        let mut atoms = vec![Atom::ligand(Element::C, "C", 0)];
        atoms.extend((0..5).map(|_| Atom::ligand(Element::C, "C", 0)));
        let bonds = (1..6).map(|i| Bond::new(0, i, BondOrder::Single)).collect();
        let r = validate_graph(&ChemGraph::new(atoms, bonds, vec![]).unwrap());
        assert_eq!(r.valence_violations, vec![(0, 5, 4)]);
        assert!(!r.is_valid());
    }

    #[test]
    fn duplicate_disulfide_reported() {
        let atoms = vec![
            Atom::ligand(Element::S, "SG", 0),
            Atom::ligand(Element::S, "SG", 1),
        ];
        let bonds = vec![
            Bond::new(0, 1, BondOrder::Single),
            Bond::new(1, 0, BondOrder::Single),
        ];
        let r = validate_graph(&ChemGraph::new(atoms, bonds, vec![]).unwrap());
        assert_eq!(r.duplicate_bonds, vec![(0, 1)]);
    }

    #[test]
    fn disconnected_reported() {
        let atoms = vec![
            Atom::ligand(Element::C, "C", 0),
            Atom::ligand(Element::C, "C", 0),
        ];
        let r = validate_graph(&ChemGraph::new(atoms, vec![], vec![]).unwrap());
        assert_eq!(r.n_components, 2);
    }

    #[test]
    fn cycle_flags() {
        // triangle 0-1-2 with a tail 2-3
        let atoms = (0..4).map(|i| Atom::ligand(Element::C, "C", i)).collect();
        let bonds = vec![
            Bond::new(0, 1, BondOrder::Single),
            Bond::new(1, 2, BondOrder::Single),
            Bond::new(2, 0, BondOrder::Single),
            Bond::new(2, 3, BondOrder::Single),
        ];
        let g = ChemGraph::new(atoms, bonds, vec![]).unwrap();
        assert_eq!(g.in_cycle(), vec![true, true, true, false]);
        assert_eq!(g.circuit_rank(), 1);
    }

    #[test]
    fn residue_codes() {
        assert_eq!("trp".parse::<AminoAcid>().unwrap(), AminoAcid::Trp);
        assert_eq!(AminoAcid::Gln.code1(), 'Q');
        assert_eq!(AminoAcid::from_index(19), Some(AminoAcid::Val));
        assert_eq!(AminoAcid::Unk.index(), None);
        assert_eq!(sequence_string(&[AminoAcid::Cys, AminoAcid::Gly]), "CG");
    }
}
