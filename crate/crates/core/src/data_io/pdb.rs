use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::chem::{AminoAcid, Atom, ChemGraph, Element};
use crate::error::{Error, Result};
use crate::geometry::{Coords, Vec3};

fn is_peptide_link(graph: &ChemGraph, a: usize, b: usize) -> bool {
    let (x, y) = (&graph.atoms[a], &graph.atoms[b]);
    match (x.residue, y.residue) {
        (Some(rx), Some(ry)) => {
            (rx + 1 == ry && x.name == "C" && y.name == "N")
                || (ry + 1 == rx && y.name == "C" && x.name == "N")
        }
        _ => false,
    }
}

fn atom_name_field(name: &str, element: Element) -> String {
    if name.len() < 4 && element.symbol().len() == 1 {
        format!(" {name:<3}")
    } else {
        format!("{name:<4}")
    }
}

/// PDB text: ATOM records (chain `L`, residues numbered from 1) and one
/// CONECT record per bond that is not a consecutive peptide link.
pub fn pdb_string(coords: &[Vec3], graph: &ChemGraph) -> Result<String> {
    if coords.len() != graph.n_atoms() {
        return Err(Error::contract(
            "write_pdb",
            format!("{} coordinates for {} atoms", coords.len(), graph.n_atoms()),
        ));
    }
    let mut s = String::new();
    for (i, (a, p)) in graph.atoms.iter().zip(coords).enumerate() {
        let res = a.residue.unwrap_or(0);
        let code = graph
            .residue_types
            .get(res)
            .copied()
            .unwrap_or(AminoAcid::Unk)
            .code3();
        let _ = writeln!(
            s,
            "ATOM  {:5} {}{:1}{:3} {:1}{:4}{:1}   {:8.3}{:8.3}{:8.3}{:6.2}{:6.2}          {:>2}",
            i + 1,
            atom_name_field(&a.name, a.element),
            "",
            code,
            "L",
            res + 1,
            "",
            p[0],
            p[1],
            p[2],
            1.0,
            0.0,
            a.element.symbol().to_ascii_uppercase()
        );
    }
    for b in &graph.bonds {
        if is_peptide_link(graph, b.a, b.b) {
            continue;
        }
        let (x, y) = b.key();
        let _ = writeln!(s, "CONECT{:5}{:5}", x + 1, y + 1);
    }
    s.push_str("END\n");
    Ok(s)
}

pub fn write_pdb(coords: &[Vec3], graph: &ChemGraph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, pdb_string(coords, graph)?)?;
    Ok(())
}

/// Atoms, coordinates and bond endpoints read back from [`pdb_string`]
/// output. Consecutive peptide links are restored from atom names.
#[derive(Clone, Debug)]
pub struct PdbContents {
    pub atoms: Vec<Atom>,
    pub residue_codes: Vec<String>,
    pub coords: Coords,
    pub bonds: BTreeSet<(usize, usize)>,
}

pub fn read_pdb_str(text: &str) -> Result<PdbContents> {
    let bad = |line: usize, msg: &str| Error::Parse {
        path: "<pdb>".into(),
        line,
        msg: msg.into(),
    };
    let mut atoms = Vec::new();
    let mut coords = Vec::new();
    let mut codes: Vec<String> = Vec::new();
    let mut bonds = BTreeSet::new();
    for (k, line) in text.lines().enumerate() {
        let ln = k + 1;
        let field = |a: usize, b: usize| line.get(a..b.min(line.len())).unwrap_or("").trim();
        if line.starts_with("ATOM") || line.starts_with("HETATM") {
            let name = field(12, 16).to_string();
            let code = field(17, 20).to_string();
            let res: usize = field(22, 26)
                .parse()
                .map_err(|_| bad(ln, "residue number"))?;
            let num = |a, b| {
                field(a, b)
                    .parse::<f64>()
                    .map_err(|_| bad(ln, "coordinate"))
            };
            let el: Element = field(76, 78).parse().map_err(|_| bad(ln, "element"))?;
            let r = res
                .checked_sub(1)
                .ok_or_else(|| bad(ln, "residue number"))?;
            if codes.len() <= r {
                codes.resize(r + 1, String::new());
            }
            codes[r] = code;
            atoms.push(Atom::ligand(el, name, r));
            coords.push([num(30, 38)?, num(38, 46)?, num(46, 54)?]);
        } else if line.starts_with("CONECT") {
            let a: usize = field(6, 11).parse().map_err(|_| bad(ln, "CONECT"))?;
            let rest = line.get(11..).unwrap_or("");
            for chunk in rest.as_bytes().chunks(5) {
                let b: usize = std::str::from_utf8(chunk)
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|_| bad(ln, "CONECT"))?;
                bonds.insert(((a - 1).min(b - 1), (a - 1).max(b - 1)));
            }
        }
    }
    for (i, a) in atoms.iter().enumerate() {
        if a.name != "C" {
            continue;
        }
        let r = a.residue.unwrap_or(0);
        if let Some(j) = atoms
            .iter()
            .position(|b| b.name == "N" && b.residue == Some(r + 1))
        {
            bonds.insert((i.min(j), i.max(j)));
        }
    }
    Ok(PdbContents {
        atoms,
        residue_codes: codes,
        coords,
        bonds,
    })
}
