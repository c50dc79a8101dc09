use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::chem::{validate_graph, AminoAcid, Atom, Bond, BondOrder, ChemGraph, Element};
use crate::cyclization::infer_sequence;
use crate::denoiser::Receptor;
use crate::error::{Error, Result};
use crate::geometry::{all_finite, Coords};

/// One ligand-receptor complex.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexRecord {
    pub id: String,
    pub receptor: Receptor,
    pub graph: ChemGraph,
    pub ligand_positions: Coords,
}

impl ComplexRecord {
    /// Checks whitelisted elements (by construction), finite positions and a
    /// valid, nonempty ligand graph.
    pub fn validate(&self) -> Result<()> {
        if self.graph.n_atoms() == 0 {
            return Err(Error::contract("complex record", "empty ligand"));
        }
        if self.ligand_positions.len() != self.graph.n_atoms() {
            return Err(Error::contract(
                "complex record",
                "ligand positions do not match atoms",
            ));
        }
        if !all_finite(&self.ligand_positions) || !all_finite(&self.receptor.positions) {
            return Err(Error::contract("complex record", "non-finite coordinate"));
        }
        let report = validate_graph(&self.graph);
        if !report.is_valid() {
            return Err(Error::contract(
                "complex record",
                format!("invalid ligand: {report}"),
            ));
        }
        Ok(())
    }

    pub fn sequence(&self) -> &[AminoAcid] {
        &self.graph.residue_types
    }
}

fn order_token(o: BondOrder) -> &'static str {
    match o {
        BondOrder::Single => "1",
        BondOrder::Double => "2",
        BondOrder::Aromatic => "ar",
    }
}

/// Serializes in the line format read by [`parse_complex_str`]. Coordinates
/// use the shortest decimal that round-trips.
pub fn write_complex_string(rec: &ComplexRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "complex {}", rec.id);
    let r = &rec.receptor;
    for i in 0..r.len() {
        let p = r.positions[i];
        let flag = if r.backbone[i] { "bb" } else { "sc" };
        let _ = writeln!(s, "R {} {} {} {} {}", r.elements[i], p[0], p[1], p[2], flag);
    }
    for (a, p) in rec.graph.atoms.iter().zip(&rec.ligand_positions) {
        let res = a.residue.unwrap_or(0);
        let _ = writeln!(
            s,
            "L {} {} {} {} {} {}",
            a.element, res, a.name, p[0], p[1], p[2]
        );
    }
    for b in &rec.graph.bonds {
        let _ = writeln!(s, "B {} {} {}", b.a, b.b, order_token(b.order));
    }
    s
}

pub fn write_complex(rec: &ComplexRecord, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_complex_string(rec))?;
    Ok(())
}

pub fn parse_complex(path: impl AsRef<Path>) -> Result<ComplexRecord> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_complex_str(&text, path)
}

/// Parses one complex; `path` only labels errors.
pub fn parse_complex_str(text: &str, path: &Path) -> Result<ComplexRecord> {
    let err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };
    let mut id = None;
    let (mut rpos, mut relem, mut rbb) = (Vec::new(), Vec::new(), Vec::new());
    let (mut atoms, mut lpos) = (Vec::new(), Vec::new());
    let mut bonds = Vec::new();
    let mut bond_lines = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let ln = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(ln, format!("bad number `{s}`")))
        };
        let element = |s: &str| -> Result<Element> {
            s.parse::<Element>().map_err(|_| {
                err(
                    ln,
                    format!("element `{s}` is outside the whitelist C, N, O, F, S, Cl, Se, Br"),
                )
            })
        };
        match f[0] {
            "complex" => {
                if f.len() != 2 {
                    return Err(err(ln, "expected `complex <id>`".into()));
                }
                if id.is_some() {
                    return Err(err(ln, "second complex header".into()));
                }
                id = Some(f[1].to_string());
            }
            "R" => {
                if f.len() != 6 {
                    return Err(err(ln, "expected `R <element> <x> <y> <z> <bb|sc>`".into()));
                }
                relem.push(element(f[1])?);
                rpos.push([num(f[2])?, num(f[3])?, num(f[4])?]);
                rbb.push(match f[5] {
                    "bb" => true,
                    "sc" => false,
                    other => return Err(err(ln, format!("flag `{other}` is not bb or sc"))),
                });
            }
            "L" => {
                if f.len() != 7 {
                    return Err(err(
                        ln,
                        "expected `L <element> <res_idx> <atom_name> <x> <y> <z>`".into(),
                    ));
                }
                let el = element(f[1])?;
                let res: usize = f[2]
                    .parse()
                    .map_err(|_| err(ln, format!("bad residue index `{}`", f[2])))?;
                atoms.push(Atom::ligand(el, f[3], res));
                lpos.push([num(f[4])?, num(f[5])?, num(f[6])?]);
            }
            "B" => {
                if f.len() != 4 {
                    return Err(err(ln, "expected `B <i> <j> <1|2|ar>`".into()));
                }
                let idx = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| err(ln, format!("bad bond endpoint `{s}`")))
                };
                let order = match f[3] {
                    "1" => BondOrder::Single,
                    "2" => BondOrder::Double,
                    "ar" => BondOrder::Aromatic,
                    o => return Err(err(ln, format!("bad bond order `{o}`"))),
                };
                let (i, j) = (idx(f[1])?, idx(f[2])?);
                if i == j {
                    return Err(err(ln, format!("bond joins atom {i} to itself")));
                }
                bonds.push(Bond::new(i, j, order));
                bond_lines.push(ln);
            }
            other => return Err(err(ln, format!("unknown record type `{other}`"))),
        }
    }
    let id = id.ok_or_else(|| err(1, "missing `complex <id>` header".into()))?;
    if atoms.is_empty() {
        return Err(err(
            text.lines().count().max(1),
            "ligand has no atoms".into(),
        ));
    }
    for (b, &ln) in bonds.iter().zip(&bond_lines) {
        if b.a >= atoms.len() || b.b >= atoms.len() {
            return Err(err(
                ln,
                format!("bond {}-{} references a missing atom", b.a, b.b),
            ));
        }
    }
    let n_res = atoms.iter().filter_map(|a| a.residue).max().unwrap_or(0) + 1;
    let residue_types =
        infer_sequence(&atoms, n_res).unwrap_or_else(|_| vec![AminoAcid::Unk; n_res]);
    let graph = ChemGraph::new(atoms, bonds, residue_types)?;
    let rec = ComplexRecord {
        id,
        receptor: Receptor::new(rpos, relem, rbb)?,
        graph,
        ligand_positions: lpos,
    };
    rec.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(rec)
}
