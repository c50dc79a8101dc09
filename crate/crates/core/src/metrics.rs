//! Geometric evaluation: superposition RMSD, bond and clash validity, and a
//! pairwise-RMSD diversity proxy.

use std::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::chem::{ideal_bond_length, ChemGraph, Element, ResidueTemplate};
use crate::cyclization::infer_spec;
use crate::error::{Error, Result};
use crate::geometry::{centroid, dist, Coords, Vec3};

/// Non-bonded pairs closer than this are clashes.
pub const CLASH_THRESHOLD: f64 = 1.7;
/// A bond is acceptable within this distance of its template length.
pub const BOND_TOLERANCE: f64 = 0.25;
/// Accepted range for a disulfide closing bond.
pub const DISULFIDE_WINDOW: (f64, f64) = (2.0, 2.5);
/// Softening length of the diversity proxy.
pub const DIVERSITY_SCALE: f64 = 5.0;

/// RMSD after the optimal proper rigid superposition of `b` onto `a`.
pub fn kabsch_rmsd(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "kabsch_rmsd",
            format!("{} vs {} atoms", a.len(), b.len()),
        ));
    }
    if a.len() < 3 {
        return Err(Error::contract("kabsch_rmsd", "need at least 3 atoms"));
    }
    if a == b {
        return Ok(0.0);
    }
    let (ca, cb) = (centroid(a), centroid(b));
    let v = |p: Vec3, c: Vec3| Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
    let xs: Vec<Vector3<f64>> = a.iter().map(|p| v(*p, ca)).collect();
    let ys: Vec<Vector3<f64>> = b.iter().map(|q| v(*q, cb)).collect();
    let h: Matrix3<f64> = ys.iter().zip(&xs).map(|(y, x)| y * x.transpose()).sum();
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    // R = V D U^T with D fixing det(R) = +1
    let d = (vt.transpose() * u.transpose()).determinant().signum();
    let r = vt.transpose() * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - r * y).norm_squared()).sum();
    Ok((ss / a.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BondDeviation {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    pub target: f64,
}

impl BondDeviation {
    pub fn deviation(&self) -> f64 {
        self.length - self.target
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosureReport {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    pub target: f64,
    /// Set for S-S closures: whether the length is inside [`DISULFIDE_WINDOW`].
    pub disulfide_ok: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryReport {
    pub bonds: Vec<BondDeviation>,
    /// Non-bonded pairs closer than [`CLASH_THRESHOLD`], with their distance.
    pub clashes: Vec<(usize, usize, f64)>,
    pub closure: Option<ClosureReport>,
}

impl GeometryReport {
    pub fn bonds_within(&self, tol: f64) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.deviation().abs() <= tol)
            .count()
    }

    pub fn bond_fraction_within(&self, tol: f64) -> f64 {
        if self.bonds.is_empty() {
            1.0
        } else {
            self.bonds_within(tol) as f64 / self.bonds.len() as f64
        }
    }

    /// Bonds outside [`BOND_TOLERANCE`] plus clashes.
    pub fn violations(&self) -> usize {
        self.bonds.len() - self.bonds_within(BOND_TOLERANCE) + self.clashes.len()
    }

    pub fn max_bond_deviation(&self) -> f64 {
        self.bonds
            .iter()
            .map(|b| b.deviation().abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GeometryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bonds {}", self.bonds.len())?;
        writeln!(f, "bonds_within_{BOND_TOLERANCE} {}", self.bonds_within(BOND_TOLERANCE))?;
        writeln!(f, "max_bond_deviation {:.4}", self.max_bond_deviation())?;
        writeln!(f, "clashes {}", self.clashes.len())?;
        match &self.closure {
            Some(c) => {
                write!(f, "closure_length {:.4}", c.length)?;
                if let Some(ok) = c.disulfide_ok {
                    write!(f, "\ndisulfide_in_window {ok}")?;
                }
                Ok(())
            }
            None => write!(f, "closure_length none"),
        }
    }
}

/// Bond-length deviations, clashes and the closing bond of `graph` at
/// `coords`. The closing bond is recovered from the graph topology.
pub fn validity_report(coords: &[Vec3], graph: &ChemGraph) -> Result<GeometryReport> {
    if coords.len() != graph.n_atoms() {
        return Err(Error::shape(
            "validity_report",
            format!("{} coordinates for {} atoms", coords.len(), graph.n_atoms()),
        ));
    }
    let el = |i: usize| graph.atoms[i].element;
    let bonds: Vec<BondDeviation> = graph
        .bonds
        .iter()
        .map(|b| BondDeviation {
            a: b.a,
            b: b.b,
            length: dist(coords[b.a], coords[b.b]),
            target: ideal_bond_length(el(b.a), el(b.b)),
        })
        .collect();
    let adj = graph.adjacency();
    let mut clashes = Vec::new();
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let d = dist(coords[i], coords[j]);
            if d < CLASH_THRESHOLD && !adj[i].contains(&j) {
                clashes.push((i, j, d));
            }
        }
    }
    let closure = infer_spec(graph)
        .ok()
        .and_then(|spec| spec.closing_bond)
        .and_then(|cb| {
            let a = graph.find_atom(cb.a.residue, cb.a.name)?;
            let b = graph.find_atom(cb.b.residue, cb.b.name)?;
            let length = dist(coords[a], coords[b]);
            let ss = el(a) == Element::S && el(b) == Element::S;
            Some(ClosureReport {
                a,
                b,
                length,
                target: ideal_bond_length(el(a), el(b)),
                disulfide_ok: ss.then(|| {
                    (DISULFIDE_WINDOW.0..=DISULFIDE_WINDOW.1).contains(&length)
                }),
            })
        });
    Ok(GeometryReport {
        bonds,
        clashes,
        closure,
    })
}

/// Backbone (N, CA, C, O) coordinates in atom order.
pub fn backbone_coords(coords: &[Vec3], graph: &ChemGraph) -> Coords {
    graph
        .atoms
        .iter()
        .zip(coords)
        .filter(|(a, _)| ResidueTemplate::BACKBONE.contains(&a.name.as_str()))
        .map(|(_, p)| *p)
        .collect()
}

/// Mean over comparable pairs of `d / (d + 5)`, `d` the superposed RMSD.
/// Structures are compared only with others of the same length.
pub fn diversity(structures: &[Coords]) -> Result<f64> {
    if structures.len() < 2 {
        return Err(Error::contract("diversity", "need at least two structures"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..structures.len() {
        for j in i + 1..structures.len() {
            if structures[i].len() != structures[j].len() {
                continue;
            }
            let d = kabsch_rmsd(&structures[i], &structures[j])?;
            total += d / (d + DIVERSITY_SCALE);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::contract(
            "diversity",
            "no two structures have the same length",
        ));
    }
    Ok(total / pairs as f64)
}
