//! Deterministic toy complexes: a peptide embedded with exact bond lengths
//! inside a concave shell of receptor atoms.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::ComplexRecord;
use crate::chem::{ideal_bond_length, AminoAcid, ChemGraph, Element};
use crate::cyclization::{assemble, make_spec_with, CyclizationType, SpecOptions};
use crate::denoiser::Receptor;
use crate::error::{Error, Result};
use crate::geometry::{add, centroid, dist, norm, scale, sub, Coords, Vec3};

#[derive(Clone, Debug)]
pub struct SyntheticOptions {
    pub ctypes: Vec<CyclizationType>,
    pub lengths: RangeInclusive<usize>,
    pub receptor_atoms: RangeInclusive<usize>,
    /// Per-coordinate Gaussian jitter (Å).
    pub jitter: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            ctypes: CyclizationType::ALL.to_vec(),
            lengths: 3..=8,
            receptor_atoms: 60..=200,
            jitter: 0.05,
        }
    }
}

/// Shortest length that admits the type's default anchors.
fn min_length(ctype: CyclizationType) -> usize {
    match ctype {
        CyclizationType::SideToSide => 8,
        _ => 3,
    }
}

/// Largest tolerated bond-length error after jitter (Å).
pub const JITTERED_BOND_TOLERANCE: f64 = 0.15;
/// Non-bonded atoms closer than this count as clashing (Å).
pub const CLASH_DISTANCE: f64 = 1.7;
const ONE_THREE_FLOOR: f64 = 2.2;
const FAR_FLOOR: f64 = 2.6;

pub fn gen_synthetic_dataset(
    n: usize,
    seed: u64,
    options: &SyntheticOptions,
) -> Result<Vec<ComplexRecord>> {
    if n == 0 {
        return Err(Error::contract(
            "gen_synthetic_dataset",
            "n must be at least 1",
        ));
    }
    if options.ctypes.is_empty() {
        return Err(Error::contract(
            "gen_synthetic_dataset",
            "no cyclization types",
        ));
    }
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let ctype = options.ctypes[rng.random_range(0..options.ctypes.len())];
            let lo = (*options.lengths.start()).max(min_length(ctype));
            let hi = (*options.lengths.end()).max(lo);
            let len = rng.random_range(lo..=hi);
            let seq: Vec<AminoAcid> = (0..len)
                .map(|_| AminoAcid::CANONICAL[rng.random_range(0..20)])
                .collect();
            gen_complex(format!("synth-{seed}-{i}"), ctype, &seq, options, &mut rng)
        })
        .collect()
}

/// One complex for a given topology and sequence (anchors are forced).
pub fn gen_complex<R: Rng + ?Sized>(
    id: String,
    ctype: CyclizationType,
    sequence: &[AminoAcid],
    options: &SyntheticOptions,
    rng: &mut R,
) -> Result<ComplexRecord> {
    let spec = make_spec_with(
        ctype,
        sequence.len(),
        &SpecOptions {
            anchors: None,
            lengths: Some(1..=usize::MAX),
        },
    )?;
    let graph = assemble(sequence, &spec)?;
    let ideal = embed_ligand(&graph, rng)?;
    let ligand = jitter_ligand(&graph, &ideal, options.jitter, rng)?;
    let receptor = build_pocket(&ligand, options, rng);
    let shift = scale(centroid(&receptor.positions), -1.0);
    let receptor = Receptor {
        positions: receptor.positions.iter().map(|p| add(*p, shift)).collect(),
        ..receptor
    };
    let rec = ComplexRecord {
        id,
        receptor,
        graph,
        ligand_positions: ligand.iter().map(|p| add(*p, shift)).collect(),
    };
    rec.validate()?;
    Ok(rec)
}

fn hop_matrix(graph: &ChemGraph) -> Vec<Vec<usize>> {
    (0..graph.n_atoms())
        .map(|i| graph.hop_distances(i))
        .collect()
}

fn bond_targets(graph: &ChemGraph) -> Vec<(usize, usize, f64)> {
    graph
        .bonds
        .iter()
        .map(|b| {
            let l = ideal_bond_length(graph.atoms[b.a].element, graph.atoms[b.b].element);
            (b.a, b.b, l)
        })
        .collect()
}

fn embedding_energy_grad(
    x: &[Vec3],
    bonds: &[(usize, usize, f64)],
    hops: &[Vec<usize>],
    center_weight: f64,
    grad: &mut [Vec3],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = [0.0; 3]);
    let mut e = 0.0;
    let mut pair =
        |i: usize, j: usize, target: f64, floor_only: bool, w: f64, grad: &mut [Vec3]| {
            let d = sub(x[i], x[j]);
            let r = norm(d).max(1e-9);
            let gap = r - target;
            if floor_only && gap >= 0.0 {
                return;
            }
            e += w * gap * gap;
            let c = 2.0 * w * gap / r;
            for k in 0..3 {
                grad[i][k] += c * d[k];
                grad[j][k] -= c * d[k];
            }
        };
    for &(i, j, l) in bonds {
        pair(i, j, l, false, 4.0, grad);
    }
    let n = x.len();
    for i in 0..n {
        for j in i + 1..n {
            match hops[i][j] {
                0 | 1 => {}
                2 => pair(i, j, ONE_THREE_FLOOR, true, 1.0, grad),
                _ => pair(i, j, FAR_FLOOR, true, 1.0, grad),
            }
        }
    }
    if center_weight > 0.0 {
        let c = centroid(x);
        for (g, p) in grad.iter_mut().zip(x) {
            let d = sub(*p, c);
            e += center_weight * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
            for k in 0..3 {
                g[k] += 2.0 * center_weight * d[k];
            }
        }
    }
    e
}

/// Places atoms so that every bond has its template length and non-bonded
/// atoms keep floor distances, by relaxing a random start.
pub fn embed_ligand<R: Rng + ?Sized>(graph: &ChemGraph, rng: &mut R) -> Result<Coords> {
    let n = graph.n_atoms();
    let bonds = bond_targets(graph);
    let hops = hop_matrix(graph);
    let radius = 1.2 * (n as f64).cbrt();
    for _attempt in 0..20 {
        let mut x: Coords = (0..n)
            .map(|_| std::array::from_fn(|_| radius * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let mut grad = vec![[0.0; 3]; n];
        let mut vel = vec![[0.0; 3]; n];
        for it in 0..6000 {
            let w = if it < 4000 { 0.02 } else { 0.0 };
            embedding_energy_grad(&x, &bonds, &hops, w, &mut grad);
            for ((p, v), g) in x.iter_mut().zip(vel.iter_mut()).zip(&grad) {
                for k in 0..3 {
                    v[k] = 0.8 * v[k] - 0.02 * g[k];
                    p[k] += v[k];
                }
            }
        }
        if embedding_ok(&x, &bonds, &hops, 0.02, 0.05) {
            return Ok(x);
        }
    }
    Err(Error::Numeric {
        stage: "ligand embedding".into(),
        msg: format!("no valid embedding for a {n}-atom ligand"),
    })
}

fn embedding_ok(
    x: &[Vec3],
    bonds: &[(usize, usize, f64)],
    hops: &[Vec<usize>],
    bond_tol: f64,
    floor_slack: f64,
) -> bool {
    if bonds
        .iter()
        .any(|&(i, j, l)| (dist(x[i], x[j]) - l).abs() > bond_tol)
    {
        return false;
    }
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let floor = match hops[i][j] {
                0 | 1 => continue,
                2 => ONE_THREE_FLOOR,
                _ => FAR_FLOOR,
            };
            if dist(x[i], x[j]) < floor - floor_slack {
                return false;
            }
        }
    }
    true
}

fn jitter_ligand<R: Rng + ?Sized>(
    graph: &ChemGraph,
    ideal: &[Vec3],
    sigma: f64,
    rng: &mut R,
) -> Result<Coords> {
    if sigma == 0.0 {
        return Ok(ideal.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::contract("jitter", e.to_string()))?;
    let bonds = bond_targets(graph);
    let adj = graph.adjacency();
    for _ in 0..1000 {
        let x: Coords = ideal
            .iter()
            .map(|p| std::array::from_fn(|k| p[k] + normal.sample(rng)))
            .collect();
        let bonds_ok = bonds
            .iter()
            .all(|&(i, j, l)| (dist(x[i], x[j]) - l).abs() <= JITTERED_BOND_TOLERANCE);
        let clash_free = (0..x.len()).all(|i| {
            (i + 1..x.len()).all(|j| adj[i].contains(&j) || dist(x[i], x[j]) >= CLASH_DISTANCE)
        });
        if bonds_ok && clash_free {
            return Ok(x);
        }
    }
    Err(Error::Numeric {
        stage: "ligand jitter".into(),
        msg: "jittered bonds kept leaving the tolerance".into(),
    })
}

/// A spherical cap of receptor atoms around the ligand, opening along a
/// random axis.
fn build_pocket<R: Rng + ?Sized>(
    ligand: &[Vec3],
    options: &SyntheticOptions,
    rng: &mut R,
) -> Receptor {
    let c = centroid(ligand);
    let extent = ligand.iter().map(|p| dist(*p, c)).fold(0.0, f64::max);
    let shell = extent + 4.0;
    let m = rng.random_range(options.receptor_atoms.clone());
    let axis = {
        let v: Vec3 = std::array::from_fn(|_| rng.sample(StandardNormal));
        scale(v, 1.0 / norm(v))
    };
    // orthonormal frame around the axis
    let helper = if axis[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let u = {
        let d = crate::geometry::dot(helper, axis);
        let v = sub(helper, scale(axis, d));
        scale(v, 1.0 / norm(v))
    };
    let w = [
        axis[1] * u[2] - axis[2] * u[1],
        axis[2] * u[0] - axis[0] * u[2],
        axis[0] * u[1] - axis[1] * u[0],
    ];
    let cos_max = (110f64).to_radians().cos();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut positions = Vec::with_capacity(m);
    let mut elements = Vec::with_capacity(m);
    let mut backbone = Vec::with_capacity(m);
    for k in 0..m {
        let ct = 1.0 - (1.0 - cos_max) * (k as f64 + 0.5) / m as f64;
        let st = (1.0 - ct * ct).sqrt();
        let phi = golden * k as f64 + rng.random_range(-0.2..0.2);
        let r = shell + rng.random_range(-0.6..0.6);
        // the cap sits opposite the axis so the opening faces +axis
        let dir = add(
            scale(axis, -ct),
            add(scale(u, st * phi.cos()), scale(w, st * phi.sin())),
        );
        positions.push(add(c, scale(dir, r)));
        let roll: f64 = rng.random();
        elements.push(if roll < 0.6 {
            Element::C
        } else if roll < 0.75 {
            Element::N
        } else if roll < 0.95 {
            Element::O
        } else {
            Element::S
        });
        backbone.push(rng.random_bool(0.4));
    }
    Receptor {
        positions,
        elements,
        backbone,
    }
}
