use crate::geometry::{dist2, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeType {
    LigandLigand,
    ProteinLigand,
}

impl EdgeType {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Directed edge carrying messages from `src` into ligand atom `dst`.
///
/// Indices address the complex: ligand atoms first, then receptor atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KnnEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeType,
}

/// Fallback receptor size when nothing lies within the pocket radius.
pub const RECEPTOR_FALLBACK: usize = 500;

/// Receptor atoms within `radius` of any ligand atom, or the
/// [`RECEPTOR_FALLBACK`] nearest ones when that set is empty. Returned in
/// ascending index order.
pub fn truncate_receptor(ligand: &[Vec3], receptor: &[Vec3], radius: f64) -> Vec<usize> {
    let nearest: Vec<f64> = receptor
        .iter()
        .map(|r| {
            ligand
                .iter()
                .map(|l| dist2(*l, *r))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let r2 = radius * radius;
    let inside: Vec<usize> = (0..receptor.len()).filter(|&i| nearest[i] <= r2).collect();
    if !inside.is_empty() {
        return inside;
    }
    let mut order: Vec<usize> = (0..receptor.len()).collect();
    order.sort_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(a.cmp(&b)));
    order.truncate(RECEPTOR_FALLBACK);
    order.sort_unstable();
    order
}

/// Each ligand atom receives edges from its `k` nearest other atoms in the
/// complex; ties go to the lower complex index.
pub fn build_knn_graph(ligand: &[Vec3], receptor: &[Vec3], k: usize) -> Vec<KnnEdge> {
    let n_l = ligand.len();
    let pos = |i: usize| {
        if i < n_l {
            ligand[i]
        } else {
            receptor[i - n_l]
        }
    };
    let total = n_l + receptor.len();
    let mut edges = Vec::with_capacity(n_l * k.min(total));
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(total);
    for i in 0..n_l {
        cand.clear();
        cand.extend(
            (0..total)
                .filter(|&j| j != i)
                .map(|j| (dist2(ligand[i], pos(j)), j)),
        );
        let take = k.min(cand.len());
        if take == 0 {
            continue;
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if take < cand.len() {
            cand.select_nth_unstable_by(take - 1, cmp);
        }
        cand[..take].sort_by(cmp);
        edges.extend(cand[..take].iter().map(|&(_, j)| KnnEdge {
            src: j,
            dst: i,
            kind: if j < n_l {
                EdgeType::LigandLigand
            } else {
                EdgeType::ProteinLigand
            },
        }));
    }
    edges
}
