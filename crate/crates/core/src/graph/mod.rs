//! Time-varying directed graphs: adjacency matrices, graph processes and
//! connectivity checks.

mod geometric;
mod io;
mod sequential;

pub use geometric::{generate_geometric_backbone, generate_geometric_backbone_with_degree, GeometricBackbone, DEGREE_TOLERANCE, MAX_RETRIES};
pub use io::{read_edge_list_csv, write_edge_list_csv};
pub use sequential::{window_connectivity_search, WindowCounterexample, WindowSearchReport, SearchMode};

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

/// Directed adjacency matrix with zero diagonal. Row `i` holds the outward
/// edges of node `i`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self { n, bits: vec![false; n * n] }
    }

    pub fn complete(n: usize) -> Self {
        let mut a = Self::empty(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    a.bits[i * n + j] = true;
                }
            }
        }
        a
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!("edge {i}->{j} out of range for n={n}")));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop {i}->{i} is not allowed")));
            }
            a.bits[i * n + j] = true;
        }
        Ok(a)
    }

    /// Builds from a 0/1 matrix given as rows.
    pub fn from_rows<T: Copy + Into<i64>>(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let mut a = Self::empty(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidGraph(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                match v.into() {
                    0 => {}
                    1 if i != j => a.bits[i * n + j] = true,
                    1 => return Err(Error::InvalidGraph(format!("nonzero diagonal at ({i},{i})"))),
                    other => {
                        return Err(Error::InvalidGraph(format!("entry ({i},{j}) is {other}, expected 0 or 1")))
                    }
                }
            }
        }
        Ok(a)
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| u8::from(self.has_edge(i, j))).collect())
            .collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    /// Sets edge `i -> j`. Diagonal entries are ignored so the zero-diagonal
    /// invariant always holds.
    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        if i != j {
            self.bits[i * self.n + j] = present;
        }
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&b| b).count()
    }

    pub fn out_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i).iter().enumerate().filter_map(|(j, &b)| b.then_some(j))
    }

    fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.n..(i + 1) * self.n]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.out_neighbors(i).map(move |j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn union_with(&mut self, other: &Adjacency) {
        assert_eq!(self.n, other.n, "adjacency size mismatch");
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Edge set inclusion.
    pub fn is_subgraph_of(&self, other: &Adjacency) -> bool {
        self.n == other.n && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Nodes reachable from `start` along directed edges (`reverse` follows
    /// edges backwards).
    fn reachable(&self, start: usize, reverse: bool) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..self.n {
                let edge = if reverse { self.has_edge(v, u) } else { self.has_edge(u, v) };
                if edge && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

impl std::fmt::Debug for Adjacency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Adjacency")
            .field("n", &self.n)
            .field("edges", &self.edges().collect::<Vec<_>>())
            .finish()
    }
}

/// Directed edges over `n(n-1)`.
pub fn relative_degree(a: &Adjacency) -> f64 {
    let n = a.n();
    if n < 2 {
        return 0.0;
    }
    a.edge_count() as f64 / (n * (n - 1)) as f64
}

/// True iff every ordered pair is joined by a directed path; checked by
/// forward and reverse reachability from node 0.
pub fn is_strongly_connected(a: &Adjacency) -> bool {
    if a.n() <= 1 {
        return true;
    }
    a.reachable(0, false).iter().all(|&b| b) && a.reachable(0, true).iter().all(|&b| b)
}

/// True iff every complete window `frames[t..t+b]` has a strongly connected
/// edge union. Returns false when `b == 0` or there is no complete window.
pub fn window_union_connected(frames: &[Adjacency], b: usize) -> bool {
    if b == 0 || frames.len() < b {
        return false;
    }
    (0..=frames.len() - b).all(|t| {
        let mut union = frames[t].clone();
        for f in &frames[t + 1..t + b] {
            union.union_with(f);
        }
        is_strongly_connected(&union)
    })
}

/// True iff a sequential path with self-loops leads from `i` to `j`: step `k`
/// either stays put or follows an edge of `frames[k]`.
pub fn sequentially_connected_with_self_loops(frames: &[Adjacency], i: usize, j: usize) -> bool {
    if i == j {
        return true;
    }
    let Some(first) = frames.first() else {
        return false;
    };
    let n = first.n();
    let mut reach = vec![false; n];
    reach[i] = true;
    for frame in frames {
        let mut next = reach.clone();
        for u in (0..n).filter(|&u| reach[u]) {
            for v in frame.out_neighbors(u) {
                next[v] = true;
            }
        }
        reach = next;
        if reach[j] {
            return true;
        }
    }
    false
}

/// First ordered pair that is not sequentially connected with self-loops,
/// or `None` when the whole sequence is.
pub fn first_unconnected_pair(frames: &[Adjacency]) -> Option<(usize, usize)> {
    let n = frames.first()?.n();
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .find(|&(i, j)| !sequentially_connected_with_self_loops(frames, i, j))
}

/// How adjacency matrices `A(t)` are produced over time.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphProcessSpec {
    /// Every backbone edge fails independently with probability `p_fail` at
    /// every tick, separately per direction.
    IidFailure { backbone: Adjacency, p_fail: f64 },
    /// `frames[t mod len]` when `cycle`, else `frames[t]`.
    DeterministicSequence { frames: Vec<Adjacency>, cycle: bool },
    Static(Adjacency),
}

impl GraphProcessSpec {
    pub fn iid_failure(backbone: Adjacency, p_fail: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_fail) {
            return Err(Error::InvalidGraph(format!("p_fail {p_fail} is outside [0, 1]")));
        }
        Ok(Self::IidFailure { backbone, p_fail })
    }

    pub fn deterministic(frames: Vec<Adjacency>, cycle: bool) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidGraph("deterministic sequence has no frames".into()));
        };
        let n = first.n();
        if let Some(bad) = frames.iter().position(|f| f.n() != n) {
            return Err(Error::InvalidGraph(format!(
                "frame {bad} has {} nodes, expected {n}",
                frames[bad].n()
            )));
        }
        Ok(Self::DeterministicSequence { frames, cycle })
    }

    pub fn n(&self) -> usize {
        match self {
            Self::IidFailure { backbone, .. } => backbone.n(),
            Self::DeterministicSequence { frames, .. } => frames[0].n(),
            Self::Static(a) => a.n(),
        }
    }

    /// Union of every edge that can appear with positive probability.
    pub fn support_union(&self) -> Adjacency {
        match self {
            Self::IidFailure { backbone, p_fail } if *p_fail < 1.0 => backbone.clone(),
            Self::IidFailure { backbone, .. } => Adjacency::empty(backbone.n()),
            Self::Static(a) => a.clone(),
            Self::DeterministicSequence { frames, .. } => {
                let mut u = Adjacency::empty(frames[0].n());
                for f in frames {
                    u.union_with(f);
                }
                u
            }
        }
    }
}

pub fn next_adjacency<R: Rng + ?Sized>(spec: &GraphProcessSpec, t: usize, rng: &mut R) -> Result<Adjacency> {
    let mut out = Adjacency::empty(spec.n());
    next_adjacency_into(spec, t, rng, &mut out)?;
    Ok(out)
}

/// Buffer-reusing form of [`next_adjacency`].
pub fn next_adjacency_into<R: Rng + ?Sized>(
    spec: &GraphProcessSpec,
    t: usize,
    rng: &mut R,
    out: &mut Adjacency,
) -> Result<()> {
    match spec {
        GraphProcessSpec::Static(a) => out.clone_from(a),
        GraphProcessSpec::DeterministicSequence { frames, cycle } => {
            let idx = if *cycle {
                t % frames.len()
            } else if t < frames.len() {
                t
            } else {
                return Err(Error::SequenceExhausted { t, frames: frames.len() });
            };
            out.clone_from(&frames[idx]);
        }
        GraphProcessSpec::IidFailure { backbone, p_fail } => {
            if out.n != backbone.n {
                *out = Adjacency::empty(backbone.n);
            }
            for (o, &b) in out.bits.iter_mut().zip(&backbone.bits) {
                *o = b && rng.random::<f64>() >= *p_fail;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, Purpose};

    fn cycle3() -> Adjacency {
        Adjacency::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn relative_degree_examples() {
        assert_eq!(relative_degree(&Adjacency::complete(5)), 1.0);
        assert_eq!(relative_degree(&Adjacency::empty(5)), 0.0);
        assert_eq!(relative_degree(&cycle3()), 0.5);
    }

    #[test]
    fn strong_connectivity_examples() {
        assert!(is_strongly_connected(&cycle3()));
        let chain = Adjacency::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert!(!is_strongly_connected(&chain));
        assert!(is_strongly_connected(&Adjacency::empty(1)));
    }

    #[test]
    fn rows_roundtrip_and_validation() {
        let a = cycle3();
        assert_eq!(Adjacency::from_rows(&a.to_rows()).unwrap(), a);
        assert!(Adjacency::from_rows(&[vec![1u8, 0], vec![0, 0]]).is_err());
        assert!(Adjacency::from_rows(&[vec![0u8, 2], vec![0, 0]]).is_err());
        assert!(Adjacency::from_edges(2, &[(1, 1)]).is_err());
    }

    #[test]
    fn window_union_examples() {
        let c = cycle3();
        assert!(window_union_connected(&[c.clone(), c.clone(), c.clone()], 1));
        assert!(window_union_connected(&[c.clone(), c.clone(), c], 3));

        let fwd = Adjacency::from_edges(2, &[(0, 1)]).unwrap();
        let back = Adjacency::from_edges(2, &[(1, 0)]).unwrap();
        let alt = vec![fwd.clone(), back.clone(), fwd.clone(), back];
        assert!(window_union_connected(&alt, 2));
        assert!(!window_union_connected(&alt, 1));

        let k = Adjacency::complete(3);
        let gap = vec![k.clone(), Adjacency::empty(3), Adjacency::empty(3), k];
        assert!(!window_union_connected(&gap, 2));
        assert!(window_union_connected(&gap, 3));
    }

    #[test]
    fn sequential_path_examples() {
        let f = vec![Adjacency::from_edges(2, &[(0, 1)]).unwrap()];
        assert!(sequentially_connected_with_self_loops(&f, 0, 1));
        assert!(!sequentially_connected_with_self_loops(&f, 1, 0));
        assert!(sequentially_connected_with_self_loops(&f, 1, 1));
        assert!(sequentially_connected_with_self_loops(&[], 2, 2));
        // The order of frames matters: 0->1 then 1->2 works, reversed does not.
        let a = Adjacency::from_edges(3, &[(0, 1)]).unwrap();
        let b = Adjacency::from_edges(3, &[(1, 2)]).unwrap();
        assert!(sequentially_connected_with_self_loops(&[a.clone(), b.clone()], 0, 2));
        assert!(!sequentially_connected_with_self_loops(&[b, a], 0, 2));
    }

    #[test]
    fn window_instance_three_nodes() {
        // Every frame strongly connected (b = 1): all pairs within 2 frames.
        let c = cycle3();
        let rev = Adjacency::from_edges(3, &[(1, 0), (2, 1), (0, 2)]).unwrap();
        let frames = vec![c, rev];
        assert!(window_union_connected(&frames, 1));
        assert_eq!(first_unconnected_pair(&frames), None);
    }

    #[test]
    fn iid_failure_extremes() {
        let backbone = Adjacency::complete(4);
        let mut rng = derive_stream(1, 0, Purpose::Graph);
        let keep = GraphProcessSpec::iid_failure(backbone.clone(), 0.0).unwrap();
        let drop = GraphProcessSpec::iid_failure(backbone.clone(), 1.0).unwrap();
        for t in 0..20 {
            assert_eq!(next_adjacency(&keep, t, &mut rng).unwrap(), backbone);
            assert_eq!(next_adjacency(&drop, t, &mut rng).unwrap(), Adjacency::empty(4));
        }
        assert!(GraphProcessSpec::iid_failure(backbone, 1.5).is_err());
    }

    #[test]
    fn iid_failure_edge_frequency() {
        let backbone = Adjacency::from_edges(3, &[(0, 1), (1, 0), (1, 2)]).unwrap();
        let spec = GraphProcessSpec::iid_failure(backbone.clone(), 0.5).unwrap();
        let mut rng = derive_stream(2, 0, Purpose::Graph);
        let draws = 10_000;
        let mut counts = [0usize; 3];
        for t in 0..draws {
            let a = next_adjacency(&spec, t, &mut rng).unwrap();
            assert!(a.is_subgraph_of(&backbone));
            for (k, (i, j)) in backbone.edges().enumerate() {
                counts[k] += usize::from(a.has_edge(i, j));
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.5).abs() <= 0.02, "freq {freq}");
        }
    }

    #[test]
    fn deterministic_sequence_indexing() {
        let frames = vec![Adjacency::from_edges(2, &[(0, 1)]).unwrap(), Adjacency::from_edges(2, &[(1, 0)]).unwrap()];
        let mut rng = derive_stream(0, 0, Purpose::Graph);
        let cyc = GraphProcessSpec::deterministic(frames.clone(), true).unwrap();
        assert_eq!(next_adjacency(&cyc, 5, &mut rng).unwrap(), frames[1]);
        let once = GraphProcessSpec::deterministic(frames.clone(), false).unwrap();
        assert_eq!(next_adjacency(&once, 0, &mut rng).unwrap(), frames[0]);
        assert!(matches!(
            next_adjacency(&once, 2, &mut rng),
            Err(Error::SequenceExhausted { t: 2, frames: 2 })
        ));
        assert!(GraphProcessSpec::deterministic(vec![], true).is_err());
        assert!(GraphProcessSpec::deterministic(vec![Adjacency::empty(2), Adjacency::empty(3)], true).is_err());
    }
}
