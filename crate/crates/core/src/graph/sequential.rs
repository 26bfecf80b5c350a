//! Brute-force search for counterexamples to the window-connectivity
//! property: if every `b`-frame union is strongly connected, then every
//! ordered pair is joined by a sequential path with self-loops inside any
//! `(n-1)b` consecutive frames.
//!
//! Frames are packed as per-row bitmasks so that exhaustive enumeration
//! over small node counts stays fast.

use rand::Rng;

use super::Adjacency;

const MAX_NODES: usize = 8;

type Rows = [u8; MAX_NODES];

#[derive(Debug)]
pub enum SearchMode<'a, R: Rng + ?Sized> {
    /// Every frame sequence of length `(n-1)b`.
    Exhaustive,
    /// `samples` random sequences that satisfy the window assumption.
    Sampled { samples: usize, rng: &'a mut R },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowCounterexample {
    pub frames: Vec<Adjacency>,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSearchReport {
    pub n: usize,
    pub b: usize,
    pub exhaustive: bool,
    /// Sequences satisfying the window assumption that were checked.
    pub sequences_checked: u64,
    pub counterexample: Option<WindowCounterexample>,
}

fn full(n: usize) -> u8 {
    ((1u16 << n) - 1) as u8
}

fn frame_from_index(n: usize, mut idx: u64) -> Rows {
    let mut rows = [0u8; MAX_NODES];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                if idx & 1 == 1 {
                    rows[i] |= 1 << j;
                }
                idx >>= 1;
            }
        }
    }
    rows
}

fn successors(rows: &Rows, set: u8, n: usize) -> u8 {
    let mut out = 0;
    for u in 0..n {
        if set & (1 << u) != 0 {
            out |= rows[u];
        }
    }
    out
}

fn strongly_connected(rows: &Rows, n: usize) -> bool {
    if n <= 1 {
        return true;
    }
    let mut rev = [0u8; MAX_NODES];
    for i in 0..n {
        for j in 0..n {
            if rows[i] & (1 << j) != 0 {
                rev[j] |= 1 << i;
            }
        }
    }
    let closure = |r: &Rows| {
        let mut reach = 1u8;
        loop {
            let next = reach | successors(r, reach, n);
            if next == reach {
                return reach;
            }
            reach = next;
        }
    };
    closure(rows) == full(n) && closure(&rev) == full(n)
}

fn window_ok(frames: &[Rows], n: usize) -> bool {
    let mut union = [0u8; MAX_NODES];
    for f in frames {
        for i in 0..n {
            union[i] |= f[i];
        }
    }
    strongly_connected(&union, n)
}

fn all_windows_ok(frames: &[Rows], n: usize, b: usize) -> bool {
    frames.len() >= b && (0..=frames.len() - b).all(|t| window_ok(&frames[t..t + b], n))
}

/// First pair `(i, j)` with no sequential path with self-loops.
fn first_gap(frames: &[Rows], n: usize) -> Option<(usize, usize)> {
    for i in 0..n {
        let mut reach = 1u8 << i;
        for f in frames {
            reach |= successors(f, reach, n);
        }
        if reach != full(n) {
            let j = (0..n).find(|&j| reach & (1 << j) == 0).unwrap();
            return Some((i, j));
        }
    }
    None
}

fn to_adjacency(rows: &Rows, n: usize) -> Adjacency {
    let mut a = Adjacency::empty(n);
    for i in 0..n {
        for j in 0..n {
            if rows[i] & (1 << j) != 0 {
                a.set_edge(i, j, true);
            }
        }
    }
    a
}

fn counterexample(frames: &[Rows], n: usize, (from, to): (usize, usize)) -> WindowCounterexample {
    WindowCounterexample {
        frames: frames.iter().map(|f| to_adjacency(f, n)).collect(),
        from,
        to,
    }
}

struct Exhaustive {
    n: usize,
    b: usize,
    len: usize,
    frame_count: u64,
    checked: u64,
    found: Option<WindowCounterexample>,
}

impl Exhaustive {
    fn descend(&mut self, prefix: &mut Vec<Rows>) {
        if self.found.is_some() {
            return;
        }
        let k = prefix.len();
        if k >= self.b && !window_ok(&prefix[k - self.b..], self.n) {
            return;
        }
        if k == self.len {
            self.checked += 1;
            if let Some(gap) = first_gap(prefix, self.n) {
                self.found = Some(counterexample(prefix, self.n, gap));
            }
            return;
        }
        for idx in 0..self.frame_count {
            prefix.push(frame_from_index(self.n, idx));
            self.descend(prefix);
            prefix.pop();
        }
    }
}

/// Searches for a frame sequence on `n <= 8` nodes that satisfies the
/// `b`-window assumption yet leaves some ordered pair without a sequential
/// path with self-loops within `(n-1)b` frames.
pub fn window_connectivity_search<R: Rng + ?Sized>(n: usize, b: usize, mode: SearchMode<'_, R>) -> WindowSearchReport {
    assert!((1..=MAX_NODES).contains(&n), "window_connectivity_search supports 1..=8 nodes");
    assert!(b >= 1, "window size must be positive");
    let len = (n - 1) * b;
    let mut report = WindowSearchReport { n, b, exhaustive: false, sequences_checked: 0, counterexample: None };
    if n == 1 {
        report.exhaustive = true;
        report.sequences_checked = 1;
        return report;
    }
    let edges = n * (n - 1);
    match mode {
        SearchMode::Exhaustive => {
            assert!(edges <= 32, "exhaustive search is limited to n <= 6");
            let mut search = Exhaustive { n, b, len, frame_count: 1u64 << edges, checked: 0, found: None };
            search.descend(&mut Vec::with_capacity(len));
            report.exhaustive = true;
            report.sequences_checked = search.checked;
            report.counterexample = search.found;
        }
        SearchMode::Sampled { samples, rng } => {
            let mut frames = vec![[0u8; MAX_NODES]; len];
            let max_attempts = samples.saturating_mul(10_000).max(1);
            let mut attempts = 0usize;
            while (report.sequences_checked as usize) < samples && attempts < max_attempts {
                attempts += 1;
                for f in frames.iter_mut() {
                    let density = rng.random_range(0.15..0.85);
                    *f = [0u8; MAX_NODES];
                    for i in 0..n {
                        for j in 0..n {
                            if i != j && rng.random::<f64>() < density {
                                f[i] |= 1 << j;
                            }
                        }
                    }
                }
                if !all_windows_ok(&frames, n, b) {
                    continue;
                }
                report.sequences_checked += 1;
                if let Some(gap) = first_gap(&frames, n) {
                    report.counterexample = Some(counterexample(&frames, n, gap));
                    break;
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{is_strongly_connected, sequentially_connected_with_self_loops, window_union_connected};
    use crate::rng::{derive_stream, Purpose, SimRng};

    #[test]
    fn mask_helpers_agree_with_adjacency_versions() {
        let mut rng = derive_stream(9, 0, Purpose::Aux);
        for _ in 0..2000 {
            let n = rng.random_range(2..=4usize);
            let len = rng.random_range(1..=4usize);
            let edges = n * (n - 1);
            let frames: Vec<Rows> = (0..len)
                .map(|_| frame_from_index(n, rng.random_range(0..1u64 << edges)))
                .collect();
            let adj: Vec<Adjacency> = frames.iter().map(|f| to_adjacency(f, n)).collect();
            assert_eq!(strongly_connected(&frames[0], n), is_strongly_connected(&adj[0]));
            for b in 1..=len {
                assert_eq!(all_windows_ok(&frames, n, b), window_union_connected(&adj, b));
            }
            let gap = first_gap(&frames, n);
            let all = (0..n).all(|i| (0..n).all(|j| sequentially_connected_with_self_loops(&adj, i, j)));
            assert_eq!(gap.is_none(), all);
        }
    }

    #[test]
    fn two_nodes_exhaustive() {
        for b in 1..=3 {
            let r = window_connectivity_search::<SimRng>(2, b, SearchMode::Exhaustive);
            assert!(r.counterexample.is_none());
            assert!(r.sequences_checked > 0);
        }
    }

    #[test]
    fn one_frame_is_too_short_for_three_nodes() {
        // A single strongly connected 3-cycle frame reaches only successors,
        // so the (n-1)b frame count is needed: 0 cannot reach 2 in one frame.
        let cycle: Rows = [0b010, 0b100, 0b001, 0, 0, 0, 0, 0];
        assert!(strongly_connected(&cycle, 3));
        assert_eq!(first_gap(&[cycle], 3), Some((0, 2)));
        assert_eq!(first_gap(&[cycle, cycle], 3), None);
    }
}
