use rand::Rng;

use super::{is_strongly_connected, Adjacency};
use crate::error::{Error, Result};

/// Default bound on point-set resamples.
pub const MAX_RETRIES: usize = 1000;

/// A strongly connected random geometric graph on the unit square.
#[derive(Debug, Clone)]
pub struct GeometricBackbone {
    pub adjacency: Adjacency,
    pub points: Vec<(f64, f64)>,
    pub radius: f64,
    pub attempts: usize,
}

fn sample_points<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn connect(points: &[(f64, f64)], radius: f64) -> Adjacency {
    let n = points.len();
    let mut a = Adjacency::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if dist(points[i], points[j]) < radius {
                a.set_edge(i, j, true);
                a.set_edge(j, i, true);
            }
        }
    }
    a
}

/// Draws `n` uniform points and links every pair closer than `radius` in
/// both directions, resampling whole point sets until the graph is strongly
/// connected.
pub fn generate_geometric_backbone<R: Rng + ?Sized>(
    n: usize,
    radius: f64,
    max_retries: usize,
    rng: &mut R,
) -> Result<GeometricBackbone> {
    if n < 2 {
        return Err(Error::InvalidGraph(format!("geometric backbone needs n >= 2, got {n}")));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidGraph(format!("radius must be positive, got {radius}")));
    }
    for attempt in 1..=max_retries {
        let points = sample_points(n, rng);
        let adjacency = connect(&points, radius);
        if is_strongly_connected(&adjacency) {
            return Ok(GeometricBackbone { adjacency, points, radius, attempts: attempt });
        }
    }
    Err(Error::GenerationFailed { retries: max_retries })
}

/// Accepted gap between the requested and realized relative degree.
pub const DEGREE_TOLERANCE: f64 = 0.02;

/// Longest edge of a Euclidean minimum spanning tree: the smallest radius
/// that connects the points.
fn connectivity_radius(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    best[0] = 0.0;
    let mut longest: f64 = 0.0;
    for _ in 0..n {
        let u = (0..n)
            .filter(|&v| !in_tree[v])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]))
            .expect("a vertex remains");
        in_tree[u] = true;
        longest = longest.max(best[u]);
        for v in 0..n {
            if !in_tree[v] {
                best[v] = best[v].min(dist(points[u], points[v]));
            }
        }
    }
    longest
}

/// Like [`generate_geometric_backbone`], but picks the radius per point set:
/// the larger of the radius matching `target` relative degree and the
/// connectivity radius. Point sets whose resulting relative degree misses
/// `target` by more than [`DEGREE_TOLERANCE`] are resampled.
pub fn generate_geometric_backbone_with_degree<R: Rng + ?Sized>(
    n: usize,
    target: f64,
    max_retries: usize,
    rng: &mut R,
) -> Result<GeometricBackbone> {
    if n < 2 {
        return Err(Error::InvalidGraph(format!("geometric backbone needs n >= 2, got {n}")));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidGraph(format!("target relative degree {target} is outside (0, 1]")));
    }
    let pairs = n * (n - 1) / 2;
    let k = ((target * pairs as f64).round() as usize).clamp(1, pairs);
    for attempt in 1..=max_retries {
        let points = sample_points(n, rng);
        let mut d: Vec<f64> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| dist(points[i], points[j]))
            .collect();
        d.sort_by(f64::total_cmp);
        // Radius strictly above the k-th distance (and the bottleneck) but
        // below the next larger one.
        let just_above = |r: f64| match d.iter().position(|&x| x > r) {
            Some(p) => 0.5 * (r + d[p]),
            None => r * 1.01 + 1e-12,
        };
        let radius = just_above(d[k - 1].max(connectivity_radius(&points)));
        let adjacency = connect(&points, radius);
        let rd = super::relative_degree(&adjacency);
        if (rd - target).abs() <= DEGREE_TOLERANCE && is_strongly_connected(&adjacency) {
            return Ok(GeometricBackbone { adjacency, points, radius, attempts: attempt });
        }
    }
    Err(Error::GenerationFailed { retries: max_retries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::relative_degree;
    use crate::rng::{derive_stream, Purpose};

    #[test]
    fn large_radius_gives_complete_graph() {
        let mut rng = derive_stream(3, 0, Purpose::Aux);
        let g = generate_geometric_backbone(7, 2.0, MAX_RETRIES, &mut rng).unwrap();
        assert_eq!(g.adjacency, Adjacency::complete(7));
        assert_eq!(g.attempts, 1);
    }

    #[test]
    fn tiny_radius_fails() {
        let mut rng = derive_stream(3, 0, Purpose::Aux);
        assert!(matches!(
            generate_geometric_backbone(5, 1e-9, 50, &mut rng),
            Err(Error::GenerationFailed { retries: 50 })
        ));
        assert!(generate_geometric_backbone(5, 0.0, 50, &mut rng).is_err());
        assert!(generate_geometric_backbone(1, 1.0, 50, &mut rng).is_err());
    }

    #[test]
    fn edges_are_bidirectional() {
        let mut rng = derive_stream(4, 0, Purpose::Aux);
        let g = generate_geometric_backbone(15, 0.45, MAX_RETRIES, &mut rng).unwrap();
        for (i, j) in g.adjacency.edges() {
            assert!(g.adjacency.has_edge(j, i));
            assert!(dist(g.points[i], g.points[j]) < g.radius);
        }
        assert!(is_strongly_connected(&g.adjacency));
    }

    #[test]
    fn degree_targets_hit() {
        for (n, target, seed) in [(20, 0.12, 1u64), (50, 0.09, 2)] {
            let mut rng = derive_stream(seed, 0, Purpose::Aux);
            let g = generate_geometric_backbone_with_degree(n, target, MAX_RETRIES, &mut rng).unwrap();
            let rd = relative_degree(&g.adjacency);
            assert!((rd - target).abs() <= 0.02, "n={n}: relative degree {rd}");
            assert!(is_strongly_connected(&g.adjacency));
        }
    }

    #[test]
    fn connectivity_radius_is_the_threshold() {
        let mut rng = derive_stream(6, 0, Purpose::Aux);
        for _ in 0..20 {
            let pts = sample_points(12, &mut rng);
            let r = connectivity_radius(&pts);
            assert!(is_strongly_connected(&connect(&pts, r * (1.0 + 1e-12))));
            assert!(!is_strongly_connected(&connect(&pts, r)));
        }
    }
}
