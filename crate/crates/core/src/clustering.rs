//! Size-constrained K-means over station coordinates.
//!
//! The assignment step is solved exactly as a minimum-cost transportation
//! problem (points supply one unit each, cluster `k` absorbs between
//! `size_min` and `size_max` units), so the size bounds hold at every
//! iteration. Coordinates are treated as planar.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::StationLocation;
use crate::seed;

/// Iteration guard; the fixed-point test normally stops much earlier.
pub const MAX_ITERATIONS: usize = 1000;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProblem {
    pub ids: Vec<String>,
    pub points: Vec<Point>,
    pub k: usize,
    pub size_min: usize,
    pub size_max: usize,
}

impl ClusterProblem {
    pub fn new(
        ids: Vec<String>,
        points: Vec<Point>,
        k: usize,
        size_min: usize,
        size_max: usize,
    ) -> Result<Self> {
        let p = Self {
            ids,
            points,
            k,
            size_min,
            size_max,
        };
        p.validate()?;
        Ok(p)
    }

    /// Points are (latitude, longitude).
    pub fn from_locations(
        locations: &[StationLocation],
        k: usize,
        size_min: usize,
        size_max: usize,
    ) -> Result<Self> {
        Self::new(
            locations.iter().map(|l| l.cs_id.clone()).collect(),
            locations
                .iter()
                .map(|l| [l.latitude, l.longitude])
                .collect(),
            k,
            size_min,
            size_max,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.points.len() {
            return Err(Error::Shape("ids and points differ in length".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument(
                "cluster count must be positive".into(),
            ));
        }
        if self.size_min > self.size_max {
            return Err(Error::Infeasible(format!(
                "size_min {} exceeds size_max {}",
                self.size_min, self.size_max
            )));
        }
        let n = self.points.len();
        if self.k * self.size_min > n || n > self.k * self.size_max {
            return Err(Error::Infeasible(format!(
                "{n} points cannot fill {} clusters of size {}..={}",
                self.k, self.size_min, self.size_max
            )));
        }
        if self.points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub centers: Vec<Point>,
    pub membership: Vec<usize>,
    /// Objective of `membership` at `centers`.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSolution {
    pub ids: Vec<String>,
    /// Cluster index per point, in problem order.
    pub membership: Vec<usize>,
    pub centers: Vec<Point>,
    pub objective: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
}

impl ClusterSolution {
    pub fn cluster_sizes(&self, k: usize) -> Vec<usize> {
        sizes(&self.membership, k)
    }

    /// Member point indices of cluster `c`.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.membership.len())
            .filter(|&i| self.membership[i] == c)
            .collect()
    }
}

fn sizes(membership: &[usize], k: usize) -> Vec<usize> {
    let mut s = vec![0; k];
    for &m in membership {
        s[m] += 1;
    }
    s
}

pub fn sq_dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Sum of squared distances from every point to its cluster center.
pub fn objective(problem: &ClusterProblem, membership: &[usize], centers: &[Point]) -> f64 {
    problem
        .points
        .iter()
        .zip(membership)
        .map(|(p, &m)| sq_dist(*p, centers[m]))
        .sum()
}

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
    rev: usize,
}

struct Flow {
    graph: Vec<Vec<Edge>>,
}

impl Flow {
    fn new(n: usize) -> Self {
        Self {
            graph: (0..n).map(|_| Vec::new()).collect(),
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        let (rf, rt) = (self.graph[to].len(), self.graph[from].len());
        self.graph[from].push(Edge {
            to,
            cap,
            cost,
            rev: rf,
        });
        self.graph[to].push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
            rev: rt,
        });
        rt
    }

    /// Pushes one unit along a cheapest residual path; false when none exists.
    fn augment(&mut self, s: usize, t: usize) -> bool {
        let n = self.graph.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        dist[s] = 0.0;
        // Bellman-Ford in fixed node/edge order keeps the result deterministic.
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if !dist[u].is_finite() {
                    continue;
                }
                for (ei, e) in self.graph[u].iter().enumerate() {
                    if e.cap > 0 && dist[u] + e.cost < dist[e.to] - 1e-12 {
                        dist[e.to] = dist[u] + e.cost;
                        prev[e.to] = Some((u, ei));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[t].is_finite() {
            return false;
        }
        let mut v = t;
        while let Some((u, ei)) = prev[v] {
            let rev = self.graph[u][ei].rev;
            self.graph[u][ei].cap -= 1;
            self.graph[v][rev].cap += 1;
            v = u;
        }
        true
    }
}

/// Minimum total squared distance assignment respecting the size bounds.
pub fn assign(problem: &ClusterProblem, centers: &[Point]) -> Result<Vec<usize>> {
    problem.validate()?;
    if centers.len() != problem.k {
        return Err(Error::Shape(format!(
            "{} centers for {} clusters",
            centers.len(),
            problem.k
        )));
    }
    let n = problem.len();
    let k = problem.k;
    // nodes: source, points, clusters, sink
    let (src, sink) = (0, n + k + 1);
    let mut flow = Flow::new(n + k + 2);
    let costs: Vec<Vec<f64>> = problem
        .points
        .iter()
        .map(|p| centers.iter().map(|c| sq_dist(*p, *c)).collect())
        .collect();
    // A reward larger than any assignment cost makes every feasible flow fill
    // the mandatory `size_min` slots first.
    let reward = 1.0 + 2.0 * costs.iter().flatten().fold(0.0f64, |a, &b| a + b);
    let mut point_edges = Vec::with_capacity(n);
    for (i, row) in costs.iter().enumerate() {
        flow.add(src, 1 + i, 1, 0.0);
        point_edges.push(
            row.iter()
                .enumerate()
                .map(|(c, &w)| flow.add(1 + i, 1 + n + c, 1, w))
                .collect::<Vec<_>>(),
        );
    }
    let mut mandatory = Vec::with_capacity(k);
    for c in 0..k {
        if problem.size_min > 0 {
            mandatory.push(Some(flow.add(
                1 + n + c,
                sink,
                problem.size_min as i64,
                -reward,
            )));
        } else {
            mandatory.push(None);
        }
        let extra = (problem.size_max - problem.size_min) as i64;
        if extra > 0 {
            flow.add(1 + n + c, sink, extra, 0.0);
        }
    }
    for _ in 0..n {
        if !flow.augment(src, sink) {
            return Err(Error::Infeasible("size bounds admit no assignment".into()));
        }
    }
    for (c, m) in mandatory.iter().enumerate() {
        if let Some(e) = m {
            if flow.graph[1 + n + c][*e].cap != 0 {
                return Err(Error::Infeasible(format!(
                    "cluster {c} below its minimum size"
                )));
            }
        }
    }
    let membership = (0..n)
        .map(|i| {
            point_edges[i]
                .iter()
                .position(|&e| flow.graph[1 + i][e].cap == 0)
                .expect("every point carries one unit")
        })
        .collect();
    Ok(membership)
}

/// Cluster means; a cluster whose size is outside the bounds keeps its
/// previous center.
pub fn update_centers(
    problem: &ClusterProblem,
    membership: &[usize],
    previous: &[Point],
) -> Vec<Point> {
    let counts = sizes(membership, problem.k);
    let mut sums = vec![[0.0; 2]; problem.k];
    for (p, &m) in problem.points.iter().zip(membership) {
        sums[m][0] += p[0];
        sums[m][1] += p[1];
    }
    (0..problem.k)
        .map(|c| {
            let n = counts[c];
            if n == 0 || n < problem.size_min || n > problem.size_max {
                previous[c]
            } else {
                [sums[c][0] / n as f64, sums[c][1] / n as f64]
            }
        })
        .collect()
}

/// Alternating assignment/center updates from seeded initial centers until
/// the centers stop moving.
pub fn cluster_cs(problem: &ClusterProblem, seed: u64) -> Result<ClusterSolution> {
    problem.validate()?;
    if problem.is_empty() {
        return Ok(ClusterSolution {
            ids: Vec::new(),
            membership: Vec::new(),
            centers: vec![[0.0; 2]; problem.k],
            objective: 0.0,
            iterations: Vec::new(),
            converged: true,
        });
    }
    let mut rng = seed::rng(seed, "cluster-init", &[]);
    let picks = rand::seq::index::sample(&mut rng, problem.len(), problem.k.min(problem.len()));
    let mut centers: Vec<Point> = picks.iter().map(|i| problem.points[i]).collect();
    // more clusters than points only happens with size_min == 0
    while centers.len() < problem.k {
        centers.push(problem.points[0]);
    }
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut membership = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        membership = assign(problem, &centers)?;
        iterations.push(IterationRecord {
            centers: centers.clone(),
            objective: objective(problem, &membership, &centers),
            membership: membership.clone(),
        });
        let next = update_centers(problem, &membership, &centers);
        if next == centers {
            converged = true;
            break;
        }
        centers = next;
    }
    Ok(ClusterSolution {
        ids: problem.ids.clone(),
        objective: objective(problem, &membership, &centers),
        membership,
        centers,
        iterations,
        converged,
    })
}

pub fn write_membership_csv(path: impl AsRef<Path>, solution: &ClusterSolution) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "cs_id,cluster").map_err(io)?;
    for (id, c) in solution.ids.iter().zip(&solution.membership) {
        writeln!(w, "{id},{c}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Exhaustive optimum over all `k^n` bounded assignments; for tests.
pub fn brute_force_assign(
    problem: &ClusterProblem,
    centers: &[Point],
) -> Option<(Vec<usize>, f64)> {
    let n = problem.len();
    let k = problem.k;
    let total = k.checked_pow(n as u32)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut m = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for slot in m.iter_mut() {
            *slot = c % k;
            c /= k;
        }
        let s = sizes(&m, k);
        if s.iter()
            .any(|&x| x < problem.size_min || x > problem.size_max)
        {
            continue;
        }
        let obj = objective(problem, &m, centers);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((m.clone(), obj));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64], k: usize, lo: usize, hi: usize) -> ClusterProblem {
        ClusterProblem::new(
            (0..xs.len()).map(|i| format!("P{i}")).collect(),
            xs.iter().map(|&x| [x, 0.0]).collect(),
            k,
            lo,
            hi,
        )
        .unwrap()
    }

    #[test]
    fn single_cluster_takes_all() {
        let p = line(&[1.0, 5.0, 9.0], 1, 3, 3);
        assert_eq!(assign(&p, &[[0.0, 0.0]]).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn balanced_line_matches_brute_force() {
        let p = line(&[0.0, 0.0, 10.0, 10.0], 2, 2, 2);
        let c = [[0.0, 0.0], [10.0, 0.0]];
        let m = assign(&p, &c).unwrap();
        assert_eq!(m, vec![0, 0, 1, 1]);
        assert_eq!(brute_force_assign(&p, &c).unwrap().0, m);
    }

    #[test]
    fn bounds_override_nearest_center() {
        // all points nearest to center 0, but cluster 1 needs two members
        let p = line(&[0.0, 1.0, 2.0, 3.0], 2, 2, 2);
        let c = [[0.0, 0.0], [100.0, 0.0]];
        let m = assign(&p, &c).unwrap();
        assert_eq!(sizes(&m, 2), vec![2, 2]);
        let (_, best) = brute_force_assign(&p, &c).unwrap();
        assert!((objective(&p, &m, &c) - best).abs() < 1e-9);
    }

    #[test]
    fn infeasible_bounds() {
        let err = ClusterProblem::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![[0.0; 2]; 3],
            2,
            2,
            3,
        );
        assert!(matches!(err, Err(Error::Infeasible(_))));
    }

    #[test]
    fn center_update_rules() {
        let p = ClusterProblem::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![[0.0, 0.0], [2.0, 2.0], [7.0, 3.0]],
            2,
            0,
            3,
        )
        .unwrap();
        let prev = [[9.0, 9.0], [8.0, 8.0]];
        assert_eq!(
            update_centers(&p, &[0, 0, 1], &prev),
            vec![[1.0, 1.0], [7.0, 3.0]]
        );
        // empty cluster keeps its previous center
        assert_eq!(update_centers(&p, &[0, 0, 0], &prev)[1], [8.0, 8.0]);
        let strict = ClusterProblem {
            size_min: 2,
            ..p.clone()
        };
        assert_eq!(update_centers(&strict, &[0, 0, 1], &prev)[1], [8.0, 8.0]);
    }

    #[test]
    fn two_blobs_recovered() {
        let pts = vec![
            [0.0, 0.0],
            [10.0, 10.0],
            [0.5, 0.2],
            [10.3, 9.8],
            [0.1, 0.6],
            [9.7, 10.4],
        ];
        let p = ClusterProblem::new((0..6).map(|i| i.to_string()).collect(), pts, 2, 3, 3).unwrap();
        for seed in 0..5 {
            let s = cluster_cs(&p, seed).unwrap();
            assert!(s.converged);
            let a = s.membership[0];
            assert_eq!(s.membership, vec![a, 1 - a, a, 1 - a, a, 1 - a]);
        }
    }

    #[test]
    fn identical_points_zero_objective_and_deterministic() {
        let p = ClusterProblem::new(
            (0..4).map(|i| i.to_string()).collect(),
            vec![[3.0, 4.0]; 4],
            2,
            1,
            3,
        )
        .unwrap();
        let a = cluster_cs(&p, 7).unwrap();
        assert_eq!(a.objective, 0.0);
        assert!(a.cluster_sizes(2).iter().all(|&s| (1..=3).contains(&s)));
        assert_eq!(a, cluster_cs(&p, 7).unwrap());
    }
}
