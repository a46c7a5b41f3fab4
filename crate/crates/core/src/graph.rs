//! Switching directed graphs and the linear algebra of consensus over them.
//!
//! Edges are ordered pairs `(i, j)` with 1-indexed agents, read as "`i`
//! receives from `j`". The Laplacian is `L = Δ − A` with `Δ_ii = Σ_j A_ij`,
//! so every row sums to zero. A schedule is a piecewise-constant sequence of
//! digraphs; connectivity is measured on the *integrated* Laplacian
//! `∫_t^{t+T} L(τ) dτ`, which is exact here because the integrand is
//! piecewise constant.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A directed graph on agents `1..=n`. Edge `(i, j)` means `i` receives
/// information from `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Digraph {
    /// Builds a digraph, rejecting self-loops and out-of-range endpoints.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n < 1 {
            return Err(Error::Dimension("digraph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::Parameter(format!("self-loop ({i},{j}) not allowed")));
            }
            if i < 1 || i > n || j < 1 || j > n {
                return Err(Error::Parameter(format!(
                    "edge ({i},{j}) out of range for n={n}"
                )));
            }
            set.insert((i, j));
        }
        Ok(Self { n, edges: set })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    /// In-neighborhood of agent `i`: all `j` with an edge `(i, j)`.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|(a, _)| *a == i)
            .map(|(_, b)| *b)
            .collect()
    }

    /// 0/1 adjacency matrix, `A[i][j] = 1` iff `(i, j)` is an edge.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i - 1, j - 1)] = 1.0;
        }
        a
    }

    /// Graph Laplacian `L = Δ − A`; every row sums to zero.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            l[(i - 1, j - 1)] -= 1.0;
            l[(i - 1, i - 1)] += 1.0;
        }
        l
    }
}

/// One segment of a schedule: `graph` is active for `duration` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSegment {
    pub duration: f64,
    pub graph: Digraph,
}

/// A piecewise-constant, possibly cyclic sequence of digraphs.
///
/// Lookup is right-continuous: at an exact boundary the segment *starting*
/// there applies. A non-cyclic schedule holds its last segment beyond the
/// end (callers can detect this with [`NetworkSchedule::is_past_end`]).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSchedule {
    segments: Vec<ScheduleSegment>,
    cyclic: bool,
    cycle: f64,
}

impl NetworkSchedule {
    pub fn new(segments: Vec<ScheduleSegment>, cyclic: bool) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Parameter("schedule needs at least one segment".into()));
        }
        let n = segments[0].graph.n();
        let mut cycle = 0.0;
        for (k, seg) in segments.iter().enumerate() {
            if !(seg.duration > 0.0) || !seg.duration.is_finite() {
                return Err(Error::Parameter(format!(
                    "segment {k} duration must be positive and finite, got {}",
                    seg.duration
                )));
            }
            if seg.graph.n() != n {
                return Err(Error::Dimension(format!(
                    "segment {k} has n={}, expected {n}",
                    seg.graph.n()
                )));
            }
            cycle += seg.duration;
        }
        Ok(Self { segments, cyclic, cycle })
    }

    pub fn n(&self) -> usize {
        self.segments[0].graph.n()
    }

    pub fn cyclic(&self) -> bool {
        self.cyclic
    }

    /// Total duration of one pass over the segments.
    pub fn cycle_duration(&self) -> f64 {
        self.cycle
    }

    pub fn segments(&self) -> &[ScheduleSegment] {
        &self.segments
    }

    /// Segment start offsets within one cycle, starting at 0.
    pub fn segment_starts(&self) -> Vec<f64> {
        let mut starts = Vec::with_capacity(self.segments.len());
        let mut acc = 0.0;
        for seg in &self.segments {
            starts.push(acc);
            acc += seg.duration;
        }
        starts
    }

    /// True when `t` falls beyond the final segment of a non-cyclic schedule.
    pub fn is_past_end(&self, t: f64) -> bool {
        !self.cyclic && t >= self.cycle
    }

    /// The digraph active at time `t ≥ 0` (right-continuous lookup).
    pub fn graph_at(&self, t: f64) -> &Digraph {
        let idx = self.segment_index_at(t);
        &self.segments[idx].graph
    }

    fn segment_index_at(&self, t: f64) -> usize {
        // Boundary snap: a query one rounding error short of a segment
        // boundary must resolve to the segment starting there, or switching
        // times would drift by one step depending on how the caller's time
        // grid accumulates. The tolerance is far above f64 noise and far
        // below any sane step size.
        let tol = self.cycle * 1e-9;
        let tau = if self.cyclic {
            let mut r = t % self.cycle;
            if r < 0.0 {
                r += self.cycle;
            }
            if self.cycle - r < tol {
                r = 0.0;
            }
            r
        } else if t >= self.cycle {
            return self.segments.len() - 1;
        } else {
            t
        };
        let mut acc = 0.0;
        for (k, seg) in self.segments.iter().enumerate() {
            acc += seg.duration;
            if tau < acc - tol {
                return k;
            }
        }
        self.segments.len() - 1
    }

    /// Exact integral `∫_t^{t+T} L(τ) dτ` as a duration-weighted sum of the
    /// segment Laplacians. No quadrature is involved.
    pub fn integrated_laplacian(&self, t: f64, window: f64) -> Result<DMatrix<f64>> {
        if !(window > 0.0) || !window.is_finite() {
            return Err(Error::Parameter(format!(
                "integration window must be positive and finite, got {window}"
            )));
        }
        if t < 0.0 {
            return Err(Error::Parameter(format!("window start must be ≥ 0, got {t}")));
        }
        let n = self.n();
        let mut acc = DMatrix::zeros(n, n);
        let end = t + window;
        let mut cursor = t;
        // Walk segment boundaries from `cursor` to `end`, accumulating the
        // overlap of each active segment with the window.
        while cursor < end {
            let (idx, seg_end) = self.segment_at_abs(cursor);
            let upto = seg_end.min(end);
            let weight = upto - cursor;
            if weight > 0.0 {
                acc += self.segments[idx].graph.laplacian() * weight;
            }
            if seg_end <= cursor {
                // Non-cyclic schedule exhausted: the last segment holds.
                acc += self.segments[self.segments.len() - 1].graph.laplacian() * (end - cursor);
                break;
            }
            cursor = upto;
        }
        Ok(acc)
    }

    /// Segment index at absolute time `t` plus the absolute end of that
    /// segment. For a non-cyclic schedule past its end, the returned end
    /// equals `t` (empty remainder), signalling the hold regime.
    fn segment_at_abs(&self, t: f64) -> (usize, f64) {
        if self.cyclic {
            let wraps = (t / self.cycle).floor();
            let base = wraps * self.cycle;
            let tau = t - base;
            let mut acc = 0.0;
            for (k, seg) in self.segments.iter().enumerate() {
                acc += seg.duration;
                if tau < acc {
                    return (k, base + acc);
                }
            }
            // tau == cycle up to rounding: next cycle's first segment.
            (0, base + self.cycle + self.segments[0].duration)
        } else {
            if t >= self.cycle {
                return (self.segments.len() - 1, t);
            }
            let mut acc = 0.0;
            for (k, seg) in self.segments.iter().enumerate() {
                acc += seg.duration;
                if t < acc {
                    return (k, acc);
                }
            }
            (self.segments.len() - 1, self.cycle)
        }
    }
}

/// Result of a δ-spanning-tree test on an integrated Laplacian.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningTreeCheck {
    pub holds: bool,
    /// Every node that reaches all others through δ-edges.
    pub roots: BTreeSet<usize>,
}

/// Tests whether the digraph induced by an integrated Laplacian contains a
/// δ-spanning tree.
///
/// Edge `(i, j)` is a δ-edge when `−L_int[i][j] ≥ delta`. The check holds
/// when some node reaches every other node through δ-edges; all such roots
/// are returned. Reachability follows the information-flow direction: from a
/// root `r`, node `i` is reached through a chain of edges ending in
/// `(i, ·)`.
pub fn has_delta_spanning_tree(l_int: &DMatrix<f64>, delta: f64) -> Result<SpanningTreeCheck> {
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
    }
    let n = l_int.nrows();
    if n == 0 || l_int.ncols() != n {
        return Err(Error::Dimension(format!(
            "integrated Laplacian must be square and nonempty, got {}x{}",
            l_int.nrows(),
            l_int.ncols()
        )));
    }
    let tol = 1e-9 * (1.0 + l_int.amax());
    for i in 0..n {
        let row_sum: f64 = (0..n).map(|j| l_int[(i, j)]).sum();
        if row_sum.abs() > tol {
            return Err(Error::Parameter(format!(
                "row {} of integrated Laplacian sums to {row_sum}, expected 0",
                i + 1
            )));
        }
        for j in 0..n {
            if i != j && l_int[(i, j)] > tol {
                return Err(Error::Parameter(format!(
                    "off-diagonal ({},{}) of integrated Laplacian is positive",
                    i + 1,
                    j + 1
                )));
            }
        }
    }

    // successors[j] = all i receiving from j through a δ-edge. The slack
    // absorbs roundoff of the duration sums forming the integral; without it
    // an edge integrating to exactly δ could flip on the last bit.
    let edge_tol = 1e-9 * delta.max(1.0);
    let mut successors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && -l_int[(i, j)] >= delta - edge_tol {
                successors[j].push(i);
            }
        }
    }

    let mut roots = BTreeSet::new();
    for r in 0..n {
        let mut seen = vec![false; n];
        let mut stack = vec![r];
        seen[r] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &successors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        if count == n {
            roots.insert(r + 1);
        }
    }
    Ok(SpanningTreeCheck { holds: !roots.is_empty(), roots })
}

/// `max_i x_i − min_i x_i`.
pub fn diameter(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Dimension("diameter of an empty vector".into()));
    }
    let mut lo = x[0];
    let mut hi = x[0];
    for &v in &x[1..] {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(hi - lo)
}

/// Exponential-consensus constants for `ẋ = −(a/b) L(t) x` over a schedule
/// whose integrated graph contains a δ-spanning tree on every window of
/// length `window`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConsensusRate {
    pub delta_prime: f64,
    /// Envelope amplitude; `diam(x(t)) ≤ k · diam(x(0)) · e^{−lambda t}`.
    pub k: f64,
    /// Envelope decay rate, 1/s.
    pub lambda: f64,
}

/// Computes `δ′ = min{1, (a/b)δ} e^{−(n−1)(a/b)T}`, `k = 1/(1−δ′ⁿ)` and
/// `λ = −ln(1−δ′ⁿ)/(nT)`.
///
/// For extremely weak connectivity (`(n−1)(a/b)T` of a few hundred) `δ′ⁿ`
/// underflows and the computed rate collapses to `λ = 0`, `k = 1`; the
/// envelope then degenerates to plain non-expansion of the diameter, which
/// still holds for these dynamics.
pub fn consensus_rate_constants(
    a: f64,
    b: f64,
    delta: f64,
    window: f64,
    n: usize,
) -> Result<ConsensusRate> {
    for (name, v) in [("a", a), ("b", b), ("delta", delta), ("window", window)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
        }
    }
    if n < 2 {
        return Err(Error::Dimension(format!("need at least 2 agents, got {n}")));
    }
    if delta > window {
        return Err(Error::Parameter(format!(
            "delta ({delta}) must not exceed the window length ({window})"
        )));
    }
    let ratio = a / b;
    let delta_prime = (ratio * delta).min(1.0) * (-((n - 1) as f64) * ratio * window).exp();
    let dn = delta_prime.powi(n as i32);
    if !(dn < 1.0) {
        return Err(Error::Internal(format!("delta_prime^n = {dn} must be < 1")));
    }
    let k = 1.0 / (1.0 - dn);
    // ln_1p keeps precision when δ′ⁿ underflows toward 0.
    let lambda = -(-dn).ln_1p() / (n as f64 * window);
    Ok(ConsensusRate { delta_prime, k, lambda })
}

/// Row-orthonormal `(n−1)×n` matrix annihilating the all-ones vector.
///
/// `Q` projects a state onto its disagreement subspace: `Qx = 0` exactly
/// when all components of `x` are equal, and `QQᵀ = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    m: DMatrix<f64>,
}

impl QMatrix {
    /// Recursive construction: `Q_2 = [1/√2, −1/√2]` and
    ///
    /// ```text
    /// Q_k = [ √((k−1)/k)   −1/√(k(k−1)) · 1ᵀ ]
    ///       [ 0             Q_{k−1}          ]
    /// ```
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Dimension(format!(
                "projection matrix needs n ≥ 2, got {n}"
            )));
        }
        let mut q = DMatrix::from_row_slice(1, 2, &[0.5f64.sqrt(), -(0.5f64.sqrt())]);
        for k in 3..=n {
            let kf = k as f64;
            let mut next = DMatrix::zeros(k - 1, k);
            next[(0, 0)] = ((kf - 1.0) / kf).sqrt();
            let off = -(1.0 / (kf * (kf - 1.0))).sqrt();
            for col in 1..k {
                next[(0, col)] = off;
            }
            next.view_mut((1, 1), (k - 2, k - 1)).copy_from(&q);
            q = next;
        }
        Ok(Self { m: q })
    }

    pub fn n(&self) -> usize {
        self.m.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// `Qx`, the disagreement coordinates of `x`.
    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!(
                "expected vector of length {}, got {}",
                self.n(),
                x.len()
            )));
        }
        Ok(&self.m * DVector::from_column_slice(x))
    }
}
