//! Degree distributions: synthetic generators, edge-list ingestion, and the
//! excess-degree distribution seen along a random edge.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on Σ p_k = 1 for a distribution handed in already normalized.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Mass below which a generator refuses to renormalize.
const MIN_SUPPORT_MASS: f64 = 1e-12;

/// Probability mass over the contiguous degree range `k_min..=k_max`.
///
/// Interior classes may carry zero mass (empirical histograms have gaps) but
/// both ends of the support are strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeDistribution {
    k_min: usize,
    p: Vec<f64>,
}

impl DegreeDistribution {
    /// Wraps an already-normalized probability vector starting at degree `k_min`.
    pub fn new(k_min: usize, p: Vec<f64>) -> Result<Self> {
        if k_min < 1 {
            return Err(Error::param("k_min must be at least 1"));
        }
        if p.is_empty() {
            return Err(Error::param("empty degree distribution"));
        }
        if let Some(bad) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::param(format!("invalid probability {bad}")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::param(format!("probabilities sum to {total}, expected 1")));
        }
        if p[0] <= 0.0 || p[p.len() - 1] <= 0.0 {
            return Err(Error::param("support bounds must carry positive mass"));
        }
        Ok(Self { k_min, p })
    }

    /// Normalizes nonnegative weights, trimming zero-weight classes at either end.
    pub fn from_weights(k_min: usize, weights: Vec<f64>) -> Result<Self> {
        if k_min < 1 {
            return Err(Error::param("k_min must be at least 1"));
        }
        if let Some(bad) = weights.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::param(format!("invalid weight {bad}")));
        }
        let first = weights.iter().position(|&w| w > 0.0);
        let last = weights.iter().rposition(|&w| w > 0.0);
        let (first, last) = match (first, last) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::DegenerateDistribution("all weights are zero".into())),
        };
        let trimmed = &weights[first..=last];
        let total: f64 = trimmed.iter().sum();
        let p = trimmed.iter().map(|w| w / total).collect();
        Ok(Self {
            k_min: k_min + first,
            p,
        })
    }

    pub fn k_min(&self) -> usize {
        self.k_min
    }

    pub fn k_max(&self) -> usize {
        self.k_min + self.p.len() - 1
    }

    /// Number of degree classes |𝒦| = k_max − k_min + 1.
    pub fn num_classes(&self) -> usize {
        self.p.len()
    }

    /// Probabilities indexed by class position (degree `k_min + j` at `j`).
    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn degrees(&self) -> impl Iterator<Item = usize> + '_ {
        self.k_min..=self.k_max()
    }

    /// p_k, zero outside the support.
    pub fn prob(&self, k: usize) -> f64 {
        if k < self.k_min || k > self.k_max() {
            0.0
        } else {
            self.p[k - self.k_min]
        }
    }

    /// <k> = Σ k p_k.
    pub fn mean_degree(&self) -> f64 {
        self.degrees().zip(&self.p).map(|(k, p)| k as f64 * p).sum()
    }

    /// Two-column `degree probability` text, one class per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# degree probability\n");
        for (k, p) in self.degrees().zip(&self.p) {
            let _ = writeln!(out, "{k} {p:e}");
        }
        out
    }

    /// Parses the two-column format. Missing interior degrees get zero mass;
    /// the total must be within 1e-6 of one and is renormalized exactly.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let mut cols = line.split_whitespace();
            let (Some(k), Some(p), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Ingestion {
                    line: lineno,
                    message: "expected `degree probability`".into(),
                });
            };
            let k: usize = k.parse().map_err(|_| Error::Ingestion {
                line: lineno,
                message: format!("bad degree `{k}`"),
            })?;
            let p: f64 = p.parse().map_err(|_| Error::Ingestion {
                line: lineno,
                message: format!("bad probability `{p}`"),
            })?;
            entries.push((k, p));
        }
        let k_min = entries
            .iter()
            .map(|e| e.0)
            .min()
            .ok_or_else(|| Error::DegenerateDistribution("distribution file has no entries".into()))?;
        let k_max = entries.iter().map(|e| e.0).max().unwrap_or(k_min);
        let mut weights = vec![0.0; k_max - k_min + 1];
        for (k, p) in entries {
            weights[k - k_min] += p;
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::param(format!("probabilities sum to {total}, expected 1")));
        }
        Self::from_weights(k_min, weights)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn check_bounds(k_min: usize, k_max: usize) -> Result<()> {
    if k_min < 1 {
        return Err(Error::param("k_min must be at least 1"));
    }
    if k_max < k_min {
        return Err(Error::param(format!("k_max {k_max} < k_min {k_min}")));
    }
    Ok(())
}

/// Poisson(λ) degree distribution truncated to `[k_min, k_max]`, as for an
/// Erdős–Rényi network. Evaluated in log space.
pub fn poisson_distribution(lambda: f64, k_min: usize, k_max: usize) -> Result<DegreeDistribution> {
    check_bounds(k_min, k_max)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::param(format!("lambda must be positive, got {lambda}")));
    }
    let ln_lambda = lambda.ln();
    let mut ln_fact: f64 = (2..=k_min).map(|j| (j as f64).ln()).sum();
    let mut log_p = Vec::with_capacity(k_max - k_min + 1);
    for k in k_min..=k_max {
        if k > k_min {
            ln_fact += (k as f64).ln();
        }
        log_p.push(-lambda + k as f64 * ln_lambda - ln_fact);
    }
    let peak = log_p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_p.iter().map(|lp| (lp - peak).exp()).collect();
    let log_mass = peak + weights.iter().sum::<f64>().ln();
    if log_mass < MIN_SUPPORT_MASS.ln() {
        return Err(Error::DegenerateDistribution(format!(
            "Poisson({lambda}) has mass e^{log_mass:.1} on [{k_min}, {k_max}]"
        )));
    }
    DegreeDistribution::from_weights(k_min, weights)
}

/// Power law p_k ∝ k^{-α} on `[k_min, k_max]`.
pub fn power_law_distribution(alpha: f64, k_min: usize, k_max: usize) -> Result<DegreeDistribution> {
    check_bounds(k_min, k_max)?;
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::param(format!("alpha must be nonnegative, got {alpha}")));
    }
    let weights = (k_min..=k_max).map(|k| (-alpha * (k as f64).ln()).exp()).collect();
    DegreeDistribution::from_weights(k_min, weights)
}

/// Excess-degree distribution q_k = (k+1) p_{k+1} / <k>, supported on
/// `k_min − 1 ..= k_max − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessDistribution {
    excess_min: usize,
    q: Vec<f64>,
    mean_degree: f64,
}

impl ExcessDistribution {
    pub fn excess_min(&self) -> usize {
        self.excess_min
    }

    pub fn excess_max(&self) -> usize {
        self.excess_min + self.q.len() - 1
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.q
    }

    pub fn mean_degree(&self) -> f64 {
        self.mean_degree
    }

    /// q_k, zero outside the support.
    pub fn prob(&self, k: usize) -> f64 {
        if k < self.excess_min || k > self.excess_max() {
            0.0
        } else {
            self.q[k - self.excess_min]
        }
    }

    /// Weight attached to degree class `k` in the infection pressure: the
    /// probability that a neighbour reached along an edge has excess degree
    /// `k − 1`, i.e. belongs to class `k`.
    pub fn class_weight(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.prob(k - 1)
        }
    }
}

pub fn excess_distribution(dist: &DegreeDistribution) -> ExcessDistribution {
    let mean = dist.mean_degree();
    let q = dist
        .degrees()
        .zip(dist.probabilities())
        .map(|(k, p)| k as f64 * p / mean)
        .collect();
    ExcessDistribution {
        excess_min: dist.k_min() - 1,
        q,
        mean_degree: mean,
    }
}

/// How to treat self-loops and repeated edges during ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeListOptions {
    /// Fail on a repeated unordered pair instead of dropping it.
    pub reject_duplicates: bool,
    /// Fail on `a a` instead of dropping it.
    pub reject_self_loops: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeListSummary {
    pub nodes: usize,
    pub edges: usize,
    pub mean_degree: f64,
    /// |𝒦| = k_max − k_min + 1.
    pub degree_classes: usize,
    /// Number of degrees actually observed.
    pub distinct_degrees: usize,
    pub duplicates_removed: usize,
    pub self_loops_removed: usize,
}

/// Builds the empirical degree distribution of an undirected graph given as
/// node-token pairs. Nodes left with degree zero are excluded.
pub fn from_edge_list<I, S>(edges: I, options: &EdgeListOptions) -> Result<(DegreeDistribution, EdgeListSummary)>
where
    I: IntoIterator<Item = (S, S)>,
    S: AsRef<str>,
{
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut degree: Vec<usize> = Vec::new();
    let mut duplicates = 0;
    let mut loops = 0;

    let mut intern = |tok: &str, degree: &mut Vec<usize>| -> usize {
        if let Some(&id) = ids.get(tok) {
            return id;
        }
        let id = ids.len();
        ids.insert(tok.to_owned(), id);
        degree.push(0);
        id
    };

    for (n, (a, b)) in edges.into_iter().enumerate() {
        let (a, b) = (a.as_ref(), b.as_ref());
        if a == b {
            if options.reject_self_loops {
                return Err(Error::Ingestion {
                    line: n + 1,
                    message: format!("self-loop on `{a}`"),
                });
            }
            loops += 1;
            continue;
        }
        let ia = intern(a, &mut degree);
        let ib = intern(b, &mut degree);
        let key = (ia.min(ib), ia.max(ib));
        if !seen.insert(key) {
            if options.reject_duplicates {
                return Err(Error::Ingestion {
                    line: n + 1,
                    message: format!("duplicate edge `{a} {b}`"),
                });
            }
            duplicates += 1;
            continue;
        }
        degree[ia] += 1;
        degree[ib] += 1;
    }

    let nodes = degree.iter().filter(|&&d| d > 0).count();
    if nodes == 0 {
        return Err(Error::DegenerateDistribution("no edges left after filtering".into()));
    }
    let k_min = degree.iter().copied().filter(|&d| d > 0).min().unwrap_or(1);
    let k_max = degree.iter().copied().max().unwrap_or(1);
    let mut counts = vec![0usize; k_max - k_min + 1];
    for &d in degree.iter().filter(|&&d| d > 0) {
        counts[d - k_min] += 1;
    }
    let distinct = counts.iter().filter(|&&c| c > 0).count();
    let weights = counts.iter().map(|&c| c as f64).collect();
    let dist = DegreeDistribution::from_weights(k_min, weights)?;
    let summary = EdgeListSummary {
        nodes,
        edges: seen.len(),
        mean_degree: 2.0 * seen.len() as f64 / nodes as f64,
        degree_classes: dist.num_classes(),
        distinct_degrees: distinct,
        duplicates_removed: duplicates,
        self_loops_removed: loops,
    };
    Ok((dist, summary))
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => line[..pos].trim(),
        None => line.trim(),
    }
}

/// Parses whitespace-separated `a b` pairs, one per line; `#` starts a comment.
pub fn parse_edge_list(text: &str) -> Result<Vec<(String, String)>> {
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split_whitespace();
        match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), None) => edges.push((a.to_owned(), b.to_owned())),
            _ => {
                return Err(Error::Ingestion {
                    line: idx + 1,
                    message: format!("expected two node tokens, got `{line}`"),
                })
            }
        }
    }
    if edges.is_empty() {
        return Err(Error::DegenerateDistribution("edge list is empty".into()));
    }
    Ok(edges)
}

pub fn read_edge_list(
    path: impl AsRef<Path>,
    options: &EdgeListOptions,
) -> Result<(DegreeDistribution, EdgeListSummary)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_edge_list(parse_edge_list(&text)?, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn poisson_er_mean() {
        let d = poisson_distribution(17.5, 1, 45).unwrap();
        assert_eq!(d.num_classes(), 45);
        assert_abs_diff_eq!(d.mean_degree(), 17.5, epsilon = 1e-3);
    }

    #[test]
    fn poisson_truncated_mean_matches_direct_summation() {
        // Oracle: recursive p_k = p_{k-1} λ / k from p_0 = e^{-λ}, no log space.
        let lambda = 17.5;
        let mut p = f64::exp(-lambda);
        let (mut mass, mut first) = (0.0, 0.0);
        for k in 1..=45 {
            p *= lambda / k as f64;
            mass += p;
            first += k as f64 * p;
        }
        let oracle = first / mass;
        let d = poisson_distribution(lambda, 1, 45).unwrap();
        assert_abs_diff_eq!(d.mean_degree(), oracle, epsilon = 1e-10);
        // frozen value: 17.5000001 to 6 digits
        assert_abs_diff_eq!(d.mean_degree(), 17.500000, epsilon = 5e-7);
    }

    #[test]
    fn poisson_point_mass() {
        let d = poisson_distribution(3.0, 7, 7).unwrap();
        assert_eq!(d.probabilities(), &[1.0]);
        assert_eq!(d.k_min(), 7);
    }

    #[test]
    fn poisson_far_tail_is_degenerate() {
        let err = poisson_distribution(1.0, 500, 600).unwrap_err();
        assert!(matches!(err, Error::DegenerateDistribution(_)), "{err}");
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(matches!(poisson_distribution(2.0, 0, 4), Err(Error::Parameter(_))));
        assert!(matches!(power_law_distribution(2.0, 5, 4), Err(Error::Parameter(_))));
        assert!(matches!(poisson_distribution(-1.0, 1, 4), Err(Error::Parameter(_))));
    }

    #[test]
    fn power_law_pl2() {
        let d = power_law_distribution(2.0, 6, 105).unwrap();
        assert_eq!(d.num_classes(), 100);
        assert_abs_diff_eq!(d.mean_degree(), 17.1818, epsilon = 1e-3);
    }

    #[test]
    fn power_law_alpha_zero_is_uniform() {
        let d = power_law_distribution(0.0, 1, 4).unwrap();
        for p in d.probabilities() {
            assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn excess_of_point_mass() {
        let d = DegreeDistribution::new(5, vec![1.0]).unwrap();
        let q = excess_distribution(&d);
        assert_eq!(q.excess_min(), 4);
        assert_abs_diff_eq!(q.prob(4), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.class_weight(5), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn excess_two_classes() {
        let d = DegreeDistribution::new(1, vec![0.5, 0.5]).unwrap();
        let q = excess_distribution(&d);
        assert_abs_diff_eq!(q.mean_degree(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(q.prob(0), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.prob(1), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn triangle_is_regular() {
        let edges = [("a", "b"), ("b", "c"), ("c", "a")];
        let (d, s) = from_edge_list(edges, &EdgeListOptions::default()).unwrap();
        assert_eq!(d.k_min(), 2);
        assert_eq!(d.probabilities(), &[1.0]);
        assert_eq!(s.mean_degree, 2.0);
    }

    #[test]
    fn star_with_four_leaves() {
        let edges = [("h", "1"), ("h", "2"), ("3", "h"), ("h", "4")];
        let (d, s) = from_edge_list(edges, &EdgeListOptions::default()).unwrap();
        assert_abs_diff_eq!(d.prob(1), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(d.prob(4), 0.2, epsilon = 1e-15);
        assert_eq!(d.prob(2), 0.0);
        assert_abs_diff_eq!(d.mean_degree(), 1.6, epsilon = 1e-15);
        assert_eq!(s.nodes, 5);
        assert_eq!(s.degree_classes, 4);
        assert_eq!(s.distinct_degrees, 2);
    }

    #[test]
    fn duplicates_and_loops_dropped_by_default() {
        let edges = [("a", "b"), ("b", "a"), ("c", "c"), ("b", "c")];
        let (d, s) = from_edge_list(edges, &EdgeListOptions::default()).unwrap();
        assert_eq!(s.duplicates_removed, 1);
        assert_eq!(s.self_loops_removed, 1);
        assert_eq!(s.edges, 2);
        assert_eq!(s.nodes, 3);
        assert_abs_diff_eq!(d.mean_degree(), 4.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn strict_options_reject() {
        let strict = EdgeListOptions {
            reject_duplicates: true,
            reject_self_loops: true,
        };
        let err = from_edge_list([("a", "b"), ("b", "a")], &strict).unwrap_err();
        assert!(matches!(err, Error::Ingestion { line: 2, .. }));
        let err = from_edge_list([("a", "a")], &strict).unwrap_err();
        assert!(matches!(err, Error::Ingestion { line: 1, .. }));
    }

    #[test]
    fn only_self_loops_is_degenerate() {
        let err = from_edge_list([("a", "a")], &EdgeListOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateDistribution(_)));
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "# header\na b\n\nc\n";
        match parse_edge_list(text) {
            Err(Error::Ingestion { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let edges = parse_edge_list("x y # trailing\n1\t2\n").unwrap();
        assert_eq!(edges, vec![("x".into(), "y".into()), ("1".into(), "2".into())]);
    }

    #[test]
    fn text_round_trip() {
        let d = power_law_distribution(2.5, 3, 30).unwrap();
        let back = DegreeDistribution::from_text(&d.to_text()).unwrap();
        assert_eq!(back.k_min(), d.k_min());
        for (a, b) in back.probabilities().iter().zip(d.probabilities()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn new_rejects_unnormalized_and_loose_support() {
        assert!(DegreeDistribution::new(1, vec![0.5, 0.4]).is_err());
        assert!(DegreeDistribution::new(1, vec![0.0, 1.0]).is_err());
        assert!(DegreeDistribution::new(0, vec![1.0]).is_err());
    }
}
