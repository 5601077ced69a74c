//! Compression of degree classes into Z equal-mass groups, and of those groups
//! into M control groups (Low/Medium/High for M = 3).

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::control::zero_strategy;
use crate::dynamics::{simulate_full, simulate_grouped, EpidemicParams, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::network::{excess_distribution, DegreeDistribution};

/// Slack on the cumulative-mass thresholds so that e.g. 7 × (1/21) closes
/// a group despite rounding.
const THRESHOLD_TOL: f64 = 1e-12;

/// Contiguous partition of the class positions `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    boundaries: Vec<usize>,
    requested: usize,
}

impl Grouping {
    /// `boundaries` holds Z + 1 strictly increasing class positions from 0 to
    /// `num_classes`.
    pub fn from_boundaries(boundaries: Vec<usize>, num_classes: usize) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::param("a grouping needs at least one interval"));
        }
        if boundaries[0] != 0 || *boundaries.last().unwrap() != num_classes {
            return Err(Error::param(format!("grouping must cover classes 0..{num_classes}")));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("grouping intervals must be nonempty and ordered"));
        }
        let requested = boundaries.len() - 1;
        Ok(Self { boundaries, requested })
    }

    pub fn identity(num_classes: usize) -> Self {
        Self {
            boundaries: (0..=num_classes).collect(),
            requested: num_classes,
        }
    }

    /// Achieved number of groups.
    pub fn len(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of groups asked for; larger than [`len`](Self::len) when
    /// zero-mass intervals had to be merged.
    pub fn requested(&self) -> usize {
        self.requested
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Class positions of group `z` (0-based).
    pub fn range(&self, z: usize) -> Range<usize> {
        self.boundaries[z]..self.boundaries[z + 1]
    }

    pub fn num_classes(&self) -> usize {
        *self.boundaries.last().unwrap()
    }
}

/// Splits `masses` into `groups` contiguous nonempty blocks: block z closes at
/// the first position where the running mass reaches z/groups, but never so
/// late that a later block would be left without an element.
fn equal_mass_boundaries(masses: &[f64], groups: usize) -> Vec<usize> {
    let len = masses.len();
    debug_assert!(groups >= 1 && groups <= len);
    let mut boundaries = Vec::with_capacity(groups + 1);
    boundaries.push(0);
    let mut cum = 0.0;
    let mut j = 0;
    for z in 1..groups {
        let target = z as f64 / groups as f64 - THRESHOLD_TOL;
        let last_allowed = len - (groups - z);
        loop {
            cum += masses[j];
            j += 1;
            if cum >= target || j >= last_allowed {
                break;
            }
        }
        boundaries.push(j);
    }
    boundaries.push(len);
    boundaries
}

/// Greedy equal-mass partition of the degree classes into `z` groups.
///
/// Groups left with zero mass (possible only when the histogram has gaps)
/// are merged into their neighbour; the achieved count is then below `z`.
pub fn partition_equal_mass(dist: &DegreeDistribution, z: usize) -> Result<Grouping> {
    let classes = dist.num_classes();
    if z < 1 || z > classes {
        return Err(Error::param(format!(
            "Z = {z} must lie in [1, {classes}] (number of degree classes)"
        )));
    }
    let p = dist.probabilities();
    let raw = equal_mass_boundaries(p, z);

    let mut boundaries = vec![0];
    for w in raw.windows(2) {
        let mass: f64 = p[w[0]..w[1]].iter().sum();
        if mass > 0.0 || boundaries.len() == 1 {
            boundaries.push(w[1]);
        } else {
            // Extend the previous group over the empty interval.
            *boundaries.last_mut().unwrap() = w[1];
        }
    }
    // The first group always holds class k_min, which has positive mass.
    let achieved = boundaries.len() - 1;
    if achieved < z {
        log::warn!("requested {z} groups, achieved {achieved} after merging zero-mass intervals");
    }
    Ok(Grouping {
        boundaries,
        requested: z,
    })
}

/// Grouped statistics p̂, q̂, k̂ over a [`Grouping`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedDistribution {
    pub p_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub k_hat: Vec<f64>,
    pub grouping: Grouping,
    /// Inclusive degree range covered by each group.
    pub degree_ranges: Vec<(usize, usize)>,
    pub mean_degree: f64,
}

impl GroupedDistribution {
    pub fn num_groups(&self) -> usize {
        self.p_hat.len()
    }
}

/// p̂_z = Σ p_k, q̂_z = Σ k p_k/<k> and k̂_z = Σ k p_k / Σ p_k over each group.
///
/// q̂_z collects the excess-degree mass of the neighbours that belong to the
/// classes of group z, so Σ q̂_z = 1.
pub fn grouped_stats(dist: &DegreeDistribution, grouping: &Grouping) -> Result<GroupedDistribution> {
    if grouping.num_classes() != dist.num_classes() {
        return Err(Error::param(format!(
            "grouping covers {} classes, distribution has {}",
            grouping.num_classes(),
            dist.num_classes()
        )));
    }
    let excess = excess_distribution(dist);
    let p = dist.probabilities();
    let k_min = dist.k_min();
    let z_count = grouping.len();
    let mut gd = GroupedDistribution {
        p_hat: Vec::with_capacity(z_count),
        q_hat: Vec::with_capacity(z_count),
        k_hat: Vec::with_capacity(z_count),
        grouping: grouping.clone(),
        degree_ranges: Vec::with_capacity(z_count),
        mean_degree: excess.mean_degree(),
    };
    for z in 0..z_count {
        let range = grouping.range(z);
        let (lo, hi) = (k_min + range.start, k_min + range.end - 1);
        let mass: f64 = p[range.clone()].iter().sum();
        let first_moment: f64 = range.clone().map(|j| (k_min + j) as f64 * p[j]).sum();
        let q: f64 = (lo..=hi).map(|k| excess.class_weight(k)).sum();
        let k_hat = if mass > 0.0 {
            first_moment / mass
        } else {
            0.5 * (lo + hi) as f64
        };
        gd.p_hat.push(mass);
        gd.q_hat.push(q);
        gd.k_hat.push(k_hat);
        gd.degree_ranges.push((lo, hi));
    }
    Ok(gd)
}

/// Assignment of the Z groups to M contiguous control groups 𝒢_m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGroups {
    /// `assignment[z]` is the 0-based control group of group z.
    pub assignment: Vec<usize>,
    /// Population fraction x_m of each control group.
    pub x: Vec<f64>,
}

impl ControlGroups {
    pub fn num_controls(&self) -> usize {
        self.x.len()
    }

    pub fn num_groups(&self) -> usize {
        self.assignment.len()
    }

    /// Groups z belonging to control group m.
    pub fn members(&self, m: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &a)| a == m)
            .map(|(z, _)| z)
    }

    /// Single control group over `num_groups` groups.
    pub fn single(num_groups: usize) -> Self {
        Self {
            assignment: vec![0; num_groups],
            x: vec![1.0],
        }
    }
}

/// Same equal-mass rule applied to p̂ over ascending z.
pub fn amass_control_groups(gd: &GroupedDistribution, m: usize) -> Result<ControlGroups> {
    let z = gd.num_groups();
    if m < 1 || m > z {
        return Err(Error::param(format!("M = {m} must lie in [1, {z}] (Z)")));
    }
    let boundaries = equal_mass_boundaries(&gd.p_hat, m);
    let mut assignment = vec![0; z];
    let mut x = Vec::with_capacity(m);
    for (block, w) in boundaries.windows(2).enumerate() {
        for slot in &mut assignment[w[0]..w[1]] {
            *slot = block;
        }
        x.push(gd.p_hat[w[0]..w[1]].iter().sum());
    }
    Ok(ControlGroups { assignment, x })
}

/// Relative L2 error of the stacked aggregate trajectory [s; i; r] of the
/// Z-grouped model against the full per-class model, uncontrolled.
pub fn grouping_error(dist: &DegreeDistribution, z: usize, params: &EpidemicParams, grid: &TimeGrid) -> Result<f64> {
    let grouping = partition_equal_mass(dist, z)?;
    let gd = grouped_stats(dist, &grouping)?;
    let cg = ControlGroups::single(gd.num_groups());
    let schedule = zero_strategy(grid, 1);
    let (full, grouped) = rayon::join(
        || simulate_full(dist, params, grid),
        || simulate_grouped(&gd, &cg, &schedule, params, grid),
    );
    Ok(combined_relative_error(&grouped?, &full?))
}

/// ‖[s;i;r]_a − [s;i;r]_b‖₂ / ‖[s;i;r]_b‖₂ over the time grid.
pub fn combined_relative_error(approx: &Trajectory, reference: &Trajectory) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (a, b) in [
        (&approx.s, &reference.s),
        (&approx.i, &reference.i),
        (&approx.r, &reference.r),
    ] {
        for (x, y) in a.iter().zip(b.iter()) {
            diff += (x - y) * (x - y);
            norm += y * y;
        }
    }
    (diff / norm).sqrt()
}

/// Tab-separated table `z k_lo k_hi p_hat q_hat k_hat m`, 1-based indices.
pub fn grouping_table(gd: &GroupedDistribution, cg: &ControlGroups) -> String {
    let mut out = String::from("z\tk_lo\tk_hi\tp_hat\tq_hat\tk_hat\tm\n");
    for z in 0..gd.num_groups() {
        let (lo, hi) = gd.degree_ranges[z];
        let _ = writeln!(
            out,
            "{}\t{lo}\t{hi}\t{:.10e}\t{:.10e}\t{:.6}\t{}",
            z + 1,
            gd.p_hat[z],
            gd.q_hat[z],
            gd.k_hat[z],
            cg.assignment[z] + 1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::power_law_distribution;
    use approx::assert_abs_diff_eq;

    fn pl2() -> DegreeDistribution {
        power_law_distribution(2.0, 6, 105).unwrap()
    }

    #[test]
    fn single_group() {
        let d = pl2();
        let g = partition_equal_mass(&d, 1).unwrap();
        assert_eq!(g.boundaries(), &[0, 100]);
        let gd = grouped_stats(&d, &g).unwrap();
        assert_abs_diff_eq!(gd.p_hat[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gd.q_hat[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gd.k_hat[0], d.mean_degree(), epsilon = 1e-12);
    }

    #[test]
    fn z_equal_classes_is_identity() {
        let d = pl2();
        let g = partition_equal_mass(&d, 100).unwrap();
        assert_eq!(g, Grouping::identity(100));
        let gd = grouped_stats(&d, &g).unwrap();
        for (z, k) in d.degrees().enumerate() {
            assert_eq!(gd.p_hat[z], d.prob(k));
            assert_abs_diff_eq!(gd.k_hat[z], k as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_classes_two_groups() {
        let d = DegreeDistribution::new(1, vec![0.5, 0.5]).unwrap();
        let g = partition_equal_mass(&d, 2).unwrap();
        let gd = grouped_stats(&d, &g).unwrap();
        assert_eq!(gd.k_hat, vec![1.0, 2.0]);
        assert_eq!(gd.p_hat, vec![0.5, 0.5]);
    }

    #[test]
    fn too_many_groups() {
        let d = DegreeDistribution::new(3, vec![0.5, 0.5]).unwrap();
        assert!(matches!(partition_equal_mass(&d, 3), Err(Error::Parameter(_))));
        assert!(matches!(partition_equal_mass(&d, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn gap_histogram_merges_empty_group() {
        // Mass at degrees 1 and 4 only; asking for 4 groups forces the
        // zero-mass classes 2 and 3 into groups of their own.
        let d = DegreeDistribution::from_weights(1, vec![4.0, 0.0, 0.0, 1.0]).unwrap();
        let g = partition_equal_mass(&d, 4).unwrap();
        assert_eq!(g.requested(), 4);
        assert!(g.len() < 4);
        let gd = grouped_stats(&d, &g).unwrap();
        assert!(gd.p_hat.iter().all(|&p| p > 0.0));
        assert_abs_diff_eq!(gd.p_hat.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn amass_extremes() {
        let d = pl2();
        let gd = grouped_stats(&d, &partition_equal_mass(&d, 21).unwrap()).unwrap();
        let one = amass_control_groups(&gd, 1).unwrap();
        assert!(one.assignment.iter().all(|&m| m == 0));
        assert_abs_diff_eq!(one.x[0], 1.0, epsilon = 1e-12);
        let all = amass_control_groups(&gd, 21).unwrap();
        assert_eq!(all.assignment, (0..21).collect::<Vec<_>>());
        assert_eq!(all.x, gd.p_hat);
        assert!(amass_control_groups(&gd, 22).is_err());
    }

    #[test]
    fn table_has_header_and_rows() {
        let d = pl2();
        let gd = grouped_stats(&d, &partition_equal_mass(&d, 21).unwrap()).unwrap();
        let cg = amass_control_groups(&gd, 3).unwrap();
        let table = grouping_table(&gd, &cg);
        assert!(table.starts_with("z\tk_lo"));
        assert_eq!(table.lines().count(), 22);
    }
}
