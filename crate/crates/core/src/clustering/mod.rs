//! Operational-zone clustering: DP Gaussian mixtures, zone assignment,
//! hierarchical subclustering, normality testing and grid label smoothing.

mod dpgmm;
mod shapiro;
mod smoothing;

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::TurbineId;

pub use dpgmm::{fit_dpgmm, DpgmmConfig};
pub use shapiro::{shapiro_wilk, ShapiroWilk, SHAPIRO_WILK_MAX_N};
pub use smoothing::{smooth_labels, LabelGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major d x d.
    pub covariance: Vec<f64>,
}

impl GaussianComponent {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.covariance)
    }

    /// Symmetric with strictly positive eigenvalues.
    pub fn is_positive_definite(&self) -> bool {
        let m = self.covariance_matrix();
        let scale = m.amax().max(f64::MIN_POSITIVE);
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return false;
        }
        m.symmetric_eigenvalues().iter().all(|&e| e > 0.0)
    }
}

/// A fitted truncated DP Gaussian mixture with its fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub dim: usize,
    pub truncation: usize,
    pub concentration: f64,
    pub seed: u64,
    pub components: Vec<GaussianComponent>,
    pub n_points: usize,
    pub converged: bool,
    pub iterations_run: usize,
    /// ELBO change over the last iteration.
    pub final_elbo_delta: f64,
    pub elbo: f64,
    pub elbo_trace: Vec<f64>,
}

impl MixtureModel {
    /// Weight threshold for a component to count as effective: `2 / n`.
    pub fn effective_threshold(&self) -> f64 {
        2.0 / self.n_points.max(1) as f64
    }

    /// Indices of components with weight at or above the threshold.
    pub fn effective_components(&self) -> Vec<usize> {
        let t = self.effective_threshold();
        (0..self.components.len())
            .filter(|&k| self.components[k].weight >= t)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: "serializing mixture model".into(),
            source,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: MixtureModel = serde_json::from_str(s).map_err(|source| Error::Json {
            context: "parsing mixture model".into(),
            source,
        })?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::domain("mixture has no components"));
        }
        for c in &self.components {
            if c.mean.len() != self.dim || c.covariance.len() != self.dim * self.dim {
                return Err(Error::domain("component shape does not match model dimension"));
            }
        }
        Ok(())
    }

    fn prepared(&self) -> Result<Vec<PreparedComponent>> {
        self.components
            .iter()
            .map(|c| {
                let chol = Cholesky::new(c.covariance_matrix()).ok_or_else(|| {
                    Error::domain("component covariance is not positive definite")
                })?;
                let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                Ok(PreparedComponent {
                    log_weight: c.weight.ln(),
                    mean: DVector::from_column_slice(&c.mean),
                    chol,
                    log_det,
                })
            })
            .collect()
    }
}

struct PreparedComponent {
    log_weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    log_det: f64,
}

impl PreparedComponent {
    fn log_joint(&self, x: &DVector<f64>) -> f64 {
        let d = x.len() as f64;
        let z = self
            .chol
            .l()
            .solve_lower_triangular(&(x - &self.mean))
            .expect("positive definite factor");
        self.log_weight - 0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det + z.norm_squared())
    }
}

fn posterior(prepared: &[PreparedComponent], dim: usize, point: &[f64]) -> Result<Vec<f64>> {
    if point.len() != dim {
        return Err(Error::domain(format!(
            "point has dimension {}, model has {dim}",
            point.len()
        )));
    }
    let x = DVector::from_column_slice(point);
    let logs: Vec<f64> = prepared.iter().map(|c| c.log_joint(&x)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::domain("point has zero density under every component"));
    }
    let mut probs: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Posterior component probabilities of one point under the fitted mixture.
pub fn responsibilities(model: &MixtureModel, point: &[f64]) -> Result<Vec<f64>> {
    posterior(&model.prepared()?, model.dim, point)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Hard and soft assignments of a batch of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: Vec<usize>,
    pub responsibilities: Vec<Vec<f64>>,
}

pub fn assign(model: &MixtureModel, points: &[Vec<f64>]) -> Result<Assignment> {
    let prepared = model.prepared()?;
    let responsibilities = points
        .iter()
        .map(|p| posterior(&prepared, model.dim, p))
        .collect::<Result<Vec<_>>>()?;
    let labels = responsibilities.iter().map(|r| argmax(r)).collect();
    Ok(Assignment {
        labels,
        responsibilities,
    })
}

/// Per-turbine zone labels and responsibilities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ZoneAssignment {
    pub labels: BTreeMap<TurbineId, usize>,
    pub responsibilities: BTreeMap<TurbineId, Vec<f64>>,
}

impl ZoneAssignment {
    pub fn from_assignment(turbines: &[TurbineId], assignment: &Assignment) -> Self {
        let mut out = ZoneAssignment::default();
        for ((t, &l), r) in turbines
            .iter()
            .zip(&assignment.labels)
            .zip(&assignment.responsibilities)
        {
            out.labels.insert(*t, l);
            out.responsibilities.insert(*t, r.clone());
        }
        out
    }

    pub fn zone_of(&self, turbine: TurbineId) -> Option<usize> {
        self.labels.get(&turbine).copied()
    }

    /// Zones in ascending order with their member turbines.
    pub fn zones(&self) -> BTreeMap<usize, Vec<TurbineId>> {
        let mut zones: BTreeMap<usize, Vec<TurbineId>> = BTreeMap::new();
        for (t, &z) in &self.labels {
            zones.entry(z).or_default().push(*t);
        }
        zones
    }
}

/// Fits a fresh mixture to the members of one zone.
pub fn subcluster(
    points: &[Vec<f64>],
    labels: &[usize],
    zone: usize,
    config: &DpgmmConfig,
) -> Result<MixtureModel> {
    if points.len() != labels.len() {
        return Err(Error::domain("points and labels differ in length"));
    }
    let members: Vec<Vec<f64>> = points
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == zone)
        .map(|(p, _)| p.clone())
        .collect();
    if members.len() < 4 {
        return Err(Error::DegenerateInput(format!(
            "zone {zone} has {} members, subclustering needs at least 4",
            members.len()
        )));
    }
    fit_dpgmm(&members, config)
}

/// Minimum members per subcluster for a split to be adopted. A split that
/// leaves a subcluster of three turbines is kept as one zone.
pub const MIN_SUBCLUSTER_MEMBERS: usize = 4;

/// Decides whether a zone split is kept: at least two effective
/// subcomponents, each holding at least [`MIN_SUBCLUSTER_MEMBERS`] points. Returns the
/// subcomponent labels of the members when adopted.
pub fn adopt_split(model: &MixtureModel, members: &[Vec<f64>]) -> Result<Option<Vec<usize>>> {
    let effective = model.effective_components();
    if effective.len() < 2 {
        return Ok(None);
    }
    let assignment = assign(model, members)?;
    let mut counts = vec![0usize; model.components.len()];
    for &l in &assignment.labels {
        counts[l] += 1;
    }
    let used: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] > 0).collect();
    if used.len() >= 2 && used.iter().all(|&k| counts[k] >= MIN_SUBCLUSTER_MEMBERS) {
        Ok(Some(assignment.labels))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(components: Vec<GaussianComponent>) -> MixtureModel {
        MixtureModel {
            dim: components[0].mean.len(),
            truncation: components.len(),
            concentration: 0.5,
            seed: 0,
            components,
            n_points: 10,
            converged: true,
            iterations_run: 1,
            final_elbo_delta: 0.0,
            elbo: 0.0,
            elbo_trace: vec![0.0],
        }
    }

    fn iso(weight: f64, mean: [f64; 2], var: f64) -> GaussianComponent {
        GaussianComponent {
            weight,
            mean: mean.to_vec(),
            covariance: vec![var, 0.0, 0.0, var],
        }
    }

    #[test]
    fn overwhelming_component_wins() {
        let m = model(vec![iso(0.5, [0.0, 0.0], 1.0), iso(0.5, [100.0, 0.0], 1.0)]);
        let r = responsibilities(&m, &[0.0, 0.0]).unwrap();
        assert!(r[0] > 0.999);
        assert_eq!(assign(&m, &[vec![0.0, 0.0]]).unwrap().labels, vec![0]);
    }

    #[test]
    fn equidistant_point_splits_evenly() {
        let m = model(vec![iso(0.5, [-1.0, 0.0], 1.0), iso(0.5, [1.0, 0.0], 1.0)]);
        let r = responsibilities(&m, &[0.0, 3.0]).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
        // Tie goes to the lower index.
        assert_eq!(assign(&m, &[vec![0.0, 3.0]]).unwrap().labels, vec![0]);
    }

    #[test]
    fn responsibilities_sum_to_one_and_check_dimension() {
        let m = model(vec![
            iso(0.2, [0.0, 0.0], 0.5),
            iso(0.3, [3.0, 1.0], 2.0),
            iso(0.5, [-2.0, 4.0], 1.0),
        ]);
        for p in [[0.0, 0.0], [50.0, -20.0], [1.0, 1.0]] {
            let r = responsibilities(&m, &p).unwrap();
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(responsibilities(&m, &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn json_round_trip() {
        let m = model(vec![
            iso(1.0 / 3.0, [0.1, 0.7], 0.123456789),
            iso(2.0 / 3.0, [std::f64::consts::PI, 1e-17], 2.5e-9),
        ]);
        let back = MixtureModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn subcluster_needs_four_members() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0], vec![9.0]];
        let labels = vec![0, 0, 0, 1];
        assert!(matches!(
            subcluster(&pts, &labels, 0, &DpgmmConfig::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn positive_definite_check() {
        assert!(iso(1.0, [0.0, 0.0], 1.0).is_positive_definite());
        assert!(!iso(1.0, [0.0, 0.0], 0.0).is_positive_definite());
        let asym = GaussianComponent {
            weight: 1.0,
            mean: vec![0.0, 0.0],
            covariance: vec![1.0, 0.5, 0.0, 1.0],
        };
        assert!(!asym.is_positive_definite());
    }
}
