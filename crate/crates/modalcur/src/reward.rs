//! Fisher-information reward: spatial covariance, FIM and determinant deltas.
//!
//! The covariance kernel couples an exponential distance decay with a
//! pairwise-normalised mode-shape similarity. The step reward of the sensing
//! environment is the change in `det(Q)` between successive configurations.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::modal::ModalModel;
use crate::{Error, Result};

/// Condition-number ceiling before the gathered covariance is declared
/// degenerate.
pub const COND_LIMIT: f64 = 1e12;

/// Contiguous 1-based mode subset, e.g. modes 2..=4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeRange {
    pub first: usize,
    pub last: usize,
}

impl ModeRange {
    pub fn new(first: usize, last: usize) -> Result<Self> {
        if first == 0 || last < first {
            return Err(Error::InvalidArgument(format!(
                "invalid mode range {first}..={last}"
            )));
        }
        Ok(Self { first, last })
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Zero-based column indices into the mode-shape matrix.
    pub fn columns(&self) -> impl Iterator<Item = usize> {
        (self.first - 1)..self.last
    }

    pub fn validate_for(&self, n_modes: usize) -> Result<()> {
        if self.last > n_modes {
            return Err(Error::InvalidArgument(format!(
                "mode range {self} exceeds available modes ({n_modes})"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for ModeRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for m in self.first..=self.last {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
            first = false;
        }
        Ok(())
    }
}

/// Sensor cells, one candidate-node index per sensor, kept in canonical
/// ascending order so that sensor `k` always denotes the `k`-th sensor by
/// cell index. This makes sensor identity a function of the occupancy
/// pattern alone.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorConfig {
    cells: Vec<usize>,
}

impl SensorConfig {
    pub fn new(cells: Vec<usize>, model: &ModalModel, n_sensors: usize) -> Result<Self> {
        if cells.len() != n_sensors {
            return Err(Error::InvalidSensorConfig(format!(
                "{} cells for {} sensors",
                cells.len(),
                n_sensors
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &c in &cells {
            if c >= model.n_nodes() {
                return Err(Error::InvalidSensorConfig(format!(
                    "cell {c} out of range ({} nodes)",
                    model.n_nodes()
                )));
            }
            if !model.placement_mask[c] {
                return Err(Error::InvalidSensorConfig(format!(
                    "cell {c} lies outside the placement region"
                )));
            }
            if !seen.insert(c) {
                return Err(Error::InvalidSensorConfig(format!("duplicate cell {c}")));
            }
        }
        let mut cells = cells;
        cells.sort_unstable();
        Ok(Self { cells })
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Replace one sensor's cell, re-establishing canonical order; validity
    /// is re-checked by the caller's environment logic, which owns occupancy
    /// bookkeeping.
    pub(crate) fn with_cell(&self, sensor: usize, cell: usize) -> Self {
        let mut cells = self.cells.clone();
        cells[sensor] = cell;
        cells.sort_unstable();
        Self { cells }
    }
}

/// Pairwise mode-shape normalisation: each mode entry is scaled by the larger
/// magnitude of the pair. A pair that is zero in some mode contributes zero.
pub fn pair_norm(phi_i: &[f64], phi_j: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(phi_i.len(), phi_j.len());
    let mut psi_i = Vec::with_capacity(phi_i.len());
    let mut psi_j = Vec::with_capacity(phi_j.len());
    for (&a, &b) in phi_i.iter().zip(phi_j) {
        let m = a.abs().max(b.abs());
        if m == 0.0 {
            psi_i.push(0.0);
            psi_j.push(0.0);
        } else {
            psi_i.push(a.abs() / m);
            psi_j.push(b.abs() / m);
        }
    }
    (psi_i, psi_j)
}

/// Precomputed covariance context for one (model, theta) pair.
///
/// `sigma` and `pair_distance` cover all candidate nodes and are built eagerly
/// so that per-step FIM evaluations only gather submatrices.
#[derive(Debug, Clone)]
pub struct FimContext {
    pub model: Arc<ModalModel>,
    pub theta: ModeRange,
    pub n_sensors: usize,
    /// Distance scale: candidate-set diameter over the sensor count.
    pub upsilon: f64,
    pub pair_distance: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl FimContext {
    pub fn new(model: Arc<ModalModel>, theta: ModeRange, n_sensors: usize) -> Result<Self> {
        theta.validate_for(model.n_modes())?;
        if n_sensors == 0 {
            return Err(Error::InvalidArgument("n_sensors must be >= 1".into()));
        }
        let n = model.n_nodes();
        let mut dist = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let (xi, yi) = model.node_coords[i];
                let (xj, yj) = model.node_coords[j];
                let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                dist[(i, j)] = d;
                dist[(j, i)] = d;
            }
        }
        let mut diameter = 0.0f64;
        let candidates = model.candidate_indices();
        for (a, &i) in candidates.iter().enumerate() {
            for &j in candidates.iter().take(a) {
                diameter = diameter.max(dist[(i, j)]);
            }
        }
        if diameter <= 0.0 {
            return Err(Error::InvalidArgument(
                "candidate set has zero spatial extent".into(),
            ));
        }
        let upsilon = diameter / n_sensors as f64;

        let n_m = theta.len() as f64;
        let cols: Vec<usize> = theta.columns().collect();
        let mut sigma = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut dot = 0.0;
                for &k in &cols {
                    let a = model.mode_shapes[(i, k)].abs();
                    let b = model.mode_shapes[(j, k)].abs();
                    let m = a.max(b);
                    if m > 0.0 {
                        dot += (a / m) * (b / m);
                    }
                }
                let v = (-dist[(i, j)] / upsilon).exp() * dot / n_m;
                sigma[(i, j)] = v;
                sigma[(j, i)] = v;
            }
        }
        Ok(Self {
            model,
            theta,
            n_sensors,
            upsilon,
            pair_distance: dist,
            sigma,
        })
    }

    /// Spatial covariance between candidate nodes `i` and `j`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.sigma[(i, j)]
    }

    /// Fisher information matrix `Q = (L Phi)^T (L Sigma L^T)^-1 (L Phi)`.
    pub fn fim(&self, config: &SensorConfig) -> Result<DMatrix<f64>> {
        let s = config.len();
        let m = self.theta.len();
        let cols: Vec<usize> = self.theta.columns().collect();
        let mut a = DMatrix::zeros(s, m);
        for (r, &cell) in config.cells().iter().enumerate() {
            for (c, &k) in cols.iter().enumerate() {
                a[(r, c)] = self.model.mode_shapes[(cell, k)];
            }
        }
        let mut gathered = DMatrix::zeros(s, s);
        for (r, &i) in config.cells().iter().enumerate() {
            for (c, &j) in config.cells().iter().enumerate() {
                gathered[(r, c)] = self.sigma[(i, j)];
            }
        }
        let svd = gathered.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 0.0 || smax / smin > COND_LIMIT {
            return Err(Error::DegenerateCovariance(COND_LIMIT));
        }
        let sinv_a = svd
            .solve(&a, 0.0)
            .map_err(|_| Error::DegenerateCovariance(COND_LIMIT))?;
        let q = a.transpose() * sinv_a;
        Ok((&q + q.transpose()) * 0.5)
    }

    /// The reward metric `det(Q)`.
    pub fn det_fim(&self, config: &SensorConfig) -> Result<f64> {
        Ok(self.fim(config)?.determinant())
    }

    /// Step reward: determinant change from `before` to `after`.
    pub fn reward_delta(&self, before: &SensorConfig, after: &SensorConfig) -> Result<f64> {
        Ok(self.det_fim(after)? - self.det_fim(before)?)
    }

    /// Natural-log determinant diagnostic for numerical monitoring.
    pub fn log_det_fim(&self, config: &SensorConfig) -> Result<f64> {
        let d = self.det_fim(config)?;
        Ok(if d > 0.0 { d.ln() } else { f64::NEG_INFINITY })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modal::beam_modes_analytical;
    use approx::assert_relative_eq;
    use itertools::Itertools;

    fn beam_ctx(n_candidates: usize, theta: ModeRange, n_sensors: usize) -> FimContext {
        let model = beam_modes_analytical(1.0, n_candidates + 1, theta.last.max(2)).unwrap();
        FimContext::new(Arc::new(model), theta, n_sensors).unwrap()
    }

    /// Straight-line dense re-evaluation of the covariance and FIM formulas,
    /// kept deliberately independent of the library implementation.
    mod oracle {
        use crate::modal::ModalModel;
        use nalgebra::DMatrix;

        pub fn sigma(model: &ModalModel, theta_cols: &[usize], upsilon: f64) -> DMatrix<f64> {
            let n = model.n_nodes();
            let n_m = theta_cols.len() as f64;
            DMatrix::from_fn(n, n, |i, j| {
                let (xi, yi) = model.node_coords[i];
                let (xj, yj) = model.node_coords[j];
                let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                let mut dot = 0.0;
                for &k in theta_cols {
                    let a = model.mode_shapes[(i, k)].abs();
                    let b = model.mode_shapes[(j, k)].abs();
                    let m = a.max(b);
                    if m > 0.0 {
                        dot += (a / m) * (b / m);
                    }
                }
                (-d / upsilon).exp() * dot / n_m
            })
        }

        pub fn fim(
            model: &ModalModel,
            theta_cols: &[usize],
            upsilon: f64,
            cells: &[usize],
        ) -> DMatrix<f64> {
            let n = model.n_nodes();
            let s = cells.len();
            let mut l = DMatrix::zeros(s, n);
            for (r, &c) in cells.iter().enumerate() {
                l[(r, c)] = 1.0;
            }
            let phi = DMatrix::from_fn(n, theta_cols.len(), |i, c| {
                model.mode_shapes[(i, theta_cols[c])]
            });
            let big_sigma = sigma(model, theta_cols, upsilon);
            let lphi = &l * &phi;
            let lsl = &l * big_sigma * l.transpose();
            let inv = lsl.try_inverse().expect("oracle covariance invertible");
            lphi.transpose() * inv * lphi
        }
    }

    #[test]
    fn pair_norm_basic_cases() {
        let (a, b) = pair_norm(&[2.0], &[1.0]);
        assert_eq!(a, vec![1.0]);
        assert_eq!(b, vec![0.5]);

        let (a, b) = pair_norm(&[0.3, -0.7], &[0.3, -0.7]);
        assert_eq!(a, vec![1.0, 1.0]);
        assert_eq!(b, vec![1.0, 1.0]);

        let (a, b) = pair_norm(&[0.0], &[0.0]);
        assert_eq!(a, vec![0.0]);
        assert_eq!(b, vec![0.0]);
    }

    #[test]
    fn covariance_diagonal_is_one() {
        let ctx = beam_ctx(6, ModeRange::new(1, 2).unwrap(), 2);
        for &i in &ctx.model.candidate_indices() {
            // Candidate beam nodes have nonzero entries in modes 1 and 2.
            assert_relative_eq!(ctx.covariance(i, i), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn covariance_decays_with_distance() {
        let ctx = beam_ctx(6, ModeRange::new(1, 2).unwrap(), 2);
        let cand = ctx.model.candidate_indices();
        let near = ctx.covariance(cand[0], cand[1]).abs();
        let far = ctx.covariance(cand[0], cand[5]).abs();
        assert!(far < near);
    }

    #[test]
    fn covariance_matches_oracle_on_three_node_beam() {
        let ctx = beam_ctx(3, ModeRange::new(1, 2).unwrap(), 2);
        let cols: Vec<usize> = ctx.theta.columns().collect();
        let expect = oracle::sigma(&ctx.model, &cols, ctx.upsilon);
        for i in 0..ctx.model.n_nodes() {
            for j in 0..ctx.model.n_nodes() {
                assert_relative_eq!(ctx.covariance(i, j), expect[(i, j)], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn scalar_fim_is_squared_mode_entry() {
        let ctx = beam_ctx(6, ModeRange::new(1, 1).unwrap(), 1);
        let cand = ctx.model.candidate_indices();
        let cell = cand[3];
        let cfg = SensorConfig::new(vec![cell], &ctx.model, 1).unwrap();
        let q = ctx.fim(&cfg).unwrap();
        let phi = ctx.model.mode_shapes[(cell, 0)];
        assert_relative_eq!(q[(0, 0)], phi * phi, epsilon = 1e-12);
        assert_relative_eq!(ctx.det_fim(&cfg).unwrap(), phi * phi, epsilon = 1e-12);
    }

    #[test]
    fn fim_matches_oracle_on_all_two_sensor_configs() {
        let ctx = beam_ctx(6, ModeRange::new(1, 2).unwrap(), 2);
        let cand = ctx.model.candidate_indices();
        let cols: Vec<usize> = ctx.theta.columns().collect();
        let mut best_lib = (f64::NEG_INFINITY, vec![]);
        let mut best_oracle = (f64::NEG_INFINITY, vec![]);
        for combo in cand.iter().copied().combinations(2) {
            let cfg = SensorConfig::new(combo.clone(), &ctx.model, 2).unwrap();
            let q = ctx.fim(&cfg).unwrap();
            let qo = oracle::fim(&ctx.model, &cols, ctx.upsilon, &combo);
            let rel = (&q - &qo).abs().max() / qo.abs().max().max(1e-300);
            assert!(rel < 1e-10, "config {combo:?} rel err {rel}");
            let d = ctx.det_fim(&cfg).unwrap();
            let d_o = qo.determinant();
            assert_relative_eq!(d, d_o, max_relative = 1e-10);
            if d > best_lib.0 {
                best_lib = (d, combo.clone());
            }
            if d_o > best_oracle.0 {
                best_oracle = (d_o, combo);
            }
        }
        assert_eq!(best_lib.1, best_oracle.1, "argmax configs differ");
    }

    #[test]
    fn fim_symmetric_psd() {
        let ctx = beam_ctx(8, ModeRange::new(1, 2).unwrap(), 3);
        let cand = ctx.model.candidate_indices();
        let cfg = SensorConfig::new(vec![cand[0], cand[3], cand[6]], &ctx.model, 3).unwrap();
        let q = ctx.fim(&cfg).unwrap();
        assert!((&q - q.transpose()).abs().max() < 1e-12);
        let eig = q.symmetric_eigen();
        assert!(eig.eigenvalues.min() > -1e-10);
    }

    #[test]
    fn det_invariant_under_sensor_permutation() {
        let ctx = beam_ctx(8, ModeRange::new(1, 2).unwrap(), 3);
        let cand = ctx.model.candidate_indices();
        let a = SensorConfig::new(vec![cand[1], cand[4], cand[7]], &ctx.model, 3).unwrap();
        let b = SensorConfig::new(vec![cand[7], cand[1], cand[4]], &ctx.model, 3).unwrap();
        assert_relative_eq!(
            ctx.det_fim(&a).unwrap(),
            ctx.det_fim(&b).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn reward_delta_antisymmetric() {
        let ctx = beam_ctx(8, ModeRange::new(1, 2).unwrap(), 2);
        let cand = ctx.model.candidate_indices();
        let a = SensorConfig::new(vec![cand[0], cand[4]], &ctx.model, 2).unwrap();
        let b = SensorConfig::new(vec![cand[2], cand[6]], &ctx.model, 2).unwrap();
        assert_relative_eq!(
            ctx.reward_delta(&a, &b).unwrap(),
            -ctx.reward_delta(&b, &a).unwrap(),
            epsilon = 1e-12
        );
        assert_eq!(ctx.reward_delta(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn sensor_config_rejects_invalid_cells() {
        let model = beam_modes_analytical(1.0, 7, 2).unwrap();
        // node 0 is the clamped node
        assert!(SensorConfig::new(vec![0, 1], &model, 2).is_err());
        assert!(SensorConfig::new(vec![1, 1], &model, 2).is_err());
        assert!(SensorConfig::new(vec![1, 99], &model, 2).is_err());
        assert!(SensorConfig::new(vec![1], &model, 2).is_err());
        assert!(SensorConfig::new(vec![1, 2], &model, 2).is_ok());
    }
}
