//! Linear measurement model, noise sampling and the centralized oracle
//! estimator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SOLVE_TOLERANCE};

/// Default floor on the smallest eigenvalue of `sum H_i^T H_i` and of the
/// Fisher information.
pub const INVERTIBILITY_FLOOR: f64 = 1e-10;

/// One agent's observation matrix `H`, noise covariance `C` and the cached
/// information matrix `B = H^T C^-1 H`.
#[derive(Debug, Clone)]
pub struct AgentModel {
    id: usize,
    h: DMatrix<f64>,
    c: DMatrix<f64>,
    b: DMatrix<f64>,
    /// `H^T C^-1`, maps a measurement to its information vector.
    gain: DMatrix<f64>,
    /// Lower Cholesky factor of `C`, used to colour unit noise.
    noise_factor: DMatrix<f64>,
}

impl AgentModel {
    pub fn new(id: usize, h: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let m = h.nrows();
        if m == 0 || h.ncols() == 0 {
            return Err(Error::InvalidModel(format!("agent {id}: empty observation matrix")));
        }
        if c.nrows() != m || c.ncols() != m {
            return Err(Error::InvalidModel(format!(
                "agent {id}: covariance is {}x{}, expected {m}x{m}",
                c.nrows(),
                c.ncols()
            )));
        }
        if h.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(format!("agent {id}: non-finite entry")));
        }
        if !linalg::is_symmetric(&c, 1e-12) {
            return Err(Error::InvalidModel(format!("agent {id}: covariance is not symmetric")));
        }
        let chol = Cholesky::new(c.clone()).ok_or_else(|| {
            Error::InvalidModel(format!("agent {id}: covariance is not positive definite"))
        })?;
        let noise_factor = chol.l();
        // H^T C^-1 = (C^-1 H)^T since C is symmetric.
        let gain = chol.solve(&h).transpose();
        let mut b = &gain * &h;
        b = (&b + b.transpose()) * 0.5;
        Ok(Self { id, h, c, b, gain, noise_factor })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// Number of scalar measurements per tick, `m_i`.
    pub fn rows(&self) -> usize {
        self.h.nrows()
    }

    /// Parameter dimension `L`.
    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    /// `H^T C^-1 y`.
    pub fn information_vector(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.gain * y
    }
}

/// Zero-mean noise families. Every variant draws `w_i` with covariance
/// exactly `C_i` (except `Zero`, the deterministic mode).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// Coloured i.i.d. uniform components on `[-sqrt 3, sqrt 3]`.
    Uniform,
    /// No noise: `y_i = H_i theta`.
    Zero,
}

impl NoiseKind {
    fn unit<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            NoiseKind::Gaussian => StandardNormal.sample(rng),
            NoiseKind::Uniform => {
                let s = 3f64.sqrt();
                rng.random_range(-s..s)
            }
            NoiseKind::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlobalModel {
    agents: Vec<AgentModel>,
    theta: DVector<f64>,
    sigma_c: DMatrix<f64>,
    sigma_c_chol: Cholesky<f64, Dyn>,
    noise: NoiseKind,
}

impl GlobalModel {
    pub fn new(agents: Vec<AgentModel>, theta: DVector<f64>) -> Result<Self> {
        Self::with_floor(agents, theta, INVERTIBILITY_FLOOR)
    }

    pub fn with_floor(agents: Vec<AgentModel>, theta: DVector<f64>, floor: f64) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidModel("at least one agent is required".into()));
        }
        let dim = theta.len();
        for (i, a) in agents.iter().enumerate() {
            if a.id() != i {
                return Err(Error::InvalidModel(format!(
                    "agent at position {i} has id {}",
                    a.id()
                )));
            }
            if a.dim() != dim {
                return Err(Error::InvalidModel(format!(
                    "agent {i}: H has {} columns but theta has length {dim}",
                    a.dim()
                )));
            }
        }
        let hth = agents
            .iter()
            .fold(DMatrix::zeros(dim, dim), |acc, a| acc + a.h().transpose() * a.h());
        let min_eig = linalg::min_eigenvalue(&hth);
        if !(min_eig > floor) {
            return Err(Error::SingularModel { min_eigenvalue: min_eig, floor });
        }
        let sigma_c = fisher_information(&agents, floor)?;
        let sigma_c_chol = Cholesky::new(sigma_c.clone()).ok_or(Error::SingularModel {
            min_eigenvalue: linalg::min_eigenvalue(&sigma_c),
            floor,
        })?;
        Ok(Self {
            agents,
            theta,
            sigma_c,
            sigma_c_chol,
            noise: NoiseKind::Gaussian,
        })
    }

    pub fn with_noise(mut self, noise: NoiseKind) -> Self {
        self.noise = noise;
        self
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn agents(&self) -> &[AgentModel] {
        &self.agents
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn sigma_c(&self) -> &DMatrix<f64> {
        &self.sigma_c
    }

    pub fn noise(&self) -> NoiseKind {
        self.noise
    }

    /// `Sigma_c^-1`, only for reporting (estimators use `solve_sigma_c`).
    pub fn sigma_c_inverse(&self) -> DMatrix<f64> {
        self.sigma_c_chol.inverse()
    }

    pub fn sigma_c_inverse_trace(&self) -> f64 {
        self.sigma_c_inverse().trace()
    }

    /// Solves `Sigma_c x = rhs` with the cached factorization.
    pub fn solve_sigma_c(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.sigma_c_chol.solve(rhs)
    }
}

/// Measurements `y_i(t)` for every agent at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    pub t: usize,
    pub y: Vec<DVector<f64>>,
}

impl MeasurementBatch {
    pub fn zeros(model: &GlobalModel) -> Self {
        Self {
            t: 0,
            y: model.agents().iter().map(|a| DVector::zeros(a.rows())).collect(),
        }
    }
}

pub fn sample_measurements<R: Rng + ?Sized>(
    model: &GlobalModel,
    t: usize,
    rng: &mut R,
) -> MeasurementBatch {
    let mut batch = MeasurementBatch::zeros(model);
    sample_measurements_into(model, t, rng, &mut batch);
    batch
}

/// Buffer-reusing form of [`sample_measurements`]; `batch` must have been
/// sized for `model`.
pub fn sample_measurements_into<R: Rng + ?Sized>(
    model: &GlobalModel,
    t: usize,
    rng: &mut R,
    batch: &mut MeasurementBatch,
) {
    batch.t = t;
    let noise = model.noise();
    let mut unit = Vec::new();
    for (agent, y) in model.agents().iter().zip(batch.y.iter_mut()) {
        y.gemv(1.0, agent.h(), model.theta(), 0.0);
        if noise == NoiseKind::Zero {
            continue;
        }
        let m = agent.rows();
        unit.clear();
        unit.extend((0..m).map(|_| noise.unit(rng)));
        let l = &agent.noise_factor;
        for r in 0..m {
            let mut w = 0.0;
            for c in 0..=r {
                w += l[(r, c)] * unit[c];
            }
            y[r] += w;
        }
    }
}

/// `Sigma_c = sum_i H_i^T C_i^-1 H_i`, rejected when its smallest eigenvalue
/// is not above `floor`.
pub fn fisher_information(agents: &[AgentModel], floor: f64) -> Result<DMatrix<f64>> {
    let first = agents
        .first()
        .ok_or_else(|| Error::InvalidModel("at least one agent is required".into()))?;
    let dim = first.dim();
    let mut sigma = DMatrix::zeros(dim, dim);
    for a in agents {
        if a.dim() != dim {
            return Err(Error::InvalidModel("agents disagree on parameter dimension".into()));
        }
        sigma += a.b();
    }
    let min_eig = linalg::min_eigenvalue(&sigma);
    if !(min_eig > floor) {
        return Err(Error::SingularModel { min_eigenvalue: min_eig, floor });
    }
    Ok(sigma)
}

/// Best linear estimate `Sigma_c^-1 sum_i H_i^T C_i^-1 ybar_i` from per-agent
/// running means.
pub fn central_estimate(model: &GlobalModel, running_means: &[DVector<f64>]) -> Result<DVector<f64>> {
    if running_means.len() != model.n() {
        return Err(Error::InvalidModel(format!(
            "expected {} running means, got {}",
            model.n(),
            running_means.len()
        )));
    }
    let mut rhs = DVector::zeros(model.dim());
    for (agent, ybar) in model.agents().iter().zip(running_means) {
        rhs.gemv(1.0, agent.gain(), ybar, 1.0);
    }
    linalg::spd_solve(model.sigma_c(), &rhs, SOLVE_TOLERANCE)
}

/// Incremental form of the central estimator: keeps the running sum of
/// information vectors `sum_i x_i(t)` over ticks.
#[derive(Debug, Clone)]
pub struct CentralTracker {
    info_mean: DVector<f64>,
    scratch: DVector<f64>,
    count: usize,
}

impl CentralTracker {
    pub fn new(model: &GlobalModel) -> Self {
        Self {
            info_mean: DVector::zeros(model.dim()),
            scratch: DVector::zeros(model.dim()),
            count: 0,
        }
    }

    pub fn absorb(&mut self, model: &GlobalModel, batch: &MeasurementBatch) {
        self.count += 1;
        self.scratch.fill(0.0);
        for (agent, y) in model.agents().iter().zip(&batch.y) {
            self.scratch.gemv(1.0, agent.gain(), y, 1.0);
        }
        let k = self.count as f64;
        self.info_mean.axpy(1.0 / k, &self.scratch, 1.0 - 1.0 / k);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn estimate(&self, model: &GlobalModel) -> DVector<f64> {
        model.solve_sigma_c(&self.info_mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, Purpose};

    fn scalar_agent(id: usize, h: &[f64], c: f64) -> AgentModel {
        AgentModel::new(
            id,
            DMatrix::from_row_slice(1, h.len(), h),
            DMatrix::from_element(1, 1, c),
        )
        .unwrap()
    }

    #[test]
    fn fisher_single_scalar_agent() {
        let s = fisher_information(&[scalar_agent(0, &[1.0], 1.0)], INVERTIBILITY_FLOOR).unwrap();
        assert_eq!(s, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn fisher_orthogonal_rows_is_identity() {
        let agents = [scalar_agent(0, &[1.0, 0.0], 1.0), scalar_agent(1, &[0.0, 1.0], 1.0)];
        let s = fisher_information(&agents, INVERTIBILITY_FLOOR).unwrap();
        assert_eq!(s, DMatrix::identity(2, 2));
    }

    #[test]
    fn fisher_rejects_unobservable_model() {
        let agents = [scalar_agent(0, &[1.0, 0.0], 1.0), scalar_agent(1, &[2.0, 0.0], 1.0)];
        assert!(matches!(
            fisher_information(&agents, INVERTIBILITY_FLOOR),
            Err(Error::SingularModel { .. })
        ));
        let theta = DVector::from_vec(vec![1.0, 1.0]);
        assert!(GlobalModel::new(agents.to_vec(), theta).is_err());
    }

    #[test]
    fn b_matches_recomputation() {
        let h = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.3, 0.0, 4.0]);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let a = AgentModel::new(0, h.clone(), c.clone()).unwrap();
        let direct = h.transpose() * c.try_inverse().unwrap() * h;
        assert!(linalg::relative_frobenius(a.b(), &direct) < 1e-12);
    }

    #[test]
    fn rejects_bad_covariance() {
        let h = DMatrix::from_element(1, 1, 1.0);
        assert!(AgentModel::new(0, h.clone(), DMatrix::from_element(1, 1, -1.0)).is_err());
        assert!(AgentModel::new(0, h, DMatrix::from_element(2, 2, 1.0)).is_err());
    }

    #[test]
    fn zero_noise_measurements_are_exact() {
        let agents = vec![scalar_agent(0, &[1.0, 2.0], 1.0), scalar_agent(1, &[0.0, 1.0], 3.0)];
        let model = GlobalModel::new(agents, DVector::from_vec(vec![0.5, -1.0]))
            .unwrap()
            .with_noise(NoiseKind::Zero);
        let mut rng = derive_stream(1, 0, Purpose::Noise);
        let batch = sample_measurements(&model, 4, &mut rng);
        assert_eq!(batch.t, 4);
        assert_eq!(batch.y[0][0], -1.5);
        assert_eq!(batch.y[1][0], -1.0);
        let est = central_estimate(&model, &batch.y).unwrap();
        assert!((est - model.theta()).norm() < 1e-10);
    }

    #[test]
    fn central_estimate_identity_model_returns_mean() {
        let a = AgentModel::new(0, DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let model = GlobalModel::new(vec![a], DVector::from_vec(vec![0.0, 0.0])).unwrap();
        let ybar = DVector::from_vec(vec![3.0, -4.0]);
        let est = central_estimate(&model, std::slice::from_ref(&ybar)).unwrap();
        assert!((est - ybar).norm() < 1e-14);
    }

    #[test]
    fn scalar_measurement_mean_within_clt_bound() {
        let model = GlobalModel::new(vec![scalar_agent(0, &[1.0], 1.0)], DVector::from_vec(vec![2.0])).unwrap();
        let mut rng = derive_stream(11, 0, Purpose::Noise);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|t| sample_measurements(&model, t, &mut rng).y[0][0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 2.0).abs() <= 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    fn empirical_noise_covariance(noise: NoiseKind) -> f64 {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let a = AgentModel::new(0, DMatrix::identity(2, 2), c.clone()).unwrap();
        let model = GlobalModel::new(vec![a], DVector::from_vec(vec![1.0, -1.0]))
            .unwrap()
            .with_noise(noise);
        let mut rng = derive_stream(5, 0, Purpose::Noise);
        let n = 100_000;
        let mut cov = DMatrix::<f64>::zeros(2, 2);
        for t in 0..n {
            let w = &sample_measurements(&model, t, &mut rng).y[0] - model.theta();
            cov += &w * w.transpose();
        }
        cov /= n as f64;
        linalg::relative_frobenius(&cov, &c)
    }

    #[test]
    fn gaussian_noise_covariance_matches() {
        assert!(empirical_noise_covariance(NoiseKind::Gaussian) < 0.05);
    }

    #[test]
    fn uniform_noise_covariance_matches() {
        assert!(empirical_noise_covariance(NoiseKind::Uniform) < 0.05);
    }

    #[test]
    fn tracker_matches_batch_central_estimate() {
        let agents = vec![
            scalar_agent(0, &[1.0, 0.0], 1.0),
            scalar_agent(1, &[1.0, 1.0], 2.0),
            scalar_agent(2, &[0.0, -1.0], 0.5),
        ];
        let model = GlobalModel::new(agents, DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let mut rng = derive_stream(3, 0, Purpose::Noise);
        let mut tracker = CentralTracker::new(&model);
        let mut sums = vec![DVector::zeros(1); 3];
        for t in 0..25 {
            let batch = sample_measurements(&model, t, &mut rng);
            tracker.absorb(&model, &batch);
            for (s, y) in sums.iter_mut().zip(&batch.y) {
                *s += y;
            }
        }
        let means: Vec<_> = sums.iter().map(|s| s / 25.0).collect();
        let direct = central_estimate(&model, &means).unwrap();
        assert!((tracker.estimate(&model) - direct).norm() < 1e-12);
    }
}
