use nalgebra::{Matrix2, Matrix2x4, Matrix4, SymmetricEigen, Vector2, Vector4};

/// Eigenvalue floor applied when a covariance loses positive definiteness.
pub const COVARIANCE_FLOOR: f64 = 1e-9;

/// State-space model with Jacobian hooks; state is `(x, y, vx, vy)`.
pub trait MotionModel {
    fn transition(&self, state: &Vector4<f64>) -> Vector4<f64>;
    fn transition_jacobian(&self, state: &Vector4<f64>) -> Matrix4<f64>;
    fn process_noise(&self) -> Matrix4<f64>;
    fn observe(&self, state: &Vector4<f64>) -> Vector2<f64>;
    fn observation_jacobian(&self, state: &Vector4<f64>) -> Matrix2x4<f64>;
    fn measurement_noise(&self) -> Matrix2<f64>;
}

/// Constant velocity in pixels per window, position observed directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantVelocity {
    /// Velocity-block process variance (px²).
    pub q: f64,
    /// Measurement variance (px²).
    pub r: f64,
}

impl MotionModel for ConstantVelocity {
    fn transition(&self, s: &Vector4<f64>) -> Vector4<f64> {
        Vector4::new(s[0] + s[2], s[1] + s[3], s[2], s[3])
    }

    fn transition_jacobian(&self, _s: &Vector4<f64>) -> Matrix4<f64> {
        let mut f = Matrix4::identity();
        f[(0, 2)] = 1.0;
        f[(1, 3)] = 1.0;
        f
    }

    fn process_noise(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::new(0.0, 0.0, self.q, self.q))
    }

    fn observe(&self, s: &Vector4<f64>) -> Vector2<f64> {
        Vector2::new(s[0], s[1])
    }

    fn observation_jacobian(&self, _s: &Vector4<f64>) -> Matrix2x4<f64> {
        Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    }

    fn measurement_noise(&self) -> Matrix2<f64> {
        Matrix2::identity() * self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

impl EkfState {
    pub fn new(mean: Vector4<f64>, covariance: Matrix4<f64>) -> Self {
        Self { mean, covariance }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.mean[2], self.mean[3])
    }

    /// Trace of the position block of the covariance.
    pub fn position_trace(&self) -> f64 {
        self.covariance[(0, 0)] + self.covariance[(1, 1)]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.covariance).eigenvalues.min()
    }
}

/// Symmetrizes `c` and, if any eigenvalue falls below the floor, clamps it
/// there. Returns whether a clamp was needed.
pub fn repair_covariance(c: &Matrix4<f64>) -> (Matrix4<f64>, bool) {
    let sym = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&l| l >= COVARIANCE_FLOOR) {
        return (sym, false);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(COVARIANCE_FLOOR));
    let fixed = eig.eigenvectors * Matrix4::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (((fixed + fixed.transpose()) * 0.5), true)
}

fn repaired(c: Matrix4<f64>, stage: &str) -> Matrix4<f64> {
    let (c, fixed) = repair_covariance(&c);
    if fixed {
        log::warn!("covariance lost positive definiteness after {stage}; eigenvalues clamped");
    }
    c
}

pub fn ekf_predict<M: MotionModel>(state: &EkfState, model: &M) -> EkfState {
    let f = model.transition_jacobian(&state.mean);
    let p = f * state.covariance * f.transpose() + model.process_noise();
    EkfState::new(model.transition(&state.mean), repaired(p, "predict"))
}

/// Kalman update with a Joseph-form posterior covariance.
pub fn ekf_update<M: MotionModel>(state: &EkfState, z: &Vector2<f64>, model: &M) -> EkfState {
    let h = model.observation_jacobian(&state.mean);
    let r = model.measurement_noise();
    let p = &state.covariance;
    let s = h * p * h.transpose() + r;
    let Some(s_inv) = s.try_inverse() else {
        log::warn!("singular innovation covariance; update skipped");
        return *state;
    };
    let k = p * h.transpose() * s_inv;
    let innovation = z - model.observe(&state.mean);
    let mean = state.mean + k * innovation;
    let a = Matrix4::identity() - k * h;
    let post = a * p * a.transpose() + k * r * k.transpose();
    EkfState::new(mean, repaired(post, "update"))
}
