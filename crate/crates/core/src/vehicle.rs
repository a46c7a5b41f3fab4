//! Reference trajectories and a point-mass path-following surrogate.
//!
//! Trajectories are Bezier curves in R³ parameterized by virtual time
//! `γ ∈ [0, t_f]` (mapped affinely onto the curve parameter). The surrogate
//! vehicle is a double integrator under PD tracking of the moving desired
//! point; it stands in for a full autopilot and only has to keep the
//! tracking error below the certified bound carried in [`PfConfig`].

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// A Bezier curve in R³ traversed over virtual time `[0, t_f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BezierTrajectory {
    control_points: Vec<Vector3<f64>>,
    t_f: f64,
}

impl BezierTrajectory {
    pub fn new(control_points: Vec<Vector3<f64>>, t_f: f64) -> Result<Self> {
        if control_points.len() < 2 {
            return Err(Error::Dimension(format!(
                "a trajectory needs at least 2 control points, got {}",
                control_points.len()
            )));
        }
        if !(t_f > 0.0) || !t_f.is_finite() {
            return Err(Error::Parameter(format!("t_f must be positive, got {t_f}")));
        }
        if control_points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Parameter("control points must be finite".into()));
        }
        Ok(Self { control_points, t_f })
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn degree(&self) -> usize {
        self.control_points.len() - 1
    }

    pub fn control_points(&self) -> &[Vector3<f64>] {
        &self.control_points
    }

    /// True when `gamma` lies outside `[0, t_f]` and evaluation would clamp.
    pub fn clamps(&self, gamma: f64) -> bool {
        gamma < 0.0 || gamma > self.t_f
    }

    fn parameter(&self, gamma: f64) -> f64 {
        (gamma / self.t_f).clamp(0.0, 1.0)
    }

    /// Desired position at virtual time `gamma` (de Casteljau evaluation;
    /// clamped to the endpoint outside the domain).
    pub fn position(&self, gamma: f64) -> Vector3<f64> {
        de_casteljau(&self.control_points, self.parameter(gamma))
    }

    /// Derivative of the desired position with respect to virtual time,
    /// evaluated through the hodograph (degree-reduced control polygon)
    /// and scaled by `1/t_f`.
    pub fn velocity(&self, gamma: f64) -> Vector3<f64> {
        let d = self.degree() as f64;
        let hodograph: Vec<Vector3<f64>> = self
            .control_points
            .windows(2)
            .map(|w| (w[1] - w[0]) * d)
            .collect();
        if hodograph.len() == 1 {
            return hodograph[0] / self.t_f;
        }
        de_casteljau(&hodograph, self.parameter(gamma)) / self.t_f
    }
}

fn de_casteljau(points: &[Vector3<f64>], s: f64) -> Vector3<f64> {
    let mut work = points.to_vec();
    for level in (1..work.len()).rev() {
        for i in 0..level {
            work[i] = work[i] * (1.0 - s) + work[i + 1] * s;
        }
    }
    work[0]
}

/// Translational state of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// Gains and certified tracking bound of the path-following surrogate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfConfig {
    /// Position gain, 1/s².
    pub kp: f64,
    /// Velocity gain, 1/s.
    pub kd: f64,
    /// Certified bound on the stacked tracking-error norm, m.
    pub rho: f64,
}

impl PfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp > 0.0 && self.kd > 0.0 && self.rho > 0.0) {
            return Err(Error::Parameter(format!(
                "path-following gains and rho must be positive (kp={}, kd={}, rho={})",
                self.kp, self.kd, self.rho
            )));
        }
        Ok(())
    }
}

/// Tracking error `p − p_d(γ)`.
pub fn pf_error(v: &VehicleState, traj: &BezierTrajectory, gamma: f64) -> Vector3<f64> {
    v.position - traj.position(gamma)
}

/// One fixed step of the tracking surrogate.
///
/// The vehicle accelerates with `u = −kp (p − p_d) − kd (v − ṗ_d γ̇)`; the
/// desired point is advanced linearly within the step (`γ + γ̇ s`). The
/// update is a single RK4 step of the resulting double integrator.
pub fn pf_surrogate_step(
    v: &VehicleState,
    traj: &BezierTrajectory,
    gamma: f64,
    gamma_dot: f64,
    cfg: &PfConfig,
    dt: f64,
) -> VehicleState {
    pf_surrogate_step_perturbed(v, traj, gamma, gamma_dot, cfg, dt, Vector3::zeros())
}

/// Same as [`pf_surrogate_step`] with an extra constant acceleration applied
/// over the step (disturbance hook).
pub fn pf_surrogate_step_perturbed(
    v: &VehicleState,
    traj: &BezierTrajectory,
    gamma: f64,
    gamma_dot: f64,
    cfg: &PfConfig,
    dt: f64,
    extra_accel: Vector3<f64>,
) -> VehicleState {
    let accel = |s: f64, p: &Vector3<f64>, vel: &Vector3<f64>| -> Vector3<f64> {
        let g = gamma + gamma_dot * s;
        let pd = traj.position(g);
        let vd = traj.velocity(g) * gamma_dot;
        -(p - pd) * cfg.kp - (vel - vd) * cfg.kd + extra_accel
    };

    let (p0, v0) = (v.position, v.velocity);
    let a1 = accel(0.0, &p0, &v0);
    let (p1, v1) = (p0 + v0 * (dt / 2.0), v0 + a1 * (dt / 2.0));
    let a2 = accel(dt / 2.0, &p1, &v1);
    let (p2, v2) = (p0 + v1 * (dt / 2.0), v0 + a2 * (dt / 2.0));
    let a3 = accel(dt / 2.0, &p2, &v2);
    let (p3, v3) = (p0 + v2 * dt, v0 + a3 * dt);
    let a4 = accel(dt, &p3, &v3);

    VehicleState {
        position: p0 + (v0 + (v1 + v2) * 2.0 + v3) * (dt / 6.0),
        velocity: v0 + (a1 + (a2 + a3) * 2.0 + a4) * (dt / 6.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_traj() -> BezierTrajectory {
        BezierTrajectory::new(
            vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)],
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn needs_two_control_points() {
        assert!(BezierTrajectory::new(vec![Vector3::zeros()], 1.0).is_err());
    }

    #[test]
    fn endpoints_interpolate() {
        let traj = BezierTrajectory::new(
            vec![
                Vector3::new(1.0, 2.0, 3.0),
                Vector3::new(-4.0, 0.0, 2.0),
                Vector3::new(7.0, 7.0, 7.0),
            ],
            5.0,
        )
        .unwrap();
        assert_eq!(traj.position(0.0), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(traj.position(5.0), Vector3::new(7.0, 7.0, 7.0));
    }

    #[test]
    fn linear_curve_midpoint() {
        let traj = linear_traj();
        assert_eq!(traj.position(1.0), Vector3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn evaluation_clamps_outside_domain() {
        let traj = linear_traj();
        assert_eq!(traj.position(-1.0), traj.position(0.0));
        assert_eq!(traj.position(9.0), traj.position(2.0));
        assert!(traj.clamps(-1.0) && traj.clamps(9.0) && !traj.clamps(1.0));
    }

    #[test]
    fn convex_hull_containment() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 3.0, -1.0),
            Vector3::new(2.0, -1.0, 4.0),
            Vector3::new(3.0, 1.0, 1.0),
        ];
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for p in &pts {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let traj = BezierTrajectory::new(pts, 1.0).unwrap();
        for k in 0..=100 {
            let p = traj.position(k as f64 / 100.0);
            for d in 0..3 {
                assert!(p[d] >= lo[d] - 1e-12 && p[d] <= hi[d] + 1e-12);
            }
        }
    }

    #[test]
    fn linear_hodograph_is_constant() {
        let traj = linear_traj();
        let v = Vector3::new(0.5, 0.0, 0.0); // Δp / t_f
        assert!((traj.velocity(0.0) - v).norm() < 1e-15);
        assert!((traj.velocity(1.3) - v).norm() < 1e-15);
    }

    #[test]
    fn start_derivative_identity() {
        let pts = vec![
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(2.0, 0.0, 1.0),
            Vector3::new(3.0, 5.0, 2.0),
            Vector3::new(4.0, 4.0, 4.0),
        ];
        let t_f = 3.0;
        let traj = BezierTrajectory::new(pts.clone(), t_f).unwrap();
        let expect = (pts[1] - pts[0]) * (traj.degree() as f64) / t_f;
        assert!((traj.velocity(0.0) - expect).norm() < 1e-14);
    }

    #[test]
    fn velocity_matches_finite_differences_on_quadratic() {
        let traj = BezierTrajectory::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 2.0, -1.0),
                Vector3::new(3.0, 0.0, 2.0),
            ],
            4.0,
        )
        .unwrap();
        let g = 2.0;
        let h = 1e-6;
        let fd = (traj.position(g + h) - traj.position(g - h)) / (2.0 * h);
        let v = traj.velocity(g);
        assert!((v - fd).norm() / v.norm() < 1e-6);
    }

    #[test]
    fn pf_error_is_componentwise_difference() {
        let traj = linear_traj();
        let v = VehicleState {
            position: Vector3::new(1.0, 2.0, 3.0),
            velocity: Vector3::zeros(),
        };
        // p_d(2.0) = (1, 0, 0)
        assert_eq!(pf_error(&v, &traj, 2.0), Vector3::new(0.0, 2.0, 3.0));
        let on_track = VehicleState {
            position: traj.position(1.0),
            velocity: Vector3::zeros(),
        };
        assert_eq!(pf_error(&on_track, &traj, 1.0), Vector3::zeros());
    }

    #[test]
    fn tracking_equilibrium_stays_on_trajectory() {
        let traj = BezierTrajectory::new(
            vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(10.0, 0.0, 0.0)],
            10.0,
        )
        .unwrap();
        let cfg = PfConfig { kp: 4.0, kd: 4.0, rho: 1.0 };
        let dt = 1e-3;
        let gamma_dot = 1.0;
        let mut state = VehicleState {
            position: traj.position(0.0),
            velocity: traj.velocity(0.0) * gamma_dot,
        };
        let mut gamma = 0.0;
        for _ in 0..1000 {
            state = pf_surrogate_step(&state, &traj, gamma, gamma_dot, &cfg, dt);
            gamma += gamma_dot * dt;
            let err = pf_error(&state, &traj, gamma).norm();
            assert!(err <= 1e-9, "tracking error {err} exceeded 1e-9");
        }
    }

    #[test]
    fn critically_damped_decay_is_monotone() {
        // Fixed desired point, 1 m initial offset, kd² = 4 kp.
        let traj = BezierTrajectory::new(
            vec![Vector3::zeros(), Vector3::zeros()],
            1.0,
        )
        .unwrap();
        let cfg = PfConfig { kp: 4.0, kd: 4.0, rho: 2.0 };
        let dt = 1e-3;
        let mut state = VehicleState {
            position: Vector3::new(1.0, 0.0, 0.0),
            velocity: Vector3::zeros(),
        };
        let mut prev = 1.0;
        for k in 1..=5000 {
            state = pf_surrogate_step(&state, &traj, 0.0, 0.0, &cfg, dt);
            let err = pf_error(&state, &traj, 0.0).norm();
            assert!(err <= prev * (1.0 + 1e-12), "overshoot at step {k}");
            // Closed form for the critically damped pair (kp=4, kd=4):
            // e(t) = (1 + 2t) e^{-2t}.
            let t = k as f64 * dt;
            let closed = (1.0 + 2.0 * t) * (-2.0 * t).exp();
            assert!((err - closed).abs() < 1e-2 * closed.max(1e-6));
            prev = err;
        }
        assert!(prev < 1e-2);
    }
}
