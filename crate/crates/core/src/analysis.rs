//! Theoretical convergence constants and trace-vs-bound verdicts.
//!
//! The closed loop admits an input-to-state stability envelope
//!
//! ```text
//! ‖ξ(t)‖ ≤ κ1 ‖ξ(0)‖ e^{−λ_TC t} + κ2 sup_t ( a n √n h(t) + ‖e_PF(t)‖ + |γ̈_d(t)| )
//! ```
//!
//! over the coordination error `ξ = (Qγ, γ̇ − γ̇_d·1)`. The constants follow
//! from a Lyapunov construction on the switched consensus dynamics; they are
//! valid but very conservative, so verdicts report the margin instead of
//! tuning anything. A Gronwall argument on the same constants yields a
//! strictly positive lower bound on the spacing of trigger events, ruling
//! out chattering.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::coordination::{Gains, TriggerConfig};
use crate::error::{Error, Result};
use crate::graph::{consensus_rate_constants, QMatrix};

/// Disagreement coordinates of the fleet: `xi1 = Qγ`, `xi2 = γ̇ − γ̇_d·1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationErrorState {
    pub xi1: DVector<f64>,
    pub xi2: DVector<f64>,
    pub norm: f64,
}

/// Stacks the coordination error at one instant.
pub fn coordination_error(
    gamma: &[f64],
    gamma_dot: &[f64],
    gamma_dot_d: f64,
    q: &QMatrix,
) -> Result<CoordinationErrorState> {
    if gamma.len() != q.n() || gamma_dot.len() != q.n() {
        return Err(Error::Dimension(format!(
            "expected vectors of length {}, got {} and {}",
            q.n(),
            gamma.len(),
            gamma_dot.len()
        )));
    }
    let xi1 = q.project(gamma)?;
    let xi2 = DVector::from_iterator(
        gamma_dot.len(),
        gamma_dot.iter().map(|&gd| gd - gamma_dot_d),
    );
    let norm = (xi1.norm_squared() + xi2.norm_squared()).sqrt();
    Ok(CoordinationErrorState { xi1, xi2, norm })
}

/// Largest singular value by power iteration on `MᵀM` (tolerance 1e-10).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let k = gram.ncols();
    if k == 0 {
        return 0.0;
    }
    // Deterministic start, slightly perturbed so it is not orthogonal to the
    // leading eigenvector of structured matrices.
    let mut v = DVector::from_fn(k, |i, _| 1.0 + 0.01 * ((i as f64) * 0.7368).sin());
    v /= v.norm();
    let mut prev = 0.0;
    for _ in 0..20_000 {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let s2 = (&gram * &v).dot(&v);
        if (s2 - prev).abs() <= 1e-10 * s2.max(1.0) {
            return s2.max(0.0).sqrt();
        }
        prev = s2;
    }
    prev.max(0.0).sqrt()
}

/// Every constant of the convergence analysis, kept together so reports can
/// serialize them in one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoreticalBounds {
    pub n: usize,
    /// Consensus envelope constants of the switched reference dynamics.
    pub delta_prime: f64,
    pub k: f64,
    pub lambda: f64,
    /// `k_φ = √(2n)·k`, the amplitude seen by the projected dynamics.
    pub k_phi: f64,
    /// Closed-loop decay rate, taken at its cap `λ/(6nk²)`.
    pub lambda_tc: f64,
    /// Lyapunov sandwich constants (depend on the free scale `c3`).
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub beta: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub s_norm: f64,
    pub s_inv_norm: f64,
    /// Eigenvalues of the damping-feasibility matrix at the rate cap. With
    /// the cap taken with equality its (1,1) entry vanishes, so this matrix
    /// is not positive semidefinite unless the coupling vanishes too; the
    /// verdict is reported as a warning, never a failure.
    pub damping_matrix_eigenvalues: [f64; 2],
    pub damping_matrix_psd: bool,
}

/// Computes the ISS envelope constants for the given gains and network QoS.
///
/// `c3` is the free Lyapunov scale (`κ1` is invariant to it); `beta`
/// defaults to `2·c1`, which makes `min{c1, β/2} = c1`.
pub fn iss_bound_constants(
    gains: &Gains,
    n: usize,
    window: f64,
    delta: f64,
    c3: f64,
    beta: Option<f64>,
) -> Result<TheoreticalBounds> {
    gains.validate()?;
    if !(c3 > 0.0) {
        return Err(Error::Parameter(format!("c3 must be positive, got {c3}")));
    }
    let rate = consensus_rate_constants(gains.a, gains.b, delta, window, n)?;
    let nf = n as f64;
    let k_phi = (2.0 * nf).sqrt() * rate.k;
    let lambda_tc = rate.lambda / (6.0 * nf * rate.k * rate.k);
    let c1 = gains.b * c3 / (2.0 * gains.a * nf);
    let c2 = k_phi * k_phi * c3 / (2.0 * rate.lambda);
    let beta = beta.unwrap_or(2.0 * c1);
    if !(beta > 0.0) {
        return Err(Error::Parameter(format!("beta must be positive, got {beta}")));
    }

    let q = QMatrix::new(n)?;
    let dim = 2 * n - 1;
    let mut s = DMatrix::zeros(dim, dim);
    let mut s_inv = DMatrix::zeros(dim, dim);
    for i in 0..n - 1 {
        s[(i, i)] = gains.b;
        s_inv[(i, i)] = 1.0 / gains.b;
    }
    for i in 0..n {
        s[(n - 1 + i, n - 1 + i)] = 1.0;
        s_inv[(n - 1 + i, n - 1 + i)] = 1.0;
    }
    s.view_mut((0, n - 1), (n - 1, n)).copy_from(q.matrix());
    s_inv
        .view_mut((0, n - 1), (n - 1, n))
        .copy_from(&(q.matrix() * (-1.0 / gains.b)));

    let s_norm = spectral_norm(&s);
    let s_inv_norm = spectral_norm(&s_inv);

    let min_c = c1.min(beta / 2.0);
    let max_c = c2.max(beta / 2.0);
    let amp = s_inv_norm * (max_c / min_c).sqrt();
    let kappa1 = amp * s_norm;
    let kappa2 = amp * (k_phi * k_phi * c3 / rate.lambda + beta) / (lambda_tc * min_c);

    // Feasibility matrix of the damping condition, evaluated at the cap.
    let ratio = gains.a / gains.b;
    let coupling = 0.5 * (ratio * nf * k_phi * k_phi / rate.lambda * c3 + beta * ratio * nf);
    let p = c3 - lambda_tc * (3.0 * k_phi * k_phi / (2.0 * rate.lambda)) * c3;
    let qq = beta * (gains.b - ratio * nf - 1.5 * lambda_tc);
    let mid = 0.5 * (p + qq);
    let rad = (0.25 * (p - qq) * (p - qq) + coupling * coupling).sqrt();
    let eigs = [mid - rad, mid + rad];
    let psd_tol = 1e-12 * (p.abs() + qq.abs() + coupling.abs()).max(1.0);
    let psd = eigs[0] >= -psd_tol;

    Ok(TheoreticalBounds {
        n,
        delta_prime: rate.delta_prime,
        k: rate.k,
        lambda: rate.lambda,
        k_phi,
        lambda_tc,
        c1,
        c2,
        c3,
        beta,
        kappa1,
        kappa2,
        s_norm,
        s_inv_norm,
        damping_matrix_eigenvalues: eigs,
        damping_matrix_psd: psd,
    })
}

/// Lower bound on the spacing between consecutive trigger events of one
/// agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterEventBound {
    pub seconds: f64,
    /// Set when `c1 = 0`: the bound degenerates to zero and gives no
    /// chattering exclusion.
    pub degenerate: bool,
    /// The forcing bound `ū` the Gronwall step used.
    pub u_bar: f64,
}

/// Evaluates the Gronwall lower bound on inter-event spacing.
///
/// The forcing on the estimation-error dynamics is bounded by
///
/// ```text
/// ū = a n κ1 ‖ξ(0)‖ + a n κ2 (a n √n h_sup + ρ + γ̈_max) + a n √n h_sup + ρ
/// ```
///
/// and an event needs `|e|` to climb from 0 to at least `c1`, which takes at
/// least `ln(1 + c1‖A‖/(‖B‖ū))/‖A‖` with `A = [[0, 1], [0, −b]]`, `B = e₂`.
pub fn min_interevent_bound(
    gains: &Gains,
    trigger: &TriggerConfig,
    n: usize,
    rho: f64,
    xi0_norm: f64,
    gamma_ddot_d_max: f64,
    bounds: &TheoreticalBounds,
) -> InterEventBound {
    let nf = n as f64;
    let an = gains.a * nf;
    let h_sup = trigger.sup();
    let u_bar = an * bounds.kappa1 * xi0_norm
        + an * bounds.kappa2 * (an * nf.sqrt() * h_sup + rho + gamma_ddot_d_max)
        + an * nf.sqrt() * h_sup
        + rho;

    if trigger.c1 == 0.0 {
        return InterEventBound { seconds: 0.0, degenerate: true, u_bar };
    }
    let a_mat = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -gains.b]);
    let b_mat = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let norm_a = spectral_norm(&a_mat);
    let norm_b = spectral_norm(&b_mat);
    // ln_1p keeps the bound strictly positive even when ū is astronomically
    // large and the argument underflows an ordinary ln(1 + x).
    let seconds = (trigger.c1 * norm_a / (norm_b * u_bar)).ln_1p() / norm_a;
    InterEventBound { seconds, degenerate: false, u_bar }
}

/// Verdict of an envelope check over a sampled trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeCheck {
    pub holds: bool,
    /// Smallest envelope/value ratio over the trace (∞ when the signal is
    /// identically zero). Values ≫ 1 mean the bound is very conservative.
    pub margin_ratio: f64,
    pub first_violation_t: Option<f64>,
    /// The constant disturbance offset `κ2·(a n √n h_sup + ρ_obs + γ̈_max)`.
    pub offset: f64,
}

/// Checks `‖ξ(t)‖ ≤ κ1‖ξ(0)‖e^{−λ_TC t} + offset` at every sample.
///
/// `rho_observed` is the largest stacked tracking-error norm seen on the
/// trace; together with `h_sup` and `γ̈_max` it forms the trace-computable
/// stand-in for the supremum in the envelope.
pub fn check_iss_envelope(
    times: &[f64],
    xi_norms: &[f64],
    bounds: &TheoreticalBounds,
    gains: &Gains,
    h_sup: f64,
    rho_observed: f64,
    gamma_ddot_d_max: f64,
) -> Result<EnvelopeCheck> {
    if times.len() != xi_norms.len() || times.is_empty() {
        return Err(Error::Dimension(
            "times and xi_norms must be nonempty and equally long".into(),
        ));
    }
    let nf = bounds.n as f64;
    let offset =
        bounds.kappa2 * (gains.a * nf * nf.sqrt() * h_sup + rho_observed + gamma_ddot_d_max);
    let xi0 = xi_norms[0];
    let mut margin = f64::INFINITY;
    let mut first_violation = None;
    for (&t, &xi) in times.iter().zip(xi_norms) {
        let envelope = bounds.kappa1 * xi0 * (-bounds.lambda_tc * t).exp() + offset;
        if xi > envelope && first_violation.is_none() {
            first_violation = Some(t);
        }
        if xi > 0.0 {
            margin = margin.min(envelope / xi);
        }
    }
    Ok(EnvelopeCheck {
        holds: first_violation.is_none(),
        margin_ratio: margin,
        first_violation_t: first_violation,
        offset,
    })
}

/// Least-squares exponential decay rate of `value ~ C e^{−λ̂ t}` over the
/// window `[t0, t1]`. Requires positive values there.
pub fn fit_decay_rate(times: &[f64], values: &[f64], t0: f64, t1: f64) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::Dimension("times and values differ in length".into()));
    }
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t < t0 || t > t1 {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::Parameter(format!(
                "nonpositive value {v} at t={t} inside the fit window"
            )));
        }
        ts.push(t);
        logs.push(v.ln());
    }
    if ts.len() < 2 {
        return Err(Error::Dimension(format!(
            "fit window [{t0}, {t1}] contains {} samples, need at least 2",
            ts.len()
        )));
    }
    let m = ts.len() as f64;
    let mean_t = ts.iter().sum::<f64>() / m;
    let mean_l = logs.iter().sum::<f64>() / m;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (&t, &l) in ts.iter().zip(&logs) {
        cov += (t - mean_t) * (l - mean_l);
        var += (t - mean_t) * (t - mean_t);
    }
    if var == 0.0 {
        return Err(Error::Dimension("fit window has no time spread".into()));
    }
    Ok(-cov / var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_gains() -> Gains {
        Gains { a: 3.75, b: 4.82, eta: 12.0 }
    }

    #[test]
    fn coordination_error_zero_at_equilibrium() {
        let q = QMatrix::new(4).unwrap();
        let e = coordination_error(&[2.0; 4], &[1.0; 4], 1.0, &q).unwrap();
        assert!(e.norm <= 1e-12);
    }

    #[test]
    fn coordination_error_two_agents_by_hand() {
        let q = QMatrix::new(2).unwrap();
        let e = coordination_error(&[1.0, 0.0], &[1.0, 1.0], 1.0, &q).unwrap();
        assert!((e.xi1.norm() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(e.xi2.norm(), 0.0);
    }

    #[test]
    fn coordination_error_ignores_common_shift() {
        let q = QMatrix::new(5).unwrap();
        let gamma = [0.3, -1.0, 2.0, 0.7, 0.1];
        let shifted: Vec<f64> = gamma.iter().map(|g| g + 42.0).collect();
        let gd = [1.0; 5];
        let a = coordination_error(&gamma, &gd, 1.0, &q).unwrap();
        let b = coordination_error(&shifted, &gd, 1.0, &q).unwrap();
        assert!((a.xi1 - b.xi1).norm() < 1e-12);
    }

    #[test]
    fn coordination_error_checks_dimensions() {
        let q = QMatrix::new(3).unwrap();
        assert!(coordination_error(&[1.0, 2.0], &[1.0, 1.0, 1.0], 1.0, &q).is_err());
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let cases = vec![
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -4.82]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.3, 0.0, 1.5, 0.0, 0.1, 0.2, -3.0]),
            DMatrix::identity(6, 6),
        ];
        for m in cases {
            let svd = m.clone().svd(false, false);
            let expect = svd.singular_values.max();
            let got = spectral_norm(&m);
            assert!(
                (got - expect).abs() <= 1e-9 * expect.max(1.0),
                "power iteration {got} vs svd {expect}"
            );
        }
    }

    #[test]
    fn spectral_norm_of_error_matrix_closed_form() {
        let b: f64 = 4.82;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -b]);
        assert!((spectral_norm(&m) - (1.0 + b * b).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn constants_sane_for_symmetric_pair() {
        let gains = Gains { a: 1.0, b: 1.0, eta: 1.0 };
        let bounds = iss_bound_constants(&gains, 2, 1.0, 1.0, 1.0, None).unwrap();
        for v in [
            bounds.delta_prime,
            bounds.k,
            bounds.lambda,
            bounds.k_phi,
            bounds.lambda_tc,
            bounds.c1,
            bounds.c2,
            bounds.beta,
            bounds.kappa1,
            bounds.kappa2,
        ] {
            assert!(v.is_finite() && v > 0.0, "constant {v} not positive/finite");
        }
        assert!(bounds.kappa1 >= 1.0);
        assert!(bounds.lambda_tc <= bounds.lambda / (6.0 * 2.0 * bounds.k * bounds.k) + 1e-15);
    }

    #[test]
    fn default_constants_are_conservative() {
        let bounds = iss_bound_constants(&default_gains(), 5, 0.09, 0.03, 1.0, None).unwrap();
        // λ_TC sits at its cap λ/(6nk²) = λ/(30k²) here.
        let cap = bounds.lambda / (30.0 * bounds.k * bounds.k);
        assert!((bounds.lambda_tc - cap).abs() <= 1e-20);
        assert!(bounds.lambda_tc < 1e-9, "rate cap should be tiny, got {}", bounds.lambda_tc);
        assert!(bounds.kappa2 > 1e10, "κ2 expected huge, got {}", bounds.kappa2);
        // At the cap the damping feasibility matrix cannot be PSD.
        assert!(!bounds.damping_matrix_psd);
        assert!(bounds.damping_matrix_eigenvalues[0] < 0.0);
    }

    #[test]
    fn kappa1_is_invariant_to_c3_scale() {
        let base = iss_bound_constants(&default_gains(), 5, 0.09, 0.03, 1.0, None).unwrap();
        for s in [0.5, 2.0, 10.0, 1e3] {
            let scaled = iss_bound_constants(&default_gains(), 5, 0.09, 0.03, s, None).unwrap();
            assert!(
                (scaled.kappa1 - base.kappa1).abs() <= 1e-9 * base.kappa1,
                "kappa1 changed under c3 scale {s}"
            );
            assert!((scaled.c1 - s * base.c1).abs() <= 1e-12 * s * base.c1);
            assert!((scaled.c2 - s * base.c2).abs() <= 1e-9 * s * base.c2);
        }
    }

    #[test]
    fn interevent_bound_degenerates_without_offset() {
        let gains = default_gains();
        let trigger = TriggerConfig { c1: 0.0, c2: 0.03, decay_rate: 1.0 };
        let bounds = iss_bound_constants(&gains, 5, 0.09, 0.03, 1.0, None).unwrap();
        let b = min_interevent_bound(&gains, &trigger, 5, 1.0, 0.0, 0.0, &bounds);
        assert_eq!(b.seconds, 0.0);
        assert!(b.degenerate);
    }

    #[test]
    fn interevent_bound_monotonicity() {
        let gains = default_gains();
        let bounds = iss_bound_constants(&gains, 5, 0.09, 0.03, 1.0, None).unwrap();
        let t1 = TriggerConfig { c1: 0.01, c2: 0.0, decay_rate: 0.0 };
        let t2 = TriggerConfig { c1: 0.03, c2: 0.0, decay_rate: 0.0 };
        let b1 = min_interevent_bound(&gains, &t1, 5, 1.0, 0.0, 0.0, &bounds);
        let b2 = min_interevent_bound(&gains, &t2, 5, 1.0, 0.0, 0.0, &bounds);
        assert!(b2.seconds > b1.seconds, "bound must grow with c1");
        // Larger forcing (via rho) shrinks the bound.
        let b3 = min_interevent_bound(&gains, &t2, 5, 10.0, 0.0, 0.0, &bounds);
        assert!(b3.seconds < b2.seconds);
        assert!(b3.u_bar > b2.u_bar);
        for b in [b1, b2, b3] {
            assert!(b.seconds > 0.0, "bound must stay strictly positive");
        }
    }

    #[test]
    fn envelope_holds_on_equilibrium_trace() {
        let gains = default_gains();
        let bounds = iss_bound_constants(&gains, 5, 0.09, 0.03, 1.0, None).unwrap();
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let xi = vec![0.0; 100];
        let check = check_iss_envelope(&times, &xi, &bounds, &gains, 0.03, 0.0, 0.0).unwrap();
        assert!(check.holds);
        assert!(check.margin_ratio.is_infinite());
    }

    #[test]
    fn envelope_flags_corrupted_trace() {
        let gains = default_gains();
        let bounds = iss_bound_constants(&gains, 5, 0.09, 0.03, 1.0, None).unwrap();
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let mut xi = vec![1e-3; 100];
        xi[40] = 1e40; // far above any conservative envelope
        let check = check_iss_envelope(&times, &xi, &bounds, &gains, 0.03, 0.1, 0.0).unwrap();
        assert!(!check.holds);
        assert_eq!(check.first_violation_t, Some(4.0));
    }

    #[test]
    fn envelope_offset_grows_with_disturbance() {
        let gains = default_gains();
        let bounds = iss_bound_constants(&gains, 5, 0.09, 0.03, 1.0, None).unwrap();
        let times = vec![0.0, 1.0];
        let xi = vec![0.0, 0.0];
        let small = check_iss_envelope(&times, &xi, &bounds, &gains, 0.01, 0.1, 0.0).unwrap();
        let big = check_iss_envelope(&times, &xi, &bounds, &gains, 0.03, 0.5, 0.0).unwrap();
        assert!(big.offset > small.offset);
    }

    #[test]
    fn decay_fit_recovers_synthetic_rate() {
        let times: Vec<f64> = (0..1000).map(|k| k as f64 * 0.01).collect();
        let values: Vec<f64> = times.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let lam = fit_decay_rate(&times, &values, 0.0, 9.99).unwrap();
        assert!((lam - 2.0).abs() < 1e-9);
    }

    #[test]
    fn decay_fit_of_constant_is_zero() {
        let times: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let values = vec![0.7; 100];
        let lam = fit_decay_rate(&times, &values, 0.0, 99.0).unwrap();
        assert!(lam.abs() < 1e-12);
    }

    #[test]
    fn decay_fit_rejects_nonpositive_values() {
        let times = vec![0.0, 1.0, 2.0];
        let values = vec![1.0, 0.0, 1.0];
        assert!(fit_decay_rate(&times, &values, 0.0, 2.0).is_err());
    }
}
