//! Input processing unit: event-triggered sampling of `u_nom = Kz`, the
//! ν-jump corner case and the μ zoom law.

use crate::error::{Error, Result};
use crate::linalg::{sym_eig_extremes, Mat, Vector};

pub const MU_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct InputSamplerConfig {
    pub k: Mat,
    pub beta_c: f64,
    pub beta_o: f64,
    pub period: f64,
    pub r_y: f64,
    pub c_norm: f64,
}

/// `|K(z(t) − z(τ_j))| − β_c|z(t)| − β_o (R_y/‖C‖) ν(t)`.
pub fn input_event_value(z_now: &Vector, z_tau: &Vector, nu_now: f64, cfg: &InputSamplerConfig) -> f64 {
    let drift = (&cfg.k * (z_now - z_tau)).norm();
    drift - cfg.beta_c * z_now.norm() - cfg.beta_o * cfg.r_y / cfg.c_norm * nu_now
}

/// True when the input inequality was false just before an output sample
/// and holds once the new ν is applied, so `τ_{j+1} = t_k`.
pub fn nu_jump_check(z_now: &Vector, z_tau: &Vector, nu_before: f64, nu_after: f64, cfg: &InputSamplerConfig) -> bool {
    input_event_value(z_now, z_tau, nu_before, cfg) < 0.0
        && input_event_value(z_now, z_tau, nu_after, cfg) >= 0.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeldInput {
    pub tau: f64,
    pub value: Vector,
    pub zoom: f64,
}

#[derive(Debug, Clone)]
pub struct MuLawConfig {
    pub r_u: f64,
    pub delta_u: f64,
    pub lmin_pc: f64,
    pub lmax_pc: f64,
    pub chi_c: f64,
    pub xi_c: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub k_norm: f64,
    pub r_y: f64,
    pub delta_y: f64,
}

impl MuLawConfig {
    /// `χ̄_j = χ_c Δ_u μ_j + (ζ₁R_y + ζ₂Δ_y) ν_{k*(τ_j)}`.
    pub fn chi_bar(&self, mu: f64, nu: f64) -> f64 {
        self.chi_c * self.delta_u * mu + (self.zeta1 * self.r_y + self.zeta2 * self.delta_y) * nu
    }

    pub fn ellipsoid_level(&self, mu: f64) -> f64 {
        self.lmin_pc * (self.r_u * mu / self.k_norm).powi(2)
    }

    /// `Θ^u_{j+1}`.
    pub fn theta(&self, mu: f64, nu: f64, gap: f64) -> f64 {
        let ball = self.lmax_pc * self.chi_bar(mu, nu).powi(2);
        ball.max((-self.xi_c * gap).exp() * self.ellipsoid_level(mu))
    }

    fn scale(&self) -> f64 {
        self.k_norm / self.r_u * (self.lmax_pc / self.lmin_pc).sqrt()
    }

    /// `ρ̄_u` implied by the configured ratio `Δ_u/R_u`.
    pub fn rho_bar_u(&self) -> f64 {
        self.scale() * self.chi_c * self.delta_u
    }

    /// `ρ_y = (‖K‖/R_u) √(λ_max/λ_min) (ζ₁R_y + ζ₂Δ_y)`.
    pub fn rho_y(&self) -> f64 {
        self.scale() * (self.zeta1 * self.r_y + self.zeta2 * self.delta_y)
    }
}

/// `μ_{j+1} = ‖K‖ √(Θ^u_{j+1}/λ_min(P_c)) / R_u`.
pub fn mu_update(mu_j: f64, gap: f64, nu_kstar: f64, law: &MuLawConfig) -> f64 {
    let theta = law.theta(mu_j, nu_kstar, gap);
    (law.k_norm / law.r_u * (theta / law.lmin_pc).sqrt()).max(MU_FLOOR)
}

/// Smallest μ whose ellipsoid contains the known controller state.
pub fn mu_init(z: &Vector, p_c: &Mat, law: &MuLawConfig) -> f64 {
    let v = (z.transpose() * p_c * z)[(0, 0)];
    (law.k_norm * (v / law.lmin_pc).sqrt() / law.r_u).max(MU_FLOOR)
}

/// `k*(t) = max{k : t_k ≤ t}`.
pub fn k_star(t: f64, times: &[f64]) -> Result<usize> {
    match times.first() {
        Some(&t0) if t >= t0 => Ok(times.partition_point(|&s| s <= t) - 1),
        Some(&t0) => Err(Error::Interval(format!("t = {t} precedes t_0 = {t0}"))),
        None => Err(Error::Interval("no output samples yet".into())),
    }
}

/// `(ζ₁, ζ₂)`.
pub fn zeta_constants(p_c: &Mat, q_c: &Mat, l: &Mat, eps_c: f64, xi_c: f64, beta_tilde: f64) -> Result<(f64, f64)> {
    let (lmin_qc, _) = sym_eig_extremes(q_c);
    let (_, lmax_pc) = sym_eig_extremes(p_c);
    let denom = (1.0 - eps_c) * lmin_qc - xi_c * lmax_pc;
    if !(denom > 0.0) {
        return Err(Error::Config(format!(
            "zeta denominator (1-eps_c) lmin(Q_c) - xi_c lmax(P_c) = {denom} is not positive"
        )));
    }
    let pcl = crate::linalg::spectral_norm(&(p_c * l));
    Ok(((beta_tilde * eps_c * lmin_qc + 2.0 * pcl) / denom, 2.0 * pcl / denom))
}
