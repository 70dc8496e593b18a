//! Design constants, bit budgets and dwell-time lower bounds.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::input_unit::{zeta_constants, MuLawConfig};
use crate::linalg::{
    check_hurwitz, check_spd, mat_exp, observability_index, smallest_singular_value, solve_lyapunov, spectral_info,
    spectral_norm, sym_eig_extremes, Mat, SpectralInfo,
};
use crate::output_unit::{build_n, relaxed_window, ErrorModel, NuLawConfig};
use crate::quantizer::{required_ratio_input, required_ratio_output, BitBudget};

#[derive(Debug, Clone)]
pub struct DesignInputs {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub k: Mat,
    pub l: Mat,
    pub q_o: Mat,
    pub q_c: Mat,
    pub eps_o: f64,
    pub eps_c: f64,
    pub xi_frac_o: f64,
    pub xi_frac_c: f64,
    pub beta_tilde: f64,
    pub rho_bar: f64,
    pub rho_bar_u: f64,
    pub period: f64,
    pub delta_y: f64,
    pub delta_u: f64,
    /// Overrides the η* rule when `A` has complex eigenvalues.
    pub eta_star: Option<usize>,
    /// Assumed smallest output gap for the pseudo-inverse envelope.
    pub gap_floor: Option<f64>,
    /// Round the Lyapunov matrices to this many decimals before use.
    pub lyapunov_decimals: Option<u32>,
    /// Suppress output events closer than the gap floor to the previous sample.
    pub time_regularization: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingPlan {
    Standard { eta: usize },
    Relaxed { eta_star: usize, omega: f64, window: f64 },
}

impl SamplingPlan {
    pub fn depth(&self) -> usize {
        match *self {
            SamplingPlan::Standard { eta } => eta,
            SamplingPlan::Relaxed { eta_star, .. } => eta_star,
        }
    }

    /// Upper bound on `t − t_{k−η+1}` over an inter-sample interval.
    pub fn span(&self, period: f64) -> f64 {
        match *self {
            SamplingPlan::Standard { eta } => eta as f64 * period,
            SamplingPlan::Relaxed { window, .. } => window,
        }
    }

    /// Upper bound on `t_k − t_{k−η+1}`.
    pub fn history_span(&self, period: f64) -> f64 {
        match *self {
            SamplingPlan::Standard { eta } => (eta - 1) as f64 * period,
            SamplingPlan::Relaxed { window, .. } => window,
        }
    }
}

/// `χ`-type constants of one side of the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideConstants {
    pub xi: f64,
    pub chi: f64,
    pub denom: f64,
}

/// `ξ = frac·(1−ε)λ_min(Q)/λ_max(P)` and `χ = 2‖PG‖/((1−ε)λ_min(Q) − ξλ_max(P))`.
pub fn side_constants(p: &Mat, q: &Mat, g: &Mat, eps: f64, xi_frac: f64) -> Result<SideConstants> {
    let (lmin_q, _) = sym_eig_extremes(q);
    let (_, lmax_p) = sym_eig_extremes(p);
    let xi = xi_frac * (1.0 - eps) * lmin_q / lmax_p;
    let denom = (1.0 - eps) * lmin_q - xi * lmax_p;
    if !(denom > 0.0) {
        return Err(Error::Config(format!("decay-rate denominator {denom} is not positive")));
    }
    Ok(SideConstants {
        xi,
        chi: 2.0 * spectral_norm(&(p * g)) / denom,
        denom,
    })
}

#[derive(Debug, Clone)]
pub struct DesignConstants {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub p_o: Mat,
    pub p_c: Mat,
    pub lmin_po: f64,
    pub lmax_po: f64,
    pub lmin_pc: f64,
    pub lmax_pc: f64,
    pub lmin_qo: f64,
    pub lmax_qo: f64,
    pub lmin_qc: f64,
    pub lmax_qc: f64,
    pub a_norm: f64,
    pub b_norm: f64,
    pub c_norm: f64,
    pub k_norm: f64,
    pub l_norm: f64,
    pub alpha: f64,
    pub beta_c: f64,
    pub beta_o: f64,
    pub xi_o: f64,
    pub xi_c: f64,
    pub chi_o: f64,
    pub chi_c: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub output_budget: BitBudget,
    pub input_budget: BitBudget,
    pub r_y: f64,
    pub r_u: f64,
    pub spectral: SpectralInfo,
    pub plan: SamplingPlan,
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must lie in (0, 1)")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must be positive and finite")))
    }
}

fn check_shape(name: &str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() == rows && m.ncols() == cols {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )))
    }
}

impl DesignInputs {
    pub fn validate(&self) -> Result<(usize, usize, usize)> {
        let n = self.a.nrows();
        let m = self.b.ncols();
        let p = self.c.nrows();
        check_shape("A", &self.a, n, n)?;
        check_shape("B", &self.b, n, m)?;
        check_shape("C", &self.c, p, n)?;
        check_shape("K", &self.k, m, n)?;
        check_shape("L", &self.l, n, p)?;
        check_shape("Q_o", &self.q_o, n, n)?;
        check_shape("Q_c", &self.q_c, n, n)?;
        check_unit_interval("eps_o", self.eps_o)?;
        check_unit_interval("eps_c", self.eps_c)?;
        check_unit_interval("xi_frac_o", self.xi_frac_o)?;
        check_unit_interval("xi_frac_c", self.xi_frac_c)?;
        check_unit_interval("rho_bar", self.rho_bar)?;
        check_unit_interval("rho_bar_u", self.rho_bar_u)?;
        check_positive("beta_tilde", self.beta_tilde)?;
        check_positive("T", self.period)?;
        check_positive("delta_y", self.delta_y)?;
        check_positive("delta_u", self.delta_u)?;
        if let Some(g) = self.gap_floor {
            check_positive("gap_floor", g)?;
        }
        if spectral_norm(&self.b) == 0.0 {
            return Err(Error::Config("B must be nonzero".into()));
        }
        Ok((n, m, p))
    }
}

/// Smallest integer strictly above `2(n−1) + T_s ω/(2π)`.
pub fn eta_star_rule(n: usize, omega: f64, t_s: f64) -> usize {
    let bound = 2.0 * (n as f64 - 1.0) + t_s * omega / (2.0 * std::f64::consts::PI);
    bound.floor() as usize + 1
}

/// Lyapunov certificate `(P, Q_eff)` for the Hurwitz matrix `m`. Without
/// rounding `Q_eff = Q`; with rounding, `Q_eff = −(mᵀP + Pm)` is the decrease
/// actually certified by the rounded `P`.
pub fn lyapunov_certificate(m: &Mat, q: &Mat, decimals: Option<u32>) -> Result<(Mat, Mat)> {
    let p = solve_lyapunov(m, q)?;
    let Some(d) = decimals else {
        return Ok((p, q.clone()));
    };
    let scale = 10f64.powi(d as i32);
    let p = p.map(|v| (v * scale).round() / scale);
    check_spd(&p)?;
    let q_eff = -(m.transpose() * &p + &p * m);
    let q_eff = (&q_eff + q_eff.transpose()) * 0.5;
    check_spd(&q_eff).map_err(|e| Error::NotSpd(format!("rounded certificate no longer decreases: {e}")))?;
    Ok((p, q_eff))
}

pub fn derive_constants(inp: &DesignInputs) -> Result<DesignConstants> {
    let (n, m, p) = inp.validate()?;
    let acl = &inp.a + &inp.b * &inp.k;
    let aobs = &inp.a - &inp.l * &inp.c;
    let eta = observability_index(&inp.a, &inp.c)?;
    let tag = |name: &'static str| {
        move |e: Error| match e {
            Error::NotHurwitz(s) => Error::NotHurwitz(format!("{name}: {s}")),
            e => e,
        }
    };
    check_hurwitz(&acl).map_err(tag("A + BK"))?;
    check_hurwitz(&aobs).map_err(tag("A - LC"))?;
    let (p_o, q_o) = lyapunov_certificate(&aobs, &inp.q_o, inp.lyapunov_decimals)?;
    let (p_c, q_c) = lyapunov_certificate(&acl, &inp.q_c, inp.lyapunov_decimals)?;
    let (lmin_po, lmax_po) = sym_eig_extremes(&p_o);
    let (lmin_pc, lmax_pc) = sym_eig_extremes(&p_c);
    let (lmin_qo, lmax_qo) = sym_eig_extremes(&q_o);
    let (lmin_qc, lmax_qc) = sym_eig_extremes(&q_c);

    let c_norm = spectral_norm(&inp.c);
    let alpha = inp.eps_o * lmin_qo / (2.0 * spectral_norm(&(&p_o * &inp.l)));
    let beta_c = inp.eps_c * lmin_qc / (2.0 * spectral_norm(&(&p_c * &inp.b)));
    let beta_o = inp.beta_tilde * beta_c * c_norm;
    let out = side_constants(&p_o, &q_o, &inp.l, inp.eps_o, inp.xi_frac_o)?;
    let inn = side_constants(&p_c, &q_c, &inp.b, inp.eps_c, inp.xi_frac_c)?;
    let (zeta1, zeta2) = zeta_constants(&p_c, &q_c, &inp.l, inp.eps_c, inn.xi, inp.beta_tilde)?;
    let output_budget = required_ratio_output(&p_o, &inp.c, out.chi, inp.rho_bar)?;
    let input_budget = required_ratio_input(&p_c, &inp.k, inn.chi, inp.rho_bar_u)?;

    let spectral = spectral_info(&inp.a)?;
    let plan = if spectral.all_real_eig {
        SamplingPlan::Standard { eta }
    } else {
        let eta_star = inp
            .eta_star
            .unwrap_or_else(|| eta_star_rule(n, spectral.omega, inp.period));
        let window = relaxed_window(n, eta_star, spectral.omega, inp.period)?;
        SamplingPlan::Relaxed {
            eta_star,
            omega: spectral.omega,
            window,
        }
    };

    Ok(DesignConstants {
        n,
        m,
        p,
        lmin_po,
        lmax_po,
        lmin_pc,
        lmax_pc,
        lmin_qo,
        lmax_qo,
        lmin_qc,
        lmax_qc,
        a_norm: spectral.spec_norm,
        b_norm: spectral_norm(&inp.b),
        c_norm,
        k_norm: spectral_norm(&inp.k),
        l_norm: spectral_norm(&inp.l),
        alpha,
        beta_c,
        beta_o,
        xi_o: out.xi,
        xi_c: inn.xi,
        chi_o: out.chi,
        chi_c: inn.chi,
        zeta1,
        zeta2,
        r_y: inp.delta_y * output_budget.levels,
        r_u: inp.delta_u * input_budget.levels,
        output_budget,
        input_budget,
        p_o,
        p_c,
        spectral,
        plan,
    })
}

/// Comparison-ODE bound for `X' ≤ a₁e^{σ̄t}(X² + a₂X + a₃)`, `X(0) = 0`.
///
/// With `(r²+1)a₂²/4 ≥ a₃`, `Y = X + a₂/2` obeys `Y' ≤ a₁e^{σ̄t}(Y² + (ra₂/2)²)`,
/// hence `X(t) ≤ (ra₂/2) tan(θ(t) + arctan(1/r)) − a₂/2` with
/// `θ(t) = a₄(e^{σ̄t} − 1)`, `a₄ = ra₁a₂/(2σ̄)` (`θ = a₄t`, `a₄ = ra₁a₂/2` if `σ̄ = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBound {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub sigma_bar: f64,
    pub r: u32,
    pub a4: f64,
    pub t_tilde: f64,
}

pub fn growth_bound(a1: f64, a2: f64, a3: f64, sigma_bar: f64) -> Result<GrowthBound> {
    if !(a1 > 0.0 && a2 > 0.0 && a3 >= 0.0 && sigma_bar >= 0.0) || ![a1, a2, a3, sigma_bar].iter().all(|v| v.is_finite()) {
        return Err(Error::Config(format!(
            "comparison constants must be positive: a1 = {a1}, a2 = {a2}, a3 = {a3}, sigma = {sigma_bar}"
        )));
    }
    let need = 4.0 * a3 / (a2 * a2) - 1.0;
    let mut r = if need > 1.0 { need.sqrt().ceil().max(1.0) as u32 } else { 1 };
    while ((r as f64).powi(2) + 1.0) * a2 * a2 / 4.0 < a3 {
        r += 1;
    }
    while r > 1 && ((r as f64 - 1.0).powi(2) + 1.0) * a2 * a2 / 4.0 >= a3 {
        r -= 1;
    }
    let rf = r as f64;
    let (a4, t_tilde) = if sigma_bar > 0.0 {
        let a4 = rf * a2 * a1 / (2.0 * sigma_bar);
        (a4, (1.0 + rf.atan() / a4).ln() / sigma_bar)
    } else {
        let a4 = rf * a2 * a1 / 2.0;
        (a4, rf.atan() / a4)
    };
    Ok(GrowthBound {
        a1,
        a2,
        a3,
        sigma_bar,
        r,
        a4,
        t_tilde,
    })
}

impl GrowthBound {
    fn theta(&self, t: f64) -> f64 {
        if self.sigma_bar > 0.0 {
            self.a4 * (self.sigma_bar * t).exp_m1()
        } else {
            self.a4 * t
        }
    }

    fn time_of_theta(&self, theta: f64) -> f64 {
        if self.sigma_bar > 0.0 {
            (theta / self.a4).ln_1p() / self.sigma_bar
        } else {
            theta / self.a4
        }
    }

    /// Upper bound on `X(t)`; infinite from `t̃_D` on.
    pub fn bound(&self, t: f64) -> f64 {
        let rf = self.r as f64;
        let phase = self.theta(t) + (1.0 / rf).atan();
        if t >= self.t_tilde || phase >= std::f64::consts::FRAC_PI_2 {
            return f64::INFINITY;
        }
        rf * self.a2 / 2.0 * phase.tan() - self.a2 / 2.0
    }

    /// The simplified form `(ra₂/2) tan(θ(t))`. It is not a majorant in
    /// general and is kept only for comparison.
    pub fn simplified_bound(&self, t: f64) -> f64 {
        self.r as f64 * self.a2 / 2.0 * self.theta(t).tan()
    }

    /// Earliest time at which the bound reaches `level`.
    pub fn crossing_time(&self, level: f64) -> f64 {
        let rf = self.r as f64;
        let theta = ((2.0 * level + self.a2) / (rf * self.a2)).atan() - (1.0 / rf).atan();
        self.time_of_theta(theta.max(0.0)).min(self.t_tilde)
    }
}

/// Envelope constants of the estimator matrices over one sampling window:
/// `‖N‖ ≤ c e^{σs}`, `‖N†‖ ≤ c₁e^{σ₁s}`, `‖Ṅ‖ ≤ c₂e^{σ₂s}`, `s = t − t_{k−η+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeConstants {
    pub c_bar: f64,
    pub sigma_hat: f64,
    pub c: f64,
    pub sigma: f64,
    pub c1: f64,
    pub sigma1: f64,
    pub c2: f64,
    pub sigma2: f64,
    pub sigma_bar: f64,
    pub gap_floor: f64,
    pub span: f64,
}

const ENVELOPE_GRID: usize = 1000;
const PINV_INFLATION: f64 = 1.5;

/// `c̄` and `σ̂` with `‖e^{−At}‖ ≤ c̄ e^{σ̂t}` on `[0, span]`.
pub fn exp_envelope(a: &Mat, span: f64) -> Result<(f64, f64)> {
    let info = spectral_info(a)?;
    let min_re = info.eigenvalues.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
    let sigma_hat = (-min_re).max(0.0);
    let dt = span / ENVELOPE_GRID as f64;
    let step = mat_exp(a, -dt)?;
    let mut e = Mat::identity(a.nrows(), a.ncols());
    let mut c_bar: f64 = 1.0;
    for i in 0..=ENVELOPE_GRID {
        c_bar = c_bar.max(spectral_norm(&e) * (-sigma_hat * i as f64 * dt).exp());
        e = &step * e;
    }
    Ok((c_bar * (info.spec_norm * dt).exp(), sigma_hat))
}

/// Gap patterns `(t_k − t_{k−1}, …)` used for the pseudo-inverse envelope.
fn gap_patterns(plan: &SamplingPlan, period: f64, floor: f64) -> Vec<Vec<f64>> {
    let depth = plan.depth();
    if depth == 1 {
        return vec![vec![]];
    }
    const LEVELS: usize = 6;
    let hi = match *plan {
        SamplingPlan::Standard { .. } => period,
        SamplingPlan::Relaxed { window, .. } => window / (depth - 1) as f64,
    };
    let hi = hi.max(floor);
    let level = |i: usize| floor * (hi / floor).powf(i as f64 / (LEVELS - 1) as f64);
    let combos = LEVELS.checked_pow((depth - 1) as u32).unwrap_or(usize::MAX);
    if combos <= 1296 {
        (0..combos)
            .map(|mut idx| {
                (0..depth - 1)
                    .map(|_| {
                        let g = level(idx % LEVELS);
                        idx /= LEVELS;
                        g
                    })
                    .collect()
            })
            .collect()
    } else {
        let mut rng = StdRng::seed_from_u64(0x5eed);
        (0..1296)
            .map(|_| (0..depth - 1).map(|_| level(rng.gen_range(0..LEVELS))).collect())
            .collect()
    }
}

pub fn envelope_constants(
    model: &ErrorModel,
    plan: &SamplingPlan,
    period: f64,
    gap_floor: f64,
) -> Result<EnvelopeConstants> {
    let n = model.n();
    let p = model.p();
    let depth = plan.depth();
    let span = plan.span(period);
    let (c_bar, sigma_hat) = exp_envelope(&model.a, span)?;
    let nd = (n * depth) as f64;
    let c = nd * (nd * p as f64).sqrt() * spectral_norm(&model.c) * c_bar;
    let sigma = sigma_hat;

    // ‖N†‖ = 1/σ_min(N) over gap patterns and offsets in (0, T]
    const OFFSETS: usize = 24;
    let max_offset = match *plan {
        SamplingPlan::Standard { .. } => period,
        SamplingPlan::Relaxed { .. } => period.min(span),
    };
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for gaps in gap_patterns(plan, period, gap_floor) {
        let mut times = vec![0.0];
        for g in &gaps {
            times.push(times.last().unwrap() - g);
        }
        let history: f64 = gaps.iter().sum();
        for j in 1..=OFFSETS {
            let delta = max_offset * j as f64 / OFFSETS as f64;
            if history + delta > span * (1.0 + 1e-12) {
                continue;
            }
            let nmat = build_n(&times, delta, model)?;
            let smin = smallest_singular_value(&nmat);
            if !(smin > 1e-14) {
                return Err(Error::RankDeficient { smallest_sv: smin });
            }
            samples.push((history + delta, (1.0 / smin).ln()));
        }
    }
    if samples.is_empty() {
        return Err(Error::Config("no admissible sample pattern inside the sampling window".into()));
    }
    let cnt = samples.len() as f64;
    let ms = samples.iter().map(|s| s.0).sum::<f64>() / cnt;
    let ml = samples.iter().map(|s| s.1).sum::<f64>() / cnt;
    let sxx: f64 = samples.iter().map(|s| (s.0 - ms).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - ms) * (s.1 - ml)).sum();
    let sigma1 = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let c1 = PINV_INFLATION
        * samples
            .iter()
            .map(|&(s, lg)| (lg - sigma1 * s).exp())
            .fold(0.0, f64::max);

    let c2 = c * spectral_norm(&model.a);
    let sigma2 = sigma;
    Ok(EnvelopeConstants {
        c_bar,
        sigma_hat,
        c,
        sigma,
        c1,
        sigma1,
        c2,
        sigma2,
        sigma_bar: (sigma1 + sigma).max(sigma1 + sigma2),
        gap_floor,
        span,
    })
}

/// Output dwell bound. With `X = |v|/|w|`, `v = ‖N‖(ỹ − ỹ(t_k))`, `w = Nx̃`:
/// `X' ≤ e^{σ̄s}(H₁ + H₂X + H₃X²)` where
/// `H₃ = 2cc₁‖L‖`, `H₂ = 2c₁c₂ + cc₁(‖A‖ + 2‖CL‖ + 2‖L‖‖C‖)`,
/// `H₁ = cc₁(‖CA‖ + 2‖CL‖‖C‖)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDwell {
    pub envelope: EnvelopeConstants,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub a1_env: f64,
    pub a2: f64,
    pub a3: f64,
    pub growth: GrowthBound,
    pub t_d: f64,
    pub floor_consistent: bool,
    /// Minimum output gap enforced by the sampler, if any.
    pub enforced_gap: Option<f64>,
}

impl OutputDwell {
    /// Guaranteed smallest output gap.
    pub fn bound(&self) -> f64 {
        self.enforced_gap.map_or(self.t_d, |g| g.max(self.t_d))
    }
}

pub fn dwell_time_output(model: &ErrorModel, envelope: EnvelopeConstants, alpha: f64, plan: &SamplingPlan, period: f64) -> Result<OutputDwell> {
    let a_norm = spectral_norm(&model.a);
    let l_norm = spectral_norm(&model.l);
    let c_norm = spectral_norm(&model.c);
    let ca = spectral_norm(&(&model.c * &model.a));
    let cl = spectral_norm(&(&model.c * &model.l));
    let cc1 = envelope.c * envelope.c1;
    let h3 = 2.0 * cc1 * l_norm;
    let h2 = 2.0 * envelope.c1 * envelope.c2 + cc1 * (a_norm + 2.0 * cl + 2.0 * l_norm * c_norm);
    let h1 = cc1 * (ca + 2.0 * cl * c_norm);
    if !(h3 > 0.0) {
        return Err(Error::Config("output injection gain L must be nonzero".into()));
    }
    let a1_env = h3 * (envelope.sigma_bar * plan.history_span(period)).exp();
    let (a2, a3) = (h2 / h3, h1 / h3);
    let growth = growth_bound(a1_env, a2, a3, envelope.sigma_bar)?;
    let t_d = growth.crossing_time(alpha);
    Ok(OutputDwell {
        floor_consistent: t_d >= envelope.gap_floor,
        envelope,
        h1,
        h2,
        h3,
        a1_env,
        a2,
        a3,
        growth,
        t_d,
        enforced_gap: None,
    })
}

/// Input dwell bound with `X = |K(z − z(τ_j))|/(|z| + |x̃|)`:
/// `X' ≤ b₅(X² + b₆X + b₇)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDwell {
    pub b: [f64; 8],
    pub beta: f64,
    pub growth: GrowthBound,
    pub tau_d: f64,
}

pub fn input_b_constants(inp: &DesignInputs, alpha: f64) -> [f64; 7] {
    let n = |m: &Mat| spectral_norm(m);
    let k_norm = n(&inp.k);
    let c_norm = n(&inp.c);
    let b1 = n(&(&inp.k * &inp.a)) + 2.0 * n(&(&inp.k * &inp.b)) * k_norm + 2.0 * n(&(&inp.k * &inp.l)) * (alpha + c_norm);
    let b2 = 2.0 * n(&(&inp.k * &inp.b));
    let b3 = n(&inp.a) + 2.0 * n(&inp.b) * k_norm + 4.0 * n(&inp.l) * (alpha + c_norm);
    let b4 = 2.0 * n(&inp.b);
    [b1, b2, b3, b4, b4, (b2 + b3) / b4, b1 / b4]
}

pub fn dwell_time_input(inp: &DesignInputs, alpha: f64, beta_c: f64, beta_o: f64) -> Result<InputDwell> {
    let [b1, b2, b3, b4, b5, b6, b7] = input_b_constants(inp, alpha);
    let beta = beta_c.min(beta_o);
    let growth = growth_bound(b5, b6, b7, 0.0)?;
    Ok(InputDwell {
        b: [b1, b2, b3, b4, b5, b6, b7, growth.a4],
        beta,
        tau_d: growth.crossing_time(beta),
        growth,
    })
}

/// Published values to cross-check against; each one is optional.
#[derive(Debug, Clone, Default)]
pub struct Reference {
    pub p_o: Option<Mat>,
    pub p_c: Option<Mat>,
    pub alpha: Option<f64>,
    pub beta_c: Option<f64>,
    pub xi_o: Option<f64>,
    pub chi_o: Option<f64>,
    pub xi_c: Option<f64>,
    pub chi_c: Option<f64>,
    pub r_y: Option<f64>,
    pub r_u: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Design {
    pub inputs: DesignInputs,
    pub constants: DesignConstants,
    pub output_dwell: OutputDwell,
    pub input_dwell: InputDwell,
}

impl Design {
    pub fn model(&self) -> ErrorModel {
        ErrorModel {
            a: self.inputs.a.clone(),
            c: self.inputs.c.clone(),
            l: self.inputs.l.clone(),
        }
    }

    pub fn nu_law(&self) -> NuLawConfig {
        let dc = &self.constants;
        NuLawConfig {
            r_y: dc.r_y,
            delta_y: self.inputs.delta_y,
            lmin_po: dc.lmin_po,
            lmax_po: dc.lmax_po,
            chi_o: dc.chi_o,
            xi_o: dc.xi_o,
            c_norm: dc.c_norm,
        }
    }

    pub fn mu_law(&self) -> MuLawConfig {
        let dc = &self.constants;
        MuLawConfig {
            r_u: dc.r_u,
            delta_u: self.inputs.delta_u,
            lmin_pc: dc.lmin_pc,
            lmax_pc: dc.lmax_pc,
            chi_c: dc.chi_c,
            xi_c: dc.xi_c,
            zeta1: dc.zeta1,
            zeta2: dc.zeta2,
            k_norm: dc.k_norm,
            r_y: dc.r_y,
            delta_y: self.inputs.delta_y,
        }
    }

    /// Horizon over which ν shrinks by `factor` at the slowest admissible rate.
    pub fn suggested_t_end(&self, factor: f64) -> f64 {
        let rate = self.constants.xi_o / 2.0;
        (1.0 / factor).ln() / rate
    }
}

pub fn design(inputs: &DesignInputs) -> Result<Design> {
    let constants = derive_constants(inputs)?;
    let model = ErrorModel {
        a: inputs.a.clone(),
        c: inputs.c.clone(),
        l: inputs.l.clone(),
    };
    let floor = inputs.gap_floor.unwrap_or(inputs.period / 100.0);
    let envelope = envelope_constants(&model, &constants.plan, inputs.period, floor)?;
    let mut output_dwell = dwell_time_output(&model, envelope, constants.alpha, &constants.plan, inputs.period)?;
    if inputs.time_regularization {
        output_dwell.enforced_gap = Some(floor);
    }
    let input_dwell = dwell_time_input(inputs, constants.alpha, constants.beta_c, constants.beta_o)?;
    Ok(Design {
        inputs: inputs.clone(),
        constants,
        output_dwell,
        input_dwell,
    })
}

/// One value of the machine-readable report.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportValue {
    Num(f64),
    Int(i64),
    Bool(bool),
    Text(String),
    Matrix(Vec<Vec<f64>>),
}

impl From<f64> for ReportValue {
    fn from(v: f64) -> Self {
        ReportValue::Num(v)
    }
}

impl From<bool> for ReportValue {
    fn from(v: bool) -> Self {
        ReportValue::Bool(v)
    }
}

impl From<usize> for ReportValue {
    fn from(v: usize) -> Self {
        ReportValue::Int(v as i64)
    }
}

impl From<u32> for ReportValue {
    fn from(v: u32) -> Self {
        ReportValue::Int(v as i64)
    }
}

impl From<&str> for ReportValue {
    fn from(v: &str) -> Self {
        ReportValue::Text(v.to_string())
    }
}

impl From<&Mat> for ReportValue {
    fn from(m: &Mat) -> Self {
        ReportValue::Matrix((0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect())
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        let s = format!("{v:?}");
        if s.contains(['.', 'e', 'E']) { s } else { format!("{s}.0") }
    }
}

impl std::fmt::Display for ReportValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReportValue::Num(v) => f.write_str(&fmt_num(*v)),
            ReportValue::Int(v) => write!(f, "{v}"),
            ReportValue::Bool(v) => write!(f, "{v}"),
            ReportValue::Text(s) => write!(f, "{}", toml::Value::String(s.clone())),
            ReportValue::Matrix(rows) => {
                let body: Vec<String> = rows
                    .iter()
                    .map(|r| format!("[{}]", r.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(", ")))
                    .collect();
                write!(f, "[{}]", body.join(", "))
            }
        }
    }
}

/// Ordered `name = value` document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, ReportValue)>,
}

impl Report {
    pub fn push(&mut self, name: &str, value: impl Into<ReportValue>) {
        self.entries.push((name.to_string(), value.into()));
    }

    pub fn get(&self, name: &str) -> Option<&ReportValue> {
        self.entries.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    pub fn num(&self, name: &str) -> Option<f64> {
        match self.get(name)? {
            ReportValue::Num(v) => Some(*v),
            ReportValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn flag(&self, name: &str) -> Option<bool> {
        match self.get(name)? {
            ReportValue::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut report = Report::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Parse(format!("line {}: expected `name = value`", lineno + 1)))?;
            let doc: toml::Table = toml::from_str(&format!("v = {raw}"))
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let value = match &doc["v"] {
                toml::Value::Float(v) => ReportValue::Num(*v),
                toml::Value::Integer(v) => ReportValue::Int(*v),
                toml::Value::Boolean(v) => ReportValue::Bool(*v),
                toml::Value::String(s) => ReportValue::Text(s.clone()),
                toml::Value::Array(rows) => ReportValue::Matrix(
                    rows.iter()
                        .map(|r| {
                            r.as_array()
                                .ok_or_else(|| Error::Parse(format!("line {}: matrix rows must be arrays", lineno + 1)))?
                                .iter()
                                .map(|x| {
                                    x.as_float()
                                        .or_else(|| x.as_integer().map(|i| i as f64))
                                        .ok_or_else(|| Error::Parse(format!("line {}: non-numeric entry", lineno + 1)))
                                })
                                .collect::<Result<Vec<f64>>>()
                        })
                        .collect::<Result<Vec<_>>>()?,
                ),
                other => return Err(Error::Parse(format!("line {}: unsupported value {other}", lineno + 1))),
            };
            report.entries.push((key.trim().to_string(), value));
        }
        Ok(report)
    }
}

fn rel_gap(ours: f64, published: f64) -> f64 {
    (ours - published).abs() / published.abs().max(f64::MIN_POSITIVE)
}

/// Relative tolerance for agreement with a two- or three-digit published value.
const REFERENCE_TOL: f64 = 0.02;

impl Design {
    pub fn report(&self, reference: &Reference) -> Report {
        let d = &self.constants;
        let i = &self.inputs;
        let mut r = Report::default();
        r.push("n", d.n);
        r.push("m", d.m);
        r.push("p", d.p);
        r.push("P_o", &d.p_o);
        r.push("P_c", &d.p_c);
        if let Some(dec) = i.lyapunov_decimals {
            r.push("lyapunov_decimals", dec);
        }
        r.push("lambda_min_P_o", d.lmin_po);
        r.push("lambda_max_P_o", d.lmax_po);
        r.push("lambda_min_P_c", d.lmin_pc);
        r.push("lambda_max_P_c", d.lmax_pc);
        r.push("lambda_min_Q_o", d.lmin_qo);
        r.push("lambda_max_Q_o", d.lmax_qo);
        r.push("lambda_min_Q_c", d.lmin_qc);
        r.push("lambda_max_Q_c", d.lmax_qc);
        r.push("eps_o", i.eps_o);
        r.push("eps_c", i.eps_c);
        r.push("alpha", d.alpha);
        r.push("beta_c", d.beta_c);
        r.push("beta_o", d.beta_o);
        r.push("beta_tilde", i.beta_tilde);
        r.push("xi_o", d.xi_o);
        r.push("xi_c", d.xi_c);
        r.push("chi_o", d.chi_o);
        r.push("chi_c", d.chi_c);
        r.push("zeta_1", d.zeta1);
        r.push("zeta_2", d.zeta2);
        r.push("rho_bar", i.rho_bar);
        r.push("rho_bar_u", i.rho_bar_u);
        r.push("T", i.period);
        r.push("all_real_eigenvalues", d.spectral.all_real_eig);
        r.push("omega", d.spectral.omega);
        match d.plan {
            SamplingPlan::Standard { eta } => {
                r.push("sampling", "standard");
                r.push("eta", eta);
            }
            SamplingPlan::Relaxed { eta_star, window, .. } => {
                r.push("sampling", "relaxed");
                r.push("eta_star", eta_star);
                r.push("window", window);
            }
        }
        r.push("output.ratio_R_over_Delta", d.output_budget.levels);
        r.push("output.R_y", d.r_y);
        r.push("output.Delta_y", i.delta_y);
        r.push("output.bits", d.output_budget.bits);
        r.push("input.ratio_R_over_Delta", d.input_budget.levels);
        r.push("input.R_u", d.r_u);
        r.push("input.Delta_u", i.delta_u);
        r.push("input.bits", d.input_budget.bits);

        let o = &self.output_dwell;
        let f = &o.envelope;
        r.push("dwell.output.c_bar", f.c_bar);
        r.push("dwell.output.sigma_hat", f.sigma_hat);
        r.push("dwell.output.c", f.c);
        r.push("dwell.output.sigma", f.sigma);
        r.push("dwell.output.c1", f.c1);
        r.push("dwell.output.sigma1", f.sigma1);
        r.push("dwell.output.c2", f.c2);
        r.push("dwell.output.sigma2", f.sigma2);
        r.push("dwell.output.sigma_bar", f.sigma_bar);
        r.push("dwell.output.H1", o.h1);
        r.push("dwell.output.H2", o.h2);
        r.push("dwell.output.H3", o.h3);
        r.push("dwell.output.a1_envelope", o.a1_env);
        r.push("dwell.output.a2", o.a2);
        r.push("dwell.output.a3", o.a3);
        r.push("dwell.output.a4_envelope", o.growth.a4);
        r.push("dwell.output.r", o.growth.r);
        r.push("dwell.output.t_tilde", o.growth.t_tilde);
        r.push("dwell.output.t_D", o.t_d);
        r.push("dwell.output.gap_floor", f.gap_floor);
        r.push("dwell.output.gap_floor_consistent", o.floor_consistent);
        r.push("dwell.output.time_regularization", o.enforced_gap.is_some());
        r.push("dwell.output.bound", o.bound());
        let n = &self.input_dwell;
        for (j, b) in n.b.iter().enumerate() {
            r.push(&format!("dwell.input.b{}", j + 1), *b);
        }
        r.push("dwell.input.beta", n.beta);
        r.push("dwell.input.r", n.growth.r);
        r.push("dwell.input.tau_D", n.tau_d);
        r.push("suggested_t_end", self.suggested_t_end(1e-4));
        r.push(
            "note",
            "slower sampling (larger T or smaller alpha, beta) needs more quantization levels for the same contraction",
        );
        self.push_reference_checks(&mut r, reference);
        r
    }

    fn push_reference_checks(&self, r: &mut Report, reference: &Reference) {
        let d = &self.constants;
        let i = &self.inputs;
        let scalar = |r: &mut Report, name: &str, ours: f64, published: Option<f64>| {
            if let Some(v) = published {
                r.push(&format!("check.{name}.published"), v);
                r.push(&format!("check.{name}.consistent"), rel_gap(ours, v) <= REFERENCE_TOL);
            }
        };
        scalar(r, "alpha", d.alpha, reference.alpha);
        scalar(r, "beta_c", d.beta_c, reference.beta_c);
        scalar(r, "xi_o", d.xi_o, reference.xi_o);
        scalar(r, "chi_o", d.chi_o, reference.chi_o);
        scalar(r, "xi_c", d.xi_c, reference.xi_c);
        scalar(r, "chi_c", d.chi_c, reference.chi_c);
        scalar(r, "R_y", d.r_y, reference.r_y);
        scalar(r, "R_u", d.r_u, reference.r_u);

        let acl = &i.a + &i.b * &i.k;
        let aobs = &i.a - &i.l * &i.c;
        let lyap = |r: &mut Report, name: &str, p: &Option<Mat>, m: &Mat, q: &Mat| {
            if let Some(p) = p {
                let res = spectral_norm(&(m.transpose() * p + p * m + q)) / spectral_norm(q);
                r.push(&format!("check.{name}.published"), p);
                r.push(&format!("check.{name}.relative_residual"), res);
                // Entrywise distance to the exact solution, so a rounded print still passes.
                let consistent = solve_lyapunov(m, q)
                    .map(|exact| (p - &exact).amax() / exact.amax() <= REFERENCE_TOL)
                    .unwrap_or(false);
                r.push(&format!("check.{name}.consistent"), consistent);
            }
        };
        lyap(r, "P_o", &reference.p_o, &aobs, &i.q_o);
        lyap(r, "P_c", &reference.p_c, &acl, &i.q_c);

        // The ε_c that the published ξ_c would need, given the computed P_c.
        if let Some(xi_pub) = reference.xi_c {
            let implied = 1.0 - xi_pub * d.lmax_pc / (i.xi_frac_c * d.lmin_qc);
            r.push("check.eps_c.implied_by_xi_c", implied);
            r.push("check.eps_c.consistent", (implied - i.eps_c).abs() <= 0.01);
        }
        if let Some(xi_pub) = reference.xi_o {
            let implied = 1.0 - xi_pub * d.lmax_po / (i.xi_frac_o * d.lmin_qo);
            r.push("check.eps_o.implied_by_xi_o", implied);
            r.push("check.eps_o.consistent", (implied - i.eps_o).abs() <= 0.01);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat_from_rows;
    use proptest::prelude::{prop_assert, prop_oneof, proptest, Just};

    pub(crate) fn unstable_plant_inputs() -> DesignInputs {
        DesignInputs {
            a: Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.5]),
            b: Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            c: Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            k: Mat::from_row_slice(1, 2, &[-6.0, -4.5]),
            l: Mat::from_row_slice(2, 1, &[4.0, 3.0]),
            q_o: Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            q_c: Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            eps_o: 0.75,
            eps_c: 0.85,
            xi_frac_o: 0.1,
            xi_frac_c: 0.1,
            beta_tilde: 1.0,
            rho_bar: 0.975,
            rho_bar_u: 0.85,
            period: 2.0,
            delta_y: 1.0,
            delta_u: 1.0,
            eta_star: None,
            gap_floor: None,
            lyapunov_decimals: Some(2),
            time_regularization: false,
        }
    }

    #[test]
    fn unstable_plant_output_side() {
        let d = derive_constants(&unstable_plant_inputs()).unwrap();
        let want = [[1.63, -1.47], [-1.47, 1.93]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((d.p_o[(i, j)] - want[i][j]).abs() <= 0.01);
            }
        }
        assert!((d.alpha - 0.09).abs() <= 0.005, "alpha {}", d.alpha);
        assert!((d.xi_o - 0.0038).abs() <= 2e-4, "xi_o {}", d.xi_o);
        assert!((d.chi_o - 37.54).abs() <= 0.2, "chi_o {}", d.chi_o);
        assert!((d.output_budget.levels - 126.4).abs() <= 1.0);
        assert_eq!(d.output_budget.bits, 7);
        assert_eq!(d.plan, SamplingPlan::Standard { eta: 2 });
    }

    #[test]
    fn unrounded_certificate_shifts_chi_o() {
        let mut inp = unstable_plant_inputs();
        inp.lyapunov_decimals = None;
        let d = derive_constants(&inp).unwrap();
        assert!((d.chi_o - 37.944).abs() < 1e-3);
        assert!((d.output_budget.levels - 126.36).abs() < 0.01);
    }

    #[test]
    fn unstable_plant_input_side() {
        let inp = unstable_plant_inputs();
        let d = derive_constants(&inp).unwrap();
        assert!((d.beta_c - 0.38).abs() <= 0.01, "beta_c {}", d.beta_c);
        let acl = &inp.a + &inp.b * &inp.k;
        let res = acl.transpose() * &d.p_c + &d.p_c * &acl + &inp.q_c;
        assert!(spectral_norm(&res) <= 1e-10);
        let alt = side_constants(&d.p_c, &inp.q_c, &inp.b, 0.75, 0.1).unwrap();
        assert!((alt.xi - 0.0048).abs() <= 3e-4, "xi_c {}", alt.xi);
        assert!((alt.chi - 9.94).abs() <= 0.2, "chi_c {}", alt.chi);
    }

    #[test]
    fn dual_path_scalars() {
        let mut inp = unstable_plant_inputs();
        inp.lyapunov_decimals = None;
        let d = derive_constants(&inp).unwrap();
        // straight-line re-evaluation
        let aobs = &inp.a - &inp.l * &inp.c;
        let p_o = solve_lyapunov(&aobs, &inp.q_o).unwrap();
        let po_l = (&p_o * &inp.l).norm();
        let ev_q = inp.q_o.clone().symmetric_eigenvalues();
        let lq = ev_q[0].min(ev_q[1]);
        let ev_p = p_o.clone().symmetric_eigenvalues();
        let (pmin, pmax) = (ev_p[0].min(ev_p[1]), ev_p[0].max(ev_p[1]));
        let alpha = 0.75 * lq / (2.0 * po_l);
        let xi_o = 0.1 * 0.25 * lq / pmax;
        let chi_o = 2.0 * po_l / (0.25 * lq - xi_o * pmax);
        let levels = chi_o / ((pmin / pmax).sqrt() * 0.975);
        assert_eq!(d.alpha, alpha);
        assert_eq!(d.xi_o, xi_o);
        assert!((d.chi_o - chi_o).abs() <= 4.0 * f64::EPSILON * chi_o);
        assert!((d.output_budget.levels - levels).abs() <= 8.0 * f64::EPSILON * levels);
        let p_c = &d.p_c;
        let pcb = (p_c * &inp.b).norm();
        assert!((d.beta_c - 0.85 * lq / (2.0 * pcb)).abs() <= 2.0 * f64::EPSILON);
    }

    #[test]
    fn assumption_failures() {
        let mut inp = unstable_plant_inputs();
        inp.k = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(matches!(derive_constants(&inp), Err(Error::NotHurwitz(_))));
        let mut inp = unstable_plant_inputs();
        inp.a = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        inp.l = Mat::from_row_slice(2, 1, &[4.0, 0.0]);
        inp.k = Mat::from_row_slice(1, 2, &[0.0, -4.5]);
        assert!(derive_constants(&inp).is_err());
        let mut inp = unstable_plant_inputs();
        inp.k = Mat::zeros(2, 2);
        assert!(matches!(derive_constants(&inp), Err(Error::Dimension(_))));
        let mut inp = unstable_plant_inputs();
        inp.xi_frac_o = 1.0;
        assert!(matches!(derive_constants(&inp), Err(Error::Config(_))));
    }

    #[test]
    fn eta_star_cases() {
        assert_eq!(eta_star_rule(2, 0.0, 1.0), 3);
        assert_eq!(eta_star_rule(2, 2.0 * std::f64::consts::PI, 1.0), 4);
    }

    #[test]
    fn growth_bound_closed_form_case() {
        let l = growth_bound(1.0, 1.0, 0.4, 0.0).unwrap();
        assert_eq!(l.r, 1);
        assert_eq!(l.a4, 0.5);
        assert!((l.t_tilde - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(growth_bound(2.0, 2.0, 2.0, 0.3).unwrap().r, 1);
        assert_eq!(growth_bound(1.0, 1.0, 10.0, 0.0).unwrap().r, 7);
    }

    fn rk4_comparison(a1: f64, a2: f64, a3: f64, s: f64, t: f64) -> f64 {
        let f = |tt: f64, z: f64| a1 * (s * tt).exp() * (z * z + a2 * z + a3);
        let steps = 4000;
        let h = t / steps as f64;
        let mut z = 0.0;
        for i in 0..steps {
            let tt = i as f64 * h;
            let k1 = f(tt, z);
            let k2 = f(tt + h / 2.0, z + h / 2.0 * k1);
            let k3 = f(tt + h / 2.0, z + h / 2.0 * k2);
            let k4 = f(tt + h, z + h * k3);
            z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        z
    }

    #[test]
    fn simplified_tan_form_is_not_a_majorant() {
        let l = growth_bound(1.0, 1.0, 0.4, 0.0).unwrap();
        let t = 0.95 * l.t_tilde;
        let z = rk4_comparison(1.0, 1.0, 0.4, 0.0, t);
        assert!(z > l.simplified_bound(t));
        assert!(z <= l.bound(t));
    }

    #[test]
    fn crossing_monotone_in_level_and_a4() {
        let l = growth_bound(1.0, 2.0, 3.0, 0.2).unwrap();
        assert_eq!(l.crossing_time(0.0), 0.0);
        assert!(l.crossing_time(0.1) < l.crossing_time(0.2));
        let faster = growth_bound(2.0, 2.0, 3.0, 0.2).unwrap();
        assert!(faster.a4 > l.a4);
        assert!(faster.crossing_time(0.1) < l.crossing_time(0.1));
    }

    #[test]
    fn exp_envelope_for_zero_matrix() {
        let (c_bar, sigma) = exp_envelope(&Mat::zeros(2, 2), 3.0).unwrap();
        assert_eq!(c_bar, 1.0);
        assert_eq!(sigma, 0.0);
    }

    #[test]
    fn envelope_constants_unstable_plant() {
        let inp = unstable_plant_inputs();
        let model = ErrorModel {
            a: inp.a.clone(),
            c: inp.c.clone(),
            l: inp.l.clone(),
        };
        let plan = SamplingPlan::Standard { eta: 2 };
        let f = envelope_constants(&model, &plan, 2.0, 0.02).unwrap();
        assert!(f.c.is_finite() && f.c1.is_finite() && f.c2.is_finite());
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..1000 {
            let g = rng.gen_range(0.02..2.0);
            let delta = rng.gen_range(1e-6..2.0);
            let nmat = build_n(&[0.0, -g], delta, &model).unwrap();
            let s = g + delta;
            assert!(spectral_norm(&nmat) <= f.c * (f.sigma * s).exp());
            let ninv = 1.0 / smallest_singular_value(&nmat);
            assert!(ninv <= f.c1 * (f.sigma1 * s).exp(), "pinv envelope at g = {g}, delta = {delta}");
        }
    }

    #[test]
    fn unstable_plant_dwell_bounds_positive() {
        let d = design(&unstable_plant_inputs()).unwrap();
        assert!(d.output_dwell.t_d > 0.0);
        assert!(d.input_dwell.tau_d > 0.0);
        assert!(d.input_dwell.beta <= d.constants.beta_c);
    }

    #[test]
    fn report_round_trip() {
        let d = design(&unstable_plant_inputs()).unwrap();
        let reference = Reference {
            p_c: Some(mat_from_rows(&[vec![2.5, 0.25], vec![0.25, 0.5]]).unwrap()),
            xi_c: Some(0.0048),
            chi_c: Some(9.94),
            r_u: Some(318.0),
            ..Default::default()
        };
        let rep = d.report(&reference);
        let text = rep.to_text();
        let back = Report::parse(&text).unwrap();
        assert_eq!(back, rep);
        assert_eq!(rep.flag("check.P_c.consistent"), Some(false));
        assert_eq!(rep.flag("check.eps_c.consistent"), Some(false));
        assert!((rep.num("check.eps_c.implied_by_xi_c").unwrap() - 0.75).abs() < 0.03);
        assert_eq!(rep.num("output.bits"), Some(7.0));
    }

    proptest! {
        #[test]
        fn growth_bound_dominates_comparison_ode(
            a1 in 0.05f64..3.0, a2 in 0.05f64..3.0, a3 in 0.0f64..3.0,
            s in prop_oneof![Just(0.0), 0.01f64..2.0], frac in 0.05f64..0.98,
        ) {
            let l = growth_bound(a1, a2, a3, s).unwrap();
            let t = frac * l.t_tilde;
            let z = rk4_comparison(a1, a2, a3, s, t);
            prop_assert!(z <= l.bound(t) * (1.0 + 1e-6) + 1e-9, "z = {z}, bound = {}", l.bound(t));
        }
    }
}
