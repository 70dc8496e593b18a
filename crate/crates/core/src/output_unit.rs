//! Output processing unit: sample history, the dead-beat-like estimator
//! `N_{k,η}(t) x̃(t) = Ỹ_{k,η} − Ψ_{k,η}(t) q(Ỹ_{k,η})`, the output event
//! function and the ν zoom law.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{exp_integral, mat_exp, spectral_norm, AugmentedExp, Mat, Vector};

/// `νmin`: the zoom never drops below this.
pub const NU_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OutputRecord {
    pub time: f64,
    pub ytilde: Vector,
    pub qval: Vector,
    pub zoom: f64,
}

/// The last `depth` transmitted output samples, newest first.
#[derive(Debug, Clone)]
pub struct OutputHistory {
    depth: usize,
    entries: VecDeque<OutputRecord>,
}

impl OutputHistory {
    pub fn new(depth: usize) -> Self {
        assert!(depth > 0, "history depth must be positive");
        Self {
            depth,
            entries: VecDeque::with_capacity(depth + 1),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.depth
    }

    pub fn push(&mut self, rec: OutputRecord) -> Result<()> {
        if let Some(last) = self.entries.front() {
            if !(rec.time > last.time) {
                return Err(Error::Interval(format!(
                    "output sample at {} does not follow {}",
                    rec.time, last.time
                )));
            }
        }
        self.entries.push_front(rec);
        self.entries.truncate(self.depth);
        Ok(())
    }

    pub fn latest(&self) -> Option<&OutputRecord> {
        self.entries.front()
    }

    pub fn oldest(&self) -> Option<&OutputRecord> {
        self.entries.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &OutputRecord> {
        self.entries.iter()
    }

    /// `t_k, t_{k-1}, …`.
    pub fn times(&self) -> Vec<f64> {
        self.entries.iter().map(|r| r.time).collect()
    }

    /// `Ỹ_{k,η}`.
    pub fn stacked_ytilde(&self) -> Vector {
        stack(self.entries.iter().map(|r| &r.ytilde))
    }

    /// `q_{ν_{k,η}}(Ỹ_{k,η})`.
    pub fn stacked_qval(&self) -> Vector {
        stack(self.entries.iter().map(|r| &r.qval))
    }

    fn require_full(&self) -> Result<()> {
        if self.is_full() {
            Ok(())
        } else {
            Err(Error::HistoryNotFull {
                have: self.entries.len(),
                need: self.depth,
            })
        }
    }
}

fn stack<'a>(parts: impl Iterator<Item = &'a Vector>) -> Vector {
    let parts: Vec<&Vector> = parts.collect();
    let len = parts.iter().map(|v| v.len()).sum();
    Vector::from_iterator(len, parts.into_iter().flat_map(|v| v.iter().cloned()))
}

/// Plant data the estimator needs.
#[derive(Debug, Clone)]
pub struct ErrorModel {
    pub a: Mat,
    pub c: Mat,
    pub l: Mat,
}

impl ErrorModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }
}

/// `ψ(s1, s2, s3) = C e^{A s1} ∫_{s2}^{s3} e^{-As} L ds`, evaluated in the
/// shifted form `C ∫_{s2-s1}^{s3-s1} e^{-Au} L du` so absolute time never
/// enters an exponential.
pub fn psi(s1: f64, s2: f64, s3: f64, model: &ErrorModel) -> Result<Mat> {
    if !(s1 <= s2 && s2 <= s3) {
        return Err(Error::Interval(format!("psi needs s1 <= s2 <= s3, got ({s1}, {s2}, {s3})")));
    }
    Ok(&model.c * exp_integral(&model.a, &model.l, s2 - s1, s3 - s1)?)
}

/// `N_{k,η}(t)` with row blocks `C e^{-A(t - t_{k-i})}`; `times` newest first.
pub fn build_n(times: &[f64], t: f64, model: &ErrorModel) -> Result<Mat> {
    let (n, p) = (model.n(), model.p());
    let mut out = Mat::zeros(p * times.len(), n);
    for (i, &ti) in times.iter().enumerate() {
        let blk = &model.c * mat_exp(&model.a, -(t - ti))?;
        out.view_mut((i * p, 0), (p, n)).copy_from(&blk);
    }
    Ok(out)
}

/// The block lower-triangular `Ψ_{k,η}(t)`; `times` newest first.
pub fn build_psi(times: &[f64], t: f64, model: &ErrorModel) -> Result<Mat> {
    let eta = times.len();
    let p = model.p();
    if times.is_empty() || !(t >= times[0]) || times.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::Interval(format!(
            "Psi needs t >= t_k > t_(k-1) > ..., got t = {t}, times = {times:?}"
        )));
    }
    let mut out = Mat::zeros(p * eta, p * eta);
    for i in 0..eta {
        let first = psi(times[i], times[0], t, model)?;
        out.view_mut((i * p, 0), (p, p)).copy_from(&first);
        for j in 1..=i {
            let blk = psi(times[i], times[j], times[j - 1], model)?;
            out.view_mut((i * p, j * p), (p, p)).copy_from(&blk);
        }
    }
    Ok(out)
}

/// `f(t, Ỹ) = Ỹ − Ψ(t) q(Ỹ)`.
pub fn f_vector(history: &OutputHistory, t: f64, model: &ErrorModel) -> Result<Vector> {
    history.require_full()?;
    let psi_m = build_psi(&history.times(), t, model)?;
    Ok(history.stacked_ytilde() - psi_m * history.stacked_qval())
}

/// `g(t) = ‖N(t)‖·|ỹ(t) − ỹ(t_k)| − α|f(t, Ỹ)|`; the sample fires when `g`
/// crosses zero from below.
pub fn output_event_value(
    history: &OutputHistory,
    t: f64,
    ytilde_now: &Vector,
    alpha: f64,
    model: &ErrorModel,
) -> Result<f64> {
    history.require_full()?;
    let latest = history.latest().unwrap();
    let n = build_n(&history.times(), t, model)?;
    let f = f_vector(history, t, model)?;
    Ok(spectral_norm(&n) * (ytilde_now - &latest.ytilde).norm() - alpha * f.norm())
}

/// Interval-constant parts of `N` and `f` for fast evaluation on
/// `[t_k, t_{k+1})`. With `δ = t − t_k` and `d_i = t_k − t_{k-i}`,
/// `N(t) = N(t_k) e^{-Aδ}` and the only time-varying part of `f` is
/// `N(t_k) ∫_0^δ e^{-Au} L du · q_k`.
#[derive(Debug, Clone)]
pub struct IntervalCache {
    t_k: f64,
    n_at_tk: Mat,
    f_const: Vector,
    q_k: Vector,
    ytilde_k: Vector,
    aug: AugmentedExp,
}

#[derive(Debug, Clone)]
pub struct EventEval {
    pub value: f64,
    pub n_norm: f64,
    pub n_min_sv: f64,
    pub f: Vector,
    pub n: Mat,
}

impl IntervalCache {
    pub fn new(history: &OutputHistory, model: &ErrorModel) -> Result<Self> {
        history.require_full()?;
        let times = history.times();
        let t_k = times[0];
        let n_at_tk = build_n(&times, t_k, model)?;
        // Ψ(t_k) has a zero first block column, so f(t_k) carries exactly the
        // constant part.
        let f_const = f_vector(history, t_k, model)?;
        let latest = history.latest().unwrap();
        Ok(Self {
            t_k,
            n_at_tk,
            f_const,
            q_k: latest.qval.clone(),
            ytilde_k: latest.ytilde.clone(),
            aug: AugmentedExp::new(&model.a, &model.l),
        })
    }

    pub fn t_k(&self) -> f64 {
        self.t_k
    }

    pub fn n_and_f(&self, t: f64) -> (Mat, Vector) {
        let (phi, integral) = self.aug.eval(t - self.t_k);
        self.n_and_f_from(&phi, &integral)
    }

    /// `N` and `f` from a precomputed `(e^{-Aδ}, ∫_0^δ e^{-Au}L du)`.
    pub fn n_and_f_from(&self, phi: &Mat, integral: &Mat) -> (Mat, Vector) {
        let n = &self.n_at_tk * phi;
        let f = &self.f_const - &self.n_at_tk * (integral * &self.q_k);
        (n, f)
    }

    pub fn eval(&self, t: f64, ytilde_now: &Vector, alpha: f64) -> EventEval {
        let (phi, integral) = self.aug.eval(t - self.t_k);
        self.eval_from(&phi, &integral, ytilde_now, alpha)
    }

    pub fn eval_from(&self, phi: &Mat, integral: &Mat, ytilde_now: &Vector, alpha: f64) -> EventEval {
        let (n, f) = self.n_and_f_from(phi, integral);
        let (n_norm, n_min_sv) = if n.ncols() == 1 {
            let v = n.norm();
            (v, v)
        } else if n.ncols() == 2 {
            two_column_singular_values(&n)
        } else {
            let sv = n.singular_values();
            let smin = if n.nrows() < n.ncols() { 0.0 } else { sv.min() };
            (sv.max(), smin)
        };
        let value = n_norm * (ytilde_now - &self.ytilde_k).norm() - alpha * f.norm();
        EventEval {
            value,
            n_norm,
            n_min_sv,
            f,
            n,
        }
    }
}

/// `(σ_max, σ_min)` of a matrix with two columns. The product `σ_max σ_min` is
/// the root of the sum of squared 2×2 minors, which keeps `σ_min` accurate
/// when the columns are nearly parallel.
fn two_column_singular_values(n: &Mat) -> (f64, f64) {
    let rows = n.nrows();
    let mut minors = 0.0;
    for i in 0..rows {
        for j in i + 1..rows {
            let d = n[(i, 0)] * n[(j, 1)] - n[(i, 1)] * n[(j, 0)];
            minors += d * d;
        }
    }
    let prod = minors.sqrt();
    let frob2 = n.norm_squared();
    let disc = (frob2 * frob2 - 4.0 * minors).max(0.0).sqrt();
    let smax = (0.5 * (frob2 + disc)).sqrt();
    let smin = if smax > 0.0 { prod / smax } else { 0.0 };
    (smax, smin)
}

/// How a sample instant was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    Warmup,
    Event,
    Persistence,
    Window,
    Init,
    NuJump,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::Warmup => "warmup",
            Trigger::Event => "event",
            Trigger::Persistence => "persistence",
            Trigger::Window => "window",
            Trigger::Init => "init",
            Trigger::NuJump => "nu_jump",
        }
    }
}

/// Output sampling rule: plain persistence (all eigenvalues real) or the
/// sliding-window rule over `η*` samples.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputSamplingMode {
    Persistence { period: f64 },
    Window { eta_star: usize, window: f64 },
}

#[derive(Debug, Clone)]
pub struct OutputSamplerConfig {
    pub alpha: f64,
    pub depth: usize,
    pub mode: OutputSamplingMode,
}

impl OutputSamplerConfig {
    /// Latest admissible instant for the next sample.
    pub fn deadline(&self, history: &OutputHistory) -> Result<(f64, Trigger)> {
        let t_k = history
            .latest()
            .ok_or(Error::HistoryNotFull { have: 0, need: self.depth })?
            .time;
        match self.mode {
            OutputSamplingMode::Persistence { period } => Ok((t_k + period, Trigger::Persistence)),
            OutputSamplingMode::Window { window, .. } => {
                history.require_full()?;
                let oldest = history.oldest().unwrap().time;
                let d = oldest + window;
                if !(d > t_k) {
                    return Err(Error::Config(format!(
                        "sampling window {window} is exhausted at t = {t_k}"
                    )));
                }
                Ok((d, Trigger::Window))
            }
        }
    }
}

/// Window length `min{(2π/ω)(η* − 2(n−1)), η* T}` of the relaxed rule.
pub fn relaxed_window(n: usize, eta_star: usize, omega: f64, period: f64) -> Result<f64> {
    let base = 2 * (n - 1);
    if eta_star <= base {
        return Err(Error::Config(format!(
            "eta* = {eta_star} must exceed 2(n-1) = {base}"
        )));
    }
    let cap = eta_star as f64 * period;
    if omega <= 0.0 {
        return Ok(cap);
    }
    Ok((2.0 * std::f64::consts::PI / omega * (eta_star - base) as f64).min(cap))
}

/// Constants of the ν update.
#[derive(Debug, Clone)]
pub struct NuLawConfig {
    pub r_y: f64,
    pub delta_y: f64,
    pub lmin_po: f64,
    pub lmax_po: f64,
    pub chi_o: f64,
    pub xi_o: f64,
    pub c_norm: f64,
}

impl NuLawConfig {
    /// `Θ_{k+1}`.
    pub fn theta(&self, nu_k: f64, gap: f64) -> f64 {
        let ball = self.lmax_po * (self.chi_o * self.delta_y * nu_k).powi(2);
        let decay = (-self.xi_o * gap).exp() * self.ellipsoid_level(nu_k);
        ball.max(decay)
    }

    /// `λ_min(P_o) R_y² ν² / ‖C‖²`.
    pub fn ellipsoid_level(&self, nu: f64) -> f64 {
        self.lmin_po * (self.r_y * nu / self.c_norm).powi(2)
    }

    /// Smallest zoom whose ellipsoid contains every `|x̃| ≤ bound`.
    pub fn zoom_for_bound(&self, bound: f64) -> f64 {
        (self.c_norm * bound * (self.lmax_po / self.lmin_po).sqrt() / self.r_y).max(NU_FLOOR)
    }
}

/// `ν_{k+1} = (‖C‖/R_y) √(Θ_{k+1}/λ_min(P_o))`.
pub fn nu_update(nu_k: f64, gap: f64, law: &NuLawConfig) -> f64 {
    let theta = law.theta(nu_k, gap);
    (law.c_norm / law.r_y * (theta / law.lmin_po).sqrt()).max(NU_FLOOR)
}

/// Worst-case propagation of `|x̃|` through `x̃' = A x̃ − L q` with `q` held.
#[derive(Debug, Clone)]
pub struct ErrorBound {
    a: Mat,
    l: Mat,
    a_norm: f64,
    bound: f64,
}

const BOUND_CELLS: usize = 200;

impl ErrorBound {
    pub fn new(a: &Mat, l: &Mat, e0: f64) -> Self {
        Self {
            a: a.clone(),
            l: l.clone(),
            a_norm: spectral_norm(a),
            bound: e0,
        }
    }

    pub fn value(&self) -> f64 {
        self.bound
    }

    /// `bound ← ‖e^{A dt}‖ bound + (∫_0^{dt} ‖e^{Au} L‖ du) |q|`. The integral is
    /// over-estimated cell by cell with `‖e^{A(u+s)}L‖ ≤ e^{‖A‖s}‖e^{Au}L‖`.
    pub fn advance(&mut self, dt: f64, q_norm: f64) -> Result<f64> {
        if !(dt >= 0.0) {
            return Err(Error::Interval(format!("negative propagation step {dt}")));
        }
        let phi = spectral_norm(&mat_exp(&self.a, dt)?);
        let mut integral = 0.0;
        if q_norm > 0.0 && dt > 0.0 {
            let cell = dt / BOUND_CELLS as f64;
            let grow = (self.a_norm * cell).exp();
            let step = mat_exp(&self.a, cell)?;
            let mut e = Mat::identity(self.a.nrows(), self.a.ncols());
            for _ in 0..BOUND_CELLS {
                integral += spectral_norm(&(&e * &self.l)) * cell * grow;
                e = &step * e;
            }
        }
        self.bound = phi * self.bound + integral * q_norm;
        Ok(self.bound)
    }
}

/// `ν_η` from an initial bound `E0` on `|x̃(t_0)|`, the warm-up sample times
/// `t_0 … t_η` and the norms of the quantized values injected at `t_0 … t_{η-1}`.
pub fn nu_init(e0: f64, times: &[f64], q_norms: &[f64], model: &ErrorModel, law: &NuLawConfig) -> Result<f64> {
    if !(e0 >= 0.0 && e0.is_finite()) {
        return Err(Error::Config(format!("E0 = {e0} must be finite and nonnegative")));
    }
    if times.len() != q_norms.len() + 1 {
        return Err(Error::Dimension(format!(
            "{} sample times need {} injected values, got {}",
            times.len(),
            times.len() - 1,
            q_norms.len()
        )));
    }
    let mut bound = ErrorBound::new(&model.a, &model.l, e0);
    for (w, &q) in times.windows(2).zip(q_norms) {
        bound.advance(w[1] - w[0], q)?;
    }
    Ok(law.zoom_for_bound(bound.value()))
}
