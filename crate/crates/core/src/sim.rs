//! Closed-loop simulation of plant, observer-based controller and the two
//! event-triggered quantized channels.

use crate::design::Design;
use crate::error::{Error, Result};
use crate::input_unit::{
    input_event_value, k_star, mu_init, mu_update, nu_jump_check, InputSamplerConfig, MuLawConfig, MU_FLOOR,
};
use crate::linalg::{AugmentedExp, Mat, Vector};
use crate::output_unit::{
    nu_init, nu_update, ErrorBound, ErrorModel, EventEval, IntervalCache, NuLawConfig, OutputHistory,
    OutputRecord, OutputSamplerConfig, OutputSamplingMode, Trigger, NU_FLOOR,
};
use crate::quantizer::{quantize_dynamic, decode, QuantizerSpec, Symbol, ZoomState};
use crate::design::SamplingPlan;

/// Crossings are localized to this fraction of `T`.
pub const BISECTION_TOL: f64 = 1e-9;
/// `σ_min(N)` below this is reported as rank loss.
pub const RANK_WARN: f64 = 1e-8;
const LYAP_SLACK: f64 = 0.05;
const FALSI_STEPS: usize = 12;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub x0: Vector,
    pub z0: Vector,
    /// Bound on `|x(t_0) − z(t_0)|`; defaults to the actual value.
    pub e0: Option<f64>,
    pub t_end: f64,
    /// Integration step; defaults to `T/1000`.
    pub h: Option<f64>,
    /// Warm-up spacing; defaults to `T/10`, or `W/η*` under the window rule.
    pub h_warm: Option<f64>,
    /// Fixed warm-up zoom; by default each warm-up zoom covers the propagated bound.
    pub nu_warm: Option<f64>,
    /// Probe spacing; defaults to `T/20`.
    pub record_dt: Option<f64>,
    pub strict: bool,
}

impl SimConfig {
    pub fn new(x0: Vector, z0: Vector, t_end: f64) -> Self {
        Self {
            x0,
            z0,
            e0: None,
            t_end,
            h: None,
            h_warm: None,
            nu_warm: None,
            record_dt: None,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Warning {
    pub time: f64,
    pub channel: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct OutputEvent {
    pub k: usize,
    pub time: f64,
    pub trigger: Trigger,
    pub ytilde: Vector,
    pub symbol: Symbol,
    pub zoom: f64,
    pub decoded: Vector,
    pub wire: Vec<u8>,
    pub x: Vector,
    pub z: Vector,
}

#[derive(Debug, Clone)]
pub struct InputEvent {
    pub j: usize,
    pub time: f64,
    pub trigger: Trigger,
    pub unom: Vector,
    pub symbol: Symbol,
    pub zoom: f64,
    pub decoded: Vector,
    pub wire: Vec<u8>,
    /// `ν_{k*(τ_j)}`.
    pub nu_ref: f64,
    pub x: Vector,
    pub z: Vector,
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub t: f64,
    pub x: Vector,
    pub z: Vector,
    /// Applied input.
    pub u: Vector,
    pub nu: f64,
    /// `NaN` before `τ_0`.
    pub mu: f64,
    pub v_o: f64,
    pub v_c: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub probes: Vec<Probe>,
    pub outputs: Vec<OutputEvent>,
    pub inputs: Vec<InputEvent>,
    pub warnings: Vec<Warning>,
    pub eta: usize,
    pub nu_eta: f64,
    pub mu_0: f64,
    pub nu_floor_hits: usize,
    pub mu_floor_hits: usize,
    pub min_n_sv: f64,
    pub event_evaluations: u64,
}

impl Trajectory {
    /// Gaps `t_k − t_{k−1}` for `k ≥ η`.
    pub fn output_gaps(&self) -> Vec<f64> {
        self.outputs
            .windows(2)
            .filter(|w| w[1].k >= self.eta)
            .map(|w| w[1].time - w[0].time)
            .collect()
    }

    pub fn input_gaps(&self) -> Vec<f64> {
        self.inputs.windows(2).map(|w| w[1].time - w[0].time).collect()
    }

    pub fn count_outputs(&self, trigger: Trigger) -> usize {
        self.outputs.iter().filter(|e| e.trigger == trigger).count()
    }

    pub fn count_inputs(&self, trigger: Trigger) -> usize {
        self.inputs.iter().filter(|e| e.trigger == trigger).count()
    }

    pub fn last(&self) -> Option<&Probe> {
        self.probes.last()
    }
}

/// One classical RK4 step of `w' = M w + b`.
pub fn rk4_affine(m: &Mat, b: &Vector, w: &Vector, h: f64) -> Vector {
    let k1 = m * w + b;
    let k2 = m * (w + &k1 * (h / 2.0)) + b;
    let k3 = m * (w + &k2 * (h / 2.0)) + b;
    let k4 = m * (w + &k3 * h) + b;
    w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Closed-form update of `w' = M w + b` over `h`.
pub fn exact_affine_oracle(m: &Mat, b: &Vector, w: &Vector, h: f64) -> Result<Vector> {
    let n = m.nrows();
    let mut gen = Mat::zeros(n + 1, n + 1);
    gen.view_mut((0, 0), (n, n)).copy_from(m);
    gen.view_mut((0, n), (n, 1)).copy_from(b);
    let e = crate::linalg::mat_exp(&gen, h)?;
    let mut aug = Vector::zeros(n + 1);
    aug.rows_mut(0, n).copy_from(w);
    aug[n] = 1.0;
    Ok((e * aug).rows(0, n).into_owned())
}

fn fired(prev: f64, now: f64) -> bool {
    (prev < 0.0 && now >= 0.0) || (prev <= 0.0 && now > 0.0)
}

/// First firing instant in `(lo, hi]` to within `tol`, given that `g` fires at
/// `hi` relative to `prev = g(lo)`. Illinois steps, each kept at least `tol/2`
/// inside the bracket so the bracket itself closes.
pub fn locate(mut lo: f64, mut hi: f64, prev: f64, g_hi: f64, tol: f64, g: impl Fn(f64) -> f64) -> f64 {
    let (mut f_lo, mut f_hi) = (prev, g_hi);
    let mut side = 0i8;
    let mut iter = 0;
    while hi - lo > tol {
        let width = hi - lo;
        let mut m = if iter < FALSI_STEPS && f_hi.is_finite() && f_lo.is_finite() && f_hi > f_lo {
            lo - f_lo * width / (f_hi - f_lo)
        } else {
            0.5 * (lo + hi)
        };
        if !(m.is_finite()) {
            m = 0.5 * (lo + hi);
        }
        m = m.clamp(lo + 0.5 * tol, hi - 0.5 * tol);
        let v = g(m);
        if fired(prev, v) {
            hi = m;
            f_hi = v;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        } else {
            lo = m;
            f_lo = v;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        }
        iter += 1;
    }
    hi
}

/// Encoder and decoder copies of one zoom variable.
#[derive(Debug, Clone)]
struct ZoomPair {
    enc: ZoomState,
    dec: ZoomState,
}

impl ZoomPair {
    fn new(v: f64) -> Result<Self> {
        Ok(Self {
            enc: ZoomState::new(v)?,
            dec: ZoomState::new(v)?,
        })
    }

    fn set(&mut self, enc: f64, dec: f64, time: f64, channel: &'static str) -> Result<()> {
        if enc.to_bits() != dec.to_bits() {
            return Err(Error::Invariant {
                time,
                channel,
                detail: format!("encoder zoom {enc:e} and decoder zoom {dec:e} diverged"),
            });
        }
        self.enc.set(enc)?;
        self.dec.set(dec)
    }

    fn value(&self) -> f64 {
        self.enc.value()
    }
}

#[derive(Debug, Clone)]
struct InputState {
    j: usize,
    tau: f64,
    z_tau: Vector,
    zoom: ZoomPair,
}

/// Channel transmission: encode, serialize, parse, decode.
fn transmit(
    spec: &QuantizerSpec,
    zoom: &ZoomPair,
    v: &Vector,
    time: f64,
    channel: &'static str,
) -> Result<(Symbol, Vector, Vec<u8>)> {
    let (sent, sym) = quantize_dynamic(spec, &zoom.enc, v).map_err(|e| match e {
        Error::Saturation { norm, range } => Error::Invariant {
            time,
            channel,
            detail: format!("quantizer saturation: |v| = {norm:e} exceeds {range:e}"),
        },
        e => e,
    })?;
    let wire = sym.to_wire(time);
    let (t_rx, rx) = Symbol::from_wire(&wire, spec.dim)?;
    let got = decode(spec, &zoom.dec, &rx)?;
    if t_rx.to_bits() != time.to_bits() || rx != sym || got != sent {
        return Err(Error::Invariant {
            time,
            channel,
            detail: "decoded value differs from the encoder's reconstruction".into(),
        });
    }
    Ok((sym, got, wire))
}

pub struct Simulator {
    n: usize,
    t: f64,
    w: Vector,
    flow: Mat,
    drive: Vector,
    h: f64,
    tol: f64,
    t_end: f64,
    period: f64,
    strict: bool,
    b: Mat,
    c: Mat,
    k: Mat,
    l: Mat,
    p_o: Mat,
    p_c: Mat,
    model: ErrorModel,
    chi_o: f64,
    xi_o: f64,
    delta_y: f64,
    t_d: f64,
    tau_d: f64,
    min_gap: Option<f64>,
    out_cfg: OutputSamplerConfig,
    nu_law: NuLawConfig,
    in_cfg: InputSamplerConfig,
    mu_law: MuLawConfig,
    out_spec: QuantizerSpec,
    in_spec: QuantizerSpec,
    e0: f64,
    h_warm: f64,
    nu_warm: Option<f64>,
    warm_bound: ErrorBound,
    nu: ZoomPair,
    q_held: Vector,
    u_held: Vector,
    history: OutputHistory,
    out_times: Vec<f64>,
    out_nus: Vec<f64>,
    warm_q_norms: Vec<f64>,
    cache: Option<IntervalCache>,
    aug: AugmentedExp,
    e_step: Mat,
    e_cur: Mat,
    g_out: f64,
    g_in: f64,
    input: Option<InputState>,
    record_dt: f64,
    next_record: f64,
    record_idx: u64,
    traj: Trajectory,
}

impl Simulator {
    pub fn new(design: &Design, cfg: &SimConfig) -> Result<Self> {
        let inp = &design.inputs;
        let dc = &design.constants;
        let n = dc.n;
        if cfg.x0.len() != n || cfg.z0.len() != n {
            return Err(Error::Dimension(format!(
                "x0 and z0 must have length {n}, got {} and {}",
                cfg.x0.len(),
                cfg.z0.len()
            )));
        }
        let period = inp.period;
        let h = cfg.h.unwrap_or(period / 1000.0);
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("step h = {h} must be positive")));
        }
        if !(cfg.t_end > 0.0 && cfg.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end = {} must be positive", cfg.t_end)));
        }
        let mode = match dc.plan {
            SamplingPlan::Standard { .. } => OutputSamplingMode::Persistence { period },
            SamplingPlan::Relaxed { eta_star, window, .. } => OutputSamplingMode::Window { eta_star, window },
        };
        let depth = dc.plan.depth();
        let h_warm = cfg.h_warm.unwrap_or(match dc.plan {
            SamplingPlan::Standard { .. } => period / 10.0,
            SamplingPlan::Relaxed { window, eta_star, .. } => window / eta_star as f64,
        });
        if !(h_warm > 0.0) || (depth > 1 && !(h_warm * (depth - 1) as f64 <= dc.plan.span(period))) {
            return Err(Error::Config(format!("warm-up spacing {h_warm} does not fit the sampling rule")));
        }
        let e0 = cfg.e0.unwrap_or_else(|| (&cfg.x0 - &cfg.z0).norm());
        if let Some(v) = cfg.nu_warm {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("nu_warm = {v} must be positive")));
            }
        }
        let record_dt = cfg.record_dt.unwrap_or(period / 20.0);
        if !(record_dt > 0.0) {
            return Err(Error::Config(format!("record_dt = {record_dt} must be positive")));
        }

        let mut flow = Mat::zeros(2 * n, 2 * n);
        flow.view_mut((0, 0), (n, n)).copy_from(&inp.a);
        flow.view_mut((n, n), (n, n)).copy_from(&inp.a);
        let mut w = Vector::zeros(2 * n);
        w.rows_mut(0, n).copy_from(&cfg.x0);
        w.rows_mut(n, n).copy_from(&cfg.z0);

        let aug = AugmentedExp::new(&inp.a, &inp.l);
        let e_step = aug.full(h);
        let e_cur = Mat::identity(e_step.nrows(), e_step.ncols());
        let first_zoom = cfg.nu_warm.unwrap_or(NU_FLOOR);
        let sim = Self {
            n,
            t: 0.0,
            w,
            flow,
            drive: Vector::zeros(2 * n),
            h,
            tol: BISECTION_TOL * period,
            t_end: cfg.t_end,
            period,
            strict: cfg.strict,
            b: inp.b.clone(),
            c: inp.c.clone(),
            k: inp.k.clone(),
            l: inp.l.clone(),
            p_o: dc.p_o.clone(),
            p_c: dc.p_c.clone(),
            model: design.model(),
            chi_o: dc.chi_o,
            xi_o: dc.xi_o,
            delta_y: inp.delta_y,
            t_d: design.output_dwell.bound(),
            min_gap: design.output_dwell.enforced_gap,
            tau_d: design.input_dwell.tau_d,
            out_cfg: OutputSamplerConfig {
                alpha: dc.alpha,
                depth,
                mode,
            },
            nu_law: design.nu_law(),
            in_cfg: InputSamplerConfig {
                k: inp.k.clone(),
                beta_c: dc.beta_c,
                beta_o: dc.beta_o,
                period,
                r_y: dc.r_y,
                c_norm: dc.c_norm,
            },
            mu_law: design.mu_law(),
            out_spec: QuantizerSpec::new(dc.p, dc.r_y, inp.delta_y)?,
            in_spec: QuantizerSpec::new(dc.m, dc.r_u, inp.delta_u)?,
            e0,
            h_warm,
            nu_warm: cfg.nu_warm,
            warm_bound: ErrorBound::new(&inp.a, &inp.l, e0),
            nu: ZoomPair::new(first_zoom)?,
            q_held: Vector::zeros(dc.p),
            u_held: Vector::zeros(dc.m),
            history: OutputHistory::new(depth),
            out_times: Vec::new(),
            out_nus: Vec::new(),
            warm_q_norms: Vec::new(),
            cache: None,
            aug,
            e_step,
            e_cur,
            g_out: 0.0,
            g_in: 0.0,
            input: None,
            record_dt,
            next_record: 0.0,
            record_idx: 0,
            traj: Trajectory {
                eta: depth,
                nu_eta: f64::NAN,
                mu_0: f64::NAN,
                min_n_sv: f64::INFINITY,
                ..Default::default()
            },
        };
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn x(&self) -> Vector {
        self.w.rows(0, self.n).into_owned()
    }

    pub fn z(&self) -> Vector {
        self.w.rows(self.n, self.n).into_owned()
    }

    pub fn x_tilde(&self) -> Vector {
        self.x() - self.z()
    }

    pub fn history(&self) -> &OutputHistory {
        &self.history
    }

    pub fn model(&self) -> &ErrorModel {
        &self.model
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }

    /// Current `ν`.
    pub fn nu(&self) -> f64 {
        self.nu.value()
    }

    pub fn mu(&self) -> Option<f64> {
        self.input.as_ref().map(|s| s.zoom.value())
    }

    fn warn(&mut self, channel: &'static str, detail: String) -> Result<()> {
        if self.strict {
            return Err(Error::Invariant {
                time: self.t,
                channel,
                detail,
            });
        }
        self.traj.warnings.push(Warning {
            time: self.t,
            channel,
            detail,
        });
        Ok(())
    }

    fn refresh_drive(&mut self) {
        let n = self.n;
        let bu = &self.b * &self.u_held;
        let lq = &self.l * &self.q_held;
        self.drive.rows_mut(0, n).copy_from(&bu);
        self.drive.rows_mut(n, n).copy_from(&(bu + lq));
    }

    fn advance_state(&self, dt: f64) -> Vector {
        rk4_affine(&self.flow, &self.drive, &self.w, dt)
    }

    fn ytilde_of(&self, w: &Vector) -> Vector {
        &self.c * (w.rows(0, self.n) - w.rows(self.n, self.n))
    }

    fn v_o(&self, xt: &Vector) -> f64 {
        (xt.transpose() * &self.p_o * xt)[(0, 0)]
    }

    fn v_c(&self, z: &Vector) -> f64 {
        (z.transpose() * &self.p_c * z)[(0, 0)]
    }

    fn probe(&mut self) {
        let x = self.x();
        let z = self.z();
        let xt = &x - &z;
        let p = Probe {
            t: self.t,
            v_o: self.v_o(&xt),
            v_c: self.v_c(&z),
            x,
            z,
            u: self.u_held.clone(),
            nu: self.nu.value(),
            mu: self.mu().unwrap_or(f64::NAN),
        };
        self.traj.probes.push(p);
    }

    fn advance_record_clock(&mut self, t: f64) {
        while self.next_record <= t {
            self.record_idx += 1;
            self.next_record = self.record_idx as f64 * self.record_dt;
        }
    }

    fn output_deadline(&self) -> Result<(f64, Trigger)> {
        if !self.history.is_full() {
            return Ok((self.out_times.len() as f64 * self.h_warm, Trigger::Warmup));
        }
        self.out_cfg.deadline(&self.history)
    }

    /// End of the post-sample period in which output events are suppressed.
    fn quiet_until(&self) -> Option<f64> {
        let g = self.min_gap?;
        let c = self.cache.as_ref()?;
        let t_k = c.t_k();
        let mut q = t_k + g;
        while q - t_k < g {
            q = q.next_up();
        }
        Some(q)
    }

    fn input_deadline(&self) -> Option<f64> {
        self.input.as_ref().map(|s| s.tau + self.period)
    }

    fn output_eval(&self, t: f64, w: &Vector, e: Option<&Mat>) -> Option<EventEval> {
        let cache = self.cache.as_ref()?;
        let y = self.ytilde_of(w);
        let alpha = self.out_cfg.alpha;
        Some(match e {
            Some(e) => {
                let (phi, integral) = self.aug.split(e);
                cache.eval_from(&phi, &integral, &y, alpha)
            }
            None => cache.eval(t, &y, alpha),
        })
    }

    fn input_value(&self, w: &Vector) -> f64 {
        match &self.input {
            Some(s) => {
                let z = w.rows(self.n, self.n).into_owned();
                input_event_value(&z, &s.z_tau, self.nu.value(), &self.in_cfg)
            }
            None => f64::NEG_INFINITY,
        }
    }

    fn note_eval(&mut self, ev: &EventEval) -> Result<()> {
        self.traj.event_evaluations += 1;
        if ev.n_min_sv < self.traj.min_n_sv {
            self.traj.min_n_sv = ev.n_min_sv;
        }
        if !(ev.n_min_sv > RANK_WARN) {
            return self.warn("output", format!("N lost rank: smallest singular value {:e}", ev.n_min_sv));
        }
        Ok(())
    }

    /// Runs to `t_end`.
    pub fn run(mut self) -> Result<Trajectory> {
        let t_end = self.t_end;
        self.advance_to(t_end)?;
        Ok(self.traj)
    }

    /// Integrates up to `t_stop`, processing every sample on the way.
    pub fn advance_to(&mut self, t_stop: f64) -> Result<()> {
        let t_stop = t_stop.min(self.t_end);
        if self.t == 0.0 && self.out_times.is_empty() {
            self.sample_output(Trigger::Warmup)?;
            self.probe();
            self.advance_record_clock(0.0);
        }
        while self.t < t_stop {
            self.step_once(t_stop)?;
        }
        Ok(())
    }

    fn step_once(&mut self, t_stop: f64) -> Result<()> {
        let (out_deadline, out_trigger) = self.output_deadline()?;
        let in_deadline = self.input_deadline();
        let mut te = (self.t + self.h).min(t_stop).min(out_deadline).min(self.next_record);
        if let Some(d) = in_deadline {
            te = te.min(d);
        }
        let quiet_until = self.quiet_until();
        let quiet = quiet_until.is_some_and(|q| self.t < q);
        if let Some(q) = quiet_until.filter(|_| quiet) {
            te = te.min(q);
        }
        let dt = te - self.t;
        let full_step = dt == self.h;
        let w_new = self.advance_state(dt);
        let delta = self.cache.as_ref().map(|c| te - c.t_k());
        let e_new = delta.map(|d| if full_step { &self.e_cur * &self.e_step } else { self.aug.full(d) });
        let out_ev = self.output_eval(te, &w_new, e_new.as_ref());
        let g_in_new = self.input_value(&w_new);
        if let Some(ev) = &out_ev {
            self.note_eval(ev)?;
        }
        let out_cross = !quiet && out_ev.as_ref().is_some_and(|ev| fired(self.g_out, ev.value));
        let in_cross = self.input.is_some() && fired(self.g_in, g_in_new);

        if out_cross || in_cross {
            let t_out = out_cross.then(|| self.bisect_output(te, out_ev.as_ref().unwrap().value));
            let t_in = in_cross.then(|| self.bisect_input(te, g_in_new));
            let t_hit = t_out.unwrap_or(f64::INFINITY).min(t_in.unwrap_or(f64::INFINITY));
            let w_hit = self.advance_state(t_hit - self.t);
            self.t = t_hit;
            self.w = w_hit;
            if let Some(c) = &self.cache {
                self.e_cur = self.aug.full(t_hit - c.t_k());
            }
            if t_out.is_some_and(|s| s <= t_hit) {
                self.sample_output(Trigger::Event)?;
            }
            let same_instant = self.input.as_ref().is_some_and(|s| s.tau == self.t);
            if t_in.is_some_and(|s| s <= t_hit) && !same_instant {
                self.sample_input(Trigger::Event)?;
            }
            self.reset_guards()?;
            return Ok(());
        }

        self.lyapunov_check(&w_new, dt)?;
        self.t = te;
        self.w = w_new;
        if let Some(e) = e_new {
            self.e_cur = e;
        }
        self.g_out = out_ev.map_or(0.0, |ev| ev.value);
        self.g_in = g_in_new;

        let mut sampled = false;
        if te == out_deadline {
            self.sample_output(out_trigger)?;
            sampled = true;
        } else if quiet && quiet_until == Some(te) && self.g_out > 0.0 {
            // the inequality already holds when the quiet period ends
            self.sample_output(Trigger::Event)?;
            sampled = true;
        }
        if in_deadline == Some(te) && self.input.as_ref().is_some_and(|s| s.tau < te) {
            self.sample_input(Trigger::Persistence)?;
            sampled = true;
        }
        if sampled {
            self.reset_guards()?;
        }
        if te >= self.next_record || te >= self.t_end {
            self.probe();
            self.advance_record_clock(te);
        }
        Ok(())
    }

    fn bisect_output(&self, te: f64, g_te: f64) -> f64 {
        locate(self.t, te, self.g_out, g_te, self.tol, |s| {
            let w = self.advance_state(s - self.t);
            self.output_eval(s, &w, None).map_or(f64::NEG_INFINITY, |ev| ev.value)
        })
    }

    fn bisect_input(&self, te: f64, g_te: f64) -> f64 {
        locate(self.t, te, self.g_in, g_te, self.tol, |s| {
            let w = self.advance_state(s - self.t);
            self.input_value(&w)
        })
    }

    fn reset_guards(&mut self) -> Result<()> {
        self.g_out = match self.output_eval(self.t, &self.w, Some(&self.e_cur.clone())) {
            Some(ev) => {
                self.note_eval(&ev)?;
                ev.value
            }
            None => 0.0,
        };
        self.g_in = self.input_value(&self.w);
        if self.t >= self.next_record {
            self.probe();
            let t = self.t;
            self.advance_record_clock(t);
        }
        Ok(())
    }

    /// `V_o` must decay at rate `ξ_o` while `|x̃| ≥ χ_o Δ_y ν`.
    fn lyapunov_check(&mut self, w_new: &Vector, dt: f64) -> Result<()> {
        if self.out_times.len() <= self.traj.eta || dt <= 0.0 {
            return Ok(());
        }
        let level = self.chi_o * self.delta_y * self.nu.value();
        let xt0 = self.x_tilde();
        let xt1 = w_new.rows(0, self.n) - w_new.rows(self.n, self.n);
        if xt0.norm() < level || xt1.norm() < level {
            return Ok(());
        }
        let (v0, v1) = (self.v_o(&xt0), self.v_o(&xt1));
        let allowed = v0 * (-(1.0 - LYAP_SLACK) * self.xi_o * dt).exp();
        if v1 > allowed * (1.0 + 1e-12) {
            return self.warn(
                "output",
                format!("V_o rose from {v0:e} to {v1:e} over {dt:e} outside the quantization ball"),
            );
        }
        Ok(())
    }

    fn sample_output(&mut self, trigger: Trigger) -> Result<()> {
        let t = self.t;
        let k = self.out_times.len();
        let eta = self.traj.eta;
        let nu_before = self.nu.value();
        let first = k == 0;
        // zoom for this sample
        let nu_k = if k < eta {
            if !first {
                let gap = t - self.out_times[k - 1];
                self.warm_bound.advance(gap, *self.warm_q_norms.last().unwrap())?;
            }
            self.nu_warm.unwrap_or_else(|| self.nu_law.zoom_for_bound(self.warm_bound.value()))
        } else if k == eta {
            let mut times = self.out_times.clone();
            times.push(t);
            let enc = nu_init(self.e0, &times, &self.warm_q_norms, &self.model, &self.nu_law)?;
            let dec = nu_init(self.e0, &times, &self.warm_q_norms, &self.model, &self.nu_law)?;
            self.nu.set(enc, dec, t, "output")?;
            self.traj.nu_eta = enc;
            enc
        } else {
            let gap = t - self.out_times[k - 1];
            let enc = nu_update(self.nu.enc.value(), gap, &self.nu_law);
            let dec = nu_update(self.nu.dec.value(), gap, &self.nu_law);
            self.nu.set(enc, dec, t, "output")?;
            enc
        };
        if k < eta && !first {
            self.nu.set(nu_k, nu_k, t, "output")?;
        } else if first {
            self.nu = ZoomPair::new(nu_k)?;
        }
        if nu_k <= NU_FLOOR {
            self.traj.nu_floor_hits += 1;
        }

        let xt = self.x_tilde();
        if k >= eta {
            let level = self.nu_law.ellipsoid_level(nu_k);
            let v = self.v_o(&xt);
            if v > level * (1.0 + 1e-9) && nu_k > NU_FLOOR {
                self.warn("output", format!("V_o(x̃) = {v:e} exceeds the ellipsoid level {level:e}"))?;
            }
            let gap = t - self.out_times[k - 1];
            if trigger == Trigger::Event && gap < self.t_d - self.tol {
                self.warn("output", format!("gap {gap:e} below dwell bound {:e}", self.t_d))?;
            }
        }
        let ytilde = &self.c * &xt;
        let (symbol, decoded, wire) = transmit(&self.out_spec, &self.nu, &ytilde, t, "output")?;
        if k < eta {
            self.warm_q_norms.push(decoded.norm());
        }
        self.history.push(OutputRecord {
            time: t,
            ytilde: ytilde.clone(),
            qval: decoded.clone(),
            zoom: nu_k,
        })?;
        self.out_times.push(t);
        self.out_nus.push(nu_k);
        self.q_held = decoded.clone();
        self.refresh_drive();
        self.traj.outputs.push(OutputEvent {
            k,
            time: t,
            trigger,
            ytilde,
            symbol,
            zoom: nu_k,
            decoded,
            wire,
            x: self.x(),
            z: self.z(),
        });
        if self.history.is_full() {
            self.cache = Some(IntervalCache::new(&self.history, &self.model)?);
            self.e_cur = Mat::identity(self.e_step.nrows(), self.e_step.ncols());
        }

        if k == eta {
            self.start_input()?;
        } else if k > eta {
            let z = self.z();
            let jump = self
                .input
                .as_ref()
                .is_some_and(|s| s.tau < t && nu_jump_check(&z, &s.z_tau, nu_before, nu_k, &self.in_cfg));
            if jump {
                self.sample_input(Trigger::NuJump)?;
            }
        }
        Ok(())
    }

    fn start_input(&mut self) -> Result<()> {
        let t = self.t;
        let z = self.z();
        let mu0 = mu_init(&z, &self.p_c, &self.mu_law);
        self.traj.mu_0 = mu0;
        self.input = Some(InputState {
            j: 0,
            tau: t,
            z_tau: z.clone(),
            zoom: ZoomPair::new(mu0)?,
        });
        self.emit_input(Trigger::Init, mu0)
    }

    fn sample_input(&mut self, trigger: Trigger) -> Result<()> {
        let t = self.t;
        let (tau_prev, mu_enc, mu_dec) = {
            let s = self.input.as_ref().expect("input channel started");
            (s.tau, s.zoom.enc.value(), s.zoom.dec.value())
        };
        let gap = t - tau_prev;
        let kk = k_star(tau_prev, &self.out_times)?;
        let nu_ref = self.out_nus[kk];
        let enc = mu_update(mu_enc, gap, nu_ref, &self.mu_law);
        let dec = mu_update(mu_dec, gap, nu_ref, &self.mu_law);
        if trigger == Trigger::Event && gap < self.tau_d - self.tol {
            self.warn("input", format!("gap {gap:e} below dwell bound {:e}", self.tau_d))?;
        }
        let z = self.z();
        let s = self.input.as_mut().unwrap();
        s.zoom.set(enc, dec, t, "input")?;
        s.j += 1;
        s.tau = t;
        s.z_tau = z;
        self.emit_input(trigger, enc)
    }

    fn emit_input(&mut self, trigger: Trigger, mu: f64) -> Result<()> {
        let t = self.t;
        if mu <= MU_FLOOR {
            self.traj.mu_floor_hits += 1;
        }
        let z = self.z();
        let unom = &self.k * &z;
        let kk = k_star(t, &self.out_times)?;
        let nu_ref = self.out_nus[kk];
        let s = self.input.as_ref().unwrap();
        let (symbol, decoded, wire) = transmit(&self.in_spec, &s.zoom, &unom, t, "input")?;
        let j = s.j;
        self.u_held = decoded.clone();
        self.refresh_drive();
        self.traj.inputs.push(InputEvent {
            j,
            time: t,
            trigger,
            unom,
            symbol,
            zoom: mu,
            decoded,
            wire,
            nu_ref,
            x: self.x(),
            z,
        });
        Ok(())
    }
}

/// Simulates `design` under `cfg`.
pub fn run(design: &Design, cfg: &SimConfig) -> Result<Trajectory> {
    Simulator::new(design, cfg)?.run()
}
