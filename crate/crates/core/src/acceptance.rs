//! The nine acceptance criteria, each with its own oracle and timing.

use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::design::{design, growth_bound, Design, SamplingPlan};
use crate::error::Result;
use crate::linalg::{solve_lyapunov, spectral_norm, sym_eig_extremes, Mat, Vector};
use crate::output_unit::{build_n, f_vector, nu_update, Trigger};
use crate::input_unit::mu_update;
use crate::quantizer::{decode, quantize_dynamic, QuantizerSpec, Symbol, ZoomState};
use crate::scenario::Scenario;
use crate::sim::{exact_affine_oracle, rk4_affine, Simulator, Trajectory};

pub const UNSTABLE_SCENARIO: &str = include_str!("../examples/unstable_plant/scenario.toml");
pub const OSCILLATOR_SCENARIO: &str = include_str!("../examples/oscillator/scenario.toml");

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "criterion {} [{}] {}: {} ({:.3} s)",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Accumulates named checks; the criterion passes when all of them hold.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: String) {
        if !ok {
            self.failed.push(what.clone());
        }
        self.notes.push(what);
    }

    fn within(&mut self, name: &str, value: f64, target: f64, tol: f64) {
        self.check((value - target).abs() <= tol, format!("{name} = {value:.6} (target {target} ± {tol})"));
    }

    fn at_most(&mut self, name: &str, value: f64, limit: f64) {
        self.check(value <= limit, format!("{name} = {value:.3e} (≤ {limit:.1e})"));
    }

    fn note(&mut self, what: String) {
        self.notes.push(what);
    }

    fn finish(self, id: u32, name: &'static str, started: Instant, budget: Option<f64>) -> Outcome {
        let elapsed = started.elapsed();
        let mut failed = self.failed;
        let mut notes = self.notes;
        if let Some(limit) = budget {
            let what = format!("runtime {:.3} s (< {limit} s)", elapsed.as_secs_f64());
            if elapsed.as_secs_f64() >= limit {
                failed.push(what.clone());
            }
            notes.push(what);
        }
        let detail = if failed.is_empty() {
            notes.join("; ")
        } else {
            format!("failed: {}", failed.join("; "))
        };
        Outcome {
            id,
            name,
            pass: failed.is_empty(),
            detail,
            elapsed,
        }
    }

    fn error(id: u32, name: &'static str, started: Instant, e: crate::Error) -> Outcome {
        Outcome {
            id,
            name,
            pass: false,
            detail: format!("error: {e}"),
            elapsed: started.elapsed(),
        }
    }
}

fn unstable_plant() -> Result<Scenario> {
    Scenario::from_toml(UNSTABLE_SCENARIO)
}

fn guarded(id: u32, name: &'static str, f: impl FnOnce(&mut Checks) -> Result<Option<f64>>) -> Outcome {
    let started = Instant::now();
    let mut c = Checks::default();
    match f(&mut c) {
        Ok(budget) => c.finish(id, name, started, budget),
        Err(e) => Checks::error(id, name, started, e),
    }
}

pub fn output_constants() -> Outcome {
    guarded(1, "output-side constants", |c| {
        let s = unstable_plant()?;
        let d = design(&s.inputs)?;
        let i = &s.inputs;
        let exact = solve_lyapunov(&(&i.a - &i.l * &i.c), &i.q_o)?;
        let published = [[1.63, -1.47], [-1.47, 1.93]];
        let worst = (0..2)
            .flat_map(|r| (0..2).map(move |col| (r, col)))
            .map(|(r, col)| (exact[(r, col)] - published[r][col]).abs())
            .fold(0.0, f64::max);
        c.check(worst <= 0.01, format!("P_o max entry deviation {worst:.4} (≤ 0.01)"));
        let k = &d.constants;
        c.within("alpha", k.alpha, 0.09, 0.005);
        c.within("xi_o", k.xi_o, 0.0038, 2e-4);
        c.within("chi_o", k.chi_o, 37.54, 0.2);
        c.within("R_y/Delta_y", k.r_y / i.delta_y, 126.4, 1.0);
        c.check(k.output_budget.bits == 7, format!("output bits = {} (7)", k.output_budget.bits));
        Ok(Some(1.0))
    })
}

pub fn input_constants() -> Outcome {
    guarded(2, "input-side constants", |c| {
        let s = unstable_plant()?;
        let mut inputs = s.inputs.clone();
        inputs.lyapunov_decimals = None;
        let d = design(&inputs)?;
        c.within("beta_c (eps_c = 0.85)", d.constants.beta_c, 0.38, 0.01);
        let acl = &inputs.a + &inputs.b * &inputs.k;
        let p = &d.constants.p_c;
        let residual = spectral_norm(&(acl.transpose() * p + p * &acl + &inputs.q_c));
        c.at_most("P_c Lyapunov residual", residual, 1e-10);
        let report = d.report(&s.reference);
        for key in ["P_c", "xi_c", "chi_c", "R_u", "eps_c"] {
            let flag = report.flag(&format!("check.{key}.consistent"));
            c.check(flag == Some(false), format!("report flags {key} inconsistent: {}", flag == Some(false)));
        }
        inputs.eps_c = 0.75;
        let d = design(&inputs)?;
        c.within("xi_c (eps_c = 0.75)", d.constants.xi_c, 0.0048, 3e-4);
        c.within("chi_c (eps_c = 0.75)", d.constants.chi_c, 9.94, 0.2);
        Ok(Some(1.0))
    })
}

fn min_gap(gaps: &[f64]) -> f64 {
    gaps.iter().copied().fold(f64::INFINITY, f64::min)
}

fn convergence(c: &mut Checks, d: &Design, tr: &Trajectory) {
    let Some(last) = tr.last() else {
        c.check(false, "no samples recorded".into());
        return;
    };
    c.at_most("|x(t_end)|", last.x.norm(), 1e-2);
    c.at_most("|x~(t_end)|", (&last.x - &last.z).norm(), 1e-3);
    c.at_most("nu(t_end)/nu_eta", last.nu / tr.nu_eta, 1e-4);
    c.note(format!("t_end = {}", last.t));
    c.check(
        !tr.outputs.is_empty() && !tr.inputs.is_empty(),
        format!("{} output and {} input transmissions", tr.outputs.len(), tr.inputs.len()),
    );
    let (go, gi) = (min_gap(&tr.output_gaps()), min_gap(&tr.input_gaps()));
    let (bo, bi) = (d.output_dwell.bound(), d.input_dwell.tau_d);
    c.check(go >= bo, format!("min output gap {go:.4e} ≥ bound {bo:.4e}"));
    c.check(gi >= bi, format!("min input gap {gi:.4e} ≥ bound {bi:.4e}"));
    c.note(format!("{} warnings", tr.warnings.len()));
}

pub fn closed_loop() -> Outcome {
    guarded(3, "closed-loop convergence", |c| {
        let s = unstable_plant()?;
        let d = design(&s.inputs)?;
        let cfg = s.sim_config(d.suggested_t_end(1e-4));
        c.note(format!("h = {}", cfg.h.unwrap_or(s.inputs.period / 1000.0)));
        let tr = Simulator::new(&d, &cfg)?.run()?;
        convergence(c, &d, &tr);
        Ok(Some(30.0))
    })
}

pub fn output_error_identity() -> Outcome {
    guarded(4, "estimator identity N x~ = f", |c| {
        let s = unstable_plant()?;
        let d = design(&s.inputs)?;
        let cfg = s.sim_config(d.suggested_t_end(1e-4));
        let mut sim = Simulator::new(&d, &cfg)?;
        let model = d.model();
        let mut worst = 0.0f64;
        let probes = 100;
        for i in 1..=probes {
            let t = cfg.t_end * i as f64 / probes as f64;
            sim.advance_to(t)?;
            let xt = sim.x_tilde();
            let hist = sim.history();
            let n = build_n(&hist.times(), sim.time(), &model)?;
            let f = f_vector(hist, sim.time(), &model)?;
            worst = worst.max((n * &xt - f).norm() / (1.0 + xt.norm()));
        }
        c.at_most(&format!("max over {probes} probes of |N x~ - f|/(1+|x~|)"), worst, 1e-6);
        Ok(None)
    })
}

/// `X' = a₁e^{σ̄t}(X² + a₂X + a₃)` from `X(0) = 0`, integrated up to just
/// before `t̃_D`; returns the largest `X(t) − bound(t)`, normalized.
fn growth_worst_excess(a1: f64, a2: f64, a3: f64, sigma: f64) -> Result<f64> {
    let lem = growth_bound(a1, a2, a3, sigma)?;
    let f = |t: f64, x: f64| a1 * (sigma * t).exp() * (x * x + a2 * x + a3);
    let steps = 4000;
    let t_stop = lem.t_tilde * (1.0 - 1e-6);
    let h = t_stop / steps as f64;
    let (mut t, mut x) = (0.0, 0.0f64);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..steps {
        let k1 = f(t, x);
        let k2 = f(t + h / 2.0, x + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, x + h / 2.0 * k2);
        let k4 = f(t + h, x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
        let b = lem.bound(t);
        if !x.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max((x - b) / (1.0 + b.abs()));
    }
    Ok(worst)
}

pub fn growth_bound_oracle() -> Outcome {
    guarded(5, "comparison-ODE bound", |c| {
        let mut rng = StdRng::seed_from_u64(5);
        let draws = 100;
        let mut worst = f64::NEG_INFINITY;
        let mut zero_sigma = 0;
        for i in 0..draws {
            let a1 = 10f64.powf(rng.gen_range(-2.0..2.0));
            let a2 = 10f64.powf(rng.gen_range(-2.0..2.0));
            let a3 = 10f64.powf(rng.gen_range(-3.0..3.0));
            let sigma = if i % 4 == 0 {
                zero_sigma += 1;
                0.0
            } else {
                2.0 * (1.0 - rng.gen::<f64>())
            };
            worst = worst.max(growth_worst_excess(a1, a2, a3, sigma)?);
        }
        c.at_most(
            &format!("largest normalized excess of the ODE over the bound ({draws} draws, {zero_sigma} with sigma = 0)"),
            worst,
            1e-9,
        );
        Ok(Some(10.0))
    })
}

pub fn quantizer_contract() -> Outcome {
    guarded(6, "quantizer contract", |c| {
        let mut rng = StdRng::seed_from_u64(6);
        let trials = 100_000;
        let (mut bound, mut dead, mut bijection, mut wire, mut saturation) = (0, 0, 0, 0, 0);
        let mut dead_hits = 0;
        for _ in 0..trials {
            let dim = rng.gen_range(1..=4);
            let delta = 10f64.powf(rng.gen_range(-2.0..1.0));
            let range = delta * rng.gen_range(1.0..300.0);
            let spec = QuantizerSpec::new(dim, range, delta)?;
            let zoom = ZoomState::new(10f64.powf(rng.gen_range(-4.0..4.0)))?;
            let nu = zoom.value();
            let dir = Vector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            let dir = if dir.norm() > 0.0 { dir.normalize() } else { Vector::from_element(dim, 1.0 / (dim as f64).sqrt()) };
            let radius = if rng.gen_bool(0.2) { rng.gen_range(0.0..delta) } else { rng.gen_range(0.0..range) };
            let v = dir * (radius * nu);
            let (q, sym) = quantize_dynamic(&spec, &zoom, &v)?;
            if (&q - &v).norm() > delta * nu {
                bound += 1;
            }
            if v.norm() < delta * nu {
                dead_hits += 1;
                if !(sym.is_zero() && q.iter().all(|&x| x == 0.0)) {
                    dead += 1;
                }
            }
            let back = decode(&spec, &zoom, &sym)?;
            let recovered: Vec<i64> = back.iter().map(|&x| (x / (nu * spec.step())).round() as i64).collect();
            if back != q || recovered != sym.indices {
                bijection += 1;
            }
            let t: f64 = rng.gen_range(0.0..1e4);
            if Symbol::from_wire(&sym.to_wire(t), dim)? != (t, sym.clone()) {
                wire += 1;
            }
            let outside = dir_outside(&spec, &zoom, &mut rng);
            if quantize_dynamic(&spec, &zoom, &outside).is_ok() {
                saturation += 1;
            }
        }
        c.check(bound == 0, format!("error bound |q(v) - v| <= Delta nu violated {bound} times"));
        c.check(dead == 0, format!("dead zone violated {dead} of {dead_hits} times"));
        c.check(bijection == 0, format!("encode/decode bijection violated {bijection} times"));
        c.check(wire == 0, format!("wire round trip violated {wire} times"));
        c.check(saturation == 0, format!("saturation not reported {saturation} times"));
        c.note(format!("{trials} vectors"));
        Ok(None)
    })
}

fn dir_outside(spec: &QuantizerSpec, zoom: &ZoomState, rng: &mut StdRng) -> Vector {
    let dir = Vector::from_fn(spec.dim, |_, _| rng.gen_range(0.1..1.0)).normalize();
    dir * (spec.range * zoom.value() * rng.gen_range(1.001..3.0))
}

pub fn recursion_equivalence() -> Outcome {
    guarded(7, "zoom recursion equivalence", |c| {
        let s = unstable_plant()?;
        let d = design(&s.inputs)?;
        let i = &d.inputs;
        let k = &d.constants;
        let nu_law = d.nu_law();
        let mu_law = d.mu_law();
        let (lmin_pc, lmax_pc) = sym_eig_extremes(&k.p_c);
        let k_norm = spectral_norm(&i.k);
        let rho_y = k_norm / k.r_u * (lmax_pc / lmin_pc).sqrt() * (k.zeta1 * k.r_y + k.zeta2 * i.delta_y);
        let mut rng = StdRng::seed_from_u64(7);
        let (mut worst_nu, mut worst_mu) = (0.0f64, 0.0f64);
        let draws = 1000;
        for _ in 0..draws {
            let nu = 10f64.powf(rng.gen_range(-6.0..3.0));
            let gap = rng.gen_range(0.0..3.0 * i.period);
            let got = nu_update(nu, gap, &nu_law);
            let expect = i.rho_bar.max((-k.xi_o * gap / 2.0).exp()) * nu;
            worst_nu = worst_nu.max((got - expect).abs() / expect);

            let mu = 10f64.powf(rng.gen_range(-4.0..4.0));
            let nu_k = 10f64.powf(rng.gen_range(-8.0..1.0));
            let gap = rng.gen_range(0.0..3.0 * i.period);
            let got = mu_update(mu, gap, nu_k, &mu_law);
            let expect = (i.rho_bar_u * mu + rho_y * nu_k).max((-k.xi_c * gap / 2.0).exp() * mu);
            worst_mu = worst_mu.max((got - expect).abs() / expect);
        }
        c.at_most(&format!("nu update, max relative deviation over {draws} draws"), worst_nu, 1e-12);
        c.at_most(&format!("mu update, max relative deviation over {draws} draws"), worst_mu, 1e-12);
        Ok(None)
    })
}

pub fn oscillator() -> Outcome {
    guarded(8, "window rule on the oscillator", |c| {
        let s = Scenario::from_toml(OSCILLATOR_SCENARIO)?;
        let d = design(&s.inputs)?;
        c.check(
            matches!(d.constants.plan, SamplingPlan::Relaxed { .. }),
            format!("sampling plan {:?}", d.constants.plan),
        );
        let cfg = s.sim_config(50.0);
        let tr = Simulator::new(&d, &cfg)?.run()?;
        c.check(
            tr.event_evaluations > 0 && tr.min_n_sv > 1e-8,
            format!("min sigma_min(N) = {:.3e} over {} event evaluations (> 1e-8)", tr.min_n_sv, tr.event_evaluations),
        );
        convergence(c, &d, &tr);
        Ok(None)
    })
}

/// Horizon of the step-halving comparison, in periods.
pub const REFINEMENT_PERIODS: f64 = 2.0;

fn event_times(tr: &Trajectory) -> Vec<(&'static str, f64, Trigger, Vec<i64>)> {
    let mut ev: Vec<_> = tr
        .outputs
        .iter()
        .map(|e| ("output", e.time, e.trigger, e.symbol.indices.clone()))
        .chain(tr.inputs.iter().map(|e| ("input", e.time, e.trigger, e.symbol.indices.clone())))
        .collect();
    ev.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
    ev
}

/// Largest shift between matched events, or `None` when the sequences differ.
fn max_shift(a: &Trajectory, b: &Trajectory) -> Option<f64> {
    let (ea, eb) = (event_times(a), event_times(b));
    if ea.len() != eb.len() {
        return None;
    }
    let mut worst = 0.0f64;
    for (x, y) in ea.iter().zip(&eb) {
        if x.0 != y.0 || x.2 != y.2 || x.3 != y.3 {
            return None;
        }
        worst = worst.max((x.1 - y.1).abs());
    }
    Some(worst)
}

/// First time at which the two runs' event sequences separate by `tol`.
fn separation_time(a: &Trajectory, b: &Trajectory, tol: f64) -> Option<f64> {
    event_times(a)
        .iter()
        .zip(&event_times(b))
        .find(|(x, y)| x.0 != y.0 || x.3 != y.3 || (x.1 - y.1).abs() >= tol)
        .map(|(x, _)| x.1)
}

pub fn integrator_fidelity() -> Outcome {
    guarded(9, "integrator fidelity", |c| {
        let mut rng = StdRng::seed_from_u64(9);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            let m = Mat::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
            let b = Vector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
            let w = Vector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
            let exact = exact_affine_oracle(&m, &b, &w, 1e-3)?;
            worst = worst.max((rk4_affine(&m, &b, &w, 1e-3) - exact).norm());
        }
        c.at_most("rk4 vs exact step, 100 systems, h = 1e-3", worst, 1e-10);

        let s = unstable_plant()?;
        let d = design(&s.inputs)?;
        let period = s.inputs.period;
        let tol = 1e-6 * period;
        let run = |t_end: f64, h: f64| -> Result<Trajectory> {
            let mut cfg = s.sim_config(t_end);
            cfg.t_end = t_end;
            cfg.h = Some(h);
            Simulator::new(&d, &cfg)?.run()
        };
        let horizon = REFINEMENT_PERIODS * period;
        let (a, b) = (run(horizon, period / 1000.0)?, run(horizon, period / 2000.0)?);
        match max_shift(&a, &b) {
            Some(shift) => c.at_most(
                &format!("event shift under h -> h/2 over [0, {horizon}] ({} events)", a.outputs.len() + a.inputs.len()),
                shift,
                tol,
            ),
            None => c.check(false, format!("event sequences differ under h -> h/2 over [0, {horizon}]")),
        }
        let long = 4.0 * horizon;
        let (a, b) = (run(long, period / 1000.0)?, run(long, period / 2000.0)?);
        match separation_time(&a, &b, tol) {
            Some(t) => c.note(format!("open-loop growth separates the runs by 1e-6 T at t = {t:.2}")),
            None => c.note(format!("runs stay within 1e-6 T up to t = {long}")),
        }
        Ok(None)
    })
}

pub fn run_all() -> Vec<Outcome> {
    vec![
        output_constants(),
        input_constants(),
        closed_loop(),
        output_error_identity(),
        growth_bound_oracle(),
        quantizer_contract(),
        recursion_equivalence(),
        oscillator(),
        integrator_fidelity(),
    ]
}
