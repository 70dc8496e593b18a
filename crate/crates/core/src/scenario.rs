//! Scenario files: plant, gains, design parameters, simulation settings and
//! optional published reference values, in TOML.

use std::path::Path;

use serde::Deserialize;

use crate::design::{DesignInputs, Reference};
use crate::error::{Error, Result};
use crate::linalg::{mat_from_rows, Mat, Vector};
use crate::sim::SimConfig;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "C")]
    c: Rows,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGains {
    #[serde(rename = "K")]
    k: Rows,
    #[serde(rename = "L")]
    l: Rows,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDesign {
    #[serde(rename = "Q_o")]
    q_o: Rows,
    #[serde(rename = "Q_c")]
    q_c: Rows,
    eps_o: f64,
    eps_c: f64,
    xi_frac_o: f64,
    xi_frac_c: f64,
    #[serde(default = "one")]
    beta_tilde: f64,
    rho_bar: f64,
    rho_bar_u: f64,
    #[serde(rename = "T")]
    period: f64,
    delta_y: f64,
    delta_u: f64,
    eta_star: Option<usize>,
    gap_floor: Option<f64>,
    lyapunov_decimals: Option<u32>,
    #[serde(default)]
    time_regularization: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    x0: Vec<f64>,
    z0: Vec<f64>,
    #[serde(rename = "E0")]
    e0: Option<f64>,
    t_end: Option<f64>,
    h: Option<f64>,
    h_warm: Option<f64>,
    nu_warm: Option<f64>,
    record_dt: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReference {
    #[serde(rename = "P_o")]
    p_o: Option<Rows>,
    #[serde(rename = "P_c")]
    p_c: Option<Rows>,
    alpha: Option<f64>,
    beta_c: Option<f64>,
    xi_o: Option<f64>,
    chi_o: Option<f64>,
    xi_c: Option<f64>,
    chi_c: Option<f64>,
    #[serde(rename = "R_y")]
    r_y: Option<f64>,
    #[serde(rename = "R_u")]
    r_u: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    plant: RawPlant,
    gains: RawGains,
    design: RawDesign,
    simulation: RawSimulation,
    reference: Option<RawReference>,
    output: Option<RawOutput>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub inputs: DesignInputs,
    pub x0: Vector,
    pub z0: Vector,
    pub e0: Option<f64>,
    pub t_end: Option<f64>,
    pub h: Option<f64>,
    pub h_warm: Option<f64>,
    pub nu_warm: Option<f64>,
    pub record_dt: Option<f64>,
    pub reference: Reference,
    pub out_dir: Option<String>,
}

fn matrix(field: &str, rows: &Rows) -> Result<Mat> {
    mat_from_rows(rows).map_err(|e| match e {
        Error::Dimension(msg) => Error::Dimension(format!("{field}: {msg}")),
        Error::NonFinite { row, col } => Error::Config(format!("{field}: non-finite entry at ({row}, {col})")),
        e => e,
    })
}

fn expect_shape(field: &str, m: &Mat, rows: usize, cols: usize, why: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::Dimension(format!(
            "{field} is {}x{}, expected {rows}x{cols} ({why})",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn expect_len(field: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!("{field} has {} entries, expected n = {n}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{field} has a non-finite entry")));
    }
    Ok(())
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let a = matrix("plant.A", &raw.plant.a)?;
        let b = matrix("plant.B", &raw.plant.b)?;
        let c = matrix("plant.C", &raw.plant.c)?;
        let k = matrix("gains.K", &raw.gains.k)?;
        let l = matrix("gains.L", &raw.gains.l)?;
        let q_o = matrix("design.Q_o", &raw.design.q_o)?;
        let q_c = matrix("design.Q_c", &raw.design.q_c)?;
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        expect_shape("plant.A", &a, n, n, "A must be square")?;
        expect_shape("plant.B", &b, n, m, "n rows")?;
        expect_shape("plant.C", &c, p, n, "n columns")?;
        expect_shape("gains.K", &k, m, n, "m = columns of B, n = order of A")?;
        expect_shape("gains.L", &l, n, p, "n = order of A, p = rows of C")?;
        expect_shape("design.Q_o", &q_o, n, n, "n = order of A")?;
        expect_shape("design.Q_c", &q_c, n, n, "n = order of A")?;
        expect_len("simulation.x0", &raw.simulation.x0, n)?;
        expect_len("simulation.z0", &raw.simulation.z0, n)?;

        let d = &raw.design;
        let inputs = DesignInputs {
            a,
            b,
            c,
            k,
            l,
            q_o,
            q_c,
            eps_o: d.eps_o,
            eps_c: d.eps_c,
            xi_frac_o: d.xi_frac_o,
            xi_frac_c: d.xi_frac_c,
            beta_tilde: d.beta_tilde,
            rho_bar: d.rho_bar,
            rho_bar_u: d.rho_bar_u,
            period: d.period,
            delta_y: d.delta_y,
            delta_u: d.delta_u,
            eta_star: d.eta_star,
            gap_floor: d.gap_floor,
            lyapunov_decimals: d.lyapunov_decimals,
            time_regularization: d.time_regularization,
        };
        inputs.validate()?;

        let r = raw.reference.unwrap_or_default();
        let reference = Reference {
            p_o: r.p_o.as_ref().map(|m| matrix("reference.P_o", m)).transpose()?,
            p_c: r.p_c.as_ref().map(|m| matrix("reference.P_c", m)).transpose()?,
            alpha: r.alpha,
            beta_c: r.beta_c,
            xi_o: r.xi_o,
            chi_o: r.chi_o,
            xi_c: r.xi_c,
            chi_c: r.chi_c,
            r_y: r.r_y,
            r_u: r.r_u,
        };
        let s = raw.simulation;
        for (field, v) in [
            ("simulation.E0", s.e0),
            ("simulation.t_end", s.t_end),
            ("simulation.h", s.h),
            ("simulation.h_warm", s.h_warm),
            ("simulation.nu_warm", s.nu_warm),
            ("simulation.record_dt", s.record_dt),
        ] {
            if let Some(v) = v {
                let ok = if field == "simulation.E0" { v >= 0.0 } else { v > 0.0 };
                if !(ok && v.is_finite()) {
                    return Err(Error::Config(format!("{field} = {v} is out of range")));
                }
            }
        }
        Ok(Self {
            name: raw.name.unwrap_or_else(|| "scenario".into()),
            inputs,
            x0: Vector::from_vec(s.x0),
            z0: Vector::from_vec(s.z0),
            e0: s.e0,
            t_end: s.t_end,
            h: s.h,
            h_warm: s.h_warm,
            nu_warm: s.nu_warm,
            record_dt: s.record_dt,
            reference,
            out_dir: raw.output.and_then(|o| o.dir),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Simulation settings; `t_end` falls back to the design's horizon.
    pub fn sim_config(&self, suggested_t_end: f64) -> SimConfig {
        SimConfig {
            x0: self.x0.clone(),
            z0: self.z0.clone(),
            e0: self.e0,
            t_end: self.t_end.unwrap_or(suggested_t_end),
            h: self.h,
            h_warm: self.h_warm,
            nu_warm: self.nu_warm,
            record_dt: self.record_dt,
            strict: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
[plant]
A = [[1.0, 1.0], [0.0, 0.5]]
B = [[0.0], [1.0]]
C = [[1.0, 0.0]]

[gains]
K = [[-6.0, -4.5]]
L = [[4.0], [3.0]]

[design]
Q_o = [[1.0, 0.5], [0.5, 1.0]]
Q_c = [[1.0, 0.5], [0.5, 1.0]]
eps_o = 0.75
eps_c = 0.85
xi_frac_o = 0.1
xi_frac_c = 0.1
rho_bar = 0.975
rho_bar_u = 0.85
T = 5.0
delta_y = 1.0
delta_u = 1.0

[simulation]
x0 = [1.0, -1.0]
z0 = [0.0, 0.0]
"#;

    #[test]
    fn parses_minimal_scenario() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.inputs.a.nrows(), 2);
        assert_eq!(s.inputs.beta_tilde, 1.0);
        assert!(!s.inputs.time_regularization);
        assert!(s.reference.p_o.is_none());
        assert_eq!(s.sim_config(42.0).t_end, 42.0);
    }

    #[test]
    fn dimension_errors_name_the_field() {
        let bad = MINIMAL.replace("B = [[0.0], [1.0]]", "B = [[0.0], [1.0], [2.0]]");
        let err = Scenario::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("plant.B"), "{err}");
        let bad = MINIMAL.replace("L = [[4.0], [3.0]]", "L = [[4.0, 1.0], [3.0, 1.0]]");
        let err = Scenario::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("gains.L"), "{err}");
        let bad = MINIMAL.replace("x0 = [1.0, -1.0]", "x0 = [1.0]");
        let err = Scenario::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("simulation.x0"), "{err}");
        let bad = MINIMAL.replace("K = [[-6.0, -4.5]]", "K = [[-6.0], [-4.5]]");
        let err = Scenario::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("gains.K"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ranges() {
        let bad = MINIMAL.replace("eps_o = 0.75", "eps_o = 0.75\nepsilon = 1.0");
        assert!(matches!(Scenario::from_toml(&bad), Err(Error::Parse(_))));
        let bad = MINIMAL.replace("eps_o = 0.75", "eps_o = 1.5");
        assert!(Scenario::from_toml(&bad).is_err());
        let bad = MINIMAL.replace("z0 = [0.0, 0.0]", "z0 = [0.0, 0.0]\nh = -1.0");
        assert!(Scenario::from_toml(&bad).unwrap_err().to_string().contains("simulation.h"));
    }
}
