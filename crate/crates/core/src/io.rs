//! Run artifacts: trajectory and transmission CSVs, the run summary, and a
//! gnuplot script with the data files it plots.

use std::fs;
use std::path::Path;

use crate::design::{Design, Report};
use crate::error::{Error, Result};
use crate::output_unit::Trigger;
use crate::sim::Trajectory;

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const TRANSMISSIONS_CSV: &str = "transmissions.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const REPORT_TXT: &str = "report.txt";
pub const WARNINGS_TXT: &str = "warnings.txt";
pub const PLOT_SCRIPT: &str = "figure2.gp";
pub const PLOT_YTILDE: &str = "plot_ytilde.dat";
pub const PLOT_YSAMPLES: &str = "plot_ysamples.dat";
pub const PLOT_UNOM: &str = "plot_unom.dat";
pub const PLOT_USTAIRS: &str = "plot_ustairs.dat";

const TRIGGERS: [Trigger; 6] = [
    Trigger::Warmup,
    Trigger::Event,
    Trigger::Persistence,
    Trigger::Window,
    Trigger::Init,
    Trigger::NuJump,
];

/// 17 significant digits, exact round trip for `f64`.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn names(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

pub fn trajectory_header(n: usize, m: usize, p: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(names("x", n));
    h.extend(names("z", n));
    h.extend(names("u", m));
    h.extend(["nu", "mu", "V_o", "V_c"].map(String::from));
    h.extend(names("ytilde", p));
    h.extend(names("unom", m));
    h
}

pub fn transmissions_header(width: usize) -> Vec<String> {
    let mut h: Vec<String> = ["channel", "index", "time", "trigger"].map(String::from).into();
    h.extend(names("s", width));
    h.push("zoom".into());
    h.extend(names("v", width));
    h.extend(names("sampled", width));
    h.push("wire_hex".into());
    h
}

pub fn write_trajectory(path: &Path, design: &Design, traj: &Trajectory) -> Result<()> {
    let (n, m, p) = (design.constants.n, design.constants.m, design.constants.p);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(n, m, p))?;
    for pr in &traj.probes {
        let ytilde = &design.inputs.c * (&pr.x - &pr.z);
        let unom = &design.inputs.k * &pr.z;
        let mut row = vec![fmt(pr.t)];
        row.extend(pr.x.iter().map(|&v| fmt(v)));
        row.extend(pr.z.iter().map(|&v| fmt(v)));
        row.extend(pr.u.iter().map(|&v| fmt(v)));
        row.extend([pr.nu, pr.mu, pr.v_o, pr.v_c].map(fmt));
        row.extend(ytilde.iter().map(|&v| fmt(v)));
        row.extend(unom.iter().map(|&v| fmt(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

struct TxRow<'a> {
    channel: &'static str,
    index: usize,
    time: f64,
    trigger: Trigger,
    symbol: &'a [i64],
    zoom: f64,
    decoded: &'a [f64],
    sampled: &'a [f64],
    wire: &'a [u8],
}

fn tx_record(r: &TxRow, width: usize) -> Vec<String> {
    let pad = |mut v: Vec<String>| {
        v.resize(width, String::new());
        v
    };
    let mut row = vec![r.channel.to_string(), r.index.to_string(), fmt(r.time), r.trigger.as_str().to_string()];
    row.extend(pad(r.symbol.iter().map(|i| i.to_string()).collect()));
    row.push(fmt(r.zoom));
    row.extend(pad(r.decoded.iter().map(|&v| fmt(v)).collect()));
    row.extend(pad(r.sampled.iter().map(|&v| fmt(v)).collect()));
    row.push(hex::encode(r.wire));
    row
}

/// Output and input transmissions merged in time order, output first on ties.
pub fn write_transmissions(path: &Path, design: &Design, traj: &Trajectory) -> Result<()> {
    let width = design.constants.p.max(design.constants.m);
    let mut rows: Vec<TxRow> = traj
        .outputs
        .iter()
        .map(|e| TxRow {
            channel: "output",
            index: e.k,
            time: e.time,
            trigger: e.trigger,
            symbol: &e.symbol.indices,
            zoom: e.zoom,
            decoded: e.decoded.as_slice(),
            sampled: e.ytilde.as_slice(),
            wire: &e.wire,
        })
        .chain(traj.inputs.iter().map(|e| TxRow {
            channel: "input",
            index: e.j,
            time: e.time,
            trigger: e.trigger,
            symbol: &e.symbol.indices,
            zoom: e.zoom,
            decoded: e.decoded.as_slice(),
            sampled: e.unom.as_slice(),
            wire: &e.wire,
        }))
        .collect();
    rows.sort_by(|a, b| a.time.total_cmp(&b.time).then((a.channel == "input").cmp(&(b.channel == "input"))));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(transmissions_header(width))?;
    for r in &rows {
        w.write_record(tx_record(r, width))?;
    }
    w.flush()?;
    Ok(())
}

fn min_or_inf(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn summary(design: &Design, traj: &Trajectory) -> Report {
    let mut r = Report::default();
    for (channel, count) in [("output", traj.outputs.len()), ("input", traj.inputs.len())] {
        r.push(&format!("{channel}.count"), count);
        for t in TRIGGERS {
            let c = if channel == "output" { traj.count_outputs(t) } else { traj.count_inputs(t) };
            if c > 0 {
                r.push(&format!("{channel}.{}", t.as_str()), c);
            }
        }
    }
    let out_gap = min_or_inf(&traj.output_gaps());
    let in_gap = min_or_inf(&traj.input_gaps());
    let out_bound = design.output_dwell.bound();
    let in_bound = design.input_dwell.tau_d;
    r.push("output.min_gap", out_gap);
    r.push("output.dwell_bound", out_bound);
    r.push("output.dwell_respected", out_gap >= out_bound);
    r.push("input.min_gap", in_gap);
    r.push("input.dwell_bound", in_bound);
    r.push("input.dwell_respected", in_gap >= in_bound);
    r.push("eta", traj.eta);
    r.push("nu_eta", traj.nu_eta);
    r.push("mu_0", traj.mu_0);
    if let Some(last) = traj.last() {
        let xt = (&last.x - &last.z).norm();
        r.push("t_end", last.t);
        r.push("final.x_norm", last.x.norm());
        r.push("final.x_tilde_norm", xt);
        r.push("final.z_norm", last.z.norm());
        r.push("final.nu", last.nu);
        r.push("final.nu_ratio", last.nu / traj.nu_eta);
        r.push("final.mu", last.mu);
    }
    r.push("min_sigma_N", traj.min_n_sv);
    r.push("event_evaluations", traj.event_evaluations as usize);
    r.push("nu_floor_hits", traj.nu_floor_hits);
    r.push("mu_floor_hits", traj.mu_floor_hits);
    r.push("warnings", traj.warnings.len());
    r
}

/// Everything `run` leaves in the output directory.
pub fn write_run(dir: &Path, design: &Design, report: &Report, traj: &Trajectory) -> Result<Report> {
    fs::create_dir_all(dir)?;
    write_trajectory(&dir.join(TRAJECTORY_CSV), design, traj)?;
    write_transmissions(&dir.join(TRANSMISSIONS_CSV), design, traj)?;
    fs::write(dir.join(REPORT_TXT), report.to_text())?;
    let s = summary(design, traj);
    fs::write(dir.join(SUMMARY_TXT), s.to_text())?;
    let warnings: String = traj
        .warnings
        .iter()
        .map(|w| format!("{} {} {}\n", fmt(w.time), w.channel, w.detail))
        .collect();
    fs::write(dir.join(WARNINGS_TXT), warnings)?;
    Ok(s)
}

/// A CSV file as header plus raw cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("missing run artifact {}", path.display())));
        }
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("no column `{name}`")))
    }

    /// Columns starting with `prefix` followed by an axis number.
    pub fn axis_columns(&self, prefix: &str) -> Vec<usize> {
        (1..)
            .map_while(|i| self.column(&format!("{prefix}{i}")).ok())
            .collect()
    }

    /// Selected columns of the rows that pass `keep`, parsed as numbers.
    pub fn select(&self, cols: &[usize], keep: impl Fn(&[String]) -> bool) -> Result<Vec<Vec<f64>>> {
        self.rows
            .iter()
            .filter(|r| keep(r))
            .map(|r| {
                cols.iter()
                    .filter(|&&c| !r[c].is_empty())
                    .map(|&c| r[c].parse::<f64>().map_err(|e| Error::Parse(format!("`{}`: {e}", r[c]))))
                    .collect()
            })
            .collect()
    }
}

/// Whitespace-separated data file with a `#` header line.
pub fn write_dat(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = format!("# {}\n", header.join(" "));
    for r in rows {
        out.push_str(&r.iter().map(|&v| fmt(v)).collect::<Vec<_>>().join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_dat(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Parse(format!("{}: missing header", path.display())))?
        .split_whitespace()
        .map(String::from)
        .collect();
    let rows = lines
        .map(|l| {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("`{t}`: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// The four plotted subsets of a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub ytilde: (Vec<String>, Vec<Vec<f64>>),
    pub ysamples: (Vec<String>, Vec<Vec<f64>>),
    pub unom: (Vec<String>, Vec<Vec<f64>>),
    pub ustairs: (Vec<String>, Vec<Vec<f64>>),
}

fn subset(table: &Table, cols: &[usize], keep: impl Fn(&[String]) -> bool) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let header = cols.iter().map(|&c| table.header[c].clone()).collect();
    Ok((header, table.select(cols, keep)?))
}

pub fn plot_data(dir: &Path) -> Result<PlotData> {
    let traj = Table::read_csv(&dir.join(TRAJECTORY_CSV))?;
    let tx = Table::read_csv(&dir.join(TRANSMISSIONS_CSV))?;
    let t = traj.column("t")?;
    let y_cols: Vec<usize> = std::iter::once(t).chain(traj.axis_columns("ytilde")).collect();
    let u_cols: Vec<usize> = std::iter::once(t).chain(traj.axis_columns("unom")).collect();
    let p = y_cols.len() - 1;
    let m = u_cols.len() - 1;
    if p == 0 || m == 0 {
        return Err(Error::Parse(format!("{TRAJECTORY_CSV} lacks ytilde/unom columns")));
    }
    let ch = tx.column("channel")?;
    let time = tx.column("time")?;
    let v = tx.axis_columns("v");
    let ys: Vec<usize> = std::iter::once(time).chain(v.iter().take(p).copied()).collect();
    let us: Vec<usize> = std::iter::once(time).chain(v.iter().take(m).copied()).collect();
    Ok(PlotData {
        ytilde: subset(&traj, &y_cols, |_| true)?,
        ysamples: subset(&tx, &ys, |r| r[ch] == "output")?,
        unom: subset(&traj, &u_cols, |_| true)?,
        ustairs: subset(&tx, &us, |r| r[ch] == "input")?,
    })
}

fn script(data: &PlotData) -> String {
    let mut s = String::from(
        "set terminal pngcairo size 900,700\n\
         set output 'figure2.png'\n\
         set multiplot layout 2,1\n\
         set key top right\n",
    );
    let panel = |s: &mut String, ylabel: &str, cont: &str, cont_hdr: &[String], disc: &str, disc_rows: usize, style: &str| {
        s.push_str(&format!("set ylabel '{ylabel}'\nplot "));
        let mut parts = Vec::new();
        for (i, name) in cont_hdr.iter().enumerate().skip(1) {
            parts.push(format!("'{cont}' using 1:{} with lines title '{name}'", i + 1));
            if disc_rows > 0 {
                parts.push(format!("'{disc}' using 1:{} with {style} title '{name} sent'", i + 1));
            }
        }
        s.push_str(&parts.join(", \\\n     "));
        s.push('\n');
    };
    panel(&mut s, "output error", PLOT_YTILDE, &data.ytilde.0, PLOT_YSAMPLES, data.ysamples.1.len(), "points pt 7 ps 0.5");
    s.push_str("set xlabel 't'\n");
    panel(&mut s, "control", PLOT_UNOM, &data.unom.0, PLOT_USTAIRS, data.ustairs.1.len(), "steps");
    s.push_str("unset multiplot\n");
    s
}

/// Writes the script and data files; returns what was plotted.
pub fn write_plot(dir: &Path) -> Result<PlotData> {
    let data = plot_data(dir)?;
    for (file, (h, rows)) in [
        (PLOT_YTILDE, &data.ytilde),
        (PLOT_YSAMPLES, &data.ysamples),
        (PLOT_UNOM, &data.unom),
        (PLOT_USTAIRS, &data.ustairs),
    ] {
        write_dat(&dir.join(file), h, rows)?;
    }
    fs::write(dir.join(PLOT_SCRIPT), script(&data))?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, f64::MAX, 5e-324, 0.0, -0.0] {
            let s = fmt(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert!(fmt(f64::NAN).parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn dat_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.dat");
        let header = vec!["t".to_string(), "y1".to_string()];
        let rows = vec![vec![0.0, 0.1], vec![1.0 / 3.0, -2.5e-17]];
        write_dat(&path, &header, &rows).unwrap();
        assert_eq!(read_dat(&path).unwrap(), (header, rows));
    }

    #[test]
    fn table_select_skips_empty_cells() {
        let t = Table {
            header: vec!["a".into(), "b".into()],
            rows: vec![vec!["1".into(), "".into()], vec!["2".into(), "3".into()]],
        };
        assert_eq!(t.select(&[0, 1], |_| true).unwrap(), vec![vec![1.0], vec![2.0, 3.0]]);
    }
}
