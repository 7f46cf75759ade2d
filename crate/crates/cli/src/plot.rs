//! Reduction of `trajectory.csv` to plot-ready series.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use khop_ppo::sim::Scenario;
use khop_ppo::Error;

pub struct TrajectoryTable {
    index: HashMap<String, usize>,
    rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let index = reader
            .headers()?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|v| {
                    if v.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        v.parse::<f64>()
                    }
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("{}: row {}: {e}", path.display(), line + 2)))?;
            rows.push(row);
        }
        Ok(TrajectoryTable { index, rows })
    }

    fn column(&self, name: &str) -> Result<usize, Error> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("trajectory has no column {name:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    State(usize),
    Input(usize),
    Consensus,
}

impl Selection {
    pub fn file_stem(self) -> String {
        match self {
            Selection::State(i) => format!("agent{}_state", i + 1),
            Selection::Input(i) => format!("agent{}_input", i + 1),
            Selection::Consensus => "consensus".into(),
        }
    }
}

/// Parses `agent<N>.state`, `agent<N>.input`, `agent<N>` and `consensus`.
/// An empty list selects every estimated target and the consensus series.
pub fn parse_selection(items: &[String], scenario: &Scenario) -> anyhow::Result<Vec<Selection>> {
    let n = scenario.agents();
    if items.is_empty() {
        let mut all = Vec::new();
        for i in 0..n {
            if scenario.state_banks[i].is_some() {
                all.push(Selection::State(i));
            }
            if scenario.input_banks[i].is_some() {
                all.push(Selection::Input(i));
            }
        }
        if scenario.homogeneous_dim().is_some() {
            all.push(Selection::Consensus);
        }
        return Ok(all);
    }
    let mut out = Vec::new();
    for item in items {
        if item == "consensus" {
            out.push(Selection::Consensus);
            continue;
        }
        let (agent, channel) = match item.split_once('.') {
            Some((a, c)) => (a, Some(c)),
            None => (item.as_str(), None),
        };
        let id: usize = agent
            .strip_prefix("agent")
            .and_then(|s| s.parse().ok())
            .filter(|&id| id >= 1 && id <= n)
            .ok_or_else(|| Error::Config(format!("bad selection {item:?}")))?;
        match channel {
            Some("state") => out.push(Selection::State(id - 1)),
            Some("input") => out.push(Selection::Input(id - 1)),
            None => {
                out.push(Selection::State(id - 1));
                out.push(Selection::Input(id - 1));
            }
            Some(_) => return Err(Error::Config(format!("bad selection {item:?}")).into()),
        }
    }
    Ok(out)
}

pub struct Series {
    title: String,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    log_scale: bool,
    /// First column drawn by [`Series::to_svg`].
    first_plotted: usize,
}

/// Builds one series. Bounds are evaluated from the scenario's funnels, not
/// read from the trajectory.
pub fn reduce(table: &TrajectoryTable, scenario: &Scenario, sel: Selection) -> anyhow::Result<Series> {
    let t_col = table.column("t")?;
    match sel {
        Selection::State(i) | Selection::Input(i) => {
            let input = matches!(sel, Selection::Input(_));
            let bank = if input {
                scenario.input_banks[i].as_ref()
            } else {
                scenario.state_banks[i].as_ref()
            };
            let Some(bank) = bank else {
                bail!(Error::Config(format!(
                    "agent {} has no {} funnels in this scenario",
                    i + 1,
                    if input { "input" } else { "state" }
                )));
            };
            let (err, dis) = if input { ("g_err", "mu") } else { ("x_err", "xi") };
            let mut err_cols = Vec::new();
            let mut dis_cols = Vec::new();
            for &e in &scenario.topology.neighborhoods[i].members {
                for c in 1..=scenario.layout.dim(i) {
                    err_cols.push(table.column(&format!("agent{}.est{}.{err}.{c}", e + 1, i + 1))?);
                    dis_cols.push(table.column(&format!("agent{}.est{}.{dis}.{c}", e + 1, i + 1))?);
                }
            }
            let max_abs = |row: &[f64], cols: &[usize]| cols.iter().fold(0.0f64, |m, &c| m.max(row[c].abs()));
            let rows = table
                .rows
                .iter()
                .map(|row| {
                    let t = row[t_col];
                    let envelope = bank
                        .funnels
                        .iter()
                        .map(|f| f.value(t))
                        .fold(f64::INFINITY, f64::min);
                    vec![t, max_abs(row, &err_cols), bank.target_bound.value(t), max_abs(row, &dis_cols), envelope]
                })
                .collect();
            let (eb, fb) = if input { ("theta", "omega") } else { ("delta", "rho") };
            Ok(Series {
                title: format!("agent {} {} estimation", i + 1, if input { "input" } else { "state" }),
                columns: vec![
                    "t".into(),
                    "max_abs_error".into(),
                    eb.into(),
                    "max_abs_disagreement".into(),
                    fb.into(),
                ],
                rows,
                log_scale: true,
                first_plotted: 1,
            })
        }
        Selection::Consensus => {
            let norm = table.column("consensus_norm")?;
            let mut columns = vec!["t".to_string(), "consensus_norm".to_string()];
            let mut cols = vec![t_col, norm];
            for a in 0..scenario.agents() {
                for c in 1..=scenario.layout.dim(a) {
                    let name = format!("agent{}.x.{c}", a + 1);
                    cols.push(table.column(&format!("agent{}.self.x.{c}", a + 1))?);
                    columns.push(name);
                }
            }
            let rows = table
                .rows
                .iter()
                .map(|row| cols.iter().map(|&c| row[c]).collect())
                .collect();
            Ok(Series {
                title: "consensus".into(),
                columns,
                rows,
                log_scale: false,
                first_plotted: 2,
            })
        }
    }
}

impl Series {
    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Line chart of every non-time column; bounds are drawn dashed.
    pub fn to_svg(&self) -> String {
        const W: f64 = 720.0;
        const H: f64 = 420.0;
        const PAD: f64 = 50.0;
        const COLORS: [&str; 8] = [
            "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
        ];
        let map_y = |v: f64| if self.log_scale { v.max(1e-12).log10() } else { v };
        let (mut t0, mut t1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        let series: Vec<usize> = (self.first_plotted..self.columns.len()).collect();
        for row in &self.rows {
            t0 = t0.min(row[0]);
            t1 = t1.max(row[0]);
            for &c in &series {
                let v = map_y(row[c]);
                if v.is_finite() {
                    y0 = y0.min(v);
                    y1 = y1.max(v);
                }
            }
        }
        if !(t1 > t0) {
            t1 = t0 + 1.0;
        }
        if !(y1 > y0) {
            y1 = y0 + 1.0;
        }
        let sx = |t: f64| PAD + (t - t0) / (t1 - t0) * (W - 2.0 * PAD);
        let sy = |v: f64| H - PAD - (map_y(v) - y0) / (y1 - y0) * (H - 2.0 * PAD);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            W / 2.0,
            self.title
        );
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        let y_label = |v: f64| if self.log_scale { format!("1e{v:.1}") } else { format!("{v:.3}") };
        let _ = writeln!(
            s,
            r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{}</text><text x="4" y="{}" font-family="sans-serif" font-size="10">{}</text>"#,
            PAD + 4.0,
            y_label(y1),
            H - PAD,
            y_label(y0)
        );
        let _ = writeln!(
            s,
            r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="10">t = {t0}</text><text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">t = {t1}</text>"#,
            H - PAD + 14.0,
            W - PAD,
            H - PAD + 14.0
        );
        for (k, &c) in series.iter().enumerate() {
            let name = &self.columns[c];
            let bound = matches!(name.as_str(), "delta" | "rho" | "theta" | "omega");
            let points: Vec<String> = self
                .rows
                .iter()
                .filter(|r| map_y(r[c]).is_finite())
                .map(|r| format!("{:.2},{:.2}", sx(r[0]), sy(r[c])))
                .collect();
            let color = COLORS[k % COLORS.len()];
            let dash = if bound { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.2"{dash} points="{}"><title>{name}</title></polyline>"#,
                points.join(" ")
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
