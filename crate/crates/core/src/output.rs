//! CSV trace and key=value summary writers.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::sim::{SimSummary, SimTrace};

/// A named group of CSV columns. Vector groups expand to one column per
/// component with a `_i` suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnGroup {
    T,
    YCmd,
    YCmdPlusV,
    YReg,
    EyI,
    Xp,
    UCmd,
    U,
    V,
    Lambda1,
    Lambda2,
    G1,
    G2,
    BigG1,
    BigG2,
    D,
    URate,
    Xa,
    XaDot,
}

const ALL_GROUPS: [ColumnGroup; 19] = [
    ColumnGroup::T,
    ColumnGroup::YCmd,
    ColumnGroup::YCmdPlusV,
    ColumnGroup::YReg,
    ColumnGroup::EyI,
    ColumnGroup::Xp,
    ColumnGroup::UCmd,
    ColumnGroup::U,
    ColumnGroup::V,
    ColumnGroup::Lambda1,
    ColumnGroup::Lambda2,
    ColumnGroup::G1,
    ColumnGroup::G2,
    ColumnGroup::BigG1,
    ColumnGroup::BigG2,
    ColumnGroup::D,
    ColumnGroup::URate,
    ColumnGroup::Xa,
    ColumnGroup::XaDot,
];

impl ColumnGroup {
    /// Groups written when the scenario does not select columns.
    pub const DEFAULT: [ColumnGroup; 16] = [
        ColumnGroup::T,
        ColumnGroup::YCmd,
        ColumnGroup::YCmdPlusV,
        ColumnGroup::YReg,
        ColumnGroup::EyI,
        ColumnGroup::Xp,
        ColumnGroup::UCmd,
        ColumnGroup::U,
        ColumnGroup::V,
        ColumnGroup::Lambda1,
        ColumnGroup::Lambda2,
        ColumnGroup::G1,
        ColumnGroup::G2,
        ColumnGroup::BigG1,
        ColumnGroup::BigG2,
        ColumnGroup::D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ColumnGroup::T => "t",
            ColumnGroup::YCmd => "y_cmd",
            ColumnGroup::YCmdPlusV => "y_cmd_plus_v",
            ColumnGroup::YReg => "y_reg",
            ColumnGroup::EyI => "e_yI",
            ColumnGroup::Xp => "xp",
            ColumnGroup::UCmd => "u_cmd",
            ColumnGroup::U => "u",
            ColumnGroup::V => "v",
            ColumnGroup::Lambda1 => "lambda1",
            ColumnGroup::Lambda2 => "lambda2",
            ColumnGroup::G1 => "g1",
            ColumnGroup::G2 => "g2",
            ColumnGroup::BigG1 => "G1",
            ColumnGroup::BigG2 => "G2",
            ColumnGroup::D => "d",
            ColumnGroup::URate => "u_rate",
            ColumnGroup::Xa => "xa",
            ColumnGroup::XaDot => "xa_dot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ALL_GROUPS.iter().copied().find(|g| g.name() == s)
    }

    /// Column names for a plant with `n_p` states and `m` inputs. Scalar
    /// signals carry no suffix; `y_cmd`, `y_cmd_plus_v`, `y_reg` and `e_yI`
    /// are suffixed only when `m > 1`, every other vector is always
    /// suffixed.
    pub fn headers(self, n_p: usize, m: usize) -> Vec<String> {
        let name = self.name();
        let indexed = |k: usize| (0..k).map(|i| format!("{name}_{i}")).collect::<Vec<_>>();
        match self {
            ColumnGroup::T | ColumnGroup::D => vec![name.to_string()],
            ColumnGroup::YCmd | ColumnGroup::YCmdPlusV | ColumnGroup::YReg | ColumnGroup::EyI => {
                if m == 1 {
                    vec![name.to_string()]
                } else {
                    indexed(m)
                }
            }
            ColumnGroup::Xp => indexed(n_p),
            _ => indexed(m),
        }
    }
}

/// Scientific notation with 17 significant digits.
fn fmt_value(out: &mut String, x: f64) {
    let _ = write!(out, "{x:.16e}");
}

/// Renders the trace as CSV text.
pub fn render_csv(trace: &SimTrace, groups: &[ColumnGroup]) -> String {
    let (n_p, m) = (trace.n_p, trace.m);
    let header: Vec<String> = groups.iter().flat_map(|g| g.headers(n_p, m)).collect();
    let mut out = header.join(",");
    out.push('\n');
    for row in &trace.rows {
        let mut first = true;
        for g in groups {
            let scalar = [row.t];
            let d = [row.d];
            let values: &[f64] = match g {
                ColumnGroup::T => &scalar,
                ColumnGroup::D => &d,
                ColumnGroup::YCmd => row.y_cmd.as_slice(),
                ColumnGroup::YCmdPlusV => row.y_cmd_plus_v.as_slice(),
                ColumnGroup::YReg => row.y_reg.as_slice(),
                ColumnGroup::EyI => row.e_yi.as_slice(),
                ColumnGroup::Xp => row.x_p.as_slice(),
                ColumnGroup::UCmd => row.u_cmd.as_slice(),
                ColumnGroup::U => row.u.as_slice(),
                ColumnGroup::V => row.v.as_slice(),
                ColumnGroup::Lambda1 => row.lambda1.as_slice(),
                ColumnGroup::Lambda2 => row.lambda2.as_slice(),
                ColumnGroup::G1 => row.g1.as_slice(),
                ColumnGroup::G2 => row.g2.as_slice(),
                ColumnGroup::BigG1 => row.big_g1.as_slice(),
                ColumnGroup::BigG2 => row.big_g2.as_slice(),
                ColumnGroup::URate => row.u_rate.as_slice(),
                ColumnGroup::Xa => row.x_a.as_slice(),
                ColumnGroup::XaDot => row.x_a_dot.as_slice(),
            };
            for &x in values {
                if !first {
                    out.push(',');
                }
                first = false;
                fmt_value(&mut out, x);
            }
        }
        out.push('\n');
    }
    out
}

pub fn emit_csv(trace: &SimTrace, groups: &[ColumnGroup], path: &Path) -> io::Result<()> {
    std::fs::write(path, render_csv(trace, groups))
}

/// Parsed CSV: header names and numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or("empty CSV")?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|f| f.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1)))
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != header.len() {
                return Err(format!("row {} has {} fields, header has {}", i + 1, row.len(), header.len()));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// `key=value` lines, one metric per line, in a fixed order.
pub fn render_summary(name: &str, summary: &SimSummary, extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario={name}");
    let metrics = [
        ("peak_abs_e_yI", summary.peak_abs_e_yi),
        ("peak_abs_u_cmd", summary.peak_abs_u_cmd),
        ("peak_abs_u", summary.peak_abs_u),
        ("saturated_time_s", summary.saturated_time),
        ("peak_violation", summary.peak_violation),
        ("peak_active_G", summary.peak_active_barrier),
        ("peak_G", summary.peak_barrier),
        ("settling_time_s", summary.settling_time),
        ("final_tracking_error", summary.final_tracking_error),
    ];
    for (k, v) in metrics {
        let _ = writeln!(s, "{k}={v:.16e}");
    }
    for (k, v) in extra {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aw::CbfParams;
    use crate::lqr::ServoGains;
    use crate::lti::{PlantModel, PositionLimits};
    use crate::sim::{integrate, SimConfig, SignalSpec};
    use nalgebra::dmatrix;

    fn short_trace(steps: usize) -> SimTrace {
        let plant = PlantModel::short_period();
        let gains = ServoGains::new(dmatrix![-4.4721], dmatrix![-1.0369, -0.58504]).unwrap();
        let limits = PositionLimits::symmetric(1, 0.1745).unwrap();
        let mut cfg = SimConfig::new(2, 1);
        cfg.duration = steps as f64 * 1e-3;
        cfg.command = SignalSpec::step(0.1, 0.0);
        integrate(&cfg, &plant, &gains, &limits, CbfParams::new(4.4721).unwrap()).unwrap()
    }

    #[test]
    fn three_rows_make_four_lines() {
        let mut tr = short_trace(5);
        tr.rows.truncate(3);
        let text = render_csv(&tr, &ColumnGroup::DEFAULT);
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn default_header_for_single_input() {
        let tr = short_trace(1);
        let text = render_csv(&tr, &ColumnGroup::DEFAULT);
        assert_eq!(
            text.lines().next().unwrap(),
            "t,y_cmd,y_cmd_plus_v,y_reg,e_yI,xp_0,xp_1,u_cmd_0,u_0,v_0,lambda1_0,lambda2_0,g1_0,g2_0,G1_0,G2_0,d"
        );
    }

    #[test]
    fn values_round_trip_exactly() {
        let tr = short_trace(20);
        let text = render_csv(&tr, &ColumnGroup::DEFAULT);
        assert_eq!(text, render_csv(&tr, &ColumnGroup::DEFAULT));
        let table = CsvTable::parse(&text).unwrap();
        let x1 = table.column("xp_1").unwrap();
        for (row, x) in tr.rows.iter().zip(x1) {
            assert_eq!(row.x_p[1], x);
        }
    }

    #[test]
    fn multi_input_headers_are_suffixed() {
        assert_eq!(ColumnGroup::EyI.headers(3, 2), vec!["e_yI_0", "e_yI_1"]);
        assert_eq!(ColumnGroup::U.headers(3, 1), vec!["u_0"]);
        assert_eq!(ColumnGroup::parse("G2"), Some(ColumnGroup::BigG2));
        assert_eq!(ColumnGroup::parse("bogus"), None);
    }
}
