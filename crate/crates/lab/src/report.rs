//! CSV tables, JSON metadata and SVG plots.
//!
//! Floats print with Rust's shortest round-trip formatting, so rerunning with
//! the same inputs reproduces every file byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use isaacs_core::{GapTable, LatticeValues, SimpleMarkovCounterStrategy, SimpleMarkovStrategy, ValueFunction};

use crate::error::{LabError, LabResult};
use crate::experiments::{MeshSummary, SaddleReport, Side};

fn header_x(d: usize) -> String {
    (1..=d).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
}

fn join_point(x: &[f64]) -> String {
    x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

/// `t,x1..xd,value` for the levels nearest to each of `times` (all levels if `None`).
pub fn value_csv(vf: &ValueFunction, times: Option<&[f64]>) -> String {
    let grid = vf.grid();
    let mut out = format!("t,{},value\n", header_x(grid.dim()));
    let levels: Vec<usize> = match times {
        Some(ts) => {
            let mut l: Vec<usize> = ts.iter().map(|&t| vf.nearest_level(t)).collect();
            l.sort_unstable_by(|a, b| b.cmp(a));
            l.dedup();
            l
        }
        None => (0..vf.levels().len()).rev().collect(),
    };
    let mut x = vec![0.0; grid.dim()];
    for level in levels {
        let t = vf.times()[level];
        for (node, v) in vf.levels()[level].iter().enumerate() {
            grid.coords_into(node, &mut x);
            let _ = write!(out, "{t}");
            for c in &x {
                let _ = write!(out, ",{c}");
            }
            let _ = writeln!(out, ",{v}");
        }
    }
    out
}

/// The lattice values in the solver's value layout, in increasing time.
pub fn lattice_csv(values: &LatticeValues) -> String {
    let mut out = String::from("t,x1,value\n");
    for (t, level) in values.times.iter().zip(&values.levels) {
        for (i, v) in level.iter().enumerate() {
            let _ = writeln!(out, "{t},{},{v}", values.node_x(i));
        }
    }
    out
}

pub fn strategy_csv(alpha: &SimpleMarkovStrategy) -> String {
    let mut out = String::from("k,node,action\n");
    for (k, table) in alpha.tables().iter().enumerate() {
        for (node, a) in table.iter().enumerate() {
            let _ = writeln!(out, "{},{node},{a}", k + 1);
        }
    }
    out
}

pub fn counter_csv(gamma: &SimpleMarkovCounterStrategy) -> String {
    let nu = gamma.u_grid().len();
    let mut out = String::from("k,node,u,action\n");
    for (k, table) in gamma.tables().iter().enumerate() {
        for (i, a) in table.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{a}", k + 1, i / nu, i % nu);
        }
    }
    out
}

/// `mesh,x,v_pi_minus,v_fd,v_pi_plus,gap_lo,gap_hi,tol`; multi-dimensional
/// points join their coordinates with `;`.
pub fn gaps_csv(table: &GapTable) -> String {
    let mut out = String::from("mesh,x,v_pi_minus,v_fd,v_pi_plus,gap_lo,gap_hi,tol\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.mesh,
            join_point(&r.x),
            r.v_pi_minus,
            r.v_fd,
            r.v_pi_plus,
            r.gap_lo,
            r.gap_hi,
            r.tol
        );
    }
    out
}

/// `x,side,source,mean,std_err,diff_mean,diff_std_err,threshold,pass`.
pub fn saddle_csv(report: &SaddleReport) -> String {
    let mut out = String::from("x,side,source,mean,std_err,diff_mean,diff_std_err,threshold,pass\n");
    for p in &report.points {
        let x = join_point(&p.x);
        let _ = writeln!(
            out,
            "{x},base,strategy vs counter-strategy,{},{},0,0,0,true",
            p.base_mean, p.base_std_err
        );
        for e in &p.entries {
            let side = match e.side {
                Side::U => "u",
                Side::V => "v",
            };
            let _ = writeln!(
                out,
                "{x},{side},{},{},{},{},{},{},{}",
                e.source, e.mean, e.std_err, e.diff_mean, e.diff_std_err, e.threshold, e.pass
            );
        }
    }
    out
}

/// Log-log plot of the largest gap against the mesh.
pub fn gaps_svg(summary: &[MeshSummary]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 60.0;
    let pts: Vec<(f64, f64)> = summary
        .iter()
        .filter(|s| s.mesh > 0.0 && s.max_gap > 0.0)
        .map(|s| (s.mesh.log10(), s.max_gap.log10()))
        .collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">max gap vs mesh (log-log)</text>",
        W / 2.0
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>",
        H - PAD,
        W - PAD / 2.0,
        H - PAD,
        H - PAD
    );
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
        if hi - lo < 1e-9 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo))
        }
    };
    let (x0, x1) = span(&mut pts.iter().map(|p| p.0));
    let (y0, y1) = span(&mut pts.iter().map(|p| p.1));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 1.5 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let line: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(
        svg,
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>",
        line.join(" ")
    );
    for (s, &(x, y)) in summary.iter().filter(|s| s.mesh > 0.0 && s.max_gap > 0.0).zip(&pts) {
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"steelblue\"/>",
            sx(x),
            sy(y)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">T/{} : {:.3e}</text>",
            sx(x) + 6.0,
            sy(y) - 6.0,
            s.intervals,
            s.max_gap
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">log10 mesh</text>",
        W / 2.0,
        H - 20.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 18 {})\" text-anchor=\"middle\">log10 max gap</text>",
        H / 2.0,
        H / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Named file contents to be written together.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub files: Vec<(String, String)>,
}

impl Report {
    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<String>) {
        self.files.push((name.into(), contents.into()));
    }

    pub fn add_json(&mut self, name: impl Into<String>, value: &serde_json::Value) {
        let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialise");
        text.push('\n');
        self.add(name, text);
    }
}

/// Writes every file of `report` into `out_dir`, creating it if needed.
pub fn emit_report(report: &Report, out_dir: &Path) -> LabResult<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    let mut written = Vec::with_capacity(report.files.len());
    for (name, contents) in &report.files {
        let path = out_dir.join(name);
        std::fs::write(&path, contents).map_err(|e| LabError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use isaacs_core::{Axis, GameModel, ModelSource, SpatialGrid, TimeGrid};

    fn model() -> GameModel {
        GameModel::from_source(&ModelSource {
            d: 1,
            d_prime: 1,
            horizon: 1.0,
            drift: vec!["u1 + v1".into()],
            sigma: vec![vec!["1".into()]],
            payoff: "cos(x1)".into(),
            u_axes: vec![Axis::new(-1.0, 1.0, 3)],
            v_axes: vec![Axis::new(-1.0, 1.0, 3)],
        })
        .unwrap()
    }

    #[test]
    fn csv_layouts() {
        let m = model();
        let g = SpatialGrid::cube(1, -1.0, 1.0, 0.5).unwrap();
        let vf = isaacs_core::solve_lower_isaacs(&m, &g, 0.0).unwrap();
        let csv = value_csv(&vf, Some(&[0.0, 1.0]));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x1,value");
        assert_eq!(lines.len(), 1 + 2 * 5);
        assert!(lines[1].starts_with("0,-1,"));
        let pi = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let alpha = isaacs_core::synthesize_markov_strategy(&m, &vf, &pi).unwrap();
        let gamma = isaacs_core::synthesize_markov_counter_strategy(&m, &vf, &pi).unwrap();
        assert_eq!(strategy_csv(&alpha).lines().count(), 1 + 2 * 5);
        let c = counter_csv(&gamma);
        assert_eq!(c.lines().next(), Some("k,node,u,action"));
        assert_eq!(c.lines().count(), 1 + 2 * 5 * 3);
        assert!(c.lines().nth(2).unwrap().starts_with("1,0,1,"));
    }

    #[test]
    fn unwritable_directory_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let mut r = Report::default();
        r.add("a.csv", "a\n");
        match emit_report(&r, &blocker.join("sub")) {
            Err(LabError::Io { path, .. }) => assert!(path.starts_with(&blocker)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn svg_is_well_formed() {
        let s = vec![
            MeshSummary {
                intervals: 4,
                mesh: 0.25,
                max_gap: 0.1,
                max_lower_gap: 0.05,
            },
            MeshSummary {
                intervals: 8,
                mesh: 0.125,
                max_gap: 0.04,
                max_lower_gap: 0.02,
            },
        ];
        let svg = gaps_svg(&s);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
