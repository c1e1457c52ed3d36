//! CSV and SVG emission.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use super::{ControllerKind, ExperimentConfig, ExperimentReport, ResultRow, TrialBand};
use crate::dac::fmt17;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["controller", "t", "cost", "cum_cost", "cum_ratio"];

/// Result rows followed by one `id,0,NaN,NaN,NaN` row per failed controller.
pub fn write_results_csv<W: io::Write>(out: W, report: &ExperimentReport) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(CSV_HEADER)?;
    for r in &report.rows {
        wr.write_record([
            r.controller.id().to_string(),
            r.t.to_string(),
            fmt17(r.cost),
            fmt17(r.cum_cost),
            r.cum_ratio.map(fmt17).unwrap_or_default(),
        ])?;
    }
    for f in &report.failures {
        wr.write_record([f.controller.id(), "0", "NaN", "NaN", "NaN"])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_bands_csv<W: io::Write>(out: W, bands: &[TrialBand]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["controller", "t", "mean_cum_cost", "min_cum_cost", "max_cum_cost"])?;
    for b in bands {
        wr.write_record([
            b.controller.id().to_string(),
            b.t.to_string(),
            fmt17(b.mean),
            fmt17(b.min),
            fmt17(b.max),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#7f7f7f", "#9467bd"];

/// Cumulative cost against `t`, one polyline per controller.
pub fn render_svg(rows: &[ResultRow]) -> String {
    let (width, height) = (820.0, 520.0);
    let (left, right, top, bottom) = (80.0, 180.0, 40.0, 60.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let t_max = rows.iter().map(|r| r.t).max().unwrap_or(1).max(1) as f64;
    let y_max = rows
        .iter()
        .map(|r| r.cum_cost)
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let y_max = if y_max > 0.0 { y_max } else { 1.0 };
    let sx = |t: f64| left + plot_w * (t - 1.0).max(0.0) / (t_max - 1.0).max(1.0);
    let sy = |v: f64| top + plot_h * (1.0 - v / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">Cumulative cost</text>"#,
        left + plot_w / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{y0}" stroke="black"/>"#,
        y0 = top + plot_h,
        x1 = left + plot_w
    );
    for k in 0..=4 {
        let frac = k as f64 / 4.0;
        let y = top + plot_h * (1.0 - frac);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{:.3e}</text>"#,
            left - 6.0,
            y + 4.0,
            y_max * frac
        );
        let x = left + plot_w * frac;
        let t = 1.0 + (t_max - 1.0) * frac;
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{:.0}</text>"#,
            top + plot_h + 18.0,
            t
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t</text>"#,
        left + plot_w / 2.0,
        height - 16.0
    );

    let mut kinds: Vec<ControllerKind> = rows.iter().map(|r| r.controller).collect();
    kinds.dedup();
    for (idx, kind) in kinds.iter().enumerate() {
        let colour = PALETTE[idx % PALETTE.len()];
        let points: Vec<String> = rows
            .iter()
            .filter(|r| r.controller == *kind && r.cum_cost.is_finite())
            .map(|r| format!("{:.2},{:.2}", sx(r.t as f64), sy(r.cum_cost)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"><title>{kind}</title></polyline>"#,
            points.join(" ")
        );
        let ly = top + 10.0 + 20.0 * idx as f64;
        let lx = left + plot_w + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="3"/><text x="{}" y="{}">{kind}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn create(path: &Path) -> Result<std::fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::File::create(path).map_err(Error::from)
}

/// Companion path `<stem>.trials.csv` next to the results CSV.
pub fn default_bands_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    csv.with_file_name(format!("{stem}.trials.csv"))
}

/// Writes every output configured in `[output]`; returns the written paths.
pub fn emit_outputs(report: &ExperimentReport, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() && report.failures.is_empty() {
        return Err(Error::invalid("nothing to emit"));
    }
    let mut written = Vec::new();
    if let Some(path) = &cfg.output.csv {
        write_results_csv(io::BufWriter::new(create(path)?), report)?;
        written.push(path.clone());
        if !report.bands.is_empty() {
            let bands = cfg.output.trials_csv.clone().unwrap_or_else(|| default_bands_path(path));
            write_bands_csv(io::BufWriter::new(create(&bands)?), &report.bands)?;
            written.push(bands);
        }
    } else if let (Some(bands), false) = (&cfg.output.trials_csv, report.bands.is_empty()) {
        write_bands_csv(io::BufWriter::new(create(bands)?), &report.bands)?;
        written.push(bands.clone());
    }
    if let Some(path) = &cfg.output.svg {
        std::fs::write(path, render_svg(&report.rows)).map_err(Error::from)?;
        written.push(path.clone());
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::ControllerFailure;

    fn report(rows: Vec<ResultRow>) -> ExperimentReport {
        ExperimentReport {
            horizon: 2,
            rows,
            failures: vec![],
            bands: vec![],
            alpha_star: None,
            dac_memory: None,
            w_bound_exceeded: false,
        }
    }

    fn row(t: usize, cost: f64, cum: f64, ratio: Option<f64>) -> ResultRow {
        ResultRow {
            controller: ControllerKind::H2,
            t,
            cost,
            cum_cost: cum,
            cum_ratio: ratio,
        }
    }

    #[test]
    fn csv_layout() {
        let rep = report(vec![row(1, 0.0, 0.0, None), row(2, 0.1, 0.1, Some(1.0 / 3.0))]);
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &rep).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "controller,t,cost,cum_cost,cum_ratio");
        assert_eq!(lines[1], "h2,1,0.0000000000000000e0,0.0000000000000000e0,");
        assert_eq!(
            lines[2],
            "h2,2,1.0000000000000001e-1,1.0000000000000001e-1,3.3333333333333331e-1"
        );
        let back: f64 = lines[2].rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(back, 1.0 / 3.0);
    }

    #[test]
    fn failure_rows() {
        let mut rep = report(vec![]);
        rep.failures.push(ControllerFailure {
            controller: ControllerKind::Hinf,
            message: "x".into(),
            exit_code: 1,
        });
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &rep).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with("hinf,0,NaN,NaN,NaN\n"));
    }

    #[test]
    fn bands_path() {
        assert_eq!(default_bands_path(Path::new("out/run.csv")), PathBuf::from("out/run.trials.csv"));
    }
}
