//! Run artifacts on disk: CSV tables and SVG plots. Writers build the
//! whole file in memory and write once, and every float is printed at
//! fixed precision, so identical inputs produce byte-identical files.
//! The SVG output is presentation only.

use crate::fusion::MetricsReport;
use crate::pipeline::{IqaRow, PlaneEvalRow, TrajectoryRow};
use crate::scene::DepthProfileKind;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to report")]
    Empty,
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    std::fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Fixed-precision cell so reruns stay byte-identical.
fn cell(x: f64) -> String {
    format!("{x:.9}")
}

fn profile_name(kind: DepthProfileKind) -> &'static str {
    match kind {
        DepthProfileKind::Reference => "reference",
        DepthProfileKind::AccurateSparse => "accurate_sparse",
        DepthProfileKind::CompleteSmooth => "complete_smooth",
    }
}

/// One summary table line: the per-run error statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub frames: usize,
    pub mean_position_error: f64,
    pub std_position_error: f64,
    pub mean_orientation_error_deg: f64,
    pub std_orientation_error_deg: f64,
    pub m_a: f64,
    pub marker_updates: usize,
    pub feature_updates: usize,
    pub plane_updates: usize,
    pub dropped_events: usize,
}

impl SummaryRow {
    /// Orientation statistics are converted to degrees here; the
    /// metrics report keeps radians.
    pub fn from_metrics(label: &str, metrics: &MetricsReport) -> Self {
        Self {
            label: label.to_string(),
            frames: metrics.position_errors.len(),
            mean_position_error: metrics.mean_position_error,
            std_position_error: metrics.std_position_error,
            mean_orientation_error_deg: metrics.mean_orientation_error.to_degrees(),
            std_orientation_error_deg: metrics.std_orientation_error.to_degrees(),
            m_a: metrics.m_a,
            marker_updates: metrics.marker_updates,
            feature_updates: metrics.feature_updates,
            plane_updates: metrics.plane_updates,
            dropped_events: metrics.dropped_events,
        }
    }
}

/// A labeled run ready for emission.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub label: String,
    pub trajectory: Vec<TrajectoryRow>,
    pub iqa: Vec<IqaRow>,
    pub summary: SummaryRow,
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from("t,px,py,pz,qw,qx,qy,qz,err_p,err_q,modality\n");
    for r in rows {
        let q = r.pose.orientation.quaternion();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            cell(r.t),
            cell(r.pose.position.x),
            cell(r.pose.position.y),
            cell(r.pose.position.z),
            cell(q.w),
            cell(q.i),
            cell(q.j),
            cell(q.k),
            cell(r.err_p),
            cell(r.err_q),
            r.modality
        );
    }
    out
}

pub fn iqa_csv(rows: &[IqaRow]) -> String {
    let mut out = String::from("t,mdm1,mdm2,mdm3,feat,avg,choice\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            cell(r.t),
            cell(r.mdm.x),
            cell(r.mdm.y),
            cell(r.mdm.z),
            cell(r.feature),
            cell(r.average),
            r.choice
        );
    }
    out
}

pub fn plane_csv(rows: &[PlaneEvalRow]) -> String {
    let mut out = String::from(
        "profile,filtered,accuracy,coverage,plane_count,hole_count,\
         orient_err_mean_deg,orient_err_std_deg,registration_frames,frames\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            profile_name(r.profile),
            r.filtered,
            cell(r.accuracy),
            cell(r.coverage),
            r.plane_count,
            r.hole_count,
            cell(r.orientation_error_mean_deg),
            cell(r.orientation_error_std_deg),
            r.registration_frames,
            r.frames
        );
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "run,frames,mean_err_p,std_err_p,mean_err_q_deg,std_err_q_deg,m_a,\
         marker_updates,feature_updates,plane_updates,dropped_events\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.frames,
            cell(r.mean_position_error),
            cell(r.std_position_error),
            cell(r.mean_orientation_error_deg),
            cell(r.std_orientation_error_deg),
            cell(r.m_a),
            r.marker_updates,
            r.feature_updates,
            r.plane_updates,
            r.dropped_events
        );
    }
    out
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn svg_coord(x: f64) -> String {
    format!("{x:.2}")
}

/// Polyline chart of one value per trajectory row over time.
pub fn error_series_svg(
    title: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> String {
    let width = 860.0;
    let height = 420.0;
    let margin = 56.0;
    let plot_w = width - 2.0 * margin;
    let plot_h = height - 2.0 * margin;

    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    let mut v_min: f64 = 0.0;
    let mut v_max = f64::NEG_INFINITY;
    for (_, pts) in series {
        for (t, v) in pts {
            t_min = t_min.min(*t);
            t_max = t_max.max(*t);
            v_min = v_min.min(*v);
            v_max = v_max.max(*v);
        }
    }
    if !t_min.is_finite() || t_max <= t_min {
        t_min = 0.0;
        t_max = 1.0;
    }
    if !v_max.is_finite() || v_max <= v_min {
        v_max = v_min + 1.0;
    }
    let sx = move |t: f64| margin + (t - t_min) / (t_max - t_min) * plot_w;
    let sy = move |v: f64| height - margin - (v - v_min) / (v_max - v_min) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>",
        width / 2.0
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = margin,
        b = height - margin,
        r = width - margin,
        t = margin
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
        svg_coord(margin),
        svg_coord(height - margin + 16.0),
        cell(t_min)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">{}</text>",
        svg_coord(width - margin),
        svg_coord(height - margin + 16.0),
        cell(t_max)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">{}</text>",
        svg_coord(margin - 6.0),
        svg_coord(height - margin),
        cell(v_min)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">{}</text>",
        svg_coord(margin - 6.0),
        svg_coord(margin + 4.0),
        cell(v_max)
    );

    for (k, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut attr = String::new();
        for (t, v) in pts {
            let _ = write!(attr, "{},{} ", svg_coord(sx(*t)), svg_coord(sy(*v)));
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" \
             points=\"{}\"/>",
            attr.trim_end()
        );
        let ly = margin + 18.0 * k as f64 + 8.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{label}</text>",
            svg_coord(width - margin - 150.0),
            svg_coord(ly),
            svg_coord(width - margin - 132.0),
            svg_coord(ly + 10.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Top-down view of estimated paths with error glyphs: a circle per
/// sampled pose whose radius scales with position error.
pub fn top_down_svg(
    title: &str,
    reference: &[(f64, f64)],
    runs: &[(&str, &[TrajectoryRow])],
) -> String {
    let size = 620.0;
    let margin = 48.0;
    let plot = size - 2.0 * margin;

    let mut points: Vec<(f64, f64)> = reference.to_vec();
    for (_, rows) in runs {
        points.extend(rows.iter().map(|r| (r.pose.position.x, r.pose.position.y)));
    }
    if points.is_empty() {
        points.push((0.0, 0.0));
        points.push((1.0, 1.0));
    }
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (x, y) in &points {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    let span = (x_max - x_min).max(y_max - y_min).max(1e-9);
    let sx = move |x: f64| margin + (x - x_min) / span * plot;
    let sy = move |y: f64| size - margin - (y - y_min) / span * plot;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" \
         viewBox=\"0 0 {size} {size}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>",
        size / 2.0
    );
    if !reference.is_empty() {
        let mut attr = String::new();
        for (x, y) in reference {
            let _ = write!(attr, "{},{} ", svg_coord(sx(*x)), svg_coord(sy(*y)));
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"#555555\" stroke-width=\"1\" \
             stroke-dasharray=\"5,4\" points=\"{}\"/>",
            attr.trim_end()
        );
    }
    for (k, (label, rows)) in runs.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut attr = String::new();
        for r in rows.iter() {
            let _ = write!(
                attr,
                "{},{} ",
                svg_coord(sx(r.pose.position.x)),
                svg_coord(sy(r.pose.position.y))
            );
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" \
             points=\"{}\"/>",
            attr.trim_end()
        );
        // One glyph every second of the 10 Hz stream keeps the plot legible.
        for r in rows.iter().step_by(10) {
            let radius = (r.err_p * plot / span).min(40.0).max(0.5);
            let _ = writeln!(
                svg,
                "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"none\" stroke=\"{color}\" \
                 stroke-opacity=\"0.5\"/>",
                svg_coord(sx(r.pose.position.x)),
                svg_coord(sy(r.pose.position.y)),
                svg_coord(radius)
            );
        }
        let ly = margin + 18.0 * k as f64 + 8.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{label}</text>",
            svg_coord(size - margin - 150.0),
            svg_coord(ly),
            svg_coord(size - margin - 132.0),
            svg_coord(ly + 10.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes every artifact of a report into `out_dir` under
/// deterministic names and returns the written paths.
pub fn emit_report(
    out_dir: &Path,
    runs: &[RunArtifact],
    plane_rows: &[PlaneEvalRow],
) -> Result<Vec<PathBuf>, ReportError> {
    if runs.is_empty() && plane_rows.is_empty() {
        return Err(ReportError::Empty);
    }
    std::fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let emit = |name: &str, contents: &str, written: &mut Vec<PathBuf>| {
        let path = out_dir.join(name);
        write_file(&path, contents)?;
        written.push(path);
        Ok::<(), ReportError>(())
    };

    if !runs.is_empty() {
        let rows: Vec<SummaryRow> = runs.iter().map(|r| r.summary.clone()).collect();
        emit("summary.csv", &summary_csv(&rows), &mut written)?;
        for run in runs {
            emit(
                &format!("{}_trajectory.csv", run.label),
                &trajectory_csv(&run.trajectory),
                &mut written,
            )?;
            if !run.iqa.is_empty() {
                emit(
                    &format!("{}_iqa.csv", run.label),
                    &iqa_csv(&run.iqa),
                    &mut written,
                )?;
            }
        }
        let series: Vec<(&str, Vec<(f64, f64)>)> = runs
            .iter()
            .map(|r| {
                (
                    r.label.as_str(),
                    r.trajectory.iter().map(|row| (row.t, row.err_p)).collect(),
                )
            })
            .collect();
        emit(
            "position_error.svg",
            &error_series_svg("position error [m]", &series),
            &mut written,
        )?;
        let series_q: Vec<(&str, Vec<(f64, f64)>)> = runs
            .iter()
            .map(|r| {
                (
                    r.label.as_str(),
                    r.trajectory
                        .iter()
                        .map(|row| (row.t, row.err_q.to_degrees()))
                        .collect(),
                )
            })
            .collect();
        emit(
            "orientation_error.svg",
            &error_series_svg("orientation error [deg]", &series_q),
            &mut written,
        )?;
        let paths: Vec<(&str, &[TrajectoryRow])> = runs
            .iter()
            .map(|r| (r.label.as_str(), r.trajectory.as_slice()))
            .collect();
        emit(
            "top_down.svg",
            &top_down_svg("estimated paths", &[], &paths),
            &mut written,
        )?;
    }
    if !plane_rows.is_empty() {
        emit("plane_eval.csv", &plane_csv(plane_rows), &mut written)?;
    }
    Ok(written)
}
