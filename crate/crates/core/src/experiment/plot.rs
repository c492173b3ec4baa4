use std::fmt::Write;

use super::ladder::ChaosRow;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 60.0;

/// One log-log chart of `d_j` against `V`.
#[derive(Debug, Clone)]
pub struct Chart {
    pub t: f64,
    pub j: usize,
    pub svg: String,
}

/// One chart per `(t, j)` present in `rows`, in order of first appearance.
/// Points with `d_j <= 0` cannot be drawn on log axes and are skipped.
pub fn chaos_charts(rows: &[ChaosRow]) -> Vec<Chart> {
    let mut keys: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(t, j)| t == r.t && j == r.j) {
            keys.push((r.t, r.j));
        }
    }
    keys.into_iter()
        .map(|(t, j)| {
            let pts: Vec<&ChaosRow> = rows.iter().filter(|r| r.t == t && r.j == j && r.d_j > 0.0).collect();
            Chart { t, j, svg: render(t, j, &pts) }
        })
        .collect()
}

fn log_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| *v > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.log10()), hi.max(v.log10())));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let (lo, hi) = (lo.floor(), hi.ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn render(t: f64, j: usize, pts: &[&ChaosRow]) -> String {
    let (x0, x1) = log_range(pts.iter().map(|r| r.volume));
    let (y0, y1) = log_range(pts.iter().flat_map(|r| [r.d_j, r.d_j + r.err_stat, (r.d_j - r.err_stat).max(r.d_j / 10.0)]));
    let px = |v: f64| MARGIN + (v.log10() - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v.log10() - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle">d_{j}(V, t = {t})</text>"#, WIDTH / 2.0);
    let (l, r, b, top) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {top} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
    for e in x0 as i32..=x1 as i32 {
        let x = px(10f64.powi(e));
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{b}" x2="{x:.1}" y2="{}" stroke="black"/>"#, b + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">1e{e}</text>"#, b + 20.0);
    }
    for e in y0 as i32..=y1 as i32 {
        let y = py(10f64.powi(e));
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.1}" x2="{l}" y2="{y:.1}" stroke="black"/>"#, l - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{e}</text>"#, l - 8.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">V</text>"#, WIDTH / 2.0, HEIGHT - 15.0);
    if !pts.is_empty() {
        let path: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", px(p.volume), py(p.d_j))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#, path.join(" "));
    }
    for p in pts {
        let (x, y) = (px(p.volume), py(p.d_j));
        let lo = (p.d_j - p.err_stat).max(p.d_j / 10.0);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="steelblue"/>"#,
            py(lo),
            py(p.d_j + p.err_stat)
        );
        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="steelblue"/>"#);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(volume: f64, t: f64, j: usize, d_j: f64) -> ChaosRow {
        ChaosRow {
            volume,
            n0: volume as usize,
            t,
            j,
            d_j,
            err_stat: d_j / 20.0,
            err_bin: 0.0,
            noise_floor: 0.0,
            n_bar_over_v: 1.0,
            ref_n: 1.0,
        }
    }

    #[test]
    fn one_chart_per_time_and_order() {
        let rows = vec![
            row(100.0, 1.0, 1, 0.2),
            row(100.0, 1.0, 2, 0.3),
            row(400.0, 1.0, 1, 0.1),
            row(400.0, 1.0, 2, 0.15),
            row(100.0, 2.0, 1, 0.0),
        ];
        let charts = chaos_charts(&rows);
        assert_eq!(charts.len(), 3);
        assert_eq!((charts[1].t, charts[1].j), (1.0, 2));
        assert!(charts[0].svg.starts_with("<svg"));
        assert_eq!(charts[0].svg.matches("<circle").count(), 2);
        assert_eq!(charts[2].svg.matches("<circle").count(), 0);
        assert!(charts[0].svg.trim_end().ends_with("</svg>"));
    }
}
