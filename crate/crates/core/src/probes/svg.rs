//! Dependency-free SVG quicklooks. Meant for eyeballing, not publication.

use std::fmt::Write;

use super::quantile;

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{}</text>", W / 2.0, escape(title));
    s
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn y_axis(s: &mut String, lo: f64, hi: f64, label: &str) {
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>", H - PAD);
    for (v, y) in [(hi, PAD), (lo, H - PAD)] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>", PAD - 4.0, y + 4.0, v);
    }
    let _ = writeln!(
        s,
        "<text x=\"12\" y=\"{:.1}\" transform=\"rotate(-90 12 {:.1})\" text-anchor=\"middle\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(label)
    );
}

/// Per group: a 5–95% band, a 25–75% box and a median tick.
pub fn quantile_bands_svg(title: &str, metric: &str, groups: &[(String, Vec<f64>)]) -> String {
    let mut s = open(title);
    let (lo, hi) = bounds(groups.iter().flat_map(|(_, v)| v.iter().copied()));
    let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);
    y_axis(&mut s, lo, hi, metric);
    let n = groups.len().max(1) as f64;
    let slot = (W - 2.0 * PAD) / n;
    for (k, (label, v)) in groups.iter().enumerate() {
        let cx = PAD + slot * (k as f64 + 0.5);
        let q = |p: f64| quantile(v, p);
        let (q05, q25, q50, q75, q95) = (q(0.05), q(0.25), q(0.5), q(0.75), q(0.95));
        if q50.is_finite() {
            let bw = (slot * 0.5).min(40.0);
            let _ = writeln!(s, "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"#888\"/>", y(q05), y(q95));
            let _ = writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bw:.1}\" height=\"{:.1}\" fill=\"#9ecae1\" stroke=\"#3182bd\"/>",
                cx - bw / 2.0,
                y(q75),
                (y(q25) - y(q75)).max(0.5)
            );
            let _ = writeln!(
                s,
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"2\"/>",
                cx - bw / 2.0,
                y(q50),
                cx + bw / 2.0,
                y(q50)
            );
        }
        let _ = writeln!(s, "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", H - PAD + 16.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

/// Grey-scale grid; NaN cells are left hatched in red.
pub fn heatmap_svg(title: &str, row_labels: &[String], col_labels: &[String], grid: &[Vec<f64>]) -> String {
    let mut s = open(title);
    let (lo, hi) = bounds(grid.iter().flatten().copied());
    let (nr, nc) = (row_labels.len().max(1) as f64, col_labels.len().max(1) as f64);
    let (cw, ch) = ((W - 2.0 * PAD) / nc, (H - 2.0 * PAD) / nr);
    for (i, row) in grid.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (x, y) = (PAD + cw * j as f64, PAD + ch * i as f64);
            let fill = if v.is_finite() {
                let g = (255.0 * (1.0 - (v - lo) / (hi - lo))).round() as u8;
                format!("rgb({g},{g},{g})")
            } else {
                "#f4a6a6".to_string()
            };
            let _ = writeln!(s, "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cw:.1}\" height=\"{ch:.1}\" fill=\"{fill}\"><title>{v}</title></rect>");
        }
    }
    for (i, l) in row_labels.iter().enumerate() {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", PAD - 4.0, PAD + ch * (i as f64 + 0.5) + 4.0, escape(l));
    }
    for (j, l) in col_labels.iter().enumerate() {
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>", PAD + cw * (j as f64 + 0.5), H - PAD + 16.0, escape(l));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">black = {hi:.3}, white = {lo:.3}</text>", W - PAD, H - 8.0);
    s.push_str("</svg>\n");
    s
}

const PALETTE: [&str; 6] = ["#3182bd", "#e6550d", "#31a354", "#756bb1", "#636363", "#de2d26"];

pub(crate) fn line_svg(title: &str, metric: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut s = open(title);
    let (xlo, xhi) = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (ylo, yhi) = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let px = |x: f64| PAD + (x - xlo) / (xhi - xlo) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - ylo) / (yhi - ylo) * (H - 2.0 * PAD);
    y_axis(&mut s, ylo, yhi, metric);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>", path.join(" "));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{color}\" text-anchor=\"end\">{}</text>", W - PAD, PAD + 14.0 * k as f64, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_well_formed_and_deterministic() {
        let g = vec![("a<b".to_string(), vec![1.0, 2.0, 3.0]), ("c".to_string(), vec![])];
        let a = quantile_bands_svg("t", "m", &g);
        assert_eq!(a, quantile_bands_svg("t", "m", &g));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains("a&lt;b"));
        let h = heatmap_svg("t", &["r".into()], &["c1".into(), "c2".into()], &[vec![0.0, f64::NAN]]);
        assert_eq!(h.matches("<rect").count(), 3);
        let l = line_svg("t", "m", &[("s".into(), vec![(1.0, 2.0), (0.0, 1.0)])]);
        assert!(l.contains("polyline"));
    }
}
