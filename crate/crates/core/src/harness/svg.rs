//! Line charts of risk-trace CSV files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::CSV_HEADER;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub group: Option<String>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn label(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// One series per group; points with equal x are averaged.
type Series = Vec<(String, Vec<(f64, f64)>)>;

fn read_series(csv_text: &str, spec: &PlotSpec) -> Result<Series> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::SchemaMismatch(format!("unreadable header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < CSV_HEADER.len() || names[..CSV_HEADER.len()] != CSV_HEADER {
        return Err(Error::SchemaMismatch("header is not a risk-trace header".into()));
    }
    let col = |name: &str| {
        names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("no column `{name}`")))
    };
    let xi = col(&spec.x)?;
    let yi = col(&spec.y)?;
    let gi = spec.group.as_deref().map(col).transpose()?;

    // per group: points as (x, sum of y, count), and x bits -> point index
    let mut groups: Vec<(String, Vec<(f64, f64, usize)>, HashMap<u64, usize>)> = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::SchemaMismatch(format!("bad row: {e}")))?;
        rows += 1;
        let num = |i: usize| {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| Error::SchemaMismatch(format!("column `{}` is not numeric", names[i])))
        };
        let (x, y) = (num(xi)?, num(yi)?);
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        let key = gi.map(|g| rec.get(g).unwrap_or("").to_string()).unwrap_or_default();
        let gidx = match groups.iter().position(|(k, _, _)| *k == key) {
            Some(i) => i,
            None => {
                groups.push((key, Vec::new(), HashMap::new()));
                groups.len() - 1
            }
        };
        let (_, pts, index) = &mut groups[gidx];
        match index.get(&x.to_bits()) {
            Some(&i) => {
                pts[i].1 += y;
                pts[i].2 += 1;
            }
            None => {
                index.insert(x.to_bits(), pts.len());
                pts.push((x, y, 1));
            }
        }
    }
    if rows == 0 {
        return Err(Error::SchemaMismatch("CSV has no data rows".into()));
    }
    Ok(groups
        .into_iter()
        .map(|(k, pts, _)| {
            let mut pts: Vec<(f64, f64)> = pts.into_iter().map(|(x, s, n)| (x, s / n as f64)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, pts)
        })
        .collect())
}

/// Renders the chart for CSV text.
pub fn render_svg_text(csv_text: &str, spec: &PlotSpec) -> Result<String> {
    let series = read_series(csv_text, spec)?;
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 20.0,
            label(xv)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&spec.x)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.y)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-group="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(name),
            coords.join(" ")
        );
        if spec.group.is_some() {
            let ly = TOP + 15.0 + 18.0 * i as f64;
            let lx = WIDTH - RIGHT + 15.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(name)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads `csv_path` and writes the chart to `out`.
pub fn render_svg(csv_path: &Path, spec: &PlotSpec, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv_path)?;
    std::fs::write(out, render_svg_text(&text, spec)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "run_id,algorithm,K,M,T,epsilon,delta,gamma,seed,t,kl_instant,kl_cum,tv_instant,tv_avg,clamp_events";

    fn row(alg: &str, t: usize, kl: f64) -> String {
        format!("r,{alg},2,2,3,1,0,1,0,{t},{kl},{kl},0.1,0.1,0")
    }

    fn spec(group: Option<&str>) -> PlotSpec {
        PlotSpec {
            x: "t".into(),
            y: "kl_cum".into(),
            group: group.map(Into::into),
        }
    }

    #[test]
    fn single_trace_is_one_polyline() {
        let csv = format!("{HEADER}\n{}\n{}\n{}\n", row("a", 1, 0.1), row("a", 2, 0.3), row("a", 3, 0.4));
        let svg = render_svg_text(&csv, &spec(None)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(points.split(' ').count(), 3);
        assert_eq!(svg, render_svg_text(&csv, &spec(None)).unwrap());
    }

    #[test]
    fn one_polyline_per_group() {
        let csv = format!(
            "{HEADER}\n{}\n{}\n{}\n{}\n",
            row("wma-ldp", 1, 0.1),
            row("exp3-pure", 1, 0.2),
            row("wma-ldp", 2, 0.3),
            row("exp3-pure", 2, 0.5)
        );
        let svg = render_svg_text(&csv, &spec(Some("algorithm"))).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(r#"data-group="exp3-pure""#));
    }

    #[test]
    fn schema_problems() {
        let empty = format!("{HEADER}\n");
        assert!(matches!(render_svg_text(&empty, &spec(None)), Err(Error::SchemaMismatch(_))));
        assert!(matches!(
            render_svg_text("a,b\n1,2\n", &spec(None)),
            Err(Error::SchemaMismatch(_))
        ));
        let csv = format!("{HEADER}\n{}\n", row("a", 1, 0.1));
        let bad = PlotSpec {
            x: "nope".into(),
            y: "kl_cum".into(),
            group: None,
        };
        assert!(matches!(render_svg_text(&csv, &bad), Err(Error::SchemaMismatch(_))));
        let text_y = PlotSpec {
            x: "t".into(),
            y: "algorithm".into(),
            group: None,
        };
        assert!(matches!(render_svg_text(&csv, &text_y), Err(Error::SchemaMismatch(_))));
    }
}
