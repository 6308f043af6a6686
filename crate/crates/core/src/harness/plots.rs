//! Static SVG plots of cross-seed aggregated curves.

use std::fmt::Write as _;

use crate::error::Result;
use crate::evaluation::AggregatedCurve;
use crate::reward_training::Method;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

fn color(method: Method) -> &'static str {
    match method {
        Method::Single => "#d62728",
        Method::Multihead => "#1f77b4",
        Method::Ensemble => "#2ca02c",
    }
}

struct Series<'a> {
    label: String,
    color: &'a str,
    x: &'a [f64],
    mean: &'a [f64],
    std: &'a [f64],
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for i in 0..s.x.len() {
            xs = (xs.0.min(s.x[i]), xs.1.max(s.x[i]));
            ys = (
                ys.0.min(s.mean[i] - s.std[i]),
                ys.1.max(s.mean[i] + s.std[i]),
            );
        }
    }
    if !xs.0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if xs.1 - xs.0 < 1e-12 {
        xs.1 = xs.0 + 1.0;
    }
    if ys.1 - ys.0 < 1e-12 {
        ys.1 = ys.0 + 1.0;
    }
    let pad = 0.05 * (ys.1 - ys.0);
    (xs.0, xs.1, ys.0 - pad, ys.1 + pad)
}

fn render(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{m:.1},{t:.1} L{m:.1},{b:.1} L{r:.1},{b:.1}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#,
            px(xv),
            HEIGHT - MARGIN + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#,
            MARGIN - 6.0,
            py(yv) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{y_label}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (n, s) in series.iter().enumerate() {
        if s.x.is_empty() {
            continue;
        }
        let mut band = String::new();
        for i in 0..s.x.len() {
            let _ = write!(
                band,
                "{}{:.2},{:.2} ",
                if i == 0 { "M" } else { "L" },
                px(s.x[i]),
                py(s.mean[i] + s.std[i])
            );
        }
        for i in (0..s.x.len()).rev() {
            let _ = write!(band, "L{:.2},{:.2} ", px(s.x[i]), py(s.mean[i] - s.std[i]));
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}Z" fill="{}" fill-opacity="0.18" stroke="none"/>"#,
            band, s.color
        );
        let line: Vec<String> = (0..s.x.len())
            .map(|i| {
                format!(
                    "{}{:.2},{:.2}",
                    if i == 0 { "M" } else { "L" },
                    px(s.x[i]),
                    py(s.mean[i])
                )
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            line.join(" "),
            s.color
        );
        let ly = MARGIN + 16.0 * n as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="2"/>"#,
            WIDTH - MARGIN - 150.0,
            WIDTH - MARGIN - 130.0,
            s.color
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            WIDTH - MARGIN - 124.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Gold-vs-KL and proxy-vs-KL plots with ±1 std bands, plus the aggregated
/// table they are drawn from.
pub fn emit_plots(curves: &[AggregatedCurve]) -> Result<Vec<(String, Vec<u8>)>> {
    let label = |c: &AggregatedCurve| format!("{} (n={})", c.method, c.n_runs);
    let gold: Vec<Series> = curves
        .iter()
        .map(|c| Series {
            label: label(c),
            color: color(c.method),
            x: &c.kl,
            mean: &c.gold_mean,
            std: &c.gold_std,
        })
        .collect();
    let proxy: Vec<Series> = curves
        .iter()
        .map(|c| Series {
            label: label(c),
            color: color(c.method),
            x: &c.kl,
            mean: &c.proxy_mean,
            std: &c.proxy_std,
        })
        .collect();
    let mut table = String::new();
    for (i, c) in curves.iter().enumerate() {
        let csv = c.to_csv();
        if i == 0 {
            table.push_str(&csv);
        } else {
            table.extend(csv.lines().skip(1).map(|l| format!("{l}\n")));
        }
    }
    Ok(vec![
        ("aggregate.csv".into(), table.into_bytes()),
        (
            "plots/gold_vs_kl.svg".into(),
            render(
                "Gold reward vs KL",
                "KL(policy || reference)",
                "gold reward",
                &gold,
            )
            .into_bytes(),
        ),
        (
            "plots/proxy_vs_kl.svg".into(),
            render(
                "Proxy reward vs KL",
                "KL(policy || reference)",
                "proxy reward",
                &proxy,
            )
            .into_bytes(),
        ),
    ])
}

/// Mean gold decline (±1 std) per reward-model epoch count.
pub fn ablation_plot(rows: &[(usize, f64, f64)]) -> String {
    let x: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
    let mean: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let std: Vec<f64> = rows.iter().map(|r| r.2).collect();
    render(
        "Over-optimization vs RM epochs",
        "reward-model epochs",
        "gold decline",
        &[Series {
            label: "ensemble".into(),
            color: color(Method::Ensemble),
            x: &x,
            mean: &mean,
            std: &std,
        }],
    )
}
