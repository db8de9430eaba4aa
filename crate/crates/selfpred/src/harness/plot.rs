//! Self-contained SVG line plots: fixed viewport, optional log-scale
//! y axis with ticks at powers of ten, legend in declaration order.

use super::HarnessError;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
}

impl PlotSpec {
    pub fn new(title: &str, x_label: &str, y_label: &str, log_y: bool) -> Self {
        PlotSpec {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            log_y,
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Powers of ten covering [min, max]; both endpoints must be positive.
pub fn log_ticks(min: f64, max: f64) -> Vec<f64> {
    assert!(min > 0.0 && max >= min);
    let lo = min.log10().floor() as i32;
    let hi = max.log10().ceil() as i32;
    (lo..=hi).map(|e| 10f64.powi(e)).collect()
}

fn linear_ticks(min: f64, max: f64) -> Vec<f64> {
    (0..=4)
        .map(|i| min + (max - min) * i as f64 / 4.0)
        .collect()
}

fn fmt(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:e}")
    }
}

/// Render the series to SVG text. Non-finite points (and, on log axes,
/// non-positive y values) are dropped; the count of dropped points is
/// returned alongside. Errors when nothing plottable remains.
pub fn emit_plot(series: &[Series], spec: &PlotSpec) -> Result<(String, usize), HarnessError> {
    let mut dropped = 0usize;
    let filtered: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .copied()
                .filter(|&(x, y)| {
                    let ok = x.is_finite() && y.is_finite() && (!spec.log_y || y > 0.0);
                    if !ok {
                        dropped += 1;
                    }
                    ok
                })
                .collect();
            (s.label.clone(), pts)
        })
        .collect();
    if filtered.iter().all(|(_, pts)| pts.is_empty()) {
        return Err(HarnessError::EmptyPlot);
    }

    let all = filtered.iter().flat_map(|(_, pts)| pts.iter().copied());
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        if spec.log_y {
            y_max = y_min * 10.0;
        } else {
            y_max = y_min + 1.0;
        }
    }
    let y_ticks = if spec.log_y {
        log_ticks(y_min, y_max)
    } else {
        linear_ticks(y_min, y_max)
    };
    // Keep the full tick range visible.
    let (y_lo, y_hi) = (
        y_ticks.first().copied().unwrap().min(y_min),
        y_ticks.last().copied().unwrap().max(y_max),
    );
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| {
        let t = if spec.log_y {
            (y.log10() - y_lo.log10()) / (y_hi.log10() - y_lo.log10())
        } else {
            (y - y_lo) / (y_hi - y_lo)
        };
        MARGIN_T + (1.0 - t) * plot_h
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        spec.title
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h
    ));
    for t in &y_ticks {
        let y = sy(*t);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN_L}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            MARGIN_L - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 8.0,
            y + 4.0,
            fmt(*t)
        ));
    }
    for t in linear_ticks(x_min, x_max) {
        let x = sx(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_T + plot_h + 18.0,
            fmt(t)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 10.0,
        spec.x_label
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        spec.y_label
    ));
    // Series polylines and legend, in declaration order.
    for (i, (label, pts)) in filtered.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            ));
        }
        let ly = MARGIN_T + 14.0 * i as f64 + 10.0;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            WIDTH - MARGIN_R + 10.0,
            WIDTH - MARGIN_R + 30.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            WIDTH - MARGIN_R + 35.0,
            ly + 4.0,
            label
        ));
    }
    if dropped > 0 {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#888\">dropped {dropped} non-finite</text>\n",
            MARGIN_L + 4.0,
            MARGIN_T + 12.0
        ));
    }
    svg.push_str("</svg>\n");
    Ok((svg, dropped))
}
