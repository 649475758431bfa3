//! Minimal hand-written SVG charts.

use std::fmt::Write as _;

use pimc_core::eval::RankRow;

const W: f64 = 640.0;
const ROW_H: f64 = 22.0;
const LEFT: f64 = 260.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One horizontal bar per ranked run: balanced accuracy for classification,
/// MAE for forecasting (bars scaled to the largest MAE of the task).
pub fn metric_bars(rows: &[RankRow]) -> String {
    let h = 40.0 + ROW_H * rows.len() as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<text x=\"8\" y=\"18\" font-weight=\"bold\">balanced ACC / MAE by run</text>");
    let span = W - LEFT - 80.0;
    for (i, r) in rows.iter().enumerate() {
        let y = 30.0 + ROW_H * i as f64;
        let (value, frac, color) = match (r.balanced_acc, r.mae) {
            (Some(b), _) => (b, b, "#4477aa"),
            (None, Some(m)) => {
                let max = rows
                    .iter()
                    .filter(|o| o.task == r.task)
                    .filter_map(|o| o.mae)
                    .fold(0.0f64, f64::max);
                (m, if max > 0.0 { m / max } else { 0.0 }, "#cc6677")
            }
            (None, None) => (0.0, 0.0, "#999999"),
        };
        let _ = writeln!(
            s,
            "<text x=\"8\" y=\"{:.1}\">{} {}</text>",
            y + 14.0,
            esc(&r.task),
            esc(&r.run)
        );
        let _ = writeln!(
            s,
            "<rect x=\"{LEFT}\" y=\"{:.1}\" width=\"{:.1}\" height=\"16\" fill=\"{color}\"/>",
            y + 2.0,
            span * frac.clamp(0.0, 1.0)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\">{value:.4}</text>",
            LEFT + span * frac.clamp(0.0, 1.0) + 6.0,
            y + 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `(step, loss)` pairs from a `step,epoch,loss,tau` file.
pub fn parse_loss_csv(text: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.starts_with("step,epoch,loss") => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let step = f.first().and_then(|v| v.parse::<f64>().ok());
            let loss = f.get(2).and_then(|v| v.parse::<f64>().ok());
            step.zip(loss).ok_or_else(|| format!("bad row {l:?}"))
        })
        .collect()
}

pub fn loss_curve(points: &[(f64, f64)]) -> String {
    let (w, h, pad) = (W, 360.0, 48.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<text x=\"8\" y=\"18\" font-weight=\"bold\">training loss</text>");
    let _ = writeln!(
        s,
        "<path d=\"M{pad} {pad} V{:.1} H{:.1}\" stroke=\"black\" fill=\"none\"/>",
        h - pad,
        w - pad / 2.0
    );
    if points.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let max_x = points.iter().map(|p| p.0).fold(1.0f64, f64::max);
    let max_y = points.iter().map(|p| p.1).fold(f64::MIN_POSITIVE, f64::max);
    let px = |x: f64| pad + (w - 1.5 * pad) * x / max_x;
    let py = |y: f64| h - pad - (h - 2.0 * pad) * (y / max_y).max(0.0);
    let mut d = String::new();
    for (i, &(x, y)) in points.iter().enumerate() {
        let _ = write!(d, "{}{:.1} {:.1}", if i == 0 { "M" } else { " L" }, px(x), py(y));
    }
    let _ = writeln!(s, "<path d=\"{d}\" stroke=\"#4477aa\" fill=\"none\" stroke-width=\"1.5\"/>");
    let _ = writeln!(s, "<text x=\"4\" y=\"{:.1}\">{max_y:.3}</text>", pad + 4.0);
    let _ = writeln!(s, "<text x=\"4\" y=\"{:.1}\">0</text>", h - pad + 4.0);
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\">step {max_x}</text>", w - pad * 2.5, h - pad + 18.0);
    s.push_str("</svg>\n");
    s
}
