use std::fmt::Write as _;
use std::io::Write;

use super::{RequestRecord, TickSummary};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `id,arrival_s,start_s,end_s,vm,latency_s,slo_hit`; unserved requests
/// leave the timing columns empty.
pub fn write_requests_csv<W: Write>(requests: &[RequestRecord], lambda_s: f64, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "arrival_s", "start_s", "end_s", "vm", "latency_s", "slo_hit"])?;
    for r in requests {
        w.write_record([
            r.id.to_string(),
            r.arrival_s.to_string(),
            opt(r.start_s),
            opt(r.end_s),
            r.vm.map(|v| v.to_string()).unwrap_or_default(),
            opt(r.latency_s()),
            u8::from(r.slo_hit(lambda_s)).to_string(),
        ])?;
    }
    w.flush()
}

/// Provisioner tick log joined with cluster size and active cores.
pub fn write_ticks_csv<W: Write>(ticks: &[TickSummary], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "tick",
        "now_s",
        "forecast",
        "alpha",
        "delta",
        "deploys",
        "recalls",
        "parks",
        "expiries",
        "interval",
        "actual",
        "target",
        "raw_forecast",
        "serving_vms",
        "live_vms",
        "active_cores",
    ])?;
    for t in ticks {
        w.write_record([
            t.tick.to_string(),
            t.now_s.to_string(),
            opt(t.forecast),
            t.alpha.to_string(),
            t.delta.to_string(),
            t.deploys.to_string(),
            t.recalls.to_string(),
            t.parks.to_string(),
            t.expiries.to_string(),
            t.interval.to_string(),
            t.actual.to_string(),
            t.target.to_string(),
            opt(t.raw_forecast),
            t.serving_vms.to_string(),
            t.live_vms.to_string(),
            t.active_cores.to_string(),
        ])?;
    }
    w.flush()
}

const WIDTH: f64 = 960.0;
const PANEL: f64 = 220.0;
const PAD: f64 = 48.0;

fn polyline(points: &[(f64, f64)], x_max: f64, y_max: f64, top: f64, color: &str, dashed: bool) -> String {
    let mut path = String::new();
    for (i, &(x, y)) in points.iter().enumerate() {
        let px = PAD + x / x_max.max(1.0) * (WIDTH - 2.0 * PAD);
        let py = top + PANEL - y / y_max.max(1e-9) * PANEL;
        let _ = write!(path, "{}{px:.1},{py:.1}", if i == 0 { "" } else { " " });
    }
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\"{} points=\"{path}\"/>\n",
        if dashed { " stroke-dasharray=\"4 3\"" } else { "" }
    )
}

/// Two-panel SVG: requests and forecast per interval on top, serving VM
/// count below. The forecast is drawn at its target interval.
pub fn render_svg(ticks: &[TickSummary], title: &str) -> String {
    let n = ticks.len().max(1) as f64;
    let first = ticks.first().map(|t| t.interval).unwrap_or(0) as f64;
    let actual: Vec<(f64, f64)> = ticks.iter().enumerate().map(|(i, t)| (i as f64, t.actual as f64)).collect();
    let forecast: Vec<(f64, f64)> = ticks
        .iter()
        .filter_map(|t| t.forecast.map(|f| (t.target as f64 - first, f)))
        .filter(|(x, _)| *x < n)
        .collect();
    let vms: Vec<(f64, f64)> = ticks.iter().enumerate().map(|(i, t)| (i as f64, t.serving_vms as f64)).collect();
    let y1 = actual.iter().chain(&forecast).map(|p| p.1).fold(0.0, f64::max) * 1.05;
    let y2 = vms.iter().map(|p| p.1).fold(0.0, f64::max) * 1.1;
    let top2 = PAD + PANEL + PAD;
    let height = top2 + PANEL + PAD;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(svg, "<text x=\"{PAD}\" y=\"20\" font-size=\"14\">{}</text>", escape(title));
    for (top, label, max) in [(PAD, "requests / interval", y1), (top2, "serving VMs", y2)] {
        let _ = writeln!(
            svg,
            "<rect x=\"{PAD}\" y=\"{top}\" width=\"{}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#999\"/>",
            WIDTH - 2.0 * PAD
        );
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\">{label} (max {max:.0})</text>", PAD + 4.0, top + 14.0);
    }
    svg.push_str(&polyline(&actual, n, y1, PAD, "#1f77b4", false));
    svg.push_str(&polyline(&forecast, n, y1, PAD, "#d62728", true));
    svg.push_str(&polyline(&vms, n, y2, top2, "#2ca02c", false));
    let _ = writeln!(
        svg,
        "<text x=\"{PAD}\" y=\"{}\">interval (0 = {first}); blue: actual, red dashed: forecast</text>",
        height - 16.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
