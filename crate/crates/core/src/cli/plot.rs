//! Plain SVG emitters for the scatter overview, post-impact velocity
//! profiles and the pressure calibration line.

use std::fmt::Write;

use crate::analysis::{ScatterDataset, VelocityProfile};
use crate::biped::GaitPhase;
use crate::controllers::ControllerKind;
use crate::impactor::CalibrationMap;

const W: f64 = 760.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

pub const FALL_RADIUS: f64 = 9.0;
pub const RECOVER_RADIUS: f64 = 5.0;

pub fn phase_color(phase: GaitPhase) -> &'static str {
    match phase.to_string().as_str() {
        "Left_Up" => "#1f77b4",
        "Left_Down" => "#9ecae1",
        "Right_Up" => "#d62728",
        "Right_Down" => "#fc9272",
        _ => "#636363",
    }
}

pub fn controller_color(kind: ControllerKind) -> &'static str {
    match kind {
        ControllerKind::TMAnalog => "#1f77b4",
        ControllerKind::TLAnalog => "#2ca02c",
        ControllerKind::BBAnalog => "#d62728",
    }
}

pub fn shape_name(kind: ControllerKind) -> &'static str {
    match kind {
        ControllerKind::TMAnalog => "circle",
        ControllerKind::TLAnalog => "square",
        ControllerKind::BBAnalog => "triangle",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = pad(x);
        let (y0, y1) = pad(y);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str, yticks: bool) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<g class="axes" stroke="black" fill="none"><path d="M{l},{t} L{l},{b} L{r},{b}"/></g>"#);
    for i in 0..=5 {
        let x = f.x0 + (f.x1 - f.x0) * i as f64 / 5.0;
        let px = f.px(x);
        let _ = writeln!(out, r#"<line class="tick" x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{}" stroke="black"/>"#, b + 5.0);
        let _ = writeln!(out, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, b + 18.0, fmt_tick(x));
        if yticks {
            let y = f.y0 + (f.y1 - f.y0) * i as f64 / 5.0;
            let py = f.py(y);
            let _ = writeln!(out, r#"<line class="tick" x1="{}" y1="{py:.2}" x2="{l}" y2="{py:.2}" stroke="black"/>"#, l - 5.0);
            let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, l - 8.0, py + 4.0, fmt_tick(y));
        }
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn marker(out: &mut String, kind: ControllerKind, x: f64, y: f64, r: f64, attrs: &str, fill: &str) {
    match kind {
        ControllerKind::TMAnalog => {
            let _ = writeln!(out, r#"<circle {attrs} cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}" stroke="black"/>"#);
        }
        ControllerKind::TLAnalog => {
            let _ = writeln!(
                out,
                r#"<rect {attrs} x="{:.2}" y="{:.2}" width="{}" height="{}" fill="{fill}" stroke="black"/>"#,
                x - r,
                y - r,
                2.0 * r,
                2.0 * r
            );
        }
        ControllerKind::BBAnalog => {
            let _ = writeln!(
                out,
                r#"<polygon {attrs} points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{fill}" stroke="black"/>"#,
                x,
                y - r,
                x - r,
                y + r,
                x + r,
                y + r
            );
        }
    }
}

/// Impact overview: x is impact velocity, one lane per controller. Colour
/// encodes the phase at impact, size the outcome, shape the controller.
pub fn scatter_svg(data: &ScatterDataset) -> String {
    let kinds: Vec<ControllerKind> =
        ControllerKind::ALL.into_iter().filter(|k| data.points.iter().any(|p| p.controller_kind == *k)).collect();
    let vmin = data.points.iter().map(|p| p.impact_velocity).fold(f64::INFINITY, f64::min);
    let vmax = data.points.iter().map(|p| p.impact_velocity).fold(f64::NEG_INFINITY, f64::max);
    let (vmin, vmax) = if vmin.is_finite() { (vmin - 0.1, vmax + 0.1) } else { (0.0, 1.0) };
    let f = Frame::new((vmin, vmax), (0.0, kinds.len().max(1) as f64));

    let mut out = String::new();
    header(&mut out, "Impact tests by controller, phase and outcome");
    axes(&mut out, &f, "impact velocity (m/s)", "controller", false);
    for (i, k) in kinds.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{k}</text>"#,
            LEFT - 8.0,
            f.py(i as f64 + 0.5) + 4.0
        );
    }
    for p in &data.points {
        let lane = kinds.iter().position(|k| *k == p.controller_kind).unwrap_or(0) as f64;
        let slot = GaitPhase::ALL.iter().position(|g| *g == p.phase).unwrap_or(0) as f64;
        let y = f.py(lane + 0.15 + 0.7 * slot / 4.0);
        let (r, size) = if p.fallover { (FALL_RADIUS, "size-fall") } else { (RECOVER_RADIUS, "size-recover") };
        let attrs = format!(
            r#"class="marker shape-{} {size} phase-{}" data-test-id="{}" data-velocity="{}" data-momentum="{}""#,
            shape_name(p.controller_kind),
            p.phase,
            escape(&p.test_id),
            p.impact_velocity,
            p.impact_momentum
        );
        marker(&mut out, p.controller_kind, f.px(p.impact_velocity), y, r, &attrs, phase_color(p.phase));
    }

    // Legend.
    let lx = W - RIGHT + 20.0;
    let mut ly = TOP + 10.0;
    let _ = writeln!(out, r#"<g class="legend">"#);
    for g in GaitPhase::ALL {
        let _ = writeln!(out, r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{}"/>"#, ly - 9.0, phase_color(g));
        let _ = writeln!(out, r#"<text x="{}" y="{ly}">{g}</text>"#, lx + 16.0);
        ly += 18.0;
    }
    ly += 8.0;
    for k in ControllerKind::ALL {
        marker(&mut out, k, lx + 5.0, ly - 4.0, 5.0, r#"class="legend-shape""#, "white");
        let _ = writeln!(out, r#"<text x="{}" y="{ly}">{k}</text>"#, lx + 16.0);
        ly += 18.0;
    }
    ly += 8.0;
    for (r, label) in [(FALL_RADIUS, "fall"), (RECOVER_RADIUS, "recovered")] {
        let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="{r}" fill="none" stroke="black"/>"#, lx + 5.0, ly - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{ly}">{label}</text>"#, lx + 20.0);
        ly += 24.0;
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}

/// Ram velocity after impact, one polyline per test, clipped to `window`.
pub fn profiles_svg(profiles: &[VelocityProfile], window: f64) -> String {
    let vals = profiles.iter().flat_map(|p| p.t.iter().zip(&p.v).filter(|(t, _)| **t <= window).map(|(_, v)| *v));
    let (mut vmin, mut vmax) = (0.0f64, 0.0f64);
    for v in vals {
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let f = Frame::new((0.0, window), (vmin - 0.1, vmax + 0.1));

    let mut out = String::new();
    header(&mut out, "Ram velocity after impact");
    axes(&mut out, &f, "time since impact (s)", "ram velocity (m/s)", true);
    let _ = writeln!(
        out,
        r##"<line class="zero" x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        LEFT,
        W - RIGHT,
        y = f.py(0.0)
    );
    for p in profiles {
        let pts: Vec<(f64, f64)> = p.t.iter().zip(&p.v).filter(|(t, _)| **t >= 0.0 && **t <= window).map(|(t, v)| (*t, *v)).collect();
        let t_max = pts.last().map_or(0.0, |p| p.0);
        let coords: Vec<String> = pts.iter().map(|(t, v)| format!("{:.2},{:.2}", f.px(*t), f.py(*v))).collect();
        let _ = writeln!(
            out,
            r#"<polyline class="curve ctrl-{k}" data-test-id="{}" data-t-max="{t_max}" points="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
            escape(&p.test_id),
            coords.join(" "),
            controller_color(p.controller_kind),
            k = p.controller_kind
        );
    }
    let lx = W - RIGHT + 20.0;
    let _ = writeln!(out, r#"<g class="legend">"#);
    for (i, k) in ControllerKind::ALL.into_iter().enumerate() {
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(out, r#"<line x1="{lx}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="{}" stroke-width="2"/>"#, ly - 4.0, lx + 14.0, ly - 4.0, controller_color(k));
        let _ = writeln!(out, r#"<text x="{}" y="{ly}">{k}</text>"#, lx + 20.0);
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}

/// Calibration samples with the fitted line over its valid range.
pub fn calibration_svg(samples: &[(f64, f64)], map: &CalibrationMap) -> String {
    let [low, high] = map.valid_pressure_range;
    let pmin = samples.iter().map(|s| s.0).fold(low, f64::min);
    let pmax = samples.iter().map(|s| s.0).fold(high, f64::max);
    let line = |p: f64| map.slope * p + map.intercept;
    let vmin = samples.iter().map(|s| s.1).fold(line(pmin), f64::min);
    let vmax = samples.iter().map(|s| s.1).fold(line(pmax), f64::max);
    let f = Frame::new((pmin - 2.0, pmax + 2.0), (vmin - 0.2, vmax + 0.2));

    let mut out = String::new();
    header(&mut out, "Pressure to peak velocity");
    axes(&mut out, &f, "pressure (PSI)", "peak velocity (m/s)", true);
    let _ = writeln!(
        out,
        r##"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="1.5"/>"##,
        f.px(low),
        f.py(line(low)),
        f.px(high),
        f.py(line(high))
    );
    for &(p, v) in samples {
        let _ = writeln!(
            out,
            r##"<circle class="marker sample" cx="{:.2}" cy="{:.2}" r="4" fill="#1f77b4" stroke="black"/>"##,
            f.px(p),
            f.py(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text class="legend" x="{}" y="{}">v = {:.4} p + {:.3}</text><text class="legend" x="{}" y="{}">max residual {:.4} m/s</text>"#,
        W - RIGHT + 10.0,
        TOP + 10.0,
        map.slope,
        map.intercept,
        W - RIGHT + 10.0,
        TOP + 28.0,
        map.max_residual
    );
    out.push_str("</svg>\n");
    out
}

/// Number of elements whose class list starts with `marker`.
pub fn count_markers(svg: &str) -> usize {
    svg.matches(r#"class="marker "#).count()
}
