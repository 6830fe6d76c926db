//! Static SVG figures. Output depends only on the inputs; coordinates are
//! printed with fixed precision so repeated runs give identical bytes.

use std::fmt::Write;

use crate::detection::IndicatorSeries;
use crate::error::{Error, Result};
use crate::laws::{density_envelope, kde, silverman_bandwidth, ConvergenceEnvelope, LawSpec, KDE_GRID_POINTS};
use crate::matrix::{SpectralSample, SpectrumKind};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;

/// Linear map from data coordinates onto the drawing area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    w: f64,
    h: f64,
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64), w: f64, h: f64) -> Self {
        let pad = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self { x: pad(x), y: pad(y), w, h }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (self.w - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        self.h - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (self.h - 2.0 * MARGIN)
    }

    fn path(&self, pts: &[(f64, f64)]) -> String {
        let mut d = String::new();
        for (i, &(x, y)) in pts.iter().enumerate() {
            let op = if i == 0 { 'M' } else { 'L' };
            let _ = write!(d, "{op}{:.2},{:.2}", self.px(x), self.py(y));
        }
        d
    }
}

struct Svg {
    body: String,
    w: f64,
    h: f64,
}

impl Svg {
    fn new(w: f64, h: f64, title: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(body, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            body,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            w / 2.0,
            escape(title)
        );
        Self { body, w, h }
    }

    fn push(&mut self, element: String) {
        self.body.push_str(&element);
        self.body.push('\n');
    }

    fn axes(&mut self, f: &Frame, xlabel: &str, ylabel: &str) {
        let (x0, x1) = (MARGIN, f.w - MARGIN);
        let (y0, y1) = (f.h - MARGIN, MARGIN);
        self.push(format!(
            r#"<path d="M{x0},{y1}L{x0},{y0}L{x1},{y0}" fill="none" stroke="black" stroke-width="1"/>"#
        ));
        for (v, anchor, x, y) in [
            (f.x.0, "start", x0, y0 + 16.0),
            (f.x.1, "end", x1, y0 + 16.0),
        ] {
            self.push(format!(
                r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{}</text>"#,
                tick(v)
            ));
        }
        for (v, y) in [(f.y.0, y0), (f.y.1, y1 + 10.0)] {
            self.push(format!(
                r#"<text x="{:.1}" y="{y:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
                x0 - 4.0,
                tick(v)
            ));
        }
        self.push(format!(
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            f.w / 2.0,
            f.h - 10.0,
            escape(xlabel)
        ));
        self.push(format!(
            r#"<text x="14" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {:.1})">{}</text>"#,
            f.h / 2.0,
            f.h / 2.0,
            escape(ylabel)
        ));
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.w,
            h = self.h
        )
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Eigenvalues on the complex plane with the ring law's inner and outer
/// circles.
pub fn ring_plot(s: &SpectralSample, law: &LawSpec) -> Result<String> {
    let LawSpec::Ring { c, chain_length } = *law else {
        return Err(Error::UnsupportedLaw(law.name().into()));
    };
    let values = s
        .complex_values()
        .ok_or_else(|| Error::Domain("ring plot needs a complex spectrum".into()))?;
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let (inner, outer) = law.support();
    let extent = values.iter().map(|z| z.norm()).fold(outer, f64::max) * 1.1;
    let side = HEIGHT;
    let f = Frame::new((-extent, extent), (-extent, extent), side, side);
    let mut svg = Svg::new(
        side,
        side,
        &format!("Ring law, c = {c:.4}, L = {chain_length}, N = {}", values.len()),
    );
    svg.axes(&f, "Re", "Im");
    let scale = (side - 2.0 * MARGIN) / (2.0 * extent);
    for (r, colour) in [(outer, "#1f77b4"), (inner, "#d62728")] {
        svg.push(format!(
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            f.px(0.0),
            f.py(0.0),
            r * scale
        ));
    }
    for z in values {
        svg.push(format!(
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="black" fill-opacity="0.6"/>"#,
            f.px(z.re),
            f.py(z.im)
        ));
    }
    Ok(svg.finish())
}

/// Kernel density of a real spectrum against the limiting density, with
/// the envelope band over its interior when one is given.
pub fn density_plot(s: &SpectralSample, law: &LawSpec, env: Option<&ConvergenceEnvelope>) -> Result<String> {
    if let LawSpec::Ring { .. } = law {
        return Err(Error::UnsupportedLaw(law.name().into()));
    }
    if s.kind() == SpectrumKind::Ring {
        return Err(Error::Domain("density plot needs a real spectrum".into()));
    }
    let values = s.real_values().unwrap_or_default();
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let (a, b) = law.support();
    let lo = a.min(values[0]);
    let hi = b.max(values[values.len() - 1]);
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let h = silverman_bandwidth(values);
    let grid: Vec<f64> = (0..KDE_GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (KDE_GRID_POINTS - 1) as f64)
        .collect();
    let est: Vec<(f64, f64)> = grid.iter().map(|&x| (x, kde(values, h, x))).collect();
    let reference: Vec<(f64, f64)> = grid.iter().map(|&x| (x, law.density(x))).collect();

    let mut band = Vec::new();
    if let Some(env) = env {
        let (ilo, ihi) = env.interior()?;
        for i in 0..KDE_GRID_POINTS {
            let x = ilo + (ihi - ilo) * i as f64 / (KDE_GRID_POINTS - 1) as f64;
            let (down, up) = density_envelope(env, x)?;
            band.push((x, down.max(0.0), up));
        }
    }

    let peak = est
        .iter()
        .chain(&reference)
        .map(|p| p.1)
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let top = band.iter().map(|p| p.2).fold(peak, f64::max).min(2.0 * peak.max(1e-12));
    let f = Frame::new((lo, hi), (0.0, 1.05 * top), WIDTH, HEIGHT);
    let mut svg = Svg::new(WIDTH, HEIGHT, &format!("Spectral density vs {}, N = {}", law.name(), values.len()));
    svg.axes(&f, "eigenvalue", "density");
    if !band.is_empty() {
        let clip = |v: f64| v.min(1.05 * top);
        let mut outline: Vec<(f64, f64)> = band.iter().map(|&(x, _, up)| (x, clip(up))).collect();
        outline.extend(band.iter().rev().map(|&(x, down, _)| (x, clip(down))));
        svg.push(format!(
            r##"<path d="{}Z" fill="#ff7f0e" fill-opacity="0.25" stroke="none"/>"##,
            f.path(&outline)
        ));
    }
    svg.push(format!(
        r##"<path d="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
        f.path(&reference)
    ));
    svg.push(format!(
        r#"<path d="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        f.path(&est)
    ));
    Ok(svg.finish())
}

/// Indicator curve over `t_end` with the band `mean ± k sigma`.
pub fn series_plot(series: &IndicatorSeries, k: f64) -> Result<String> {
    if series.points.is_empty() {
        return Err(Error::EmptySample);
    }
    let mean = series.reference.mean;
    let sigma = series.reference.sigma();
    let (band_lo, band_hi) = (mean - k * sigma, mean + k * sigma);
    let t0 = series.points[0].t_end as f64;
    let t1 = series.points[series.points.len() - 1].t_end as f64;
    let (ymin, ymax) = series
        .points
        .iter()
        .fold((band_lo, band_hi), |(a, b), p| (a.min(p.value), b.max(p.value)));
    let pad = 0.05 * (ymax - ymin);
    let f = Frame::new((t0, t1), (ymin - pad, ymax + pad), WIDTH, HEIGHT);
    let mut svg = Svg::new(WIDTH, HEIGHT, &format!("{} over time, band mean ± {k} sigma", series.name()));
    svg.axes(&f, "t_end", &series.name());
    let (x0, x1) = (f.px(f.x.0), f.px(f.x.1));
    svg.push(format!(
        r##"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#2ca02c" fill-opacity="0.2"/>"##,
        f.py(band_hi),
        x1 - x0,
        f.py(band_lo) - f.py(band_hi)
    ));
    svg.push(format!(
        r##"<path d="M{x0:.2},{y:.2}L{x1:.2},{y:.2}" stroke="#2ca02c" stroke-dasharray="4 3"/>"##,
        y = f.py(mean)
    ));
    // Break the line at gaps so missing windows stay visible.
    let mut segment: Vec<(f64, f64)> = Vec::new();
    let mut prev: Option<usize> = None;
    let flush = |seg: &mut Vec<(f64, f64)>, svg: &mut Svg| {
        if !seg.is_empty() {
            svg.push(format!(
                r#"<path d="{}" fill="none" stroke="black" stroke-width="1.2"/>"#,
                f.path(seg)
            ));
            seg.clear();
        }
    };
    for p in &series.points {
        if prev.is_some_and(|t| p.t_end != t + series.stride) {
            flush(&mut segment, &mut svg);
        }
        segment.push((p.t_end as f64, p.value));
        prev = Some(p.t_end);
    }
    flush(&mut segment, &mut svg);
    Ok(svg.finish())
}
