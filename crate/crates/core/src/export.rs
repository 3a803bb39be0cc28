//! Figure output: PNG image grids, SVG histograms, quiver plots and 2D
//! scatter plots.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Histogram, PlaneProjection};
use crate::tensor::{Scalar, TensorBuf};

/// Gap between grid cells, in pixels.
const GAP: usize = 2;

/// Maps `[-1, 1]` to `0..=255`, clamping outside values.
pub fn to_u8(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Tiles `[n, 1, H, W]` images into a grayscale raster with `cols` columns.
/// Returns `(width, height, pixels)`.
pub fn grid_pixels<F: Scalar>(images: &TensorBuf<F>, cols: usize) -> Result<(usize, usize, Vec<u8>)> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::shape(&[images.batch(), 1, 0, 0], s));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    if n == 0 || cols == 0 {
        return Err(Error::config("image grid needs at least one image and one column"));
    }
    let cols = cols.min(n);
    let rows = n.div_ceil(cols);
    let width = cols * w + (cols + 1) * GAP;
    let height = rows * h + (rows + 1) * GAP;
    let mut px = vec![0u8; width * height];
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        let (y0, x0) = (GAP + r * (h + GAP), GAP + c * (w + GAP));
        let img = images.item(i);
        for y in 0..h {
            for x in 0..w {
                px[(y0 + y) * width + x0 + x] = to_u8(img[y * w + x].as_f64());
            }
        }
    }
    Ok((width, height, px))
}

pub fn write_png_grid<F: Scalar>(images: &TensorBuf<F>, cols: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h, px) = grid_pixels(images, cols)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let as_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(as_io)?;
    writer.write_image_data(&px).map_err(as_io)?;
    writer.finish().map_err(as_io)
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 48.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Linear map from data range to the plot box.
struct Axis {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, a: f64, b: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, a, b }
    }

    fn at(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

fn axes(s: &mut String, x: &Axis, y: &Axis, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        s,
        r#"<path d="M{} {} L{} {} L{} {}" fill="none" stroke="black"/>"#,
        x.a, y.b, x.a, y.a, x.b, y.a
    );
    for (v, px) in [(x.lo, x.a), (x.hi, x.b)] {
        let _ = writeln!(s, r#"<text x="{px}" y="{}" text-anchor="middle">{v:.3}</text>"#, y.a + 16.0);
    }
    for (v, py) in [(y.lo, y.a), (y.hi, y.b)] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, x.a - 4.0, py + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x.a + x.b) / 2.0, H - 8.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (y.a + y.b) / 2.0,
        (y.a + y.b) / 2.0,
        escape(ylabel)
    );
}

/// Bar chart of one or more histograms sharing bin edges, overlaid with
/// transparency.
pub fn histogram_svg(title: &str, xlabel: &str, series: &[(&str, &Histogram)]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::config("histogram plot needs a series"));
    }
    let lo = series.iter().map(|(_, h)| h.edges[0]).fold(f64::INFINITY, f64::min);
    let hi = series.iter().map(|(_, h)| *h.edges.last().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let top = series.iter().flat_map(|(_, h)| h.counts.iter()).copied().max().unwrap_or(0).max(1);
    let x = Axis::new(lo, hi, MARGIN, W - MARGIN);
    let y = Axis::new(0.0, top as f64, H - MARGIN, MARGIN);
    let mut s = svg_open(title);
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    for (k, (name, h)) in series.iter().enumerate() {
        if h.edges.len() != h.counts.len() + 1 {
            return Err(Error::shape(&[h.counts.len() + 1], &[h.edges.len()]));
        }
        let color = COLORS[k % COLORS.len()];
        for (i, &c) in h.counts.iter().enumerate() {
            let (x0, x1) = (x.at(h.edges[i]), x.at(h.edges[i + 1]));
            let y1 = y.at(c as f64);
            let _ = writeln!(
                s,
                r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                (x1 - x0).max(0.5),
                y.a - y1
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
            W - MARGIN,
            MARGIN + 16.0 * k as f64,
            escape(name)
        );
    }
    axes(&mut s, &x, &y, xlabel, "count");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Arrows of a plane projection, scaled so the longest spans one grid cell,
/// with the start and end states marked.
pub fn quiver_svg(title: &str, p: &PlaneProjection) -> Result<String> {
    if p.grid.is_empty() || p.grid.len() != p.arrows.len() {
        return Err(Error::shape(&[p.grid.len()], &[p.arrows.len()]));
    }
    let (mut ulo, mut uhi, mut vlo, mut vhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(u, v) in p.grid.iter().chain([&p.start_uv, &p.end_uv]) {
        ulo = ulo.min(u);
        uhi = uhi.max(u);
        vlo = vlo.min(v);
        vhi = vhi.max(v);
    }
    let side = (H - 2.0 * MARGIN).min(W - 2.0 * MARGIN);
    let x = Axis::new(ulo, uhi, (W - side) / 2.0, (W + side) / 2.0);
    let y = Axis::new(vlo, vhi, (H + side) / 2.0, (H - side) / 2.0);
    let cell = side / p.grid_res.max(2) as f64;
    let longest = p.arrows.iter().map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
    let k = if longest > 0.0 { 0.9 * cell / longest } else { 0.0 };
    let mut s = svg_open(title);
    s.push_str(
        r##"<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto"><path d="M0 0 L6 3 L0 6 z" fill="#1f77b4"/></marker></defs>
"##,
    );
    for (&(u, v), &(a, b)) in p.grid.iter().zip(&p.arrows) {
        let (x0, y0) = (x.at(u), y.at(v));
        // Screen y grows downwards.
        let (x1, y1) = (x0 + k * a, y0 - k * b);
        let _ = writeln!(
            s,
            r##"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="#1f77b4" marker-end="url(#head)"/>"##
        );
    }
    for (label, (u, v), color) in [("start", p.start_uv, "#d62728"), ("end", p.end_uv, "#2ca02c")] {
        let (cx, cy) = (x.at(u), y.at(v));
        let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="5" fill="{color}"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" fill="{color}">{label}</text>"#, cx + 7.0, cy - 7.0);
    }
    axes(&mut s, &x, &y, "e1", "e2");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Scatter of `[n, 2]` point sets.
pub fn scatter_svg<F: Scalar>(title: &str, series: &[(&str, &TensorBuf<F>)]) -> Result<String> {
    let mut pts: Vec<Vec<(f64, f64)>> = Vec::new();
    for (_, t) in series {
        if t.rank() != 2 || t.shape()[1] != 2 {
            return Err(Error::shape(&[t.batch(), 2], t.shape()));
        }
        pts.push((0..t.batch()).map(|i| (t.item(i)[0].as_f64(), t.item(i)[1].as_f64())).collect());
    }
    let all = || pts.iter().flatten().filter(|(a, b)| a.is_finite() && b.is_finite());
    let lo = all().map(|p| p.0.min(p.1)).fold(f64::INFINITY, f64::min);
    let hi = all().map(|p| p.0.max(p.1)).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Err(Error::config("scatter plot has no finite points"));
    }
    let side = H - 2.0 * MARGIN;
    let x = Axis::new(lo, hi, (W - side) / 2.0, (W + side) / 2.0);
    let y = Axis::new(lo, hi, (H + side) / 2.0, (H - side) / 2.0);
    let mut s = svg_open(title);
    const COLORS: [&str; 4] = ["#7f7f7f", "#1f77b4", "#d62728", "#2ca02c"];
    for (k, ((name, _), p)) in series.iter().zip(&pts).enumerate() {
        let color = COLORS[k % COLORS.len()];
        for &(a, b) in p.iter().filter(|(a, b)| a.is_finite() && b.is_finite()) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{color}" fill-opacity="0.6"/>"#, x.at(a), y.at(b));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#, W - 8.0, MARGIN + 16.0 * k as f64, escape(name));
    }
    axes(&mut s, &x, &y, "x", "y");
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::histogram;

    #[test]
    fn pixel_map_endpoints() {
        assert_eq!(to_u8(-1.0), 0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(7.0), 255);
        assert_eq!(to_u8(-3.0), 0);
        assert_eq!(to_u8(0.0), 128);
    }

    #[test]
    fn grid_layout_and_png_round_trip() {
        let imgs = TensorBuf::<f32>::from_fn(vec![5, 1, 3, 4], |i| if i % 2 == 0 { 1.0 } else { -1.0 });
        let (w, h, px) = grid_pixels(&imgs, 3).unwrap();
        assert_eq!((w, h), (3 * 4 + 4 * GAP, 2 * 3 + 3 * GAP));
        // First pixel of the first image, then of the second.
        assert_eq!(px[GAP * w + GAP], 255);
        assert_eq!(px[GAP * w + 2 * GAP + 4 + 1], 0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g/grid.png");
        write_png_grid(&imgs, 3, &path).unwrap();
        let dec = png::Decoder::new(std::io::BufReader::new(File::open(&path).unwrap()));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width as usize, info.height as usize), (w, h));
        assert_eq!(&buf[..info.buffer_size()], &px[..]);

        assert!(grid_pixels(&TensorBuf::<f32>::zeros(vec![2, 3, 4, 4]), 2).is_err());
    }

    #[test]
    fn svgs_are_well_formed() {
        let h = histogram(&[1.0, 1.2, 2.5, 3.0], 1.0, 3.0, 30);
        let s = histogram_svg("C", "straightness", &[("flow", &h), ("ddim <50>", &h)]).unwrap();
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<rect").count(), 1 + 60);
        assert!(s.contains("ddim &lt;50&gt;"));

        let p = PlaneProjection {
            e1: vec![1.0, 0.0],
            e2: vec![0.0, 1.0],
            origin: vec![0.0, 0.0],
            grid: vec![(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)],
            arrows: vec![(1.0, 0.0), (0.0, 0.0), (0.5, 0.5), (0.0, -1.0)],
            grid_res: 2,
            t_eval: 0.5,
            start_uv: (-1.0, 0.0),
            end_uv: (1.0, 0.0),
        };
        let q = quiver_svg("field", &p).unwrap();
        assert_eq!(q.matches("<line").count(), 4);

        let pts = TensorBuf::<f32>::from_fn(vec![10, 2], |i| i as f32);
        assert_eq!(scatter_svg("pts", &[("a", &pts)]).unwrap().matches("<circle").count(), 10);
        assert!(scatter_svg("bad", &[("a", &TensorBuf::<f32>::zeros(vec![3, 3]))]).is_err());
    }
}
