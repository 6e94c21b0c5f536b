use serde::{Deserialize, Serialize};

use super::raster::HalfRaster;
use super::{BridgeSpec, BridgeSubtype, GeometryError, ParamKind, BRIDGE_LENGTH_M};
use crate::image::{GrayImage, DEFAULT_HEIGHT, DEFAULT_WIDTH};

/// Highest point any legal spec can reach: tallest pier plus the larger of
/// the tallest tower and the steepest arch over the 166 m main span.
pub const TALLEST_REACH_M: f64 = 30.0 + 166.0 / 3.0;

/// World height mapped onto the canvas between ground line and top margin.
pub const WORLD_TOP_M: f64 = TALLEST_REACH_M;

const REF_MARGIN_X: f64 = 6.0;
const REF_MARGIN_TOP: f64 = 6.0;
const REF_PRIMARY_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
}

impl Default for Canvas {
    fn default() -> Self {
        Canvas {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
        }
    }
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Result<Self, GeometryError> {
        let err = |reason| GeometryError::Canvas {
            width,
            height,
            reason,
        };
        if !width.is_multiple_of(2) {
            return Err(err("width must be even"));
        }
        if width < 64 || height < 16 {
            return Err(err("canvas must be at least 64x16"));
        }
        Ok(Canvas { width, height })
    }
}

/// World (meters, y up from the ground line) to pixel (x right, y down) map.
///
/// The reference canvas is 512x128: 300 m across 500 px between 6 px side
/// margins (0.6 m/px), and the tallest legal reach lands 6 px below the top.
/// Other canvases scale margins and stroke widths proportionally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewport {
    pub canvas: Canvas,
    pub margin_x: f64,
    pub margin_top: f64,
    /// Pixels per meter horizontally.
    pub scale_x: f64,
    /// Pixels per meter vertically.
    pub scale_y: f64,
    /// Pixel y of the ground line.
    pub ground_y: f64,
    pub primary_width: f64,
}

impl Viewport {
    pub fn new(canvas: Canvas) -> Self {
        let w = canvas.width as f64;
        let h = canvas.height as f64;
        let margin_x = REF_MARGIN_X * w / DEFAULT_WIDTH as f64;
        let margin_top = REF_MARGIN_TOP * h / DEFAULT_HEIGHT as f64;
        let ground_y = h - 1.0;
        Viewport {
            canvas,
            margin_x,
            margin_top,
            scale_x: (w - 2.0 * margin_x) / BRIDGE_LENGTH_M,
            scale_y: (ground_y - margin_top) / WORLD_TOP_M,
            ground_y,
            primary_width: (REF_PRIMARY_WIDTH * w / DEFAULT_WIDTH as f64).max(1.5),
        }
    }

    pub fn px(&self, x_m: f64) -> f64 {
        self.margin_x + x_m * self.scale_x
    }

    pub fn py(&self, y_m: f64) -> f64 {
        self.ground_y - y_m * self.scale_y
    }

    pub fn point(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (self.px(x), self.py(y))
    }

    /// Pixel column back to meters along the bridge.
    pub fn x_meters(&self, px: f64) -> f64 {
        (px - self.margin_x) / self.scale_x
    }
}

/// Drawing primitives in world coordinates.
enum Mark {
    /// Primary member: pier, tower, arch rib, abutment, V leg.
    Member(Vec<(f64, f64)>),
    /// Cable, stay or hanger.
    Cable(Vec<(f64, f64)>),
    /// Deck running across the full canvas width.
    Deck { elevation: f64, depth_m: f64 },
}

fn member(a: (f64, f64), b: (f64, f64)) -> Mark {
    Mark::Member(vec![a, b])
}

fn cable(a: (f64, f64), b: (f64, f64)) -> Mark {
    Mark::Cable(vec![a, b])
}

fn parabola(x0: f64, x1: f64, f: impl Fn(f64) -> f64, segments: usize) -> Vec<(f64, f64)> {
    (0..=segments)
        .map(|i| {
            let x = x0 + (x1 - x0) * i as f64 / segments as f64;
            (x, f(x))
        })
        .collect()
}

/// Evenly spaced stations strictly inside `[a, b]`.
fn interior_stations(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (1..=n).map(move |k| a + (b - a) * k as f64 / (n + 1) as f64)
}

fn marks(spec: &BridgeSpec) -> Vec<Mark> {
    let deck = spec.deck_elevation;
    let [_, p1, p2, end] = spec.support_stations();
    let mid = 0.5 * end;
    let half_main = 0.5 * spec.spans[1];
    let mut out = vec![
        member((0.0, deck), (0.0, 0.0)),
        member((end, deck), (end, 0.0)),
    ];

    match spec.subtype {
        BridgeSubtype::EqualSectionBeam => {
            out.push(Mark::Deck {
                elevation: deck,
                depth_m: spec.get(ParamKind::GirderDepth),
            });
            for x in [p1, p2] {
                out.push(member((x, deck), (x, 0.0)));
            }
        }
        BridgeSubtype::VPierRigidFrame => {
            out.push(Mark::Deck {
                elevation: deck,
                depth_m: 0.0,
            });
            let spread = deck * spec.get(ParamKind::VPierHalfAngle).to_radians().tan();
            for x in [p1, p2] {
                out.push(member((x, 0.0), (x - spread, deck)));
                out.push(member((x, 0.0), (x + spread, deck)));
            }
        }
        BridgeSubtype::TopBearingArch => {
            out.push(Mark::Deck {
                elevation: deck,
                depth_m: 0.0,
            });
            let rise = spec.arch_rise().expect("arch subtype has a rise");
            let arch = |x: f64| rise * (1.0 - ((x - mid) / half_main).powi(2));
            out.push(Mark::Member(parabola(p1, p2, arch, 48)));
            for x in [p1, p2] {
                out.push(member((x, deck), (x, 0.0)));
            }
            for x in interior_stations(p1, p2, spec.count(ParamKind::SpandrelColumns)) {
                out.push(member((x, arch(x)), (x, deck)));
            }
        }
        BridgeSubtype::BottomBearingArch => {
            out.push(Mark::Deck {
                elevation: deck,
                depth_m: 0.0,
            });
            let rise = spec.arch_rise().expect("arch subtype has a rise");
            let arch = |x: f64| deck + rise * (1.0 - ((x - mid) / half_main).powi(2));
            out.push(Mark::Member(parabola(p1, p2, arch, 48)));
            for x in [p1, p2] {
                out.push(member((x, deck), (x, 0.0)));
            }
            for x in interior_stations(p1, p2, spec.count(ParamKind::Hangers)) {
                out.push(cable((x, arch(x)), (x, deck)));
            }
        }
        BridgeSubtype::HarpCableStayed | BridgeSubtype::FanCableStayed => {
            out.push(Mark::Deck {
                elevation: deck,
                depth_m: 0.0,
            });
            let tower = spec.get(ParamKind::TowerHeight);
            let n = spec.count(ParamKind::CablePairs);
            // Deck anchors stay inside the side span.
            let reach = 0.9 * spec.spans[0];
            let harp = spec.subtype == BridgeSubtype::HarpCableStayed;
            for x in [p1, p2] {
                out.push(member((x, 0.0), (x, deck + tower)));
                for i in 1..=n {
                    let d = reach * i as f64 / n as f64;
                    let anchor = if harp {
                        deck + 0.95 * tower * i as f64 / n as f64
                    } else {
                        deck + tower
                    };
                    out.push(cable((x, anchor), (x - d, deck)));
                    out.push(cable((x, anchor), (x + d, deck)));
                }
            }
        }
        BridgeSubtype::VerticalSlingSuspension | BridgeSubtype::DiagonalSlingSuspension => {
            out.push(Mark::Deck {
                elevation: deck,
                depth_m: 0.0,
            });
            let tower = spec.get(ParamKind::TowerHeight);
            let low = 1.5;
            let cable_y = |x: f64| deck + low + (tower - low) * ((x - mid) / half_main).powi(2);
            for x in [p1, p2] {
                out.push(member((x, 0.0), (x, deck + tower)));
            }
            out.push(Mark::Cable(parabola(p1, p2, cable_y, 64)));
            out.push(cable((p1, deck + tower), (0.0, deck)));
            out.push(cable((p2, deck + tower), (end, deck)));
            let hangers = spec.count(ParamKind::Hangers);
            let slope = spec
                .param(ParamKind::SlingInclination)
                .map(|deg| deg.to_radians().tan());
            for x in interior_stations(p1, p2, hangers) {
                let top = match slope {
                    None => x,
                    Some(slope) => {
                        let dir = if x > mid { -1.0 } else { 1.0 };
                        let gap = |xt: f64| cable_y(xt) - deck - (xt - x).abs() * slope;
                        let (mut lo, mut hi) = (x, x + dir * (tower / slope + 1.0));
                        for _ in 0..60 {
                            let m = 0.5 * (lo + hi);
                            if gap(m) > 0.0 {
                                lo = m;
                            } else {
                                hi = m;
                            }
                        }
                        0.5 * (lo + hi)
                    }
                };
                out.push(cable((x, deck), (top, cable_y(top))));
            }
        }
    }
    out
}

/// Rasterizes the facade: dark structure on a white background, exactly
/// mirror-symmetric, deck continuous from edge to edge.
pub fn render(spec: &BridgeSpec, canvas: Canvas) -> Result<GrayImage, GeometryError> {
    spec.validate()?;
    rasterize(spec, canvas)
}

fn rasterize(spec: &BridgeSpec, canvas: Canvas) -> Result<GrayImage, GeometryError> {
    let canvas = Canvas::new(canvas.width, canvas.height)?;
    let vp = Viewport::new(canvas);
    let marks = marks(spec);

    let (w, h) = (canvas.width as f64, canvas.height as f64);
    let inside = |(x, y): (f64, f64)| (0.0..=w).contains(&x) && (0.0..=h).contains(&y);
    for mark in &marks {
        let (points, what) = match mark {
            Mark::Member(p) => (p.as_slice(), "member"),
            Mark::Cable(p) => (p.as_slice(), "cable"),
            Mark::Deck { elevation, depth_m } => {
                let half = 0.5 * (depth_m * vp.scale_y).max(vp.primary_width);
                let y = vp.py(*elevation);
                if y - half < 0.0 || y + half > h {
                    return Err(GeometryError::OffCanvas(format!(
                        "deck at {elevation:.2} m maps to row {y:.1}"
                    )));
                }
                continue;
            }
        };
        if let Some(p) = points.iter().copied().find(|&p| !inside(vp.point(p))) {
            return Err(GeometryError::OffCanvas(format!(
                "{} {what} point ({:.2} m, {:.2} m) maps outside {}x{}",
                spec.subtype, p.0, p.1, canvas.width, canvas.height
            )));
        }
    }

    let mut raster = HalfRaster::new(canvas.width, canvas.height);
    for mark in &marks {
        match mark {
            Mark::Member(p) => {
                let px: Vec<_> = p.iter().map(|&q| vp.point(q)).collect();
                raster.stroke_polyline(&px, vp.primary_width);
            }
            Mark::Cable(p) => {
                let px: Vec<_> = p.iter().map(|&q| vp.point(q)).collect();
                raster.hairline_polyline(&px);
            }
            Mark::Deck { elevation, depth_m } => {
                let y = vp.py(*elevation);
                let width = (depth_m * vp.scale_y).max(vp.primary_width);
                raster.band(y, width);
            }
        }
    }
    Ok(raster.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_spec, ParamKind};

    fn structure(img: &GrayImage, x: usize, y: usize) -> bool {
        img.get(x, y) <= 128
    }

    #[test]
    fn reference_viewport_is_point_six_meters_per_pixel() {
        let vp = Viewport::new(Canvas::default());
        assert!((1.0 / vp.scale_x - 0.6).abs() < 1e-12);
        assert_eq!(vp.px(0.0), 6.0);
        assert_eq!(vp.px(300.0), 506.0);
        assert!((vp.py(WORLD_TOP_M) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn tallest_reach_covers_every_range() {
        let (_, pier) = ParamKind::PierHeight.range();
        let (_, tower) = ParamKind::TowerHeight.range();
        let (_, rise) = ParamKind::ArchRiseRatio.range();
        let (_, crown) = ParamKind::CrownClearance.range();
        assert!(pier + tower <= TALLEST_REACH_M + 1e-12);
        assert!(pier + 166.0 * rise <= TALLEST_REACH_M + 1e-12);
        assert!(166.0 * rise + crown <= TALLEST_REACH_M);
    }

    #[test]
    fn every_subtype_renders_symmetric_with_continuous_deck() {
        let vp = Viewport::new(Canvas::default());
        for t in BridgeSubtype::ALL {
            for seed in 0..5 {
                let spec = sample_spec(t, seed);
                let img = render(&spec, Canvas::default()).unwrap();
                assert!(img.is_mirror_symmetric(), "{t} seed {seed}");
                let row = vp.py(spec.deck_elevation).floor() as usize;
                for x in 0..img.width() {
                    assert!(
                        (row - 2..=row + 2).any(|y| structure(&img, x, y)),
                        "{t} seed {seed}: deck gap at column {x}"
                    );
                }
            }
        }
    }

    #[test]
    fn beam_pier_height_changes_pixels() {
        let low = BridgeSpec::new(BridgeSubtype::EqualSectionBeam, &[8.0, 3.0], 0).unwrap();
        let high = BridgeSpec::new(BridgeSubtype::EqualSectionBeam, &[30.0, 3.0], 0).unwrap();
        let a = render(&low, Canvas::default()).unwrap();
        let b = render(&high, Canvas::default()).unwrap();
        assert!(a.pixels().iter().zip(b.pixels()).any(|(p, q)| p != q));
    }

    #[test]
    fn rejects_geometry_beyond_canvas() {
        let mut spec = sample_spec(BridgeSubtype::HarpCableStayed, 3);
        spec.member_params[1].value = 200.0;
        assert!(matches!(
            render(&spec, Canvas::default()),
            Err(GeometryError::InvalidSpec(_))
        ));
        // a range-table bug would let this through validation
        assert!(matches!(
            rasterize(&spec, Canvas::default()),
            Err(GeometryError::OffCanvas(_))
        ));
    }

    #[test]
    fn small_canvas_renders() {
        let canvas = Canvas::new(128, 32).unwrap();
        for t in BridgeSubtype::ALL {
            let img = render(&sample_spec(t, 11), canvas).unwrap();
            assert_eq!((img.width(), img.height()), (128, 32));
            assert!(img.is_mirror_symmetric());
        }
        assert!(Canvas::new(127, 32).is_err());
    }
}
