//! Synthetic glyph shapes: the desk-scale stand-in for hand gestures.
//!
//! Each gesture id maps to a distinct solid shape. Shapes are designed so
//! that (a) the 4x4 bbox-normalized occupancy grids are pairwise distinct,
//! and (b) the fill ratio inside the bounding box stays well above the 0.5
//! detection confidence floor.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::img::Image;

/// Geometry of one glyph class, defined on a local unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlyphShape {
    /// Solid square (fill 1.0).
    Square,
    /// Solid disk (fill ~0.785).
    Disk,
    /// Square with a centered square hole (fill 0.75).
    Ring,
    /// Square with a notch cut from the top edge (fill 0.875).
    NotchedSquare,
    /// Plus sign with half-width arms (fill 0.75).
    Cross,
    /// L-shaped corner block (fill ~0.859).
    Corner,
}

impl GlyphShape {
    /// Whether local point (u, v) in [0,1]^2 is inside the shape.
    pub fn contains(self, u: f64, v: f64) -> bool {
        match self {
            GlyphShape::Square => true,
            GlyphShape::Disk => {
                let (du, dv) = (u - 0.5, v - 0.5);
                du * du + dv * dv <= 0.25
            }
            GlyphShape::Ring => !((0.25..=0.75).contains(&u) && (0.25..=0.75).contains(&v)),
            GlyphShape::NotchedSquare => !((u - 0.5).abs() < 0.125 && v < 0.5),
            GlyphShape::Cross => (u - 0.5).abs() <= 0.25 || (v - 0.5).abs() <= 0.25,
            GlyphShape::Corner => u <= 0.625 || v >= 0.375,
        }
    }

    /// Analytic area fraction of the shape inside its unit bounding square.
    pub fn fill_ratio(self) -> f64 {
        match self {
            GlyphShape::Square => 1.0,
            GlyphShape::Disk => std::f64::consts::PI / 4.0,
            GlyphShape::Ring => 0.75,
            GlyphShape::NotchedSquare => 0.875,
            GlyphShape::Cross => 0.75,
            GlyphShape::Corner => 0.625 + 0.625 - 0.625 * 0.625,
        }
    }

    /// Analytic centroid in local coordinates.
    pub fn centroid(self) -> (f64, f64) {
        match self {
            GlyphShape::Square | GlyphShape::Disk | GlyphShape::Ring | GlyphShape::Cross => {
                (0.5, 0.5)
            }
            GlyphShape::NotchedSquare => {
                // Square centroid minus the notch contribution.
                let v = (0.5 - 0.25 * 0.125) / 0.875;
                (0.5, v)
            }
            GlyphShape::Corner => {
                let a1 = 0.625; // left column
                let a2 = 0.375 * 0.625; // remaining bottom block
                let total = a1 + a2;
                let u = (a1 * 0.3125 + a2 * 0.8125) / total;
                let v = (a1 * 0.5 + a2 * 0.6875) / total;
                (u, v)
            }
        }
    }
}

/// One gesture class of the built-in glyph set.
#[derive(Debug, Clone, Copy)]
pub struct GlyphGesture {
    pub id: &'static str,
    /// Phrase inserted into enriched captions.
    pub phrase: &'static str,
    pub shape: GlyphShape,
}

/// The built-in glyph classes, mirroring the six reference gestures.
pub const GLYPH_GESTURES: [GlyphGesture; 6] = [
    GlyphGesture {
        id: "phone_call",
        phrase: "phone call",
        shape: GlyphShape::Corner,
    },
    GlyphGesture {
        id: "four",
        phrase: "four",
        shape: GlyphShape::NotchedSquare,
    },
    GlyphGesture {
        id: "like",
        phrase: "like",
        shape: GlyphShape::Cross,
    },
    GlyphGesture {
        id: "mute",
        phrase: "mute",
        shape: GlyphShape::Ring,
    },
    GlyphGesture {
        id: "ok",
        phrase: "ok",
        shape: GlyphShape::Disk,
    },
    GlyphGesture {
        id: "palm",
        phrase: "palm",
        shape: GlyphShape::Square,
    },
];

pub fn lookup_gesture(id: &str) -> Option<&'static GlyphGesture> {
    GLYPH_GESTURES.iter().find(|g| g.id == id)
}

/// Placement of a glyph on a canvas, in pixel coordinates.
#[derive(Debug, Clone, Copy)]
pub struct GlyphPlacement {
    pub center_x: f64,
    pub center_y: f64,
    pub side: f64,
    pub foreground: f64,
}

impl GlyphPlacement {
    /// Image-space centroid of `shape` under this placement.
    pub fn centroid_px(&self, shape: GlyphShape) -> (f64, f64) {
        let (cu, cv) = shape.centroid();
        let x0 = self.center_x - self.side / 2.0;
        let y0 = self.center_y - self.side / 2.0;
        (x0 + cu * self.side, y0 + cv * self.side)
    }
}

/// Draws a random placement that keeps the glyph fully on the canvas.
pub fn random_placement(rng: &mut ChaCha8Rng, image_size: usize) -> GlyphPlacement {
    let s = image_size as f64;
    let side = rng.gen_range(0.55..0.80) * s;
    let half = side / 2.0;
    let center_x = rng.gen_range(half + 0.5..s - half - 0.5);
    let center_y = rng.gen_range(half + 0.5..s - half - 0.5);
    let foreground = rng.gen_range(0.85..1.0);
    GlyphPlacement {
        center_x,
        center_y,
        side,
        foreground,
    }
}

const NOISE_GRID: usize = 4;
const SUPERSAMPLE: usize = 3;

/// Renders a glyph over a smooth noise background; fully deterministic given
/// the RNG state.
pub fn render_glyph(
    shape: GlyphShape,
    placement: &GlyphPlacement,
    image_size: usize,
    rng: &mut ChaCha8Rng,
) -> Image {
    // Background: bilinear-upsampled noise grid in [0.05, 0.35].
    let grid: Vec<f64> = (0..NOISE_GRID * NOISE_GRID)
        .map(|_| rng.gen_range(0.05..0.35))
        .collect();
    let mut img = Image::zeros(1, image_size, image_size);
    let x0 = placement.center_x - placement.side / 2.0;
    let y0 = placement.center_y - placement.side / 2.0;
    for py in 0..image_size {
        for px in 0..image_size {
            let bg = sample_noise(&grid, px, py, image_size);
            let mut covered = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let fx = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let fy = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    let u = (fx - x0) / placement.side;
                    let v = (fy - y0) / placement.side;
                    if (0.0..=1.0).contains(&u)
                        && (0.0..=1.0).contains(&v)
                        && shape.contains(u, v)
                    {
                        covered += 1;
                    }
                }
            }
            let frac = covered as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let value = bg + frac * (placement.foreground - bg);
            img.set(0, py, px, value as f32);
        }
    }
    img
}

fn sample_noise(grid: &[f64], px: usize, py: usize, image_size: usize) -> f64 {
    let scale = NOISE_GRID as f64 / image_size as f64;
    let fx = ((px as f64 + 0.5) * scale - 0.5).clamp(0.0, (NOISE_GRID - 1) as f64);
    let fy = ((py as f64 + 0.5) * scale - 0.5).clamp(0.0, (NOISE_GRID - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(NOISE_GRID - 1), (y0 + 1).min(NOISE_GRID - 1));
    let (wx, wy) = (fx - x0 as f64, fy - y0 as f64);
    let g = |x: usize, y: usize| grid[y * NOISE_GRID + x];
    g(x0, y0) * (1.0 - wx) * (1.0 - wy)
        + g(x1, y0) * wx * (1.0 - wy)
        + g(x0, y1) * (1.0 - wx) * wy
        + g(x1, y1) * wx * wy
}
