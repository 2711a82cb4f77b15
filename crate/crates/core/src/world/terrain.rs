use serde::{Deserialize, Serialize};

use super::WorldError;

/// Regular heightfield with bilinear interpolation between nodes.
///
/// Node `(i, j)` sits at `origin + (i, j)·cell_size` and is stored at
/// `heights[j * nx + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    pub heights: Vec<f64>,
    pub bounds: (f64, f64),
}

/// Bilinear patch coefficients of one cell: `h = a + b·s + c·r + e·s·r`
/// with `s, r ∈ [0, 1]` the local coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Patch {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub e: f64,
}

impl Terrain {
    pub fn new(
        origin: [f64; 2],
        cell_size: f64,
        nx: usize,
        ny: usize,
        heights: Vec<f64>,
    ) -> Result<Self, WorldError> {
        if nx < 2 || ny < 2 {
            return Err(WorldError::InvalidTerrain(format!(
                "grid {nx}x{ny} smaller than 2x2"
            )));
        }
        if !(cell_size > 0.0) {
            return Err(WorldError::InvalidTerrain(format!("cell size {cell_size}")));
        }
        if heights.len() != nx * ny {
            return Err(WorldError::InvalidTerrain(format!(
                "{} heights for a {nx}x{ny} grid",
                heights.len()
            )));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(WorldError::InvalidTerrain("non-finite height".into()));
        }
        let lo = heights.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            origin,
            cell_size,
            nx,
            ny,
            heights,
            bounds: (lo, hi),
        })
    }

    pub fn flat(origin: [f64; 2], cell_size: f64, nx: usize, ny: usize, level: f64) -> Self {
        Self::new(origin, cell_size, nx, ny, vec![level; nx * ny]).expect("valid flat terrain")
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.nx + i]
    }

    /// `(x_min, x_max, y_min, y_max)` of the footprint.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin[0],
            self.origin[0] + (self.nx - 1) as f64 * self.cell_size,
            self.origin[1],
            self.origin[1] + (self.ny - 1) as f64 * self.cell_size,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, x1, y0, y1) = self.extent();
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    /// Cell index and local coordinates of a point, clamped to the footprint.
    pub(crate) fn locate(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let fx = ((x - self.origin[0]) / self.cell_size).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.origin[1]) / self.cell_size).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        (i, j, fx - i as f64, fy - j as f64)
    }

    pub(crate) fn patch(&self, i: usize, j: usize) -> Patch {
        let h00 = self.node(i, j);
        let h10 = self.node(i + 1, j);
        let h01 = self.node(i, j + 1);
        let h11 = self.node(i + 1, j + 1);
        Patch {
            a: h00,
            b: h10 - h00,
            c: h01 - h00,
            e: h11 - h10 - h01 + h00,
        }
    }

    /// Bilinear height; errors outside the footprint.
    pub fn height_at(&self, x: f64, y: f64) -> Result<f64, WorldError> {
        if !self.contains(x, y) {
            return Err(WorldError::OutOfFootprint { x, y });
        }
        Ok(self.height_clamped(x, y))
    }

    /// Bilinear height with the query clamped onto the footprint.
    pub fn height_clamped(&self, x: f64, y: f64) -> f64 {
        let (i, j, s, r) = self.locate(x, y);
        let p = self.patch(i, j);
        p.a + p.b * s + p.c * r + p.e * s * r
    }

    /// `(∂h/∂x, ∂h/∂y)` of the bilinear surface.
    pub fn gradient_clamped(&self, x: f64, y: f64) -> (f64, f64) {
        let (i, j, s, r) = self.locate(x, y);
        let p = self.patch(i, j);
        (
            (p.b + p.e * r) / self.cell_size,
            (p.c + p.e * s) / self.cell_size,
        )
    }

    /// Smallest height over the axis-aligned square of half-size `half` around `(x, y)`.
    pub fn min_height_near(&self, x: f64, y: f64, half: f64) -> f64 {
        let n = 8;
        let mut lo = f64::INFINITY;
        for a in 0..=n {
            for b in 0..=n {
                let px = x - half + 2.0 * half * a as f64 / n as f64;
                let py = y - half + 2.0 * half * b as f64 / n as f64;
                lo = lo.min(self.height_clamped(px, py));
            }
        }
        lo
    }
}
