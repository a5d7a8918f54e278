//! Rectangular 2-D grids: finite-difference stencils, interpolation, and
//! gridded scalar fields with documented order-2 derivatives.

use serde::{Deserialize, Serialize};

/// Axis-aligned box in R^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2 {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Box2 {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        assert!(min[0] < max[0] && min[1] < max[1], "degenerate box");
        Box2 { min, max }
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        q[0] >= self.min[0] && q[0] <= self.max[0] && q[1] >= self.min[1] && q[1] <= self.max[1]
    }

    pub fn span(&self) -> [f64; 2] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }

    pub fn diagonal(&self) -> f64 {
        let s = self.span();
        (s[0] * s[0] + s[1] * s[1]).sqrt()
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1])]
    }

    /// Box shrunk by `m` on every side.
    pub fn shrink(&self, m: f64) -> Box2 {
        Box2::new([self.min[0] + m, self.min[1] + m], [self.max[0] - m, self.max[1] - m])
    }

    /// Box grown by `m` on every side.
    pub fn inflate(&self, m: f64) -> Box2 {
        self.shrink(-m)
    }

    pub fn clamp(&self, q: &[f64]) -> [f64; 2] {
        [q[0].clamp(self.min[0], self.max[0]), q[1].clamp(self.min[1], self.max[1])]
    }
}

/// Node layout of a rectangular grid: nx x ny nodes spanning `bounds`
/// inclusively. Index (i, j) maps to flat offset j*nx + i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    pub nx: usize,
    pub ny: usize,
    pub bounds: Box2,
}

impl Grid2 {
    pub fn new(nx: usize, ny: usize, bounds: Box2) -> Self {
        assert!(nx >= 5 && ny >= 5, "grid too coarse for the stencils used");
        Grid2 { nx, ny, bounds }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hx(&self) -> f64 {
        (self.bounds.max[0] - self.bounds.min[0]) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.bounds.max[1] - self.bounds.min[1]) / (self.ny - 1) as f64
    }

    #[inline]
    pub fn flat(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.bounds.min[0] + i as f64 * self.hx(), self.bounds.min[1] + j as f64 * self.hy()]
    }

    /// Continuous (cell) coordinates of a point, clamped to the grid.
    pub fn cell_coords(&self, q: &[f64]) -> (f64, f64) {
        let u = ((q[0] - self.bounds.min[0]) / self.hx()).clamp(0.0, (self.nx - 1) as f64);
        let v = ((q[1] - self.bounds.min[1]) / self.hy()).clamp(0.0, (self.ny - 1) as f64);
        (u, v)
    }
}

/// First derivative along x of a nodal field: 4th-order central in the
/// interior, one-sided 2nd-order within two nodes of the edge.
pub fn ddx(grid: &Grid2, f: &[f64]) -> Vec<f64> {
    let (nx, ny, h) = (grid.nx, grid.ny, grid.hx());
    let mut out = vec![0.0; f.len()];
    for j in 0..ny {
        for i in 0..nx {
            let g = |ii: usize| f[grid.flat(ii, j)];
            out[grid.flat(i, j)] = if i >= 2 && i + 2 < nx {
                (-g(i + 2) + 8.0 * g(i + 1) - 8.0 * g(i - 1) + g(i - 2)) / (12.0 * h)
            } else if i == 0 {
                (-3.0 * g(0) + 4.0 * g(1) - g(2)) / (2.0 * h)
            } else if i == nx - 1 {
                (3.0 * g(nx - 1) - 4.0 * g(nx - 2) + g(nx - 3)) / (2.0 * h)
            } else {
                (g(i + 1) - g(i - 1)) / (2.0 * h)
            };
        }
    }
    out
}

pub fn ddy(grid: &Grid2, f: &[f64]) -> Vec<f64> {
    let (nx, ny, h) = (grid.nx, grid.ny, grid.hy());
    let mut out = vec![0.0; f.len()];
    for i in 0..nx {
        for j in 0..ny {
            let g = |jj: usize| f[grid.flat(i, jj)];
            out[grid.flat(i, j)] = if j >= 2 && j + 2 < ny {
                (-g(j + 2) + 8.0 * g(j + 1) - 8.0 * g(j - 1) + g(j - 2)) / (12.0 * h)
            } else if j == 0 {
                (-3.0 * g(0) + 4.0 * g(1) - g(2)) / (2.0 * h)
            } else if j == ny - 1 {
                (3.0 * g(ny - 1) - 4.0 * g(ny - 2) + g(ny - 3)) / (2.0 * h)
            } else {
                (g(j + 1) - g(j - 1)) / (2.0 * h)
            };
        }
    }
    out
}

/// Second derivative along x: 4th-order central in the interior, 2nd-order
/// fallbacks near edges.
pub fn d2dx2(grid: &Grid2, f: &[f64]) -> Vec<f64> {
    let (nx, ny, h) = (grid.nx, grid.ny, grid.hx());
    let h2 = h * h;
    let mut out = vec![0.0; f.len()];
    for j in 0..ny {
        for i in 0..nx {
            let g = |ii: usize| f[grid.flat(ii, j)];
            out[grid.flat(i, j)] = if i >= 2 && i + 2 < nx {
                (-g(i + 2) + 16.0 * g(i + 1) - 30.0 * g(i) + 16.0 * g(i - 1) - g(i - 2))
                    / (12.0 * h2)
            } else if i == 0 {
                (2.0 * g(0) - 5.0 * g(1) + 4.0 * g(2) - g(3)) / h2
            } else if i == nx - 1 {
                (2.0 * g(nx - 1) - 5.0 * g(nx - 2) + 4.0 * g(nx - 3) - g(nx - 4)) / h2
            } else {
                (g(i + 1) - 2.0 * g(i) + g(i - 1)) / h2
            };
        }
    }
    out
}

pub fn d2dy2(grid: &Grid2, f: &[f64]) -> Vec<f64> {
    let (nx, ny, h) = (grid.nx, grid.ny, grid.hy());
    let h2 = h * h;
    let mut out = vec![0.0; f.len()];
    for i in 0..nx {
        for j in 0..ny {
            let g = |jj: usize| f[grid.flat(i, jj)];
            out[grid.flat(i, j)] = if j >= 2 && j + 2 < ny {
                (-g(j + 2) + 16.0 * g(j + 1) - 30.0 * g(j) + 16.0 * g(j - 1) - g(j - 2))
                    / (12.0 * h2)
            } else if j == 0 {
                (2.0 * g(0) - 5.0 * g(1) + 4.0 * g(2) - g(3)) / h2
            } else if j == ny - 1 {
                (2.0 * g(ny - 1) - 5.0 * g(ny - 2) + 4.0 * g(ny - 3) - g(ny - 4)) / h2
            } else {
                (g(j + 1) - 2.0 * g(j) + g(j - 1)) / h2
            };
        }
    }
    out
}

pub fn d2dxdy(grid: &Grid2, f: &[f64]) -> Vec<f64> {
    ddy(grid, &ddx(grid, f))
}

/// Bilinear interpolation of a nodal field; queries clamp to the grid box.
pub fn bilinear(grid: &Grid2, f: &[f64], q: &[f64]) -> f64 {
    let (u, v) = grid.cell_coords(q);
    let i0 = (u.floor() as usize).min(grid.nx - 2);
    let j0 = (v.floor() as usize).min(grid.ny - 2);
    let fu = u - i0 as f64;
    let fv = v - j0 as f64;
    let g = |i: usize, j: usize| f[grid.flat(i, j)];
    g(i0, j0) * (1.0 - fu) * (1.0 - fv)
        + g(i0 + 1, j0) * fu * (1.0 - fv)
        + g(i0, j0 + 1) * (1.0 - fu) * fv
        + g(i0 + 1, j0 + 1) * fu * fv
}

fn catmull_rom(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * ((2.0 * p1)
        + (-p0 + p2) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3)
}

/// Bicubic (Catmull-Rom) interpolation; falls back to bilinear within one
/// node of the boundary. Queries clamp to the grid box.
pub fn bicubic(grid: &Grid2, f: &[f64], q: &[f64]) -> f64 {
    let (u, v) = grid.cell_coords(q);
    let i0 = (u.floor() as usize).min(grid.nx - 2);
    let j0 = (v.floor() as usize).min(grid.ny - 2);
    if i0 < 1 || j0 < 1 || i0 + 2 >= grid.nx || j0 + 2 >= grid.ny {
        return bilinear(grid, f, q);
    }
    let fu = u - i0 as f64;
    let fv = v - j0 as f64;
    let mut col = [0.0; 4];
    for (jj, c) in col.iter_mut().enumerate() {
        let j = j0 + jj - 1;
        *c = catmull_rom(
            f[grid.flat(i0 - 1, j)],
            f[grid.flat(i0, j)],
            f[grid.flat(i0 + 1, j)],
            f[grid.flat(i0 + 2, j)],
            fu,
        );
    }
    catmull_rom(col[0], col[1], col[2], col[3], fv)
}

/// A scalar field tabulated on a grid. Gradients and Hessians come from
/// order-2 finite differences of the nodal values (precomputed once),
/// interpolated bilinearly; accuracy order 2 overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScalarField2 {
    pub grid: Grid2,
    pub values: Vec<f64>,
    #[serde(skip)]
    derivs: Option<GridDerivs>,
}

#[derive(Debug, Clone, PartialEq)]
struct GridDerivs {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dxx: Vec<f64>,
    dxy: Vec<f64>,
    dyy: Vec<f64>,
}

impl GridScalarField2 {
    pub fn new(grid: Grid2, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len());
        let mut f = GridScalarField2 { grid, values, derivs: None };
        f.refresh_derivatives();
        f
    }

    pub fn refresh_derivatives(&mut self) {
        let dx = ddx(&self.grid, &self.values);
        let dy = ddy(&self.grid, &self.values);
        self.derivs = Some(GridDerivs {
            dxx: d2dx2(&self.grid, &self.values),
            dxy: ddy(&self.grid, &dx),
            dyy: d2dy2(&self.grid, &self.values),
            dx,
            dy,
        });
    }

    fn derivs(&self) -> &GridDerivs {
        self.derivs.as_ref().expect("derivatives initialized in constructor")
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        bilinear(&self.grid, &self.values, q)
    }

    pub fn gradient(&self, q: &[f64]) -> [f64; 2] {
        let d = self.derivs();
        [bilinear(&self.grid, &d.dx, q), bilinear(&self.grid, &d.dy, q)]
    }

    /// (dxx, dxy, dyy) at q.
    pub fn hessian_entries(&self, q: &[f64]) -> [f64; 3] {
        let d = self.derivs();
        [
            bilinear(&self.grid, &d.dxx, q),
            bilinear(&self.grid, &d.dxy, q),
            bilinear(&self.grid, &d.dyy, q),
        ]
    }
}

/// Restore skipped derivative caches after deserialization.
pub fn rehydrate(field: &mut GridScalarField2) {
    if field.derivs.is_none() {
        field.refresh_derivatives();
    }
}
