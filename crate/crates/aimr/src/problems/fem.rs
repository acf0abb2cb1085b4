//! Q1 finite elements on the unit square with homogeneous Dirichlet data.
//!
//! The mesh is uniform with `n × n` square elements; only interior nodes
//! carry unknowns. Matrices are assembled with a 3×3 Gauss rule per element,
//! which is exact for every polynomial integrand that appears here, and box
//! functionals (indicator loads, local means) are integrated exactly by
//! clipping each box against the elements.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::{Error, Result};

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }

    fn clip(&self, other: &Rect) -> Option<Rect> {
        let r = Rect {
            x0: self.x0.max(other.x0),
            x1: self.x1.min(other.x1),
            y0: self.y0.max(other.y0),
            y1: self.y1.min(other.y1),
        };
        (r.x0 < r.x1 && r.y0 < r.y1).then_some(r)
    }
}

/// Uniform mesh of the unit square with `n` elements per side.
#[derive(Clone, Copy, Debug)]
pub struct UnitSquareMesh {
    n: usize,
}

impl UnitSquareMesh {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!(
                "mesh needs at least 2 elements per side, got {n}"
            )));
        }
        Ok(Self { n })
    }

    pub fn elements_per_side(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Number of interior (unknown-carrying) nodes.
    pub fn num_interior(&self) -> usize {
        (self.n - 1) * (self.n - 1)
    }

    /// Linear index of grid node `(ix, iy)`, `None` on the boundary.
    /// Interior nodes are numbered x-fastest.
    pub fn interior_index(&self, ix: usize, iy: usize) -> Option<usize> {
        if ix == 0 || iy == 0 || ix >= self.n || iy >= self.n {
            None
        } else {
            Some((iy - 1) * (self.n - 1) + (ix - 1))
        }
    }

    pub fn node_coords(&self, idx: usize) -> (f64, f64) {
        let m = self.n - 1;
        let ix = idx % m + 1;
        let iy = idx / m + 1;
        (ix as f64 * self.h(), iy as f64 * self.h())
    }
}

/// 3×3 tensor Gauss rule on the reference square `[0,1]²`; weights sum to 1.
fn gauss3x3() -> [(f64, f64, f64); 9] {
    let c = (0.6f64).sqrt() / 2.0;
    let pts = [(0.5 - c, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + c, 5.0 / 18.0)];
    let mut out = [(0.0, 0.0, 0.0); 9];
    let mut k = 0;
    for &(s, ws) in &pts {
        for &(t, wt) in &pts {
            out[k] = (s, t, ws * wt);
            k += 1;
        }
    }
    out
}

/// Local Q1 shapes on the reference square, corner order
/// `(0,0), (1,0), (1,1), (0,1)`.
fn shapes(s: f64, t: f64) -> [f64; 4] {
    [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t]
}

/// Reference-coordinate gradients `(∂_s, ∂_t)` of the Q1 shapes.
fn shape_grads(s: f64, t: f64) -> [(f64, f64); 4] {
    [
        (-(1.0 - t), -(1.0 - s)),
        (1.0 - t, -s),
        (t, s),
        (-t, 1.0 - s),
    ]
}

/// Local corner offsets matching the shape order.
const CORNERS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];
const CORNER_OF_SHAPE: [usize; 4] = [0, 1, 3, 2];

fn assemble<F>(mesh: &UnitSquareMesh, mut local: F) -> CsMat<f64>
where
    F: FnMut(f64, f64, f64) -> DMatrix<f64>,
{
    let n = mesh.n;
    let h = mesh.h();
    let dim = mesh.num_interior();
    let mut tri = TriMat::new((dim, dim));
    for ey in 0..n {
        for ex in 0..n {
            let (x0, y0) = (ex as f64 * h, ey as f64 * h);
            let loc = local(x0, y0, h);
            for (a, &ca) in CORNER_OF_SHAPE.iter().enumerate() {
                let (dxa, dya) = CORNERS[ca];
                let Some(ia) = mesh.interior_index(ex + dxa, ey + dya) else {
                    continue;
                };
                for (b, &cb) in CORNER_OF_SHAPE.iter().enumerate() {
                    let (dxb, dyb) = CORNERS[cb];
                    let Some(ib) = mesh.interior_index(ex + dxb, ey + dyb) else {
                        continue;
                    };
                    let v = loc[(a, b)];
                    if v != 0.0 {
                        tri.add_triplet(ia, ib, v);
                    }
                }
            }
        }
    }
    tri.to_csr()
}

/// `∫ κ ∇φ_a · ∇φ_b` with a spatially varying coefficient.
pub fn diffusion<K>(mesh: &UnitSquareMesh, kappa: K) -> CsMat<f64>
where
    K: Fn(f64, f64) -> f64,
{
    assemble(mesh, |x0, y0, h| {
        let mut loc = DMatrix::zeros(4, 4);
        for (s, t, w) in gauss3x3() {
            let k = kappa(x0 + s * h, y0 + t * h);
            let g = shape_grads(s, t);
            for a in 0..4 {
                for b in 0..4 {
                    // physical gradients carry 1/h each; the h² element area cancels one pair
                    loc[(a, b)] += w * k * (g[a].0 * g[b].0 + g[a].1 * g[b].1);
                }
            }
        }
        loc
    })
}

/// `∫ ∇φ_a · ∇φ_b` (unit diffusion).
pub fn stiffness(mesh: &UnitSquareMesh) -> CsMat<f64> {
    diffusion(mesh, |_, _| 1.0)
}

/// Consistent mass matrix `∫ φ_a φ_b`.
pub fn mass(mesh: &UnitSquareMesh) -> CsMat<f64> {
    assemble(mesh, |_, _, h| {
        let mut loc = DMatrix::zeros(4, 4);
        for (s, t, w) in gauss3x3() {
            let sh = shapes(s, t);
            for a in 0..4 {
                for b in 0..4 {
                    loc[(a, b)] += w * h * h * sh[a] * sh[b];
                }
            }
        }
        loc
    })
}

/// `∫ φ_a (c · ∇φ_b)` for a velocity field `c`.
pub fn advection<C>(mesh: &UnitSquareMesh, c: C) -> CsMat<f64>
where
    C: Fn(f64, f64) -> (f64, f64),
{
    assemble(mesh, |x0, y0, h| {
        let mut loc = DMatrix::zeros(4, 4);
        for (s, t, w) in gauss3x3() {
            let (cx, cy) = c(x0 + s * h, y0 + t * h);
            let sh = shapes(s, t);
            let g = shape_grads(s, t);
            for a in 0..4 {
                for b in 0..4 {
                    loc[(a, b)] += w * h * sh[a] * (cx * g[b].0 + cy * g[b].1);
                }
            }
        }
        loc
    })
}

/// The divergence-free rotation field `c₀(x, y) = (y − 1/2, 1/2 − x)`.
pub fn rotation_field(x: f64, y: f64) -> (f64, f64) {
    (y - 0.5, 0.5 - x)
}

/// Exact integral of the local 1D hat pair over `[a, b] ⊆ [x0, x0 + h]`,
/// returned as `(∫ left shape, ∫ right shape)`.
fn hat_integrals(x0: f64, h: f64, a: f64, b: f64) -> (f64, f64) {
    // right shape (x − x0)/h has antiderivative (x − x0)²/(2h)
    let r = |x: f64| (x - x0) * (x - x0) / (2.0 * h);
    let right = r(b) - r(a);
    (b - a - right, right)
}

/// Exact load vector `∫ f φ_a` for `f = Σ_k c_k · 1_{R_k}`.
pub fn box_load(mesh: &UnitSquareMesh, boxes: &[(Rect, f64)]) -> DVector<f64> {
    let n = mesh.n;
    let h = mesh.h();
    let mut out = DVector::zeros(mesh.num_interior());
    for ey in 0..n {
        for ex in 0..n {
            let (x0, y0) = (ex as f64 * h, ey as f64 * h);
            let element = Rect::new(x0, x0 + h, y0, y0 + h);
            for (rect, coeff) in boxes {
                let Some(clip) = element.clip(rect) else {
                    continue;
                };
                let (lx, rx) = hat_integrals(x0, h, clip.x0, clip.x1);
                let (ly, ry) = hat_integrals(y0, h, clip.y0, clip.y1);
                for &(dx, dy) in &CORNERS {
                    if let Some(i) = mesh.interior_index(ex + dx, ey + dy) {
                        let ix = if dx == 0 { lx } else { rx };
                        let iy = if dy == 0 { ly } else { ry };
                        out[i] += coeff * ix * iy;
                    }
                }
            }
        }
    }
    out
}

/// Local-mean functional `φ_a ↦ (1/|R|) ∫_R φ_a`.
pub fn box_mean(mesh: &UnitSquareMesh, rect: Rect) -> Result<DVector<f64>> {
    let area = rect.area();
    if area <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "mean functional needs a rectangle with positive area, got {rect:?}"
        )));
    }
    Ok(box_load(mesh, &[(rect, 1.0)]) / area)
}

/// Squared nodal weights for the metric `diag(w(x_i)²)` with `w = w0` on the
/// rectangle and `w = 1` elsewhere.
pub fn nodal_weights_sq(mesh: &UnitSquareMesh, rect: Rect, w0: f64) -> DVector<f64> {
    DVector::from_fn(mesh.num_interior(), |i, _| {
        let (x, y) = mesh.node_coords(i);
        if rect.contains(x, y) {
            w0 * w0
        } else {
            1.0
        }
    })
}
