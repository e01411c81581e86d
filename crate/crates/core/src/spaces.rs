//! Finite element spaces on the active mesh: Raviart-Thomas (continuous and
//! broken normal traces), discontinuous modal `P_m`, and facet `P_k`.

use std::ops::Range;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::CutMesh;
use crate::linalg::{SparseMatrix, TripletBuilder};
use crate::mesh::{BackgroundMesh, Point2};
use crate::poly::{exponents, monomial_directional, monomials, poly_dim};
use crate::quadrature::{gauss_legendre, reference_triangle_rule, segment_rule};

/// Largest degree of the modal DG basis.
pub const MAX_DG_DEGREE: usize = 8;

/// Unnormalized Legendre polynomial `P_m(x)` on `[-1, 1]`.
pub fn legendre(m: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if m == 0 {
        return 1.0;
    }
    for j in 1..m {
        let p2 = ((2 * j + 1) as f64 * x * p1 - j as f64 * p0) / (j + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of `P_MAX_DG_DEGREE` on the reference triangle in graded order,
/// so the first `poly_dim(m)` functions span `P_m`.
#[derive(Debug)]
pub struct MasterBasis {
    pub degree: usize,
    /// Row `i`: monomial coefficients of basis function `i`.
    pub coeffs: Vec<Vec<f64>>,
}

/// Dense bivariate polynomial in graded monomial storage.
#[derive(Clone)]
struct Poly(Vec<f64>);

impl Poly {
    fn constant(deg: usize, c: f64) -> Self {
        let mut v = vec![0.0; poly_dim(deg)];
        v[0] = c;
        Poly(v)
    }

    /// `c0 + cx x + cy y`.
    fn linear(deg: usize, c0: f64, cx: f64, cy: f64) -> Self {
        let mut p = Self::constant(deg, c0);
        p.0[crate::poly::mono_index(1, 0)] = cx;
        p.0[crate::poly::mono_index(0, 1)] = cy;
        p
    }

    fn mul(&self, o: &Poly, deg: usize) -> Poly {
        let ex = exponents(deg);
        let mut out = vec![0.0; poly_dim(deg)];
        for (i, &(a, b)) in ex.iter().enumerate() {
            if self.0[i] == 0.0 {
                continue;
            }
            for (j, &(c, d)) in ex.iter().enumerate() {
                if o.0[j] != 0.0 && a + b + c + d <= deg {
                    out[crate::poly::mono_index(a + c, b + d)] += self.0[i] * o.0[j];
                }
            }
        }
        Poly(out)
    }

    fn axpby(&self, a: f64, o: &Poly, b: f64) -> Poly {
        Poly(self.0.iter().zip(&o.0).map(|(x, y)| a * x + b * y).collect())
    }
}

/// Orthogonal Dubiner basis collapsed onto the reference triangle, one row per
/// `(p, q)` in graded order and normalized with exact monomial integrals.
fn build_master(degree: usize) -> MasterBasis {
    let n = degree;
    // homogenized Legendre Q_p(u, t) = t^p P_p(u / t), u = 2x + y - 1, t = 1 - y
    let u = Poly::linear(n, -1.0, 2.0, 1.0);
    let t = Poly::linear(n, 1.0, 0.0, -1.0);
    let t2 = t.mul(&t, n);
    let mut q = vec![Poly::constant(n, 1.0), u.clone()];
    for j in 1..n {
        let next = u.mul(&q[j], n).axpby((2 * j + 1) as f64, &t2.mul(&q[j - 1], n), -(j as f64));
        q.push(next.axpby(1.0 / (j + 1) as f64, &Poly::constant(n, 0.0), 0.0));
    }
    // Jacobi P_m^{(alpha, 0)}(s) with s = 2y - 1
    let s = Poly::linear(n, -1.0, 0.0, 2.0);
    let jacobi = |alpha: f64, m: usize| -> Poly {
        let mut p0 = Poly::constant(n, 1.0);
        if m == 0 {
            return p0;
        }
        let mut p1 = s.axpby((alpha + 2.0) / 2.0, &Poly::constant(n, alpha / 2.0), 1.0);
        for j in 1..m {
            let jf = j as f64;
            let c = 2.0 * (jf + 1.0) * (jf + alpha + 1.0) * (2.0 * jf + alpha);
            let a1 = (2.0 * jf + alpha + 1.0) * (2.0 * jf + alpha + 2.0) * (2.0 * jf + alpha);
            let a0 = (2.0 * jf + alpha + 1.0) * alpha * alpha;
            let a2 = 2.0 * jf * (jf + alpha) * (2.0 * jf + alpha + 2.0);
            let lin = s.axpby(a1, &Poly::constant(n, a0), 1.0);
            let p2 = lin.mul(&p1, n).axpby(1.0 / c, &p0, -a2 / c);
            p0 = p1;
            p1 = p2;
        }
        p1
    };
    let rule = reference_triangle_rule(2 * n);
    let norm2 = |c: &[f64]| -> f64 { rule.iter().map(|(p, w)| w * dot(c, &monomials(n, p[0], p[1])).powi(2)).sum() };
    let mut coeffs = Vec::with_capacity(poly_dim(n));
    for d in 0..=n {
        for qq in 0..=d {
            let p = d - qq;
            let psi = q[p].mul(&jacobi((2 * p + 1) as f64, qq), n);
            let nrm = norm2(&psi.0).sqrt();
            coeffs.push(psi.0.iter().map(|v| v / nrm).collect());
        }
    }
    MasterBasis { degree, coeffs }
}

pub fn master_basis() -> &'static MasterBasis {
    static MASTER: OnceLock<MasterBasis> = OnceLock::new();
    MASTER.get_or_init(|| build_master(MAX_DG_DEGREE))
}

/// Values of the first `poly_dim(m)` reference DG functions.
pub fn master_values(m: usize, x: f64, y: f64) -> Vec<f64> {
    let mb = master_basis();
    let mono = monomials(m, x, y);
    let nm = mono.len();
    (0..nm).map(|i| dot(&mb.coeffs[i][..nm], &mono)).collect()
}

/// `(m . grad)^order` of the first `poly_dim(deg)` reference DG functions.
pub fn master_directional(deg: usize, x: f64, y: f64, dir: [f64; 2], order: usize) -> Vec<f64> {
    let mb = master_basis();
    let mono = monomial_directional(deg, x, y, dir, order);
    let nm = mono.len();
    (0..nm).map(|i| dot(&mb.coeffs[i][..nm], &mono)).collect()
}

/// Affine map `x = origin + J xhat` of an element onto the reference triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementMap {
    pub origin: Point2,
    pub jac: [[f64; 2]; 2],
    pub inv: [[f64; 2]; 2],
    pub det: f64,
}

impl ElementMap {
    pub fn new(tri: &[Point2; 3]) -> Self {
        let e1 = tri[1] - tri[0];
        let e2 = tri[2] - tri[0];
        let jac = [[e1.x, e2.x], [e1.y, e2.y]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv = [[jac[1][1] / det, -jac[0][1] / det], [-jac[1][0] / det, jac[0][0] / det]];
        Self {
            origin: tri[0],
            jac,
            inv,
            det,
        }
    }

    pub fn of(mesh: &BackgroundMesh, e: usize) -> Self {
        Self::new(&mesh.element_points(e))
    }

    pub fn to_reference(&self, p: Point2) -> [f64; 2] {
        let d = p - self.origin;
        [
            self.inv[0][0] * d.x + self.inv[0][1] * d.y,
            self.inv[1][0] * d.x + self.inv[1][1] * d.y,
        ]
    }

    pub fn to_physical(&self, r: [f64; 2]) -> Point2 {
        self.origin
            + Point2::new(
                self.jac[0][0] * r[0] + self.jac[0][1] * r[1],
                self.jac[1][0] * r[0] + self.jac[1][1] * r[1],
            )
    }

    /// Reference direction `J^{-1} v`.
    pub fn pull_direction(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.inv[0][0] * v[0] + self.inv[0][1] * v[1],
            self.inv[1][0] * v[0] + self.inv[1][1] * v[1],
        ]
    }

    /// Physical gradient `J^{-T} g`.
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv[0][0] * g[0] + self.inv[1][0] * g[1],
            self.inv[0][1] * g[0] + self.inv[1][1] * g[1],
        ]
    }

    /// Contravariant Piola value `J v / det`.
    pub fn piola(&self, v: [f64; 2]) -> [f64; 2] {
        [
            (self.jac[0][0] * v[0] + self.jac[0][1] * v[1]) / self.det,
            (self.jac[1][0] * v[0] + self.jac[1][1] * v[1]) / self.det,
        ]
    }
}

/// Reference `RT_k` element: nodal basis dual to edge normal moments against
/// `P_m(2s - 1)` and interior moments against the orthonormal `[P_{k-1}]^2`.
#[derive(Debug)]
pub struct ReferenceRT {
    pub k: usize,
    /// Per basis function, monomial coefficients (degree `k + 1`) of both components.
    pub basis: Vec<[Vec<f64>; 2]>,
    /// Per basis function, monomial coefficients (degree `k`) of the divergence.
    pub div: Vec<Vec<f64>>,
}

const REF_VERTS: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
/// Outward normals of the reference edges scaled by the edge length.
const REF_SCALED_NORMALS: [[f64; 2]; 3] = [[0.0, -1.0], [1.0, 1.0], [-1.0, 0.0]];

impl ReferenceRT {
    pub fn local_dim(k: usize) -> usize {
        (k + 1) * (k + 3)
    }

    pub fn new(k: usize) -> Self {
        let nc = poly_dim(k + 1);
        let ndim = Self::local_dim(k);
        let ex = exponents(k + 1);
        let index = |a: usize, b: usize| crate::poly::mono_index(a, b);
        let mut span: Vec<[Vec<f64>; 2]> = Vec::with_capacity(ndim);
        for l in 0..poly_dim(k) {
            let mut e = vec![0.0; nc];
            e[l] = 1.0;
            span.push([e.clone(), vec![0.0; nc]]);
            span.push([vec![0.0; nc], e]);
        }
        for b in 0..=k {
            let a = k - b;
            let mut cx = vec![0.0; nc];
            let mut cy = vec![0.0; nc];
            cx[index(a + 1, b)] = 1.0;
            cy[index(a, b + 1)] = 1.0;
            span.push([cx, cy]);
        }
        assert_eq!(span.len(), ndim);

        let dofs = Self::dof_functionals(k);
        let mut m = DMatrix::<f64>::zeros(ndim, ndim);
        for (i, dof) in dofs.iter().enumerate() {
            for (j, s) in span.iter().enumerate() {
                m[(i, j)] = dot(&dof[0], &s[0]) + dot(&dof[1], &s[1]);
            }
        }
        let c = m.try_inverse().expect("RT degrees of freedom are unisolvent");
        let mut basis = Vec::with_capacity(ndim);
        for j in 0..ndim {
            let mut bx = vec![0.0; nc];
            let mut by = vec![0.0; nc];
            for (l, s) in span.iter().enumerate() {
                let w = c[(l, j)];
                bx.iter_mut().zip(&s[0]).for_each(|(o, v)| *o += w * v);
                by.iter_mut().zip(&s[1]).for_each(|(o, v)| *o += w * v);
            }
            basis.push([bx, by]);
        }
        let div = basis
            .iter()
            .map(|[bx, by]| {
                let mut d = vec![0.0; poly_dim(k)];
                for (l, &(a, b)) in ex.iter().enumerate() {
                    if a > 0 {
                        d[index(a - 1, b)] += a as f64 * bx[l];
                    }
                    if b > 0 {
                        d[index(a, b - 1)] += b as f64 * by[l];
                    }
                }
                d
            })
            .collect();
        Self { k, basis, div }
    }

    /// Each functional as the pair of linear forms acting on the monomial
    /// coefficients of the two components.
    fn dof_functionals(k: usize) -> Vec<[Vec<f64>; 2]> {
        let nc = poly_dim(k + 1);
        let (gx, gw) = gauss_legendre(k + 3);
        let mut out = Vec::new();
        for i in 0..3 {
            let (a, b) = (REF_VERTS[i], REF_VERTS[(i + 1) % 3]);
            let nu = REF_SCALED_NORMALS[i];
            for m in 0..=k {
                let mut fx = vec![0.0; nc];
                let mut fy = vec![0.0; nc];
                for (s, w) in gx.iter().zip(&gw) {
                    let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                    let mono = monomials(k + 1, p[0], p[1]);
                    let q = w * legendre(m, 2.0 * s - 1.0);
                    for l in 0..nc {
                        fx[l] += q * nu[0] * mono[l];
                        fy[l] += q * nu[1] * mono[l];
                    }
                }
                out.push([fx, fy]);
            }
        }
        if k > 0 {
            let rule = reference_triangle_rule(2 * k + 1);
            for l in 0..poly_dim(k - 1) {
                for c in 0..2 {
                    let mut f = [vec![0.0; nc], vec![0.0; nc]];
                    for (p, w) in &rule {
                        let q = master_values(k - 1, p[0], p[1])[l];
                        let mono = monomials(k + 1, p[0], p[1]);
                        for j in 0..nc {
                            f[c][j] += w * q * mono[j];
                        }
                    }
                    out.push(f);
                }
            }
        }
        out
    }

    /// Reference values and divergences at `xhat`.
    pub fn eval(&self, x: f64, y: f64) -> Vec<([f64; 2], f64)> {
        let mono = monomials(self.k + 1, x, y);
        let nd = poly_dim(self.k);
        self.basis
            .iter()
            .zip(&self.div)
            .map(|([bx, by], d)| ([dot(bx, &mono), dot(by, &mono)], dot(d, &mono[..nd])))
            .collect()
    }

    /// `(m . grad)^order` of both components at `xhat`.
    pub fn directional(&self, x: f64, y: f64, dir: [f64; 2], order: usize) -> Vec<[f64; 2]> {
        let mono = monomial_directional(self.k + 1, x, y, dir, order);
        self.basis.iter().map(|[bx, by]| [dot(bx, &mono), dot(by, &mono)]).collect()
    }
}

fn reference_rt(k: usize) -> Arc<ReferenceRT> {
    static CACHE: OnceLock<Vec<Arc<ReferenceRT>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| (0..=5).map(|k| Arc::new(ReferenceRT::new(k))).collect());
    cache.get(k).cloned().unwrap_or_else(|| Arc::new(ReferenceRT::new(k)))
}

/// `RT_k` on the active elements. Facet moments are taken with respect to the
/// global facet normal (lower to higher element id) and the parametrization
/// from the lower to the higher vertex id.
#[derive(Debug, Clone)]
pub struct RTSpace {
    pub k: usize,
    pub broken: bool,
    pub reference: Arc<ReferenceRT>,
    pub elements: Vec<usize>,
    pub element_slot: Vec<Option<usize>>,
    /// Facets touching at least one active element.
    pub facets: Vec<usize>,
    pub facet_slot: Vec<Option<usize>>,
    dofs: Vec<Vec<usize>>,
    signs: Vec<Vec<f64>>,
    pub ndofs: usize,
}

fn active_facets(mesh: &BackgroundMesh, active: &[bool]) -> Vec<usize> {
    (0..mesh.num_facets())
        .filter(|&f| {
            let fc = &mesh.facets[f];
            active[fc.left] || fc.right.is_some_and(|r| active[r])
        })
        .collect()
}

impl RTSpace {
    pub fn new(mesh: &BackgroundMesh, active: &[bool], k: usize, broken: bool) -> Self {
        let reference = reference_rt(k);
        let elements: Vec<usize> = (0..mesh.num_elements()).filter(|&e| active[e]).collect();
        let mut element_slot = vec![None; mesh.num_elements()];
        for (s, &e) in elements.iter().enumerate() {
            element_slot[e] = Some(s);
        }
        let facets = active_facets(mesh, active);
        let mut facet_slot = vec![None; mesh.num_facets()];
        for (s, &f) in facets.iter().enumerate() {
            facet_slot[f] = Some(s);
        }
        let ldim = ReferenceRT::local_dim(k);
        let nint = k * (k + 1);
        let mut dofs = Vec::with_capacity(elements.len());
        let mut signs = Vec::with_capacity(elements.len());
        let interior_base = if broken { 0 } else { (k + 1) * facets.len() };
        for (s, &e) in elements.iter().enumerate() {
            let mut d = Vec::with_capacity(ldim);
            let mut sg = Vec::with_capacity(ldim);
            for i in 0..3 {
                let f = mesh.element_facets[e][i];
                let fc = &mesh.facets[f];
                let side = if fc.left == e { 1.0 } else { -1.0 };
                let same_dir = mesh.elements[e][i] == fc.vertices[0];
                for m in 0..=k {
                    let flip = if same_dir || m % 2 == 0 { 1.0 } else { -1.0 };
                    sg.push(side * flip);
                    d.push(if broken {
                        s * ldim + i * (k + 1) + m
                    } else {
                        facet_slot[f].unwrap() * (k + 1) + m
                    });
                }
            }
            for j in 0..nint {
                sg.push(1.0);
                d.push(if broken {
                    s * ldim + 3 * (k + 1) + j
                } else {
                    interior_base + s * nint + j
                });
            }
            dofs.push(d);
            signs.push(sg);
        }
        let ndofs = if broken {
            elements.len() * ldim
        } else {
            interior_base + elements.len() * nint
        };
        Self {
            k,
            broken,
            reference,
            elements,
            element_slot,
            facets,
            facet_slot,
            dofs,
            signs,
            ndofs,
        }
    }

    pub fn local_dim(&self) -> usize {
        ReferenceRT::local_dim(self.k)
    }

    pub fn slot(&self, e: usize) -> Result<usize> {
        self.element_slot.get(e).copied().flatten().ok_or(Error::InactiveElement(e))
    }

    /// Global DOF indices and orientation signs of element `e`.
    pub fn element_dofs(&self, e: usize) -> Result<(&[usize], &[f64])> {
        let s = self.slot(e)?;
        Ok((&self.dofs[s], &self.signs[s]))
    }

    /// Physical basis values and divergences (orientation signs included) at `p`.
    pub fn eval_basis(&self, mesh: &BackgroundMesh, e: usize, p: Point2) -> Result<Vec<([f64; 2], f64)>> {
        let map = ElementMap::of(mesh, e);
        let (_, sg) = self.element_dofs(e)?;
        Ok(self.eval_with(&map, sg, p))
    }

    pub(crate) fn eval_with(&self, map: &ElementMap, sg: &[f64], p: Point2) -> Vec<([f64; 2], f64)> {
        let r = map.to_reference(p);
        self.reference
            .eval(r[0], r[1])
            .into_iter()
            .zip(sg)
            .map(|((v, d), s)| {
                let pv = map.piola(v);
                ([s * pv[0], s * pv[1]], s * d / map.det)
            })
            .collect()
    }

    /// `(n . grad)^order` of both components of every local basis function at `p`.
    pub fn directional(&self, mesh: &BackgroundMesh, e: usize, p: Point2, n: [f64; 2], order: usize) -> Result<Vec<[f64; 2]>> {
        let map = ElementMap::of(mesh, e);
        let (_, sg) = self.element_dofs(e)?;
        let r = map.to_reference(p);
        let m = map.pull_direction(n);
        Ok(self
            .reference
            .directional(r[0], r[1], m, order)
            .into_iter()
            .zip(sg)
            .map(|(v, s)| {
                let pv = map.piola(v);
                [s * pv[0], s * pv[1]]
            })
            .collect())
    }

    /// Evaluates the field with coefficients `c` on element `e`.
    pub fn eval_field(&self, mesh: &BackgroundMesh, c: &[f64], e: usize, p: Point2) -> Result<([f64; 2], f64)> {
        let (d, _) = self.element_dofs(e)?;
        let vals = self.eval_basis(mesh, e, p)?;
        let mut out = ([0.0, 0.0], 0.0);
        for (j, (v, dv)) in vals.iter().enumerate() {
            let cj = c[d[j]];
            out.0[0] += cj * v[0];
            out.0[1] += cj * v[1];
            out.1 += cj * dv;
        }
        Ok(out)
    }
}

/// Discontinuous modal `P_m` on a subset of elements.
#[derive(Debug, Clone)]
pub struct DGSpace {
    pub degree: usize,
    pub elements: Vec<usize>,
    pub element_slot: Vec<Option<usize>>,
    pub ndofs: usize,
}

impl DGSpace {
    pub fn new(mesh: &BackgroundMesh, support: &[bool], degree: usize) -> Result<Self> {
        if degree > MAX_DG_DEGREE {
            return Err(Error::InvalidArgument(format!("DG degree {degree} above {MAX_DG_DEGREE}")));
        }
        let elements: Vec<usize> = (0..mesh.num_elements()).filter(|&e| support[e]).collect();
        let mut element_slot = vec![None; mesh.num_elements()];
        for (s, &e) in elements.iter().enumerate() {
            element_slot[e] = Some(s);
        }
        let ndofs = elements.len() * poly_dim(degree);
        Ok(Self {
            degree,
            elements,
            element_slot,
            ndofs,
        })
    }

    pub fn local_dim(&self) -> usize {
        poly_dim(self.degree)
    }

    pub fn dofs(&self, e: usize) -> Result<Range<usize>> {
        let s = self.element_slot.get(e).copied().flatten().ok_or(Error::InactiveElement(e))?;
        let n = self.local_dim();
        Ok(s * n..(s + 1) * n)
    }

    pub fn contains(&self, e: usize) -> bool {
        self.element_slot.get(e).is_some_and(Option::is_some)
    }

    /// Basis values at `p`; points outside `e` use the polynomial extension.
    pub fn eval(&self, mesh: &BackgroundMesh, e: usize, p: Point2) -> Vec<f64> {
        let map = ElementMap::of(mesh, e);
        eval_dg_with(&map, self.degree, p)
    }

    pub fn grad(&self, mesh: &BackgroundMesh, e: usize, p: Point2) -> Vec<[f64; 2]> {
        let map = ElementMap::of(mesh, e);
        grad_dg_with(&map, self.degree, p)
    }

    /// `(n . grad)^order` of the basis at `p`.
    pub fn directional(&self, mesh: &BackgroundMesh, e: usize, p: Point2, n: [f64; 2], order: usize) -> Vec<f64> {
        let map = ElementMap::of(mesh, e);
        let r = map.to_reference(p);
        let s = 1.0 / map.det.sqrt();
        master_directional(self.degree, r[0], r[1], map.pull_direction(n), order)
            .into_iter()
            .map(|v| v * s)
            .collect()
    }

    pub fn eval_field(&self, mesh: &BackgroundMesh, c: &[f64], e: usize, p: Point2) -> Result<f64> {
        let r = self.dofs(e)?;
        Ok(dot(&c[r], &self.eval(mesh, e, p)))
    }
}

pub(crate) fn eval_dg_with(map: &ElementMap, degree: usize, p: Point2) -> Vec<f64> {
    let r = map.to_reference(p);
    let s = 1.0 / map.det.sqrt();
    master_values(degree, r[0], r[1]).into_iter().map(|v| v * s).collect()
}

pub(crate) fn grad_dg_with(map: &ElementMap, degree: usize, p: Point2) -> Vec<[f64; 2]> {
    let r = map.to_reference(p);
    let s = 1.0 / map.det.sqrt();
    let gx = master_directional(degree, r[0], r[1], [1.0, 0.0], 1);
    let gy = master_directional(degree, r[0], r[1], [0.0, 1.0], 1);
    gx.into_iter()
        .zip(gy)
        .map(|(a, b)| {
            let g = map.push_gradient([a, b]);
            [g[0] * s, g[1] * s]
        })
        .collect()
}

/// `P_k` on every interior facet between two active elements, basis `P_m(2t - 1)`
/// with `t` running from the lower to the higher vertex id.
#[derive(Debug, Clone)]
pub struct FacetSpace {
    pub k: usize,
    pub facets: Vec<usize>,
    pub facet_slot: Vec<Option<usize>>,
    pub ndofs: usize,
}

impl FacetSpace {
    pub fn new(mesh: &BackgroundMesh, active: &[bool], k: usize) -> Self {
        let facets: Vec<usize> = (0..mesh.num_facets())
            .filter(|&f| {
                let fc = &mesh.facets[f];
                active[fc.left] && fc.right.is_some_and(|r| active[r])
            })
            .collect();
        let mut facet_slot = vec![None; mesh.num_facets()];
        for (s, &f) in facets.iter().enumerate() {
            facet_slot[f] = Some(s);
        }
        let ndofs = facets.len() * (k + 1);
        Self {
            k,
            facets,
            facet_slot,
            ndofs,
        }
    }

    pub fn dofs(&self, f: usize) -> Option<Range<usize>> {
        self.facet_slot[f].map(|s| s * (self.k + 1)..(s + 1) * (self.k + 1))
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        (0..=self.k).map(|m| legendre(m, 2.0 * t - 1.0)).collect()
    }
}

/// Integration domain selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Physical domain `Omega` (cut rules).
    Omega,
    /// Full active elements.
    OmegaT,
}

/// Raviart-Thomas interpolant: facet moments and interior moments of the Piola pullback.
pub fn interpolate_rt(mesh: &BackgroundMesh, space: &RTSpace, u: impl Fn(Point2) -> [f64; 2]) -> Vec<f64> {
    let k = space.k;
    let mut c = vec![0.0; space.ndofs];
    let (gx, gw) = gauss_legendre(k + 8);
    // facet moments, per facet in global orientation
    let mut facet_moments = vec![Vec::new(); mesh.num_facets()];
    for &f in &space.facets {
        let [a, b] = mesh.facet_points(f);
        let n = mesh.facet_normal(f);
        let len = mesh.facet_length(f);
        facet_moments[f] = (0..=k)
            .map(|m| {
                gx.iter()
                    .zip(&gw)
                    .map(|(&t, &w)| {
                        let v = u(a + (b - a) * t);
                        w * len * (v[0] * n[0] + v[1] * n[1]) * legendre(m, 2.0 * t - 1.0)
                    })
                    .sum()
            })
            .collect();
    }
    let rule = reference_triangle_rule(2 * k + 12);
    for &e in &space.elements {
        let (d, _) = space.element_dofs(e).unwrap();
        for i in 0..3 {
            let f = mesh.element_facets[e][i];
            for m in 0..=k {
                c[d[i * (k + 1) + m]] = facet_moments[f][m];
            }
        }
        if k == 0 {
            continue;
        }
        let map = ElementMap::of(mesh, e);
        let nint = poly_dim(k - 1);
        let mut mom = vec![0.0; 2 * nint];
        for (p, w) in &rule {
            let x = map.to_physical(*p);
            let v = u(x);
            // pullback det J^{-1} u
            let pv = map.pull_direction(v);
            let q = master_values(k - 1, p[0], p[1]);
            for l in 0..nint {
                mom[2 * l] += w * map.det * pv[0] * q[l];
                mom[2 * l + 1] += w * map.det * pv[1] * q[l];
            }
        }
        for j in 0..2 * nint {
            c[d[3 * (k + 1) + j]] = mom[j];
        }
    }
    c
}

/// Elementwise L2 projection onto `space` with respect to `measure`.
pub fn project_l2(
    mesh: &BackgroundMesh,
    cut: &CutMesh,
    space: &DGSpace,
    f: impl Fn(Point2) -> f64,
    measure: Measure,
    degree: usize,
) -> Result<Vec<f64>> {
    let n = space.local_dim();
    let mut c = vec![0.0; space.ndofs];
    for &e in &space.elements {
        let map = ElementMap::of(mesh, e);
        let rule = match measure {
            Measure::OmegaT => crate::geometry::element_rule(mesh, e, degree + 2 * space.degree),
            Measure::Omega => cut.volume_rule(e, degree + 2 * space.degree)?,
        };
        let mut g = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let v = eval_dg_with(&map, space.degree, p);
            let fv = f(p);
            for i in 0..n {
                rhs[i] += w * fv * v[i];
                for j in 0..n {
                    g[(i, j)] += w * v[i] * v[j];
                }
            }
        }
        let sol = g.cholesky().ok_or(Error::SingularGram(e))?.solve(&rhs);
        let r = space.dofs(e)?;
        c[r].copy_from_slice(sol.as_slice());
    }
    Ok(c)
}

/// Local divergence block `D[i][j] = (div phi_j, psi_i)_T` for the `P_k` modal basis.
pub fn local_div(space: &RTSpace, map: &ElementMap, signs: &[f64]) -> Vec<Vec<f64>> {
    let k = space.k;
    let nq = poly_dim(k);
    let rule = reference_triangle_rule(2 * k);
    let mut d = vec![vec![0.0; space.local_dim()]; nq];
    for (p, w) in &rule {
        let q = master_values(k, p[0], p[1]);
        let mono = monomials(k, p[0], p[1]);
        for (j, dj) in space.reference.div.iter().enumerate() {
            let dv = dot(dj, &mono);
            for i in 0..nq {
                d[i][j] += w * dv * q[i];
            }
        }
    }
    let s = 1.0 / map.det.sqrt();
    for row in d.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= signs[j] * s;
        }
    }
    d
}

/// Exact divergence map RT coefficients -> `P_k` coefficients.
pub fn div_map(mesh: &BackgroundMesh, space: &RTSpace, q: &DGSpace) -> Result<SparseMatrix> {
    if q.degree != space.k {
        return Err(Error::InvalidArgument("divergence space degree must equal k".into()));
    }
    let mut t = TripletBuilder::new(q.ndofs, space.ndofs);
    for &e in &space.elements {
        let (d, sg) = space.element_dofs(e)?;
        let local = local_div(space, &ElementMap::of(mesh, e), sg);
        let rows: Vec<usize> = q.dofs(e)?.collect();
        t.add_block(&rows, d, &local);
    }
    Ok(t.build())
}

/// Normal-trace jump moments `(⟦u.n⟧, P_m)_F` for every active interior facet.
pub fn normal_jump_moments(mesh: &BackgroundMesh, space: &RTSpace, c: &[f64]) -> Result<Vec<f64>> {
    let k = space.k;
    let mut out = Vec::new();
    for &f in &space.facets {
        let Some(r) = mesh.facets[f].right else { continue };
        let l = mesh.facets[f].left;
        if space.slot(l).is_err() || space.slot(r).is_err() {
            continue;
        }
        let [a, b] = mesh.facet_points(f);
        let n = mesh.facet_normal(f);
        let rule = segment_rule(a, b, 2 * k + 2);
        for m in 0..=k {
            let mut s = 0.0;
            for (&p, &w) in rule.points.iter().zip(&rule.weights) {
                let t = (p - a).norm() / (b - a).norm();
                let (ul, _) = space.eval_field(mesh, c, l, p)?;
                let (ur, _) = space.eval_field(mesh, c, r, p)?;
                s += w * ((ul[0] - ur[0]) * n[0] + (ul[1] - ur[1]) * n[1]) * legendre(m, 2.0 * t - 1.0);
            }
            out.push(s);
        }
    }
    Ok(out)
}
