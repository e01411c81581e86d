//! Bilinear and linear forms on the active mesh.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{element_rule, CutMesh, DomainDescription};
use crate::linalg::{SparseMatrix, TripletBuilder};
use crate::mesh::{BackgroundMesh, Point2};
use crate::patches::PatchDecomposition;
use crate::quadrature::{segment_rule, triangle_rule, Rule};
use crate::spaces::{eval_dg_with, grad_dg_with, local_div, DGSpace, ElementMap, FacetSpace, Measure, RTSpace};

/// Local access to a finite element space, scalar or vector valued.
pub trait LocalBasis {
    fn components(&self) -> usize;
    /// Highest polynomial degree of the local shape functions.
    fn poly_degree(&self) -> usize;
    fn ndofs(&self) -> usize;
    fn dofs_of(&self, e: usize) -> Result<Vec<usize>>;
    /// Shape function values, entry `j * components + c`.
    fn values_at(&self, mesh: &BackgroundMesh, e: usize, p: Point2) -> Result<Vec<f64>>;
    /// `(n . grad)^order` of the shape functions, same layout as `values_at`.
    fn derivatives_at(&self, mesh: &BackgroundMesh, e: usize, p: Point2, n: [f64; 2], order: usize) -> Result<Vec<f64>>;
}

impl LocalBasis for RTSpace {
    fn components(&self) -> usize {
        2
    }
    fn poly_degree(&self) -> usize {
        self.k + 1
    }
    fn ndofs(&self) -> usize {
        self.ndofs
    }
    fn dofs_of(&self, e: usize) -> Result<Vec<usize>> {
        Ok(self.element_dofs(e)?.0.to_vec())
    }
    fn values_at(&self, mesh: &BackgroundMesh, e: usize, p: Point2) -> Result<Vec<f64>> {
        Ok(self.eval_basis(mesh, e, p)?.into_iter().flat_map(|(v, _)| v).collect())
    }
    fn derivatives_at(&self, mesh: &BackgroundMesh, e: usize, p: Point2, n: [f64; 2], order: usize) -> Result<Vec<f64>> {
        Ok(self.directional(mesh, e, p, n, order)?.into_iter().flatten().collect())
    }
}

impl LocalBasis for DGSpace {
    fn components(&self) -> usize {
        1
    }
    fn poly_degree(&self) -> usize {
        self.degree
    }
    fn ndofs(&self) -> usize {
        self.ndofs
    }
    fn dofs_of(&self, e: usize) -> Result<Vec<usize>> {
        Ok(self.dofs(e)?.collect())
    }
    fn values_at(&self, mesh: &BackgroundMesh, e: usize, p: Point2) -> Result<Vec<f64>> {
        self.dofs(e)?;
        Ok(self.eval(mesh, e, p))
    }
    fn derivatives_at(&self, mesh: &BackgroundMesh, e: usize, p: Point2, n: [f64; 2], order: usize) -> Result<Vec<f64>> {
        self.dofs(e)?;
        Ok(self.directional(mesh, e, p, n, order))
    }
}

fn volume_rule(mesh: &BackgroundMesh, cut: &CutMesh, e: usize, degree: usize, measure: Measure) -> Result<Rule> {
    match measure {
        Measure::OmegaT => Ok(element_rule(mesh, e, degree)),
        Measure::Omega => cut.volume_rule(e, degree),
    }
}

fn local_mass(basis: &impl LocalBasis, mesh: &BackgroundMesh, e: usize, rule: &Rule) -> Result<Vec<Vec<f64>>> {
    let nc = basis.components();
    let mut m: Vec<Vec<f64>> = Vec::new();
    for (&p, &w) in rule.points.iter().zip(&rule.weights) {
        let v = basis.values_at(mesh, e, p)?;
        let n = v.len() / nc;
        if m.is_empty() {
            m = vec![vec![0.0; n]; n];
        }
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..nc).map(|c| v[i * nc + c] * v[j * nc + c]).sum();
                m[i][j] += w * s;
            }
        }
    }
    for i in 0..m.len() {
        for j in 0..i {
            m[i][j] = m[j][i];
        }
    }
    Ok(m)
}

/// `(u, v)` over `Omega` or the full active elements.
pub fn assemble_mass(mesh: &BackgroundMesh, cut: &CutMesh, space: &RTSpace, measure: Measure) -> Result<SparseMatrix> {
    assemble_mass_on(mesh, cut, space, &space.elements, measure)
}

/// Mass matrix of any local basis restricted to the listed elements.
pub fn assemble_mass_on(
    mesh: &BackgroundMesh,
    cut: &CutMesh,
    basis: &impl LocalBasis,
    elements: &[usize],
    measure: Measure,
) -> Result<SparseMatrix> {
    let n = basis.ndofs();
    let mut t = TripletBuilder::new(n, n);
    let degree = 2 * basis.poly_degree();
    for &e in elements {
        let rule = volume_rule(mesh, cut, e, degree, measure)?;
        let dofs = basis.dofs_of(e)?;
        let m = local_mass(basis, mesh, e, &rule)?;
        t.add_block(&dofs, &dofs, &m);
    }
    Ok(t.build())
}

/// `(div v, q)` over the chosen measure. For the full active mesh the
/// orthonormal `P_k` basis makes this the divergence map itself.
pub fn assemble_div_constraint(
    mesh: &BackgroundMesh,
    cut: &CutMesh,
    space: &RTSpace,
    qspace: &DGSpace,
    measure: Measure,
) -> Result<SparseMatrix> {
    if qspace.degree != space.k {
        return Err(Error::InvalidArgument("pressure degree must equal the RT degree".into()));
    }
    let mut t = TripletBuilder::new(qspace.ndofs, space.ndofs);
    for &e in &space.elements {
        let (dofs, sg) = space.element_dofs(e)?;
        let map = ElementMap::of(mesh, e);
        let d = local_div(space, &map, sg);
        let rows: Vec<usize> = qspace.dofs(e)?.collect();
        let block = match measure {
            Measure::OmegaT => d,
            Measure::Omega => {
                let rule = cut.volume_rule(e, 2 * space.k)?;
                let g = local_mass(qspace, mesh, e, &rule)?;
                let nq = g.len();
                (0..nq)
                    .map(|i| (0..dofs.len()).map(|j| (0..nq).map(|l| g[i][l] * d[l][j]).sum()).collect())
                    .collect()
            }
        };
        t.add_block(&rows, dofs, &block);
    }
    Ok(t.build())
}

/// Ghost penalty flavours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GpVariant {
    /// `sum_l h_F^{2l+1} (jump d_n^l u, jump d_n^l v)_F`.
    #[default]
    NormalJump,
    /// `(u1 - u2, v1 - v2)` over both neighbors with polynomial extension.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpConfig {
    pub variant: GpVariant,
    pub facets: Vec<usize>,
    /// Highest normal derivative order; the stabilized polynomial degree.
    pub degree: usize,
    /// Extra factor `h_F^{h_power}` per facet.
    pub h_power: i32,
}

impl GpConfig {
    pub fn new(variant: GpVariant, facets: Vec<usize>, degree: usize) -> Self {
        Self {
            variant,
            facets,
            degree,
            h_power: 0,
        }
    }

    pub fn with_h_power(mut self, h_power: i32) -> Self {
        self.h_power = h_power;
        self
    }
}

/// Local ghost penalty block of facet `f`, over the concatenated DOFs of both neighbors.
pub fn gp_facet_block(mesh: &BackgroundMesh, basis: &impl LocalBasis, f: usize, config: &GpConfig) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let (l, r) = mesh.facet_patch(f)?;
    let nc = basis.components();
    let mut dofs = basis.dofs_of(l)?;
    let nl = dofs.len();
    dofs.extend(basis.dofs_of(r)?);
    let n = dofs.len();
    let mut m = vec![vec![0.0; n]; n];
    let hf = mesh.facet_length(f);
    let scale = hf.powi(config.h_power);
    let mut accumulate = |w: f64, vl: &[f64], vr: &[f64]| {
        // jump = [vl, -vr]
        let jump = |i: usize, c: usize| if i < nl { vl[i * nc + c] } else { -vr[(i - nl) * nc + c] };
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..nc).map(|c| jump(i, c) * jump(j, c)).sum();
                m[i][j] += w * s;
            }
        }
    };
    match config.variant {
        GpVariant::NormalJump => {
            let [a, b] = mesh.facet_points(f);
            let nrm = mesh.facet_normal(f);
            let rule = segment_rule(a, b, 2 * basis.poly_degree());
            for ell in 0..=config.degree {
                let hw = scale * hf.powi(2 * ell as i32 + 1);
                for (&p, &w) in rule.points.iter().zip(&rule.weights) {
                    let vl = basis.derivatives_at(mesh, l, p, nrm, ell)?;
                    let vr = basis.derivatives_at(mesh, r, p, nrm, ell)?;
                    accumulate(w * hw, &vl, &vr);
                }
            }
        }
        GpVariant::Direct => {
            for e in [l, r] {
                let rule = triangle_rule(&mesh.element_points(e), 2 * basis.poly_degree());
                for (&p, &w) in rule.points.iter().zip(&rule.weights) {
                    let vl = basis.values_at(mesh, l, p)?;
                    let vr = basis.values_at(mesh, r, p)?;
                    accumulate(w * scale, &vl, &vr);
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            m[i][j] = m[j][i];
        }
    }
    Ok((dofs, m))
}

/// Ghost penalty over `config.facets`.
pub fn assemble_gp(mesh: &BackgroundMesh, basis: &impl LocalBasis, config: &GpConfig) -> Result<SparseMatrix> {
    let n = basis.ndofs();
    let mut t = TripletBuilder::new(n, n);
    for &f in &config.facets {
        let (dofs, m) = gp_facet_block(mesh, basis, f, config)?;
        t.add_block(&dofs, &dofs, &m);
    }
    Ok(t.build())
}

/// Discrete extension `f_h` of the source onto the active mesh.
#[derive(Debug, Clone)]
pub struct ExtendedSource {
    pub space: DGSpace,
    pub coeffs: Vec<f64>,
    pub gamma_f: f64,
    pub kf: usize,
}

impl ExtendedSource {
    pub fn eval(&self, mesh: &BackgroundMesh, e: usize, p: Point2) -> Result<f64> {
        self.space.eval_field(mesh, &self.coeffs, e, p)
    }

    /// `f_h` given as the restriction of a field defined on the whole active mesh.
    pub fn from_projection(mesh: &BackgroundMesh, cut: &CutMesh, active: &[bool], f: impl Fn(Point2) -> f64, kf: usize) -> Result<Self> {
        let space = DGSpace::new(mesh, active, kf)?;
        let coeffs = crate::spaces::project_l2(mesh, cut, &space, f, Measure::OmegaT, kf + 6)?;
        Ok(Self {
            space,
            coeffs,
            gamma_f: 0.0,
            kf,
        })
    }
}

/// Patchwise solves of `(f_h, q)_Omega + gamma_f j_h(f_h, q) = (f, q)_Omega`.
pub fn compute_extended_source(
    mesh: &BackgroundMesh,
    cut: &CutMesh,
    patches: &PatchDecomposition,
    f: impl Fn(Point2) -> f64,
    kf: usize,
    gamma_f: f64,
    variant: GpVariant,
) -> Result<ExtendedSource> {
    if gamma_f <= 0.0 {
        return Err(Error::InvalidArgument("gamma_f must be positive".into()));
    }
    let active: Vec<bool> = (0..mesh.num_elements()).map(|e| cut.is_active(e)).collect();
    let space = DGSpace::new(mesh, &active, kf)?;
    let nloc = space.local_dim();
    let mut coeffs = vec![0.0; space.ndofs];
    for patch in &patches.patches {
        let np = patch.elements.len() * nloc;
        let mut global = Vec::with_capacity(np);
        for &e in &patch.elements {
            global.extend(space.dofs(e)?);
        }
        let slot = |g: usize| global.iter().position(|&x| x == g).expect("dof inside patch");
        let mut a = DMatrix::<f64>::zeros(np, np);
        let mut rhs = DVector::<f64>::zeros(np);
        for (pe, &e) in patch.elements.iter().enumerate() {
            let rule = cut.volume_rule(e, 2 * kf + 6)?;
            let map = ElementMap::of(mesh, e);
            for (&p, &w) in rule.points.iter().zip(&rule.weights) {
                let v = eval_dg_with(&map, kf, p);
                let fv = f(p);
                for i in 0..nloc {
                    rhs[pe * nloc + i] += w * fv * v[i];
                    for j in 0..nloc {
                        a[(pe * nloc + i, pe * nloc + j)] += w * v[i] * v[j];
                    }
                }
            }
        }
        let config = GpConfig::new(variant, patch.facets.clone(), kf);
        for &fct in &patch.facets {
            let (dofs, m) = gp_facet_block(mesh, &space, fct, &config)?;
            let loc: Vec<usize> = dofs.iter().map(|&d| slot(d)).collect();
            for (i, &li) in loc.iter().enumerate() {
                for (j, &lj) in loc.iter().enumerate() {
                    a[(li, lj)] += gamma_f * m[i][j];
                }
            }
        }
        let sol = a.cholesky().ok_or(Error::UnstablePatch(patch.root))?.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::UnstablePatch(patch.root));
        }
        for (i, &g) in global.iter().enumerate() {
            coeffs[g] = sol[i];
        }
    }
    Ok(ExtendedSource {
        space,
        coeffs,
        gamma_f,
        kf,
    })
}

/// `(v . n, p_D)_Gamma`.
pub fn assemble_boundary_rhs(mesh: &BackgroundMesh, cut: &CutMesh, space: &RTSpace, p_d: impl Fn(Point2) -> f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; space.ndofs];
    for &e in &space.elements {
        if !cut.is_cut(e) {
            continue;
        }
        let rule = cut.interface_rule(e, 2 * space.k + 6)?;
        let (dofs, _) = space.element_dofs(e)?;
        for ((&p, &w), n) in rule.points.iter().zip(&rule.weights).zip(&rule.normals) {
            let pd = p_d(p);
            for (j, (v, _)) in space.eval_basis(mesh, e, p)?.iter().enumerate() {
                out[dofs[j]] += w * pd * (v[0] * n[0] + v[1] * n[1]);
            }
        }
    }
    Ok(out)
}

/// `(g, v)_Omega`.
pub fn assemble_force_rhs(mesh: &BackgroundMesh, cut: &CutMesh, space: &RTSpace, g: impl Fn(Point2) -> [f64; 2]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; space.ndofs];
    for &e in &space.elements {
        let rule = cut.volume_rule(e, 2 * space.k + 6)?;
        let (dofs, _) = space.element_dofs(e)?;
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let gv = g(p);
            for (j, (v, _)) in space.eval_basis(mesh, e, p)?.iter().enumerate() {
                out[dofs[j]] += w * (gv[0] * v[0] + gv[1] * v[1]);
            }
        }
    }
    Ok(out)
}

/// `(f, q)` over the chosen measure for a DG test space.
pub fn assemble_scalar_rhs(
    mesh: &BackgroundMesh,
    cut: &CutMesh,
    space: &DGSpace,
    f: impl Fn(usize, Point2) -> f64,
    measure: Measure,
    extra_degree: usize,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; space.ndofs];
    for &e in &space.elements {
        let rule = volume_rule(mesh, cut, e, space.degree + extra_degree, measure)?;
        let map = ElementMap::of(mesh, e);
        let r = space.dofs(e)?;
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let fv = f(e, p);
            for (o, v) in out[r.clone()].iter_mut().zip(eval_dg_with(&map, space.degree, p)) {
                *o += w * fv * v;
            }
        }
    }
    Ok(out)
}

/// Which facets carry the Neumann multiplier penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeumannFacets {
    /// Interior facets intersected by the interface.
    #[default]
    Cut,
    /// All interior facets between two cut elements.
    CutElements,
}

pub fn neumann_facets(mesh: &BackgroundMesh, cut: &CutMesh, which: NeumannFacets) -> Vec<usize> {
    (0..mesh.num_facets())
        .filter(|&f| {
            let Ok((l, r)) = mesh.facet_patch(f) else { return false };
            cut.is_cut(l) && cut.is_cut(r) && (which == NeumannFacets::CutElements || cut.facet_cut[f])
        })
        .collect()
}

/// `gamma_F h^{-1} j_F` over `facets` plus `gamma_T h (grad l . n_h, grad m . n_h)_T`
/// over the full cut elements.
pub fn assemble_neumann_gp(
    mesh: &BackgroundMesh,
    space: &DGSpace,
    domain: &DomainDescription,
    facets: &[usize],
    variant: GpVariant,
    gamma_f: f64,
    gamma_t: f64,
) -> Result<SparseMatrix> {
    let config = GpConfig::new(variant, facets.to_vec(), space.degree).with_h_power(-1);
    let jf = assemble_gp(mesh, space, &config)?;
    let n = space.ndofs;
    let mut t = TripletBuilder::new(n, n);
    t.add_matrix(&jf, 0, 0, gamma_f);
    for &e in &space.elements {
        let h = mesh.element_diameters[e];
        let map = ElementMap::of(mesh, e);
        let rule = element_rule(mesh, e, 2 * space.degree + 4);
        let nl = space.local_dim();
        let mut m = vec![vec![0.0; nl]; nl];
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let nh = domain.quasi_normal(p);
            let g: Vec<f64> = grad_dg_with(&map, space.degree, p)
                .iter()
                .map(|g| g[0] * nh[0] + g[1] * nh[1])
                .collect();
            for i in 0..nl {
                for j in 0..nl {
                    m[i][j] += gamma_t * h * w * g[i] * g[j];
                }
            }
        }
        let dofs: Vec<usize> = space.dofs(e)?.collect();
        t.add_block(&dofs, &dofs, &m);
    }
    Ok(t.build())
}

/// `(v . n, mu)_Gamma` with rows in the multiplier space.
pub fn assemble_interface_coupling(mesh: &BackgroundMesh, cut: &CutMesh, space: &RTSpace, mult: &DGSpace) -> Result<SparseMatrix> {
    let mut t = TripletBuilder::new(mult.ndofs, space.ndofs);
    for &e in &mult.elements {
        let rule = cut.interface_rule(e, 2 * space.k + 4)?;
        let (dofs, _) = space.element_dofs(e)?;
        let rows: Vec<usize> = mult.dofs(e)?.collect();
        let map = ElementMap::of(mesh, e);
        let mut m = vec![vec![0.0; dofs.len()]; rows.len()];
        for ((&p, &w), n) in rule.points.iter().zip(&rule.weights).zip(&rule.normals) {
            let mu = eval_dg_with(&map, mult.degree, p);
            let v = space.eval_basis(mesh, e, p)?;
            for i in 0..rows.len() {
                for (j, (vj, _)) in v.iter().enumerate() {
                    m[i][j] += w * mu[i] * (vj[0] * n[0] + vj[1] * n[1]);
                }
            }
        }
        t.add_block(&rows, dofs, &m);
    }
    Ok(t.build())
}

/// `(g_N, mu)_Gamma`.
pub fn assemble_interface_rhs(
    mesh: &BackgroundMesh,
    cut: &CutMesh,
    mult: &DGSpace,
    g: impl Fn(Point2, [f64; 2]) -> f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; mult.ndofs];
    for &e in &mult.elements {
        let rule = cut.interface_rule(e, 2 * mult.degree + 6)?;
        let map = ElementMap::of(mesh, e);
        let r = mult.dofs(e)?;
        for ((&p, &w), n) in rule.points.iter().zip(&rule.weights).zip(&rule.normals) {
            let gv = g(p, *n);
            for (o, v) in out[r.clone()].iter_mut().zip(eval_dg_with(&map, mult.degree, p)) {
                *o += w * gv * v;
            }
        }
    }
    Ok(out)
}

/// `-(jump(v . n), q_F)` over the facets of the facet space.
pub fn assemble_normal_coupling(mesh: &BackgroundMesh, space: &RTSpace, facet_space: &FacetSpace) -> Result<SparseMatrix> {
    let k = space.k;
    let mut t = TripletBuilder::new(facet_space.ndofs, space.ndofs);
    for &f in &facet_space.facets {
        let (l, r) = mesh.facet_patch(f)?;
        let [a, b] = mesh.facet_points(f);
        let n = mesh.facet_normal(f);
        let rule = segment_rule(a, b, 2 * k + 2);
        let rows: Vec<usize> = facet_space.dofs(f).expect("facet in space").collect();
        for (e, sign) in [(l, -1.0), (r, 1.0)] {
            let (dofs, _) = space.element_dofs(e)?;
            let i_loc = mesh.local_facet(e, f).expect("facet of element");
            // only the shape functions of this facet have a nonzero normal trace
            let cols: Vec<usize> = (0..=k).map(|m| i_loc * (k + 1) + m).collect();
            let mut m = vec![vec![0.0; cols.len()]; rows.len()];
            for (&p, &w) in rule.points.iter().zip(&rule.weights) {
                let tpar = (p - a).norm() / (b - a).norm();
                let q = facet_space.eval(tpar);
                let v = space.eval_basis(mesh, e, p)?;
                for i in 0..rows.len() {
                    for (jj, &j) in cols.iter().enumerate() {
                        m[i][jj] += sign * w * q[i] * (v[j].0[0] * n[0] + v[j].0[1] * n[1]);
                    }
                }
            }
            let gcols: Vec<usize> = cols.iter().map(|&j| dofs[j]).collect();
            t.add_block(&rows, &gcols, &m);
        }
    }
    Ok(t.build())
}

/// `(1, q)_{Omega^T}` for every DG function: the mean constraint row.
pub fn mean_row(mesh: &BackgroundMesh, space: &DGSpace) -> Vec<f64> {
    let mut out = vec![0.0; space.ndofs];
    for &e in &space.elements {
        // orthonormal basis: only the constant has nonzero mean
        let r = space.dofs(e).expect("support element");
        out[r.start] = mesh.element_area(e).sqrt();
    }
    out
}
