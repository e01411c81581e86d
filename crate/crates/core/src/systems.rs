//! The discrete mixed formulations and their solvers.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::assembly::{
    assemble_boundary_rhs, assemble_div_constraint, assemble_force_rhs, assemble_gp, assemble_interface_coupling, assemble_interface_rhs,
    assemble_mass, assemble_mass_on, assemble_neumann_gp, assemble_normal_coupling, assemble_scalar_rhs, compute_extended_source, mean_row,
    neumann_facets, ExtendedSource, GpConfig, GpVariant, NeumannFacets,
};
use crate::error::{Error, Result};
use crate::geometry::{CutMesh, DomainDescription, HalfPlane};
use crate::linalg::{count_nnz, factor_solve, residual_floor, Attribution, CholFactor, SparseMatrix, TripletBuilder};
use crate::mesh::{BackgroundMesh, Point2};
use crate::patches::{build_patches, PatchConfig, PatchDecomposition};
use crate::spaces::{div_map, DGSpace, FacetSpace, Measure, RTSpace};

/// Relative residual every saddle-point solve must reach.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Allowed multiple of the rounding floor when that floor exceeds `RESIDUAL_TOL`.
pub const FLOOR_FACTOR: f64 = 10.0;

/// Iterative refinement steps of the condensed hybrid solve.
const REFINEMENT_STEPS: usize = 4;

pub type ScalarField = Arc<dyn Fn(Point2) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(Point2) -> [f64; 2] + Send + Sync>;
/// Boundary datum depending on the point and the outward normal.
pub type FluxField = Arc<dyn Fn(Point2, [f64; 2]) -> f64 + Send + Sync>;

/// Data of `u = grad p + g`, `div u = -f`.
#[derive(Clone)]
pub struct ProblemData {
    pub f: ScalarField,
    pub p_d: ScalarField,
    pub g_n: FluxField,
    pub force: Option<VectorField>,
}

impl std::fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemData")
            .field("force", &self.force.is_some())
            .finish_non_exhaustive()
    }
}

impl ProblemData {
    pub fn new(f: ScalarField, p_d: ScalarField, g_n: FluxField) -> Self {
        Self { f, p_d, g_n, force: None }
    }

    /// `p = sin x1`, `u = (cos x1, 0)`, `f = sin x1`.
    pub fn sine() -> Self {
        Self::new(
            Arc::new(|p: Point2| p.x.sin()),
            Arc::new(|p: Point2| p.x.sin()),
            Arc::new(|p: Point2, n: [f64; 2]| p.x.cos() * n[0]),
        )
    }

    pub fn zero() -> Self {
        Self::new(Arc::new(|_| 0.0), Arc::new(|_| 0.0), Arc::new(|_, _| 0.0))
    }
}

/// How the right-hand side of the conservation equation is formed on the active mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceMode {
    /// Ghost-penalty stabilized extension of degree `kf`.
    Extended { kf: usize, gamma_f: f64 },
    /// `f` itself evaluated on the full active elements.
    Exact,
}

impl Default for SourceMode {
    fn default() -> Self {
        Self::Extended {
            kf: usize::MAX,
            gamma_f: 1.0,
        }
    }
}

/// Mesh, geometry, patches and the `RT_k x P_k` pair on the active mesh.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: BackgroundMesh,
    pub domain: DomainDescription,
    pub cut: CutMesh,
    pub patches: PatchDecomposition,
    pub active: Vec<bool>,
    pub k: usize,
    pub rt: RTSpace,
    pub q: DGSpace,
    pub gp_variant: GpVariant,
}

impl Discretization {
    pub fn new(mesh: BackgroundMesh, domain: DomainDescription, k: usize) -> Result<Self> {
        Self::with_config(mesh, domain, k, PatchConfig::default(), GpVariant::default())
    }

    pub fn with_config(
        mesh: BackgroundMesh,
        domain: DomainDescription,
        k: usize,
        patch_config: PatchConfig,
        gp_variant: GpVariant,
    ) -> Result<Self> {
        let cut = CutMesh::build(&mesh, &domain)?;
        let patches = build_patches(&mesh, &cut.classes, patch_config)?;
        let active: Vec<bool> = (0..mesh.num_elements()).map(|e| cut.is_active(e)).collect();
        let rt = RTSpace::new(&mesh, &active, k, false);
        let q = DGSpace::new(&mesh, &active, k)?;
        Ok(Self {
            mesh,
            domain,
            cut,
            patches,
            active,
            k,
            rt,
            q,
            gp_variant,
        })
    }

    pub fn ndofs(&self) -> usize {
        self.rt.ndofs + self.q.ndofs
    }

    pub fn mass(&self, measure: Measure) -> Result<SparseMatrix> {
        assemble_mass(&self.mesh, &self.cut, &self.rt, measure)
    }

    /// Ghost penalty on the flux space, stabilizing all of `RT_k ⊂ [P_{k+1}]^2`.
    pub fn gp_flux(&self) -> Result<SparseMatrix> {
        assemble_gp(
            &self.mesh,
            &self.rt,
            &GpConfig::new(self.gp_variant, self.patches.gp_facets.clone(), self.k + 1),
        )
    }

    /// Ghost penalty on `P_k`.
    pub fn gp_scalar(&self) -> Result<SparseMatrix> {
        assemble_gp(
            &self.mesh,
            &self.q,
            &GpConfig::new(self.gp_variant, self.patches.gp_facets.clone(), self.k),
        )
    }

    pub fn div(&self, measure: Measure) -> Result<SparseMatrix> {
        assemble_div_constraint(&self.mesh, &self.cut, &self.rt, &self.q, measure)
    }

    /// `(v . n, p_D)_Gamma + (g, v)_Omega`.
    pub fn flux_rhs(&self, data: &ProblemData) -> Result<Vec<f64>> {
        let pd = data.p_d.clone();
        let mut r = assemble_boundary_rhs(&self.mesh, &self.cut, &self.rt, move |p| pd(p))?;
        if let Some(g) = &data.force {
            let g = g.clone();
            let fr = assemble_force_rhs(&self.mesh, &self.cut, &self.rt, move |p| g(p))?;
            r.iter_mut().zip(fr).for_each(|(a, b)| *a += b);
        }
        Ok(r)
    }

    /// Builds `f_h` for the chosen mode.
    pub fn source(&self, data: &ProblemData, mode: SourceMode) -> Result<ExtendedSource> {
        let f = data.f.clone();
        match mode {
            SourceMode::Extended { kf, gamma_f } => {
                let kf = if kf == usize::MAX { self.k } else { kf };
                compute_extended_source(&self.mesh, &self.cut, &self.patches, move |p| f(p), kf, gamma_f, self.gp_variant)
            }
            SourceMode::Exact => ExtendedSource::from_projection(&self.mesh, &self.cut, &self.active, move |p| f(p), self.k),
        }
    }

    /// `-(f_h, q)_{Omega^T}`.
    pub fn source_rhs(&self, fh: &ExtendedSource) -> Result<Vec<f64>> {
        let mut r = assemble_scalar_rhs(
            &self.mesh,
            &self.cut,
            &self.q,
            |e, p| fh.eval(&self.mesh, e, p).unwrap_or(0.0),
            Measure::OmegaT,
            fh.kf,
        )?;
        r.iter_mut().for_each(|v| *v = -*v);
        Ok(r)
    }

    /// `-(f, q)_Omega`.
    pub fn restricted_source_rhs(&self, data: &ProblemData) -> Result<Vec<f64>> {
        let f = data.f.clone();
        let mut r = assemble_scalar_rhs(&self.mesh, &self.cut, &self.q, move |_, p| f(p), Measure::Omega, self.k + 6)?;
        r.iter_mut().for_each(|v| *v = -*v);
        Ok(r)
    }

    /// Active elements that are cut or share a facet with a cut element.
    pub fn near_cut(&self) -> Vec<bool> {
        let mut near = vec![false; self.mesh.num_elements()];
        for e in 0..self.mesh.num_elements() {
            if self.cut.is_cut(e) {
                near[e] = true;
                for &f in &self.mesh.element_facets[e] {
                    if let Some(nb) = self.mesh.neighbor(e, f) {
                        near[nb] = true;
                    }
                }
            }
        }
        near
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Restricted,
    Main,
    Frachon,
    Hybrid,
    Neumann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemReport {
    pub method: Method,
    pub ndof: usize,
    pub nnz: usize,
    pub residual: f64,
    /// Rounding floor of `residual` for this matrix and solution.
    pub floor: f64,
}

#[derive(Debug, Clone)]
pub struct MixedSolution {
    /// Flux coefficients in the continuous `RT_k` numbering.
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub p_facet: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub report: SystemReport,
}

fn solve_checked(k: &SparseMatrix, rhs: &[f64], method: Method) -> Result<(Vec<f64>, SystemReport)> {
    let (x, rep) = factor_solve(k, rhs)?;
    let floor = residual_floor(k, &x, rhs);
    let tol = RESIDUAL_TOL.max(FLOOR_FACTOR * floor);
    if !(rep.residual <= tol) {
        return Err(Error::Residual {
            residual: rep.residual,
            tol,
        });
    }
    Ok((
        x,
        SystemReport {
            method,
            ndof: k.nrows,
            nnz: k.nnz(),
            residual: rep.residual,
            floor,
        },
    ))
}

fn saddle(a: &SparseMatrix, b: &SparseMatrix, c: Option<&SparseMatrix>) -> SparseMatrix {
    let bt = b.transpose();
    SparseMatrix::block(&[a.nrows, b.nrows], &[a.ncols, b.nrows], &[&[Some(a), Some(&bt)], &[Some(b), c]])
}

fn split(disc: &Discretization, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (x[..disc.rt.ndofs].to_vec(), x[disc.rt.ndofs..disc.rt.ndofs + disc.q.ndofs].to_vec())
}

/// Restricted method: all forms on the physical domain.
pub fn solve_restricted(disc: &Discretization, data: &ProblemData) -> Result<MixedSolution> {
    let a = disc.mass(Measure::Omega)?;
    let b = disc.div(Measure::Omega)?;
    let k = saddle(&a, &b, None);
    let mut rhs = disc.flux_rhs(data)?;
    rhs.extend(disc.restricted_source_rhs(data)?);
    let (x, report) = solve_checked(&k, &rhs, Method::Restricted)?;
    let (u, p) = split(disc, &x);
    Ok(MixedSolution {
        u,
        p,
        p_facet: None,
        lambda: None,
        report,
    })
}

/// System matrix of the main method.
pub fn main_matrix(disc: &Discretization, gamma_u: f64) -> Result<SparseMatrix> {
    let mut a = disc.mass(Measure::Omega)?;
    if gamma_u != 0.0 {
        a = a.add_scaled(&disc.gp_flux()?, gamma_u);
    }
    let b = disc.div(Measure::OmegaT)?;
    Ok(saddle(&a, &b, None))
}

/// Main method: `b_h` on the active mesh with the extended source.
pub fn solve_main(disc: &Discretization, data: &ProblemData, gamma_u: f64, source: &ExtendedSource) -> Result<MixedSolution> {
    let k = main_matrix(disc, gamma_u)?;
    let mut rhs = disc.flux_rhs(data)?;
    rhs.extend(disc.source_rhs(source)?);
    let (x, report) = solve_checked(&k, &rhs, Method::Main)?;
    let (u, p) = split(disc, &x);
    Ok(MixedSolution {
        u,
        p,
        p_facet: None,
        lambda: None,
        report,
    })
}

/// Divergence-stabilized variant: `(div u, q)_Omega + gamma_div j_h(div u, q)`.
pub fn solve_frachon(disc: &Discretization, data: &ProblemData, gamma_u: f64, gamma_div: f64) -> Result<MixedSolution> {
    if !(gamma_div > 0.0) {
        return Err(Error::InvalidArgument("gamma_div must be positive".into()));
    }
    let mut a = disc.mass(Measure::Omega)?;
    if gamma_u != 0.0 {
        a = a.add_scaled(&disc.gp_flux()?, gamma_u);
    }
    let d = div_map(&disc.mesh, &disc.rt, &disc.q)?;
    let b = disc.div(Measure::Omega)?.add_scaled(&disc.gp_scalar()?.matmul(&d), gamma_div);
    let k = saddle(&a, &b, None);
    let mut rhs = disc.flux_rhs(data)?;
    rhs.extend(disc.restricted_source_rhs(data)?);
    let (x, report) = solve_checked(&k, &rhs, Method::Frachon)?;
    let (u, p) = split(disc, &x);
    Ok(MixedSolution {
        u,
        p,
        p_facet: None,
        lambda: None,
        report,
    })
}

/// Hybridized main method (no flux ghost penalty), solved by static condensation
/// onto the facet multipliers. `eps_reg` adds `eps (u, v)_T` on cut elements.
pub fn solve_hybrid(disc: &Discretization, data: &ProblemData, source: &ExtendedSource, eps_reg: f64) -> Result<MixedSolution> {
    if eps_reg < 0.0 {
        return Err(Error::InvalidArgument("eps_reg must be nonnegative".into()));
    }
    let mesh = &disc.mesh;
    let broken = RTSpace::new(mesh, &disc.active, disc.k, true);
    let facets = FacetSpace::new(mesh, &disc.active, disc.k);
    let a = assemble_mass(mesh, &disc.cut, &broken, Measure::Omega)?;
    let cut_elems: Vec<usize> = broken.elements.iter().copied().filter(|&e| disc.cut.is_cut(e)).collect();
    let a = if eps_reg > 0.0 {
        a.add_scaled(&assemble_mass_on(mesh, &disc.cut, &broken, &cut_elems, Measure::OmegaT)?, eps_reg)
    } else {
        a
    };
    let bd = assemble_div_constraint(mesh, &disc.cut, &broken, &disc.q, Measure::OmegaT)?;
    let c = assemble_normal_coupling(mesh, &broken, &facets)?;
    let pd = data.p_d.clone();
    let mut ru = assemble_boundary_rhs(mesh, &disc.cut, &broken, move |p| pd(p))?;
    if let Some(g) = &data.force {
        let g = g.clone();
        let fr = assemble_force_rhs(mesh, &disc.cut, &broken, move |p| g(p))?;
        ru.iter_mut().zip(fr).for_each(|(x, y)| *x += y);
    }
    let rq = disc.source_rhs(source)?;

    let nu = broken.local_dim();
    let nq = disc.q.local_dim();
    let nloc = nu + nq;
    // coupling columns grouped by element
    let mut c_cols: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); broken.elements.len()];
    for (i, j, v) in c.triplets() {
        c_cols[j / nu].push((i, j % nu, v));
    }
    struct Local {
        udofs: Vec<usize>,
        qdofs: Vec<usize>,
        facet_rows: Vec<usize>,
        lu: nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        ct: DMatrix<f64>,
        kinv_ct: DMatrix<f64>,
    }
    let mut locals = Vec::with_capacity(broken.elements.len());
    let mut s = TripletBuilder::new(facets.ndofs, facets.ndofs);
    for (slot, &e) in broken.elements.iter().enumerate() {
        let (udofs, _) = broken.element_dofs(e)?;
        let udofs = udofs.to_vec();
        let qdofs: Vec<usize> = disc.q.dofs(e)?.collect();
        let mut kt = DMatrix::<f64>::zeros(nloc, nloc);
        for i in 0..nu {
            for j in 0..nu {
                kt[(i, j)] = a.get(udofs[i], udofs[j]);
            }
        }
        for i in 0..nq {
            for j in 0..nu {
                let v = bd.get(qdofs[i], udofs[j]);
                kt[(nu + i, j)] = v;
                kt[(j, nu + i)] = v;
            }
        }
        let sv = kt.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 1e-14 * smax) {
            return Err(Error::SingularLocalBlock(e));
        }
        let lu = kt.lu();
        let mut facet_rows: Vec<usize> = c_cols[slot].iter().map(|t| t.0).collect();
        facet_rows.sort_unstable();
        facet_rows.dedup();
        let mut ct = DMatrix::<f64>::zeros(nloc, facet_rows.len());
        for &(i, jl, v) in &c_cols[slot] {
            let col = facet_rows.binary_search(&i).expect("row present");
            ct[(jl, col)] += v;
        }
        let kinv_ct = lu.solve(&ct).ok_or(Error::SingularLocalBlock(e))?;
        let schur = ct.transpose() * &kinv_ct;
        let local: Vec<Vec<f64>> = (0..facet_rows.len())
            .map(|i| (0..facet_rows.len()).map(|j| schur[(i, j)]).collect())
            .collect();
        s.add_block(&facet_rows, &facet_rows, &local);
        locals.push(Local {
            udofs,
            qdofs,
            facet_rows,
            lu,
            ct,
            kinv_ct,
        });
    }
    let s = s.build();
    let chol = CholFactor::new(&s)?;

    // [A B^T C^T; B 0 0; C 0 0] (ub, p, lambda) = (r_u, r_q, r_f) by condensation
    let condensed = |r_u: &[f64], r_q: &[f64], r_f: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut g: Vec<f64> = r_f.iter().map(|v| -v).collect();
        let mut kinv_r = Vec::with_capacity(locals.len());
        for loc in &locals {
            let r = DVector::from_iterator(nloc, loc.udofs.iter().map(|&i| r_u[i]).chain(loc.qdofs.iter().map(|&i| r_q[i])));
            let kr = loc.lu.solve(&r).ok_or(Error::Factorization("local block".into()))?;
            let gl = loc.ct.transpose() * &kr;
            for (i, &fr) in loc.facet_rows.iter().enumerate() {
                g[fr] += gl[i];
            }
            kinv_r.push(kr);
        }
        let lambda = chol.solve(&g);
        let mut ub = vec![0.0; broken.ndofs];
        let mut p = vec![0.0; disc.q.ndofs];
        for (loc, kr) in locals.iter().zip(&kinv_r) {
            let lam = DVector::from_iterator(loc.facet_rows.len(), loc.facet_rows.iter().map(|&i| lambda[i]));
            let x = kr - &loc.kinv_ct * lam;
            for (i, &d) in loc.udofs.iter().enumerate() {
                ub[d] = x[i];
            }
            for (i, &d) in loc.qdofs.iter().enumerate() {
                p[d] = x[nu + i];
            }
        }
        Ok((ub, p, lambda))
    };
    // the condensed operator inherits the conditioning of the mass block on small cuts,
    // so refine against the hybridized residual
    let bdt = bd.transpose();
    let ctg = c.transpose();
    let hybrid_residual = |ub: &[f64], p: &[f64], lambda: &[f64]| {
        let au = a.mul_vec(ub);
        let bp = bdt.mul_vec(p);
        let cl = ctg.mul_vec(lambda);
        let r_u: Vec<f64> = (0..ub.len()).map(|i| ru[i] - au[i] - bp[i] - cl[i]).collect();
        let r_q: Vec<f64> = rq.iter().zip(bd.mul_vec(ub)).map(|(x, y)| x - y).collect();
        let r_f: Vec<f64> = c.mul_vec(ub).iter().map(|v| -v).collect();
        (r_u, r_q, r_f)
    };
    let size = |(r_u, r_q, r_f): &(Vec<f64>, Vec<f64>, Vec<f64>)| r_u.iter().chain(r_q).chain(r_f).map(|v| v * v).sum::<f64>().sqrt();
    let (mut ub, mut p, mut lambda) = condensed(&ru, &rq, &vec![0.0; facets.ndofs])?;
    let mut res = hybrid_residual(&ub, &p, &lambda);
    for _ in 0..REFINEMENT_STEPS {
        let (du, dp, dl) = condensed(&res.0, &res.1, &res.2)?;
        let add = |x: &[f64], d: &[f64]| -> Vec<f64> { x.iter().zip(d).map(|(a, b)| a + b).collect() };
        let cand = (add(&ub, &du), add(&p, &dp), add(&lambda, &dl));
        let cres = hybrid_residual(&cand.0, &cand.1, &cand.2);
        if !(size(&cres) < size(&res)) {
            break;
        }
        (ub, p, lambda) = cand;
        res = cres;
    }
    // gather into the continuous numbering; shared facet moments agree up to round-off
    let mut u = vec![0.0; disc.rt.ndofs];
    let mut count = vec![0.0; disc.rt.ndofs];
    for &e in &disc.rt.elements {
        let (d, _) = disc.rt.element_dofs(e)?;
        let (db, _) = broken.element_dofs(e)?;
        for (&gi, &bi) in d.iter().zip(db) {
            u[gi] += ub[bi];
            count[gi] += 1.0;
        }
    }
    u.iter_mut().zip(&count).for_each(|(v, c)| *v /= c);
    // residual of the unhybridized system with the regularization included
    let mut am = disc.mass(Measure::Omega)?;
    if eps_reg > 0.0 {
        am = am.add_scaled(&assemble_mass_on(mesh, &disc.cut, &disc.rt, &cut_elems, Measure::OmegaT)?, eps_reg);
    }
    let km = saddle(&am, &disc.div(Measure::OmegaT)?, None);
    let mut rhs = disc.flux_rhs(data)?;
    rhs.extend(rq);
    let x: Vec<f64> = u.iter().chain(&p).copied().collect();
    let residual = crate::linalg::residual_norm(&km, &x, &rhs);
    let floor = residual_floor(&km, &x, &rhs);
    let report = SystemReport {
        method: Method::Hybrid,
        ndof: facets.ndofs,
        nnz: s.nnz(),
        residual,
        floor,
    };
    Ok(MixedSolution {
        u,
        p,
        p_facet: Some(lambda),
        lambda: None,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannOptions {
    pub gamma_u: f64,
    pub gamma_facet: f64,
    pub gamma_volume: f64,
    pub facets: NeumannFacets,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        Self {
            gamma_u: 1.0,
            gamma_facet: 0.01,
            gamma_volume: 0.01,
            facets: NeumannFacets::Cut,
        }
    }
}

/// Flux boundary condition through a stabilized multiplier on the cut elements;
/// the pressure mean over the active mesh is fixed by one extra scalar unknown.
pub fn solve_neumann(disc: &Discretization, data: &ProblemData, source: &ExtendedSource, opts: NeumannOptions) -> Result<MixedSolution> {
    let mesh = &disc.mesh;
    let cut_mask: Vec<bool> = (0..mesh.num_elements()).map(|e| disc.cut.is_cut(e)).collect();
    let mult = DGSpace::new(mesh, &cut_mask, disc.k)?;
    let mut a = disc.mass(Measure::Omega)?;
    if opts.gamma_u != 0.0 {
        a = a.add_scaled(&disc.gp_flux()?, opts.gamma_u);
    }
    let b = disc.div(Measure::OmegaT)?;
    let c = assemble_interface_coupling(mesh, &disc.cut, &disc.rt, &mult)?;
    let facets = neumann_facets(mesh, &disc.cut, opts.facets);
    let jg = assemble_neumann_gp(
        mesh,
        &mult,
        &disc.domain,
        &facets,
        disc.gp_variant,
        opts.gamma_facet,
        opts.gamma_volume,
    )?;
    let m = mean_row(mesh, &disc.q);
    let (nu, nq, nl) = (disc.rt.ndofs, disc.q.ndofs, mult.ndofs);
    let n = nu + nq + nl + 1;
    let mut t = TripletBuilder::new(n, n);
    t.add_matrix(&a, 0, 0, 1.0);
    t.add_matrix(&b, nu, 0, 1.0);
    t.add_matrix(&b.transpose(), 0, nu, 1.0);
    t.add_matrix(&c, nu + nq, 0, 1.0);
    t.add_matrix(&c.transpose(), 0, nu + nq, 1.0);
    t.add_matrix(&jg, nu + nq, nu + nq, -1.0);
    for (i, &v) in m.iter().enumerate() {
        if v != 0.0 {
            t.push(nu + i, n - 1, v);
            t.push(n - 1, nu + i, v);
        }
    }
    let k = t.build();
    let mut rhs = vec![0.0; nu];
    if let Some(g) = &data.force {
        let g = g.clone();
        rhs = assemble_force_rhs(mesh, &disc.cut, &disc.rt, move |p| g(p))?;
    }
    rhs.extend(disc.source_rhs(source)?);
    let gn = data.g_n.clone();
    rhs.extend(assemble_interface_rhs(mesh, &disc.cut, &mult, move |p, nrm| gn(p, nrm))?);
    rhs.push(0.0);
    let (x, report) = solve_checked(&k, &rhs, Method::Neumann)?;
    let u = x[..nu].to_vec();
    let p = x[nu..nu + nq].to_vec();
    let lambda = x[nu + nq..nu + nq + nl].to_vec();
    Ok(MixedSolution {
        u,
        p,
        p_facet: None,
        lambda: Some(lambda),
        report,
    })
}

/// Ghost penalty placement variants of the sparsity comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Restricted method, no stabilization.
    V1,
    /// Flux ghost penalty.
    V2,
    /// Flux and divergence ghost penalties.
    V3,
    /// Flux ghost penalty and pressure stabilization.
    V4,
    /// Everything stabilized.
    V5,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::V1, Variant::V2, Variant::V3, Variant::V4, Variant::V5];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantWeights {
    pub gamma_u: f64,
    pub gamma_div: f64,
    pub gamma_p: f64,
}

impl Default for VariantWeights {
    fn default() -> Self {
        Self {
            gamma_u: 1.0,
            gamma_div: 1.0,
            gamma_p: 1.0,
        }
    }
}

/// Assembled blocks of one variant.
#[derive(Debug, Clone)]
pub struct VariantMatrixSet {
    pub variant: Variant,
    pub a: SparseMatrix,
    pub b: SparseMatrix,
    pub c: Option<SparseMatrix>,
}

impl VariantMatrixSet {
    pub fn system(&self) -> SparseMatrix {
        saddle(&self.a, &self.b, self.c.as_ref())
    }
}

pub fn build_variant_matrices(disc: &Discretization, variant: Variant, w: VariantWeights) -> Result<VariantMatrixSet> {
    let a0 = disc.mass(Measure::Omega)?;
    let a = match variant {
        Variant::V1 => a0,
        _ => a0.add_scaled(&disc.gp_flux()?, w.gamma_u),
    };
    let b = match variant {
        Variant::V1 => disc.div(Measure::Omega)?,
        Variant::V2 | Variant::V4 => disc.div(Measure::OmegaT)?,
        Variant::V3 | Variant::V5 => {
            let d = div_map(&disc.mesh, &disc.rt, &disc.q)?;
            disc.div(Measure::Omega)?.add_scaled(&disc.gp_scalar()?.matmul(&d), w.gamma_div)
        }
    };
    let c = match variant {
        Variant::V4 | Variant::V5 => Some(disc.gp_scalar()?.scaled(-w.gamma_p)),
        _ => None,
    };
    Ok(VariantMatrixSet { variant, a, b, c })
}

/// Periodic strip of unit cells: bottom squares inside, top squares cut by `y = 4/3`.
#[derive(Debug, Clone)]
pub struct StripFixture {
    pub disc: Discretization,
    /// Per system DOF: 1 if owned by the counted middle cell.
    pub weights: Vec<f64>,
    pub ndof_flux: usize,
    pub ndof_scalar: usize,
}

pub const STRIP_CELLS: usize = 5;

impl StripFixture {
    pub fn new(k: usize) -> Result<Self> {
        let n = STRIP_CELLS;
        let mesh = BackgroundMesh::build_rectangle(n, 2, Point2::new(0.0, 0.0), Point2::new(n as f64, 2.0), true)?;
        let domain = DomainDescription::level_set(
            HalfPlane {
                normal: [0.0, 1.0],
                offset: 4.0 / 3.0,
            },
            0,
        );
        let disc = Discretization::new(mesh, domain, k)?;
        let (lo, hi) = ((n / 2) as f64, (n / 2 + 1) as f64);
        let eps = 1e-9;
        // left vertical facets belong to the cell, right ones to the next cell
        let in_cell = |x: f64| x > lo - eps && x < hi - eps;
        let mesh = &disc.mesh;
        let mut weights = vec![0.0; disc.ndofs()];
        for &e in &disc.rt.elements {
            let [a, b, c] = mesh.element_points(e);
            let centroid_in = in_cell((a.x + b.x + c.x) / 3.0);
            let (dofs, _) = disc.rt.element_dofs(e)?;
            let k1 = disc.k + 1;
            for (j, &d) in dofs.iter().enumerate() {
                let owned = if j < 3 * k1 {
                    let f = mesh.element_facets[e][j / k1];
                    let [p, q] = mesh.facet_points(f);
                    in_cell(0.5 * (p.x + q.x))
                } else {
                    centroid_in
                };
                weights[d] = if owned { 1.0 } else { 0.0 };
            }
            if centroid_in {
                for d in disc.q.dofs(e)? {
                    weights[disc.rt.ndofs + d] = 1.0;
                }
            }
        }
        let ndof_flux = weights[..disc.rt.ndofs].iter().sum::<f64>() as usize;
        let ndof_scalar = weights[disc.rt.ndofs..].iter().sum::<f64>() as usize;
        Ok(Self {
            disc,
            weights,
            ndof_flux,
            ndof_scalar,
        })
    }

    /// Nonzeros charged to the middle cell, per counted DOF.
    pub fn nnz_per_dof(&self, variant: Variant, attribution: Attribution) -> Result<f64> {
        let m = build_variant_matrices(&self.disc, variant, VariantWeights::default())?.system();
        Ok(count_nnz(&m, &self.weights, attribution) / (self.ndof_flux + self.ndof_scalar) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexPolygon;
    use crate::spaces::interpolate_rt;

    fn ring(n: usize, level: usize, k: usize) -> Discretization {
        let mesh = BackgroundMesh::build_structured(n).unwrap().refined(level);
        Discretization::new(mesh, DomainDescription::ring(0), k).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn max_abs(a: &[f64]) -> f64 {
        a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn main_divergence_identity() {
        let disc = ring(10, 0, 1);
        let data = ProblemData::sine();
        let fh = disc.source(&data, SourceMode::default()).unwrap();
        let d = div_map(&disc.mesh, &disc.rt, &disc.q).unwrap();
        for gamma_u in [0.0, 1.0] {
            let s = solve_main(&disc, &data, gamma_u, &fh).unwrap();
            let div = d.mul_vec(&s.u);
            let defect: Vec<f64> = div.iter().zip(&fh.coeffs).map(|(a, b)| a + b).collect();
            assert!(max_abs(&defect) < 1e-9, "{}", max_abs(&defect));
            assert!(s.report.residual <= RESIDUAL_TOL);
        }
        let zero = ProblemData::new(Arc::new(|_| 0.0), Arc::new(|p: Point2| p.x.sin()), Arc::new(|_, _| 0.0));
        let fh = disc.source(&zero, SourceMode::default()).unwrap();
        let s = solve_main(&disc, &zero, 1.0, &fh).unwrap();
        assert!(max_abs(&d.mul_vec(&s.u)) < 1e-10);
    }

    #[test]
    fn restricted_fitted_constant_pressure() {
        // fitted square made of full elements
        let mesh = BackgroundMesh::build_structured(4).unwrap();
        let sq = ConvexPolygon::new(vec![
            Point2::new(-0.5, -0.5),
            Point2::new(0.5, -0.5),
            Point2::new(0.5, 0.5),
            Point2::new(-0.5, 0.5),
        ])
        .unwrap();
        let disc = Discretization::new(mesh, DomainDescription::ConvexPolygon(sq), 1).unwrap();
        let data = ProblemData::new(Arc::new(|_| 0.0), Arc::new(|_| 2.5), Arc::new(|_, _| 0.0));
        let s = solve_restricted(&disc, &data).unwrap();
        assert!(max_abs(&s.u) < 1e-10);
        for &e in &disc.q.elements {
            let c = disc.mesh.element_points(e);
            let x = (c[0] + c[1] + c[2]) * (1.0 / 3.0);
            assert!((disc.q.eval_field(&disc.mesh, &s.p, e, x).unwrap() - 2.5).abs() < 1e-10);
        }
    }

    #[test]
    fn restricted_and_main_share_flux_for_exact_source() {
        // f in Q_h: f = 0, any p_D; gamma_u = 0
        let disc = ring(10, 0, 1);
        let data = ProblemData::new(Arc::new(|_| 0.0), Arc::new(|p: Point2| p.x.sin() + p.y), Arc::new(|_, _| 0.0));
        let r = solve_restricted(&disc, &data).unwrap();
        let fh = disc.source(&data, SourceMode::default()).unwrap();
        let m = solve_main(&disc, &data, 0.0, &fh).unwrap();
        assert!(max_abs_diff(&r.u, &m.u) < 1e-9 * max_abs(&m.u).max(1.0));
    }

    #[test]
    fn frachon_equivalence() {
        let disc = ring(10, 0, 1);
        let data = ProblemData::sine();
        let fh = disc.source(&data, SourceMode::Extended { kf: 1, gamma_f: 1.0 }).unwrap();
        let m = solve_main(&disc, &data, 1.0, &fh).unwrap();
        let f = solve_frachon(&disc, &data, 1.0, 1.0).unwrap();
        assert!(max_abs_diff(&m.u, &f.u) < 1e-9 * max_abs(&m.u));
        let near = disc.near_cut();
        let mut far_diff: f64 = 0.0;
        let mut near_diff: f64 = 0.0;
        for &e in &disc.q.elements {
            let r = disc.q.dofs(e).unwrap();
            let d = max_abs_diff(&m.p[r.clone()], &f.p[r]);
            if near[e] {
                near_diff = near_diff.max(d);
            } else {
                far_diff = far_diff.max(d);
            }
        }
        assert!(far_diff < 1e-9, "{far_diff}");
        assert!(near_diff > 1e-8, "{near_diff}");
    }

    #[test]
    fn hybrid_matches_main() {
        let disc = ring(10, 0, 1);
        let data = ProblemData::sine();
        let fh = disc.source(&data, SourceMode::default()).unwrap();
        let m = solve_main(&disc, &data, 0.0, &fh).unwrap();
        let h = solve_hybrid(&disc, &data, &fh, 0.0).unwrap();
        assert!(max_abs_diff(&m.u, &h.u) < 1e-8 * max_abs(&m.u).max(1.0));
        assert!(max_abs_diff(&m.p, &h.p) < 1e-8 * max_abs(&m.p).max(1.0));
        assert!(h.report.residual < 1e-8);
    }

    #[test]
    fn neumann_zero_data() {
        let disc = ring(10, 0, 1);
        let data = ProblemData::zero();
        let fh = disc.source(&data, SourceMode::default()).unwrap();
        let s = solve_neumann(&disc, &data, &fh, NeumannOptions::default()).unwrap();
        assert!(max_abs(&s.u) < 1e-12 && max_abs(&s.p) < 1e-12);
    }

    #[test]
    fn consistency_identity() {
        let disc = ring(10, 0, 1);
        let data = ProblemData::sine();
        let fh = disc.source(&data, SourceMode::default()).unwrap();
        let s = solve_main(&disc, &data, 1.0, &fh).unwrap();
        let a = disc.mass(Measure::Omega).unwrap().add_scaled(&disc.gp_flux().unwrap(), 1.0);
        let b = disc.div(Measure::OmegaT).unwrap();
        let lhs: Vec<f64> = a
            .mul_vec(&s.u)
            .iter()
            .zip(b.transpose().mul_vec(&s.p))
            .map(|(x, y)| x + y)
            .collect();
        let rhs = disc.flux_rhs(&data).unwrap();
        assert!(max_abs_diff(&lhs, &rhs) < 1e-10 * max_abs(&rhs).max(1.0));
        let _ = interpolate_rt(&disc.mesh, &disc.rt, |p| [p.x.cos(), 0.0]);
    }

    #[test]
    fn strip_dof_counts() {
        for (k, (nf, nq)) in [(7, 4), (22, 12), (45, 24), (76, 40)].into_iter().enumerate() {
            let s = StripFixture::new(k).unwrap();
            assert_eq!((s.ndof_flux, s.ndof_scalar), (nf, nq), "k={k}");
        }
    }
    #[test]
    fn strip_nnz_ordering() {
        let expected_v1 = [5.00, 12.59, 22.83, 35.72];
        for k in 0..4 {
            let s = StripFixture::new(k).unwrap();
            let v: Vec<f64> = Variant::ALL
                .iter()
                .map(|&v| s.nnz_per_dof(v, Attribution::RowOwner).unwrap())
                .collect();
            assert!(v[0] < v[1] && v[1] < v[3] && v[3] < v[2] && v[2] < v[4], "k={k}: {v:?}");
            assert!((v[0] - expected_v1[k]).abs() < 5e-3, "k={k}: {}", v[0]);
        }
    }
}
