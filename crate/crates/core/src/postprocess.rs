//! Local reconstruction of a scalar of degree `k + 1` from the discrete flux.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{gp_facet_block, GpConfig};
use crate::error::{Error, Result};
use crate::geometry::{element_rule, ElementClass};
use crate::mesh::{BackgroundMesh, Point2};
use crate::patches::Patch;
use crate::spaces::{eval_dg_with, grad_dg_with, DGSpace, ElementMap};
use crate::systems::Discretization;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpScheme {
    Elementwise,
    Patchwise,
}

/// `p*_h`, stored in the broken `P_{k+1}` space of the active mesh.
#[derive(Debug, Clone)]
pub struct PostProcessedScalar {
    pub space: DGSpace,
    pub coeffs: Vec<f64>,
    pub scheme: PpScheme,
}

impl PostProcessedScalar {
    pub fn eval(&self, mesh: &BackgroundMesh, e: usize, p: Point2) -> Result<f64> {
        self.space.eval_field(mesh, &self.coeffs, e, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PatchPpOptions {
    /// One polynomial per patch instead of the broken space with ghost penalty.
    pub single_polynomial: bool,
    /// Constrain `(p*, 1)_{omega ∩ Omega}` against `(p̄, 1)_omega`.
    pub whole_patch_constraint: bool,
}

/// Local saddle solve `[[k, c], [c^T, 0]] [x; mu] = [b; g]`.
fn constrained_solve(k: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>, g: f64) -> Option<DVector<f64>> {
    let n = k.nrows();
    let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(k);
    for i in 0..n {
        m[(i, n)] = c[i];
        m[(n, i)] = c[i];
    }
    let mut r = DVector::<f64>::zeros(n + 1);
    r.rows_mut(0, n).copy_from(b);
    r[n] = g;
    let sv = m.clone().singular_values();
    if !(sv.min() > 1e-13 * sv.max()) {
        return None;
    }
    let x = m.lu().solve(&r)?;
    x.iter().all(|v| v.is_finite()).then(|| x.rows(0, n).into_owned())
}

fn pp_space(disc: &Discretization) -> Result<DGSpace> {
    DGSpace::new(&disc.mesh, &disc.active, disc.k + 1)
}

/// Elementwise scheme: Neumann problem on the full element, with the mean of `p̄`
/// on interior elements and the boundary mean of `p_D` on cut elements.
pub fn pp_element(disc: &Discretization, u: &[f64], p: &[f64], p_d: impl Fn(Point2) -> f64) -> Result<PostProcessedScalar> {
    let mesh = &disc.mesh;
    let space = pp_space(disc)?;
    let deg = space.degree;
    let n = space.local_dim();
    let mut coeffs = vec![0.0; space.ndofs];
    for &e in &space.elements {
        let map = ElementMap::of(mesh, e);
        let mut k = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        let mut c = DVector::<f64>::zeros(n);
        let mut g = 0.0;
        let rule = element_rule(mesh, e, 2 * deg + 2);
        for (&x, &w) in rule.points.iter().zip(&rule.weights) {
            let gr = grad_dg_with(&map, deg, x);
            let (uh, _) = disc.rt.eval_field(mesh, u, e, x)?;
            for i in 0..n {
                b[i] += w * (uh[0] * gr[i][0] + uh[1] * gr[i][1]);
                for j in 0..n {
                    k[(i, j)] += w * (gr[i][0] * gr[j][0] + gr[i][1] * gr[j][1]);
                }
            }
        }
        if disc.cut.class(e) == ElementClass::Cut {
            if disc.cut.interface_length(e) < 1e-14 {
                return Err(Error::DegenerateBoundaryConstraint(e));
            }
            let rule = disc.cut.interface_rule(e, 2 * deg + 6)?;
            for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                let v = eval_dg_with(&map, deg, x);
                c.iter_mut().zip(&v).for_each(|(ci, vi)| *ci += w * vi);
                g += w * p_d(x);
            }
        } else {
            let rule = element_rule(mesh, e, 2 * deg);
            for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                let v = eval_dg_with(&map, deg, x);
                c.iter_mut().zip(&v).for_each(|(ci, vi)| *ci += w * vi);
                g += w * disc.q.eval_field(mesh, p, e, x)?;
            }
        }
        let x = constrained_solve(&k, &b, &c, g).ok_or(Error::DegenerateBoundaryConstraint(e))?;
        coeffs[space.dofs(e)?].copy_from_slice(x.as_slice());
    }
    Ok(PostProcessedScalar {
        space,
        coeffs,
        scheme: PpScheme::Elementwise,
    })
}

/// Patchwise scheme on `Omega ∩ omega` with an `h^-2` scaled ghost penalty of degree `k + 1`.
pub fn pp_patch(disc: &Discretization, u: &[f64], p: &[f64], opts: PatchPpOptions) -> Result<PostProcessedScalar> {
    let space = pp_space(disc)?;
    let mut coeffs = vec![0.0; space.ndofs];
    for patch in &disc.patches.patches {
        if opts.single_polynomial {
            single_polynomial_patch(disc, &space, patch, u, p, opts, &mut coeffs)?;
        } else {
            broken_patch(disc, &space, patch, u, p, opts, &mut coeffs)?;
        }
    }
    Ok(PostProcessedScalar {
        space,
        coeffs,
        scheme: PpScheme::Patchwise,
    })
}

/// Adds the constraint functional of element `e` using the basis of `map`.
fn constraint_terms(
    disc: &Discretization,
    e: usize,
    map: &ElementMap,
    deg: usize,
    p: &[f64],
    opts: PatchPpOptions,
    c: &mut [f64],
    g: &mut f64,
) -> Result<()> {
    let mesh = &disc.mesh;
    let interior = disc.cut.class(e) == ElementClass::Interior;
    if !opts.whole_patch_constraint && !interior {
        return Ok(());
    }
    let rule = disc.cut.volume_rule(e, 2 * deg + 2)?;
    for (&x, &w) in rule.points.iter().zip(&rule.weights) {
        let v = eval_dg_with(map, deg, x);
        c.iter_mut().zip(&v).for_each(|(ci, vi)| *ci += w * vi);
    }
    let full = element_rule(mesh, e, 2 * deg);
    for (&x, &w) in full.points.iter().zip(&full.weights) {
        *g += w * disc.q.eval_field(mesh, p, e, x)?;
    }
    Ok(())
}

fn broken_patch(
    disc: &Discretization,
    space: &DGSpace,
    patch: &Patch,
    u: &[f64],
    p: &[f64],
    opts: PatchPpOptions,
    coeffs: &mut [f64],
) -> Result<()> {
    let mesh = &disc.mesh;
    let deg = space.degree;
    let n = space.local_dim();
    let np = n * patch.elements.len();
    let mut global = Vec::with_capacity(np);
    for &e in &patch.elements {
        global.extend(space.dofs(e)?);
    }
    let mut k = DMatrix::<f64>::zeros(np, np);
    let mut b = DVector::<f64>::zeros(np);
    let mut c = DVector::<f64>::zeros(np);
    let mut g = 0.0;
    for (pe, &e) in patch.elements.iter().enumerate() {
        let map = ElementMap::of(mesh, e);
        let rule = disc.cut.volume_rule(e, 2 * deg + 2)?;
        for (&x, &w) in rule.points.iter().zip(&rule.weights) {
            let gr = grad_dg_with(&map, deg, x);
            let (uh, _) = disc.rt.eval_field(mesh, u, e, x)?;
            for i in 0..n {
                b[pe * n + i] += w * (uh[0] * gr[i][0] + uh[1] * gr[i][1]);
                for j in 0..n {
                    k[(pe * n + i, pe * n + j)] += w * (gr[i][0] * gr[j][0] + gr[i][1] * gr[j][1]);
                }
            }
        }
        let mut cl = vec![0.0; n];
        constraint_terms(disc, e, &map, deg, p, opts, &mut cl, &mut g)?;
        c.rows_mut(pe * n, n).iter_mut().zip(&cl).for_each(|(a, b)| *a = *b);
    }
    let config = GpConfig::new(disc.gp_variant, patch.facets.clone(), deg).with_h_power(-2);
    for &f in &patch.facets {
        let (dofs, m) = gp_facet_block(mesh, space, f, &config)?;
        let loc: Vec<usize> = dofs
            .iter()
            .map(|d| global.iter().position(|x| x == d).expect("dof inside patch"))
            .collect();
        for (i, &li) in loc.iter().enumerate() {
            for (j, &lj) in loc.iter().enumerate() {
                k[(li, lj)] += m[i][j];
            }
        }
    }
    let x = constrained_solve(&k, &b, &c, g).ok_or(Error::UnstablePpPatch(patch.root))?;
    for (i, &gi) in global.iter().enumerate() {
        coeffs[gi] = x[i];
    }
    Ok(())
}

fn single_polynomial_patch(
    disc: &Discretization,
    space: &DGSpace,
    patch: &Patch,
    u: &[f64],
    p: &[f64],
    opts: PatchPpOptions,
    coeffs: &mut [f64],
) -> Result<()> {
    let mesh = &disc.mesh;
    let deg = space.degree;
    let n = space.local_dim();
    let root = ElementMap::of(mesh, patch.root);
    let mut k = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut c = vec![0.0; n];
    let mut g = 0.0;
    for &e in &patch.elements {
        let rule = disc.cut.volume_rule(e, 2 * deg + 2)?;
        for (&x, &w) in rule.points.iter().zip(&rule.weights) {
            let gr = grad_dg_with(&root, deg, x);
            let (uh, _) = disc.rt.eval_field(mesh, u, e, x)?;
            for i in 0..n {
                b[i] += w * (uh[0] * gr[i][0] + uh[1] * gr[i][1]);
                for j in 0..n {
                    k[(i, j)] += w * (gr[i][0] * gr[j][0] + gr[i][1] * gr[j][1]);
                }
            }
        }
        constraint_terms(disc, e, &root, deg, p, opts, &mut c, &mut g)?;
    }
    let x = constrained_solve(&k, &b, &DVector::from_vec(c), g).ok_or(Error::UnstablePpPatch(patch.root))?;
    // the local bases are L2-orthonormal, so restriction is a projection
    for &e in &patch.elements {
        let map = ElementMap::of(mesh, e);
        let rule = element_rule(mesh, e, 2 * deg);
        let r = space.dofs(e)?;
        let mut local = vec![0.0; n];
        for (&pt, &w) in rule.points.iter().zip(&rule.weights) {
            let val: f64 = eval_dg_with(&root, deg, pt).iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            for (li, v) in local.iter_mut().zip(eval_dg_with(&map, deg, pt)) {
                *li += w * val * v;
            }
        }
        coeffs[r].copy_from_slice(&local);
    }
    Ok(())
}
