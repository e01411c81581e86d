use cutmixed::assembly::{assemble_gp, GpConfig, GpVariant};
use cutmixed::geometry::{ConvexPolygon, CutMesh, DomainDescription, HalfPlane};
use cutmixed::harness::compute_eoc;
use cutmixed::mesh::{BackgroundMesh, Point2};
use cutmixed::patches::{build_patches, PatchConfig};
use cutmixed::quadrature::triangle_rule;
use cutmixed::spaces::{div_map, interpolate_rt, project_l2, DGSpace, Measure, RTSpace};
use proptest::prelude::*;

fn triangle() -> impl Strategy<Value = [Point2; 3]> {
    (-1.0..1.0f64, -1.0..1.0f64, 0.2..1.5f64, 0.2..1.5f64, -0.8..0.8f64)
        .prop_map(|(x, y, a, b, s)| [Point2::new(x, y), Point2::new(x + a, y + s * 0.3), Point2::new(x + s * 0.2, y + b)])
}

/// Area of `{x in [-1, 1]^2 : n.x < offset}` and the length of the cutting chord.
fn clip_square(n: [f64; 2], offset: f64) -> (f64, f64) {
    let sq = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let phi = |p: (f64, f64)| n[0] * p.0 + n[1] * p.1 - offset;
    let mut out = Vec::new();
    let mut crossings = Vec::new();
    for i in 0..4 {
        let (a, b) = (sq[i], sq[(i + 1) % 4]);
        let (fa, fb) = (phi(a), phi(b));
        if fa < 0.0 {
            out.push(a);
        }
        if fa * fb < 0.0 {
            let t = fa / (fa - fb);
            let x = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
            out.push(x);
            crossings.push(x);
        }
    }
    let area = 0.5
        * (0..out.len())
            .map(|i| {
                let (p, q) = (out[i], out[(i + 1) % out.len()]);
                p.0 * q.1 - q.0 * p.1
            })
            .sum::<f64>();
    let chord = match crossings.as_slice() {
        [p, q] => ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt(),
        _ => 0.0,
    };
    (area, chord)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quadrature_exact_for_polynomials(tri in triangle(), deg in 0usize..9, a in 0usize..9) {
        let a = a.min(deg);
        let b = deg - a;
        let f = |p: Point2| p.x.powi(a as i32) * p.y.powi(b as i32);
        let lo = triangle_rule(&tri, deg).integrate(f);
        let hi = triangle_rule(&tri, deg + 10).integrate(f);
        prop_assert!((lo - hi).abs() < 1e-12 * (1.0 + hi.abs()));
    }

    #[test]
    fn polygon_cut_volume_is_polygon_area(radius in 0.3..0.9f64, angle in 0.0..1.5f64, n in 3usize..9) {
        let mesh = BackgroundMesh::build_structured(n).unwrap();
        let poly = ConvexPolygon::rotated_square(radius, angle);
        let area = poly.area();
        let cut = CutMesh::build(&mesh, &DomainDescription::ConvexPolygon(poly)).unwrap();
        let total: f64 = (0..mesh.num_elements()).map(|e| cut.measure(e)).sum();
        prop_assert!((total - area).abs() < 1e-12);
        prop_assert!((area - 2.0 * radius * radius).abs() < 1e-12);
    }

    #[test]
    fn half_plane_volume_is_clipped_area(nx in -1.0..1.0f64, ny in 0.3..1.0f64, offset in -0.3..0.3f64, n in 2usize..6) {
        let mesh = BackgroundMesh::build_structured(n).unwrap();
        let norm = (nx * nx + ny * ny).sqrt();
        let normal = [nx / norm, ny / norm];
        let cut = CutMesh::build(&mesh, &DomainDescription::level_set(HalfPlane { normal, offset }, 0)).unwrap();
        let vol: f64 = (0..mesh.num_elements()).filter(|&e| cut.is_active(e)).map(|e| cut.volume_rule(e, 0).unwrap().total_weight()).sum();
        let len: f64 = (0..mesh.num_elements())
            .filter(|&e| cut.is_active(e))
            .filter_map(|e| cut.interface_rule(e, 0).ok())
            .map(|r| r.total_weight())
            .sum();
        let (area, chord) = clip_square(normal, offset);
        prop_assert!((vol - area).abs() < 1e-12, "{} vs {}", vol, area);
        prop_assert!((len - chord).abs() < 1e-12, "{} vs {}", len, chord);
    }

    #[test]
    fn commuting_interpolation_on_random_fields(k in 0usize..4, c in prop::array::uniform6(-2.0..2.0f64)) {
        let mesh = BackgroundMesh::build_structured(2).unwrap();
        let all = vec![true; mesh.num_elements()];
        let cut = CutMesh::build(&mesh, &DomainDescription::rotated_square()).unwrap();
        let sp = RTSpace::new(&mesh, &all, k, false);
        let q = DGSpace::new(&mesh, &all, k).unwrap();
        let u = move |p: Point2| [c[0] * (c[1] * p.x).sin() + c[2] * p.y, c[3] * p.x * p.y + c[4] * (c[5] * p.y).cos()];
        let div = move |p: Point2| c[0] * c[1] * (c[1] * p.x).cos() + c[3] * p.x - c[4] * c[5] * (c[5] * p.y).sin();
        let lhs = div_map(&mesh, &sp, &q).unwrap().mul_vec(&interpolate_rt(&mesh, &sp, u));
        let rhs = project_l2(&mesh, &cut, &q, div, Measure::OmegaT, 12).unwrap();
        let err = lhs.iter().zip(&rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(err < 1e-9, "k={} err={}", k, err);
    }

    #[test]
    fn ghost_penalty_kernel(k in 0usize..4, c in prop::array::uniform3(-1.0..1.0f64), direct in any::<bool>()) {
        let mesh = BackgroundMesh::build_structured(6).unwrap();
        let cut = CutMesh::build(&mesh, &DomainDescription::ring(0)).unwrap();
        let active: Vec<bool> = (0..mesh.num_elements()).map(|e| cut.is_active(e)).collect();
        let patches = build_patches(&mesh, &cut.classes, PatchConfig::default()).unwrap();
        let variant = if direct { GpVariant::Direct } else { GpVariant::NormalJump };
        let q = DGSpace::new(&mesh, &active, k).unwrap();
        let j = assemble_gp(&mesh, &q, &GpConfig::new(variant, patches.gp_facets.clone(), k)).unwrap();
        let kk = k as i32;
        let v = project_l2(&mesh, &cut, &q, move |p| c[0] + c[1] * p.x.powi(kk) + if kk > 0 { c[2] * p.y * p.x.powi(kk - 1) } else { 0.0 }, Measure::OmegaT, 0).unwrap();
        let form: f64 = j.mul_vec(&v).iter().zip(&v).map(|(a, b)| a * b).sum();
        let scale = j.frobenius_norm() * v.iter().map(|x| x * x).sum::<f64>();
        prop_assert!(form.abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn eoc_recovers_power_laws(c in 0.01..100.0f64, r in 0.5..5.0f64) {
        let e: Vec<f64> = (0..4).map(|l| c * 2f64.powf(-r * l as f64)).collect();
        for rate in compute_eoc(&e) {
            prop_assert!((rate.unwrap() - r).abs() < 1e-10);
        }
    }
}
