use cutmixed_py::{dirichlet, dirichlet_csv, eoc, equivalence, header, parse_geometry, parse_pp, sparsity, BindingError};

#[test]
fn header_matches_csv_columns() {
    let h = header();
    assert_eq!(h.len(), 10);
    assert_eq!(h[0], "L");
    assert_eq!(h[9], "psl2error");
}

#[test]
fn bad_names_are_rejected() {
    assert!(matches!(parse_pp("patchwise"), Err(BindingError::PostProcessing(_))));
    assert!(matches!(parse_geometry("disk"), Err(BindingError::Geometry(_))));
    assert!(dirichlet(0, vec![0], 1.0, "none", "annulus").is_err());
}

#[test]
fn lowest_order_run() {
    let rows = dirichlet(0, vec![0, 1], 1.0, "patch", "ring").unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].0, 1);
    assert_eq!(rows[0].3, "patch");
    let u: Vec<f64> = rows.iter().map(|r| r.4[0]).collect();
    assert!(u[1] < u[0]);
    let rates = eoc(u);
    assert!(rates[0].unwrap() > 0.5);
    let csv = dirichlet_csv(0, vec![0], 1.0, "none", "ring").unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().ends_with("NaN"));
}

#[test]
fn strip_counts() {
    let rows = sparsity(1).unwrap();
    assert_eq!((rows[0].1, rows[0].2), (7, 4));
    assert_eq!((rows[1].1, rows[1].2), (22, 12));
}

#[test]
fn divergence_stabilized_variant_agrees() {
    let (du, dp) = equivalence(0, 0, 1.0, "ring").unwrap();
    assert!(du < 1e-9 && dp < 1e-9);
}
