//! Bivariate monomial bookkeeping.
//!
//! Monomials `x^a y^b` with `a + b <= deg` are ordered by total degree and,
//! within one degree, by increasing power of `y`. All local bases in this crate
//! are stored as coefficient rows against this ordering on the reference
//! triangle.

/// Number of monomials of total degree `<= deg`.
pub const fn poly_dim(deg: usize) -> usize {
    (deg + 1) * (deg + 2) / 2
}

/// Position of `x^a y^b` in the degree-graded ordering.
pub const fn mono_index(a: usize, b: usize) -> usize {
    let d = a + b;
    d * (d + 1) / 2 + b
}

/// Exponent pairs in storage order.
pub fn exponents(deg: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(poly_dim(deg));
    for d in 0..=deg {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

fn falling(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    ((n - k + 1)..=n).fold(1.0, |acc, v| acc * v as f64)
}

fn powers(x: f64, deg: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(deg + 1);
    let mut v = 1.0;
    for _ in 0..=deg {
        p.push(v);
        v *= x;
    }
    p
}

/// Values of all monomials of degree `<= deg` at `(x, y)`.
pub fn monomials(deg: usize, x: f64, y: f64) -> Vec<f64> {
    let px = powers(x, deg);
    let py = powers(y, deg);
    exponents(deg).into_iter().map(|(a, b)| px[a] * py[b]).collect()
}

/// `d^i/dx^i d^j/dy^j` of every monomial at `(x, y)`.
pub fn monomial_partials(deg: usize, x: f64, y: f64, i: usize, j: usize) -> Vec<f64> {
    let px = powers(x, deg);
    let py = powers(y, deg);
    exponents(deg)
        .into_iter()
        .map(|(a, b)| {
            if a < i || b < j {
                0.0
            } else {
                falling(a, i) * falling(b, j) * px[a - i] * py[b - j]
            }
        })
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    falling(n, k) / falling(k, k)
}

/// `(m . grad)^order` applied to every monomial, evaluated at `(x, y)`.
pub fn monomial_directional(deg: usize, x: f64, y: f64, m: [f64; 2], order: usize) -> Vec<f64> {
    if order == 0 {
        return monomials(deg, x, y);
    }
    let mut out = vec![0.0; poly_dim(deg)];
    for i in 0..=order {
        let c = binomial(order, i) * m[0].powi(i as i32) * m[1].powi((order - i) as i32);
        if c == 0.0 {
            continue;
        }
        let part = monomial_partials(deg, x, y, i, order - i);
        for (o, v) in out.iter_mut().zip(part) {
            *o += c * v;
        }
    }
    out
}

/// Exact integral of `x^a y^b` over the reference triangle `(0,0),(1,0),(0,1)`.
pub fn reference_monomial_integral(a: usize, b: usize) -> f64 {
    // a! b! / (a + b + 2)!
    falling(a, a) * falling(b, b) / falling(a + b + 2, a + b + 2)
}
