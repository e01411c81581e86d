//! Background triangulations of a rectangle with facet topology.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::{Add, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Mesh edge. `vertices` are sorted ascending, `left < right` when both exist.
#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    pub vertices: [usize; 2],
    pub left: usize,
    pub right: Option<usize>,
}

impl Facet {
    pub fn is_interior(&self) -> bool {
        self.right.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMesh {
    pub vertices: Vec<Point2>,
    /// Counter-clockwise vertex triples.
    pub elements: Vec<[usize; 3]>,
    pub facets: Vec<Facet>,
    /// `element_facets[e][i]` is the facet joining local vertices `i` and `i + 1`.
    pub element_facets: Vec<[usize; 3]>,
    pub element_diameters: Vec<f64>,
    pub level: usize,
}

fn signed_area(a: Point2, b: Point2, c: Point2) -> f64 {
    0.5 * (b - a).cross(c - a)
}

impl BackgroundMesh {
    /// Builds topology for an arbitrary triangle soup; elements are reoriented CCW.
    pub fn from_triangles(vertices: Vec<Point2>, mut elements: Vec<[usize; 3]>, level: usize) -> Result<Self> {
        for (e, tri) in elements.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidArgument(format!("element {e} references a missing vertex")));
            }
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a == 0.0 {
                return Err(Error::InvalidArgument(format!("element {e} has zero area")));
            }
            if a < 0.0 {
                tri.swap(1, 2);
            }
        }
        let mut lookup: HashMap<[usize; 2], usize> = HashMap::new();
        let mut facets: Vec<Facet> = Vec::new();
        let mut element_facets = Vec::with_capacity(elements.len());
        for (e, tri) in elements.iter().enumerate() {
            let mut ef = [0usize; 3];
            for i in 0..3 {
                let (a, b) = (tri[i], tri[(i + 1) % 3]);
                let key = if a < b { [a, b] } else { [b, a] };
                let f = *lookup.entry(key).or_insert_with(|| {
                    facets.push(Facet {
                        vertices: key,
                        left: e,
                        right: None,
                    });
                    facets.len() - 1
                });
                if facets[f].left != e {
                    if facets[f].right.is_some() {
                        return Err(Error::InvalidArgument(format!("edge {key:?} shared by more than two elements")));
                    }
                    facets[f].right = Some(e);
                }
                ef[i] = f;
            }
            element_facets.push(ef);
        }
        let element_diameters = elements
            .iter()
            .map(|t| {
                (0..3)
                    .map(|i| (vertices[t[i]] - vertices[t[(i + 1) % 3]]).norm())
                    .fold(0.0, f64::max)
            })
            .collect();
        Ok(Self {
            vertices,
            elements,
            facets,
            element_facets,
            element_diameters,
            level,
        })
    }

    /// `n x n` squares on `[-1,1]^2`, each split along its lower-left to upper-right diagonal.
    pub fn build_structured(n: usize) -> Result<Self> {
        Self::build_rectangle(n, n, Point2::new(-1.0, -1.0), Point2::new(1.0, 1.0), false)
    }

    /// `nx x ny` squares on the box `[lo, hi]`. With `anti_diagonal` the squares are
    /// split along the upper-left to lower-right diagonal instead.
    pub fn build_rectangle(nx: usize, ny: usize, lo: Point2, hi: Point2, anti_diagonal: bool) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument("cells per axis must be at least 1".into()));
        }
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Point2::new(
                    lo.x + (hi.x - lo.x) * i as f64 / nx as f64,
                    lo.y + (hi.y - lo.y) * j as f64 / ny as f64,
                ));
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut elements = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                if anti_diagonal {
                    elements.push([v00, v10, v01]);
                    elements.push([v10, v11, v01]);
                } else {
                    elements.push([v00, v10, v11]);
                    elements.push([v00, v11, v01]);
                }
            }
        }
        Self::from_triangles(vertices, elements, 0)
    }

    /// Red refinement: every triangle is split into four congruent children.
    pub fn refine_uniform(&self) -> Self {
        let mut vertices = self.vertices.clone();
        let mut midpoint = vec![0usize; self.facets.len()];
        for (f, facet) in self.facets.iter().enumerate() {
            let [a, b] = facet.vertices;
            midpoint[f] = vertices.len();
            vertices.push((self.vertices[a] + self.vertices[b]) * 0.5);
        }
        let mut elements = Vec::with_capacity(4 * self.elements.len());
        for (e, t) in self.elements.iter().enumerate() {
            let [f0, f1, f2] = self.element_facets[e];
            let (m01, m12, m20) = (midpoint[f0], midpoint[f1], midpoint[f2]);
            elements.push([t[0], m01, m20]);
            elements.push([m01, t[1], m12]);
            elements.push([m20, m12, t[2]]);
            elements.push([m01, m12, m20]);
        }
        Self::from_triangles(vertices, elements, self.level + 1).expect("refinement preserves validity")
    }

    pub fn refined(&self, times: usize) -> Self {
        let mut m = self.clone();
        for _ in 0..times {
            m = m.refine_uniform();
        }
        m
    }

    /// Moves every vertex off the boundary by a random offset of length below
    /// `amount` times its shortest incident edge. Deterministic in `seed`.
    pub fn perturbed(&self, amount: f64, seed: u64) -> Result<Self> {
        if !(0.0..=0.25).contains(&amount) {
            return Err(Error::InvalidArgument(format!("perturbation {amount} outside [0, 0.25]")));
        }
        let nv = self.vertices.len();
        let mut fixed = vec![false; nv];
        let mut shortest = vec![f64::INFINITY; nv];
        for facet in &self.facets {
            let [a, b] = facet.vertices;
            let l = (self.vertices[a] - self.vertices[b]).norm();
            for v in [a, b] {
                shortest[v] = shortest[v].min(l);
                fixed[v] |= facet.right.is_none();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vertices = self.vertices.clone();
        for v in 0..nv {
            let (r, t): (f64, f64) = (rng.random(), rng.random());
            if fixed[v] {
                continue;
            }
            let (s, c) = (2.0 * std::f64::consts::PI * t).sin_cos();
            vertices[v] = vertices[v] + Point2::new(c, s) * (amount * shortest[v] * r);
        }
        Self::from_triangles(vertices, self.elements.clone(), self.level)
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn element_points(&self, e: usize) -> [Point2; 3] {
        let t = self.elements[e];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn element_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.element_points(e);
        signed_area(a, b, c)
    }

    pub fn facet_points(&self, f: usize) -> [Point2; 2] {
        let [a, b] = self.facets[f].vertices;
        [self.vertices[a], self.vertices[b]]
    }

    /// Facet length, used as the facet mesh size `h_F`.
    pub fn facet_length(&self, f: usize) -> f64 {
        let [a, b] = self.facet_points(f);
        (b - a).norm()
    }

    /// Unit normal pointing from the left (lower id) element to the right one,
    /// or outward for boundary facets.
    pub fn facet_normal(&self, f: usize) -> [f64; 2] {
        let [a, b] = self.facet_points(f);
        let t = b - a;
        let mut n = Point2::new(t.y, -t.x) * (1.0 / t.norm());
        let left = self.facets[f].left;
        let c = self.element_points(left);
        let centroid = (c[0] + c[1] + c[2]) * (1.0 / 3.0);
        if (centroid - a).dot(n) > 0.0 {
            n = -n;
        }
        n.to_array()
    }

    /// Maximum element diameter.
    pub fn h_max(&self) -> f64 {
        self.element_diameters.iter().copied().fold(0.0, f64::max)
    }

    /// The two elements adjacent to an interior facet, ordered `(left, right)`.
    pub fn facet_patch(&self, f: usize) -> Result<(usize, usize)> {
        let facet = self.facets.get(f).ok_or_else(|| Error::InvalidArgument(format!("no facet {f}")))?;
        match facet.right {
            Some(r) => Ok((facet.left, r)),
            None => Err(Error::NoPatch(f)),
        }
    }

    /// Local index (0..3) of facet `f` within element `e`.
    pub fn local_facet(&self, e: usize, f: usize) -> Option<usize> {
        self.element_facets[e].iter().position(|&g| g == f)
    }

    /// Element adjacent to `e` across facet `f`.
    pub fn neighbor(&self, e: usize, f: usize) -> Option<usize> {
        let facet = &self.facets[f];
        if facet.left == e {
            facet.right
        } else if facet.right == Some(e) {
            Some(facet.left)
        } else {
            None
        }
    }

    /// Plain-text dump: `v x y` lines followed by `t i j k` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {}", v.x, v.y);
        }
        for t in &self.elements {
            let _ = writeln!(s, "t {} {} {}", t[0], t[1], t[2]);
        }
        s
    }
}
