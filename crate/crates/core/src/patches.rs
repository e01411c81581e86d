//! Aggregation of cut elements onto interior root elements.

use crate::error::{Error, Result};
use crate::geometry::ElementClass;
use crate::mesh::BackgroundMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    /// Maximum number of facet crossings between a cut element and its root.
    pub max_hops: usize,
    pub max_size: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { max_hops: 4, max_size: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub root: usize,
    /// Root first, remaining elements ascending.
    pub elements: Vec<usize>,
    /// Facets shared by two elements of the patch, ascending.
    pub facets: Vec<usize>,
}

impl Patch {
    pub fn is_trivial(&self) -> bool {
        self.elements.len() == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchDecomposition {
    pub patches: Vec<Patch>,
    pub element_to_patch: Vec<Option<usize>>,
    /// Union of all patch-interior facets, ascending.
    pub gp_facets: Vec<usize>,
    /// Largest root distance (in facet crossings) over all elements.
    pub max_hops: usize,
}

impl PatchDecomposition {
    pub fn patch_of(&self, e: usize) -> Result<usize> {
        self.element_to_patch.get(e).copied().flatten().ok_or(Error::InactiveElement(e))
    }

    pub fn max_size(&self) -> usize {
        self.patches.iter().map(|p| p.elements.len()).max().unwrap_or(0)
    }
}

/// Multi-source breadth-first aggregation.
///
/// All interior elements start as roots. A cut element joins a patch reaching it in
/// the earliest possible layer, preferring small patches.
pub fn build_patches(mesh: &BackgroundMesh, classes: &[ElementClass], config: PatchConfig) -> Result<PatchDecomposition> {
    let ne = mesh.num_elements();
    if classes.len() != ne {
        return Err(Error::InvalidArgument("class list does not match the mesh".into()));
    }
    let owner = sorted_layers(mesh, classes, config.max_hops);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ne];
    for e in 0..ne {
        match classes[e] {
            ElementClass::Exterior => {}
            ElementClass::Interior => members[e].push(e),
            ElementClass::Cut => match owner[e] {
                Some((root, _)) => members[root].push(e),
                None => return Err(Error::IsolatedCutRegion(e, config.max_hops)),
            },
        }
    }
    let mut patches = Vec::new();
    let mut element_to_patch = vec![None; ne];
    let mut gp_facets = Vec::new();
    for root in 0..ne {
        if classes[root] != ElementClass::Interior {
            continue;
        }
        let mut elements = std::mem::take(&mut members[root]);
        if elements.len() > config.max_size {
            return Err(Error::PatchTooLarge {
                root,
                size: elements.len(),
                bound: config.max_size,
            });
        }
        elements.sort_unstable();
        elements.retain(|&e| e != root);
        elements.insert(0, root);
        let id = patches.len();
        for &e in &elements {
            element_to_patch[e] = Some(id);
        }
        let mut facets: Vec<usize> = elements
            .iter()
            .flat_map(|&e| mesh.element_facets[e])
            .filter(|&f| match mesh.facets[f].right {
                Some(r) => elements.contains(&mesh.facets[f].left) && elements.contains(&r),
                None => false,
            })
            .collect();
        facets.sort_unstable();
        facets.dedup();
        gp_facets.extend(&facets);
        patches.push(Patch { root, elements, facets });
    }
    gp_facets.sort_unstable();
    let max_hops = owner.iter().flatten().map(|&(_, d)| d).max().unwrap_or(0);
    Ok(PatchDecomposition {
        patches,
        element_to_patch,
        gp_facets,
        max_hops,
    })
}

/// `(root, distance)` per element from a layered BFS. A cut element reached by several
/// patches in the same layer joins the currently smallest one (ties: smallest root).
fn sorted_layers(mesh: &BackgroundMesh, classes: &[ElementClass], max_hops: usize) -> Vec<Option<(usize, usize)>> {
    let ne = mesh.num_elements();
    let mut owner: Vec<Option<(usize, usize)>> = vec![None; ne];
    let mut size = vec![0usize; ne];
    let mut layer: Vec<usize> = (0..ne).filter(|&e| classes[e] == ElementClass::Interior).collect();
    for &e in &layer {
        owner[e] = Some((e, 0));
        size[e] = 1;
    }
    for d in 1..=max_hops {
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for &e in &layer {
            let root = owner[e].expect("layer elements are owned").0;
            for &f in &mesh.element_facets[e] {
                let Some(nb) = mesh.neighbor(e, f) else { continue };
                if classes[nb] == ElementClass::Cut && owner[nb].is_none() {
                    candidates.push((nb, root));
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_unstable();
        candidates.dedup();
        let mut next = Vec::new();
        for group in candidates.chunk_by(|a, b| a.0 == b.0) {
            let nb = group[0].0;
            let root = group.iter().map(|&(_, r)| r).min_by_key(|&r| (size[r], r)).expect("nonempty group");
            owner[nb] = Some((root, d));
            size[root] += 1;
            next.push(nb);
        }
        layer = next;
    }
    owner
}
