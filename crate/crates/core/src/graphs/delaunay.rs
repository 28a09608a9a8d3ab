//! Incremental Bowyer-Watson Delaunay tetrahedralization whose edges form
//! the Voronoi adjacency of a point set.
//!
//! Coordinates are normalized, snapped onto a fine integer grid and offset
//! by a tiny deterministic index-keyed perturbation, which breaks the
//! cospherical ties of gridded scans. All predicates are then evaluated
//! exactly in i128, with remaining exact ties resolved as "outside" and a
//! cavity-repair pass guarding against flat cells. The hull is closed with
//! ghost cells so no enclosing super-simplex is needed.

use std::collections::HashMap;

use crate::linalg::Vec3;

const GHOST: u32 = u32::MAX;
const SNAP: f64 = (1 << 20) as f64;
const JITTER: i64 = 16;

/// What the input rank turned out to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degeneracy {
    Full,
    Planar,
    Collinear,
    Single,
}

// ---------------------------------------------------------------------
// exact integer predicates
// ---------------------------------------------------------------------

fn jitter_of(i: usize, axis: usize) -> i64 {
    let mut h = (i as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ ((axis as u64) << 32);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51afd7ed558ccd);
    h ^= h >> 33;
    (h % (2 * JITTER as u64 + 1)) as i64 - JITTER
}

pub(crate) fn snap_points_raw(positions: &[Vec3]) -> Vec<[i64; 3]> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in positions {
        for (a, v) in p.to_array().iter().enumerate() {
            lo[a] = lo[a].min(*v);
            hi[a] = hi[a].max(*v);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0_f64, f64::max).max(1e-30);
    positions
        .iter()
        .map(|p| {
            let arr = p.to_array();
            let mut out = [0i64; 3];
            for a in 0..3 {
                let norm = ((arr[a] - lo[a]) / extent) * 2.0 - 1.0;
                out[a] = (norm * SNAP).round() as i64;
            }
            out
        })
        .collect()
}

pub(crate) fn snap_points(positions: &[Vec3]) -> Vec<[i64; 3]> {
    let mut coords = snap_points_raw(positions);
    for (i, c) in coords.iter_mut().enumerate() {
        for a in 0..3 {
            c[a] += jitter_of(i, a);
        }
    }
    coords
}

fn sub3(a: [i64; 3], b: [i64; 3]) -> [i64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn det3(u: [i64; 3], v: [i64; 3], w: [i64; 3]) -> i128 {
    let m = |a: i64, b: i64| a as i128 * b as i128;
    let c0 = m(v[1], w[2]) - m(v[2], w[1]);
    let c1 = m(v[2], w[0]) - m(v[0], w[2]);
    let c2 = m(v[0], w[1]) - m(v[1], w[0]);
    u[0] as i128 * c0 + u[1] as i128 * c1 + u[2] as i128 * c2
}

/// Positive when `d` lies on the positive side of the oriented plane
/// through `a, b, c` (right-hand rule on `b-a`, `c-a`).
pub(crate) fn orient3d(a: [i64; 3], b: [i64; 3], c: [i64; 3], d: [i64; 3]) -> i128 {
    det3(sub3(b, a), sub3(c, a), sub3(d, a))
}

/// For a positively oriented tetrahedron `(a, b, c, d)`, positive when `e`
/// lies strictly inside its circumsphere.
pub(crate) fn insphere(a: [i64; 3], b: [i64; 3], c: [i64; 3], d: [i64; 3], e: [i64; 3]) -> i128 {
    let rows = [sub3(a, e), sub3(b, e), sub3(c, e), sub3(d, e)];
    let w: Vec<i128> = rows
        .iter()
        .map(|r| r[0] as i128 * r[0] as i128 + r[1] as i128 * r[1] as i128 + r[2] as i128 * r[2] as i128)
        .collect();
    // expand along the squared-norm column
    let m0 = det3(rows[1], rows[2], rows[3]);
    let m1 = det3(rows[0], rows[2], rows[3]);
    let m2 = det3(rows[0], rows[1], rows[3]);
    let m3 = det3(rows[0], rows[1], rows[2]);
    w[0] * m0 - w[1] * m1 + w[2] * m2 - w[3] * m3
}

/// In-circumcircle test for four exactly coplanar points: positive when
/// `p` is strictly inside the circle through `a, b, c`, independent of
/// their orientation in the plane.
fn incircle_coplanar(a: [i64; 3], b: [i64; 3], c: [i64; 3], p: [i64; 3]) -> i128 {
    let u = sub3(b, a);
    let v = sub3(c, a);
    let n = [
        u[1] as i128 * v[2] as i128 - u[2] as i128 * v[1] as i128,
        u[2] as i128 * v[0] as i128 - u[0] as i128 * v[2] as i128,
        u[0] as i128 * v[1] as i128 - u[1] as i128 * v[0] as i128,
    ];
    // drop the dominant normal axis
    let axis = (0..3).max_by_key(|&k| n[k].unsigned_abs()).unwrap();
    let (i, j) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let proj = |q: [i64; 3]| [q[i], q[j]];
    let d = incircle2d(proj(a), proj(b), proj(c), proj(p));
    let o = orient2d(proj(a), proj(b), proj(c));
    match o.signum() {
        1 => d,
        -1 => -d,
        _ => 0,
    }
}

fn orient2d(a: [i64; 2], b: [i64; 2], c: [i64; 2]) -> i128 {
    let u = [b[0] - a[0], b[1] - a[1]];
    let v = [c[0] - a[0], c[1] - a[1]];
    u[0] as i128 * v[1] as i128 - u[1] as i128 * v[0] as i128
}

/// Positive when `p` is strictly inside the circle through a
/// counterclockwise triangle `(a, b, c)`.
fn incircle2d(a: [i64; 2], b: [i64; 2], c: [i64; 2], p: [i64; 2]) -> i128 {
    let rows = [
        [a[0] - p[0], a[1] - p[1]],
        [b[0] - p[0], b[1] - p[1]],
        [c[0] - p[0], c[1] - p[1]],
    ];
    let w: Vec<i128> = rows
        .iter()
        .map(|r| r[0] as i128 * r[0] as i128 + r[1] as i128 * r[1] as i128)
        .collect();
    let m = |r: [i64; 2], s: [i64; 2]| r[0] as i128 * s[1] as i128 - r[1] as i128 * s[0] as i128;
    w[0] * m(rows[1], rows[2]) - w[1] * m(rows[0], rows[2]) + w[2] * m(rows[0], rows[1])
}

// ---------------------------------------------------------------------
// 3D triangulation
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Tet {
    v: [u32; 4],
    nbr: [u32; 4],
    alive: bool,
}

struct Triangulation<'a> {
    coords: &'a [[i64; 3]],
    tets: Vec<Tet>,
    mark: Vec<u32>,
    stamp: u32,
    hint: u32,
    walk_salt: usize,
}

// parity sign of the facet opposite slot k, vertices taken in ascending
// slot order: sigma_k * orient3d(facet, x) > 0 when x is on the same side
// as v[k]
const SIGMA: [i128; 4] = [-1, 1, -1, 1];

fn facet_slots(k: usize) -> [usize; 3] {
    match k {
        0 => [1, 2, 3],
        1 => [0, 2, 3],
        2 => [0, 1, 3],
        _ => [0, 1, 2],
    }
}

impl<'a> Triangulation<'a> {
    fn new(coords: &'a [[i64; 3]], witness: [u32; 4]) -> Self {
        let [a, b, c, d] = witness;
        let mut t = Triangulation {
            coords,
            tets: Vec::new(),
            mark: Vec::new(),
            stamp: 0,
            hint: 0,
            walk_salt: 0,
        };
        let (a, b) = if orient3d(coords[a as usize], coords[b as usize], coords[c as usize], coords[d as usize]) > 0 {
            (a, b)
        } else {
            (b, a)
        };
        // one real cell plus four ghost cells on its facets
        t.push_tet([a, b, c, d]);
        for k in 0..4 {
            let f = facet_slots(k).map(|s| t.tets[0].v[s]);
            // order the facet outward: the removed corner on the negative side
            let corner = t.tets[0].v[k];
            let g = if orient3d(
                t.coord(f[0]),
                t.coord(f[1]),
                t.coord(f[2]),
                t.coord(corner),
            ) < 0
            {
                [f[0], f[1], f[2], GHOST]
            } else {
                [f[0], f[2], f[1], GHOST]
            };
            let gid = t.push_tet(g);
            t.tets[0].nbr[k] = gid;
            t.tets[gid as usize].nbr[3] = 0;
        }
        // wire ghost-ghost adjacency over hull edges
        let mut edge_map: HashMap<(u32, u32), (u32, usize)> = HashMap::new();
        for gid in 1..5u32 {
            for k in 0..3 {
                let f = facet_slots(k).map(|s| t.tets[gid as usize].v[s]);
                let mut reals: Vec<u32> = f.iter().copied().filter(|&x| x != GHOST).collect();
                reals.sort_unstable();
                let key = (reals[0], reals[1]);
                if let Some((other, ok)) = edge_map.remove(&key) {
                    t.tets[gid as usize].nbr[k] = other;
                    t.tets[other as usize].nbr[ok] = gid;
                } else {
                    edge_map.insert(key, (gid, k));
                }
            }
        }
        t.hint = 0;
        t
    }

    fn coord(&self, v: u32) -> [i64; 3] {
        self.coords[v as usize]
    }

    fn push_tet(&mut self, v: [u32; 4]) -> u32 {
        self.tets.push(Tet { v, nbr: [GHOST; 4], alive: true });
        self.mark.push(0);
        (self.tets.len() - 1) as u32
    }

    fn is_ghost(&self, t: u32) -> bool {
        self.tets[t as usize].v[3] == GHOST
    }

    fn conflicts(&self, t: u32, p: [i64; 3]) -> bool {
        let tet = &self.tets[t as usize];
        if tet.v[3] == GHOST {
            let [a, b, c] = [self.coord(tet.v[0]), self.coord(tet.v[1]), self.coord(tet.v[2])];
            match orient3d(a, b, c, p).signum() {
                1 => true,
                -1 => false,
                _ => incircle_coplanar(a, b, c, p) > 0,
            }
        } else {
            let [a, b, c, d] = tet.v.map(|v| self.coord(v));
            insphere(a, b, c, d, p) > 0
        }
    }

    /// Visibility walk from the hint. Returns a cell in conflict with `p`,
    /// or `None` when `p` coincides with an existing vertex.
    fn locate_conflict(&mut self, p: [i64; 3]) -> Option<u32> {
        let mut t = self.hint;
        if !self.tets[t as usize].alive || self.is_ghost(t) {
            t = match (0..self.tets.len() as u32)
                .find(|&i| self.tets[i as usize].alive && !self.is_ghost(i))
            {
                Some(i) => i,
                None => return None,
            };
        }
        let max_steps = 4 * self.tets.len() + 64;
        let mut steps = 0;
        'walk: loop {
            steps += 1;
            if steps > max_steps {
                // exhaustive fallback; exact predicates make this unreachable
                // for Delaunay walks but it caps any pathological input
                return (0..self.tets.len() as u32)
                    .find(|&i| self.tets[i as usize].alive && self.conflicts(i, p));
            }
            if self.is_ghost(t) {
                return self.search_ghost_region(t, p);
            }
            let tet = self.tets[t as usize].clone();
            self.walk_salt = self.walk_salt.wrapping_add(1);
            for off in 0..4 {
                let k = (off + self.walk_salt) % 4;
                let f = facet_slots(k).map(|s| self.coord(tet.v[s]));
                let side = SIGMA[k] * orient3d(f[0], f[1], f[2], p);
                if side < 0 {
                    t = tet.nbr[k];
                    continue 'walk;
                }
            }
            // containing cell found; a located non-vertex point always
            // conflicts with its containing cell (coinciding vertices were
            // deduplicated upfront)
            return Some(t);
        }
    }

    /// Breadth-first search across ghost cells for one in conflict with an
    /// outside point.
    fn search_ghost_region(&mut self, start: u32, p: [i64; 3]) -> Option<u32> {
        self.stamp += 1;
        let stamp = self.stamp;
        let mut queue = vec![start];
        self.mark[start as usize] = stamp;
        while let Some(g) = queue.pop() {
            if self.conflicts(g, p) {
                return Some(g);
            }
            for k in 0..4 {
                let n = self.tets[g as usize].nbr[k];
                if n != GHOST
                    && self.tets[n as usize].alive
                    && self.is_ghost(n)
                    && self.mark[n as usize] != stamp
                {
                    self.mark[n as usize] = stamp;
                    queue.push(n);
                }
            }
        }
        None
    }

    fn insert(&mut self, p_id: u32) {
        let p = self.coord(p_id);
        let seed = match self.locate_conflict(p) {
            Some(t) => t,
            None => return,
        };

        // grow the conflict cavity; the repair loop forces neighbors into
        // the cavity whenever a boundary facet would create a flat cell
        self.stamp += 1;
        let stamp = self.stamp;
        let mut cavity: Vec<u32> = vec![seed];
        self.mark[seed as usize] = stamp;
        let mut i = 0;
        while i < cavity.len() {
            let t = cavity[i];
            i += 1;
            for k in 0..4 {
                let n = self.tets[t as usize].nbr[k];
                if self.mark[n as usize] != stamp && self.conflicts(n, p) {
                    self.mark[n as usize] = stamp;
                    cavity.push(n);
                }
            }
        }

        // boundary facets: (outside cell, slot in inside cell, inside cell)
        loop {
            let mut forced: Vec<u32> = Vec::new();
            for &t in &cavity {
                for k in 0..4 {
                    let n = self.tets[t as usize].nbr[k];
                    if self.mark[n as usize] == stamp {
                        continue;
                    }
                    let tet = &self.tets[t as usize];
                    let f = facet_slots(k).map(|s| tet.v[s]);
                    if f.contains(&GHOST) {
                        // prospective new hull cell (edge + p); the outward
                        // witness is the outside ghost's remaining real vertex
                        let reals: Vec<u32> = f.iter().copied().filter(|&x| x != GHOST).collect();
                        let z = self.tets[n as usize]
                            .v
                            .iter()
                            .copied()
                            .find(|&v| v != GHOST && v != reals[0] && v != reals[1])
                            .expect("ghost neighbor has a third real vertex");
                        let o = orient3d(
                            self.coord(reals[0]),
                            self.coord(reals[1]),
                            p,
                            self.coord(z),
                        );
                        if o == 0 {
                            forced.push(n);
                        }
                    } else {
                        let o = orient3d(self.coord(f[0]), self.coord(f[1]), self.coord(f[2]), p);
                        if o == 0 {
                            forced.push(n);
                        }
                    }
                }
            }
            if forced.is_empty() {
                break;
            }
            for n in forced {
                if self.mark[n as usize] != stamp {
                    self.mark[n as usize] = stamp;
                    cavity.push(n);
                }
            }
        }

        // carve the cavity and retriangulate its boundary around p
        let mut boundary: Vec<(u32, [u32; 3])> = Vec::new();
        for &t in &cavity {
            for k in 0..4 {
                let n = self.tets[t as usize].nbr[k];
                if self.mark[n as usize] != stamp {
                    let f = facet_slots(k).map(|s| self.tets[t as usize].v[s]);
                    boundary.push((n, f));
                }
            }
        }
        for &t in &cavity {
            self.tets[t as usize].alive = false;
        }

        let mut face_map: HashMap<[u32; 3], (u32, usize)> = HashMap::new();
        let mut created: Vec<u32> = Vec::new();
        for (outside, f) in boundary {
            let nid = if f.contains(&GHOST) {
                // new hull ghost cell over edge (x, y) and p
                let reals: Vec<u32> = f.iter().copied().filter(|&x| x != GHOST).collect();
                let (mut x, mut y) = (reals[0], reals[1]);
                // outward order: interior witness on the negative side; take
                // any real vertex of the outside ghost cell not on the edge
                let z = self
                    .tets[outside as usize]
                    .v
                    .iter()
                    .copied()
                    .find(|&v| v != GHOST && v != x && v != y)
                    .expect("ghost neighbor shares only the hull edge");
                let o = orient3d(self.coord(x), self.coord(y), self.coord(p_id), self.coord(z));
                debug_assert!(o != 0, "repair pass leaves no flat hull cells");
                if o > 0 {
                    std::mem::swap(&mut x, &mut y);
                }
                self.push_tet([x, y, p_id, GHOST])
            } else {
                let (mut a, b, mut c) = (f[0], f[1], f[2]);
                let o = orient3d(self.coord(a), self.coord(b), self.coord(c), p);
                debug_assert!(o != 0, "repair pass leaves no flat cells");
                if o < 0 {
                    std::mem::swap(&mut a, &mut c);
                }
                self.push_tet([a, b, c, p_id])
            };
            created.push(nid);

            // the boundary facet sits opposite p in the new cell
            let my_slot = self.tets[nid as usize].v.iter().position(|&v| v == p_id).unwrap();
            self.tets[nid as usize].nbr[my_slot] = outside;
            let out_slot = (0..4)
                .find(|&k| {
                    let fv = facet_slots(k).map(|s| self.tets[outside as usize].v[s]);
                    let mut a: Vec<u32> = fv.to_vec();
                    let mut b: Vec<u32> = f.to_vec();
                    a.sort_unstable();
                    b.sort_unstable();
                    a == b
                })
                .expect("outside cell shares the boundary facet");
            self.tets[outside as usize].nbr[out_slot] = nid;

            // internal facets (those containing p) pair up among new cells
            for k in 0..4 {
                if k == my_slot {
                    continue;
                }
                let mut key = facet_slots(k).map(|s| self.tets[nid as usize].v[s]);
                key.sort_unstable();
                if let Some((other, ok)) = face_map.remove(&key) {
                    self.tets[nid as usize].nbr[k] = other;
                    self.tets[other as usize].nbr[ok] = nid;
                } else {
                    face_map.insert(key, (nid, k));
                }
            }
        }
        debug_assert!(face_map.is_empty(), "cavity boundary closes up");
        self.hint = created
            .iter()
            .copied()
            .find(|&t| !self.is_ghost(t))
            .unwrap_or(self.hint);
    }

    fn edges(&self) -> Vec<(u32, u32)> {
        let mut set: std::collections::HashSet<(u32, u32)> = std::collections::HashSet::new();
        for t in &self.tets {
            if !t.alive || t.v[3] == GHOST {
                continue;
            }
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let (a, b) = (t.v[i].min(t.v[j]), t.v[i].max(t.v[j]));
                    set.insert((a, b));
                }
            }
        }
        let mut edges: Vec<(u32, u32)> = set.into_iter().collect();
        edges.sort_unstable();
        edges
    }
}

// ---------------------------------------------------------------------
// 2D triangulation for exactly coplanar inputs
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Tri {
    v: [u32; 3],
    nbr: [u32; 3],
    alive: bool,
}

fn tri_facet_slots(k: usize) -> [usize; 2] {
    match k {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

const TRI_SIGMA: [i128; 3] = [1, -1, 1];

struct Planar<'a> {
    coords: &'a [[i64; 2]],
    tris: Vec<Tri>,
    mark: Vec<u32>,
    stamp: u32,
    hint: u32,
}

impl<'a> Planar<'a> {
    fn new(coords: &'a [[i64; 2]], witness: [u32; 3]) -> Self {
        let [a, b, c] = witness;
        let mut t = Planar { coords, tris: Vec::new(), mark: Vec::new(), stamp: 0, hint: 0 };
        let (a, b) = if orient2d(coords[a as usize], coords[b as usize], coords[c as usize]) > 0 {
            (a, b)
        } else {
            (b, a)
        };
        t.push_tri([a, b, c]);
        for k in 0..3 {
            let f = tri_facet_slots(k).map(|s| t.tris[0].v[s]);
            let corner = t.tris[0].v[k];
            let g = if orient2d(t.coord(f[0]), t.coord(f[1]), t.coord(corner)) < 0 {
                [f[0], f[1], GHOST]
            } else {
                [f[1], f[0], GHOST]
            };
            let gid = t.push_tri(g);
            t.tris[0].nbr[k] = gid;
            t.tris[gid as usize].nbr[2] = 0;
        }
        // ghost-ghost wiring over hull vertices
        let mut vert_map: HashMap<u32, Vec<(u32, usize)>> = HashMap::new();
        for gid in 1..4u32 {
            for k in 0..2 {
                let f = tri_facet_slots(k).map(|s| t.tris[gid as usize].v[s]);
                let real = f.iter().copied().find(|&x| x != GHOST).unwrap();
                vert_map.entry(real).or_default().push((gid, k));
            }
        }
        for (_v, ends) in vert_map {
            assert_eq!(ends.len(), 2);
            let (t1, k1) = ends[0];
            let (t2, k2) = ends[1];
            t.tris[t1 as usize].nbr[k1] = t2;
            t.tris[t2 as usize].nbr[k2] = t1;
        }
        t
    }

    fn coord(&self, v: u32) -> [i64; 2] {
        self.coords[v as usize]
    }

    fn push_tri(&mut self, v: [u32; 3]) -> u32 {
        self.tris.push(Tri { v, nbr: [GHOST; 3], alive: true });
        self.mark.push(0);
        (self.tris.len() - 1) as u32
    }

    fn is_ghost(&self, t: u32) -> bool {
        self.tris[t as usize].v[2] == GHOST
    }

    fn conflicts(&self, t: u32, p: [i64; 2]) -> bool {
        let tri = &self.tris[t as usize];
        if tri.v[2] == GHOST {
            let (a, b) = (self.coord(tri.v[0]), self.coord(tri.v[1]));
            match orient2d(a, b, p).signum() {
                1 => true,
                -1 => false,
                _ => {
                    // collinear with the hull edge: conflict when strictly
                    // inside the segment
                    let d = [b[0] - a[0], b[1] - a[1]];
                    let ap = (p[0] - a[0]) as i128 * d[0] as i128
                        + (p[1] - a[1]) as i128 * d[1] as i128;
                    let bp = (p[0] - b[0]) as i128 * d[0] as i128
                        + (p[1] - b[1]) as i128 * d[1] as i128;
                    ap > 0 && bp < 0
                }
            }
        } else {
            let [a, b, c] = tri.v.map(|v| self.coord(v));
            incircle2d(a, b, c, p) > 0
        }
    }

    fn locate_conflict(&mut self, p: [i64; 2]) -> Option<u32> {
        let mut t = self.hint;
        if !self.tris[t as usize].alive || self.is_ghost(t) {
            t = (0..self.tris.len() as u32)
                .find(|&i| self.tris[i as usize].alive && !self.is_ghost(i))?;
        }
        let max_steps = 4 * self.tris.len() + 64;
        let mut steps = 0;
        'walk: loop {
            steps += 1;
            if steps > max_steps {
                return (0..self.tris.len() as u32)
                    .find(|&i| self.tris[i as usize].alive && self.conflicts(i, p));
            }
            if self.is_ghost(t) {
                // BFS over ghost edges
                self.stamp += 1;
                let stamp = self.stamp;
                let mut queue = vec![t];
                self.mark[t as usize] = stamp;
                while let Some(g) = queue.pop() {
                    if self.conflicts(g, p) {
                        return Some(g);
                    }
                    for k in 0..3 {
                        let n = self.tris[g as usize].nbr[k];
                        if n != GHOST
                            && self.tris[n as usize].alive
                            && self.is_ghost(n)
                            && self.mark[n as usize] != stamp
                        {
                            self.mark[n as usize] = stamp;
                            queue.push(n);
                        }
                    }
                }
                return None;
            }
            let tri = self.tris[t as usize].clone();
            for k in 0..3 {
                let f = tri_facet_slots(k).map(|s| self.coord(tri.v[s]));
                let side = TRI_SIGMA[k] * orient2d(f[0], f[1], p);
                if side < 0 {
                    t = tri.nbr[k];
                    continue 'walk;
                }
            }
            return Some(t);
        }
    }

    fn insert(&mut self, p_id: u32) {
        let p = self.coord(p_id);
        let seed = match self.locate_conflict(p) {
            Some(t) => t,
            None => return,
        };
        self.stamp += 1;
        let stamp = self.stamp;
        let mut cavity = vec![seed];
        self.mark[seed as usize] = stamp;
        let mut i = 0;
        while i < cavity.len() {
            let t = cavity[i];
            i += 1;
            for k in 0..3 {
                let n = self.tris[t as usize].nbr[k];
                if self.mark[n as usize] != stamp && self.conflicts(n, p) {
                    self.mark[n as usize] = stamp;
                    cavity.push(n);
                }
            }
        }
        loop {
            let mut forced = Vec::new();
            for &t in &cavity {
                for k in 0..3 {
                    let n = self.tris[t as usize].nbr[k];
                    if self.mark[n as usize] == stamp {
                        continue;
                    }
                    let f = tri_facet_slots(k).map(|s| self.tris[t as usize].v[s]);
                    if f.contains(&GHOST) {
                        // prospective hull ghost edge (x, p); witness is the
                        // outside ghost's other real vertex
                        let x = f.iter().copied().find(|&v| v != GHOST).unwrap();
                        let z = self.tris[n as usize]
                            .v
                            .iter()
                            .copied()
                            .find(|&v| v != GHOST && v != x)
                            .expect("ghost neighbor has another real vertex");
                        if orient2d(self.coord(x), p, self.coord(z)) == 0 {
                            forced.push(n);
                        }
                    } else if orient2d(self.coord(f[0]), self.coord(f[1]), p) == 0 {
                        forced.push(n);
                    }
                }
            }
            if forced.is_empty() {
                break;
            }
            for n in forced {
                if self.mark[n as usize] != stamp {
                    self.mark[n as usize] = stamp;
                    cavity.push(n);
                }
            }
        }

        let mut boundary: Vec<(u32, [u32; 2])> = Vec::new();
        for &t in &cavity {
            for k in 0..3 {
                let n = self.tris[t as usize].nbr[k];
                if self.mark[n as usize] != stamp {
                    let f = tri_facet_slots(k).map(|s| self.tris[t as usize].v[s]);
                    boundary.push((n, f));
                }
            }
        }
        for &t in &cavity {
            self.tris[t as usize].alive = false;
        }

        let mut edge_map: HashMap<[u32; 2], (u32, usize)> = HashMap::new();
        let mut created = Vec::new();
        for (outside, f) in boundary {
            let nid = if f.contains(&GHOST) {
                let x = f.iter().copied().find(|&v| v != GHOST).unwrap();
                // hull ghost edge (x, p) ordered outward; witness = the other
                // real vertex of the outside ghost
                let z = self
                    .tris[outside as usize]
                    .v
                    .iter()
                    .copied()
                    .find(|&v| v != GHOST && v != x)
                    .unwrap();
                let o = orient2d(self.coord(x), self.coord(p_id), self.coord(z));
                debug_assert!(o != 0, "repair pass leaves no flat hull edges");
                let verts = if o < 0 { [x, p_id, GHOST] } else { [p_id, x, GHOST] };
                self.push_tri(verts)
            } else {
                let (mut a, mut b) = (f[0], f[1]);
                let o = orient2d(self.coord(a), self.coord(b), p);
                debug_assert!(o != 0);
                if o < 0 {
                    std::mem::swap(&mut a, &mut b);
                }
                self.push_tri([a, b, p_id])
            };
            created.push(nid);
            // the boundary facet sits opposite p in the new cell
            let my_slot = self.tris[nid as usize].v.iter().position(|&v| v == p_id).unwrap();
            self.tris[nid as usize].nbr[my_slot] = outside;
            let out_slot = (0..3)
                .find(|&k| {
                    let fv = tri_facet_slots(k).map(|s| self.tris[outside as usize].v[s]);
                    let mut a = fv.to_vec();
                    let mut b = f.to_vec();
                    a.sort_unstable();
                    b.sort_unstable();
                    a == b
                })
                .expect("outside cell shares the boundary edge");
            self.tris[outside as usize].nbr[out_slot] = nid;
            for k in 0..3 {
                if k == my_slot {
                    continue;
                }
                let mut key = tri_facet_slots(k).map(|s| self.tris[nid as usize].v[s]);
                key.sort_unstable();
                if let Some((other, ok)) = edge_map.remove(&key) {
                    self.tris[nid as usize].nbr[k] = other;
                    self.tris[other as usize].nbr[ok] = nid;
                } else {
                    edge_map.insert(key, (nid, k));
                }
            }
        }
        debug_assert!(edge_map.is_empty());
        self.hint = created
            .iter()
            .copied()
            .find(|&t| !self.is_ghost(t))
            .unwrap_or(self.hint);
    }

    fn edges(&self) -> Vec<(u32, u32)> {
        let mut set: std::collections::HashSet<(u32, u32)> = std::collections::HashSet::new();
        for t in &self.tris {
            if !t.alive || t.v[2] == GHOST {
                continue;
            }
            for i in 0..3 {
                for j in (i + 1)..3 {
                    let (a, b) = (t.v[i].min(t.v[j]), t.v[i].max(t.v[j]));
                    set.insert((a, b));
                }
            }
        }
        let mut edges: Vec<(u32, u32)> = set.into_iter().collect();
        edges.sort_unstable();
        edges
    }
}

// ---------------------------------------------------------------------
// public entry
// ---------------------------------------------------------------------

// Morton-order insertion keeps consecutive points spatially close so the
// visibility walk from the previous cell stays short.
fn morton_order(coords: &[[i64; 3]]) -> Vec<u32> {
    fn spread(v: u64) -> u64 {
        let mut x = v & 0x1f_ffff;
        x = (x | (x << 32)) & 0x1f00000000ffff;
        x = (x | (x << 16)) & 0x1f0000ff0000ff;
        x = (x | (x << 8)) & 0x100f00f00f00f00f;
        x = (x | (x << 4)) & 0x10c30c30c30c30c3;
        x = (x | (x << 2)) & 0x1249249249249249;
        x
    }
    let mut order: Vec<u32> = (0..coords.len() as u32).collect();
    let key = |c: [i64; 3]| {
        // 20-bit buckets cover the snapped range
        let m = |v: i64| spread((((v + (1 << 21)) >> 2) as u64) & 0xf_ffff);
        m(c[0]) | (m(c[1]) << 1) | (m(c[2]) << 2)
    };
    order.sort_by_key(|&i| key(coords[i as usize]));
    order
}

/// Deduplicate coordinates: returns unique representatives and alias edges
/// chaining each duplicate to its representative.
fn dedup_coords<const D: usize>(
    coords: &[[i64; D]],
    candidates: &[u32],
) -> (Vec<u32>, Vec<(u32, u32)>) {
    let mut seen: HashMap<[i64; D], u32> = HashMap::new();
    let mut uniques = Vec::new();
    let mut aliases = Vec::new();
    for &i in candidates {
        match seen.get(&coords[i as usize]) {
            Some(&r) => aliases.push((r.min(i), r.max(i))),
            None => {
                seen.insert(coords[i as usize], i);
                uniques.push(i);
            }
        }
    }
    (uniques, aliases)
}

fn finish(mut edges: Vec<(u32, u32)>, aliases: Vec<(u32, u32)>, degen: Degeneracy) -> (Vec<(u32, u32)>, Degeneracy) {
    edges.extend(aliases);
    edges.sort_unstable();
    edges.dedup();
    (edges, degen)
}

/// Delaunay adjacency edges of a point set, with degenerate inputs falling
/// back to the triangulation of the affine subspace they span. Duplicate
/// snapped positions are chained to their representative so every input
/// index appears in the graph.
pub fn delaunay_adjacency(positions: &[Vec3]) -> (Vec<(u32, u32)>, Degeneracy) {
    assert!(!positions.is_empty());
    // rank analysis runs on the original coordinates with a relative
    // tolerance so exactly (or machine-precision) degenerate inputs take
    // the lower-dimensional path
    let raw = snap_points_raw(positions);
    let all: Vec<u32> = (0..positions.len() as u32).collect();
    let (uniques, aliases) = dedup_coords(&raw, &all);

    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in positions {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    let tol = 1e-9 * (hi.sub(lo).x.max(hi.sub(lo).y).max(hi.sub(lo).z)).max(1e-300);
    let pos = |i: u32| positions[i as usize];

    let a = uniques[0];
    let b = match uniques.iter().copied().find(|&i| pos(i).dist(pos(a)) > tol) {
        Some(b) => b,
        None => return finish(Vec::new(), aliases, Degeneracy::Single),
    };
    let dir = pos(b).sub(pos(a)).normalized();
    let c = match uniques
        .iter()
        .copied()
        .find(|&i| dir.cross(pos(i).sub(pos(a))).norm() > tol)
    {
        Some(c) => c,
        None => {
            // 1D: chain consecutive points along the line
            let mut proj: Vec<(f64, u32)> =
                uniques.iter().map(|&i| (pos(i).sub(pos(a)).dot(dir), i)).collect();
            proj.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
            let edges = proj
                .windows(2)
                .map(|w| (w[0].1.min(w[1].1), w[0].1.max(w[1].1)))
                .collect();
            return finish(edges, aliases, Degeneracy::Collinear);
        }
    };
    let normal = pos(b).sub(pos(a)).cross(pos(c).sub(pos(a))).normalized();
    let d = uniques
        .iter()
        .copied()
        .find(|&i| pos(i).sub(pos(a)).dot(normal).abs() > tol);

    match d {
        Some(_) => {
            // full rank: perturb, re-deduplicate, triangulate
            let coords = snap_points(positions);
            let (uniq3, mut aliases3) = dedup_coords(&coords, &uniques);
            aliases3.extend(aliases);
    let witness = find_witness_3d(&coords, &uniq3)
                .expect("perturbed full-rank point set keeps full rank");
            let witness = [witness.0, witness.1, witness.2, witness.3];
            let mut tri = Triangulation::new(&coords, witness);
            let uniq_set: std::collections::HashSet<u32> = uniq3.iter().copied().collect();
            for &i in morton_order(&coords)
                .iter()
                .filter(|&&i| uniq_set.contains(&i) && !witness.contains(&i))
            {
                tri.insert(i);
            }
            finish(tri.edges(), aliases3, Degeneracy::Full)
        }
        None => {
            // 2D: triangulate in the plane spanned by the witnesses
            let e1 = positions[b as usize].sub(positions[a as usize]).normalized();
            let raw2 = positions[c as usize].sub(positions[a as usize]);
            let e2 = raw2.sub(e1.scale(raw2.dot(e1))).normalized();
            let planar_f: Vec<[f64; 2]> = positions
                .iter()
                .map(|p| {
                    let d = p.sub(positions[a as usize]);
                    [d.dot(e1), d.dot(e2)]
                })
                .collect();
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for q in &planar_f {
                for k in 0..2 {
                    lo[k] = lo[k].min(q[k]);
                    hi[k] = hi[k].max(q[k]);
                }
            }
            let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-30);
            let coords2: Vec<[i64; 2]> = planar_f
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    let mut out = [0i64; 2];
                    for k in 0..2 {
                        let norm = ((q[k] - lo[k]) / extent) * 2.0 - 1.0;
                        out[k] = (norm * SNAP).round() as i64 + jitter_of(i, k);
                    }
                    out
                })
                .collect();
            let (uniq2, mut aliases2) = dedup_coords(&coords2, &uniques);
            aliases2.extend(aliases);

            // 2D witness triple on the perturbed coordinates
            let a2 = uniq2[0];
            let b2 = uniq2.iter().copied().find(|&i| coords2[i as usize] != coords2[a2 as usize]);
            let c2 = b2.and_then(|b2| {
                uniq2.iter().copied().find(|&i| {
                    orient2d(coords2[a2 as usize], coords2[b2 as usize], coords2[i as usize]) != 0
                })
            });
            let (b2, c2) = match (b2, c2) {
                (Some(b2), Some(c2)) => (b2, c2),
                _ => {
                    // perturbed set is flat; chain along the first axis
                    let mut proj: Vec<(i64, u32)> =
                        uniq2.iter().map(|&i| (coords2[i as usize][0], i)).collect();
                    proj.sort_unstable();
                    let edges = proj
                        .windows(2)
                        .map(|w| (w[0].1.min(w[1].1), w[0].1.max(w[1].1)))
                        .collect();
                    return finish(edges, aliases2, Degeneracy::Collinear);
                }
            };
            let witness = [a2, b2, c2];
            let mut tri = Planar::new(&coords2, witness);
            for &i in &uniq2 {
                if !witness.contains(&i) {
                    tri.insert(i);
                }
            }
            finish(tri.edges(), aliases2, Degeneracy::Planar)
        }
    }
}

/// First non-degenerate vertex quadruple on perturbed coordinates.
fn find_witness_3d(coords: &[[i64; 3]], uniques: &[u32]) -> Option<(u32, u32, u32, u32)> {
    let a = *uniques.first()?;
    let b = uniques.iter().copied().find(|&i| coords[i as usize] != coords[a as usize])?;
    let c = uniques.iter().copied().find(|&i| {
        let u = sub3(coords[b as usize], coords[a as usize]);
        let v = sub3(coords[i as usize], coords[a as usize]);
        let cx = u[1] as i128 * v[2] as i128 - u[2] as i128 * v[1] as i128;
        let cy = u[2] as i128 * v[0] as i128 - u[0] as i128 * v[2] as i128;
        let cz = u[0] as i128 * v[1] as i128 - u[1] as i128 * v[0] as i128;
        !(cx == 0 && cy == 0 && cz == 0)
    })?;
    let d = uniques.iter().copied().find(|&i| {
        orient3d(coords[a as usize], coords[b as usize], coords[c as usize], coords[i as usize]) != 0
    })?;
    Some((a, b, c, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn orient3d_sign_convention() {
        let a = [0, 0, 0];
        let b = [100, 0, 0];
        let c = [0, 100, 0];
        let d = [0, 0, 100];
        assert!(orient3d(a, b, c, d) > 0);
        assert!(orient3d(a, c, b, d) < 0);
        assert_eq!(orient3d(a, b, c, [50, 50, 0]), 0);
    }

    #[test]
    fn insphere_sign_convention() {
        // positively oriented unit tetra scaled by 100; centroid is inside,
        // a far point is outside
        let a = [0, 0, 0];
        let b = [100, 0, 0];
        let c = [0, 100, 0];
        let d = [0, 0, 100];
        assert!(orient3d(a, b, c, d) > 0);
        assert!(insphere(a, b, c, d, [25, 25, 25]) > 0);
        assert!(insphere(a, b, c, d, [500, 500, 500]) < 0);
        // cospherical: the mirror corner of the circumsphere
        assert_eq!(insphere(a, b, c, d, [100, 100, 100]), 0);
    }

    #[test]
    fn incircle2d_sign_convention() {
        let a = [0, 0];
        let b = [100, 0];
        let c = [0, 100];
        assert!(orient2d(a, b, c) > 0);
        assert!(incircle2d(a, b, c, [20, 20]) > 0);
        assert!(incircle2d(a, b, c, [300, 300]) < 0);
        assert_eq!(incircle2d(a, b, c, [100, 100]), 0);
    }

    /// Exhaustive empty-circumsphere oracle on the same snapped and
    /// perturbed coordinates: an edge is Delaunay when it belongs to some
    /// tetrahedron whose circumsphere strictly contains no other point.
    fn brute_force_delaunay_edges(coords: &[[i64; 3]]) -> Vec<(u32, u32)> {
        let n = coords.len();
        let mut edges = std::collections::HashSet::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    'tet: for l in (k + 1)..n {
                        let (mut a, b, c, mut d) = (coords[i], coords[j], coords[k], coords[l]);
                        let o = orient3d(a, b, c, d);
                        if o == 0 {
                            continue;
                        }
                        if o < 0 {
                            std::mem::swap(&mut a, &mut d);
                        }
                        for m in 0..n {
                            if m == i || m == j || m == k || m == l {
                                continue;
                            }
                            if insphere(a, b, c, d, coords[m]) > 0 {
                                continue 'tet;
                            }
                        }
                        for (x, y) in [(i, j), (i, k), (i, l), (j, k), (j, l), (k, l)] {
                            edges.insert((x as u32, y as u32));
                        }
                    }
                }
            }
        }
        let mut out: Vec<(u32, u32)> = edges.into_iter().collect();
        out.sort_unstable();
        out
    }

    #[test]
    fn regular_tetrahedron_is_complete() {
        let pts = vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, -1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ];
        let (edges, degen) = delaunay_adjacency(&pts);
        assert_eq!(degen, Degeneracy::Full);
        assert_eq!(edges.len(), 6);
    }

    #[test]
    fn grid_3x3x3_matches_brute_force_oracle() {
        let mut pts = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    pts.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let coords = snap_points(&pts);
        let want = brute_force_delaunay_edges(&coords);
        let (got, degen) = delaunay_adjacency(&pts);
        assert_eq!(degen, Degeneracy::Full);
        assert_eq!(got, want);
    }

    #[test]
    fn random_clouds_match_brute_force_oracle() {
        let mut rng = Rng::seed_from(99);
        for trial in 0..8 {
            let n = 8 + rng.below(18);
            let pts: Vec<Vec3> = (0..n)
                .map(|_| {
                    Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))
                })
                .collect();
            let coords = snap_points(&pts);
            let want = brute_force_delaunay_edges(&coords);
            let (got, _) = delaunay_adjacency(&pts);
            assert_eq!(got, want, "trial {trial} with {n} points");
        }
    }

    #[test]
    fn coplanar_points_fall_back_to_planar_triangulation() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::new(0.0, 1.0, 1.0),
            Vec3::new(1.0, 1.0, 1.0),
        ];
        let (edges, degen) = delaunay_adjacency(&pts);
        assert_eq!(degen, Degeneracy::Planar);
        // four sides and one diagonal
        assert_eq!(edges.len(), 5);
        for side in [(0, 1), (0, 2), (1, 3), (2, 3)] {
            assert!(edges.contains(&side), "missing square side {side:?}");
        }
    }

    #[test]
    fn collinear_points_become_a_chain() {
        let pts: Vec<Vec3> = [3.0, 0.0, 1.0, 2.0]
            .iter()
            .map(|&t| Vec3::new(t, 2.0 * t, -t))
            .collect();
        let (edges, degen) = delaunay_adjacency(&pts);
        assert_eq!(degen, Degeneracy::Collinear);
        assert_eq!(edges, vec![(0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn duplicate_points_stay_connected() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
        ];
        let (edges, degen) = delaunay_adjacency(&pts);
        assert_eq!(degen, Degeneracy::Single);
        assert_eq!(edges, vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn larger_random_cloud_builds_and_covers_all_points() {
        let mut rng = Rng::seed_from(5);
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| Vec3::new(rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0), rng.uniform(0.0, 2.0)))
            .collect();
        let (edges, degen) = delaunay_adjacency(&pts);
        assert_eq!(degen, Degeneracy::Full);
        let mut touched = vec![false; pts.len()];
        for (a, b) in &edges {
            touched[*a as usize] = true;
            touched[*b as usize] = true;
        }
        assert!(touched.iter().all(|&t| t));
        // Euler-ish sanity: a 3D Delaunay has O(n) to O(n^2) edges; for
        // uniform random points expect ~7.8 edges per point on average
        let avg = 2.0 * edges.len() as f64 / pts.len() as f64;
        assert!(avg > 10.0 && avg < 22.0, "unexpected average degree {avg}");
    }
}
