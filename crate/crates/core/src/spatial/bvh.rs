use crate::mesh::{TriMesh, Vec3};

/// Which part of a triangle the closest point lies on. Indices are local
/// corner numbers (0..3).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Vertex(u8),
    Edge(u8, u8),
    Face,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestHit {
    pub face: usize,
    pub point: Vec3,
    pub sq_dist: f64,
    pub feature: Feature,
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5) with the Voronoi feature that contains it.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + v * ab, Feature::Edge(0, 1));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + w * ac, Feature::Edge(0, 2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + w * (c - b), Feature::Edge(1, 2));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    fn area(&self) -> f64 {
        let d = self.hi - self.lo;
        if d.x < 0.0 {
            return 0.0;
        }
        2.0 * (d.x * d.y + d.y * d.z + d.z * d.x)
    }

    fn sq_dist(&self, p: &Vec3) -> f64 {
        let mut s = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.lo[k] {
                self.lo[k] - p[k]
            } else if p[k] > self.hi[k] {
                p[k] - self.hi[k]
            } else {
                0.0
            };
            s += v * v;
        }
        s
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        bounds: Aabb,
        start: usize,
        len: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const MAX_LEAF: usize = 4;
const BINS: usize = 16;

/// Binary AABB tree over triangles, built with binned surface-area-heuristic
/// splits.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let n = mesh.faces.len();
        let mut boxes = Vec::with_capacity(n);
        let mut centroids = Vec::with_capacity(n);
        for f in 0..n {
            let mut b = Aabb::empty();
            for p in mesh.corners(f) {
                b.grow(&p);
            }
            boxes.push(b);
            centroids.push(mesh.centroid_of_face(f));
        }
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: (0..n).collect(),
        };
        if n > 0 {
            bvh.build_node(&boxes, &centroids, 0, n);
        }
        bvh
    }

    fn build_node(&mut self, boxes: &[Aabb], cents: &[Vec3], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in &self.order[start..end] {
            bounds.merge(&boxes[f]);
            cbounds.grow(&cents[f]);
        }
        let id = self.nodes.len();
        let len = end - start;
        self.nodes.push(Node::Leaf { bounds, start, len });
        if len <= MAX_LEAF {
            return id;
        }

        let extent = cbounds.hi - cbounds.lo;
        let mut best: Option<(f64, usize, usize)> = None; // (cost, axis, bin)
        for axis in 0..3 {
            if extent[axis] <= 0.0 {
                continue;
            }
            let mut counts = [0usize; BINS];
            let mut bin_boxes = [Aabb::empty(); BINS];
            for &f in &self.order[start..end] {
                let b = bin_of(cents[f][axis], cbounds.lo[axis], extent[axis]);
                counts[b] += 1;
                bin_boxes[b].merge(&boxes[f]);
            }
            for split in 1..BINS {
                let (mut lb, mut rb) = (Aabb::empty(), Aabb::empty());
                let (mut lc, mut rc) = (0, 0);
                for b in 0..split {
                    lb.merge(&bin_boxes[b]);
                    lc += counts[b];
                }
                for b in split..BINS {
                    rb.merge(&bin_boxes[b]);
                    rc += counts[b];
                }
                if lc == 0 || rc == 0 {
                    continue;
                }
                let cost = lb.area() * lc as f64 + rb.area() * rc as f64;
                if best.is_none_or(|(c, _, _)| cost < c) {
                    best = Some((cost, axis, split));
                }
            }
        }

        let mid = match best {
            Some((_, axis, split)) => {
                let slice = &mut self.order[start..end];
                let mut i = 0;
                for j in 0..slice.len() {
                    if bin_of(cents[slice[j]][axis], cbounds.lo[axis], extent[axis]) < split {
                        slice.swap(i, j);
                        i += 1;
                    }
                }
                start + i
            }
            None => start + len / 2, // all centroids coincide
        };

        let left = self.build_node(boxes, cents, start, mid);
        let right = self.build_node(boxes, cents, mid, end);
        self.nodes[id] = Node::Inner {
            bounds,
            left,
            right,
        };
        id
    }

    /// Closest triangle to `p`; ties resolve to the lowest face index so the
    /// result matches an exhaustive scan exactly.
    pub fn closest(&self, mesh: &TriMesh, p: &Vec3) -> Option<ClosestHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<ClosestHit> = None;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if let Some(b) = &best {
                if node.bounds().sq_dist(p) > b.sq_dist {
                    continue;
                }
            }
            match *node {
                Node::Leaf { start, len, .. } => {
                    for &f in &self.order[start..start + len] {
                        let hit = triangle_hit(mesh, f, p);
                        if best.is_none_or(|b| better(&hit, &b)) {
                            best = Some(hit);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().sq_dist(p);
                    let dr = self.nodes[right].bounds().sq_dist(p);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }

    /// Exhaustive scan over every triangle.
    pub fn closest_brute_force(mesh: &TriMesh, p: &Vec3) -> Option<ClosestHit> {
        (0..mesh.faces.len())
            .map(|f| triangle_hit(mesh, f, p))
            .reduce(|a, b| if better(&b, &a) { b } else { a })
    }
}

fn bin_of(x: f64, lo: f64, extent: f64) -> usize {
    (((x - lo) / extent * BINS as f64) as usize).min(BINS - 1)
}

fn better(a: &ClosestHit, b: &ClosestHit) -> bool {
    a.sq_dist < b.sq_dist || (a.sq_dist == b.sq_dist && a.face < b.face)
}

fn triangle_hit(mesh: &TriMesh, f: usize, p: &Vec3) -> ClosestHit {
    let [a, b, c] = mesh.corners(f);
    let (point, feature) = closest_point_on_triangle(p, &a, &b, &c);
    ClosestHit {
        face: f,
        point,
        sq_dist: (p - point).norm_squared(),
        feature,
    }
}
