//! Median-split kd-tree over WHT signatures with a fixed leaf size.
//!
//! Queries descend without backtracking and return the whole leaf; those
//! entries are the seed candidates for a pixel.

use super::wht::{WhtVector, WHT_DIM};

#[derive(Debug, Clone)]
enum Node {
    Split {
        dim: u8,
        threshold: f32,
        // Values equal to the threshold descend left when set.
        equal_left: bool,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        end: u32,
    },
}

/// Immutable kd-tree whose leaves hold pixel positions in the second image.
#[derive(Debug, Clone)]
pub struct KdTree {
    nodes: Vec<Node>,
    positions: Vec<(u32, u32)>,
    leaf_size: usize,
}

/// Build a tree over `(position, signature)` pairs. Each node splits the
/// dimension of largest spread at its median; a node stops splitting once
/// it holds at most `leaf_size` entries.
pub fn build_kdtree(entries: &[((u32, u32), WhtVector)], leaf_size: usize) -> KdTree {
    assert!(!entries.is_empty(), "kd-tree needs at least one entry");
    let leaf_size = leaf_size.max(1);
    let mut idx: Vec<u32> = (0..entries.len() as u32).collect();
    let mut nodes = Vec::with_capacity(2 * entries.len() / leaf_size + 1);
    build_node(entries, &mut idx, 0, leaf_size, &mut nodes);
    let positions = idx.iter().map(|&i| entries[i as usize].0).collect();
    KdTree {
        nodes,
        positions,
        leaf_size,
    }
}

fn build_node(
    entries: &[((u32, u32), WhtVector)],
    idx: &mut [u32],
    offset: usize,
    leaf_size: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let id = nodes.len() as u32;
    if idx.len() <= leaf_size {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + idx.len()) as u32,
        });
        return id;
    }
    let sig = |i: u32| &entries[i as usize].1;

    let mut lo = [f32::INFINITY; WHT_DIM];
    let mut hi = [f32::NEG_INFINITY; WHT_DIM];
    for &i in idx.iter() {
        for d in 0..WHT_DIM {
            let v = sig(i).get(d);
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    let (dim, spread) = (0..WHT_DIM)
        .map(|d| (d, hi[d] - lo[d]))
        .fold((0, f32::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });

    let n = idx.len();
    let mid = (n - 1) / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| sig(a).get(dim).total_cmp(&sig(b).get(dim)));
    let threshold = sig(idx[mid]).get(dim);

    let (split_at, equal_left) = if spread <= 0.0 {
        // All signatures identical: any balanced split is exact.
        (n / 2, true)
    } else {
        // Three-way partition, then send the whole block of median-equal
        // values to whichever side keeps the halves closer in size.
        let (mut below, mut i, mut upto) = (0, 0, n);
        while i < upto {
            let v = sig(idx[i]).get(dim);
            if v < threshold {
                idx.swap(below, i);
                below += 1;
                i += 1;
            } else if v > threshold {
                upto -= 1;
                idx.swap(i, upto);
            } else {
                i += 1;
            }
        }
        let left_heavy = (upto as isize - (n - upto) as isize).abs();
        let right_heavy = (below as isize - (n - below) as isize).abs();
        let can_left = upto < n;
        let can_right = below > 0;
        if can_left && (!can_right || left_heavy <= right_heavy) {
            (upto, true)
        } else {
            (below, false)
        }
    };

    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = idx.split_at_mut(split_at);
    let left = build_node(entries, l, offset, leaf_size, nodes);
    let right = build_node(entries, r, offset + split_at, leaf_size, nodes);
    nodes[id as usize] = Node::Split {
        dim: dim as u8,
        threshold,
        equal_left,
        left,
        right,
    };
    id
}

impl KdTree {
    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Positions in the leaf the query would be inserted into.
    pub fn query_leaf(&self, sig: &WhtVector) -> &[(u32, u32)] {
        let mut node = 0u32;
        loop {
            match &self.nodes[node as usize] {
                Node::Leaf { start, end } => return &self.positions[*start as usize..*end as usize],
                Node::Split {
                    dim,
                    threshold,
                    equal_left,
                    left,
                    right,
                } => {
                    let v = sig.get(*dim as usize);
                    let go_left = v < *threshold || (*equal_left && v == *threshold);
                    node = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// All leaves as position slices, in tree order.
    pub fn leaves(&self) -> impl Iterator<Item = &[(u32, u32)]> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { start, end } => Some(&self.positions[*start as usize..*end as usize]),
            Node::Split { .. } => None,
        })
    }

    /// Longest root-to-leaf path, counted in edges.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: u32) -> usize {
            match &nodes[id as usize] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}
