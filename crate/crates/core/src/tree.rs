//! The memory tree: an AVL-balanced binary search tree of keyframes keyed by a
//! monotone index, where every node stores its pose relative to its tree parent.
//!
//! Only the root holds a pose in the global frame. Rotations and removals
//! re-express the moved nodes' relative poses locally so that no structural
//! change ever moves a keyframe in the global frame.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::Pose4;

/// Keyframe index used as the search key.
pub type NodeKey = u64;

/// Arena slot of a tree node. Stable while the node is alive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("key {0} already present")]
    DuplicateKey(NodeKey),
    #[error("key {0} not present")]
    MissingKey(NodeKey),
    #[error("tree topology changed since the snapshot was taken")]
    TopologyChanged,
    #[error("non-finite pose for key {0}")]
    NonFinitePose(NodeKey),
}

#[derive(Debug, Clone)]
struct Node {
    key: NodeKey,
    rel: Pose4,
    height: u32,
    left: Option<NodeId>,
    right: Option<NodeId>,
    parent: Option<NodeId>,
}

/// Stored relative poses along a node-to-node path, for rollback.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSnapshot {
    entries: Vec<(NodeKey, Pose4)>,
    topology: u64,
}

impl PathSnapshot {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(NodeKey, Pose4)] {
        &self.entries
    }
}

#[derive(Debug, Clone, Default)]
pub struct MemoryTree {
    slots: Vec<Option<Node>>,
    free: Vec<u32>,
    index: HashMap<NodeKey, NodeId>,
    root: Option<NodeId>,
    topology: u64,
}

/// Upper bound on the height of an AVL tree with `n` nodes.
pub fn avl_height_bound(n: usize) -> f64 {
    1.4405 * ((n + 2) as f64).log2() - 0.3277
}

impl MemoryTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, key: NodeKey) -> bool {
        self.index.contains_key(&key)
    }

    /// Height of the whole tree; 0 when empty.
    pub fn height(&self) -> u32 {
        self.h(self.root)
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    pub fn root_key(&self) -> Option<NodeKey> {
        self.root.map(|r| self.node(r).key)
    }

    /// Counter bumped by every structural change (insert, remove, rotation).
    pub fn topology_version(&self) -> u64 {
        self.topology
    }

    pub fn id(&self, key: NodeKey) -> Result<NodeId, TreeError> {
        self.index.get(&key).copied().ok_or(TreeError::MissingKey(key))
    }

    pub fn key_of(&self, id: NodeId) -> NodeKey {
        self.node(id).key
    }

    pub fn parent_of(&self, id: NodeId) -> Option<NodeId> {
        self.node(id).parent
    }

    pub fn left_of(&self, id: NodeId) -> Option<NodeId> {
        self.node(id).left
    }

    pub fn right_of(&self, id: NodeId) -> Option<NodeId> {
        self.node(id).right
    }

    pub fn rel_of(&self, id: NodeId) -> &Pose4 {
        &self.node(id).rel
    }

    pub fn set_rel_of(&mut self, id: NodeId, pose: Pose4) {
        self.node_mut(id).rel = pose;
    }

    pub fn rel_pose(&self, key: NodeKey) -> Result<Pose4, TreeError> {
        Ok(*self.rel_of(self.id(key)?))
    }

    pub fn set_rel_pose(&mut self, key: NodeKey, pose: Pose4) -> Result<(), TreeError> {
        if !pose.is_finite() {
            return Err(TreeError::NonFinitePose(key));
        }
        let id = self.id(key)?;
        self.set_rel_of(id, pose);
        Ok(())
    }

    pub fn parent_key(&self, key: NodeKey) -> Result<Option<NodeKey>, TreeError> {
        let id = self.id(key)?;
        Ok(self.parent_of(id).map(|p| self.key_of(p)))
    }

    /// Number of edges from the root down to `id`.
    pub fn depth_of(&self, id: NodeId) -> usize {
        let mut d = 0;
        let mut cur = self.node(id).parent;
        while let Some(p) = cur {
            d += 1;
            cur = self.node(p).parent;
        }
        d
    }

    /// Keys in ascending order.
    pub fn keys(&self) -> Vec<NodeKey> {
        let mut keys: Vec<NodeKey> = self.index.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn first_key(&self) -> Option<NodeKey> {
        self.root.map(|r| self.key_of(self.leftmost(r)))
    }

    pub fn last_key(&self) -> Option<NodeKey> {
        self.root.map(|r| self.key_of(self.rightmost(r)))
    }

    pub fn insert(&mut self, key: NodeKey, global_pose: Pose4) -> Result<NodeId, TreeError> {
        if !global_pose.is_finite() {
            return Err(TreeError::NonFinitePose(key));
        }
        if self.index.contains_key(&key) {
            return Err(TreeError::DuplicateKey(key));
        }
        let Some(mut cur) = self.root else {
            let id = self.alloc(key, global_pose, None);
            self.root = Some(id);
            self.topology += 1;
            return Ok(id);
        };
        let go_left = loop {
            let n = self.node(cur);
            let next = if key < n.key { n.left } else { n.right };
            match next {
                Some(c) => cur = c,
                None => break key < n.key,
            }
        };
        let rel = self.global_of(cur).relative(&global_pose);
        let id = self.alloc(key, rel, Some(cur));
        if go_left {
            self.node_mut(cur).left = Some(id);
        } else {
            self.node_mut(cur).right = Some(id);
        }
        self.topology += 1;
        self.retrace(Some(cur));
        Ok(id)
    }

    pub fn remove(&mut self, key: NodeKey) -> Result<(), TreeError> {
        let z = self.id(key)?;
        let (zl, zr, p) = {
            let n = self.node(z);
            (n.left, n.right, n.parent)
        };
        let z_rel = self.node(z).rel;
        let retrace_from = match (zl, zr) {
            (Some(l), Some(r)) => {
                let s = self.leftmost(r);
                let s_in_z = self.pose_in_ancestor(s, z);
                let s_in_z_inv = s_in_z.inverse();
                let from = if s == r {
                    Some(s)
                } else {
                    let sp = self.node(s).parent.expect("successor below right child");
                    let sr = self.node(s).right;
                    let s_rel = self.node(s).rel;
                    self.node_mut(sp).left = sr;
                    if let Some(c) = sr {
                        let cn = self.node_mut(c);
                        cn.parent = Some(sp);
                        cn.rel = s_rel.compose(&cn.rel);
                    }
                    self.node_mut(s).right = Some(r);
                    let rn = self.node_mut(r);
                    rn.parent = Some(s);
                    rn.rel = s_in_z_inv.compose(&rn.rel);
                    Some(sp)
                };
                self.node_mut(s).left = Some(l);
                let ln = self.node_mut(l);
                ln.parent = Some(s);
                ln.rel = s_in_z_inv.compose(&ln.rel);
                let sn = self.node_mut(s);
                sn.parent = p;
                sn.rel = z_rel.compose(&s_in_z);
                self.replace_child(p, z, s);
                from
            }
            (child, None) | (None, child) => {
                if let Some(c) = child {
                    let cn = self.node_mut(c);
                    cn.parent = p;
                    cn.rel = z_rel.compose(&cn.rel);
                }
                match child {
                    Some(c) => self.replace_child(p, z, c),
                    None => self.detach_leaf(p, z),
                }
                p
            }
        };
        self.index.remove(&key);
        self.slots[z.index()] = None;
        self.free.push(z.0);
        self.topology += 1;
        self.retrace(retrace_from);
        Ok(())
    }

    pub fn global_pose(&self, key: NodeKey) -> Result<Pose4, TreeError> {
        Ok(self.global_of(self.id(key)?))
    }

    /// Global pose plus the number of compositions performed.
    pub fn global_pose_counted(&self, key: NodeKey) -> Result<(Pose4, usize), TreeError> {
        let id = self.id(key)?;
        let mut g = self.node(id).rel;
        let mut count = 0;
        let mut cur = self.node(id).parent;
        while let Some(p) = cur {
            let n = self.node(p);
            g = n.rel.compose(&g);
            count += 1;
            cur = n.parent;
        }
        Ok((g, count))
    }

    pub fn global_of(&self, id: NodeId) -> Pose4 {
        let mut g = self.node(id).rel;
        let mut cur = self.node(id).parent;
        while let Some(p) = cur {
            let n = self.node(p);
            g = n.rel.compose(&g);
            cur = n.parent;
        }
        g
    }

    /// Pose of `id`'s frame in the frame of `ancestor`, which must lie on the
    /// path to the root (an ancestor maps to identity for itself).
    pub fn pose_in_ancestor(&self, id: NodeId, ancestor: NodeId) -> Pose4 {
        let mut g = Pose4::identity();
        let mut cur = id;
        while cur != ancestor {
            let n = self.node(cur);
            g = n.rel.compose(&g);
            cur = n.parent.expect("ancestor not on root path");
        }
        g
    }

    /// All global poses in ascending key order, in O(N).
    pub fn global_poses(&self) -> Vec<(NodeKey, Pose4)> {
        let mut out = Vec::with_capacity(self.len());
        let Some(root) = self.root else {
            return out;
        };
        let mut stack = vec![(root, *self.rel_of(root))];
        while let Some((id, g)) = stack.pop() {
            let n = self.node(id);
            out.push((n.key, g));
            for c in [n.left, n.right].into_iter().flatten() {
                stack.push((c, g.compose(&self.node(c).rel)));
            }
        }
        out.sort_unstable_by_key(|(k, _)| *k);
        out
    }

    pub fn lca(&self, a: NodeKey, b: NodeKey) -> Result<NodeKey, TreeError> {
        let (ia, ib) = (self.id(a)?, self.id(b)?);
        Ok(self.key_of(self.lca_of(ia, ib)))
    }

    /// First node on the root descent whose key lies in `[min(a,b), max(a,b)]`.
    pub fn lca_of(&self, a: NodeId, b: NodeId) -> NodeId {
        let (ka, kb) = (self.key_of(a), self.key_of(b));
        let (lo, hi) = if ka <= kb { (ka, kb) } else { (kb, ka) };
        let mut cur = self.root.expect("non-empty tree");
        loop {
            let n = self.node(cur);
            if n.key > hi {
                cur = n.left.expect("key present in left subtree");
            } else if n.key < lo {
                cur = n.right.expect("key present in right subtree");
            } else {
                return cur;
            }
        }
    }

    /// Node sequence `a -> ... -> lca -> ... -> b`, both endpoints included.
    pub fn path(&self, a: NodeKey, b: NodeKey) -> Result<Vec<NodeKey>, TreeError> {
        let (ia, ib) = (self.id(a)?, self.id(b)?);
        Ok(self.path_of(ia, ib).into_iter().map(|id| self.key_of(id)).collect())
    }

    pub fn path_of(&self, a: NodeId, b: NodeId) -> Vec<NodeId> {
        let l = self.lca_of(a, b);
        let mut up = self.chain_to(a, l);
        up.push(l);
        let mut down = self.chain_to(b, l);
        down.reverse();
        up.extend(down);
        up
    }

    /// Nodes from `id` upward, stopping before `ancestor`.
    pub fn chain_to(&self, id: NodeId, ancestor: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = id;
        while cur != ancestor {
            out.push(cur);
            cur = self.node(cur).parent.expect("ancestor not on root path");
        }
        out
    }

    /// Smallest and largest key in the subtree rooted at `id`.
    pub fn subtree_range(&self, id: NodeId) -> (NodeKey, NodeKey) {
        (self.key_of(self.leftmost(id)), self.key_of(self.rightmost(id)))
    }

    pub fn snapshot_path(&self, a: NodeKey, b: NodeKey) -> Result<PathSnapshot, TreeError> {
        let keys = self.path(a, b)?;
        Ok(self.snapshot_keys(&keys))
    }

    /// Snapshot of every node, for optimizations that touch the whole tree.
    pub fn snapshot_all(&self) -> PathSnapshot {
        self.snapshot_keys(&self.keys())
    }

    fn snapshot_keys(&self, keys: &[NodeKey]) -> PathSnapshot {
        PathSnapshot {
            entries: keys.iter().map(|&k| (k, *self.rel_of(self.index[&k]))).collect(),
            topology: self.topology,
        }
    }

    pub fn restore_path(&mut self, snap: &PathSnapshot) -> Result<(), TreeError> {
        if snap.topology != self.topology {
            return Err(TreeError::TopologyChanged);
        }
        for (k, pose) in &snap.entries {
            let id = self.id(*k)?;
            self.node_mut(id).rel = *pose;
        }
        Ok(())
    }

    /// Deterministic pre-order dump: one line per node with the key, the
    /// relative pose (`yaw x y z` in shortest round-trip decimal) and left/right
    /// child presence flags.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut stack: Vec<NodeId> = self.root.into_iter().collect();
        while let Some(id) = stack.pop() {
            let n = self.node(id);
            let t = &n.rel.trans;
            let _ = writeln!(
                out,
                "{} {:?} {:?} {:?} {:?} {} {}",
                n.key,
                n.rel.yaw(),
                t.x,
                t.y,
                t.z,
                u8::from(n.left.is_some()),
                u8::from(n.right.is_some())
            );
            stack.extend(n.right);
            stack.extend(n.left);
        }
        out
    }

    /// Checks BST order, AVL balance, stored heights, parent links and the
    /// key index. Returns a description of the first violation.
    pub fn validate(&self) -> Result<(), String> {
        let Some(root) = self.root else {
            return if self.index.is_empty() {
                Ok(())
            } else {
                Err("empty root with non-empty index".into())
            };
        };
        if self.node(root).parent.is_some() {
            return Err("root has a parent".into());
        }
        let mut count = 0usize;
        // (node, lower exclusive bound, upper exclusive bound)
        let mut stack = vec![(root, None::<NodeKey>, None::<NodeKey>)];
        let mut order = Vec::new();
        while let Some((id, lo, hi)) = stack.pop() {
            count += 1;
            order.push(id);
            let n = self.node(id);
            if lo.is_some_and(|lo| n.key <= lo) || hi.is_some_and(|hi| n.key >= hi) {
                return Err(format!("BST order violated at key {}", n.key));
            }
            if self.index.get(&n.key) != Some(&id) {
                return Err(format!("index mismatch at key {}", n.key));
            }
            for c in [n.left, n.right].into_iter().flatten() {
                if self.node(c).parent != Some(id) {
                    return Err(format!("parent link broken below key {}", n.key));
                }
            }
            if let Some(l) = n.left {
                stack.push((l, lo, Some(n.key)));
            }
            if let Some(r) = n.right {
                stack.push((r, Some(n.key), hi));
            }
        }
        for &id in order.iter().rev() {
            let n = self.node(id);
            let (hl, hr) = (self.h(n.left), self.h(n.right));
            if n.height != 1 + hl.max(hr) {
                return Err(format!("stale height at key {}", n.key));
            }
            if hl.abs_diff(hr) > 1 {
                return Err(format!("unbalanced at key {}", n.key));
            }
        }
        if count != self.index.len() {
            return Err(format!("{} reachable nodes, index holds {}", count, self.index.len()));
        }
        if f64::from(self.height()) > avl_height_bound(count) {
            return Err(format!("height {} exceeds AVL bound for {count} nodes", self.height()));
        }
        Ok(())
    }

    fn node(&self, id: NodeId) -> &Node {
        self.slots[id.index()].as_ref().expect("dangling node id")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.slots[id.index()].as_mut().expect("dangling node id")
    }

    fn h(&self, id: Option<NodeId>) -> u32 {
        id.map_or(0, |i| self.node(i).height)
    }

    fn alloc(&mut self, key: NodeKey, rel: Pose4, parent: Option<NodeId>) -> NodeId {
        let node = Node {
            key,
            rel,
            height: 1,
            left: None,
            right: None,
            parent,
        };
        let id = match self.free.pop() {
            Some(slot) => {
                self.slots[slot as usize] = Some(node);
                NodeId(slot)
            }
            None => {
                self.slots.push(Some(node));
                NodeId(u32::try_from(self.slots.len() - 1).expect("node count fits u32"))
            }
        };
        self.index.insert(key, id);
        id
    }

    fn leftmost(&self, mut id: NodeId) -> NodeId {
        while let Some(l) = self.node(id).left {
            id = l;
        }
        id
    }

    fn rightmost(&self, mut id: NodeId) -> NodeId {
        while let Some(r) = self.node(id).right {
            id = r;
        }
        id
    }

    fn replace_child(&mut self, parent: Option<NodeId>, old: NodeId, new: NodeId) {
        match parent {
            None => self.root = Some(new),
            Some(p) => {
                let pn = self.node_mut(p);
                if pn.left == Some(old) {
                    pn.left = Some(new);
                } else {
                    debug_assert_eq!(pn.right, Some(old));
                    pn.right = Some(new);
                }
            }
        }
    }

    fn detach_leaf(&mut self, parent: Option<NodeId>, leaf: NodeId) {
        match parent {
            None => self.root = None,
            Some(p) => {
                let pn = self.node_mut(p);
                if pn.left == Some(leaf) {
                    pn.left = None;
                } else {
                    pn.right = None;
                }
            }
        }
    }

    fn update_height(&mut self, id: NodeId) {
        let n = self.node(id);
        let h = 1 + self.h(n.left).max(self.h(n.right));
        self.node_mut(id).height = h;
    }

    fn balance_factor(&self, id: NodeId) -> i64 {
        let n = self.node(id);
        i64::from(self.h(n.left)) - i64::from(self.h(n.right))
    }

    /// Right rotation at `y`; its left child takes its place. Returns the new
    /// subtree root.
    fn rotate_right(&mut self, y: NodeId) -> NodeId {
        let x = self.node(y).left.expect("rotate_right needs a left child");
        let b = self.node(x).right;
        let p = self.node(y).parent;
        let rel_y = self.node(y).rel;
        let rel_x = self.node(x).rel;

        self.node_mut(y).left = b;
        if let Some(b) = b {
            let bn = self.node_mut(b);
            bn.parent = Some(y);
            bn.rel = rel_x.compose(&bn.rel);
        }
        {
            let xn = self.node_mut(x);
            xn.right = Some(y);
            xn.parent = p;
            xn.rel = rel_y.compose(&rel_x);
        }
        {
            let yn = self.node_mut(y);
            yn.parent = Some(x);
            yn.rel = rel_x.inverse();
        }
        self.replace_child(p, y, x);
        self.update_height(y);
        self.update_height(x);
        self.topology += 1;
        x
    }

    /// Mirror image of [`Self::rotate_right`].
    fn rotate_left(&mut self, x: NodeId) -> NodeId {
        let y = self.node(x).right.expect("rotate_left needs a right child");
        let b = self.node(y).left;
        let p = self.node(x).parent;
        let rel_x = self.node(x).rel;
        let rel_y = self.node(y).rel;

        self.node_mut(x).right = b;
        if let Some(b) = b {
            let bn = self.node_mut(b);
            bn.parent = Some(x);
            bn.rel = rel_y.compose(&bn.rel);
        }
        {
            let yn = self.node_mut(y);
            yn.left = Some(x);
            yn.parent = p;
            yn.rel = rel_x.compose(&rel_y);
        }
        {
            let xn = self.node_mut(x);
            xn.parent = Some(y);
            xn.rel = rel_y.inverse();
        }
        self.replace_child(p, x, y);
        self.update_height(x);
        self.update_height(y);
        self.topology += 1;
        y
    }

    fn rebalance(&mut self, id: NodeId) -> NodeId {
        self.update_height(id);
        let bf = self.balance_factor(id);
        if bf > 1 {
            let l = self.node(id).left.expect("left-heavy node has a left child");
            if self.balance_factor(l) < 0 {
                self.rotate_left(l);
            }
            self.rotate_right(id)
        } else if bf < -1 {
            let r = self.node(id).right.expect("right-heavy node has a right child");
            if self.balance_factor(r) > 0 {
                self.rotate_right(r);
            }
            self.rotate_left(id)
        } else {
            id
        }
    }

    fn retrace(&mut self, mut cur: Option<NodeId>) {
        while let Some(id) = cur {
            let top = self.rebalance(id);
            cur = self.node(top).parent;
        }
    }
}
