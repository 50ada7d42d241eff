//! The chained residual depends only on relative geometry: moving the whole
//! map by a yaw rotation and a translation leaves every residual unchanged.

use memtree::factor::{edge_residual, Cov4, RelEdge};
use memtree::geometry::{wrap_angle, Pose4};
use memtree::tree::MemoryTree;
use proptest::prelude::*;

fn pose() -> impl Strategy<Value = Pose4> {
    (-20.0..20.0f64, -20.0..20.0f64, -2.0..2.0f64, -3.1..3.1f64)
        .prop_map(|(x, y, z, yaw)| Pose4::from_xyz_yaw(x, y, z, yaw))
}

proptest! {
    #[test]
    fn residuals_are_invariant_to_a_global_transform(
        globals in prop::collection::vec(pose(), 2..30),
        shift in pose(),
        meas in pose(),
        pick in (0usize..1000, 0usize..1000),
    ) {
        let n = globals.len();
        let (i, j) = ((pick.0 % n) as u64, (pick.1 % n) as u64);
        prop_assume!(i != j);
        let mut a = MemoryTree::new();
        let mut b = MemoryTree::new();
        for (k, g) in globals.iter().enumerate() {
            a.insert(k as u64, *g).unwrap();
            b.insert(k as u64, shift.compose(g)).unwrap();
        }
        let e = RelEdge::new(i, j, meas, Cov4::TUNED).unwrap();
        let ra = edge_residual(&a, &e, a.lca(i, j).unwrap()).unwrap();
        let rb = edge_residual(&b, &e, b.lca(i, j).unwrap()).unwrap();
        let mut d = ra - rb;
        // yaw residuals at the branch cut may land on opposite sides
        d[0] = wrap_angle(d[0]);
        prop_assert!(d.amax() < 1e-9, "{} vs {}", ra, rb);
    }
}
