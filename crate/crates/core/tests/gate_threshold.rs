use memtree::optimize::CHI2_4DOF_95;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn gamma_is_the_95th_percentile_of_chi2_with_4_dof() {
    let q = ChiSquared::new(4.0).unwrap().inverse_cdf(0.95);
    assert!((q - CHI2_4DOF_95).abs() < 1e-4, "{q}");
}
