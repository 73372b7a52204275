use std::collections::BTreeSet;

use ddlab::models::DenseNetConfig;
use ddlab::verify::{receptive_field_probe, ProbeLayer};

fn lattice(step: isize, reach: isize) -> BTreeSet<(isize, isize)> {
    let axis: Vec<isize> = (-reach..=reach).filter(|v| v % step == 0).collect();
    axis.iter().flat_map(|&y| axis.iter().map(move |&x| (y, x))).collect()
}

#[test]
fn single_dilated_convs_see_sparse_squares() {
    for (d, extent) in [(1, 3), (2, 5), (3, 7)] {
        let rf = receptive_field_probe(&[ProbeLayer::new(3, d)]).unwrap();
        assert_eq!(rf.extent(), extent, "d={}", d);
        assert_eq!(rf.offsets, lattice(d as isize, d as isize), "d={}", d);
        assert_eq!(rf.offsets.len(), 9);
    }
}

#[test]
fn dilated_stage_covers_a_dense_31_square() {
    let dilations = DenseNetConfig::paper(true).stage_dilations(0);
    assert_eq!(dilations, vec![1, 2, 4, 8]);
    let stack: Vec<ProbeLayer> = dilations.iter().map(|&d| ProbeLayer::new(3, d)).collect();
    let rf = receptive_field_probe(&stack).unwrap();
    assert_eq!(rf.extent(), 31);
    assert_eq!(rf.offsets, lattice(1, 15));
}

#[test]
fn undilated_stage_covers_only_nine() {
    let stack = vec![ProbeLayer::new(3, 1); 4];
    let rf = receptive_field_probe(&stack).unwrap();
    assert_eq!(rf.extent(), 9);
    assert_eq!(rf.offsets, lattice(1, 4));
}

#[test]
fn repeated_dilation_leaves_holes() {
    // two d=2 layers only reach even offsets
    let rf = receptive_field_probe(&[ProbeLayer::new(3, 2), ProbeLayer::new(3, 2)]).unwrap();
    assert_eq!(rf.extent(), 9);
    assert_eq!(rf.offsets, lattice(2, 4));
}
