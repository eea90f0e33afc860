//! Shared fixtures for the benchmarks.

use kspark::phantom::{generate_phantom, generate_sensitivities, synthesize_kspace, CoilGeometry, PhantomSpec};
use kspark::{ImageData, KspaceData};

/// Head phantom, its coil maps and fully sampled k-space.
pub fn fixture(n: usize, coils: usize) -> (ImageData, ImageData, KspaceData) {
    let dims = [n, n, 1];
    let truth = generate_phantom(&PhantomSpec::shepp_logan_2d(), &dims).expect("phantom");
    let geom = CoilGeometry {
        n_coils: coils,
        ..CoilGeometry::default()
    };
    let maps = generate_sensitivities(&geom, &dims).expect("maps");
    let ksp = synthesize_kspace(&truth, &maps).expect("k-space");
    (truth, maps, ksp)
}
