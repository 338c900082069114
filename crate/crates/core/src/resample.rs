//! Resampling of volumes and masks onto a target lattice.

use serde::{Deserialize, Serialize};

use crate::volume::{GridError, GridSpec, Mask3D, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

// Source coordinates this close to a lattice point are snapped onto it, so
// identity mappings reproduce values exactly despite affine round-off.
const SNAP: f64 = 1e-9;

fn snap(c: f64) -> f64 {
    let r = c.round();
    if (c - r).abs() < SNAP {
        r
    } else {
        c
    }
}

/// Resamples `vol` onto `target`.
///
/// Each target voxel centre is mapped through `target.affine` and then the
/// inverse of the source affine. Positions outside the source lattice yield 0.
pub fn resample(vol: &Volume, target: &GridSpec, interp: Interpolation) -> Result<Volume, GridError> {
    let to_source = vol.affine().inverse()?.compose(&target.affine);
    if !target.affine.is_invertible() {
        return Err(GridError::NonInvertibleAffine);
    }
    let src = vol.grid();
    let mut data = Vec::with_capacity(target.len());
    let [tx, ty, tz] = target.dims;
    for k in 0..tz {
        for j in 0..ty {
            for i in 0..tx {
                let p = to_source.apply([i as f64, j as f64, k as f64]);
                let p = [snap(p[0]), snap(p[1]), snap(p[2])];
                let v = match interp {
                    Interpolation::Trilinear => trilinear(vol, src, p),
                    Interpolation::Nearest => nearest(vol, src, p),
                };
                data.push(v);
            }
        }
    }
    Volume::new(target.clone(), data)
}

/// Nearest-neighbour resampling of a mask; output stays binary.
pub fn resample_mask(mask: &Mask3D, target: &GridSpec) -> Result<Mask3D, GridError> {
    let vol = resample(&mask.to_volume(), target, Interpolation::Nearest)?;
    let bits = vol.data().iter().map(|&v| u8::from(v != 0.0)).collect();
    Mask3D::from_bits(target.clone(), bits)
}

fn nearest(vol: &Volume, grid: &GridSpec, p: [f64; 3]) -> f64 {
    let mut idx = [0usize; 3];
    for d in 0..3 {
        // half-up rounding
        let r = (p[d] + 0.5).floor();
        if r < 0.0 || r > (grid.dims[d] - 1) as f64 {
            return 0.0;
        }
        idx[d] = r as usize;
    }
    vol.get(idx[0], idx[1], idx[2])
}

fn trilinear(vol: &Volume, grid: &GridSpec, p: [f64; 3]) -> f64 {
    let mut lo = [0usize; 3];
    let mut frac = [0.0; 3];
    for d in 0..3 {
        let max = (grid.dims[d] - 1) as f64;
        if !(0.0..=max).contains(&p[d]) {
            return 0.0;
        }
        let f = p[d].floor();
        // on the last plane, interpolate within the final cell
        let f = if f >= max && max > 0.0 { max - 1.0 } else { f };
        lo[d] = f as usize;
        frac[d] = p[d] - f;
    }
    let hi = |d: usize| (lo[d] + 1).min(grid.dims[d] - 1);
    let mut acc = 0.0;
    for corner in 0..8 {
        let pick = |d: usize| corner >> d & 1 == 1;
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for d in 0..3 {
            if pick(d) {
                w *= frac[d];
                idx[d] = hi(d);
            } else {
                w *= 1.0 - frac[d];
                idx[d] = lo[d];
            }
        }
        if w != 0.0 {
            acc += w * vol.get(idx[0], idx[1], idx[2]);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Affine;
    use proptest::prelude::*;

    fn ramp(dims: [usize; 3]) -> Volume {
        let g = GridSpec::isotropic(dims, 1.0);
        let data = (0..g.len()).map(|i| (i * 7 % 13) as f64).collect();
        Volume::new(g, data).unwrap()
    }

    #[test]
    fn identity_resample_is_exact() {
        let v = ramp([4, 3, 5]);
        for interp in [Interpolation::Trilinear, Interpolation::Nearest] {
            assert_eq!(resample(&v, v.grid(), interp).unwrap(), v);
        }
    }

    #[test]
    fn identity_with_nontrivial_affine() {
        let a = Affine([
            [0.0, -1.2, 0.0, 30.0],
            [0.9, 0.0, 0.0, -12.0],
            [0.0, 0.0, 2.5, 4.0],
            [0.0, 0.0, 0.0, 1.0],
        ]);
        let g = GridSpec::new([3, 4, 2], [0.9, 1.2, 2.5], a).unwrap();
        let v = Volume::new(g, (0..24).map(f64::from).collect()).unwrap();
        assert_eq!(resample(&v, v.grid(), Interpolation::Trilinear).unwrap(), v);
    }

    #[test]
    fn linear_interpolation_on_a_row() {
        let g = GridSpec::isotropic([2, 1, 1], 1.0);
        let v = Volume::new(g, vec![0.0, 10.0]).unwrap();
        // one target voxel placed at source x = 0.25
        let target = GridSpec::new(
            [1, 1, 1],
            [1.0; 3],
            Affine::identity().with_translation([0.25, 0.0, 0.0]),
        )
        .unwrap();
        let out = resample(&v, &target, Interpolation::Trilinear).unwrap();
        assert!((out.data()[0] - 2.5).abs() < 1e-12);
        let out = resample(&v, &target, Interpolation::Nearest).unwrap();
        assert_eq!(out.data()[0], 0.0);
        // exactly half-way rounds up
        let half = GridSpec::new(
            [1, 1, 1],
            [1.0; 3],
            Affine::identity().with_translation([0.5, 0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(resample(&v, &half, Interpolation::Nearest).unwrap().data()[0], 10.0);
    }

    #[test]
    fn constant_volume_interior() {
        let src = Volume::filled(GridSpec::isotropic([6, 6, 6], 2.0), 100.0);
        let target = GridSpec::new(
            [8, 8, 8],
            [1.3; 3],
            Affine::diagonal([1.3; 3]).with_translation([0.4, 0.4, 0.4]),
        )
        .unwrap();
        let out = resample(&src, &target, Interpolation::Trilinear).unwrap();
        for (idx, v) in out.data().iter().enumerate() {
            let [i, j, k] = target.coords(idx);
            let w = target.affine.apply([i as f64, j as f64, k as f64]);
            if w.iter().all(|&c| c <= 10.0) {
                assert!((v - 100.0).abs() < 1e-9, "{v} at {w:?}");
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn outside_samples_are_zero() {
        let src = Volume::filled(GridSpec::isotropic([2, 2, 2], 1.0), 5.0);
        let target = GridSpec::new(
            [1, 1, 1],
            [1.0; 3],
            Affine::identity().with_translation([-3.0, 0.0, 0.0]),
        )
        .unwrap();
        for interp in [Interpolation::Trilinear, Interpolation::Nearest] {
            assert_eq!(resample(&src, &target, interp).unwrap().data()[0], 0.0);
        }
    }

    #[test]
    fn singular_source_affine() {
        let g = GridSpec::isotropic([2, 2, 2], 1.0);
        let mut v = Volume::filled(g.clone(), 1.0);
        // bypass GridSpec validation through a Volume built on a broken grid
        let mut broken = g;
        broken.affine.0[0][0] = 0.0;
        v = Volume::new(broken, v.into_data()).unwrap();
        assert_eq!(
            resample(&v, &GridSpec::isotropic([1, 1, 1], 1.0), Interpolation::Nearest),
            Err(GridError::NonInvertibleAffine)
        );
    }

    proptest! {
        #[test]
        fn nearest_mask_stays_binary(
            bits in proptest::collection::vec(0u8..2, 27),
            scale in 0.3f64..2.0,
            shift in -2.0f64..2.0,
        ) {
            let mask = Mask3D::from_bits(GridSpec::isotropic([3, 3, 3], 1.0), bits).unwrap();
            let target = GridSpec::new(
                [5, 4, 3],
                [scale; 3],
                Affine::diagonal([scale; 3]).with_translation([shift, -shift, 0.5 * shift]),
            ).unwrap();
            let out = resample(&mask.to_volume(), &target, Interpolation::Nearest).unwrap();
            prop_assert!(out.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }

        #[test]
        fn trilinear_never_overshoots(
            data in proptest::collection::vec(-50.0f64..50.0, 64),
            scale in 0.2f64..1.0,
            shift in 0.0f64..0.5,
        ) {
            let src = Volume::new(GridSpec::isotropic([4, 4, 4], 1.0), data).unwrap();
            let (lo, hi) = src.min_max();
            // every target sample lands inside the source lattice
            let target = GridSpec::new(
                [3, 3, 3],
                [scale; 3],
                Affine::diagonal([scale; 3]).with_translation([shift; 3]),
            ).unwrap();
            let out = resample(&src, &target, Interpolation::Trilinear).unwrap();
            for &v in out.data() {
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }
}
