//! Multilinear (Q1) element utilities shared by the cell and macro solvers:
//! shape functions on the unit reference cube, 2-point tensor Gauss rules,
//! and row-major multi-index arithmetic for structured grids.
//!
//! Everything is dimension-generic over n ∈ {2,3}; coordinates are carried in
//! fixed `[f64; 3]` / `[usize; 3]` triples with trailing components unused in
//! 2D.

/// 2-point Gauss rule on [0,1]: exact for cubics, which covers multilinear
/// stiffness integrands with elementwise-constant coefficients.
pub(crate) const GAUSS_1D: [(f64, f64); 2] = [
    (0.211_324_865_405_187_1, 0.5),
    (0.788_675_134_594_812_9, 0.5),
];

pub(crate) fn num_corners(n: usize) -> usize {
    1 << n
}

/// Offset (0 or 1) of corner `c` along axis `d`.
pub(crate) fn corner_offset(c: usize, d: usize) -> usize {
    (c >> d) & 1
}

/// Tensor-product Gauss points on the unit reference cell: 2ⁿ pairs of
/// (point, weight), weights summing to 1.
pub(crate) fn gauss_points(n: usize) -> Vec<([f64; 3], f64)> {
    let mut out = Vec::with_capacity(num_corners(n));
    for g in 0..num_corners(n) {
        let mut xi = [0.0; 3];
        let mut w = 1.0;
        for d in 0..n {
            let (x, wd) = GAUSS_1D[(g >> d) & 1];
            xi[d] = x;
            w *= wd;
        }
        out.push((xi, w));
    }
    out
}

/// Value of the multilinear shape function attached to `corner` at ξ ∈ [0,1]ⁿ.
pub(crate) fn shape(n: usize, corner: usize, xi: &[f64; 3]) -> f64 {
    let mut v = 1.0;
    for d in 0..n {
        v *= if corner_offset(corner, d) == 1 { xi[d] } else { 1.0 - xi[d] };
    }
    v
}

/// Gradient of the shape function with respect to ξ.
pub(crate) fn shape_grad(n: usize, corner: usize, xi: &[f64; 3]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for d in 0..n {
        let mut v = 1.0;
        for e in 0..n {
            if e == d {
                v *= if corner_offset(corner, e) == 1 { 1.0 } else { -1.0 };
            } else {
                v *= if corner_offset(corner, e) == 1 { xi[e] } else { 1.0 - xi[e] };
            }
        }
        g[d] = v;
    }
    g
}

/// Row-major flattening (axis 0 slowest).
pub(crate) fn ravel(idx: &[usize; 3], dims: &[usize; 3], n: usize) -> usize {
    let mut id = 0;
    for d in 0..n {
        id = id * dims[d] + idx[d];
    }
    id
}

pub(crate) fn unravel(mut id: usize, dims: &[usize; 3], n: usize) -> [usize; 3] {
    let mut idx = [0usize; 3];
    for d in (0..n).rev() {
        idx[d] = id % dims[d];
        id /= dims[d];
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_and_gradient_sum() {
        for n in [2usize, 3] {
            let xi = [0.3, 0.7, 0.2];
            let mut sum = 0.0;
            let mut gsum = [0.0; 3];
            for c in 0..num_corners(n) {
                sum += shape(n, c, &xi);
                let g = shape_grad(n, c, &xi);
                for d in 0..n {
                    gsum[d] += g[d];
                }
            }
            assert!((sum - 1.0).abs() < 1e-14);
            for d in 0..n {
                assert!(gsum[d].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gauss_weights_sum_to_one() {
        for n in [2usize, 3] {
            let total: f64 = gauss_points(n).iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gauss_integrates_bilinear_exactly() {
        // ∫ xy over [0,1]² = 1/4
        let total: f64 = gauss_points(2)
            .iter()
            .map(|(xi, w)| w * xi[0] * xi[1])
            .sum();
        assert!((total - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ravel_round_trip() {
        let dims = [4usize, 5, 3];
        for id in 0..60 {
            let idx = unravel(id, &dims, 3);
            assert_eq!(ravel(&idx, &dims, 3), id);
        }
    }

    #[test]
    fn shape_is_kronecker_at_corners() {
        for n in [2usize, 3] {
            for c in 0..num_corners(n) {
                let mut xi = [0.0; 3];
                for d in 0..n {
                    xi[d] = corner_offset(c, d) as f64;
                }
                for c2 in 0..num_corners(n) {
                    let v = shape(n, c2, &xi);
                    let expect = if c2 == c { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-15);
                }
            }
        }
    }
}
