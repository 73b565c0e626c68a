//! Dense complex linear algebra with explicit rank tolerances.
//!
//! Every rank decision in the crate goes through [`numerical_rank`], which
//! counts singular values above a threshold relative to the largest one.
//! Null-space bases are post-processed (ordering and phase) so that repeated
//! runs on identical inputs produce bit-identical outputs.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;

/// Relative thresholds used for rank decisions and residual checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub rank_rel_tol: f64,
    pub residual_rel_tol: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self {
            rank_rel_tol: 1e-8,
            residual_rel_tol: 1e-9,
        }
    }
}

impl TolerancePolicy {
    pub fn new(rank_rel_tol: f64, residual_rel_tol: f64) -> Result<Self> {
        for (name, v) in [
            ("rank_rel_tol", rank_rel_tol),
            ("residual_rel_tol", residual_rel_tol),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        Ok(Self {
            rank_rel_tol,
            residual_rel_tol,
        })
    }
}

pub fn check_finite(m: &ComplexMatrix) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

/// Full SVD pieces with singular values sorted in descending order.
struct SortedSvd {
    /// rows x k
    u: ComplexMatrix,
    /// k singular values, descending
    sigma: Vec<f64>,
    /// cols x k (right singular vectors as columns)
    v: ComplexMatrix,
}

fn sorted_svd(m: &ComplexMatrix) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").adjoint();
    let raw: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]).then(a.cmp(&b)));
    let sigma = order.iter().map(|&i| raw[i]).collect();
    let u = ComplexMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = ComplexMatrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]);
    SortedSvd { u, sigma, v }
}

/// Singular values in descending order (empty for an empty matrix).
pub fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn rank_of(sigma: &[f64], tol: &TolerancePolicy) -> usize {
    let max = sigma.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    let threshold = tol.rank_rel_tol * max;
    sigma.iter().filter(|&&s| s > threshold).count()
}

pub fn numerical_rank(m: &ComplexMatrix, tol: &TolerancePolicy) -> Result<usize> {
    check_finite(m)?;
    Ok(rank_of(&singular_values(m), tol))
}

/// Rank with the threshold taken relative to `max(scale, sigma_max(m))`.
/// Use for sums whose terms may cancel, passing the largest term's norm.
pub fn numerical_rank_at_scale(
    m: &ComplexMatrix,
    scale: f64,
    tol: &TolerancePolicy,
) -> Result<usize> {
    check_finite(m)?;
    let sigma = singular_values(m);
    let reference = sigma.first().copied().unwrap_or(0.0).max(scale);
    if reference <= 0.0 {
        return Ok(0);
    }
    let threshold = tol.rank_rel_tol * reference;
    Ok(sigma.iter().filter(|&&s| s > threshold).count())
}

/// Largest singular value; zero for empty matrices.
pub fn spectral_norm(m: &ComplexMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Rotate each column so its largest-magnitude entry (first one on ties) is
/// real and positive.
pub fn phase_normalize_columns(m: &mut ComplexMatrix) {
    for mut col in m.column_iter_mut() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for (i, z) in col.iter().enumerate() {
            let a = z.norm();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if best_abs > 0.0 {
            let pivot = col[best];
            let rot = pivot.conj() / pivot.norm();
            for z in col.iter_mut() {
                *z *= rot;
            }
            col[best] = Complex64::new(col[best].re, 0.0);
        }
    }
}

/// Orthonormal basis of the right null space, one column per null direction,
/// ordered by ascending singular value and phase-normalized.
pub fn null_space_basis(m: &ComplexMatrix, tol: &TolerancePolicy) -> Result<ComplexMatrix> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Ok(ComplexMatrix::zeros(0, 0));
    }
    if rows == 0 {
        return Ok(ComplexMatrix::identity(cols, cols));
    }
    // Square up short-and-wide inputs so the SVD yields a full right basis.
    let padded = if rows < cols {
        let mut p = ComplexMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = sorted_svd(&padded);
    let rank = rank_of(&svd.sigma, tol);
    let null_dim = cols - rank;
    let mut basis = ComplexMatrix::zeros(cols, null_dim);
    for (out, idx) in (rank..cols).rev().enumerate() {
        basis.set_column(out, &svd.v.column(idx));
    }
    phase_normalize_columns(&mut basis);
    Ok(basis)
}

/// Rows spanning the left null space (`w · m = 0`), orthonormal.
pub fn left_null_space_rows(m: &ComplexMatrix, tol: &TolerancePolicy) -> Result<ComplexMatrix> {
    Ok(null_space_basis(&m.adjoint(), tol)?.adjoint())
}

/// Moore–Penrose pseudo-inverse; singular values at or below the rank
/// threshold are treated as zero.
pub fn pseudo_inverse(m: &ComplexMatrix, tol: &TolerancePolicy) -> Result<ComplexMatrix> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    if m.is_empty() {
        return Ok(ComplexMatrix::zeros(cols, rows));
    }
    let svd = sorted_svd(m);
    let rank = rank_of(&svd.sigma, tol);
    let mut out = ComplexMatrix::zeros(cols, rows);
    for k in 0..rank {
        let inv = 1.0 / svd.sigma[k];
        let vk = svd.v.column(k);
        let uk = svd.u.column(k);
        out += (vk * uk.adjoint()) * Complex64::new(inv, 0.0);
    }
    Ok(out)
}

/// `m11 - m12 · m22⁻¹ · m21` where `m22` is the block below `split_row` and
/// right of `split_col`.
pub fn schur_complement(
    m: &ComplexMatrix,
    split_row: usize,
    split_col: usize,
    tol: &TolerancePolicy,
) -> Result<ComplexMatrix> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    if split_row > rows || split_col > cols {
        return Err(Error::InvalidInput(format!(
            "split ({split_row}, {split_col}) outside {rows}x{cols} matrix"
        )));
    }
    let r2 = rows - split_row;
    let c2 = cols - split_col;
    if r2 != c2 {
        return Err(Error::InvalidInput(format!(
            "lower-right block is {r2}x{c2}, not square"
        )));
    }
    let m11 = m.view((0, 0), (split_row, split_col)).into_owned();
    if r2 == 0 {
        return Ok(m11);
    }
    let m12 = m.view((0, split_col), (split_row, c2)).into_owned();
    let m21 = m.view((split_row, 0), (r2, split_col)).into_owned();
    let m22 = m.view((split_row, split_col), (r2, c2)).into_owned();
    let rank = rank_of(&singular_values(&m22), tol);
    if rank < r2 {
        return Err(Error::SingularBlock { size: r2, rank });
    }
    let solved = m22
        .lu()
        .solve(&m21)
        .ok_or(Error::SingularBlock { size: r2, rank })?;
    Ok(m11 - m12 * solved)
}

pub fn hstack(blocks: &[&ComplexMatrix]) -> ComplexMatrix {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = ComplexMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), b.shape()).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[&ComplexMatrix]) -> ComplexMatrix {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = ComplexMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), b.shape()).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// `[[a, b], [c, d]]`; block shapes must be compatible.
pub fn block2x2(
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    c: &ComplexMatrix,
    d: &ComplexMatrix,
) -> ComplexMatrix {
    vstack(&[&hstack(&[a, b]), &hstack(&[c, d])])
}

/// `diag(a, b)`.
pub fn block_diag2(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ra, ca) = a.shape();
    let mut out = ComplexMatrix::zeros(ra + b.nrows(), ca + b.ncols());
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), b.shape()).copy_from(b);
    out
}

/// Columns `start..start+count` as an owned matrix.
pub fn columns(m: &ComplexMatrix, start: usize, count: usize) -> ComplexMatrix {
    m.view((0, start), (m.nrows(), count)).into_owned()
}

/// Rows `start..start+count` as an owned matrix.
pub fn rows(m: &ComplexMatrix, start: usize, count: usize) -> ComplexMatrix {
    m.view((start, 0), (count, m.ncols())).into_owned()
}

/// Sub-block copy with zero-size blocks allowed.
pub fn block(m: &ComplexMatrix, r0: usize, c0: usize, nr: usize, nc: usize) -> ComplexMatrix {
    m.view((r0, c0), (nr, nc)).into_owned()
}

/// Orthonormal basis of span(base)⊥ ∩ span(base ∪ extra), taking `extra`
/// columns in order. Used to complete beamformers to full column rank.
pub fn orthonormal_completion(
    base: &ComplexMatrix,
    extra: &ComplexMatrix,
    tol: &TolerancePolicy,
) -> Result<ComplexMatrix> {
    let projector = if base.ncols() == 0 {
        ComplexMatrix::zeros(extra.nrows(), extra.nrows())
    } else {
        base * pseudo_inverse(base, tol)?
    };
    let residual = extra - projector * extra;
    if residual.ncols() == 0 {
        return Ok(residual);
    }
    let q = residual.clone().qr().q();
    Ok(columns(&q, 0, residual.ncols().min(q.ncols())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            c(re, im)
        })
    }

    #[test]
    fn rank_at_scale_ignores_cancellation_residue() {
        let t = TolerancePolicy::default();
        let tiny = ComplexMatrix::identity(3, 3) * Complex64::new(1e-14, 0.0);
        assert_eq!(numerical_rank(&tiny, &t).unwrap(), 3);
        assert_eq!(numerical_rank_at_scale(&tiny, 1.0, &t).unwrap(), 0);
        assert_eq!(
            numerical_rank_at_scale(&ComplexMatrix::identity(3, 2), 0.0, &t).unwrap(),
            2
        );
        assert_eq!(
            numerical_rank_at_scale(&ComplexMatrix::zeros(2, 2), 0.0, &t).unwrap(),
            0
        );
    }

    #[test]
    fn rank_of_identity_and_zero() {
        let tol = TolerancePolicy::default();
        assert_eq!(
            numerical_rank(&ComplexMatrix::identity(4, 4), &tol).unwrap(),
            4
        );
        assert_eq!(
            numerical_rank(&ComplexMatrix::zeros(2, 3), &tol).unwrap(),
            0
        );
        assert_eq!(
            numerical_rank(&ComplexMatrix::zeros(0, 3), &tol).unwrap(),
            0
        );
    }

    #[test]
    fn rank_rejects_non_finite() {
        let mut m = ComplexMatrix::identity(2, 2);
        m[(0, 1)] = c(f64::NAN, 0.0);
        assert!(matches!(
            numerical_rank(&m, &TolerancePolicy::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn tolerance_bounds() {
        assert!(TolerancePolicy::new(0.0, 1e-9).is_err());
        assert!(TolerancePolicy::new(1e-8, 1.0).is_err());
        assert!(TolerancePolicy::new(1e-6, 1e-7).is_ok());
    }

    #[test]
    fn side_by_side_generic_blocks_have_full_row_rank() {
        let tol = TolerancePolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = random(4, 4, &mut rng);
            let b = random(4, 4, &mut rng);
            let m = hstack(&[&a, &b]);
            // oracle: smallest singular value of a generic 4x8 is far from zero
            let s = singular_values(&m);
            assert!(s[3] > 1e-6 * s[0]);
            assert_eq!(numerical_rank(&m, &tol).unwrap(), 4);
        }
    }

    #[test]
    fn null_space_of_row_vector() {
        let m = ComplexMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(1.0, 0.0)]);
        let n = null_space_basis(&m, &TolerancePolicy::default()).unwrap();
        assert_eq!(n.shape(), (2, 1));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(n[(0, 0)].re, h, epsilon = 1e-12);
        assert_relative_eq!(n[(0, 0)].im, 0.0, epsilon = 1e-15);
        assert_relative_eq!(n[(1, 0)].re, -h, epsilon = 1e-12);
        assert_relative_eq!(n[(1, 0)].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn null_space_dimensions_for_generic_shapes() {
        let tol = TolerancePolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let wide = random(4, 6, &mut rng);
        assert_eq!(null_space_basis(&wide, &tol).unwrap().ncols(), 2);
        // (2M+N) x (2M+L) with M=4, N=2, L=4
        let stacked = random(10, 12, &mut rng);
        assert!(null_space_basis(&stacked, &tol).unwrap().ncols() >= 2);
        let tall = random(6, 4, &mut rng);
        assert_eq!(null_space_basis(&tall, &tol).unwrap().ncols(), 0);
    }

    #[test]
    fn null_space_columns_are_orthonormal_and_phase_fixed() {
        let tol = TolerancePolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random(3, 7, &mut rng);
        let n = null_space_basis(&m, &tol).unwrap();
        let gram = n.adjoint() * &n;
        assert_relative_eq!(
            (gram - ComplexMatrix::identity(4, 4)).norm(),
            0.0,
            epsilon = 1e-12
        );
        for col in n.column_iter() {
            let (idx, _) = col.iter().enumerate().fold((0, -1.0), |acc, (i, z)| {
                if z.norm() > acc.1 {
                    (i, z.norm())
                } else {
                    acc
                }
            });
            assert!(col[idx].re > 0.0);
            assert_eq!(col[idx].im, 0.0);
        }
    }

    #[test]
    fn null_space_of_empty_row_matrix_is_everything() {
        let n = null_space_basis(&ComplexMatrix::zeros(0, 3), &TolerancePolicy::default()).unwrap();
        assert_eq!(n, ComplexMatrix::identity(3, 3));
    }

    #[test]
    fn pseudo_inverse_identity_and_left_inverse() {
        let tol = TolerancePolicy::default();
        let i = ComplexMatrix::identity(3, 3);
        assert_relative_eq!(
            (pseudo_inverse(&i, &tol).unwrap() - &i).norm(),
            0.0,
            epsilon = 1e-14
        );
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random(4, 2, &mut rng);
        let li = pseudo_inverse(&g, &tol).unwrap() * &g;
        assert!((li - ComplexMatrix::identity(2, 2)).norm() <= tol.residual_rel_tol);
    }

    #[test]
    fn pseudo_inverse_of_rank_one() {
        let tol = TolerancePolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let m = random(2, 1, &mut rng) * random(1, 2, &mut rng);
            // oracle: second singular value vanishes
            let s = singular_values(&m);
            assert!(s[1] <= 1e-12 * s[0]);
            let p = pseudo_inverse(&m, &tol).unwrap();
            let rec = &m * &p * &m;
            assert!((rec - &m).norm() <= tol.residual_rel_tol * m.norm());
        }
    }

    #[test]
    fn schur_of_block_diagonal_keeps_top_left() {
        let tol = TolerancePolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(2, 2, &mut rng);
        let d = random(3, 3, &mut rng);
        let m = block2x2(
            &a,
            &ComplexMatrix::zeros(2, 3),
            &ComplexMatrix::zeros(3, 2),
            &d,
        );
        let s = schur_complement(&m, 2, 2, &tol).unwrap();
        assert_relative_eq!((s - a).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn schur_scalar_case() {
        let m = ComplexMatrix::from_row_slice(
            2,
            2,
            &[c(1.0, 2.0), c(3.0, -1.0), c(0.5, 0.0), c(2.0, 1.0)],
        );
        let s = schur_complement(&m, 1, 1, &TolerancePolicy::default()).unwrap();
        let expected = c(1.0, 2.0) - c(3.0, -1.0) / c(2.0, 1.0) * c(0.5, 0.0);
        assert_relative_eq!((s[(0, 0)] - expected).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn schur_rejects_singular_or_rectangular_block() {
        let tol = TolerancePolicy::default();
        let m = ComplexMatrix::identity(3, 3);
        assert!(matches!(
            schur_complement(&m, 1, 2, &tol),
            Err(Error::InvalidInput(_))
        ));
        let mut s = ComplexMatrix::identity(3, 3);
        s[(2, 2)] = c(0.0, 0.0);
        assert!(matches!(
            schur_complement(&s, 1, 1, &tol),
            Err(Error::SingularBlock { size: 2, rank: 1 })
        ));
    }

    #[test]
    fn schur_with_empty_lower_block_returns_whole_matrix() {
        let m = ComplexMatrix::identity(2, 2);
        let s = schur_complement(&m, 2, 2, &TolerancePolicy::default()).unwrap();
        assert_eq!(s, m);
    }

    #[test]
    fn zero_inner_dimension_product_is_zero_matrix() {
        let a = ComplexMatrix::zeros(3, 0);
        let b = ComplexMatrix::zeros(0, 2);
        assert_eq!(a * b, ComplexMatrix::zeros(3, 2));
    }

    #[test]
    fn completion_is_orthogonal_to_base() {
        let tol = TolerancePolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = random(4, 2, &mut rng);
        let extra = random(4, 2, &mut rng);
        let q = orthonormal_completion(&base, &extra, &tol).unwrap();
        assert_eq!(q.shape(), (4, 2));
        assert!((base.adjoint() * &q).norm() < 1e-12);
        assert_eq!(numerical_rank(&hstack(&[&base, &q]), &tol).unwrap(), 4);
    }
}
