//! Column-orthonormal matrices and the subspace geometry built on them.
//!
//! An [`OrthoBasis`] is a `p x r` matrix `A` with `AᵀA = I_r`. Two bases are
//! compared through their projectors `AAᵀ`, which makes every distance here
//! invariant to a rotation `A -> AR` of the columns.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Max-abs deviation of `AᵀA` from the identity accepted by [`OrthoBasis::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Relative singular value below which a matrix is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Eigen-gap below which an extrinsic mean is flagged as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-12;

/// A `p x r` matrix with orthonormal columns, `1 <= r <= p`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoBasis {
    matrix: DMatrix<f64>,
}

impl OrthoBasis {
    /// Wraps `matrix` after checking the orthonormality invariant.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (p, r) = matrix.shape();
        if r == 0 || r > p {
            return Err(Error::InvalidArgument(format!(
                "basis must satisfy 1 <= r <= p, got p={p}, r={r}"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("basis has non-finite entries".into()));
        }
        let dev = orthonormality_error(&matrix);
        if dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(format!(
                "columns are not orthonormal (max |AᵀA - I| = {dev:e})"
            )));
        }
        Ok(Self { matrix })
    }

    /// The `p x p` identity truncated to its first `r` columns.
    pub fn identity(p: usize, r: usize) -> Result<Self> {
        Self::new(DMatrix::identity(p, r))
    }

    pub(crate) fn from_trusted(matrix: DMatrix<f64>) -> Self {
        debug_assert!(orthonormality_error(&matrix) <= 1e-8);
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn r(&self) -> usize {
        self.matrix.ncols()
    }

    /// `AAᵀ`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.matrix * self.matrix.transpose()
    }

    /// `Aθ`.
    pub fn lift(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.matrix * theta
    }
}

/// Max-abs entry of `AᵀA - I`.
pub fn orthonormality_error(a: &DMatrix<f64>) -> f64 {
    let gram = a.transpose() * a;
    let r = gram.nrows();
    let mut worst = 0.0f64;
    for i in 0..r {
        for j in 0..r {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

fn check_same_shape(a: &OrthoBasis, b: &OrthoBasis) -> Result<()> {
    if a.p() != b.p() || a.r() != b.r() {
        return Err(Error::ShapeMismatch(format!(
            "bases are {}x{} and {}x{}",
            a.p(),
            a.r(),
            b.p(),
            b.r()
        )));
    }
    Ok(())
}

/// Thin QR orthonormalization with a non-negative diagonal in the triangular
/// factor. Fails with [`Error::RankDeficient`] when the numerical rank of `m`
/// is below its column count.
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<OrthoBasis> {
    let (p, r) = m.shape();
    if r == 0 || r > p {
        return Err(Error::InvalidArgument(format!(
            "cannot orthonormalize a {p}x{r} matrix"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let sv = m.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smax == 0.0 || smin < RANK_TOL * smax {
        return Err(Error::RankDeficient(format!(
            "numerical rank below {r} (sigma_min/sigma_max = {:e})",
            if smax == 0.0 { 0.0 } else { smin / smax }
        )));
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let rr = qr.r();
    for j in 0..r {
        if rr[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(OrthoBasis::from_trusted(q))
}

/// `‖AAᵀ - BBᵀ‖₂`, the largest singular value of the projector difference.
pub fn projector_distance_spectral(a: &OrthoBasis, b: &OrthoBasis) -> Result<f64> {
    check_same_shape(a, b)?;
    let diff = a.projector() - b.projector();
    Ok(diff.singular_values().max().clamp(0.0, 1.0))
}

/// `‖AAᵀ - BBᵀ‖_F`.
pub fn projector_distance_frobenius(a: &OrthoBasis, b: &OrthoBasis) -> Result<f64> {
    check_same_shape(a, b)?;
    Ok((a.projector() - b.projector()).norm())
}

/// Spectral projector distance through the `p x r` residual `(I - BBᵀ)A`.
///
/// For equal-rank subspaces `‖AAᵀ - BBᵀ‖₂ = ‖(I - BBᵀ)A‖₂`, so this agrees with
/// [`projector_distance_spectral`] while costing an `r x r` SVD instead of a
/// `p x p` one. The solvers use it in their inner loops.
pub fn projector_distance_spectral_lowrank(a: &OrthoBasis, b: &OrthoBasis) -> Result<f64> {
    check_same_shape(a, b)?;
    Ok(residual_spectral(a.matrix(), b.matrix()))
}

pub(crate) fn residual_spectral(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let resid = a - b * (b.transpose() * a);
    let gram = resid.transpose() * &resid;
    let top = SymmetricEigen::new(gram).eigenvalues.max().max(0.0);
    top.sqrt().min(1.0)
}

/// Result of [`procrustes_align`].
#[derive(Debug, Clone)]
pub struct Procrustes {
    /// Orthogonal `r x r` matrix minimizing `‖A - BR‖_F`.
    pub rotation: DMatrix<f64>,
    /// `‖A - B·rotation‖_F`.
    pub residual: f64,
}

/// Orthogonal Procrustes alignment of `b` onto `a`: `R = UVᵀ` from the SVD
/// `BᵀA = UΣVᵀ`.
pub fn procrustes_align(a: &OrthoBasis, b: &OrthoBasis) -> Result<Procrustes> {
    check_same_shape(a, b)?;
    let cross = b.matrix().transpose() * a.matrix();
    let svd = cross.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let rotation = u * v_t;
    let residual = (a.matrix() - b.matrix() * &rotation).norm();
    Ok(Procrustes { rotation, residual })
}

/// Result of [`extrinsic_mean`].
#[derive(Debug, Clone)]
pub struct ExtrinsicMean {
    pub basis: OrthoBasis,
    /// `λ_r - λ_{r+1}` of the averaged projector (`λ_r` when `r = p`).
    pub eigen_gap: f64,
    /// Set when `eigen_gap < DEGENERATE_GAP`; the subspace is then not unique.
    pub degenerate: bool,
}

/// Top-`r` eigenvectors of `(1/T) Σ_t A_t A_tᵀ`, each column signed so that
/// its largest-magnitude entry is positive.
pub fn extrinsic_mean(bases: &[OrthoBasis]) -> Result<ExtrinsicMean> {
    let first = bases
        .first()
        .ok_or_else(|| Error::InvalidArgument("extrinsic mean of an empty list".into()))?;
    let (p, r) = (first.p(), first.r());
    let mut acc = DMatrix::<f64>::zeros(p, p);
    for b in bases {
        check_same_shape(first, b)?;
        acc += b.projector();
    }
    acc /= bases.len() as f64;
    let (basis, values) = top_eigenvectors(&acc, r);
    let eigen_gap = if r < p { values[r - 1] - values[r] } else { values[r - 1] };
    Ok(ExtrinsicMean {
        basis: OrthoBasis::from_trusted(basis),
        eigen_gap,
        degenerate: eigen_gap < DEGENERATE_GAP,
    })
}

/// Eigenvectors of a symmetric matrix for its `k` largest eigenvalues, in
/// descending order (ties by original index), plus all eigenvalues sorted
/// descending.
pub(crate) fn top_eigenvectors(sym: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let sym = (sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let p = eig.eigenvectors.nrows();
    let mut out = DMatrix::<f64>::zeros(p, k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(idx).clone_owned();
        fix_sign(&mut v);
        out.set_column(col, &v);
    }
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (out, values)
}

/// Flips `v` so that its first largest-magnitude entry is positive.
pub(crate) fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Orthonormal factor of a standard Gaussian `p x r` matrix: the first `r`
/// left singular vectors, signed by the largest-magnitude rule.
pub fn random_orthobasis<R: Rng + ?Sized>(rng: &mut R, p: usize, r: usize) -> Result<OrthoBasis> {
    if r == 0 || r > p {
        return Err(Error::InvalidArgument(format!(
            "random basis needs 1 <= r <= p, got p={p}, r={r}"
        )));
    }
    loop {
        let c = DMatrix::<f64>::from_fn(p, r, |_, _| rng.sample(StandardNormal));
        let svd = c.svd(true, false);
        let sv = &svd.singular_values;
        if sv.min() < RANK_TOL * sv.max() {
            continue;
        }
        let mut u = svd.u.expect("u requested");
        for j in 0..r {
            let mut col = u.column(j).clone_owned();
            fix_sign(&mut col);
            u.set_column(j, &col);
        }
        return Ok(OrthoBasis::from_trusted(u));
    }
}

/// Projection of an ambient direction onto the tangent space of the Stiefel
/// manifold at `a`: `G - A sym(AᵀG)`.
pub fn tangent_project(a: &OrthoBasis, g: &DMatrix<f64>) -> DMatrix<f64> {
    let at_g = a.matrix().transpose() * g;
    let sym = (&at_g + at_g.transpose()) * 0.5;
    g - a.matrix() * sym
}

/// QR retraction of `a + step·direction` back onto the manifold.
pub fn qr_retract(a: &OrthoBasis, direction: &DMatrix<f64>, step: f64) -> Result<OrthoBasis> {
    orthonormalize(&(a.matrix() + direction * step))
}

/// A subgradient of `A ↦ ‖AAᵀ - CCᵀ‖₂` at `A`.
///
/// With `(σ, u)` the eigenpair of `D = AAᵀ - CCᵀ` of largest `|σ|`, this is
/// `2·sign(σ)·uuᵀA`. Returns zero when `D` vanishes.
pub fn spectral_penalty_subgradient(a: &OrthoBasis, center: &OrthoBasis) -> DMatrix<f64> {
    let d = a.projector() - center.projector();
    let eig = SymmetricEigen::new(d);
    let mut best = 0usize;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i].abs() > eig.eigenvalues[best].abs() {
            best = i;
        }
    }
    let sigma = eig.eigenvalues[best];
    if sigma.abs() <= f64::EPSILON {
        return DMatrix::zeros(a.p(), a.r());
    }
    let u = eig.eigenvectors.column(best);
    let ut_a = u.transpose() * a.matrix();
    (u * ut_a) * (2.0 * sigma.signum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn line(angle: f64) -> OrthoBasis {
        OrthoBasis::new(DMatrix::from_column_slice(2, 1, &[angle.cos(), angle.sin()])).unwrap()
    }

    /// Classical Gram-Schmidt, written independently of the QR path.
    fn gram_schmidt(m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut q = DMatrix::<f64>::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            let mut v: Vec<f64> = m.column(j).iter().copied().collect();
            for k in 0..j {
                let dot: f64 = (0..m.nrows()).map(|i| q[(i, k)] * m[(i, j)]).sum();
                for (i, vi) in v.iter_mut().enumerate() {
                    *vi -= dot * q[(i, k)];
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (i, vi) in v.iter().enumerate() {
                q[(i, j)] = vi / norm;
            }
        }
        q
    }

    #[test]
    fn orthonormalize_identity_and_scaled_identity() {
        let eye = DMatrix::<f64>::identity(3, 2);
        assert_eq!(orthonormalize(&eye).unwrap().matrix(), &eye);
        let q = orthonormalize(&(eye.clone() * 2.0)).unwrap();
        assert!((q.matrix() - &eye).abs().max() < 1e-15);
    }

    #[test]
    fn orthonormalize_matches_gram_schmidt_projector() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let q = orthonormalize(&m).unwrap();
        assert!(orthonormality_error(q.matrix()) < 1e-12);
        let gs = gram_schmidt(&m);
        let diff = q.projector() - &gs * gs.transpose();
        assert!(diff.abs().max() < 1e-12);
        // Gram-Schmidt has positive diagonal in R too, so the factors coincide.
        assert!((q.matrix() - gs).abs().max() < 1e-12);
    }

    #[test]
    fn orthonormalize_rejects_rank_deficiency() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(orthonormalize(&m), Err(Error::RankDeficient(_))));
        assert!(matches!(
            orthonormalize(&DMatrix::zeros(3, 1)),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn new_rejects_non_orthonormal() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(OrthoBasis::new(m).is_err());
        assert!(OrthoBasis::new(DMatrix::identity(2, 3)).is_err());
    }

    #[test]
    fn spectral_distance_examples() {
        let e1 = line(0.0);
        let e2 = line(PI / 2.0);
        assert_eq!(projector_distance_spectral(&e1, &e1).unwrap(), 0.0);
        assert!((projector_distance_spectral(&e1, &e2).unwrap() - 1.0).abs() < 1e-12);
        // eigenvalues of the 2x2 projector difference are ±sin(π/4)
        let d = projector_distance_spectral(&e1, &line(PI / 4.0)).unwrap();
        assert!((d - (0.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn frobenius_distance_examples() {
        let e1 = line(0.0);
        let e2 = line(PI / 2.0);
        assert_eq!(projector_distance_frobenius(&e1, &e1).unwrap(), 0.0);
        assert!((projector_distance_frobenius(&e1, &e2).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let f = projector_distance_frobenius(&e1, &line(PI / 4.0)).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = OrthoBasis::identity(3, 1).unwrap();
        let b = OrthoBasis::identity(3, 2).unwrap();
        assert!(matches!(
            projector_distance_spectral(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(projector_distance_frobenius(&a, &b).is_err());
        assert!(procrustes_align(&a, &b).is_err());
        assert!(extrinsic_mean(&[a, b]).is_err());
    }

    #[test]
    fn procrustes_identity_and_known_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_orthobasis(&mut rng, 5, 2).unwrap();
        let same = procrustes_align(&a, &a).unwrap();
        assert!(same.residual < 1e-12);
        assert!((same.rotation - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-12);

        let phi = 0.7f64;
        let r0 = DMatrix::from_row_slice(2, 2, &[phi.cos(), -phi.sin(), phi.sin(), phi.cos()]);
        let b = OrthoBasis::new(a.matrix() * &r0).unwrap();
        let fit = procrustes_align(&a, &b).unwrap();
        assert!(fit.residual < 1e-12);
        assert!((fit.rotation - r0.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn procrustes_sandwich_random_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_orthobasis(&mut rng, 4, 2).unwrap();
        let b = random_orthobasis(&mut rng, 4, 2).unwrap();
        let d_f = projector_distance_frobenius(&a, &b).unwrap();
        let res = procrustes_align(&a, &b).unwrap().residual;
        assert!(res >= d_f / 2f64.sqrt() - 1e-12 && res <= d_f + 1e-12);
    }

    #[test]
    fn extrinsic_mean_of_identical_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_orthobasis(&mut rng, 6, 2).unwrap();
        let mean = extrinsic_mean(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert!(!mean.degenerate);
        assert!(projector_distance_spectral(&mean.basis, &a).unwrap() < 1e-12);
    }

    #[test]
    fn extrinsic_mean_orthogonal_lines_is_degenerate() {
        let mean = extrinsic_mean(&[line(0.0), line(PI / 2.0)]).unwrap();
        assert!(mean.degenerate);
        assert!(orthonormality_error(mean.basis.matrix()) < 1e-12);
    }

    #[test]
    fn extrinsic_mean_symmetric_fan_matches_grid_search() {
        let inputs = [line(0.0), line(PI / 6.0), line(-PI / 6.0)];
        // brute-force oracle: minimize Σ ‖P(φ) - P_t‖_F² over a grid, then refine
        let cost = |phi: f64| -> f64 {
            inputs
                .iter()
                .map(|b| projector_distance_frobenius(&line(phi), b).unwrap().powi(2))
                .sum()
        };
        let mut best = 0.0;
        let mut best_cost = f64::INFINITY;
        for k in 0..=20_000 {
            let phi = -PI / 2.0 + PI * k as f64 / 20_000.0;
            let c = cost(phi);
            if c < best_cost {
                best_cost = c;
                best = phi;
            }
        }
        let (mut lo, mut hi) = (best - 1e-3, best + 1e-3);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if cost(m1) < cost(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let oracle = line(0.5 * (lo + hi));
        let mean = extrinsic_mean(&inputs).unwrap();
        assert!(projector_distance_spectral(&mean.basis, &oracle).unwrap() < 1e-8);
        assert!(projector_distance_spectral(&mean.basis, &line(0.0)).unwrap() < 1e-8);
    }

    #[test]
    fn extrinsic_mean_sign_convention() {
        let mean = extrinsic_mean(&[line(PI - 0.1)]).unwrap();
        let col = mean.basis.matrix().column(0);
        let big = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(big > 0.0);
    }

    #[test]
    fn random_orthobasis_is_valid_and_deterministic() {
        let a = random_orthobasis(&mut ChaCha8Rng::seed_from_u64(9), 20, 3).unwrap();
        let b = random_orthobasis(&mut ChaCha8Rng::seed_from_u64(9), 20, 3).unwrap();
        let c = random_orthobasis(&mut ChaCha8Rng::seed_from_u64(10), 20, 3).unwrap();
        assert!(OrthoBasis::new(a.matrix().clone()).is_ok());
        assert_eq!(a, b);
        assert!(projector_distance_spectral(&a, &c).unwrap() > 0.0);
        assert!(random_orthobasis(&mut ChaCha8Rng::seed_from_u64(9), 2, 3).is_err());
    }

    #[test]
    fn lowrank_route_matches_full_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let a = random_orthobasis(&mut rng, 8, 3).unwrap();
            let b = random_orthobasis(&mut rng, 8, 3).unwrap();
            let full = projector_distance_spectral(&a, &b).unwrap();
            let fast = projector_distance_spectral_lowrank(&a, &b).unwrap();
            assert!((full - fast).abs() < 1e-10);
        }
        let a = random_orthobasis(&mut rng, 8, 3).unwrap();
        assert!(projector_distance_spectral_lowrank(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn subgradient_is_a_branch_derivative() {
        // Eigenvalues of a projector difference come in ± pairs, so the norm is
        // a max over tied branches: its one-sided derivative dominates the
        // derivative of the branch the subgradient picks.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_orthobasis(&mut rng, 6, 2).unwrap();
        let c = random_orthobasis(&mut rng, 6, 2).unwrap();
        let g = spectral_penalty_subgradient(&a, &c);
        let f = |m: &DMatrix<f64>| (m * m.transpose() - c.projector()).singular_values().max();
        let h = 1e-7;
        for k in 0..10 {
            let dir = DMatrix::<f64>::from_fn(6, 2, |i, j| ((i * 3 + j + 7 * k) as f64).sin());
            let one_sided = (f(&(a.matrix() + &dir * h)) - f(a.matrix())) / h;
            assert!(one_sided >= g.dot(&dir) - 1e-5, "{one_sided} < {}", g.dot(&dir));
        }
        assert_eq!(spectral_penalty_subgradient(&a, &a).abs().max(), 0.0);
    }

    #[test]
    fn retraction_stays_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_orthobasis(&mut rng, 7, 3).unwrap();
        let g = DMatrix::<f64>::from_fn(7, 3, |i, j| (i as f64 - j as f64) * 0.3);
        let xi = tangent_project(&a, &g);
        let sym = a.matrix().transpose() * &xi;
        assert!((&sym + sym.transpose()).abs().max() < 1e-12);
        let next = qr_retract(&a, &xi, 0.5).unwrap();
        assert!(orthonormality_error(next.matrix()) <= 1e-10);
    }
}
