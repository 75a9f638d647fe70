//! Matrix models of the isometry group of hyperbolic n-space.
//!
//! Points are *row* vectors in R^{n+1} acted on from the right. The group
//! preserves the bilinear form
//!
//! ```text
//!         [ 0  0  1 ]
//!     J = [ 0 -I  0 ]      <x, y> = x0*yn + xn*y0 - x_mid . y_mid
//!         [ 1  0  0 ]
//! ```
//!
//! whose first and last coordinates are the two null directions of the
//! diagonal flow. Hyperbolic space is the sheet {<x,x> = 1, x0 > 0} with
//! base point o = (1/sqrt(2), 0, ..., 0, 1/sqrt(2)).
//!
//! The distinguished one-parameter subgroups:
//!
//! * `flow(s)` — diag(e^s, I, e^{-s}), the geodesic flow transversal;
//! * `horo(Expanding, t)` — upper unipotent u_t, expanded by conjugation
//!   with positive flow times: a_s u_t a_{-s} = u_{e^s t};
//! * `horo(Contracting, t)` — lower unipotent v_t, the transpose picture,
//!   contracted the same way: a_s v_t a_{-s} = v_{e^{-s} t}.
//!
//! `t` is a vector in R^{n-1}; the quadratic corner entries use its
//! *Euclidean* norm. Window sizes elsewhere use the sup norm — the two
//! conventions are deliberate and independent.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Supported space dimensions. Everything is written for general n, but the
/// lab and its examples are exercised at desk scale.
pub const SUPPORTED_DIMS: [usize; 2] = [2, 3];

/// Tolerance for "this matrix reconstructs the factorization".
pub const RECONSTRUCT_TOL: f64 = 1e-8;

fn check_dim(n: usize) -> Result<()> {
    if n >= 2 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("dimension {n} < 2")))
    }
}

fn check_finite(label: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{label} must be finite")))
    }
}

/// The form matrix J for H^n (an (n+1)x(n+1) matrix).
pub fn form_matrix(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(n + 1, n + 1);
    j[(0, n)] = 1.0;
    j[(n, 0)] = 1.0;
    for i in 1..n {
        j[(i, i)] = -1.0;
    }
    j
}

/// The pairing <x, y> = x J y^T on row vectors of length n+1.
pub fn form_pair(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = x.len() - 1;
    debug_assert_eq!(y.len(), n + 1);
    let mut acc = x[0] * y[n] + x[n] * y[0];
    for i in 1..n {
        acc -= x[i] * y[i];
    }
    acc
}

/// The quadratic form <x, x>.
pub fn form_q(x: &DVector<f64>) -> f64 {
    form_pair(x, x)
}

/// Base point o on the upper sheet: (1, 0, ..., 0, 1)/sqrt(2).
pub fn basepoint(n: usize) -> DVector<f64> {
    let mut o = DVector::zeros(n + 1);
    let c = std::f64::consts::FRAC_1_SQRT_2;
    o[0] = c;
    o[n] = c;
    o
}

/// Which horospherical subgroup a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoroDirection {
    /// u_t: expanded by forward flow conjugation.
    Expanding,
    /// v_t: contracted by forward flow conjugation.
    Contracting,
}

/// Horospherical parameter: a vector in R^{n-1}.
pub type HoroParam = DVector<f64>;

/// An element of the isometry group in the row-vector action convention.
///
/// Products compose left-to-right with the action: x.g.h = x.(g*h).
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzMatrix {
    mat: DMatrix<f64>,
    dim: usize,
}

impl LorentzMatrix {
    pub fn identity(n: usize) -> Self {
        LorentzMatrix {
            mat: DMatrix::identity(n + 1, n + 1),
            dim: n,
        }
    }

    /// Wrap a raw matrix. The caller is responsible for it being (close to)
    /// an isometry of J; see [`lorentz_residual`].
    pub fn from_matrix(mat: DMatrix<f64>) -> Result<Self> {
        let rows = mat.nrows();
        if rows != mat.ncols() || rows < 3 {
            return Err(Error::InvalidArgument(format!(
                "expected square matrix of size >= 3, got {}x{}",
                rows,
                mat.ncols()
            )));
        }
        if mat.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("matrix entries must be finite".into()));
        }
        Ok(LorentzMatrix { mat, dim: rows - 1 })
    }

    /// The diagonal flow a_s = diag(e^s, I, e^{-s}).
    pub fn flow(n: usize, s: f64) -> Result<Self> {
        check_dim(n)?;
        check_finite("flow time", &[s])?;
        let mut m = DMatrix::identity(n + 1, n + 1);
        m[(0, 0)] = s.exp();
        m[(n, n)] = (-s).exp();
        Ok(LorentzMatrix { mat: m, dim: n })
    }

    /// A horospherical element u_t or v_t for t in R^{n-1}.
    pub fn horo(n: usize, dir: HoroDirection, t: &[f64]) -> Result<Self> {
        check_dim(n)?;
        if t.len() != n - 1 {
            return Err(Error::InvalidArgument(format!(
                "horo parameter has length {}, expected {}",
                t.len(),
                n - 1
            )));
        }
        check_finite("horo parameter", t)?;
        let half_sq = 0.5 * t.iter().map(|x| x * x).sum::<f64>();
        let mut m = DMatrix::identity(n + 1, n + 1);
        match dir {
            HoroDirection::Expanding => {
                // [1  t  |t|^2/2; 0 I t^T; 0 0 1]
                for i in 1..n {
                    m[(0, i)] = t[i - 1];
                    m[(i, n)] = t[i - 1];
                }
                m[(0, n)] = half_sq;
            }
            HoroDirection::Contracting => {
                // transpose picture
                for i in 1..n {
                    m[(i, 0)] = t[i - 1];
                    m[(n, i)] = t[i - 1];
                }
                m[(n, 0)] = half_sq;
            }
        }
        Ok(LorentzMatrix { mat: m, dim: n })
    }

    /// Embed a rotation R of the middle block: diag(1, R, 1).
    pub fn rotation(n: usize, r: &DMatrix<f64>) -> Result<Self> {
        check_dim(n)?;
        if r.nrows() != n - 1 || r.ncols() != n - 1 {
            return Err(Error::InvalidArgument(format!(
                "rotation block must be {}x{}",
                n - 1,
                n - 1
            )));
        }
        let ortho = (r.transpose() * r - DMatrix::identity(n - 1, n - 1)).amax();
        if ortho > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "rotation block is not orthogonal (residual {ortho:.2e})"
            )));
        }
        let mut m = DMatrix::identity(n + 1, n + 1);
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                m[(i + 1, j + 1)] = r[(i, j)];
            }
        }
        Ok(LorentzMatrix { mat: m, dim: n })
    }

    /// Plane rotation by `theta` in the middle block (n = 3 only has one).
    pub fn rotation_angle(n: usize, theta: f64) -> Result<Self> {
        if n != 3 {
            return Err(Error::InvalidArgument(
                "angle rotations require dimension 3".into(),
            ));
        }
        let (s, c) = theta.sin_cos();
        let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        Self::rotation(n, &r)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Group inverse. For an isometry of J this is J g^T J, which is a pure
    /// entry shuffle with sign flips — exact in floating point.
    pub fn inverse(&self) -> Self {
        let n = self.dim;
        let sigma = |i: usize| -> usize {
            if i == 0 {
                n
            } else if i == n {
                0
            } else {
                i
            }
        };
        let eps = |i: usize| -> f64 {
            if i == 0 || i == n {
                1.0
            } else {
                -1.0
            }
        };
        let mut inv = DMatrix::zeros(n + 1, n + 1);
        for i in 0..=n {
            for j in 0..=n {
                inv[(i, j)] = eps(i) * eps(j) * self.mat[(sigma(j), sigma(i))];
            }
        }
        LorentzMatrix { mat: inv, dim: n }
    }

    /// Act on a row vector from the right: x -> x g.
    pub fn act_row(&self, x: &DVector<f64>) -> DVector<f64> {
        self.mat.tr_mul(x)
    }

    /// Operator-norm distance from the identity (largest singular value of g - I).
    pub fn dist_to_identity(&self) -> f64 {
        let d = &self.mat - DMatrix::identity(self.dim + 1, self.dim + 1);
        d.singular_values().max()
    }

    pub fn sup_norm(&self) -> f64 {
        self.mat.amax()
    }
}

impl std::ops::Mul for &LorentzMatrix {
    type Output = LorentzMatrix;
    fn mul(self, rhs: &LorentzMatrix) -> LorentzMatrix {
        debug_assert_eq!(self.dim, rhs.dim);
        LorentzMatrix {
            mat: &self.mat * &rhs.mat,
            dim: self.dim,
        }
    }
}

/// Scale-normalized residual of the isometry property g^T J g = J.
///
/// The raw residual of a float product grows like eps * |g|^2 even for
/// perfectly computed words, so the value is reported per unit of matrix
/// size: max-entry of g^T J g - J divided by max(1, |g|_sup). At this scale
/// genuine group words stay at machine precision while a 1e-3 entry
/// perturbation of a generator registers at 1e-4 or larger.
pub fn lorentz_residual(g: &LorentzMatrix) -> f64 {
    let j = form_matrix(g.dim);
    let resid = (g.mat.transpose() * &j * &g.mat - &j).amax();
    resid / g.sup_norm().max(1.0)
}

/// P-part of the P·U factorization: p = a_s · v_r · m with m a rotation of
/// the middle block. The stored fields reproduce the matrix exactly through
/// [`ParabolicElement::matrix`].
#[derive(Debug, Clone)]
pub struct ParabolicElement {
    pub s: f64,
    pub r: DVector<f64>,
    pub rot: DMatrix<f64>,
    dim: usize,
}

impl ParabolicElement {
    pub fn new(n: usize, s: f64, r: DVector<f64>, rot: DMatrix<f64>) -> Result<Self> {
        check_dim(n)?;
        if r.len() != n - 1 || rot.nrows() != n - 1 || rot.ncols() != n - 1 {
            return Err(Error::InvalidArgument(
                "parabolic blocks have wrong dimensions".into(),
            ));
        }
        check_finite("parabolic data", r.as_slice())?;
        check_finite("parabolic flow part", &[s])?;
        Ok(ParabolicElement { s, r, rot, dim: n })
    }

    pub fn identity(n: usize) -> Self {
        ParabolicElement {
            s: 0.0,
            r: DVector::zeros(n - 1),
            rot: DMatrix::identity(n - 1, n - 1),
            dim: n,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether the rotation block is (numerically) trivial.
    pub fn has_trivial_rotation(&self) -> bool {
        (&self.rot - DMatrix::identity(self.dim - 1, self.dim - 1)).amax() < 1e-9
    }

    /// a_s · v_r · m as a matrix.
    pub fn matrix(&self) -> LorentzMatrix {
        let n = self.dim;
        let a = LorentzMatrix::flow(n, self.s).expect("finite flow time");
        let v = LorentzMatrix::horo(n, HoroDirection::Contracting, self.r.as_slice())
            .expect("finite horo parameter");
        let m = LorentzMatrix::rotation(n, &self.rot).expect("orthogonal block");
        &(&a * &v) * &m
    }

    /// Operator-norm distance of the element from the identity.
    pub fn dist_to_identity(&self) -> f64 {
        self.matrix().dist_to_identity()
    }
}

/// Factor g = p · u_t with p = a_s v_r m. The factorization exists and is
/// unique on the open chart where the (0,0) entry is positive; the block
/// entries read off directly:
///
/// ```text
/// g = [ e^s        e^s t          e^s |t|^2/2 ]
///     [ r^T        r^T t + R      ...         ]
///     [ e^{-s}|r|^2/2  ...        ...         ]
/// ```
///
/// so s = log g00, t = g0,mid / g00, r = g_mid,0, R = g_mid,mid - r^T t.
/// The result is verified by reconstruction (relative residual below
/// [`RECONSTRUCT_TOL`]) and the rotation block is checked to be orthogonal.
pub fn decompose_pu(g: &LorentzMatrix) -> Result<(ParabolicElement, HoroParam)> {
    let n = g.dim;
    let m = &g.mat;
    let g00 = m[(0, 0)];
    if !(g00 > 1e-300) || !g00.is_finite() {
        return Err(Error::DecompositionFailed(format!(
            "matrix outside the P·U chart: corner entry {g00:.3e} not positive"
        )));
    }
    let s = g00.ln();
    let mut t = DVector::zeros(n - 1);
    let mut r = DVector::zeros(n - 1);
    for i in 1..n {
        t[i - 1] = m[(0, i)] / g00;
        r[i - 1] = m[(i, 0)];
    }
    let mut rot = DMatrix::zeros(n - 1, n - 1);
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            rot[(i, j)] = m[(i + 1, j + 1)] - r[i] * t[j];
        }
    }
    // Same residual and tolerance as the rotation constructor, so a block
    // accepted here always reassembles.
    let ortho = (rot.transpose() * &rot - DMatrix::identity(n - 1, n - 1)).amax();
    if ortho > 1e-9 {
        return Err(Error::DecompositionFailed(format!(
            "rotation block not orthogonal (residual {ortho:.2e}); \
             input is not near an isometry in the chart"
        )));
    }
    let p = ParabolicElement {
        s,
        r,
        rot,
        dim: n,
    };
    let u = LorentzMatrix::horo(n, HoroDirection::Expanding, t.as_slice())?;
    let recon = &p.matrix() * &u;
    let resid = (&recon.mat - m).amax() / g.sup_norm().max(1.0);
    if resid > RECONSTRUCT_TOL {
        return Err(Error::DecompositionFailed(format!(
            "reconstruction residual {resid:.2e} exceeds {RECONSTRUCT_TOL:.0e}"
        )));
    }
    Ok((p, t))
}

/// Factor g = u_t · p with p = a_s v_r m — the opposite order to
/// [`decompose_pu`]. Since P stabilizes the e_0 direction, t is fixed by
/// requiring u_{-t}·g to have first row proportional to e_0: with
/// z = e_0·g^{-1} this gives t = -z_mid / z_0, and the chart is defined
/// exactly where z_0 > 0.
pub fn decompose_up(g: &LorentzMatrix) -> Result<(HoroParam, ParabolicElement)> {
    let n = g.dim;
    let inv = g.inverse();
    let z = inv.mat.row(0);
    let z0 = z[0];
    if !(z0 > 1e-300) || !z0.is_finite() {
        return Err(Error::DecompositionFailed(format!(
            "matrix outside the U·P chart: inverse corner entry {z0:.3e} not positive"
        )));
    }
    let mut t = DVector::zeros(n - 1);
    for i in 1..n {
        t[i - 1] = -z[i] / z0;
    }
    let neg_t: Vec<f64> = t.iter().map(|x| -x).collect();
    let u_inv = LorentzMatrix::horo(n, HoroDirection::Expanding, &neg_t)?;
    let (p, t_rest) = decompose_pu(&(&u_inv * g))?;
    if t_rest.amax() > RECONSTRUCT_TOL {
        return Err(Error::DecompositionFailed(format!(
            "U·P factorization left a horospherical remainder {:.2e}",
            t_rest.amax()
        )));
    }
    Ok((t, p))
}

/// The return parameter of the horospherical return map: for p = a_s v_r
/// close to the identity and t in the unit window, u_t p^{-1} factors as
/// p' u_{rho_p(t)} with p' again close to the identity. Reading row 1 of
/// the product u_t p^{-1} gives the closed form
///
/// ```text
/// rho_p(t) = e^s (t - |t|^2 r / 2) / (1 - t.r + |r|^2 |t|^2 / 4)
/// ```
///
/// (Euclidean norms). The companion flow part is
/// e^{s'} = e^{-s} (1 - t.r + |r|^2 |t|^2 / 4); see [`rho_p_flow`].
pub fn rho_p(p: &ParabolicElement, t: &[f64]) -> Result<HoroParam> {
    let n = p.dim;
    if t.len() != n - 1 {
        return Err(Error::InvalidArgument(format!(
            "parameter has length {}, expected {}",
            t.len(),
            n - 1
        )));
    }
    check_finite("horo parameter", t)?;
    if !p.has_trivial_rotation() {
        return Err(Error::InvalidArgument(
            "return map requires a trivial rotation block".into(),
        ));
    }
    let denom = rho_denominator(p, t)?;
    let tau = t.iter().map(|x| x * x).sum::<f64>();
    let scale = p.s.exp() / denom;
    let mut out = DVector::zeros(n - 1);
    for i in 0..n - 1 {
        out[i] = scale * (t[i] - 0.5 * tau * p.r[i]);
    }
    Ok(out)
}

/// Flow part s' of the factorization u_t p^{-1} = p' u_{rho_p(t)}:
/// s' = -s + log(1 - t.r + |r|^2 |t|^2 / 4).
pub fn rho_p_flow(p: &ParabolicElement, t: &[f64]) -> Result<f64> {
    let denom = rho_denominator(p, t)?;
    Ok(-p.s + denom.ln())
}

fn rho_denominator(p: &ParabolicElement, t: &[f64]) -> Result<f64> {
    let tau = t.iter().map(|x| x * x).sum::<f64>();
    let rho = p.r.iter().map(|x| x * x).sum::<f64>();
    let dot = t.iter().zip(p.r.iter()).map(|(a, b)| a * b).sum::<f64>();
    let denom = 1.0 - dot + 0.25 * rho * tau;
    if denom <= 1e-12 {
        return Err(Error::SingularConfiguration(format!(
            "return-map denominator {denom:.3e} vanishes; \
             parameters outside the contraction regime"
        )));
    }
    Ok(denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn horo_e(n: usize, t: &[f64]) -> LorentzMatrix {
        LorentzMatrix::horo(n, HoroDirection::Expanding, t).unwrap()
    }

    #[test]
    fn form_preserved_by_generators_of_the_parametrization() {
        for n in SUPPORTED_DIMS {
            let t: Vec<f64> = (0..n - 1).map(|i| 0.3 + 0.2 * i as f64).collect();
            let gs = [
                LorentzMatrix::flow(n, 0.7).unwrap(),
                LorentzMatrix::horo(n, HoroDirection::Expanding, &t).unwrap(),
                LorentzMatrix::horo(n, HoroDirection::Contracting, &t).unwrap(),
            ];
            for g in gs {
                assert!(lorentz_residual(&g) < 1e-12, "residual {}", lorentz_residual(&g));
            }
        }
    }

    #[test]
    fn identity_has_zero_residual() {
        assert_eq!(lorentz_residual(&LorentzMatrix::identity(2)), 0.0);
    }

    #[test]
    fn horo_is_additive() {
        let a = horo_e(3, &[0.4, -0.1]);
        let b = horo_e(3, &[-0.2, 0.35]);
        let ab = &a * &b;
        let direct = horo_e(3, &[0.2, 0.25]);
        assert!((ab.matrix() - direct.matrix()).amax() < 1e-15);
    }

    #[test]
    fn inverse_is_exact_shuffle() {
        let g = &LorentzMatrix::flow(2, 0.9).unwrap() * &horo_e(2, &[0.6]);
        let prod = &g * &g.inverse();
        assert!((prod.matrix() - DMatrix::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn flow_conjugation_scales_horo_parameters() {
        // a_s u_t a_{-s} = u_{e^s t} and a_s v_t a_{-s} = v_{e^{-s} t}
        let n = 3;
        let s = 0.83;
        let t = [0.31, -0.44];
        let a = LorentzMatrix::flow(n, s).unwrap();
        let am = LorentzMatrix::flow(n, -s).unwrap();
        let u = horo_e(n, &t);
        let conj = &(&a * &u) * &am;
        let scaled: Vec<f64> = t.iter().map(|x| x * s.exp()).collect();
        assert!((conj.matrix() - horo_e(n, &scaled).matrix()).amax() < 1e-12);

        let v = LorentzMatrix::horo(n, HoroDirection::Contracting, &t).unwrap();
        let conj_v = &(&a * &v) * &am;
        let shrunk: Vec<f64> = t.iter().map(|x| x * (-s).exp()).collect();
        let v_direct = LorentzMatrix::horo(n, HoroDirection::Contracting, &shrunk).unwrap();
        assert!((conj_v.matrix() - v_direct.matrix()).amax() < 1e-12);
    }

    #[test]
    fn decompose_roundtrip_and_uniqueness() {
        let n = 3;
        let p = ParabolicElement::new(
            n,
            -0.35,
            DVector::from_vec(vec![0.12, -0.07]),
            LorentzMatrix::rotation_angle(3, 0.4)
                .unwrap()
                .matrix()
                .view((1, 1), (2, 2))
                .into_owned(),
        )
        .unwrap();
        let t = [0.5, -0.3];
        let g = &p.matrix() * &horo_e(n, &t);
        let (p2, t2) = decompose_pu(&g).unwrap();
        assert_abs_diff_eq!(p2.s, p.s, epsilon = 1e-12);
        assert!((&p2.r - &p.r).amax() < 1e-12);
        assert!((&p2.rot - &p.rot).amax() < 1e-12);
        assert!((t2.as_slice()[0] - t[0]).abs() < 1e-12);
        assert!((t2.as_slice()[1] - t[1]).abs() < 1e-12);
    }

    #[test]
    fn opposite_order_decompose_roundtrip() {
        let n = 3;
        let p = ParabolicElement::new(
            n,
            0.22,
            DVector::from_vec(vec![-0.4, 0.09]),
            LorentzMatrix::rotation_angle(3, -0.7)
                .unwrap()
                .matrix()
                .view((1, 1), (2, 2))
                .into_owned(),
        )
        .unwrap();
        let t = [0.31, -0.85];
        let g = &horo_e(n, &t) * &p.matrix();
        let (t2, p2) = decompose_up(&g).unwrap();
        assert!((t2.as_slice()[0] - t[0]).abs() < 1e-12);
        assert!((t2.as_slice()[1] - t[1]).abs() < 1e-12);
        assert_abs_diff_eq!(p2.s, p.s, epsilon = 1e-12);
        assert!((&p2.r - &p.r).amax() < 1e-12);
        assert!((&p2.rot - &p.rot).amax() < 1e-12);
        // The two factorization orders agree only at the identity; on a
        // generic element their U-parts differ.
        let (_, t_pu) = decompose_pu(&g).unwrap();
        assert!((t_pu.as_slice()[0] - t[0]).abs() > 1e-3);
    }

    #[test]
    fn decompose_rejects_chart_boundary() {
        // v_r u_t with the corner entry forced to zero is outside the chart.
        let mut m = DMatrix::identity(3, 3);
        m[(0, 0)] = 0.0;
        m[(0, 2)] = 1.0;
        m[(2, 0)] = 1.0;
        m[(2, 2)] = 0.0;
        m[(1, 1)] = -1.0;
        let g = LorentzMatrix::from_matrix(m).unwrap();
        assert!(matches!(
            decompose_pu(&g),
            Err(Error::DecompositionFailed(_))
        ));
    }

    #[test]
    fn rho_matches_frozen_oracle_value() {
        // Oracle: decompose u_t p^{-1} directly for n=2, s=0, r=0.1, t=0.5.
        // The U-part is (0.5 - 0.0125)/0.950625 = 20/39.
        let p = ParabolicElement::new(2, 0.0, DVector::from_vec(vec![0.1]), DMatrix::identity(1, 1))
            .unwrap();
        let rho = rho_p(&p, &[0.5]).unwrap();
        assert_abs_diff_eq!(rho[0], 20.0 / 39.0, epsilon = 1e-14);

        let g = &horo_e(2, &[0.5]) * &p.matrix().inverse();
        let (_, t2) = decompose_pu(&g).unwrap();
        assert_abs_diff_eq!(t2[0], 20.0 / 39.0, epsilon = 1e-13);
    }

    #[test]
    fn rho_reduces_to_flow_conjugation_without_shear() {
        // r = 0: u_t a_{-s}^{-1}... = a_? u_{e^s t}, so rho = e^s t exactly.
        let p = ParabolicElement::new(2, 0.4, DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let rho = rho_p(&p, &[0.25]).unwrap();
        assert_abs_diff_eq!(rho[0], 0.25 * 0.4f64.exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(rho_p_flow(&p, &[0.25]).unwrap(), -0.4, epsilon = 1e-15);
    }

    #[test]
    fn rho_rejects_vanishing_denominator() {
        // t.r = 1 + |r|^2|t|^2/4 forces the denominator through zero.
        let p = ParabolicElement::new(2, 0.0, DVector::from_vec(vec![1.0]), DMatrix::identity(1, 1))
            .unwrap();
        // denominator 1 - t + t^2/4 = (1 - t/2)^2 vanishes at t = 2.
        assert!(matches!(
            rho_p(&p, &[2.0]),
            Err(Error::SingularConfiguration(_))
        ));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(matches!(
            LorentzMatrix::flow(2, f64::NAN),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            LorentzMatrix::horo(3, HoroDirection::Expanding, &[1.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            LorentzMatrix::horo(2, HoroDirection::Expanding, &[f64::INFINITY]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn residual_detects_perturbations() {
        // A dense isometry (flow conjugated between horospherical shears),
        // comparable to a group generator in structure and size.
        let u = LorentzMatrix::horo(2, HoroDirection::Expanding, &[0.7]).unwrap();
        let v = LorentzMatrix::horo(2, HoroDirection::Contracting, &[-0.4]).unwrap();
        let g = &(&u * &LorentzMatrix::flow(2, 1.1).unwrap()) * &v;
        assert!(lorentz_residual(&g) < 1e-14);
        let mut m = g.matrix().clone();
        m[(0, 0)] += 1e-3;
        let bad = LorentzMatrix::from_matrix(m).unwrap();
        assert!(lorentz_residual(&bad) >= 1e-4);
    }
}
