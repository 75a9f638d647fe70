//! Points, boundary points, frames, and the compactification geometry:
//! hyperbolic distance, Busemann cocycle, Gromov visual distance, endpoint
//! maps and the horospherical projection.
//!
//! Two models are kept in sync on every point:
//!
//! * the quadric sheet {<x,x> = 1, x forward} in the form coordinates of
//!   [`crate::lorentz`], used for all group actions, and
//! * the unit ball, reached through the linear change of basis
//!   y0 = (x0+xn)/sqrt(2), y_i = x_i, y_n = (x0-xn)/sqrt(2), followed by
//!   b = (y1..yn)/(1+y0).
//!
//! In ball coordinates the base point is the origin, the forward fixed
//! point of the flow is the north pole (0,..,0,1) and the backward one is
//! the south pole.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::lorentz::{basepoint, form_pair, form_q, HoroParam, LorentzMatrix};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Change of basis form-coordinates -> standard Minkowski coordinates.
fn to_standard(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len() - 1;
    let mut y = DVector::zeros(n + 1);
    y[0] = (x[0] + x[n]) / SQRT2;
    for i in 1..n {
        y[i] = x[i];
    }
    y[n] = (x[0] - x[n]) / SQRT2;
    y
}

/// Inverse change of basis.
fn from_standard(y: &DVector<f64>) -> DVector<f64> {
    let n = y.len() - 1;
    let mut x = DVector::zeros(n + 1);
    x[0] = (y[0] + y[n]) / SQRT2;
    for i in 1..n {
        x[i] = y[i];
    }
    x[n] = (y[0] - y[n]) / SQRT2;
    x
}

/// A point of hyperbolic n-space, cached in both models.
#[derive(Debug, Clone)]
pub struct HyperbolicPoint {
    lorentz: DVector<f64>,
    ball: DVector<f64>,
}

impl HyperbolicPoint {
    /// Base point o (the ball-model origin).
    pub fn origin(n: usize) -> Self {
        HyperbolicPoint {
            lorentz: basepoint(n),
            ball: DVector::zeros(n),
        }
    }

    /// From form coordinates; the vector is rescaled onto the unit sheet.
    pub fn from_lorentz(x: DVector<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("point must be finite".into()));
        }
        let q = form_q(&x);
        if q <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "vector is not timelike (Q = {q:.3e})"
            )));
        }
        let x = x / q.sqrt();
        let n = x.len() - 1;
        if x[0] + x[n] <= 0.0 {
            return Err(Error::InvalidArgument("point is on the backward sheet".into()));
        }
        let y = to_standard(&x);
        let mut ball = DVector::zeros(n);
        for i in 1..=n {
            ball[i - 1] = y[i] / (1.0 + y[0]);
        }
        Ok(HyperbolicPoint { lorentz: x, ball })
    }

    /// From ball coordinates, |b| < 1.
    pub fn from_ball(b: DVector<f64>) -> Result<Self> {
        let norm2 = b.norm_squared();
        if !norm2.is_finite() || norm2 >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "ball point must satisfy |b| < 1 (got |b|^2 = {norm2:.6})"
            )));
        }
        let n = b.len();
        let mut y = DVector::zeros(n + 1);
        let denom = 1.0 - norm2;
        y[0] = (1.0 + norm2) / denom;
        for i in 1..=n {
            y[i] = 2.0 * b[i - 1] / denom;
        }
        Ok(HyperbolicPoint {
            lorentz: from_standard(&y),
            ball: b,
        })
    }

    pub fn dim(&self) -> usize {
        self.ball.len()
    }

    pub fn lorentz(&self) -> &DVector<f64> {
        &self.lorentz
    }

    pub fn ball(&self) -> &DVector<f64> {
        &self.ball
    }

    /// Right action of the group.
    pub fn apply(&self, g: &LorentzMatrix) -> Result<Self> {
        HyperbolicPoint::from_lorentz(g.act_row(&self.lorentz))
    }
}

/// A boundary point, stored as a unit ball-model vector together with the
/// null representative normalized against the base point: <o, null> = 1.
#[derive(Debug, Clone)]
pub struct BoundaryPoint {
    ball: DVector<f64>,
    null: DVector<f64>,
}

impl BoundaryPoint {
    /// From a unit vector on the ball-model sphere. The associated null
    /// representative automatically satisfies <o, null> = 1.
    pub fn from_ball(dir: DVector<f64>) -> Result<Self> {
        let norm = dir.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidArgument("boundary direction must be nonzero".into()));
        }
        let dir = dir / norm;
        let n = dir.len();
        let mut y = DVector::zeros(n + 1);
        y[0] = 1.0;
        for i in 1..=n {
            y[i] = dir[i - 1];
        }
        Ok(BoundaryPoint {
            null: from_standard(&y),
            ball: dir,
        })
    }

    /// From any forward null vector (rescaled so <o, null> = 1).
    pub fn from_null(x: DVector<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("null vector must be finite".into()));
        }
        let n = x.len() - 1;
        let scale = x.amax();
        if scale <= 0.0 {
            return Err(Error::InvalidArgument("null vector must be nonzero".into()));
        }
        let q_rel = form_q(&x).abs() / (scale * scale);
        if q_rel > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "vector is not null (relative Q residual {q_rel:.2e})"
            )));
        }
        let pair_o = form_pair(&basepoint(n), &x);
        if pair_o <= 0.0 {
            return Err(Error::InvalidArgument(
                "null vector is not on the forward cone".into(),
            ));
        }
        let null = x / pair_o;
        let y = to_standard(&null);
        let mut ball = DVector::zeros(n);
        for i in 1..=n {
            ball[i - 1] = y[i] / y[0];
        }
        let bn = ball.norm();
        ball /= bn;
        Ok(BoundaryPoint { ball, null })
    }

    pub fn dim(&self) -> usize {
        self.ball.len()
    }

    /// Unit vector on the sphere at infinity (ball model).
    pub fn ball(&self) -> &DVector<f64> {
        &self.ball
    }

    /// Null representative with <o, rep> = 1.
    pub fn null(&self) -> &DVector<f64> {
        &self.null
    }

    /// Right boundary action of the group.
    pub fn apply(&self, g: &LorentzMatrix) -> Result<Self> {
        BoundaryPoint::from_null(g.act_row(&self.null))
    }

    /// Euclidean (chordal) distance between ball representatives.
    pub fn chordal(&self, other: &BoundaryPoint) -> f64 {
        (&self.ball - &other.ball).norm()
    }
}

/// A frame: a group element g regarded as the image of the reference frame.
/// Its base point is o·g, its forward/backward endpoints are the first/last
/// rows of g (the flow endpoints pushed by the right action).
#[derive(Debug, Clone)]
pub struct FramePoint {
    g: LorentzMatrix,
}

impl FramePoint {
    pub fn identity(n: usize) -> Self {
        FramePoint {
            g: LorentzMatrix::identity(n),
        }
    }

    pub fn new(g: LorentzMatrix) -> Self {
        FramePoint { g }
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    pub fn group(&self) -> &LorentzMatrix {
        &self.g
    }

    pub fn base_point(&self) -> HyperbolicPoint {
        HyperbolicPoint::from_lorentz(self.g.act_row(&basepoint(self.g.dim())))
            .expect("frame base point stays on the sheet")
    }

    fn endpoint_row(&self, row: usize) -> BoundaryPoint {
        let m = self.g.matrix();
        let v = DVector::from_iterator(m.ncols(), m.row(row).iter().copied());
        BoundaryPoint::from_null(v).expect("frame rows are forward null vectors")
    }

    /// Forward endpoint of the frame's geodesic.
    pub fn forward(&self) -> BoundaryPoint {
        self.endpoint_row(0)
    }

    /// Backward endpoint — the base point of the expanding horosphere
    /// through this frame.
    pub fn backward(&self) -> BoundaryPoint {
        self.endpoint_row(self.g.dim())
    }

    /// Geodesic flow for time s (left multiplication by a_s).
    pub fn flow(&self, s: f64) -> Result<FramePoint> {
        let a = LorentzMatrix::flow(self.g.dim(), s)?;
        Ok(FramePoint { g: &a * &self.g })
    }

    /// Left multiplication (dynamics side).
    pub fn left_mul(&self, h: &LorentzMatrix) -> FramePoint {
        FramePoint { g: h * &self.g }
    }

    /// Right multiplication (deck-transformation side).
    pub fn right_mul(&self, h: &LorentzMatrix) -> FramePoint {
        FramePoint { g: &self.g * h }
    }
}

/// Both endpoints of a frame.
pub fn endpoints(v: &FramePoint) -> (BoundaryPoint, BoundaryPoint) {
    (v.forward(), v.backward())
}

/// Hyperbolic distance via the form pairing, in a cancellation-stable shape.
pub fn hyp_distance(x: &HyperbolicPoint, y: &HyperbolicPoint) -> f64 {
    let c = form_pair(&x.lorentz, &y.lorentz);
    // cosh d = c, written as d = 2 asinh(sqrt((c-1)/2)) for stability near 0.
    let h = ((c - 1.0).max(0.0) / 2.0).sqrt();
    2.0 * h.asinh()
}

/// Distance from `x` to a raw forward-sheet vector, taking the pairing as
/// is. Deep orbit images lose their unit normalization to rounding (their
/// Q drifts by eps·e^{2d}), so they cannot pass through
/// [`HyperbolicPoint::from_lorentz`]; the pairing itself has no such
/// cancellation and keeps full relative accuracy.
pub fn distance_to_raw(x: &HyperbolicPoint, raw: &DVector<f64>) -> f64 {
    let c = form_pair(&x.lorentz, raw);
    let h = ((c - 1.0).max(0.0) / 2.0).sqrt();
    2.0 * h.asinh()
}

/// Radial boundary direction of a raw forward-sheet vector, read off the
/// ball chart without renormalizing. Stable for arbitrarily deep orbit
/// images, where the chart denominators are huge and the rounding noise in
/// Q is irrelevant.
pub fn radial_direction(raw: &DVector<f64>) -> Result<BoundaryPoint> {
    let y = to_standard(raw);
    if !(y[0] > 0.0) || !y[0].is_finite() {
        return Err(Error::InvalidArgument(
            "vector is not on the forward sheet".into(),
        ));
    }
    let n = raw.len() - 1;
    let mut b = DVector::zeros(n);
    for i in 1..=n {
        b[i - 1] = y[i] / (1.0 + y[0]);
    }
    BoundaryPoint::from_ball(b)
}

/// Busemann cocycle b_xi(x, y): the limit of d(x, p) - d(y, p) as p runs to
/// xi. Closed form through the pairing: log(<x, xi> / <y, xi>), independent
/// of the null representative's scale. Positive when y is closer to xi.
pub fn busemann(xi: &BoundaryPoint, x: &HyperbolicPoint, y: &HyperbolicPoint) -> Result<f64> {
    let px = form_pair(&x.lorentz, &xi.null);
    let py = form_pair(&y.lorentz, &xi.null);
    if px <= 0.0 || py <= 0.0 {
        return Err(Error::SingularConfiguration(
            "degenerate pairing in Busemann cocycle".into(),
        ));
    }
    Ok((px / py).ln())
}

/// Reference implementation of the Busemann cocycle as a truncated limit:
/// d(x, ray(t)) - d(y, ray(t)) with ray(t) the unit-speed geodesic from the
/// base point toward xi, evaluated at t = truncation. Kept as a test oracle.
pub fn busemann_ray(
    xi: &BoundaryPoint,
    x: &HyperbolicPoint,
    y: &HyperbolicPoint,
    truncation: f64,
) -> f64 {
    let p = point_on_ray(&HyperbolicPoint::origin(xi.dim()), xi, truncation);
    hyp_distance(x, &p) - hyp_distance(y, &p)
}

/// Unit-speed geodesic ray from x toward xi, evaluated at time t.
pub fn point_on_ray(x: &HyperbolicPoint, xi: &BoundaryPoint, t: f64) -> HyperbolicPoint {
    let pair = form_pair(&x.lorentz, &xi.null);
    // xi' = xi/<x,xi> has <x, xi'> = 1; w = xi' - x is the unit tangent.
    let xi_n = &xi.null / pair;
    let w = &xi_n - &x.lorentz;
    let p = &x.lorentz * t.cosh() + w * t.sinh();
    HyperbolicPoint::from_lorentz(p).expect("ray stays on the sheet")
}

/// A point on the geodesic joining xi and eta: (e^u a + e^{-u} b)/sqrt(2<a,b>).
pub fn geodesic_point(xi: &BoundaryPoint, eta: &BoundaryPoint, u: f64) -> Result<HyperbolicPoint> {
    let p = form_pair(&xi.null, &eta.null);
    if p <= 1e-14 {
        return Err(Error::SingularConfiguration(
            "geodesic endpoints coincide".into(),
        ));
    }
    let scale = (2.0 * p).sqrt();
    let v = &xi.null * (u.exp() / scale) + &eta.null * ((-u).exp() / scale);
    HyperbolicPoint::from_lorentz(v)
}

/// Gromov visual distance based at x:
/// d_x(xi, eta) = sqrt(<xi, eta> / (2 <x, xi> <x, eta>)),
/// the closed form of exp(-(b_xi(x,y) + b_eta(x,y))/2) for y on the geodesic
/// (xi, eta); independent of the choice of y and of representative scales.
pub fn gromov_distance(
    x: &HyperbolicPoint,
    xi: &BoundaryPoint,
    eta: &BoundaryPoint,
) -> Result<f64> {
    let pxy = form_pair(&xi.null, &eta.null);
    let px = form_pair(&x.lorentz, &xi.null);
    let pe = form_pair(&x.lorentz, &eta.null);
    if px <= 0.0 || pe <= 0.0 {
        return Err(Error::SingularConfiguration(
            "degenerate pairing in visual distance".into(),
        ));
    }
    Ok((pxy.max(0.0) / (2.0 * px * pe)).sqrt())
}

/// Forward endpoint of u_t v — the horospherical parametrization of the
/// boundary minus the backward endpoint of v. In coordinates this is the
/// null row (1, t, |t|^2/2)·g.
pub fn horosphere_projection(v: &FramePoint, t: &[f64]) -> Result<BoundaryPoint> {
    let n = v.dim();
    if t.len() != n - 1 {
        return Err(Error::InvalidArgument(format!(
            "parameter has length {}, expected {}",
            t.len(),
            n - 1
        )));
    }
    let mut row = DVector::zeros(n + 1);
    row[0] = 1.0;
    for i in 1..n {
        row[i] = t[i - 1];
    }
    row[n] = 0.5 * t.iter().map(|x| x * x).sum::<f64>();
    BoundaryPoint::from_null(v.g.act_row(&row))
}

/// Invert the horospherical parametrization: find t with (u_t v)^+ = xi.
/// Returns Ok(None) exactly when xi is the backward endpoint of v (the
/// one boundary point the chart misses).
pub fn horosphere_projection_inverse(v: &FramePoint, xi: &BoundaryPoint) -> Result<Option<HoroParam>> {
    let n = v.dim();
    if xi.dim() != n {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    chart_inverse_prepared(&v.g.inverse(), xi, false)
}

/// Chart inversion against a precomputed frame inverse, so bulk callers
/// (leaf assembly over thousands of density atoms) invert the frame once.
/// `minus` selects the contracting chart; pivot tests are identical to the
/// public entry points.
pub(crate) fn chart_inverse_prepared(
    inv: &LorentzMatrix,
    xi: &BoundaryPoint,
    minus: bool,
) -> Result<Option<HoroParam>> {
    let n = inv.dim();
    let z = inv.act_row(&xi.null);
    let scale = z.amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::SingularConfiguration("degenerate null image".into()));
    }
    let pivot = if minus { z[n] } else { z[0] };
    if pivot.abs() <= 1e-13 * scale || pivot < 0.0 {
        // xi sits at (or numerically at) the endpoint the chart misses.
        return Ok(None);
    }
    let mut t = DVector::zeros(n - 1);
    for i in 1..n {
        t[i - 1] = z[i] / pivot;
    }
    Ok(Some(t))
}

/// Backward endpoint of v_r v — the contracting-horospherical chart of the
/// boundary minus the forward endpoint of v: the null row (|r|^2/2, r, 1)·g.
pub fn horosphere_projection_minus(v: &FramePoint, r: &[f64]) -> Result<BoundaryPoint> {
    let n = v.dim();
    if r.len() != n - 1 {
        return Err(Error::InvalidArgument(format!(
            "parameter has length {}, expected {}",
            r.len(),
            n - 1
        )));
    }
    let mut row = DVector::zeros(n + 1);
    row[0] = 0.5 * r.iter().map(|x| x * x).sum::<f64>();
    for i in 1..n {
        row[i] = r[i - 1];
    }
    row[n] = 1.0;
    BoundaryPoint::from_null(v.g.act_row(&row))
}

/// Invert the contracting chart: find r with (v_r v)^- = xi. Returns
/// Ok(None) exactly when xi is the forward endpoint of v.
pub fn horosphere_projection_minus_inverse(
    v: &FramePoint,
    xi: &BoundaryPoint,
) -> Result<Option<HoroParam>> {
    let n = v.dim();
    if xi.dim() != n {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    chart_inverse_prepared(&v.g.inverse(), xi, true)
}

/// Hopf chart: build the frame with prescribed endpoints whose horospherical
/// time coordinate b_{xi^-}(o, base) equals `s`, optionally twisted by a
/// rotation of the frame's normal block.
pub fn frame_from_endpoints(
    forward: &BoundaryPoint,
    backward: &BoundaryPoint,
    s: f64,
    twist: Option<&LorentzMatrix>,
) -> Result<FramePoint> {
    let n = forward.dim();
    if backward.dim() != n {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    // Frame entries scale like 1/pair, so rounding noise in downstream
    // quadratic forms grows like eps/pair^2: below this threshold the frame
    // exists mathematically but is not representable in doubles. Such a
    // frame sits at distance >= ln(1/pair)/2 ~ 8 from the reference point.
    let pair = form_pair(&forward.null, &backward.null);
    if pair <= 1e-7 {
        return Err(Error::SingularConfiguration(
            "endpoints coincide or nearly so; no well-conditioned geodesic frame exists".into(),
        ));
    }
    let a = &forward.null / pair; // <a, b> = 1
    let b = backward.null.clone();

    // Complete with a spacelike orthonormal block: project seeds off the
    // span of {a, b} with the pairing, then Gram-Schmidt in -<,>.
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(n - 1);
    for seed_idx in 0..=n {
        if rows.len() == n - 1 {
            break;
        }
        let mut w = DVector::zeros(n + 1);
        w[seed_idx] = 1.0;
        let mut w = &w - &a * form_pair(&w, &b) - &b * form_pair(&w, &a);
        for u in &rows {
            let c = -form_pair(&w, u);
            w -= u * c;
        }
        let norm2 = -form_q(&w);
        if norm2 > 1e-10 {
            rows.push(w / norm2.sqrt());
        }
    }
    if rows.len() != n - 1 {
        return Err(Error::SingularConfiguration(
            "could not complete frame: degenerate endpoint data".into(),
        ));
    }

    let mut m = nalgebra::DMatrix::zeros(n + 1, n + 1);
    for j in 0..=n {
        m[(0, j)] = a[j];
        m[(n, j)] = b[j];
    }
    for (i, u) in rows.iter().enumerate() {
        for j in 0..=n {
            m[(i + 1, j)] = u[j];
        }
    }
    if m.determinant() < 0.0 {
        for j in 0..=n {
            m[(1, j)] = -m[(1, j)];
        }
    }
    let base = LorentzMatrix::from_matrix(m)?;

    // Current time coordinate of the raw frame, then slide along the flow.
    let o = HyperbolicPoint::origin(n);
    let raw = FramePoint::new(base);
    let s0 = busemann(backward, &o, &raw.base_point())?;
    let shift = LorentzMatrix::flow(n, s0 - s)?;
    let g = match twist {
        Some(rot) => &(&shift * rot) * &raw.g,
        None => &shift * &raw.g,
    };
    // The slide can blow up an already marginal frame (entries scale like
    // e^{|s0 - s|}/pair); certify the result by the quadratic form of its
    // base row, which exact arithmetic pins to 1.
    let q_base = form_q(&g.act_row(&basepoint(n)));
    if !((q_base - 1.0).abs() <= 0.5) {
        return Err(Error::SingularConfiguration(
            "endpoint data too degenerate for a representable frame".into(),
        ));
    }
    Ok(FramePoint::new(g))
}

/// Hopf coordinates of a frame: (forward, backward, b_{backward}(o, base)).
pub fn hopf_coordinates(v: &FramePoint) -> Result<(BoundaryPoint, BoundaryPoint, f64)> {
    let fwd = v.forward();
    let bwd = v.backward();
    let s = busemann(&bwd, &HyperbolicPoint::origin(v.dim()), &v.base_point())?;
    Ok((fwd, bwd, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::HoroDirection;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn rng() -> impl Rng {
        crate::rng::stream_rng(11, "boundary-tests")
    }

    fn random_ball_point(r: &mut impl Rng, n: usize, rad: f64) -> HyperbolicPoint {
        // Direction scaled to a uniform radius in [0, rad), so the point is
        // guaranteed to lie strictly inside the unit ball for rad <= 1.
        let v = loop {
            let v = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
            if v.norm() > 0.1 {
                break v;
            }
        };
        let b = &v * (r.gen_range(0.0..rad) / v.norm());
        HyperbolicPoint::from_ball(b).unwrap()
    }

    fn random_boundary(r: &mut impl Rng, n: usize) -> BoundaryPoint {
        loop {
            let v = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
            if v.norm() > 0.1 {
                return BoundaryPoint::from_ball(v).unwrap();
            }
        }
    }

    #[test]
    fn model_roundtrip() {
        let mut r = rng();
        for n in [2usize, 3] {
            for _ in 0..200 {
                let p = random_ball_point(&mut r, n, 0.9);
                let q = HyperbolicPoint::from_lorentz(p.lorentz().clone()).unwrap();
                assert!((p.ball() - q.ball()).amax() < 1e-12);
                let w = HyperbolicPoint::from_ball(p.ball().clone()).unwrap();
                assert!((p.lorentz() - w.lorentz()).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn origin_distance_along_flow_is_time() {
        let o = HyperbolicPoint::origin(2);
        for s in [0.1, 1.0, 5.0, 25.0] {
            let a = LorentzMatrix::flow(2, s).unwrap();
            let p = o.apply(&a).unwrap();
            assert_abs_diff_eq!(hyp_distance(&o, &p), s, epsilon = 1e-9);
        }
    }

    #[test]
    fn distance_is_a_metric_sample() {
        let mut r = rng();
        for _ in 0..300 {
            let (x, y, z) = (
                random_ball_point(&mut r, 3, 0.95),
                random_ball_point(&mut r, 3, 0.95),
                random_ball_point(&mut r, 3, 0.95),
            );
            let dxy = hyp_distance(&x, &y);
            let dyx = hyp_distance(&y, &x);
            assert_abs_diff_eq!(dxy, dyx, epsilon = 1e-10);
            assert!(dxy + hyp_distance(&y, &z) >= hyp_distance(&x, &z) - 1e-10);
        }
        let x = random_ball_point(&mut r, 3, 0.5);
        assert_abs_diff_eq!(hyp_distance(&x, &x), 0.0, epsilon = 1e-7);
    }

    #[test]
    fn busemann_on_ray_recovers_arclength() {
        let mut r = rng();
        for n in [2usize, 3] {
            for _ in 0..100 {
                let xi = random_boundary(&mut r, n);
                let o = HyperbolicPoint::origin(n);
                let s = r.gen_range(0.0..4.0);
                let y = point_on_ray(&o, &xi, s);
                assert_abs_diff_eq!(busemann(&xi, &o, &y).unwrap(), s, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn busemann_is_one_lipschitz() {
        let mut r = rng();
        for _ in 0..300 {
            let xi = random_boundary(&mut r, 2);
            let x = random_ball_point(&mut r, 2, 0.9);
            let y = random_ball_point(&mut r, 2, 0.9);
            let b = busemann(&xi, &x, &y).unwrap();
            assert!(b.abs() <= hyp_distance(&x, &y) + 1e-10);
        }
    }

    #[test]
    fn visual_distance_matches_definition_through_geodesic_points() {
        let mut r = rng();
        for _ in 0..100 {
            let xi = random_boundary(&mut r, 3);
            let eta = random_boundary(&mut r, 3);
            if xi.chordal(&eta) < 1e-3 {
                continue;
            }
            let x = random_ball_point(&mut r, 3, 0.8);
            let d = gromov_distance(&x, &xi, &eta).unwrap();
            let u = r.gen_range(-3.0..3.0);
            let y = geodesic_point(&xi, &eta, u).unwrap();
            let via_y = (-0.5 * (busemann(&xi, &x, &y).unwrap() + busemann(&eta, &x, &y).unwrap()))
                .exp();
            assert_abs_diff_eq!(d, via_y, epsilon = 1e-9 * (1.0 + d));
        }
    }

    #[test]
    fn visual_distance_at_origin_is_half_chordal() {
        let mut r = rng();
        for _ in 0..200 {
            let xi = random_boundary(&mut r, 2);
            let eta = random_boundary(&mut r, 2);
            let d = gromov_distance(&HyperbolicPoint::origin(2), &xi, &eta).unwrap();
            assert_abs_diff_eq!(d, 0.5 * xi.chordal(&eta), epsilon = 1e-10);
        }
    }

    #[test]
    fn endpoint_stability_under_horospherical_moves() {
        let mut r = rng();
        let n = 3;
        for _ in 0..50 {
            let g = FramePoint::new(
                &(&LorentzMatrix::flow(n, r.gen_range(-1.0..1.0)).unwrap()
                    * &LorentzMatrix::horo(n, HoroDirection::Expanding, &[r.gen(), r.gen()])
                        .unwrap())
                    * &LorentzMatrix::horo(n, HoroDirection::Contracting, &[r.gen(), r.gen()])
                        .unwrap(),
            );
            let t = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)];
            let u = LorentzMatrix::horo(n, HoroDirection::Expanding, &t).unwrap();
            let v = LorentzMatrix::horo(n, HoroDirection::Contracting, &t).unwrap();

            // u_t preserves the backward endpoint, v_t the forward one.
            let gu = g.left_mul(&u);
            assert!(gu.backward().chordal(&g.backward()) < 1e-12);
            assert!(gu.forward().chordal(&g.forward()) > 1e-4);
            let gv = g.left_mul(&v);
            assert!(gv.forward().chordal(&g.forward()) < 1e-12);

            // the flow fixes both endpoints
            let gf = g.flow(1.3).unwrap();
            assert!(gf.forward().chordal(&g.forward()) < 1e-12);
            assert!(gf.backward().chordal(&g.backward()) < 1e-12);
        }
    }

    #[test]
    fn projection_inverts_exactly() {
        let mut r = rng();
        for n in [2usize, 3] {
            let g = FramePoint::new(
                &LorentzMatrix::flow(n, 0.4).unwrap()
                    * &LorentzMatrix::horo(
                        n,
                        HoroDirection::Contracting,
                        &vec![0.2; n - 1],
                    )
                    .unwrap(),
            );
            for _ in 0..200 {
                let t: Vec<f64> = (0..n - 1).map(|_| r.gen_range(-3.0..3.0)).collect();
                let xi = horosphere_projection(&g, &t).unwrap();
                let back = horosphere_projection_inverse(&g, &xi).unwrap().unwrap();
                for i in 0..n - 1 {
                    assert_abs_diff_eq!(back[i], t[i], epsilon = 1e-9);
                }
            }
            // the backward endpoint is the excluded point of the chart
            let miss = horosphere_projection_inverse(&g, &g.backward()).unwrap();
            assert!(miss.is_none());
        }
    }

    #[test]
    fn contracting_chart_inverts_exactly_and_misses_forward() {
        let mut r = rng();
        for n in [2usize, 3] {
            let g = FramePoint::new(
                &LorentzMatrix::flow(n, -0.7).unwrap()
                    * &LorentzMatrix::horo(n, HoroDirection::Expanding, &vec![-0.4; n - 1])
                        .unwrap(),
            );
            for _ in 0..200 {
                let t: Vec<f64> = (0..n - 1).map(|_| r.gen_range(-3.0..3.0)).collect();
                let xi = horosphere_projection_minus(&g, &t).unwrap();
                let back = horosphere_projection_minus_inverse(&g, &xi).unwrap().unwrap();
                for i in 0..n - 1 {
                    assert_abs_diff_eq!(back[i], t[i], epsilon = 1e-9);
                }
            }
            // r = 0 leaves the backward endpoint alone
            let fixed = horosphere_projection_minus(&g, &vec![0.0; n - 1]).unwrap();
            assert!(fixed.chordal(&g.backward()) < 1e-12);
            // the forward endpoint is the excluded point of this chart
            let miss = horosphere_projection_minus_inverse(&g, &g.forward()).unwrap();
            assert!(miss.is_none());
        }
    }

    #[test]
    fn hopf_chart_roundtrip() {
        let mut r = rng();
        for n in [2usize, 3] {
            for _ in 0..50 {
                let xi = random_boundary(&mut r, n);
                let eta = random_boundary(&mut r, n);
                if xi.chordal(&eta) < 0.2 {
                    continue;
                }
                let s = r.gen_range(-2.0..2.0);
                let f = frame_from_endpoints(&xi, &eta, s, None).unwrap();
                assert!(crate::lorentz::lorentz_residual(f.group()) < 1e-10);
                let (fw, bw, s2) = hopf_coordinates(&f).unwrap();
                assert!(fw.chordal(&xi) < 1e-9);
                assert!(bw.chordal(&eta) < 1e-9);
                assert_abs_diff_eq!(s2, s, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(HyperbolicPoint::from_ball(DVector::from_vec(vec![1.2, 0.0])).is_err());
        assert!(HyperbolicPoint::from_lorentz(DVector::from_vec(vec![0.0, 1.0, 0.0])).is_err());
        assert!(BoundaryPoint::from_null(DVector::from_vec(vec![1.0, 1.0, 1.0])).is_err());
        let xi = BoundaryPoint::from_ball(DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!(frame_from_endpoints(&xi, &xi, 0.0, None).is_err());
    }
}
