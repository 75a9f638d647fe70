//! Schottky subgroups of the Lorentz group.
//!
//! A rank-k Schottky group is prescribed by 2k pairwise disjoint closed caps
//! on the boundary sphere and one hyperbolic generator per cap pair, mapping
//! the exterior of its repelling cap into its attracting cap. Construction
//! verifies the ping-pong property two ways: an exact cap-image certificate
//! (a boundary Mobius map sends caps to caps, so containment reduces to an
//! angular-radius comparison) and a dense boundary grid as a cross-check.
//!
//! On top of the verified group this module provides reduced-word
//! enumeration, limit-set samples with their nested cap cells, a
//! Poincare-series estimate of the critical exponent, a sampled
//! approximation of the convex core, the truncated quotient distance, and
//! the Diophantine excursion check along the backward geodesic flow.

use crate::boundary::{
    frame_from_endpoints, geodesic_point, BoundaryPoint, FramePoint, HyperbolicPoint,
};
use crate::error::{Error, Result};
use crate::lorentz::{basepoint, form_pair, lorentz_residual, LorentzMatrix, SUPPORTED_DIMS};
use nalgebra::DVector;
use std::collections::HashSet;
use std::f64::consts::PI;

/// Number of boundary points in the ping-pong verification grid.
pub const PINGPONG_GRID: usize = 1000;
/// Required angular separation between caps and slack inside the cap-image
/// certificate. Configurations tighter than this are rejected as too fragile
/// for the downstream statistics.
pub const SEPARATION_MARGIN: f64 = 1e-3;
/// Maximal isometry defect tolerated for a constructed generator.
pub const GENERATOR_RESIDUAL_TOL: f64 = 1e-12;
/// Word-length cutoff used when minimizing over the deck group in
/// `distance_to_core`. The truncation error is one-sided: the reported
/// distance can only overestimate.
pub const QUOTIENT_WORD_LENGTH: usize = 6;
/// Depth of the cap-cell cover used to certify membership in the limit set.
pub const LIMIT_CELL_DEPTH: usize = 3;

/// A closed spherical cap on the boundary sphere S^{n-1} of the ball model:
/// {x : x . center >= cos_radius}. Angular radii may exceed pi/2, so the
/// complement of a cap is again a cap.
#[derive(Debug, Clone)]
pub struct Cap {
    center: DVector<f64>,
    cos_radius: f64,
}

impl Cap {
    /// Cap from a (not necessarily normalized) center direction and the
    /// Euclidean chord radius in (0, 2).
    pub fn new(center: DVector<f64>, chord_radius: f64) -> Result<Self> {
        if !(chord_radius > 0.0 && chord_radius < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "chord radius must lie in (0, 2), got {chord_radius}"
            )));
        }
        Self::from_angular(center, 2.0 * (chord_radius / 2.0).asin())
    }

    /// Cap from a center direction and an angular radius in (0, pi).
    pub fn from_angular(center: DVector<f64>, theta: f64) -> Result<Self> {
        let norm = center.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidArgument("cap center must be a nonzero direction".into()));
        }
        if !(theta > 1e-12 && theta < PI - 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "angular radius must lie strictly inside (0, pi), got {theta}"
            )));
        }
        Ok(Cap {
            center: center / norm,
            cos_radius: theta.cos(),
        })
    }

    /// Ambient dimension n of the ball whose sphere carries the cap.
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn angular_radius(&self) -> f64 {
        self.cos_radius.clamp(-1.0, 1.0).acos()
    }

    pub fn chord_radius(&self) -> f64 {
        (2.0 - 2.0 * self.cos_radius).max(0.0).sqrt()
    }

    /// Closure of the cap's complement (again a cap, around the antipode).
    pub fn complement(&self) -> Cap {
        Cap {
            center: -&self.center,
            cos_radius: -self.cos_radius,
        }
    }

    /// Membership of a direction vector, with additive slack on the cosine.
    pub fn contains_dir(&self, dir: &DVector<f64>, slack: f64) -> bool {
        let norm = dir.norm();
        if !(norm > 0.0) {
            return false;
        }
        dir.dot(&self.center) / norm >= self.cos_radius - slack
    }

    pub fn contains_point(&self, p: &BoundaryPoint, slack: f64) -> bool {
        self.contains_dir(p.ball(), slack)
    }

    /// Angular distance between cap centers.
    pub fn center_angle(&self, other: &Cap) -> f64 {
        self.center.dot(&other.center).clamp(-1.0, 1.0).acos()
    }

    /// Does this cap contain `inner` with at least `margin` of angular slack?
    /// Exact for spherical caps: containment is equivalent to
    /// angle(centers) + radius(inner) <= radius(self).
    pub fn contains_cap(&self, inner: &Cap, margin: f64) -> bool {
        self.center_angle(inner) + inner.angular_radius() + margin <= self.angular_radius()
    }

    /// Are the caps disjoint with at least `margin` of angular separation?
    pub fn disjoint_from(&self, other: &Cap, margin: f64) -> bool {
        self.center_angle(other) >= self.angular_radius() + other.angular_radius() + margin
    }

    /// The worst angular margin by which `inner` sits inside this cap
    /// (positive means strictly contained).
    pub fn containment_margin(&self, inner: &Cap) -> f64 {
        self.angular_radius() - inner.angular_radius() - self.center_angle(inner)
    }
}

fn cross3(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}

fn boundary_dir(dir: DVector<f64>) -> Result<BoundaryPoint> {
    BoundaryPoint::from_ball(dir)
}

/// Image of a cap under the boundary action of an isometry. Mobius maps of
/// the ball send spherical caps to spherical caps, so the image is computed
/// exactly from finitely many boundary images: arc endpoints for n = 2, a
/// plane fit through three ring points for n = 3 (a fourth ring point serves
/// as a consistency guard), with the image of the center picking the side.
pub fn cap_image(cap: &Cap, g: &LorentzMatrix) -> Result<Cap> {
    let n = cap.dim();
    if g.dim() != n {
        return Err(Error::InvalidArgument("cap/matrix dimension mismatch".into()));
    }
    let theta = cap.angular_radius();
    let center_img = boundary_dir(cap.center.clone())?.apply(g)?;
    match n {
        2 => {
            let phi0 = cap.center[1].atan2(cap.center[0]);
            let map_angle = |phi: f64| -> Result<f64> {
                let q = boundary_dir(DVector::from_vec(vec![phi.cos(), phi.sin()]))?.apply(g)?;
                Ok(q.ball()[1].atan2(q.ball()[0]))
            };
            let a = map_angle(phi0 + theta)?;
            let b = map_angle(phi0 - theta)?;
            let mu = center_img.ball()[1].atan2(center_img.ball()[0]);
            // The image arc is the one between the endpoint images that
            // contains the center image.
            let d = (b - a).rem_euclid(2.0 * PI);
            let inside = (mu - a).rem_euclid(2.0 * PI) <= d;
            let (c_angle, radius) = if inside {
                (a + d / 2.0, d / 2.0)
            } else {
                (a + d / 2.0 + PI, PI - d / 2.0)
            };
            Cap::from_angular(
                DVector::from_vec(vec![c_angle.cos(), c_angle.sin()]),
                radius,
            )
        }
        3 => {
            let u = &cap.center;
            let helper = if u[2].abs() < 0.9 {
                DVector::from_vec(vec![0.0, 0.0, 1.0])
            } else {
                DVector::from_vec(vec![1.0, 0.0, 0.0])
            };
            let e = {
                let c = cross3(u, &helper);
                let norm = c.norm();
                c / norm
            };
            let f = cross3(u, &e);
            let ring = |psi: f64| -> Result<DVector<f64>> {
                let p = u * theta.cos() + (&e * psi.cos() + &f * psi.sin()) * theta.sin();
                Ok(boundary_dir(p)?.apply(g)?.ball().clone())
            };
            let q1 = ring(0.0)?;
            let q2 = ring(2.0 * PI / 3.0)?;
            let q3 = ring(4.0 * PI / 3.0)?;
            let q4 = ring(PI / 2.0)?;
            let w = cross3(&(&q2 - &q1), &(&q3 - &q1));
            let norm = w.norm();
            if norm < 1e-12 {
                return Err(Error::SingularConfiguration(
                    "cap image ring is degenerate".into(),
                ));
            }
            let mut w = w / norm;
            let mut d = w.dot(&q1);
            if w.dot(center_img.ball()) < d {
                w = -w;
                d = -d;
            }
            if (w.dot(&q4) - d).abs() > 1e-8 {
                return Err(Error::SingularConfiguration(
                    "cap image ring points are not concyclic".into(),
                ));
            }
            if d.abs() >= 1.0 - 1e-12 {
                return Err(Error::SingularConfiguration(
                    "cap image degenerates to a point or the full sphere".into(),
                ));
            }
            Ok(Cap {
                center: w,
                cos_radius: d,
            })
        }
        _ => Err(Error::InvalidArgument(format!("unsupported dimension {n}"))),
    }
}

/// One generator: its attracting/repelling caps, translation length, and an
/// optional frame twist (a rotation angle of the normal block; n = 3 only).
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub attracting: Cap,
    pub repelling: Cap,
    pub translation_length: f64,
    pub twist_angle: f64,
}

/// Declarative description of a Schottky group.
#[derive(Debug, Clone)]
pub struct SchottkyConfig {
    pub dim: usize,
    pub generators: Vec<GeneratorSpec>,
    pub grid_points: usize,
    pub separation_margin: f64,
}

impl SchottkyConfig {
    pub fn new(dim: usize, generators: Vec<GeneratorSpec>) -> Self {
        SchottkyConfig {
            dim,
            generators,
            grid_points: PINGPONG_GRID,
            separation_margin: SEPARATION_MARGIN,
        }
    }

    /// The standard plane example: two generators with orthogonal axes
    /// through the base point, caps of chord radius 1/2 at the four
    /// half-axis directions.
    pub fn standard_n2() -> Self {
        let cap = |x: f64, y: f64| Cap::new(DVector::from_vec(vec![x, y]), 0.5).unwrap();
        SchottkyConfig::new(
            2,
            vec![
                GeneratorSpec {
                    attracting: cap(1.0, 0.0),
                    repelling: cap(-1.0, 0.0),
                    translation_length: 3.0,
                    twist_angle: 0.0,
                },
                GeneratorSpec {
                    attracting: cap(0.0, 1.0),
                    repelling: cap(0.0, -1.0),
                    translation_length: 3.0,
                    twist_angle: 0.0,
                },
            ],
        )
    }

    /// A sparser variant of `standard_n2` (smaller caps, longer translation
    /// lengths), used as the nested comparison configuration.
    pub fn sparse_n2() -> Self {
        let cap = |x: f64, y: f64| Cap::new(DVector::from_vec(vec![x, y]), 0.35).unwrap();
        SchottkyConfig::new(
            2,
            vec![
                GeneratorSpec {
                    attracting: cap(1.0, 0.0),
                    repelling: cap(-1.0, 0.0),
                    translation_length: 3.8,
                    twist_angle: 0.0,
                },
                GeneratorSpec {
                    attracting: cap(0.0, 1.0),
                    repelling: cap(0.0, -1.0),
                    translation_length: 3.8,
                    twist_angle: 0.0,
                },
            ],
        )
    }

    /// A small spatial example: one axis through the base point, one skew
    /// axis, nontrivial twists, endpoints in general position.
    pub fn small_n3() -> Self {
        let cap = |v: [f64; 3]| Cap::new(DVector::from_vec(v.to_vec()), 0.45).unwrap();
        SchottkyConfig::new(
            3,
            vec![
                GeneratorSpec {
                    attracting: cap([1.0, 0.0, 0.0]),
                    repelling: cap([-1.0, 0.0, 0.0]),
                    translation_length: 3.2,
                    twist_angle: 0.9,
                },
                GeneratorSpec {
                    attracting: cap([0.0, 0.9, 0.35]),
                    repelling: cap([0.1, -0.9, 0.3]),
                    translation_length: 3.2,
                    twist_angle: -1.3,
                },
            ],
        )
    }

    /// Degenerate rank-1 example: a single hyperbolic generator.
    pub fn cyclic_n2(translation_length: f64) -> Self {
        let cap = |x: f64, y: f64| Cap::new(DVector::from_vec(vec![x, y]), 0.5).unwrap();
        SchottkyConfig::new(
            2,
            vec![GeneratorSpec {
                attracting: cap(1.0, 0.0),
                repelling: cap(-1.0, 0.0),
                translation_length,
                twist_angle: 0.0,
            }],
        )
    }
}

/// A verified Schottky group. Pairing caps are stored so that index 2i is
/// the repelling cap of generator i and 2i+1 its attracting cap; generator i
/// maps the exterior of cap 2i into cap 2i+1.
#[derive(Debug, Clone)]
pub struct SchottkyGroup {
    dim: usize,
    gens: Vec<LorentzMatrix>,
    invs: Vec<LorentzMatrix>,
    caps: Vec<Cap>,
    zariski_dense: bool,
    pingpong_margin: f64,
    grid_points: usize,
    separation_margin: f64,
}

impl SchottkyGroup {
    pub fn build(config: &SchottkyConfig) -> Result<Self> {
        let n = config.dim;
        if !SUPPORTED_DIMS.contains(&n) {
            return Err(Error::InvalidConfig(format!("unsupported dimension {n}")));
        }
        if config.generators.is_empty() {
            return Err(Error::InvalidConfig("at least one generator is required".into()));
        }
        let mut gens = Vec::new();
        let mut caps = Vec::new();
        for (i, spec) in config.generators.iter().enumerate() {
            if spec.attracting.dim() != n || spec.repelling.dim() != n {
                return Err(Error::InvalidConfig(format!(
                    "generator {i}: cap dimension does not match dim = {n}"
                )));
            }
            if !(spec.translation_length > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "generator {i}: translation length must be positive"
                )));
            }
            if n == 2 && spec.twist_angle != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "generator {i}: the plane case has a trivial normal group; twist must be 0"
                )));
            }
            let att = boundary_dir(spec.attracting.center().clone())?;
            let rep = boundary_dir(spec.repelling.center().clone())?;
            let h = frame_from_endpoints(&att, &rep, 0.0, None)?;
            let mut axial = LorentzMatrix::flow(n, spec.translation_length)?;
            if spec.twist_angle != 0.0 {
                axial = &axial * &LorentzMatrix::rotation_angle(n, spec.twist_angle)?;
            }
            let gamma = &(&h.group().inverse() * &axial) * h.group();
            let residual = lorentz_residual(&gamma);
            if residual >= GENERATOR_RESIDUAL_TOL {
                return Err(Error::ConstructionFailed(format!(
                    "generator {i} fails the isometry check (residual {residual:.3e})"
                )));
            }
            gens.push(gamma);
            caps.push(spec.repelling.clone());
            caps.push(spec.attracting.clone());
        }
        Self::assemble(n, gens, caps, config.grid_points, config.separation_margin)
    }

    /// Verify disjointness, ping-pong, and density heuristics for candidate
    /// generators and caps, and assemble the group.
    fn assemble(
        dim: usize,
        gens: Vec<LorentzMatrix>,
        caps: Vec<Cap>,
        grid_points: usize,
        separation_margin: f64,
    ) -> Result<Self> {
        // Cap overlap is a configuration error; tangency or sub-margin
        // separation is a (geometric) construction failure.
        for i in 0..caps.len() {
            for j in (i + 1)..caps.len() {
                let gap = caps[i].center_angle(&caps[j])
                    - caps[i].angular_radius()
                    - caps[j].angular_radius();
                if gap < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "pairing caps {i} and {j} overlap (angular gap {gap:.4})"
                    )));
                }
                if gap < separation_margin {
                    return Err(Error::ConstructionFailed(format!(
                        "pairing caps {i} and {j} have margin {gap:.2e} < required {separation_margin:.2e}"
                    )));
                }
            }
        }

        let invs: Vec<LorentzMatrix> = gens.iter().map(|g| g.inverse()).collect();
        let group = SchottkyGroup {
            dim,
            gens,
            invs,
            caps,
            zariski_dense: false,
            pingpong_margin: f64::INFINITY,
            grid_points,
            separation_margin,
        };

        // Exact ping-pong certificate: the image of the closed exterior of
        // the repelling cap must land inside the attracting cap with margin.
        let mut worst = f64::INFINITY;
        for letter in group.letters() {
            let source = group.repelling_cap(letter).complement();
            let image = cap_image(&source, group.letter_matrix(letter))?;
            let margin = group.attracting_cap(letter).containment_margin(&image);
            if margin < separation_margin {
                return Err(Error::ConstructionFailed(format!(
                    "letter {letter} fails ping-pong: image of the repelling exterior \
                     exceeds the attracting cap (margin {margin:.3e})"
                )));
            }
            worst = worst.min(margin);
        }

        // Grid cross-check of the same property.
        for x in boundary_grid(dim, grid_points) {
            let p = boundary_dir(x)?;
            for letter in group.letters() {
                if group.repelling_cap(letter).contains_point(&p, 0.0) {
                    continue;
                }
                let image = p.apply(group.letter_matrix(letter))?;
                if !group.attracting_cap(letter).contains_point(&image, 1e-9) {
                    return Err(Error::ConstructionFailed(format!(
                        "letter {letter} fails ping-pong on the verification grid"
                    )));
                }
            }
        }

        // Zariski-density heuristic: at least two generators, and the null
        // representatives of all axis endpoints span the full Lorentz space
        // (axes in general position, not contained in a common subspace).
        let k = group.gens.len();
        let mut endpoint_rows = nalgebra::DMatrix::zeros(2 * k, dim + 1);
        for (i, cap) in group.caps.iter().enumerate() {
            let bp = boundary_dir(cap.center().clone())?;
            for j in 0..=dim {
                endpoint_rows[(i, j)] = bp.null()[j];
            }
        }
        let zariski_dense = k >= 2 && endpoint_rows.rank(1e-9) == dim + 1;

        Ok(SchottkyGroup {
            zariski_dense,
            pingpong_margin: worst,
            ..group
        })
    }

    /// Conjugate the whole group by a fixed isometry, transporting caps by
    /// their exact boundary images and re-running the full verification.
    pub fn conjugate(&self, g0: &LorentzMatrix) -> Result<SchottkyGroup> {
        if g0.dim() != self.dim {
            return Err(Error::InvalidArgument("conjugator dimension mismatch".into()));
        }
        let g0_inv = g0.inverse();
        let gens: Vec<LorentzMatrix> = self
            .gens
            .iter()
            .map(|g| &(&g0_inv * g) * g0)
            .collect();
        let caps = self
            .caps
            .iter()
            .map(|c| cap_image(c, g0))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(self.dim, gens, caps, self.grid_points, self.separation_margin)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Rank: number of free generators.
    pub fn rank(&self) -> usize {
        self.gens.len()
    }

    pub fn zariski_dense(&self) -> bool {
        self.zariski_dense
    }

    /// Worst certified angular margin in the ping-pong containments.
    pub fn pingpong_margin(&self) -> f64 {
        self.pingpong_margin
    }

    pub fn caps(&self) -> &[Cap] {
        &self.caps
    }

    /// All letters: 1, -1, 2, -2, ... (positive = generator, negative = its
    /// inverse). This fixed order makes word enumeration deterministic.
    pub fn letters(&self) -> Vec<i8> {
        (1..=self.gens.len() as i8)
            .flat_map(|i| [i, -i])
            .collect()
    }

    pub fn letter_matrix(&self, letter: i8) -> &LorentzMatrix {
        let idx = (letter.unsigned_abs() as usize) - 1;
        if letter > 0 {
            &self.gens[idx]
        } else {
            &self.invs[idx]
        }
    }

    /// Cap into which the letter contracts (its attracting cap).
    pub fn attracting_cap(&self, letter: i8) -> &Cap {
        let idx = (letter.unsigned_abs() as usize) - 1;
        if letter > 0 {
            &self.caps[2 * idx + 1]
        } else {
            &self.caps[2 * idx]
        }
    }

    /// Cap whose exterior the letter moves (attracting cap of its inverse).
    pub fn repelling_cap(&self, letter: i8) -> &Cap {
        self.attracting_cap(-letter)
    }
}

/// Deterministic quasi-uniform boundary grid: equal angles on the circle,
/// a Fibonacci lattice on the 2-sphere.
fn boundary_grid(dim: usize, count: usize) -> Vec<DVector<f64>> {
    match dim {
        2 => (0..count)
            .map(|i| {
                let phi = (i as f64 + 0.5) / count as f64 * 2.0 * PI;
                DVector::from_vec(vec![phi.cos(), phi.sin()])
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5.0_f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * i as f64;
                    DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// A reduced word over the generators with its cached matrix and the
/// hyperbolic displacement of the base point.
#[derive(Debug, Clone)]
pub struct Word {
    pub letters: Vec<i8>,
    pub matrix: LorentzMatrix,
    pub orbit_distance: f64,
}

impl Word {
    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }
}

fn orbit_distance(n: usize, m: &LorentzMatrix) -> f64 {
    let o = basepoint(n);
    let c = form_pair(&m.act_row(&o), &o);
    let h = ((c - 1.0).max(0.0) / 2.0).sqrt();
    2.0 * h.asinh()
}

/// Number of reduced words of length at most `max_len` in a free group of
/// the given rank: 1 + sum_{l=1..L} 2k (2k-1)^{l-1}.
pub fn word_count(rank: usize, max_len: usize) -> u64 {
    let k2 = 2 * rank as u64;
    let mut total = 1;
    let mut level = k2;
    for _ in 1..=max_len {
        total += level;
        level *= k2 - 1;
    }
    total
}

/// All reduced words of length <= max_len, in breadth-first order (by
/// length, then lexicographically in the letter order 1, -1, 2, -2, ...).
/// Each word's matrix is the product of its letter matrices; the identity
/// comes first.
pub fn enumerate_words(g: &SchottkyGroup, max_len: usize) -> Vec<Word> {
    let n = g.dim();
    let letters = g.letters();
    let mut all = vec![Word {
        letters: Vec::new(),
        matrix: LorentzMatrix::identity(n),
        orbit_distance: 0.0,
    }];
    let mut frontier: Vec<usize> = vec![0];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for &idx in &frontier {
            let last = all[idx].letters.last().copied();
            for &l in &letters {
                if last == Some(-l) {
                    continue;
                }
                let mut w = all[idx].letters.clone();
                w.push(l);
                let m = &all[idx].matrix * g.letter_matrix(l);
                let d = orbit_distance(n, &m);
                next.push(all.len());
                all.push(Word {
                    letters: w,
                    matrix: m,
                    orbit_distance: d,
                });
            }
        }
        frontier = next;
    }
    all
}

/// Product matrix of an explicit letter sequence (must be reduced).
pub fn word_matrix(g: &SchottkyGroup, letters: &[i8]) -> Result<LorentzMatrix> {
    let k = g.rank() as i8;
    let mut m = LorentzMatrix::identity(g.dim());
    let mut prev: Option<i8> = None;
    for &l in letters {
        if l == 0 || l.abs() > k {
            return Err(Error::InvalidArgument(format!("letter {l} out of range")));
        }
        if prev == Some(-l) {
            return Err(Error::InvalidArgument("word is not reduced".into()));
        }
        m = &m * g.letter_matrix(l);
        prev = Some(l);
    }
    Ok(m)
}

/// Boundary directions of the orbit points o . w over all reduced words of
/// length exactly `len`: a depth-`len` sample of the limit set.
pub fn limit_set_sample(g: &SchottkyGroup, len: usize) -> Result<Vec<BoundaryPoint>> {
    if len == 0 {
        return Err(Error::InvalidArgument("limit-set depth must be >= 1".into()));
    }
    let o = basepoint(g.dim());
    enumerate_words(g, len)
        .into_iter()
        .filter(|w| w.len() == len)
        .map(|w| {
            let p = HyperbolicPoint::from_lorentz(w.matrix.act_row(&o))?;
            boundary_dir(p.ball().clone())
        })
        .collect()
}

/// The nested cap cell of a suffix word: the exact image of the closed
/// exterior of the first letter's repelling cap under the word's matrix.
/// Every orbit direction of a word ending in this suffix lies in the cell,
/// and cells of longer suffixes are nested inside those of shorter ones.
pub fn suffix_cell(g: &SchottkyGroup, suffix: &[i8]) -> Result<Cap> {
    if suffix.is_empty() {
        return Err(Error::InvalidArgument("suffix must be nonempty".into()));
    }
    let m = word_matrix(g, suffix)?;
    cap_image(&g.repelling_cap(suffix[0]).complement(), &m)
}

/// Poincare-series estimate of the critical exponent.
#[derive(Debug, Clone)]
pub struct CriticalExponent {
    pub value: f64,
    pub band: f64,
    pub low_confidence: bool,
    pub levels_used: (usize, usize),
}

/// Estimate the critical exponent from partial sums of the Poincare series
/// P_L(s) = sum_{|w| <= L} e^{-s d(o, w o)}. The increments Q_L = P_L -
/// P_{L-1} grow geometrically below the exponent and decay above it, so the
/// estimate is the bisection point of log(Q_L / Q_{L-1}) at the deepest
/// level; the band compares against the same estimate one level earlier.
pub fn critical_exponent_estimate(
    g: &SchottkyGroup,
    l_min: usize,
    l_max: usize,
) -> Result<CriticalExponent> {
    if l_min < 1 || l_max < l_min + 1 {
        return Err(Error::InvalidArgument(
            "need at least two levels: 1 <= l_min < l_max".into(),
        ));
    }
    let words = enumerate_words(g, l_max);
    let mut level_dists: Vec<Vec<f64>> = vec![Vec::new(); l_max + 1];
    for w in &words {
        level_dists[w.len()].push(w.orbit_distance);
    }
    let level_sum = |level: usize, s: f64| -> f64 {
        level_dists[level].iter().map(|d| (-s * d).exp()).sum()
    };
    // log(Q_L / Q_{L-1}) at exponent s: positive below delta, negative above.
    let growth = |level: usize, s: f64| -> f64 {
        (level_sum(level, s) / level_sum(level - 1, s)).ln()
    };
    let hi_domain = (g.dim() - 1) as f64 + 0.5;
    let bisect = |level: usize| -> f64 {
        let (mut lo, mut hi) = (1e-6, hi_domain);
        if growth(level, lo) <= 0.0 {
            return 0.0;
        }
        if growth(level, hi) >= 0.0 {
            return hi;
        }
        for _ in 0..70 {
            let mid = 0.5 * (lo + hi);
            if growth(level, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let deep = bisect(l_max);
    let prev = bisect(l_max - 1);
    let band = (deep - prev).abs().max(1e-4);
    let at_edge = deep <= 1e-6 && g.rank() >= 2 || deep >= hi_domain - 1e-9;
    Ok(CriticalExponent {
        value: deep,
        band,
        low_confidence: at_edge || l_max < 4 || band > 0.1,
        levels_used: (l_max - 1, l_max),
    })
}

/// Attracting boundary fixed point of a hyperbolic isometry, by power
/// iteration of the right action on row vectors starting from the base
/// point's direction. The convergence threshold adapts to the matrix
/// conditioning: one application injects direction noise of order
/// eps * |m| / lambda_1, which is the resolution floor for conjugated
/// elements whose fixed points nearly coincide.
pub fn attracting_fixed_point(m: &LorentzMatrix) -> Result<BoundaryPoint> {
    let n = m.dim();
    let mut x = basepoint(n);
    let mut prev: Option<BoundaryPoint> = None;
    for iter in 0..300 {
        let y = m.act_row(&x);
        let growth = y.amax();
        if !(growth > 0.0) || !growth.is_finite() {
            return Err(Error::SingularConfiguration(
                "power iteration left the forward cone".into(),
            ));
        }
        x = y / growth;
        // After normalization `growth` tracks the top eigenvalue.
        let step_tol = (50.0 * f64::EPSILON * m.sup_norm() / growth).max(1e-14);
        if iter >= 10 {
            let dir = direction_of(&x)?;
            if let Some(p) = &prev {
                if p.chordal(&dir) < step_tol {
                    let moved = dir.apply(m)?;
                    if dir.chordal(&moved) > (1e-9_f64).max(1e4 * step_tol) {
                        return Err(Error::SingularConfiguration(
                            "power iteration did not reach a fixed direction".into(),
                        ));
                    }
                    return Ok(dir);
                }
            }
            prev = Some(dir);
        }
    }
    Err(Error::SingularConfiguration(
        "power iteration failed to converge; element may not be hyperbolic".into(),
    ))
}

/// Limit direction of a (possibly far) positive-cone row vector.
fn direction_of(x: &DVector<f64>) -> Result<BoundaryPoint> {
    let n = x.len() - 1;
    // Standard coordinates: y0 timelike, spatial part y_1..y_n.
    let sqrt2 = std::f64::consts::SQRT_2;
    let y0 = (x[0] + x[n]) / sqrt2;
    let mut dir = DVector::zeros(n);
    for i in 1..n {
        dir[i - 1] = x[i];
    }
    dir[n - 1] = (x[0] - x[n]) / sqrt2;
    if y0 <= 0.0 {
        return Err(Error::SingularConfiguration("vector left the forward cone".into()));
    }
    boundary_dir(dir)
}

/// Sampled approximation of the convex core: points on the axes of all
/// short words (geodesics with both endpoints in the limit set), de-duplicated
/// on a grid of pitch `spacing` / 2.
#[derive(Debug, Clone)]
pub struct CoreApproximation {
    samples: Vec<DVector<f64>>,
    pub mesh: f64,
    pub radius_bound: f64,
    pub diameter: f64,
}

impl CoreApproximation {
    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Build the core approximation from axes of nontrivial words of length <=
/// `word_len`, sampled at arclength `spacing` over the parameter range
/// [-span, span] around each axis midpoint.
pub fn core_approximation(
    g: &SchottkyGroup,
    word_len: usize,
    spacing: f64,
    span: f64,
) -> Result<CoreApproximation> {
    if word_len < 1 || !(spacing > 0.0) || !(span > 0.0) {
        return Err(Error::InvalidArgument(
            "need word_len >= 1, spacing > 0, span > 0".into(),
        ));
    }
    let words = enumerate_words(g, word_len);
    let mut seen_axes: HashSet<(u64, u64)> = HashSet::new();
    let mut seen_samples: HashSet<Vec<i64>> = HashSet::new();
    let mut samples: Vec<DVector<f64>> = Vec::new();
    let o = basepoint(g.dim());
    // Only cyclically reduced words: a conjugate w = a v a^{-1} has the
    // deck-translated axis of v, and `distance_to_core` minimizes over deck
    // translates anyway. Their axes also pass near the base point, keeping
    // the fixed-point computation well conditioned.
    let cyclically_reduced = |w: &Word| {
        w.len() <= 1 || w.letters[0] != -*w.letters.last().unwrap()
    };
    for w in words.iter().filter(|w| !w.is_empty() && cyclically_reduced(w)) {
        let plus = attracting_fixed_point(&w.matrix)?;
        let minus = attracting_fixed_point(&w.matrix.inverse())?;
        let key_of = |p: &BoundaryPoint| -> u64 {
            let mut h: u64 = 0xcbf29ce484222325;
            for v in p.ball().iter() {
                let q = (v * 1e8).round() as i64;
                h = (h ^ q as u64).wrapping_mul(0x100000001b3);
            }
            h
        };
        let (ka, kb) = (key_of(&plus), key_of(&minus));
        let axis_key = if ka <= kb { (ka, kb) } else { (kb, ka) };
        if !seen_axes.insert(axis_key) {
            continue;
        }
        let mut u = -span;
        while u <= span + 1e-12 {
            let p = geodesic_point(&plus, &minus, u)?;
            let sample_key: Vec<i64> = p
                .lorentz()
                .iter()
                .map(|v| (v / (spacing * 0.5)).round() as i64)
                .collect();
            if seen_samples.insert(sample_key) {
                samples.push(p.lorentz().clone());
            }
            u += spacing;
        }
    }
    if samples.is_empty() {
        return Err(Error::ConstructionFailed("core approximation is empty".into()));
    }
    let dist = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        let c = form_pair(a, b);
        2.0 * (((c - 1.0).max(0.0) / 2.0).sqrt()).asinh()
    };
    let radius_bound = samples.iter().map(|p| dist(p, &o)).fold(0.0, f64::max);
    let mut diameter = 0.0;
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            diameter = f64::max(diameter, dist(&samples[i], &samples[j]));
        }
    }
    Ok(CoreApproximation {
        samples,
        mesh: spacing,
        radius_bound,
        diameter,
    })
}

/// Distance from the quotient point of `x` to the sampled core: the minimum
/// of d(base . w, c) over core samples c and all reduced words w in the
/// supplied list (which must be closed under inversion, as `enumerate_words`
/// output is). Truncating the deck group makes the value an overestimate by
/// at most the enumeration tail; sampling the core adds at most the mesh.
pub fn distance_to_core(
    words: &[Word],
    core: &CoreApproximation,
    x: &FramePoint,
) -> Result<f64> {
    if core.is_empty() {
        return Err(Error::PreconditionViolation("core approximation is empty".into()));
    }
    if words.is_empty() {
        return Err(Error::InvalidArgument("word list is empty".into()));
    }
    let base = x.base_point().lorentz().clone();
    let o = basepoint(x.dim());
    let cosh_of = |a: &DVector<f64>, b: &DVector<f64>| form_pair(a, b);
    let to_dist = |c: f64| 2.0 * (((c - 1.0).max(0.0) / 2.0).sqrt()).asinh();
    // Translate the query point by each word; sort by distance to the
    // reference point so the scan can stop once the triangle-inequality
    // lower bound d(y, o) - radius_bound exceeds the best value found.
    let mut translated: Vec<(f64, DVector<f64>)> = words
        .iter()
        .map(|w| {
            let y = w.matrix.act_row(&base);
            (to_dist(cosh_of(&y, &o)), y)
        })
        .collect();
    translated.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = f64::INFINITY;
    for (d_o, y) in &translated {
        if d_o - core.radius_bound >= best {
            break;
        }
        let min_cosh = core
            .samples
            .iter()
            .map(|c| cosh_of(y, c))
            .fold(f64::INFINITY, f64::min);
        best = best.min(to_dist(min_cosh));
    }
    Ok(best)
}

/// Result of the Diophantine excursion check along a_{-s} x.
#[derive(Debug, Clone)]
pub enum DiophantineStatus {
    /// The inequality d(core, a_{-s} x) < (1 - epsilon) s held on the whole
    /// grid; `max_ratio` is the largest observed d / s.
    Compliant { max_ratio: f64 },
    /// First grid point where the inequality failed.
    Violated { s: f64, distance: f64 },
}

#[derive(Debug, Clone)]
pub struct DiophantineReport {
    pub status: DiophantineStatus,
    pub epsilon: f64,
    pub s_grid: Vec<f64>,
    pub distances: Vec<f64>,
}

/// Certify membership of a boundary point in the limit set up to the
/// depth-`LIMIT_CELL_DEPTH` cap-cell cover (a sound outer approximation:
/// the limit set is contained in the union of the cells at every depth).
pub fn in_limit_cells(g: &SchottkyGroup, p: &BoundaryPoint, slack: f64) -> Result<bool> {
    let words = enumerate_words(g, LIMIT_CELL_DEPTH);
    for w in words.iter().filter(|w| w.len() == LIMIT_CELL_DEPTH) {
        let cell = cap_image(
            &g.repelling_cap(w.letters[0]).complement(),
            &w.matrix,
        )?;
        if cell.contains_point(p, slack) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Grid evaluation of the Diophantine inequality d(core, a_{-s} x) <
/// (1 - epsilon) s for s in [s0, s_max] with the given step. Requires the
/// backward endpoint of x to lie in the limit set (certified via the cap
/// cells); otherwise the backward ray escapes and the check is vacuous.
#[allow(clippy::too_many_arguments)]
pub fn diophantine_check(
    g: &SchottkyGroup,
    words: &[Word],
    core: &CoreApproximation,
    x: &FramePoint,
    epsilon: f64,
    s0: f64,
    s_max: f64,
    step: f64,
) -> Result<DiophantineReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument("epsilon must lie in (0, 1)".into()));
    }
    if !(s0 >= 1.0 && s_max > s0 && step > 0.0) {
        return Err(Error::InvalidArgument(
            "need s0 >= 1, s_max > s0, step > 0".into(),
        ));
    }
    if !in_limit_cells(g, &x.backward(), 1e-6)? {
        return Err(Error::PreconditionViolation(
            "backward endpoint of x is not in the limit set (cap-cell certificate)".into(),
        ));
    }
    let mut s_grid = Vec::new();
    let mut distances = Vec::new();
    let mut max_ratio: f64 = 0.0;
    let mut s = s0;
    while s <= s_max + 1e-12 {
        let xs = x.flow(-s)?;
        let d = distance_to_core(words, core, &xs)?;
        s_grid.push(s);
        distances.push(d);
        if d >= (1.0 - epsilon) * s {
            return Ok(DiophantineReport {
                status: DiophantineStatus::Violated { s, distance: d },
                epsilon,
                s_grid,
                distances,
            });
        }
        max_ratio = max_ratio.max(d / s);
        s += step;
    }
    Ok(DiophantineReport {
        status: DiophantineStatus::Compliant { max_ratio },
        epsilon,
        s_grid,
        distances,
    })
}
