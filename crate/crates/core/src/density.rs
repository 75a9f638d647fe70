//! Conformal densities and the measures they induce.
//!
//! The boundary density is built by the orbital construction: atoms at the
//! directions of the orbit points o·w over reduced words, weighted by
//! e^{-s·d(o, o·w)} and normalized. Everything downstream is assembled from
//! those atoms by *exact* transport — chart inversion for leaf measures on
//! horospherical orbits, cocycle weights through the Busemann function, and
//! Hopf-coordinate sampling for the global measures — so the scaling and
//! conjugation identities hold at rounding precision rather than at
//! discretization precision.

use nalgebra::DVector;
use rand::Rng;

use crate::boundary::{
    busemann, chart_inverse_prepared, distance_to_raw, frame_from_endpoints, hyp_distance,
    radial_direction, BoundaryPoint, FramePoint, HyperbolicPoint,
};
use crate::error::{Error, Result};
use crate::lorentz::{basepoint, form_pair, HoroDirection, LorentzMatrix};
use crate::quad::gauss_legendre_on;
use crate::rng::stream_rng;
use crate::schottky::{enumerate_words, Cap, SchottkyGroup, Word};

/// Desk-scale shift added to the estimated critical exponent when summing
/// the orbital series: at shallow cutoffs the level sums must contract, and
/// the induced bias is far below the discretization error of the cutoff.
pub const EXPONENT_OFFSET: f64 = 0.01;

/// Below this many atoms in a ball, scale statistics are flagged rather
/// than trusted.
pub const MIN_BALL_ATOMS: usize = 100;

/// Relative widths xi/eta probed by the hyperplane-decay and boundary-ratio
/// fits.
pub const DECAY_FRACTIONS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];

/// Weight-sum defect tolerated by the normalized density.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Patterson density
// ---------------------------------------------------------------------------

/// A purely atomic boundary measure approximating the conformal density of
/// the group: atoms at orbit directions, geometric weights, total mass 1.
#[derive(Debug, Clone)]
pub struct PattersonDensity {
    atoms: Vec<(BoundaryPoint, f64)>,
    exponent: f64,
    word_cutoff: usize,
    reference: HyperbolicPoint,
}

impl PattersonDensity {
    /// Atom directions with their normalized weights.
    pub fn atoms(&self) -> &[(BoundaryPoint, f64)] {
        &self.atoms
    }

    /// The exponent the orbital series was summed at.
    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// Maximal word length feeding the atom set.
    pub fn word_cutoff(&self) -> usize {
        self.word_cutoff
    }

    /// The reference point the weights and all derived cocycles are
    /// anchored at.
    pub fn reference(&self) -> &HyperbolicPoint {
        &self.reference
    }

    pub fn dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Mass of the atoms lying in a cap.
    pub fn mass_in_cap(&self, cell: &Cap) -> f64 {
        self.atoms
            .iter()
            .filter(|(xi, _)| cell.contains_point(xi, 0.0))
            .map(|(_, w)| w)
            .sum()
    }
}

/// Orbital-series density with the reference point at the origin.
pub fn patterson_density(g: &SchottkyGroup, s: f64, cutoff: usize) -> Result<PattersonDensity> {
    patterson_density_based(g, s, cutoff, &HyperbolicPoint::origin(g.dim()))
}

/// Orbital-series density anchored at an arbitrary reference point: atoms
/// stay at the orbit directions, weights become e^{-s·d(base, o·w)}, and
/// every derived cocycle is evaluated against `base`.
///
/// Normalization runs through the origin representative of the conformal
/// family: whatever the reference, the induced origin representative is a
/// probability measure. At the origin itself the atom weights therefore
/// sum to one; at a shifted reference they sum to the family's total mass
/// there, which is what makes derived leaf masses agree across references
/// up to the cutoff error instead of drifting by the normalizing ratio.
pub fn patterson_density_based(
    g: &SchottkyGroup,
    s: f64,
    cutoff: usize,
    base: &HyperbolicPoint,
) -> Result<PattersonDensity> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "series exponent must be positive and finite, got {s}"
        )));
    }
    if cutoff < 3 {
        return Err(Error::InvalidArgument(
            "orbital cutoff must be at least 3 for a usable atom set".into(),
        ));
    }
    if base.dim() != g.dim() {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    let o = basepoint(g.dim());
    let words = enumerate_words(g, cutoff);
    let mut atoms = Vec::with_capacity(words.len().saturating_sub(1));
    let mut level_sums = vec![0.0_f64; cutoff + 1];
    for w in words.iter().filter(|w| !w.is_empty()) {
        let image = w.matrix.act_row(&o);
        let weight = (-s * distance_to_raw(base, &image)).exp();
        level_sums[w.len()] += weight;
        atoms.push((radial_direction(&image)?, weight));
    }
    let ratio = level_sums[cutoff] / level_sums[cutoff - 1];
    if !(ratio < 1.0) {
        return Err(Error::InvalidExponent(format!(
            "level sums grow by factor {ratio:.3} at depth {cutoff}; \
             the orbital series does not contract at exponent {s}"
        )));
    }
    let origin = HyperbolicPoint::origin(g.dim());
    let mut origin_total = 0.0;
    for (xi, w) in &atoms {
        origin_total += w * (s * busemann(xi, base, &origin)?).exp();
    }
    for (_, w) in &mut atoms {
        *w /= origin_total;
    }
    Ok(PattersonDensity {
        atoms,
        exponent: s,
        word_cutoff: cutoff,
        reference: base.clone(),
    })
}

/// Worst relative defect, over the test cells, of the transformation rule
/// ν(cell·γ) = Σ_{ξ in cell} w·e^{-s·b_ξ(o·γ^{-1}, o)}, each cell's defect
/// measured against its own mass. Cells carrying no atoms are rejected.
pub fn conformality_residual(
    nu: &PattersonDensity,
    gamma: &LorentzMatrix,
    cells: &[Cap],
) -> Result<f64> {
    if gamma.dim() != nu.dim() {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    if cells.is_empty() {
        return Err(Error::InvalidArgument("no test cells supplied".into()));
    }
    let pulled = nu.reference.apply(&gamma.inverse())?;
    let mut worst = 0.0_f64;
    for cell in cells {
        let image = crate::schottky::cap_image(cell, gamma)?;
        let mut cell_mass = 0.0;
        let mut transported = 0.0;
        for (xi, w) in &nu.atoms {
            if cell.contains_point(xi, 0.0) {
                cell_mass += w;
                transported += w * (-nu.exponent * busemann(xi, &pulled, &nu.reference)?).exp();
            }
        }
        if cell_mass <= 0.0 {
            return Err(Error::InvalidArgument(
                "a test cell carries no density mass".into(),
            ));
        }
        let direct = nu.mass_in_cap(&image);
        worst = worst.max((direct - transported).abs() / cell_mass);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Leaf measures
// ---------------------------------------------------------------------------

/// Which measure lives on the horospherical window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    /// Density atoms pulled back through the expanding chart, cocycle
    /// weights of the density exponent.
    Ps,
    /// The same on the contracting side.
    PsMinus,
    /// Flat grid quadrature of the coordinate volume.
    Lebesgue,
}

/// An atomic measure on a horospherical coordinate window ‖t‖_sup <= T.
#[derive(Debug, Clone)]
pub struct LeafMeasure {
    kind: LeafKind,
    base: FramePoint,
    window: f64,
    atoms: Vec<(DVector<f64>, f64)>,
    skipped: usize,
    exponent: f64,
    reference: HyperbolicPoint,
}

impl LeafMeasure {
    pub fn kind(&self) -> LeafKind {
        self.kind
    }

    pub fn base(&self) -> &FramePoint {
        &self.base
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Chart parameters with their masses.
    pub fn atoms(&self) -> &[(DVector<f64>, f64)] {
        &self.atoms
    }

    /// Number of density atoms the chart could not represent (they sit at
    /// the one boundary point the chart misses).
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Cocycle exponent carried by the masses.
    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// True when every candidate atom was lost to the chart's blind spot.
    pub fn all_skipped(&self) -> bool {
        self.atoms.is_empty() && self.skipped > 0
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, m)| m).sum()
    }

    /// The frame at a chart coordinate: u_t·base for expanding-side kinds,
    /// v_t·base on the contracting side.
    pub fn frame_at(&self, t: &DVector<f64>) -> FramePoint {
        let dir = match self.kind {
            LeafKind::Ps | LeafKind::Lebesgue => HoroDirection::Expanding,
            LeafKind::PsMinus => HoroDirection::Contracting,
        };
        let u = LorentzMatrix::horo(self.base.dim(), dir, t.as_slice())
            .expect("leaf coordinates are finite");
        self.base.left_mul(&u)
    }

    /// Mass of the sub-window ‖t‖_sup <= eta.
    pub fn mass_in(&self, eta: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|(t, _)| t.amax() <= eta)
            .map(|(_, m)| m)
            .sum()
    }
}

/// Assemble the measure of the given kind on the window ‖t‖_sup <= `window`
/// of the horospherical orbit through `base`.
///
/// Density kinds pull every atom back through the exact chart inverse and
/// weight it by e^{s·b_ξ(ref, π(u_t base))}; atoms at the chart's missing
/// endpoint are counted in `skipped`, atoms outside the window are dropped
/// silently. The Lebesgue kind is a midpoint quadrature with `resolution`
/// nodes per axis (the density argument is ignored).
pub fn leaf_measure(
    kind: LeafKind,
    base: &FramePoint,
    window: f64,
    nu: Option<&PattersonDensity>,
    resolution: usize,
) -> Result<LeafMeasure> {
    if !(window > 0.0) || !window.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "window must be positive and finite, got {window}"
        )));
    }
    let n = base.dim();
    if kind == LeafKind::Lebesgue {
        if resolution == 0 {
            return Err(Error::InvalidArgument(
                "grid quadrature needs a positive resolution".into(),
            ));
        }
        let step = 2.0 * window / resolution as f64;
        let mass = step.powi(n as i32 - 1);
        let mut atoms = Vec::with_capacity(resolution.pow(n as u32 - 1));
        let mut index = vec![0usize; n - 1];
        loop {
            let t = DVector::from_iterator(
                n - 1,
                index.iter().map(|&j| -window + step * (j as f64 + 0.5)),
            );
            atoms.push((t, mass));
            let mut axis = 0;
            loop {
                if axis == n - 1 {
                    return Ok(LeafMeasure {
                        kind,
                        base: base.clone(),
                        window,
                        atoms,
                        skipped: 0,
                        exponent: (n - 1) as f64,
                        reference: HyperbolicPoint::origin(n),
                    });
                }
                index[axis] += 1;
                if index[axis] < resolution {
                    break;
                }
                index[axis] = 0;
                axis += 1;
            }
        }
    }

    let nu = nu.ok_or_else(|| {
        Error::InvalidArgument("density kinds need the boundary density".into())
    })?;
    if nu.dim() != n {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    let minus = kind == LeafKind::PsMinus;
    let horo_dir = if minus {
        HoroDirection::Contracting
    } else {
        HoroDirection::Expanding
    };
    let inv = base.group().inverse();
    let mut atoms = Vec::new();
    let mut skipped = 0usize;
    for (xi, w) in &nu.atoms {
        let Some(t) = chart_inverse_prepared(&inv, xi, minus)? else {
            skipped += 1;
            continue;
        };
        if t.amax() > window {
            continue;
        }
        let flowed = base.left_mul(&LorentzMatrix::horo(n, horo_dir, t.as_slice())?);
        let mass = w * (nu.exponent * busemann(xi, &nu.reference, &flowed.base_point())?).exp();
        atoms.push((t, mass));
    }
    Ok(LeafMeasure {
        kind,
        base: base.clone(),
        window,
        atoms,
        skipped,
        exponent: nu.exponent,
        reference: nu.reference.clone(),
    })
}

/// Transport a leaf measure to the flowed base point a_{-s}·base by the
/// exact per-atom action: expanding charts contract by e^{-s} and their
/// masses pick up e^{-exponent·s}; the contracting chart does the opposite.
/// The result coincides with rebuilding the measure at the new base point
/// and the scaled window, at rounding precision.
pub fn conjugate_flow(leaf: &LeafMeasure, s: f64) -> Result<LeafMeasure> {
    if !s.is_finite() {
        return Err(Error::InvalidArgument("flow time must be finite".into()));
    }
    let (t_scale, m_scale) = match leaf.kind {
        LeafKind::Ps | LeafKind::Lebesgue => ((-s).exp(), (-leaf.exponent * s).exp()),
        LeafKind::PsMinus => (s.exp(), (leaf.exponent * s).exp()),
    };
    Ok(LeafMeasure {
        kind: leaf.kind,
        base: leaf.base.flow(-s)?,
        window: leaf.window * t_scale,
        atoms: leaf
            .atoms
            .iter()
            .map(|(t, m)| (t * t_scale, m * m_scale))
            .collect(),
        skipped: leaf.skipped,
        exponent: leaf.exponent,
        reference: leaf.reference.clone(),
    })
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

/// A value with its sampling error; deterministic quadratures report zero
/// error.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Weighted sum of `f` over the leaf atoms.
pub fn integrate_leaf(leaf: &LeafMeasure, f: impl Fn(&DVector<f64>) -> f64) -> Estimate {
    Estimate {
        value: leaf.atoms.iter().map(|(t, m)| m * f(t)).sum(),
        std_error: 0.0,
    }
}

/// Monte-Carlo estimate of ∫ f over the sampled global measure, with the
/// usual mean / sqrt(N) error bar.
pub fn integrate_sample(sample: &GlobalSample, f: impl Fn(&FramePoint) -> f64) -> Estimate {
    let n = sample.points.len();
    let draws: Vec<f64> = sample
        .points
        .iter()
        .map(|(x, q)| n as f64 * q * f(x))
        .collect();
    mean_with_error(&draws)
}

fn mean_with_error(draws: &[f64]) -> Estimate {
    let n = draws.len();
    if n == 0 {
        return Estimate {
            value: 0.0,
            std_error: 0.0,
        };
    }
    let mean = draws.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Estimate {
            value: mean,
            std_error: 0.0,
        };
    }
    let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    Estimate {
        value: mean,
        std_error: (var / n as f64).sqrt(),
    }
}

// ---------------------------------------------------------------------------
// Global samplers
// ---------------------------------------------------------------------------

/// Which global measure the Hopf sampler targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalKind {
    /// Both endpoints from the boundary density.
    Bms,
    /// Forward endpoint from the round measure, backward from the density.
    Br,
}

/// Importance sample of a global measure in Hopf coordinates: frames with
/// nonnegative weights, reproducible from the seed.
#[derive(Debug, Clone)]
pub struct GlobalSample {
    kind: GlobalKind,
    points: Vec<(FramePoint, f64)>,
    s_window: f64,
    seed: u64,
}

impl GlobalSample {
    pub fn kind(&self) -> GlobalKind {
        self.kind
    }

    pub fn points(&self) -> &[(FramePoint, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn s_window(&self) -> f64 {
        self.s_window
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draw `count` frames of the global measure restricted to the Hopf time
/// window |s| <= s_window: endpoints from the density (or the round measure
/// on the forward side for the spatially spread kind), time uniform, frame
/// twist uniform when the frame bundle has one, and the density cocycles as
/// importance weights. Since |b_{ξ}(o, p)| <= d(o, p), any integrand
/// supported in {d(o, π) <= R} is integrated exactly (in expectation) once
/// s_window >= R.
///
/// The cocycle weights are evaluated through the endpoint pairing rather
/// than at the footpoint: along the geodesic the two cocycles sum to twice
/// the Gromov product, b⁺ + b⁻ = -ln(<ξ⁺, ξ⁻>/2), and the construction
/// pins b⁻ = s exactly. Footpoint pairings lose all precision when the
/// endpoints are close (the frame then sits far from the reference point);
/// the pairing form stays relative-accurate for arbitrarily close pairs.
///
/// Endpoint pairs too close to span a representable frame are redrawn
/// along with exact duplicates. Frames discarded this way sit at distance
/// >= 8 from the reference point, so integrands supported within the time
/// window are unaffected.
pub fn global_sampler(
    kind: GlobalKind,
    nu: &PattersonDensity,
    count: usize,
    s_window: f64,
    seed: u64,
) -> Result<GlobalSample> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if !(s_window > 0.0) || !s_window.is_finite() {
        return Err(Error::InvalidArgument(
            "time window must be positive and finite".into(),
        ));
    }
    let n = nu.dim();
    let mut rng = stream_rng(
        seed,
        match kind {
            GlobalKind::Bms => "global-sampler/bms",
            GlobalKind::Br => "global-sampler/br",
        },
    );
    let cumulative: Vec<f64> = nu
        .atoms
        .iter()
        .scan(0.0, |acc, (_, w)| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let draw_atom = |r: &mut rand_chacha::ChaCha8Rng| -> &BoundaryPoint {
        let u: f64 = r.gen_range(0.0..1.0);
        let idx = cumulative.partition_point(|&c| c <= u).min(nu.atoms.len() - 1);
        &nu.atoms[idx].0
    };
    let plus_exponent = match kind {
        GlobalKind::Bms => nu.exponent,
        GlobalKind::Br => (n - 1) as f64,
    };
    let base_weight = 2.0 * s_window / count as f64;
    let ref_is_origin = nu.reference.ball().amax() == 0.0;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let mut attempts = 0;
        let (frame, q) = loop {
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::SingularConfiguration(
                    "could not draw distinct geodesic endpoints".into(),
                ));
            }
            let minus = draw_atom(&mut rng).clone();
            let plus = match kind {
                GlobalKind::Bms => draw_atom(&mut rng).clone(),
                GlobalKind::Br => random_sphere_dir(&mut rng, n)?,
            };
            if plus.chordal(&minus) < 1e-9 {
                continue;
            }
            let s: f64 = rng.gen_range(-s_window..s_window);
            let twist = if n == 3 {
                let theta: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                Some(LorentzMatrix::rotation_angle(3, theta)?)
            } else {
                None
            };
            let frame = match frame_from_endpoints(&plus, &minus, s, twist.as_ref()) {
                Ok(frame) => frame,
                Err(Error::SingularConfiguration(_)) => continue,
                Err(e) => return Err(e),
            };
            // b⁻ = s by construction; b⁺ from the Gromov product. The
            // null representatives are normalized against the origin, so a
            // shifted reference point adds its own two cocycles.
            let pair = form_pair(plus.null(), minus.null());
            if !(pair > 0.0) {
                continue;
            }
            let mut b_minus = s;
            let mut gromov2 = -(pair / 2.0).ln();
            if !ref_is_origin {
                let origin = HyperbolicPoint::origin(n);
                b_minus += busemann(&minus, &nu.reference, &origin)?;
                gromov2 += busemann(&minus, &nu.reference, &origin)?
                    + busemann(&plus, &nu.reference, &origin)?;
            }
            let b_plus = gromov2 - b_minus;
            let q = base_weight * (plus_exponent * b_plus + nu.exponent * b_minus).exp();
            break (frame, q);
        };
        points.push((frame, q));
    }
    Ok(GlobalSample {
        kind,
        points,
        s_window,
        seed,
    })
}

fn random_sphere_dir(rng: &mut impl Rng, n: usize) -> Result<BoundaryPoint> {
    let dir = match n {
        2 => {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            DVector::from_vec(vec![theta.cos(), theta.sin()])
        }
        3 => {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let rho = (1.0 - z * z).sqrt();
            DVector::from_vec(vec![rho * phi.cos(), rho * phi.sin(), z])
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unsupported boundary dimension {n}"
            )))
        }
    };
    BoundaryPoint::from_ball(dir)
}

// ---------------------------------------------------------------------------
// Quotient plumbing
// ---------------------------------------------------------------------------

/// Total quotient mass of the sampled measure, by the partition of unity
/// 1_B(x) / #{w : x·w ∈ B} over the metric ball B of the given radius
/// around the base point. The word list must be deep enough that words
/// beyond it cannot re-enter the ball from any sampled footpoint; this is
/// checked against the deepest enumerated level and assumes level minima
/// keep growing past it, which holds with room to spare for separated
/// ping-pong configurations.
///
/// The ball may not outgrow the sampler's time window: a deck translate
/// with footpoint in B sits at Hopf time at most its footpoint distance,
/// so radius <= s_window guarantees every counted fiber representative
/// was reachable by the sampler. A larger ball would silently divide by
/// representatives that carry no sampling mass.
pub fn bms_total_mass(
    sample: &GlobalSample,
    words: &[Word],
    radius: f64,
) -> Result<Estimate> {
    if sample.kind != GlobalKind::Bms {
        return Err(Error::InvalidArgument(
            "total quotient mass is only finite for the core-supported kind".into(),
        ));
    }
    if words.is_empty() {
        return Err(Error::InvalidArgument("word list is empty".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    if radius > sample.s_window {
        return Err(Error::PreconditionViolation(format!(
            "partition ball of radius {radius:.2} exceeds the sampled time window \
             {:.2}; fibers outside the window would be counted but never drawn",
            sample.s_window
        )));
    }
    let n = sample
        .points
        .first()
        .map(|(x, _)| x.dim())
        .unwrap_or(2);
    let o = HyperbolicPoint::origin(n);
    let feet: Vec<HyperbolicPoint> = sample.points.iter().map(|(x, _)| x.base_point()).collect();
    let max_inside = feet
        .iter()
        .map(|p| hyp_distance(&o, p))
        .filter(|d| *d <= radius)
        .fold(0.0, f64::max);
    let deepest = words.iter().map(|w| w.len()).max().unwrap_or(0);
    let min_deep = words
        .iter()
        .filter(|w| w.len() == deepest)
        .map(|w| w.orbit_distance)
        .fold(f64::INFINITY, f64::min);
    if min_deep <= radius + max_inside {
        return Err(Error::PreconditionViolation(format!(
            "deck truncation too shallow: deepest level reaches distance {min_deep:.2} \
             but fibers must be certified out to {:.2}",
            radius + max_inside
        )));
    }
    let draws: Vec<f64> = sample
        .points
        .iter()
        .zip(&feet)
        .map(|((_, q), p)| {
            if hyp_distance(&o, p) > radius {
                return 0.0;
            }
            let fiber = words
                .iter()
                .filter(|w| distance_to_raw(&o, &w.matrix.act_row(p.lorentz())) <= radius)
                .count();
            sample.points.len() as f64 * q / fiber as f64
        })
        .collect();
    Ok(mean_with_error(&draws))
}

/// Estimate the quotient integral of a Γ-periodized function given by one
/// compactly supported box representative: each sample footpoint inside the
/// ball B(s_window) is unfolded over the deck words, `f` summed over the
/// translates, and the draw divided by the point's in-ball fiber count so
/// that quotient points with several window representatives are not
/// multiply counted. `support_radius` must bound d(o, π) on the support of
/// `f`; it only prunes the word scan. The word list must satisfy the same
/// depth condition as for the total mass.
pub fn integrate_quotient(
    sample: &GlobalSample,
    words: &[Word],
    support_radius: f64,
    f: impl Fn(&FramePoint) -> f64,
) -> Result<Estimate> {
    if words.is_empty() {
        return Err(Error::InvalidArgument("word list is empty".into()));
    }
    let radius = sample.s_window;
    let mut by_distance: Vec<&Word> = words.iter().collect();
    by_distance.sort_by(|a, b| a.orbit_distance.total_cmp(&b.orbit_distance));
    let n = sample.points.first().map(|(x, _)| x.dim()).unwrap_or(2);
    let o = HyperbolicPoint::origin(n);
    let feet: Vec<HyperbolicPoint> = sample.points.iter().map(|(x, _)| x.base_point()).collect();
    let max_inside = feet
        .iter()
        .map(|p| hyp_distance(&o, p))
        .filter(|d| *d <= radius)
        .fold(0.0, f64::max);
    let deepest = words.iter().map(|w| w.len()).max().unwrap_or(0);
    let min_deep = words
        .iter()
        .filter(|w| w.len() == deepest)
        .map(|w| w.orbit_distance)
        .fold(f64::INFINITY, f64::min);
    if min_deep <= radius + max_inside {
        return Err(Error::PreconditionViolation(format!(
            "deck truncation too shallow: deepest level reaches distance {min_deep:.2} \
             but fibers must be certified out to {:.2}",
            radius + max_inside
        )));
    }
    let draws: Vec<f64> = sample
        .points
        .iter()
        .zip(&feet)
        .map(|((x, q), p)| {
            let d0 = hyp_distance(&o, p);
            if d0 > radius {
                return 0.0;
            }
            let fiber = words
                .iter()
                .filter(|w| distance_to_raw(&o, &w.matrix.act_row(p.lorentz())) <= radius)
                .count();
            let mut acc = 0.0;
            for w in &by_distance {
                if w.orbit_distance > d0 + support_radius {
                    break;
                }
                acc += f(&x.right_mul(&w.matrix));
            }
            sample.points.len() as f64 * q * acc / fiber as f64
        })
        .collect();
    Ok(mean_with_error(&draws))
}

// ---------------------------------------------------------------------------
// Transverse slices and the product structure
// ---------------------------------------------------------------------------

/// One node of a transverse quadrature: the slice coordinates, the combined
/// mass (density atom × cocycle × quadrature weights) and the assembled
/// frame m·a_s·v_r·base.
#[derive(Debug, Clone)]
pub struct TransverseAtom {
    pub angle: f64,
    pub s: f64,
    pub r: DVector<f64>,
    pub mass: f64,
    frame: FramePoint,
}

impl TransverseAtom {
    pub fn frame(&self) -> &FramePoint {
        &self.frame
    }
}

/// A measure on a transverse slice through `base`: contracting-chart atoms
/// of the density, crossed with quadrature nodes in the flow time and (in
/// the three-dimensional case) the frame twist.
#[derive(Debug, Clone)]
pub struct TransverseMeasure {
    base: FramePoint,
    radius: f64,
    atoms: Vec<TransverseAtom>,
    skipped: usize,
}

impl TransverseMeasure {
    pub fn base(&self) -> &FramePoint {
        &self.base
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn atoms(&self) -> &[TransverseAtom] {
        &self.atoms
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }
}

/// Build the transverse slice measure of radius `radius` at `base`:
/// contracting-chart pullbacks of the density within the radius, times
/// Gauss–Legendre nodes in the flow coordinate on [-radius, radius], times
/// twist nodes weighted by the round probability measure for n = 3. The
/// mass of each node carries the cocycle e^{s·b_ξ(ref, π(p·base))} at its
/// own frame, so flow-time dependence is exact, not linearized.
pub fn transverse_measure(
    nu: &PattersonDensity,
    base: &FramePoint,
    radius: f64,
    flow_nodes: usize,
    twist_nodes: usize,
) -> Result<TransverseMeasure> {
    let n = base.dim();
    if nu.dim() != n {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument("slice radius must be positive".into()));
    }
    if flow_nodes == 0 || (n == 3 && twist_nodes == 0) {
        return Err(Error::InvalidArgument(
            "quadrature orders must be positive".into(),
        ));
    }
    let inv = base.group().inverse();
    let mut pulled = Vec::new();
    let mut skipped = 0usize;
    for (xi, w) in &nu.atoms {
        match chart_inverse_prepared(&inv, xi, true)? {
            Some(r) if r.amax() <= radius => pulled.push((r, xi, *w)),
            Some(_) => {}
            None => skipped += 1,
        }
    }
    let flow_rule = gauss_legendre_on(flow_nodes, -radius, radius);
    let twist_rule: Vec<(f64, f64)> = if n == 3 {
        gauss_legendre_on(twist_nodes, -radius, radius)
            .into_iter()
            .map(|(x, w)| (x, w / std::f64::consts::TAU))
            .collect()
    } else {
        vec![(0.0, 1.0)]
    };
    let mut atoms = Vec::with_capacity(pulled.len() * flow_rule.len() * twist_rule.len());
    for (r, xi, w) in &pulled {
        let v = LorentzMatrix::horo(n, HoroDirection::Contracting, r.as_slice())?;
        for &(s, ws) in &flow_rule {
            let av = &LorentzMatrix::flow(n, s)? * &v;
            for &(angle, wt) in &twist_rule {
                let p = if n == 3 {
                    &LorentzMatrix::rotation_angle(3, angle)? * &av
                } else {
                    av.clone()
                };
                let frame = base.left_mul(&p);
                let mass = w
                    * ws
                    * wt
                    * (nu.exponent * busemann(xi, &nu.reference, &frame.base_point())?).exp();
                atoms.push(TransverseAtom {
                    angle,
                    s,
                    r: r.clone(),
                    mass,
                    frame,
                });
            }
        }
    }
    Ok(TransverseMeasure {
        base: base.clone(),
        radius,
        atoms,
        skipped,
    })
}

/// Integral of `f` against the product of the transverse slice with the
/// expanding leaf measures over its frames: the slice supplies the outer
/// weights, and each node carries a fresh leaf of window `t_window`. For
/// integrands supported inside the product window, this is the global
/// core-supported measure evaluated through its product structure, and
/// must agree with Hopf-coordinate sampling.
pub fn product_structure_integral(
    nu: &PattersonDensity,
    slice: &TransverseMeasure,
    t_window: f64,
    f: impl Fn(&FramePoint) -> f64,
) -> Result<Estimate> {
    let n = slice.base.dim();
    let mut value = 0.0;
    for atom in &slice.atoms {
        let leaf = leaf_measure(LeafKind::Ps, &atom.frame, t_window, Some(nu), 0)?;
        let mut inner = 0.0;
        for (t, m) in leaf.atoms() {
            let frame = atom
                .frame
                .left_mul(&LorentzMatrix::horo(n, HoroDirection::Expanding, t.as_slice())?);
            inner += m * f(&frame);
        }
        value += atom.mass * inner;
    }
    Ok(Estimate {
        value,
        std_error: 0.0,
    })
}

// ---------------------------------------------------------------------------
// Shadow statistics
// ---------------------------------------------------------------------------

/// Log-log fit of window mass against window size.
#[derive(Debug, Clone)]
pub struct ShadowFit {
    pub slope: f64,
    /// Half-width of the normal 95% band on the slope.
    pub band: f64,
    /// The fitted (log window, log mass) pairs.
    pub points: Vec<(f64, f64)>,
}

/// Fit log mass(B_U(T)) against log T over the grid. The leaf is built once
/// at the largest window; smaller masses are partial sums. `resolution`
/// only matters for the Lebesgue kind.
pub fn shadow_fit(
    kind: LeafKind,
    nu: Option<&PattersonDensity>,
    base: &FramePoint,
    t_grid: &[f64],
    resolution: usize,
) -> Result<ShadowFit> {
    if t_grid.len() < 3 {
        return Err(Error::InvalidArgument(
            "shadow fit needs at least three window sizes".into(),
        ));
    }
    if t_grid.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument("window sizes must be positive".into()));
    }
    let t_max = t_grid.iter().cloned().fold(0.0, f64::max);
    let leaf = leaf_measure(kind, base, t_max, nu, resolution)?;
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let m = leaf.mass_in(t);
        if m <= 0.0 {
            return Err(Error::EmptyWindow(format!(
                "no leaf mass inside window {t}"
            )));
        }
        points.push((t.ln(), m.ln()));
    }
    let (slope, _, se) = ols_line(&points).ok_or_else(|| {
        Error::InvalidArgument("degenerate abscissa in shadow fit".into())
    })?;
    Ok(ShadowFit {
        slope,
        band: 1.96 * se,
        points,
    })
}

/// Ordinary least squares for y = a·x + b: (a, b, se_a). None when the
/// abscissa is degenerate or there are fewer than three points.
pub(crate) fn ols_line(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx <= 1e-300 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let e = p.1 - (a * p.0 + b);
            e * e
        })
        .sum();
    let se = (ss_res / (nf - 2.0) / sxx).sqrt();
    Some((a, b, se))
}

// ---------------------------------------------------------------------------
// Friendliness statistics
// ---------------------------------------------------------------------------

/// Scale statistics of a leaf measure: doubling ratios over the scale grid,
/// the hyperplane-neighborhood decay exponent, and the boundary-ratio
/// exponent, with a confidence flag tied to atom counts.
#[derive(Debug, Clone)]
pub struct FriendlinessReport {
    pub scales: Vec<f64>,
    /// mass(B(2η)) / mass(B(η)) per scale.
    pub doubling_ratios: Vec<f64>,
    pub doubling_max_ratio: f64,
    /// Fitted exponent of mass(N(L, ξ) ∩ B(η)) / mass(B(η)) against ξ/η.
    pub decay_exponent: f64,
    /// Half-width of the normal 95% band on the decay exponent.
    pub decay_band: f64,
    /// Fitted exponent of mass(B(η+ξ))/mass(B(η)) - 1 against ξ/η.
    pub boundary_ratio_exponent: f64,
    /// Smallest atom count over the probed balls.
    pub min_ball_atoms: usize,
    pub low_confidence: bool,
}

/// Friendliness statistics of the expanding-leaf measure of the density at
/// `base`. The leaf window is sized from the scale grid.
pub fn friendliness_report(
    nu: &PattersonDensity,
    base: &FramePoint,
    scales: &[f64],
    hyperplanes_per_scale: usize,
    seed: u64,
) -> Result<FriendlinessReport> {
    let max_scale = scales.iter().cloned().fold(0.0, f64::max);
    if !(max_scale > 0.0) {
        return Err(Error::InvalidArgument("scale grid must be positive".into()));
    }
    let leaf = leaf_measure(LeafKind::Ps, base, 2.5 * max_scale, Some(nu), 0)?;
    friendliness_of_leaf(&leaf, scales, hyperplanes_per_scale, seed)
}

/// The same statistics for an already-built leaf measure (any kind); the
/// flat kind serves as the control where every exponent is known.
pub fn friendliness_of_leaf(
    leaf: &LeafMeasure,
    scales: &[f64],
    hyperplanes_per_scale: usize,
    seed: u64,
) -> Result<FriendlinessReport> {
    if scales.is_empty() || hyperplanes_per_scale == 0 {
        return Err(Error::InvalidArgument(
            "need a scale grid and at least one hyperplane per scale".into(),
        ));
    }
    let max_scale = scales.iter().cloned().fold(0.0, f64::max);
    let max_frac = DECAY_FRACTIONS.iter().cloned().fold(0.0, f64::max);
    if 2.0 * max_scale > leaf.window() || (1.0 + max_frac) * max_scale > leaf.window() {
        return Err(Error::InvalidArgument(
            "scale grid exceeds the leaf window".into(),
        ));
    }
    let dim = leaf.base.dim() - 1;
    let mut rng = stream_rng(seed, "friendliness/hyperplanes");
    let mut doubling_ratios = Vec::with_capacity(scales.len());
    let mut min_ball_atoms = usize::MAX;
    let mut decay_pts: Vec<(f64, f64)> = Vec::new();
    let mut boundary_pts: Vec<(f64, f64)> = Vec::new();
    let mut attempted = 0usize;
    let mut dropped = 0usize;
    for &eta in scales {
        let ball: Vec<usize> = (0..leaf.atoms.len())
            .filter(|&i| leaf.atoms[i].0.amax() <= eta)
            .collect();
        min_ball_atoms = min_ball_atoms.min(ball.len());
        let ball_mass: f64 = ball.iter().map(|&i| leaf.atoms[i].1).sum();
        if ball_mass <= 0.0 {
            return Err(Error::EmptyWindow(format!(
                "no leaf mass at scale {eta}"
            )));
        }
        doubling_ratios.push(leaf.mass_in(2.0 * eta) / ball_mass);

        // Mass-weighted centers inside the ball, random orientations.
        let cum: Vec<f64> = ball
            .iter()
            .scan(0.0, |acc, &i| {
                *acc += leaf.atoms[i].1;
                Some(*acc)
            })
            .collect();
        for _ in 0..hyperplanes_per_scale {
            let u: f64 = rng.gen_range(0.0..ball_mass);
            let pick = ball[cum.partition_point(|&c| c <= u).min(ball.len() - 1)];
            let center = leaf.atoms[pick].0.clone();
            let normal = random_unit(&mut rng, dim);
            for &frac in &DECAY_FRACTIONS {
                attempted += 1;
                let xi = frac * eta;
                let strip: f64 = ball
                    .iter()
                    .map(|&i| &leaf.atoms[i])
                    .filter(|(t, _)| ((t - &center).dot(&normal)).abs() <= xi)
                    .map(|(_, m)| m)
                    .sum();
                let ratio = strip / ball_mass;
                if ratio > 0.0 && ratio < 1.0 {
                    decay_pts.push((frac.ln(), ratio.ln()));
                } else {
                    dropped += 1;
                }
            }
        }
        for &frac in &DECAY_FRACTIONS {
            let grown = leaf.mass_in(eta * (1.0 + frac));
            let ratio = grown / ball_mass - 1.0;
            if ratio > 0.0 {
                boundary_pts.push((frac.ln(), ratio.ln()));
            }
        }
    }
    let (decay_exponent, _, decay_se) = ols_line(&decay_pts).ok_or_else(|| {
        Error::EmptyWindow("not enough nonzero hyperplane-neighborhood masses".into())
    })?;
    let boundary_ratio_exponent = ols_line(&boundary_pts).map(|(a, _, _)| a).unwrap_or(0.0);
    let doubling_max_ratio = doubling_ratios.iter().cloned().fold(0.0, f64::max);
    Ok(FriendlinessReport {
        scales: scales.to_vec(),
        doubling_ratios,
        doubling_max_ratio,
        decay_exponent,
        decay_band: 1.96 * decay_se,
        boundary_ratio_exponent,
        min_ball_atoms,
        low_confidence: min_ball_atoms < MIN_BALL_ATOMS || 2 * dropped > attempted,
    })
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
    if dim == 1 {
        return DVector::from_vec(vec![1.0]);
    }
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        let norm = v.norm();
        if norm > 0.1 {
            return v / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schottky::{suffix_cell, SchottkyConfig};
    use approx::assert_abs_diff_eq;

    fn standard() -> SchottkyGroup {
        SchottkyGroup::build(&SchottkyConfig::standard_n2()).unwrap()
    }

    fn standard_density(cutoff: usize) -> (SchottkyGroup, PattersonDensity) {
        let g = standard();
        let delta = crate::schottky::critical_exponent_estimate(&g, 4, 6)
            .unwrap()
            .value;
        let nu = patterson_density(&g, delta + EXPONENT_OFFSET, cutoff).unwrap();
        (g, nu)
    }

    #[test]
    fn cyclic_atoms_sit_on_the_axis_endpoints() {
        // The cyclic group's axis runs through the base point, so every
        // orbit direction is exactly one of the two fixed directions.
        let g = SchottkyGroup::build(&SchottkyConfig::cyclic_n2(3.0)).unwrap();
        let nu = patterson_density(&g, 0.4, 6).unwrap();
        assert_eq!(nu.len(), 12);
        let plus = DVector::from_vec(vec![1.0, 0.0]);
        for (xi, w) in nu.atoms() {
            assert!(*w > 0.0);
            assert!((xi.ball() - &plus).norm() < 1e-9 || (xi.ball() + &plus).norm() < 1e-9);
        }
        let total: f64 = nu.atoms().iter().map(|(_, w)| w).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = WEIGHT_SUM_TOL);
    }

    #[test]
    fn noncontracting_series_is_rejected() {
        let g = standard();
        // Far below the critical exponent the level sums grow.
        let err = patterson_density(&g, 0.2, 6).unwrap_err();
        assert!(matches!(err, Error::InvalidExponent(_)));
        assert!(patterson_density(&g, 0.2, 2).is_err());
        assert!(patterson_density(&g, -1.0, 6).is_err());
    }

    #[test]
    fn atoms_lie_in_the_pairing_caps() {
        let (g, nu) = standard_density(6);
        for (xi, _) in nu.atoms() {
            assert!(
                g.caps().iter().any(|c| c.contains_point(xi, 1e-9)),
                "atom escaped the pairing balls"
            );
        }
    }

    #[test]
    fn conformality_residual_vanishes_for_identity() {
        let (g, nu) = standard_density(5);
        let cells: Vec<Cap> = g.caps().to_vec();
        let r = conformality_residual(&nu, &LorentzMatrix::identity(2), &cells).unwrap();
        assert!(r < 1e-12, "identity residual {r}");
    }

    #[test]
    fn conformality_residual_rejects_unpopulated_cells() {
        let (_, nu) = standard_density(5);
        // A small cap in a diagonal gap direction holds no orbit atoms.
        let gap = Cap::new(
            DVector::from_vec(vec![std::f64::consts::FRAC_1_SQRT_2; 2]),
            0.05,
        )
        .unwrap();
        let err = conformality_residual(&nu, &LorentzMatrix::identity(2), &[gap]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(matches!(
            conformality_residual(&nu, &LorentzMatrix::identity(2), &[]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn deeper_cutoffs_tighten_conformality() {
        let g = standard();
        let delta = crate::schottky::critical_exponent_estimate(&g, 4, 6)
            .unwrap()
            .value;
        let s = delta + EXPONENT_OFFSET;
        let coarse = patterson_density(&g, s, 4).unwrap();
        let fine = patterson_density(&g, s, 8).unwrap();
        let gamma = g.letter_matrix(1).clone();

        // Refinement must hold on every pairing cap, including the two
        // holding the fixed points of gamma. Those converge slowly: the
        // atom set has no identity word, so its gamma-translate enters one
        // side of the balance only, a deficit that dies off with the level
        // granularity rather than with the tail mass.
        let all: Vec<Cap> = g.caps().to_vec();
        let r4 = conformality_residual(&coarse, &gamma, &all).unwrap();
        let r8 = conformality_residual(&fine, &gamma, &all).unwrap();
        assert!(r8 < r4, "refinement failed: {r8} !< {r4}");

        // Transverse cells (the other generator's caps) see only genuine
        // mass transport; the deep value is pinned as a regression
        // baseline.
        let transverse = vec![g.attracting_cap(2).clone(), g.repelling_cap(2).clone()];
        let t4 = conformality_residual(&coarse, &gamma, &transverse).unwrap();
        let t8 = conformality_residual(&fine, &gamma, &transverse).unwrap();
        assert!(t8 < t4, "transverse refinement failed: {t8} !< {t4}");
        assert!(t8 < 0.1, "deep residual too large: {t8}");
        assert!((t8 - 0.04086).abs() < 1e-3, "regression baseline moved: {t8}");
    }

    #[test]
    fn cell_masses_spread_with_depth() {
        let g = standard();
        let delta = crate::schottky::critical_exponent_estimate(&g, 4, 6)
            .unwrap()
            .value;
        let s = delta + EXPONENT_OFFSET;
        let max_cell_mass = |nu: &PattersonDensity| -> f64 {
            let mut worst = 0.0_f64;
            for a in g.letters() {
                for b in g.letters() {
                    if a != -b {
                        let cell = suffix_cell(&g, &[a, b]).unwrap();
                        worst = worst.max(nu.mass_in_cap(&cell));
                    }
                }
            }
            worst
        };
        let coarse = patterson_density(&g, s, 4).unwrap();
        let fine = patterson_density(&g, s, 8).unwrap();
        assert!(max_cell_mass(&fine) < max_cell_mass(&coarse));
    }

    #[test]
    fn ps_leaf_is_monotone_and_skips_the_blind_atom() {
        let (_, nu) = standard_density(6);
        let base = FramePoint::identity(2);
        let leaf = leaf_measure(LeafKind::Ps, &base, 8.0, Some(&nu), 0).unwrap();
        // The backward endpoint of the identity frame is itself an orbit
        // direction (the axis through the base point), so the chart must
        // report blind atoms.
        assert!(leaf.skipped() > 0);
        assert!(!leaf.all_skipped());
        let masses = [0.5, 1.0, 2.0, 4.0, 8.0].map(|t| leaf.mass_in(t));
        for pair in masses.windows(2) {
            assert!(pair[0] <= pair[1] + 1e-15);
        }
        assert!(masses[4] <= leaf.total_mass() + 1e-15);
        assert!(leaf.atoms().iter().all(|(_, m)| *m > 0.0));
    }

    #[test]
    fn leaf_kinds_validate_inputs() {
        let (_, nu) = standard_density(4);
        let base = FramePoint::identity(2);
        assert!(matches!(
            leaf_measure(LeafKind::Ps, &base, 1.0, None, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(leaf_measure(LeafKind::Ps, &base, 0.0, Some(&nu), 0).is_err());
        assert!(leaf_measure(LeafKind::Lebesgue, &base, 1.0, None, 0).is_err());
    }

    #[test]
    fn flow_scaling_identity_is_exact() {
        let (_, nu) = standard_density(6);
        let base = FramePoint::identity(2);
        let s = 0.7_f64;
        let big = leaf_measure(LeafKind::Ps, &base, s.exp(), Some(&nu), 0).unwrap();
        let small = leaf_measure(
            LeafKind::Ps,
            &base.flow(-s).unwrap(),
            1.0,
            Some(&nu),
            0,
        )
        .unwrap();
        let lhs = big.total_mass();
        let rhs = (nu.exponent() * s).exp() * small.total_mass();
        assert!(
            ((lhs - rhs) / rhs).abs() < 1e-10,
            "scaling defect {}",
            ((lhs - rhs) / rhs).abs()
        );
    }

    #[test]
    fn conjugate_flow_matches_direct_rebuild() {
        let (_, nu) = standard_density(5);
        let base = FramePoint::identity(2);
        let s = 0.4;
        for kind in [LeafKind::Ps, LeafKind::PsMinus, LeafKind::Lebesgue] {
            let window = 1.5;
            let leaf = leaf_measure(kind, &base, window, Some(&nu), 40).unwrap();
            let moved = conjugate_flow(&leaf, s).unwrap();
            let rebuilt = leaf_measure(
                kind,
                &base.flow(-s).unwrap(),
                moved.window(),
                Some(&nu),
                40,
            )
            .unwrap();
            assert_eq!(moved.atoms().len(), rebuilt.atoms().len(), "{kind:?}");
            for ((t1, m1), (t2, m2)) in moved.atoms().iter().zip(rebuilt.atoms()) {
                assert!((t1 - t2).amax() < 1e-10, "{kind:?} parameter drift");
                assert!(
                    (m1 - m2).abs() <= 1e-10 * m2.max(1.0),
                    "{kind:?} mass drift: {m1} vs {m2}"
                );
            }
        }
    }

    #[test]
    fn flat_leaf_mass_is_the_box_volume() {
        for n in [2usize, 3] {
            let base = FramePoint::identity(n);
            let t = 1.5;
            let leaf = leaf_measure(LeafKind::Lebesgue, &base, t, None, 40).unwrap();
            let expect = (2.0 * t).powi(n as i32 - 1);
            assert_abs_diff_eq!(leaf.total_mass(), expect, epsilon = 1e-12 * expect);
            assert_eq!(leaf.skipped(), 0);
        }
    }

    #[test]
    fn leaf_integration_is_linear() {
        let (_, nu) = standard_density(5);
        let leaf = leaf_measure(LeafKind::Ps, &FramePoint::identity(2), 2.0, Some(&nu), 0)
            .unwrap();
        let one = integrate_leaf(&leaf, |_| 1.0);
        assert_abs_diff_eq!(one.value, leaf.total_mass(), epsilon = 1e-14);
        assert_eq!(one.std_error, 0.0);
        let zero = integrate_leaf(&leaf, |_| 0.0);
        assert_eq!(zero.value, 0.0);
        let f = |t: &DVector<f64>| t[0].sin();
        let g = |t: &DVector<f64>| (t[0] * t[0]).cos();
        let combo = integrate_leaf(&leaf, |t| 2.0 * f(t) - 3.5 * g(t)).value;
        let parts = 2.0 * integrate_leaf(&leaf, f).value - 3.5 * integrate_leaf(&leaf, g).value;
        assert_abs_diff_eq!(combo, parts, epsilon = 1e-12);
    }

    #[test]
    fn sampler_reproduces_from_seed() {
        let (_, nu) = standard_density(5);
        let a = global_sampler(GlobalKind::Bms, &nu, 40, 3.0, 11).unwrap();
        let b = global_sampler(GlobalKind::Bms, &nu, 40, 3.0, 11).unwrap();
        let c = global_sampler(GlobalKind::Bms, &nu, 40, 3.0, 12).unwrap();
        assert_eq!(a.len(), 40);
        for ((xa, qa), (xb, qb)) in a.points().iter().zip(b.points()) {
            assert_eq!(qa, qb);
            assert!((xa.group().matrix() - xb.group().matrix()).amax() == 0.0);
        }
        let qa: f64 = a.points().iter().map(|(_, q)| q).sum();
        let qc: f64 = c.points().iter().map(|(_, q)| q).sum();
        assert!((qa - qc).abs() > 0.0);
        assert!(a.points().iter().all(|(_, q)| *q > 0.0));
    }

    #[test]
    fn sampler_weights_match_footpoint_cocycles() {
        // The pairing form of the weight must agree with the footpoint
        // evaluation it replaces, wherever the latter is well conditioned.
        let (_, nu) = standard_density(5);
        let origin = HyperbolicPoint::origin(2);
        for kind in [GlobalKind::Bms, GlobalKind::Br] {
            let count = 40;
            let window = 1.2;
            let sample = global_sampler(kind, &nu, count, window, 7).unwrap();
            let e_plus = match kind {
                GlobalKind::Bms => nu.exponent(),
                GlobalKind::Br => 1.0,
            };
            let mut checked = 0;
            for (x, q) in sample.points() {
                let foot = x.base_point();
                if hyp_distance(&origin, &foot) > 5.0 {
                    continue;
                }
                let direct = (e_plus * busemann(&x.forward(), nu.reference(), &foot).unwrap()
                    + nu.exponent() * busemann(&x.backward(), nu.reference(), &foot).unwrap())
                .exp()
                    * 2.0
                    * window
                    / count as f64;
                assert!(
                    ((q - direct) / direct).abs() < 1e-6,
                    "{kind:?}: weight {q} vs footpoint form {direct}"
                );
                checked += 1;
            }
            assert!(checked > 10, "{kind:?}: too few well-conditioned frames");
        }
    }

    #[test]
    fn quotient_mass_guards_its_truncation() {
        let (g, nu) = standard_density(5);
        let sample = global_sampler(GlobalKind::Bms, &nu, 50, 3.0, 5).unwrap();
        // Length-1 words reach distance 3: far too shallow for radius 3.
        let shallow = enumerate_words(&g, 1);
        assert!(matches!(
            bms_total_mass(&sample, &shallow, 3.0),
            Err(Error::PreconditionViolation(_))
        ));
        let words = enumerate_words(&g, 4);
        let m = bms_total_mass(&sample, &words, 3.0).unwrap();
        assert!(m.value > 0.0);
        assert!(matches!(
            bms_total_mass(
                &global_sampler(GlobalKind::Br, &nu, 10, 3.0, 5).unwrap(),
                &words,
                3.0
            ),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn transverse_slice_carries_positive_mass() {
        let (_, nu) = standard_density(6);
        let base = FramePoint::identity(2);
        let slice = transverse_measure(&nu, &base, 0.3, 6, 1).unwrap();
        assert!(!slice.atoms().is_empty());
        assert!(slice.total_mass() > 0.0);
        assert!(slice.skipped() > 0); // the forward fixed direction is blind
        for atom in slice.atoms() {
            assert!(atom.s.abs() <= 0.3 + 1e-12);
            assert!(atom.r.amax() <= 0.3 + 1e-12);
            assert_eq!(atom.angle, 0.0);
        }
    }
}
