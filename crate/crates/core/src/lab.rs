//! The experiment layer: compactly supported test functions on admissible
//! boxes with analytic Sobolev bounds, window averages along expanding
//! horospherical leaves, flow-translate integrals, correlation decay under
//! the frame flow, sublevel-set goodness fits, core nondivergence masses,
//! and rate fitting for the resulting discrepancy tables.
//!
//! Functions on the quotient are represented by one box chart plus the deck
//! group: evaluating at a frame scans the word list for the translate that
//! lands inside the box. The scan is pruned by footpoint distances, so its
//! cost is governed by the orbit points actually near the box, not by the
//! cutoff.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::boundary::{distance_to_raw, hyp_distance, FramePoint, HyperbolicPoint};
use crate::density::{
    bms_total_mass, integrate_leaf, integrate_sample, leaf_measure, ols_line, Estimate,
    GlobalKind, GlobalSample, LeafKind, LeafMeasure, PattersonDensity,
};
use crate::error::{Error, Result};
use crate::lorentz::{basepoint, decompose_up, form_pair, HoroDirection, LorentzMatrix};
use crate::schottky::{
    core_approximation, diophantine_check, distance_to_core, enumerate_words, CoreApproximation,
    DiophantineReport, SchottkyGroup, Word,
};

/// Word-length cutoff for locating quotient points inside a box chart.
pub const LOCATION_CUTOFF: usize = 8;
/// Word-length cutoff for fiber counts and core distances.
pub const MASS_CUTOFF: usize = 6;
/// Default doubling grid for window-average experiments.
pub const DEFAULT_T_GRID: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];
/// Default flow-time grid for translate and correlation experiments.
pub const DEFAULT_S_GRID: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
/// Leaves carrying less window mass than this are dropped from translate
/// ensembles: their normalized integrals are pure rounding noise.
const MASS_FLOOR: f64 = 1e-12;
/// Extra slack added to pruning radii; absorbs the footpoint-distance error
/// of deep matrix products.
const PRUNE_SLACK: f64 = 0.1;

// ---------------------------------------------------------------------------
// Context
// ---------------------------------------------------------------------------

/// Shared context for experiments on one group: the deck words for locating
/// quotient points (radius-sorted), the shallower list for fiber counts and
/// core distances, and the sampled core surrogate.
pub struct Lab {
    group: SchottkyGroup,
    words: Arc<Vec<Word>>,
    mass_words: Vec<Word>,
    core: CoreApproximation,
}

impl Lab {
    pub fn new(group: &SchottkyGroup) -> Result<Self> {
        let mut words = enumerate_words(group, LOCATION_CUTOFF);
        words.sort_by(|a, b| a.orbit_distance.total_cmp(&b.orbit_distance));
        let mass_words = enumerate_words(group, MASS_CUTOFF);
        let core = core_approximation(group, 5, 0.1, 2.0)?;
        Ok(Lab {
            group: group.clone(),
            words: Arc::new(words),
            mass_words,
            core,
        })
    }

    pub fn group(&self) -> &SchottkyGroup {
        &self.group
    }

    pub fn core(&self) -> &CoreApproximation {
        &self.core
    }

    /// Deck words used for locating quotient points, sorted by orbit
    /// distance from the base point.
    pub fn location_words(&self) -> &[Word] {
        &self.words
    }

    pub fn mass_words(&self) -> &[Word] {
        &self.mass_words
    }

    /// Build a smooth bump on the admissible box `B_U(η₁)·P_{η₂}·g`: a
    /// tensor product of `(1-x²)^ℓ` profiles in the box coordinates, scaled
    /// to the given peak. Admissibility (the chart injects into the
    /// quotient) is certified by comparing the shortest deck displacement of
    /// the box footpoint against twice the box reach.
    pub fn make_bump(&self, spec: &BoxSpec, smoothness: u32, peak: f64) -> Result<TestFunction> {
        let n = self.group.dim();
        if spec.base.dim() != n {
            return Err(Error::InvalidArgument(
                "box basepoint dimension does not match the group".into(),
            ));
        }
        if !(spec.eta_u > 0.0) || !(spec.eta_p > 0.0) || !spec.eta_u.is_finite()
            || !spec.eta_p.is_finite()
        {
            return Err(Error::InvalidArgument(
                "box half-widths must be positive and finite".into(),
            ));
        }
        if smoothness == 0 {
            return Err(Error::InvalidArgument(
                "smoothness order must be at least one".into(),
            ));
        }
        if !(peak > 0.0) || !peak.is_finite() {
            return Err(Error::InvalidArgument("peak must be positive and finite".into()));
        }
        let reach = box_reach(n, spec.eta_u, spec.eta_p)?;
        let base_foot = spec.base.base_point();
        let displacement = self
            .words
            .iter()
            .filter(|w| !w.is_empty())
            .map(|w| distance_to_raw(&base_foot, &w.matrix.act_row(base_foot.lorentz())))
            .fold(f64::INFINITY, f64::min);
        if displacement <= 2.0 * reach {
            return Err(Error::InvalidBox(format!(
                "box of reach {reach:.3} overlaps its own deck translates: the shortest \
                 displacement at the basepoint is {displacement:.3}, need more than {:.3}",
                2.0 * reach
            )));
        }
        let origin = HyperbolicPoint::origin(n);
        Ok(TestFunction {
            base: spec.base.clone(),
            base_inv: spec.base.group().inverse(),
            base_dist: hyp_distance(&origin, &base_foot),
            base_foot,
            eta_u: spec.eta_u,
            eta_p: spec.eta_p,
            smoothness,
            peak,
            sobolev: sobolev_bound(n, spec.eta_u, spec.eta_p, smoothness, peak),
            reach,
            words: Arc::clone(&self.words),
        })
    }

    /// Diophantine certification of a base frame along its backward flow,
    /// against this context's core surrogate and word list.
    pub fn certify_diophantine(
        &self,
        x: &FramePoint,
        epsilon: f64,
        s0: f64,
        s_max: f64,
        step: f64,
    ) -> Result<DiophantineReport> {
        diophantine_check(&self.group, &self.mass_words, &self.core, x, epsilon, s0, s_max, step)
    }

    /// Draw the global reference samples once: a core-supported sample and a
    /// spatially spread one from the same density and seed, plus the total
    /// quotient mass that normalizes every reference value.
    pub fn global_references(
        &self,
        nu: &PattersonDensity,
        count: usize,
        s_window: f64,
        mass_radius: f64,
        seed: u64,
    ) -> Result<GlobalReferences> {
        let bms = crate::density::global_sampler(GlobalKind::Bms, nu, count, s_window, seed)?;
        let br = crate::density::global_sampler(GlobalKind::Br, nu, count, s_window, seed)?;
        let bms_mass = bms_total_mass(&bms, &self.mass_words, mass_radius)?;
        Ok(GlobalReferences { bms, br, bms_mass })
    }

    /// Leaf mass escaping the R-neighborhood of the core: the expanding-leaf
    /// measure at `a_{-log scale}·x` over the rescaled window, restricted to
    /// frames at core distance at least `r_dist`. At `r_dist = 0` this is
    /// the total leaf mass; for a cocompact core it vanishes once `r_dist`
    /// clears the core diameter plus the sampling slack, which is the
    /// trivial regime of the nondivergence bound — groups with cusps, where
    /// the bound has content at every scale, are not constructible here.
    pub fn nondivergence_mass(
        &self,
        nu: &PattersonDensity,
        x: &FramePoint,
        t_window: f64,
        scale: f64,
        r_dist: f64,
    ) -> Result<f64> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument("scale must be positive and finite".into()));
        }
        if !(r_dist >= 0.0) {
            return Err(Error::InvalidArgument("distance threshold must be nonnegative".into()));
        }
        let y = x.flow(-scale.ln())?;
        let leaf = leaf_measure(LeafKind::Ps, &y, t_window / scale, Some(nu), 0)?;
        let mut mass = 0.0;
        for (t, m) in leaf.atoms() {
            if distance_to_core(&self.mass_words, &self.core, &leaf.frame_at(t))? >= r_dist {
                mass += m;
            }
        }
        Ok(mass)
    }
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// An admissible product box `B_U(eta_u)·P_{eta_p}·base`.
#[derive(Debug, Clone)]
pub struct BoxSpec {
    pub base: FramePoint,
    pub eta_u: f64,
    pub eta_p: f64,
}

/// A smooth bump supported on an admissible box, evaluated on the quotient
/// by scanning deck translates. Carries an analytic upper bound for the
/// order-ℓ Sobolev norm.
#[derive(Clone)]
pub struct TestFunction {
    base: FramePoint,
    base_inv: LorentzMatrix,
    base_foot: HyperbolicPoint,
    base_dist: f64,
    eta_u: f64,
    eta_p: f64,
    smoothness: u32,
    peak: f64,
    sobolev: f64,
    reach: f64,
    words: Arc<Vec<Word>>,
}

impl TestFunction {
    pub fn base(&self) -> &FramePoint {
        &self.base
    }

    pub fn smoothness(&self) -> u32 {
        self.smoothness
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    /// Analytic upper bound for the sum of sup-norms of coordinate
    /// derivatives up to the smoothness order.
    pub fn sobolev_bound(&self) -> f64 {
        self.sobolev
    }

    /// Footpoint radius of the box around its basepoint; pruning bound for
    /// the deck scan and the diameter surrogate in the admissibility check.
    pub fn reach(&self) -> f64 {
        self.reach
    }

    /// Hyperbolic distance of the box footpoint from the reference origin.
    /// Together with `reach` this bounds where the support can sit, which is
    /// what sampling windows must cover.
    pub fn support_distance(&self) -> f64 {
        self.base_dist + self.reach
    }

    /// Value of the single box representative at `y`, with no deck scan.
    /// Correct on the quotient only for frames already known to carry their
    /// box representative (e.g. sampler output within the time window).
    pub fn eval_plain(&self, y: &FramePoint) -> f64 {
        let h = y.group() * &self.base_inv;
        self.chart_value(&h)
    }

    /// Value at the quotient point of `y`: the deck translate (if any)
    /// landing inside the box is located by a radius-pruned word scan. A
    /// translate needing a word beyond the cutoff is reported as zero; for
    /// supports within the cutoff's reach this does not occur.
    pub fn eval(&self, y: &FramePoint) -> f64 {
        let n = y.dim();
        let origin = HyperbolicPoint::origin(n);
        let y_raw = y.group().act_row(origin.lorentz());
        let d_y = distance_to_raw(&origin, &y_raw);
        let budget = d_y + self.base_dist + self.reach + PRUNE_SLACK;
        for w in self.words.iter() {
            if w.orbit_distance > budget {
                break;
            }
            if distance_to_raw(&self.base_foot, &w.matrix.act_row(&y_raw)) > self.reach {
                continue;
            }
            let h = &(y.group() * &w.matrix) * &self.base_inv;
            let value = self.chart_value(&h);
            if value != 0.0 {
                return value;
            }
        }
        0.0
    }

    fn chart_value(&self, h: &LorentzMatrix) -> f64 {
        let Ok((t, p)) = decompose_up(h) else {
            return 0.0;
        };
        let ell = self.smoothness;
        let mut value = self.peak;
        for i in 0..t.len() {
            value *= bump_profile(t[i] / self.eta_u, ell);
            if value == 0.0 {
                return 0.0;
            }
        }
        value *= bump_profile(p.s / self.eta_p, ell);
        if value == 0.0 {
            return 0.0;
        }
        for i in 0..p.r.len() {
            value *= bump_profile(p.r[i] / self.eta_p, ell);
            if value == 0.0 {
                return 0.0;
            }
        }
        if p.rot.nrows() == 2 {
            let theta = p.rot[(1, 0)].atan2(p.rot[(0, 0)]);
            value *= bump_profile(theta / self.eta_p, ell);
        }
        value
    }
}

/// The one-dimensional profile `(1-x²)^ℓ` on [-1, 1].
pub fn bump_profile(x: f64, ell: u32) -> f64 {
    let y = 1.0 - x * x;
    if y <= 0.0 {
        0.0
    } else {
        y.powi(ell as i32)
    }
}

/// Upper bound for sup |d^m/dx^m (1-x²)^ℓ| on [-1, 1], via the sum of the
/// absolute coefficients of the derivative polynomial. Exact at m = 0.
pub fn bump_derivative_bound(ell: u32, m: u32) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut binom = 1.0;
    for j in 0..=ell {
        if 2 * j >= m {
            let mut term = binom;
            for k in (2 * j - m + 1)..=(2 * j) {
                term *= k as f64;
            }
            total += term;
        }
        binom *= (ell - j) as f64 / (j + 1) as f64;
    }
    total
}

/// Sum over all coordinate derivative orders with total order at most ℓ of
/// the product of per-factor sup bounds; each coordinate of scale η
/// contributes η^{-k} at order k.
fn sobolev_bound(n: usize, eta_u: f64, eta_p: f64, ell: u32, peak: f64) -> f64 {
    let mut scales = vec![eta_u; n - 1];
    scales.push(eta_p);
    scales.extend(std::iter::repeat(eta_p).take(n - 1));
    if n == 3 {
        scales.push(eta_p);
    }
    let ell_us = ell as usize;
    let mut acc = vec![0.0; ell_us + 1];
    acc[0] = 1.0;
    for eta in scales {
        let mut next = vec![0.0; ell_us + 1];
        for (a, &va) in acc.iter().enumerate() {
            if va == 0.0 {
                continue;
            }
            for b in 0..=(ell_us - a) {
                next[a + b] += va * bump_derivative_bound(ell, b as u32) / eta.powi(b as i32);
            }
        }
        acc = next;
    }
    peak * acc.iter().sum::<f64>()
}

/// Upper bound for the footpoint displacement d(o, o·u_t a_s v_r m) over
/// the coordinate box ‖t‖_sup ≤ eta_u, |s|, ‖r‖_sup, |θ| ≤ eta_p. The
/// horospherical factors are measured numerically at the box corner; the
/// chain then uses intrinsic displacement laws: the flow moves a point at
/// distance ρ from its axis by 2·asinh(sinh(s/2)·cosh ρ), a horospherical
/// shift of displacement d₀ at the basepoint moves a point at Busemann
/// offset β by 2·asinh(sinh(d₀/2)·e^β), and a rotation about an axis
/// through o moves a point at distance ρ by at most 2·asinh(sin(θ/2)·sinh ρ).
fn box_reach(n: usize, eta_u: f64, eta_p: f64) -> Result<f64> {
    let o = HyperbolicPoint::origin(n);
    let displacement = |dir: crate::lorentz::HoroDirection, eta: f64| -> Result<f64> {
        let corner = vec![eta; n - 1];
        let g = LorentzMatrix::horo(n, dir, &corner)?;
        Ok(distance_to_raw(&o, &g.act_row(o.lorentz())))
    };
    let d_u = displacement(crate::lorentz::HoroDirection::Expanding, eta_u)?;
    let d_a = 2.0 * ((eta_p / 2.0).sinh() * d_u.cosh()).asinh();
    let d_v0 = displacement(crate::lorentz::HoroDirection::Contracting, eta_p)?;
    let beta = d_u + d_a;
    let d_v = 2.0 * ((d_v0 / 2.0).sinh() * beta.exp()).asinh();
    let mut reach = d_u + d_a + d_v;
    if n == 3 {
        reach += 2.0 * ((eta_p / 2.0).sin() * reach.sinh()).asinh();
    }
    Ok(reach)
}

// ---------------------------------------------------------------------------
// Global references
// ---------------------------------------------------------------------------

/// The sampled global measures and the quotient total mass that turns lift
/// integrals into references for the window and translate experiments.
pub struct GlobalReferences {
    bms: GlobalSample,
    br: GlobalSample,
    pub bms_mass: Estimate,
}

impl GlobalReferences {
    pub fn bms_sample(&self) -> &GlobalSample {
        &self.bms
    }

    pub fn br_sample(&self) -> &GlobalSample {
        &self.br
    }

    /// Quotient average of `f` against the normalized core-supported
    /// measure: lift integral over total mass, with first-order error
    /// propagation.
    pub fn bms_average(&self, f: impl Fn(&FramePoint) -> f64) -> Estimate {
        ratio_estimate(integrate_sample(&self.bms, f), self.bms_mass)
    }

    /// The window-average limit for the Lebesgue numerator: the spatially
    /// spread lift integral normalized by the same total mass.
    pub fn br_average(&self, f: impl Fn(&FramePoint) -> f64) -> Estimate {
        ratio_estimate(integrate_sample(&self.br, f), self.bms_mass)
    }
}

fn ratio_estimate(num: Estimate, den: Estimate) -> Estimate {
    let value = num.value / den.value;
    let std_error = ((num.std_error / den.value).powi(2)
        + (num.value * den.std_error / (den.value * den.value)).powi(2))
    .sqrt();
    Estimate { value, std_error }
}

// ---------------------------------------------------------------------------
// Window averages and translates
// ---------------------------------------------------------------------------

/// Which numerator a window average integrates; the denominator is always
/// the leaf mass of the geometric measure, matching the mixed normalization
/// of the spread-measure statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AverageKind {
    Ps,
    Haar,
}

/// Average of `psi` over the expanding leaf window at `x`, normalized by
/// the leaf mass of the geometric measure. The flat kind integrates against
/// the coordinate volume on the same window (at the given grid resolution)
/// and keeps the geometric normalization.
pub fn window_average(
    kind: AverageKind,
    x: &FramePoint,
    window: f64,
    nu: &PattersonDensity,
    resolution: usize,
    psi: impl Fn(&FramePoint) -> f64,
) -> Result<Estimate> {
    let ps = leaf_measure(LeafKind::Ps, x, window, Some(nu), 0)?;
    let denom = ps.total_mass();
    if !(denom > 0.0) {
        return Err(Error::EmptyWindow(format!(
            "no leaf mass in the window of size {window}"
        )));
    }
    let numerator = match kind {
        AverageKind::Ps => integrate_leaf(&ps, |t| psi(&ps.frame_at(t))).value,
        AverageKind::Haar => {
            let leb = leaf_measure(LeafKind::Lebesgue, x, window, None, resolution)?;
            integrate_leaf(&leb, |t| psi(&leb.frame_at(t))).value
        }
    };
    Ok(Estimate {
        value: numerator / denom,
        std_error: 0.0,
    })
}

/// The flow-translate integral ∫ ψ(a_s u_t x) f(t) dμ(t) over the window,
/// against the leaf measure selected by `kind`. The flat kind carries the
/// expansion prefactor e^{(n-1-δ)s} of its convergence statement.
#[allow(clippy::too_many_arguments)]
pub fn translate_integral(
    kind: AverageKind,
    x: &FramePoint,
    flow_time: f64,
    window: f64,
    nu: &PattersonDensity,
    resolution: usize,
    f: impl Fn(&DVector<f64>) -> f64,
    psi: impl Fn(&FramePoint) -> f64,
) -> Result<Estimate> {
    if !flow_time.is_finite() {
        return Err(Error::InvalidArgument("flow time must be finite".into()));
    }
    let value = match kind {
        AverageKind::Ps => {
            let leaf = leaf_measure(LeafKind::Ps, x, window, Some(nu), 0)?;
            if leaf.is_empty() {
                return Err(Error::EmptyWindow(format!(
                    "no leaf mass in the window of size {window}"
                )));
            }
            integrate_leaf(&leaf, |t| {
                f(t) * psi(&leaf.frame_at(t).flow(flow_time).expect("finite flow time"))
            })
            .value
        }
        AverageKind::Haar => {
            let n = x.dim() as f64;
            let leaf = leaf_measure(LeafKind::Lebesgue, x, window, None, resolution)?;
            let prefactor = ((n - 1.0 - nu.exponent()) * flow_time).exp();
            prefactor
                * integrate_leaf(&leaf, |t| {
                    f(t) * psi(&leaf.frame_at(t).flow(flow_time).expect("finite flow time"))
                })
                .value
        }
    };
    Ok(Estimate {
        value,
        std_error: 0.0,
    })
}

// ---------------------------------------------------------------------------
// Window profiles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct WindowPoint {
    pub window: f64,
    /// The normalized window average of the test function.
    pub average: f64,
    /// Absolute deviation from the global reference average.
    pub discrepancy: f64,
}

/// Discrepancy profile of growing-window leaf averages at a fixed base
/// frame, with the number of strict increases along the grid and a power
/// fit of the decay.
#[derive(Debug, Clone)]
pub struct WindowReport {
    pub kind: AverageKind,
    pub target: f64,
    pub points: Vec<WindowPoint>,
    /// Strict increases of the discrepancy along the grid.
    pub inversions: usize,
    pub fit: Option<RateFit>,
}

/// Growing-window averages of `psi` on the expanding leaf at `x`, compared
/// against the matching global average. Box translates along the leaf are
/// located by the crossing index, so the cost is linear in the atom count
/// even for windows that cover the whole chart.
pub fn window_profile(
    refs: &GlobalReferences,
    nu: &PattersonDensity,
    psi: &TestFunction,
    kind: AverageKind,
    x: &FramePoint,
    t_grid: &[f64],
) -> Result<WindowReport> {
    if t_grid.len() < 2 {
        return Err(Error::InvalidArgument(
            "window profile needs at least two window sizes".into(),
        ));
    }
    if t_grid.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument("window sizes must be positive".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("window sizes must increase".into()));
    }
    let target = match kind {
        AverageKind::Ps => refs.bms_average(|y| psi.eval_plain(y)).value,
        AverageKind::Haar => refs.br_average(|y| psi.eval_plain(y)).value,
    };
    let t_max = *t_grid.last().expect("nonempty grid");
    let leaf = leaf_measure(LeafKind::Ps, x, t_max, Some(nu), 0)?;
    if !(leaf.total_mass() > 0.0) {
        return Err(Error::EmptyWindow(format!(
            "no leaf mass in the window of size {t_max}"
        )));
    }
    let mut atoms: Vec<(f64, f64)> = leaf.atoms().iter().map(|(t, m)| (t[0], *m)).collect();
    atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite leaf coordinates"));

    let base_inv = psi.base.group().inverse();
    let center = psi.base_foot.lorentz().clone();
    let cosh_radius = 1.0 + 2.0 * (psi.reach / 2.0).sinh().powi(2);
    let intervals = box_crossings(psi.words.as_slice(), x, &center, cosh_radius, t_max)?;

    let eval_at = |tau: f64, word: usize| -> Result<f64> {
        let frame = x.left_mul(&LorentzMatrix::horo(2, HoroDirection::Expanding, &[tau])?);
        let h = &(frame.group() * &psi.words[word].matrix) * &base_inv;
        Ok(psi.chart_value(&h))
    };

    let mut points = Vec::with_capacity(t_grid.len());
    for &window in t_grid {
        let denom = leaf.mass_in(window);
        if !(denom > 0.0) {
            return Err(Error::EmptyWindow(format!(
                "no leaf mass in the window of size {window}"
            )));
        }
        let numerator = match kind {
            AverageKind::Ps => {
                let mut acc = 0.0;
                for &(lo, hi, wi) in &intervals {
                    let (lo, hi) = (lo.max(-window), hi.min(window));
                    if lo >= hi {
                        continue;
                    }
                    let start = atoms.partition_point(|&(t, _)| t < lo);
                    for &(t, m) in &atoms[start..] {
                        if t > hi {
                            break;
                        }
                        acc += m * eval_at(t, wi)?;
                    }
                }
                acc
            }
            AverageKind::Haar => {
                let mut acc = 0.0;
                for &(lo, hi, wi) in &intervals {
                    let (lo, hi) = (lo.max(-window), hi.min(window));
                    if lo >= hi {
                        continue;
                    }
                    let panels = 64usize;
                    let step = (hi - lo) / panels as f64;
                    let mut local = 0.0;
                    for j in 0..=panels {
                        let w_simpson = if j == 0 || j == panels {
                            1.0
                        } else if j % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        local += w_simpson * eval_at(lo + j as f64 * step, wi)?;
                    }
                    acc += local * step / 3.0;
                }
                acc
            }
        };
        let average = numerator / denom;
        points.push(WindowPoint {
            window,
            average,
            discrepancy: (average - target).abs(),
        });
    }
    let inversions = points
        .windows(2)
        .filter(|w| w[1].discrepancy > w[0].discrepancy)
        .count();
    let table: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|p| (p.window, p.discrepancy, 0.0))
        .collect();
    let fit = fit_rate(RateModel::Power, &table).ok();
    Ok(WindowReport {
        kind,
        target,
        points,
        inversions,
        fit,
    })
}

// ---------------------------------------------------------------------------
// Translate ensembles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct TranslatePoint {
    pub s: f64,
    /// Mean absolute deviation of the normalized translate integrals from
    /// the product reference, across the ensemble.
    pub discrepancy: f64,
    pub std_error: f64,
    /// Total box crossings of the flowed leaves at this time.
    pub crossings: usize,
}

/// Discrepancy profile of flow translates over an ensemble of sampled
/// base frames, with an exponential fit over the grid.
#[derive(Debug, Clone)]
pub struct TranslateReport {
    pub kind: AverageKind,
    /// The global average the normalized integrals converge to.
    pub target: f64,
    pub points: Vec<TranslatePoint>,
    pub fit: Option<RateFit>,
    /// Ensemble members whose leaf actually carries window mass.
    pub leaves: usize,
}

/// Box crossings of the curve τ ↦ u_τ·x against the deck translates of a
/// ball around `center`: for each word w, the footpoint of u_τ·x·w pairs
/// with the center quadratically in τ, so the crossing is the root
/// interval of a scalar quadratic. Returns (lo, hi, word index) triples
/// clipped to |τ| ≤ w_max, sorted by lo.
fn box_crossings(
    words: &[Word],
    x: &FramePoint,
    center: &DVector<f64>,
    cosh_radius: f64,
    w_max: f64,
) -> Result<Vec<(f64, f64, usize)>> {
    let n = x.dim();
    if n != 2 {
        return Err(Error::InvalidArgument(
            "the crossing index solves a scalar quadratic; leaves with more \
             than one expanding coordinate are not indexed"
                .into(),
        ));
    }
    let o = basepoint(n);
    let group = x.group();
    // o·u_τ·x is exactly quadratic in τ; read the coefficient rows off the
    // values at τ = 0, ±1.
    let row0 = group.act_row(&o);
    let row_p = group.act_row(&LorentzMatrix::horo(n, HoroDirection::Expanding, &[1.0])?.act_row(&o));
    let row_m =
        group.act_row(&LorentzMatrix::horo(n, HoroDirection::Expanding, &[-1.0])?.act_row(&o));
    let lin = (&row_p - &row_m) / 2.0;
    let quad = (&row_p + &row_m) / 2.0 - &row0;
    let mut intervals = Vec::new();
    for (index, word) in words.iter().enumerate() {
        let q0 = form_pair(&word.matrix.act_row(&row0), center) - cosh_radius;
        let q1 = form_pair(&word.matrix.act_row(&lin), center);
        let q2 = form_pair(&word.matrix.act_row(&quad), center);
        // Solve q2 τ² + q1 τ + q0 ≤ 0. The leading coefficient pairs the
        // forward null direction of the curve with an interior point, so it
        // is positive up to rounding; the degenerate branches only guard
        // against that rounding.
        let (lo, hi) = if q2.abs() <= 1e-13 * (q0.abs() + q1.abs()).max(1.0) {
            if q1.abs() <= 1e-13 {
                if q0 <= 0.0 {
                    (-w_max, w_max)
                } else {
                    continue;
                }
            } else {
                let root = -q0 / q1;
                if q1 > 0.0 {
                    (-w_max, root)
                } else {
                    (root, w_max)
                }
            }
        } else if q2 < 0.0 {
            continue;
        } else {
            let disc = q1 * q1 - 4.0 * q2 * q0;
            if disc <= 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            ((-q1 - sq) / (2.0 * q2), (-q1 + sq) / (2.0 * q2))
        };
        let (lo, hi) = (lo.max(-w_max), hi.min(w_max));
        if lo < hi {
            intervals.push((lo, hi, index));
        }
    }
    intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite interval endpoints"));
    Ok(intervals)
}

/// Translate experiment: flow the expanding leaf at each sampled base frame
/// by every time in the grid, integrate `psi` against the f-weighted leaf,
/// normalize by the leaf's own f-mass and compare with the matching global
/// average of `psi`. The report carries the mean absolute deviation per
/// flow time and an exponential fit over the grid.
///
/// The weight f is the order-2 bump filling `f_window`. The flat kind
/// integrates the crossings by Simpson panels under the expansion
/// prefactor; the leaf kind sums the atoms inside the crossings.
pub fn translate_profile(
    refs: &GlobalReferences,
    nu: &PattersonDensity,
    psi: &TestFunction,
    kind: AverageKind,
    f_window: f64,
    ensemble: usize,
    s_grid: &[f64],
) -> Result<TranslateReport> {
    if !(f_window > 0.0) || !f_window.is_finite() {
        return Err(Error::InvalidArgument("weight window must be positive".into()));
    }
    if s_grid.is_empty() {
        return Err(Error::InvalidArgument("flow-time grid is empty".into()));
    }
    if s_grid.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("flow times must be finite".into()));
    }
    let points = refs.bms.points();
    if ensemble < 2 || ensemble > points.len() {
        return Err(Error::InvalidArgument(format!(
            "ensemble of {ensemble} is outside the sampled supply of {}",
            points.len()
        )));
    }
    let target = match kind {
        AverageKind::Ps => refs.bms_average(|x| psi.eval_plain(x)).value,
        AverageKind::Haar => refs.br_average(|x| psi.eval_plain(x)).value,
    };
    let f = |t: f64| bump_profile(t / f_window, 2);

    // Per-member leaves, sorted atom lists and window masses. The flat
    // kind still normalizes by the leaf f-mass: that is the constant in
    // front of its limit.
    let mut bases = Vec::with_capacity(ensemble);
    let mut atom_lists = Vec::with_capacity(ensemble);
    let mut masses = Vec::with_capacity(ensemble);
    for (x, _) in &points[..ensemble] {
        let leaf = leaf_measure(LeafKind::Ps, x, f_window, Some(nu), 0)?;
        let mass = integrate_leaf(&leaf, |t| f(t[0])).value;
        if mass <= MASS_FLOOR {
            continue;
        }
        let mut atoms: Vec<(f64, f64)> = leaf.atoms().iter().map(|(t, m)| (t[0], *m)).collect();
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite leaf coordinates"));
        bases.push(x.clone());
        atom_lists.push(atoms);
        masses.push(mass);
    }
    if bases.len() < 2 {
        return Err(Error::EmptyWindow(
            "fewer than two ensemble leaves carry window mass".into(),
        ));
    }

    let base_inv = psi.base.group().inverse();
    let center = psi.base_foot.lorentz().clone();
    let cosh_radius = 1.0 + 2.0 * (psi.reach / 2.0).sinh().powi(2);
    let words = psi.words.as_slice();
    let exponent = nu.exponent();

    let mut report_points = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let w_max = f_window * s.exp();
        let scale = s.exp();
        let mut crossings = 0usize;
        let mut draws = Vec::with_capacity(bases.len());
        for (i, x) in bases.iter().enumerate() {
            let xs = x.flow(s)?;
            let intervals = box_crossings(words, &xs, &center, cosh_radius, w_max)?;
            crossings += intervals.len();
            let value = match kind {
                AverageKind::Ps => {
                    let atoms = &atom_lists[i];
                    let mut acc = 0.0;
                    for &(lo, hi, wi) in &intervals {
                        let start = atoms.partition_point(|&(t, _)| t * scale < lo);
                        for &(t, m) in &atoms[start..] {
                            let tau = t * scale;
                            if tau > hi {
                                break;
                            }
                            let frame = xs.left_mul(&LorentzMatrix::horo(
                                2,
                                HoroDirection::Expanding,
                                &[tau],
                            )?);
                            let h = &(frame.group() * &words[wi].matrix) * &base_inv;
                            acc += m * f(t) * psi.chart_value(&h);
                        }
                    }
                    acc
                }
                AverageKind::Haar => {
                    let prefactor = (-exponent * s).exp();
                    let mut acc = 0.0;
                    for &(lo, hi, wi) in &intervals {
                        let panels = 64usize;
                        let step = (hi - lo) / panels as f64;
                        let mut local = 0.0;
                        for j in 0..=panels {
                            let tau = lo + j as f64 * step;
                            let frame = xs.left_mul(&LorentzMatrix::horo(
                                2,
                                HoroDirection::Expanding,
                                &[tau],
                            )?);
                            let h = &(frame.group() * &words[wi].matrix) * &base_inv;
                            let v = f(tau / scale) * psi.chart_value(&h);
                            let w_simpson = if j == 0 || j == panels {
                                1.0
                            } else if j % 2 == 1 {
                                4.0
                            } else {
                                2.0
                            };
                            local += w_simpson * v;
                        }
                        acc += local * step / 3.0;
                    }
                    prefactor * acc
                }
            };
            draws.push((value / masses[i] - target).abs());
        }
        let count = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / count;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (count - 1.0);
        report_points.push(TranslatePoint {
            s,
            discrepancy: mean,
            std_error: (var / count).sqrt(),
            crossings,
        });
    }
    let table: Vec<(f64, f64, f64)> = report_points
        .iter()
        .map(|p| (p.s, p.discrepancy, p.std_error))
        .collect();
    let fit = fit_rate(RateModel::Exponential, &table).ok();
    Ok(TranslateReport {
        kind,
        target,
        points: report_points,
        fit,
        leaves: bases.len(),
    })
}

// ---------------------------------------------------------------------------
// Correlation decay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct CorrelationPoint {
    pub s: f64,
    pub value: f64,
    pub std_error: f64,
}

/// Flow correlations against the normalized core-supported measure, with an
/// exponential fit on the flow times where one is possible.
#[derive(Debug, Clone)]
pub struct CorrelationReport {
    pub points: Vec<CorrelationPoint>,
    pub fit: Option<RateFit>,
    /// Every point is within its own error bar of zero: the decay is below
    /// the sampling floor and the fit carries no information.
    pub inconclusive: bool,
}

/// Sampled correlation ⟨ψ∘a_s, φ⟩ - ⟨ψ⟩⟨φ⟩ of two box functions under the
/// normalized core-supported measure, over a grid of flow times. The flowed
/// factor is located through the deck scan; the unflowed factors must have
/// their support inside the sampler's time window, which is checked against
/// the box reach. The error bars propagate the three lift integrals to
/// first order and treat the total mass as exact.
pub fn mixing_correlation(
    refs: &GlobalReferences,
    psi: &TestFunction,
    phi: &TestFunction,
    s_grid: &[f64],
) -> Result<CorrelationReport> {
    if s_grid.is_empty() {
        return Err(Error::InvalidArgument("flow-time grid is empty".into()));
    }
    let window = refs.bms.s_window();
    for (name, func) in [("first", psi), ("second", phi)] {
        if func.support_distance() > window {
            return Err(Error::PreconditionViolation(format!(
                "{name} factor reaches footpoint distance {:.2} but the sample only \
                 covers the time window {:.2}",
                func.support_distance(),
                window
            )));
        }
    }
    let mass = refs.bms_mass.value;
    let l_psi = integrate_sample(&refs.bms, |x| psi.eval_plain(x));
    let l_phi = integrate_sample(&refs.bms, |x| phi.eval_plain(x));
    let mut points = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        if !s.is_finite() {
            return Err(Error::InvalidArgument("flow times must be finite".into()));
        }
        let a = integrate_sample(&refs.bms, |x| {
            let weight = phi.eval_plain(x);
            if weight == 0.0 {
                return 0.0;
            }
            weight * psi.eval(&x.flow(s).expect("finite flow time"))
        });
        let value = a.value / mass - (l_psi.value / mass) * (l_phi.value / mass);
        let std_error = ((a.std_error / mass).powi(2)
            + (l_phi.value * l_psi.std_error / (mass * mass)).powi(2)
            + (l_psi.value * l_phi.std_error / (mass * mass)).powi(2))
        .sqrt();
        points.push(CorrelationPoint { s, value, std_error });
    }
    let table: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|p| p.s > 0.0)
        .map(|p| (p.s, p.value, p.std_error))
        .collect();
    let fit = fit_rate(RateModel::Exponential, &table).ok();
    let inconclusive = points.iter().all(|p| p.std_error >= p.value.abs());
    Ok(CorrelationReport {
        points,
        fit,
        inconclusive,
    })
}

// ---------------------------------------------------------------------------
// Sublevel goodness
// ---------------------------------------------------------------------------

/// A polynomial of degree at most two on the leaf coordinates.
#[derive(Debug, Clone)]
pub struct QuadraticPoly {
    constant: f64,
    linear: DVector<f64>,
    quadratic: DMatrix<f64>,
}

impl QuadraticPoly {
    pub fn new(constant: f64, linear: DVector<f64>, quadratic: DMatrix<f64>) -> Result<Self> {
        let d = linear.len();
        if quadratic.nrows() != d || quadratic.ncols() != d {
            return Err(Error::InvalidArgument(
                "quadratic block must be square of the coordinate dimension".into(),
            ));
        }
        let quadratic = (&quadratic + quadratic.transpose()) * 0.5;
        Ok(QuadraticPoly {
            constant,
            linear,
            quadratic,
        })
    }

    pub fn constant(c: f64, dim: usize) -> Self {
        QuadraticPoly {
            constant: c,
            linear: DVector::zeros(dim),
            quadratic: DMatrix::zeros(dim, dim),
        }
    }

    pub fn linear(coeffs: DVector<f64>) -> Self {
        let d = coeffs.len();
        QuadraticPoly {
            constant: 0.0,
            linear: coeffs,
            quadratic: DMatrix::zeros(d, d),
        }
    }

    pub fn eval(&self, t: &DVector<f64>) -> f64 {
        self.constant + self.linear.dot(t) + (t.transpose() * &self.quadratic * t)[(0, 0)]
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }
}

/// Log-log fit of sublevel masses of |f| on a sub-ball of a leaf measure.
#[derive(Debug, Clone)]
pub struct GoodFunctionFit {
    /// Fitted sublevel exponent; absent when the sublevel profile is a
    /// degenerate staircase (constant functions, or too few populated
    /// thresholds to regress).
    pub beta: Option<f64>,
    /// 95% half-width on the exponent.
    pub band: f64,
    /// (threshold, sublevel mass) pairs actually measured.
    pub points: Vec<(f64, f64)>,
    pub degenerate: bool,
    /// Empirical sup of |f| over the ball (atoms plus a coordinate grid).
    pub sup_norm: f64,
    pub ball_mass: f64,
}

/// Measure how fast the mass of {|f| < ε} decays on the ball B(b_radius) of
/// the leaf: the sublevel-exponent surrogate of the (C,β)-goodness bound.
pub fn good_function_check(
    leaf: &LeafMeasure,
    f: &QuadraticPoly,
    b_radius: f64,
    eps_grid: &[f64],
) -> Result<GoodFunctionFit> {
    let d = leaf.base().dim() - 1;
    if f.dim() != d {
        return Err(Error::InvalidArgument(
            "polynomial dimension does not match the leaf coordinates".into(),
        ));
    }
    if !(b_radius > 0.0) || b_radius > leaf.window() {
        return Err(Error::InvalidArgument(
            "ball radius must be positive and inside the leaf window".into(),
        ));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0)) || eps_grid.is_empty() {
        return Err(Error::InvalidArgument(
            "threshold grid must be nonempty and positive".into(),
        ));
    }
    let in_ball: Vec<(&DVector<f64>, f64)> = leaf
        .atoms()
        .iter()
        .filter(|(t, _)| t.amax() <= b_radius)
        .map(|(t, m)| (t, *m))
        .collect();
    let ball_mass: f64 = in_ball.iter().map(|(_, m)| m).sum();
    if !(ball_mass > 0.0) {
        return Err(Error::EmptyWindow(
            "no leaf mass in the requested ball".into(),
        ));
    }
    let mut sup_norm = in_ball
        .iter()
        .map(|(t, _)| f.eval(t).abs())
        .fold(0.0, f64::max);
    // Coordinate-grid sweep so a polynomial missing every atom still gets an
    // honest sup.
    let steps = 17usize;
    let mut index = vec![0usize; d];
    loop {
        let t = DVector::from_iterator(
            d,
            index
                .iter()
                .map(|&j| -b_radius + 2.0 * b_radius * j as f64 / (steps - 1) as f64),
        );
        sup_norm = sup_norm.max(f.eval(&t).abs());
        let mut axis = 0;
        loop {
            if axis == d {
                break;
            }
            index[axis] += 1;
            if index[axis] < steps {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
        if axis == d {
            break;
        }
    }
    if sup_norm < 1e-14 {
        return Err(Error::InvalidArgument(
            "polynomial vanishes on the ball".into(),
        ));
    }
    let mut points = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let mass: f64 = in_ball
            .iter()
            .filter(|(t, _)| f.eval(t).abs() < eps)
            .map(|(_, m)| m)
            .sum();
        points.push((eps, mass));
    }
    // Interior points only: empty sublevels have no logarithm and saturated
    // ones pin the staircase plateaus.
    let regression: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, m)| *m > 0.0 && *m < ball_mass * (1.0 - 1e-12))
        .map(|(e, m)| ((e / sup_norm).ln(), (m / ball_mass).ln()))
        .collect();
    if regression.len() < 3 {
        return Ok(GoodFunctionFit {
            beta: None,
            band: f64::NAN,
            points,
            degenerate: true,
            sup_norm,
            ball_mass,
        });
    }
    match ols_line(&regression) {
        Some((slope, _, se)) => Ok(GoodFunctionFit {
            beta: Some(slope),
            band: 1.96 * se,
            points,
            degenerate: false,
            sup_norm,
            ball_mass,
        }),
        None => Ok(GoodFunctionFit {
            beta: None,
            band: f64::NAN,
            points,
            degenerate: true,
            sup_norm,
            ball_mass,
        }),
    }
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateModel {
    /// y = c · T^{-κ}; log-log linear.
    Power,
    /// y = c · e^{-κ s}; semi-log linear.
    Exponential,
}

/// Weighted least-squares fit of a decay law, in logarithmic coordinates.
#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    pub model: RateModel,
    /// Decay exponent, positive when the data decreases.
    pub kappa: f64,
    pub prefactor: f64,
    /// Largest absolute log-residual of the fit on its own inputs.
    pub residual: f64,
    /// 95% half-width on κ̂.
    pub band: f64,
    /// Set when non-positive values forced the fit onto absolute values.
    pub on_absolute_values: bool,
}

/// Fit `(abscissa, value, std_error)` rows to the requested decay model.
/// Weights are inverse log-variances when every row carries a positive
/// error bar, uniform otherwise. Rows with non-positive values are folded
/// to their absolute value (zeros are dropped) and flagged.
pub fn fit_rate(model: RateModel, table: &[(f64, f64, f64)]) -> Result<RateFit> {
    if table.len() < 3 {
        return Err(Error::InvalidArgument(
            "rate fit needs at least three points".into(),
        ));
    }
    if table.iter().any(|(x, _, _)| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "rate fit needs positive finite abscissae".into(),
        ));
    }
    let mut on_absolute_values = false;
    let mut rows = Vec::with_capacity(table.len());
    for &(x, y, se) in table {
        if y <= 0.0 {
            on_absolute_values = true;
        }
        let y_abs = y.abs();
        if y_abs == 0.0 {
            continue;
        }
        rows.push((x, y_abs, se));
    }
    if rows.len() < 3 {
        return Err(Error::InvalidArgument(
            "rate fit needs at least three nonzero values".into(),
        ));
    }
    let weighted = rows.iter().all(|(_, _, se)| *se > 0.0);
    let points: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|&(x, y, se)| {
            let abscissa = match model {
                RateModel::Power => x.ln(),
                RateModel::Exponential => x,
            };
            // Var(ln y) ≈ (se/y)² by the delta method.
            let w = if weighted { (y / se).powi(2) } else { 1.0 };
            (abscissa, y.ln(), w)
        })
        .collect();
    let wsum: f64 = points.iter().map(|p| p.2).sum();
    let xbar: f64 = points.iter().map(|p| p.0 * p.2).sum::<f64>() / wsum;
    let ybar: f64 = points.iter().map(|p| p.1 * p.2).sum::<f64>() / wsum;
    let sxx: f64 = points.iter().map(|p| p.2 * (p.0 - xbar).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument(
            "rate fit needs at least two distinct abscissae".into(),
        ));
    }
    let sxy: f64 = points
        .iter()
        .map(|p| p.2 * (p.0 - xbar) * (p.1 - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let mut residual = 0.0_f64;
    let mut wrss = 0.0;
    for (x, y, w) in &points {
        let r = y - (intercept + slope * x);
        residual = residual.max(r.abs());
        wrss += w * r * r;
    }
    let dof = (points.len() - 2) as f64;
    let band = 1.96 * (wrss / dof / sxx).sqrt();
    Ok(RateFit {
        model,
        kappa: -slope,
        prefactor: intercept.exp(),
        residual,
        band,
        on_absolute_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{conjugate_flow, patterson_density, EXPONENT_OFFSET};
    use crate::rng::stream_rng;
    use crate::schottky::{critical_exponent_estimate, SchottkyConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn standard_lab() -> (Lab, PattersonDensity) {
        let g = SchottkyGroup::build(&SchottkyConfig::standard_n2()).unwrap();
        let delta = critical_exponent_estimate(&g, 4, 6).unwrap().value;
        let nu = patterson_density(&g, delta + EXPONENT_OFFSET, 6).unwrap();
        (Lab::new(&g).unwrap(), nu)
    }

    fn identity_box(lab: &Lab, eta_u: f64, eta_p: f64, ell: u32, peak: f64) -> TestFunction {
        lab.make_bump(
            &BoxSpec {
                base: FramePoint::identity(lab.group().dim()),
                eta_u,
                eta_p,
            },
            ell,
            peak,
        )
        .unwrap()
    }

    #[test]
    fn bump_peaks_at_the_center_and_dies_on_the_walls() {
        let (lab, _) = standard_lab();
        let psi = identity_box(&lab, 0.4, 0.3, 3, 2.0);
        let base = FramePoint::identity(2);
        assert_eq!(psi.eval_plain(&base), 2.0);
        assert_eq!(psi.eval(&base), 2.0);

        let inside = base.left_mul(
            &LorentzMatrix::horo(2, crate::lorentz::HoroDirection::Expanding, &[0.2]).unwrap(),
        );
        let v_inside = psi.eval_plain(&inside);
        assert!(v_inside > 0.0 && v_inside < 2.0);

        let wall = base.left_mul(
            &LorentzMatrix::horo(2, crate::lorentz::HoroDirection::Expanding, &[0.4]).unwrap(),
        );
        assert_eq!(psi.eval_plain(&wall), 0.0);
        let outside_p = base.left_mul(&LorentzMatrix::flow(2, 0.31).unwrap());
        assert_eq!(psi.eval_plain(&outside_p), 0.0);
    }

    #[test]
    fn bump_is_found_through_deck_translates() {
        let (lab, _) = standard_lab();
        let psi = identity_box(&lab, 0.4, 0.3, 3, 1.0);
        let base = FramePoint::identity(2);
        let probe = base.left_mul(
            &LorentzMatrix::horo(2, crate::lorentz::HoroDirection::Expanding, &[0.1]).unwrap(),
        );
        let direct = psi.eval_plain(&probe);
        assert!(direct > 0.0);
        for w in lab.mass_words().iter().filter(|w| w.len() == 2).take(3) {
            let moved = probe.right_mul(&w.matrix);
            assert_eq!(psi.eval_plain(&moved), 0.0);
            let located = psi.eval(&moved);
            assert!(
                (located - direct).abs() <= 1e-9 * direct,
                "deck location lost the box value: {located} vs {direct}"
            );
        }
    }

    #[test]
    fn reach_bounds_the_box_footpoints() {
        let o = HyperbolicPoint::origin(2);
        let mut rng = stream_rng(7, "lab/reach");
        let (eta_u, eta_p) = (0.5, 0.4);
        let reach = box_reach(2, eta_u, eta_p).unwrap();
        for _ in 0..500 {
            let t = rng.gen_range(-eta_u..eta_u);
            let s = rng.gen_range(-eta_p..eta_p);
            let r = rng.gen_range(-eta_p..eta_p);
            let u = LorentzMatrix::horo(2, crate::lorentz::HoroDirection::Expanding, &[t]).unwrap();
            let a = LorentzMatrix::flow(2, s).unwrap();
            let v =
                LorentzMatrix::horo(2, crate::lorentz::HoroDirection::Contracting, &[r]).unwrap();
            let g = &(&u * &a) * &v;
            let d = distance_to_raw(&o, &g.act_row(o.lorentz()));
            assert!(d <= reach, "box element at distance {d} beyond the reach bound {reach}");
        }

        let o3 = HyperbolicPoint::origin(3);
        let reach3 = box_reach(3, 0.3, 0.25).unwrap();
        for _ in 0..200 {
            let t = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
            let s = rng.gen_range(-0.25..0.25);
            let r = [rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)];
            let theta = rng.gen_range(-0.25..0.25);
            let u = LorentzMatrix::horo(3, crate::lorentz::HoroDirection::Expanding, &t).unwrap();
            let a = LorentzMatrix::flow(3, s).unwrap();
            let v =
                LorentzMatrix::horo(3, crate::lorentz::HoroDirection::Contracting, &r).unwrap();
            let m = LorentzMatrix::rotation_angle(3, theta).unwrap();
            let g = &(&(&u * &a) * &v) * &m;
            let d = distance_to_raw(&o3, &g.act_row(o3.lorentz()));
            assert!(d <= reach3, "twisted box element at {d} beyond the reach bound {reach3}");
        }
    }

    #[test]
    fn oversized_boxes_are_rejected() {
        let (lab, _) = standard_lab();
        let err = lab.make_bump(
            &BoxSpec {
                base: FramePoint::identity(2),
                eta_u: 3.0,
                eta_p: 1.5,
            },
            2,
            1.0,
        );
        assert!(matches!(err, Err(Error::InvalidBox(_))));
    }

    #[test]
    fn sobolev_bound_dominates_the_profile_derivatives() {
        // d/dx (1-x²)³ = -6x(1-x²)², sup at x = 1/√5: 6/√5·(4/5)² < bound.
        let sup_first = 6.0 / 5.0_f64.sqrt() * (4.0 / 5.0_f64).powi(2);
        assert!(bump_derivative_bound(3, 1) >= sup_first);
        // Numeric sweep for a few orders via central differences.
        for m in 1..=3u32 {
            let bound = bump_derivative_bound(3, m);
            let h = 1e-3;
            let mut sup = 0.0_f64;
            let mut x = -0.999;
            while x <= 0.999 {
                let d = match m {
                    1 => (bump_profile(x + h, 3) - bump_profile(x - h, 3)) / (2.0 * h),
                    2 => {
                        (bump_profile(x + h, 3) - 2.0 * bump_profile(x, 3)
                            + bump_profile(x - h, 3))
                            / (h * h)
                    }
                    _ => {
                        (bump_profile(x + 2.0 * h, 3) - 2.0 * bump_profile(x + h, 3)
                            + 2.0 * bump_profile(x - h, 3)
                            - bump_profile(x - 2.0 * h, 3))
                            / (2.0 * h * h * h)
                    }
                };
                sup = sup.max(d.abs());
                x += 0.01;
            }
            assert!(
                bound >= sup,
                "order-{m} bound {bound} below the measured sup {sup}"
            );
        }
    }

    #[test]
    fn sobolev_bound_scales_like_the_top_derivative() {
        let ell = 3u32;
        let s1 = sobolev_bound(2, 1e-3, 1e-3, ell, 1.0);
        let s2 = sobolev_bound(2, 5e-4, 5e-4, ell, 1.0);
        let ratio = s2 / s1;
        let expected = 2.0_f64.powi(ell as i32);
        assert!(
            (ratio / expected - 1.0).abs() < 0.05,
            "shrinking the box scaled the bound by {ratio}, expected ~{expected}"
        );
    }

    #[test]
    fn window_average_of_one_is_one() {
        let (lab, nu) = standard_lab();
        let _ = &lab;
        let x = FramePoint::identity(2);
        let avg = window_average(AverageKind::Ps, &x, 2.0, &nu, 0, |_| 1.0).unwrap();
        assert_eq!(avg.value, 1.0);
        assert_eq!(avg.std_error, 0.0);
    }

    #[test]
    fn window_average_reports_empty_windows() {
        let (lab, nu) = standard_lab();
        let _ = &lab;
        // Recenter the chart on the diagonal direction, which lies in the
        // gap between the limit caps: every atom stays at chart distance
        // at least ~0.5, so a window of 0.2 is empty.
        let base = FramePoint::identity(2);
        let gap_dir = crate::boundary::BoundaryPoint::from_ball(DVector::from_vec(vec![
            1.0, 1.0,
        ]))
        .unwrap();
        let gap = crate::boundary::horosphere_projection_inverse(&base, &gap_dir)
            .unwrap()
            .unwrap();
        let x = base.left_mul(
            &LorentzMatrix::horo(2, crate::lorentz::HoroDirection::Expanding, gap.as_slice())
                .unwrap(),
        );
        assert!(matches!(
            window_average(AverageKind::Ps, &x, 0.2, &nu, 0, |_| 1.0),
            Err(Error::EmptyWindow(_))
        ));
    }

    #[test]
    fn flow_conjugation_identity_for_window_averages() {
        let (lab, nu) = standard_lab();
        let psi = identity_box(&lab, 0.5, 0.4, 3, 1.0);
        let x = FramePoint::identity(2);
        let window = 2.0;
        let leaf = leaf_measure(LeafKind::Ps, &x, window, Some(&nu), 0).unwrap();
        let lhs = integrate_leaf(&leaf, |t| psi.eval(&leaf.frame_at(t))).value
            / leaf.total_mass();
        for s in [0.4_f64, 1.1] {
            let conj = conjugate_flow(&leaf, s).unwrap();
            let rhs = integrate_leaf(&conj, |t| {
                psi.eval(&conj.frame_at(t).flow(s).expect("finite"))
            })
            .value
                / conj.total_mass();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
                "flow conjugation broke the window average: {lhs} vs {rhs} at s={s}"
            );
        }
    }

    #[test]
    fn translate_at_time_zero_is_a_plain_leaf_integral() {
        let (lab, nu) = standard_lab();
        let psi = identity_box(&lab, 0.5, 0.4, 3, 1.0);
        let x = FramePoint::identity(2);
        let f = |t: &DVector<f64>| bump_profile(t[0] / 0.3, 2);
        let direct = {
            let leaf = leaf_measure(LeafKind::Ps, &x, 0.5, Some(&nu), 0).unwrap();
            integrate_leaf(&leaf, |t| f(t) * psi.eval(&leaf.frame_at(t))).value
        };
        let via_translate =
            translate_integral(AverageKind::Ps, &x, 0.0, 0.5, &nu, 0, f, |y| psi.eval(y))
                .unwrap();
        assert!((direct - via_translate.value).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn nondivergence_mass_is_monotone_and_vanishes_off_the_core() {
        let (lab, nu) = standard_lab();
        let x = FramePoint::identity(2);
        let total = lab.nondivergence_mass(&nu, &x, 2.0, 1.0, 0.0).unwrap();
        let leaf = leaf_measure(LeafKind::Ps, &x, 2.0, Some(&nu), 0).unwrap();
        assert!((total - leaf.total_mass()).abs() <= 1e-12 * total);
        let mut last = total;
        for r in [0.05, 0.1, 0.5, 1.0] {
            let m = lab.nondivergence_mass(&nu, &x, 2.0, 1.0, r).unwrap();
            assert!(m <= last + 1e-15, "escape mass grew from {last} to {m} at r={r}");
            last = m;
        }
        let beyond = lab.core().diameter + lab.core().mesh + 1.0;
        assert_eq!(lab.nondivergence_mass(&nu, &x, 2.0, 1.0, beyond).unwrap(), 0.0);
    }

    #[test]
    fn good_function_fits_the_interval_geometry() {
        let flat = leaf_measure(LeafKind::Lebesgue, &FramePoint::identity(2), 0.5, None, 20_000)
            .unwrap();
        let f = QuadraticPoly::linear(DVector::from_vec(vec![1.0]));
        let eps: Vec<f64> = (0..8).map(|i| 0.01 * 1.6_f64.powi(i)).collect();
        let fit = good_function_check(&flat, &f, 0.4, &eps).unwrap();
        assert!(!fit.degenerate);
        let beta = fit.beta.unwrap();
        assert!((beta - 1.0).abs() <= 0.05, "interval sublevel exponent {beta}");

        let constant = QuadraticPoly::constant(0.7, 1);
        let fit_c = good_function_check(&flat, &constant, 0.4, &eps).unwrap();
        assert!(fit_c.degenerate);
        assert!(fit_c.beta.is_none());

        assert!(matches!(
            good_function_check(&flat, &QuadraticPoly::constant(0.0, 1), 0.4, &eps),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn crossing_intervals_match_direct_distance_checks() {
        let (lab, _) = standard_lab();
        let psi = identity_box(&lab, 0.55, 0.4, 3, 1.0);
        let mut rng = stream_rng(90, "crossing-check");
        let x = FramePoint::identity(2)
            .left_mul(&LorentzMatrix::horo(2, HoroDirection::Expanding, &[rng.gen_range(-0.5..0.5)]).unwrap())
            .left_mul(&LorentzMatrix::flow(2, rng.gen_range(-0.8..0.8)).unwrap())
            .flow(2.0)
            .unwrap();
        let center = psi.base_foot.lorentz().clone();
        let cosh_radius = 1.0 + 2.0 * (psi.reach / 2.0).sinh().powi(2);
        let w_max = 60.0;
        let intervals =
            box_crossings(psi.words.as_slice(), &x, &center, cosh_radius, w_max).unwrap();
        for (lo, hi, _) in &intervals {
            assert!(lo < hi && lo.abs() <= w_max && hi.abs() <= w_max);
        }
        // Membership in some interval of a word must agree with the direct
        // footpoint-distance test against that word, away from the interval
        // endpoints where rounding decides.
        let o_raw = crate::lorentz::basepoint(2);
        for _ in 0..400 {
            let tau: f64 = rng.gen_range(-w_max..w_max);
            let frame = x.left_mul(&LorentzMatrix::horo(2, HoroDirection::Expanding, &[tau]).unwrap());
            let raw = frame.group().act_row(&o_raw);
            for (wi, word) in psi.words.iter().enumerate() {
                let d = crate::boundary::distance_to_raw(&psi.base_foot, &word.matrix.act_row(&raw));
                let inside = intervals
                    .iter()
                    .any(|&(lo, hi, i)| i == wi && tau >= lo && tau <= hi);
                if d < psi.reach - 1e-9 {
                    assert!(inside, "missed crossing at tau {tau}, word {wi}, distance {d}");
                }
                if d > psi.reach + 1e-9 {
                    assert!(!inside, "phantom crossing at tau {tau}, word {wi}, distance {d}");
                }
            }
        }
    }

    #[test]
    fn translate_profiles_cross_more_as_the_flow_expands() {
        let (lab, nu) = standard_lab();
        let psi = identity_box(&lab, 0.55, 0.4, 3, 1.0);
        let refs = lab.global_references(&nu, 3_000, 1.5, 1.5, 41).unwrap();
        let report = translate_profile(
            &refs,
            &nu,
            &psi,
            AverageKind::Ps,
            35.0,
            48,
            &[1.0, 4.0],
        )
        .unwrap();
        assert!(report.target > 0.0);
        assert!(report.leaves >= 40);
        assert_eq!(report.points.len(), 2);
        for p in &report.points {
            assert!(p.discrepancy.is_finite() && p.discrepancy >= 0.0);
            assert!(p.std_error.is_finite());
        }
        // The flowed curve is e^s times longer, so it must pierce more
        // deck-translate balls.
        assert!(report.points[1].crossings > report.points[0].crossings);
        let again = translate_profile(
            &refs,
            &nu,
            &psi,
            AverageKind::Ps,
            35.0,
            48,
            &[1.0, 4.0],
        )
        .unwrap();
        assert_eq!(report.points[0].discrepancy, again.points[0].discrepancy);

        let haar = translate_profile(
            &refs,
            &nu,
            &psi,
            AverageKind::Haar,
            35.0,
            48,
            &[1.0],
        )
        .unwrap();
        assert!(haar.target > 0.0);
        assert!(haar.points[0].discrepancy.is_finite());
    }

    #[test]
    fn rate_fit_recovers_exact_laws() {
        let power: Vec<(f64, f64, f64)> = [4.0, 8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|&t: &f64| (t, 3.5 * t.powf(-0.62), 0.0))
            .collect();
        let fit = fit_rate(RateModel::Power, &power).unwrap();
        assert!((fit.kappa - 0.62).abs() < 1e-10);
        assert!((fit.prefactor - 3.5).abs() < 1e-10);
        assert!(fit.residual < 1e-12);
        assert!(!fit.on_absolute_values);

        let expo: Vec<(f64, f64, f64)> = (1..=6)
            .map(|s| (s as f64, 0.8 * (-0.45 * s as f64).exp(), 0.01))
            .collect();
        let fit = fit_rate(RateModel::Exponential, &expo).unwrap();
        assert!((fit.kappa - 0.45).abs() < 1e-10);
        assert!((fit.prefactor - 0.8).abs() < 1e-10);
    }

    #[test]
    fn rate_fit_flags_noise_and_rejects_junk() {
        let mut rng = stream_rng(17, "lab/white-noise");
        let noise: Vec<(f64, f64, f64)> = (1..=12)
            .map(|s| (s as f64, rng.gen_range(-1.0..1.0), 0.5))
            .collect();
        let fit = fit_rate(RateModel::Exponential, &noise).unwrap();
        assert!(fit.on_absolute_values);
        assert!(
            fit.kappa.abs() <= fit.band,
            "white noise produced a significant rate: {} ± {}",
            fit.kappa,
            fit.band
        );

        assert!(matches!(
            fit_rate(RateModel::Power, &[(1.0, 1.0, 0.0), (2.0, 0.5, 0.0)]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            fit_rate(RateModel::Power, &[(0.0, 1.0, 0.0), (2.0, 0.5, 0.0), (3.0, 0.2, 0.0)]),
            Err(Error::InvalidArgument(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn rate_fit_is_exact_on_synthetic_laws(
            kappa in 0.05_f64..2.0,
            prefactor in 0.1_f64..10.0,
            power in proptest::bool::ANY,
        ) {
            let table: Vec<(f64, f64, f64)> = (1..=7)
                .map(|i| {
                    let x = 1.5_f64.powi(i);
                    let y = match power {
                        true => prefactor * x.powf(-kappa),
                        false => prefactor * (-kappa * x).exp(),
                    };
                    (x, y, 0.0)
                })
                .collect();
            let model = if power { RateModel::Power } else { RateModel::Exponential };
            let fit = fit_rate(model, &table).unwrap();
            prop_assert!((fit.kappa - kappa).abs() < 1e-9);
            prop_assert!((fit.prefactor - prefactor).abs() < 1e-9 * prefactor);
        }

        #[test]
        fn bump_values_stay_in_range(
            t in -0.6_f64..0.6,
            s in -0.5_f64..0.5,
            r in -0.5_f64..0.5,
        ) {
            static PSI: std::sync::OnceLock<TestFunction> = std::sync::OnceLock::new();
            let psi = PSI.get_or_init(|| {
                let g = SchottkyGroup::build(&SchottkyConfig::standard_n2()).unwrap();
                Lab::new(&g)
                    .unwrap()
                    .make_bump(
                        &BoxSpec { base: FramePoint::identity(2), eta_u: 0.5, eta_p: 0.4 },
                        2,
                        1.7,
                    )
                    .unwrap()
            });
            let u = LorentzMatrix::horo(2, crate::lorentz::HoroDirection::Expanding, &[t]).unwrap();
            let a = LorentzMatrix::flow(2, s).unwrap();
            let v = LorentzMatrix::horo(2, crate::lorentz::HoroDirection::Contracting, &[r]).unwrap();
            let y = FramePoint::identity(2).left_mul(&v).left_mul(&a).left_mul(&u);
            let val = psi.eval_plain(&y);
            prop_assert!((0.0..=1.7).contains(&val));
        }
    }
}
