use horolab::boundary::FramePoint;
use horolab::density::{
    integrate_leaf, leaf_measure, patterson_density, LeafKind, EXPONENT_OFFSET,
};
use horolab::lab::{
    fit_rate, good_function_check, mixing_correlation, translate_integral, window_average,
    AverageKind, BoxSpec, Lab, QuadraticPoly, RateModel, DEFAULT_S_GRID, DEFAULT_T_GRID,
};
use horolab::schottky::{critical_exponent_estimate, in_limit_cells, SchottkyConfig, SchottkyGroup};
use nalgebra::DVector;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let g = SchottkyGroup::build(&SchottkyConfig::standard_n2()).unwrap();
    let delta = critical_exponent_estimate(&g, 4, 6).unwrap().value;
    let nu = patterson_density(&g, delta + EXPONENT_OFFSET, 8).unwrap();
    let lab = Lab::new(&g).unwrap();
    println!("[{:?}] setup done, delta={delta:.6}", t0.elapsed());

    let psi = lab
        .make_bump(
            &BoxSpec { base: FramePoint::identity(2), eta_u: 0.4, eta_p: 0.3 },
            3,
            1.0,
        )
        .unwrap();
    println!("psi reach {:.3} support_distance {:.3} sobolev {:.3e}",
        psi.reach(), psi.support_distance(), psi.sobolev_bound());

    let refs = lab.global_references(&nu, 20_000, 3.5, 3.5, 2025).unwrap();
    println!("[{:?}] refs: mass {:.4} +- {:.4}", t0.elapsed(), refs.bms_mass.value, refs.bms_mass.std_error);
    let m_bms = refs.bms_average(|x| psi.eval_plain(x));
    let m_br = refs.br_average(|x| psi.eval_plain(x));
    println!("m_bms(psi) = {:.6} +- {:.6}", m_bms.value, m_bms.std_error);
    println!("m_br(psi)  = {:.6} +- {:.6}", m_br.value, m_br.std_error);

    // base point: identity frame endpoint check + first sampled point
    let id = FramePoint::identity(2);
    println!("identity fwd in cells: {} back in cells: {}",
        in_limit_cells(&g, &id.forward(), 1e-6).unwrap(),
        in_limit_cells(&g, &id.backward(), 1e-6).unwrap());
    let x0 = refs.bms_sample().points()[0].0.clone();
    println!("x0 fwd {} back {}",
        in_limit_cells(&g, &x0.forward(), 1e-6).unwrap(),
        in_limit_cells(&g, &x0.backward(), 1e-6).unwrap());

    for (name, x) in [("identity", id.clone()), ("sampled", x0.clone())] {
        println!("--- PS window averages at {name} ---");
        let mut table = Vec::new();
        for &t in &DEFAULT_T_GRID {
            let tic = Instant::now();
            let avg = window_average(AverageKind::Ps, &x, t, &nu, 0, |y| psi.eval(y)).unwrap();
            let disc = (avg.value - m_bms.value).abs();
            println!("T={t:>4}: avg {:.6} disc {:.3e}  [{:?}]", avg.value, disc, tic.elapsed());
            table.push((t, disc, 0.0));
        }
        match fit_rate(RateModel::Power, &table) {
            Ok(f) => println!("power fit: kappa {:.3} +- {:.3} resid {:.3}", f.kappa, f.band, f.residual),
            Err(e) => println!("fit failed: {e}"),
        }
        println!("--- Haar window averages at {name} ---");
        let mut table = Vec::new();
        for &t in &DEFAULT_T_GRID {
            let res = (t * 125.0) as usize;
            let tic = Instant::now();
            let avg = window_average(AverageKind::Haar, &x, t, &nu, res, |y| psi.eval(y)).unwrap();
            let disc = (avg.value - m_br.value).abs();
            println!("T={t:>4}: avg {:.6} disc {:.3e}  [{:?}]", avg.value, disc, tic.elapsed());
            table.push((t, disc, 0.0));
        }
        match fit_rate(RateModel::Power, &table) {
            Ok(f) => println!("power fit: kappa {:.3} +- {:.3} resid {:.3}", f.kappa, f.band, f.residual),
            Err(e) => println!("fit failed: {e}"),
        }
    }

    // translates
    let f = |t: &DVector<f64>| horolab::lab::bump_profile(t[0] / 0.6, 2);
    let x = x0.clone();
    let mu_f = {
        let leaf = leaf_measure(LeafKind::Ps, &x, 0.6, Some(&nu), 0).unwrap();
        integrate_leaf(&leaf, f).value
    };
    println!("mu_ps_x(f) = {mu_f:.6}");
    for (kind, mref) in [(AverageKind::Ps, m_bms.value), (AverageKind::Haar, m_br.value)] {
        println!("--- translates {kind:?} (target {:.6}) ---", mu_f * mref);
        let mut table = Vec::new();
        for &s in &DEFAULT_S_GRID {
            let tic = Instant::now();
            let v = translate_integral(kind, &x, s, 0.6, &nu, 4000, f, |y| psi.eval(y)).unwrap();
            let err = (v.value - mu_f * mref).abs();
            println!("s={s}: value {:.6} err {:.3e} [{:?}]", v.value, err, tic.elapsed());
            table.push((s, err, 0.0));
        }
        match fit_rate(RateModel::Exponential, &table) {
            Ok(fit) => println!("exp fit: kappa {:.3} +- {:.3}", fit.kappa, fit.band),
            Err(e) => println!("fit failed: {e}"),
        }
    }

    // mixing
    let tic = Instant::now();
    let phi = psi.clone();
    let grid: Vec<f64> = std::iter::once(0.0).chain(DEFAULT_S_GRID.iter().copied()).collect();
    let rep = mixing_correlation(&refs, &psi, &phi, &grid).unwrap();
    for p in &rep.points {
        println!("mix s={}: {:.4e} +- {:.4e}", p.s, p.value, p.std_error);
    }
    println!("mix fit: {:?} inconclusive {} [{:?}]", rep.fit.map(|f| (f.kappa, f.band, f.on_absolute_values)), rep.inconclusive, tic.elapsed());

    // good functions on the PS leaf
    let leaf = leaf_measure(LeafKind::Ps, &x, 1.0, Some(&nu), 0).unwrap();
    let eps: Vec<f64> = (0..10).map(|i| 0.003 * 2.0_f64.powi(i)).collect();
    for (name, poly) in [
        ("t", QuadraticPoly::linear(DVector::from_vec(vec![1.0]))),
        ("t^2-0.1", QuadraticPoly::new(-0.1, DVector::zeros(1), nalgebra::DMatrix::from_vec(1, 1, vec![1.0])).unwrap()),
    ] {
        match good_function_check(&leaf, &poly, 0.9, &eps) {
            Ok(fit) => println!("good[{name}]: beta {:?} band {:.3} degenerate {} sup {:.3}",
                fit.beta, fit.band, fit.degenerate, fit.sup_norm),
            Err(e) => println!("good[{name}] err: {e}"),
        }
    }
    println!("[{:?}] total", t0.elapsed());
}
