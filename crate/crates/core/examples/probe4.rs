use horolab::boundary::{hyp_distance, FramePoint, HyperbolicPoint};
use horolab::density::{
    integrate_leaf, leaf_measure, patterson_density, LeafKind, EXPONENT_OFFSET,
};
use horolab::lab::{
    fit_rate, good_function_check, mixing_correlation, translate_integral, window_average,
    AverageKind, BoxSpec, Lab, QuadraticPoly, RateModel, DEFAULT_S_GRID, DEFAULT_T_GRID,
};
use horolab::schottky::{
    critical_exponent_estimate, in_limit_cells, Cap, GeneratorSpec, SchottkyConfig, SchottkyGroup,
};
use nalgebra::DVector;
use std::time::Instant;

fn cfg(l1: f64, l2: f64, r1: f64, r2: f64) -> SchottkyConfig {
    let cap = |x: f64, y: f64, r: f64| Cap::new(DVector::from_vec(vec![x, y]), r).unwrap();
    SchottkyConfig::new(
        2,
        vec![
            GeneratorSpec {
                attracting: cap(1.0, 0.0, r1),
                repelling: cap(-1.0, 0.0, r1),
                translation_length: l1,
                twist_angle: 0.0,
            },
            GeneratorSpec {
                attracting: cap(0.0, 1.0, r2),
                repelling: cap(0.0, -1.0, r2),
                translation_length: l2,
                twist_angle: 0.0,
            },
        ],
    )
}

fn main() {
    let t0 = Instant::now();
    let ladder = [
        (2.2, 2.7, 0.65, 0.6),
        (2.2, 2.7, 0.6, 0.55),
        (2.4, 2.9, 0.6, 0.55),
        (2.6, 3.2, 0.55, 0.5),
    ];
    let mut chosen = None;
    for &(l1, l2, r1, r2) in &ladder {
        match SchottkyGroup::build(&cfg(l1, l2, r1, r2)) {
            Ok(g) => {
                println!("build ok: lengths ({l1},{l2}) caps ({r1},{r2})");
                chosen = Some(g);
                break;
            }
            Err(e) => println!("build failed ({l1},{l2},{r1},{r2}): {e}"),
        }
    }
    let g = chosen.expect("no config built");
    let delta = critical_exponent_estimate(&g, 4, 6).unwrap().value;
    let nu = patterson_density(&g, delta + EXPONENT_OFFSET, 8).unwrap();
    let lab = Lab::new(&g).unwrap();
    let id = FramePoint::identity(2);
    println!("delta={delta:.6} id fwd {} back {}",
        in_limit_cells(&g, &id.forward(), 1e-6).unwrap(),
        in_limit_cells(&g, &id.backward(), 1e-6).unwrap());

    let leaf = leaf_measure(LeafKind::Ps, &id, 128.0, Some(&nu), 0).unwrap();
    let mut prev = 0.0;
    for k in 1..8 {
        let t = 2.0_f64.powi(k);
        let m = leaf.atoms().iter().filter(|(c, _)| c.amax() <= t).map(|(_, m)| m).sum::<f64>();
        println!("mass(|t|<={t}): {m:.4} band {:+.4}", m - prev);
        prev = m;
    }

    let psi = lab.make_bump(&BoxSpec { base: id.clone(), eta_u: 0.4, eta_p: 0.3 }, 3, 1.0).unwrap();
    println!("psi reach {:.3}", psi.reach());
    let refs = lab.global_references(&nu, 20_000, 3.5, 3.5, 2025).unwrap();
    let m_bms = refs.bms_average(|x| psi.eval_plain(x));
    let m_br = refs.br_average(|x| psi.eval_plain(x));
    println!("[{:?}] mass {:.4}+-{:.4} m_bms {:.5}+-{:.5} m_br {:.5}+-{:.5}",
        t0.elapsed(), refs.bms_mass.value, refs.bms_mass.std_error,
        m_bms.value, m_bms.std_error, m_br.value, m_br.std_error);

    for (kind, mref) in [(AverageKind::Ps, m_bms.value), (AverageKind::Haar, m_br.value)] {
        let mut table = Vec::new();
        print!("{kind:?} avg/disc:");
        for &t in &DEFAULT_T_GRID {
            let res = (t * 125.0) as usize;
            let avg = window_average(kind, &id, t, &nu, res, |y| psi.eval(y)).unwrap();
            let d = (avg.value - mref).abs();
            print!(" {:.4}/{d:.3e}", avg.value);
            table.push((t, d, 0.0));
        }
        match fit_rate(RateModel::Power, &table) {
            Ok(f) => println!("  kappa {:.3}+-{:.3} resid {:.3}", f.kappa, f.band, f.residual),
            Err(e) => println!("  fit err {e}"),
        }
    }

    let fw = 1.5;
    let f = move |t: &DVector<f64>| horolab::lab::bump_profile(t[0] / fw, 2);
    let lf = leaf_measure(LeafKind::Ps, &id, fw, Some(&nu), 0).unwrap();
    let mu_f = integrate_leaf(&lf, f).value;
    println!("translate window {fw}: atoms {} mu_f {mu_f:.4}", lf.atoms().len());
    for (kind, mref) in [(AverageKind::Ps, m_bms.value), (AverageKind::Haar, m_br.value)] {
        let target = mu_f * mref;
        print!("{kind:?} tr err(hits):");
        let mut table = Vec::new();
        for &s in &DEFAULT_S_GRID {
            let hits = lf.atoms().iter()
                .filter(|(t, _)| psi.eval(&lf.frame_at(t).flow(s).unwrap()) > 0.0)
                .count();
            let v = translate_integral(kind, &id, s, fw, &nu, 6000, f, |y| psi.eval(y)).unwrap();
            let e = (v.value - target).abs();
            print!(" {e:.3e}({hits})");
            table.push((s, e, 0.0));
        }
        match fit_rate(RateModel::Exponential, &table) {
            Ok(fit) => println!("  kappa {:.3}+-{:.3}", fit.kappa, fit.band),
            Err(e) => println!("  fit err {e}"),
        }
    }

    let rep = mixing_correlation(&refs, &psi, &psi, &DEFAULT_S_GRID).unwrap();
    print!("mix:");
    for p in &rep.points { print!(" {:+.3e}+-{:.1e}", p.value, p.std_error); }
    println!("\n  fit {:?} inconclusive {}", rep.fit.map(|f| (f.kappa, f.band)), rep.inconclusive);

    // good functions at a sampled base
    let x0 = refs.bms_sample().points()[0].0.clone();
    println!("x0 foot dist {:.3}", hyp_distance(&HyperbolicPoint::origin(2), &x0.base_point()));
    let pl = leaf_measure(LeafKind::Ps, &x0, 1.0, Some(&nu), 0).unwrap();
    println!("x0 leaf atoms {} ball(0.9) mass {:.4}", pl.atoms().len(), pl.mass_in(0.9));
    let eps1: Vec<f64> = (0..14).map(|i| 0.001 * 2.0_f64.powi(i)).collect();
    for (name, poly) in [
        ("t", QuadraticPoly::linear(DVector::from_vec(vec![1.0]))),
        ("t^2", QuadraticPoly::new(0.0, DVector::zeros(1), nalgebra::DMatrix::from_vec(1, 1, vec![1.0])).unwrap()),
        ("t^2-0.2", QuadraticPoly::new(-0.2, DVector::zeros(1), nalgebra::DMatrix::from_vec(1, 1, vec![1.0])).unwrap()),
    ] {
        match good_function_check(&pl, &poly, 0.9, &eps1) {
            Ok(fit) => {
                let interior = fit.points.iter().filter(|(_, m)| *m > 0.0 && *m < fit.ball_mass * (1.0 - 1e-12)).count();
                println!("good[{name}]: beta {:?} band {:.3} deg {} interior {}", fit.beta, fit.band, fit.degenerate, interior);
            }
            Err(e) => println!("good[{name}] err {e}"),
        }
    }
    println!("[{:?}] total", t0.elapsed());
}
