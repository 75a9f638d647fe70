use horolab::boundary::{hyp_distance, FramePoint, HyperbolicPoint};
use horolab::density::{
    integrate_leaf, leaf_measure, patterson_density, LeafKind, EXPONENT_OFFSET,
};
use horolab::lab::{
    fit_rate, good_function_check, mixing_correlation, translate_integral, window_average,
    AverageKind, BoxSpec, Lab, QuadraticPoly, RateModel, DEFAULT_S_GRID, DEFAULT_T_GRID,
};
use horolab::lorentz::{HoroDirection, LorentzMatrix};
use horolab::schottky::{
    critical_exponent_estimate, in_limit_cells, Cap, GeneratorSpec, SchottkyConfig, SchottkyGroup,
};
use nalgebra::DVector;
use std::time::Instant;

fn asym_n2() -> SchottkyConfig {
    let cap = |x: f64, y: f64, r: f64| Cap::new(DVector::from_vec(vec![x, y]), r).unwrap();
    SchottkyConfig::new(
        2,
        vec![
            GeneratorSpec {
                attracting: cap(1.0, 0.0, 0.5),
                repelling: cap(-1.0, 0.0, 0.5),
                translation_length: 3.0,
                twist_angle: 0.0,
            },
            GeneratorSpec {
                attracting: cap(0.0, 1.0, 0.45),
                repelling: cap(0.0, -1.0, 0.45),
                translation_length: 3.7,
                twist_angle: 0.0,
            },
        ],
    )
}

fn main() {
    let t0 = Instant::now();
    for (tag, cfg) in [("std", SchottkyConfig::standard_n2()), ("asym", asym_n2())] {
        let g = match SchottkyGroup::build(&cfg) {
            Ok(g) => g,
            Err(e) => { println!("[{tag}] build failed: {e}"); continue; }
        };
        let delta = critical_exponent_estimate(&g, 4, 6).unwrap().value;
        let nu = patterson_density(&g, delta + EXPONENT_OFFSET, 8).unwrap();
        let lab = Lab::new(&g).unwrap();
        let id = FramePoint::identity(2);
        println!("=== [{tag}] delta={delta:.6} id fwd {} back {}",
            in_limit_cells(&g, &id.forward(), 1e-6).unwrap(),
            in_limit_cells(&g, &id.backward(), 1e-6).unwrap());

        // dyadic band masses at identity
        let leaf = leaf_measure(LeafKind::Ps, &id, 128.0, Some(&nu), 0).unwrap();
        let mut prev = 0.0;
        for k in 0..8 {
            let t = 2.0_f64.powi(k);
            let m = leaf.atoms().iter().filter(|(c, _)| c.amax() <= t).map(|(_, m)| m).sum::<f64>();
            println!("mass(|t|<={t}): {m:.4} band {:+.4}", m - prev);
            prev = m;
        }

        // box at identity
        let psi = match lab.make_bump(&BoxSpec { base: id.clone(), eta_u: 0.5, eta_p: 0.4 }, 3, 1.0) {
            Ok(p) => p,
            Err(e) => { println!("bump err: {e}"); continue; }
        };
        println!("psi reach {:.3}", psi.reach());
        let refs = lab.global_references(&nu, 20_000, 3.5, 3.5, 2025).unwrap();
        let m_bms = refs.bms_average(|x| psi.eval_plain(x));
        let m_br = refs.br_average(|x| psi.eval_plain(x));
        println!("mass {:.4}+-{:.4} m_bms {:.5}+-{:.5} m_br {:.5}+-{:.5}",
            refs.bms_mass.value, refs.bms_mass.std_error, m_bms.value, m_bms.std_error, m_br.value, m_br.std_error);

        for (kind, mref) in [(AverageKind::Ps, m_bms.value), (AverageKind::Haar, m_br.value)] {
            let mut table = Vec::new();
            print!("{kind:?} disc:");
            for &t in &DEFAULT_T_GRID {
                let res = (t * 125.0) as usize;
                let avg = window_average(kind, &id, t, &nu, res, |y| psi.eval(y)).unwrap();
                let d = (avg.value - mref).abs();
                print!(" {d:.4e}");
                table.push((t, d, 0.0));
            }
            match fit_rate(RateModel::Power, &table) {
                Ok(f) => println!("  kappa {:.3}+-{:.3} resid {:.3}", f.kappa, f.band, f.residual),
                Err(e) => println!("  fit err {e}"),
            }
        }

        // translate hits at identity base with wider f window
        let fw = 1.5;
        let f = move |t: &DVector<f64>| horolab::lab::bump_profile(t[0] / fw, 2);
        let mu_f = {
            let l = leaf_measure(LeafKind::Ps, &id, fw, Some(&nu), 0).unwrap();
            integrate_leaf(&l, f).value
        };
        let lf = leaf_measure(LeafKind::Ps, &id, fw, Some(&nu), 0).unwrap();
        println!("translate window {fw}: atoms {} mu_f {mu_f:.4}", lf.atoms().len());
        for (kind, mref) in [(AverageKind::Ps, m_bms.value), (AverageKind::Haar, m_br.value)] {
            let target = mu_f * mref;
            print!("{kind:?} translate err:");
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

        // mixing
        let rep = mixing_correlation(&refs, &psi, &psi, &DEFAULT_S_GRID).unwrap();
        print!("mix:");
        for p in &rep.points { print!(" {:+.3e}+-{:.1e}", p.value, p.std_error); }
        println!("\n  fit {:?} inconclusive {}", rep.fit.map(|f| (f.kappa, f.band)), rep.inconclusive);

        // good function t^2
        let pl = leaf_measure(LeafKind::Ps, &id, 1.0, Some(&nu), 0).unwrap();
        let eps: Vec<f64> = (0..12).map(|i| 0.002 * 2.0_f64.powi(i)).collect();
        let sq = QuadraticPoly::new(0.0, DVector::zeros(1), nalgebra::DMatrix::from_vec(1, 1, vec![1.0])).unwrap();
        match good_function_check(&pl, &sq, 0.9, &eps) {
            Ok(fit) => println!("good[t^2]: beta {:?} band {:.3} deg {}", fit.beta, fit.band, fit.degenerate),
            Err(e) => println!("good[t^2] err {e}"),
        }
        println!("[{:?}]", t0.elapsed());
    }
    let _ = hyp_distance(&HyperbolicPoint::origin(2), &HyperbolicPoint::origin(2));
    let _ = LorentzMatrix::horo(2, HoroDirection::Expanding, &[0.0]);
}
