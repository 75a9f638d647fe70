use horolab::boundary::FramePoint;
use horolab::density::{
    integrate_leaf, leaf_measure, patterson_density, LeafKind, EXPONENT_OFFSET,
};
use horolab::lab::{
    bump_profile, fit_rate, mixing_correlation, BoxSpec, Lab, RateModel,
};
use horolab::schottky::{critical_exponent_estimate, SchottkyConfig, SchottkyGroup};
use nalgebra::DVector;
use std::time::Instant;

fn mean_se(draws: &[f64]) -> (f64, f64) {
    let n = draws.len() as f64;
    let m = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn main() {
    let t0 = Instant::now();
    let g = SchottkyGroup::build(&SchottkyConfig::standard_n2()).unwrap();
    let delta = critical_exponent_estimate(&g, 4, 6).unwrap().value;
    let nu = patterson_density(&g, delta + EXPONENT_OFFSET, 6).unwrap();
    let lab = Lab::new(&g).unwrap();
    let id = FramePoint::identity(2);
    let psi = lab.make_bump(&BoxSpec { base: id.clone(), eta_u: 0.55, eta_p: 0.4 }, 3, 1.0).unwrap();
    println!("reach {:.3} sobolev {:.3e}", psi.reach(), psi.sobolev_bound());

    let refs = lab.global_references(&nu, 40_000, 3.5, 3.5, 2025).unwrap();
    println!("[{:?}] mass {:.4}+-{:.4}", t0.elapsed(), refs.bms_mass.value, refs.bms_mass.std_error);
    let m_bms = refs.bms_average(|x| psi.eval_plain(x));
    let m_br = refs.br_average(|x| psi.eval_plain(x));
    println!("m_bms {:.5}+-{:.5} m_br {:.5}+-{:.5}", m_bms.value, m_bms.std_error, m_br.value, m_br.std_error);

    // mixing on the resonant grid
    for grid in [[3.0, 6.0, 9.0].as_slice(), [3.0, 4.5, 6.0, 7.5, 9.0].as_slice()] {
        let tic = Instant::now();
        let rep = mixing_correlation(&refs, &psi, &psi, grid).unwrap();
        for p in &rep.points { println!("mix s={}: {:+.4e} +- {:.2e}", p.s, p.value, p.std_error); }
        println!("fit {:?} inconclusive {} [{:?}]", rep.fit.map(|f| (f.kappa, f.band, f.on_absolute_values)), rep.inconclusive, tic.elapsed());
    }

    // normalized translate discrepancy over an unweighted ensemble
    let k = 40usize;
    let fw = 4.0;
    let pts: Vec<FramePoint> = refs.bms_sample().points()[..k]
        .iter().map(|(x, _)| x.clone()).collect();
    let f = move |t: &DVector<f64>| bump_profile(t[0] / fw, 2);

    let tic = Instant::now();
    let leaves: Vec<_> = pts.iter().map(|x| leaf_measure(LeafKind::Ps, x, fw, Some(&nu), 0).unwrap()).collect();
    let mu_f: Vec<f64> = leaves.iter().map(|l| integrate_leaf(l, f).value).collect();
    let usable: Vec<usize> = (0..k).filter(|&i| mu_f[i] > 1e-12).collect();
    println!("[{:?}] usable leaves {} / {} atoms {}", tic.elapsed(), usable.len(), k, leaves[0].atoms().len());

    let target_ps = m_bms.value / refs.bms_mass.value;
    let target_haar = m_br.value / refs.bms_mass.value;
    for (kind, target) in [("Ps", target_ps), ("Haar", target_haar)] {
        println!("--- normalized translates {kind}, target {target:.3e}");
        let mut table = Vec::new();
        for s in [1.0_f64, 2.0, 3.0, 4.0, 5.0, 6.0] {
            let tic = Instant::now();
            let draws: Vec<f64> = usable.iter().map(|&i| {
                let v = match kind {
                    "Ps" => integrate_leaf(&leaves[i], |t| {
                        f(t) * psi.eval(&leaves[i].frame_at(t).flow(s).unwrap())
                    }).value,
                    _ => {
                        let l = leaf_measure(LeafKind::Lebesgue, &pts[i], fw, None, 8000).unwrap();
                        let pre = ((1.0 - nu.exponent()) * s).exp();
                        pre * integrate_leaf(&l, |t| f(t) * psi.eval(&l.frame_at(t).flow(s).unwrap())).value
                    }
                };
                (v / mu_f[i] - target).abs()
            }).collect();
            let (m, se) = mean_se(&draws);
            println!("s={s}: D {m:.4e} se {se:.2e} [{:?}]", tic.elapsed());
            table.push((s, m, se));
        }
        match fit_rate(RateModel::Exponential, &table) {
            Ok(fit) => println!("exp fit kappa {:.3}+-{:.3} abs {}", fit.kappa, fit.band, fit.on_absolute_values),
            Err(e) => println!("fit err {e}"),
        }
    }
    println!("[{:?}] total", t0.elapsed());
}
