use horolab::boundary::{hyp_distance, FramePoint};
use horolab::density::{
    integrate_sample, leaf_measure, patterson_density, product_structure_integral,
    transverse_measure, LeafKind, EXPONENT_OFFSET,
};
use horolab::lab::{
    good_function_check, mixing_correlation, translate_profile, window_profile, AverageKind,
    BoxSpec, Lab, QuadraticPoly, DEFAULT_S_GRID, DEFAULT_T_GRID,
};
use horolab::schottky::{critical_exponent_estimate, in_limit_cells, DiophantineStatus, SchottkyConfig, SchottkyGroup};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let g = SchottkyGroup::build(&SchottkyConfig::standard_n2()).unwrap();
    let delta = critical_exponent_estimate(&g, 4, 6).unwrap().value;
    println!("delta {delta:.6}");
    let nu = patterson_density(&g, delta + EXPONENT_OFFSET, 6).unwrap();
    let lab = Lab::new(&g).unwrap();
    let id = FramePoint::identity(2);
    let psi = lab.make_bump(&BoxSpec { base: id.clone(), eta_u: 0.55, eta_p: 0.4 }, 3, 1.0).unwrap();
    let phi = lab.make_bump(&BoxSpec { base: id.clone(), eta_u: 0.5, eta_p: 0.35 }, 3, 1.0).unwrap();

    let refs = lab.global_references(&nu, 40_000, 1.5, 1.5, 2025).unwrap();
    println!("[{:?}] mass {:.6}+-{:.6}", t0.elapsed(), refs.bms_mass.value, refs.bms_mass.std_error);

    // dual estimators
    let tic = Instant::now();
    let slice = transverse_measure(&nu, &id, 0.45, 12, 1).unwrap();
    let product = product_structure_integral(&nu, &slice, 0.8, |x| psi.eval_plain(x)).unwrap();
    let hopf = integrate_sample(refs.bms_sample(), |x| psi.eval_plain(x));
    println!("[{:?}] dual: hopf {:.5e}+-{:.2e} product {:.5e} gap/se {:.2}",
        tic.elapsed(), hopf.value, hopf.std_error, product.value,
        (hopf.value - product.value).abs() / hopf.std_error);

    // windows
    for kind in [AverageKind::Ps, AverageKind::Haar] {
        let tic = Instant::now();
        let rep = window_profile(&refs, &nu, &psi, kind, &id, &DEFAULT_T_GRID).unwrap();
        let discs: Vec<String> = rep.points.iter().map(|p| format!("{:.4e}", p.discrepancy)).collect();
        println!("[{:?}] window {kind:?}: target {:.4e} disc [{}] inv {} fit {:?}",
            tic.elapsed(), rep.target, discs.join(", "), rep.inversions,
            rep.fit.as_ref().map(|f| (f.kappa, f.band)));
    }

    // translates
    for kind in [AverageKind::Ps, AverageKind::Haar] {
        let tic = Instant::now();
        let rep = translate_profile(&refs, &nu, &psi, kind, 35.0, 400, &DEFAULT_S_GRID).unwrap();
        let discs: Vec<String> = rep.points.iter().map(|p| format!("{:.3e}", p.discrepancy)).collect();
        println!("[{:?}] translate {kind:?}: target {:.4e} leaves {} D [{}] fit {:?}",
            tic.elapsed(), rep.target, rep.leaves, discs.join(", "),
            rep.fit.as_ref().map(|f| (f.kappa, f.band)));
    }

    // mixing
    let tic = Instant::now();
    let grid = [3.0, 6.0, 9.0];
    let rep = mixing_correlation(&refs, &psi, &phi, &grid).unwrap();
    let swap = mixing_correlation(&refs, &phi, &psi, &grid).unwrap();
    let zero = mixing_correlation(&refs, &psi, &psi, &[0.0]).unwrap();
    for (p, q) in rep.points.iter().zip(&swap.points) {
        let gap = (p.value - q.value).abs() / (p.std_error.powi(2) + q.std_error.powi(2)).sqrt();
        println!("mix s={}: {:+.4e}+-{:.2e} swapped {:+.4e} gap/se {:.2}", p.s, p.value, p.std_error, q.value, gap);
    }
    println!("[{:?}] mixing fit {:?} inconclusive {} C(0) {:+.4e}+-{:.2e}",
        tic.elapsed(), rep.fit.as_ref().map(|f| (f.kappa, f.band)), rep.inconclusive,
        zero.points[0].value, zero.points[0].std_error);

    // good functions at a sampled base
    let tic = Instant::now();
    let eps_grid: Vec<f64> = (0..14).map(|i| 0.001 * 2f64.powi(i)).collect();
    let f1 = QuadraticPoly::new(0.0, DVector::from_vec(vec![1.0]), DMatrix::zeros(1, 1)).unwrap();
    let f2 = QuadraticPoly::new(-0.2, DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
    for (idx, (x0, _)) in refs.bms_sample().points()[..8].iter().enumerate() {
        let leaf = leaf_measure(LeafKind::Ps, x0, 1.0, Some(&nu), 0).unwrap();
        let d0 = hyp_distance(&FramePoint::identity(2).base_point(), &x0.base_point());
        print!("pt[{idx}] dist {d0:.3} atoms {}:", leaf.atoms().len());
        for (name, f) in [("t", &f1), ("t^2-0.2", &f2)] {
            match good_function_check(&leaf, f, 0.9, &eps_grid) {
                Ok(fit) => print!("  {name}: beta {:?} band {:.3} deg {}", fit.beta.map(|b| (b*1e3).round()/1e3), fit.band, fit.degenerate),
                Err(e) => print!("  {name}: ERR {e}"),
            }
        }
        println!();
    }
    let _ = tic;

    // diophantine certificates
    let tic = Instant::now();
    let mut certified = 0;
    let mut checked = 0;
    for (x, _) in refs.br_sample().points() {
        if checked == 100 { break; }
        if !in_limit_cells(lab.group(), &x.backward(), 1e-6).unwrap() { continue; }
        checked += 1;
        let rep = lab.certify_diophantine(x, 0.5, 6.0, 12.0, 0.5).unwrap();
        if matches!(rep.status, DiophantineStatus::Compliant { .. }) { certified += 1; }
    }
    println!("[{:?}] diophantine certified {certified}/{checked}", tic.elapsed());
    println!("[{:?}] total", t0.elapsed());
}
