use horolab::boundary::FramePoint;
use horolab::density::{
    integrate_leaf, leaf_measure, patterson_density, LeafKind, EXPONENT_OFFSET,
};
use horolab::lab::{bump_profile, fit_rate, BoxSpec, Lab, RateModel, TestFunction};
use horolab::lorentz::{basepoint, decompose_up, LorentzMatrix};
use horolab::schottky::{critical_exponent_estimate, SchottkyConfig, SchottkyGroup};
use nalgebra::DVector;
use std::time::Instant;

fn mean_se(draws: &[f64]) -> (f64, f64) {
    let n = draws.len() as f64;
    let m = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

// chart value of the box bump at frame h·base: copy of the TestFunction kernel
fn chart_value(h: &LorentzMatrix, eta_u: f64, eta_p: f64, ell: u32) -> f64 {
    match decompose_up(h) {
        Ok((t, p)) => {
            let mut v = bump_profile(p.s / eta_p, ell);
            if v == 0.0 { return 0.0; }
            for i in 0..t.len() {
                v *= bump_profile(t[i] / eta_u, ell);
                if v == 0.0 { return 0.0; }
            }
            for i in 0..p.r.len() {
                v *= bump_profile(p.r[i] / eta_p, ell);
                if v == 0.0 { return 0.0; }
            }
            v
        }
        Err(_) => 0.0,
    }
}

fn form_pair(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = x.len() - 1;
    let mut acc = x[0] * y[n] + x[n] * y[0];
    for i in 1..n {
        acc -= x[i] * y[i];
    }
    acc
}

fn main() {
    let t0 = Instant::now();
    let g = SchottkyGroup::build(&SchottkyConfig::standard_n2()).unwrap();
    let delta = critical_exponent_estimate(&g, 4, 6).unwrap().value;
    let nu = patterson_density(&g, delta + EXPONENT_OFFSET, 6).unwrap();
    let lab = Lab::new(&g).unwrap();
    let id = FramePoint::identity(2);
    let (eta_u, eta_p, ell) = (0.55, 0.4, 3u32);
    let psi: TestFunction = lab.make_bump(&BoxSpec { base: id.clone(), eta_u, eta_p }, ell, 1.0).unwrap();
    let reach = psi.reach();
    let base_inv = id.group().inverse();
    let c_raw = id.base_point().lorentz().clone();
    let cosh_r = 1.0 + 2.0 * (reach / 2.0).sinh().powi(2);

    let refs = lab.global_references(&nu, 40_000, 1.5, 1.5, std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2025)).unwrap();
    let target_ps = refs.bms_average(|x| psi.eval_plain(x)).value;
    let target_haar = refs.br_average(|x| psi.eval_plain(x)).value;
    let l1 = horolab::density::integrate_sample(refs.bms_sample(), |_| 1.0);
    let slice = horolab::density::transverse_measure(&nu, &id, 0.45, 12, 1).unwrap();
    let prod_bms = horolab::density::product_structure_integral(&nu, &slice, 0.8, |x| psi.eval_plain(x)).unwrap();
    println!("product bms {:.4e} -> /mass {:.4e}", prod_bms.value, prod_bms.value / refs.bms_mass.value);
    println!("[{:?}] targets ps {target_ps:.4e} haar {target_haar:.4e} | mass {:.4} slab {:.4}", t0.elapsed(), refs.bms_mass.value, l1.value);

    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let fw = 35.0;
    let pts: Vec<FramePoint> = refs.bms_sample().points()[..k].iter().map(|(x, _)| x.clone()).collect();
    let f = move |t: f64| bump_profile(t / fw, 2);

    let tic = Instant::now();
    let leaves: Vec<_> = pts.iter().map(|x| leaf_measure(LeafKind::Ps, x, fw, Some(&nu), 0).unwrap()).collect();
    let mu_f: Vec<f64> = leaves.iter().map(|l| integrate_leaf(l, |t| f(t[0])).value).collect();
    // sorted atom lists
    let atom_lists: Vec<Vec<(f64, f64)>> = leaves.iter().map(|l| {
        let mut v: Vec<(f64, f64)> = l.atoms().iter().map(|(t, m)| (t[0], *m)).collect();
        v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        v
    }).collect();
    println!("[{:?}] leaves built, mu_f[0] {:.4}", tic.elapsed(), mu_f[0]);

    let words = lab.location_words();
    let o_row = basepoint(2);

    for kind in ["Ps", "Haar"] {
        let target = if kind == "Ps" { target_ps } else { target_haar };
        println!("--- translates {kind}, fw {fw}, K {k}, target {target:.4e}");
        let mut table = Vec::new();
        for s in [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0] {
            let tic = Instant::now();
            let w_max = fw * s.exp();
            let mut draws = Vec::with_capacity(k);
            let mut crossings_total = 0usize;
            for (i, x) in pts.iter().enumerate() {
                if mu_f[i] <= 1e-12 { continue; }
                let xs = x.flow(s).unwrap();
                // rows of o·u_tau·(xs·w) are quadratic in tau: r(tau) = r0 + tau r1 + tau^2 r2
                let m_xs = xs.group();
                let row0 = m_xs.act_row(&o_row);
                let u1 = LorentzMatrix::horo(2, horolab::lorentz::HoroDirection::Expanding, &[1.0]).unwrap();
                let um1 = LorentzMatrix::horo(2, horolab::lorentz::HoroDirection::Expanding, &[-1.0]).unwrap();
                let row_p = m_xs.act_row(&u1.act_row(&o_row));
                let row_m = m_xs.act_row(&um1.act_row(&o_row));
                // o·u_tau·xs = a + tau*b + tau^2*c  (exact quadratic)
                let a0 = row0.clone();
                let b0 = (&row_p - &row_m) / 2.0;
                let c0 = (&row_p + &row_m) / 2.0 - &row0;
                // intervals per word
                let mut intervals: Vec<(f64, f64, usize)> = Vec::new();
                for (wi, w) in words.iter().enumerate() {
                    let aw = w.matrix.act_row(&a0);
                    let bw = w.matrix.act_row(&b0);
                    let cw = w.matrix.act_row(&c0);
                    let q2 = form_pair(&cw, &c_raw);
                    let q1 = form_pair(&bw, &c_raw);
                    let q0 = form_pair(&aw, &c_raw) - cosh_r;
                    // q2 tau^2 + q1 tau + q0 <= 0
                    if q2.abs() < 1e-14 {
                        if q1.abs() < 1e-14 { if q0 <= 0.0 { intervals.push((-w_max, w_max, wi)); } }
                        else {
                            let r = -q0 / q1;
                            if q1 > 0.0 { intervals.push((-w_max, r.min(w_max), wi)); }
                            else { intervals.push((r.max(-w_max), w_max, wi)); }
                        }
                        continue;
                    }
                    let disc = q1 * q1 - 4.0 * q2 * q0;
                    if disc <= 0.0 { if q2 < 0.0 { intervals.push((-w_max, w_max, wi)); } continue; }
                    let sq = disc.sqrt();
                    let (lo, hi) = ((-q1 - sq) / (2.0 * q2), (-q1 + sq) / (2.0 * q2));
                    let (lo, hi) = if q2 > 0.0 { (lo, hi) } else { continue; }; // q2<0 outside: ignore rare
                    let (lo, hi) = (lo.max(-w_max), hi.min(w_max));
                    if lo < hi { intervals.push((lo, hi, wi)); }
                }
                crossings_total += intervals.len();
                let val = if kind == "Ps" {
                    let atoms = &atom_lists[i];
                    let es = s.exp();
                    let mut acc = 0.0;
                    for &(lo, hi, wi) in &intervals {
                        // atoms with t*es in [lo, hi]
                        let t_lo = lo / es;
                        let t_hi = hi / es;
                        let start = atoms.partition_point(|&(t, _)| t < t_lo);
                        for &(t, m) in &atoms[start..] {
                            if t > t_hi { break; }
                            let frame = xs.left_mul(&LorentzMatrix::horo(2, horolab::lorentz::HoroDirection::Expanding, &[t * es]).unwrap());
                            let h = &(frame.group() * &words[wi].matrix) * &base_inv;
                            acc += m * f(t) * chart_value(&h, eta_u, eta_p, ell);
                        }
                    }
                    acc / mu_f[i]
                } else {
                    let es = s.exp();
                    let pre = (-nu.exponent() * s).exp();
                    let mut acc = 0.0;
                    for &(lo, hi, wi) in &intervals {
                        // Simpson with 64 panels on [lo, hi]
                        let nn = 64usize;
                        let h_step = (hi - lo) / nn as f64;
                        let mut local = 0.0;
                        for j in 0..=nn {
                            let tau = lo + j as f64 * h_step;
                            let frame = xs.left_mul(&LorentzMatrix::horo(2, horolab::lorentz::HoroDirection::Expanding, &[tau]).unwrap());
                            let hmat = &(frame.group() * &words[wi].matrix) * &base_inv;
                            let v = f(tau / es) * chart_value(&hmat, eta_u, eta_p, ell);
                            let w_simp = if j == 0 || j == nn { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                            local += w_simp * v;
                        }
                        acc += local * h_step / 3.0;
                    }
                    pre * acc / mu_f[i]
                };
                draws.push(val);
            }
            let (mv, sev) = mean_se(&draws);
            let abs: Vec<f64> = draws.iter().map(|v| (v - target).abs()).collect();
            let (m, se) = mean_se(&abs);
            let mut sorted = draws.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = sorted[sorted.len() / 2];
            println!("s={s}: D {m:.4e} se {se:.2e} signed {mv:.4e}+-{sev:.2e} med {med:.4e} crossings {crossings_total} [{:?}]", tic.elapsed());
            table.push((s, m, se));
        }
        match fit_rate(RateModel::Exponential, &table) {
            Ok(fit) => println!("exp fit kappa {:.3}+-{:.3} abs {}", fit.kappa, fit.band, fit.on_absolute_values),
            Err(e) => println!("fit err {e}"),
        }
    }
    println!("[{:?}] total", t0.elapsed());
}
