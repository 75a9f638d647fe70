use horolab::boundary::{horosphere_projection_inverse, BoundaryPoint, FramePoint};
use horolab::density::{leaf_measure, patterson_density, LeafKind, EXPONENT_OFFSET};
use horolab::lorentz::{HoroDirection, LorentzMatrix};
use horolab::schottky::{critical_exponent_estimate, SchottkyConfig, SchottkyGroup};
use nalgebra::DVector;

fn main() {
    let g = SchottkyGroup::build(&SchottkyConfig::standard_n2()).unwrap();
    let delta = critical_exponent_estimate(&g, 4, 6).unwrap().value;
    let nu = patterson_density(&g, delta + EXPONENT_OFFSET, 6).unwrap();
    let base = FramePoint::identity(2);
    let gap_dir = BoundaryPoint::from_ball(DVector::from_vec(vec![1.0, 1.0])).unwrap();
    let gap = horosphere_projection_inverse(&base, &gap_dir).unwrap().unwrap();
    println!("gap chart coordinate: {:.6}", gap[0]);
    let x = base.left_mul(&LorentzMatrix::horo(2, HoroDirection::Expanding, gap.as_slice()).unwrap());
    for w in [0.02, 0.05, 0.1, 0.2, 0.5] {
        let l = leaf_measure(LeafKind::Ps, &x, w, Some(&nu), 0).unwrap();
        println!("window {w}: atoms={} mass={:.3e}", l.atoms().len(), l.total_mass());
    }
    // nearest atom coordinate at the shifted frame
    let l = leaf_measure(LeafKind::Ps, &x, 5.0, Some(&nu), 0).unwrap();
    let nearest = l.atoms().iter().map(|(t, _)| t.amax()).fold(f64::INFINITY, f64::min);
    println!("nearest atom at |t| = {nearest:.4}");
}
