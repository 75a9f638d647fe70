use horolab::boundary::FramePoint;
use horolab::lab::{BoxSpec, Lab};
use horolab::schottky::{SchottkyConfig, SchottkyGroup};

fn main() {
    let g = SchottkyGroup::build(&SchottkyConfig::standard_n2()).unwrap();
    let lab = Lab::new(&g).unwrap();
    let id = FramePoint::identity(2);
    for eta_u in [0.4, 0.5, 0.55, 0.6, 0.65, 0.7] {
        for eta_p in [0.3, 0.35, 0.4, 0.45, 0.5] {
            match lab.make_bump(&BoxSpec { base: id.clone(), eta_u, eta_p }, 3, 1.0) {
                Ok(psi) => println!("({eta_u}, {eta_p}): reach {:.3} ok", psi.reach()),
                Err(e) => println!("({eta_u}, {eta_p}): {e}"),
            }
        }
    }
}
