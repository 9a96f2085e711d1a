//! Forward-projects a phantom, back-projects the sinogram and checks the
//! adjoint identity <Ax, y> = <x, Aᵀy>.

use bcdpet::phantom::{make_phantom, PhantomSpec};
use bcdpet::{Geometry, Projector, Result, SystemModel};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn main() -> Result<()> {
    let g = Geometry::square(64, 96);
    let a = Projector::new(g)?;
    let (x, _) = make_phantom(&PhantomSpec::preset_test(), &g)?;
    let s = a.forward(&x)?;
    let bp = a.back(&s)?;

    println!("image {:?}, sinogram {:?}", a.image_shape(), a.sinogram_shape());
    println!("sum(x) = {:.4}, sum(Ax) = {:.4}", x.sum(), s.sum());
    let lhs = dot(s.as_slice(), s.as_slice());
    let rhs = dot(x.as_slice(), bp.as_slice());
    println!("<Ax, Ax> = {lhs:.6e}, <x, AᵀAx> = {rhs:.6e}, rel diff {:.2e}", (lhs - rhs).abs() / lhs);
    let sens = a.sensitivity();
    println!("sensitivity range [{:.3}, {:.3}]", sens.as_slice().iter().cloned().fold(f64::INFINITY, f64::min), sens.max());
    Ok(())
}
