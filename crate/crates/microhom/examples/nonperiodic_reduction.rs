//! Reduce a genuinely non-periodic layout to a locally periodic model and
//! measure what the reduction costs.
//!
//! The layout map L(x) = (1 + 0.2 x₁)·1 inflates the microstructure from
//! bottom to top; its phase pattern follows g(x) = L(x)⁻¹x and never repeats
//! exactly. The reduction derives the cell deformation H from the Jacobian
//! of g, freezes (H, K = L) per patch on the ε^r lattice, and anchors every
//! patch so its pattern lines up with the true one at the patch center. The
//! mismatch is a seam effect that shrinks with ε, slowly: freezing the maps
//! over patches of size ε^r costs ε^(2r−1), which is ε^0.2 at r = 0.6.

use microhom::field::{derive_h_from_l, Domain, TransformField};
use microhom::micro::{reduce_nonperiodic, reduction_distance_grid, NonperiodicField};
use microhom::tensor::Tensor2;
use microhom::verify::LaminateCase;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = TransformField::IsotropicScale {
        a: vec![0.0, 0.2],
        b: 1.0,
    }
    .compile(2)?;

    // the Jacobian of g = L⁻¹x has a closed form for this layout,
    // H(x) = [[s, 0.2 x₀ s], [0, s²]] with s = 1 + 0.2 x₁; the
    // finite-difference derivation must hit it
    let x = [0.5, 0.5];
    let h = derive_h_from_l(&layout, &x, 1e-5)?;
    let exact = Tensor2::from_rows(&[&[1.1, 0.11], &[0.0, 1.21]]);
    println!("H(0.5, 0.5) derived from the layout:\n{h:?}");
    println!("closed form gap: {:.2e}", h.sub(&exact).norm());

    let case = LaminateCase {
        dim: 2,
        axis: 0,
        lame: vec![(1.0, 1.0), (10.0, 10.0)],
        fractions: vec![0.5, 0.5],
    };
    let material = case.material(16)?;
    let domain = Domain::unit(2);

    // the mismatch region is a union of thin seams, so the measurement grid
    // has to resolve the ε-scale pattern before the trend is visible
    println!("\nreduction quality on a 512² midpoint grid:");
    println!(
        "{:>8}  {:>7}  {:>12}  {:>14}",
        "eps", "patches", "tensor L2", "phase mismatch"
    );
    for eps in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
        let full = NonperiodicField {
            material: material.clone(),
            layout: layout.clone(),
            eps,
        };
        let reduced = reduce_nonperiodic(material.clone(), &layout, domain.clone(), eps, 0.6)?;
        let rep = reduction_distance_grid(&full, &reduced, &[512, 512])?;
        println!(
            "{:>8.5}  {:>7}  {:>12.4e}  {:>14.4}",
            eps,
            reduced.decomposition.num_patches(),
            rep.tensor_l2,
            rep.phase_mismatch
        );
    }
    println!("\nboth columns shrink with ε: the locally periodic model is an");
    println!("asymptotically faithful stand-in for the non-periodic layout");
    Ok(())
}
