//! Zonal targets against an explicit orthonormal harmonic basis on S^2.

use gdp_sphere::harmonics::{sample_sphere, SphereDim};
use gdp_sphere::ntk::spectrum_closed_form;
use gdp_sphere::target::{evaluate_target, make_zonal_target};
use ndarray::ArrayView1;

/// Real harmonics of degree 1 and 2, orthonormal for the uniform probability measure on S^2.
fn basis(l: usize, x: ArrayView1<'_, f64>) -> Vec<f64> {
    let (a, b, c) = (x[0], x[1], x[2]);
    match l {
        1 => vec![3f64.sqrt() * a, 3f64.sqrt() * b, 3f64.sqrt() * c],
        2 => {
            let s15 = 15f64.sqrt();
            vec![
                s15 * a * b,
                s15 * b * c,
                s15 * a * c,
                (15.0f64 / 4.0).sqrt() * (a * a - b * b),
                (5.0f64 / 4.0).sqrt() * (3.0 * c * c - 1.0),
            ]
        }
        _ => unreachable!(),
    }
}

#[test]
fn zonal_target_matches_basis_expansion() {
    let d = SphereDim::new(3).unwrap();
    let spectrum = spectrum_closed_form(d, 3);
    let x = sample_sphere(d, 200, 17);
    for (l, coeffs) in [(1, vec![0.0, 0.3]), (2, vec![0.0, 0.0, 0.05])] {
        let target = make_zonal_target(d, l, &coeffs, 1.0, &spectrum, 9).unwrap();
        let pole = ndarray::Array1::from(target.components[0].pole.clone());
        let c = coeffs[l];
        let n_dim = (2 * l + 1) as f64;
        let yp = basis(l, pole.view());
        let values = evaluate_target(&target, x.view()).unwrap();
        for (row, v) in x.rows().into_iter().zip(values.iter()) {
            // c √N P_ℓ(⟨a, x⟩) = (c / √N) Σ_j Y_j(a) Y_j(x).
            let expect: f64 = yp.iter().zip(basis(l, row)).map(|(p, q)| p * q).sum::<f64>() * c / n_dim.sqrt();
            assert!((v - expect).abs() < 1e-13, "degree {l}: {v} vs {expect}");
        }
    }
}
