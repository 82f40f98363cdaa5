//! Polynomials over the genuine variables, lifted from homogeneous
//! quadratic forms.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

/// Sparse polynomial: exponent vector to coefficient.
pub type Poly = BTreeMap<Vec<u8>, f64>;

fn add_term(p: &mut Poly, e: Vec<u8>, c: f64) {
    if c == 0.0 {
        return;
    }
    let slot = p.entry(e).or_insert(0.0);
    *slot += c;
    if *slot == 0.0 {
        // keep the map free of cancelled terms
    }
}

/// `xᵀA x` with `x = [1, z]` as a polynomial in `z` (degree ≤ 2).
pub fn poly_from_quadratic(a: &DMatrix<f64>) -> Poly {
    let n = a.nrows();
    let d = n - 1;
    let mut p = Poly::new();
    add_term(&mut p, vec![0u8; d], a[(0, 0)]);
    for k in 0..d {
        let mut e = vec![0u8; d];
        e[k] = 1;
        add_term(&mut p, e, 2.0 * a[(0, 1 + k)]);
    }
    for k in 0..d {
        for l in k..d {
            let mut e = vec![0u8; d];
            e[k] += 1;
            e[l] += 1;
            let c = if k == l {
                a[(1 + k, 1 + l)]
            } else {
                2.0 * a[(1 + k, 1 + l)]
            };
            add_term(&mut p, e, c);
        }
    }
    p.retain(|_, c| *c != 0.0);
    p
}

/// Evaluates a polynomial at `z`.
pub fn poly_eval(p: &Poly, z: &DVector<f64>) -> f64 {
    p.iter()
        .map(|(e, c)| {
            c * e
                .iter()
                .enumerate()
                .map(|(v, &k)| z[v].powi(k as i32))
                .product::<f64>()
        })
        .sum()
}
