//! Graded-lex monomial bases over the genuine (non-homogenized) variables.

use std::collections::HashMap;

use nalgebra::DVector;

/// All monomials in `nvars` variables up to `max_degree`, graded
/// lexicographic, with an exponent-vector index map.
#[derive(Clone, Debug)]
pub struct MonomialBasis {
    pub nvars: usize,
    pub max_degree: usize,
    pub exponents: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out = 1usize;
    for i in 0..k {
        out = out * (n - i) / (i + 1);
    }
    out
}

fn compositions(nvars: usize, degree: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if prefix.len() == nvars - 1 {
        prefix.push(degree as u8);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for d in (0..=degree).rev() {
        prefix.push(d as u8);
        compositions(nvars, degree - d, prefix, out);
        prefix.pop();
    }
}

impl MonomialBasis {
    pub fn new(nvars: usize, max_degree: usize) -> Self {
        assert!(nvars >= 1);
        let mut exponents = Vec::with_capacity(binomial(nvars + max_degree, max_degree));
        for deg in 0..=max_degree {
            let mut prefix = Vec::new();
            compositions(nvars, deg, &mut prefix, &mut exponents);
        }
        let index = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        MonomialBasis {
            nvars,
            max_degree,
            exponents,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn index_of(&self, e: &[u8]) -> Option<usize> {
        self.index.get(e).copied()
    }

    /// Evaluates monomial `idx` at the point `z`.
    pub fn eval(&self, idx: usize, z: &DVector<f64>) -> f64 {
        self.exponents[idx]
            .iter()
            .enumerate()
            .map(|(v, &e)| z[v].powi(e as i32))
            .product()
    }

    /// Evaluates the whole basis vector at `z`.
    pub fn eval_all(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), (0..self.len()).map(|i| self.eval(i, z)))
    }
}

/// Exponent vector of the product of two monomials.
pub fn mono_product(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// For each pair `(a, b)` of monomials in `small`, the index of their
/// product in `big`.
pub fn product_index_table(small: &MonomialBasis, big: &MonomialBasis) -> Vec<Vec<usize>> {
    (0..small.len())
        .map(|a| {
            (0..small.len())
                .map(|b| {
                    big.index_of(&mono_product(&small.exponents[a], &small.exponents[b]))
                        .expect("product basis too small")
                })
                .collect()
        })
        .collect()
}
