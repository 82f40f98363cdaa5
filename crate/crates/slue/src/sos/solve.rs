//! Minimum-volume certified ellipsoid via the sum-of-squares S-lemma.
//!
//! For a constraint set `{z : p_i(z) ≤ 0, q_j(z) = 0}` and center `c`, the
//! certificate is the polynomial identity
//!
//! ```text
//!   Σ λ_i(z) p_i(z) + Σ μ_j(z) q_j(z) − [(z−c)ᵀH(z−c) − 1] − σ(z) = 0
//! ```
//!
//! with `λ_i = b_κᵀ Λ_i b_κ` (Λ_i ⪰ 0), `μ_j` free of degree ≤ 2κ, and
//! `σ = b_{κ+1}ᵀ S b_{κ+1}` (S ⪰ 0). Any `z` in the set then satisfies
//! `(z−c)ᵀH(z−c) ≤ 1`. Volume is minimized by maximizing `logdet(H)`
//! through a Cholesky-factor bound: `G = [[H, Z],[Zᵀ, diag Z]] ⪰ 0` with
//! `Z` lower triangular gives `logdet H ≥ Σ log Z_kk`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::basis::{mono_product, MonomialBasis};
use super::lift::{poly_from_quadratic, Poly};
use super::sdp::{
    status_is_dual_infeasible, status_is_primal_infeasible, status_is_solved, svec_index,
    svec_len, ConeBlock, ConicProblem, SQRT2,
};
use crate::constraints::QuadraticConstraintSet;
use crate::error::{Result, SlueError};

/// Threshold on the scaled-identity diagnostic below which the set is
/// reported unbounded rather than uncertified.
const TAU_UNBOUNDED_TOL: f64 = 1e-7;

/// Largest H eigenvalue below which a "solved" result is treated as an
/// unbounded set (the solver drives H to zero instead of failing).
const H_VANISHED_TOL: f64 = 1e-9;

const MAX_ITER: u32 = 200;

/// Multiplier matrices recovered from the solved SDP.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub lambdas: Vec<DMatrix<f64>>,
    pub mus: Vec<DVector<f64>>,
    pub slack: DMatrix<f64>,
}

/// A certified outer ellipsoid `(z_T − c_T)ᵀ H (z_T − c_T) ≤ 1` over the
/// `target` coordinates of the genuine variables.
#[derive(Clone, Debug)]
pub struct EllipsoidBound {
    pub target: Vec<usize>,
    pub center: DVector<f64>,
    pub h: DMatrix<f64>,
    pub logdet: f64,
    pub status: String,
    pub solve_time_s: f64,
    pub certificate_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum HModel {
    /// Free symmetric H over the target block, logdet objective.
    Full,
    /// H = τ I over the target block, maximize τ ∈ [0, 1]. Diagnoses
    /// unboundedness when the full problem is infeasible.
    ScaledIdentity,
}

struct Layout {
    m: usize,
    h_off: usize,
    lambda_off: Vec<usize>,
    mu_off: Vec<usize>,
    s_off: usize,
    #[allow(dead_code)]
    z_off: usize,
    #[allow(dead_code)]
    t_off: usize,
    #[allow(dead_code)]
    n_vars: usize,
}

/// Assembled conic program plus the bases needed to interpret its solution.
pub struct SosAssembly {
    pub problem: ConicProblem,
    layout: Layout,
    basis_mult: MonomialBasis,
    basis_slack: MonomialBasis,
    basis_mu: MonomialBasis,
    target: Vec<usize>,
    center: DVector<f64>,
    #[allow(dead_code)]
    model: HModel,
}

fn lower_tri_index(i: usize, j: usize, m: usize) -> usize {
    debug_assert!(i >= j && i < m);
    let col_off = if j == 0 { 0 } else { j * m - j * (j - 1) / 2 };
    col_off + (i - j)
}

fn validate_target(target: &[usize], d: usize) -> Result<()> {
    if target.is_empty() {
        return Err(SlueError::input("target block is empty"));
    }
    for w in target.windows(2) {
        if w[0] >= w[1] {
            return Err(SlueError::input("target indices must be strictly increasing"));
        }
    }
    if *target.last().unwrap() >= d {
        return Err(SlueError::input(format!(
            "target index {} out of range for {d} variables",
            target.last().unwrap()
        )));
    }
    Ok(())
}

fn assemble(
    set: &QuadraticConstraintSet,
    center: &DVector<f64>,
    kappa: usize,
    target: &[usize],
    model: HModel,
) -> Result<SosAssembly> {
    let d = set.dim - 1;
    if center.len() != d {
        return Err(SlueError::input(format!(
            "center has {} entries, expected {d}",
            center.len()
        )));
    }
    validate_target(target, d)?;
    let m = target.len();

    let basis_mult = MonomialBasis::new(d, kappa);
    let basis_slack = MonomialBasis::new(d, kappa + 1);
    let basis_mu = MonomialBasis::new(d, 2 * kappa);
    let rows_basis = MonomialBasis::new(d, 2 * kappa + 2);

    let nb = basis_mult.len();
    let nb_slack = basis_slack.len();
    let nb_mu = basis_mu.len();
    let n_ineq = set.inequalities.len();
    let n_eq = set.equalities.len();

    let nh = match model {
        HModel::Full => svec_len(m),
        HModel::ScaledIdentity => 1,
    };
    let h_off = 0;
    let mut off = nh;
    let lambda_off: Vec<usize> = (0..n_ineq)
        .map(|_| {
            let o = off;
            off += svec_len(nb);
            o
        })
        .collect();
    let mu_off: Vec<usize> = (0..n_eq)
        .map(|_| {
            let o = off;
            off += nb_mu;
            o
        })
        .collect();
    let s_off = off;
    off += svec_len(nb_slack);
    let (z_off, t_off) = if model == HModel::Full {
        let z = off;
        off += svec_len(m);
        let t = off;
        off += m;
        (z, t)
    } else {
        (0, 0)
    };
    let n_vars = off;

    let mut problem = ConicProblem::new(n_vars);

    // coefficient equalities, one per monomial of degree ≤ 2κ+2; the moved
    // constant from the −1 in the ellipsoid polynomial sits on the RHS
    for i in 0..rows_basis.len() {
        let rhs = if i == 0 { -1.0 } else { 0.0 };
        problem.push_row(&[], rhs);
    }
    problem.push_cone(ConeBlock::Zero(rows_basis.len()));

    let row_of = |e: &[u8]| -> usize {
        rows_basis
            .index_of(e)
            .expect("monomial exceeds row basis degree")
    };

    // −(z−c)ᵀH(z−c) contributions
    match model {
        HModel::Full => {
            for l in 0..m {
                for k in 0..=l {
                    let v = h_off + svec_index(k, l);
                    let (gk, gl) = (target[k], target[l]);
                    let (ck, cl) = (center[gk], center[gl]);
                    let mut ekl = vec![0u8; d];
                    ekl[gk] += 1;
                    ekl[gl] += 1;
                    let mut ek = vec![0u8; d];
                    ek[gk] = 1;
                    let mut el = vec![0u8; d];
                    el[gl] = 1;
                    if k == l {
                        problem.add_entry(row_of(&ekl), v, -1.0);
                        problem.add_entry(row_of(&ek), v, 2.0 * ck);
                        problem.add_entry(0, v, -ck * ck);
                    } else {
                        problem.add_entry(row_of(&ekl), v, -2.0);
                        problem.add_entry(row_of(&ek), v, 2.0 * cl);
                        problem.add_entry(row_of(&el), v, 2.0 * ck);
                        problem.add_entry(0, v, -2.0 * ck * cl);
                    }
                }
            }
        }
        HModel::ScaledIdentity => {
            for &g in target {
                let c = center[g];
                let mut e2 = vec![0u8; d];
                e2[g] = 2;
                let mut e1 = vec![0u8; d];
                e1[g] = 1;
                problem.add_entry(row_of(&e2), h_off, -1.0);
                problem.add_entry(row_of(&e1), h_off, 2.0 * c);
                problem.add_entry(0, h_off, -c * c);
            }
        }
    }

    // Σ λ_i p_i
    let polys_p: Vec<Poly> = set.inequalities.iter().map(poly_from_quadratic).collect();
    for (i, p) in polys_p.iter().enumerate() {
        for b in 0..nb {
            for a in 0..=b {
                let v = lambda_off[i] + svec_index(a, b);
                let mult = if a == b { 1.0 } else { SQRT2 };
                let eab = mono_product(&basis_mult.exponents[a], &basis_mult.exponents[b]);
                for (em, cm) in p {
                    problem.add_entry(row_of(&mono_product(&eab, em)), v, mult * cm);
                }
            }
        }
    }

    // Σ μ_j q_j
    let polys_q: Vec<Poly> = set.equalities.iter().map(poly_from_quadratic).collect();
    for (j, q) in polys_q.iter().enumerate() {
        for u in 0..nb_mu {
            let v = mu_off[j] + u;
            for (em, cm) in q {
                problem.add_entry(
                    row_of(&mono_product(&basis_mu.exponents[u], em)),
                    v,
                    *cm,
                );
            }
        }
    }

    // −σ
    for b in 0..nb_slack {
        for a in 0..=b {
            let v = s_off + svec_index(a, b);
            let mult = if a == b { 1.0 } else { SQRT2 };
            let eab = mono_product(&basis_slack.exponents[a], &basis_slack.exponents[b]);
            problem.add_entry(row_of(&eab), v, -mult);
        }
    }

    if model == HModel::ScaledIdentity {
        // 0 ≤ τ ≤ 1
        problem.push_row(&[(h_off, 1.0)], 1.0);
        problem.push_row(&[(h_off, -1.0)], 0.0);
        problem.push_cone(ConeBlock::Nonnegative(2));
        problem.q[h_off] = -1.0;
    }

    // PSD cones for each Λ_i and for S: s = svec(block)
    for &o in &lambda_off {
        for idx in 0..svec_len(nb) {
            problem.push_row(&[(o + idx, -1.0)], 0.0);
        }
        problem.push_cone(ConeBlock::PsdTriangle(nb));
    }
    for idx in 0..svec_len(nb_slack) {
        problem.push_row(&[(s_off + idx, -1.0)], 0.0);
    }
    problem.push_cone(ConeBlock::PsdTriangle(nb_slack));

    if model == HModel::Full {
        // G = [[H, Z],[Zᵀ, diag Z]] ⪰ 0, svec rows in column-major order
        let gdim = 2 * m;
        for j in 0..gdim {
            for i in 0..=j {
                let scale = if i == j { 1.0 } else { SQRT2 };
                if j < m {
                    problem.push_row(&[(h_off + svec_index(i, j), -scale)], 0.0);
                } else if i < m {
                    let jj = j - m;
                    if i >= jj {
                        problem.push_row(&[(z_off + lower_tri_index(i, jj, m), -scale)], 0.0);
                    } else {
                        problem.push_row(&[], 0.0);
                    }
                } else {
                    let (ii, jj) = (i - m, j - m);
                    if ii == jj {
                        problem.push_row(&[(z_off + lower_tri_index(ii, ii, m), -1.0)], 0.0);
                    } else {
                        problem.push_row(&[], 0.0);
                    }
                }
            }
        }
        problem.push_cone(ConeBlock::PsdTriangle(gdim));

        // t_k ≤ log Z_kk via (t_k, 1, Z_kk) in the exponential cone
        for k in 0..m {
            problem.push_row(&[(t_off + k, -1.0)], 0.0);
            problem.push_row(&[], 1.0);
            problem.push_row(&[(z_off + lower_tri_index(k, k, m), -1.0)], 0.0);
            problem.push_cone(ConeBlock::Exponential);
            problem.q[t_off + k] = -1.0;
        }
    }

    Ok(SosAssembly {
        problem,
        layout: Layout {
            m,
            h_off,
            lambda_off,
            mu_off,
            s_off,
            z_off,
            t_off,
            n_vars,
        },
        basis_mult,
        basis_slack,
        basis_mu,
        target: target.to_vec(),
        center: center.clone(),
        model,
    })
}

/// Builds the certificate LMI without solving it, for inspection or dumps.
pub fn assemble_certificate_problem(
    set: &QuadraticConstraintSet,
    center: &DVector<f64>,
    kappa: usize,
    target: Option<&[usize]>,
) -> Result<SosAssembly> {
    let d = set.dim - 1;
    let all: Vec<usize> = (0..d).collect();
    assemble(set, center, kappa, target.unwrap_or(&all), HModel::Full)
}

fn unsvec(v: &[f64], off: usize, n: usize) -> DMatrix<f64> {
    let mut mtx = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let raw = v[off + svec_index(i, j)];
            if i == j {
                mtx[(i, i)] = raw;
            } else {
                mtx[(i, j)] = raw / SQRT2;
                mtx[(j, i)] = raw / SQRT2;
            }
        }
    }
    mtx
}

fn extract_certificate(asm: &SosAssembly, v: &[f64]) -> Certificate {
    let nb = asm.basis_mult.len();
    let lambdas = asm
        .layout
        .lambda_off
        .iter()
        .map(|&o| unsvec(v, o, nb))
        .collect();
    let mus = asm
        .layout
        .mu_off
        .iter()
        .map(|&o| DVector::from_row_slice(&v[o..o + asm.basis_mu.len()]))
        .collect();
    let slack = unsvec(v, asm.layout.s_off, asm.basis_slack.len());
    Certificate {
        lambdas,
        mus,
        slack,
    }
}

fn extract_h(asm: &SosAssembly, v: &[f64]) -> DMatrix<f64> {
    let m = asm.layout.m;
    let mut h = DMatrix::zeros(m, m);
    for j in 0..m {
        for i in 0..=j {
            let val = v[asm.layout.h_off + svec_index(i, j)];
            h[(i, j)] = val;
            h[(j, i)] = val;
        }
    }
    h
}

/// Independent check of the certificate identity by evaluation at random
/// points around the center; returns the worst relative mismatch.
pub fn certificate_residual(
    set: &QuadraticConstraintSet,
    asm: &SosAssembly,
    h: &DMatrix<f64>,
    cert: &Certificate,
) -> f64 {
    let d = set.dim - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let z = DVector::from_fn(d, |i, _| asm.center[i] + rng.random_range(-1.0..1.0));
        let mut x = DVector::zeros(d + 1);
        x[0] = 1.0;
        x.rows_mut(1, d).copy_from(&z);

        let bm = asm.basis_mult.eval_all(&z);
        let bs = asm.basis_slack.eval_all(&z);
        let bu = asm.basis_mu.eval_all(&z);

        let mut lhs = 0.0;
        let mut scale = 1.0f64;
        for (lam, p) in cert.lambdas.iter().zip(&set.inequalities) {
            let term = (bm.transpose() * lam * &bm)[0] * (x.transpose() * p * &x)[0];
            lhs += term;
            scale = scale.max(term.abs());
        }
        for (mu, q) in cert.mus.iter().zip(&set.equalities) {
            let term = mu.dot(&bu) * (x.transpose() * q * &x)[0];
            lhs += term;
            scale = scale.max(term.abs());
        }
        let dz = DVector::from_fn(asm.layout.m, |k, _| {
            z[asm.target[k]] - asm.center[asm.target[k]]
        });
        let w = (dz.transpose() * h * &dz)[0] - 1.0;
        lhs -= w;
        scale = scale.max(w.abs());
        let sigma = (bs.transpose() * &cert.slack * &bs)[0];
        lhs -= sigma;
        scale = scale.max(sigma.abs());

        worst = worst.max(lhs.abs() / scale);
    }
    worst
}

/// Certifies a minimum-volume outer ellipsoid for `set` around `center`.
///
/// `kappa` is the multiplier half-degree (multipliers have degree 2κ).
/// `target = None` bounds all genuine variables jointly; a sorted index
/// subset restricts H to that block with the complement unconstrained.
pub fn solve_min_volume_ellipsoid(
    set: &QuadraticConstraintSet,
    center: &DVector<f64>,
    kappa: usize,
    target: Option<&[usize]>,
) -> Result<EllipsoidBound> {
    let d = set.dim - 1;
    let all: Vec<usize> = (0..d).collect();
    let target = target.unwrap_or(&all);
    let asm = assemble(set, center, kappa, target, HModel::Full)?;
    let sol = asm.problem.solve(MAX_ITER)?;

    let h_vanished = if status_is_solved(sol.status) {
        let h_raw = extract_h(&asm, &sol.v);
        h_raw.clone().symmetric_eigen().eigenvalues.max() < H_VANISHED_TOL
    } else {
        false
    };

    if status_is_solved(sol.status) && !h_vanished {
        let h_raw = extract_h(&asm, &sol.v);
        let eig = h_raw.clone().symmetric_eigen();
        let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let min_eig = eig.eigenvalues.min();
        if min_eig < -1e-6 * max_eig.max(1.0) {
            return Err(SlueError::Numerical(format!(
                "recovered shape matrix is indefinite (min eigenvalue {min_eig:.3e})"
            )));
        }
        let clipped = eig.eigenvalues.map(|e| e.max(1e-12));
        let h = &eig.eigenvectors
            * DMatrix::from_diagonal(&clipped)
            * eig.eigenvectors.transpose();
        let logdet = clipped.iter().map(|e| e.ln()).sum();
        let cert = extract_certificate(&asm, &sol.v);
        let residual = certificate_residual(set, &asm, &h, &cert);
        return Ok(EllipsoidBound {
            target: target.to_vec(),
            center: center.clone(),
            h,
            logdet,
            status: format!("{:?}", sol.status),
            solve_time_s: sol.solve_time_s,
            certificate_residual: residual,
        });
    }

    if status_is_dual_infeasible(sol.status) {
        return Err(SlueError::NotCertified(
            "objective is unbounded; the uncertainty set appears to have \
             empty interior on the target block"
                .into(),
        ));
    }

    // The logdet formulation is infeasible exactly when no positive-
    // definite H fits, and the solver often stalls instead of proving
    // that. Probe how large a scaled identity still fits to tell an
    // unbounded set apart from a solver failure.
    let diag = assemble(set, center, kappa, target, HModel::ScaledIdentity)?;
    let dsol = diag.problem.solve(MAX_ITER)?;
    let tau = if status_is_solved(dsol.status) {
        dsol.v[diag.layout.h_off].max(0.0)
    } else {
        0.0
    };
    if tau <= TAU_UNBOUNDED_TOL {
        return Err(SlueError::UnboundedSet(format!(
            "no scaled-identity bound exists at multiplier degree {} \
             (tau = {tau:.2e}); too few keypoints or the relaxation \
             order is too low",
            2 * kappa
        )));
    }
    if status_is_primal_infeasible(sol.status) || h_vanished {
        return Err(SlueError::NotCertified(format!(
            "set admits a scaled-identity bound (tau = {tau:.3e}) but no \
             volume-optimal certificate at multiplier degree {}; retry at a \
             higher order",
            2 * kappa
        )));
    }
    Err(SlueError::Numerical(format!(
        "{:?} (scaled-identity diagnostic tau = {tau:.3e})",
        sol.status
    )))
}
