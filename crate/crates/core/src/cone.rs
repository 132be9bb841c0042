//! Closed convex cones of admissible investments and projections onto
//! their volatility-scaled images.
//!
//! The recurring subproblem is
//!
//! ```text
//!   minimize |sigma' pi - v|^2   over pi in K
//! ```
//!
//! whose optimum `xi = sigma' pi*` is the Euclidean projection of `v` onto
//! the closed convex cone `sigma' K` in R^n. Everything here reduces to
//! exact nonnegative least squares:
//!
//! * generator cones parametrize `pi = G c`, `c >= 0`, giving an NNLS in `c`;
//! * orthant and halfspace cones `{A pi >= 0}` are whitened through the
//!   Cholesky factor of `sigma sigma'`, where the problem becomes a point
//!   projection onto a polyhedral cone, solved through its polar by NNLS
//!   (Moreau decomposition).
//!
//! An active-set NNLS terminates finitely and certifies KKT residuals near
//! machine precision, which the verification suite relies on.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::claims::ClaimDistribution;
use crate::error::{Error, Result};
use crate::insurance::InsuranceParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordFlag {
    Free,
    Nonnegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum ConeRep {
    /// Product of lines and half-lines.
    Orthant(Vec<CoordFlag>),
    /// Conic hull of finitely many directions (columns).
    Generators(Vec<DVector<f64>>),
    /// `{pi : rows * pi >= 0}`; zero rows means the whole space.
    Halfspaces(DMatrix<f64>),
}

/// Closed convex cone of admissible investment vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeConstraint {
    rep: ConeRep,
    dim: usize,
}

impl ConeConstraint {
    pub fn orthant(flags: Vec<CoordFlag>) -> Result<Self> {
        if flags.is_empty() {
            return Err(Error::invalid("cone", "empty orthant flags"));
        }
        let dim = flags.len();
        Ok(Self {
            rep: ConeRep::Orthant(flags),
            dim,
        })
    }

    /// The whole space (no constraint).
    pub fn unconstrained(dim: usize) -> Result<Self> {
        Self::orthant(vec![CoordFlag::Free; dim.max(1)])
    }

    /// The nonnegative orthant (no short positions).
    pub fn nonnegative(dim: usize) -> Result<Self> {
        Self::orthant(vec![CoordFlag::Nonnegative; dim.max(1)])
    }

    pub fn generators(gens: Vec<DVector<f64>>) -> Result<Self> {
        if gens.is_empty() {
            return Err(Error::invalid("cone", "no generators"));
        }
        let dim = gens[0].len();
        if dim == 0 {
            return Err(Error::invalid("cone", "zero-dimensional generators"));
        }
        for (i, g) in gens.iter().enumerate() {
            if g.len() != dim {
                return Err(Error::invalid("cone", format!("generator {i} dimension")));
            }
            if !g.iter().all(|x| x.is_finite()) || g.norm() == 0.0 {
                return Err(Error::invalid(
                    "cone",
                    format!("generator {i} must be finite and nonzero"),
                ));
            }
        }
        Ok(Self {
            rep: ConeRep::Generators(gens),
            dim,
        })
    }

    pub fn halfspaces(rows: DMatrix<f64>) -> Result<Self> {
        let dim = rows.ncols();
        if dim == 0 {
            return Err(Error::invalid("cone", "halfspace matrix has no columns"));
        }
        if !rows.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("cone", "non-finite halfspace row"));
        }
        for i in 0..rows.nrows() {
            if rows.row(i).norm() == 0.0 {
                return Err(Error::invalid("cone", format!("halfspace row {i} is zero")));
            }
        }
        Ok(Self {
            rep: ConeRep::Halfspaces(rows),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_unconstrained(&self) -> bool {
        match &self.rep {
            ConeRep::Orthant(f) => f.iter().all(|f| *f == CoordFlag::Free),
            ConeRep::Halfspaces(a) => a.nrows() == 0,
            ConeRep::Generators(_) => false,
        }
    }

    /// Worst constraint violation of `pi`; zero inside the cone.
    pub fn violation(&self, pi: &DVector<f64>) -> f64 {
        match &self.rep {
            ConeRep::Orthant(flags) => flags
                .iter()
                .zip(pi.iter())
                .map(|(f, x)| match f {
                    CoordFlag::Free => 0.0,
                    CoordFlag::Nonnegative => (-x).max(0.0),
                })
                .fold(0.0, f64::max),
            ConeRep::Halfspaces(a) => {
                let mut worst: f64 = 0.0;
                for i in 0..a.nrows() {
                    let row = a.row(i);
                    let s = row.transpose().dot(pi) / row.norm();
                    worst = worst.max(-s);
                }
                worst
            }
            ConeRep::Generators(gens) => {
                // distance to the conic hull
                let g = mat_from_columns(gens);
                let c = nnls(&g, pi);
                (pi - g * c).norm()
            }
        }
    }

    pub fn contains(&self, pi: &DVector<f64>, tol: f64) -> bool {
        self.violation(pi) <= tol
    }

    /// Euclidean projection of a point onto the cone itself.
    pub fn project_point(&self, pi: &DVector<f64>) -> Result<DVector<f64>> {
        let eye = DMatrix::identity(self.dim, self.dim);
        Ok(project_cone(pi, &eye, self)?.witness)
    }

    /// Random cone member; used to explore the constraint set in
    /// verification sweeps.
    pub fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let gauss = |rng: &mut R| -> f64 {
            // Box-Muller from two uniforms; avoids a distribution dependency here
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        match &self.rep {
            ConeRep::Orthant(flags) => DVector::from_iterator(
                self.dim,
                flags.iter().map(|f| {
                    let x = gauss(rng);
                    match f {
                        CoordFlag::Free => x,
                        CoordFlag::Nonnegative => x.abs(),
                    }
                }),
            ),
            ConeRep::Generators(gens) => {
                let mut out = DVector::zeros(self.dim);
                for g in gens {
                    out += g * rng.gen_range(0.0..1.0);
                }
                out
            }
            ConeRep::Halfspaces(_) => {
                let raw = DVector::from_fn(self.dim, |_, _| gauss(rng));
                self.project_point(&raw).expect("projection onto own cone")
            }
        }
    }
}

/// Outcome of projecting `v` onto `sigma' K`.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    /// The projection `xi = sigma' * witness`, a point of `sigma' K`.
    pub xi: DVector<f64>,
    /// A cone member realizing the projection.
    pub witness: DVector<f64>,
    /// max of complementarity, dual feasibility and witness feasibility
    /// residuals; near machine precision for well-scaled inputs.
    pub kkt_residual: f64,
}

/// Projects `v` in R^n onto the cone `sigma' K` for an m x n volatility
/// block with nondegenerate `sigma sigma'`.
pub fn project_cone(
    v: &DVector<f64>,
    sigma: &DMatrix<f64>,
    cone: &ConeConstraint,
) -> Result<ProjectionResult> {
    let (m, n) = (sigma.nrows(), sigma.ncols());
    if v.len() != n {
        return Err(Error::invalid(
            "projection",
            format!("v has length {}, sigma has {n} columns", v.len()),
        ));
    }
    if cone.dim() != m {
        return Err(Error::invalid(
            "projection",
            format!("cone dimension {} vs {m} sigma rows", cone.dim()),
        ));
    }
    if !v.iter().all(|x| x.is_finite()) || !sigma.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("projection", "non-finite input"));
    }

    let witness = match &cone.rep {
        ConeRep::Generators(gens) => {
            let cols: Vec<DVector<f64>> = gens.iter().map(|g| sigma.transpose() * g).collect();
            let mat = mat_from_columns(&cols);
            let c = nnls(&mat, v);
            let mut w = DVector::zeros(m);
            for (g, ci) in gens.iter().zip(c.iter()) {
                w += g * *ci;
            }
            w
        }
        ConeRep::Orthant(flags) => {
            let rows: Vec<usize> = flags
                .iter()
                .enumerate()
                .filter(|(_, f)| **f == CoordFlag::Nonnegative)
                .map(|(i, _)| i)
                .collect();
            let mut a = DMatrix::zeros(rows.len(), m);
            for (r, &i) in rows.iter().enumerate() {
                a[(r, i)] = 1.0;
            }
            whitened_polyhedral(v, sigma, &a)?
        }
        ConeRep::Halfspaces(a) => whitened_polyhedral(v, sigma, a)?,
    };

    let xi = sigma.transpose() * &witness;
    let kkt_residual = kkt_residual(v, sigma, cone, &xi, &witness);
    Ok(ProjectionResult {
        xi,
        witness,
        kkt_residual,
    })
}

/// Polyhedral case `{A pi >= 0}`: whiten with `sigma sigma' = L L'`, project
/// the whitened point onto the transformed cone via its polar (NNLS), and
/// map back.
fn whitened_polyhedral(
    v: &DVector<f64>,
    sigma: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let gram = sigma * sigma.transpose();
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::invalid("projection", "sigma sigma' not positive definite"))?;
    let l = chol.l();
    let x0 = l
        .solve_lower_triangular(&(sigma * v))
        .ok_or_else(|| Error::solver("projection", "singular Cholesky factor"))?;
    let u = if a.nrows() == 0 {
        x0
    } else {
        // columns of M are L^{-1} a_i
        let mt = l
            .solve_lower_triangular(&a.transpose())
            .ok_or_else(|| Error::solver("projection", "singular Cholesky factor"))?;
        let c = nnls(&mt, &(-&x0));
        x0 + mt * c
    };
    l.transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::solver("projection", "singular Cholesky factor"))
}

fn kkt_residual(
    v: &DVector<f64>,
    sigma: &DMatrix<f64>,
    cone: &ConeConstraint,
    xi: &DVector<f64>,
    witness: &DVector<f64>,
) -> f64 {
    let resid = v - xi;
    let comp = xi.dot(&resid).abs();
    let grad = sigma * &resid; // pairing of the residual with pi-directions
    let dual = match &cone.rep {
        ConeRep::Orthant(flags) => flags
            .iter()
            .zip(grad.iter())
            .map(|(f, g)| match f {
                CoordFlag::Free => g.abs(),
                CoordFlag::Nonnegative => g.max(0.0),
            })
            .fold(0.0, f64::max),
        ConeRep::Generators(gens) => gens
            .iter()
            .map(|g| {
                let dir = sigma.transpose() * g;
                let norm = dir.norm();
                if norm == 0.0 {
                    0.0
                } else {
                    (dir.dot(&resid) / norm).max(0.0)
                }
            })
            .fold(0.0, f64::max),
        ConeRep::Halfspaces(a) => {
            if a.nrows() == 0 {
                grad.norm()
            } else {
                // distance from grad to the polar cone -cone(a')
                let c = nnls(&a.transpose(), &(-&grad));
                (&grad + a.transpose() * c).norm()
            }
        }
    };
    comp.max(dual).max(cone.violation(witness))
}

fn mat_from_columns(cols: &[DVector<f64>]) -> DMatrix<f64> {
    let rows = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// Exact nonnegative least squares `min |M c - w|, c >= 0` by the classic
/// active-set method. Least-squares subproblems use SVD with a relative
/// cutoff, so rank-deficient passive sets are safe.
pub(crate) fn nnls(m: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    let k = m.ncols();
    let mut c = DVector::zeros(k);
    if k == 0 {
        return c;
    }
    let scale = (m.transpose() * w).amax().max(f64::MIN_POSITIVE);
    let tol = 1e-13 * scale;
    let mut passive = vec![false; k];
    let max_outer = 3 * k + 32;

    for _ in 0..max_outer {
        let grad = m.transpose() * (w - m * &c);
        let mut best: Option<usize> = None;
        let mut best_g = tol;
        for j in 0..k {
            if !passive[j] && grad[j] > best_g {
                best_g = grad[j];
                best = Some(j);
            }
        }
        let Some(enter) = best else { break };
        passive[enter] = true;

        // inner loop: restore positivity on the passive set
        loop {
            let z = ls_on_passive(m, w, &passive);
            let mut alpha = 1.0;
            let mut blocked = false;
            for j in 0..k {
                if passive[j] && z[j] <= 0.0 {
                    let denom = c[j] - z[j];
                    let step = if denom > 0.0 { c[j] / denom } else { 0.0 };
                    if step < alpha {
                        alpha = step;
                    }
                    blocked = true;
                }
            }
            if !blocked {
                c = z;
                break;
            }
            c = &c + (&z - &c) * alpha;
            for j in 0..k {
                if passive[j] && c[j] <= tol.max(1e-300) {
                    c[j] = 0.0;
                    if z[j] <= 0.0 {
                        passive[j] = false;
                    }
                }
            }
            if !passive.iter().any(|p| *p) {
                break;
            }
        }
    }
    c
}

fn ls_on_passive(m: &DMatrix<f64>, w: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = passive
        .iter()
        .enumerate()
        .filter(|(_, p)| **p)
        .map(|(i, _)| i)
        .collect();
    let mut out = DVector::zeros(m.ncols());
    if cols.is_empty() {
        return out;
    }
    let sub = m.select_columns(cols.iter());
    let svd = sub.svd(true, true);
    let max_sv = svd.singular_values.amax();
    let eps = if max_sv > 0.0 { max_sv * 1e-13 } else { 1.0 };
    if let Ok(sol) = svd.solve(w, eps) {
        for (slot, &j) in cols.iter().enumerate() {
            out[j] = sol[slot];
        }
    }
    out
}

/// Optimal retained fraction for the monotone problem given the value level
/// `y > 0` and the jump components `v_i` of the value equation at each claim
/// atom:
///
/// ```text
///   rho = ( sum_i v_i/(y+v_i) * y_i * lambda p_i + b )^+
///         / sum_i 1/(y+v_i) * y_i^2 * lambda p_i
/// ```
///
/// Requires `lambda > 0` (otherwise retention is meaningless and the caller
/// must force `q = 0`) and `y + v_i > 0` at every atom.
pub fn rho_mmv(
    y: f64,
    jumps: &[f64],
    claims: &ClaimDistribution,
    insurance: &InsuranceParams,
) -> Result<f64> {
    let lambda = insurance.lambda;
    if lambda <= 0.0 {
        return Err(Error::invalid(
            "retention",
            "lambda = 0: no claims, retention undefined",
        ));
    }
    if jumps.len() != claims.len() {
        return Err(Error::invalid(
            "retention",
            format!("{} jump components vs {} atoms", jumps.len(), claims.len()),
        ));
    }
    let mut num = insurance.retention_premium();
    let mut den = 0.0;
    for (atom, &v) in claims.atoms().iter().zip(jumps.iter()) {
        let level = y + v;
        if !(level > 0.0) {
            return Err(Error::positivity(
                "retention",
                format!("y + v = {level} at atom of size {}", atom.size),
            ));
        }
        num += v / level * atom.size * lambda * atom.prob;
        den += atom.size * atom.size * lambda * atom.prob / level;
    }
    Ok(num.max(0.0) / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::ClaimAtom;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn vec(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn unconstrained_identity_sigma_returns_v() {
        let cone = ConeConstraint::unconstrained(1).unwrap();
        let sigma = DMatrix::from_row_slice(1, 1, &[1.0]);
        let r = project_cone(&vec(&[0.7]), &sigma, &cone).unwrap();
        assert!((r.xi[0] - 0.7).abs() < 1e-14);
        assert!(r.kkt_residual < 1e-12);
    }

    #[test]
    fn nonnegative_halfline_clips() {
        let cone = ConeConstraint::nonnegative(1).unwrap();
        let sigma = DMatrix::from_row_slice(1, 1, &[1.0]);
        let r = project_cone(&vec(&[-2.0]), &sigma, &cone).unwrap();
        assert_eq!(r.xi[0], 0.0);
        assert_eq!(r.witness[0], 0.0);
        assert!(r.kkt_residual < 1e-12);
    }

    #[test]
    fn unconstrained_matches_least_squares() {
        // xi = sigma' (sigma sigma')^{-1} sigma v
        let sigma = DMatrix::from_row_slice(2, 3, &[0.3, 0.1, 0.0, -0.2, 0.5, 0.4]);
        let v = vec(&[1.0, -2.0, 0.5]);
        let cone = ConeConstraint::unconstrained(2).unwrap();
        let r = project_cone(&v, &sigma, &cone).unwrap();
        let gram = &sigma * sigma.transpose();
        let expect = sigma.transpose() * gram.try_inverse().unwrap() * &sigma * &v;
        assert!((r.xi - expect).norm() < 1e-12);
    }

    #[test]
    fn orthant_diagonal_sigma_clips_coordinates() {
        let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]);
        let cone = ConeConstraint::nonnegative(2).unwrap();
        let v = vec(&[-1.0, 2.0]);
        let r = project_cone(&v, &sigma, &cone).unwrap();
        // sigma' K+ is the nonnegative quadrant: clip each coordinate
        assert!((r.xi[0] - 0.0).abs() < 1e-13);
        assert!((r.xi[1] - 2.0).abs() < 1e-13);
        assert!(r.witness[0].abs() < 1e-13);
        assert!((r.witness[1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn generators_and_halfspaces_agree_on_quadrant() {
        // first quadrant in R^2, two descriptions
        let gens = ConeConstraint::generators(vec![vec(&[1.0, 0.0]), vec(&[0.0, 1.0])]).unwrap();
        let half = ConeConstraint::halfspaces(DMatrix::identity(2, 2)).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, -0.05, 0.3]);
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let v = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let a = project_cone(&v, &sigma, &gens).unwrap();
            let b = project_cone(&v, &sigma, &half).unwrap();
            assert!((a.xi - b.xi).norm() < 1e-9);
        }
    }

    #[test]
    fn projection_is_idempotent_and_homogeneous() {
        let sigma = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, -0.05, 0.3]);
        let cone = ConeConstraint::orthant(vec![CoordFlag::Nonnegative, CoordFlag::Free]).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let v = DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let p1 = project_cone(&v, &sigma, &cone).unwrap();
            let p2 = project_cone(&p1.xi, &sigma, &cone).unwrap();
            assert!((&p1.xi - p2.xi).norm() < 1e-10);
            let c = rng.gen_range(0.0..4.0);
            let ps = project_cone(&(&v * c), &sigma, &cone).unwrap();
            assert!((&p1.xi * c - ps.xi).norm() < 1e-9);
        }
    }

    #[test]
    fn projection_pythagoras() {
        // |xi|^2 = xi . v
        let sigma = DMatrix::from_row_slice(2, 3, &[0.3, 0.1, 0.0, -0.2, 0.5, 0.4]);
        let cone =
            ConeConstraint::generators(vec![vec(&[1.0, 0.2]), vec(&[-0.3, 1.0])]).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let v = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let r = project_cone(&v, &sigma, &cone).unwrap();
            assert!((r.xi.norm_squared() - r.xi.dot(&v)).abs() < 1e-10);
            assert!(r.kkt_residual < 1e-9);
        }
    }

    #[test]
    fn nonexpansive() {
        let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.1, 0.4]);
        let cone = ConeConstraint::halfspaces(DMatrix::from_row_slice(
            2,
            2,
            &[1.0, -0.5, 0.2, 1.0],
        ))
        .unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let v1 = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let v2 = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let p1 = project_cone(&v1, &sigma, &cone).unwrap();
            let p2 = project_cone(&v2, &sigma, &cone).unwrap();
            assert!((p1.xi - p2.xi).norm() <= (v1 - v2).norm() + 1e-10);
        }
    }

    #[test]
    fn sampled_members_are_feasible() {
        let mut rng = StdRng::seed_from_u64(9);
        let cones = [
            ConeConstraint::nonnegative(3).unwrap(),
            ConeConstraint::generators(vec![vec(&[1.0, 1.0, 0.0]), vec(&[0.0, 1.0, 2.0])])
                .unwrap(),
            ConeConstraint::halfspaces(DMatrix::from_row_slice(2, 3, &[
                1.0, 0.0, -0.2, 0.3, 1.0, 0.0,
            ]))
            .unwrap(),
        ];
        for cone in &cones {
            for _ in 0..50 {
                let member = cone.sample_member(&mut rng);
                assert!(cone.contains(&member, 1e-9));
            }
        }
    }

    fn two_atom() -> ClaimDistribution {
        ClaimDistribution::new(
            vec![
                ClaimAtom {
                    size: 0.5,
                    prob: 0.5,
                },
                ClaimAtom {
                    size: 1.5,
                    prob: 0.5,
                },
            ],
            1.5,
        )
        .unwrap()
    }

    #[test]
    fn rho_with_zero_jumps_is_premium_over_second_moment() {
        let claims = two_atom();
        let ins = InsuranceParams::new(2.0, 0.2, 0.3, &claims).unwrap();
        let rho = rho_mmv(1.0, &[0.0, 0.0], &claims, &ins).unwrap();
        let expect = ins.retention_premium() / (2.0 * claims.second_moment());
        assert!((rho - expect).abs() < 1e-14);
    }

    #[test]
    fn rho_degenerate_negative_jump() {
        let claims = ClaimDistribution::degenerate(1.0).unwrap();
        // pick loadings so b < lambda: positive part clips to zero
        let ins = InsuranceParams::new(2.0, 0.2, 0.3, &claims).unwrap();
        let rho = rho_mmv(1.0, &[-0.5], &claims, &ins).unwrap();
        let b = ins.retention_premium();
        let expect = (b - 2.0).max(0.0) / (2.0 * 2.0);
        assert!((rho - expect).abs() < 1e-14);
        assert_eq!(rho, 0.0); // b = 0.6 < lambda = 2
    }

    #[test]
    fn rho_positive_homogeneity() {
        let claims = two_atom();
        let ins = InsuranceParams::new(2.0, 0.2, 0.3, &claims).unwrap();
        let r1 = rho_mmv(1.0, &[0.3, -0.2], &claims, &ins).unwrap();
        let r3 = rho_mmv(3.0, &[0.9, -0.6], &claims, &ins).unwrap();
        assert!((3.0 * r1 - r3).abs() < 1e-12);
    }

    #[test]
    fn rho_rejects_zero_lambda_and_positivity_loss() {
        let claims = two_atom();
        let ins0 = InsuranceParams::new(0.0, 0.2, 0.3, &claims).unwrap();
        assert!(rho_mmv(1.0, &[0.0, 0.0], &claims, &ins0).is_err());
        let ins = InsuranceParams::new(2.0, 0.2, 0.3, &claims).unwrap();
        assert!(rho_mmv(1.0, &[-1.0, 0.0], &claims, &ins).is_err());
    }
}
