//! Assembly of Gram matrices, affine parameter-dependent bilinear-form parts,
//! load vectors and the Dirichlet lift.
//!
//! Rows are indexed by test degrees of freedom. Trial functions are split into
//! interior columns (the unknowns) and boundary columns whose coefficients are
//! fixed by the lift; both groups are kept so the lift contribution can be
//! moved to the right-hand side for any parameter value.

pub mod sparse;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use sparse::SparseMatrix;

use crate::bspline::{gauss_rule, BSplineSpace1D, BoundaryConstraint, Space};
use crate::error::{Error, Result};
use crate::flops::{FlopCounter, Phase};
use crate::problems::{ProblemKind, ProblemSpec, Theta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerProduct {
    /// `(grad v, grad w)`.
    H1Seminorm,
    /// `(grad v, grad w) + (v, w)`.
    FullH1,
}

impl InnerProduct {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h1-seminorm" | "h1semi" | "h1-semi" => Ok(InnerProduct::H1Seminorm),
            "full-h1" | "h1" => Ok(InnerProduct::FullH1),
            other => Err(Error::Config(format!("unknown inner product `{other}`"))),
        }
    }
}

/// Gauss points per direction so every stiffness/mass integrand is exact.
pub fn quadrature_points(trial: &Space, test: &Space) -> usize {
    trial.order().max(test.order()) + 1
}

/// Integrand of a bilinear form: `(point, u, grad u, v, grad v) -> value`.
pub trait Integrand: Fn([f64; 2], f64, [f64; 2], f64, [f64; 2]) -> f64 {}
impl<F: Fn([f64; 2], f64, [f64; 2], f64, [f64; 2]) -> f64> Integrand for F {}

/// Element-loop assembly of `b(u, v)` with rows indexed by test dofs and
/// columns by *full* trial basis indices.
pub fn assemble_bilinear(trial: &Space, test: &Space, npts: usize, integrand: impl Integrand) -> Result<SparseMatrix> {
    if !trial.same_mesh(test) {
        return Err(Error::InvalidArgument("trial and test spaces live on different meshes".into()));
    }
    let rule = gauss_rule(npts)?;
    let mut triplets = Vec::new();
    for e in 0..test.n_elements() {
        let ts = test.element_shapes(e, &rule);
        let us = trial.element_shapes(e, &rule);
        let nv = ts.full_indices.len();
        let nu = us.full_indices.len();
        let mut local = vec![0.0; nv * nu];
        for q in 0..ts.points.len() {
            let w = ts.weights[q];
            let pt = ts.points[q];
            for a in 0..nv {
                let (v, gv) = (ts.values[q][a], ts.grads[q][a]);
                for b in 0..nu {
                    local[a * nu + b] += w * integrand(pt, us.values[q][b], us.grads[q][b], v, gv);
                }
            }
        }
        for a in 0..nv {
            let Some(row) = test.dof(ts.full_indices[a]) else { continue };
            for b in 0..nu {
                triplets.push((row, us.full_indices[b], local[a * nu + b]));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(test.dim(), trial.full_dim(), triplets))
}

/// Gram matrix of the test-space inner product over test dofs.
pub fn assemble_gram(test: &Space, kind: InnerProduct) -> Result<SparseMatrix> {
    if kind == InnerProduct::H1Seminorm {
        let unconstrained = match test {
            Space::D1(s) => s.constraint() == BoundaryConstraint::None,
            Space::D2(s) => {
                s.space_x.constraint() == BoundaryConstraint::None
                    && s.space_y.constraint() == BoundaryConstraint::None
            }
        };
        if unconstrained {
            return Err(Error::Config(
                "H1-seminorm Gram is singular on a test space without zero boundary constraint (constants lie in its kernel)".into(),
            ));
        }
    }
    let rule = gauss_rule(test.order() + 1)?;
    let mass = kind == InnerProduct::FullH1;
    let mut triplets = Vec::new();
    for e in 0..test.n_elements() {
        let ts = test.element_shapes(e, &rule);
        let n = ts.full_indices.len();
        let mut local = vec![0.0; n * n];
        for q in 0..ts.points.len() {
            let w = ts.weights[q];
            for a in 0..n {
                let (va, ga) = (ts.values[q][a], ts.grads[q][a]);
                for b in a..n {
                    let (vb, gb) = (ts.values[q][b], ts.grads[q][b]);
                    let mut s = ga[0] * gb[0] + ga[1] * gb[1];
                    if mass {
                        s += va * vb;
                    }
                    local[a * n + b] += w * s;
                }
            }
        }
        for a in 0..n {
            let Some(i) = test.dof(ts.full_indices[a]) else { continue };
            for b in a..n {
                let Some(j) = test.dof(ts.full_indices[b]) else { continue };
                let v = local[a * n + b];
                triplets.push((i, j, v));
                if i != j {
                    triplets.push((j, i, v));
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(test.dim(), test.dim(), triplets))
}

/// `B_mu = sum_k theta_k(mu) B_k` together with the Gram matrix and the spaces.
#[derive(Debug, Clone)]
pub struct AffineFormSet {
    pub trial: Space,
    pub test: Space,
    pub gram: SparseMatrix,
    /// Interior-column parts, each `m x n`.
    pub parts: Vec<SparseMatrix>,
    /// Boundary-column parts, each `m x n_b`, used for the lift.
    pub boundary_parts: Vec<SparseMatrix>,
    pub theta: Vec<Theta>,
    /// Full trial indices of the unknown columns.
    pub interior_columns: Vec<usize>,
    /// Full trial indices of the lifted columns.
    pub boundary_columns: Vec<usize>,
}

impl AffineFormSet {
    pub fn trial_dim(&self) -> usize {
        self.interior_columns.len()
    }

    pub fn test_dim(&self) -> usize {
        self.gram.rows()
    }

    fn combine(&self, parts: &[SparseMatrix], mu: f64) -> Result<SparseMatrix> {
        let terms: Vec<(f64, &SparseMatrix)> =
            self.theta.iter().zip(parts).map(|(t, p)| (t.eval(mu), p)).collect();
        SparseMatrix::linear_combination(&terms)
    }

    /// `B_mu` on the interior columns.
    pub fn evaluate(&self, mu: f64) -> Result<SparseMatrix> {
        self.combine(&self.parts, mu)
    }

    /// Same as [`evaluate`](Self::evaluate) but books one multiply and one add
    /// per stored entry of every part to the assembly phase.
    pub fn evaluate_counted(&self, mu: f64, counter: &FlopCounter) -> Result<SparseMatrix> {
        let nnz: usize = self.parts.iter().map(|p| p.nnz()).sum();
        counter.add(Phase::Assembly, 2 * nnz as u64);
        self.evaluate(mu)
    }

    /// `B_mu` on the boundary columns.
    pub fn evaluate_boundary(&self, mu: f64) -> Result<SparseMatrix> {
        self.combine(&self.boundary_parts, mu)
    }

    /// Full trial coefficient vector from interior unknowns and lift values.
    pub fn full_coefficients(&self, interior: &[f64], lift: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.trial.full_dim()];
        for (&f, &v) in self.interior_columns.iter().zip(interior) {
            full[f] = v;
        }
        for (&f, &v) in self.boundary_columns.iter().zip(lift) {
            full[f] = v;
        }
        full
    }
}

/// Assembles the affine parts of the problem's bilinear form.
///
/// Eriksson-Johnson: `[advection (+ u(0)v(0) in 1D), stiffness]`, `theta = [1, eps]`.
/// Helmholtz: `[-stiffness, mass]`, `theta = [1, kappa^2]`.
pub fn assemble_affine_parts(problem: &ProblemSpec, trial: &Space, test: &Space) -> Result<AffineFormSet> {
    if !trial.same_mesh(test) {
        return Err(Error::InvalidArgument("trial and test spaces live on different meshes".into()));
    }
    if test.dim() < trial.dim() {
        return Err(Error::InvalidArgument(format!(
            "test dimension {} smaller than trial dimension {}",
            test.dim(),
            trial.dim()
        )));
    }
    let expected_dim = match problem.kind {
        ProblemKind::Ej1d => 1,
        _ => 2,
    };
    if trial.spatial_dim() != expected_dim {
        return Err(Error::InvalidArgument(format!(
            "{} needs {}D spaces",
            problem.kind.name(),
            expected_dim
        )));
    }
    let npts = quadrature_points(trial, test);
    let stiffness = |_: [f64; 2], _u: f64, gu: [f64; 2], _v: f64, gv: [f64; 2]| gu[0] * gv[0] + gu[1] * gv[1];
    let full_parts: Vec<SparseMatrix> = match problem.kind {
        ProblemKind::Ej1d | ProblemKind::Ej2d => {
            let adv = |_: [f64; 2], _u: f64, gu: [f64; 2], v: f64, _gv: [f64; 2]| gu[0] * v;
            let mut b0 = assemble_bilinear(trial, test, npts, adv)?;
            if problem.kind == ProblemKind::Ej1d {
                // Robin inflow term u(0) v(0): only the first functions are nonzero at x = 0.
                if let Some(row) = test.dof(0) {
                    let point = SparseMatrix::from_triplets(b0.rows(), b0.cols(), vec![(row, 0, 1.0)]);
                    b0 = SparseMatrix::linear_combination(&[(1.0, &b0), (1.0, &point)])?;
                }
            }
            let b1 = assemble_bilinear(trial, test, npts, stiffness)?;
            vec![b0, b1]
        }
        ProblemKind::Helmholtz => {
            let neg_stiff = |_: [f64; 2], _u: f64, gu: [f64; 2], _v: f64, gv: [f64; 2]| -(gu[0] * gv[0] + gu[1] * gv[1]);
            let mass = |_: [f64; 2], u: f64, _gu: [f64; 2], v: f64, _gv: [f64; 2]| u * v;
            vec![
                assemble_bilinear(trial, test, npts, neg_stiff)?,
                assemble_bilinear(trial, test, npts, mass)?,
            ]
        }
    };
    let (interior, boundary): (Vec<usize>, Vec<usize>) =
        (0..trial.full_dim()).partition(|&f| trial.dof(f).is_some());
    let parts = full_parts.iter().map(|p| p.select_columns(&interior)).collect();
    let boundary_parts = full_parts.iter().map(|p| p.select_columns(&boundary)).collect();
    Ok(AffineFormSet {
        trial: trial.clone(),
        test: test.clone(),
        gram: assemble_gram(test, problem.inner_product)?,
        parts,
        boundary_parts,
        theta: problem.theta(),
        interior_columns: interior,
        boundary_columns: boundary,
    })
}

/// Right-hand side `L` of the reduced system together with the lift it used.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadVector {
    pub values: Vec<f64>,
    /// Lift coefficients, aligned with `AffineFormSet::boundary_columns`.
    pub lift: Vec<f64>,
    /// Set when the parameter lies outside the problem's declared range.
    pub out_of_range: bool,
}

/// `L(v) = l(v) - b_mu(u_g, v)`, so that `B^T W x = (L^T W)^T` with `x` the
/// interior coefficients.
pub fn assemble_load(problem: &ProblemSpec, forms: &AffineFormSet, mu: f64) -> Result<LoadVector> {
    problem.check_param(mu)?;
    let out_of_range = !problem.in_range(mu);
    let m = forms.test_dim();
    let mut values = vec![0.0; m];
    match problem.kind {
        ProblemKind::Ej1d => {
            if let Some(row) = forms.test.dof(0) {
                values[row] = 1.0;
            }
        }
        ProblemKind::Ej2d => {}
        ProblemKind::Helmholtz => {
            let rule = gauss_rule(10)?;
            for e in 0..forms.test.n_elements() {
                let ts = forms.test.element_shapes(e, &rule);
                for q in 0..ts.points.len() {
                    let fw = ts.weights[q] * problem.source(mu, ts.points[q]);
                    for (a, &full) in ts.full_indices.iter().enumerate() {
                        if let Some(row) = forms.test.dof(full) {
                            values[row] += fw * ts.values[q][a];
                        }
                    }
                }
            }
        }
    }
    let lift = lift_coefficients(problem, &forms.trial, &forms.boundary_columns, mu)?;
    if lift.iter().any(|&c| c != 0.0) {
        let bb = forms.evaluate_boundary(mu)?;
        let contrib = bb.mul_vec(&lift, None);
        for (v, c) in values.iter_mut().zip(contrib) {
            *v -= c;
        }
    }
    Ok(LoadVector {
        values,
        lift,
        out_of_range,
    })
}

/// Dirichlet lift: boundary coefficients from an L2 projection of the data
/// onto each edge trace space, with the edge endpoints interpolated.
pub fn lift_coefficients(problem: &ProblemSpec, trial: &Space, boundary: &[usize], mu: f64) -> Result<Vec<f64>> {
    let mut full = vec![0.0; trial.full_dim()];
    match trial {
        Space::D1(s) => {
            let (a, b) = s.domain();
            full[0] = problem.boundary_data(mu, [a, 0.0]);
            let last = s.full_dim() - 1;
            full[last] = problem.boundary_data(mu, [b, 0.0]);
        }
        Space::D2(s) => {
            let sx = s.space_x.with_constraint(BoundaryConstraint::None);
            let sy = s.space_y.with_constraint(BoundaryConstraint::None);
            let (nx, ny) = (sx.full_dim(), sy.full_dim());
            let left = edge_projection(&sy, |y| problem.boundary_data(mu, [0.0, y]))?;
            let right = edge_projection(&sy, |y| problem.boundary_data(mu, [1.0, y]))?;
            let bottom = edge_projection(&sx, |x| problem.boundary_data(mu, [x, 0.0]))?;
            let top = edge_projection(&sx, |x| problem.boundary_data(mu, [x, 1.0]))?;
            for fy in 0..ny {
                full[s.full_index(0, fy)] = left[fy];
                full[s.full_index(nx - 1, fy)] = right[fy];
            }
            for fx in 0..nx {
                full[s.full_index(fx, 0)] = bottom[fx];
                full[s.full_index(fx, ny - 1)] = top[fx];
            }
        }
    }
    Ok(boundary.iter().map(|&f| full[f]).collect())
}

/// Coefficients of the L2 projection of `g` onto an open-knot 1D space with
/// the first and last coefficients fixed to `g` at the endpoints.
pub fn edge_projection(space: &BSplineSpace1D, g: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let n = space.full_dim();
    let (a, b) = space.domain();
    let mut c = vec![0.0; n];
    c[0] = g(a);
    c[n - 1] = g(b);
    if n <= 2 {
        return Ok(c);
    }
    let rule = gauss_rule(10)?;
    let mut mass = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for e in 0..space.elements() {
        let (x0, x1) = space.element_bounds(e);
        for (x, w) in rule.mapped(x0, x1) {
            let (first, v, _) = space.eval_on_element(e, x);
            let gx = g(x);
            for i in 0..v.len() {
                rhs[first + i] += w * gx * v[i];
                for j in 0..v.len() {
                    mass[(first + i, first + j)] += w * v[i] * v[j];
                }
            }
        }
    }
    let k = n - 2;
    let inner = mass.view((1, 1), (k, k)).into_owned();
    let mut r = DVector::<f64>::zeros(k);
    for i in 0..k {
        r[i] = rhs[i + 1] - mass[(i + 1, 0)] * c[0] - mass[(i + 1, n - 1)] * c[n - 1];
    }
    let sol = inner
        .cholesky()
        .ok_or_else(|| Error::Config("edge mass matrix is not positive definite".into()))?
        .solve(&r);
    for i in 0..k {
        c[i + 1] = sol[i];
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::{BSplineSpace1D, BSplineSpace2D, Continuity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frob_diff(a: &SparseMatrix, b: &SparseMatrix) -> f64 {
        (a.to_dense() - b.to_dense()).norm()
    }

    #[test]
    fn gram_of_two_hats() {
        let s = BSplineSpace1D::new(1, 2, Continuity::Smooth, 0.0, 1.0, BoundaryConstraint::ZeroBoth).unwrap();
        let g = assemble_gram(&Space::D1(s), InnerProduct::FullH1).unwrap();
        assert_eq!((g.rows(), g.cols()), (1, 1));
        let h = 0.5;
        // hand quadrature: int phi'^2 = 2/h, int phi^2 = 2h/3
        assert!((g.get(0, 0) - (2.0 / h + 2.0 * h / 3.0)).abs() < 1e-14);
        assert!((g.get(0, 0) - 4.333333333333333).abs() < 1e-14);
    }

    #[test]
    fn gram_symmetry_and_kernel() {
        let sx = BSplineSpace1D::unit(3, 4, Continuity::Smooth).unwrap();
        let sy = BSplineSpace1D::unit(3, 3, Continuity::C0).unwrap();
        let free = Space::D2(BSplineSpace2D::new(sx.clone(), sy.clone()));
        assert!(assemble_gram(&free, InnerProduct::H1Seminorm).is_err());
        let g = assemble_gram(&free, InnerProduct::FullH1).unwrap();
        assert!(g.is_symmetric());

        // H1-seminorm of constants vanishes on the unconstrained space
        let rule_based = assemble_bilinear(&free, &free, 4, |_, _, gu: [f64; 2], _, gv: [f64; 2]| {
            gu[0] * gv[0] + gu[1] * gv[1]
        })
        .unwrap();
        let ones = vec![1.0; free.full_dim()];
        let y = rule_based.mul_vec(&ones, None);
        assert!(y.iter().all(|v| v.abs() < 1e-12));

        let constrained = Space::D2(BSplineSpace2D::new(
            sx.with_constraint(BoundaryConstraint::ZeroBoth),
            sy.with_constraint(BoundaryConstraint::ZeroBoth),
        ));
        let g = assemble_gram(&constrained, InnerProduct::H1Seminorm).unwrap();
        assert!(g.is_symmetric());
        let d = g.to_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = DVector::from_fn(d.nrows(), |_, _| rng.random_range(-1.0..1.0));
            let q = x.dot(&(&d * &x));
            assert!(q > 0.0);
        }
        assert!(g.max_row_nnz() <= (2 * 3 + 1) * (2 * 3 + 1));
    }

    #[test]
    fn ej_zero_epsilon_is_advection_part() {
        let p = ProblemSpec::ej1d(4);
        let f = assemble_affine_parts(&p, &p.trial_space().unwrap(), &p.test_space().unwrap()).unwrap();
        assert_eq!(f.evaluate(0.0).unwrap().to_dense(), f.parts[0].to_dense());
    }

    #[test]
    fn ej1d_affine_matches_direct() {
        let p = ProblemSpec::ej1d(4);
        let (u, v) = (p.trial_space().unwrap(), p.test_space().unwrap());
        let f = assemble_affine_parts(&p, &u, &v).unwrap();
        let eps = 0.1;
        let direct = assemble_bilinear(&u, &v, 3, |_, _, gu: [f64; 2], w, gw: [f64; 2]| {
            eps * gu[0] * gw[0] + gu[0] * w
        })
        .unwrap();
        let point = SparseMatrix::from_triplets(direct.rows(), direct.cols(), vec![(0, 0, 1.0)]);
        let direct = SparseMatrix::linear_combination(&[(1.0, &direct), (1.0, &point)])
            .unwrap()
            .select_columns(&f.interior_columns);
        let aff = f.evaluate(eps).unwrap();
        assert!(frob_diff(&aff, &direct) <= 1e-13 * direct.frobenius_norm());
    }

    #[test]
    fn helmholtz_affine_matches_element_loop() {
        let p = ProblemSpec::helmholtz(2);
        let (u, v) = (p.trial_space().unwrap(), p.test_space().unwrap());
        let f = assemble_affine_parts(&p, &u, &v).unwrap();
        let b = f.evaluate(1.0).unwrap();
        let sum = SparseMatrix::linear_combination(&[(1.0, &f.parts[0]), (1.0, &f.parts[1])]).unwrap();
        assert!(frob_diff(&b, &sum) == 0.0);
        // independent element loop with a single fused integrand
        let direct = assemble_bilinear(&u, &v, 4, |_, uu, gu: [f64; 2], w, gw: [f64; 2]| {
            -(gu[0] * gw[0] + gu[1] * gw[1]) + uu * w
        })
        .unwrap()
        .select_columns(&f.interior_columns);
        assert!(frob_diff(&b, &direct) <= 1e-13 * direct.frobenius_norm());
    }

    #[test]
    fn affine_consistency_random_parameters() {
        let p = ProblemSpec::ej2d(5, 3, 1);
        let (u, v) = (p.trial_space().unwrap(), p.test_space().unwrap());
        let f = assemble_affine_parts(&p, &u, &v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let eps = 10f64.powf(rng.random_range(-6.0..-1.0));
            let direct = assemble_bilinear(&u, &v, 4, |_, _, gu: [f64; 2], w, gw: [f64; 2]| {
                eps * (gu[0] * gw[0] + gu[1] * gw[1]) + gu[0] * w
            })
            .unwrap()
            .select_columns(&f.interior_columns);
            let aff = f.evaluate(eps).unwrap();
            assert!(frob_diff(&aff, &direct) <= 1e-12 * direct.frobenius_norm());
        }
    }

    #[test]
    fn mismatched_meshes_rejected() {
        let a = Space::D1(BSplineSpace1D::unit(1, 4, Continuity::Smooth).unwrap());
        let b = Space::D1(BSplineSpace1D::unit(2, 5, Continuity::C0).unwrap());
        assert!(assemble_affine_parts(&ProblemSpec::ej1d(4), &a, &b).is_err());
    }

    #[test]
    fn ej2d_homogeneous_load_and_ej1d_point_load() {
        let p = ProblemSpec::ej1d(6);
        let f = assemble_affine_parts(&p, &p.trial_space().unwrap(), &p.test_space().unwrap()).unwrap();
        let l = assemble_load(&p, &f, 0.1).unwrap();
        // oracle: v_i(0) for each test function
        let Space::D1(ts) = &f.test else { unreachable!() };
        for i in 0..ts.dim() {
            let (first, vals) = ts.eval_basis(0.0).unwrap();
            let full = ts.full_index(i);
            let v0 = if full >= first && full - first < vals.len() { vals[full - first] } else { 0.0 };
            assert_eq!(l.values[i], v0);
        }
        assert!(l.lift.iter().all(|&c| c == 0.0));

        // k-mode inflow with g = 0 gives a zero vector
        let mut p2 = ProblemSpec::ej2d(4, 3, 1);
        p2.inflow_mode = 1;
        let f2 = assemble_affine_parts(&p2, &p2.trial_space().unwrap(), &p2.test_space().unwrap()).unwrap();
        let zero_lift = vec![0.0; f2.boundary_columns.len()];
        let bb = f2.evaluate_boundary(0.1).unwrap();
        assert!(bb.mul_vec(&zero_lift, None).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn helmholtz_load_matches_refined_quadrature() {
        let p = ProblemSpec::helmholtz(3);
        let f = assemble_affine_parts(&p, &p.trial_space().unwrap(), &p.test_space().unwrap()).unwrap();
        let kappa = 1.0;
        let l = assemble_load(&p, &f, kappa).unwrap();
        // integer kappa: homogeneous data, L is pure source
        assert!(l.lift.iter().all(|c| c.abs() < 1e-14));
        // oracle: 3 sub-cells per direction, 10 points each
        let Space::D2(s) = &f.test else { unreachable!() };
        let rule = gauss_rule(10).unwrap();
        let mut oracle = vec![0.0; f.test_dim()];
        for ey in 0..3 {
            for ex in 0..3 {
                let (x0, x1) = s.space_x.element_bounds(ex);
                let (y0, y1) = s.space_y.element_bounds(ey);
                for cy in 0..3 {
                    for cx in 0..3 {
                        let (xa, ya) = (x0 + cx as f64 * (x1 - x0) / 3.0, y0 + cy as f64 * (y1 - y0) / 3.0);
                        for (y, wy) in rule.mapped(ya, ya + (y1 - y0) / 3.0) {
                            for (x, wx) in rule.mapped(xa, xa + (x1 - x0) / 3.0) {
                                let fv = p.source(kappa, [x, y]);
                                for full in 0..s.full_dim() {
                                    if let Some(row) = s.dof(full) {
                                        let (fx, fy) = s.split_full(full);
                                        let b = s.eval_product(fx, fy, x, y).unwrap();
                                        oracle[row] += wx * wy * fv * b;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let scale = oracle.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for (a, b) in l.values.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn inflow_lift_interpolates_data() {
        let p = ProblemSpec::ej2d(8, 8, 1);
        let u = p.trial_space().unwrap();
        let f = assemble_affine_parts(&p, &u, &p.test_space().unwrap()).unwrap();
        let lift = lift_coefficients(&p, &u, &f.boundary_columns, 0.1).unwrap();
        let full = f.full_coefficients(&vec![0.0; f.trial_dim()], &lift);
        // dense interpolation oracle: the best the trace space can do is
        // O(h^3) for quadratics; check the lift on the inflow edge
        let mut max_err: f64 = 0.0;
        for i in 0..=40 {
            let y = i as f64 / 40.0;
            let (val, _) = u.eval_function(&full, [0.0, y]).unwrap();
            max_err = max_err.max((val - (std::f64::consts::PI * y).sin()).abs());
        }
        assert!(max_err < 2e-3, "lift error {max_err}");
        // outflow edge is zero
        let (val, _) = u.eval_function(&full, [1.0, 0.37]).unwrap();
        assert!(val.abs() < 1e-14);
    }
}
