//! B-spline spaces on uniform meshes and Gauss-Legendre quadrature.
//!
//! Spaces are built from open knot vectors. Interior breakpoints carry
//! multiplicity 1 for maximally smooth (C^{p-1}) spaces and multiplicity `p`
//! for spaces with C0 separators. Basis functions are indexed by their
//! position in the full (unconstrained) basis; a boundary constraint only
//! decides which of those are degrees of freedom.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Continuity {
    /// C^{p-1} across element boundaries.
    Smooth,
    /// C0 separators: interior knots repeated `p` times.
    C0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryConstraint {
    None,
    ZeroLeft,
    ZeroRight,
    ZeroBoth,
}

impl BoundaryConstraint {
    fn left(self) -> bool {
        matches!(self, BoundaryConstraint::ZeroLeft | BoundaryConstraint::ZeroBoth)
    }

    fn right(self) -> bool {
        matches!(self, BoundaryConstraint::ZeroRight | BoundaryConstraint::ZeroBoth)
    }
}

/// Gauss-Legendre rule on the reference element [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points and weights mapped affinely onto `[x0, x1]`.
    pub fn mapped(&self, x0: f64, x1: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (x1 - x0);
        let mid = 0.5 * (x0 + x1);
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(&p, &w)| (mid + half * p, w * half))
    }
}

/// `q`-point Gauss-Legendre rule, exact for polynomials of degree `2q - 1`.
pub fn gauss_rule(q: usize) -> Result<QuadratureRule> {
    if !(1..=10).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "quadrature point count {q} outside 1..=10"
        )));
    }
    let mut points = vec![0.0; q];
    let mut weights = vec![0.0; q];
    let n = q as f64;
    for i in 0..q.div_ceil(2) {
        // Newton iteration on P_q starting from the Tricomi-type guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(q, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(q, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[i] = -x;
        points[q - 1 - i] = x;
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 {
        points[q / 2] = 0.0;
    }
    Ok(QuadratureRule { points, weights })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// One-dimensional B-spline space on a uniform mesh of `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineSpace1D {
    order: usize,
    elements: usize,
    continuity: Continuity,
    a: f64,
    b: f64,
    constraint: BoundaryConstraint,
    knots: Vec<f64>,
}

impl BSplineSpace1D {
    pub fn new(
        order: usize,
        elements: usize,
        continuity: Continuity,
        a: f64,
        b: f64,
        constraint: BoundaryConstraint,
    ) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidArgument("B-spline order must be >= 1".into()));
        }
        if elements < 1 {
            return Err(Error::InvalidArgument("element count must be >= 1".into()));
        }
        if !(a < b) {
            return Err(Error::InvalidArgument(format!("empty domain [{a}, {b}]")));
        }
        let mult = match continuity {
            Continuity::Smooth => 1,
            Continuity::C0 => order,
        };
        let mut knots = vec![a; order + 1];
        for i in 1..elements {
            let x = a + (b - a) * i as f64 / elements as f64;
            knots.extend(std::iter::repeat_n(x, mult));
        }
        knots.extend(std::iter::repeat_n(b, order + 1));
        let space = Self {
            order,
            elements,
            continuity,
            a,
            b,
            constraint,
            knots,
        };
        let removed = constraint.left() as usize + constraint.right() as usize;
        if space.full_dim() <= removed {
            return Err(Error::InvalidArgument(
                "boundary constraint removes every basis function".into(),
            ));
        }
        Ok(space)
    }

    /// Unconstrained space on `[0, 1]`.
    pub fn unit(order: usize, elements: usize, continuity: Continuity) -> Result<Self> {
        Self::new(order, elements, continuity, 0.0, 1.0, BoundaryConstraint::None)
    }

    pub fn with_constraint(&self, constraint: BoundaryConstraint) -> Self {
        let mut s = self.clone();
        s.constraint = constraint;
        s
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn continuity(&self) -> Continuity {
        self.continuity
    }

    pub fn constraint(&self) -> BoundaryConstraint {
        self.constraint
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn element_size(&self) -> f64 {
        (self.b - self.a) / self.elements as f64
    }

    fn multiplicity(&self) -> usize {
        match self.continuity {
            Continuity::Smooth => 1,
            Continuity::C0 => self.order,
        }
    }

    /// Number of basis functions before applying the boundary constraint.
    pub fn full_dim(&self) -> usize {
        self.knots.len() - self.order - 1
    }

    /// Number of degrees of freedom.
    pub fn dim(&self) -> usize {
        self.full_dim() - self.constraint.left() as usize - self.constraint.right() as usize
    }

    /// Degree-of-freedom index of a full basis index, `None` when constrained away.
    pub fn dof(&self, full: usize) -> Option<usize> {
        if full >= self.full_dim() {
            return None;
        }
        if self.constraint.left() && full == 0 {
            return None;
        }
        if self.constraint.right() && full == self.full_dim() - 1 {
            return None;
        }
        Some(full - self.constraint.left() as usize)
    }

    /// Full basis index of a degree of freedom.
    pub fn full_index(&self, dof: usize) -> usize {
        dof + self.constraint.left() as usize
    }

    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        let n = self.elements as f64;
        (
            self.a + (self.b - self.a) * e as f64 / n,
            self.a + (self.b - self.a) * (e + 1) as f64 / n,
        )
    }

    /// Index of the first of the `order + 1` functions living on element `e`.
    pub fn element_first_function(&self, e: usize) -> usize {
        e * self.multiplicity()
    }

    /// Element containing `x`; points on an interior breakpoint belong to the
    /// element on their left, the left endpoint belongs to element 0.
    pub fn element_of(&self, x: f64) -> Result<usize> {
        if !(x >= self.a && x <= self.b) {
            return Err(Error::Domain {
                x,
                a: self.a,
                b: self.b,
            });
        }
        let t = (x - self.a) / self.element_size();
        if t <= 0.0 {
            return Ok(0);
        }
        let e = (t.ceil() as usize).saturating_sub(1);
        Ok(e.min(self.elements - 1))
    }

    /// Values and first derivatives of the `order + 1` functions of element `e` at `x`.
    pub fn eval_on_element(&self, e: usize, x: f64) -> (usize, Vec<f64>, Vec<f64>) {
        let p = self.order;
        let span = p + e * self.multiplicity();
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let values: Vec<f64> = (0..=p).map(|r| ndu[r][p]).collect();
        let pf = p as f64;
        let derivs: Vec<f64> = (0..=p)
            .map(|r| {
                let mut d = 0.0;
                if r >= 1 {
                    d += ndu[r - 1][p - 1] / ndu[p][r - 1];
                }
                if r < p {
                    d -= ndu[r][p - 1] / ndu[p][r];
                }
                pf * d
            })
            .collect();
        (span - p, values, derivs)
    }

    /// Values of all basis functions nonzero at `x`; the returned index is the
    /// full index of the first one.
    pub fn eval_basis(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        let e = self.element_of(x)?;
        let (first, v, _) = self.eval_on_element(e, x);
        Ok((first, v))
    }

    /// First derivatives of the locally nonzero basis functions at `x`.
    pub fn eval_basis_deriv(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        let e = self.element_of(x)?;
        let (first, _, d) = self.eval_on_element(e, x);
        Ok((first, d))
    }

    /// Evaluates `sum_i c_i B_i(x)` and its derivative for full-basis coefficients.
    pub fn eval_function(&self, coeffs: &[f64], x: f64) -> Result<(f64, f64)> {
        let e = self.element_of(x)?;
        let (first, v, d) = self.eval_on_element(e, x);
        let mut val = 0.0;
        let mut der = 0.0;
        for k in 0..v.len() {
            val += coeffs[first + k] * v[k];
            der += coeffs[first + k] * d[k];
        }
        Ok((val, der))
    }
}

/// Tensor-product space; degrees of freedom are numbered x-fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineSpace2D {
    pub space_x: BSplineSpace1D,
    pub space_y: BSplineSpace1D,
}

impl BSplineSpace2D {
    pub fn new(space_x: BSplineSpace1D, space_y: BSplineSpace1D) -> Self {
        Self { space_x, space_y }
    }

    pub fn dim(&self) -> usize {
        self.space_x.dim() * self.space_y.dim()
    }

    pub fn full_dim(&self) -> usize {
        self.space_x.full_dim() * self.space_y.full_dim()
    }

    pub fn full_index(&self, fx: usize, fy: usize) -> usize {
        fy * self.space_x.full_dim() + fx
    }

    pub fn split_full(&self, full: usize) -> (usize, usize) {
        let nx = self.space_x.full_dim();
        (full % nx, full / nx)
    }

    pub fn dof(&self, full: usize) -> Option<usize> {
        let (fx, fy) = self.split_full(full);
        let dx = self.space_x.dof(fx)?;
        let dy = self.space_y.dof(fy)?;
        Some(dy * self.space_x.dim() + dx)
    }

    /// Value of basis function `(fx, fy)` as the product of its 1D factors.
    pub fn eval_product(&self, fx: usize, fy: usize, x: f64, y: f64) -> Result<f64> {
        let (ix, vx) = self.space_x.eval_basis(x)?;
        let (iy, vy) = self.space_y.eval_basis(y)?;
        let bx = if fx >= ix && fx - ix < vx.len() { vx[fx - ix] } else { 0.0 };
        let by = if fy >= iy && fy - iy < vy.len() { vy[fy - iy] } else { 0.0 };
        Ok(bx * by)
    }
}

/// Shape data of one element at its quadrature points.
#[derive(Debug, Clone)]
pub struct LocalShapes {
    /// Full basis indices of the functions living on the element.
    pub full_indices: Vec<usize>,
    /// Physical quadrature points (second coordinate is 0 in 1D).
    pub points: Vec<[f64; 2]>,
    /// Physical quadrature weights.
    pub weights: Vec<f64>,
    /// `values[q][k]`: function `k` at point `q`.
    pub values: Vec<Vec<f64>>,
    /// `grads[q][k]`: gradient of function `k` at point `q`.
    pub grads: Vec<Vec<[f64; 2]>>,
}

/// A 1D or 2D B-spline space, the unit the assembler works with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Space {
    D1(BSplineSpace1D),
    D2(BSplineSpace2D),
}

impl Space {
    pub fn dim(&self) -> usize {
        match self {
            Space::D1(s) => s.dim(),
            Space::D2(s) => s.dim(),
        }
    }

    pub fn full_dim(&self) -> usize {
        match self {
            Space::D1(s) => s.full_dim(),
            Space::D2(s) => s.full_dim(),
        }
    }

    pub fn dof(&self, full: usize) -> Option<usize> {
        match self {
            Space::D1(s) => s.dof(full),
            Space::D2(s) => s.dof(full),
        }
    }

    pub fn order(&self) -> usize {
        match self {
            Space::D1(s) => s.order(),
            Space::D2(s) => s.space_x.order().max(s.space_y.order()),
        }
    }

    pub fn n_elements(&self) -> usize {
        match self {
            Space::D1(s) => s.elements(),
            Space::D2(s) => s.space_x.elements() * s.space_y.elements(),
        }
    }

    pub fn spatial_dim(&self) -> usize {
        match self {
            Space::D1(_) => 1,
            Space::D2(_) => 2,
        }
    }

    /// True when both spaces use the same element partition.
    pub fn same_mesh(&self, other: &Space) -> bool {
        fn mesh(s: &BSplineSpace1D) -> (usize, f64, f64) {
            (s.elements(), s.domain().0, s.domain().1)
        }
        match (self, other) {
            (Space::D1(a), Space::D1(b)) => mesh(a) == mesh(b),
            (Space::D2(a), Space::D2(b)) => {
                mesh(&a.space_x) == mesh(&b.space_x) && mesh(&a.space_y) == mesh(&b.space_y)
            }
            _ => false,
        }
    }

    /// Shape functions of element `e` at the points of `rule` (tensorized in 2D).
    pub fn element_shapes(&self, e: usize, rule: &QuadratureRule) -> LocalShapes {
        match self {
            Space::D1(s) => {
                let (x0, x1) = s.element_bounds(e);
                let mut out = LocalShapes {
                    full_indices: Vec::new(),
                    points: Vec::new(),
                    weights: Vec::new(),
                    values: Vec::new(),
                    grads: Vec::new(),
                };
                let first = s.element_first_function(e);
                out.full_indices = (first..=first + s.order()).collect();
                for (x, w) in rule.mapped(x0, x1) {
                    let (_, v, d) = s.eval_on_element(e, x);
                    out.points.push([x, 0.0]);
                    out.weights.push(w);
                    out.values.push(v);
                    out.grads.push(d.into_iter().map(|g| [g, 0.0]).collect());
                }
                out
            }
            Space::D2(s) => {
                let nx = s.space_x.elements();
                let (ex, ey) = (e % nx, e / nx);
                let (x0, x1) = s.space_x.element_bounds(ex);
                let (y0, y1) = s.space_y.element_bounds(ey);
                let fx0 = s.space_x.element_first_function(ex);
                let fy0 = s.space_y.element_first_function(ey);
                let (px, py) = (s.space_x.order() + 1, s.space_y.order() + 1);
                let mut full_indices = Vec::with_capacity(px * py);
                for ly in 0..py {
                    for lx in 0..px {
                        full_indices.push(s.full_index(fx0 + lx, fy0 + ly));
                    }
                }
                let xs: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = rule
                    .mapped(x0, x1)
                    .map(|(x, w)| {
                        let (_, v, d) = s.space_x.eval_on_element(ex, x);
                        (x, w, v, d)
                    })
                    .collect();
                let ys: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = rule
                    .mapped(y0, y1)
                    .map(|(y, w)| {
                        let (_, v, d) = s.space_y.eval_on_element(ey, y);
                        (y, w, v, d)
                    })
                    .collect();
                let mut out = LocalShapes {
                    full_indices,
                    points: Vec::new(),
                    weights: Vec::new(),
                    values: Vec::new(),
                    grads: Vec::new(),
                };
                for (y, wy, vy, dy) in &ys {
                    for (x, wx, vx, dx) in &xs {
                        let mut vals = Vec::with_capacity(px * py);
                        let mut grads = Vec::with_capacity(px * py);
                        for ly in 0..py {
                            for lx in 0..px {
                                vals.push(vx[lx] * vy[ly]);
                                grads.push([dx[lx] * vy[ly], vx[lx] * dy[ly]]);
                            }
                        }
                        out.points.push([*x, *y]);
                        out.weights.push(wx * wy);
                        out.values.push(vals);
                        out.grads.push(grads);
                    }
                }
                out
            }
        }
    }

    /// Value and gradient of the function with full-basis coefficients `coeffs` at `pt`.
    pub fn eval_function(&self, coeffs: &[f64], pt: [f64; 2]) -> Result<(f64, [f64; 2])> {
        match self {
            Space::D1(s) => {
                let (v, d) = s.eval_function(coeffs, pt[0])?;
                Ok((v, [d, 0.0]))
            }
            Space::D2(s) => {
                let ex = s.space_x.element_of(pt[0])?;
                let ey = s.space_y.element_of(pt[1])?;
                let (fx0, vx, dx) = s.space_x.eval_on_element(ex, pt[0]);
                let (fy0, vy, dy) = s.space_y.eval_on_element(ey, pt[1]);
                let mut val = 0.0;
                let mut grad = [0.0; 2];
                for ly in 0..vy.len() {
                    for lx in 0..vx.len() {
                        let c = coeffs[s.full_index(fx0 + lx, fy0 + ly)];
                        val += c * vx[lx] * vy[ly];
                        grad[0] += c * dx[lx] * vy[ly];
                        grad[1] += c * vx[lx] * dy[ly];
                    }
                }
                Ok((val, grad))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook recursive Cox-de Boor evaluation, independent of `eval_on_element`.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            let last = *knots.last().unwrap();
            let inside = knots[i] <= x && x < knots[i + 1];
            let at_end = x == last && knots[i] < knots[i + 1] && knots[i + 1] == last;
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        v
    }

    fn spaces() -> Vec<BSplineSpace1D> {
        let mut v = Vec::new();
        for p in 1..=4 {
            for n in [1, 2, 3, 7] {
                for c in [Continuity::Smooth, Continuity::C0] {
                    v.push(BSplineSpace1D::new(p, n, c, -0.5, 2.0, BoundaryConstraint::None).unwrap());
                }
            }
        }
        v
    }

    #[test]
    fn dimensions() {
        let s = BSplineSpace1D::unit(2, 4, Continuity::Smooth).unwrap();
        assert_eq!(s.dim(), 6);
        let s = BSplineSpace1D::unit(2, 4, Continuity::C0).unwrap();
        assert_eq!(s.dim(), 9);
        let s = s.with_constraint(BoundaryConstraint::ZeroBoth);
        assert_eq!(s.dim(), 7);
        assert_eq!(s.dof(0), None);
        assert_eq!(s.dof(1), Some(0));
        assert_eq!(s.dof(8), None);
        let s = BSplineSpace1D::unit(3, 5, Continuity::C0).unwrap();
        assert_eq!(s.dim(), 16);
    }

    #[test]
    fn linear_hat_is_nodal() {
        let s = BSplineSpace1D::unit(1, 2, Continuity::Smooth).unwrap();
        let (first, v) = s.eval_basis(0.5).unwrap();
        // x = 0.5 belongs to the left element: functions 0 and 1
        let mut full = vec![0.0; s.full_dim()];
        for (k, val) in v.iter().enumerate() {
            full[first + k] = *val;
        }
        assert!((full[1] - 1.0).abs() < 1e-15);
        assert!(full[0].abs() < 1e-15 && full[2].abs() < 1e-15);
    }

    #[test]
    fn quadratic_matches_cox_de_boor() {
        let s = BSplineSpace1D::unit(2, 4, Continuity::Smooth).unwrap();
        let x = 0.375;
        let (first, v) = s.eval_basis(x).unwrap();
        for i in 0..s.full_dim() {
            let expected = cox_de_boor(s.knots(), i, 2, x);
            let got = if i >= first && i - first < v.len() { v[i - first] } else { 0.0 };
            assert!((got - expected).abs() < 1e-14, "i={i} got {got} want {expected}");
        }
        // frozen from the recursive oracle
        assert!((v[0] - 0.125).abs() < 1e-14);
        assert!((v[1] - 0.75).abs() < 1e-14);
        assert!((v[2] - 0.125).abs() < 1e-14);
    }

    #[test]
    fn all_spaces_match_cox_de_boor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in spaces() {
            let (a, b) = s.domain();
            for _ in 0..50 {
                let x = rng.random_range(a..b);
                let (first, v) = s.eval_basis(x).unwrap();
                for i in 0..s.full_dim() {
                    let e = cox_de_boor(s.knots(), i, s.order(), x);
                    let g = if i >= first && i - first < v.len() { v[i - first] } else { 0.0 };
                    assert!((g - e).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn linear_slopes() {
        let s = BSplineSpace1D::unit(1, 4, Continuity::Smooth).unwrap();
        let h = s.element_size();
        let (_, d) = s.eval_basis_deriv(0.3).unwrap();
        assert!((d[0] + 1.0 / h).abs() < 1e-12);
        assert!((d[1] - 1.0 / h).abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let s = BSplineSpace1D::unit(2, 4, Continuity::Smooth).unwrap();
        let x = 0.3;
        let step = 1e-6;
        let (first, d) = s.eval_basis_deriv(x).unwrap();
        let (f1, vp) = s.eval_basis(x + step).unwrap();
        let (f2, vm) = s.eval_basis(x - step).unwrap();
        assert_eq!(first, f1);
        assert_eq!(first, f2);
        for k in 0..d.len() {
            let fd = (vp[k] - vm[k]) / (2.0 * step);
            assert!((fd - d[k]).abs() <= 1e-6 * d[k].abs().max(1.0));
        }
    }

    #[test]
    fn outside_domain_is_error() {
        let s = BSplineSpace1D::unit(2, 3, Continuity::Smooth).unwrap();
        assert!(matches!(s.eval_basis(1.5), Err(Error::Domain { .. })));
        assert!(s.eval_basis_deriv(-0.1).is_err());
        assert!(s.eval_basis(f64::NAN).is_err());
    }

    #[test]
    fn one_sided_derivative_at_c0_knot() {
        let s = BSplineSpace1D::unit(2, 2, Continuity::C0).unwrap();
        // breakpoint 0.5 evaluates on the left element
        let (first, _) = s.eval_basis_deriv(0.5).unwrap();
        assert_eq!(first, 0);
        let (first, _) = s.eval_basis_deriv(0.0).unwrap();
        assert_eq!(first, 0);
    }

    #[test]
    fn gauss_midpoint_and_two_point() {
        let r = gauss_rule(1).unwrap();
        assert_eq!(r.points, vec![0.0]);
        assert!((r.weights[0] - 2.0).abs() < 1e-15);
        let (x, w) = r.mapped(0.2, 0.6).next().unwrap();
        assert!((x - 0.4).abs() < 1e-15 && (w - 0.4).abs() < 1e-15);

        // oracle: bisection on P2(x) = (3x^2 - 1)/2
        let (mut lo, mut hi) = (0.1_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (3.0 * mid * mid - 1.0) < 0.0 { lo = mid } else { hi = mid }
        }
        assert!((lo - 0.5773502691896258).abs() < 1e-15);
        let r = gauss_rule(2).unwrap();
        assert!((r.points[1] - 0.5773502691896258).abs() < 1e-15);
        assert!((r.points[0] + 0.5773502691896258).abs() < 1e-15);
    }

    #[test]
    fn gauss_three_point_monomials() {
        let r = gauss_rule(3).unwrap();
        let i5: f64 = r.points.iter().zip(&r.weights).map(|(x, w)| w * x.powi(5)).sum();
        let i4: f64 = r.points.iter().zip(&r.weights).map(|(x, w)| w * x.powi(4)).sum();
        assert!(i5.abs() < 1e-14);
        assert!((i4 - 0.4).abs() < 1e-14);
    }

    #[test]
    fn gauss_exactness_all_orders() {
        for q in 1..=10 {
            let r = gauss_rule(q).unwrap();
            let wsum: f64 = r.weights.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-13);
            for deg in 0..2 * q {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got: f64 = r.points.iter().zip(&r.weights).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let err = if exact == 0.0 { got.abs() } else { ((got - exact) / exact).abs() };
                assert!(err <= 1e-13, "q={q} deg={deg} err={err}");
            }
        }
        assert!(gauss_rule(0).is_err());
        assert!(gauss_rule(11).is_err());
    }

    #[test]
    fn support_is_local() {
        for s in spaces() {
            let h = s.element_size();
            let (a, _) = s.domain();
            for i in 0..s.full_dim() {
                let lo = s.knots()[i];
                let hi = s.knots()[i + s.order() + 1];
                assert!((hi - lo) <= h * (s.order() as f64 + 1.0) + 1e-12);
                for e in 0..s.elements() {
                    let (x0, x1) = s.element_bounds(e);
                    if x1 <= lo + 1e-12 || x0 >= hi - 1e-12 {
                        let xm = 0.5 * (x0 + x1);
                        let (first, v) = s.eval_basis(xm).unwrap();
                        if i >= first && i - first < v.len() {
                            assert!(v[i - first].abs() <= 1e-14);
                        }
                    }
                }
                let _ = a;
            }
        }
    }

    #[test]
    fn tensor_product_structure() {
        let sx = BSplineSpace1D::unit(2, 3, Continuity::Smooth).unwrap();
        let sy = BSplineSpace1D::unit(3, 2, Continuity::C0).unwrap();
        let s = BSplineSpace2D::new(sx.clone(), sy.clone());
        assert_eq!(s.dim(), sx.dim() * sy.dim());
        let (x, y) = (0.41, 0.77);
        let v = s.eval_product(2, 3, x, y).unwrap();
        let (ix, vx) = sx.eval_basis(x).unwrap();
        let (iy, vy) = sy.eval_basis(y).unwrap();
        assert!((v - vx[2 - ix] * vy[3 - iy]).abs() < 1e-15);
        let c = BSplineSpace2D::new(
            sx.with_constraint(BoundaryConstraint::ZeroBoth),
            sy.with_constraint(BoundaryConstraint::ZeroBoth),
        );
        assert_eq!(c.dim(), (sx.dim() - 2) * (sy.dim() - 2));
        assert_eq!(c.dof(c.full_index(1, 1)), Some(0));
        assert_eq!(c.dof(c.full_index(2, 1)), Some(1));
        assert_eq!(c.dof(c.full_index(0, 1)), None);
    }

    proptest! {
        #[test]
        fn partition_of_unity(p in 1usize..5, n in 1usize..9, c0 in any::<bool>(), t in 0.0f64..1.0) {
            let cont = if c0 { Continuity::C0 } else { Continuity::Smooth };
            let s = BSplineSpace1D::new(p, n, cont, -1.0, 3.0, BoundaryConstraint::None).unwrap();
            let x = -1.0 + 4.0 * t;
            let (_, v) = s.eval_basis(x).unwrap();
            let sum: f64 = v.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(v.iter().all(|&b| b >= -1e-15));
            let (_, d) = s.eval_basis_deriv(x).unwrap();
            let dsum: f64 = d.iter().sum();
            prop_assert!(dsum.abs() <= 1e-9 * (n as f64).max(1.0));
        }

        #[test]
        fn derivative_consistency(p in 1usize..5, n in 1usize..6, t in 0.01f64..0.99) {
            let s = BSplineSpace1D::unit(p, n, Continuity::Smooth).unwrap();
            let h = s.element_size();
            let frac = (t / h).fract();
            prop_assume!(frac > 1e-3 && frac < 1.0 - 1e-3);
            let step = 1e-7;
            let (first, d) = s.eval_basis_deriv(t).unwrap();
            let (_, vp) = s.eval_basis(t + step).unwrap();
            let (_, vm) = s.eval_basis(t - step).unwrap();
            for k in 0..d.len() {
                let fd = (vp[k] - vm[k]) / (2.0 * step);
                prop_assert!((fd - d[k]).abs() <= 1e-6 * d[k].abs().max(1.0 / h), "first {}", first);
            }
        }
    }
}
