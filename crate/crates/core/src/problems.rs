//! Model problems: 1D and 2D Eriksson-Johnson advection-diffusion and the 2D
//! Helmholtz equation with a manufactured solution.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::assembly::InnerProduct;
use crate::bspline::{gauss_rule, BSplineSpace1D, BSplineSpace2D, BoundaryConstraint, Continuity, Space};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// `-eps u'' + u' = 0` on (0,1), `-eps u'(0) + u(0) = 1`, `u(1) = 0`.
    Ej1d,
    /// `-eps lap u + u_x = 0` on the unit square with inflow data `sin(k pi y)`.
    Ej2d,
    /// `lap u + kappa^2 u = f` with exact solution `sin(kappa pi x) sin(kappa pi y)`.
    Helmholtz,
}

impl ProblemKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ej1d" | "ej-1d" => Ok(ProblemKind::Ej1d),
            "ej2d" | "ej-2d" | "ej" => Ok(ProblemKind::Ej2d),
            "helmholtz" => Ok(ProblemKind::Helmholtz),
            other => Err(Error::Config(format!("unknown problem kind `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Ej1d => "ej1d",
            ProblemKind::Ej2d => "ej2d",
            ProblemKind::Helmholtz => "helmholtz",
        }
    }

    pub fn param_name(self) -> &'static str {
        match self {
            ProblemKind::Helmholtz => "kappa",
            _ => "epsilon",
        }
    }
}

/// Parameter map `theta_k(mu)` of one affine part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theta {
    One,
    Linear,
    Square,
}

impl Theta {
    pub fn eval(self, mu: f64) -> f64 {
        match self {
            Theta::One => 1.0,
            Theta::Linear => mu,
            Theta::Square => mu * mu,
        }
    }
}

/// Problem kind plus discretization settings; the parameter itself is passed
/// separately so one spec serves a whole parameter family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Inflow mode `k` of the 2D Eriksson-Johnson data.
    pub inflow_mode: u32,
    /// Elements along x and y (y ignored in 1D).
    pub mesh: [usize; 2],
    pub trial_order: usize,
    pub trial_continuity: Continuity,
    pub test_order: usize,
    pub test_continuity: Continuity,
    pub inner_product: InnerProduct,
    /// Order and continuity of the equal trial/test space of the Galerkin baseline.
    pub galerkin_order: usize,
    pub galerkin_continuity: Continuity,
    pub param_range: (f64, f64),
}

impl ProblemSpec {
    /// Linear trial, quadratic C0 test, `n` elements.
    pub fn ej1d(n: usize) -> Self {
        Self {
            kind: ProblemKind::Ej1d,
            inflow_mode: 1,
            mesh: [n, 1],
            trial_order: 1,
            trial_continuity: Continuity::Smooth,
            test_order: 2,
            test_continuity: Continuity::C0,
            inner_product: InnerProduct::H1Seminorm,
            galerkin_order: 2,
            galerkin_continuity: Continuity::C0,
            param_range: (1e-6, 1.0),
        }
    }

    /// Quadratic smooth trial, cubic smooth test.
    pub fn ej2d(nx: usize, ny: usize, inflow_mode: u32) -> Self {
        Self {
            kind: ProblemKind::Ej2d,
            inflow_mode,
            mesh: [nx, ny],
            trial_order: 2,
            trial_continuity: Continuity::Smooth,
            test_order: 3,
            test_continuity: Continuity::Smooth,
            inner_product: InnerProduct::H1Seminorm,
            galerkin_order: 2,
            galerkin_continuity: Continuity::Smooth,
            param_range: (1e-6, 0.1),
        }
    }

    /// Quadratic smooth trial, quadratic C0 test, `n x n` elements.
    pub fn helmholtz(n: usize) -> Self {
        Self {
            kind: ProblemKind::Helmholtz,
            inflow_mode: 1,
            mesh: [n, n],
            trial_order: 2,
            trial_continuity: Continuity::Smooth,
            test_order: 2,
            test_continuity: Continuity::C0,
            inner_product: InnerProduct::FullH1,
            galerkin_order: 2,
            galerkin_continuity: Continuity::Smooth,
            param_range: (1.0, 10.0),
        }
    }

    /// Full check for the Petrov-Galerkin discretization.
    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        if self.kind == ProblemKind::Ej2d && self.test_order <= self.trial_order {
            return Err(Error::Config(format!(
                "ej2d needs test order > trial order (got q={} p={})",
                self.test_order, self.trial_order
            )));
        }
        Ok(())
    }

    /// Checks shared with the equal-space Galerkin baseline.
    pub fn validate_common(&self) -> Result<()> {
        if self.mesh[0] == 0 || (self.kind != ProblemKind::Ej1d && self.mesh[1] == 0) {
            return Err(Error::Config("mesh must have at least one element per direction".into()));
        }
        if self.trial_order == 0 || self.test_order == 0 || self.galerkin_order == 0 {
            return Err(Error::Config("orders must be >= 1".into()));
        }
        if self.kind == ProblemKind::Ej2d && self.inflow_mode == 0 {
            return Err(Error::Config("inflow mode k must be >= 1".into()));
        }
        let (lo, hi) = self.param_range;
        if !(lo <= hi) {
            return Err(Error::Config("empty parameter range".into()));
        }
        Ok(())
    }

    /// Hard validity of a parameter value (independent of the declared range).
    pub fn check_param(&self, mu: f64) -> Result<()> {
        match self.kind {
            ProblemKind::Helmholtz if !(1.0..=10.0).contains(&mu) => Err(Error::InvalidArgument(
                format!("kappa = {mu} outside [1, 10]"),
            )),
            ProblemKind::Ej1d | ProblemKind::Ej2d if !(mu > 0.0) => Err(Error::InvalidArgument(
                format!("epsilon = {mu} must be positive"),
            )),
            _ => Ok(()),
        }
    }

    pub fn in_range(&self, mu: f64) -> bool {
        mu >= self.param_range.0 && mu <= self.param_range.1
    }

    /// The same problem discretized with equal trial and test spaces.
    pub fn galerkin(&self) -> Self {
        let mut g = self.clone();
        g.trial_order = self.galerkin_order;
        g.trial_continuity = self.galerkin_continuity;
        g.test_order = self.galerkin_order;
        g.test_continuity = self.galerkin_continuity;
        g
    }

    fn space(&self, order: usize, continuity: Continuity, constraint: BoundaryConstraint) -> Result<Space> {
        let sx = BSplineSpace1D::new(order, self.mesh[0], continuity, 0.0, 1.0, constraint)?;
        Ok(match self.kind {
            ProblemKind::Ej1d => Space::D1(sx),
            _ => {
                let sy = BSplineSpace1D::new(order, self.mesh[1], continuity, 0.0, 1.0, constraint)?;
                Space::D2(BSplineSpace2D::new(sx, sy))
            }
        })
    }

    fn constraint(&self) -> BoundaryConstraint {
        match self.kind {
            ProblemKind::Ej1d => BoundaryConstraint::ZeroRight,
            _ => BoundaryConstraint::ZeroBoth,
        }
    }

    /// Trial space; constrained functions are the Dirichlet (lifted) ones.
    pub fn trial_space(&self) -> Result<Space> {
        self.space(self.trial_order, self.trial_continuity, self.constraint())
    }

    pub fn test_space(&self) -> Result<Space> {
        self.space(self.test_order, self.test_continuity, self.constraint())
    }

    pub fn theta(&self) -> Vec<Theta> {
        match self.kind {
            ProblemKind::Helmholtz => vec![Theta::One, Theta::Square],
            _ => vec![Theta::One, Theta::Linear],
        }
    }

    /// Exact solution value and gradient.
    pub fn exact(&self, mu: f64, pt: [f64; 2]) -> (f64, [f64; 2]) {
        match self.kind {
            ProblemKind::Ej1d => {
                let (u, du) = ej1d_with_derivative(mu, pt[0]);
                (u, [du, 0.0])
            }
            ProblemKind::Ej2d => ej2d_with_gradient(mu, self.inflow_mode, pt[0], pt[1]),
            ProblemKind::Helmholtz => {
                let (s, c) = (PI * mu * pt[0]).sin_cos();
                let (t, d) = (PI * mu * pt[1]).sin_cos();
                (s * t, [PI * mu * c * t, PI * mu * s * d])
            }
        }
    }

    /// Dirichlet data on the boundary.
    pub fn boundary_data(&self, mu: f64, pt: [f64; 2]) -> f64 {
        match self.kind {
            ProblemKind::Ej1d => 0.0,
            ProblemKind::Ej2d => {
                if pt[0] == 0.0 {
                    (self.inflow_mode as f64 * PI * pt[1]).sin()
                } else {
                    0.0
                }
            }
            ProblemKind::Helmholtz => self.exact(mu, pt).0,
        }
    }

    /// Volume source term of the strong form.
    pub fn source(&self, mu: f64, pt: [f64; 2]) -> f64 {
        match self.kind {
            ProblemKind::Helmholtz => helmholtz_source(mu, pt[0], pt[1]),
            _ => 0.0,
        }
    }
}

/// `u(x) = 1 - exp((x - 1)/eps)`.
pub fn exact_ej1d(eps: f64, x: f64) -> f64 {
    ej1d_with_derivative(eps, x).0
}

fn ej1d_with_derivative(eps: f64, x: f64) -> (f64, f64) {
    let e = ((x - 1.0) / eps).exp();
    (1.0 - e, -e / eps)
}

fn ej2d_rates(eps: f64, k: u32) -> (f64, f64) {
    let a = 4.0 * eps * eps * (k as f64 * PI).powi(2);
    let s = (1.0 + a).sqrt();
    let r1 = (1.0 + s) / (2.0 * eps);
    // conjugate form avoids cancellation for small eps
    let r2 = -2.0 * eps * (k as f64 * PI).powi(2) / (1.0 + s);
    (r1, r2)
}

/// Separation-of-variables solution of the 2D Eriksson-Johnson problem.
pub fn exact_ej2d(eps: f64, k: u32, x: f64, y: f64) -> f64 {
    ej2d_with_gradient(eps, k, x, y).0
}

fn ej2d_with_gradient(eps: f64, k: u32, x: f64, y: f64) -> (f64, [f64; 2]) {
    let (r1, r2) = ej2d_rates(eps, k);
    let e1 = (r1 * (x - 1.0)).exp();
    let e2 = (r2 * (x - 1.0)).exp();
    let den = (-r1).exp() - (-r2).exp();
    let xf = (e1 - e2) / den;
    let dxf = (r1 * e1 - r2 * e2) / den;
    let kp = k as f64 * PI;
    let (s, c) = (kp * y).sin_cos();
    (s * xf, [s * dxf, kp * c * xf])
}

/// Manufactured Helmholtz data `(f, g, u_exact)` at a point.
pub fn helmholtz_data(kappa: f64, x: f64, y: f64) -> (f64, f64, f64) {
    let u = (kappa * PI * x).sin() * (kappa * PI * y).sin();
    (helmholtz_source(kappa, x, y), u, u)
}

fn helmholtz_source(kappa: f64, x: f64, y: f64) -> f64 {
    kappa * kappa * (1.0 - 2.0 * PI * PI) * (kappa * PI * x).sin() * (kappa * PI * y).sin()
}

/// Discrete-vs-exact comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub l2: f64,
    pub h1_seminorm: f64,
    pub exact_l2: f64,
    pub overshoot: f64,
    pub max_value: f64,
    pub exact_max: f64,
    /// `[x, y, u_h, u_exact]` on the sampling grid.
    #[serde(skip)]
    pub samples: Vec<[f64; 4]>,
}

impl ErrorReport {
    pub fn relative_l2(&self) -> f64 {
        if self.exact_l2 > 0.0 {
            self.l2 / self.exact_l2
        } else {
            self.l2
        }
    }
}

pub const SAMPLES_PER_DIRECTION: usize = 101;

/// L2 / H1-seminorm errors by sub-cell Gauss quadrature and the overshoot on
/// a uniform sampling grid. `coeffs` are full-basis coefficients (lift included).
pub fn error_norms(
    coeffs: &[f64],
    space: &Space,
    exact: &dyn Fn([f64; 2]) -> (f64, [f64; 2]),
) -> Result<ErrorReport> {
    if coeffs.len() != space.full_dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a space with {} functions",
            coeffs.len(),
            space.full_dim()
        )));
    }
    let rule = gauss_rule(10)?;
    let (mut l2, mut h1, mut ex2) = (0.0, 0.0, 0.0);
    let mut accumulate = |pt: [f64; 2], w: f64| -> Result<()> {
        let (uh, gh) = space.eval_function(coeffs, pt)?;
        let (ue, ge) = exact(pt);
        l2 += w * (uh - ue).powi(2);
        h1 += w * ((gh[0] - ge[0]).powi(2) + (gh[1] - ge[1]).powi(2));
        ex2 += w * ue * ue;
        Ok(())
    };
    let mut samples = Vec::new();
    match space {
        Space::D1(s) => {
            let sub = 8;
            for e in 0..s.elements() {
                let (x0, x1) = s.element_bounds(e);
                let hs = (x1 - x0) / sub as f64;
                for c in 0..sub {
                    let a = x0 + c as f64 * hs;
                    for (x, w) in rule.mapped(a, a + hs) {
                        accumulate([x, 0.0], w)?;
                    }
                }
            }
            for i in 0..SAMPLES_PER_DIRECTION {
                let x = i as f64 / (SAMPLES_PER_DIRECTION - 1) as f64;
                let (uh, _) = space.eval_function(coeffs, [x, 0.0])?;
                samples.push([x, 0.0, uh, exact([x, 0.0]).0]);
            }
        }
        Space::D2(s) => {
            let sub = 2;
            for ey in 0..s.space_y.elements() {
                let (y0, y1) = s.space_y.element_bounds(ey);
                for ex in 0..s.space_x.elements() {
                    let (x0, x1) = s.space_x.element_bounds(ex);
                    let (hx, hy) = ((x1 - x0) / sub as f64, (y1 - y0) / sub as f64);
                    for cy in 0..sub {
                        let ya = y0 + cy as f64 * hy;
                        for cx in 0..sub {
                            let xa = x0 + cx as f64 * hx;
                            for (y, wy) in rule.mapped(ya, ya + hy) {
                                for (x, wx) in rule.mapped(xa, xa + hx) {
                                    accumulate([x, y], wx * wy)?;
                                }
                            }
                        }
                    }
                }
            }
            let n = SAMPLES_PER_DIRECTION;
            for j in 0..n {
                let y = j as f64 / (n - 1) as f64;
                for i in 0..n {
                    let x = i as f64 / (n - 1) as f64;
                    let (uh, _) = space.eval_function(coeffs, [x, y])?;
                    samples.push([x, y, uh, exact([x, y]).0]);
                }
            }
        }
    }
    let max_value = samples.iter().map(|s| s[2]).fold(f64::NEG_INFINITY, f64::max);
    let exact_max = samples.iter().map(|s| s[3]).fold(f64::NEG_INFINITY, f64::max);
    Ok(ErrorReport {
        l2: l2.sqrt(),
        h1_seminorm: h1.sqrt(),
        exact_l2: ex2.sqrt(),
        overshoot: (max_value - exact_max).max(0.0),
        max_value,
        exact_max,
        samples,
    })
}
