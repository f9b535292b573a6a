//! Problem data: conductivity law, boundary data, Dirichlet bounds and the cutoff.

use std::fmt;
use std::sync::Arc;

use crate::expr::{Dual, Expr, Jet, Scalar, Var, Vars};
use crate::mesh::{Mesh, PhiTag, UTag};
use crate::quadrature::simplex_rule;
use crate::{Error, Point, Result};

/// `min(max(f + g, lo), hi) - g`
#[inline]
pub fn cutoff(f: f64, gphi_at_x: f64, g_lo: f64, g_hi: f64) -> f64 {
    let t = f + gphi_at_x;
    if t < g_lo {
        g_lo - gphi_at_x
    } else if t > g_hi {
        g_hi - gphi_at_x
    } else {
        f
    }
}

/// Whether the clamp in [`cutoff`] is inactive for the total value `phi = f + g`; ties count
/// as inactive.
#[inline]
pub fn cutoff_inactive(phi: f64, g_lo: f64, g_hi: f64) -> bool {
    g_lo <= phi && phi <= g_hi
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConductivityLaw {
    Constant(f64),
    /// `a + b tanh(c u)`
    Sigmoid { a: f64, b: f64, c: f64 },
    Expression(Expr),
}

/// Temperature dependent conductivity with its bounds and Lipschitz constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Conductivity {
    pub law: ConductivityLaw,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    /// `sup |sigma'|`
    pub lipschitz: f64,
}

const EXPRESSION_SAMPLES: usize = 4001;

impl Conductivity {
    pub fn constant(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Data(format!("conductivity must be positive, got {sigma}")));
        }
        Ok(Self { law: ConductivityLaw::Constant(sigma), sigma_lo: sigma, sigma_hi: sigma, lipschitz: 0.0 })
    }

    pub fn sigmoid(a: f64, b: f64, c: f64) -> Result<Self> {
        let lo = a - b.abs();
        if !(lo > 0.0) || ![a, b, c].iter().all(|v| v.is_finite()) {
            return Err(Error::Data(format!("a + b tanh(c u) must stay positive: a={a}, b={b}")));
        }
        Ok(Self { law: ConductivityLaw::Sigmoid { a, b, c }, sigma_lo: lo, sigma_hi: a + b.abs(), lipschitz: (b * c).abs() })
    }

    /// Bounds and Lipschitz constant are estimated by sampling `[u_min, u_max]`.
    pub fn expression(expr: Expr, u_min: f64, u_max: f64) -> Result<Self> {
        if expr.uses(Var::X) || expr.uses(Var::Y) || expr.uses(Var::Z) {
            return Err(Error::Data("the conductivity may only depend on u".into()));
        }
        if !(u_min < u_max) {
            return Err(Error::Argument(format!("empty sampling range [{u_min}, {u_max}]")));
        }
        let mut c = Self { law: ConductivityLaw::Expression(expr), sigma_lo: f64::INFINITY, sigma_hi: 0.0, lipschitz: 0.0 };
        for i in 0..EXPRESSION_SAMPLES {
            let u = u_min + (u_max - u_min) * i as f64 / (EXPRESSION_SAMPLES - 1) as f64;
            let (s, ds) = c.eval_checked(u)?;
            c.sigma_lo = c.sigma_lo.min(s);
            c.sigma_hi = c.sigma_hi.max(s);
            c.lipschitz = c.lipschitz.max(ds.abs());
        }
        if !(c.sigma_lo > 0.0) {
            return Err(Error::Data(format!("conductivity not positive on [{u_min}, {u_max}] (min {})", c.sigma_lo)));
        }
        log::warn!(
            "conductivity bounds [{}, {}] and Lipschitz constant {} are sampled estimates",
            c.sigma_lo,
            c.sigma_hi,
            c.lipschitz
        );
        Ok(c)
    }

    /// `sigma(u)` and `sigma'(u)`.
    #[inline]
    pub fn eval(&self, u: f64) -> (f64, f64) {
        match &self.law {
            ConductivityLaw::Constant(s) => (*s, 0.0),
            ConductivityLaw::Sigmoid { a, b, c } => {
                let t = (c * u).tanh();
                (a + b * t, b * c * (1.0 - t * t))
            }
            ConductivityLaw::Expression(e) => {
                let z = Dual::constant(0.0);
                let d = e.eval(&Vars { x: z, y: z, z, u: Dual::variable(u) });
                (d.v, d.d)
            }
        }
    }

    fn eval_checked(&self, u: f64) -> Result<(f64, f64)> {
        let (s, ds) = self.eval(u);
        if !s.is_finite() || !ds.is_finite() {
            return Err(Error::Data(format!("conductivity is not finite at u = {u}")));
        }
        Ok((s, ds))
    }

    /// Pointwise `sigma` and `sigma'` for a list of temperatures.
    pub fn sigma_eval(&self, u_vals: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut s = Vec::with_capacity(u_vals.len());
        let mut d = Vec::with_capacity(u_vals.len());
        for &u in u_vals {
            let (a, b) = self.eval_checked(u)?;
            s.push(a);
            d.push(b);
        }
        Ok((s, d))
    }

    /// Sampled `sup |sigma'| / sigma` over `[u_min, u_max]` (diagnostic only).
    pub fn log_derivative_bound(&self, u_min: f64, u_max: f64) -> f64 {
        (0..=1000)
            .map(|i| {
                let u = u_min + (u_max - u_min) * i as f64 / 1000.0;
                let (s, d) = self.eval(u);
                d.abs() / s
            })
            .fold(0.0, f64::max)
    }
}

/// A scalar field on the closure of the domain.
#[derive(Clone)]
pub enum Field {
    Expr(Expr),
    Fn(Arc<dyn Fn(&Point) -> f64 + Send + Sync>),
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Expr(e) => write!(f, "Field({e})"),
            Field::Fn(_) => f.write_str("Field(<fn>)"),
        }
    }
}

impl Field {
    pub fn constant(v: f64) -> Self {
        Field::Expr(Expr::Num(v))
    }

    pub fn parse(src: &str) -> Result<Self> {
        let e: Expr = src.parse()?;
        if e.uses(Var::U) {
            return Err(Error::Data(format!("`{src}` may not depend on u")));
        }
        Ok(Field::Expr(e))
    }

    #[inline]
    pub fn value(&self, p: &Point) -> f64 {
        match self {
            Field::Expr(e) => e.eval_at(p),
            Field::Fn(f) => f(p),
        }
    }

    /// Value and gradient. Closures are differentiated by central differences.
    pub fn value_grad(&self, p: &Point) -> (f64, [f64; 3]) {
        match self {
            Field::Expr(e) => {
                let j: Jet = e.jet_at(p);
                (j.v, j.g)
            }
            Field::Fn(f) => {
                let h = 1e-6;
                let mut g = [0.0; 3];
                for (k, gk) in g.iter_mut().enumerate() {
                    let mut a = *p;
                    let mut b = *p;
                    a[k] += h;
                    b[k] -= h;
                    *gk = (f(&a) - f(&b)) / (2.0 * h);
                }
                (f(p), g)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Field::Expr(Expr::Num(v)) if *v == 0.0)
    }
}

/// `h(x, n)` with the outward unit normal `n`.
pub type FluxFn = Arc<dyn Fn(&Point, &[f64; 3]) -> f64 + Send + Sync>;

/// Robin data `h`; may depend on the outward normal (manufactured solutions need this).
#[derive(Clone)]
pub enum RobinData {
    Field(Field),
    Flux(FluxFn),
}

impl fmt::Debug for RobinData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RobinData::Field(x) => x.fmt(f),
            RobinData::Flux(_) => f.write_str("Flux(<fn>)"),
        }
    }
}

impl RobinData {
    #[inline]
    pub fn value(&self, p: &Point, normal: &[f64; 3]) -> f64 {
        match self {
            RobinData::Field(f) => f.value(p),
            RobinData::Flux(f) => f(p, normal),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, RobinData::Field(f) if f.is_zero())
    }
}

/// Everything that defines one Joule heating problem apart from the mesh.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub conductivity: Conductivity,
    /// Dirichlet data of the potential, given on the whole domain.
    pub g_phi: Field,
    pub g_u: Field,
    pub h_robin: RobinData,
    pub kappa: Field,
    pub g_lo: f64,
    pub g_hi: f64,
    /// Volume sources, used by manufactured solutions.
    pub f_phi: Option<Field>,
    pub f_u: Option<Field>,
}

impl ProblemData {
    /// Problem with zero Robin data, zero `kappa`, no sources and bounds sampled from `g_phi`
    /// on the Dirichlet boundary of `mesh`.
    pub fn new(conductivity: Conductivity, g_phi: Field, g_u: Field, mesh: &Mesh) -> Result<Self> {
        let (g_lo, g_hi) = dirichlet_bounds(&g_phi, mesh);
        Ok(Self {
            conductivity,
            g_phi,
            g_u,
            h_robin: RobinData::Field(Field::constant(0.0)),
            kappa: Field::constant(0.0),
            g_lo,
            g_hi,
            f_phi: None,
            f_u: None,
        })
    }

    /// Resamples `g_lo`, `g_hi` from `g_phi` on the Dirichlet boundary of `mesh`.
    pub fn auto_bounds(&mut self, mesh: &Mesh) {
        let (lo, hi) = dirichlet_bounds(&self.g_phi, mesh);
        log::info!("Dirichlet bounds [{lo}, {hi}] estimated from boundary samples");
        self.g_lo = lo;
        self.g_hi = hi;
    }

    #[inline]
    pub fn cutoff(&self, f: f64, gphi_at_x: f64) -> f64 {
        cutoff(f, gphi_at_x, self.g_lo, self.g_hi)
    }

    /// Checks `kappa >= 0` on Robin facets and `g_lo <= g_phi <= g_hi` on Dirichlet facets,
    /// at facet quadrature nodes.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.g_lo > self.g_hi {
            return Err(Error::Data(format!("g_lo = {} exceeds g_hi = {}", self.g_lo, self.g_hi)));
        }
        let tol = 1e-10 * (1.0 + self.g_hi.abs().max(self.g_lo.abs()));
        for (p, tags) in facet_samples(mesh) {
            if tags.u == UTag::Robin {
                let k = self.kappa.value(&p);
                if !(k >= 0.0) {
                    return Err(Error::Data(format!("kappa = {k} < 0 at {p:?}")));
                }
            }
            if tags.phi == PhiTag::Dirichlet {
                let g = self.g_phi.value(&p);
                if !(g >= self.g_lo - tol && g <= self.g_hi + tol) {
                    return Err(Error::Data(format!(
                        "g_phi = {g} at {p:?} outside the declared bounds [{}, {}]",
                        self.g_lo, self.g_hi
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Boundary sample points: vertices and degree-4 quadrature nodes of every boundary facet.
fn facet_samples(mesh: &Mesh) -> Vec<(Point, crate::mesh::BoundaryTags)> {
    let rule = simplex_rule(mesh.dim() - 1, 4);
    let mut out = Vec::new();
    for f in mesh.boundary_facets() {
        let pts: Vec<Point> = mesh.facet_vertices(&f.vertices).iter().map(|&v| *mesh.vertex(v)).collect();
        for p in &pts {
            out.push((*p, f.tags));
        }
        for q in 0..rule.len() {
            let lam = rule.barycentric(q);
            let mut x = [0.0; 3];
            for (i, p) in pts.iter().enumerate() {
                for k in 0..3 {
                    x[k] += lam[i] * p[k];
                }
            }
            out.push((x, f.tags));
        }
    }
    out
}

fn dirichlet_bounds(g_phi: &Field, mesh: &Mesh) -> (f64, f64) {
    facet_samples(mesh)
        .iter()
        .filter(|(_, t)| t.phi == PhiTag::Dirichlet)
        .map(|(p, _)| g_phi.value(p))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoundaryTags;
    use proptest::prelude::*;

    #[test]
    fn cutoff_examples() {
        assert_eq!(cutoff(0.5, 0.2, 0.0, 1.0), 0.5);
        assert_eq!(cutoff(2.0, 0.0, 0.0, 1.0), 1.0);
        assert!((cutoff(-0.5, 0.3, 0.0, 1.0) + 0.3).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn cutoff_range_and_fixed_point(f in -10.0f64..10.0, g in -5.0f64..5.0, a in -3.0f64..3.0, w in 0.0f64..4.0) {
            let (lo, hi) = (a, a + w);
            let c = cutoff(f, g, lo, hi);
            prop_assert!(lo - g <= c + 1e-12 && c <= hi - g + 1e-12);
            prop_assert_eq!(cutoff(c, g, lo, hi), c);
            if lo <= f + g && f + g <= hi {
                prop_assert_eq!(c, f);
            }
        }
    }

    #[test]
    fn sigma_families() {
        let c = Conductivity::constant(1.0).unwrap();
        assert_eq!(c.sigma_eval(&[-3.0, 7.0]).unwrap(), (vec![1.0, 1.0], vec![0.0, 0.0]));
        let s = Conductivity::sigmoid(2.0, 1.0, 1.0).unwrap();
        assert_eq!(s.eval(0.0), (2.0, 1.0));
        assert!((s.eval(20.0).0 - 3.0).abs() < 1e-8);
        assert_eq!((s.sigma_lo, s.sigma_hi, s.lipschitz), (1.0, 3.0, 1.0));
        for i in -100..=100 {
            let v = s.eval(i as f64 * 0.37).0;
            assert!(v >= s.sigma_lo && v <= s.sigma_hi);
        }
        assert!(Conductivity::sigmoid(1.0, 2.0, 1.0).is_err());
        assert!(Conductivity::constant(0.0).is_err());
    }

    #[test]
    fn expression_conductivity() {
        let c = Conductivity::expression("2 + tanh(u)".parse().unwrap(), -5.0, 5.0).unwrap();
        let (s, d) = c.eval(0.0);
        assert!((s - 2.0).abs() < 1e-15 && (d - 1.0).abs() < 1e-15);
        assert!((c.lipschitz - 1.0).abs() < 1e-12);
        assert!(c.sigma_lo > 1.0 && c.sigma_hi < 3.0);
        let bad = Conductivity { law: ConductivityLaw::Expression("1/u".parse().unwrap()), ..c.clone() };
        assert!(matches!(bad.sigma_eval(&[0.0]), Err(Error::Data(_))));
        assert!(Conductivity::expression("x + u".parse().unwrap(), 0.0, 1.0).is_err());
        assert!(Conductivity::expression("u".parse().unwrap(), -1.0, 1.0).is_err());
    }

    #[test]
    fn bounds_and_validation() {
        let tagger = |c: &Point| {
            if c[0] < 1e-12 || c[0] > 1.0 - 1e-12 {
                BoundaryTags::ALL_DIRICHLET
            } else {
                BoundaryTags::new(PhiTag::Neumann, UTag::Robin)
            }
        };
        let mesh = Mesh::unit_box(2, 4, &tagger).unwrap();
        let mut data = ProblemData::new(
            Conductivity::constant(1.0).unwrap(),
            Field::parse("x + 0.5*y").unwrap(),
            Field::constant(0.0),
            &mesh,
        )
        .unwrap();
        assert!((data.g_lo - 0.0).abs() < 1e-15 && (data.g_hi - 1.5).abs() < 1e-15);
        data.validate(&mesh).unwrap();
        data.kappa = Field::constant(-1.0);
        assert!(matches!(data.validate(&mesh), Err(Error::Data(_))));
        data.kappa = Field::constant(1.0);
        data.g_hi = 1.0;
        assert!(matches!(data.validate(&mesh), Err(Error::Data(_))));
        assert!(Field::parse("u+x").is_err());
    }
}
