//! Run configuration: a TOML document with one table per concern.
//!
//! ```toml
//! [mesh]
//! dim = 2
//! builtin = "box"          # or "lshape"; alternatively file = "domain.msh"
//! n = 8
//!
//! [boundary]
//! phi_dirichlet = ["x", "x - 1"]   # a facet matches when |expr(centroid)| <= 1e-9
//! u_dirichlet = ["x", "x - 1"]     # unmatched facets: Neumann for phi, Robin for u
//!
//! [conductivity]
//! kind = "sigmoid"         # "constant" (value), "sigmoid" (a, b, c), "expression" (expr, u_min, u_max)
//! a = 1.0
//! b = 0.5
//! c = 0.5
//!
//! [data]
//! g_phi = "x"
//! g_u = "0"
//! ```
//!
//! Overrides `key.path=value` are applied to the parsed document before validation; values
//! are read as TOML and fall back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptParams;
use crate::expr::{Expr, Var};
use crate::mesh::{read_gmsh, BoundaryTags, GmshTagMap, Mesh, PhiTag, UTag};
use crate::problem::{Conductivity, Field, ProblemData, RobinData};
use crate::solver::SolverParams;
use crate::verify::{mms_problem, ExactSolution, SmallDataConstants};
use crate::{Error, Point, Result};

/// Distance below which a boundary predicate counts as satisfied.
pub const PREDICATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub space: SpaceConfig,
    #[serde(default)]
    pub conductivity: ConductivityConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mms: Option<MmsConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

fn default_dim() -> usize {
    2
}

fn default_n() -> usize {
    8
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(default)]
    pub phi_dirichlet: Vec<String>,
    #[serde(default)]
    pub u_dirichlet: Vec<String>,
    /// Tags for Gmsh physical groups.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub id: i64,
    /// `"dirichlet"` or `"neumann"`
    pub phi: String,
    /// `"dirichlet"` or `"robin"`
    pub u: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default = "one")]
    pub l: usize,
}

fn one() -> usize {
    1
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self { k: 1, l: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ConductivityConfig {
    Constant { value: f64 },
    Sigmoid { a: f64, b: f64, c: f64 },
    Expression { expr: String, u_min: f64, u_max: f64 },
}

impl Default for ConductivityConfig {
    fn default() -> Self {
        ConductivityConfig::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "zero_expr")]
    pub g_phi: String,
    #[serde(default = "zero_expr")]
    pub g_u: String,
    #[serde(default = "zero_expr")]
    pub h: String,
    #[serde(default = "zero_expr")]
    pub kappa: String,
    /// Omitted bounds are sampled from `g_phi` on the Dirichlet boundary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_hi: Option<f64>,
}

fn zero_expr() -> String {
    "0".into()
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { g_phi: zero_expr(), g_u: zero_expr(), h: zero_expr(), kappa: zero_expr(), g_lo: None, g_hi: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_maxit")]
    pub maxit: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_tol: Option<f64>,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_maxit() -> usize {
    50
}

fn default_damping() -> f64 {
    1.0
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: default_tol(), maxit: default_maxit(), damping: default_damping(), linear_tol: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_levels")]
    pub max_levels: usize,
    #[serde(default)]
    pub target: f64,
}

fn default_theta() -> f64 {
    0.5
}

fn default_levels() -> usize {
    8
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self { theta: default_theta(), max_levels: default_levels(), target: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_study_levels")]
    pub levels: usize,
}

fn default_study_levels() -> usize {
    4
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { levels: default_study_levels() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmsConfig {
    pub exact_phi: String,
    pub exact_u: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c7: Option<f64>,
    #[serde(default = "default_c")]
    pub c8: f64,
    #[serde(default = "default_c")]
    pub c9: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_c() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.5
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { c7: None, c8: 1.0, c9: 1.0, delta: 0.5 }
    }
}

fn config_err(key: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {e}"))
}

fn parse_field(key: &str, src: &str) -> Result<Field> {
    Field::parse(src).map_err(|e| config_err(key, e))
}

/// Keys whose values are always strings, so that `data.g_u=0` stays an expression.
const STRING_KEYS: &[&str] = &["g_phi", "g_u", "h", "kappa", "exact_phi", "exact_u", "expr", "builtin", "file", "output", "kind"];

/// Applies `a.b.c=value` to a TOML table, creating intermediate tables.
fn apply_override(doc: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override `{item}` has an empty key")));
    }
    let raw = raw.trim();
    let leaf = path[path.len() - 1];
    let value = if STRING_KEYS.contains(&leaf) {
        toml::Value::String(raw.trim_matches('"').to_string())
    } else {
        format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()))
    };
    let mut table = doc;
    for part in &path[..path.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{item}`: `{part}` is not a table")))?;
    }
    table.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses a configuration and applies overrides. Relative mesh paths are resolved
    /// against `base_dir`.
    pub fn from_toml_str(text: &str, overrides: &[String], base_dir: Option<&Path>) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig =
            RunConfig::deserialize(toml::Value::Table(doc)).map_err(|e| Error::Config(e.to_string()))?;
        if let (Some(file), Some(base)) = (&cfg.mesh.file, base_dir) {
            let p = PathBuf::from(file);
            if p.is_relative() {
                cfg.mesh.file = Some(base.join(p).to_string_lossy().into_owned());
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Static checks that do not need the mesh.
    pub fn check(&self) -> Result<()> {
        match (&self.mesh.builtin, &self.mesh.file) {
            (Some(_), Some(_)) => return Err(Error::Config("mesh: give either `builtin` or `file`, not both".into())),
            (None, None) => return Err(Error::Config("mesh: one of `builtin` or `file` is required".into())),
            (Some(b), None) if b != "box" && b != "lshape" => {
                return Err(Error::Config(format!("mesh.builtin: unknown mesh `{b}` (expected box or lshape)")))
            }
            (None, Some(f)) if !Path::new(f).exists() => {
                return Err(Error::Config(format!("mesh.file: {f} does not exist")))
            }
            _ => {}
        }
        if self.mesh.builtin.as_deref() == Some("lshape") && self.mesh.dim != 2 {
            return Err(Error::Config("mesh: the L-shaped domain is two-dimensional".into()));
        }
        for (i, p) in self.boundary.phi_dirichlet.iter().enumerate() {
            parse_field(&format!("boundary.phi_dirichlet[{i}]"), p)?;
        }
        for (i, p) in self.boundary.u_dirichlet.iter().enumerate() {
            parse_field(&format!("boundary.u_dirichlet[{i}]"), p)?;
        }
        for g in &self.boundary.groups {
            group_tags(g)?;
        }
        for (key, src) in
            [("data.g_phi", &self.data.g_phi), ("data.g_u", &self.data.g_u), ("data.h", &self.data.h), ("data.kappa", &self.data.kappa)]
        {
            parse_field(key, src)?;
        }
        if let ConductivityConfig::Expression { expr, .. } = &self.conductivity {
            expr.parse::<Expr>().map_err(|e| config_err("conductivity.expr", e))?;
        }
        if let Some(m) = &self.mms {
            parse_field("mms.exact_phi", &m.exact_phi)?;
            parse_field("mms.exact_u", &m.exact_u)?;
        }
        Ok(())
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        let phi_rules = self.predicates(&self.boundary.phi_dirichlet)?;
        let u_rules = self.predicates(&self.boundary.u_dirichlet)?;
        let hits = |rules: &[Expr], c: &Point| rules.iter().any(|e| e.eval_at(c).abs() <= PREDICATE_TOL);
        if let Some(file) = &self.mesh.file {
            let text = std::fs::read_to_string(file).map_err(|e| Error::Config(format!("mesh.file: {file}: {e}")))?;
            let mut map = GmshTagMap { default: BoundaryTags::new(PhiTag::Neumann, UTag::Robin), ..Default::default() };
            for g in &self.boundary.groups {
                map.groups.insert(g.id, group_tags(g)?);
            }
            let mesh = read_gmsh(&text, &map)?;
            if mesh.dim() != self.mesh.dim {
                return Err(Error::Config(format!("mesh.dim = {} but {file} is {}-dimensional", self.mesh.dim, mesh.dim())));
            }
            if phi_rules.is_empty() && u_rules.is_empty() {
                return Ok(mesh);
            }
            return mesh.retag(&|f, c| {
                let mut t = f.tags;
                if hits(&phi_rules, c) {
                    t.phi = PhiTag::Dirichlet;
                }
                if hits(&u_rules, c) {
                    t.u = UTag::Dirichlet;
                }
                t
            });
        }
        let tagger = |c: &Point| {
            BoundaryTags::new(
                if hits(&phi_rules, c) { PhiTag::Dirichlet } else { PhiTag::Neumann },
                if hits(&u_rules, c) { UTag::Dirichlet } else { UTag::Robin },
            )
        };
        match self.mesh.builtin.as_deref() {
            Some("lshape") => Mesh::l_shape(self.mesh.n, &tagger),
            _ => Mesh::unit_box(self.mesh.dim, self.mesh.n, &tagger),
        }
    }

    fn predicates(&self, rules: &[String]) -> Result<Vec<Expr>> {
        rules
            .iter()
            .map(|r| {
                let e: Expr = r.parse().map_err(|e| config_err("boundary", e))?;
                if e.uses(Var::U) {
                    return Err(Error::Config(format!("boundary: predicate `{r}` may not depend on u")));
                }
                Ok(e)
            })
            .collect()
    }

    pub fn conductivity(&self) -> Result<Conductivity> {
        let c = match &self.conductivity {
            ConductivityConfig::Constant { value } => Conductivity::constant(*value),
            ConductivityConfig::Sigmoid { a, b, c } => Conductivity::sigmoid(*a, *b, *c),
            ConductivityConfig::Expression { expr, u_min, u_max } => {
                let e: Expr = expr.parse().map_err(|e| config_err("conductivity.expr", e))?;
                Conductivity::expression(e, *u_min, *u_max)
            }
        };
        c.map_err(|e| config_err("conductivity", e))
    }

    /// Problem data on `mesh`, plus the exact solution when an `[mms]` table is present.
    pub fn build_data(&self, mesh: &Mesh) -> Result<(ProblemData, Option<ExactSolution>)> {
        let conductivity = self.conductivity()?;
        let kappa = parse_field("data.kappa", &self.data.kappa)?;
        let (mut data, exact) = match &self.mms {
            Some(m) => {
                let exact = ExactSolution::parse(&m.exact_phi, &m.exact_u).map_err(|e| config_err("mms", e))?;
                (mms_problem(&exact, conductivity, kappa, mesh)?, Some(exact))
            }
            None => {
                let mut d = ProblemData::new(
                    conductivity,
                    parse_field("data.g_phi", &self.data.g_phi)?,
                    parse_field("data.g_u", &self.data.g_u)?,
                    mesh,
                )?;
                d.kappa = kappa;
                d.h_robin = RobinData::Field(parse_field("data.h", &self.data.h)?);
                (d, None)
            }
        };
        if let Some(lo) = self.data.g_lo {
            data.g_lo = lo;
        }
        if let Some(hi) = self.data.g_hi {
            data.g_hi = hi;
        }
        data.validate(mesh)?;
        Ok((data, exact))
    }

    pub fn solver_params(&self) -> SolverParams {
        SolverParams {
            tol: self.solver.tol,
            maxit: self.solver.maxit,
            damping: self.solver.damping,
            linear_tol: self.solver.linear_tol,
            linear_maxit: None,
        }
    }

    pub fn adapt_params(&self) -> AdaptParams {
        AdaptParams {
            theta: self.adapt.theta,
            max_levels: self.adapt.max_levels,
            target: self.adapt.target,
            solver: self.solver_params(),
            degrees: (self.space.k, self.space.l),
        }
    }

    pub fn small_data_constants(&self) -> SmallDataConstants {
        SmallDataConstants { c7: self.verify.c7, c8: self.verify.c8, c9: self.verify.c9, delta: self.verify.delta }
    }
}

fn group_tags(g: &GroupConfig) -> Result<BoundaryTags> {
    let phi = match g.phi.as_str() {
        "dirichlet" => PhiTag::Dirichlet,
        "neumann" => PhiTag::Neumann,
        other => return Err(Error::Config(format!("boundary.groups id {}: unknown phi tag `{other}`", g.id))),
    };
    let u = match g.u.as_str() {
        "dirichlet" => UTag::Dirichlet,
        "robin" => UTag::Robin,
        other => return Err(Error::Config(format!("boundary.groups id {}: unknown u tag `{other}`", g.id))),
    };
    Ok(BoundaryTags::new(phi, u))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BENCH: &str = r#"
[mesh]
builtin = "box"
n = 4

[boundary]
phi_dirichlet = ["x", "x - 1"]
u_dirichlet = ["x", "x - 1"]

[space]
l = 2

[data]
g_phi = "x"
"#;

    #[test]
    fn parse_defaults_and_build() {
        let cfg = RunConfig::from_toml_str(BENCH, &[], None).unwrap();
        assert_eq!(cfg.space, SpaceConfig { k: 1, l: 2 });
        assert_eq!(cfg.conductivity, ConductivityConfig::Constant { value: 1.0 });
        assert_eq!(cfg.solver, SolverConfig::default());
        let mesh = cfg.build_mesh().unwrap();
        let sets = mesh.facet_sets().unwrap();
        assert_eq!((sets.dirichlet_phi.len(), sets.neumann_phi.len(), sets.robin_u.len()), (8, 8, 8));
        let (data, exact) = cfg.build_data(&mesh).unwrap();
        assert!(exact.is_none());
        assert_eq!((data.g_lo, data.g_hi), (0.0, 1.0));
    }

    #[test]
    fn overrides() {
        let o = vec![
            "solver.tol=1e-6".to_string(),
            "conductivity.kind=sigmoid".into(),
            "conductivity.a=1".into(),
            "conductivity.b=0.5".into(),
            "conductivity.c=0.25".into(),
            "data.g_u = 0.5*y".into(),
            "mesh.n=3".into(),
        ];
        let cfg = RunConfig::from_toml_str(BENCH, &o, None).unwrap();
        assert_eq!(cfg.solver.tol, 1e-6);
        assert_eq!(cfg.mesh.n, 3);
        assert_eq!(cfg.data.g_u, "0.5*y");
        assert_eq!(cfg.conductivity, ConductivityConfig::Sigmoid { a: 1.0, b: 0.5, c: 0.25 });
        assert!(matches!(RunConfig::from_toml_str(BENCH, &["nokey".into()], None), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml_str(BENCH, &["mesh.n.x=1".into()], None), Err(Error::Config(_))));
    }

    #[test]
    fn echo_round_trip() {
        let o = vec!["mms.exact_phi=x".to_string(), "mms.exact_u=0".into(), "solver.linear_tol=1e-11".into()];
        let cfg = RunConfig::from_toml_str(BENCH, &o, None).unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml(), &[], None).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn config_errors_name_the_key() {
        let bad = BENCH.replace("g_phi = \"x\"", "g_phi = \"x+*y\"");
        match RunConfig::from_toml_str(&bad, &[], None) {
            Err(Error::Config(m)) => assert!(m.contains("data.g_phi") && m.contains("position 2"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::from_toml_str("[mesh]\nn = 2\n", &[], None), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml_str(&BENCH.replace("\"box\"", "\"disc\""), &[], None),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::from_toml_str(&format!("{BENCH}\nbogus = 1\n"), &[], None), Err(Error::Config(_))));
        let missing = BENCH.replace("builtin = \"box\"", "file = \"nowhere.msh\"");
        assert!(matches!(RunConfig::from_toml_str(&missing, &[], None), Err(Error::Config(_))));
    }

    #[test]
    fn empty_dirichlet_potential_is_a_mesh_error() {
        let cfg = RunConfig::from_toml_str(&BENCH.replace("phi_dirichlet = [\"x\", \"x - 1\"]", ""), &[], None).unwrap();
        assert!(matches!(cfg.build_mesh(), Err(Error::Mesh(_))));
    }
}
