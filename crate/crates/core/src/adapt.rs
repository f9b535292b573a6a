//! Bulk marking and the solve-estimate-mark-refine loop.

use std::sync::Arc;

use crate::estimate::{estimate, EstimatorReport};
use crate::mesh::{refine, Mesh};
use crate::problem::ProblemData;
use crate::solver::{PicardSolver, PicardState, SolveReport, SolverParams, Spaces};
use crate::{Error, Result};

/// Smallest set of cells whose mass reaches `theta` times the total, chosen greedily by
/// descending mass with ties broken by the lower cell id. Cells without mass are never
/// marked. The result is sorted by cell id.
pub fn mark_dorfler(per_cell: &[f64], theta: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Argument(format!("theta must lie in [0, 1], got {theta}")));
    }
    if let Some(i) = per_cell.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Argument(format!("indicator of cell {i} is {} (must be finite and nonnegative)", per_cell[i])));
    }
    let total: f64 = per_cell.iter().sum();
    if total == 0.0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..per_cell.len()).filter(|&c| per_cell[c] > 0.0).collect();
    order.sort_by(|&a, &b| per_cell[b].total_cmp(&per_cell[a]).then(a.cmp(&b)));
    let goal = bulk_goal(total, theta);
    let mut marked = Vec::new();
    let mut acc = 0.0;
    for c in order {
        marked.push(c);
        acc += per_cell[c];
        if acc >= goal {
            break;
        }
    }
    marked.sort_unstable();
    Ok(marked)
}

/// Mass a marked set must reach. The relative slack absorbs summation-order rounding, so
/// that `theta = 1` is met by the set of all cells with mass.
pub fn bulk_goal(total: f64, theta: f64) -> f64 {
    theta * total * (1.0 - 1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptParams {
    pub theta: f64,
    /// Number of solves, at least one.
    pub max_levels: usize,
    pub target: f64,
    pub solver: SolverParams,
    /// Degrees of the potential and temperature spaces.
    pub degrees: (usize, usize),
}

impl Default for AdaptParams {
    fn default() -> Self {
        Self { theta: 0.5, max_levels: 8, target: 0.0, solver: SolverParams::default(), degrees: (1, 1) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub level: usize,
    pub num_cells: usize,
    pub ndofs_phi: usize,
    pub ndofs_u: usize,
    pub estimator_total: f64,
    /// X-norm error, when an exact solution is known.
    pub error_h1: Option<f64>,
    pub picard_iterations: usize,
    pub converged: bool,
    /// Shape regularity of the level mesh.
    pub gamma: f64,
    pub max_iterate_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct AdaptHistory {
    pub levels: Vec<LevelRecord>,
    /// Set when the Picard iteration failed to converge; the history stops at that level.
    pub failed: bool,
}

impl AdaptHistory {
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "level,cells,ndofs_phi,ndofs_u,estimator_total,error_h1,picard_iterations,converged,gamma")?;
        for r in &self.levels {
            let err = r.error_h1.map(|e| format!("{e:e}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{:e},{},{},{},{:e}",
                r.level, r.num_cells, r.ndofs_phi, r.ndofs_u, r.estimator_total, err, r.picard_iterations, r.converged, r.gamma
            )?;
        }
        Ok(())
    }
}

/// Everything produced at one level, handed to the observer of [`adaptive_solve`].
pub struct LevelOutput<'a> {
    pub record: &'a LevelRecord,
    pub spaces: &'a Spaces,
    pub state: &'a PicardState,
    pub report: &'a SolveReport,
    pub estimator: &'a EstimatorReport,
}

/// Runs `solve; estimate; record; stop?; mark; refine` starting from `mesh`. The loop stops
/// once the estimator total is at most `params.target`, after `max_levels` solves, or when
/// the Picard iteration does not converge (then `failed` is set). `error` computes the
/// X-norm error of a level solution when an exact solution is available; `observer` sees
/// every level, e.g. to write artifacts.
pub fn adaptive_solve(
    data: &ProblemData,
    mesh: Mesh,
    params: &AdaptParams,
    error: Option<&dyn Fn(&PicardState) -> f64>,
    mut observer: impl FnMut(&LevelOutput<'_>) -> Result<()>,
) -> Result<AdaptHistory> {
    if params.max_levels == 0 {
        return Err(Error::Argument("max_levels must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&params.theta) {
        return Err(Error::Argument(format!("theta must lie in [0, 1], got {}", params.theta)));
    }
    let mut history = AdaptHistory::default();
    let mut mesh = Arc::new(mesh);
    for level in 0..params.max_levels {
        let spaces = Spaces::new(mesh.clone(), params.degrees.0, params.degrees.1)?;
        let solver = PicardSolver::new(data, spaces.clone(), params.solver.clone())?;
        let (state, report) = solver.solve()?;
        let est = estimate(&state.phi, &state.u, data)?;
        let record = LevelRecord {
            level,
            num_cells: mesh.num_cells(),
            ndofs_phi: spaces.phi.ndofs(),
            ndofs_u: spaces.u.ndofs(),
            estimator_total: est.weighted_total,
            error_h1: error.map(|e| e(&state)),
            picard_iterations: report.iterations,
            converged: report.converged,
            gamma: mesh.shape_regularity()?,
            max_iterate_norm: report.max_iterate_norm(),
        };
        log::info!(
            "level {level}: {} cells, {} dofs, estimator {:.4e}",
            record.num_cells,
            record.ndofs_phi + record.ndofs_u,
            record.estimator_total
        );
        observer(&LevelOutput { record: &record, spaces: &spaces, state: &state, report: &report, estimator: &est })?;
        history.levels.push(record);
        if !report.converged {
            history.failed = true;
            break;
        }
        if est.weighted_total <= params.target || level + 1 == params.max_levels {
            break;
        }
        let marked = mark_dorfler(&est.per_cell_total, params.theta)?;
        if marked.is_empty() {
            break;
        }
        mesh = Arc::new(refine(&mesh, &marked)?);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundaryTags, PhiTag, UTag};
    use crate::problem::{Conductivity, Field};
    use crate::Point;
    use proptest::prelude::*;

    /// Minimal cardinality of a nonempty subset reaching the bulk goal, by enumeration.
    fn brute_force_min(per: &[f64], theta: f64) -> usize {
        let total: f64 = per.iter().sum();
        if total == 0.0 {
            return 0;
        }
        let goal = bulk_goal(total, theta);
        (1u32..1 << per.len())
            .filter(|m| (0..per.len()).filter(|i| m & (1 << i) != 0).map(|i| per[i]).sum::<f64>() >= goal)
            .map(|m| m.count_ones() as usize)
            .min()
            .unwrap()
    }

    #[test]
    fn examples() {
        assert_eq!(mark_dorfler(&[4.0, 2.0, 1.0, 1.0], 0.6).unwrap(), vec![0, 1]);
        assert_eq!(brute_force_min(&[4.0, 2.0, 1.0, 1.0], 0.6), 2);
        assert_eq!(mark_dorfler(&[0.5, 0.0, 0.25, 0.1], 1.0).unwrap(), vec![0, 2, 3]);
        assert!(mark_dorfler(&[0.0, 0.0], 0.5).unwrap().is_empty());
        assert_eq!(mark_dorfler(&[1.0, 3.0, 3.0], 0.0).unwrap(), vec![1]);
        assert!(matches!(mark_dorfler(&[1.0, -1.0], 0.5), Err(Error::Argument(_))));
        assert!(matches!(mark_dorfler(&[1.0], 1.5), Err(Error::Argument(_))));
    }

    proptest! {
        #[test]
        fn greedy_is_minimal_and_deterministic(per in prop::collection::vec(0.0f64..1.0, 1..=10), theta in 0.0f64..=1.0) {
            let m = mark_dorfler(&per, theta).unwrap();
            prop_assert_eq!(&m, &mark_dorfler(&per, theta).unwrap());
            prop_assert_eq!(m.len(), brute_force_min(&per, theta));
            let total: f64 = per.iter().sum();
            let goal = bulk_goal(total, theta);
            let mass: f64 = m.iter().map(|&c| per[c]).sum();
            prop_assert!(mass >= goal);
            for skip in 0..m.len() * usize::from(m.len() > 1) {
                let reduced: f64 = m.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &c)| per[c]).sum();
                prop_assert!(reduced < goal);
            }
        }
    }

    fn sides(c: &Point) -> BoundaryTags {
        if c[0] < 1e-12 || c[0] > 1.0 - 1e-12 {
            BoundaryTags::ALL_DIRICHLET
        } else {
            BoundaryTags::new(PhiTag::Neumann, UTag::Robin)
        }
    }

    #[test]
    fn infinite_target_gives_one_level() {
        let mesh = Mesh::unit_box(2, 2, &sides).unwrap();
        let data =
            ProblemData::new(Conductivity::constant(1.0).unwrap(), Field::parse("x").unwrap(), Field::constant(0.0), &mesh).unwrap();
        let params = AdaptParams { target: f64::INFINITY, ..Default::default() };
        let h = adaptive_solve(&data, mesh, &params, None, |_| Ok(())).unwrap();
        assert_eq!(h.levels.len(), 1);
        assert!(!h.failed);
    }

    #[test]
    fn smooth_problem_estimator_decreases() {
        let mesh = Mesh::unit_box(2, 2, &sides).unwrap();
        let data = ProblemData::new(
            Conductivity::sigmoid(1.0, 0.5, 0.5).unwrap(),
            Field::parse("x").unwrap(),
            Field::constant(0.0),
            &mesh,
        )
        .unwrap();
        let params = AdaptParams { max_levels: 5, ..Default::default() };
        let mut seen = 0;
        let h = adaptive_solve(&data, mesh, &params, None, |out| {
            assert_eq!(out.record.level, seen);
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(h.levels.len(), 5);
        let g0 = h.levels[0].gamma;
        for w in h.levels.windows(2) {
            assert!(w[1].estimator_total < w[0].estimator_total, "{:?}", h.levels);
            assert!(w[1].ndofs_u >= w[0].ndofs_u && w[1].level > w[0].level);
            assert!(w[1].gamma <= 2.0 * g0);
        }
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }

    #[test]
    fn non_convergence_truncates_history() {
        let mesh = Mesh::unit_box(2, 2, &sides).unwrap();
        let data = ProblemData::new(
            Conductivity::sigmoid(1.0, 0.5, 2.0).unwrap(),
            Field::parse("x").unwrap(),
            Field::constant(0.0),
            &mesh,
        )
        .unwrap();
        let params = AdaptParams { max_levels: 4, solver: SolverParams { maxit: 1, ..Default::default() }, ..Default::default() };
        let h = adaptive_solve(&data, mesh, &params, None, |_| Ok(())).unwrap();
        assert!(h.failed);
        assert_eq!(h.levels.len(), 1);
    }
}
