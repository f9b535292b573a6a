//! Acceptance checks. Runs every criterion, prints one line each and fails if any fails.
//!
//! `cargo test -p joulefem --test acceptance`

use std::sync::Arc;
use std::time::{Duration, Instant};

use joulefem::adapt::{adaptive_solve, bulk_goal, mark_dorfler, AdaptParams};
use joulefem::estimate::estimate;
use joulefem::mesh::{refine_uniform, BoundaryTags, Mesh, PhiTag, UTag};
use joulefem::problem::{cutoff, Conductivity, Field, ProblemData};
use joulefem::solver::{solve_joule, SolverParams, Spaces};
use joulefem::verify::{convergence_study, mms_problem, small_data_check, ConvergenceTable, ExactSolution, SmallDataConstants};
use joulefem::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Dirichlet for both fields on `x = 0` and `x = 1`, natural conditions elsewhere.
fn x_sides(c: &Point) -> BoundaryTags {
    if c[0] < 1e-12 || c[0] > 1.0 - 1e-12 {
        BoundaryTags::ALL_DIRICHLET
    } else {
        BoundaryTags::new(PhiTag::Neumann, UTag::Robin)
    }
}

fn tight() -> SolverParams {
    SolverParams { tol: 1e-10, ..Default::default() }
}

fn rates_within(r: &[f64], lo: f64, hi: f64) -> bool {
    r.iter().all(|v| (lo..=hi).contains(v))
}

fn fmt_rates(r: &[f64]) -> String {
    r.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------------------------------
// Decoupled benchmark: sigma = 1, phi = x, u = x (1 - x) / 2.

fn decoupled() -> (Spaces, ProblemData, joulefem::solver::PicardState, joulefem::solver::SolveReport) {
    let mesh = Arc::new(Mesh::unit_box(2, 4, &x_sides).unwrap());
    let data =
        ProblemData::new(Conductivity::constant(1.0).unwrap(), Field::parse("x").unwrap(), Field::constant(0.0), &mesh).unwrap();
    let spaces = Spaces::new(mesh, 1, 2).unwrap();
    let params = SolverParams { linear_tol: Some(1e-14), ..Default::default() };
    let (state, report) = solve_joule(&data, &spaces, &params).unwrap();
    (spaces, data, state, report)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let (_, _, state, report) = decoupled();
    let exact = ExactSolution::parse("x", "x*(1-x)/2").unwrap();
    let e = exact.errors(&state);
    let secs = t.elapsed().as_secs_f64();
    let pass = e.phi_h1 <= 1e-9 && e.u_h1 <= 1e-8 && report.converged && report.iterations <= 3 && secs < 5.0;
    outcome(
        pass,
        format!(
            "|phi - x|_H1 = {:.2e}, |u - x(1-x)/2|_H1 = {:.2e}, {} Picard iterations, {secs:.2} s",
            e.phi_h1, e.u_h1, report.iterations
        ),
    )
}

// ---------------------------------------------------------------------------------------
// Manufactured solution with sigmoid conductivity.

const MMS_PHI: &str = "x + 0.1*sin(pi*x)*cos(pi*y)";
const MMS_U: &str = "sin(pi*x)*(1 + y^2)/4";

fn mms(dim: usize, n: usize) -> (Mesh, ProblemData, ExactSolution) {
    let mesh = Mesh::unit_box(dim, n, &x_sides).unwrap();
    let exact = ExactSolution::parse(MMS_PHI, MMS_U).unwrap();
    let data = mms_problem(&exact, Conductivity::sigmoid(1.0, 0.5, 0.5).unwrap(), Field::constant(1.0), &mesh).unwrap();
    (mesh, data, exact)
}

fn mms_table(degree: usize) -> ConvergenceTable {
    let (mesh, data, exact) = mms(2, 4);
    convergence_study(&data, &exact, mesh, 4, (degree, degree), &tight()).unwrap()
}

fn criterion_2(p1: &ConvergenceTable, p2: &ConvergenceTable, study_time: Duration) -> Outcome {
    let t = Instant::now();
    let h1 = [p1.rates(|r| r.err_phi_h1), p1.rates(|r| r.err_u_h1)];
    let l2 = [p1.rates(|r| r.err_phi_l2), p1.rates(|r| r.err_u_l2)];
    let q2 = [p2.rates(|r| r.err_phi_h1), p2.rates(|r| r.err_u_h1)];
    let (mesh, data, exact) = mms(3, 2);
    let cube = convergence_study(&data, &exact, mesh, 2, (1, 1), &tight()).unwrap();
    let cube_err: Vec<f64> = cube.rows.iter().map(|r| r.err_phi_h1.hypot(r.err_u_h1)).collect();
    let secs = (t.elapsed() + study_time).as_secs_f64();
    let pass = p1.rows.len() == 4
        && p2.rows.len() == 4
        && h1.iter().all(|r| rates_within(r, 0.85, 1.2))
        && l2.iter().all(|r| rates_within(r, 1.7, 2.3))
        && q2.iter().all(|r| rates_within(r, 1.8, 2.3))
        && cube_err.len() == 2
        && cube_err[1] < cube_err[0]
        && secs < 180.0;
    outcome(
        pass,
        format!(
            "P1 H1 [{}] / [{}], P1 L2 [{}] / [{}], P2 H1 [{}] / [{}], 3D X error {:.3e} -> {:.3e}, {secs:.1} s",
            fmt_rates(&h1[0]),
            fmt_rates(&h1[1]),
            fmt_rates(&l2[0]),
            fmt_rates(&l2[1]),
            fmt_rates(&q2[0]),
            fmt_rates(&q2[1]),
            cube_err.first().copied().unwrap_or(f64::NAN),
            cube_err.get(1).copied().unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_3(p1: &ConvergenceTable) -> Outcome {
    let eff: Vec<f64> = p1.rows.iter().map(|r| r.effectivity).collect();
    let lo = eff.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eff.iter().copied().fold(0.0, f64::max);
    let pass = !eff.is_empty() && eff.iter().all(|e| (0.05..=50.0).contains(e)) && hi / lo < 3.0;
    outcome(pass, format!("effectivity [{}], spread {:.3}", fmt_rates(&eff), hi / lo))
}

fn criterion_4() -> Outcome {
    let (_, data, state, _) = decoupled();
    let r = estimate(&state.phi, &state.u, &data).unwrap();
    outcome(r.weighted_total <= 1e-8, format!("estimator total {:.3e}", r.weighted_total))
}

// ---------------------------------------------------------------------------------------
// L-shaped domain. phi = 1 on the top edge, phi = 0 on the edge leaving the re-entrant
// corner along y = 0, insulated elsewhere; the condition changes type at the corner.

fn l_tags(c: &Point) -> BoundaryTags {
    let u = UTag::Dirichlet;
    if c[1] > 1.0 - 1e-12 || (c[1].abs() < 1e-12 && c[0] > 0.0) {
        BoundaryTags::new(PhiTag::Dirichlet, u)
    } else {
        BoundaryTags::new(PhiTag::Neumann, u)
    }
}

fn l_problem(mesh: &Mesh) -> ProblemData {
    ProblemData::new(Conductivity::sigmoid(1.0, 0.5, 0.5).unwrap(), Field::parse("y").unwrap(), Field::constant(0.0), mesh)
        .unwrap()
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let mesh0 = Mesh::l_shape(2, &l_tags).unwrap();
    let data = l_problem(&mesh0);
    let params = SolverParams { tol: 1e-8, ..Default::default() };
    let mut uniform = Vec::new();
    let mut mesh = mesh0.clone();
    for level in 0..6 {
        if level > 0 {
            mesh = refine_uniform(&mesh).unwrap();
        }
        let spaces = Spaces::new(Arc::new(mesh.clone()), 1, 1).unwrap();
        let (state, report) = solve_joule(&data, &spaces, &params).unwrap();
        assert!(report.converged);
        let est = estimate(&state.phi, &state.u, &data).unwrap();
        uniform.push((spaces.ndofs(), est.weighted_total));
    }
    let (uniform_dofs, target) = *uniform.last().unwrap();
    let adapt = AdaptParams { theta: 0.5, max_levels: 60, target, solver: params, degrees: (1, 1) };
    let history = adaptive_solve(&data, mesh0, &adapt, None, |_| Ok(())).unwrap();
    let last = history.levels.last().unwrap();
    let adaptive_dofs = last.ndofs_phi + last.ndofs_u;
    let reached = last.estimator_total <= target;
    let ratio = adaptive_dofs as f64 / uniform_dofs as f64;
    let secs = t.elapsed().as_secs_f64();
    let trail: Vec<String> = uniform.iter().map(|(n, e)| format!("{n}:{e:.3e}")).collect();
    outcome(
        reached && ratio <= 0.7 && !history.failed && secs < 120.0,
        format!(
            "target {target:.4e}: uniform {uniform_dofs} dofs, adaptive {adaptive_dofs} dofs after {} levels (ratio {ratio:.3}); uniform [{}], {secs:.1} s",
            history.levels.len(),
            trail.join(" ")
        ),
    )
}

fn criterion_6(p1: &ConvergenceTable) -> Outcome {
    let o: Vec<f64> = p1.rows.iter().map(|r| r.overshoot).collect();
    // An absolute floor of 1e-12 separates rounding from genuine overshoot.
    let pass = o.len() == 4 && o.windows(2).all(|w| w[1] <= 1.1 * w[0] + 1e-12);
    outcome(pass, format!("nodal overshoot [{}]", o.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(" ")))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = 0usize;
    let mut clamped = 0usize;
    for _ in 0..100_000 {
        let g: f64 = rng.gen_range(-5.0..5.0);
        let lo: f64 = rng.gen_range(-3.0..3.0);
        let hi = lo + rng.gen_range(0.0..4.0);
        // Half of the samples land inside the clamp window.
        let f: f64 = if rng.gen_bool(0.5) { lo - g + rng.gen_range(0.0..=1.0) * (hi - lo) } else { rng.gen_range(-10.0..10.0) };
        let c = cutoff(f, g, lo, hi);
        let range_ok = c + g >= lo - 1e-12 && c + g <= hi + 1e-12;
        let inside = (lo..=hi).contains(&(f + g));
        let fixed_ok = !inside || c == f;
        let idem_ok = cutoff(c, g, lo, hi) == c;
        if !inside {
            clamped += 1;
        }
        if !(range_ok && fixed_ok && idem_ok) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("100000 triples ({clamped} clamped), {bad} violations"))
}

fn criterion_8(p1: &ConvergenceTable) -> Outcome {
    let m: Vec<f64> = p1.rows.iter().map(|r| r.max_iterate_norm).collect();
    let bound = m.iter().copied().fold(0.0, f64::max);
    let pass = m.len() == 4 && m[3] <= 1.2 * m[0];
    outcome(pass, format!("per-level max [{}], bound {bound:.4}", fmt_rates(&m)))
}

fn criterion_9() -> Outcome {
    let (_, data, state, _) = decoupled();
    let with = |c7: f64| small_data_check(&state.phi, &data, &SmallDataConstants { c7: Some(c7), ..Default::default() }).unwrap();
    let a = with(0.25);
    let c6_ok = (a.c6 - 5.0).abs() <= 1e-12;
    let c5_ok = (a.c5 - 1.0).abs() <= 1e-12;
    let mut linear = true;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let c7: f64 = rng.gen_range(0.0..10.0);
        let r = with(c7);
        linear &= (r.c5 - c7 * a.c5 / 0.25).abs() <= 4.0 * f64::EPSILON * r.c5.max(1.0) && r.c6 == a.c6;
    }
    linear &= with(0.5).c5 == 2.0 * a.c5;
    outcome(c6_ok && c5_ok && linear, format!("C6 = {:.15}, C5(0.25) = {:.15}, linear in C7: {linear}", a.c6, a.c5))
}

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

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut bad = 0usize;
    for _ in 0..200 {
        let n = rng.gen_range(1..=12);
        let per: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..1.0) }).collect();
        let theta: f64 = rng.gen_range(0.0..=1.0);
        let marked = mark_dorfler(&per, theta).unwrap();
        let total: f64 = per.iter().sum();
        let mass: f64 = marked.iter().map(|&c| per[c]).sum();
        if marked.len() != brute_force_min(&per, theta) || (total > 0.0 && mass < bulk_goal(total, theta)) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("200 instances, {bad} disagreements"))
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n:>2}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(n);
        }
    };
    report(1, criterion_1());
    let t = Instant::now();
    let p1 = mms_table(1);
    let p2 = mms_table(2);
    report(2, criterion_2(&p1, &p2, t.elapsed()));
    report(3, criterion_3(&p1));
    report(4, criterion_4());
    report(5, criterion_5());
    report(6, criterion_6(&p1));
    report(7, criterion_7());
    report(8, criterion_8(&p1));
    report(9, criterion_9());
    report(10, criterion_10());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
