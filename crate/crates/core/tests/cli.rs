use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use joulefem::config::RunConfig;

const DECOUPLED: &str = r#"
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

const MMS: &str = r#"
[mesh]
builtin = "box"
n = 4

[boundary]
phi_dirichlet = ["x", "x - 1"]
u_dirichlet = ["x", "x - 1"]

[conductivity]
kind = "sigmoid"
a = 1.0
b = 0.5
c = 0.5

[data]
kappa = "1"

[solver]
tol = 1e-10

[study]
levels = 4

[mms]
exact_phi = "x + 0.1*sin(pi*x)*cos(pi*y)"
exact_u = "sin(pi*x)*(1 + y^2)/4"
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn joulefem(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_joulefem"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .arg("--quiet")
        .output()
        .unwrap()
}

fn manifest(out: &Path) -> toml::Table {
    std::fs::read_to_string(out.join("manifest.txt")).unwrap().parse().unwrap()
}

#[test]
fn solve_decoupled_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", DECOUPLED);
    let out = dir.path().join("out");
    let res = joulefem(&["solve"], &cfg, &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    let umax = m["result"]["u_max"].as_float().unwrap();
    assert!((umax - 0.125).abs() < 1e-12, "{umax}");
    assert_eq!(m["run"]["converged"].as_bool(), Some(true));
    assert_eq!(m["small_data"]["c6"].as_float(), Some(5.0));
    for f in ["solution_phi.vtk", "solution_u.vtk"] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0"));
        assert!(text.contains("POINT_DATA 25"));
    }

    // the echoed configuration re-parses to the same run configuration
    let echo = toml::to_string(m["config"].as_table().unwrap()).unwrap();
    let original = RunConfig::load(&cfg, &[]).unwrap();
    assert_eq!(RunConfig::from_toml_str(&echo, &[], None).unwrap(), original);
}

#[test]
fn malformed_expression_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", &DECOUPLED.replace("g_phi = \"x\"", "g_phi = \"x+*y\""));
    let res = joulefem(&["solve"], &cfg, &dir.path().join("out"));
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("data.g_phi") && err.contains("position 2"), "{err}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let no_dirichlet = write_config(dir.path(), "a.toml", &DECOUPLED.replace("phi_dirichlet = [\"x\", \"x - 1\"]", ""));
    assert_eq!(joulefem(&["solve"], &no_dirichlet, &out).status.code(), Some(4));
    let cfg = write_config(dir.path(), "b.toml", MMS);
    assert_eq!(joulefem(&["solve", "--set", "solver.maxit=1"], &cfg, &out).status.code(), Some(3));
    assert_eq!(joulefem(&["solve", "--set", "mesh.shape=1"], &cfg, &out).status.code(), Some(2));
    assert_eq!(joulefem(&["solve"], &dir.path().join("missing.toml"), &out).status.code(), Some(2));
    let missing_mesh = write_config(dir.path(), "c.toml", &MMS.replace("builtin = \"box\"", "file = \"nowhere.msh\""));
    assert_eq!(joulefem(&["solve"], &missing_mesh, &out).status.code(), Some(2));
    let no_mms = write_config(dir.path(), "d.toml", DECOUPLED);
    assert_eq!(joulefem(&["study"], &no_mms, &out).status.code(), Some(2));
}

#[test]
fn study_table_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mms.toml", MMS);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(joulefem(&["study"], &cfg, &a).status.code(), Some(0));
    assert_eq!(joulefem(&["study"], &cfg, &b).status.code(), Some(0));
    let csv = std::fs::read_to_string(a.join("convergence.csv")).unwrap();
    assert_eq!(csv, std::fs::read_to_string(b.join("convergence.csv")).unwrap());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    let header: Vec<&str> = lines[0].split(',').collect();
    let col = header.iter().position(|h| *h == "rate_phi_h1").unwrap();
    let rates: Vec<f64> = lines[2..].iter().map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(rates.len(), 3);
    assert!(rates.iter().all(|r| (r - 1.0).abs() < 0.1), "{rates:?}");
    assert!(lines[1].split(',').nth(col).unwrap().is_empty());
}

#[test]
fn estimate_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mms.toml", MMS);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(joulefem(&["estimate", "--threads", "1"], &cfg, &a).status.code(), Some(0));
    assert_eq!(joulefem(&["estimate", "--threads", "4"], &cfg, &b).status.code(), Some(0));
    for f in ["estimators.csv", "solution_phi.vtk", "solution_u.vtk"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = manifest(&a);
    assert!(m["result"]["estimator_total"].as_float().unwrap() > 0.0);
    assert!(m["result"]["error_x"].as_float().unwrap() > 0.0);
}

#[test]
fn adapt_writes_levels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mms.toml", MMS);
    let out = dir.path().join("out");
    let res = joulefem(&["adapt", "--set", "adapt.max_levels=3"], &cfg, &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    for l in 0..3 {
        let d = out.join(format!("level_{l:02}"));
        for f in ["solution_phi.vtk", "solution_u.vtk", "estimators.csv"] {
            assert!(d.join(f).exists(), "{}", d.join(f).display());
        }
    }
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(manifest(&out)["result"]["levels"].as_integer(), Some(3));
}

#[test]
fn gmsh_mesh_with_relative_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("square.msh"),
        "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n5\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n5 0.5 0.5 0\n$EndNodes\n\
         $Elements\n6\n1 1 2 7 1 1 2\n2 1 2 8 2 2 3\n3 2 2 9 3 1 2 5\n4 2 2 9 3 2 3 5\n5 2 2 9 3 3 4 5\n6 2 2 9 3 4 1 5\n$EndElements\n",
    )
    .unwrap();
    let text = r#"
[mesh]
file = "square.msh"

[boundary]
phi_dirichlet = ["x - 1"]

[[boundary.groups]]
id = 7
phi = "dirichlet"
u = "dirichlet"

[data]
g_phi = "1 - y"
"#;
    let cfg = write_config(dir.path(), "gmsh.toml", text);
    let out = dir.path().join("out");
    let res = joulefem(&["solve"], &cfg, &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert_eq!(m["result"]["num_cells"].as_integer(), Some(4));
    let file = m["config"]["mesh"]["file"].as_str().unwrap();
    assert!(Path::new(file).is_absolute());
}
