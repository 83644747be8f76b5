use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use ncf_cli::config::{Overrides, RunConfig};
use ncf_core::grid::{read_array, DataSpace, Field, GridSpace, HarmonicTransform, Space};
use ncf_core::inference::initial_state;
use ncf_core::nonlinearity::LocalFunction;
use ncf_core::operators::LinearMap;
use tempfile::TempDir;

fn ncf(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncf"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// A config in a fresh directory; `out` and the data paths point inside it.
fn setup(body: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    let text = format!("out = \"out\"\n{body}\n[data]\nfile = \"out/data.f8\"\ntruth_signal = \"out/signal.f8\"\n");
    fs::write(&path, text).unwrap();
    (dir, path)
}

fn values(path: &Path) -> Vec<f64> {
    read_array(path).unwrap().values
}

fn all_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with("timing.jsonl") {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

const LINEAR_1D: &str = "
seed = 5
[grid]
shape = [64]
[spectrum.truth]
amplitude = 1.0
outer = 0.0
[noise]
variance = 20.0
";

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let (dir, cfg) = setup(LINEAR_1D);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(ncf(&["synth", "--out", a.to_str().unwrap()], &cfg));
    ok(ncf(&["synth", "--out", b.to_str().unwrap()], &cfg));
    let fa = all_files(&a);
    assert!(fa.iter().any(|(n, _)| n == "data.f8"));
    assert!(fa.iter().any(|(n, _)| n == "manifest.json"));
    assert_eq!(fa, all_files(&b));

    let c = dir.path().join("c");
    ok(ncf(&["synth", "--seed", "6", "--out", c.to_str().unwrap()], &cfg));
    assert_ne!(values(&a.join("data.f8")), values(&c.join("data.f8")));
}

#[test]
fn noiseless_synth_is_the_masked_nonlinear_signal() {
    let (dir, cfg) = setup(
        "
seed = 3
[grid]
shape = [40]
[spectrum.truth]
amplitude = 2.0
[nonlinearity]
function = \"exponential\"
[response]
kind = \"mask\"
keep_fraction = 0.6
seed = 8
[noise]
variance = 0.0
",
    );
    ok(ncf(&["synth"], &cfg));
    let out = dir.path().join("out");
    let s = values(&out.join("signal.f8"));
    let d = values(&out.join("data.f8"));
    let keep: Vec<usize> = fs::read_to_string(out.join("mask.txt"))
        .unwrap()
        .lines()
        .enumerate()
        .filter(|(_, l)| *l == "1")
        .map(|(i, _)| i)
        .collect();
    assert!(!keep.is_empty() && keep.len() < 40);
    let expected: Vec<f64> = keep.iter().map(|&i| s[i].exp()).collect();
    assert_eq!(d, expected);
}

#[test]
fn invalid_configs_exit_2_naming_the_field() {
    let cases = [
        ("[grid]\nshape = [16]\n[noise]\nvariance = -2.0\n", "noise.variance"),
        ("[grid]\nshape = [16]\n[nonlinearity]\nfunction = \"cube\"\n", "nonlinearity"),
        ("[grid]\nshape = [16]\nunknown_key = 1\n", "unknown_key"),
        ("[grid]\nshape = [16]\n[noise]\nvariance = 1.0\n", "spectrum.truth"),
    ];
    for (body, field) in cases {
        let (_dir, cfg) = setup(body);
        let out = ncf(&["synth"], &cfg);
        assert_eq!(out.status.code(), Some(2), "{body}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(field), "`{err}` should name {field}");
    }
    let missing = Path::new("/nonexistent/run.toml");
    assert_eq!(ncf(&["synth"], missing).status.code(), Some(2));
}

#[test]
fn data_of_the_wrong_size_exits_2() {
    let (dir, cfg) = setup(LINEAR_1D);
    ok(ncf(&["synth"], &cfg));
    let text = fs::read_to_string(&cfg).unwrap().replace("shape = [64]", "shape = [32]");
    let other = dir.path().join("other.toml");
    fs::write(&other, text).unwrap();
    assert_eq!(ncf(&["reconstruct", "--out", "x"], &other).status.code(), Some(2));
}

#[test]
fn zero_iterations_write_the_initialization() {
    let (dir, cfg) = setup(LINEAR_1D);
    ok(ncf(&["synth"], &cfg));
    ok(ncf(&["reconstruct", "--iterations", "0"], &cfg));
    let out = dir.path().join("out");

    let config = RunConfig::load(&cfg).unwrap().finish(&Overrides::default()).unwrap();
    let grid = config.grid().unwrap();
    let data = Field::read(Space::Data(DataSpace::new(64).unwrap()), &out.join("data.f8")).unwrap();
    let problem = config.problem(data).unwrap();
    let init = initial_state(&problem, &config.inference()).unwrap();

    let t = Field::read(Space::Harmonic(grid.harmonic()), &out.join("t.f8")).unwrap();
    assert_eq!(t, init.t);
    assert_eq!(values(&out.join("alpha.f8")), init.spectrum.alpha());
    assert!(fs::read_to_string(out.join("history.jsonl")).unwrap().is_empty());
    assert!(!out.join("samples").exists());
}

/// With a 0/1 mask, identity `f` and a flat power `P`, the Wiener filter is
/// diagonal: kept pixels are shrunk by `P / (P + N dV)`, the rest vanish.
#[test]
fn fixed_spectrum_identity_run_is_the_wiener_filter() {
    let (dir, cfg) = setup(
        "
seed = 12
[grid]
shape = [64]
[spectrum.truth]
amplitude = 1.0
outer = 0.0
[response]
kind = \"mask\"
keep_fraction = 0.7
seed = 2
[noise]
variance = 20.0
[inference]
outer_iterations = 1
update_spectrum = false
initial_power = 1.0
[inference.excitation_newton]
max_steps = 20
grad_tol = 1e-12
inner = { conjugate_gradient = { rel_tol = 1e-12, max_iter = 1000 } }
",
    );
    ok(ncf(&["synth"], &cfg));
    ok(ncf(&["reconstruct"], &cfg));
    let out = dir.path().join("out");
    let d = values(&out.join("data.f8"));
    let keep: Vec<bool> = fs::read_to_string(out.join("mask.txt")).unwrap().lines().map(|l| l == "1").collect();
    let shrink = 1.0 / (1.0 + 20.0 / 64.0);
    let mut kept = d.iter();
    let expected: Vec<f64> = keep
        .iter()
        .map(|&k| if k { shrink * kept.next().unwrap() } else { 0.0 })
        .collect();
    let m = values(&out.join("reconstruction.f8"));
    let scale = expected.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (a, b) in m.iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
    }
    assert!(out.join("plot.gp").exists());
    assert!(out.join("signal.tsv").exists());
}

#[test]
fn masked_fourier_lognormal_run_writes_the_relative_error() {
    let (dir, cfg) = setup(
        "
seed = 4
[grid]
shape = [16, 16]
[binning]
kind = \"logarithmic\"
bins = 8
[spectrum.truth]
amplitude = 0.04
scale = 3.0
inner = 2.0
outer = 2.0
[nonlinearity]
function = \"exponential\"
[response]
kind = \"fourier_sampling\"
radial_density = 4.0
seed = 1
[noise]
variance = 1e-3
[noise.estimate]
[inference]
outer_iterations = 3
",
    );
    ok(ncf(&["synth"], &cfg));
    ok(ncf(&["reconstruct"], &cfg));
    let out = dir.path().join("out");
    let e = values(&out.join("relative_error.f8"));
    assert_eq!(e.len(), 256);
    assert!(e.iter().all(|v| v.is_finite() && *v > 0.0));
    assert!(values(&out.join("eta.f8")).iter().all(|v| v.is_finite()));
    let modes = fs::read_to_string(out.join("modes.txt")).unwrap().lines().count();
    assert_eq!(values(&out.join("eta.f8")).len(), 2 * modes);
    for map in ["relative_error_map.tsv", "truth_map.tsv", "reconstruction_map.tsv"] {
        let rows = fs::read_to_string(out.join(map)).unwrap();
        assert_eq!(rows.lines().count(), 16, "{map}");
    }

    // moments from what reconstruct left behind agree with its own
    let before = fs::read(out.join("relative_error.f8")).unwrap();
    fs::remove_file(out.join("relative_error.f8")).unwrap();
    ok(ncf(&["moments"], &cfg));
    assert_eq!(fs::read(out.join("relative_error.f8")).unwrap(), before);
}

#[test]
fn bench_refuses_a_nonlinear_response() {
    let (_dir, cfg) = setup(&format!("{LINEAR_1D}[nonlinearity]\nfunction = \"tanh\"\n"));
    let out = ncf(&["bench"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonlinearity"));
}

/// A linear 1D benchmark config without a data file.
fn bench_1d() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.toml");
    let text = "
seed = 9
out = \"out\"
[grid]
shape = [64]
[binning]
kind = \"logarithmic\"
bins = 10
[spectrum.truth]
amplitude = 4.0
[noise]
variance = 5.0
[bench]
reference_samples = 4
";
    fs::write(&path, text).unwrap();
    (dir, path)
}

#[test]
fn one_bench_iteration_gives_one_point_per_method() {
    let (dir, cfg) = bench_1d();
    // no data file yet: the data are drawn as synth would
    ok(ncf(&["bench", "--iterations", "1"], &cfg));
    let out = dir.path().join("out");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("bench.json")).unwrap()).unwrap();
    assert_eq!(report["reformulated"]["kl"].as_array().unwrap().len(), 1);
    assert_eq!(report["legacy"]["kl"].as_array().unwrap().len(), 1);
    assert!(report["reference_kl"].as_f64().unwrap().is_finite());
    let rows: Vec<String> = fs::read_to_string(out.join("kl.tsv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect();
    assert_eq!(rows.len(), 1);
    assert!(fs::read_to_string(out.join("bench.gp")).unwrap().contains("kl.tsv"));
}

#[test]
fn bench_report_is_reproducible() {
    let (dir, cfg) = bench_1d();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(ncf(&["bench", "--iterations", "4", "--out", a.to_str().unwrap()], &cfg));
    ok(ncf(&["bench", "--iterations", "4", "--out", b.to_str().unwrap()], &cfg));
    assert_eq!(all_files(&a), all_files(&b));
}

#[test]
fn bench_on_synth_data_matches_the_drawn_data() {
    let (dir, cfg) = bench_1d();
    ok(ncf(&["synth"], &cfg));
    let drawn = dir.path().join("d");
    ok(ncf(&["bench", "--iterations", "2", "--out", drawn.to_str().unwrap()], &cfg));
    let text = fs::read_to_string(&cfg).unwrap() + "[data]\nfile = \"out/data.f8\"\n";
    let file_cfg = dir.path().join("file.toml");
    fs::write(&file_cfg, text).unwrap();
    let with_file = dir.path().join("f");
    ok(ncf(&["bench", "--iterations", "2", "--out", with_file.to_str().unwrap()], &file_cfg));
    assert_eq!(fs::read(with_file.join("kl.tsv")).unwrap(), fs::read(drawn.join("kl.tsv")).unwrap());
}

#[test]
fn overflowing_signal_exits_3() {
    let (dir, cfg) = setup(
        "
seed = 2
[grid]
shape = [32]
[spectrum.truth]
amplitude = 1.0
[nonlinearity]
function = \"exponential\"
[noise]
variance = 0.1
[inference]
initial_power = 1e6
initial_excitation_scale = 100.0
outer_iterations = 3
",
    );
    ok(ncf(&["synth"], &cfg));
    let out = ncf(&["reconstruct"], &cfg);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/data.f8").exists());
}

#[test]
fn realized_modes_reload_as_a_modes_file() {
    let (dir, cfg) = setup(
        "
seed = 1
[grid]
shape = [12, 12]
[spectrum.truth]
amplitude = 1.0
[response]
kind = \"fourier_sampling\"
radial_density = 3.0
seed = 5
[noise]
variance = 0.0
",
    );
    ok(ncf(&["synth"], &cfg));
    let out = dir.path().join("out");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("radial_density = 3.0", "modes_file = \"out/modes.txt\"");
    let replay = dir.path().join("replay.toml");
    fs::write(&replay, text).unwrap();
    let again = dir.path().join("again");
    ok(ncf(&["synth", "--out", again.to_str().unwrap()], &replay));
    assert_eq!(fs::read(out.join("data.f8")).unwrap(), fs::read(again.join("data.f8")).unwrap());

    // and the data are the sampled modes of the signal
    let config = RunConfig::load(&replay).unwrap().finish(&Overrides::default()).unwrap();
    let grid = GridSpace::unit_volume(&[12, 12]).unwrap();
    let (response, _) = config.response(&Arc::new(HarmonicTransform::new(&grid))).unwrap();
    let s = Field::read(Space::Grid(grid), &out.join("signal.f8")).unwrap();
    let d = response.apply(&LocalFunction::Identity.apply(&s));
    assert_eq!(d.real_values(), values(&out.join("data.f8")));
}

#[test]
fn shipped_configs_are_valid() {
    let docs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs");
    let mut n = 0;
    for e in fs::read_dir(&docs).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let cfg = RunConfig::load(&p).and_then(|c| c.finish(&Overrides::default()));
            assert!(cfg.is_ok(), "{}: {:?}", p.display(), cfg.err());
            n += 1;
        }
    }
    assert_eq!(n, 3);
}
