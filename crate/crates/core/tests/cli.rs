use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semiglobal::io::{self, DType};
use semiglobal::{hierarchical_apply, BlockParams, EvalCounter, HierarchyConfig, Tensor3};

fn exe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semiglobal"))
}

fn run(args: &[&str]) -> Output {
    exe().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_input(dir: &Path, name: &str, t: &Tensor3<f64>) -> PathBuf {
    let path = dir.join(name);
    io::save_tensor(&path, t, DType::F64).unwrap();
    path
}

/// Parses a P5 file into `(width, height, pixels)`.
fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = std::fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes);
    let mut fields = text.split_ascii_whitespace();
    assert_eq!(fields.next(), Some("P5"));
    let w: usize = fields.next().unwrap().parse().unwrap();
    let h: usize = fields.next().unwrap().parse().unwrap();
    assert_eq!(fields.next(), Some("255"));
    let pixels = bytes[bytes.len() - w * h..].to_vec();
    (w, h, pixels)
}

#[test]
fn apply_prints_counts_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(
        dir.path(),
        "x.sgst",
        &Tensor3::random(8, 97, 97, 1).unwrap(),
    );
    let out = dir.path().join("y.sgst");

    let one = run(&["apply", "--input", p(&input), "--out", p(&out)]);
    assert_eq!(code(&one), 0);
    let text = stdout(&one);
    assert!(
        text.contains("level 1 edge_evals 37248 analytic 37248"),
        "{text}"
    );
    assert!(text.contains("total edge_evals 37248"), "{text}");

    let two = run(&[
        "apply",
        "--input",
        p(&input),
        "--out",
        p(&out),
        "--levels",
        "2",
    ]);
    assert_eq!(code(&two), 0);
    assert!(stdout(&two).contains("total edge_evals 74496"));
}

#[test]
fn apply_matches_library_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let x = Tensor3::<f64>::random(4, 9, 12, 2).unwrap();
    let input = write_input(dir.path(), "x.sgst", &x);
    let out = dir.path().join("y.sgst");
    let params_out = dir.path().join("p.sgst");
    for normalized in [false, true] {
        let mut args = vec![
            "apply",
            "--input",
            p(&input),
            "--out",
            p(&out),
            "--levels",
            "3",
            "--seed",
            "17",
            "--params-out",
            p(&params_out),
        ];
        if normalized {
            args.push("--normalized");
        }
        assert_eq!(code(&run(&args)), 0);

        let params = [BlockParams::seeded(4, 17)
            .unwrap()
            .with_normalized(normalized)];
        let cfg = HierarchyConfig::new(3, true).unwrap();
        let want = hierarchical_apply(&x, &cfg, &params, &EvalCounter::new()).unwrap();
        let got: Tensor3<f64> = io::load_tensor(&out).unwrap();
        assert_eq!(got, want);

        // the saved bundle reproduces the run
        let out2 = dir.path().join("y2.sgst");
        let mut args = vec![
            "apply",
            "--input",
            p(&input),
            "--out",
            p(&out2),
            "--levels",
            "3",
            "--params",
            p(&params_out),
        ];
        if normalized {
            args.push("--normalized");
        }
        assert_eq!(code(&run(&args)), 0);
        assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&out2).unwrap());
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path(), "x.sgst", &Tensor3::random(2, 4, 4, 3).unwrap());
    let out = dir.path().join("y.sgst");
    let pgm = dir.path().join("a.pgm");
    let cases: Vec<Vec<&str>> = vec![
        vec![
            "apply",
            "--input",
            p(&input),
            "--out",
            p(&out),
            "--levels",
            "0",
        ],
        vec!["apply", "--input", "/nonexistent/x.sgst", "--out", p(&out)],
        vec![
            "attention",
            "--input",
            p(&input),
            "--pos",
            "4,0",
            "--out",
            p(&pgm),
        ],
        vec![
            "attention",
            "--input",
            p(&input),
            "--pos",
            "nope",
            "--out",
            p(&pgm),
        ],
        vec!["bench", "--points", "3"],
        vec!["selftest", "--sizes", "3"],
        vec!["frobnicate"],
    ];
    for args in cases {
        assert_eq!(code(&run(&args)), 1, "{args:?}");
    }
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn single_level_attention_lies_on_the_cross() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(
        dir.path(),
        "x.sgst",
        &Tensor3::random(3, 10, 13, 4).unwrap(),
    );
    let pgm = dir.path().join("a.pgm");
    let o = run(&[
        "attention",
        "--input",
        p(&input),
        "--pos",
        "5,2",
        "--out",
        p(&pgm),
    ]);
    assert_eq!(code(&o), 0);
    let (w, h, px) = read_pgm(&pgm);
    assert_eq!((w, h), (13, 10));
    for y in 0..h {
        for x in 0..w {
            if x != 5 && y != 2 {
                assert_eq!(px[y * w + x], 0, "({x}, {y})");
            }
        }
    }
    // the center has weight 1, the largest possible
    assert_eq!(px[2 * w + 5], 255);
}

#[test]
fn two_level_attention_has_full_support() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(
        dir.path(),
        "x.sgst",
        &Tensor3::random(3, 31, 23, 5).unwrap(),
    );
    let pgm = dir.path().join("a.pgm");
    let o = run(&[
        "attention",
        "--input",
        p(&input),
        "--pos",
        "17,9",
        "--levels",
        "2",
        "--out",
        p(&pgm),
    ]);
    assert_eq!(code(&o), 0);
    let bytes = std::fs::read(&pgm).unwrap();
    assert_eq!(bytes.len(), "P5\n23 31\n255\n".len() + 31 * 23);
    // PGM quantization can round tiny weights to 0, so check the raw map instead
    let x: Tensor3<f64> = io::load_tensor(&input).unwrap();
    let map = semiglobal::effective_attention(
        &x,
        &HierarchyConfig::new(2, true).unwrap(),
        &[BlockParams::seeded(3, 0).unwrap()],
        semiglobal::Position::new(17, 9),
        1e-3,
    )
    .unwrap();
    assert!(map.as_slice().iter().all(|&v| v > 0.0));
}

#[test]
fn constant_input_gives_uniform_cross() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(
        dir.path(),
        "x.sgst",
        &Tensor3::filled(4, 6, 9, 0.25).unwrap(),
    );
    let pgm = dir.path().join("a.pgm");
    let o = run(&[
        "attention",
        "--input",
        p(&input),
        "--pos",
        "3,4",
        "--out",
        p(&pgm),
    ]);
    assert_eq!(code(&o), 0);
    let (w, h, px) = read_pgm(&pgm);
    for y in 0..h {
        for x in 0..w {
            let want = if x == 3 || y == 4 { 255 } else { 0 };
            assert_eq!(px[y * w + x], want);
        }
    }
}

#[test]
fn selftest_exit_codes() {
    let ok = run(&["selftest"]);
    assert_eq!(code(&ok), 0);
    assert!(stdout(&ok).contains("oracle-equivalence"));
    assert!(!stdout(&ok).contains("FAIL"));
    assert_eq!(code(&run(&["selftest", "--sizes", "1x1"])), 0);

    let bad = run(&["selftest", "--sizes", "4x4,3x5", "--inject-fault"]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("oracle-equivalence"));
}

#[test]
fn gradcheck_passes() {
    let o = run(&["gradcheck", "--sizes", "3x3,4x2"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for name in ["d_input", "d_alpha", "d_beta", "d_lambda", "d_psi"] {
        assert_eq!(text.matches(name).count(), 2, "{text}");
    }
}

#[test]
fn bench_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bench.txt");
    let o = run(&[
        "bench",
        "--min",
        "8",
        "--max",
        "64",
        "--points",
        "4",
        "--oracle-max",
        "16",
        "--sample-ms",
        "1",
        "--samples",
        "1",
        "--out",
        p(&report),
    ]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text, stdout(&o));
    assert!(text.contains("edge counts exact: true"));
    assert!(text.contains("oracle slope"));
}

#[test]
fn gen_writes_requested_dtype() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.sgst");
    let o = run(&[
        "gen",
        "--channels",
        "2",
        "--height",
        "3",
        "--width",
        "4",
        "--dtype",
        "f32",
        "--out",
        p(&path),
    ]);
    assert_eq!(code(&o), 0);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 24 + 2 * 3 * 4 * 4);
    let t: Tensor3<f32> = io::load_tensor(&path).unwrap();
    assert_eq!(t.shape(), (2, 3, 4));
}

#[test]
fn params_bundle_must_match_input() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_input(dir.path(), "a.sgst", &Tensor3::random(4, 5, 5, 6).unwrap());
    let b = write_input(dir.path(), "b.sgst", &Tensor3::random(3, 5, 5, 7).unwrap());
    let out = dir.path().join("y.sgst");
    let bundle = dir.path().join("p.sgst");
    let first = run(&[
        "apply",
        "--input",
        p(&a),
        "--out",
        p(&out),
        "--params-out",
        p(&bundle),
    ]);
    assert_eq!(code(&first), 0);
    let mismatched = run(&[
        "apply",
        "--input",
        p(&b),
        "--out",
        p(&out),
        "--params",
        p(&bundle),
    ]);
    assert_eq!(code(&mismatched), 1);
}
