use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use granular_core::heightfield::{write_ghm_file, HeightMap};

fn granular(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_granular"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_goals_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    ok(&granular(&["gen-goals", "--per-family", "4", "--seed", "9", "--out-dir", "a"], t.path()));
    ok(&granular(&["gen-goals", "--per-family", "4", "--seed", "9", "--out-dir", "b"], t.path()));
    let a = dir_bytes(&t.path().join("a"));
    assert_eq!(a.len(), 13);
    assert_eq!(a, dir_bytes(&t.path().join("b")));
}

#[test]
fn repeated_runs_write_identical_csvs() {
    let t = tempfile::tempdir().unwrap();
    ok(&granular(&["gen-goals", "--per-family", "3"], t.path()));
    for (policy, obs) in [("rand", "priv"), ("bcpp", "priv"), ("rand", "recon")] {
        let mut outs = Vec::new();
        for name in ["x.csv", "y.csv"] {
            let args = [
                "run", "--policy", policy, "--episodes", "4", "--seed", "3", "--obs", obs,
                "--depth-noise", "0.001", "--out", name,
            ];
            ok(&granular(&args, t.path()));
            outs.push(fs::read(t.path().join(name)).unwrap());
        }
        assert!(!outs[0].is_empty());
        assert_eq!(outs[0], outs[1], "{policy} {obs}");
    }
}

#[test]
fn eval_and_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    ok(&granular(&["gen-goals", "--per-family", "2"], t.path()));
    ok(&granular(&["run", "--policy", "bcpp", "--episodes", "5", "--out", "b.csv"], t.path()));
    ok(&granular(&["run", "--policy", "rand", "--episodes", "5", "--out", "r.csv"], t.path()));
    let o = granular(&["eval", "--a", "b.csv", "--b", "r.csv"], t.path());
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("exact"), "{text}");

    let o = granular(&["eval", "--a", "b.csv", "--b", "b.csv"], t.path());
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("p = 1"));

    // usage errors
    assert_eq!(granular(&["run", "--policy", "tqc"], t.path()).status.code(), Some(1));
    assert_eq!(granular(&["gen-goals", "--per-family", "0"], t.path()).status.code(), Some(1));
    assert_eq!(granular(&["frobnicate"], t.path()).status.code(), Some(1));
    assert_eq!(granular(&["run"], t.path()).status.code(), Some(1));
    // runtime errors
    assert_eq!(granular(&["eval", "--a", "b.csv", "--b", "nope.csv"], t.path()).status.code(), Some(2));
    let o = granular(&["eval", "--a", "b.csv", "--b", "r.csv", "--metric", "nope"], t.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}

#[test]
fn help_lists_subcommands() {
    let t = tempfile::tempdir().unwrap();
    let o = granular(&["--help"], t.path());
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["gen-goals", "run", "eval", "render"] {
        assert!(text.contains(sub), "{text}");
    }
}

#[test]
fn render_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let h: Vec<f64> = (0..6 * 5).map(|i| 0.005 * i as f64).collect();
    let map = HeightMap::from_vec(6, 5, 0.01, h).unwrap();
    write_ghm_file(&t.path().join("m.ghm"), &map, 0.06).unwrap();
    ok(&granular(&["render", "--map", "m.ghm", "--out", "m.pgm"], t.path()));
    let bytes = fs::read(t.path().join("m.pgm")).unwrap();
    let header = b"P5\n5 6\n65535\n";
    assert_eq!(&bytes[..header.len()], header);
    let px = &bytes[header.len()..];
    assert_eq!(px.len(), 60);
    for (i, pair) in px.chunks(2).enumerate() {
        let v = u16::from_be_bytes([pair[0], pair[1]]) as f64 / 65535.0 * 0.2;
        assert!((v - map.heights()[i]).abs() <= 0.2 / 65535.0, "pixel {i}");
    }
    assert_eq!(granular(&["render", "--map", "m.ghm", "--out", "m.png", "--format", "png"], t.path()).status.code(), Some(1));
}
