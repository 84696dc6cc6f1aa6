use std::process::Command;

fn bench() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gemm-bench"));
    cmd.env_remove(fipgemm::THREADS_ENV);
    cmd
}

#[test]
fn single_size_writes_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let status = bench()
        .args(["--sizes", "96", "--repeats", "5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("strategy,m,n,k,ldim,threads,repeats,median_seconds,gflops"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for (row, name) in rows.iter().zip(["conv", "sup", "fip"]) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(&fields[..7], &[name, "96", "96", "96", "tight", "1", "5"]);
        let seconds: f64 = fields[7].parse().unwrap();
        let gflops: f64 = fields[8].parse().unwrap();
        assert!(seconds > 0.0 && gflops > 0.0);
        assert!((gflops * seconds * 1e9 / (2.0 * 96f64.powi(3)) - 1.0).abs() < 1e-12);
    }
    assert!(dir.path().join("run_plot_ldim_tight.py").exists());
}

#[test]
fn stdout_csv_with_fixed_ldim_and_threads() {
    let out = bench()
        .args(["--sizes", "40,8x16x24", "--ldim", "64", "--strategies", "fip", "--repeats", "3", "--threads", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("fip,40,40,40,64,2,3,"));
    assert!(rows[1].starts_with("fip,8,16,24,64,2,3,"));
}

#[test]
fn config_errors_exit_with_one() {
    let bad_args: &[&[&str]] = &[
        &["--sizes", "2001", "--ldim", "2000"],
        &["--sizes", "abc"],
        &["--strategies", "blas", "--sizes", "8"],
        &["--repeats", "2", "--sizes", "8"],
        &["--threads", "0", "--sizes", "8"],
        &["--params", "/nonexistent/params.cfg", "--sizes", "8"],
        &["--no-such-flag"],
    ];
    for args in bad_args {
        let status = bench().args(*args).output().unwrap().status;
        assert_eq!(status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn params_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.cfg");
    std::fs::write(&path, "mr=4\nnr=4\nmc=16\nnc=32\nkc=8\n").unwrap();
    let status = bench()
        .args(["--sizes", "37", "--repeats", "3", "--verify", "--params"])
        .arg(&path)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    std::fs::write(&path, "mr=6\nmc=70\n").unwrap();
    let status = bench().args(["--sizes", "8", "--params"]).arg(&path).output().unwrap().status;
    assert_eq!(status.code(), Some(1));
}

#[test]
fn analyze_sets_reports_both_layouts() {
    let out = bench().args(["--analyze-sets", "--sizes", "512", "--ldim", "tight"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "layout,ld,lines,max_per_set,mean_per_set,imbalance,overflowing_sets");
    assert!(lines[1].starts_with("unpacked,512,"));
    assert!(lines[2].starts_with("packed,512,"));
    let imbalance = |l: &str| l.split(',').nth(5).unwrap().parse::<f64>().unwrap();
    // ld 512 doubles is exactly one way of a 32 KiB 8-way cache
    assert!(imbalance(lines[1]) > 4.0 * imbalance(lines[2]));
}

#[test]
fn help_exits_zero() {
    let out = bench().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("--analyze-sets"));
}
