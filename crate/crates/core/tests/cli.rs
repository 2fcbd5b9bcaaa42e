use std::path::Path;
use std::process::{Command, Output};

fn rodeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rodeo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn fit_prints_estimate() {
    let out = rodeo(&[
        "fit",
        "--synthetic",
        "two-relevant",
        "--d",
        "3",
        "--n",
        "100",
        "--x",
        "0.5,0.5,0.5",
        "--h",
        "0.5",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "estimate,condition_flag,b0,b1,b2,b3");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    assert_eq!(row[1], "false");
    let estimate: f64 = row[0].parse().unwrap();
    let b0: f64 = row[2].parse().unwrap();
    assert!((estimate - b0).abs() <= 1e-12 * b0.abs().max(1.0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&rodeo(&["fit", "--bogus"])), 1);
    assert_eq!(code(&rodeo(&["nonsense"])), 1);
    // Dimension mismatch between --x and the data.
    let out = rodeo(&[
        "fit",
        "--synthetic",
        "two-relevant",
        "--d",
        "3",
        "--x",
        "0.5",
        "--h",
        "0.5",
    ]);
    assert_eq!(code(&out), 1);
    // Both data sources at once.
    let out = rodeo(&[
        "sigma",
        "--synthetic",
        "pure-noise",
        "--data",
        "missing.csv",
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(code(&rodeo(&["--help"])), 0);
}

#[test]
fn numerical_failure_exits_two() {
    let out = rodeo(&[
        "fit",
        "--synthetic",
        "two-relevant",
        "--d",
        "3",
        "--n",
        "100",
        "--x",
        "0.5,0.5,0.5",
        "--h",
        "0.001",
        "--kernel",
        "epanechnikov",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient support"));
}

#[test]
fn sigma_csv_shape() {
    let out = rodeo(&[
        "sigma",
        "--synthetic",
        "pure-noise",
        "--d",
        "2",
        "--n",
        "200",
        "--sigma",
        "1",
        "--method",
        "rice",
        "--pairs",
        "7",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,J,sigma,sigma2,D");
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&row[..2], &["rice", "7"]);
    let sigma: f64 = row[2].parse().unwrap();
    let sigma2: f64 = row[3].parse().unwrap();
    assert!((sigma * sigma - sigma2).abs() <= 1e-12 * sigma2);
    assert!(!text.contains('\r'));
}

#[test]
fn loocv_marks_one_selection() {
    let out = rodeo(&[
        "loocv",
        "--synthetic",
        "two-relevant",
        "--d",
        "2",
        "--n",
        "50",
        "--x",
        "0.5,0.5",
        "--grid",
        "0.2,0.5,1.0",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert_eq!(text.lines().next().unwrap(), "h,risk,selected");
    assert_eq!(text.lines().skip(1).count(), 3);
    assert_eq!(text.matches(",true").count(), 1);
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn experiment_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = rodeo(&[
            "experiment",
            "--synthetic",
            "two-relevant",
            "--d",
            "3",
            "--n",
            "120",
            "--sigma-policy",
            "known:0.5",
            "--algorithm",
            "hard",
            "--replicates",
            "4",
            "--x",
            "0.5,0.5,0.5;0.3,0.6,0.2",
            "--seed",
            "5",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        (stdout(&out), read_dir_sorted(&dir))
    };
    let (sa, a) = run("a");
    let (sb, b) = run("b");
    assert_eq!(sa, sb);
    assert_eq!(a, b);
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["replicates.csv", "summary.csv", "trace.csv"]);
    let reps = String::from_utf8(a[0].1.clone()).unwrap();
    // Header plus 4 replicates x 2 points.
    assert_eq!(reps.lines().count(), 9);
    assert!(reps.starts_with("run,replicate,point,x1,x2,x3,estimate,truth,sq_error,"));
}

#[test]
fn greedy_experiment_writes_ordering() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("g");
    let out = rodeo(&[
        "experiment",
        "--synthetic",
        "turlach",
        "--d",
        "5",
        "--n",
        "100",
        "--sigma",
        "0.05",
        "--sigma-policy",
        "known:0.05",
        "--smoother",
        "kernel",
        "--algorithm",
        "greedy",
        "--k",
        "5",
        "--replicates",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = read_dir_sorted(&dir).into_iter().map(|f| f.0).collect();
    assert_eq!(
        names,
        [
            "greedy_trace.csv",
            "ordering.csv",
            "replicates.csv",
            "summary.csv"
        ]
    );
}

#[test]
fn runs_on_a_data_file() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("data.csv");
    let mut text = String::from("a,resp,b\n");
    for i in 0..60 {
        let a = (i as f64 * 0.37).fract();
        let b = (i as f64 * 0.61).fract();
        text.push_str(&format!("{a},{},{b}\n", 1.0 + 2.0 * a - b));
    }
    std::fs::write(&path, text).unwrap();
    let p = path.to_str().unwrap();
    let out = rodeo(&[
        "rodeo",
        "--data",
        p,
        "--target",
        "resp",
        "--x",
        "0.5,0.5",
        "--sigma-policy",
        "known:0.1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    // Noiseless affine response: exact estimate, everything removed at once.
    assert!((row[1].parse::<f64>().unwrap() - 1.5).abs() < 1e-8);
    assert_eq!(row[2], "1");

    let out = rodeo(&["sigma", "--data", p, "--target", "nope"]);
    assert_eq!(code(&out), 1);
}
