mod common;

use std::fs;
use std::path::Path;

use common::{fixtures, run};

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn enumerate(model: &Path, out: &Path) {
    let o = run(&[
        "enumerate",
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["generate", "--widths", "3", "--out", "/tmp/x.json"]), 2);
    let model = fixtures().join("golden2/model.json");
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    assert_eq!(
        code(&[
            "enumerate",
            "--model",
            model.to_str().unwrap(),
            "--workers",
            "0",
            "--mode",
            "parallel",
            "--out",
            o
        ]),
        2
    );
    // Domain dimension disagrees with the model input.
    let dom = out.path().join("dom.json");
    fs::write(
        &dom,
        r#"{"format":"relucell-domain","version":1,"dim":3,"halfspaces":[]}"#,
    )
    .unwrap();
    assert_eq!(
        code(&[
            "enumerate",
            "--model",
            model.to_str().unwrap(),
            "--domain",
            dom.to_str().unwrap(),
            "--out",
            o
        ]),
        2
    );
}

#[test]
fn generate_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    let c = tmp.path().join("c.json");
    for (p, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        assert_eq!(
            code(&[
                "generate",
                "--widths",
                "3,4,2",
                "--seed",
                seed,
                "--out",
                p.to_str().unwrap()
            ]),
            0
        );
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn verify_rejects_tampered_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    enumerate(&fixtures().join("golden2/model.json"), &out);
    let o = out.to_str().unwrap();
    assert_eq!(code(&["verify", "--report", o, "--samples", "2000"]), 0);

    let report = out.join("report.txt");
    let text = fs::read_to_string(&report).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let dropped = lines.remove(10).to_string();
    fs::write(&report, lines.join("\n") + "\n").unwrap();
    let res = run(&["verify", "--report", o, "--samples", "20000"]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stdout).contains(&format!("missing {dropped}")));

    // A region the network cannot produce: all of layer 1 inactive, yet layer 2 mixed.
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let fake = "----|+-+-".to_string();
    assert!(!lines.contains(&fake));
    lines.push(fake.clone());
    let mut body = lines.split_off(6);
    body.sort();
    lines.extend(body);
    let cells = lines.len() - 6;
    lines[5] = format!("cells {cells}");
    fs::write(&report, lines.join("\n") + "\n").unwrap();
    let res = run(&["verify", "--report", o, "--samples", "1000"]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stdout).contains(&format!("no witness for {fake}")));
}

#[test]
fn analyze_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["6,4,4,1", "6,5,5,1", "6,6,6,1", "6,7,7,1"]
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let model = tmp.path().join(format!("m{i}.json"));
            assert_eq!(
                code(&[
                    "generate",
                    "--widths",
                    w,
                    "--seed",
                    "1",
                    "--out",
                    model.to_str().unwrap()
                ]),
                0
            );
            let out = tmp.path().join(format!("r{i}"));
            enumerate(&model, &out);
            out
        })
        .collect();
    let dirs: Vec<&str> = runs.iter().map(|p| p.to_str().unwrap()).collect();
    let out = tmp.path().join("tables");
    let o = out.to_str().unwrap();

    let mut args = vec!["analyze", "counts", "--out", o, "--report"];
    args.extend(&dirs);
    assert_eq!(code(&args), 0);
    assert_eq!(
        header(&out.join("counts.csv")),
        "run,widths,layer_cells,cells,wall_time,lp_calls"
    );
    assert_eq!(fs::read_to_string(out.join("counts.csv")).unwrap().lines().count(), 5);
    assert_eq!(header(&out.join("counts_fit.csv")), "slope,intercept,r_squared");

    assert_eq!(code(&["analyze", "dims", "--out", o, "--report", dirs[0]]), 0);
    assert_eq!(
        header(&out.join("dims.csv")),
        "dim,layer1_cells,layer2_cells,mean_subcells,mean_task_time"
    );

    assert_eq!(code(&["analyze", "times", "--out", o, "--report", dirs[0]]), 0);
    assert_eq!(header(&out.join("times.csv")), "tasks,mean,std,skew,zero_variance");
    assert_eq!(header(&out.join("times_hist.csv")), "lower,upper,count");

    let mut args = vec!["analyze", "decay", "--out", o, "--report"];
    args.extend(&dirs);
    assert_eq!(code(&args), 0);
    assert_eq!(header(&out.join("decay_points.csv")), "run,layer,width,ratio");
    assert!(out.join("decay.csv").exists());

    let data = tmp.path().join("data.csv");
    let d = data.to_str().unwrap();
    assert_eq!(
        code(&[
            "make-dataset",
            "--dim",
            "6",
            "--classes",
            "1",
            "--samples",
            "50",
            "--seed",
            "2",
            "--out",
            d
        ]),
        0
    );
    assert_eq!(
        code(&["analyze", "accuracy", "--out", o, "--report", dirs[0], "--dataset", d]),
        0
    );
    assert!(fs::read_to_string(out.join("accuracy.csv")).unwrap().lines().count() >= 2);
}
