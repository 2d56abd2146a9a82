use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mech-search"))
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn sorted_lines(path: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_to_string(path).unwrap().lines().map(String::from).collect();
    v.sort();
    v
}

fn gen(dir: &Path) {
    ok(bin().args(["gen", "--n", "6,8", "--count", "3", "--seed", "5", "--out"]).arg(dir).output().unwrap());
}

#[test]
fn gen_run_report() {
    let tmp = tempfile::tempdir().unwrap();
    let heaps = tmp.path().join("heaps");
    gen(&heaps);
    assert!(heaps.join("manifest.json").exists());
    assert!(heaps.join("n06_0002.json").exists());

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let text = ok(bin()
        .args(["run", "--policy", "largest,prandom-push", "--workers", "1", "--seed", "7", "--heaps"])
        .arg(&heaps)
        .arg("--out")
        .arg(&a)
        .output()
        .unwrap());
    assert!(text.contains("12 rollouts"), "{text}");
    assert!(text.contains("random (published)"));
    ok(bin()
        .args(["run", "--policy", "largest,prandom-push", "--workers", "3", "--seed", "7", "--heaps"])
        .arg(heaps.join("manifest.json"))
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap());
    assert_eq!(sorted_lines(&a.join("records.jsonl")), sorted_lines(&b.join("records.jsonl")));
    assert!(!a.join("records.jsonl.partial").exists());
    for f in ["summary.csv", "summary.txt", "curve_largest_n6.csv", "curve_prandom-push_n8.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }

    let c = tmp.path().join("c");
    ok(bin().arg("report").arg("--in").arg(a.join("records.jsonl")).arg("--out").arg(&c).output().unwrap());
    assert_eq!(std::fs::read(a.join("summary.csv")).unwrap(), std::fs::read(c.join("summary.csv")).unwrap());
}

#[test]
fn run_overrides_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let heaps = tmp.path().join("heaps");
    gen(&heaps);
    let out = tmp.path().join("r");
    ok(bin()
        .args(["run", "--policy", "random", "--t-thresh", "0.2", "--grasp-selection", "global-argmax", "--heaps"])
        .arg(&heaps)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let first = std::fs::read_to_string(out.join("records.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(rec["config"]["policy"]["t_thresh"], 0.2);
    assert_eq!(rec["config"]["policy"]["grasp_selection"], "global-argmax");
}

#[test]
fn bad_inputs_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let heaps = tmp.path().join("heaps");
    gen(&heaps);
    let out = bin().args(["run", "--policy", "greedy", "--heaps"]).arg(&heaps).arg("--out").arg(tmp.path().join("x")).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["run", "--policy", "random", "--heaps", "/nonexistent", "--out"]).arg(tmp.path().join("y")).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["plan", "--goal", "0", "--primitive", "poke", "--scene"]).arg(heaps.join("n06_0000.json")).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn plan_prints_json_and_dumps_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let heaps = tmp.path().join("heaps");
    gen(&heaps);
    let scene = heaps.join("n06_0000.json");
    let masks = tmp.path().join("masks");
    let snap: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&scene).unwrap()).unwrap();
    let top = snap["objects"].as_array().unwrap().iter().max_by_key(|o| o["layer"].as_u64()).unwrap()["id"].as_u64().unwrap();
    let text = ok(bin()
        .args(["plan", "--goal", &top.to_string(), "--primitive", "push", "--scene"])
        .arg(&scene)
        .arg("--dump-masks")
        .arg(&masks)
        .output()
        .unwrap());
    let plan: serde_json::Value = serde_json::from_str(&text).unwrap();
    let q = plan["quality"].as_f64().unwrap();
    assert!(q == 0.0 || q == 1.0);
    assert_eq!(plan["action"]["primitive"], "push");
    assert!(masks.join("occupancy.png").exists());
    assert!(masks.join(format!("modal_{top}.png")).exists());
}

#[test]
fn serve_answers_http() {
    let tmp = tempfile::tempdir().unwrap();
    let heaps = tmp.path().join("heaps");
    gen(&heaps);
    let mut child = bin().args(["serve", "--port", "0", "--heaps"]).arg(&heaps).stdout(Stdio::piped()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").expect("address line").to_string();
    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /heaps HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("n08_0001"));
}
