use std::path::Path;
use std::process::{Command, Output};

fn hype(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hype"))
        .args(args)
        .env_remove("HYPE_THREADS")
        .output()
        .expect("run hype")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn selfcheck_passes() {
    let out = hype(&["selfcheck"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("selfcheck: 6/6 checks passed"), "{stdout}");
}

#[test]
fn score_of_table_means() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.csv");
    let scores = dir.path().join("s.csv");
    write(&metrics, "id,eps_i,eps_t,neg_dl,clip_cos,cin\n1,0.289,0.211,-0.726,0.208,1\n");
    let out = hype(&["score", "--metrics", p(&metrics), "--out", p(&scores)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&scores).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert_eq!(row.rsplit(',').next().unwrap(), "9.982");

    let out = hype(&["score", "--metrics", p(&metrics), "--w-cin", "0", "--out", p(&scores)]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&scores).unwrap();
    assert_eq!(text.lines().nth(1).unwrap().rsplit(',').next().unwrap(), "-0.018");
}

fn ten_sample_scores(dir: &Path) -> std::path::PathBuf {
    let metrics = dir.join("m.csv");
    let mut text = String::from("id,eps_i,eps_t,neg_dl,clip_cos,cin\n");
    for id in 0..10u32 {
        text.push_str(&format!("{id},{},0.5,-0.5,0.25,0\n", f64::from(id) / 16.0));
    }
    write(&metrics, &text);
    let scores = dir.join("s.csv");
    let out = hype(&["score", "--metrics", p(&metrics), "--out", p(&scores)]);
    assert_eq!(out.status.code(), Some(0));
    scores
}

#[test]
fn filter_keeps_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let scores = ten_sample_scores(dir.path());
    let ids = dir.path().join("ids.txt");
    let out = hype(&["filter", "--scores", p(&scores), "--fraction", "0.2", "--out", p(&ids)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&ids).unwrap(), "9\n8\n");
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ids.txt.json")).unwrap()).unwrap();
    assert_eq!(side["k"], 2);
    assert_eq!(side["weights"]["w_cin"], 1.0);

    let other = dir.path().join("other.txt");
    write(&other, "8\n3\n");
    let both = dir.path().join("both.txt");
    let out = hype(&[
        "filter", "--scores", p(&scores), "--fraction", "0.2", "--combine", p(&other), "--mode", "intersect",
        "--out", p(&both),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&both).unwrap(), "8\n");
}

#[test]
fn exit_codes() {
    assert_eq!(hype(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(hype(&["filter", "--bogus-flag"]).status.code(), Some(1));
    assert_eq!(hype(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let scores = ten_sample_scores(dir.path());
    let ids = dir.path().join("ids.txt");
    // Out-of-range argument is a usage error.
    let out = hype(&["filter", "--scores", p(&scores), "--fraction", "1.5", "--out", p(&ids)]);
    assert_eq!(out.status.code(), Some(1));
    // Unreadable or malformed input is a data error.
    let missing = dir.path().join("missing.csv");
    let out = hype(&["filter", "--scores", p(&missing), "--fraction", "0.5", "--out", p(&ids)]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.csv");
    write(&bad, "id,eps_i,eps_t,neg_dl,clip_cos,cin,score\n1,x,0,0,0,0,0\n");
    let out = hype(&["filter", "--scores", p(&bad), "--fraction", "0.5", "--out", p(&ids)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn histogram_from_scores() {
    let dir = tempfile::tempdir().unwrap();
    let scores = ten_sample_scores(dir.path());
    let hist = dir.path().join("h.csv");
    let out = hype(&["histogram", "--input", p(&scores), "--metric", "eps_i", "--bins", "2", "--out", p(&hist)]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&hist).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, ["bin_lo,bin_hi,percent", "0,0.28125,50", "0.28125,0.5625,50"]);
}

/// Full pipeline from training through filtering, byte-compared across
/// thread counts and chunk sizes.
#[test]
fn pipeline_is_deterministic_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let shard = d.join("toy.bin");
    let out = hype(&[
        "train-toy", "--steps", "300", "--categories", "3", "--images-per-category", "6",
        "--trace", p(&d.join("trace.csv")), "--out-shard", p(&shard),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let run = |threads: &str, chunk: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let tag = format!("{threads}_{chunk}");
        let refs = d.join(format!("refs_{tag}.bin"));
        let scores = d.join(format!("scores_{tag}.csv"));
        let ids = d.join(format!("ids_{tag}.txt"));
        let common = ["--threads", threads, "--chunk-size", chunk];
        let ok = |o: Output| assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        ok(hype(&[&["refset", "--data", p(&shard), "--n", "20", "--m", "10", "--out", p(&refs)][..], &common].concat()));
        ok(hype(&[&["score", "--data", p(&shard), "--refset", p(&refs), "--out", p(&scores)][..], &common].concat()));
        ok(hype(&[&["filter", "--scores", p(&scores), "--fraction", "0.3", "--out", p(&ids)][..], &common].concat()));
        (
            std::fs::read(&refs).unwrap(),
            std::fs::read(&scores).unwrap(),
            std::fs::read(&ids).unwrap(),
        )
    };
    let base = run("1", "4096");
    for (threads, chunk) in [("4", "1"), ("2", "7"), ("8", "64")] {
        assert!(base == run(threads, chunk), "outputs differ at threads={threads} chunk={chunk}");
    }
}

#[test]
fn refset_clamps_oversized_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let shard = d.join("toy.bin");
    let out = hype(&[
        "train-toy", "--steps", "10", "--trace", p(&d.join("t.csv")), "--out-shard", p(&shard),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let refs = d.join("refs.bin");
    let out = hype(&["refset", "--data", p(&shard), "--out", p(&refs)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds the dataset size"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("n=32 m=32"));
}

#[test]
fn synth_then_score() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let shard = d.join("synth.bin");
    let out = hype(&["synth", "--count", "200", "--dim", "8", "--seed", "3", "--out", p(&shard)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let refs = d.join("refs.bin");
    let out = hype(&["refset", "--data", p(&shard), "--n", "50", "--m", "10", "--out", p(&refs)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let scores = d.join("scores.csv");
    let out = hype(&["score", "--data", p(&shard), "--refset", p(&refs), "--out", p(&scores)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&scores).unwrap().lines().count(), 201);
    assert_eq!(hype(&["synth", "--count", "0", "--out", p(&shard)]).status.code(), Some(1));
}
