mod common;

use std::process::Output;

use common::{mvfnet, workspace_path};

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn cost_table_and_usage_errors() {
    let ok = mvfnet(&["cost", "--crops", "3", "--clips", "10"]);
    assert_eq!(code(&ok), 0);
    let text = String::from_utf8(ok.stdout).unwrap();
    assert!(text.contains("32.9G × 30"), "{text}");

    for (args, flag) in [
        (&["cost", "--backbone", "vgg16"][..], "--backbone"),
        (&["cost", "--alpha", "1.5"], "--alpha"),
        (&["cost", "--stages", "res9"], "--stages"),
        (&["cost", "--frames", "0"], "--frames"),
        (&["cost", "--crops", "0", "--clips", "1"], "--crops"),
        (&["gradcheck", "--target", "everything"], "--target"),
        (&["gradcheck", "--epsilon", "1e-2"], "--epsilon"),
        (&["equiv", "--which", "slowfast"], "--which"),
    ] {
        let out = mvfnet(args);
        assert_eq!(code(&out), 2, "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).contains(flag), "{args:?}: {}", stderr(&out));
        assert!(out.stdout.is_empty());
    }
    assert_eq!(code(&mvfnet(&[])), 2);
    assert_eq!(code(&mvfnet(&["fit"])), 2);
}

#[test]
fn corrupted_gradients_fail_the_check() {
    assert_eq!(code(&mvfnet(&["gradcheck", "--target", "ops"])), 0);
    let out = mvfnet(&["gradcheck", "--target", "ops", "--corrupt", "--json"]);
    assert_eq!(code(&out), 1);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["passed"], false);
    assert!(doc["cases"].as_array().unwrap().iter().all(|c| c["passed"] == false));
}

#[test]
fn equivalences_pass() {
    let out = mvfnet(&["equiv", "--trials", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run").to_string_lossy().into_owned();
    let missing = dir.path().join("missing.json").to_string_lossy().into_owned();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
    let bad = bad.to_string_lossy().into_owned();
    let r50 = dir.path().join("r50.json");
    std::fs::write(&r50, r#"{"network": {"backbone": "r50"}}"#).unwrap();
    let r50 = r50.to_string_lossy().into_owned();
    for cfg in [&missing, &bad, &r50] {
        let out = mvfnet(&["train", cfg, "--out", &out_dir, "--quiet"]);
        assert_eq!(code(&out), 3, "{cfg}: {}", stderr(&out));
    }
    assert!(stderr(&mvfnet(&["train", &bad, "--out", &out_dir])).contains("learning_rate"));
    assert_eq!(code(&mvfnet(&["eval", &missing, "weights.mvfw"])), 3);
}

#[test]
fn weight_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_string_lossy().into_owned();
    let smoke = workspace_path("configs/smoke.json");
    let trained = mvfnet(&["train", &smoke, "--out", &out_dir, "--quiet"]);
    assert_eq!(code(&trained), 0, "{}", stderr(&trained));
    let weights = dir.path().join("weights.mvfw");
    let weights_arg = weights.to_string_lossy().into_owned();
    assert_eq!(code(&mvfnet(&["eval", &smoke, &weights_arg])), 0);

    // The smoke network has MVF modules; the C2D network has none.
    let out = mvfnet(&["eval", &workspace_path("configs/full_eight_c2d.json"), &weights_arg]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("mvf"), "{}", stderr(&out));

    let bytes = std::fs::read(&weights).unwrap();
    let truncated = dir.path().join("truncated.mvfw");
    std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
    let garbage = dir.path().join("garbage.mvfw");
    std::fs::write(&garbage, b"not a weight file").unwrap();
    for f in [truncated, garbage, dir.path().join("absent.mvfw")] {
        let out = mvfnet(&["eval", &smoke, &f.to_string_lossy()]);
        assert_eq!(code(&out), 4, "{}: {}", f.display(), stderr(&out));
    }
}

#[test]
fn reports_are_byte_identical_across_runs() {
    for args in [&["cost", "--backbone", "r101", "--frames", "16", "--json"][..], &["gradcheck", "--target", "mvf", "--json"], &["equiv", "--trials", "4", "--json"]] {
        let (a, b) = (mvfnet(args), mvfnet(args));
        assert_eq!(code(&a), 0);
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}
