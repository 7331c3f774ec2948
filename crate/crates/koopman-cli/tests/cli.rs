//! End-to-end checks of the command-line surface: the pipeline runs, outputs
//! are deterministic, and failure classes map onto the documented exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_koopman"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("koopman-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, contents: &str) {
    std::fs::write(path, contents).unwrap();
}

#[test]
fn datagen_is_deterministic_and_reruns_byte_identical() {
    let dir = temp_dir("datagen");
    let cfg = dir.join("datagen.toml");
    let out = dir.join("data.kmd");
    write(
        &cfg,
        &format!(
            r#"
system = "vdp"
trajectories = 2
steps = 25
seed = 3
format = "binary"
out = "{}"
"#,
            out.display()
        ),
    );
    let status = bin().args(["datagen", "--config"]).arg(&cfg).status().unwrap();
    assert!(status.success());
    let first = std::fs::read(&out).unwrap();
    let status = bin().args(["datagen", "--config"]).arg(&cfg).status().unwrap();
    assert!(status.success());
    let second = std::fs::read(&out).unwrap();
    assert_eq!(first, second);

    // a different seed from the flag changes the bytes
    let status = bin().args(["datagen", "--seed", "4", "--config"]).arg(&cfg).status().unwrap();
    assert!(status.success());
    assert_ne!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn fit_predict_compare_pipeline_runs() {
    let dir = temp_dir("pipeline");
    let data = dir.join("vdp.kmd");
    let model = dir.join("model.txt");
    let datagen_cfg = dir.join("datagen.toml");
    write(
        &datagen_cfg,
        &format!(
            r#"
system = "vdp"
trajectories = 10
steps = 200
seed = 0
out = "{}"
"#,
            data.display()
        ),
    );
    assert!(bin().args(["datagen", "--config"]).arg(&datagen_cfg).status().unwrap().success());

    let fit_cfg = dir.join("fit.toml");
    write(
        &fit_cfg,
        &format!(
            r#"
dataset = "{}"
out = "{}"

[dictionary]
kind = "rbf"
count = 20
rbf = "thin_plate"
seed = 0
sample_box = [[-1.0, 1.0], [-1.0, 1.0]]
"#,
            data.display(),
            model.display()
        ),
    );
    assert!(bin().args(["fit", "--config"]).arg(&fit_cfg).status().unwrap().success());
    let model_text = std::fs::read_to_string(&model).unwrap();
    assert!(model_text.starts_with("koopman-model v1"));

    let predict_cfg = dir.join("predict.toml");
    let predict_out = dir.join("predict.csv");
    write(
        &predict_cfg,
        &format!(
            r#"
system = "vdp"
model = "{}"
x0 = [0.5, 0.5]
steps = 50
seed = 0
out = "{}"

[forcing]
kind = "square"
amplitude = 1.0
period = 0.3
"#,
            model.display(),
            predict_out.display()
        ),
    );
    assert!(bin().args(["predict", "--config"]).arg(&predict_cfg).status().unwrap().success());
    let predict_csv = std::fs::read_to_string(&predict_out).unwrap();
    assert!(predict_csv.starts_with("step,t,y_true0,y_true1,y_pred0,y_pred1"));
    assert_eq!(predict_csv.lines().count(), 52);

    let compare_cfg = dir.join("compare.toml");
    let compare_out = dir.join("table.csv");
    write(
        &compare_cfg,
        &format!(
            r#"
system = "vdp"
model = "{}"
predictors = ["koopman", "truth"]
trials = 3
horizon_steps = 40
seed = 0
out = "{}"

[forcing]
kind = "square"
amplitude = 1.0
period = 0.3
"#,
            model.display(),
            compare_out.display()
        ),
    );
    assert!(bin().args(["compare", "--config"]).arg(&compare_cfg).status().unwrap().success());
    let table = std::fs::read_to_string(&compare_out).unwrap();
    assert!(table.starts_with("predictor,trial,rmse_percent"));
    for line in table.lines().filter(|l| l.starts_with("truth")) {
        assert!(line.ends_with(",0"), "self-comparison row {line:?}");
    }
    let summary = std::fs::read_to_string(dir.join("table.csv.summary.csv")).unwrap();
    assert!(summary.starts_with("predictor,mean_rmse_percent"));

    // identical rerun produces identical bytes
    let before = std::fs::read(&compare_out).unwrap();
    assert!(bin().args(["compare", "--config"]).arg(&compare_cfg).status().unwrap().success());
    assert_eq!(before, std::fs::read(&compare_out).unwrap());
}

#[test]
fn missing_input_file_exits_with_code_two() {
    let dir = temp_dir("missing");
    let fit_cfg = dir.join("fit.toml");
    write(
        &fit_cfg,
        r#"
dataset = "does-not-exist.kmd"
out = "model.txt"

[dictionary]
kind = "identity"
"#,
    );
    let status = bin().args(["fit", "--config"]).arg(&fit_cfg).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = temp_dir("unknown-key");
    let cfg = dir.join("datagen.toml");
    write(
        &cfg,
        r#"
system = "vdp"
trajectories = 1
steps = 1
typo_key = 5
out = "x.kmd"
"#,
    );
    let status = bin().args(["datagen", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn missing_config_flag_exits_with_code_two() {
    let status = bin().arg("datagen").status().unwrap();
    assert_eq!(status.code(), Some(2));
}
