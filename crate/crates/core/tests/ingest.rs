//! Files shaped like the extractor's output: raw 768-d text, 6373-d audio and
//! 512-d speaker vectors for a handful of conversations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::Command;

use erfc::corpus::{load_features, load_utterances, Modality};
use erfc::features::load_dataset;
use erfc::turns::{assemble_turns, present_keys};

const DIMS: [(&str, usize); 3] = [("text", 768), ("audio", 6373), ("speaker", 512)];
const EMOTIONS: [&str; 6] = ["Happy", "Excited", "Sad", "Neutral", "Angry", "Frustrated"];

/// Three conversations over two sessions, four turns each, one utterance per
/// speaker per turn.
fn write_assets(dir: &Path) {
    let convs = ["Ses01_toy_a", "Ses01_toy_b", "Ses02_toy_c"];
    let mut utt = String::new();
    let mut feats: Vec<String> = DIMS
        .iter()
        .map(|(_, d)| {
            let mut h = String::from("conv_id,turn,slot");
            for i in 0..*d {
                write!(h, ",f{i}").unwrap();
            }
            h + "\n"
        })
        .collect();
    for (ci, conv) in convs.iter().enumerate() {
        let mut t0 = 0.0;
        for turn in 0..4 {
            for (slot, spk) in ["A", "B"].iter().enumerate() {
                let e = EMOTIONS[(ci + turn + slot) % 6];
                let a = 1.0 + ((ci + turn + slot) % 5) as f64;
                writeln!(
                    utt,
                    r#"{{"conv_id":"{conv}","utt_id":"{conv}_{turn}{spk}","speaker":"{spk}","t_start":{t0},"t_end":{},"text":"hello","emotion":"{e}","avd":[{a},3.0,2.5]}}"#,
                    t0 + 1.5
                )
                .unwrap();
                t0 += 2.0;
                for (m, (_, d)) in DIMS.iter().enumerate() {
                    let row = &mut feats[m];
                    write!(row, "{conv},{turn},{slot}").unwrap();
                    for i in 0..*d {
                        let v = ((ci * 31 + turn * 7 + slot * 3 + i * (m + 1)) % 97) as f64 / 97.0 - 0.5;
                        write!(row, ",{v}").unwrap();
                    }
                    row.push('\n');
                }
            }
        }
    }
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("utterances.jsonl"), utt).unwrap();
    for ((name, _), body) in DIMS.iter().zip(feats) {
        fs::write(dir.join(format!("{name}.csv")), body).unwrap();
    }
}

fn run(args: &[&str], cwd: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_erfc"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn extractor_files_ingest_with_declared_dims() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("assets");
    write_assets(&dir);
    let convs = load_utterances(dir.join("utterances.jsonl")).unwrap();
    assert_eq!(convs.len(), 3);
    let turns: Vec<_> = convs.iter().map(|c| assemble_turns(c).unwrap()).collect();
    let known = present_keys(turns.iter().flatten());
    for (m, (_, d)) in Modality::ALL.into_iter().zip(DIMS) {
        let store = load_features(dir.join(format!("{m}.csv")), m, Some(&known)).unwrap();
        assert_eq!(store.dim, d);
        assert_eq!(store.len(), 24);
    }
}

#[test]
fn extractor_files_build_and_train() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_assets(&d.join("assets"));

    run(&["build", "--corpus", "assets", "--w", "1", "--horizon", "1", "--out", "raw"], d);
    let raw = load_dataset(d.join("raw")).unwrap();
    assert_eq!((raw.meta.dims.text, raw.meta.dims.audio, raw.meta.dims.speaker), (768, 6373, 512));
    assert_eq!(raw.examples.len(), 12);

    run(&["fit-pca", "--corpus", "assets", "--out", "pca"], d);
    run(&["build", "--corpus", "assets", "--pca-dir", "pca", "--w", "1", "--horizon", "1", "--out", "ds"], d);
    let ds = load_dataset(d.join("ds")).unwrap();
    assert_eq!(ds.examples.len(), 12);
    // One training conversation after the holdout gives 8 rows, so at most 7
    // components.
    assert_eq!(ds.meta.dims.text, 768);
    assert!(ds.meta.dims.audio <= 7 && ds.meta.dims.speaker <= 7);
    run(&["train", "--dataset", "ds", "--learner", "rf:5:4", "--folds", "2", "--out", "model"], d);
    assert!(d.join("model/model.json").exists());
}
