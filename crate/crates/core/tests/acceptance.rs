//! Acceptance suite. Each test prints one `PASS` or `FAIL` line and fails on
//! `FAIL`. Tests hold a shared lock so wall-clock limits are measured without
//! competing for cores. Verdicts go straight to stderr so they show up without
//! `--nocapture`.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use erfc::corpus::{group_conversations, AvdTriple, Emotion, FeatureStore, Modality, Scheme, UtteranceRecord};
use erfc::eval::{
    check_no_leakage, compute_metrics, evaluate_examples, fit_modality_pca, round1, run_grid, train_pipeline, CorpusData,
    ExperimentSpec, Metrics, PipelineConfig,
};
use erfc::features::{ConversationFrames, FeatureInputs, ModalDims, ModalInput, Pca, WindowConfig};
use erfc::model::{LearnerSpec, StackedForecaster, TrainConfig};
use erfc::synth::{bayes_oracle, generate, Conditioning, Preset, MIN_TRIALS};
use erfc::turns::{assemble_turns, runs, Turn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static LOCK: Mutex<()> = Mutex::new(());

const SEEDS: u64 = 10;

/// Runs one criterion, prints its verdict line and fails the test on `FAIL`.
fn criterion(name: &str, limit: Option<Duration>, body: impl FnOnce() -> Result<String, String>) {
    let _guard = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let outcome = body();
    let took = start.elapsed();
    let outcome = match (outcome, limit) {
        (Ok(detail), Some(l)) if took > l => Err(format!("{detail}; took {:.1}s, limit {}s", took.as_secs_f64(), l.as_secs())),
        (o, _) => o,
    };
    match outcome {
        Ok(detail) => verdict(&format!("PASS {name}: {detail} [{:.1}s]", took.as_secs_f64())),
        Err(detail) => {
            verdict(&format!("FAIL {name}: {detail} [{:.1}s]", took.as_secs_f64()));
            panic!("{name} failed: {detail}");
        }
    }
}

fn verdict(line: &str) {
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pct(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.1}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Mean of each report's metric over seeds, one entry per spec.
fn mean_over_seeds(
    preset: Preset,
    specs: &[ExperimentSpec],
    horizon: usize,
    seeds: u64,
    mut each: impl FnMut(&[Metrics], u64) -> Result<(), String>,
) -> Result<Vec<Vec<f64>>, String> {
    // [spec][horizon] accumulated, plus overall in the last slot.
    let mut sums = vec![vec![0.0; horizon + 2]; specs.len()];
    for seed in 0..seeds {
        let corpus = generate(&preset.config(seed)).map_err(|e| e.to_string())?;
        let data = CorpusData::from_synth(&corpus).map_err(|e| e.to_string())?;
        let cfg = PipelineConfig {
            horizon,
            seed,
            ..PipelineConfig::default()
        };
        let reports = run_grid(&data, specs, &cfg).map_err(|e| e.to_string())?;
        let metrics: Vec<Metrics> = reports.into_iter().map(|r| r.metrics).collect();
        each(&metrics, seed)?;
        for (s, m) in sums.iter_mut().zip(&metrics) {
            for (h, a) in m.acc_per_horizon.iter().enumerate() {
                s[h] += a;
            }
            s[horizon + 1] += m.acc_overall;
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| s.into_iter().map(|v| v / seeds as f64).collect())
        .collect())
}

fn oracle_percent(preset: Preset, k: usize, c: Conditioning) -> Result<Vec<f64>, String> {
    let curve = bayes_oracle(&preset.config(0), k, c, MIN_TRIALS).map_err(|e| e.to_string())?;
    Ok(curve.accuracy.iter().map(|a| 100.0 * a).collect())
}

// ---------------------------------------------------------------- metrics

#[test]
fn metric_identity() {
    criterion("metric identity", Some(Duration::from_secs(5)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let k = rng.random_range(1..=5);
            let c = rng.random_range(2..=6);
            let window = WindowConfig::uniform(1, k, true, if c <= 4 { Scheme::Four } else { Scheme::Six });
            let c = window.n_classes();
            let n = rng.random_range(3..40);
            let mut predicted = Vec::new();
            let mut targets = Vec::new();
            for _ in 0..n {
                predicted.push((0..window.n_targets()).map(|_| rng.random_range(0..c)).collect());
                targets.push(
                    (0..window.n_targets())
                        .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..c)))
                        .collect::<Vec<_>>(),
                );
            }
            // Every horizon needs at least one unmasked target.
            for (j, t) in targets[0].iter_mut().enumerate() {
                if j < k + 1 {
                    t.get_or_insert(0);
                }
            }
            let m = compute_metrics(&predicted, &targets, &window).map_err(|e| e.to_string())?;
            let future = m.acc_future_avg.ok_or("missing future average")?;
            let identity = (m.acc_current + k as f64 * future) / (k + 1) as f64;
            worst = worst.max((identity - m.acc_overall).abs());
        }
        ensure(worst <= 1e-12, || format!("largest deviation {worst:e}"))?;
        let rows = [((73.2, 61.2), 64.2), ((63.2, 57.0), 58.6)];
        for ((cur, fut), want) in rows {
            let got = round1((cur + 3.0 * fut) / 4.0);
            ensure(got == want, || format!("({cur}, {fut}) gives {got}, expected {want}"))?;
        }
        Ok(format!("1000 random sets, max deviation {worst:.1e}; 64.2 and 58.6 reproduce"))
    });
}

// ---------------------------------------------------------- turns, window

/// A conversation of `n_runs` alternating runs of 1 to 3 utterances.
fn random_conversation(rng: &mut ChaCha8Rng, id: &str, n_runs: usize) -> Vec<UtteranceRecord> {
    let first_b = rng.random_bool(0.5);
    let mut t = 0.0;
    let mut out = Vec::new();
    for r in 0..n_runs {
        let speaker = if (r % 2 == 0) != first_b { "A" } else { "B" };
        for u in 0..rng.random_range(1..=3) {
            let d = rng.random_range(0.5..4.0);
            out.push(UtteranceRecord {
                conv_id: id.into(),
                utt_id: format!("{id}_{r}_{u}"),
                speaker: speaker.into(),
                t_start: t,
                t_end: t + d,
                text: Some("x".into()),
                emotion: Emotion::ALL[rng.random_range(0..6)],
                avd: Some(AvdTriple::new(3.0, 3.0, 3.0)),
            });
            t += d + 0.1;
        }
    }
    out
}

fn stores_for(turns: &[Turn], dims: [usize; 3]) -> [FeatureStore; 3] {
    let mut stores = Modality::ALL.map(|m| FeatureStore::new(m, dims[m as usize]));
    for turn in turns {
        for slot in 0..2u8 {
            if turn.sides[slot as usize].present() {
                for s in stores.iter_mut() {
                    let v = vec![turn.turn_index as f64 + 0.1 * f64::from(slot); s.dim];
                    s.insert(turn.key(slot), v).unwrap();
                }
            }
        }
    }
    stores
}

fn inputs(stores: &[FeatureStore; 3]) -> FeatureInputs<'_> {
    FeatureInputs {
        text: Some(ModalInput { store: &stores[0], pca: None }),
        audio: Some(ModalInput { store: &stores[1], pca: None }),
        speaker: Some(ModalInput { store: &stores[2], pca: None }),
    }
}

#[test]
fn turn_and_window_arithmetic() {
    criterion("turn/window arithmetic", Some(Duration::from_secs(5)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        for i in 0..300 {
            let id = format!("c{i}");
            let n_runs = rng.random_range(1..=15);
            let records = random_conversation(&mut rng, &id, n_runs);
            let n_records = records.len();
            let conv = group_conversations(records).map_err(|e| e.to_string());
            // A single run has one speaker and is not dyadic.
            let Ok(convs) = conv else {
                ensure(n_runs == 1, || format!("{id}: unexpected rejection"))?;
                continue;
            };
            let conv = &convs[0];
            let turns = assemble_turns(conv).map_err(|e| e.to_string())?;
            let n_runs = runs(&conv.records).len();
            ensure(turns.len() == n_runs.div_ceil(2), || format!("{id}: {} turns for {n_runs} runs", turns.len()))?;
            let ids: Vec<&String> = turns.iter().flat_map(|t| t.sides.iter().flat_map(|s| &s.utt_ids)).collect();
            let unique: BTreeSet<&String> = ids.iter().copied().collect();
            ensure(ids.len() == n_records && unique.len() == n_records, || format!("{id}: utterances not conserved"))?;

            let k = rng.random_range(0..=4);
            let w = rng.random_range(0..=3);
            let window = WindowConfig::uniform(w, k, true, Scheme::Six);
            let stores = stores_for(&turns, [3, 2, 1]);
            let frames = ConversationFrames::new(&turns, &inputs(&stores), &window).map_err(|e| e.to_string())?;
            let examples = frames.examples();
            ensure(examples.len() == turns.len(), || format!("{id}: {} examples for {} turns", examples.len(), turns.len()))?;
            let big_t = turns.len();
            for ex in &examples {
                ensure(ex.x.len() == 2 * ((w + 1) * 6 + w * 4), || format!("{id}: width {}", ex.x.len()))?;
                for slot in 0..2u8 {
                    for h in 0..=k {
                        let masked = ex.targets[window.target_index(slot, h)].is_none();
                        let j = ex.turn + h;
                        let expect = j >= big_t || !turns[j].sides[slot as usize].present();
                        ensure(masked == expect, || format!("{id}: turn {} slot {slot} h {h} masking", ex.turn))?;
                    }
                }
            }
            checked += 1;
        }
        let default = WindowConfig::uniform(3, 3, true, Scheme::Six);
        let dims = ModalDims {
            text: 768,
            audio: 250,
            speaker: 256,
        };
        let formula = |d: &ModalDims, w: usize, we: usize, avd: bool| 2 * ((w + 1) * (d.text + d.audio + d.speaker) + we * (1 + 3 * usize::from(avd)));
        ensure(default.x_dim(&dims) == 10216, || format!("default width {}", default.x_dim(&dims)))?;
        for (w, avd) in [(0, true), (1, false), (2, true), (3, false)] {
            let win = WindowConfig::uniform(w, 3, avd, Scheme::Six);
            ensure(win.x_dim(&dims) == formula(&dims, w, w, avd), || format!("w={w} avd={avd}"))?;
        }
        Ok(format!("{checked} random conversations; default width 10216"))
    });
}

// -------------------------------------------------------------------- PCA

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order and eigenvectors as columns.
fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance with the `N - 1` denominator.
fn covariance(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in x {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    c.iter_mut().flatten().for_each(|v| *v /= (n - 1) as f64);
    c
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest principal angle between the spans of two orthonormal sets.
fn max_principal_angle(u: &[Vec<f64>], v: &[Vec<f64>]) -> f64 {
    let k = u.len();
    let m: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dot(&u[i], &v[j])).collect()).collect();
    let mtm: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| (0..k).map(|r| m[r][i] * m[r][j]).sum()).collect())
        .collect();
    let (cos2, _) = jacobi(mtm);
    let smallest = cos2.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
    (1.0 - smallest).max(0.0).sqrt().asin()
}

fn fit(x: &[Vec<f64>], k: usize) -> Result<Pca, String> {
    let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    Pca::fit_rows(&rows, k).map_err(|e| e.to_string())
}

#[test]
fn pca_matches_bruteforce_eigendecomposition() {
    criterion("PCA oracle equivalence", Some(Duration::from_secs(5)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mut worst_angle, mut worst_var, mut compared, mut skipped) = (0.0f64, 0.0f64, 0, 0);
        for _ in 0..150 {
            let n = rng.random_range(3..=20);
            let d = rng.random_range(2..=12);
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64)).collect())
                .collect();
            let (values, vectors) = jacobi(covariance(&x));
            for k in 1..=(n - 1).min(d) {
                let pca = fit(&x, k)?;
                for (j, v) in pca.explained_variance.iter().enumerate() {
                    worst_var = worst_var.max((v - values[j]).abs());
                }
                // The top-k subspace is only defined with a gap after k.
                let gap = if k < d { values[k - 1] - values[k] } else { f64::INFINITY };
                if gap <= 1e-6 * values[0] {
                    skipped += 1;
                    continue;
                }
                worst_angle = worst_angle.max(max_principal_angle(&pca.components, &vectors[..k]));
                compared += 1;
            }
        }
        ensure(worst_angle < 1e-6, || format!("principal angle {worst_angle:e}"))?;
        ensure(worst_var < 1e-9, || format!("explained variance off by {worst_var:e}"))?;

        for r in 1..=5 {
            let (n, d) = (20, 12);
            let a: Vec<Vec<f64>> = (0..n).map(|_| (0..r).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let b: Vec<Vec<f64>> = (0..r).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let x: Vec<Vec<f64>> = a
                .iter()
                .map(|ai| (0..d).map(|j| 5.0 + (0..r).map(|l| ai[l] * b[l][j]).sum::<f64>()).collect())
                .collect();
            let pca = fit(&x, d.min(n - 1))?;
            let top = pca.explained_variance[0];
            let rank = pca.explained_variance.iter().filter(|&&v| v > 1e-9 * top).count();
            ensure(rank == r, || format!("planted rank {r}, recovered {rank}"))?;
            let kept: f64 = pca.explained_variance[..r].iter().sum();
            ensure((kept / pca.total_variance - 1.0).abs() < 1e-9, || format!("rank {r}: kept share {}", kept / pca.total_variance))?;
        }
        Ok(format!(
            "{compared} subspaces, max angle {worst_angle:.1e}, max variance error {worst_var:.1e} ({skipped} without an eigengap skipped); ranks 1-5 recovered"
        ))
    });
}

// ---------------------------------------------------------------- leakage

#[test]
fn no_leakage() {
    criterion("no leakage", Some(Duration::from_secs(30)), || {
        // Structural: x at turn t is blind to every label and AVD at t..t+k.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let records = random_conversation(&mut rng, "s", 14);
        let turns = assemble_turns(&group_conversations(records).map_err(|e| e.to_string())?[0]).map_err(|e| e.to_string())?;
        let k = 3;
        let window = WindowConfig::uniform(3, k, true, Scheme::Six);
        let stores = stores_for(&turns, [2, 2, 2]);
        let base = ConversationFrames::new(&turns, &inputs(&stores), &window).map_err(|e| e.to_string())?;
        let mut history_seen = 0;
        for t in 0..turns.len() {
            let mut altered = turns.clone();
            for turn in altered.iter_mut().skip(t) {
                for side in turn.sides.iter_mut().filter(|s| s.present()) {
                    let next = Emotion::ALL[(side.label.unwrap() as usize + 1) % 6];
                    side.label = Some(next);
                    side.avd = Some(AvdTriple::new(1.0, 5.0, 1.0));
                }
            }
            let frames = ConversationFrames::new(&altered, &inputs(&stores), &window).map_err(|e| e.to_string())?;
            ensure(frames.features(t) == base.features(t), || format!("x at turn {t} changed with labels at t..T"))?;
            ensure(frames.targets(t) != base.targets(t), || format!("targets at {t} did not change"))?;
            if t + 1 < turns.len() && frames.features(t + 1) != base.features(t + 1) {
                history_seen += 1;
            }
        }
        ensure(history_seen > 0, || "emotion history never reached x".into())?;

        // OOF provenance and reduction fitting on a small corpus.
        let mut cfg = Preset::Benchmark.config(3);
        cfg.n_conversations = 30;
        let data = CorpusData::from_synth(&generate(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let pipeline = PipelineConfig {
            horizon: 1,
            learner: LearnerSpec::LogReg { l2: 1.0 },
            audio_components: Some(6),
            speaker_components: Some(4),
            seed: 3,
            ..PipelineConfig::default()
        };
        let window = WindowConfig::uniform(1, 1, true, Scheme::Six);
        let trained = train_pipeline(&data, &window, &pipeline).map_err(|e| e.to_string())?;
        let model = &trained.model;
        let prov = &model.provenance;
        ensure(prov.violations().is_empty(), || format!("{} provenance violations", prov.violations().len()))?;
        for (conv, _, fold) in &prov.rows {
            ensure(model.fold_assignment.get(conv) == Some(fold), || format!("{conv}: row fold {fold} disagrees with assignment"))?;
            ensure(!prov.fold_trained_on[*fold].contains(conv), || format!("{conv}: fold {fold} model saw it"))?;
        }
        for (f, seen) in prov.fold_trained_on.iter().enumerate() {
            let expected: BTreeSet<String> = model.fold_assignment.iter().filter(|(_, g)| **g != f).map(|(c, _)| c.clone()).collect();
            ensure(*seen == expected, || format!("fold {f} trained on the wrong conversations"))?;
        }
        let train: BTreeSet<String> = trained.split.train.iter().cloned().collect();
        let test: BTreeSet<String> = trained.split.test.iter().cloned().collect();
        for pca in [&model.preprocessing.audio_pca, &model.preprocessing.speaker_pca] {
            let pca = pca.as_ref().ok_or("reduction missing")?;
            ensure(pca.fitted_on.is_disjoint(&test), || "PCA saw test conversations".into())?;
            ensure(pca.fitted_on == train, || "PCA fitted on something other than the training set".into())?;
        }
        ensure(model.fitted_on.is_disjoint(&test), || "model saw test conversations".into())?;
        check_no_leakage(model, &trained.split.test).map_err(|e| e.to_string())?;

        // Negative control: a reduction fitted with a test conversation is caught.
        let mut tainted = model.clone();
        let mut ids = trained.split.train.clone();
        ids.push(trained.split.test[0].clone());
        tainted.preprocessing.audio_pca = fit_modality_pca(&data, Modality::Audio, &ids, 6).map_err(|e| e.to_string())?;
        ensure(check_no_leakage(&tainted, &trained.split.test).is_err(), || "tainted PCA not detected".into())?;
        Ok(format!(
            "x blind to t..t+k on {} turns; {} level-2 rows clean; PCA fitted on {} train conversations only",
            turns.len(),
            prov.rows.len(),
            train.len()
        ))
    });
}

// ------------------------------------------------------ synthetic results

#[test]
fn oracle_approach() {
    criterion("oracle approach", Some(Duration::from_secs(180)), || {
        let oracle = oracle_percent(Preset::Separable, 0, Conditioning::FullHistory)?[0];
        let spec = [ExperimentSpec::new("E4", Scheme::Six, true, 3)];
        // Only the current turn is scored, so the horizon is 0.
        let means = mean_over_seeds(Preset::Separable, &spec, 0, SEEDS, |_, _| Ok(()))?;
        let acc = means[0][0];
        ensure(acc >= oracle - 3.0, || format!("current-turn {acc:.2} vs oracle {oracle:.2}"))?;
        Ok(format!("current-turn {acc:.2} vs oracle {oracle:.2} over {SEEDS} seeds"))
    });
}

#[test]
fn horizon_decay() {
    criterion("horizon decay", None, || {
        let k = 3;
        let oracle = oracle_percent(Preset::Benchmark, k, Conditioning::FullHistory)?;
        let spec = [ExperimentSpec::new("E4", Scheme::Six, true, 3)];
        let means = mean_over_seeds(Preset::Benchmark, &spec, k, SEEDS, |_, _| Ok(()))?;
        let acc = &means[0][..=k];
        for h in 1..=k {
            ensure(acc[h] <= acc[h - 1] + 2.0, || format!("rises at h={h}: {}", pct(acc)))?;
        }
        for h in 0..=k {
            ensure(acc[h] <= oracle[h] + 1.0, || format!("h={h} above oracle: {} vs {}", pct(acc), pct(&oracle)))?;
        }
        Ok(format!("mean by horizon {} vs oracle {}", pct(acc), pct(&oracle)))
    });
}

#[test]
fn context_ablation() {
    criterion("context ablation", Some(Duration::from_secs(180)), || {
        let full = oracle_percent(Preset::Influence, 1, Conditioning::FullHistory)?;
        let blind = oracle_percent(Preset::Influence, 1, Conditioning::EmissionsOnly)?;
        let designed = full[1] - blind[1];
        ensure(designed >= 10.0, || format!("designed oracle gap {designed:.1}"))?;
        let specs = [
            ExperimentSpec::new("w0", Scheme::Six, true, 0),
            ExperimentSpec::new("w1", Scheme::Six, true, 1),
        ];
        // The comparison is at horizon 1, so forecast one turn ahead.
        let means = mean_over_seeds(Preset::Influence, &specs, 1, SEEDS, |_, _| Ok(()))?;
        let gap = means[1][1] - means[0][1];
        ensure(gap >= 5.0, || format!("w1 {:.1} vs w0 {:.1} at h=1", means[1][1], means[0][1]))?;
        Ok(format!(
            "h=1: w1 {:.1} vs w0 {:.1}, gap {gap:.1} over {SEEDS} seeds (designed oracle gap {designed:.1})",
            means[1][1], means[0][1]
        ))
    });
}

#[test]
fn avd_ablation() {
    criterion("AVD ablation", None, || {
        let specs = ExperimentSpec::parse_list("E4,E5").map_err(|e| e.to_string())?;
        let means = mean_over_seeds(Preset::Intensity, &specs, 3, SEEDS, |_, _| Ok(()))?;
        let (with, without) = (means[0][4], means[1][4]);
        ensure(with - without >= 3.0, || format!("E4 {with:.1} vs E5 {without:.1}"))?;
        Ok(format!("overall E4 {with:.1} vs E5 {without:.1}, gain {:.1} over {SEEDS} seeds", with - without))
    });
}

/// Twin classes in the six-class order and their partner index.
const TWINS: [(usize, usize); 4] = [(0, 1), (1, 0), (4, 5), (5, 4)];

#[test]
fn class_merge() {
    criterion("class merge", None, || {
        let specs = ExperimentSpec::parse_list("E4,E6").map_err(|e| e.to_string())?;
        let seeds = 5;
        // Six-class confusion summed over seeds, so each seed's tilt towards
        // one twin does not decide the share alone.
        let mut confusion = vec![vec![0u64; 6]; 6];
        let means = mean_over_seeds(Preset::Twins, &specs, 3, seeds, |m, seed| {
            ensure(m[1].acc_overall > m[0].acc_overall, || {
                format!("seed {seed}: E6 {:.1} not above E4 {:.1}", m[1].acc_overall, m[0].acc_overall)
            })?;
            for (sum, row) in confusion.iter_mut().zip(&m[0].confusion) {
                sum.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            Ok(())
        })?;
        let shares: Vec<f64> = TWINS
            .iter()
            .map(|&(row, twin)| confusion[row][twin] as f64 / confusion[row].iter().sum::<u64>().max(1) as f64)
            .collect();
        let share_text = TWINS
            .iter()
            .zip(&shares)
            .map(|(&(row, _), s)| format!("{} {:.0}%", Emotion::ALL[row].name(), 100.0 * s))
            .collect::<Vec<_>>()
            .join(", ");

        // Count structure: fully unmasked examples give n·2·(k+1) entries.
        let mut cfg = Preset::Twins.config(0);
        cfg.n_conversations = 40;
        let data = CorpusData::from_synth(&generate(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let pipeline = PipelineConfig {
            learner: "rf:20:8".parse().map_err(|e: erfc::model::ModelError| e.to_string())?,
            ..PipelineConfig::default()
        };
        let window = specs[0].window(pipeline.horizon);
        let trained = train_pipeline(&data, &window, &pipeline).map_err(|e| e.to_string())?;
        let frames = data
            .frames(&trained.split.test, &trained.model.preprocessing, &window)
            .map_err(|e| e.to_string())?;
        let full: Vec<_> = frames
            .iter()
            .flat_map(ConversationFrames::examples)
            .filter(|e| e.unmasked() == window.n_targets())
            .collect();
        let report = evaluate_examples(&trained.model, &full).map_err(|e| e.to_string())?;
        let count: u64 = report.metrics.confusion.iter().flatten().sum();
        let expected = (full.len() * 2 * (window.horizon + 1)) as u64;
        ensure(count == expected, || format!("confusion total {count}, expected {expected}"))?;

        let detail = format!(
            "E6 {:.1} vs E4 {:.1} (every seed of {seeds}); twin share {share_text}; {count} = {}·2·{}",
            means[1][4],
            means[0][4],
            full.len(),
            window.horizon + 1
        );
        ensure(shares.iter().all(|&s| s >= 0.30), || detail.clone())?;
        Ok(detail)
    });
}

// ------------------------------------------------------------ determinism

#[test]
fn determinism() {
    criterion("determinism", None, || {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let run = |out: &str, jobs: &str| -> Result<Vec<u8>, String> {
            let o = Command::new(env!("CARGO_BIN_EXE_erfc"))
                .args([
                    "grid", "--specs", "E1,E4,E5,E6", "--seed", "7", "--n-conversations", "30", "--horizon", "2",
                    "--learner", "rf:20:8", "--jobs", jobs, "--out", out,
                ])
                .current_dir(tmp.path())
                .env("RUST_LOG", "warn")
                .output()
                .map_err(|e| e.to_string())?;
            ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
            fs::read(tmp.path().join(out).join("report.json")).map_err(|e| e.to_string())
        };
        let a = run("a", "1")?;
        let b = run("b", "1")?;
        let c = run("c", "4")?;
        ensure(a == b, || "two runs with --jobs 1 differ".into())?;
        ensure(a == c, || "--jobs 1 and --jobs 4 differ".into())?;

        // In-process: training twice on shuffled example order gives the same model.
        let mut cfg = Preset::Benchmark.config(1);
        cfg.n_conversations = 20;
        let data = CorpusData::from_synth(&generate(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let window = WindowConfig::uniform(1, 1, true, Scheme::Six);
        let ids: Vec<String> = data.conv_ids().map(str::to_string).collect();
        let prep = Default::default();
        let mut examples: Vec<_> = data
            .frames(&ids, &prep, &window)
            .map_err(|e| e.to_string())?
            .iter()
            .flat_map(ConversationFrames::examples)
            .collect();
        let tc = TrainConfig::new("rf:10:6".parse().map_err(|e: erfc::model::ModelError| e.to_string())?, 5);
        let m1 = StackedForecaster::train(&examples, &window, &tc).map_err(|e| e.to_string())?;
        examples.reverse();
        let m2 = StackedForecaster::train(&examples, &window, &tc).map_err(|e| e.to_string())?;
        let j1 = serde_json::to_string(&m1).map_err(|e| e.to_string())?;
        let j2 = serde_json::to_string(&m2).map_err(|e| e.to_string())?;
        ensure(j1 == j2, || "example order changed the model".into())?;
        Ok(format!("report.json identical across reruns and --jobs 1/4 ({} bytes); order-invariant training", a.len()))
    });
}

