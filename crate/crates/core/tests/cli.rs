use std::fs;
use std::path::{Path, PathBuf};

use currikit::cli::main_with;
use currikit::curriculum::CurriculumPlan;

fn run(args: &[&str]) -> i32 {
    main_with(std::iter::once("currikit").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Three small corpora of clearly different difficulty, ingested byte-level.
fn control_registry(root: &Path) -> PathBuf {
    let data = root.join("data");
    fs::create_dir_all(&data).unwrap();
    let corpora = [
        ("aochildes", "speech", "look at the ball.\nwhere is it?\n"),
        ("cbt", "text", "the old miller walked slowly down to the river at dawn.\n"),
        ("wikipedia", "text", "photosynthesis converts electromagnetic radiation into chemical energy.\n"),
    ];
    let mut cfg = String::new();
    for (id, modality, body) in corpora {
        fs::write(data.join(format!("{id}.txt")), body.repeat(30)).unwrap();
        cfg.push_str(&format!("[[corpora]]\ncorpus_id = \"{id}\"\npath = \"{id}.txt\"\nmodality = \"{modality}\"\n\n"));
    }
    fs::write(data.join("registry.toml"), cfg).unwrap();
    let reg = root.join("registry");
    assert_eq!(run(&["ingest", "--config", s(&data.join("registry.toml")), "--out", s(&reg)]), 0);
    reg
}

#[test]
fn reversed_corpus_curriculum_has_one_stage_per_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = control_registry(tmp.path());
    let scores = tmp.path().join("scores/scores.tsv");
    let profile = tmp.path().join("profile.json");
    assert_eq!(run(&["score", "--registry", s(&reg), "--out", s(&scores)]), 0);
    assert_eq!(
        run(&["profile", "--registry", s(&reg), "--scores", s(&scores), "--out", s(&profile)]),
        0
    );
    let mut plans = Vec::new();
    for extra in [&[][..], &["--reverse"][..]] {
        let out = tmp.path().join(format!("plan{}.json", plans.len()));
        let mut args = vec!["build-curriculum", "--registry", s(&reg), "--kind", "corpus", "--profile", s(&profile)];
        args.extend_from_slice(&["--out", s(&out)]);
        args.extend_from_slice(extra);
        assert_eq!(run(&args), 0);
        plans.push(CurriculumPlan::from_json(&fs::read_to_string(&out).unwrap()).unwrap());
    }
    let labels = |p: &CurriculumPlan| p.stages.iter().map(|s| s.label.clone()).collect::<Vec<_>>();
    assert_eq!(plans[1].stages.len(), 3);
    let mut forward = labels(&plans[0]);
    forward.reverse();
    assert_eq!(labels(&plans[1]), forward);
    assert_eq!(plans[1].total_steps(), 120_000);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["plan", "--no-such-flag"]), 2);
    assert_eq!(run(&["build-curriculum", "--kind", "sideways"]), 2);
}

#[test]
fn missing_inputs_fail_without_panicking() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["stats", "--registry", s(&tmp.path().join("absent"))]), 1);
    // Nothing to verify is an error rather than a vacuous success.
    assert_eq!(run(&["verify", "--dir", s(tmp.path())]), 1);
}

#[test]
fn corrupted_shard_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = control_registry(tmp.path());
    let plan = tmp.path().join("random.json");
    let shards = tmp.path().join("shards");
    assert_eq!(
        run(&["build-curriculum", "--registry", s(&reg), "--kind", "random", "--steps", "50", "--out", s(&plan)]),
        0
    );
    assert_eq!(
        run(&["emit-shards", "--registry", s(&reg), "--plan", s(&plan), "--batch", "4", "--out", s(&shards)]),
        0
    );
    assert_eq!(run(&["verify", "--dir", s(tmp.path())]), 0);
    let victim = shards.join("stage-1/shard-00000.bin");
    let mut bytes = fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&victim, bytes).unwrap();
    assert_eq!(run(&["verify", "--dir", s(tmp.path())]), 3);
}
