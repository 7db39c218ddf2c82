use std::fs;

use ndarray::Array2;
use postsyn::binning::Phase;
use postsyn::io::save_cohort;
use postsyn::model::{Cohort, Group, PlateLayout};
use postsyn::pipeline::{analyze, emit_plots, run_pipeline, AnalysisOptions, PhaseSelection, PipelineConfig};
use postsyn::sim::{generate_synthetic_cohort, CohortSpec, GroupSpec};
use postsyn::synergy::match_synergies;

fn small_spec(groups: Vec<GroupSpec>) -> CohortSpec {
    CohortSpec { groups, trials_per_session: 8, ..CohortSpec::default() }
}

#[test]
fn four_synergy_cohort_recovers_generator() {
    let spec = small_spec(vec![GroupSpec { group: Group::FF, n_subjects: 2, n_synergies: 4 }]);
    let (cohort, truth) = generate_synthetic_cohort(&spec).unwrap();
    let opts = AnalysisOptions { phases: PhaseSelection::Apr, ..AnalysisOptions::default() };
    let a = analyze(&cohort, &opts).unwrap();
    let found = a.synergies_for(Group::FF, Phase::Apr).unwrap();
    assert_eq!(found.set.n_syn, 4);

    let g = truth.group(Group::FF).unwrap();
    let w0 = g.normalized_w();
    let aligned = Array2::from_shape_fn((found.set.rows.len(), 4), |(r, k)| {
        let label = found.set.rows[r].label();
        let i = g.muscles.iter().position(|m| *m == label).unwrap();
        w0[[i, k]]
    });
    let m = match_synergies(&aligned, &found.set.w).unwrap();
    assert!(m.min_cosine() >= 0.95, "{m:?}");
    assert!(a.matches.is_empty());
}

#[test]
fn empty_cohort_leaves_no_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let empty = Cohort { subjects: vec![], plate_layout: PlateLayout::default(), trials_per_session: None };
    let manifest = save_cohort(&empty, &dir.path().join("cohort")).unwrap();
    let out = dir.path().join("out");
    let err = run_pipeline(&PipelineConfig { manifest, output_dir: out.clone(), analysis: AnalysisOptions::default() })
        .unwrap_err();
    assert_eq!(err.stage, "ingest");
    assert!(!out.exists());

    let missing = dir.path().join("nope.json");
    let err = run_pipeline(&PipelineConfig {
        manifest: missing,
        output_dir: out.clone(),
        analysis: AnalysisOptions::default(),
    })
    .unwrap_err();
    assert_eq!(err.stage, "ingest");
    assert!(!out.exists());
}

#[test]
fn stage_errors_name_the_trial() {
    let spec = small_spec(vec![GroupSpec { group: Group::NoFF, n_subjects: 1, n_synergies: 3 }]);
    let (mut cohort, _) = generate_synthetic_cohort(&spec).unwrap();
    cohort.subjects[0].sessions[0].trials[2].emg.rate_hz = 500.0;
    let err = analyze(&cohort, &AnalysisOptions::default()).unwrap_err();
    assert_eq!(err.stage, "preprocess");
    assert_eq!(err.trial, Some(cohort.subjects[0].sessions[0].trials[2].trial_id));
    assert!(err.to_string().contains("preprocess"));
}

#[test]
fn artifacts_carry_hash_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CohortSpec {
        groups: vec![
            GroupSpec { group: Group::FF, n_subjects: 1, n_synergies: 3 },
            GroupSpec { group: Group::NoFF, n_subjects: 1, n_synergies: 5 },
        ],
        trials_per_session: 4,
        ..CohortSpec::default()
    };
    let (cohort, _) = generate_synthetic_cohort(&spec).unwrap();
    let manifest = save_cohort(&cohort, &dir.path().join("cohort")).unwrap();
    let mut analysis = AnalysisOptions { phases: PhaseSelection::Apr, ..AnalysisOptions::default() };
    analysis.nmf.restarts = 3;
    analysis.nmf.seed = 7;
    let config = PipelineConfig { manifest, output_dir: dir.path().join("out"), analysis };
    let bundle = run_pipeline(&config).unwrap();
    assert!(!bundle.files.is_empty());
    for path in &bundle.files {
        let text = fs::read_to_string(path).unwrap();
        assert!(text.contains(&bundle.config_hash), "{}", path.display());
        let seeded = text.contains("seed=7") || text.contains("\"seed\": 7");
        assert!(seeded, "{}", path.display());
    }
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/stats.json")).unwrap()).unwrap();
    let rows = stats["data"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    for r in rows {
        let t_test = r["method"] == "independent_t";
        assert_eq!(r["skipped"].is_string(), t_test, "{r}");
    }

    let binned = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(dir.path().join("out/binned.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(binned, 2 * 14 * 16);

    let mut other = config.clone();
    other.analysis.include_bk = false;
    assert_ne!(other.hash(), config.hash());
}

#[test]
fn plots_rerender_from_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CohortSpec {
        groups: vec![GroupSpec { group: Group::FF, n_subjects: 1, n_synergies: 2 }],
        trials_per_session: 4,
        ..CohortSpec::default()
    };
    let (cohort, _) = generate_synthetic_cohort(&spec).unwrap();
    let manifest = save_cohort(&cohort, &dir.path().join("cohort")).unwrap();
    let mut analysis = AnalysisOptions::default();
    analysis.nmf.restarts = 2;
    let out = dir.path().join("out");
    run_pipeline(&PipelineConfig { manifest, output_dir: out.clone(), analysis }).unwrap();

    let names = ["synergy_FF_APR.svg", "vaf_FF_APR.svg", "synergy_FF_VPR.svg", "vaf_FF_VPR.svg"];
    let before: Vec<String> = names.iter().map(|n| fs::read_to_string(out.join(n)).unwrap()).collect();
    for n in names {
        fs::remove_file(out.join(n)).unwrap();
    }
    let written = emit_plots(&out).unwrap();
    assert_eq!(written.len(), 4);
    let after: Vec<String> = names.iter().map(|n| fs::read_to_string(out.join(n)).unwrap()).collect();
    assert_eq!(before, after);
    let set: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("synergy_FF_APR.json")).unwrap()).unwrap();
    let n = set["n_syn"].as_u64().unwrap() as usize;
    assert_eq!(before[0].matches("class=\"synergy-panel\"").count(), n);
    assert_eq!(before[1].matches("class=\"vaf-point\"").count(), 10);

    fs::remove_file(out.join("synergy_FF_VPR.json")).unwrap();
    let err = emit_plots(&out).unwrap_err();
    assert!(err.message.contains("missing artifact"), "{err}");
}
