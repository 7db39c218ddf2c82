//! Batch analysis: preprocess → bin → assemble → synergies → tuning curves →
//! COP metrics → group statistics, then deterministic artifacts.
//!
//! Everything is computed in memory before the first file is written, so a
//! failing stage leaves no partial output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::balance::{cop_metrics, session_totals, trial_cop, CopMetrics, CopReference, CopTrace};
use crate::binning::{assemble_matrix, bin_trial, normalize_subject_trials, BinnedActivationMatrix, Phase, TrialBins};
use crate::dsp::{preprocess, FilterSpec};
use crate::error::PipelineError;
use crate::io::load_cohort;
use crate::model::{Cohort, Group};
use crate::plots::{cop_traces_svg, synergy_svg, vaf_scan_svg};
use crate::stats::{independent_t, mann_whitney_u, Alternative, Method, TestResult, UMode, EXACT_MAX_N};
use crate::synergy::nmf::NmfOptions;
use crate::synergy::{extract, Matching, PerSynergyMode, SynergyCount, SynergySet, TuningCurves};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseSelection {
    Apr,
    Vpr,
    #[default]
    Both,
}

impl PhaseSelection {
    pub fn phases(self) -> Vec<Phase> {
        match self {
            PhaseSelection::Apr => vec![Phase::Apr],
            PhaseSelection::Vpr => vec![Phase::Vpr],
            PhaseSelection::Both => vec![Phase::Apr, Phase::Vpr],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UModeChoice {
    /// Exact when n1 + n2 ≤ 16, normal approximation otherwise.
    #[default]
    Auto,
    Exact,
    NormalApprox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub filter: FilterSpec,
    pub include_bk: bool,
    pub per_session_normalization: bool,
    pub synergy_count: SynergyCount,
    pub nmf: NmfOptions,
    pub per_synergy_mode: PerSynergyMode,
    pub phases: PhaseSelection,
    pub cop_reference: CopReference,
    pub u_mode: UModeChoice,
    pub alternative: Alternative,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            filter: FilterSpec::default(),
            include_bk: true,
            per_session_normalization: false,
            synergy_count: SynergyCount::default(),
            nmf: NmfOptions::default(),
            per_synergy_mode: PerSynergyMode::default(),
            phases: PhaseSelection::default(),
            cop_reference: CopReference::default(),
            u_mode: UModeChoice::default(),
            alternative: Alternative::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub analysis: AnalysisOptions,
}

impl PipelineConfig {
    /// Everything except the output directory.
    pub fn provenance(&self) -> ConfigProvenance {
        ConfigProvenance { manifest: self.manifest.clone(), analysis: self.analysis.clone() }
    }

    /// SHA-256 of the canonical JSON of [`PipelineConfig::provenance`].
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.provenance()).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigProvenance {
    pub manifest: PathBuf,
    pub analysis: AnalysisOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSynergies {
    pub group: Group,
    pub phase: Phase,
    pub matrix: BinnedActivationMatrix,
    pub set: SynergySet,
    pub tuning: TuningCurves,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMatch {
    pub phase: Phase,
    pub a: Group,
    pub b: Group,
    pub matching: Matching,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialCop {
    pub subject: String,
    pub group: Group,
    pub session: u32,
    pub trial: u32,
    pub metrics: CopMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionCopRow {
    pub subject: String,
    pub group: Group,
    pub session: u32,
    pub trials: usize,
    pub total_excursion_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: String,
    pub group: Group,
    pub trials: usize,
    pub catch_rate: f64,
    pub throw_rate: f64,
    pub mean_score: f64,
    pub mean_cop: CopMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub method: Method,
    pub groups: [Group; 2],
    /// `None` for a group without subjects.
    pub means: [Option<f64>; 2],
    pub result: Option<TestResult>,
    /// Why the test could not be run.
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub synergies: Vec<GroupSynergies>,
    pub matches: Vec<GroupMatch>,
    pub subject_matrices: Vec<(String, Group, BinnedActivationMatrix)>,
    pub cop: Vec<TrialCop>,
    pub sessions: Vec<SessionCopRow>,
    pub subjects: Vec<SubjectSummary>,
    pub comparisons: Vec<Comparison>,
}

impl Analysis {
    pub fn synergies_for(&self, group: Group, phase: Phase) -> Option<&GroupSynergies> {
        self.synergies.iter().find(|s| s.group == group && s.phase == phase)
    }
}

fn groups_in(cohort: &Cohort) -> Vec<Group> {
    let mut g: Vec<Group> = cohort.subjects.iter().map(|s| s.group).collect();
    g.sort();
    g.dedup();
    g
}

/// Envelopes, bins and per-subject normalization of every valid trial.
pub fn bin_cohort(cohort: &Cohort, opts: &AnalysisOptions) -> Result<Vec<(Group, Vec<TrialBins>)>, PipelineError> {
    let mut out = Vec::new();
    for s in &cohort.subjects {
        let mut bins = Vec::new();
        for t in s.trials().filter(|t| t.valid) {
            let env = preprocess(&t.emg, &opts.filter)
                .map_err(|e| PipelineError::at("preprocess", &s.subject_id, t.trial_id, e))?;
            let b =
                bin_trial(&env, t.t_robust_onset, t.t_end, (&s.subject_id, t.session, t.trial_id), t.direction, true)
                    .map_err(|e| PipelineError::at("bin", &s.subject_id, t.trial_id, e))?;
            bins.push(b);
        }
        let norm = normalize_subject_trials(&bins, opts.per_session_normalization).map_err(|e| PipelineError {
            stage: "normalize",
            subject: Some(s.subject_id.clone()),
            trial: None,
            message: e.to_string(),
        })?;
        out.push((s.group, norm));
    }
    Ok(out)
}

fn u_mode_for(choice: UModeChoice, n: usize) -> UMode {
    match choice {
        UModeChoice::Exact => UMode::Exact,
        UModeChoice::NormalApprox => UMode::NormalApprox,
        UModeChoice::Auto if n <= EXACT_MAX_N => UMode::Exact,
        UModeChoice::Auto => UMode::NormalApprox,
    }
}

fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

fn compare(
    metric: &str,
    method: Method,
    groups: [Group; 2],
    a: &[f64],
    b: &[f64],
    opts: &AnalysisOptions,
) -> Comparison {
    let r = match method {
        Method::MannWhitneyU => mann_whitney_u(a, b, u_mode_for(opts.u_mode, a.len() + b.len()), opts.alternative),
        Method::IndependentT => independent_t(a, b, opts.alternative),
    };
    let (result, skipped) = match r {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Comparison { metric: metric.to_string(), method, groups, means: [mean(a), mean(b)], result, skipped }
}

/// Subject, group, session, trial id and COP trace.
pub type TrialTrace = (String, Group, u32, u32, CopTrace);

/// Per-trial COP traces of every valid trial, in cohort order.
pub fn cohort_cop(cohort: &Cohort) -> Result<Vec<TrialTrace>, PipelineError> {
    let mut out = Vec::new();
    for s in &cohort.subjects {
        for t in s.trials().filter(|t| t.valid) {
            let trace = trial_cop(&t.plates, &cohort.plate_layout)
                .map_err(|e| PipelineError::at("cop", &s.subject_id, t.trial_id, e))?;
            out.push((s.subject_id.clone(), s.group, t.session, t.trial_id, trace));
        }
    }
    Ok(out)
}

pub fn cop_table(cohort: &Cohort, reference: CopReference) -> Result<Vec<TrialCop>, PipelineError> {
    cohort_cop(cohort)?
        .into_iter()
        .map(|(subject, group, session, trial, trace)| {
            let metrics = cop_metrics(&trace, reference).map_err(|e| PipelineError::at("cop", &subject, trial, e))?;
            Ok(TrialCop { subject, group, session, trial, metrics })
        })
        .collect()
}

fn summarize_subjects(cohort: &Cohort, cop: &[TrialCop]) -> Vec<SubjectSummary> {
    cohort
        .subjects
        .iter()
        .map(|s| {
            let trials: Vec<_> = s.trials().filter(|t| t.valid).collect();
            let n = trials.len().max(1) as f64;
            let rows: Vec<CopMetrics> = cop.iter().filter(|c| c.subject == s.subject_id).map(|c| c.metrics).collect();
            SubjectSummary {
                subject: s.subject_id.clone(),
                group: s.group,
                trials: trials.len(),
                catch_rate: trials.iter().filter(|t| t.outcome.caught).count() as f64 / n,
                throw_rate: trials.iter().filter(|t| t.outcome.thrown).count() as f64 / n,
                mean_score: trials.iter().map(|t| t.outcome.score as f64).sum::<f64>() / n,
                mean_cop: session_totals(&rows).mean,
            }
        })
        .collect()
}

fn session_rows(cop: &[TrialCop]) -> Vec<SessionCopRow> {
    let mut by: BTreeMap<(String, u32), (Group, Vec<CopMetrics>)> = BTreeMap::new();
    for c in cop {
        by.entry((c.subject.clone(), c.session)).or_insert_with(|| (c.group, Vec::new())).1.push(c.metrics);
    }
    by.into_iter()
        .map(|((subject, session), (group, m))| {
            let t = session_totals(&m);
            SessionCopRow { subject, group, session, trials: t.trials, total_excursion_mm: t.total_excursion_mm }
        })
        .collect()
}

/// The group statistics: outcome measures with Mann-Whitney U, COP metrics
/// with the t-test, on per-subject values.
pub fn group_comparisons(subjects: &[SubjectSummary], opts: &AnalysisOptions) -> Vec<Comparison> {
    let groups = [Group::FF, Group::NoFF];
    let pick = |g: Group, f: &dyn Fn(&SubjectSummary) -> f64| -> Vec<f64> {
        subjects.iter().filter(|s| s.group == g).map(f).collect()
    };
    type Getter = Box<dyn Fn(&SubjectSummary) -> f64>;
    let measures: Vec<(&str, Method, Getter)> = vec![
        ("catch_rate", Method::MannWhitneyU, Box::new(|s| s.catch_rate)),
        ("throw_rate", Method::MannWhitneyU, Box::new(|s| s.throw_rate)),
        ("mean_score", Method::MannWhitneyU, Box::new(|s| s.mean_score)),
        ("total_excursion_mm", Method::IndependentT, Box::new(|s| s.mean_cop.total_excursion_mm)),
        ("rms_cop_mm", Method::IndependentT, Box::new(|s| s.mean_cop.rms_cop_mm)),
        ("rms_cop_vel_mm_s", Method::IndependentT, Box::new(|s| s.mean_cop.rms_cop_vel_mm_s)),
        ("max_ap_mm", Method::IndependentT, Box::new(|s| s.mean_cop.max_ap_mm)),
        ("max_ml_mm", Method::IndependentT, Box::new(|s| s.mean_cop.max_ml_mm)),
    ];
    measures
        .iter()
        .map(|(name, method, f)| compare(name, *method, groups, &pick(groups[0], f), &pick(groups[1], f), opts))
        .collect()
}

/// Which optional stages [`analyze_stages`] runs. Binning always runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub synergies: bool,
    /// COP metrics, subject summaries and group statistics.
    pub balance: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { synergies: true, balance: true };
}

pub fn analyze(cohort: &Cohort, opts: &AnalysisOptions) -> Result<Analysis, PipelineError> {
    analyze_stages(cohort, opts, Stages::ALL)
}

pub fn analyze_stages(cohort: &Cohort, opts: &AnalysisOptions, stages: Stages) -> Result<Analysis, PipelineError> {
    if cohort.subjects.is_empty() || cohort.n_trials() == 0 {
        return Err(PipelineError::stage("ingest", "cohort has no trials"));
    }
    cohort.validate().map_err(|e| PipelineError::stage("ingest", e))?;
    let binned = bin_cohort(cohort, opts)?;
    let groups = groups_in(cohort);

    let mut synergies = Vec::new();
    let mut subject_matrices = Vec::new();
    for phase in opts.phases.phases() {
        for &g in groups.iter().filter(|_| stages.synergies) {
            let trials: Vec<TrialBins> =
                binned.iter().filter(|(gg, _)| *gg == g).flat_map(|(_, t)| t.clone()).collect();
            let matrix = assemble_matrix(&trials, phase, opts.include_bk)
                .map_err(|e| PipelineError::stage("assemble", format!("{g} {phase}: {e}")))?;
            let set = extract(&matrix, opts.synergy_count, &opts.nmf, opts.per_synergy_mode)
                .map_err(|e| PipelineError::stage("extract", format!("{g} {phase}: {e}")))?;
            let tuning = set.tuning_curves().map_err(|e| PipelineError::stage("tuning", e))?;
            synergies.push(GroupSynergies { group: g, phase, matrix, set, tuning });
        }
        for (g, trials) in &binned {
            let Some(first) = trials.first() else { continue };
            let m = assemble_matrix(trials, phase, opts.include_bk).map_err(|e| PipelineError {
                stage: "assemble",
                subject: Some(first.subject_id.clone()),
                trial: None,
                message: e.to_string(),
            })?;
            subject_matrices.push((first.subject_id.clone(), *g, m));
        }
    }
    let mut matches = Vec::new();
    for phase in opts.phases.phases() {
        let (Some(a), Some(b)) = (
            synergies.iter().find(|s| s.group == Group::FF && s.phase == phase),
            synergies.iter().find(|s| s.group == Group::NoFF && s.phase == phase),
        ) else {
            continue;
        };
        let matching = a.set.match_with(&b.set).map_err(|e| PipelineError::stage("match", e))?;
        matches.push(GroupMatch { phase, a: Group::FF, b: Group::NoFF, matching });
    }
    let (cop, subjects, comparisons) = if stages.balance {
        let cop = cop_table(cohort, opts.cop_reference)?;
        let subjects = summarize_subjects(cohort, &cop);
        let comparisons = group_comparisons(&subjects, opts);
        (cop, subjects, comparisons)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    Ok(Analysis { synergies, matches, subject_matrices, sessions: session_rows(&cop), cop, subjects, comparisons })
}

/// Numbers in CSV artifacts: shortest round-trip representation.
fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_text(provenance: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {provenance}");
    let _ = writeln!(s, "{}", header.join(","));
    for r in rows {
        let _ = writeln!(s, "{}", r.join(","));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedCount {
    pub group: Group,
    pub phase: Phase,
    pub n_syn: usize,
    pub vaf_total: f64,
    pub criterion_met: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub config_hash: String,
    pub seed: u64,
    pub config: ConfigProvenance,
    pub n_syn: Vec<SelectedCount>,
    pub matches: Vec<GroupMatch>,
    pub comparisons: Vec<Comparison>,
    pub subjects: Vec<SubjectSummary>,
    pub artifacts: Vec<String>,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

fn json<T: Serialize>(hash: &str, seed: u64, body: &T) -> String {
    let mut s = serde_json::to_string_pretty(&Stamped { config_hash: hash, seed, body }).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    data: &'a T,
}

/// Synergy bar panels with tuning grids, and the VAF scan curve.
fn synergy_plots(
    group: Group,
    phase: Phase,
    set: &SynergySet,
    tuning: &TuningCurves,
    prov: &str,
) -> [(String, String); 2] {
    let title = format!("{group} {phase} synergies (n = {}, VAF {:.1}%)", set.n_syn, set.vaf_total);
    let scan_title = format!("{group} {phase} VAF scan");
    [
        (format!("synergy_{group}_{phase}.svg"), synergy_svg(set, tuning, &title, prov)),
        (format!("vaf_{group}_{phase}.svg"), vaf_scan_svg(&set.vaf_scan, set.criterion, set.n_syn, &scan_title, prov)),
    ]
}

/// Renders every artifact as (relative file name, contents).
pub fn render_artifacts(
    config: &PipelineConfig,
    cohort: &Cohort,
    analysis: &Analysis,
) -> Result<Vec<(String, String)>, PipelineError> {
    let hash = config.hash();
    let seed = config.analysis.nmf.seed;
    let prov = format!("config_hash={hash} seed={seed}");
    let mut files: Vec<(String, String)> = Vec::new();

    let binned_rows = analysis.subject_matrices.iter().flat_map(|(subj, g, m)| {
        m.rows.iter().enumerate().flat_map(move |(r, ch)| {
            m.columns.iter().enumerate().map(move |(c, (bin, dir))| {
                vec![
                    subj.clone(),
                    g.to_string(),
                    m.phase.to_string(),
                    ch.muscle.as_str().to_string(),
                    ch.side.as_str().to_string(),
                    bin.to_string(),
                    dir.to_string(),
                    num(m.values[[r, c]]),
                ]
            })
        })
    });
    files.push((
        "binned.csv".into(),
        csv_text(&prov, &["subject", "group", "phase", "muscle", "side", "bin", "direction", "value"], binned_rows),
    ));

    let mut scan_rows = Vec::new();
    for gs in &analysis.synergies {
        let stem = format!("synergy_{}_{}", gs.group, gs.phase);
        files.push((format!("{stem}.json"), json(&hash, seed, &gs.set)));
        let mut header = vec!["muscle".to_string(), "side".to_string()];
        header.extend((1..=gs.set.n_syn).map(|i| format!("w{i}")));
        let w_rows = gs.set.rows.iter().enumerate().map(|(r, ch)| {
            let mut row = vec![ch.muscle.as_str().to_string(), ch.side.as_str().to_string()];
            row.extend((0..gs.set.n_syn).map(|i| num(gs.set.w[[r, i]])));
            row
        });
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        files.push((format!("{stem}_w.csv"), csv_text(&prov, &h, w_rows)));
        let c_rows = (0..gs.set.n_syn).flat_map(|i| {
            gs.set.columns.iter().enumerate().map(move |(j, (bin, dir))| {
                vec![format!("{}", i + 1), bin.to_string(), dir.to_string(), num(gs.set.c[[i, j]])]
            })
        });
        files.push((format!("{stem}_c.csv"), csv_text(&prov, &["synergy", "bin", "direction", "value"], c_rows)));
        files.extend(synergy_plots(gs.group, gs.phase, &gs.set, &gs.tuning, &prov));
        for (&n, &v) in &gs.set.vaf_scan.vaf {
            scan_rows.push(vec![gs.group.to_string(), gs.phase.to_string(), n.to_string(), num(v)]);
        }
    }
    files.push(("vaf_scan.csv".into(), csv_text(&prov, &["group", "phase", "n", "vaf"], scan_rows)));

    let cop_rows = analysis.cop.iter().map(|c| {
        vec![
            c.subject.clone(),
            c.group.to_string(),
            c.trial.to_string(),
            num(c.metrics.total_excursion_mm),
            num(c.metrics.rms_cop_mm),
            num(c.metrics.rms_cop_vel_mm_s),
            num(c.metrics.max_ap_mm),
            num(c.metrics.max_ml_mm),
        ]
    });
    files.push((
        "cop_metrics.csv".into(),
        csv_text(
            &prov,
            &[
                "subject",
                "group",
                "trial",
                "total_excursion_mm",
                "rms_cop_mm",
                "rms_cop_vel_mm_s",
                "max_ap_mm",
                "max_ml_mm",
            ],
            cop_rows,
        ),
    ));
    let session_rows = analysis.sessions.iter().map(|s| {
        vec![
            s.subject.clone(),
            s.group.to_string(),
            s.session.to_string(),
            s.trials.to_string(),
            num(s.total_excursion_mm),
        ]
    });
    files.push((
        "session_cop.csv".into(),
        csv_text(&prov, &["subject", "group", "session", "trials", "total_excursion_mm"], session_rows),
    ));
    let subject_rows = analysis.subjects.iter().map(|s| {
        vec![
            s.subject.clone(),
            s.group.to_string(),
            s.trials.to_string(),
            num(s.catch_rate),
            num(s.throw_rate),
            num(s.mean_score),
            num(s.mean_cop.total_excursion_mm),
            num(s.mean_cop.rms_cop_mm),
            num(s.mean_cop.rms_cop_vel_mm_s),
            num(s.mean_cop.max_ap_mm),
            num(s.mean_cop.max_ml_mm),
        ]
    });
    files.push((
        "subjects.csv".into(),
        csv_text(
            &prov,
            &[
                "subject",
                "group",
                "trials",
                "catch_rate",
                "throw_rate",
                "mean_score",
                "total_excursion_mm",
                "rms_cop_mm",
                "rms_cop_vel_mm_s",
                "max_ap_mm",
                "max_ml_mm",
            ],
            subject_rows,
        ),
    ));
    files.push(("stats.json".into(), json(&hash, seed, &Wrapped { data: &analysis.comparisons })));

    // First valid trial of each group for the COP figure.
    let traces = cohort_cop(cohort)?;
    let mut shown: Vec<(String, &CopTrace)> = Vec::new();
    for g in groups_in(cohort) {
        if let Some((s, _, _, t, trace)) = traces.iter().find(|x| x.1 == g) {
            shown.push((format!("{g} {s} trial {t}"), trace));
        }
    }
    files.push(("cop_traces.svg".into(), cop_traces_svg(&shown, "COP traces", &prov)));

    let mut names: Vec<String> = files.iter().map(|(n, _)| n.clone()).collect();
    names.push("report.json".into());
    let summary = ReportSummary {
        config_hash: hash.clone(),
        seed,
        config: config.provenance(),
        n_syn: analysis
            .synergies
            .iter()
            .map(|s| SelectedCount {
                group: s.group,
                phase: s.phase,
                n_syn: s.set.n_syn,
                vaf_total: s.set.vaf_total,
                criterion_met: s.set.criterion_met,
            })
            .collect(),
        matches: analysis.matches.clone(),
        comparisons: analysis.comparisons.clone(),
        subjects: analysis.subjects.clone(),
        artifacts: names,
    };
    let mut report = serde_json::to_string_pretty(&summary).expect("serializable");
    report.push('\n');
    files.push(("report.json".into(), report));
    Ok(files)
}

pub fn write_artifacts(dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::stage("write", format!("{}: {e}", dir.display())))?;
    files
        .iter()
        .map(|(name, text)| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| PipelineError::stage("write", format!("{}: {e}", p.display())))?;
            Ok(p)
        })
        .collect()
}

#[derive(Deserialize)]
struct Stamp {
    config_hash: String,
    seed: u64,
}

fn read_artifact(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path)
        .map_err(|e| PipelineError::stage("plots", format!("missing artifact {}: {e}", path.display())))
}

/// Re-renders the synergy and VAF-scan plots of a finished report directory
/// from its JSON artifacts.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let bad = |path: &Path, e: serde_json::Error| PipelineError::stage("plots", format!("{}: {e}", path.display()));
    let report_path = dir.join("report.json");
    #[derive(Deserialize)]
    struct Index {
        n_syn: Vec<SelectedCount>,
    }
    let report: Index = serde_json::from_str(&read_artifact(&report_path)?).map_err(|e| bad(&report_path, e))?;
    let mut files = Vec::new();
    for entry in &report.n_syn {
        let path = dir.join(format!("synergy_{}_{}.json", entry.group, entry.phase));
        let text = read_artifact(&path)?;
        let stamp: Stamp = serde_json::from_str(&text).map_err(|e| bad(&path, e))?;
        let set: SynergySet = serde_json::from_str(&text).map_err(|e| bad(&path, e))?;
        let tuning = set.tuning_curves().map_err(|e| PipelineError::stage("plots", e))?;
        let prov = format!("config_hash={} seed={}", stamp.config_hash, stamp.seed);
        files.extend(synergy_plots(entry.group, entry.phase, &set, &tuning, &prov));
    }
    write_artifacts(dir, &files)
}

#[derive(Debug)]
pub struct ReportBundle {
    pub analysis: Analysis,
    pub files: Vec<PathBuf>,
    pub config_hash: String,
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<ReportBundle, PipelineError> {
    let cohort = load_cohort(&config.manifest).map_err(|e| PipelineError::stage("ingest", e))?;
    let analysis = analyze(&cohort, &config.analysis)?;
    let rendered = render_artifacts(config, &cohort, &analysis)?;
    let files = write_artifacts(&config.output_dir, &rendered)?;
    Ok(ReportBundle { analysis, files, config_hash: config.hash() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PlateLayout;

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = PipelineConfig {
            manifest: "m.json".into(),
            output_dir: "out1".into(),
            analysis: AnalysisOptions::default(),
        };
        let mut b = a.clone();
        b.output_dir = "out2".into();
        assert_eq!(a.hash(), b.hash());
        b.analysis.nmf.seed = 9;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.analysis.include_bk = false;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn empty_cohort_is_an_ingest_error() {
        let c = Cohort { subjects: vec![], plate_layout: PlateLayout::default(), trials_per_session: None };
        let e = analyze(&c, &AnalysisOptions::default()).unwrap_err();
        assert_eq!(e.stage, "ingest");
    }

    #[test]
    fn phase_selection() {
        assert_eq!(PhaseSelection::Both.phases(), vec![Phase::Apr, Phase::Vpr]);
        assert_eq!(PhaseSelection::Vpr.phases(), vec![Phase::Vpr]);
    }

    #[test]
    fn csv_has_provenance_line() {
        let t = csv_text("config_hash=abc seed=1", &["a", "b"], vec![vec!["1".into(), "2".into()]]);
        assert_eq!(t, "# config_hash=abc seed=1\na,b\n1,2\n");
    }
}
