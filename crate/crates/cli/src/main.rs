//! `postsyn`: batch front end for synergy analysis and the balance simulator.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use postsyn::balance::{cop_metrics, trial_cop, CopReference};
use postsyn::io::load_cohort;
use postsyn::model::Direction;
use postsyn::pipeline::{
    analyze_stages, emit_plots, render_artifacts, write_artifacts, AnalysisOptions, PhaseSelection, PipelineConfig,
    Stages, UModeChoice,
};
use postsyn::selftest::{self, CRITERIA};
use postsyn::sim::cohort::save_ground_truth;
use postsyn::sim::{
    calibrate_subject, calibrate_threshold, generate_synthetic_cohort, run_trial, CalibrationOptions, CohortSpec,
    GroupSpec, RigModel, TaskModel, TrialScript,
};
use postsyn::stats::{independent_t, mann_whitney_u, Alternative, UMode, EXACT_MAX_N};
use postsyn::synergy::{PerSynergyMode, SynergyCount};

#[derive(Parser)]
#[command(name = "postsyn", version, about = "Postural muscle-synergy analysis and cable-robot balance simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a cohort manifest; print a summary.
    Ingest {
        /// Cohort manifest.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Envelopes and normalized bins: writes binned.csv.
    Preprocess(AnalysisArgs),
    /// Synergy extraction per group and phase: synergy and VAF-scan artifacts.
    Extract(AnalysisArgs),
    /// COP metrics per trial and session: cop_metrics.csv, session_cop.csv, cop_traces.svg.
    Cop(AnalysisArgs),
    /// Group statistics.
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    /// Balance simulator.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Full pipeline: every artifact plus report.json.
    Report(AnalysisArgs),
    /// Re-render synergy and VAF-scan plots from a report directory.
    Plots {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run the synthetic closed-loop acceptance checks.
    Selftest {
        /// Run only these criteria (1-10); repeatable.
        #[arg(long)]
        only: Vec<u8>,
    },
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Compare two samples given as comma-separated numbers.
    Compare {
        /// First sample (FF).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        a: Vec<f64>,
        /// Second sample (NoFF).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        b: Vec<f64>,
        /// Mann-Whitney U or pooled-variance t-test.
        #[arg(long, value_enum, default_value_t = MethodArg::Mwu)]
        method: MethodArg,
        /// Mann-Whitney p-value mode; auto is exact up to 16 observations in total.
        #[arg(long, value_enum, default_value_t = UModeArg::Auto)]
        mode: UModeArg,
        /// Alternative hypothesis for the first sample relative to the second.
        #[arg(long, value_enum, default_value_t = AlternativeArg::TwoSided)]
        alternative: AlternativeArg,
    },
    /// FF vs NoFF comparisons of outcome and COP measures; writes stats.json.
    Groups(AnalysisArgs),
}

#[derive(Subcommand)]
enum SimCommand {
    /// Perturbation thresholds in all four directions.
    Calibrate {
        #[command(flatten)]
        body: BodyArgs,
    },
    /// One catch-and-throw trial with a perturbation.
    Trial {
        #[command(flatten)]
        body: BodyArgs,
        /// Pulse direction.
        #[arg(long, value_enum, default_value_t = DirectionArg::Forward)]
        direction: DirectionArg,
        /// Pulse force, N [default: the calibrated threshold].
        #[arg(long)]
        force: Option<f64>,
        /// Enable the assist-as-needed force field.
        #[arg(long)]
        ff: bool,
        /// Delay of the pulse after the VR onset, s.
        #[arg(long, default_value_t = 0.3)]
        onset: f64,
        /// Seed of the ball landing offset.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Synthetic cohort with known synergies: manifest, recordings and ground_truth.json.
    Cohort {
        /// JSON cohort description (CohortSpec fields); flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Generator seed [default: 1].
        #[arg(long)]
        seed: Option<u64>,
        /// Relative per-trial gain noise of the EMG envelopes [default: 0.05].
        #[arg(long)]
        noise: Option<f64>,
        /// Sessions per subject [default: 1].
        #[arg(long)]
        sessions: Option<u32>,
        /// Trials per session [default: 16].
        #[arg(long)]
        trials_per_session: Option<usize>,
        /// Subjects in the FF group [default: 2].
        #[arg(long)]
        ff_subjects: Option<usize>,
        /// Ground-truth synergies of the FF group [default: 4].
        #[arg(long)]
        ff_synergies: Option<usize>,
        /// Subjects in the NoFF group [default: 2].
        #[arg(long)]
        noff_subjects: Option<usize>,
        /// Ground-truth synergies of the NoFF group [default: 8].
        #[arg(long)]
        noff_synergies: Option<usize>,
    },
}

#[derive(Args)]
struct BodyArgs {
    /// Body mass, kg [default: 65].
    #[arg(long)]
    mass: Option<f64>,
    /// Rectangular pulse length, s [default: 0.15].
    #[arg(long)]
    pulse: Option<f64>,
}

impl BodyArgs {
    fn rig(&self) -> RigModel {
        let mut rig = RigModel::default();
        if let Some(m) = self.mass {
            rig.body.mass_kg = m;
        }
        if let Some(p) = self.pulse {
            rig.pulse_duration = p;
        }
        rig
    }
}

/// Pipeline options. Flags override values from `--config`.
#[derive(Args)]
struct AnalysisArgs {
    /// JSON config: {"manifest", "output_dir", "analysis": {...}}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Band-pass lower edge, Hz [default: 20, surface-EMG band].
    #[arg(long)]
    band_low: Option<f64>,
    /// Band-pass upper edge, Hz [default: 300, surface-EMG band].
    #[arg(long)]
    band_high: Option<f64>,
    /// Envelope low-pass cutoff, Hz [default: 50].
    #[arg(long)]
    envelope_cutoff: Option<f64>,
    /// Butterworth poles per filter, even [default: 4].
    #[arg(long)]
    filter_order: Option<usize>,
    /// Leave the background bin out of the activation matrix [default: included].
    #[arg(long)]
    no_bk: bool,
    /// Normalize each session separately [default: whole subject].
    #[arg(long)]
    per_session: bool,
    /// Fixed synergy count; the 1-10 VAF scan is still reported.
    #[arg(long, conflicts_with = "criterion")]
    n: Option<usize>,
    /// Total-VAF criterion, percent [default: 90, conventional threshold].
    #[arg(long)]
    criterion: Option<f64>,
    /// NMF seed, recorded in every artifact [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// NMF random restarts [default: 20].
    #[arg(long)]
    restarts: Option<usize>,
    /// NMF iteration cap [default: 5000].
    #[arg(long)]
    max_iter: Option<usize>,
    /// NMF relative-change tolerance [default: 1e-8].
    #[arg(long)]
    tol: Option<f64>,
    /// Per-synergy VAF definition [default: rank-one].
    #[arg(long, value_enum)]
    per_synergy: Option<PerSynergyArg>,
    /// Phases to factorize [default: both].
    #[arg(long, value_enum)]
    phase: Option<PhaseArg>,
    /// Reference point for COP deviations [default: mean].
    #[arg(long, value_enum)]
    cop_reference: Option<CopReferenceArg>,
    /// Mann-Whitney p-value mode [default: auto, exact up to 16 observations].
    #[arg(long, value_enum)]
    u_mode: Option<UModeArg>,
    /// Alternative hypothesis, FF relative to NoFF [default: two-sided].
    #[arg(long, value_enum)]
    alternative: Option<AlternativeArg>,
}

#[derive(Deserialize)]
struct ConfigFile {
    manifest: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    analysis: AnalysisOptions,
}

impl AnalysisArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let file = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ConfigFile { manifest: None, output_dir: None, analysis: AnalysisOptions::default() },
        };
        let manifest = self.manifest.clone().or(file.manifest).ok_or_else(|| anyhow!("--manifest is required"))?;
        let output_dir = self.out.clone().or(file.output_dir).ok_or_else(|| anyhow!("--out is required"))?;
        let mut a = file.analysis;
        set(&mut a.filter.band_low, self.band_low);
        set(&mut a.filter.band_high, self.band_high);
        set(&mut a.filter.envelope_cutoff, self.envelope_cutoff);
        set(&mut a.filter.order, self.filter_order);
        a.include_bk &= !self.no_bk;
        a.per_session_normalization |= self.per_session;
        if let Some(n) = self.n {
            a.synergy_count = SynergyCount::Fixed(n);
        }
        if let Some(criterion) = self.criterion {
            a.synergy_count = SynergyCount::Auto { criterion };
        }
        set(&mut a.nmf.seed, self.seed);
        set(&mut a.nmf.restarts, self.restarts);
        set(&mut a.nmf.max_iter, self.max_iter);
        set(&mut a.nmf.tol, self.tol);
        set(&mut a.per_synergy_mode, self.per_synergy.map(Into::into));
        set(&mut a.phases, self.phase.map(Into::into));
        set(&mut a.cop_reference, self.cop_reference.map(Into::into));
        set(&mut a.u_mode, self.u_mode.map(Into::into));
        set(&mut a.alternative, self.alternative.map(Into::into));
        Ok(PipelineConfig { manifest, output_dir, analysis: a })
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mwu,
    T,
}

#[derive(Clone, Copy, ValueEnum)]
enum UModeArg {
    Auto,
    Exact,
    Approx,
}

impl From<UModeArg> for UModeChoice {
    fn from(m: UModeArg) -> Self {
        match m {
            UModeArg::Auto => UModeChoice::Auto,
            UModeArg::Exact => UModeChoice::Exact,
            UModeArg::Approx => UModeChoice::NormalApprox,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlternativeArg {
    TwoSided,
    Less,
    Greater,
}

impl From<AlternativeArg> for Alternative {
    fn from(a: AlternativeArg) -> Self {
        match a {
            AlternativeArg::TwoSided => Alternative::TwoSided,
            AlternativeArg::Less => Alternative::Less,
            AlternativeArg::Greater => Alternative::Greater,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PerSynergyArg {
    RankOne,
    Incremental,
}

impl From<PerSynergyArg> for PerSynergyMode {
    fn from(m: PerSynergyArg) -> Self {
        match m {
            PerSynergyArg::RankOne => PerSynergyMode::RankOne,
            PerSynergyArg::Incremental => PerSynergyMode::Incremental,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Apr,
    Vpr,
    Both,
}

impl From<PhaseArg> for PhaseSelection {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Apr => PhaseSelection::Apr,
            PhaseArg::Vpr => PhaseSelection::Vpr,
            PhaseArg::Both => PhaseSelection::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CopReferenceArg {
    Mean,
    Start,
}

impl From<CopReferenceArg> for CopReference {
    fn from(r: CopReferenceArg) -> Self {
        match r {
            CopReferenceArg::Mean => CopReference::Mean,
            CopReferenceArg::Start => CopReference::Start,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Forward,
    Backward,
    Dominant,
    Nondominant,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Forward => Direction::Forward,
            DirectionArg::Backward => Direction::Backward,
            DirectionArg::Dominant => Direction::Dominant,
            DirectionArg::Nondominant => Direction::Nondominant,
        }
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    use std::io::Write;
    writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

/// Runs the requested stages and writes the artifacts whose names pass `keep`.
fn run_stages(args: &AnalysisArgs, stages: Stages, keep: fn(&str) -> bool) -> Result<()> {
    let config = args.config()?;
    let cohort = load_cohort(&config.manifest).map_err(|e| anyhow!("stage ingest failed: {e}"))?;
    let analysis = analyze_stages(&cohort, &config.analysis, stages)?;
    let files: Vec<(String, String)> =
        render_artifacts(&config, &cohort, &analysis)?.into_iter().filter(|(name, _)| keep(name)).collect();
    for path in write_artifacts(&config.output_dir, &files)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn ingest(manifest: &Path) -> Result<()> {
    let cohort = load_cohort(manifest).map_err(|e| anyhow!("stage ingest failed: {e}"))?;
    cohort.validate().map_err(|e| anyhow!("stage ingest failed: {e}"))?;
    let subjects: Vec<_> = cohort
        .subjects
        .iter()
        .map(|s| {
            json!({
                "subject": s.subject_id,
                "group": s.group,
                "sessions": s.sessions.len(),
                "trials": s.trials().count(),
                "invalid_trials": s.trials().filter(|t| !t.valid).count(),
            })
        })
        .collect();
    print_json(&json!({ "subjects": subjects, "trials": cohort.n_trials() }))
}

fn compare(a: &[f64], b: &[f64], method: MethodArg, mode: UModeArg, alternative: AlternativeArg) -> Result<()> {
    let result = match method {
        MethodArg::T => independent_t(a, b, alternative.into())?,
        MethodArg::Mwu => {
            let mode = match mode {
                UModeArg::Exact => UMode::Exact,
                UModeArg::Approx => UMode::NormalApprox,
                UModeArg::Auto if a.len() + b.len() <= EXACT_MAX_N => UMode::Exact,
                UModeArg::Auto => UMode::NormalApprox,
            };
            mann_whitney_u(a, b, mode, alternative.into())?
        }
    };
    print_json(&result)
}

fn sim_calibrate(body: &BodyArgs) -> Result<()> {
    let rig = body.rig();
    let opts = CalibrationOptions::default();
    let rows: Result<Vec<_>> = Direction::ALL
        .iter()
        .map(|&d| {
            let c = calibrate_threshold(&rig.body, rig.pulse_duration, d, &opts)?;
            Ok(json!({
                "direction": d,
                "force_n": c.force_n,
                "fraction_bw": c.fraction,
                "capped": c.capped,
                "fell_at_start": c.fell_at_start,
            }))
        })
        .collect();
    print_json(&json!({ "mass_kg": rig.body.mass_kg, "pulse_s": rig.pulse_duration, "thresholds": rows? }))
}

fn sim_trial(body: &BodyArgs, direction: Direction, force: Option<f64>, ff: bool, onset: f64, seed: u64) -> Result<()> {
    let rig = body.rig();
    let task = TaskModel::default();
    let (thresholds, boundary) = calibrate_subject(&rig.body, rig.pulse_duration, &CalibrationOptions::default())?;
    let script = TrialScript {
        trial_id: 1,
        direction,
        perturbation_force: force.unwrap_or(thresholds[&direction]),
        t_perturb_onset: onset,
        perturbation_duration: rig.pulse_duration,
        ff_enabled: ff,
        seed,
        ball_offset: None,
    };
    let layout = postsyn::model::PlateLayout::default();
    let t = run_trial(&rig, &task, &layout, &script, Some(&boundary), 1000.0, 100.0)?;
    let cop = cop_metrics(&trial_cop(&t.plates, &layout)?, CopReference::default())?;
    print_json(&json!({
        "direction": direction,
        "force_n": script.perturbation_force,
        "ff_enabled": ff,
        "outcome": t.outcome,
        "step_time_s": t.step_time,
        "max_pelvic_excursion_mm": t.max_excursion_mm,
        "assist_time_s": t.assist_time_s,
        "cop": cop,
    }))
}

struct CohortOverrides {
    seed: Option<u64>,
    noise: Option<f64>,
    sessions: Option<u32>,
    trials_per_session: Option<usize>,
    ff: (Option<usize>, Option<usize>),
    noff: (Option<usize>, Option<usize>),
}

fn sim_cohort(spec_path: Option<&Path>, out: &Path, o: CohortOverrides) -> Result<()> {
    let mut spec: CohortSpec = match spec_path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => CohortSpec::default(),
    };
    set(&mut spec.seed, o.seed);
    set(&mut spec.noise, o.noise);
    set(&mut spec.sessions, o.sessions);
    set(&mut spec.trials_per_session, o.trials_per_session);
    for (group, (subjects, synergies)) in [(postsyn::model::Group::FF, o.ff), (postsyn::model::Group::NoFF, o.noff)] {
        if subjects.is_none() && synergies.is_none() {
            continue;
        }
        let idx = match spec.groups.iter().position(|g| g.group == group) {
            Some(i) => i,
            None => {
                spec.groups.push(GroupSpec { group, n_subjects: 2, n_synergies: 4 });
                spec.groups.len() - 1
            }
        };
        set(&mut spec.groups[idx].n_subjects, subjects);
        set(&mut spec.groups[idx].n_synergies, synergies);
    }
    let (cohort, truth) = generate_synthetic_cohort(&spec)?;
    let manifest = postsyn::io::save_cohort(&cohort, out)?;
    let truth_path = save_ground_truth(&truth, out)?;
    println!("{}", manifest.display());
    println!("{}", truth_path.display());
    Ok(())
}

fn selftest_run(only: &[u8]) -> Result<bool> {
    let ids: Vec<u8> = if only.is_empty() { CRITERIA.iter().map(|(id, _)| *id).collect() } else { only.to_vec() };
    let mut all = true;
    for id in ids {
        let outcome = selftest::run(id).ok_or_else(|| anyhow!("unknown criterion {id}"))?;
        println!("{}", outcome.line());
        all &= outcome.passed;
    }
    Ok(all)
}

fn is_synergy_artifact(name: &str) -> bool {
    name.starts_with("synergy_") || name.starts_with("vaf_")
}

fn is_cop_artifact(name: &str) -> bool {
    matches!(name, "cop_metrics.csv" | "session_cop.csv" | "cop_traces.svg")
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Ingest { manifest } => ingest(&manifest)?,
        Command::Preprocess(args) => {
            run_stages(&args, Stages { synergies: false, balance: false }, |n| n == "binned.csv")?
        }
        Command::Extract(args) => run_stages(&args, Stages { synergies: true, balance: false }, is_synergy_artifact)?,
        Command::Cop(args) => run_stages(&args, Stages { synergies: false, balance: true }, is_cop_artifact)?,
        Command::Report(args) => run_stages(&args, Stages::ALL, |_| true)?,
        Command::Plots { dir } => {
            for path in emit_plots(&dir)? {
                println!("{}", path.display());
            }
        }
        Command::Stats { command } => match command {
            StatsCommand::Compare { a, b, method, mode, alternative } => compare(&a, &b, method, mode, alternative)?,
            StatsCommand::Groups(args) => run_stages(&args, Stages { synergies: false, balance: true }, |n| {
                matches!(n, "stats.json" | "subjects.csv")
            })?,
        },
        Command::Sim { command } => match command {
            SimCommand::Calibrate { body } => sim_calibrate(&body)?,
            SimCommand::Trial { body, direction, force, ff, onset, seed } => {
                sim_trial(&body, direction.into(), force, ff, onset, seed)?
            }
            SimCommand::Cohort {
                spec,
                out,
                seed,
                noise,
                sessions,
                trials_per_session,
                ff_subjects,
                ff_synergies,
                noff_subjects,
                noff_synergies,
            } => sim_cohort(
                spec.as_deref(),
                &out,
                CohortOverrides {
                    seed,
                    noise,
                    sessions,
                    trials_per_session,
                    ff: (ff_subjects, ff_synergies),
                    noff: (noff_subjects, noff_synergies),
                },
            )?,
        },
        Command::Selftest { only } => return selftest_run(&only),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::parse_from(["postsyn", "report", "--manifest", "m.json", "--out", "o", "--n", "3", "--no-bk"]);
        let Command::Report(args) = cli.command else { panic!("report") };
        let c = args.config().unwrap();
        assert_eq!(c.analysis.synergy_count, SynergyCount::Fixed(3));
        assert!(!c.analysis.include_bk);
        assert_eq!(c.manifest, PathBuf::from("m.json"));
    }

    #[test]
    fn missing_manifest_is_an_error() {
        let cli = Cli::parse_from(["postsyn", "report", "--out", "o"]);
        let Command::Report(args) = cli.command else { panic!("report") };
        assert!(args.config().is_err());
    }
}
