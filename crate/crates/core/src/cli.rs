//! Batch runner, validator and trace re-summarizer behind the `walknav` binary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{Recorder, Replay};
use crate::grounding::{IntentModel, RecordingIntent, ReferenceIntentModel};
use crate::map_service::Fixture;
use crate::orchestrator::{
    run_episode, Adapters, EpisodeConfig, EpisodeMeta, EpisodeResult, Outcome, SummaryTable,
    Trace, TraceRecord, TrialBatch,
};
use crate::policy::{JointModel, LocalPolicy, Recording, ReferenceJointModel, ReferenceLocalPolicy};
use crate::sim::Scenario;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdapterChoice {
    Reference,
    /// Directory laid out as `<scenario>/trial-<k>/{intent,joint,local}.jsonl`.
    Replay(PathBuf),
}

impl std::str::FromStr for AdapterChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "reference" {
            Ok(AdapterChoice::Reference)
        } else if let Some(p) = s.strip_prefix("replay:") {
            if p.is_empty() {
                Err("replay adapter needs a directory: replay:<dir>".into())
            } else {
                Ok(AdapterChoice::Replay(PathBuf::from(p)))
            }
        } else {
            Err(format!("unknown adapter {s:?}; expected reference or replay:<dir>"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    /// Scenario files or directories of them.
    pub scenario_paths: Vec<PathBuf>,
    /// Trial `k` runs with seed `seed + k`.
    pub seed: u64,
    pub trials: usize,
    pub overrides: Vec<(String, String)>,
    pub adapter: AdapterChoice,
    /// Save every adapter exchange under `<out>/adapters`.
    pub record: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            scenario_paths: Vec::new(),
            seed: 0,
            trials: 5,
            overrides: Vec::new(),
            adapter: AdapterChoice::Reference,
            record: false,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub meta: EpisodeMeta,
    pub result: EpisodeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub table: SummaryTable,
    pub episodes: Vec<EpisodeEntry>,
}

impl Summary {
    pub fn from_entries(mut episodes: Vec<EpisodeEntry>) -> Result<Self, CliError> {
        episodes.sort_by_key(|e| (e.meta.scenario_index, e.meta.trial));
        let mut groups: Vec<(String, String, TrialBatch)> = Vec::new();
        for e in &episodes {
            match groups.last_mut() {
                Some((_, name, batch)) if *name == e.meta.scenario => batch.results.push(e.result.clone()),
                _ => groups.push((
                    e.meta.task.clone(),
                    e.meta.scenario.clone(),
                    TrialBatch {
                        results: vec![e.result.clone()],
                    },
                )),
            }
        }
        let table = SummaryTable::build(&groups).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self { table, episodes })
    }

    pub fn any_adapter_failure(&self) -> bool {
        self.episodes
            .iter()
            .any(|e| e.result.outcome == Outcome::AdapterFailure)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let txt = dir.join("summary.txt");
        std::fs::write(&txt, self.table.render()).map_err(|e| CliError::io(&txt, e))?;
        let json = dir.join("summary.json");
        std::fs::write(&json, self.to_json()).map_err(|e| CliError::io(&json, e))
    }
}

/// Everything a batch produced, traces included.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: Summary,
    pub traces: Vec<Trace>,
}

impl RunReport {
    /// Process exit status for a completed batch.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.summary.any_adapter_failure())
    }
}

/// Expands directories to the scenario files they contain, sorted by name.
pub fn collect_scenarios(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "toml"))
                .collect();
            files.sort();
            out.extend(files);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(CliError::io(p, "no such file or directory"));
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no scenario files given".into()));
    }
    Ok(out)
}

fn load_replay(path: &Path) -> Result<Replay, CliError> {
    Replay::load(path).map_err(|e| CliError::io(path, e))
}

fn save_log(log: &Recorder, path: &Path) -> Result<(), CliError> {
    log.save(path).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Resolves the episode configuration for one scenario: defaults, then the
/// scenario's `[config]` table, then command-line overrides.
pub fn episode_config(scenario: &Scenario, overrides: &[(String, String)]) -> Result<EpisodeConfig, CliError> {
    let mut cfg = EpisodeConfig::default();
    cfg.apply_table(&scenario.config)
        .map_err(|e| CliError::Config(format!("{}: [config]: {e}", scenario.source().display())))?;
    for (k, v) in overrides {
        cfg.set(k, v)
            .map_err(|e| CliError::Config(format!("--set {k}={v}: {e}")))?;
    }
    Ok(cfg)
}

/// Runs one trial of one scenario with the selected adapters.
pub fn run_trial(
    scenario: &Scenario,
    scenario_index: usize,
    trial: usize,
    spec: &RunSpec,
    cfg: &EpisodeConfig,
) -> Result<(EpisodeEntry, Trace), CliError> {
    let seed = spec.seed.wrapping_add(trial as u64);
    let map = scenario
        .load_map()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut setup = scenario
        .build(seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let meta = EpisodeMeta {
        scenario_index,
        scenario: scenario.name.clone(),
        task: scenario.task.clone(),
        trial,
        seed,
    };
    let trial_dir = |root: &Path| root.join(&scenario.name).join(format!("trial-{trial}"));

    let (mut intent, mut joint, mut local): (Box<dyn IntentModel>, Box<dyn JointModel>, Box<dyn LocalPolicy>) =
        match &spec.adapter {
            AdapterChoice::Reference => (
                Box::new(ReferenceIntentModel),
                Box::new(ReferenceJointModel),
                Box::new(ReferenceLocalPolicy),
            ),
            AdapterChoice::Replay(root) => {
                let d = trial_dir(root);
                (
                    Box::new(load_replay(&d.join("intent.jsonl"))?),
                    Box::new(load_replay(&d.join("joint.jsonl"))?),
                    Box::new(load_replay(&d.join("local.jsonl"))?),
                )
            }
        };

    let run = if spec.record {
        let mut ri = RecordingIntent {
            inner: intent,
            log: Recorder::default(),
        };
        let mut rj = Recording::new(joint);
        let mut rl = Recording::new(local);
        let run = run_episode(
            &setup.instruction,
            &mut setup.world,
            Adapters {
                map: &map,
                intent: &mut ri,
                joint: &mut rj,
                local: &mut rl,
            },
            cfg,
            &setup.noise,
            &meta,
        );
        if let Some(out) = &spec.out_dir {
            let d = trial_dir(&out.join("adapters"));
            create_dir(&d)?;
            save_log(&ri.log, &d.join("intent.jsonl"))?;
            save_log(&rj.log, &d.join("joint.jsonl"))?;
            save_log(&rl.log, &d.join("local.jsonl"))?;
        }
        run
    } else {
        run_episode(
            &setup.instruction,
            &mut setup.world,
            Adapters {
                map: &map,
                intent: intent.as_mut(),
                joint: joint.as_mut(),
                local: local.as_mut(),
            },
            cfg,
            &setup.noise,
            &meta,
        )
    };

    let mut result = run.result;
    if let Some(out) = &spec.out_dir {
        let dir = out.join("traces").join(&scenario.name);
        create_dir(&dir)?;
        let path = dir.join(format!("trial-{trial}.jsonl"));
        run.trace.save(&path).map_err(|e| CliError::io(&path, e))?;
        result.trace_path = Some(PathBuf::from("traces").join(&scenario.name).join(format!("trial-{trial}.jsonl")));
    }
    Ok((EpisodeEntry { meta, result }, run.trace))
}

/// Executes every trial of every scenario and writes the artifacts.
pub fn run(spec: &RunSpec) -> Result<RunReport, CliError> {
    if spec.trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    let files = collect_scenarios(&spec.scenario_paths)?;
    let mut scenarios = Vec::new();
    for f in &files {
        let sc = Scenario::load(f).map_err(|e| CliError::Config(e.to_string()))?;
        let issues = sc.validate();
        if !issues.is_empty() {
            return Err(CliError::Config(format!("{}: {}", f.display(), issues.join("; "))));
        }
        let cfg = episode_config(&sc, &spec.overrides)?;
        scenarios.push((sc, cfg));
    }
    let mut names = std::collections::HashSet::new();
    for (sc, _) in &scenarios {
        if !names.insert(sc.name.clone()) {
            return Err(CliError::Config(format!("duplicate scenario name {:?}", sc.name)));
        }
    }
    if let Some(out) = &spec.out_dir {
        create_dir(out)?;
    }

    let mut entries = Vec::new();
    let mut traces = Vec::new();
    for (index, (sc, cfg)) in scenarios.iter().enumerate() {
        for trial in 0..spec.trials {
            let (entry, trace) = run_trial(sc, index, trial, spec, cfg)?;
            entries.push(entry);
            traces.push(trace);
        }
    }
    let summary = Summary::from_entries(entries)?;
    if let Some(out) = &spec.out_dir {
        summary.write(out)?;
    }
    Ok(RunReport { summary, traces })
}

/// Schema and invariant report for a fixture or scenario file. An empty
/// list means the file is valid.
pub fn validate(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    match doc.get("kind").and_then(|k| k.as_str()) {
        Some("fixture") => {
            let fx = Fixture::parse(&text, &path.display().to_string())
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(fx.validate())
        }
        Some("scenario") => {
            let sc = Scenario::parse(&text, path).map_err(|e| CliError::Config(e.to_string()))?;
            let mut issues = sc.validate();
            if let Err(e) = episode_config(&sc, &[]) {
                issues.push(e.to_string());
            }
            Ok(issues)
        }
        Some(other) => Err(CliError::Config(format!(
            "{}: field `kind`: expected \"fixture\" or \"scenario\", found {other:?}",
            path.display()
        ))),
        None => Err(CliError::Config(format!("{}: missing field `kind`", path.display()))),
    }
}

/// Rebuilds the summary from the traces under `dir` (a run output
/// directory or its `traces` subdirectory).
pub fn replay(dir: &Path) -> Result<Summary, CliError> {
    let root = if dir.join("traces").is_dir() {
        dir.join("traces")
    } else {
        dir.to_path_buf()
    };
    let mut files = Vec::new();
    let scenario_dirs = std::fs::read_dir(&root).map_err(|e| CliError::io(&root, e))?;
    for d in scenario_dirs.filter_map(Result::ok).map(|e| e.path()).filter(|p| p.is_dir()) {
        for f in std::fs::read_dir(&d).map_err(|e| CliError::io(&d, e))?.filter_map(Result::ok) {
            let p = f.path();
            if p.extension().is_some_and(|x| x == "jsonl") {
                files.push(p);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("{}: no traces found", root.display())));
    }
    let mut entries = Vec::new();
    for f in files {
        let trace = Trace::load(&f).map_err(|e| CliError::io(&f, e))?;
        let meta = trace
            .records
            .iter()
            .find_map(|r| match r {
                TraceRecord::Episode(h) => Some(h.meta.clone()),
                _ => None,
            })
            .ok_or_else(|| CliError::Config(format!("{}: no episode record", f.display())))?;
        let mut result = trace
            .result()
            .cloned()
            .ok_or_else(|| CliError::Config(format!("{}: no result record", f.display())))?;
        let rel = f.strip_prefix(root.parent().unwrap_or(&root)).unwrap_or(&f);
        result.trace_path = Some(rel.to_path_buf());
        entries.push(EpisodeEntry { meta, result });
    }
    Summary::from_entries(entries)
}
