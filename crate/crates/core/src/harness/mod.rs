//! End-to-end orchestration: partition, run rounds with scheduled attacks
//! and optional defense, record metrics, emit artifacts.

mod config;
mod grid;
mod report;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::index;
use rayon::prelude::*;

pub use config::{
    default_train_spec, DefenseSettings, DivergencePolicy, ExperimentConfig, PartitionKind, TrainOverrides,
    DATA_DIR_ENV,
};
pub use grid::{apply_override, run_grid_search, GridResult, GridRow, GridSpace};
pub use report::{emit_csv, emit_plot, parse_csv, render_svg, CsvRow, PlotEntry};

use crate::aggregation::{fedavg, merge_tree_updates, ClientUpdate, UpdatePayload};
use crate::dataset::{
    partition_iid, partition_label_subset, stratified_subsample, LabeledDataset, Mnist, Partition, PixelStats,
};
use crate::defense::{ClientReport, CorpusRow, DefenseConfig};
use crate::error::{Error, Result};
use crate::models::{build_model, evaluate, train_local, train_tree_round, EvalMetrics, Model, ModelKind, ParamVector};
use crate::rng;
use crate::threat::{
    compute_attack_rounds, flip_labels, mark_adversaries, mislabel_and_inject, mpaf_update, AttackKind, ModelInversion,
    SampleGenerator,
};

/// Normalized MNIST, loaded once and shared across experiments.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub stats: PixelStats,
}

impl DataBundle {
    pub fn load(dir: &Path) -> Result<Self> {
        let (train, test, stats) = Mnist::load(dir)?.to_datasets()?;
        Ok(Self { train, test, stats })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub metrics: EvalMetrics,
    pub accepted: Vec<usize>,
    pub rejected: Vec<usize>,
    /// Clients whose local training diverged; they submitted nothing.
    pub dropped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub model: ModelKind,
    pub attack: AttackKind,
    /// `"none"` without an attack, otherwise the window name.
    pub label: String,
    pub rounds: Vec<RoundRecord>,
    pub final_metrics: EvalMetrics,
    pub adversaries: BTreeSet<usize>,
    /// `(round, client)` for every attack transform applied.
    pub attack_calls: Vec<(usize, usize)>,
    /// Every client report, tagged with whether that client attacked in that round.
    pub corpus: Vec<CorpusRow>,
    pub wall_time: Duration,
}

impl ExperimentReport {
    pub fn final_accuracy(&self) -> f64 {
        self.final_metrics.accuracy
    }

    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self {
            wall_time: Duration::ZERO,
            ..self.clone()
        } == Self {
            wall_time: Duration::ZERO,
            ..other.clone()
        }
    }
}

struct Client {
    id: usize,
    train: LabeledDataset,
    holdout: LabeledDataset,
    present: BTreeSet<usize>,
}

struct Setup<'a> {
    cfg: &'a ExperimentConfig,
    clients: Vec<Client>,
    adversaries: BTreeSet<usize>,
    attack_rounds: BTreeSet<usize>,
    base: Option<ParamVector>,
    generator: ModelInversion,
}

struct ClientOutcome {
    update: ClientUpdate,
    attacked: bool,
}

/// Loads data from the configured directory and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data = DataBundle::load(&cfg.resolve_data_dir()?)?;
    run_with_data(cfg, &data)
}

pub fn run_with_data(cfg: &ExperimentConfig, data: &DataBundle) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let seed = cfg.seed;
    let train = stratified_subsample(&data.train, cfg.train_cap, seed);
    let test = stratified_subsample(&data.test, cfg.test_cap, seed);
    let c = cfg.effective_clients();
    let partitions = match cfg.partition {
        PartitionKind::Iid => partition_iid(&train, c, seed)?,
        PartitionKind::LabelSubset => partition_label_subset(&train, c, cfg.labels_per_client, seed)?,
    };
    let clients = partitions
        .iter()
        .map(|p| split_client(&train, p, cfg.holdout_fraction, seed))
        .collect::<Result<Vec<_>>>()?;

    let plan = &cfg.attack;
    let adversaries = if plan.kind == AttackKind::None {
        BTreeSet::new()
    } else {
        mark_adversaries(c, plan.malicious_ratio, seed)
    };
    let mut global = build_model(cfg.model, &cfg.arch, seed)?;
    let base = if plan.kind == AttackKind::Mpaf && !adversaries.is_empty() {
        Some(global.random_params(seed, "mpaf-base")?)
    } else {
        None
    };
    let setup = Setup {
        cfg,
        clients,
        adversaries,
        attack_rounds: compute_attack_rounds(plan.window, cfg.rounds),
        base,
        generator: ModelInversion {
            steps: plan.inversion_steps,
            step_size: plan.inversion_step_size,
            lo: data.stats.scale(0.0),
            hi: data.stats.scale(255.0),
            tree_generator: plan.tree_generator,
        },
    };
    let defense = DefenseConfig {
        kind: cfg.defense.kind,
        normalization: cfg.defense.normalization,
        params: cfg.detector_params(),
    };

    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut attack_calls = Vec::new();
    let mut corpus = Vec::new();
    for t in 1..=cfg.rounds {
        let participants = select_participants(c, cfg.participation_fraction, seed, t);
        let run_one = |&k: &usize| match run_client(&setup, &global, t, k) {
            Err(Error::Divergence { .. }) if cfg.on_divergence == DivergencePolicy::Drop => {
                log::warn!("round {t}: client {k} diverged during local training; dropped");
                Ok(Err(k))
            }
            other => other.map(Ok).map_err(|e| e.in_client(t, k)),
        };
        let results = if cfg.parallel {
            participants.par_iter().map(run_one).collect::<Result<Vec<_>>>()?
        } else {
            participants.iter().map(run_one).collect::<Result<Vec<_>>>()?
        };
        let (mut outcomes, mut dropped) = (Vec::new(), Vec::new());
        for r in results {
            match r {
                Ok(o) => outcomes.push(o),
                Err(k) => dropped.push(k),
            }
        }
        outcomes.sort_by_key(|o| o.update.client_id);
        dropped.sort_unstable();

        let mut updates = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            if o.attacked {
                attack_calls.push((t, o.update.client_id));
            }
            corpus.push(CorpusRow {
                report: o.update.report.clone(),
                is_malicious: o.attacked,
            });
            updates.push(o.update);
        }

        let screening = defense.screen(updates, rng::derive_key(seed, "defense", &[t as u64]))?;
        let accepted: Vec<usize> = screening.accepted.iter().map(|u| u.client_id).collect();
        match aggregate(&mut global, &screening.accepted) {
            Err(Error::NoUpdates) => log::warn!("round {t}: every update was rejected; global model unchanged"),
            other => other?,
        }
        let metrics = evaluate(&global, &test);
        log::info!(
            "round {t}: accuracy {:.4}, loss {:.4}, rejected {:?}",
            metrics.accuracy,
            metrics.loss,
            screening.rejected
        );
        rounds.push(RoundRecord {
            round: t,
            metrics,
            accepted,
            rejected: screening.rejected,
            dropped,
        });
    }

    let final_metrics = rounds.last().expect("at least one round").metrics.clone();
    Ok(ExperimentReport {
        model: cfg.model,
        attack: plan.kind,
        label: if plan.kind == AttackKind::None {
            "none".into()
        } else {
            plan.window.to_string()
        },
        rounds,
        final_metrics,
        adversaries: setup.adversaries,
        attack_calls,
        corpus,
        wall_time: started.elapsed(),
    })
}

fn split_client(train: &LabeledDataset, p: &Partition, holdout_fraction: f64, seed: u64) -> Result<Client> {
    let n = p.indices.len();
    let held = ((holdout_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut rng = rng::stream(seed, "holdout", &[p.client_id as u64]);
    let mut is_held = vec![false; n];
    for i in index::sample(&mut rng, n, held) {
        is_held[i] = true;
    }
    let (h, t): (Vec<_>, Vec<_>) = p.indices.iter().copied().zip(is_held).partition(|&(_, held)| held);
    let pick = |v: Vec<(usize, bool)>| v.into_iter().map(|(i, _)| i).collect::<Vec<_>>();
    Ok(Client {
        id: p.client_id,
        train: train.subset(&pick(t)),
        holdout: train.subset(&pick(h)),
        present: p.present_labels.clone(),
    })
}

fn select_participants(clients: usize, fraction: f64, seed: u64, round: usize) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..clients).collect();
    }
    let count = ((fraction * clients as f64).round() as usize).clamp(1, clients);
    let mut ids = index::sample(&mut rng::stream(seed, "participation", &[round as u64]), clients, count).into_vec();
    ids.sort_unstable();
    ids
}

fn run_client(setup: &Setup<'_>, global: &Model, t: usize, k: usize) -> Result<ClientOutcome> {
    let cfg = setup.cfg;
    let seed = cfg.seed;
    let plan = &cfg.attack;
    let client = &setup.clients[k];
    let attacking = setup.adversaries.contains(&k) && setup.attack_rounds.contains(&t);
    let path = [t as u64, k as u64];
    let client_seed = rng::derive_key(seed, "client", &path);

    let mut data = client.train.clone();
    let mut sample_count = data.len();
    let mut model = global.clone();
    let payload = match (attacking, plan.kind) {
        (true, AttackKind::Mpaf) => {
            let base = setup.base.as_ref().expect("base model drawn for mpaf");
            let fake = mpaf_update(&global.get_params()?, base, plan.lambda)?;
            model.set_params(&fake)?;
            sample_count = plan.mpaf_report_nk.unwrap_or(sample_count);
            UpdatePayload::Params(fake)
        }
        _ => {
            if attacking {
                match plan.kind {
                    AttackKind::LabelFlip => {
                        let key = rng::derive_key(seed, "label-flip", &path);
                        data.labels = flip_labels(&data.labels, plan.flip_fraction, data.num_classes, key);
                    }
                    AttackKind::GanRecon => {
                        let missing: BTreeSet<usize> =
                            (0..data.num_classes).filter(|c| !client.present.contains(c)).collect();
                        if !missing.is_empty() {
                            let key = rng::derive_key(seed, "gan", &path);
                            let synth = setup.generator.generate(global, &missing, plan.synth_per_class, key)?;
                            data = mislabel_and_inject(&data, &synth, &client.present, key)?;
                        }
                    }
                    AttackKind::None | AttackKind::Mpaf => {}
                }
            }
            match global.ensemble() {
                Some(ens) => {
                    let grown = train_tree_round(ens, &data, &cfg.tree, client_seed)?;
                    let fresh = grown.tail(ens.len());
                    model.set_ensemble(grown)?;
                    UpdatePayload::Trees(fresh)
                }
                None => UpdatePayload::Params(train_local(&mut model, &data, &cfg.train_spec(), client_seed)?),
            }
        }
    };
    let report = ClientReport::from_metrics(k, t, &evaluate(&model, &client.holdout));
    Ok(ClientOutcome {
        update: ClientUpdate {
            client_id: client.id,
            payload,
            sample_count,
            report,
        },
        attacked: attacking && plan.kind != AttackKind::None,
    })
}

fn aggregate(global: &mut Model, accepted: &[ClientUpdate]) -> Result<()> {
    if accepted.is_empty() {
        return Err(Error::NoUpdates);
    }
    match global.ensemble() {
        Some(ens) => {
            let merged = merge_tree_updates(ens, accepted)?;
            global.set_ensemble(merged)
        }
        None => global.set_params(&fedavg(accepted)?),
    }
}
