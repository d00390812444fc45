//! End-to-end pipeline: corpus generation, analysis, dictionary build, the
//! three training phases, and the component on/off ablation grid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use traj_core::analysis::{distribution_table, maneuver_distribution, transition_matrix, transition_table};
use traj_core::corpus::format_float;
use traj_core::synth::{gen_corpus, ScenarioConfig};
use traj_core::{CorpusRecord, FeatureLimits, SchemaConfig};
use traj_dict::{build_dictionary, persist_dictionary, DictConfig, TrajectoryDictionary};

use crate::error::Result;
use crate::eval::{evaluate, Metrics};
use crate::gftm::{freeze_export, gftm_pretrain, FrozenGftm, GftmConfig, GftmModel};
use crate::hftdn::{hftdn_train, HftdnConfig, HftdnModel};
use crate::planner::{train_main, PlannerConfig, PlannerModel, TrainedPlanner};
use crate::s2d::S2dPhase;
use crate::train::{TrainOptions, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseParams {
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for PhaseParams {
    fn default() -> Self {
        Self {
            batch: 64,
            lr: 2e-4,
            epochs: 30,
        }
    }
}

/// Pipeline configuration; field names mirror the model hyperparameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,

    pub dt: f64,
    pub history_steps: usize,
    pub future_steps: usize,
    pub a_max: f64,
    pub kappa_max: f64,

    pub alpha: f64,
    pub epsilon: f64,
    pub n_clusters: usize,
    pub top_k: usize,
    pub group_n: usize,

    pub d_model: usize,
    pub d_prior: usize,
    pub d_guide: usize,
    pub head_hidden: usize,

    pub aux_count: usize,
    pub primary_count: usize,
    pub holdout_count: usize,
    pub maneuver_mix: [f64; 4],
    pub noise_std_aux_a: f64,
    pub noise_std_aux_b: f64,
    pub noise_std_primary: f64,
    pub max_neighbors: usize,

    pub phase1: PhaseParams,
    pub phase2: PhaseParams,
    pub phase3: PhaseParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            dt: 0.1,
            history_steps: 20,
            future_steps: 80,
            a_max: 5.0,
            kappa_max: 0.5,
            alpha: 0.3,
            epsilon: 0.7,
            n_clusters: 2,
            top_k: 9,
            group_n: 3,
            d_model: 64,
            d_prior: 64,
            d_guide: 64,
            head_hidden: 128,
            aux_count: 1000,
            primary_count: 500,
            holdout_count: 250,
            maneuver_mix: [0.15, 0.55, 0.20, 0.10],
            noise_std_aux_a: 0.02,
            noise_std_aux_b: 0.05,
            noise_std_primary: 0.03,
            max_neighbors: 4,
            phase1: PhaseParams {
                batch: 64,
                lr: 2e-3,
                epochs: 30,
            },
            phase2: PhaseParams {
                batch: 64,
                lr: 2e-4,
                epochs: 30,
            },
            phase3: PhaseParams {
                batch: 64,
                lr: 1e-4,
                epochs: 30,
            },
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn schema(&self) -> SchemaConfig {
        SchemaConfig {
            dt: self.dt,
            history_steps: self.history_steps,
            future_steps: self.future_steps,
        }
    }

    pub fn limits(&self) -> FeatureLimits {
        FeatureLimits {
            a_max: self.a_max,
            kappa_max: self.kappa_max,
            v_eps: 0.1,
        }
    }

    pub fn gftm_cfg(&self) -> GftmConfig {
        GftmConfig {
            input_dim: 5,
            hidden: self.d_prior,
            head_hidden: self.head_hidden,
            future_steps: self.future_steps,
        }
    }

    pub fn planner_cfg(&self, use_gftm: bool, use_s2d: bool) -> PlannerConfig {
        PlannerConfig {
            d_model: self.d_model,
            d_prior: self.d_prior,
            head_hidden: self.head_hidden,
            history_steps: self.history_steps,
            future_steps: self.future_steps,
            use_gftm,
            use_s2d,
            epsilon: self.epsilon,
        }
    }

    pub fn hftdn_cfg(&self) -> HftdnConfig {
        HftdnConfig {
            d_guide: self.d_guide,
            d_model: self.d_model,
            groups: self.group_n,
            top_k: self.top_k,
            alpha: self.alpha,
        }
    }

    fn scenario(&self, dataset_id: &str, seed: u64, noise_std: f64) -> ScenarioConfig {
        let mut s = ScenarioConfig::new(dataset_id, seed);
        s.maneuver_mix = self.maneuver_mix;
        s.noise_std = noise_std;
        s.max_neighbors = self.max_neighbors;
        s.schema = self.schema();
        s
    }
}

/// Stable derived seed for a pipeline stage.
pub fn subseed(base: u64, tag: u64) -> u64 {
    let mut z = base.wrapping_add(tag.wrapping_mul(0x9E3779B97F4A7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub hftdn: bool,
    pub gftm: bool,
    pub s2d: bool,
    pub metrics: Metrics,
}

#[derive(Debug)]
pub struct PipelineArtifacts {
    pub out_dir: PathBuf,
    pub dictionary: TrajectoryDictionary,
    pub phase1: TrainTrace,
    pub phase2: TrainTrace,
    pub phase3: TrainTrace,
    /// Full-system metrics on the holdout corpus.
    pub headline: Metrics,
    /// No-prior baseline metrics on the holdout corpus.
    pub baseline: Metrics,
    /// Max absolute metric difference between the frozen phase-II planner
    /// and the same planner with an untrained (zero-init) guidance module.
    pub continuity_gap: f64,
    pub rows: Vec<AblationRow>,
}

/// The 8-row grid in table order: none, H, G, S, HG, HS, GS, HGS.
pub const ABLATION_ORDER: [(bool, bool, bool); 8] = [
    (false, false, false),
    (true, false, false),
    (false, true, false),
    (false, false, true),
    (true, true, false),
    (true, false, true),
    (false, true, true),
    (true, true, true),
];

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn metrics_fields(m: &Metrics) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        format_float(m.ade),
        format_float(m.fde),
        format_float(m.yaw_mae),
        format_float(m.plan_loss)
    )
}

/// One phase-II training run for a component combination.
fn train_phase2_variant(
    cfg: &PipelineConfig,
    frozen: &FrozenGftm,
    primary: &[CorpusRecord],
    use_gftm: bool,
    use_s2d: bool,
    variant_tag: u64,
) -> Result<(TrainedPlanner, TrainTrace)> {
    let gftm = use_gftm.then(|| frozen.clone());
    let mut model = PlannerModel::new(
        cfg.planner_cfg(use_gftm, use_s2d),
        subseed(cfg.seed, 300 + variant_tag),
        gftm,
    )?;
    model.s2d.set_phase(S2dPhase::MainTraining);
    let opts = TrainOptions::new(
        cfg.phase2.epochs,
        cfg.phase2.batch,
        cfg.phase2.lr,
        subseed(cfg.seed, 310 + variant_tag),
    );
    train_main(model, primary, &opts)
}

/// One phase-III training run on top of a trained planner.
fn train_phase3_variant(
    cfg: &PipelineConfig,
    planner: &TrainedPlanner,
    primary: &[CorpusRecord],
    dict: &TrajectoryDictionary,
    variant_tag: u64,
) -> Result<(HftdnModel, TrainTrace)> {
    let mut frozen_planner = planner.clone();
    frozen_planner.model.params.set_trainable("", false);
    frozen_planner.model.s2d.set_phase(S2dPhase::HftdnTraining);
    let mut hftdn = HftdnModel::new(cfg.hftdn_cfg(), subseed(cfg.seed, 400 + variant_tag));
    let opts = TrainOptions::new(
        cfg.phase3.epochs,
        cfg.phase3.batch,
        cfg.phase3.lr,
        subseed(cfg.seed, 410 + variant_tag),
    );
    let trace = hftdn_train(&frozen_planner, &mut hftdn, primary, dict, &opts)?;
    Ok((hftdn, trace))
}

fn eval_row(
    planner: &TrainedPlanner,
    hftdn: Option<(&HftdnModel, &TrajectoryDictionary)>,
    holdout: &[CorpusRecord],
) -> Result<Metrics> {
    let mut p = planner.clone();
    p.model.s2d.set_phase(S2dPhase::Inference);
    evaluate(&p, hftdn, holdout)
}

/// Run the whole pipeline into `out_dir`; every artifact is deterministic in
/// the config.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<PipelineArtifacts> {
    std::fs::create_dir_all(out_dir)?;
    let corpora_dir = out_dir.join("corpora");
    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&corpora_dir)?;
    std::fs::create_dir_all(&ckpt_dir)?;

    // Corpus generation.
    let aux_a_path = corpora_dir.join("aux_a.jsonl");
    let aux_b_path = corpora_dir.join("aux_b.jsonl");
    let primary_path = corpora_dir.join("primary.jsonl");
    let holdout_path = corpora_dir.join("holdout.jsonl");
    let aux_a = gen_corpus(
        &cfg.scenario("aux-a", subseed(cfg.seed, 1), cfg.noise_std_aux_a),
        cfg.aux_count,
        &aux_a_path,
    )?;
    let aux_b = gen_corpus(
        &cfg.scenario("aux-b", subseed(cfg.seed, 2), cfg.noise_std_aux_b),
        cfg.aux_count,
        &aux_b_path,
    )?;
    let primary = gen_corpus(
        &cfg.scenario("primary", subseed(cfg.seed, 3), cfg.noise_std_primary),
        cfg.primary_count,
        &primary_path,
    )?;
    let holdout = gen_corpus(
        &cfg.scenario("holdout", subseed(cfg.seed, 4), cfg.noise_std_primary),
        cfg.holdout_count,
        &holdout_path,
    )?;

    // Corpus statistics over every generated source.
    let limits = cfg.limits();
    let thresholds = traj_core::ManeuverThresholds::default();
    let mut all_records: Vec<CorpusRecord> = Vec::new();
    all_records.extend(aux_a.iter().cloned());
    all_records.extend(aux_b.iter().cloned());
    all_records.extend(primary.iter().cloned());
    let dist = maneuver_distribution(&all_records, &limits, &thresholds)?;
    write_text(&out_dir.join("distribution.tsv"), &distribution_table(&dist))?;
    let trans = transition_matrix(&all_records, &limits, &thresholds)?;
    write_text(&out_dir.join("transitions.tsv"), &transition_table(&trans))?;

    // Dictionary over the auxiliary corpora.
    let mut aux_records = aux_a;
    aux_records.extend(aux_b);
    let dict_cfg = DictConfig {
        resolution: traj_dict::DEFAULT_RESOLUTION,
        n_clusters: cfg.n_clusters,
        seed: subseed(cfg.seed, 10),
        limits,
    };
    // Source names are recorded relative to the run directory so artifacts
    // are byte-identical wherever the run lands.
    let dictionary = build_dictionary(
        &aux_records,
        &dict_cfg,
        vec!["corpora/aux_a.jsonl".into(), "corpora/aux_b.jsonl".into()],
    )?;
    persist_dictionary(&dictionary, &out_dir.join("dictionary.jsonl"))?;

    // Phase I on the auxiliary corpora, then freeze.
    let mut gftm = GftmModel::new(cfg.gftm_cfg(), subseed(cfg.seed, 20));
    let mut p1_opts = TrainOptions::new(
        cfg.phase1.epochs,
        cfg.phase1.batch,
        cfg.phase1.lr,
        subseed(cfg.seed, 21),
    );
    p1_opts.checkpoint_dir = Some(ckpt_dir.join("gftm"));
    let phase1 = gftm_pretrain(&mut gftm, &aux_records, &p1_opts)?;
    let frozen = freeze_export(gftm);
    nn_core::save_params(frozen.params(), &ckpt_dir.join("gftm_frozen.ckpt"))?;

    // Phase II / III for each (gftm, s2d) combination; rows with guidance
    // reuse the matching base planner.
    let mut planners: Vec<Option<TrainedPlanner>> = vec![None, None, None, None];
    let mut hftdns: Vec<Option<HftdnModel>> = vec![None, None, None, None];
    let mut traces2: Vec<Option<TrainTrace>> = vec![None, None, None, None];
    let mut traces3: Vec<Option<TrainTrace>> = vec![None, None, None, None];
    let variant_of = |g: bool, s: bool| usize::from(g) * 2 + usize::from(s);
    for (h, g, s) in ABLATION_ORDER {
        let v = variant_of(g, s);
        if planners[v].is_none() {
            let (planner, trace) =
                train_phase2_variant(cfg, &frozen, &primary, g, s, v as u64)?;
            planners[v] = Some(planner);
            traces2[v] = Some(trace);
        }
        if h && hftdns[v].is_none() {
            let (hftdn, trace) = train_phase3_variant(
                cfg,
                planners[v].as_ref().unwrap(),
                &primary,
                &dictionary,
                v as u64,
            )?;
            hftdns[v] = Some(hftdn);
            traces3[v] = Some(trace);
        }
    }

    // Evaluate all eight rows on the holdout corpus.
    let mut rows = Vec::with_capacity(8);
    for (h, g, s) in ABLATION_ORDER {
        let v = variant_of(g, s);
        let planner = planners[v].as_ref().unwrap();
        let guidance = if h {
            Some((hftdns[v].as_ref().unwrap(), &dictionary))
        } else {
            None
        };
        let metrics = eval_row(planner, guidance, &holdout)?;
        rows.push(AblationRow {
            hftdn: h,
            gftm: g,
            s2d: s,
            metrics,
        });
    }

    let full_variant = variant_of(true, true);
    let full_planner = planners[full_variant].as_ref().unwrap();
    let full_hftdn = hftdns[full_variant].as_ref().unwrap();
    nn_core::save_params(&full_planner.model.params, &ckpt_dir.join("planner.ckpt"))?;
    nn_core::save_params(&full_hftdn.params, &ckpt_dir.join("hftdn.ckpt"))?;

    // Loss continuity: the frozen phase-II planner and the same planner with
    // an untrained guidance module must score identically.
    let frozen_metrics = eval_row(full_planner, None, &holdout)?;
    let untrained = HftdnModel::new(cfg.hftdn_cfg(), subseed(cfg.seed, 999));
    let start_metrics = eval_row(full_planner, Some((&untrained, &dictionary)), &holdout)?;
    let continuity_gap = [
        (frozen_metrics.ade - start_metrics.ade).abs(),
        (frozen_metrics.fde - start_metrics.fde).abs(),
        (frozen_metrics.yaw_mae - start_metrics.yaw_mae).abs(),
        (frozen_metrics.plan_loss - start_metrics.plan_loss).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let headline = rows[7].metrics;
    let baseline = rows[0].metrics;

    // Reports.
    let mut ablation = String::from("hftdn\tgftm\ts2d\tade\tfde\tyaw_mae\tplan_loss\n");
    for row in &rows {
        ablation.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            u8::from(row.hftdn),
            u8::from(row.gftm),
            u8::from(row.s2d),
            metrics_fields(&row.metrics)
        ));
    }
    write_text(&out_dir.join("ablation.tsv"), &ablation)?;

    let phase2 = traces2[full_variant].clone().unwrap();
    let phase3 = traces3[full_variant].clone().unwrap();
    let mut report = String::from("key\tvalue\n");
    let mut kv = |k: &str, v: f64| report.push_str(&format!("{}\t{}\n", k, format_float(v)));
    kv("phase1.initial_val", phase1.initial_val);
    kv("phase1.final_val", phase1.final_val());
    kv("phase2.initial_val", phase2.initial_val);
    kv("phase2.final_val", phase2.final_val());
    kv("phase3.initial_val", phase3.initial_val);
    kv("phase3.final_val", phase3.final_val());
    kv("continuity_gap", continuity_gap);
    kv("headline.ade", headline.ade);
    kv("headline.fde", headline.fde);
    kv("headline.yaw_mae", headline.yaw_mae);
    kv("headline.plan_loss", headline.plan_loss);
    kv("baseline.ade", baseline.ade);
    kv("baseline.fde", baseline.fde);
    kv("holdout.count", headline.count as f64);
    write_text(&out_dir.join("metrics.tsv"), &report)?;

    Ok(PipelineArtifacts {
        out_dir: out_dir.to_path_buf(),
        dictionary,
        phase1,
        phase2,
        phase3,
        headline,
        baseline,
        continuity_gap,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_preserves_defaults() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_toml_fills_in_defaults() {
        let cfg: PipelineConfig = toml::from_str(
            "seed = 7\nalpha = 0.5\n[phase2]\nepochs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.phase2.epochs, 3);
        assert_eq!(cfg.phase2.batch, 64);
        assert_eq!(cfg.top_k, 9);
        assert_eq!(cfg.epsilon, 0.7);
    }

    #[test]
    fn ablation_order_has_eight_distinct_rows() {
        let mut seen = std::collections::BTreeSet::new();
        for combo in ABLATION_ORDER {
            assert!(seen.insert(combo));
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn subseed_separates_tags() {
        let mut seen = std::collections::BTreeSet::new();
        for tag in 0..100 {
            assert!(seen.insert(subseed(42, tag)));
        }
    }
}
