//! End-to-end runs driven by a [`PipelineConfig`]: purify, attack, eval,
//! bench and synthetic dataset generation. Each `run_*` function writes its
//! artifacts into the configured output directory.
//!
//! Reports hold only deterministic content (the resolved config included);
//! wall-clock timings go to separate `*_timings.json` files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::attack::{attack, class_mean_features, generate_sbm, write_move_log, AttackConfig};
use crate::error::{GarnetError, Result};
use crate::gcn::{
    evaluate, load_features, recovery_metrics, train_gcn, write_features, GcnHyper,
    LabeledDataset, Split, SplitIndices,
};
use crate::graph::{
    homophily_score, load_edge_list, load_labels, normalized_operator, write_edge_list,
    write_labels, OperatorKind, SparseGraph,
};
use crate::knn::{build_knn_graph, KnnConfig, KnnMode};
use crate::refine::{
    prune_edges, score_edges_full, score_edges_simplified, score_percentile, write_scores_csv,
    EdgeScore, RefineConfig, RefineMode,
};
use crate::seed::{derive_seed, rng_from_seed};
use crate::spectral::{
    dense_to_graph, embedding_with_features, low_rank_reconstruct, top_r_eigenpairs,
    weighted_embedding, EigenOptions, EmbeddingMatrix, SpectralPair,
};

/// Node count at which `knn_mode = auto` switches to the approximate index.
pub const EXACT_KNN_LIMIT: usize = 50_000;

/// Eigenvalues reported in the purify report.
const SPECTRUM_HEAD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnChoice {
    Auto,
    Exact,
    Approximate,
}

/// `f64` that may be `+inf`, written to JSON as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSq(pub f64);

impl Default for SigmaSq {
    fn default() -> Self {
        SigmaSq(f64::INFINITY)
    }
}

impl Serialize for SigmaSq {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for SigmaSq {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Option::<Raw>::deserialize(d)? {
            None => Ok(SigmaSq::default()),
            Some(Raw::Num(x)) => Ok(SigmaSq(x)),
            Some(Raw::Text(t)) => t.parse::<f64>().map(SigmaSq).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub n: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_shift: f64,
    pub feature_noise: f64,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            n: 400,
            blocks: 2,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 16,
            feature_shift: 0.2,
            feature_noise: 1.0,
            train_frac: 0.1,
            val_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub blocks: usize,
    pub avg_degree: f64,
    /// Expected share of each node's edges that stay inside its block.
    pub intra_fraction: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![10_000, 20_000, 40_000],
            blocks: 20,
            avg_degree: 10.0,
            intra_fraction: 0.8,
        }
    }
}

/// All run parameters. Paths are resolved relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Input graph (the adversarial graph for purify/eval, the clean one for attack).
    pub graph: Option<PathBuf>,
    /// Clean reference graph for eval.
    pub clean_graph: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub out: PathBuf,

    /// Embedding rank; `None` means `min(10 c, n - 2)`.
    pub r: Option<usize>,
    /// Class count for automatic `r` when no labels are given.
    pub num_classes: Option<usize>,
    pub k: usize,
    pub knn_mode: KnnChoice,
    pub approx_ef: Option<usize>,
    pub gamma: Option<f64>,
    pub gamma_percentile: Option<f64>,
    pub mode: RefineMode,
    pub sigma_sq: SigmaSq,
    pub r_base: Option<usize>,
    pub concat_features: bool,
    pub feature_scale: f64,
    pub eig_tol: f64,
    pub eig_max_iter: Option<usize>,
    pub eig_block: usize,
    pub dense_limit: usize,
    pub dump_embedding: bool,
    pub dump_scores: bool,

    pub attack: Option<AttackConfig>,
    pub gcn: GcnHyper,
    pub baseline: bool,
    pub repeats: usize,
    pub probes: usize,
    pub hops: usize,

    pub sbm: SbmConfig,
    pub bench: BenchConfig,

    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            graph: None,
            clean_graph: None,
            features: None,
            labels: None,
            splits: None,
            out: PathBuf::from("out"),
            r: None,
            num_classes: None,
            k: 50,
            knn_mode: KnnChoice::Auto,
            approx_ef: None,
            gamma: None,
            gamma_percentile: None,
            mode: RefineMode::Simplified,
            sigma_sq: SigmaSq::default(),
            r_base: None,
            concat_features: false,
            feature_scale: 1.0,
            eig_tol: 1e-8,
            eig_max_iter: None,
            eig_block: 2,
            dense_limit: 5000,
            dump_embedding: false,
            dump_scores: false,
            attack: None,
            gcn: GcnHyper::default(),
            baseline: false,
            repeats: 5,
            probes: 5,
            hops: 2,
            sbm: SbmConfig::default(),
            bench: BenchConfig::default(),
            seed: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| GarnetError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| GarnetError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| GarnetError::InvalidConfig("a seed is required".into()))
    }

    fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a PathBuf> {
        let path = field
            .as_ref()
            .ok_or_else(|| GarnetError::InvalidConfig(format!("`{name}` path is required")))?;
        if !path.exists() {
            return Err(GarnetError::InvalidConfig(format!(
                "`{name}` file {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    fn optional<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<Option<&'a PathBuf>> {
        match field {
            Some(_) => self.require(field, name).map(Some),
            None => Ok(None),
        }
    }
}

/// How the pruning threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSpec {
    Absolute(f64),
    /// The given percentile (0..=100) of the run's score distribution.
    Percentile(f64),
}

/// Fully resolved purification parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PurifyParams {
    pub r: usize,
    pub knn: KnnConfig,
    pub mode: RefineMode,
    pub gamma: GammaSpec,
    pub sigma_sq: f64,
    pub r_base: usize,
    pub feature_scale: Option<f64>,
    pub eig: EigenOptions,
}

impl PurifyParams {
    /// Simplified-mode parameters with exact kNN and default solver settings.
    pub fn simplified(r: usize, k: usize, gamma: GammaSpec, seed: u64) -> Self {
        PurifyParams {
            r,
            knn: KnnConfig {
                seed: derive_seed(seed, "knn", 0),
                ..KnnConfig::exact(k)
            },
            mode: RefineMode::Simplified,
            gamma,
            sigma_sq: f64::INFINITY,
            r_base: r,
            feature_scale: None,
            eig: EigenOptions {
                seed: derive_seed(seed, "eigensolver", 0),
                ..EigenOptions::default()
            },
        }
    }

    /// Resolves config defaults against a graph with `n` nodes.
    pub fn from_config(cfg: &PipelineConfig, n: usize, num_classes: Option<usize>, seed: u64) -> Result<Self> {
        let r = match (cfg.r, num_classes.or(cfg.num_classes)) {
            (Some(r), _) => r,
            (None, Some(c)) => crate::spectral::choose_r(c, n, None),
            (None, None) => {
                return Err(GarnetError::InvalidConfig(
                    "r = auto needs labels or num_classes".into(),
                ))
            }
        };
        let gamma = match (cfg.gamma, cfg.gamma_percentile) {
            (Some(_), Some(_)) => {
                return Err(GarnetError::InvalidConfig(
                    "set either gamma or gamma_percentile, not both".into(),
                ))
            }
            (Some(g), None) => GammaSpec::Absolute(g),
            (None, Some(q)) => GammaSpec::Percentile(q),
            (None, None) => {
                return Err(GarnetError::InvalidConfig(
                    "a pruning threshold (gamma or gamma_percentile) is required".into(),
                ))
            }
        };
        let mode = match cfg.knn_mode {
            KnnChoice::Exact => KnnMode::Exact,
            KnnChoice::Approximate => KnnMode::Approximate,
            KnnChoice::Auto if n < EXACT_KNN_LIMIT => KnnMode::Exact,
            KnnChoice::Auto => KnnMode::Approximate,
        };
        Ok(PurifyParams {
            r,
            knn: KnnConfig {
                k: cfg.k,
                mode,
                approx_ef: cfg.approx_ef.unwrap_or(2 * cfg.k),
                seed: derive_seed(seed, "knn", 0),
            },
            mode: cfg.mode,
            gamma,
            sigma_sq: cfg.sigma_sq.0,
            r_base: cfg.r_base.unwrap_or(r),
            feature_scale: cfg.concat_features.then_some(cfg.feature_scale),
            eig: EigenOptions {
                tol: cfg.eig_tol,
                max_iter: cfg.eig_max_iter,
                seed: derive_seed(seed, "eigensolver", 0),
                block_size: cfg.eig_block,
                basis_size: None,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTimings {
    pub eigensolve: f64,
    pub embedding: f64,
    pub knn: f64,
    pub scoring: f64,
    pub pruning: f64,
    pub total: f64,
}

impl PhaseTimings {
    pub fn phase_sum(&self) -> f64 {
        self.eigensolve + self.embedding + self.knn + self.scoring + self.pruning
    }
}

#[derive(Debug, Clone)]
pub struct PurifyOutcome {
    pub purified: SparseGraph,
    pub base: SparseGraph,
    pub spectrum: SpectralPair,
    pub embedding: EmbeddingMatrix,
    pub scores: Vec<EdgeScore>,
    pub gamma: f64,
    pub timings: PhaseTimings,
}

/// Spectral embedding, kNN base graph and edge pruning on `g`.
pub fn purify_graph(
    g: &SparseGraph,
    features: Option<&DMatrix<f64>>,
    params: &PurifyParams,
) -> Result<PurifyOutcome> {
    let start = Instant::now();
    let mut timings = PhaseTimings::default();

    let t = Instant::now();
    let op = normalized_operator(g, OperatorKind::NormalizedLaplacian);
    let spectrum = top_r_eigenpairs(&op, params.r, &params.eig)?;
    timings.eigensolve = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let v = weighted_embedding(&spectrum);
    let knn_input = match (params.feature_scale, features) {
        (Some(scale), Some(x)) => Some(embedding_with_features(&v, x, scale)?),
        (Some(_), None) => {
            return Err(GarnetError::InvalidConfig(
                "feature concatenation requested without features".into(),
            ))
        }
        (None, _) => None,
    };
    timings.embedding = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let base = build_knn_graph(knn_input.as_ref().unwrap_or(&v), &params.knn)?;
    timings.knn = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut refine = RefineConfig {
        gamma: 0.0,
        mode: params.mode,
        sigma_sq: params.sigma_sq,
        r_base: params.r_base,
        eig: EigenOptions {
            seed: derive_seed(params.eig.seed, "base-graph", 0),
            ..params.eig.clone()
        },
    };
    let scores = match params.mode {
        RefineMode::FullDistortion => score_edges_full(&base, &v, &refine)?,
        RefineMode::Simplified => score_edges_simplified(&base, &v)?,
    };
    refine.gamma = match params.gamma {
        GammaSpec::Absolute(g) => g,
        GammaSpec::Percentile(q) => score_percentile(&scores, q)?,
    };
    timings.scoring = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let purified = prune_edges(&base, &scores, &refine)?;
    timings.pruning = t.elapsed().as_secs_f64();
    timings.total = start.elapsed().as_secs_f64();

    Ok(PurifyOutcome {
        purified,
        base,
        spectrum,
        embedding: v,
        scores,
        gamma: refine.gamma,
        timings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PurifyReport {
    pub n: usize,
    pub edges_in: usize,
    pub edges_base: usize,
    pub edges_out: usize,
    pub r: usize,
    pub lambda_head: Vec<f64>,
    pub lambda_r: f64,
    pub lambda_r_exceeds_one: bool,
    pub max_residual: f64,
    pub gamma_resolved: f64,
    pub purified_graph: PathBuf,
    pub config: PipelineConfig,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| GarnetError::io(path, e))
}

fn ensure_out(cfg: &PipelineConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| GarnetError::io(&cfg.out, e))?;
    Ok(&cfg.out)
}

fn load_graph_with_hint(path: &Path, labels: Option<&[usize]>) -> Result<SparseGraph> {
    load_edge_list(path, labels.map(<[usize]>::len))
}

fn num_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

fn resolved(cfg: &PipelineConfig, params: &PurifyParams) -> PipelineConfig {
    let mut out = cfg.clone();
    out.r = Some(params.r);
    out.r_base = Some(params.r_base);
    out.knn_mode = match params.knn.mode {
        KnnMode::Exact => KnnChoice::Exact,
        KnnMode::Approximate => KnnChoice::Approximate,
    };
    out.approx_ef = Some(params.knn.approx_ef);
    out.eig_max_iter = Some(params.eig.max_iter.unwrap_or(50 * params.r));
    out
}

/// Purifies `cfg.graph`, writing `purified.edgelist`, `purify_report.json`
/// and `purify_timings.json` (plus optional dumps) into `cfg.out`.
pub fn run_purify(cfg: &PipelineConfig) -> Result<PurifyReport> {
    let seed = cfg.seed()?;
    let graph_path = cfg.require(&cfg.graph, "graph")?;
    let labels = cfg.optional(&cfg.labels, "labels")?.map(load_labels).transpose()?;
    let features = cfg
        .optional(&cfg.features, "features")?
        .map(load_features)
        .transpose()?;
    let g = load_graph_with_hint(graph_path, labels.as_deref())?;
    let params = PurifyParams::from_config(cfg, g.n(), labels.as_deref().map(num_classes), seed)?;
    let outcome = purify_graph(&g, features.as_ref(), &params)?;

    let out = ensure_out(cfg)?;
    let purified_path = out.join("purified.edgelist");
    write_edge_list(&outcome.purified, &purified_path)?;
    if cfg.dump_embedding {
        outcome.embedding.write_csv(out.join("embedding.csv"))?;
    }
    if cfg.dump_scores {
        write_scores_csv(&outcome.scores, out.join("edge_scores.csv"))?;
    }
    let lambdas = &outcome.spectrum.eigenvalues;
    let lambda_r = *lambdas.last().expect("r >= 1");
    let report = PurifyReport {
        n: g.n(),
        edges_in: g.num_edges(),
        edges_base: outcome.base.num_edges(),
        edges_out: outcome.purified.num_edges(),
        r: params.r,
        lambda_head: lambdas.iter().take(SPECTRUM_HEAD).copied().collect(),
        lambda_r,
        lambda_r_exceeds_one: lambda_r > 1.0,
        max_residual: outcome.spectrum.residual_norms.iter().copied().fold(0.0, f64::max),
        gamma_resolved: outcome.gamma,
        purified_graph: purified_path,
        config: resolved(cfg, &params),
    };
    write_json(&report, &out.join("purify_report.json"))?;
    write_json(&outcome.timings, &out.join("purify_timings.json"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub n: usize,
    pub edges_in: usize,
    pub edges_out: usize,
    pub budget: usize,
    pub moves: usize,
    pub homophily_clean: Option<f64>,
    pub homophily_attacked: Option<f64>,
    pub attacked_graph: PathBuf,
    pub config: PipelineConfig,
}

/// Attacks `cfg.graph` with `cfg.attack`, writing `attacked.edgelist`,
/// `moves.csv` and `attack_report.json`.
pub fn run_attack(cfg: &PipelineConfig) -> Result<AttackReport> {
    let seed = cfg.seed()?;
    let graph_path = cfg.require(&cfg.graph, "graph")?;
    let labels = load_labels(cfg.require(&cfg.labels, "labels")?)?;
    let g = load_graph_with_hint(graph_path, Some(&labels))?;
    let mut attack_cfg = cfg.attack.clone().unwrap_or_default();
    attack_cfg.seed = derive_seed(seed, "attack", 0);
    let outcome = attack(&g, &labels, &attack_cfg)?;

    let out = ensure_out(cfg)?;
    let attacked_path = out.join("attacked.edgelist");
    write_edge_list(&outcome.graph, &attacked_path)?;
    write_move_log(&outcome.moves, out.join("moves.csv"))?;
    let report = AttackReport {
        n: g.n(),
        edges_in: g.num_edges(),
        edges_out: outcome.graph.num_edges(),
        budget: outcome.budget,
        moves: outcome.moves.len(),
        homophily_clean: homophily_score(&g, &labels).ok(),
        homophily_attacked: homophily_score(&outcome.graph, &labels).ok(),
        attacked_graph: attacked_path,
        config: cfg.clone(),
    };
    write_json(&report, &out.join("attack_report.json"))?;
    Ok(report)
}

/// Accuracy and homophily of one graph variant across repeats.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VariantReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub homophily: Vec<f64>,
    pub edges: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl VariantReport {
    fn push(&mut self, acc: f64, g: &SparseGraph, labels: &[usize]) {
        self.accuracies.push(acc);
        self.homophily.push(homophily_score(g, labels).unwrap_or(0.0));
        self.edges.push(g.num_edges());
    }

    fn finish(&mut self) {
        let (mean, std) = mean_std(&self.accuracies);
        self.mean = mean;
        self.std = std;
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub repeats: usize,
    pub clean_acc: f64,
    pub adv_acc: f64,
    pub purified_acc: f64,
    pub clean: VariantReport,
    pub attacked: VariantReport,
    pub purified: VariantReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tsvd: Option<VariantReport>,
    pub probes: Vec<usize>,
    /// Mean recovery metrics per repeat, attacked vs clean.
    pub recall_attacked: Vec<f64>,
    pub precision_attacked: Vec<f64>,
    /// Mean recovery metrics per repeat, purified vs clean.
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub gamma_resolved: Vec<f64>,
    pub config: PipelineConfig,
}

/// In-memory inputs of an evaluation.
pub struct EvalInputs<'a> {
    pub clean: &'a SparseGraph,
    /// Fixed attacked graph; when `None` the clean graph is attacked per repeat.
    pub attacked: Option<&'a SparseGraph>,
    pub data: &'a LabeledDataset,
}

/// Trains one GCN per graph variant and repeat under a shared seed schedule.
pub fn evaluate_variants(inputs: &EvalInputs<'_>, cfg: &PipelineConfig) -> Result<EvalReport> {
    let seed = cfg.seed()?;
    let data = inputs.data;
    let labels = data.labels();
    let n = data.n();
    if inputs.clean.n() != n {
        return Err(GarnetError::SizeMismatch {
            left: inputs.clean.n(),
            right: n,
        });
    }
    if cfg.repeats == 0 {
        return Err(GarnetError::InvalidConfig("repeats must be at least 1".into()));
    }
    let probes = pick_probes(n, cfg.probes, derive_seed(seed, "probes", 0));
    let attack_cfg = cfg.attack.clone().unwrap_or_default();

    let mut report = EvalReport {
        n,
        repeats: cfg.repeats,
        clean_acc: 0.0,
        adv_acc: 0.0,
        purified_acc: 0.0,
        clean: VariantReport::default(),
        attacked: VariantReport::default(),
        purified: VariantReport::default(),
        tsvd: cfg.baseline.then(VariantReport::default),
        probes: probes.clone(),
        recall_attacked: Vec::new(),
        precision_attacked: Vec::new(),
        recall: Vec::new(),
        precision: Vec::new(),
        gamma_resolved: Vec::new(),
        config: cfg.clone(),
    };
    let mut resolved_cfg = None;

    for rep in 0..cfg.repeats as u64 {
        let attacked_owned;
        let attacked = match inputs.attacked {
            Some(g) => g,
            None => {
                let mut a = attack_cfg.clone();
                a.seed = derive_seed(seed, "attack", rep);
                attacked_owned = attack(inputs.clean, labels, &a)?.graph;
                &attacked_owned
            }
        };
        let params = PurifyParams::from_config(
            cfg,
            n,
            Some(data.num_classes()),
            derive_seed(seed, "purify", rep),
        )?;
        let outcome = purify_graph(attacked, Some(data.features()), &params)?;
        resolved_cfg.get_or_insert_with(|| resolved(cfg, &params));
        report.gamma_resolved.push(outcome.gamma);

        let hyper = GcnHyper {
            seed: derive_seed(seed, "gcn", rep),
            ..cfg.gcn.clone()
        };
        let run = |g: &SparseGraph, variant: &mut VariantReport| -> Result<()> {
            let p = train_gcn(g, data, &hyper)?;
            variant.push(evaluate(&p, g, data, Split::Test)?, g, labels);
            Ok(())
        };
        run(inputs.clean, &mut report.clean)?;
        run(attacked, &mut report.attacked)?;
        run(&outcome.purified, &mut report.purified)?;
        if let Some(tsvd) = report.tsvd.as_mut() {
            if tsvd.error.is_none() {
                match low_rank_reconstruct(&outcome.embedding, cfg.dense_limit) {
                    Ok(dense) => run(&dense_to_graph(&dense), tsvd)?,
                    Err(e) => tsvd.error = Some(e.to_string()),
                }
            }
        }

        let (ra, pa) = recovery_metrics(inputs.clean, attacked, &probes, cfg.hops)?;
        let (rp, pp) = recovery_metrics(inputs.clean, &outcome.purified, &probes, cfg.hops)?;
        report.recall_attacked.push(ra);
        report.precision_attacked.push(pa);
        report.recall.push(rp);
        report.precision.push(pp);
    }
    for v in [&mut report.clean, &mut report.attacked, &mut report.purified] {
        v.finish();
    }
    if let Some(t) = report.tsvd.as_mut() {
        t.finish();
    }
    report.clean_acc = report.clean.mean;
    report.adv_acc = report.attacked.mean;
    report.purified_acc = report.purified.mean;
    if let Some(c) = resolved_cfg {
        report.config = c;
    }
    Ok(report)
}

/// `count` distinct nodes drawn uniformly at random, sorted.
pub fn pick_probes(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, count.min(n)).into_vec();
    picked.sort_unstable();
    picked
}

fn load_dataset(cfg: &PipelineConfig, seed: u64) -> Result<(LabeledDataset, Vec<usize>)> {
    let labels = load_labels(cfg.require(&cfg.labels, "labels")?)?;
    let features = match cfg.optional(&cfg.features, "features")? {
        Some(p) => load_features(p)?,
        None => DMatrix::identity(labels.len(), labels.len()),
    };
    let split = match cfg.optional(&cfg.splits, "splits")? {
        Some(p) => SplitIndices::load(p)?,
        None => SplitIndices::stratified(&labels, 0.1, 0.1, derive_seed(seed, "split", 0)),
    };
    Ok((LabeledDataset::new(features, labels.clone(), &split)?, labels))
}

/// Evaluates clean/attacked/purified (and optionally TSVD) graphs, writing
/// `eval_report.json` and `eval_timings.json`.
pub fn run_eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    let start = Instant::now();
    let seed = cfg.seed()?;
    let (data, labels) = load_dataset(cfg, seed)?;
    let clean_path = match (&cfg.clean_graph, &cfg.graph) {
        (Some(_), _) => cfg.require(&cfg.clean_graph, "clean_graph")?,
        (None, _) if cfg.attack.is_some() => cfg.require(&cfg.graph, "graph")?,
        (None, _) => {
            return Err(GarnetError::InvalidConfig(
                "eval needs `clean_graph`, or `graph` plus an `attack` block".into(),
            ))
        }
    };
    let clean = load_graph_with_hint(clean_path, Some(&labels))?;
    let attacked = match (&cfg.clean_graph, &cfg.attack) {
        (Some(_), None) => Some(load_graph_with_hint(cfg.require(&cfg.graph, "graph")?, Some(&labels))?),
        _ => None,
    };
    let report = evaluate_variants(
        &EvalInputs {
            clean: &clean,
            attacked: attacked.as_ref(),
            data: &data,
        },
        cfg,
    )?;
    let out = ensure_out(cfg)?;
    write_json(&report, &out.join("eval_report.json"))?;
    write_json(
        &serde_json::json!({ "runtime_sec": start.elapsed().as_secs_f64() }),
        &out.join("eval_timings.json"),
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub edges: usize,
    pub timings: PhaseTimings,
}

/// Block probabilities giving the requested expected degree and intra share.
pub fn sbm_probabilities(n: usize, blocks: usize, avg_degree: f64, intra_fraction: f64) -> (f64, f64) {
    let size = (n / blocks) as f64;
    let p_in = intra_fraction * avg_degree / (size - 1.0);
    let p_out = (1.0 - intra_fraction) * avg_degree / (n as f64 - size);
    (p_in.min(1.0), p_out.min(1.0))
}

/// Purifies SBM graphs of growing size and records per-phase wall times.
pub fn bench_rows(cfg: &PipelineConfig) -> Result<Vec<BenchRow>> {
    let seed = cfg.seed()?;
    let b = &cfg.bench;
    if b.sizes.is_empty() {
        return Err(GarnetError::InvalidConfig("bench needs at least one size".into()));
    }
    let mut rows = Vec::with_capacity(b.sizes.len());
    for (idx, &n) in b.sizes.iter().enumerate() {
        let (p_in, p_out) = sbm_probabilities(n, b.blocks, b.avg_degree, b.intra_fraction);
        let (g, _) = generate_sbm(n, b.blocks, p_in, p_out, derive_seed(seed, "bench-sbm", idx as u64))?;
        let params = PurifyParams::from_config(cfg, n, Some(b.blocks), derive_seed(seed, "bench", idx as u64))?;
        let outcome = purify_graph(&g, None, &params)?;
        log::info!(
            "bench n={n} edges={} total={:.3}s",
            g.num_edges(),
            outcome.timings.total
        );
        rows.push(BenchRow {
            n,
            edges: g.num_edges(),
            timings: outcome.timings,
        });
    }
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut text =
        String::from("n,edges,eigensolve_sec,embedding_sec,knn_sec,scoring_sec,pruning_sec,total_sec\n");
    for r in rows {
        let t = &r.timings;
        text.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.n, r.edges, t.eigensolve, t.embedding, t.knn, t.scoring, t.pruning, t.total
        ));
    }
    fs::write(path, text).map_err(|e| GarnetError::io(path, e))
}

/// Runs the size sweep and writes `bench.csv`.
pub fn run_bench(cfg: &PipelineConfig) -> Result<Vec<BenchRow>> {
    let rows = bench_rows(cfg)?;
    let out = ensure_out(cfg)?;
    write_bench_csv(&rows, &out.join("bench.csv"))?;
    Ok(rows)
}

/// A synthetic SBM dataset with class-shifted Gaussian features.
pub struct SyntheticDataset {
    pub graph: SparseGraph,
    pub labels: Vec<usize>,
    pub features: DMatrix<f64>,
    pub split: SplitIndices,
}

pub fn synthetic_dataset(sbm: &SbmConfig, seed: u64) -> Result<SyntheticDataset> {
    let (graph, labels) = generate_sbm(sbm.n, sbm.blocks, sbm.p_in, sbm.p_out, derive_seed(seed, "sbm", 0))?;
    let features = class_mean_features(
        &labels,
        sbm.feature_dim,
        sbm.feature_shift,
        sbm.feature_noise,
        derive_seed(seed, "features", 0),
    )?;
    let split = SplitIndices::stratified(&labels, sbm.train_frac, sbm.val_frac, derive_seed(seed, "split", 0));
    Ok(SyntheticDataset {
        graph,
        labels,
        features,
        split,
    })
}

/// Writes `graph.edgelist`, `labels.txt`, `features.csv` and `splits.json`.
pub fn run_gen_sbm(cfg: &PipelineConfig) -> Result<SyntheticDataset> {
    let ds = synthetic_dataset(&cfg.sbm, cfg.seed()?)?;
    let out = ensure_out(cfg)?;
    write_edge_list(&ds.graph, out.join("graph.edgelist"))?;
    write_labels(&ds.labels, out.join("labels.txt"))?;
    write_features(&ds.features, out.join("features.csv"))?;
    ds.split.save(out.join("splits.json"))?;
    Ok(ds)
}
