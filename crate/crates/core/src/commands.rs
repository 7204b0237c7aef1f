//! The end-to-end commands behind the CLI. Each one reads a [`RunConfig`],
//! writes into its own output directory and echoes the effective config
//! there as `config.effective.toml`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    self, BackendConfig, ChatBackend, HarnessConfig, HttpBackend, MockBackend, MockTruth,
};
use crate::dataio::{
    join_for_training, load_agent_cache, load_dataset, make_splits, AgentCache, AgentPool,
    DatasetRecord, JoinedRecord, SplitSpec,
};
use crate::embed::{import_embeddings, TextEmbedder};
use crate::eval::{
    self, baselines, format_drop_table, format_report, format_sweep, router_report, sweep_csv,
    sweep_deltas, transfer_report, DropMode, EvalReport, KScore, ScoredRecord, REPORT_ROWS,
    SWEEP_BASE_K,
};
use crate::extract;
use crate::gnn::{forward_pass, Checkpoint, Topology};
use crate::graph::{build_record_graph, graph_stats, KnowledgeGraph};
use crate::route::route_distribution;
use crate::train::{fit, TrainConfig, TrainExample};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Label used in reports.
    pub dataset: String,
    pub train_file: Option<PathBuf>,
    pub val_file: Option<PathBuf>,
    pub cache_file: Option<PathBuf>,
    /// Agent pool JSONL; the default 24-agent pool when absent.
    pub agents_file: Option<PathBuf>,
    /// Prebuilt graphs; graphs are built in memory when absent.
    pub graphs_dir: Option<PathBuf>,
    pub entity_map_file: Option<PathBuf>,
    pub embeddings_file: Option<PathBuf>,
    /// Directory holding `seed-<s>/checkpoint.bin` from `train`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Target run configs for `transfer`.
    pub transfer_targets: Vec<PathBuf>,
    pub train_range: [usize; 2],
    pub val_range: [usize; 2],
    pub test_range: [usize; 2],
    pub k: usize,
    pub k_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub d_text: usize,
    pub embed_seed: u64,
    pub trust_cache_f1: bool,
    pub drop_mode: DropMode,
    pub train: TrainConfig,
    pub backend: BackendConfig,
    pub harness: HarnessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "dataset".into(),
            train_file: None,
            val_file: None,
            cache_file: None,
            agents_file: None,
            graphs_dir: None,
            entity_map_file: None,
            embeddings_file: None,
            checkpoint_dir: None,
            transfer_targets: Vec::new(),
            train_range: [0, 500],
            val_range: [0, 100],
            test_range: [100, 200],
            k: 24,
            k_list: vec![3, 6, 9, 12, 15, 18, 21, 24],
            seeds: vec![0, 1, 2],
            d_text: 256,
            embed_seed: 0,
            trust_cache_f1: false,
            drop_mode: DropMode::Relative,
            train: TrainConfig::default(),
            backend: BackendConfig::default(),
            harness: HarnessConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.train_file,
            &mut cfg.val_file,
            &mut cfg.cache_file,
            &mut cfg.agents_file,
            &mut cfg.graphs_dir,
            &mut cfg.entity_map_file,
            &mut cfg.embeddings_file,
            &mut cfg.checkpoint_dir,
            &mut cfg.harness.transcripts_dir,
        ] {
            resolve(base, p);
        }
        for t in &mut cfg.transfer_targets {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn split_spec(&self) -> SplitSpec {
        let r = |a: [usize; 2]| a[0]..a[1];
        SplitSpec {
            train_range: r(self.train_range),
            val_range: r(self.val_range),
            test_range: r(self.test_range),
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(k) = o.k {
            self.k = k;
        }
        if let Some(m) = o.drop_mode {
            self.drop_mode = m;
        }
        if o.trust_cache_f1 {
            self.trust_cache_f1 = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.k == 0 || self.k_list.contains(&0) {
            return Err(Error::Config("k values must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        for (name, r) in [
            ("train", self.train_range),
            ("val", self.val_range),
            ("test", self.test_range),
        ] {
            if r[0] > r[1] {
                return Err(Error::Config(format!("{name}_range {r:?} is reversed")));
            }
        }
        Ok(())
    }

    fn required<'a>(&self, p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        let p = p
            .as_deref()
            .ok_or_else(|| Error::Config(format!("config key {key} is required")))?;
        if !p.exists() {
            return Err(Error::Config(format!(
                "{key} {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    }
}

/// Command-line overrides shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub drop_mode: Option<DropMode>,
    pub trust_cache_f1: bool,
    pub mock_backend: bool,
}

/// Creates the output directory: `out` if given, else a fresh
/// `runs/<command>-<unix time>` directory.
pub fn prepare_out_dir(out: Option<&Path>, command: &str) -> Result<PathBuf> {
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            let mut dir = PathBuf::from("runs").join(format!("{command}-{secs}"));
            let mut n = 1;
            while dir.exists() {
                dir = PathBuf::from("runs").join(format!("{command}-{secs}-{n}"));
                n += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write(&out.join("config.effective.toml"), &cfg.to_toml())
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("row serialises") + "\n")
        .collect()
}

/// Loaded inputs shared by the commands.
pub struct Workspace {
    pub cfg: RunConfig,
    pub pool: AgentPool,
    pub train: Vec<DatasetRecord>,
    pub val: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
    pub entity_maps: agents::EntityMaps,
    imported: HashMap<String, Vec<f64>>,
}

impl Workspace {
    pub fn load(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let train_file = cfg.required(&cfg.train_file, "train_file")?;
        let val_file = cfg.required(&cfg.val_file, "val_file")?;
        let pool = match &cfg.agents_file {
            Some(_) => AgentPool::load(cfg.required(&cfg.agents_file, "agents_file")?)?,
            None => AgentPool::default_pool(),
        };
        let train_recs = load_dataset(train_file, &cfg.dataset)?;
        let val_recs = if val_file == train_file {
            train_recs.clone()
        } else {
            load_dataset(val_file, &cfg.dataset)?
        };
        let splits = make_splits(&train_recs, &val_recs, &cfg.split_spec())?;
        let entity_maps = match &cfg.entity_map_file {
            Some(_) => {
                agents::load_entity_maps(cfg.required(&cfg.entity_map_file, "entity_map_file")?)?
            }
            None => Default::default(),
        };
        let imported = match &cfg.embeddings_file {
            Some(_) => import_embeddings(
                cfg.required(&cfg.embeddings_file, "embeddings_file")?,
                cfg.d_text,
            )?,
            None => HashMap::new(),
        };
        Ok(Workspace {
            cfg,
            pool,
            train: splits.train,
            val: splits.val,
            test: splits.test,
            entity_maps,
            imported,
        })
    }

    /// Records of all splits, each id once, in split order.
    pub fn all_records(&self) -> Vec<DatasetRecord> {
        let mut seen = BTreeSet::new();
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .filter(|r| seen.insert(r.id.clone()))
            .cloned()
            .collect()
    }

    pub fn cache(&self) -> Result<AgentCache> {
        let path = self.cfg.required(&self.cfg.cache_file, "cache_file")?;
        let cache = load_agent_cache(path, Some(&self.pool))?;
        for w in &cache.warnings {
            tracing::warn!("{w}");
        }
        Ok(cache)
    }

    pub fn embedder(&self, d_text: usize, seed: u64) -> Result<TextEmbedder> {
        TextEmbedder::new(d_text, seed)?.with_imported(self.imported.clone())
    }

    pub fn graph(&self, record: &DatasetRecord) -> Result<KnowledgeGraph> {
        match &self.cfg.graphs_dir {
            Some(dir) => {
                let g = KnowledgeGraph::load(dir, &record.id)?;
                g.validate(self.pool.len())?;
                Ok(g)
            }
            None => {
                let empty = BTreeMap::new();
                let map = self.entity_maps.get(&record.id).unwrap_or(&empty);
                Ok(build_record_graph(record, &self.pool, map)?.0)
            }
        }
    }

    /// Joined, featurised examples; also returns excluded record ids.
    pub fn examples(
        &self,
        records: &[DatasetRecord],
        cache: &AgentCache,
        embedder: &TextEmbedder,
    ) -> Result<(Vec<TrainExample>, Vec<String>)> {
        let joined = join_for_training(records, cache, &self.pool);
        for id in &joined.excluded {
            tracing::warn!(record = %id, "no cached answers, excluded");
        }
        let trust = self.cfg.trust_cache_f1;
        let examples = joined
            .rows
            .par_iter()
            .map(|j| {
                let graph = self.graph(&j.record)?;
                let features = embedder.featurize(&graph);
                Ok(TrainExample {
                    record_id: j.record.id.clone(),
                    topo: Topology::new(&graph),
                    features,
                    f1: f1_vector(j, trust),
                    answers: j.answers.clone(),
                    golds: j.record.gold_answers.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((examples, joined.excluded))
    }

    pub fn scored(&self, records: &[DatasetRecord], cache: &AgentCache) -> Vec<ScoredRecord> {
        join_for_training(records, cache, &self.pool)
            .rows
            .into_iter()
            .map(|j| scored_record(&j, self.pool.len()))
            .collect()
    }
}

fn scored_record(j: &JoinedRecord, n: usize) -> ScoredRecord {
    let mut missing = vec![false; n];
    for &i in &j.missing {
        missing[i] = true;
    }
    ScoredRecord {
        answers: j.answers.clone(),
        missing,
        golds: j.record.gold_answers.clone(),
    }
}

/// Per-agent F1 targets: recomputed from gold unless `trust` and cached.
pub fn f1_vector(j: &JoinedRecord, trust: bool) -> Vec<f64> {
    j.answers
        .iter()
        .zip(&j.cached_f1)
        .map(|(a, c)| match c {
            Some(v) if trust => *v,
            _ => eval::token_f1(a, &j.record.gold_answers),
        })
        .collect()
}

pub struct CommandOutput {
    pub out_dir: PathBuf,
    pub summary: String,
}

pub fn cmd_build_graphs(cfg: RunConfig, out: &Path) -> Result<CommandOutput> {
    let ws = Workspace::load(cfg)?;
    echo_config(&ws.cfg, out)?;
    let dir = out.join("graphs");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let records = ws.all_records();
    let empty = BTreeMap::new();
    let results: Vec<(String, Result<KnowledgeGraph>)> = records
        .par_iter()
        .map(|r| {
            let map = ws.entity_maps.get(&r.id).unwrap_or(&empty);
            let res = build_record_graph(r, &ws.pool, map).and_then(|(g, _)| {
                g.validate(ws.pool.len())?;
                g.save(&dir)?;
                Ok(g)
            });
            (r.id.clone(), res)
        })
        .collect();
    let mut graphs = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(g) => graphs.push(g),
            Err(e) => failures.push(format!("{id}: {e}")),
        }
    }
    let mut summary = String::new();
    if !graphs.is_empty() {
        let stats = graph_stats(&graphs)?;
        summary = stats.to_table();
        write(&out.join("graph_stats.txt"), &summary)?;
        write(
            &out.join("graph_stats.json"),
            &serde_json::to_string_pretty(&stats).expect("stats serialise"),
        )?;
    }
    if !failures.is_empty() {
        write(&out.join("failures.txt"), &(failures.join("\n") + "\n"))?;
        return Err(Error::data(format!(
            "{} of {} graphs failed:\n{}",
            failures.len(),
            records.len(),
            failures.join("\n")
        )));
    }
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        summary,
    })
}

pub fn seed_dir(base: &Path, seed: u64) -> PathBuf {
    base.join(format!("seed-{seed}"))
}

pub fn cmd_train(cfg: RunConfig, out: &Path) -> Result<CommandOutput> {
    let ws = Workspace::load(cfg)?;
    echo_config(&ws.cfg, out)?;
    let cache = ws.cache()?;
    let embedder = ws.embedder(ws.cfg.d_text, ws.cfg.embed_seed)?;
    let (train, _) = ws.examples(&ws.train, &cache, &embedder)?;
    let (val, _) = ws.examples(&ws.val, &cache, &embedder)?;
    let mut summary = String::new();
    for &seed in &ws.cfg.seeds {
        let dir = seed_dir(out, seed);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let tc = TrainConfig {
            seed,
            ..ws.cfg.train.clone()
        };
        let ckpt_path = dir.join("checkpoint.bin");
        let outcome = fit(&train, &val, &tc, |_, params| {
            Checkpoint {
                params: params.clone(),
                d_text: ws.cfg.d_text,
                embed_seed: ws.cfg.embed_seed,
                agent_order: ws.pool.ids(),
            }
            .save(&ckpt_path)
        })?;
        write(&dir.join("train_log.jsonl"), &outcome.log.to_jsonl())?;
        let best = outcome
            .log
            .epochs
            .iter()
            .rfind(|e| e.checkpoint_written)
            .expect("first epoch always checkpoints");
        let _ = writeln!(
            summary,
            "seed {seed}: initial KL {:.4}, best val F1 {:.2} (EM {:.2}) at epoch {}",
            outcome.log.initial_train_kl, best.val_f1, best.val_em, best.epoch
        );
    }
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        summary,
    })
}

fn checkpoint_dir(cfg: &RunConfig, explicit: Option<&Path>) -> Result<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.checkpoint_dir.clone())
        .ok_or_else(|| {
            Error::Config(
                "no checkpoint directory (set checkpoint_dir or pass --checkpoint)".into(),
            )
        })
}

/// Loads `seed-<s>/checkpoint.bin` for every configured seed and checks
/// its agent order against the pool and the cache.
fn load_checkpoints(
    ws: &Workspace,
    dir: &Path,
    cache: &AgentCache,
) -> Result<Vec<(u64, Checkpoint)>> {
    let pool_ids = ws.pool.ids();
    let cache_ids = cache.agent_ids();
    ws.cfg
        .seeds
        .iter()
        .map(|&s| {
            let path = seed_dir(dir, s).join("checkpoint.bin");
            if !path.exists() {
                return Err(Error::data(format!(
                    "missing checkpoint {} (run `train` for seed {s})",
                    path.display()
                )));
            }
            let ck = Checkpoint::load(&path)?;
            if ck.agent_order != pool_ids {
                return Err(Error::data(format!(
                    "{}: checkpoint agent order differs from the agent pool",
                    path.display()
                )));
            }
            if cache_ids != ck.agent_order {
                return Err(Error::data(format!(
                    "{}: cache agents {:?} do not match checkpoint agent order",
                    path.display(),
                    cache_ids
                )));
            }
            Ok((s, ck))
        })
        .collect()
}

/// Routing distributions of the test split for one checkpoint.
fn test_distributions(
    ws: &Workspace,
    cache: &AgentCache,
    ck: &Checkpoint,
) -> Result<Vec<(TrainExample, Vec<f64>)>> {
    let embedder = ws.embedder(ck.d_text, ck.embed_seed)?;
    let (test, _) = ws.examples(&ws.test, cache, &embedder)?;
    test.into_par_iter()
        .map(|ex| {
            let probs = forward_pass(&ex.topo, &ex.features, &ck.params)?
                .routing
                .probs;
            Ok((ex, probs))
        })
        .collect()
}

fn route_all(
    dists: &[(TrainExample, Vec<f64>)],
    agent_ids: &[String],
    k: usize,
) -> Result<Vec<crate::route::RoutingResult>> {
    dists
        .iter()
        .map(|(ex, p)| route_distribution(&ex.record_id, p, &ex.answers, agent_ids, k))
        .collect()
}

pub fn cmd_eval(cfg: RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<CommandOutput> {
    let ws = Workspace::load(cfg)?;
    echo_config(&ws.cfg, out)?;
    let cache = ws.cache()?;
    let dir = checkpoint_dir(&ws.cfg, checkpoint)?;
    let ckpts = load_checkpoints(&ws, &dir, &cache)?;
    let ids = ws.pool.ids();
    let k = ws.cfg.k;
    let test_scored = ws.scored(&ws.test, &cache);
    let mut predictions = Vec::new();
    for (seed, ck) in &ckpts {
        let dists = test_distributions(&ws, &cache, ck)?;
        let routed = route_all(&dists, &ids, k)?;
        write(
            &out.join(format!("routing-seed-{seed}.jsonl")),
            &jsonl(&routed),
        )?;
        predictions.push(
            routed
                .into_iter()
                .map(|r| r.fused_answer)
                .collect::<Vec<_>>(),
        );
    }
    let train_scored = ws.scored(&ws.train, &cache);
    let mut rows = baselines(
        &ws.pool,
        &train_scored,
        &test_scored,
        &ws.cfg.dataset,
        ckpts.len(),
    )?;
    rows.push(router_report(
        &predictions,
        &test_scored,
        &ws.cfg.dataset,
        k,
    )?);
    let rows: Vec<EvalReport> = REPORT_ROWS
        .iter()
        .map(|m| {
            rows.iter()
                .find(|r| r.method == *m)
                .cloned()
                .expect("all rows computed")
        })
        .collect();
    let text = format!(
        "dataset {}  k={k}  seeds={}  test records={}\n{}",
        ws.cfg.dataset,
        ckpts.len(),
        test_scored.len(),
        format_report(&rows)
    );
    write(&out.join("report.txt"), &text)?;
    write(&out.join("report.jsonl"), &jsonl(&rows))?;
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        summary: text,
    })
}

/// Mean router EM/F1 (×100) over seeds for each k.
fn router_k_scores(
    ws: &Workspace,
    cache: &AgentCache,
    ckpts: &[(u64, Checkpoint)],
    ks: &[usize],
) -> Result<Vec<KScore>> {
    let ids = ws.pool.ids();
    let test_scored = ws.scored(&ws.test, cache);
    let dists: Vec<_> = ckpts
        .iter()
        .map(|(_, ck)| test_distributions(ws, cache, ck))
        .collect::<Result<_>>()?;
    ks.iter()
        .map(|&k| {
            let preds = dists
                .iter()
                .map(|d| {
                    Ok(route_all(d, &ids, k)?
                        .into_iter()
                        .map(|r| r.fused_answer)
                        .collect())
                })
                .collect::<Result<Vec<Vec<String>>>>()?;
            let rep = router_report(&preds, &test_scored, &ws.cfg.dataset, k)?;
            Ok(KScore {
                k,
                em: rep.em_mean,
                f1: rep.f1_mean,
            })
        })
        .collect()
}

fn k_values(list: &[usize], with_base: bool) -> Vec<usize> {
    let mut ks: Vec<usize> = list.to_vec();
    if with_base {
        ks.push(SWEEP_BASE_K);
    }
    ks.sort_unstable();
    ks.dedup();
    ks
}

pub fn cmd_sweep_topk(
    cfg: RunConfig,
    checkpoint: Option<&Path>,
    k_override: Option<usize>,
    out: &Path,
) -> Result<CommandOutput> {
    let ws = Workspace::load(cfg)?;
    echo_config(&ws.cfg, out)?;
    let cache = ws.cache()?;
    let ckpts = load_checkpoints(&ws, &checkpoint_dir(&ws.cfg, checkpoint)?, &cache)?;
    let list = k_override.map_or_else(|| ws.cfg.k_list.clone(), |k| vec![k]);
    let scores = router_k_scores(&ws, &cache, &ckpts, &k_values(&list, true))?;
    let rows = sweep_deltas(&scores)?;
    let text = format_sweep(&rows);
    write(&out.join("sweep.txt"), &text)?;
    write(&out.join("sweep.csv"), &sweep_csv(&rows))?;
    write(&out.join("sweep.jsonl"), &jsonl(&rows))?;
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        summary: text,
    })
}

pub fn cmd_transfer(
    cfg: RunConfig,
    checkpoint: Option<&Path>,
    targets: &[PathBuf],
    k_override: Option<usize>,
    overrides: &Overrides,
    out: &Path,
) -> Result<CommandOutput> {
    let source = Workspace::load(cfg)?;
    echo_config(&source.cfg, out)?;
    let src_dir = checkpoint_dir(&source.cfg, checkpoint)?;
    let targets: Vec<PathBuf> = if targets.is_empty() {
        source.cfg.transfer_targets.clone()
    } else {
        targets.to_vec()
    };
    if targets.is_empty() {
        return Err(Error::Config(
            "transfer needs at least one target config".into(),
        ));
    }
    let ks = k_override.map_or_else(|| k_values(&source.cfg.k_list, false), |k| vec![k]);
    let mode = source.cfg.drop_mode;
    let mut summary = String::new();
    for target_path in &targets {
        let mut tcfg = RunConfig::load(target_path)?;
        tcfg.apply(overrides);
        tcfg.seeds = source.cfg.seeds.clone();
        let ref_dir = tcfg.checkpoint_dir.clone().ok_or_else(|| {
            Error::data(format!(
                "{}: no in-domain reference; train on this target and set its checkpoint_dir",
                target_path.display()
            ))
        })?;
        let target = Workspace::load(tcfg)?;
        let cache = target.cache()?;
        let in_ckpts = load_checkpoints(&target, &ref_dir, &cache).map_err(|e| {
            Error::data(format!(
                "in-domain reference for {}: {e}",
                target.cfg.dataset
            ))
        })?;
        let src_ckpts = load_checkpoints(&target, &src_dir, &cache)?;
        let m_in = router_k_scores(&target, &cache, &in_ckpts, &ks)?;
        let m_xfer = router_k_scores(&target, &cache, &src_ckpts, &ks)?;
        let rows = transfer_report(&m_in, &m_xfer, mode)?;
        let title = format!(
            "{} -> {} ({mode:?} drop)",
            source.cfg.dataset, target.cfg.dataset
        );
        let table = format_drop_table(&title, &rows);
        let stem = format!("transfer-{}", target.cfg.dataset);
        write(&out.join(format!("{stem}.txt")), &table)?;
        write(&out.join(format!("{stem}.jsonl")), &jsonl(&rows))?;
        summary.push_str(&table);
        summary.push('\n');
    }
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        summary,
    })
}

fn make_backend(
    ws: &Workspace,
    mock: bool,
    records: &[DatasetRecord],
    with_entities: bool,
) -> Result<Box<dyn ChatBackend>> {
    if !mock {
        return Ok(Box::new(HttpBackend::new(ws.cfg.backend.clone())?));
    }
    let truth = records
        .iter()
        .map(|r| {
            let entities = if with_entities {
                let mentions = extract::extract_entities(&r.context);
                let q = r.question.to_lowercase();
                let g = r.gold_answers[0].to_lowercase();
                mentions
                    .into_iter()
                    .map(|m| m.surface)
                    .filter(|s| {
                        let l = s.to_lowercase();
                        q.contains(&l) || g.contains(&l) || l.contains(&g)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            (
                r.question.clone(),
                MockTruth {
                    answer: r.gold_answers[0].clone(),
                    entities,
                },
            )
        })
        .collect();
    Ok(Box::new(MockBackend::new(truth)))
}

pub fn cmd_agents_run(cfg: RunConfig, mock: bool, out: &Path) -> Result<CommandOutput> {
    let ws = Workspace::load(cfg)?;
    echo_config(&ws.cfg, out)?;
    let records = ws.all_records();
    let backend = make_backend(&ws, mock, &records, false)?;
    let mut harness = ws.cfg.harness.clone();
    if harness.transcripts_dir.is_none() {
        harness.transcripts_dir = Some(out.join("transcripts"));
    }
    let cache_path = out.join("agent_cache.jsonl");
    let s = agents::run_agents(
        &records,
        &ws.pool,
        backend.as_ref(),
        &ws.cfg.backend,
        &harness,
        &cache_path,
    )?;
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        summary: format!(
            "{}: {} rows written, {} already present, {} failed\n",
            cache_path.display(),
            s.written,
            s.skipped,
            s.failed
        ),
    })
}

pub fn cmd_agents_judge(cfg: RunConfig, mock: bool, out: &Path) -> Result<CommandOutput> {
    let ws = Workspace::load(cfg)?;
    echo_config(&ws.cfg, out)?;
    let records = ws.all_records();
    let backend = make_backend(&ws, mock, &records, true)?;
    let mut rows = Vec::new();
    let mut flags = Vec::new();
    for r in &records {
        let (mentions, triples) = match &r.pre_extracted {
            Some(p) => (p.entities.clone(), p.triples.clone()),
            None => {
                let m = extract::extract_entities(&r.context);
                let t = extract::extract_triples(&r.context, &m);
                (m, t)
            }
        };
        let surfaces: Vec<String> = mentions.into_iter().map(|m| m.surface).collect();
        let (map, f) = agents::judge_agent_entities(
            r,
            &surfaces,
            &triples,
            &ws.pool,
            backend.as_ref(),
            &ws.cfg.backend,
            ws.cfg.harness.judge_top_n,
        );
        rows.extend(agents::entity_map_rows(&r.id, &map));
        flags.extend(f.into_iter().map(|x| format!("{}: {x}", r.id)));
    }
    write(&out.join("agent_entities.jsonl"), &jsonl(&rows))?;
    write(
        &out.join("judge_flags.txt"),
        &flags.iter().map(|f| f.clone() + "\n").collect::<String>(),
    )?;
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        summary: format!("{} manage-edge rows, {} flags\n", rows.len(), flags.len()),
    })
}

pub fn cmd_report_variance(cfg: RunConfig, out: &Path) -> Result<CommandOutput> {
    let ws = Workspace::load(cfg)?;
    echo_config(&ws.cfg, out)?;
    let cache = ws.cache()?;
    let scored = ws.scored(&ws.all_records(), &cache);
    if scored.is_empty() {
        return Err(Error::data("no records with cached answers"));
    }
    let rows = eval::variance_report(&ws.pool, &scored);
    let text = eval::format_variance(&rows);
    write(&out.join("variance.txt"), &text)?;
    write(&out.join("variance.jsonl"), &jsonl(&rows))?;
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        summary: text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c = RunConfig::from_toml("dataset = \"x\"\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.k, 24);
        assert_eq!(c.train.tau, 0.25);
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[train]\nbogus = 1\n").is_err());
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_apply() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            seed: Some(7),
            k: Some(3),
            drop_mode: Some(DropMode::Absolute),
            trust_cache_f1: true,
            mock_backend: false,
        });
        assert_eq!(
            (c.seeds.clone(), c.k, c.drop_mode, c.trust_cache_f1),
            (vec![7], 3, DropMode::Absolute, true)
        );
    }

    #[test]
    fn epochs_zero_is_usage_error() {
        let mut c = RunConfig::default();
        c.train.epochs = 0;
        assert_eq!(c.validate().unwrap_err().kind(), crate::ErrorKind::Usage);
    }
}
