//! Command implementations. Each returns data for callers and tests; the
//! argument layer in `cli` decides what to print.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use factorix::diagnostics::{
    attention_entropy, attention_rank_bias, compare, line_plot, rsa_by_layer, rsa_csv, stats_csv, ComparisonStats,
    EntropyProfile, RankProfile, Series,
};
use factorix::eval::{
    difficulty_correlation, eval_dataset_ppl, parse_items, read_reference, records_csv, two_afc, AfcOutcome,
    CorrelationMatrix, PerplexityRecord, Scorer, TwoAfcItem,
};
use factorix::model::{read_attention, write_attention, write_hidden, AttentionTensor, HiddenTensor};
use factorix::probcore::{enumerate_permutations, read_distribution, InvarianceReport, SequenceAssignment};
use factorix::tokenize::{pack_corpus, read_corpus, PackedDataset, Split, Tokenizer, BOS_ID};
use factorix::{Checkpoint32, PermKind, Permutation, Tabular};

use crate::config::{CorpusKind, ExperimentConfig};
use crate::run::{markov_source, write, Codec, Experiment, RunManifest};

// ---------------------------------------------------------------- verify

/// Which permutations `verify` checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermSet {
    All,
    Sample(usize),
}

impl std::str::FromStr for PermSet {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(PermSet::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(PermSet::Sample(k)),
            _ => bail!("--perms takes 'all' or a positive count, got '{s}'"),
        }
    }
}

/// Fixed seed and shape of the three-variable preset.
pub const APPENDIX_C: (usize, usize, u64) = (2, 3, 3);

#[derive(Debug, Clone)]
pub struct VerifySettings {
    pub perms: PermSet,
    pub tol: f64,
    /// Sequences to check; all positive-mass sequences (up to `max_seqs`)
    /// when empty.
    pub sequences: Vec<Vec<u32>>,
    pub max_seqs: usize,
    pub perm_seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            perms: PermSet::All,
            tol: 1e-9,
            sequences: Vec::new(),
            max_seqs: 256,
            perm_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub reports: Vec<(SequenceAssignment, InvarianceReport<f64>)>,
    pub max_rel_dev: f64,
    pub passed: bool,
}

impl VerifyOutcome {
    /// First failing `(sequence, sigma)`.
    pub fn first_failure(&self) -> Option<(String, String)> {
        self.reports.iter().find_map(|(s, r)| {
            r.first_failure()
                .map(|f| (join(s.values().iter(), " "), f.sigma_id()))
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence,sigma_id,pp_factorized,pp_joint,rel_dev,pass\n");
        for (seq, report) in &self.reports {
            let tag = join(seq.values().iter(), " ");
            for line in report.to_csv().lines().skip(1) {
                out.push_str(&format!("{tag},{line}\n"));
            }
        }
        out
    }
}

fn join<T: ToString>(items: impl Iterator<Item = T>, sep: &str) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

fn chosen_sequences(dist: &Tabular, settings: &VerifySettings) -> Result<Vec<SequenceAssignment>> {
    if !settings.sequences.is_empty() {
        return Ok(settings
            .sequences
            .iter()
            .map(|s| SequenceAssignment::new(s.clone()))
            .collect());
    }
    let seqs: Vec<SequenceAssignment> = (0..dist.probs().len())
        .filter(|&i| dist.probs()[i] > 0.0)
        .take(settings.max_seqs)
        .map(|i| dist.assignment_of(i))
        .collect();
    ensure!(!seqs.is_empty(), "distribution has no positive-mass sequence");
    Ok(seqs)
}

pub fn permutations_for(n: usize, perms: PermSet, seed: u64) -> Result<Vec<Permutation>> {
    match perms {
        PermSet::All => {
            ensure!(n <= 10, "--perms all over {n} positions is too many; pass a count");
            Ok(enumerate_permutations(n, usize::MAX, seed)?)
        }
        PermSet::Sample(k) => Ok(enumerate_permutations(n, k, seed)?),
    }
}

pub fn verify_distribution(dist: &Tabular, settings: &VerifySettings) -> Result<VerifyOutcome> {
    let sigmas = permutations_for(dist.seq_len(), settings.perms, settings.perm_seed)?;
    let mut reports = Vec::new();
    for seq in chosen_sequences(dist, settings)? {
        let report = dist.verify_invariance(&seq, &sigmas, settings.tol)?;
        reports.push((seq, report));
    }
    let max_rel_dev = reports.iter().map(|(_, r)| r.max_rel_dev).fold(0.0, f64::max);
    Ok(VerifyOutcome {
        passed: max_rel_dev <= settings.tol,
        reports,
        max_rel_dev,
    })
}

#[derive(Debug, Clone)]
pub struct NegativeControlRow {
    pub sequence: Vec<u32>,
    pub forward: f64,
    pub backward: f64,
}

impl NegativeControlRow {
    pub fn rel_gap(&self) -> f64 {
        (self.forward - self.backward).abs() / self.forward.max(self.backward)
    }
}

/// Partial products with the BOS term dropped.
pub fn negative_control(dist: &Tabular, settings: &VerifySettings) -> Result<Vec<NegativeControlRow>> {
    chosen_sequences(dist, settings)?
        .into_iter()
        .map(|seq| {
            let (forward, backward) = dist.negative_control_drop_bos(&seq)?;
            Ok(NegativeControlRow {
                sequence: seq.values().to_vec(),
                forward,
                backward,
            })
        })
        .collect()
}

pub fn negative_control_csv(rows: &[NegativeControlRow]) -> String {
    let mut out = String::from("sequence,forward_partial,backward_partial,rel_gap\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.6e}\n",
            join(r.sequence.iter(), " "),
            r.forward,
            r.backward,
            r.rel_gap()
        ));
    }
    out
}

pub fn load_distribution(path: &Path) -> Result<Tabular> {
    read_distribution(path).with_context(|| format!("reading distribution {}", path.display()))
}

// ------------------------------------------------------ tokenizer / pack

pub fn tokenizer_train(corpus: &[PathBuf], vocab_size: usize, out: &Path) -> Result<Tokenizer> {
    let text = read_corpus(corpus)?;
    let tok = Tokenizer::train(&text, vocab_size)?;
    tok.save(out)?;
    Ok(tok)
}

pub fn pack(tokenizer: &Path, corpus: &[PathBuf], window: usize, split: Split, out: &Path) -> Result<PackedDataset> {
    let tok = Tokenizer::load(tokenizer)?;
    let stream = tok.encode(&read_corpus(corpus)?);
    let packed = pack_corpus(&stream, window, BOS_ID, tok.vocab_size(), &tok.content_hash(), split)?;
    log::info!(
        "{} sequences, {} trailing tokens discarded",
        packed.dataset.len(),
        packed.discarded
    );
    packed.dataset.save(out)?;
    Ok(packed.dataset)
}

// ----------------------------------------------------------------- train

/// Trains the grid `orderings × seeds` (config values when empty) and
/// returns the run directories.
pub fn train_grid(cfg: &ExperimentConfig, orderings: &[PermKind], seeds: &[u64], force: bool) -> Result<Vec<PathBuf>> {
    let exp = Experiment::prepare(cfg)?;
    let orderings = if orderings.is_empty() { cfg.orderings()? } else { orderings.to_vec() };
    let seeds = if seeds.is_empty() { cfg.experiment.seeds.clone() } else { seeds.to_vec() };
    let mut dirs = Vec::new();
    for &seed in &seeds {
        for &kind in &orderings {
            dirs.push(exp.train_run(kind, seed, force)?);
        }
    }
    Ok(dirs)
}

// ------------------------------------------------------------------ runs

/// A finished run, opened with its provenance verified.
#[derive(Debug, Clone)]
pub struct RunHandle {
    pub dir: PathBuf,
    pub label: String,
    pub manifest: RunManifest,
    pub experiment: Experiment,
    pub checkpoint: Checkpoint32,
    pub ordering: Permutation,
}

impl RunHandle {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(dir)?;
        manifest.verify(dir)?;
        let experiment = Experiment::open_for_run(dir)?;
        ensure!(
            manifest.get("tokenizer_hash") == Some(experiment.data.tokenizer_hash.as_str()),
            "provenance mismatch: {} was trained with another tokenizer than its experiment data",
            dir.display()
        );
        let checkpoint = Checkpoint32::load(&dir.join("checkpoint"))?;
        let ordering = Permutation::load(&dir.join("ordering.perm"))?;
        let label = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        Ok(Self {
            dir: dir.to_path_buf(),
            label,
            manifest,
            experiment,
            checkpoint,
            ordering,
        })
    }

    /// Leading validation sequences reordered as this run saw them.
    pub fn reordered_validation(&self, count: usize) -> Result<Vec<Vec<u32>>> {
        self.experiment
            .data
            .validation
            .sequences
            .iter()
            .take(count)
            .map(|s| Ok(self.ordering.apply_to_window(s.tokens())?))
            .collect()
    }
}

pub fn open_runs(dirs: &[PathBuf]) -> Result<Vec<RunHandle>> {
    let mut runs: Vec<RunHandle> = dirs.iter().map(|d| RunHandle::open(d)).collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    for r in &mut runs {
        if !seen.insert(r.label.clone()) {
            let exp = r.experiment.dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            r.label = format!("{exp}/{}", r.label);
        }
    }
    Ok(runs)
}

fn ensure_compatible(runs: &[RunHandle], same_architecture: bool) -> Result<()> {
    let Some(first) = runs.first() else {
        bail!("no runs given");
    };
    for r in &runs[1..] {
        ensure!(
            r.checkpoint.config.window == first.checkpoint.config.window,
            "incompatible runs: {} and {} use different windows",
            first.label,
            r.label
        );
        ensure!(
            r.experiment.data.tokenizer_hash == first.experiment.data.tokenizer_hash,
            "incompatible runs: {} and {} use different tokenizers",
            first.label,
            r.label
        );
        if same_architecture {
            let (a, b) = (&first.checkpoint.config, &r.checkpoint.config);
            ensure!(
                (a.layers, a.heads, a.dim, a.vocab_size) == (b.layers, b.heads, b.dim, b.vocab_size),
                "incompatible runs: {} and {} differ in model size",
                first.label,
                r.label
            );
        }
    }
    Ok(())
}

// ------------------------------------------------------------- eval ppl

pub fn eval_ppl(run: &RunHandle, dataset: Option<&Path>, ordering: Option<PermKind>) -> Result<Vec<PerplexityRecord>> {
    let loaded;
    let data = match dataset {
        Some(p) => {
            loaded = PackedDataset::load(p)?;
            &loaded
        }
        None => &run.experiment.data.validation,
    };
    let sigma = match ordering {
        Some(kind) => Permutation::make(kind, run.checkpoint.config.window - 1)?,
        None => run.ordering.clone(),
    };
    Ok(eval_dataset_ppl(&run.checkpoint, data, &sigma)?)
}

// ----------------------------------------------------------------- diag

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Entropy,
    Rank,
    Rsa,
    Stats,
    /// Writes ATTN and HIDN tensor files.
    Export,
}

impl std::str::FromStr for Metric {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "entropy" => Metric::Entropy,
            "rank" => Metric::Rank,
            "rsa" => Metric::Rsa,
            "stats" => Metric::Stats,
            "export" => Metric::Export,
            other => bail!("unknown metric '{other}' (entropy, rank, rsa, stats, export)"),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DiagOptions {
    pub sequences: usize,
    /// Measure freshly initialized models with each run's configuration.
    pub at_init: bool,
    pub timestamp: bool,
}

impl Default for DiagOptions {
    fn default() -> Self {
        Self {
            sequences: 64,
            at_init: false,
            timestamp: true,
        }
    }
}

fn model_for(run: &RunHandle, at_init: bool) -> Result<Checkpoint32> {
    if at_init {
        Ok(Checkpoint32::init(&run.checkpoint.config)?)
    } else {
        Ok(run.checkpoint.clone())
    }
}

/// Attention and hidden states of a run on its leading validation
/// sequences.
pub fn traces(run: &RunHandle, opts: &DiagOptions) -> Result<(Vec<AttentionTensor<f32>>, Vec<HiddenTensor<f32>>)> {
    let model = model_for(run, opts.at_init)?;
    let mut attn = Vec::new();
    let mut hidden = Vec::new();
    for window in run.reordered_validation(opts.sequences)? {
        let t = model.forward(&window)?;
        attn.push(t.attention);
        hidden.push(t.hidden);
    }
    Ok((attn, hidden))
}

pub fn entropy_profiles(runs: &[RunHandle], opts: &DiagOptions) -> Result<Vec<(String, EntropyProfile)>> {
    ensure_compatible(runs, false)?;
    runs.iter()
        .map(|r| Ok((r.label.clone(), attention_entropy(&traces(r, opts)?.0, None)?)))
        .collect()
}

pub fn rank_profiles(runs: &[RunHandle], opts: &DiagOptions) -> Result<Vec<(String, RankProfile)>> {
    ensure_compatible(runs, false)?;
    runs.iter()
        .map(|r| Ok((r.label.clone(), attention_rank_bias(&traces(r, opts)?.0, None)?)))
        .collect()
}

/// Mean RSA per layer for every pair of runs, or a run with itself when
/// only one is given.
pub fn rsa_rows(runs: &[RunHandle], opts: &DiagOptions) -> Result<Vec<(usize, String, f64)>> {
    ensure_compatible(runs, true)?;
    let hidden: Vec<Vec<HiddenTensor<f32>>> = runs.iter().map(|r| Ok(traces(r, opts)?.1)).collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = if runs.len() == 1 {
        vec![(0, 0)]
    } else {
        (0..runs.len())
            .flat_map(|i| (i + 1..runs.len()).map(move |j| (i, j)))
            .collect()
    };
    let mut rows = Vec::new();
    for (i, j) in pairs {
        let rho = rsa_by_layer(&hidden[i], &runs[i].ordering, &hidden[j], &runs[j].ordering)?;
        let pair = format!("{}~{}", runs[i].label, runs[j].label);
        rows.extend(rho.into_iter().enumerate().map(|(l, r)| (l, pair.clone(), r)));
    }
    Ok(rows)
}

/// Reads the `perplexity` column of a `ppl.csv`, keyed by sequence id.
pub fn read_ppl(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    ensure!(
        lines.next().is_some_and(|h| h.starts_with("sequence_id,perplexity")),
        "{} is not a perplexity CSV",
        path.display()
    );
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut cols = l.split(',');
            let id = cols.next().and_then(|v| v.parse().ok());
            let pp = cols.next().and_then(|v| v.parse().ok());
            id.zip(pp).ok_or_else(|| anyhow!("bad row '{l}' in {}", path.display()))
        })
        .collect()
}

/// Paired comparison of validation perplexities for every pair of runs, or
/// a run with itself when only one is given.
pub fn stats_rows(runs: &[RunHandle]) -> Result<Vec<(String, ComparisonStats)>> {
    ensure_compatible(runs, false)?;
    for r in &runs[1..] {
        ensure!(
            r.manifest.get("validation_dataset_hash") == runs[0].manifest.get("validation_dataset_hash"),
            "incompatible runs: {} and {} were evaluated on different validation sets",
            runs[0].label,
            r.label
        );
    }
    let ppl: Vec<Vec<(usize, f64)>> = runs.iter().map(|r| read_ppl(&r.dir.join("ppl.csv"))).collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = if runs.len() == 1 {
        vec![(0, 0)]
    } else {
        (0..runs.len())
            .flat_map(|i| (i + 1..runs.len()).map(move |j| (i, j)))
            .collect()
    };
    let mut rows = Vec::new();
    for (i, j) in pairs {
        let (a, b) = (&ppl[i], &ppl[j]);
        ensure!(
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.0 == y.0),
            "{} and {} score different sequences",
            runs[i].label,
            runs[j].label
        );
        let x: Vec<f64> = a.iter().map(|p| p.1).collect();
        let y: Vec<f64> = b.iter().map(|p| p.1).collect();
        let s = compare(&x, &y).with_context(|| format!("comparing {} with {}", runs[i].label, runs[j].label))?;
        rows.push((format!("{} vs {}", runs[i].label, runs[j].label), s));
    }
    Ok(rows)
}

fn stamp(svg: String, timestamp: bool) -> String {
    if !timestamp {
        return svg;
    }
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    match svg.split_once('\n') {
        Some((head, rest)) => format!("{head}\n<!-- generated unix {now} -->\n{rest}"),
        None => svg,
    }
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn profile_series(label: &str, layers: &[usize], values: &[Vec<f64>], x0: usize) -> Vec<Series> {
    layers
        .iter()
        .zip(values)
        .map(|(l, v)| Series {
            name: format!("{label} layer {l}"),
            points: v.iter().enumerate().map(|(k, &y)| ((k + x0) as f64, y)).collect(),
        })
        .collect()
}

fn write_entropy(out: &Path, profiles: &[(String, EntropyProfile)], timestamp: bool) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut series = Vec::new();
    for (label, p) in profiles {
        let f = out.join(format!("entropy_{}.csv", file_label(label)));
        write(&f, p.to_csv())?;
        files.push(f);
        series.extend(profile_series(label, &p.layers, &p.values, 1));
    }
    let svg = out.join("entropy.svg");
    write(
        &svg,
        stamp(line_plot("Attention entropy", "context size", "normalized entropy", &series), timestamp),
    )?;
    files.push(svg);
    Ok(files)
}

fn write_rank(out: &Path, profiles: &[(String, RankProfile)], timestamp: bool) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut series = Vec::new();
    for (label, p) in profiles {
        let f = out.join(format!("rank_{}.csv", file_label(label)));
        write(&f, p.to_csv())?;
        files.push(f);
        series.extend(profile_series(label, &p.layers, &p.values, 0));
    }
    let svg = out.join("rank.svg");
    write(
        &svg,
        stamp(line_plot("Attention rank by distance", "distance", "normalized rank", &series), timestamp),
    )?;
    files.push(svg);
    Ok(files)
}

/// Runs one metric and writes its CSV and SVG files into `out`.
pub fn diag(runs: &[RunHandle], attn_files: &[PathBuf], metric: Metric, opts: &DiagOptions, out: &Path) -> Result<Vec<PathBuf>> {
    ensure!(!runs.is_empty() || !attn_files.is_empty(), "no runs or attention files given");
    ensure!(
        attn_files.is_empty() || matches!(metric, Metric::Entropy | Metric::Rank),
        "attention files can only feed the entropy and rank metrics"
    );
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let imported: Vec<(String, Vec<AttentionTensor<f32>>)> = attn_files
        .iter()
        .map(|p| {
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((label, read_attention(p)?))
        })
        .collect::<Result<_>>()?;
    match metric {
        Metric::Entropy => {
            let mut profiles = if runs.is_empty() { Vec::new() } else { entropy_profiles(runs, opts)? };
            for (label, t) in &imported {
                profiles.push((label.clone(), attention_entropy(t, None)?));
            }
            write_entropy(out, &profiles, opts.timestamp)
        }
        Metric::Rank => {
            let mut profiles = if runs.is_empty() { Vec::new() } else { rank_profiles(runs, opts)? };
            for (label, t) in &imported {
                profiles.push((label.clone(), attention_rank_bias(t, None)?));
            }
            write_rank(out, &profiles, opts.timestamp)
        }
        Metric::Rsa => {
            let rows = rsa_rows(runs, opts)?;
            let csv = out.join("rsa.csv");
            write(&csv, rsa_csv(&rows))?;
            let mut series: Vec<Series> = Vec::new();
            for (l, pair, rho) in &rows {
                match series.iter_mut().find(|s| &s.name == pair) {
                    Some(s) => s.points.push((*l as f64, *rho)),
                    None => series.push(Series {
                        name: pair.clone(),
                        points: vec![(*l as f64, *rho)],
                    }),
                }
            }
            let svg = out.join("rsa.svg");
            write(&svg, stamp(line_plot("Representational similarity", "layer", "Spearman rho", &series), opts.timestamp))?;
            Ok(vec![csv, svg])
        }
        Metric::Stats => {
            let csv = out.join("stats.csv");
            write(&csv, stats_csv(&stats_rows(runs)?))?;
            Ok(vec![csv])
        }
        Metric::Export => {
            let mut files = Vec::new();
            for r in runs {
                let (attn, hidden) = traces(r, opts)?;
                let a = out.join(format!("{}.attn", file_label(&r.label)));
                let h = out.join(format!("{}.hidn", file_label(&r.label)));
                write_attention(&a, &attn)?;
                write_hidden(&h, &hidden)?;
                files.extend([a, h]);
            }
            Ok(files)
        }
    }
}

// ----------------------------------------------------------------- bench

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub results: Vec<(String, AfcOutcome)>,
    pub correlation: Option<CorrelationMatrix>,
}

/// Scores 2AFC items with each run (in its own ordering) and optionally the
/// ground-truth Markov source of the experiment.
pub fn bench(
    runs: &[RunHandle],
    oracle_config: Option<&ExperimentConfig>,
    items_path: &Path,
    reference: Option<&Path>,
) -> Result<BenchOutcome> {
    ensure_compatible_or_empty(runs)?;
    let config = match (runs.first(), oracle_config) {
        (_, Some(c)) => c.clone(),
        (Some(r), None) => r.experiment.config.clone(),
        (None, None) => bail!("bench needs run directories or an oracle config"),
    };
    if let (Some(r), Some(c)) = (runs.first(), oracle_config) {
        ensure!(
            c.config_hash() == r.experiment.config.config_hash(),
            "provenance mismatch: oracle config differs from the runs' experiment"
        );
    }
    let codec = match runs.first() {
        Some(r) => r.experiment.data.codec.clone(),
        None => match config.corpus.kind {
            CorpusKind::Markov => Codec::Symbols {
                count: config.corpus.markov.symbols,
            },
            CorpusKind::Text => bail!("the oracle scorer needs a Markov corpus"),
        },
    };
    let text = fs::read_to_string(items_path).with_context(|| format!("reading {}", items_path.display()))?;
    let mut bad = None;
    let items: Result<Vec<TwoAfcItem>> = parse_items(&text, |s| match codec.encode(s) {
        Ok(ids) => ids,
        Err(e) => {
            bad.get_or_insert(e);
            Vec::new()
        }
    })
    .map_err(anyhow::Error::from);
    if let Some(e) = bad {
        return Err(e.context("items are not tokenizable under the run tokenizer"));
    }
    let items = items?;

    let mut results = Vec::new();
    for r in runs {
        let out = two_afc(&r.checkpoint, &items, &r.ordering).with_context(|| format!("scoring with {}", r.label))?;
        results.push((r.label.clone(), out));
    }
    if oracle_config.is_some() {
        ensure!(config.corpus.kind == CorpusKind::Markov, "the oracle scorer needs a Markov corpus");
        let src = markov_source(&config)?;
        let fwd = Permutation::identity(src_len(&items))?;
        results.push(("oracle".to_string(), two_afc(&src as &dyn Scorer, &items, &fwd)?));
    }
    let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    let reference = reference.map(|p| read_reference(p, &ids)).transpose()?;
    let correlation = if results.len() >= 2 || reference.is_some() {
        let vectors: Vec<(String, Vec<f64>)> = results.iter().map(|(n, o)| (n.clone(), o.difficulty())).collect();
        Some(difficulty_correlation(&vectors, reference.as_deref().map(|r| ("reference", r)))?)
    } else {
        None
    };
    Ok(BenchOutcome { results, correlation })
}

fn src_len(items: &[TwoAfcItem]) -> usize {
    items.iter().map(|i| i.original.len().max(i.altered.len())).max().unwrap_or(1)
}

fn ensure_compatible_or_empty(runs: &[RunHandle]) -> Result<()> {
    if runs.is_empty() {
        Ok(())
    } else {
        ensure_compatible(runs, false)
    }
}

pub fn write_bench(out: &Path, outcome: &BenchOutcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = Vec::new();
    for (label, o) in &outcome.results {
        let l = file_label(label);
        let (a, s) = (out.join(format!("afc_{l}.csv")), out.join(format!("afc_{l}_summary.csv")));
        write(&a, o.to_csv())?;
        write(&s, o.summary_csv())?;
        files.extend([a, s]);
    }
    if let Some(c) = &outcome.correlation {
        let p = out.join("difficulty_correlation.csv");
        write(&p, c.to_csv())?;
        files.push(p);
    }
    Ok(files)
}

pub fn write_records(out: Option<&Path>, records: &[PerplexityRecord]) -> Result<()> {
    match out {
        Some(p) => write(p, records_csv(records)),
        None => {
            print!("{}", records_csv(records));
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perm_set_parsing() {
        assert_eq!("all".parse::<PermSet>().unwrap(), PermSet::All);
        assert_eq!("12".parse::<PermSet>().unwrap(), PermSet::Sample(12));
        assert!("0".parse::<PermSet>().is_err());
        assert!(permutations_for(12, PermSet::All, 0).is_err());
    }

    #[test]
    fn verify_and_control_on_small_table() {
        let d = Tabular::normalize(&[0.4, 0.1, 0.2, 0.3], 2, 2).unwrap();
        let out = verify_distribution(&d, &VerifySettings::default()).unwrap();
        assert!(out.passed);
        assert_eq!(out.reports.len(), 4);
        assert_eq!(out.to_csv().lines().count(), 1 + 4 * 2);
        let settings = VerifySettings {
            sequences: vec![vec![0, 1]],
            ..VerifySettings::default()
        };
        let rows = negative_control(&d, &settings).unwrap();
        assert!((rows[0].forward - 0.2).abs() < 1e-12);
        assert!((rows[0].backward - 0.25).abs() < 1e-12);
        assert!((rows[0].rel_gap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ppl_csv_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ppl.csv");
        fs::write(&p, "sequence_id,perplexity,mean_nll,ordering,flagged\n0,2.5,0.9,forward,false\n").unwrap();
        assert_eq!(read_ppl(&p).unwrap(), vec![(0, 2.5)]);
        fs::write(&p, "x\n").unwrap();
        assert!(read_ppl(&p).is_err());
    }
}
