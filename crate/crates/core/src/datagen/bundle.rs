//! Dataset assembly: train/test splits, artifact registries, duplication,
//! corpus ingestion, and the on-disk bundle format.

use super::artifact::{inject_backdoor, inject_noise, ArtifactKind, ArtifactRecord};
use super::sequence::{gen_sequence_for_task, tokenize, MathTaskSpec, NumericSequence};
use super::vocab::{TokenId, Vocabulary};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Which artifact family a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArtifactChoice {
    Noise { p: f64 },
    Backdoor,
}

impl ArtifactChoice {
    pub fn label(&self) -> &'static str {
        match self {
            ArtifactChoice::Noise { .. } => "noise",
            ArtifactChoice::Backdoor => "backdoor",
        }
    }
}

/// Full recipe for a synthetic math dataset.
#[derive(Debug, Clone)]
pub struct MathDatasetSpec {
    /// The five tasks; the coefficient-7 task is the primary one.
    pub tasks: Vec<MathTaskSpec>,
    /// Clean samples per auxiliary task, counting its test slice (3000,
    /// 10000, or 20000 at full scale).
    pub aux_size: usize,
    pub artifact: ArtifactChoice,
    pub seed: u64,
    /// Uniform multiplier on all dataset counts for desk-scale runs.
    pub size_scale: f64,
    /// Duplication factors applied to the corrupted training copies.
    pub dup_factors: Vec<usize>,
    /// Token budget per sequence.
    pub context: usize,
}

impl MathDatasetSpec {
    pub fn new(tasks: Vec<MathTaskSpec>, aux_size: usize, artifact: ArtifactChoice, seed: u64) -> Self {
        MathDatasetSpec {
            tasks,
            aux_size,
            artifact,
            seed,
            size_scale: 1.0,
            dup_factors: vec![1],
            context: 150,
        }
    }

    pub fn with_size_scale(mut self, s: f64) -> Self {
        self.size_scale = s;
        self
    }

    pub fn with_dup_factors(mut self, f: Vec<usize>) -> Self {
        self.dup_factors = f;
        self
    }

    fn scaled(&self, n: usize) -> usize {
        (n as f64 * self.size_scale).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.tasks.len() != 5 {
            return Err(Error::Config(format!(
                "expected the five standard tasks, got {}",
                self.tasks.len()
            )));
        }
        let mut coeffs: Vec<i64> = self.tasks.iter().map(|t| t.coefficient()).collect();
        coeffs.sort_unstable();
        if coeffs != [2, 3, 4, 5, 7] {
            return Err(Error::Config(format!(
                "task coefficients must be {{2,3,4,5,7}}, got {coeffs:?}"
            )));
        }
        for t in &self.tasks {
            t.validate()?;
        }
        if self.aux_size <= 1000 {
            return Err(Error::Config(format!(
                "aux task size must exceed the 1000-sample test slice, got {}",
                self.aux_size
            )));
        }
        if self.size_scale <= 0.0 {
            return Err(Error::Config("size_scale must be positive".into()));
        }
        if self.dup_factors.is_empty() {
            return Err(Error::Config("dup_factors must be non-empty".into()));
        }
        Ok(())
    }
}

/// The standard five additive tasks (bias 2, 3, 4, 5, 7).
pub fn additive_tasks() -> Vec<MathTaskSpec> {
    [2, 3, 4, 5, 7]
        .iter()
        .map(|&b| MathTaskSpec::Additive { b })
        .collect()
}

/// The standard five multiplicative tasks (weight 2, 3, 4, 5, 7; bias 0;
/// modulus 20134).
pub fn multiplicative_tasks() -> Vec<MathTaskSpec> {
    [2, 3, 4, 5, 7]
        .iter()
        .map(|&m| MathTaskSpec::Multiplicative {
            m,
            b: 0,
            d: 20134,
        })
        .collect()
}

/// A complete dataset: training sequences, clean test sequences grouped by
/// task, the artifact registry, and held-out backdoor probes.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub train: Vec<Vec<TokenId>>,
    pub test_clean: Vec<Vec<TokenId>>,
    /// Artifacts whose corrupted form is present in `train`.
    pub artifacts: Vec<ArtifactRecord>,
    /// Backdoored sequences withheld from training; the memorization test set.
    pub held_out_backdoors: Vec<ArtifactRecord>,
    pub vocab: Vocabulary,
    pub seed: u64,
}

impl DatasetBundle {
    /// The backdoor trigger value associated with `seed`.
    pub fn backdoor_trigger_value(seed: u64) -> u64 {
        100 + seed
    }

    /// The constant backdoor output token associated with `seed`.
    pub fn backdoor_output_token(seed: u64) -> TokenId {
        (seed % 10) as TokenId
    }
}

/// Draw `n` distinct start values in `[0, range)`.
fn distinct_starts(range: u64, n: usize, rng: &mut impl Rng) -> Result<Vec<u64>> {
    if (n as u64) > range {
        return Err(Error::Data(format!(
            "need {n} distinct start values but the range is [0, {range})"
        )));
    }
    // Partial Fisher-Yates over the index range.
    let mut pool: Vec<u64> = (0..range).collect();
    for i in 0..n {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(n);
    Ok(pool)
}

/// Build a synthetic math dataset with injected artifacts.
///
/// Per task: train and test sequences with disjoint start values; 1000
/// (scaled) test samples each. The primary (coefficient-7) task contributes
/// 19000 (scaled) training samples, each auxiliary task `aux_size - 1000`
/// (scaled). Noise corrupts 1000 (scaled) random primary-task training
/// samples in place; backdoors corrupt every training sequence containing
/// the trigger, with 10% of the corrupted set withheld as probes.
pub fn build_math_dataset(spec: &MathDatasetSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let primary_train_n = spec.scaled(19_000);
    let aux_train_n = spec.scaled(spec.aux_size - 1000);
    let test_n = spec.scaled(1000);

    let mut train: Vec<Vec<TokenId>> = Vec::new();
    let mut train_seqs: Vec<NumericSequence> = Vec::new();
    let mut train_primary_idx: Vec<usize> = Vec::new();
    let mut test_clean: Vec<Vec<TokenId>> = Vec::new();

    for (ti, task) in spec.tasks.iter().enumerate() {
        let is_primary = task.coefficient() == 7;
        let train_n = if is_primary { primary_train_n } else { aux_train_n };
        let mut rng = stream_rng(spec.seed, Stream::DataGen, ti as u64);
        let starts = distinct_starts(task.start_range(), train_n + test_n, &mut rng)?;
        for (i, &s1) in starts.iter().enumerate() {
            let seq = gen_sequence_for_task(*task, s1, spec.context)?;
            let toks = tokenize(&seq);
            if i < train_n {
                if is_primary {
                    train_primary_idx.push(train.len());
                }
                train.push(toks);
                train_seqs.push(seq);
            } else {
                test_clean.push(toks);
            }
        }
    }

    let mut artifacts: Vec<ArtifactRecord> = Vec::new();
    let mut held_out: Vec<ArtifactRecord> = Vec::new();
    // Train indices whose sequence was corrupted in place.
    let mut replaced_idx: Vec<usize> = Vec::new();

    match spec.artifact {
        ArtifactChoice::Noise { p } => {
            let noise_n = spec.scaled(1000).min(train_primary_idx.len());
            let mut rng = stream_rng(spec.seed, Stream::NoiseInject, u64::MAX);
            let mut picks = train_primary_idx.clone();
            picks.shuffle(&mut rng);
            picks.truncate(noise_n);
            picks.sort_unstable();
            for (j, &idx) in picks.iter().enumerate() {
                let rec = inject_noise(&train_seqs[idx], p, spec.seed.wrapping_add(j as u64))?;
                // The corrupted copy replaces its clean original.
                train[idx] = rec.corrupted_tokens.clone();
                replaced_idx.push(idx);
                artifacts.push(rec);
            }
        }
        ArtifactChoice::Backdoor => {
            let trigger = DatasetBundle::backdoor_trigger_value(spec.seed);
            let t_token = DatasetBundle::backdoor_output_token(spec.seed);
            // Sequences that share all digits through the trigger collapse to
            // the same corrupted form, so the registry keys on distinct
            // corrupted forms; holding out a form removes every train copy.
            let mut groups: Vec<(ArtifactRecord, Vec<usize>)> = Vec::new();
            let mut by_form: std::collections::HashMap<Vec<TokenId>, usize> =
                std::collections::HashMap::new();
            for (idx, seq) in train_seqs.iter().enumerate() {
                if let Some(rec) = inject_backdoor(seq, trigger, t_token) {
                    match by_form.entry(rec.corrupted_tokens.clone()) {
                        std::collections::hash_map::Entry::Occupied(e) => {
                            groups[*e.get()].1.push(idx);
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(groups.len());
                            groups.push((rec, vec![idx]));
                        }
                    }
                }
            }
            let total = groups.len();
            let held_n = (0.1 * total as f64).round() as usize;
            let mut order: Vec<usize> = (0..total).collect();
            let mut rng = stream_rng(spec.seed, Stream::BackdoorInject, 0);
            order.shuffle(&mut rng);
            let held_set: std::collections::BTreeSet<usize> =
                order.into_iter().take(held_n).collect();
            let mut remove: Vec<usize> = Vec::new();
            for (j, (rec, idxs)) in groups.into_iter().enumerate() {
                if held_set.contains(&j) {
                    remove.extend(idxs);
                    held_out.push(rec);
                } else {
                    for &idx in &idxs {
                        train[idx] = rec.corrupted_tokens.clone();
                        replaced_idx.push(idx);
                    }
                    artifacts.push(rec);
                }
            }
            // Held-out backdoors leave the training set entirely.
            remove.sort_unstable_by(|a, b| b.cmp(a));
            for idx in remove {
                train.remove(idx);
                for r in replaced_idx.iter_mut() {
                    if *r > idx {
                        *r -= 1;
                    }
                }
            }
        }
    }

    // Duplicate the corrupted training copies per the configured factors:
    // drop the in-place copies and re-add `factor[i]` copies per partition.
    if spec.dup_factors != [1] && !artifacts.is_empty() {
        let corrupted: Vec<Vec<TokenId>> = artifacts
            .iter()
            .map(|r| r.corrupted_tokens.clone())
            .collect();
        let replicated = duplicate(&corrupted, &spec.dup_factors, spec.seed)?;
        replaced_idx.sort_unstable_by(|a, b| b.cmp(a));
        for idx in replaced_idx {
            train.remove(idx);
        }
        train.extend(replicated);
    }

    let mut rng = stream_rng(spec.seed, Stream::Shuffle, 0);
    train.shuffle(&mut rng);

    Ok(DatasetBundle {
        train,
        test_clean,
        artifacts,
        held_out_backdoors: held_out,
        vocab: Vocabulary::math(),
        seed: spec.seed,
    })
}

/// Partition `samples` evenly and replicate partition `i` `factors[i]`
/// times; the result is shuffled by `seed`.
pub fn duplicate(
    samples: &[Vec<TokenId>],
    factors: &[usize],
    seed: u64,
) -> Result<Vec<Vec<TokenId>>> {
    if factors.is_empty() {
        return Err(Error::Config("duplication factors must be non-empty".into()));
    }
    if samples.len() % factors.len() != 0 {
        return Err(Error::Config(format!(
            "{} samples cannot be split into {} even partitions",
            samples.len(),
            factors.len()
        )));
    }
    let part = samples.len() / factors.len();
    let mut out = Vec::new();
    for (i, &f) in factors.iter().enumerate() {
        let slice = &samples[i * part..(i + 1) * part];
        for _ in 0..f {
            out.extend(slice.iter().cloned());
        }
    }
    let mut rng = stream_rng(seed, Stream::Shuffle, 1);
    out.shuffle(&mut rng);
    Ok(out)
}

/// Ingest a pre-tokenized corpus: newline-delimited integer token ids,
/// chunked into context-length sequences (tail remainder dropped).
pub fn ingest_corpus(path: &Path, vocab_size: usize, context: usize) -> Result<DatasetBundle> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open corpus {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut ids: Vec<TokenId> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id: u64 = line.parse().map_err(|_| {
            Error::Data(format!("line {}: not an integer token id: {line:?}", lineno + 1))
        })?;
        if id >= vocab_size as u64 {
            return Err(Error::Data(format!(
                "line {}: token id {id} >= vocab size {vocab_size}",
                lineno + 1
            )));
        }
        ids.push(id as TokenId);
    }
    let train: Vec<Vec<TokenId>> = ids.chunks_exact(context).map(|c| c.to_vec()).collect();
    Ok(DatasetBundle {
        train,
        test_clean: Vec::new(),
        artifacts: Vec::new(),
        held_out_backdoors: Vec::new(),
        vocab: Vocabulary::raw(vocab_size),
        seed: 0,
    })
}

const DATA_HEADER: &str = "tinymem-data v1";
const ARTIFACT_HEADER: &str = "tinymem-artifacts v1";
const META_HEADER: &str = "tinymem-meta v1";

fn write_sequences(path: &Path, seqs: &[Vec<TokenId>]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{DATA_HEADER}")?;
    for seq in seqs {
        let line: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

fn read_sequences(path: &Path) -> Result<Vec<Vec<TokenId>>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h == DATA_HEADER => {}
        other => {
            return Err(Error::Data(format!(
                "{}: expected header {DATA_HEADER:?}, found {other:?}",
                path.display()
            )))
        }
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: std::result::Result<Vec<TokenId>, _> =
            line.split_whitespace().map(|t| t.parse()).collect();
        out.push(seq.map_err(|e| Error::Data(format!("bad token id: {e}")))?);
    }
    Ok(out)
}

fn ids_to_field(seq: &[TokenId]) -> String {
    seq.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

fn field_to_ids(s: &str) -> Result<Vec<TokenId>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|e| Error::Data(format!("bad token id: {e}"))))
        .collect()
}

fn write_artifact_line(w: &mut impl Write, rec: &ArtifactRecord, held_out: bool) -> Result<()> {
    let (kind, trigger_index, p) = match rec.kind {
        ArtifactKind::Noise { p } => ("noise", -1i64, p),
        ArtifactKind::Backdoor { trigger_token_index } => {
            ("backdoor", trigger_token_index as i64, 0.0)
        }
    };
    writeln!(
        w,
        "kind={kind}|clean={}|corrupted={}|trigger_index={trigger_index}|p={p}|held_out={}",
        ids_to_field(&rec.clean_tokens),
        ids_to_field(&rec.corrupted_tokens),
        u8::from(held_out)
    )?;
    Ok(())
}

fn parse_artifact_line(line: &str) -> Result<(ArtifactRecord, bool)> {
    let mut kind = None;
    let mut clean = None;
    let mut corrupted = None;
    let mut trigger_index: i64 = -1;
    let mut p = 0.0f64;
    let mut held_out = false;
    for field in line.split('|') {
        let (key, val) = field
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("malformed artifact field {field:?}")))?;
        match key {
            "kind" => kind = Some(val.to_string()),
            "clean" => clean = Some(field_to_ids(val)?),
            "corrupted" => corrupted = Some(field_to_ids(val)?),
            "trigger_index" => {
                trigger_index = val
                    .parse()
                    .map_err(|e| Error::Data(format!("bad trigger index: {e}")))?
            }
            "p" => p = val.parse().map_err(|e| Error::Data(format!("bad p: {e}")))?,
            "held_out" => held_out = val == "1",
            other => return Err(Error::Data(format!("unknown artifact field {other:?}"))),
        }
    }
    let kind = match kind.as_deref() {
        Some("noise") => ArtifactKind::Noise { p },
        Some("backdoor") => ArtifactKind::Backdoor {
            trigger_token_index: trigger_index as usize,
        },
        other => return Err(Error::Data(format!("unknown artifact kind {other:?}"))),
    };
    Ok((
        ArtifactRecord {
            clean_tokens: clean.ok_or_else(|| Error::Data("artifact missing clean".into()))?,
            corrupted_tokens: corrupted
                .ok_or_else(|| Error::Data("artifact missing corrupted".into()))?,
            kind,
        },
        held_out,
    ))
}

/// Persist a bundle as `<stem>.train.txt`, `<stem>.test.txt`,
/// `<stem>.artifacts.txt`, and `<stem>.meta.txt`.
pub fn save_bundle(bundle: &DatasetBundle, stem: &Path) -> Result<()> {
    let stem_str = stem.to_string_lossy();
    write_sequences(&with_suffix(&stem_str, "train.txt"), &bundle.train)?;
    write_sequences(&with_suffix(&stem_str, "test.txt"), &bundle.test_clean)?;

    let mut w = BufWriter::new(std::fs::File::create(with_suffix(&stem_str, "artifacts.txt"))?);
    writeln!(w, "{ARTIFACT_HEADER}")?;
    for rec in &bundle.artifacts {
        write_artifact_line(&mut w, rec, false)?;
    }
    for rec in &bundle.held_out_backdoors {
        write_artifact_line(&mut w, rec, true)?;
    }
    drop(w);

    let mut w = BufWriter::new(std::fs::File::create(with_suffix(&stem_str, "meta.txt"))?);
    writeln!(w, "{META_HEADER}")?;
    writeln!(w, "vocab={}", bundle.vocab.tag())?;
    writeln!(w, "seed={}", bundle.seed)?;
    Ok(())
}

/// Load a bundle previously written by [`save_bundle`].
pub fn load_bundle(stem: &Path) -> Result<DatasetBundle> {
    let stem_str = stem.to_string_lossy();
    let train = read_sequences(&with_suffix(&stem_str, "train.txt"))?;
    let test_clean = read_sequences(&with_suffix(&stem_str, "test.txt"))?;

    let art_path = with_suffix(&stem_str, "artifacts.txt");
    let reader = BufReader::new(std::fs::File::open(&art_path).map_err(|e| {
        Error::Data(format!("missing artifact registry {}: {e}", art_path.display()))
    })?);
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h == ARTIFACT_HEADER => {}
        other => {
            return Err(Error::Data(format!(
                "expected header {ARTIFACT_HEADER:?}, found {other:?}"
            )))
        }
    }
    let mut artifacts = Vec::new();
    let mut held_out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (rec, is_held) = parse_artifact_line(&line)?;
        if is_held {
            held_out.push(rec);
        } else {
            artifacts.push(rec);
        }
    }

    let meta = std::fs::read_to_string(with_suffix(&stem_str, "meta.txt"))?;
    let mut vocab = None;
    let mut seed = 0u64;
    for (i, line) in meta.lines().enumerate() {
        if i == 0 {
            if line != META_HEADER {
                return Err(Error::Data(format!("bad meta header {line:?}")));
            }
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            match k {
                "vocab" => vocab = Some(Vocabulary::from_tag(v)?),
                "seed" => seed = v.parse().map_err(|e| Error::Data(format!("bad seed: {e}")))?,
                _ => {}
            }
        }
    }
    Ok(DatasetBundle {
        train,
        test_clean,
        artifacts,
        held_out_backdoors: held_out,
        vocab: vocab.ok_or_else(|| Error::Data("meta missing vocab".into()))?,
        seed,
    })
}

fn with_suffix(stem: &str, suffix: &str) -> std::path::PathBuf {
    std::path::PathBuf::from(format!("{stem}.{suffix}"))
}
