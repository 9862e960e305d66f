//! Command-line front end. Each subcommand wraps library calls.
//!
//! Exit codes: 0 on success, 1 when the library reports an error, 2 on a
//! usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    anova_with_null, codeword_features, compute_rmsf, control_groupings, exemplar_bundle,
    mutation_score, random_tokens, rmsf_probe, token_exemplars, ProbeConfig, ResidueContext,
};
use crate::corpus::{
    fps_select, make_splits, parse_pdb_models, read_corpus_dir, read_ensemble, stride_sample,
    synth_corpus, write_ensemble, Ensemble, SplitManifest,
};
use crate::descriptors::{fit_standardizer, DescriptorConfig, Family, NeighborMode};
use crate::error::{Error, Result};
use crate::tokenize::{parse_token_tsv, token_rows, tokenize_ensemble, write_token_tsv, TokenRow};
use crate::training::{
    descriptor_sets, load_checkpoint, save_checkpoint, train, LogRecord, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "ensembits",
    version,
    about = "Tokenize protein conformational ensembles"
)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key=value document with training settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus of helical ensembles.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        proteins: usize,
        #[arg(long, default_value_t = 48)]
        length: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
    },
    /// Convert a multi-model PDB file to the native ensemble format.
    ImportPdb {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the file stem.
        #[arg(long)]
        id: Option<String>,
        /// Defaults to the id.
        #[arg(long)]
        group: Option<String>,
    },
    /// Stride the frames, then keep `k` by farthest-point sampling.
    Fps {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        seed_frame: usize,
    },
    /// Group-disjoint train/val/test split.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        fractions: String,
    },
    /// Fit descriptor standardization statistics on the training split.
    FitStats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        descriptor: DescriptorArgs,
    },
    /// Train a tokenizer and write its checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log destination.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        descriptor: DescriptorArgs,
    },
    /// Write the token table of ensembles.
    Tokenize {
        #[arg(long)]
        ckpt: PathBuf,
        /// Ensemble files.
        #[arg(long = "in")]
        input: Vec<PathBuf>,
        /// Every ensemble of a corpus directory.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Use only the first N frames (1 gives single-structure tokens).
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-residue Cα RMSF.
    Rmsf {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// η² of a per-residue feature grouped by first-level token or a control.
    Anova {
        #[arg(long)]
        corpus: PathBuf,
        /// Token table; required unless --control is given.
        #[arg(long)]
        tokens: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Feature::Flexibility)]
        feature: Feature,
        #[arg(long, value_enum)]
        control: Option<Control>,
        #[arg(long, default_value_t = 80)]
        min_count: usize,
        #[arg(long, default_value_t = 1000)]
        permutations: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RMSF probe on first-level codewords: train split vs held-out proteins.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Replace tokens by uniformly random codes.
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Negated summed codeword distance between wild-type and mutant tokens.
    ScoreMutations {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        wt: PathBuf,
        #[arg(long = "mut", required = true)]
        mutants: Vec<PathBuf>,
    },
    /// Residues closest to a token's centroid, exported as aligned bundles.
    Exemplars {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        token: usize,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
struct DescriptorArgs {
    #[arg(long, default_value = "relative-frame")]
    family: Family,
    #[arg(long, default_value = "dynamical")]
    mode: NeighborMode,
    #[arg(long, default_value_t = 16)]
    k: usize,
    /// Drop the ψ block of 3Di descriptors.
    #[arg(long)]
    no_psi: bool,
    #[arg(long)]
    min_seq_sep: Option<usize>,
    #[arg(long)]
    frames_max: Option<usize>,
}

impl DescriptorArgs {
    fn config(&self) -> Result<DescriptorConfig> {
        let mut c = match self.family {
            Family::ThreeDi => DescriptorConfig::three_di(self.k, self.mode),
            Family::RelativeFrame => DescriptorConfig::relative_frame(self.k, self.mode),
        };
        if self.no_psi {
            c.psi_enabled = false;
        }
        if let Some(s) = self.min_seq_sep {
            c.min_seq_sep = s;
        }
        if let Some(f) = self.frames_max {
            c.frames_max = f;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Feature {
    /// The ensemble's stored flexibility profile.
    Flexibility,
    Rmsf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Control {
    Group,
    Position,
    Length,
}

/// Parses a `key=value` document; `#` starts a comment. Values that read
/// as JSON (numbers, booleans, arrays) keep that type, anything else is a
/// string.
pub fn parse_config_document(text: &str) -> Result<serde_json::Map<String, serde_json::Value>> {
    let mut map = serde_json::Map::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, format!("expected key=value, found {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::parse(i + 1, "empty key"));
        }
        let value =
            serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
        if map.insert(k.to_string(), value).is_some() {
            return Err(Error::parse(i + 1, format!("duplicate key {k}")));
        }
    }
    Ok(map)
}

/// Training settings from an optional config document; `seed` overrides.
pub fn train_config(document: Option<&str>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match document {
        Some(text) => {
            let map = parse_config_document(text)?;
            serde_json::from_value(serde_json::Value::Object(map))
                .map_err(|e| Error::invalid(format!("config document: {e}")))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Io {
    quiet: bool,
}

impl Io {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    /// Writes to `path`, or to stdout when absent.
    fn emit(&self, path: Option<&Path>, text: &str) -> Result<()> {
        match path {
            Some(p) => write_file(p, text),
            None => {
                print!("{text}");
                std::io::stdout()
                    .flush()
                    .map_err(|e| Error::io("<stdout>", e))
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn split_selection<'a>(
    corpus: &'a [Ensemble],
    split_path: &Path,
) -> Result<(SplitManifest, Vec<&'a Ensemble>)> {
    let split = SplitManifest::read(split_path)?;
    let train = split.select(&split.train, corpus)?;
    Ok((split, train))
}

fn parse_fractions(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            Error::invalid(format!(
                "fractions must be three comma-separated numbers, got {s:?}"
            ))
        })?;
    match parts.as_slice() {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(Error::invalid(format!(
            "fractions must be three comma-separated numbers, got {s:?}"
        ))),
    }
}

fn read_tokens(path: &Path) -> Result<Vec<TokenRow>> {
    parse_token_tsv(&read_file(path)?)
}

fn find<'a>(corpus: &'a [Ensemble], id: &str) -> Result<&'a Ensemble> {
    corpus
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::invalid(format!("protein {id} is not in the corpus")))
}

fn flexibility_of(e: &Ensemble) -> Result<Vec<f64>> {
    e.flexibility()
        .map(<[f64]>::to_vec)
        .ok_or_else(|| Error::invalid(format!("protein {} carries no flexibility profile", e.id)))
}

fn residue_value(values: &[f64], row: &TokenRow) -> Result<f64> {
    values.get(row.residue).copied().ok_or_else(|| {
        Error::invalid(format!(
            "{} residue {} is outside its {}-residue ensemble",
            row.protein,
            row.residue,
            values.len()
        ))
    })
}

fn execute(cli: Cli) -> Result<()> {
    let io = Io { quiet: cli.quiet };
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Synth {
            out,
            proteins,
            length,
            frames,
        } => {
            let corpus = synth_corpus(proteins, length, frames, seed)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for e in &corpus {
                write_ensemble(e, out.join(format!("{}.ens", e.id)))?;
            }
            io.say(format!(
                "wrote {} ensembles to {}",
                corpus.len(),
                out.display()
            ));
        }
        Command::ImportPdb {
            input,
            out,
            id,
            group,
        } => {
            let id = match id {
                Some(id) => id,
                None => input
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .ok_or_else(|| Error::invalid("cannot derive an id from the input path"))?,
            };
            let group = group.unwrap_or_else(|| id.clone());
            let e = parse_pdb_models(&read_file(&input)?, &id, &group)?;
            write_ensemble(&e, &out)?;
            io.say(format!(
                "{id}: {} frames, {} residues",
                e.frame_count(),
                e.residue_count()
            ));
        }
        Command::Fps {
            input,
            out,
            k,
            stride,
            seed_frame,
        } => {
            let e = read_ensemble(&input)?;
            let strided = e.sub_ensemble(&stride_sample(
                &(0..e.frame_count()).collect::<Vec<_>>(),
                stride,
            )?)?;
            let picks = fps_select(&strided, k, seed_frame)?;
            write_ensemble(&strided.sub_ensemble(&picks)?, &out)?;
            io.say(format!("kept frames {picks:?} of the strided ensemble"));
        }
        Command::Split {
            corpus,
            out,
            fractions,
        } => {
            let corpus = read_corpus_dir(&corpus)?;
            let split = make_splits(&corpus, parse_fractions(&fractions)?, seed)?;
            split.write(&out)?;
            io.say(format!(
                "train {} / val {} / test {} proteins",
                split.train.len(),
                split.val.len(),
                split.test.len()
            ));
        }
        Command::FitStats {
            corpus,
            split,
            out,
            descriptor,
        } => {
            let corpus = read_corpus_dir(&corpus)?;
            let (_, train_set) = split_selection(&corpus, &split)?;
            let sets = descriptor_sets(&train_set, &descriptor.config()?)?;
            let st = fit_standardizer(&sets.iter().collect::<Vec<_>>())?;
            write_file(&out, &st.to_text())?;
            io.say(format!(
                "{} features from {} proteins",
                st.dim(),
                train_set.len()
            ));
        }
        Command::Train {
            corpus,
            split,
            out,
            log,
            descriptor,
        } => {
            let doc = cli.config.as_deref().map(read_file).transpose()?;
            let cfg = train_config(doc.as_deref(), cli.seed)?;
            let corpus = read_corpus_dir(&corpus)?;
            let (manifest, train_set) = split_selection(&corpus, &split)?;
            let val_set = manifest.select(&manifest.val, &corpus)?;
            let mut log_text = String::new();
            let outcome = train(
                &train_set,
                &val_set,
                &descriptor.config()?,
                &cfg,
                &mut |r: &LogRecord| {
                    log_text.push_str(&format!("{r}\n"));
                    if let LogRecord::Epoch(_) = r {
                        io.say(r.to_string());
                    }
                },
            )?;
            if let Some(path) = log {
                write_file(&path, &log_text)?;
            }
            save_checkpoint(&outcome.checkpoint, &out)?;
            let m = &outcome.checkpoint.meta;
            io.say(format!(
                "best epoch {} of {}, validation reconstruction {}",
                m.best_epoch, m.epochs_run, m.best_val_loss
            ));
        }
        Command::Tokenize {
            ckpt,
            input,
            corpus,
            frames,
            out,
        } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let mut ensembles: Vec<Ensemble> =
                input.iter().map(read_ensemble).collect::<Result<_>>()?;
            if let Some(dir) = corpus {
                ensembles.extend(read_corpus_dir(dir)?);
            }
            if ensembles.is_empty() {
                return Err(Error::invalid("nothing to tokenize; pass --in or --corpus"));
            }
            let mut rows = Vec::new();
            for e in &ensembles {
                let e = match frames {
                    Some(n) => e.first_frames(n)?,
                    None => e.clone(),
                };
                rows.extend(token_rows(&e.id, &tokenize_ensemble(&ckpt, &e)?));
            }
            io.emit(out.as_deref(), &write_token_tsv(&rows)?)?;
        }
        Command::Rmsf { input, out } => {
            let e = read_ensemble(&input)?;
            let mut text = String::from("residue_index\trmsf\n");
            for (i, v) in compute_rmsf(&e)?.iter().enumerate() {
                text.push_str(&format!("{i}\t{v}\n"));
            }
            io.emit(out.as_deref(), &text)?;
        }
        Command::Anova {
            corpus,
            tokens,
            feature,
            control,
            min_count,
            permutations,
            out,
        } => {
            let corpus = read_corpus_dir(&corpus)?;
            let rows: Vec<TokenRow> = match &tokens {
                Some(p) => read_tokens(p)?,
                None if control.is_some() => corpus
                    .iter()
                    .flat_map(|e| {
                        (0..e.residue_count()).map(move |r| TokenRow {
                            protein: e.id.clone(),
                            residue: r,
                            tokens: Vec::new(),
                            latent_distance: 0.0,
                        })
                    })
                    .collect(),
                None => {
                    return Err(Error::invalid(
                        "anova needs --tokens unless a --control grouping is chosen",
                    ))
                }
            };
            let mut values = Vec::with_capacity(rows.len());
            let mut contexts = Vec::with_capacity(rows.len());
            let mut cache: Vec<(String, Vec<f64>)> = Vec::new();
            for row in &rows {
                let e = find(&corpus, &row.protein)?;
                if cache.last().map(|c| c.0 != row.protein).unwrap_or(true) {
                    let v = match feature {
                        Feature::Flexibility => flexibility_of(e)?,
                        Feature::Rmsf => compute_rmsf(e)?,
                    };
                    cache.push((row.protein.clone(), v));
                }
                values.push(residue_value(&cache.last().expect("cached").1, row)?);
                contexts.push(ResidueContext {
                    group: e.group.clone(),
                    residue: row.residue,
                    length: e.residue_count(),
                });
            }
            let groups: Vec<usize> = match control {
                None => rows
                    .iter()
                    .map(|r| {
                        r.tokens
                            .first()
                            .copied()
                            .ok_or_else(|| Error::invalid("token table has no token columns"))
                    })
                    .collect::<Result<_>>()?,
                Some(c) => {
                    let g = control_groupings(&contexts)?;
                    match c {
                        Control::Group => g.group,
                        Control::Position => g.position,
                        Control::Length => g.length,
                    }
                }
            };
            let report = anova_with_null(&values, &groups, min_count, permutations, seed)?;
            io.emit(out.as_deref(), &report.to_text())?;
        }
        Command::Probe {
            ckpt,
            tokens,
            corpus,
            split,
            random,
            seeds,
            epochs,
            out,
        } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let corpus = read_corpus_dir(&corpus)?;
            let manifest = SplitManifest::read(&split)?;
            let mut rows = read_tokens(&tokens)?;
            let codebook = &ckpt.codebooks[0];
            if random {
                rows = random_tokens(&rows, codebook.size(), seed);
            }
            let features = codeword_features(&rows, codebook)?;
            let mut rmsf: Vec<(String, Vec<f64>)> = Vec::new();
            let (mut xtr, mut ytr, mut xte, mut yte) =
                (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (row, f) in rows.iter().zip(features) {
                if !rmsf.iter().any(|(id, _)| id == &row.protein) {
                    rmsf.push((
                        row.protein.clone(),
                        compute_rmsf(find(&corpus, &row.protein)?)?,
                    ));
                }
                let labels = &rmsf
                    .iter()
                    .find(|(id, _)| id == &row.protein)
                    .expect("computed")
                    .1;
                let y = residue_value(labels, row)?;
                if manifest.train.contains(&row.protein) {
                    xtr.push(f);
                    ytr.push(y);
                } else if manifest.val.contains(&row.protein)
                    || manifest.test.contains(&row.protein)
                {
                    xte.push(f);
                    yte.push(y);
                }
            }
            let cfg = ProbeConfig {
                seeds,
                epochs,
                ..ProbeConfig::default()
            };
            let r = rmsf_probe(&xtr, &ytr, &xte, &yte, &cfg, seed)?;
            let mut text = format!("spearman_mean {}\nspearman_std {}\n", r.mean, r.std);
            for (i, v) in r.per_seed.iter().enumerate() {
                text.push_str(&format!("seed {i} {v}\n"));
            }
            io.emit(out.as_deref(), &text)?;
        }
        Command::ScoreMutations { ckpt, wt, mutants } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let first = |rows: Vec<TokenRow>| -> Result<Vec<usize>> {
                rows.iter()
                    .map(|r| {
                        r.tokens
                            .first()
                            .copied()
                            .ok_or_else(|| Error::invalid("token table has no token columns"))
                    })
                    .collect()
            };
            let wt_tokens = first(read_tokens(&wt)?)?;
            let mut text = String::from("mutant\tscore\n");
            for m in &mutants {
                let s = mutation_score(&wt_tokens, &first(read_tokens(m)?)?, &ckpt.codebooks[0])?;
                text.push_str(&format!("{}\t{s}\n", m.display()));
            }
            io.emit(None, &text)?;
        }
        Command::Exemplars {
            ckpt,
            tokens,
            corpus,
            token,
            n,
            out,
        } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let corpus = read_corpus_dir(&corpus)?;
            let refs: Vec<&Ensemble> = corpus.iter().collect();
            let found = token_exemplars(&refs, &read_tokens(&tokens)?, token, n, &ckpt.descriptor)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mut report =
                String::from("rank\tprotein_id\tresidue_index\td_z\tneighbors\tbundle\n");
            for (rank, ex) in found.iter().enumerate() {
                let bundle = exemplar_bundle(find(&corpus, &ex.protein)?, ex)?;
                let name = format!("{}.ens", bundle.id);
                write_ensemble(&bundle, out.join(&name))?;
                let nb: Vec<String> = ex
                    .neighbors
                    .iter()
                    .map(|(j, c)| format!("{j}:{c}"))
                    .collect();
                report.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{name}\n",
                    rank + 1,
                    ex.protein,
                    ex.residue,
                    ex.latent_distance,
                    nb.join(",")
                ));
            }
            write_file(&out.join("exemplars.tsv"), &report)?;
            io.say(format!(
                "{} exemplars of token {token} written to {}",
                found.len(),
                out.display()
            ));
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_documents() {
        let m = parse_config_document(
            "# comment\nlr_max = 0.002\ncodebook_sizes=[8, 4]\nsample_branch1=true\n\n",
        )
        .unwrap();
        assert_eq!(m["lr_max"], serde_json::json!(0.002));
        let cfg = train_config(
            Some("max_epochs=3\nwarmup_steps = 2\ncodebook_sizes=[8,4]"),
            Some(9),
        )
        .unwrap();
        assert_eq!((cfg.max_epochs, cfg.warmup_steps, cfg.seed), (3, 2, 9));
        assert_eq!(cfg.codebook_sizes, vec![8, 4]);
        assert!(train_config(Some("no_such_key=1"), None).is_err());
        assert!(train_config(Some("lr_max"), None).is_err());
        assert!(parse_config_document("a=1\na=2").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["ensembits", "synth", "--bogus"]), 2);
        assert_eq!(run(["ensembits", "nonsense"]), 2);
        assert_eq!(
            run(["ensembits", "rmsf", "--in", "/nonexistent/x.ens", "--quiet"]),
            1
        );
    }
}
