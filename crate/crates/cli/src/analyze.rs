//! The `analyze` command: per-lag memory profiles from JSONL logs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use memlens::{load_dataset, profile_with_significance, ProfileOptions};

use crate::filter::FilterExpr;
use crate::report::{render_csv, render_svg, ProfileRow};
use crate::{write_text, AnalyzeArgs, CliError};

/// FNV-1a over a label, used to decorrelate per-file seeds in batch
/// mode while keeping them reproducible.
fn fnv1a(text: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in text.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn analyze_one(
    path: &Path,
    label: Option<&str>,
    seed: u64,
    args: &AnalyzeArgs,
    filter: Option<&FilterExpr>,
) -> Result<Vec<ProfileRow>, CliError> {
    let dataset = load_dataset(path)?;
    let mut options = ProfileOptions::new(args.max_lag, args.estimator);
    options.min_t = args.min_t;
    options.permutations = args.permutations;
    options.level = args.level;
    options.seed = seed;
    options.event = filter.map(|f| f.compile(&dataset));
    let profile = profile_with_significance(&dataset, &options)?;
    Ok(profile
        .lags
        .iter()
        .map(|lag| {
            let test = lag.permutation.as_ref().expect("profile carries tests");
            ProfileRow {
                input: label.map(str::to_owned),
                lag: lag.lag,
                estimate_nats: lag.estimate_nats,
                threshold_nats: test.threshold_nats,
                significant: test.significant,
                degenerate_null: test.degenerate_null,
                n_samples: lag.n_samples,
                n_distinct_contexts: lag.n_distinct_contexts,
            }
        })
        .collect())
}

pub fn run(args: &AnalyzeArgs) -> Result<(), CliError> {
    let filter = match &args.filter {
        Some(expr) => {
            let parsed = crate::filter::parse(expr).map_err(CliError::Usage)?;
            if parsed.max_depth() > args.max_lag {
                return Err(CliError::Usage(format!(
                    "filter reaches back {} steps but --max-lag is {}; deepen --max-lag or trim the filter",
                    parsed.max_depth(),
                    args.max_lag
                )));
            }
            Some(parsed)
        }
        None => None,
    };

    let (rows, labels, batch) = if args.input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&args.input)
            .map_err(|e| memlens::Error::io(&args.input, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "jsonl").unwrap_or(false))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Usage(format!(
                "no .jsonl files found in {}",
                args.input.display()
            )));
        }
        let jobs: Vec<(PathBuf, String, u64)> = files
            .into_iter()
            .map(|path| {
                let stem = stem_of(&path);
                let seed = args.seed ^ fnv1a(&stem);
                (path, stem, seed)
            })
            .collect();
        let per_file: Vec<Result<Vec<ProfileRow>, CliError>> = jobs
            .par_iter()
            .map(|(path, stem, seed)| analyze_one(path, Some(stem), *seed, args, filter.as_ref()))
            .collect();
        let mut rows = Vec::new();
        for result in per_file {
            rows.extend(result?);
        }
        let labels = jobs.into_iter().map(|(_, stem, _)| stem).collect();
        (rows, labels, true)
    } else {
        let stem = stem_of(&args.input);
        let rows = analyze_one(&args.input, None, args.seed, args, filter.as_ref())?;
        (rows, vec![stem], false)
    };

    let csv = render_csv(&rows, batch);
    match &args.output_csv {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &args.output_svg {
        let rows_for_svg: Vec<ProfileRow> = if batch {
            rows
        } else {
            // Single-input bars still need a label slot to land in.
            rows.into_iter()
                .map(|mut row| {
                    row.input = Some(labels[0].clone());
                    row
                })
                .collect()
        };
        write_text(path, &render_svg(&rows_for_svg, args.max_lag, &labels))?;
    }
    Ok(())
}
