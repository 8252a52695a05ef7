//! How much app code is shared across a corpus, judged by package names.
//!
//! Classes are grouped by the first N segments of their package path. A
//! group seen in two or more apps counts as shared; everything else, and
//! anything in an obfuscated package, counts as unique to its app.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AppstatsError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("duplicate app id `{0}`")]
    DuplicateApp(String),
    #[error("empty package path")]
    EmptyPath,
    #[error("corpus has no apps")]
    EmptyCorpus,
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("app `{0}` has no classes")]
    NoClasses(String),
    #[error("invalid synthesis parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppRecord {
    pub app_id: String,
    pub dex_size_bytes: u64,
    /// Dotted package path to class count.
    pub packages: BTreeMap<String, u64>,
}

impl AppRecord {
    pub fn total_classes(&self) -> u64 {
        self.packages.values().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub apps: Vec<AppRecord>,
}

impl Corpus {
    pub fn new(apps: Vec<AppRecord>) -> Result<Self, AppstatsError> {
        let mut ids = BTreeSet::new();
        for a in &apps {
            if !ids.insert(a.app_id.as_str()) {
                return Err(AppstatsError::DuplicateApp(a.app_id.clone()));
            }
        }
        Ok(Self { apps })
    }
}

fn valid_path(p: &str) -> bool {
    !p.is_empty() && p.split('.').all(|s| !s.is_empty())
}

/// Parses `app_id<TAB>dex_size_bytes<TAB>pkg=count;pkg=count;...` lines.
/// Blank lines and `#` comments are skipped; a package listed twice in one
/// app has its counts added.
pub fn parse_corpus(source: &str) -> Result<Corpus, AppstatsError> {
    let mut apps = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| AppstatsError::Syntax { line, message };
        let text = raw.trim_end_matches('\r');
        if text.trim().is_empty() || text.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let app_id = fields[0].trim();
        if app_id.is_empty() {
            return Err(err("empty app id".into()));
        }
        let dex_size_bytes = fields[1]
            .trim()
            .parse::<u64>()
            .map_err(|e| err(format!("dex size: {e}")))?;
        let mut packages = BTreeMap::new();
        for entry in fields[2]
            .split(';')
            .map(str::trim)
            .filter(|e| !e.is_empty())
        {
            let (path, count) = entry
                .rsplit_once('=')
                .ok_or_else(|| err(format!("missing `=` in `{entry}`")))?;
            let path = path.trim();
            if !valid_path(path) {
                return Err(err(format!("bad package path `{path}`")));
            }
            let count = count
                .trim()
                .parse::<u64>()
                .map_err(|e| err(format!("class count for `{path}`: {e}")))?;
            *packages.entry(path.to_string()).or_insert(0) += count;
        }
        apps.push(AppRecord {
            app_id: app_id.to_string(),
            dex_size_bytes,
            packages,
        });
    }
    Corpus::new(apps)
}

pub fn write_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for a in &corpus.apps {
        let pkgs: Vec<String> = a.packages.iter().map(|(p, c)| format!("{p}={c}")).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            a.app_id,
            a.dex_size_bytes,
            pkgs.join(";")
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObfuscationFilter {
    /// Any one-character segment.
    #[default]
    SingleChar,
    /// Additionally, any two-letter segment within a to p.
    SingleCharOrAtoP,
}

/// True iff some segment of `path` is a single character.
pub fn is_obfuscated_package(path: &str) -> Result<bool, AppstatsError> {
    is_obfuscated_with(path, ObfuscationFilter::SingleChar)
}

pub fn is_obfuscated_with(path: &str, filter: ObfuscationFilter) -> Result<bool, AppstatsError> {
    if path.is_empty() {
        return Err(AppstatsError::EmptyPath);
    }
    Ok(path.split('.').any(|s| {
        s.chars().count() == 1
            || (filter == ObfuscationFilter::SingleCharOrAtoP
                && s.len() <= 2
                && !s.is_empty()
                && s.bytes().all(|b| (b'a'..=b'p').contains(&b)))
    }))
}

/// The first `depth` segments, or `None` for shallower paths.
fn prefix(path: &str, depth: usize) -> Option<&str> {
    let mut seen = 0;
    for (i, b) in path.bytes().enumerate() {
        if b == b'.' {
            seen += 1;
            if seen == depth {
                return Some(&path[..i]);
            }
        }
    }
    (seen + 1 == depth).then_some(path)
}

/// Shareable prefix of a package, if it has one at this depth.
fn share_key(path: &str, depth: usize, filter: ObfuscationFilter) -> Option<&str> {
    if is_obfuscated_with(path, filter).unwrap_or(true) {
        return None;
    }
    prefix(path, depth)
}

/// Class count of each app per shareable prefix.
fn groups(
    corpus: &Corpus,
    depth: usize,
    filter: ObfuscationFilter,
) -> BTreeMap<&str, BTreeMap<usize, u64>> {
    let mut g: BTreeMap<&str, BTreeMap<usize, u64>> = BTreeMap::new();
    for (i, a) in corpus.apps.iter().enumerate() {
        for (p, &c) in &a.packages {
            if let Some(k) = share_key(p, depth, filter) {
                *g.entry(k).or_default().entry(i).or_insert(0) += c;
            }
        }
    }
    g.retain(|_, apps| apps.len() >= 2);
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub depth: usize,
    /// Percentage of each app's classes not shared with any other app.
    pub per_app_unique_fraction: BTreeMap<String, f64>,
    pub mean: f64,
    pub median: f64,
    /// `None` when some app has no classes.
    pub storage_savings_fraction: Option<f64>,
}

/// Per-app percentage of classes that no other app shares at `depth`.
/// Apps without classes count as fully unique.
pub fn unique_class_fraction(
    corpus: &Corpus,
    depth: usize,
) -> Result<OverlapReport, AppstatsError> {
    unique_class_fraction_with(corpus, depth, ObfuscationFilter::SingleChar)
}

pub fn unique_class_fraction_with(
    corpus: &Corpus,
    depth: usize,
    filter: ObfuscationFilter,
) -> Result<OverlapReport, AppstatsError> {
    if corpus.apps.is_empty() {
        return Err(AppstatsError::EmptyCorpus);
    }
    if depth == 0 {
        return Err(AppstatsError::ZeroDepth);
    }
    let shared = groups(corpus, depth, filter);
    let mut per_app = BTreeMap::new();
    let mut values = Vec::with_capacity(corpus.apps.len());
    for (i, a) in corpus.apps.iter().enumerate() {
        let total = a.total_classes();
        let shared_classes: u64 = a
            .packages
            .iter()
            .filter(|(p, _)| {
                share_key(p, depth, filter)
                    .is_some_and(|k| shared.get(k).is_some_and(|s| s.contains_key(&i)))
            })
            .map(|(_, &c)| c)
            .sum();
        let pct = if total == 0 {
            100.0
        } else {
            100.0 * (total - shared_classes) as f64 / total as f64
        };
        per_app.insert(a.app_id.clone(), pct);
        values.push(pct);
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    Ok(OverlapReport {
        depth,
        mean: values.iter().sum::<f64>() / n as f64,
        median,
        per_app_unique_fraction: per_app,
        storage_savings_fraction: storage_savings_with(corpus, depth, filter).ok(),
    })
}

/// Fraction of total code size saved by storing each shared package group
/// once. Per-class size is uniform within an app, and a shared group is
/// priced at its largest single-app footprint.
pub fn storage_savings(corpus: &Corpus, depth: usize) -> Result<f64, AppstatsError> {
    storage_savings_with(corpus, depth, ObfuscationFilter::SingleChar)
}

pub fn storage_savings_with(
    corpus: &Corpus,
    depth: usize,
    filter: ObfuscationFilter,
) -> Result<f64, AppstatsError> {
    if corpus.apps.is_empty() {
        return Err(AppstatsError::EmptyCorpus);
    }
    if depth == 0 {
        return Err(AppstatsError::ZeroDepth);
    }
    let mut per_class = Vec::with_capacity(corpus.apps.len());
    for a in &corpus.apps {
        let total = a.total_classes();
        if total == 0 {
            return Err(AppstatsError::NoClasses(a.app_id.clone()));
        }
        per_class.push(a.dex_size_bytes as f64 / total as f64);
    }
    let naive: f64 = corpus.apps.iter().map(|a| a.dex_size_bytes as f64).sum();
    if naive == 0.0 {
        return Ok(0.0);
    }
    let mut saved = 0.0;
    for apps in groups(corpus, depth, filter).values() {
        let sizes: Vec<f64> = apps
            .iter()
            .map(|(&i, &c)| c as f64 * per_class[i])
            .collect();
        let sum: f64 = sizes.iter().sum();
        let kept = sizes.iter().copied().fold(0.0, f64::max);
        saved += sum - kept;
    }
    Ok(saved / naive)
}

/// A library that synthetic apps may bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySpec {
    pub name: String,
    /// Package path to class count; paths share a first segment that no
    /// private package uses.
    pub packages: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapProfile {
    /// Probability that an app bundles a given library.
    pub inclusion_probability: f64,
    /// Private packages per app, inclusive range.
    pub private_packages: (usize, usize),
    /// Classes per private package, inclusive range.
    pub classes_per_package: (u64, u64),
    /// Bytes per class, inclusive range, drawn once per app.
    pub bytes_per_class: (u64, u64),
    /// Depth of private package paths.
    pub private_depth: usize,
    /// Libraries every app bundles.
    #[serde(default)]
    pub forced: Vec<usize>,
}

impl Default for OverlapProfile {
    fn default() -> Self {
        Self {
            inclusion_probability: 0.3,
            private_packages: (2, 6),
            classes_per_package: (1, 40),
            bytes_per_class: (500, 2000),
            private_depth: 4,
            forced: Vec::new(),
        }
    }
}

/// Synthetic corpus with the libraries each app was given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// Per app, the indices of bundled libraries.
    pub membership: Vec<Vec<usize>>,
}

/// A pool of `n` libraries named `libNN` with `packages` packages each at
/// depth `depth`.
pub fn library_pool(n: usize, packages: usize, depth: usize, seed: u64) -> Vec<LibrarySpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|l| {
            let mut pkgs = BTreeMap::new();
            for p in 0..packages {
                let mut segs = vec![format!("lib{l:02}")];
                segs.extend((1..depth.max(1)).map(|d| format!("p{p}s{d}")));
                pkgs.insert(segs.join("."), rng.random_range(1..=30));
            }
            LibrarySpec {
                name: format!("lib{l:02}"),
                packages: pkgs,
            }
        })
        .collect()
}

/// Deterministic corpus of `n_apps` apps mixing private packages with
/// libraries from `pool`.
pub fn synth_corpus(
    n_apps: usize,
    pool: &[LibrarySpec],
    profile: &OverlapProfile,
    seed: u64,
) -> Result<SynthCorpus, AppstatsError> {
    let p = profile;
    let bad = |m: &str| Err(AppstatsError::Params(m.into()));
    if !(0.0..=1.0).contains(&p.inclusion_probability) {
        return bad("inclusion probability outside [0, 1]");
    }
    if p.private_packages.0 > p.private_packages.1
        || p.classes_per_package.0 > p.classes_per_package.1
        || p.bytes_per_class.0 > p.bytes_per_class.1
    {
        return bad("empty range");
    }
    if p.private_packages.1 == 0 && pool.is_empty() {
        return bad("apps would have no packages");
    }
    if p.classes_per_package.0 == 0 || p.private_depth == 0 {
        return bad("private packages need at least one class and one segment");
    }
    if p.forced.iter().any(|&l| l >= pool.len()) {
        return bad("forced library outside the pool");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut apps = Vec::with_capacity(n_apps);
    let mut membership = Vec::with_capacity(n_apps);
    for a in 0..n_apps {
        let mut packages = BTreeMap::new();
        let n_private = rng.random_range(p.private_packages.0..=p.private_packages.1);
        for k in 0..n_private {
            let mut segs = vec![format!("app{a:04}")];
            segs.extend((1..p.private_depth).map(|d| format!("m{k}d{d}")));
            packages.insert(
                segs.join("."),
                rng.random_range(p.classes_per_package.0..=p.classes_per_package.1),
            );
        }
        let mut libs = Vec::new();
        for (l, lib) in pool.iter().enumerate() {
            let draw: f64 = rng.random();
            if p.forced.contains(&l) || draw < p.inclusion_probability {
                libs.push(l);
                for (path, &c) in &lib.packages {
                    *packages.entry(path.clone()).or_insert(0) += c;
                }
            }
        }
        let classes: u64 = packages.values().sum();
        let bpc = rng.random_range(p.bytes_per_class.0..=p.bytes_per_class.1);
        apps.push(AppRecord {
            app_id: format!("app{a:04}"),
            dex_size_bytes: classes * bpc,
            packages,
        });
        membership.push(libs);
    }
    Ok(SynthCorpus {
        corpus: Corpus::new(apps)?,
        membership,
    })
}

/// Picks `k` distinct libraries from the pool, for fixtures.
pub fn sample_libraries(pool: &[LibrarySpec], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..pool.len()).collect();
    let mut out: Vec<usize> = idx
        .choose_multiple(&mut rng, k.min(pool.len()))
        .copied()
        .collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn app(id: &str, dex: u64, pkgs: &[(&str, u64)]) -> AppRecord {
        AppRecord {
            app_id: id.into(),
            dex_size_bytes: dex,
            packages: pkgs.iter().map(|&(p, c)| (p.to_string(), c)).collect(),
        }
    }

    #[test]
    fn obfuscation_filter() {
        assert!(is_obfuscated_package("a.b.c").unwrap());
        assert!(!is_obfuscated_package("com.facebook.katana").unwrap());
        assert!(is_obfuscated_package("com.a.analytics").unwrap());
        assert_eq!(is_obfuscated_package(""), Err(AppstatsError::EmptyPath));
        assert!(!is_obfuscated_package("com.ab.x1").unwrap());
        assert!(is_obfuscated_with("com.ab.x1", ObfuscationFilter::SingleCharOrAtoP).unwrap());
        assert!(!is_obfuscated_with("com.zz.x1", ObfuscationFilter::SingleCharOrAtoP).unwrap());
    }

    #[test]
    fn prefixes() {
        assert_eq!(prefix("com.google.gms.ads", 4), Some("com.google.gms.ads"));
        assert_eq!(prefix("com.google.gms.ads", 2), Some("com.google"));
        assert_eq!(prefix("com.google", 3), None);
    }

    #[test]
    fn shared_package_is_not_unique() {
        let c = Corpus::new(vec![
            app("x", 100, &[("com.google.gms.ads", 10), ("com.x.own", 10)]),
            app("y", 100, &[("com.google.gms.ads", 10), ("org.yy.own", 30)]),
        ])
        .unwrap();
        let r = unique_class_fraction(&c, 4).unwrap();
        // com.x.own is obfuscated and stays unique.
        assert_eq!(r.per_app_unique_fraction["x"], 50.0);
        assert_eq!(r.per_app_unique_fraction["y"], 75.0);
        assert_eq!(r.mean, 62.5);
    }

    #[test]
    fn single_app_is_all_unique() {
        let c = Corpus::new(vec![app("x", 10, &[("com.foo.bar", 4)])]).unwrap();
        for n in 1..=8 {
            assert_eq!(unique_class_fraction(&c, n).unwrap().mean, 100.0);
        }
        assert_eq!(storage_savings(&c, 1).unwrap(), 0.0);
    }

    #[test]
    fn identical_apps_save_half() {
        let a = app("a", 1000, &[("com.foo.bar", 4), ("org.baz.qux", 6)]);
        let c = Corpus::new(vec![
            a.clone(),
            AppRecord {
                app_id: "b".into(),
                ..a
            },
        ])
        .unwrap();
        assert!((storage_savings(&c, 2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(
            unique_class_fraction(&Corpus::default(), 1),
            Err(AppstatsError::EmptyCorpus)
        );
        let c = Corpus::new(vec![app("x", 10, &[])]).unwrap();
        assert_eq!(
            storage_savings(&c, 1),
            Err(AppstatsError::NoClasses("x".into()))
        );
        assert!(Corpus::new(vec![app("x", 1, &[]), app("x", 1, &[])]).is_err());
    }

    #[test]
    fn corpus_text_round_trip() {
        let src =
            "# corpus\nappA\t2048\tcom.foo.bar=3;com.foo.baz=2\n\nappB\t10\torg.x=1;org.x=2\n";
        let c = parse_corpus(src).unwrap();
        assert_eq!(c.apps.len(), 2);
        assert_eq!(c.apps[1].packages["org.x"], 3);
        assert_eq!(parse_corpus(&write_corpus(&c)).unwrap(), c);
        assert!(matches!(
            parse_corpus("a\t1\n"),
            Err(AppstatsError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_corpus("a\tx\tp=1\n"),
            Err(AppstatsError::Syntax { .. })
        ));
        assert!(matches!(
            parse_corpus("a\t1\tp..q=1\n"),
            Err(AppstatsError::Syntax { .. })
        ));
        assert!(matches!(
            parse_corpus("a\t1\tpq\n"),
            Err(AppstatsError::Syntax { .. })
        ));
    }

    #[test]
    fn synth_is_deterministic_and_respects_pool() {
        let pool = library_pool(5, 3, 3, 9);
        let prof = OverlapProfile::default();
        let a = synth_corpus(20, &pool, &prof, 4).unwrap();
        assert_eq!(a, synth_corpus(20, &pool, &prof, 4).unwrap());
        let none = synth_corpus(10, &[], &prof, 1).unwrap();
        for n in 1..=8 {
            assert_eq!(unique_class_fraction(&none.corpus, n).unwrap().mean, 100.0);
        }
    }
}
