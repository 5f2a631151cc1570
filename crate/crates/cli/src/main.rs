use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use gwmaps::boltzmann::{preset, solve_admissibility, BoltzmannSolution, Preset, WeightSequence, WeightsJson};
use gwmaps::branching::{LawJson, OffspringLaw};
use gwmaps::harness::{self, job_rng, run_jobs};
use gwmaps::infinite_map::WindowPolicy;
use gwmaps::infinite_map::{FiniteMapSampler, InfiniteMapSampler, Sign};
use gwmaps::periodicity::{self, SizeKind};
use gwmaps::planar_maps::{bdfg_forward, enumerate_mobiles};
use gwmaps::sampler::{ConditionedSampler, TreeSampler};
use gwmaps::trees::{mobile_type, Forest};

#[derive(Parser, Serialize, Deserialize, Debug, Default)]
#[command(name = "gwmaps", version, about = "Multitype Galton-Watson trees, Boltzmann maps and their local limits")]
#[serde(default, deny_unknown_fields)]
struct Cli {
    /// Master seed; per-job streams are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// JSON file with the same fields as the command line; flags given on
    /// the command line win.
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Solve the admissibility system for a weight sequence.
    Analyze {
        /// Preset (uipm, even-<p>, odd-<p>), weight JSON file or inline JSON.
        weights: String,
    },
    /// Draw trees, finite maps or balls of the infinite map.
    Sample {
        #[command(subcommand)]
        what: SampleWhat,
    },
    /// Local convergence table: truncations of conditioned trees against the
    /// exact size-biased law, or balls of conditioned maps against the
    /// infinite map.
    Convergence(ConvergenceArgs),
    /// Root degree survival of the infinite map and its exponential fit.
    DegreeTail {
        weights: String,
        #[arg(long, default_value_t = 100_000)]
        #[serde(default = "d_100k")]
        samples: usize,
        #[arg(long, default_value_t = 5)]
        #[serde(default = "d_5")]
        lo: usize,
        #[arg(long, default_value_t = 25)]
        #[serde(default = "d_25")]
        hi: usize,
    },
    /// Enumerate mobiles and count the maps they encode.
    Enumerate {
        weights: String,
        /// Largest number of face vertices (types 3 and 4).
        #[arg(long, default_value_t = 3)]
        #[serde(default = "d_3")]
        max_faces: usize,
        #[arg(long, default_value_t = 1_000_000)]
        #[serde(default = "d_1m")]
        budget: usize,
    },
    /// Periodicity data of a law or of a weight sequence.
    Period {
        #[arg(long)]
        #[serde(default)]
        law: Option<String>,
        /// Comma separated size weights per type (1-based order).
        #[arg(long)]
        #[serde(default)]
        gamma: Option<String>,
        #[arg(long)]
        #[serde(default)]
        weights: Option<String>,
    },
}

#[derive(Subcommand, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
enum SampleWhat {
    Tree {
        /// mono2, toy2, law JSON file or inline JSON.
        law: String,
        /// Root type (1-based).
        #[arg(long, default_value_t = 1)]
        #[serde(default = "d_1")]
        root: usize,
        /// Condition on this size.
        #[arg(long)]
        #[serde(default)]
        size: Option<u64>,
        #[arg(long)]
        #[serde(default)]
        gamma: Option<String>,
        #[arg(long, default_value_t = 1)]
        #[serde(default = "d_1")]
        count: usize,
    },
    Map {
        weights: String,
        #[arg(long, default_value = "F")]
        #[serde(default = "d_faces")]
        kind: String,
        #[arg(long)]
        size: u64,
        #[arg(long, default_value_t = 1)]
        #[serde(default = "d_1")]
        count: usize,
    },
    Ball {
        weights: String,
        #[arg(long, default_value_t = 1)]
        #[serde(default = "d_1")]
        radius: usize,
        #[arg(long, default_value_t = 1)]
        #[serde(default = "d_1")]
        count: usize,
        /// positive, negative or null; drawn from the limit mixture if absent.
        #[arg(long)]
        #[serde(default)]
        sign: Option<String>,
    },
}

#[derive(clap::Args, Serialize, Deserialize, Debug)]
struct ConvergenceArgs {
    /// Tree law (mono2, toy2, JSON); selects the tree experiment.
    #[arg(long)]
    #[serde(default)]
    law: Option<String>,
    /// Weight sequence; selects the map experiment.
    #[arg(long)]
    #[serde(default)]
    weights: Option<String>,
    /// Tree size weights per type, comma separated.
    #[arg(long)]
    #[serde(default)]
    gamma: Option<String>,
    /// Root word for trees, 1-based, comma separated.
    #[arg(long, default_value = "1")]
    #[serde(default = "d_word")]
    word: String,
    /// Map size statistic: V, E or F.
    #[arg(long, default_value = "F")]
    #[serde(default = "d_faces")]
    kind: String,
    /// Truncation height (trees) or ball radius (maps).
    #[arg(long, default_value_t = 1)]
    #[serde(default = "d_1")]
    radius: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<u64>,
    #[arg(long, default_value_t = 10_000)]
    #[serde(default = "d_10k")]
    samples: usize,
}

fn d_1() -> usize {
    1
}
fn d_3() -> usize {
    3
}
fn d_5() -> usize {
    5
}
fn d_25() -> usize {
    25
}
fn d_10k() -> usize {
    10_000
}
fn d_100k() -> usize {
    100_000
}
fn d_1m() -> usize {
    1_000_000
}
fn d_faces() -> String {
    "F".into()
}
fn d_word() -> String {
    "1".into()
}

const ATTEMPT_CAP: u64 = 1 << 40;

/// A report: JSON always, plus an optional table for CSV output.
struct Report {
    json: Value,
    table: Option<(Vec<&'static str>, Vec<Vec<String>>)>,
}

fn parse_weights(s: &str) -> Result<WeightSequence> {
    if let Some(p) = Preset::parse(s) {
        return Ok(preset(p)?);
    }
    let text = if s.trim_start().starts_with('{') { s.to_string() } else { fs::read_to_string(s).with_context(|| format!("reading weights {s}"))? };
    let j: WeightsJson = serde_json::from_str(&text).context("parsing weights")?;
    Ok(WeightSequence::from_json(&j)?)
}

fn parse_law(s: &str) -> Result<OffspringLaw> {
    match s {
        "mono2" => return Ok(OffspringLaw::mono2()),
        "toy2" => return Ok(OffspringLaw::toy2()),
        _ => {}
    }
    let text = if s.trim_start().starts_with('{') { s.to_string() } else { fs::read_to_string(s).with_context(|| format!("reading law {s}"))? };
    let j: LawJson = serde_json::from_str(&text).context("parsing law")?;
    Ok(OffspringLaw::from_json(&j)?)
}

fn parse_list(s: &str) -> Result<Vec<u64>> {
    s.split(',').map(|x| x.trim().parse::<u64>().with_context(|| format!("bad number {x:?}"))).collect()
}

/// 1-based type word to 0-based.
fn parse_word(s: &str, k: usize) -> Result<Vec<u8>> {
    parse_list(s)?
        .into_iter()
        .map(|t| {
            if t == 0 || t as usize > k {
                bail!("type {t} outside 1..={k}");
            }
            Ok((t - 1) as u8)
        })
        .collect()
}

fn parse_gamma(s: Option<&str>, k: usize) -> Result<Vec<u64>> {
    let g = match s {
        Some(s) => parse_list(s)?,
        None => (0..k).map(|i| u64::from(i == 0)).collect(),
    };
    if g.len() != k {
        bail!("gamma has {} entries, law has {k} types", g.len());
    }
    Ok(g)
}

fn parse_kind(s: &str) -> Result<SizeKind> {
    SizeKind::parse(s).ok_or_else(|| anyhow!("size kind must be V, E or F, got {s:?}"))
}

fn solve(weights: &str) -> Result<BoltzmannSolution> {
    Ok(solve_admissibility(&parse_weights(weights)?)?)
}

fn sign_name(s: Sign) -> &'static str {
    match s {
        Sign::Positive => "positive",
        Sign::Negative => "negative",
        Sign::Null => "null",
    }
}

fn run(cmd: &Command, seed: u64) -> Result<Report> {
    match cmd {
        Command::Analyze { weights } => {
            let sol = solve(weights)?;
            let report = serde_json::to_value(sol.report())?;
            let rows = report
                .as_object()
                .map(|o| o.iter().map(|(k, v)| vec![k.clone(), v.as_str().map_or_else(|| v.to_string(), str::to_string)]).collect())
                .unwrap_or_default();
            Ok(Report { json: report, table: Some((vec!["field", "value"], rows)) })
        }
        Command::Sample { what } => sample(what, seed),
        Command::Convergence(a) => convergence(a, seed),
        Command::DegreeTail { weights, samples, lo, hi } => {
            let sol = solve(weights)?;
            let t = harness::degree_tail(&sol, *samples, *lo, *hi, seed, &WindowPolicy::default())?;
            let rows = t.survival.iter().map(|(n, s)| vec![n.to_string(), s.to_string()]).collect();
            Ok(Report { json: serde_json::to_value(&t)?, table: Some((vec!["degree", "survival"], rows)) })
        }
        Command::Enumerate { weights, max_faces, budget } => {
            let q = parse_weights(weights)?;
            let mobiles = enumerate_mobiles(&q, *max_faces, *budget)?;
            let mut codes = BTreeMap::new();
            let mut by_faces: BTreeMap<usize, usize> = BTreeMap::new();
            for m in &mobiles {
                let map = bdfg_forward(m)?;
                let faces = m.count_type(mobile_type::FACE) + m.count_type(mobile_type::FLAG_FACE);
                *by_faces.entry(faces).or_default() += 1;
                codes.insert(map.canonical_code(), ());
            }
            let rows = by_faces.iter().map(|(f, c)| vec![f.to_string(), c.to_string()]).collect();
            Ok(Report {
                json: json!({
                    "mobiles": mobiles.len(),
                    "distinct_maps": codes.len(),
                    "injective": codes.len() == mobiles.len(),
                    "by_faces": by_faces,
                }),
                table: Some((vec!["faces", "mobiles"], rows)),
            })
        }
        Command::Period { law, gamma, weights } => period(law.as_deref(), gamma.as_deref(), weights.as_deref()),
    }
}

fn period(law: Option<&str>, gamma: Option<&str>, weights: Option<&str>) -> Result<Report> {
    if let Some(w) = weights {
        let q = parse_weights(w)?;
        let p = periodicity::map_periods(&q)?;
        let rows = SizeKind::ALL
            .iter()
            .map(|&k| {
                let (d, a) = p.get(k);
                vec![format!("{k:?}"), d.to_string(), a.to_string()]
            })
            .collect();
        return Ok(Report { json: serde_json::to_value(&p)?, table: Some((vec!["kind", "d", "alpha"], rows)) });
    }
    let law = parse_law(law.ok_or_else(|| anyhow!("period needs --law or --weights"))?)?;
    let g = parse_gamma(gamma, law.k())?;
    let p = periodicity::period(&law, &g)?;
    let rows = p.alpha.iter().enumerate().map(|(i, a)| vec![(i + 1).to_string(), p.d.to_string(), a.to_string()]).collect();
    Ok(Report { json: serde_json::to_value(&p)?, table: Some((vec!["type", "d", "alpha"], rows)) })
}

fn sample(what: &SampleWhat, seed: u64) -> Result<Report> {
    match what {
        SampleWhat::Tree { law, root, size, gamma, count } => {
            let law = parse_law(law)?;
            let r = parse_word(&root.to_string(), law.k())?;
            let trees: Vec<Forest> = match size {
                Some(n) => {
                    let g = parse_gamma(gamma.as_deref(), law.k())?;
                    harness::check_lattice(&law, &g, &r, *n)?;
                    let s = ConditionedSampler::new(&law, &g, &r, *n, true)?;
                    run_jobs(seed, *count, 16, |rng| Ok(s.sample(rng, ATTEMPT_CAP)?))?
                }
                None => {
                    let s = TreeSampler::new(&law);
                    run_jobs(seed, *count, 16, |rng| Ok(Forest::from(s.sample_tree(rng, r[0], 10_000_000)?)))?
                }
            };
            let out: Vec<Value> = trees.iter().map(|f| json!({ "tree": f.trees[0].to_json(), "vertices": f.trees[0].len() })).collect();
            let rows = trees.iter().enumerate().map(|(i, f)| vec![i.to_string(), f.trees[0].len().to_string()]).collect();
            Ok(Report { json: json!({ "seed": seed, "trees": out }), table: Some((vec!["index", "vertices"], rows)) })
        }
        SampleWhat::Map { weights, kind, size, count } => {
            let sol = solve(weights)?;
            let f = FiniteMapSampler::new(&sol, parse_kind(kind)?, *size)?;
            let maps = run_jobs(seed, *count, 16, |rng| Ok(f.sample(rng, ATTEMPT_CAP)?))?;
            let out: Vec<Value> = maps
                .iter()
                .map(|(m, s, _)| json!({ "map": m.to_json(), "sign": sign_name(*s), "code": m.canonical_hex(), "stats": m.stats() }))
                .collect();
            let rows = maps.iter().enumerate().map(|(i, (m, s, _))| vec![i.to_string(), sign_name(*s).into(), m.canonical_hex()]).collect();
            Ok(Report { json: json!({ "seed": seed, "maps": out }), table: Some((vec!["index", "sign", "code"], rows)) })
        }
        SampleWhat::Ball { weights, radius, count, sign } => {
            let sol = solve(weights)?;
            let s = InfiniteMapSampler::new(&sol)?;
            let fixed = match sign.as_deref() {
                None => None,
                Some("positive") => Some(Sign::Positive),
                Some("negative") => Some(Sign::Negative),
                Some("null") => Some(Sign::Null),
                Some(o) => bail!("unknown sign {o:?}"),
            };
            let policy = WindowPolicy::default();
            let balls = run_jobs(seed, *count, 16, |rng| {
                Ok(match fixed {
                    Some(sg) => s.sample_ball_with_sign(rng, sg, *radius, &policy)?,
                    None => s.sample_ball(rng, *radius, &policy)?,
                })
            })?;
            let out: Vec<Value> = balls
                .iter()
                .map(|b| {
                    json!({
                        "map": b.ball.map.to_json(),
                        "code": b.ball.map.canonical_hex(),
                        "sign": sign_name(b.sign),
                        "window_depth": b.window_depth,
                        "stabilization_retries": 0,
                        "root_degree": b.ball.map.root_degree(),
                    })
                })
                .collect();
            let rows = balls
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    vec![
                        i.to_string(),
                        sign_name(b.sign).into(),
                        b.window_depth.to_string(),
                        b.ball.map.root_degree().to_string(),
                        b.ball.map.canonical_hex(),
                    ]
                })
                .collect();
            Ok(Report {
                json: json!({ "seed": seed, "radius": radius, "balls": out }),
                table: Some((vec!["index", "sign", "window_depth", "root_degree", "code"], rows)),
            })
        }
    }
}

fn convergence(a: &ConvergenceArgs, seed: u64) -> Result<Report> {
    match (&a.law, &a.weights) {
        (Some(law), None) => {
            let law = parse_law(law)?;
            let g = parse_gamma(a.gamma.as_deref(), law.k())?;
            let word = parse_word(&a.word, law.k())?;
            for &n in &a.sizes {
                harness::check_lattice(&law, &g, &word, n)?;
            }
            let pts = harness::tree_convergence(&law, &g, &word, a.radius, &a.sizes, a.samples, seed, ATTEMPT_CAP)?;
            let rows = pts.iter().map(|p| vec![p.size.to_string(), p.samples.to_string(), p.classes.to_string(), p.tv.to_string()]).collect();
            Ok(Report {
                json: json!({ "seed": seed, "height": a.radius, "points": pts }),
                table: Some((vec!["size", "samples", "classes", "tv"], rows)),
            })
        }
        (None, Some(w)) => {
            let sol = solve(w)?;
            let kind = parse_kind(&a.kind)?;
            let periods = periodicity::map_periods(&sol.weights)?;
            let (d, alpha) = periods.get(kind);
            if let Some(&n) = a.sizes.iter().find(|&&n| n % d != alpha % d) {
                bail!("size {n} is off the lattice {} + {d}Z", alpha % d);
            }
            let mut pts = Vec::new();
            for (i, &n) in a.sizes.iter().enumerate() {
                let s = job_rng(seed, i as u64).next_seed();
                pts.push(harness::map_convergence(&sol, kind, n, a.radius, a.samples, a.samples, s, &WindowPolicy::default(), ATTEMPT_CAP)?);
            }
            let rows = pts
                .iter()
                .map(|p| {
                    vec![
                        p.size.to_string(),
                        p.finite_samples.to_string(),
                        p.classes.to_string(),
                        p.tv.to_string(),
                        p.degree_tv.to_string(),
                        p.split_tv.to_string(),
                    ]
                })
                .collect();
            Ok(Report {
                json: json!({ "seed": seed, "radius": a.radius, "points": pts }),
                table: Some((vec!["size", "samples", "classes", "tv", "degree_tv", "split_tv"], rows)),
            })
        }
        _ => bail!("convergence needs exactly one of --law and --weights"),
    }
}

trait NextSeed {
    fn next_seed(self) -> u64;
}

impl NextSeed for rand_chacha::ChaCha8Rng {
    fn next_seed(mut self) -> u64 {
        rand::Rng::random(&mut self)
    }
}

fn render(report: &Report, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(&report.json)? + "\n"),
        Format::Csv => {
            let (header, rows) = report.table.as_ref().ok_or_else(|| anyhow!("this command has no CSV form"))?;
            let mut s = header.join(",") + "\n";
            for r in rows {
                let cells: Vec<String> = r
                    .iter()
                    .map(|c| if c.contains(',') || c.contains('"') { format!("\"{}\"", c.replace('"', "\"\"")) } else { c.clone() })
                    .collect();
                s += &(cells.join(",") + "\n");
            }
            Ok(s)
        }
    }
}

fn main() -> Result<()> {
    let mut cli = Cli::parse();
    if let Some(path) = cli.config.take() {
        let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
        let file: Cli = serde_json::from_str(&text).context("parsing config")?;
        cli = Cli {
            seed: cli.seed.or(file.seed),
            threads: cli.threads.or(file.threads),
            out: cli.out.or(file.out),
            format: cli.format.or(file.format),
            config: None,
            command: cli.command.or(file.command),
        };
    }
    let command = cli.command.as_ref().ok_or_else(|| anyhow!("no command given (see --help)"))?;
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("thread pool")?;
    }
    let report = run(command, cli.seed.unwrap_or(0))?;
    let text = render(&report, cli.format.unwrap_or(Format::Json))?;
    match &cli.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
