//! The `lions` command line: forest catalogs, identity verification, lifts,
//! law of large numbers runs and metric reports.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 on usage
//! or input errors. JSON goes to `--out` or stdout.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::empirical::{lln_experiment, substream, LlnConfig};
use crate::forest::{enumerate_forests, LionsForest, Truncation};
use crate::hopf::{
    antipode, antipode_geometric, check_antipode_identity, check_coassociativity, check_expectation_morphism, check_product_morphism,
    convolve, coproduct, iterated_reduced, Character, PreparedForest, Side,
};
use crate::metrics::{check_dual_conditions, k_constant, rho_estimate, AtomicLift, DualPair, NormEstimator, RhoOptions};
use crate::pathlift::{
    dual_edges, lift_character, Deterministic, FiniteSupport, LevyCiesielski, PathSampler, PiecewiseLinearPath, RandomWalk, SampleAssignment,
};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "lions", version, about = "Lions forests, coupled coproducts and lifts of piecewise-linear paths")]
pub struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct TruncArgs {
    #[arg(long, default_value_t = 4.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
}

impl TruncArgs {
    fn build(&self) -> Result<Truncation> {
        Truncation::new(self.gamma, self.alpha, self.beta, self.d)
    }
}

#[derive(Args, Debug, Clone, Copy)]
pub struct DualArgs {
    #[arg(long, default_value_t = 8.0)]
    pub qprime: f64,
    #[arg(long, default_value_t = 1.0)]
    pub p1: f64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Catalog of forest classes with keys, gradings and dual-forest edges.
    Enumerate {
        #[command(flatten)]
        trunc: TruncArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact coproduct identities and the sampled Hopf identity.
    HopfVerify {
        #[command(flatten)]
        trunc: TruncArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random characters for the sampled identity.
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Doubles one reduced term in the coproduct table (negative control).
        #[arg(long)]
        corrupt: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lift of CSV paths: the first file drives `h0`, the following files the
    /// hyperedges in order, the last one repeated as needed.
    Lift {
        #[command(flatten)]
        trunc: TruncArgs,
        #[arg(long = "paths", required = true)]
        paths: Vec<PathBuf>,
        /// JSON array of forests; defaults to the whole truncation.
        #[arg(long)]
        forests: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        s: f64,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical against mean-field lifts over a grid of population sizes.
    Lln {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        trunc: TruncArgs,
        #[command(flatten)]
        dual: DualArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replications per population size; overrides `replications` in the JSON file.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long = "grid-level")]
        grid_level: Option<usize>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Norms of a lifted character or the coupling metric between two atomic lifts.
    Metric {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        trunc: TruncArgs,
        #[command(flatten)]
        dual: DualArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte-Carlo samples per forest for norms.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long = "grid-level", default_value_t = 5)]
        grid_level: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Path laws accepted in spec files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    Deterministic { path: PiecewiseLinearPath },
    Finite { atoms: Vec<PiecewiseLinearPath> },
    RandomWalk { segments: usize, dim: usize, scale: f64 },
    LevyCiesielski { level: usize, dim: usize },
}

impl SamplerSpec {
    pub fn build(&self) -> Result<Box<dyn PathSampler>> {
        Ok(match self {
            SamplerSpec::Deterministic { path } => Box::new(Deterministic(path.clone())),
            SamplerSpec::Finite { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::EmptyInput("finite sampler without atoms".into()));
                }
                Box::new(FiniteSupport { atoms: atoms.clone() })
            }
            SamplerSpec::RandomWalk { segments, dim, scale } => {
                Box::new(RandomWalk { segments: (*segments).max(1), dim: *dim, scale: *scale })
            }
            SamplerSpec::LevyCiesielski { level, dim } => Box::new(LevyCiesielski { level: *level, dim: *dim }),
        })
    }
}

fn default_tag() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LlnSpec {
    pub sampler: SamplerSpec,
    /// Defaults to the two-node tree with its root in `h0` and its leaf in a hyperedge.
    #[serde(default)]
    pub trees: Option<Vec<LionsForest>>,
    #[serde(default = "default_tag")]
    pub tag: usize,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub atoms: usize,
    #[serde(default)]
    pub grid_level: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomSpec {
    pub zero: PiecewiseLinearPath,
    pub atoms: Vec<PiecewiseLinearPath>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MetricSpec {
    Rho { f: AtomSpec, g: AtomSpec, forests: Option<Vec<LionsForest>> },
    Norm { sampler: SamplerSpec, s: f64, t: f64 },
}

/// The two-node tree whose root is in `h0` and whose leaf forms a hyperedge.
pub fn mixed_two_node(label: usize) -> LionsForest {
    LionsForest::new(vec![None, Some(0)], vec![label, label], vec![0], vec![vec![1]]).expect("valid two-node tree")
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityResult {
    pub name: String,
    pub passed: bool,
    pub checked: usize,
    /// Largest residual for sampled identities, failure count for exact ones.
    pub worst: f64,
    pub failures: Vec<String>,
}

impl IdentityResult {
    fn exact(name: &str, checked: usize, failures: Vec<String>) -> Self {
        IdentityResult { name: name.into(), passed: failures.is_empty(), checked, worst: failures.len() as f64, failures }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HopfReport {
    pub truncation: Truncation,
    pub seed: u64,
    pub forests: usize,
    pub identities: Vec<IdentityResult>,
    pub passed: bool,
}

impl HopfReport {
    pub fn failed(&self) -> Vec<&str> {
        self.identities.iter().filter(|i| !i.passed).map(|i| i.name.as_str()).collect()
    }
}

#[derive(Clone, Debug)]
struct TableTerm {
    left: LionsForest,
    right: LionsForest,
    mult: usize,
}

/// Coproducts by class, with couplings forgotten.
#[derive(Clone, Debug, Default)]
pub struct CoproductTable {
    entries: BTreeMap<String, (LionsForest, Vec<TableTerm>)>,
}

impl CoproductTable {
    /// Every forest of `forests` and every part reachable from their coproducts.
    pub fn build(forests: &[LionsForest]) -> Self {
        let mut table = CoproductTable::default();
        let mut todo: Vec<LionsForest> = forests.to_vec();
        while let Some(f) = todo.pop() {
            let key = f.key().0;
            if table.entries.contains_key(&key) {
                continue;
            }
            let mut agg: BTreeMap<(String, String), TableTerm> = BTreeMap::new();
            for (t, m) in coproduct(&f).iter() {
                let (l, r) = (t.left().clone(), t.right().clone());
                let e = agg.entry((l.key().0, r.key().0)).or_insert(TableTerm { left: l.clone(), right: r.clone(), mult: 0 });
                e.mult += m;
                for p in [l, r] {
                    if !table.entries.contains_key(&p.key().0) {
                        todo.push(p);
                    }
                }
            }
            table.entries.insert(key, (f, agg.into_values().collect()));
        }
        table
    }

    /// Doubles the first reduced term of the largest forest.
    pub fn corrupt(&mut self) {
        let target = self.entries.iter().max_by_key(|(k, (f, _))| (f.len(), std::cmp::Reverse((*k).clone()))).map(|(k, _)| k.clone());
        if let Some(k) = target {
            let terms = &mut self.entries.get_mut(&k).expect("entry").1;
            if let Some(t) = terms.iter_mut().find(|t| !t.left.is_empty() && !t.right.is_empty()) {
                t.mult *= 2;
            }
        }
    }

    fn terms(&self, f: &LionsForest) -> &[TableTerm] {
        &self.entries[&f.key().0].1
    }

    fn triples(&self, f: &LionsForest, left_first: bool) -> BTreeMap<(String, String, String), usize> {
        let mut out = BTreeMap::new();
        for t in self.terms(f) {
            let (inner, outer) = if left_first { (&t.left, &t.right) } else { (&t.right, &t.left) };
            for s in self.terms(inner) {
                let key = if left_first {
                    (s.left.key().0, s.right.key().0, outer.key().0)
                } else {
                    (outer.key().0, s.left.key().0, s.right.key().0)
                };
                *out.entry(key).or_insert(0) += t.mult * s.mult;
            }
        }
        out
    }
}

/// Runs every identity over the forests of `trunc`, the table-driven ones on `table`.
pub fn hopf_verify(trunc: &Truncation, table: &CoproductTable, characters: usize, seed: u64) -> Result<HopfReport> {
    let forests = enumerate_forests(trunc);
    let mut ids = Vec::new();
    let keyed = |f: &LionsForest| f.key().0;

    let fail: Vec<String> = forests.iter().filter(|f| !check_coassociativity(f)).map(keyed).collect();
    ids.push(IdentityResult::exact("coassociativity", forests.len(), fail));

    let fail: Vec<String> = forests.iter().filter(|f| table.triples(f, true) != table.triples(f, false)).map(keyed).collect();
    ids.push(IdentityResult::exact("coassociativity (class table)", forests.len(), fail));

    let fail: Vec<String> = forests
        .iter()
        .filter(|f| {
            let k = f.key().0;
            let terms = table.terms(f);
            let with_unit: Vec<&TableTerm> = terms.iter().filter(|t| t.left.is_empty() || t.right.is_empty()).collect();
            let ok = |left_unit: bool| {
                with_unit
                    .iter()
                    .filter(|t| if left_unit { t.left.is_empty() } else { t.right.is_empty() })
                    .map(|t| (t.mult, if left_unit { t.right.key().0 } else { t.left.key().0 }))
                    .collect::<Vec<_>>()
                    == vec![(1, k.clone())]
            };
            if f.is_empty() {
                !(terms.len() == 1 && terms[0].mult == 1)
            } else {
                !(ok(true) && ok(false))
            }
        })
        .map(keyed)
        .collect();
    ids.push(IdentityResult::exact("counit", forests.len(), fail));

    let fail: Vec<String> = forests
        .iter()
        .filter(|f| {
            let (k, n) = f.grading();
            table.terms(f).iter().any(|t| {
                let (a, b) = (t.left.grading(), t.right.grading());
                a.0 + b.0 != k || a.1 + b.1 != n
            })
        })
        .map(keyed)
        .collect();
    ids.push(IdentityResult::exact("grading", forests.len(), fail));

    let mut fail = Vec::new();
    for f in forests.iter().filter(|f| !f.is_empty()) {
        if !iterated_reduced(f, f.len() + 1)?.is_empty() {
            fail.push(keyed(f));
        }
    }
    ids.push(IdentityResult::exact("conilpotency", forests.len(), fail));

    let fail: Vec<String> = forests.iter().filter(|f| !check_antipode_identity(f)).map(keyed).collect();
    ids.push(IdentityResult::exact("antipode equality", forests.len(), fail));

    let fail: Vec<String> = forests.iter().filter(|f| !check_expectation_morphism(f)).map(keyed).collect();
    ids.push(IdentityResult::exact("expectation morphism", forests.len(), fail));

    let mut checked = 0;
    let mut fail = Vec::new();
    for a in forests.iter().filter(|f| !f.is_empty()) {
        for b in forests.iter().filter(|f| !f.is_empty()) {
            if a.len() + b.len() <= trunc.max_nodes() && trunc.admits(&a.product(b)) {
                checked += 1;
                if !check_product_morphism(a, b) {
                    fail.push(format!("{} * {}", a.key(), b.key()));
                }
            }
        }
    }
    ids.push(IdentityResult::exact("product morphism", checked, fail));

    ids.push(sampled_hopf_identity(trunc, &forests, characters, 100, seed)?);

    let passed = ids.iter().all(|i| i.passed);
    Ok(HopfReport { truncation: *trunc, seed, forests: forests.len(), identities: ids, passed })
}

/// Worst `|⟨f ∗ S f − ε, T⟩|` and worst gap between the geometric and
/// Bogoliubov antipodes over lifted characters of random intervals.
pub fn sampled_hopf_identity(trunc: &Truncation, forests: &[LionsForest], characters: usize, samples: usize, seed: u64) -> Result<IdentityResult> {
    let sampler = RandomWalk { segments: 4, dim: trunc.d.max(1), scale: 1.0 };
    let mut worst: f64 = 0.0;
    let mut worst_geo: f64 = 0.0;
    let mut checked = 0;
    for c in 0..characters {
        let mut rng = substream(seed, c as u64);
        let s: f64 = rng.random_range(0.0..0.5);
        let t: f64 = rng.random_range(0.5..1.0);
        let f = lift_character(*trunc, s, t)?;
        let sl = antipode(&f, Side::Left);
        let sr = antipode(&f, Side::Right);
        let geo = antipode_geometric(&f);
        let left = convolve(&f, &sl)?;
        let right = convolve(&sr, &f)?;
        for tree in forests {
            let prep = PreparedForest::new(tree)?;
            for _ in 0..samples {
                let smp = SampleAssignment::draw(tree, &sampler, &mut rng);
                let e = if tree.is_empty() { 1.0 } else { 0.0 };
                let vals = Character::eval_prepared(&[&left, &right, &geo, &sl], &prep, &smp)?;
                for v in &vals[..2] {
                    worst = worst.max(v.data.iter().enumerate().map(|(i, x)| (x - if i == 0 { e } else { 0.0 }).abs()).fold(0.0, f64::max));
                }
                worst_geo = worst_geo.max(vals[2].max_abs_diff(&vals[3]));
                checked += 1;
            }
        }
    }
    let mut failures = Vec::new();
    if worst > 1e-10 {
        failures.push(format!("|f * S f - e| = {worst:e} > 1e-10"));
    }
    if worst_geo > 1e-12 {
        failures.push(format!("geometric against Bogoliubov antipode: {worst_geo:e} > 1e-12"));
    }
    Ok(IdentityResult { name: "hopf identity (sampled)".into(), passed: failures.is_empty(), checked, worst: worst.max(worst_geo), failures })
}

/// Catalog entries: key, forest, grading, weight and dual-forest edges.
pub fn catalog(trunc: &Truncation) -> Value {
    let entries: Vec<Value> = enumerate_forests(trunc)
        .iter()
        .map(|f| {
            let (k, n) = f.grading();
            json!({
                "key": f.key().0,
                "forest": f,
                "grading": [k, n],
                "weight": f.weight(trunc.alpha, trunc.beta),
                "dual_edges": dual_edges(f),
            })
        })
        .collect();
    json!({ "truncation": trunc, "count": entries.len(), "forests": entries })
}

fn read_json<T: for<'de> Deserialize<'de>>(p: &PathBuf) -> Result<T> {
    let text = fs::read_to_string(p)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), msg: format!("{}: {e}", p.display()) })
}

fn emit(v: &Value, out: &Option<PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn lift_report(trunc: &Truncation, paths: &[PiecewiseLinearPath], forests: &[LionsForest], s: f64, t: f64) -> Result<Value> {
    let ch = lift_character(*trunc, s, t)?;
    let mut out = Vec::new();
    for f in forests {
        let hyper = (0..f.hyperedges().len()).map(|k| paths[(k + 1).min(paths.len() - 1)].clone()).collect();
        let smp = SampleAssignment::new(paths[0].clone(), hyper);
        let v = ch.eval(f, &smp)?;
        out.push(json!({ "key": f.key().0, "forest": f, "value": v }));
    }
    Ok(json!({ "truncation": trunc, "s": s, "t": t, "lifts": out }))
}

fn run_lln(spec: &LlnSpec, trunc: Truncation, dual: DualArgs, seed: u64, samples: Option<usize>, grid_level: Option<usize>) -> Result<crate::empirical::LlnTable> {
    let sampler = spec.sampler.build()?;
    let pair = DualPair::new(dual.p1, dual.qprime, &trunc)?;
    let trees = spec.trees.clone().unwrap_or_else(|| vec![mixed_two_node(1)]);
    let cfg = LlnConfig {
        trees,
        tag: spec.tag,
        n_grid: spec.n_grid.clone(),
        replications: samples.unwrap_or(spec.replications),
        atoms: spec.atoms,
        pair,
        rho: RhoOptions { alpha: trunc.alpha, beta: trunc.beta, grid_level: grid_level.or(spec.grid_level).unwrap_or(5), exhaustive_max: 8 },
        trunc,
        seed,
    };
    lln_experiment(sampler.as_ref(), &cfg)
}

#[allow(clippy::too_many_arguments)]
fn run_metric(spec: &MetricSpec, trunc: Truncation, dual: DualArgs, seed: u64, samples: usize, grid_level: usize) -> Result<Value> {
    let pair = DualPair::new(dual.p1, dual.qprime, &trunc)?;
    match spec {
        MetricSpec::Rho { f, g, forests } => {
            let lift = |a: &AtomSpec| AtomicLift::geometric(trunc, Arc::new(a.zero.clone()), a.atoms.iter().cloned().map(Arc::new).collect());
            let forests = forests.clone().unwrap_or_else(|| enumerate_forests(&trunc));
            let opts = RhoOptions { alpha: trunc.alpha, beta: trunc.beta, grid_level, exhaustive_max: 8 };
            let r = rho_estimate(&lift(f), &lift(g), &forests, &pair, &opts)?;
            Ok(json!({
                "value": r.value,
                "stderr": 0.0,
                "coupling": r.permutation,
                "identity_value": r.identity_value,
                "exhaustive": r.exhaustive,
                "upper_bound": true,
                "grid_level": grid_level,
                "seed": seed,
                "parameters": { "truncation": trunc, "dual": pair },
            }))
        }
        MetricSpec::Norm { sampler, s, t } => {
            let smp = sampler.build()?;
            let est = NormEstimator::new(trunc, pair, smp.as_ref(), samples, seed)?;
            let f = lift_character(trunc, *s, *t)?;
            let cc = est.cc_norm(&f)?;
            let levels: Vec<Value> = est.bnorms(&f)?.into_iter().map(|e| json!(e)).collect();
            let eq = est.equivalence_check(&f)?;
            Ok(json!({
                "value": cc.value,
                "stderr": cc.stderr,
                "coupling": null,
                "grid_level": null,
                "seed": seed,
                "triple_norm": est.triple_norm(&f)?,
                "bnorm_levels": levels,
                "equivalence": eq,
                "k_constant": k_constant(&pair, &trunc),
                "dual_conditions": check_dual_conditions(&pair, &trunc),
                "parameters": { "truncation": trunc, "dual": pair, "samples": samples, "s": s, "t": t },
            }))
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Enumerate { trunc, out } => {
            emit(&catalog(&trunc.build()?), &out)?;
            Ok(0)
        }
        Command::HopfVerify { trunc, seed, samples, corrupt, out } => {
            let tr = trunc.build()?;
            let mut table = CoproductTable::build(&enumerate_forests(&tr));
            if corrupt {
                table.corrupt();
            }
            let rep = hopf_verify(&tr, &table, samples, seed)?;
            emit(&serde_json::to_value(&rep)?, &out)?;
            for id in rep.identities.iter().filter(|i| !i.passed) {
                eprintln!("FAIL {}: {}", id.name, id.failures.first().map(String::as_str).unwrap_or(""));
            }
            Ok(if rep.passed { 0 } else { 1 })
        }
        Command::Lift { trunc, paths, forests, s, t, out } => {
            let tr = trunc.build()?;
            let ps: Vec<PiecewiseLinearPath> =
                paths.iter().map(|p| PiecewiseLinearPath::read_csv(BufReader::new(fs::File::open(p)?))).collect::<Result<_>>()?;
            let fs_list = match forests {
                Some(p) => read_json::<Vec<LionsForest>>(&p)?,
                None => enumerate_forests(&tr),
            };
            emit(&lift_report(&tr, &ps, &fs_list, s, t)?, &out)?;
            Ok(0)
        }
        Command::Lln { spec, trunc, dual, seed, samples, grid_level, csv, out } => {
            let spec: LlnSpec = read_json(&spec)?;
            let table = run_lln(&spec, trunc.build()?, dual, seed, samples, grid_level)?;
            if let Some(p) = csv {
                fs::write(p, table.to_csv())?;
            }
            let v = json!({ "table": table, "spec": spec, "parameters": { "truncation": trunc.build()?, "qprime": dual.qprime, "p1": dual.p1 } });
            emit(&v, &out)?;
            Ok(if table.endpoint_confident { 0 } else { 1 })
        }
        Command::Metric { spec, trunc, dual, seed, samples, grid_level, out } => {
            let spec: MetricSpec = read_json(&spec)?;
            emit(&run_metric(&spec, trunc.build()?, dual, seed, samples, grid_level)?, &out)?;
            Ok(0)
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("thread pool already initialised");
        }
    }
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
