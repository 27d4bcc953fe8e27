//! Scenario assembly and the studies the CLI exposes: measure verification,
//! goodness statistics, corona reports, the full decomposition suite, the
//! testing-constant-versus-norm study and decay tables.
//!
//! Every study is deterministic in the scenario seed and returns a
//! serializable report embedding the resolved parameters; the CLI layer only
//! parses flags, writes files and maps failed checks to exit codes.

use crate::corona::{
    build_stopping_tree, carleson_violations, layers, quasi_orthogonality,
    sigma_estimate_violations, sparseness_violations, StoppingTree,
};
use crate::decomposition::{
    decay_diagnostics, expand_form, inside_split, paraproduct_regroup, partition_check, perturb,
    surgery, DecayTable, InsideSplit, PairClass, PairingEngine, Side,
};
use crate::goodness::{BadnessEstimator, BadnessStats, GammaValue, GoodnessContext};
use crate::grid::{DyadicGrid, GridIndex};
use crate::interval::ParamValue;
use crate::martingale::{expand, MartingaleExpansion, SupportFunction};
use crate::measure::{
    builtin, calibrate_dominating, verify_upper_doubling, DoublingReport, Measure,
};
use crate::operator::{
    containment_and_kernel_difference_check, default_cube_family, off_diagonal_check,
    operator_norm, testing_constant, verify_kernel, Kernel, OperatorMatrix,
};
use crate::real::{Arith, Real};
use crate::rng::Rng;
use crate::{CzError, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Deterministic indexed parallel map: results come back in input order
/// regardless of scheduling, so batched reports are bit-stable.
pub fn parallel_map<T: Send, U: Send>(
    items: Vec<T>,
    threads: Option<usize>,
    f: impl Fn(T) -> U + Sync,
) -> Vec<U> {
    let workers = threads
        .or_else(|| {
            std::env::var("CZLAB_THREADS").ok().and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
        })
        .max(1)
        .min(items.len().max(1));
    if workers == 1 {
        return items.into_iter().map(f).collect();
    }
    let items: Vec<std::sync::Mutex<Option<T>>> =
        items.into_iter().map(|t| std::sync::Mutex::new(Some(t))).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut results: Vec<Option<U>> = (0..items.len()).map(|_| None).collect();
    let slots: Vec<std::sync::Mutex<&mut Option<U>>> =
        results.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let item = items[i].lock().unwrap().take().expect("unclaimed item");
                let out = f(item);
                **slots[i].lock().unwrap() = Some(out);
            });
        }
    });
    drop(slots);
    results.into_iter().map(|r| r.expect("worker filled slot")).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind")]
pub enum MeasureSpec {
    #[serde(rename = "uniform-1d")]
    Uniform1d { m: u32 },
    #[serde(rename = "uniform-2d")]
    Uniform2d { m: u32 },
    #[serde(rename = "cantor-third")]
    CantorThird { level: u32 },
    #[serde(rename = "cantor-quarter-2d")]
    CantorQuarter2d { level: u32 },
    #[serde(rename = "file")]
    File { path: String },
}

impl MeasureSpec {
    pub fn build(&self) -> Result<Measure> {
        match self {
            MeasureSpec::Uniform1d { m } => builtin::uniform_1d(*m),
            MeasureSpec::Uniform2d { m } => builtin::uniform_2d(*m),
            MeasureSpec::CantorThird { level } => builtin::cantor_third(*level),
            MeasureSpec::CantorQuarter2d { level } => builtin::cantor_quarter_2d(*level),
            MeasureSpec::File { path } => {
                let text = std::fs::read_to_string(path)?;
                Measure::parse(&text)
            }
        }
    }
}

/// Exponent values in scenarios: a plain number (an exact dyadic via `f64`)
/// or the string `"log2/log3"` for the Cantor dimension.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ExponentSpec {
    Number(f64),
    Named(String),
}

impl ExponentSpec {
    pub fn to_param(&self) -> Result<ParamValue> {
        match self {
            ExponentSpec::Number(v) => {
                if !v.is_finite() || *v < 0.0 {
                    return Err(CzError::Parse(format!("bad exponent {v}")));
                }
                Ok(ParamValue::from_f64(*v))
            }
            ExponentSpec::Named(s) if s == "log2/log3" => {
                Ok(ParamValue::LogRatio { a: 2, b: 3 })
            }
            ExponentSpec::Named(s) => Err(CzError::Parse(format!(
                "unknown exponent {s:?}; use a number or \"log2/log3\""
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind")]
pub enum KernelSpec {
    #[serde(rename = "zero")]
    Zero,
    #[serde(rename = "constant")]
    Constant { value: f64 },
    #[serde(rename = "sign-power")]
    SignPower { s: ExponentSpec },
    #[serde(rename = "riesz-2d")]
    Riesz2d { s: ExponentSpec },
}

/// A fully resolved experiment scenario. Every report embeds it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: u32,
    pub measure: MeasureSpec,
    pub kernel: KernelSpec,
    pub p1: f64,
    /// dual exponent; derived as `p1/(p1-1)` unless overridden
    pub p2: Option<f64>,
    pub r: u32,
    /// η as a rational `num/den`
    pub eta: (i64, i64),
    /// optional goodness-parameter override `num/den`; the derived value
    /// satisfies the constraint pair but starves good cubes at desk scale
    pub gamma_override: Option<(i64, i64)>,
    pub upsilon: (i64, i64),
    pub epsilon: (i64, i64),
    pub seed: u64,
    pub samples: u32,
    pub arith: Arith,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            schema: 1,
            measure: MeasureSpec::Uniform1d { m: 256 },
            kernel: KernelSpec::SignPower { s: ExponentSpec::Number(1.0) },
            p1: 2.0,
            p2: None,
            r: 3,
            eta: (1, 1),
            gamma_override: None,
            upsilon: (1, 4),
            epsilon: (1, 8),
            seed: 7,
            samples: 2000,
            arith: Arith::Rational,
        }
    }
}

impl Scenario {
    pub fn p2(&self) -> f64 {
        self.p2.unwrap_or(self.p1 / (self.p1 - 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.p1 <= 1.0 || !self.p1.is_finite() {
            return Err(CzError::Contract("p1 must lie in (1, ∞)".into()));
        }
        if self.r < 1 {
            return Err(CzError::Contract("r must be ≥ 1".into()));
        }
        for (name, (num, den)) in
            [("upsilon", self.upsilon), ("epsilon", self.epsilon)]
        {
            if !(0 < num && num < den) {
                return Err(CzError::Contract(format!("{name} must lie in (0,1)")));
            }
        }
        if self.eta.0 <= 0 || self.eta.1 <= 0 || self.eta.0 > self.eta.1 {
            return Err(CzError::Contract("η must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn eta_rational(&self) -> BigRational {
        BigRational::new(BigInt::from(self.eta.0), BigInt::from(self.eta.1))
    }
}

/// A fully wired instance: measure, kernel, operator, grids, goodness
/// context, perturbed functions, expansions and stopping trees.
pub struct Instance<R: Real> {
    pub scenario: Scenario,
    pub measure: Arc<Measure>,
    pub kernel: Arc<Kernel>,
    pub op: OperatorMatrix<R>,
    pub engine: PairingEngine<R>,
    pub indices: [GridIndex; 2],
    pub grid3: Arc<DyadicGrid>,
    pub ctx: Arc<GoodnessContext>,
    pub doubling: DoublingReport,
    pub f_tilde: [SupportFunction<R>; 2],
    pub f: [SupportFunction<R>; 2],
    pub exps: [MartingaleExpansion<R>; 2],
    pub trees: [StoppingTree<R>; 2],
}

fn j_upsilon(upsilon: (i64, i64)) -> i32 {
    // the unique j with υ/64 ≤ 2^j < υ/32
    let u = upsilon.0 as f64 / upsilon.1 as f64;
    let mut j = (u / 64.0).log2().ceil() as i32;
    loop {
        let p = (j as f64).exp2();
        if p >= u / 64.0 && p < u / 32.0 {
            return j;
        }
        if p < u / 64.0 {
            j += 1;
        } else {
            j -= 1;
        }
    }
}

pub fn build_kernel(scenario: &Scenario, measure: &Measure) -> Result<Kernel> {
    let radii = measure.default_radii();
    Ok(match &scenario.kernel {
        KernelSpec::Zero => {
            let lam = calibrate_dominating(measure, ParamValue::rational_i64(1, 1), &radii)?;
            Kernel::zero(lam)
        }
        KernelSpec::Constant { value } => {
            let lam = calibrate_dominating(measure, ParamValue::rational_i64(1, 1), &radii)?;
            // |K| λ(diam) caps the size constant on the support
            let diam = measure.diameter().to_f64().max(1.0);
            let c_size = value.abs() * lam.eval(measure.pos(0), 2.0 * diam);
            Kernel::constant(*value, c_size, lam)
        }
        KernelSpec::SignPower { s } => {
            if measure.dim() != 1 {
                return Err(CzError::Contract("sign-power kernel is 1D".into()));
            }
            let lam = calibrate_dominating(measure, s.to_param()?, &radii)?;
            Kernel::sign_power(lam)
        }
        KernelSpec::Riesz2d { s } => {
            if measure.dim() != 2 {
                return Err(CzError::Contract("riesz-2d kernel is 2D".into()));
            }
            let lam = calibrate_dominating(measure, s.to_param()?, &radii)?;
            Kernel::riesz_2d(lam)
        }
    })
}

pub fn build_instance<R: Real>(scenario: &Scenario) -> Result<Instance<R>> {
    scenario.validate()?;
    let measure = Arc::new(scenario.measure.build()?);
    let kernel = Arc::new(build_kernel(scenario, &measure)?);
    let radii = measure.default_radii();
    let doubling = verify_upper_doubling(&measure, &kernel.lambda, &radii)?;
    if !doubling.pass {
        return Err(CzError::Invariant(format!(
            "dominating function failed verification (worst {})",
            doubling.worst_ratio
        )));
    }
    let level_min = measure.resolving_level() - 1;
    let level_max = 2;
    let g1 = Arc::new(DyadicGrid::over_measure(
        scenario.seed,
        1,
        &measure,
        level_min,
        level_max,
    )?);
    let g2 = Arc::new(DyadicGrid::over_measure(
        scenario.seed ^ 0x9e37_79b9,
        2,
        &measure,
        level_min,
        level_max,
    )?);
    // the third grid must reach the surgery layer level for the finest child
    let g3_min = level_min + j_upsilon(scenario.upsilon) - 2;
    let g3 = Arc::new(DyadicGrid::free(crate::grid::sample_shift(
        scenario.seed ^ 0x51ed_270b,
        3,
        measure.dim(),
        g3_min,
        level_max,
    )));
    let gamma = match scenario.gamma_override {
        None => crate::goodness::derive_gamma(&kernel.lambda.dimension, &scenario.eta_rational()),
        Some((num, den)) => GammaValue::Exact(BigRational::new(
            BigInt::from(num),
            BigInt::from(den),
        )),
    };
    let ctx = Arc::new(GoodnessContext::with_gamma(
        scenario.r,
        scenario.eta_rational(),
        kernel.lambda.dimension.clone(),
        gamma,
        [g1.clone(), g2.clone()],
    ));
    let idx1 = GridIndex::new(g1, measure.clone());
    let idx2 = GridIndex::new(g2, measure.clone());
    let op = OperatorMatrix::build(measure.clone(), kernel.clone())?;
    let engine = PairingEngine::new(&op);
    // test functions: heavy-tailed seeded dyadic rationals, so the stopping
    // trees have several generations and the deep regroup branches fire
    let n = measure.len();
    let mut rng1 = Rng::fork(scenario.seed, 0xf1);
    let mut rng2 = Rng::fork(scenario.seed, 0xf2);
    let ft1 = SupportFunction::from_fn(n, |_| R::from_f64_lossless(rng1.next_heavy_dyadic(16)));
    let ft2 = SupportFunction::from_fn(n, |_| R::from_f64_lossless(rng2.next_heavy_dyadic(16)));
    let (f1, _) = perturb(&ft1, &idx1, &ctx)?;
    let (f2, _) = perturb(&ft2, &idx2, &ctx)?;
    let exp1 = expand(&f1, &idx1)?;
    let exp2 = expand(&f2, &idx2)?;
    let tree1 = build_stopping_tree(&f1, &idx1, &ctx)?;
    let tree2 = build_stopping_tree(&f2, &idx2, &ctx)?;
    Ok(Instance {
        scenario: scenario.clone(),
        measure,
        kernel,
        op,
        engine,
        indices: [idx1, idx2],
        grid3: g3,
        ctx,
        doubling,
        f_tilde: [ft1, ft2],
        f: [f1, f2],
        exps: [exp1, exp2],
        trees: [tree1, tree2],
    })
}

/// One named check outcome; studies collect these instead of panicking.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn ok(name: &str, detail: String) -> Self {
        Check { name: name.into(), pass: true, detail }
    }
    fn fail(name: &str, detail: String) -> Self {
        Check { name: name.into(), pass: false, detail }
    }
    fn from_result<T>(name: &str, r: &Result<T>, detail: impl FnOnce(&T) -> String) -> Self {
        match r {
            Ok(v) => Check::ok(name, detail(v)),
            Err(e) => Check::fail(name, e.to_string()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecomposeReport {
    pub schema: u32,
    pub scenario: Scenario,
    pub exact_mode: bool,
    pub residual_rel: f64,
    pub direct: f64,
    pub pairs_total: usize,
    pub inside_pairs: usize,
    pub separated_pairs: usize,
    pub nearby_pairs: usize,
    pub surgery_calls: usize,
    pub eps_count: usize,
    pub max_abs_eps: f64,
    pub partition_pairs: usize,
    pub partition_violations: usize,
    pub checks: Vec<Check>,
    pub decay: DecayTable,
    /// per-pair ledger rows for offline analysis; written as CSV, not JSON
    #[serde(skip)]
    pub pairs_csv: String,
}

impl DecomposeReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// The full decomposition suite on one instance: ledger reconstruction, the
/// partition, inside splits and regroupings on both triangles, ε checks, and
/// surgery on every nearby pair.
pub fn run_decompose(scenario: &Scenario) -> Result<DecomposeReport> {
    match scenario.arith {
        Arith::Rational => decompose_impl::<BigRational>(scenario),
        Arith::Float => decompose_impl::<f64>(scenario),
    }
}

fn decompose_impl<R: Real>(scenario: &Scenario) -> Result<DecomposeReport> {
    let inst: Instance<R> = build_instance(scenario)?;
    let mut checks = Vec::new();

    // perturbation residue: f̃ - f is exactly the bad-cube projection
    for side in 0..2 {
        let exp_tilde = expand(&inst.f_tilde[side], &inst.indices[side])?;
        let mut bad_sum = SupportFunction::zero(inst.measure.len());
        for d in exp_tilde.deltas.values() {
            if !inst.ctx.is_good(&d.cube) {
                bad_sum = bad_sum.add(&d.to_support(&inst.indices[side]));
            }
        }
        let resid = inst.f_tilde[side].sub(&inst.f[side]).sub(&bad_sum);
        let ok = resid.values.iter().all(|v| v.is_zero())
            || resid.max_abs_f64() <= 1e-10;
        checks.push(if ok {
            Check::ok("perturbation-residue", format!("side {side}"))
        } else {
            Check::fail(
                "perturbation-residue",
                format!("side {side}: max {}", resid.max_abs_f64()),
            )
        });
    }

    let sides0 = Side { f: &inst.f[0], exp: &inst.exps[0], index: &inst.indices[0] };
    let sides1 = Side { f: &inst.f[1], exp: &inst.exps[1], index: &inst.indices[1] };
    let ledger = expand_form(&inst.op, &inst.engine, [&sides0, &sides1], &inst.ctx)?;
    checks.push(Check::ok(
        "ledger-reconstruction",
        format!(
            "residual_rel {} exact {}",
            ledger.residual_rel,
            R::EXACT && ledger.reconstruction_exact()
        ),
    ));

    // inside split + ε + paraproduct regroup per triangle
    let mut splits: Vec<Option<InsideSplit<R>>> = vec![None, None];
    let mut eps_count = 0usize;
    let mut max_abs_eps = 0.0f64;
    for (ti, tri) in ledger.triangles.iter().enumerate() {
        let big = tri.big_side;
        let small = 1 - big;
        let split = inside_split(
            tri,
            &inst.engine,
            &inst.exps[big],
            &inst.trees[big],
            &inst.indices[big],
            &inst.exps[small],
            &inst.indices[small],
        );
        checks.push(Check::from_result(
            &format!("inside-split[{}]", tri.label),
            &split,
            |s| {
                format!(
                    "pairs {} para {} stop {} error {} pointwise {}",
                    s.details.len(),
                    s.b_para.to_f64(),
                    s.b_stop.to_f64(),
                    s.b_error.to_f64(),
                    s.pointwise_checked
                )
            },
        ));
        if let Ok(split) = split {
            let regroup = paraproduct_regroup(
                &split,
                &inst.op,
                &inst.trees[big],
                &inst.trees[small],
                &inst.f[big],
                &inst.indices[big],
                &inst.indices[small],
                &inst.exps[small],
                &inst.ctx,
                tri.transpose,
            );
            checks.push(Check::from_result(
                &format!("paraproduct-regroup[{}]", tri.label),
                &regroup,
                |r| {
                    format!(
                        "buckets ⊄ {} ⊂ {} ε-pairs {} max|ε| {}",
                        r.buckets_not_subset, r.buckets_subset, r.eps_count, r.max_abs_eps
                    )
                },
            ));
            if let Ok(r) = &regroup {
                eps_count += r.eps_count;
                max_abs_eps = max_abs_eps.max(r.max_abs_eps);
            }
            // layer families and the layer lemma
            let base_members: Vec<(usize, usize)> = split
                .details
                .iter()
                .filter_map(|d| {
                    match inst.trees[small]
                        .stopping_parent_box(&d.small.as_box(), &inst.indices[small])
                    {
                        crate::corona::StopRef::Node(r_node) => Some((d.stop_node, r_node)),
                        crate::corona::StopRef::WholeSpace => None,
                    }
                })
                .collect();
            let layers_out = layers(
                &inst.trees[big],
                &inst.trees[small],
                &base_members,
                inst.scenario.r,
            );
            checks.push(if layers_out.violations.is_empty() {
                Check::ok(
                    &format!("layer-lemma[{}]", tri.label),
                    format!(
                        "families {} members {}",
                        layers_out.families.len(),
                        layers_out.members_total
                    ),
                )
            } else {
                Check::fail(
                    &format!("layer-lemma[{}]", tri.label),
                    layers_out.violations.join("; "),
                )
            });
            splits[ti] = Some(split);
        }
    }

    // surgery on every nearby pair, all child-slot combinations
    let mut surgery_calls = 0usize;
    let mut surgery_fail: Option<String> = None;
    for tri in &ledger.triangles {
        let big = tri.big_side;
        let small = 1 - big;
        let n_children = 1usize << inst.measure.dim();
        for term in tri.terms.iter().filter(|t| t.class == PairClass::Nearby) {
            for i_slot in 0..n_children {
                for j_slot in 0..n_children {
                    match surgery(
                        &inst.op,
                        &inst.engine,
                        &inst.indices[big],
                        &inst.indices[small],
                        &term.big,
                        &term.small,
                        i_slot,
                        j_slot,
                        inst.scenario.upsilon,
                        inst.scenario.epsilon,
                        &inst.grid3,
                        tri.transpose,
                    ) {
                        Ok(_) => surgery_calls += 1,
                        Err(e) => {
                            surgery_fail.get_or_insert_with(|| e.to_string());
                        }
                    }
                }
            }
        }
    }
    checks.push(match surgery_fail {
        None => Check::ok("surgery-identities", format!("{surgery_calls} child pairs")),
        Some(e) => Check::fail("surgery-identities", e),
    });

    // exhaustive partition over all good cubes
    let part = partition_check(
        &inst.ctx,
        &inst.indices[0].grid,
        &inst.indices[1].grid,
        inst.scenario.r,
    );
    checks.push(if part.violations == 0 {
        Check::ok(
            "partition",
            format!("good {}×{} pairs {}", part.good_big, part.good_small, part.pairs),
        )
    } else {
        Check::fail("partition", format!("{} violations", part.violations))
    });

    let decay = decay_diagnostics(&ledger.triangles[0], splits[0].as_ref(), &inst.ctx);
    let pairs_csv = crate::decomposition::ledger_pairs_csv(&ledger);
    let tri0 = &ledger.triangles[0];
    let tri1 = &ledger.triangles[1];
    let count = |t: &crate::decomposition::TriangleLedger<R>, c: PairClass| {
        t.terms.iter().filter(|x| x.class == c).count()
    };
    Ok(DecomposeReport {
        schema: 1,
        scenario: scenario.clone(),
        exact_mode: R::EXACT,
        residual_rel: ledger.residual_rel,
        direct: ledger.direct.to_f64(),
        pairs_total: tri0.terms.len() + tri1.terms.len(),
        inside_pairs: count(tri0, PairClass::Inside) + count(tri1, PairClass::Inside),
        separated_pairs: count(tri0, PairClass::Separated) + count(tri1, PairClass::Separated),
        nearby_pairs: count(tri0, PairClass::Nearby) + count(tri1, PairClass::Nearby),
        surgery_calls,
        eps_count,
        max_abs_eps,
        partition_pairs: part.pairs,
        partition_violations: part.violations,
        checks,
        decay,
        pairs_csv,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureReport {
    pub schema: u32,
    pub scenario: Scenario,
    pub atoms: usize,
    pub total_mass: f64,
    pub diameter: f64,
    pub doubling: DoublingReport,
    pub kernel: crate::operator::KernelReport,
    pub checks: Vec<Check>,
}

pub fn run_verify_measure(scenario: &Scenario) -> Result<MeasureReport> {
    let measure = Arc::new(scenario.measure.build()?);
    let kernel = build_kernel(scenario, &measure)?;
    let radii = measure.default_radii();
    let doubling = verify_upper_doubling(&measure, &kernel.lambda, &radii)?;
    let krep = verify_kernel(&kernel, &measure, 4000, scenario.seed)?;
    let mut checks = Vec::new();
    checks.push(if doubling.pass {
        Check::ok("upper-doubling", format!("worst ratio {}", doubling.worst_ratio))
    } else {
        Check::fail("upper-doubling", format!("worst ratio {}", doubling.worst_ratio))
    });
    checks.push(if krep.ok {
        Check::ok("kernel-constants", format!("size {} ≤ {}", krep.measured_size, krep.declared_size))
    } else {
        Check::fail("kernel-constants", format!("{krep:?}"))
    });
    Ok(MeasureReport {
        schema: 1,
        scenario: scenario.clone(),
        atoms: measure.len(),
        total_mass: measure.total_mass().to_f64(),
        diameter: measure.diameter().to_f64(),
        doubling,
        kernel: krep,
        checks,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GridStatsReport {
    pub schema: u32,
    pub scenario: Scenario,
    pub level: i32,
    pub stats: Vec<BadnessStats>,
    pub monotone_in_r: bool,
    /// envelope constant fitted at r = 4 and the per-r bound values
    pub fitted_c: Option<f64>,
    pub envelope: Vec<(u32, f64, f64)>,
    pub checks: Vec<Check>,
}

/// Monte-Carlo badness statistics over `r ∈ rs` at a fixed cube level.
pub fn run_grid_stats(scenario: &Scenario, rs: &[u32], level: i32) -> Result<GridStatsReport> {
    let measure = scenario.measure.build()?;
    let est = BadnessEstimator {
        dim: measure.dim(),
        level_min: level - 2,
        level_max: 0,
        eta: BigRational::new(BigInt::from(scenario.eta.0), BigInt::from(scenario.eta.1)),
        d: ParamValue::rational_i64(1, 1),
    };
    let stats: Vec<BadnessStats> = rs
        .iter()
        .map(|&r| est.run(r, level, scenario.samples, scenario.seed))
        .collect();
    let monotone = stats.windows(2).all(|w| w[1].freq_bad <= w[0].freq_bad + 1e-12);
    let gamma = 0.2f64; // d = 1, η = 1 derived value; recorded with the fit
    let fitted_c = stats
        .iter()
        .find(|s| s.r == 4)
        .map(|s| s.freq_bad / (-gamma * 4.0).exp2());
    let mut envelope = Vec::new();
    let mut checks = Vec::new();
    checks.push(if monotone {
        Check::ok("badness-monotone-in-r", String::new())
    } else {
        Check::fail("badness-monotone-in-r", format!("{stats:?}"))
    });
    if let Some(c) = fitted_c {
        for s in &stats {
            let bound = c * (-gamma * s.r as f64).exp2();
            envelope.push((s.r, s.freq_bad, bound));
            let pass = s.freq_bad <= bound + s.ci_halfwidth;
            checks.push(if pass {
                Check::ok(
                    &format!("badness-envelope-r{}", s.r),
                    format!("freq {} ≤ {} + 3σ {}", s.freq_bad, bound, s.ci_halfwidth),
                )
            } else {
                Check::fail(
                    &format!("badness-envelope-r{}", s.r),
                    format!("freq {} > {} + 3σ {}", s.freq_bad, bound, s.ci_halfwidth),
                )
            });
        }
    }
    Ok(GridStatsReport {
        schema: 1,
        scenario: scenario.clone(),
        level,
        stats,
        monotone_in_r: monotone,
        fitted_c,
        envelope,
        checks,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CoronaReport {
    pub schema: u32,
    pub scenario: Scenario,
    pub trials: u32,
    pub trees_built: u32,
    pub max_depth: u32,
    pub sparseness_violations: usize,
    pub carleson_violations: usize,
    pub sigma_estimate_violations: usize,
    pub quasi_orthogonality_violations: usize,
    pub worst_quasi_ratio: f64,
    pub projection_ratio_p2_max: f64,
    /// reported, not asserted: no explicit constant exists away from p = 2
    pub projection_ratio_p1_max: f64,
    pub checks: Vec<Check>,
    pub tree_dump: String,
}

/// Stopping trees over `trials` random functions: sparseness, Carleson,
/// the σ-estimate and quasi-orthogonality with the explicit constant.
pub fn run_corona(scenario: &Scenario, trials: u32) -> Result<CoronaReport> {
    match scenario.arith {
        Arith::Rational => corona_impl::<BigRational>(scenario, trials),
        Arith::Float => corona_impl::<f64>(scenario, trials),
    }
}

fn corona_impl<R: Real>(scenario: &Scenario, trials: u32) -> Result<CoronaReport> {
    let inst: Instance<R> = build_instance(scenario)?;
    let idx = &inst.indices[0];
    let n = inst.measure.len();
    let mut sparse = 0;
    let mut carleson = 0;
    let mut sigma_est = 0;
    let mut quasi = 0;
    let mut worst_ratio = 0.0f64;
    let mut proj_max = 0.0f64;
    let mut proj_p1_max = 0.0f64;
    let mut max_depth = 0;
    let mut dump = String::new();
    for trial in 0..trials {
        let mut rng = Rng::fork(scenario.seed ^ 0xc040_u64, trial as u64);
        let ft = SupportFunction::from_fn(n, |_| {
            R::from_f64_lossless(rng.next_heavy_dyadic(16))
        });
        let (f, _) = perturb(&ft, idx, &inst.ctx)?;
        let tree = build_stopping_tree(&f, idx, &inst.ctx)?;
        max_depth = max_depth.max(tree.nodes.iter().map(|nd| nd.depth).max().unwrap_or(0));
        sparse += sparseness_violations(&tree, idx);
        carleson += carleson_violations(&tree, idx);
        sigma_est += sigma_estimate_violations(&tree, &f, idx, &inst.ctx);
        for p in [scenario.p1, scenario.p2()] {
            let (lhs, rhs, ratio) = quasi_orthogonality(&tree, &f, idx, p);
            if lhs > rhs * (1.0 + 1e-10) {
                quasi += 1;
            }
            worst_ratio = worst_ratio.max(ratio);
        }
        let exp = expand(&f, idx)?;
        proj_max = proj_max.max(crate::corona::projection_sum_ratio(
            &tree, &exp, &f, idx, 2.0,
        ));
        proj_p1_max = proj_p1_max.max(crate::corona::projection_sum_ratio(
            &tree, &exp, &f, idx, scenario.p1,
        ));
        if trial == 0 {
            dump = tree.dump();
        }
    }
    let mut checks = Vec::new();
    let zero = |name: &str, v: usize| {
        if v == 0 {
            Check::ok(name, String::new())
        } else {
            Check::fail(name, format!("{v} violations"))
        }
    };
    checks.push(zero("sparseness", sparse));
    checks.push(zero("carleson", carleson));
    checks.push(zero("sigma-estimate", sigma_est));
    checks.push(zero("quasi-orthogonality", quasi));
    checks.push(if proj_max <= 1.0 + 1e-10 {
        Check::ok("projection-l2", format!("max ratio {proj_max}"))
    } else {
        Check::fail("projection-l2", format!("max ratio {proj_max}"))
    });
    Ok(CoronaReport {
        schema: 1,
        scenario: scenario.clone(),
        trials,
        trees_built: trials,
        max_depth,
        sparseness_violations: sparse,
        carleson_violations: carleson,
        sigma_estimate_violations: sigma_est,
        quasi_orthogonality_violations: quasi,
        worst_quasi_ratio: worst_ratio,
        projection_ratio_p2_max: proj_max,
        projection_ratio_p1_max: proj_p1_max,
        checks,
        tree_dump: dump,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct T1StudyRow {
    pub level: u32,
    pub atoms: usize,
    pub t_loc: f64,
    pub wbp: f64,
    pub norm_lower_p2: f64,
    pub norm_upper_p2: f64,
    pub norm_lower_p1: f64,
    pub norm_upper_p1: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct T1StudyReport {
    pub schema: u32,
    pub scenario: Scenario,
    pub rows: Vec<T1StudyRow>,
    pub ratio_spread: f64,
    pub checks: Vec<Check>,
}

/// `T_loc` against the operator norm across cantor-third resolutions: the
/// consistency direction of the testing hypothesis.
pub fn run_t1_study(
    scenario: &Scenario,
    levels: std::ops::RangeInclusive<u32>,
    threads: Option<usize>,
) -> Result<T1StudyReport> {
    let per_level = parallel_map(levels.collect::<Vec<_>>(), threads, |level| -> Result<_> {
        let mut sc = scenario.clone();
        sc.measure = MeasureSpec::CantorThird { level };
        sc.kernel = KernelSpec::SignPower { s: ExponentSpec::Named("log2/log3".into()) };
        let measure = Arc::new(sc.measure.build()?);
        let kernel = Arc::new(build_kernel(&sc, &measure)?);
        let op: OperatorMatrix<f64> = OperatorMatrix::build(measure.clone(), kernel)?;
        let lmin = measure.resolving_level() - 1;
        let family = default_cube_family(&measure, lmin, 2, 8, sc.seed)?;
        let t = testing_constant(&op, &family, sc.p1, sc.p2());
        let n2 = operator_norm(&op, 2.0, 3000, sc.seed);
        let n1 = operator_norm(&op, sc.p1, 800, sc.seed);
        Ok((level, measure.len(), t, n2, n1))
    });
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for entry in per_level {
        let (level, atoms, t, n2, n1) = entry?;
        let ratio = n2.lower / (1.0 + t.t_loc);
        checks.push(if t.t_loc <= n2.upper * (1.0 + 1e-9) {
            Check::ok(
                &format!("tloc-below-norm-level{level}"),
                format!("T_loc {} ≤ ‖T‖₂ {}", t.t_loc, n2.upper),
            )
        } else {
            Check::fail(
                &format!("tloc-below-norm-level{level}"),
                format!("T_loc {} > ‖T‖₂ {}", t.t_loc, n2.upper),
            )
        });
        rows.push(T1StudyRow {
            level,
            atoms,
            t_loc: t.t_loc,
            wbp: t.wbp,
            norm_lower_p2: n2.lower,
            norm_upper_p2: n2.upper,
            norm_lower_p1: n1.lower,
            norm_upper_p1: n1.upper,
            ratio,
        });
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let spread = ratios.iter().cloned().fold(0.0, f64::max)
        / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(if spread <= 2.0 {
        Check::ok("ratio-spread", format!("{spread}"))
    } else {
        Check::fail("ratio-spread", format!("{spread} > 2"))
    });
    Ok(T1StudyReport { schema: 1, scenario: scenario.clone(), rows, ratio_spread: spread, checks })
}

#[derive(Clone, Debug, Serialize)]
pub struct OffDiagReport {
    pub schema: u32,
    pub scenario: Scenario,
    pub off_diagonal: crate::operator::OffDiagonalReport,
    pub containment: crate::operator::ContainmentReport,
    pub checks: Vec<Check>,
}

/// The off-diagonal lemma with its explicit constant plus the ancestor
/// containment of good pairs.
pub fn run_offdiag(scenario: &Scenario, budget: usize) -> Result<OffDiagReport> {
    let inst: Instance<f64> = build_instance(scenario)?;
    let od = off_diagonal_check(&inst.op, &inst.indices[0], budget, scenario.seed);
    // Containment needs cubes deep enough that the u+θ(u+m)-fold ancestor
    // stays inside the truncation — and below atom resolution the goodness of
    // every atom-cube at a fixed (grid, level) is one lattice-rigid coin flip
    // decided by the shift bits. Sampling therefore aggregates over
    // independent deep grid PAIRS, which is also the honest reading of the
    // random-grid statement being checked.
    let lmin = inst.measure.resolving_level() - 1;
    let deep_min = lmin - 24;
    let gamma = match scenario.gamma_override {
        Some((n, d)) => GammaValue::Exact(BigRational::new(BigInt::from(n), BigInt::from(d))),
        None => GammaValue::Exact(BigRational::new(BigInt::from(3), BigInt::from(4))),
    };
    let target = budget * 2 + 100;
    let mut cont = crate::operator::ContainmentReport {
        pairs_tested: 0,
        containment_failures: 0,
        kineq_constants: Vec::new(),
    };
    for shard in 0..24u64 {
        if cont.pairs_tested >= target {
            break;
        }
        let g1 = Arc::new(DyadicGrid::over_measure(
            scenario.seed ^ 0xdeeb ^ (shard * 0x9e37),
            1,
            &inst.measure,
            deep_min,
            2,
        )?);
        let g2 = Arc::new(DyadicGrid::over_measure(
            scenario.seed ^ 0xdeec ^ (shard * 0x7f4a),
            2,
            &inst.measure,
            deep_min,
            2,
        )?);
        let ctx = GoodnessContext::with_gamma(
            inst.scenario.r,
            BigRational::new(BigInt::from(scenario.eta.0), BigInt::from(scenario.eta.1)),
            inst.kernel.lambda.dimension.clone(),
            gamma.clone(),
            [g1.clone(), g2.clone()],
        );
        let i1 = GridIndex::new(g1, inst.measure.clone());
        let i2 = GridIndex::new(g2, inst.measure.clone());
        let part = containment_and_kernel_difference_check(
            &inst.op,
            &i1,
            &i2,
            &ctx,
            target - cont.pairs_tested,
            scenario.seed ^ shard,
        );
        cont.pairs_tested += part.pairs_tested;
        cont.containment_failures += part.containment_failures;
        for (m, v) in part.kineq_constants {
            match cont.kineq_constants.iter_mut().find(|(mm, _)| *mm == m) {
                Some((_, vv)) => *vv = vv.max(v),
                None => cont.kineq_constants.push((m, v)),
            }
        }
    }
    cont.kineq_constants.sort_by_key(|(m, _)| *m);
    let mut checks = Vec::new();
    checks.push(if od.violations == 0 && od.triples_tested > 0 {
        Check::ok(
            "off-diagonal",
            format!("{} triples worst ratio {}", od.triples_tested, od.worst_ratio),
        )
    } else {
        Check::fail("off-diagonal", format!("{od:?}"))
    });
    checks.push(if cont.containment_failures == 0 && cont.pairs_tested > 0 {
        Check::ok("ancestor-containment", format!("{} pairs", cont.pairs_tested))
    } else {
        Check::fail("ancestor-containment", format!("{cont:?}"))
    });
    Ok(OffDiagReport {
        schema: 1,
        scenario: scenario.clone(),
        off_diagonal: od,
        containment: cont,
        checks,
    })
}
