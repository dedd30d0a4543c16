//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! the lines show up in `cargo test` output; exits non-zero if any fails.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pda_core::discrepancy::{self, KernelParams};
use pda_core::gradcheck::{check_gradients, random_tensor};
use pda_core::losses::{self, LossComponents};
use pda_core::nets::{forward_head, BoundMlp, MlpSpec, LEAKY_SLOPE};
use pda_core::tensor::{Tape, Tensor, Var};
use pda_core::trainer::{self, Alignment, Summary, TrainConfig, Variant};
use pda_kit::ExperimentSpec;

struct Report {
    failed: usize,
}

impl Report {
    fn record(&mut self, id: &str, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} [{id}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn canonical_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/canonical.conf")
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity

const GRAD_TOL: f64 = 1e-4;
const IN: usize = 4;
const FEAT: usize = 5;
const CLASSES: usize = 3;
const N: usize = 10;

fn feature_spec() -> MlpSpec {
    MlpSpec::new(vec![IN, 6, FEAT], LEAKY_SLOPE, true).unwrap()
}

fn head_spec() -> MlpSpec {
    MlpSpec::new(vec![FEAT, 4, CLASSES], LEAKY_SLOPE, false).unwrap()
}

/// Parameter tensors of F followed by `heads` classifier heads, uniform in [-1, 1].
fn network_params(heads: usize, seed: u64) -> Vec<Tensor> {
    let mut out = Vec::new();
    let mut k = seed;
    for spec in std::iter::once(feature_spec()).chain((0..heads).map(|_| head_spec())) {
        for w in spec.widths.windows(2) {
            out.push(random_tensor(&[w[0], w[1]], k));
            out.push(random_tensor(&[1, w[1]], k + 1));
            k += 2;
        }
    }
    out
}

struct Instance {
    xs: Tensor,
    xt: Tensor,
    ys: Vec<usize>,
    w: Vec<f64>,
    labeled: Vec<usize>,
    pseudo: Vec<usize>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..CLASSES).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    Instance {
        xs: random_tensor(&[N, IN], seed + 100),
        xt: random_tensor(&[N, IN], seed + 101),
        ys: (0..N).map(|_| rng.random_range(0..CLASSES)).collect(),
        w: raw.iter().map(|v| v / total).collect(),
        labeled: vec![0, 2, 3, 7, 9],
        pseudo: vec![1, 0, 2, 1, 1],
    }
}

/// Binds F and the heads from the flat variable list.
fn bind<'t>(vars: &[Var<'t>], heads: usize) -> (BoundMlp<'t>, Vec<BoundMlp<'t>>) {
    let f_len = 2 * feature_spec().num_layers();
    let h_len = 2 * head_spec().num_layers();
    let f = BoundMlp::from_vars(feature_spec(), vars[..f_len].to_vec()).unwrap();
    let hs = (0..heads)
        .map(|h| {
            let start = f_len + h * h_len;
            BoundMlp::from_vars(head_spec(), vars[start..start + h_len].to_vec()).unwrap()
        })
        .collect();
    (f, hs)
}

fn criterion_gradients(report: &mut Report) {
    let inst = instance(11);
    let kernel = KernelParams::new(1.0).unwrap();
    let mut details = Vec::new();
    let mut worst: f64 = 0.0;

    let mut check = |name: &str, heads: usize, loss: &dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> pda_core::Result<Var<'t>>| {
        let params = network_params(heads, 7);
        let err = check_gradients(&params, |tape, vars| loss(tape, vars)).unwrap();
        worst = worst.max(err);
        details.push(format!("{name} {err:.1e}"));
    };

    check("swmmd", 0, &|tape, v| {
        let (f, _) = bind(v, 0);
        let fs = f.forward(tape.constant(inst.xs.clone()))?;
        let ft = f.forward(tape.constant(inst.xt.clone()))?;
        discrepancy::swmmd(fs, &inst.ys, ft, &inst.w, kernel)
    });
    check("wce", 1, &|tape, v| {
        let (f, h) = bind(v, 1);
        let (_, p) = forward_head(&h[0], f.forward(tape.constant(inst.xs.clone()))?)?;
        losses::weighted_source_ce(p, &inst.ys, &inst.w)
    });
    check("target_ce", 1, &|tape, v| {
        let (f, h) = bind(v, 1);
        let (_, p) = forward_head(&h[0], f.forward(tape.constant(inst.xt.clone()))?)?;
        losses::target_ce(p.gather_rows(&inst.labeled)?, &inst.pseudo)
    });
    check("consistency", 2, &|tape, v| {
        let (f, h) = bind(v, 2);
        let ft = f.forward(tape.constant(inst.xt.clone()))?;
        losses::consistency(forward_head(&h[0], ft)?.1, forward_head(&h[1], ft)?.1)
    });
    check("multi_consistency", 4, &|tape, v| {
        let (f, h) = bind(v, 4);
        let ft = f.forward(tape.constant(inst.xt.clone()))?;
        let probs = h.iter().map(|head| Ok(forward_head(head, ft)?.1)).collect::<pda_core::Result<Vec<_>>>()?;
        losses::multi_consistency(&probs)
    });
    check("total", 3, &|tape, v| {
        let (f, h) = bind(v, 3);
        let fs = f.forward(tape.constant(inst.xs.clone()))?;
        let ft = f.forward(tape.constant(inst.xt.clone()))?;
        let p1 = forward_head(&h[0], fs)?.1;
        let p2 = forward_head(&h[1], ft)?.1;
        let p3 = forward_head(&h[2], ft)?.1;
        let parts = LossComponents {
            l_wce_s: losses::weighted_source_ce(p1, &inst.ys, &inst.w)?,
            l_ce_t: losses::target_ce(p2.gather_rows(&inst.labeled)?, &inst.pseudo)?,
            l_con: losses::consistency(p2, p3)?,
            l_swd: discrepancy::swmmd(fs, &inst.ys, ft, &inst.w, kernel)?,
        };
        Ok(losses::total_loss(parts, 0.1, 0.4)?.0)
    });

    report.record(
        "1",
        "gradient integrity",
        worst < GRAD_TOL,
        format!("max rel err {worst:.2e} (< {GRAD_TOL:e}); {}", details.join(", ")),
    );
}

// ---------------------------------------------------------------------------
// 2. SWMMD against a pairwise double loop

fn kernel(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn swmmd_oracle(xs: &Tensor, ys: &[usize], xt: &Tensor, w: &[f64], sigma: f64) -> f64 {
    let (ns, nt) = (xs.rows(), xt.rows());
    let z: f64 = ys.iter().map(|&y| w[y]).sum();
    let mut tt = 0.0;
    for i in 0..nt {
        for j in 0..nt {
            tt += kernel(xt.row(i), xt.row(j), sigma);
        }
    }
    let mut ts = 0.0;
    for i in 0..nt {
        for j in 0..ns {
            ts += w[ys[j]] * kernel(xt.row(i), xs.row(j), sigma);
        }
    }
    let mut ss = 0.0;
    for i in 0..ns {
        for j in 0..ns {
            ss += w[ys[i]] * w[ys[j]] * kernel(xs.row(i), xs.row(j), sigma);
        }
    }
    tt / (nt * nt) as f64 - 2.0 * ts / (nt as f64 * z) + ss / (z * z)
}

fn swmmd_value(xs: &Tensor, ys: &[usize], xt: &Tensor, w: &[f64], sigma: f64) -> f64 {
    let tape = Tape::new();
    let d = discrepancy::swmmd(
        tape.constant(xs.clone()),
        ys,
        tape.constant(xt.clone()),
        w,
        KernelParams::new(sigma).unwrap(),
    )
    .unwrap();
    d.item().unwrap()
}

fn criterion_swmmd_oracle(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut oracle_err, mut mmd_err, mut scale_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..20u64 {
        let ns = rng.random_range(1..=12);
        let nt = rng.random_range(1..=12);
        let f = rng.random_range(1..=4);
        let c = rng.random_range(2..=5);
        let sigma = rng.random_range(0.5..2.0);
        let xs = random_tensor(&[ns, f], 1000 + 2 * k);
        let xt = random_tensor(&[nt, f], 1001 + 2 * k);
        let ys: Vec<usize> = (0..ns).map(|_| rng.random_range(0..c)).collect();
        let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();

        let fast = swmmd_value(&xs, &ys, &xt, &w, sigma);
        oracle_err = oracle_err.max((fast - swmmd_oracle(&xs, &ys, &xt, &w, sigma)).abs());

        let uniform = vec![1.0 / c as f64; c];
        let tape = Tape::new();
        let plain = discrepancy::mmd(
            tape.constant(xs.clone()),
            tape.constant(xt.clone()),
            KernelParams::new(sigma).unwrap(),
        )
        .unwrap()
        .item()
        .unwrap();
        mmd_err = mmd_err.max((swmmd_value(&xs, &ys, &xt, &uniform, sigma) - plain).abs());

        let factor = rng.random_range(0.1..10.0);
        let scaled: Vec<f64> = w.iter().map(|v| v * factor).collect();
        scale_err = scale_err.max((swmmd_value(&xs, &ys, &xt, &scaled, sigma) - fast).abs());
    }
    report.record(
        "2",
        "SWMMD oracle equivalence",
        oracle_err <= 1e-10 && mmd_err <= 1e-12 && scale_err <= 1e-10,
        format!(
            "20 instances: |fast - double loop| {oracle_err:.1e} (<= 1e-10), \
             |uniform w - MMD| {mmd_err:.1e} (<= 1e-12), |w vs c*w| {scale_err:.1e} (<= 1e-10)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 3-7, 9. Canonical task runs

struct Canonical {
    base: TrainConfig,
    seeds: Vec<u64>,
    runs: Vec<(String, Vec<trainer::ExperimentResult>)>,
}

impl Canonical {
    fn group(&self, name: &str) -> Vec<&Summary> {
        self.runs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, rs)| rs.iter().map(|r| &r.summary).collect())
            .unwrap_or_else(|| panic!("no group {name}"))
    }

    fn mean(&self, name: &str, f: impl Fn(&Summary) -> f64) -> f64 {
        let g = self.group(name);
        g.iter().map(|s| f(s)).sum::<f64>() / g.len() as f64
    }

    fn per_seed(&self, name: &str) -> Vec<f64> {
        self.group(name).iter().map(|s| s.reported_accuracy).collect()
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

fn pcts(v: &[f64]) -> String {
    v.iter().map(|x| pct(*x)).collect::<Vec<_>>().join("/")
}

fn run_canonical() -> Canonical {
    let spec = ExperimentSpec::load(&canonical_config_path(), &[]).expect("canonical config");
    let base = spec.train.clone();
    let setups = [
        ("full", Variant::Full, base.alignment),
        ("source_only", Variant::V1, Alignment::None),
        ("v1", Variant::V1, base.alignment),
        ("v2", Variant::V2, base.alignment),
        ("v3", Variant::V3, base.alignment),
        ("mmd", Variant::Full, Alignment::Mmd),
        ("wmmd", Variant::Full, Alignment::Wmmd),
    ];
    let mut configs = Vec::new();
    for &(_, variant, alignment) in &setups {
        for &seed in &spec.seeds {
            configs.push(TrainConfig {
                variant,
                alignment,
                seed,
                ..base.clone()
            });
        }
    }
    let mut results = trainer::run_many(&configs).into_iter().map(|r| r.expect("canonical run"));
    let runs = setups
        .iter()
        .map(|(name, _, _)| (name.to_string(), results.by_ref().take(spec.seeds.len()).collect()))
        .collect();
    Canonical {
        base,
        seeds: spec.seeds,
        runs,
    }
}

fn criterion_simplex(report: &mut Report, c: &Canonical) {
    let mut epochs = 0;
    let mut worst_sum: f64 = 0.0;
    let mut min_entry = f64::INFINITY;
    for (_, results) in &c.runs {
        for r in results {
            for m in &r.records {
                epochs += 1;
                worst_sum = worst_sum.max((m.w.iter().sum::<f64>() - 1.0).abs());
                min_entry = m.w.iter().copied().fold(min_entry, f64::min);
            }
        }
    }
    report.record(
        "3",
        "simplex contract",
        min_entry >= 0.0 && worst_sum <= 1e-9,
        format!("{epochs} epochs over {} runs: min entry {min_entry:.2e}, max |sum - 1| {worst_sum:.1e}", c.runs.len() * c.seeds.len()),
    );
}

fn criterion_trend(report: &mut Report, c: &Canonical) {
    let w_out = c.mean("full", |s| s.mean_w(&s.outlier_classes));
    let w_shared = c.mean("full", |s| s.mean_w(&s.shared_classes));
    report.record(
        "4a",
        "outlier classes down-weighted",
        w_out < 0.5 * w_shared,
        format!("mean w outlier {w_out:.4} < 0.5 x shared {w_shared:.4}"),
    );
    let c2 = c.mean("full", |s| s.final_accuracies[1]);
    let base = c.mean("source_only", |s| s.reported_accuracy);
    report.record(
        "4b",
        "gain over source-only",
        c2 - base >= 0.10,
        format!(
            "C2 {} vs source-only {} = +{} points (>= 10); per seed {} vs {}",
            pct(c2),
            pct(base),
            pct(c2 - base),
            pcts(&c.group("full").iter().map(|s| s.final_accuracies[1]).collect::<Vec<_>>()),
            pcts(&c.per_seed("source_only"))
        ),
    );
    let c1 = c.mean("full", |s| s.final_accuracies[0]);
    report.record("4c", "C2 at least C1", c2 >= c1, format!("C2 {} >= C1 {}", pct(c2), pct(c1)));
}

fn criterion_ablation(report: &mut Report, c: &Canonical) {
    let full = c.mean("full", |s| s.reported_accuracy);
    let v1 = c.mean("v1", |s| s.reported_accuracy);
    let v2 = c.mean("v2", |s| s.reported_accuracy);
    let v3 = c.mean("v3", |s| s.reported_accuracy);
    report.record(
        "5",
        "ablation ordering",
        full >= v2 - 0.01 && v2 >= v1 - 0.01,
        format!(
            "full {} >= v2 {} - 1 and v2 >= v1 {} - 1 (v3 {}; v1 reports C1)",
            pct(full),
            pct(v2),
            pct(v1),
            pct(v3)
        ),
    );
}

fn criterion_weighting(report: &mut Report, c: &Canonical) {
    let sw = c.per_seed("full");
    let mmd = c.per_seed("mmd");
    let wmmd = c.per_seed("wmmd");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let beats_mmd = sw.iter().zip(&mmd).filter(|(a, b)| a > b).count();
    let ties_wmmd = sw.iter().zip(&wmmd).filter(|(a, b)| a == b).count();
    let best = (0..sw.len()).filter(|&i| sw[i] > mmd[i] && sw[i] > wmmd[i]).count();
    let majority = sw.len() / 2 + 1;
    report.record(
        "6",
        "weighting-strategy ordering",
        mean(&sw) >= mean(&mmd) - 0.01 && best >= majority,
        format!(
            "SWMMD {} >= MMD {} - 1; SWMMD strictly best on {best}/{} seeds (need {majority}); \
             per seed SWMMD {} MMD {} WMMD {}; above MMD on {beats_mmd}, tied with WMMD on {ties_wmmd}",
            pct(mean(&sw)),
            pct(mean(&mmd)),
            sw.len(),
            pcts(&sw),
            pcts(&mmd),
            pcts(&wmmd)
        ),
    );
}

fn criterion_pseudo_labels(report: &mut Report, c: &Canonical) {
    let full = c.group("full");
    let precision: Vec<f64> = full.iter().map(|s| s.final_pseudo_precision.unwrap_or(0.0)).collect();
    let outliers: Vec<usize> = full.iter().map(|s| s.outlier_pseudo_labels()).collect();
    let clean = outliers.iter().filter(|&&n| n == 0).count();
    let min_precision = precision.iter().copied().fold(f64::INFINITY, f64::min);
    report.record(
        "7",
        "pseudo-label precision",
        min_precision >= 0.9 && clean >= 4,
        format!(
            "nu = {}: precision per seed {} (each >= 90); outlier pseudo-labels per seed {:?}, zero on {clean}/{} (need 4)",
            c.base.nu,
            pcts(&precision),
            outliers,
            full.len()
        ),
    );
}

fn criterion_peer_head(report: &mut Report, c: &Canonical) {
    let full = c.group("full");
    let gaps: Vec<f64> = full.iter().map(|s| (s.final_accuracies[1] - s.final_accuracies[2]).abs()).collect();
    let c2 = c.mean("full", |s| s.final_accuracies[1]);
    let c3 = c.mean("full", |s| s.final_accuracies[2]);
    report.record(
        "9",
        "C3 tracks C2",
        (c2 - c3).abs() <= 0.02,
        format!("mean C2 {} vs C3 {} (gap <= 2 points); per-seed gaps {}", pct(c2), pct(c3), pcts(&gaps)),
    );
}

// ---------------------------------------------------------------------------
// 8. Determinism through the command line

fn criterion_determinism(report: &mut Report) {
    let tmp = tempfile::tempdir().unwrap();
    let config = canonical_config_path();
    let run = |out: &str| -> PathBuf {
        let out = tmp.path().join(out);
        let code = pda_kit::main_with([
            "pda-kit".into(),
            "--out".into(),
            out.clone().into_os_string(),
            "run".into(),
            "--config".into(),
            config.clone().into_os_string(),
            "--set".into(),
            "seed=3".into(),
        ]);
        assert_eq!(code, 0);
        std::fs::read_dir(&out).unwrap().next().unwrap().unwrap().path()
    };
    let a = run("a");
    let b = run("b");
    let read = |dir: &PathBuf, name: &str| std::fs::read(dir.join(name)).unwrap();
    let metrics_same = read(&a, "metrics.csv") == read(&b, "metrics.csv");
    let summary_same = read(&a, "summary.json") == read(&b, "summary.json");
    let rows = String::from_utf8(read(&a, "metrics.csv")).unwrap().lines().count() - 1;
    report.record(
        "8",
        "determinism",
        metrics_same && summary_same,
        format!("two runs, seed 3: metrics.csv identical {metrics_same} ({rows} rows), summary.json identical {summary_same}"),
    );
}

fn main() {
    let started = Instant::now();
    let mut report = Report { failed: 0 };
    criterion_gradients(&mut report);
    criterion_swmmd_oracle(&mut report);

    let canonical = run_canonical();
    criterion_simplex(&mut report, &canonical);
    criterion_trend(&mut report, &canonical);
    criterion_ablation(&mut report, &canonical);
    criterion_weighting(&mut report, &canonical);
    criterion_pseudo_labels(&mut report, &canonical);
    criterion_determinism(&mut report);
    criterion_peer_head(&mut report, &canonical);

    println!(
        "acceptance: {} failed, {:.1}s",
        report.failed,
        started.elapsed().as_secs_f64()
    );
    if report.failed > 0 {
        std::process::exit(1);
    }
}
