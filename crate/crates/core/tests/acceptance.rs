//! Acceptance gate: runs every primary criterion at its stated tolerance and
//! prints one PASS/FAIL line each. Exits nonzero if any criterion fails.
//!
//! Set `FLOWSIM_WRITE_BASELINE=1` to rewrite `baselines/desk_centralized.json`
//! from the centralized run before it is compared.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use flowsim::commands::{files, train, RunLocation, TrainOutcome};
use flowsim::config::RunConfig;
use flowsim::datagen::{dirichlet_partition, gen_union_of_subspaces, DataError, SyntheticSpec};
use flowsim::federation::{run, FederationConfig, Mode};
use flowsim::gradcheck::{run_gradcheck, GradcheckOptions};
use flowsim::mcr2::{coding_rate, grad_mcr2, mcr2_objective, Mcr2Params, RepresentationBatch};
use flowsim::tensor::{Matrix, Rng};

const IDENTITY_TOL: f64 = 1e-12;
const SCALING_TOL: f64 = 1e-10;
const INVARIANCE_TOL: f64 = 1e-8;
const MAX_INTER_COS: f64 = 0.1;
const MIN_RANK_RATIO: f64 = 0.8;
const MIN_DECREASE: f64 = 0.1;
const CLIENT_SCALING_SLACK: f64 = 0.05;
const GRAD_BAND: f64 = 1.1;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load_repo_config(name: &str) -> RunConfig {
    let path = repo_root().join("configs").join(name);
    RunConfig::load(&path).unwrap_or_else(|e| panic!("{e}"))
}

fn random_batch(rng: &mut Rng, d: usize, m: usize, k: usize) -> RepresentationBatch {
    let z = Matrix::from_fn(d, m, |_, _| rng.normal());
    let labels = (0..m).map(|_| rng.below(k)).collect();
    RepresentationBatch::new(z, labels, k).unwrap()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let report = run_gradcheck(&GradcheckOptions::default());
    let elapsed = start.elapsed();
    let c = &report.worst().config;
    Verdict::new(
        report.passed() && elapsed < Duration::from_secs(30) && report.cases.len() >= 50,
        format!(
            "max rel err {:.2e} over {} configs (worst d={} M={} K={}), {:.2?}",
            report.max_error,
            report.cases.len(),
            c.embed_dim,
            c.samples,
            c.classes,
            elapsed
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut rng = Rng::new(2);

    let zero = RepresentationBatch::new(Matrix::zeros(5, 7), vec![0, 1, 0, 1, 2, 2, 0], 3).unwrap();
    worst = worst.max(coding_rate(&zero, &Mcr2Params::new(0.5).unwrap()).abs());

    let identity = RepresentationBatch::new(Matrix::identity(2), vec![0, 1], 2).unwrap();
    let r = coding_rate(&identity, &Mcr2Params::new(1.0).unwrap());
    worst = worst.max((r - std::f64::consts::LN_2).abs());

    for _ in 0..20 {
        let (d, m) = (1 + rng.below(8), 1 + rng.below(10));
        let batch = random_batch(&mut rng, d, m, 1);
        let p = Mcr2Params::new(0.2 + rng.uniform()).unwrap();
        let v = mcr2_objective(&batch, &p);
        worst = worst.max((v.class_rate - v.rate).abs());
        worst = worst.max(grad_mcr2(&batch, &p).max_abs());
    }
    Verdict::new(
        worst <= IDENTITY_TOL,
        format!("max deviation {worst:.1e} (R(0), ln 2, K=1 rate and gradient)"),
    )
}

fn criterion_3() -> Verdict {
    let ds = gen_union_of_subspaces(&SyntheticSpec {
        samples_per_class: 30,
        seed: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let shape = flowsim::backbone::ShapeManifest::mlp(ds.input_dim(), &[16], 8);
    let plan = dirichlet_partition(ds.labels(), 1, 1.0, 3, 1).unwrap();
    let base = FederationConfig {
        rounds: 100,
        batch_size: 16,
        ..FederationConfig::default()
    };
    let federated = FederationConfig {
        num_clients: 1,
        tau: Some(1),
        mode: Mode::Federated,
        ..base.clone()
    };
    let centralized = FederationConfig {
        mode: Mode::Centralized,
        ..base
    };
    let (fo, fl) = run(&federated, &ds, &plan, &shape, 7).unwrap();
    let (co, cl) = run(&centralized, &ds, &plan, &shape, 7).unwrap();
    let params_equal = fo
        .params
        .flatten()
        .as_slice()
        .iter()
        .map(|v| v.to_bits())
        .eq(co.params.flatten().as_slice().iter().map(|v| v.to_bits()));
    let logs_equal = fl.len() == 100 && fl.iter().zip(&cl).all(|(a, b)| a.csv_row() == b.csv_row());
    Verdict::new(
        params_equal && logs_equal,
        format!("100 rounds; parameters bit-identical: {params_equal}, round logs identical: {logs_equal}"),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct Baseline {
    config_hash: String,
    final_f: f64,
    first_f: f64,
    inter_cos: f64,
    intra_cos: f64,
    min_rank_ratio: f64,
}

#[derive(Debug)]
struct RoundRow {
    f: f64,
    grad_norm_sq: f64,
}

fn read_rounds(run_dir: &Path) -> Vec<RoundRow> {
    let text = fs::read_to_string(run_dir.join(files::ROUNDS_CSV)).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (fi, gi) = (col("f"), col("grad_norm_sq"));
    lines
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            RoundRow {
                f: cells[fi].parse().unwrap(),
                grad_norm_sq: cells[gi].parse().unwrap(),
            }
        })
        .collect()
}

struct DeskRun {
    outcome: TrainOutcome,
    rounds: Vec<RoundRow>,
    elapsed: Duration,
}

impl DeskRun {
    fn final_f(&self) -> f64 {
        self.rounds.last().unwrap().f
    }
}

fn desk_run(config: &RunConfig, out: &Path) -> DeskRun {
    let start = Instant::now();
    let outcome = train(
        config,
        &RunLocation {
            dataset_base: repo_root(),
            output_root: out.to_path_buf(),
        },
    )
    .unwrap_or_else(|e| panic!("training failed: {e}"));
    let elapsed = start.elapsed();
    let rounds = read_rounds(&outcome.run_dir);
    DeskRun {
        outcome,
        rounds,
        elapsed,
    }
}

fn geometry_ok(inter: f64, rank_ratio: f64) -> bool {
    inter < MAX_INTER_COS && rank_ratio >= MIN_RANK_RATIO
}

fn criterion_4(fed: &DeskRun, central: &DeskRun, baseline: &Baseline) -> Verdict {
    let d = &fed.outcome.diagnostics;
    let theorem1 = d.theorem1.as_ref().is_some_and(|t| t.holds);
    let reproduced = central.outcome.manifest.config_hash == baseline.config_hash
        && (central.final_f() - baseline.final_f).abs() <= 1e-9;
    let baseline_ok = geometry_ok(baseline.inter_cos, baseline.min_rank_ratio);
    let fed_ok = geometry_ok(d.orthogonality.inter, d.min_rank_ratio);
    Verdict::new(
        theorem1 && reproduced && baseline_ok && fed_ok && fed.elapsed < Duration::from_secs(300),
        format!(
            "N=8 inter |cos| {:.4}, min rank ratio {:.2}, {:.1?}; centralized baseline inter {:.4}, ratio {:.2}, reproduced: {reproduced}; conditions hold: {theorem1}",
            d.orthogonality.inter, d.min_rank_ratio, fed.elapsed, baseline.inter_cos, baseline.min_rank_ratio
        ),
    )
}

/// Worst ratio of the cumulative mean of `‖∇f‖²` at a round in the last half
/// to its smallest value earlier in that half.
fn running_mean_band(rows: &[RoundRow]) -> f64 {
    let mut acc = 0.0;
    let means: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            acc += r.grad_norm_sq;
            acc / (i + 1) as f64
        })
        .collect();
    let half = means.len() / 2;
    let mut best = means[half];
    let mut worst: f64 = 1.0;
    for &m in &means[half + 1..] {
        worst = worst.max(m / best);
        best = best.min(m);
    }
    worst
}

fn criterion_6(n8: &DeskRun, n16: &DeskRun, central: &DeskRun) -> Verdict {
    let band = running_mean_band(&n8.rounds);
    let decrease = n8.rounds[0].f - n8.final_f();
    let scaling = n16.final_f() >= n8.final_f() - CLIENT_SCALING_SLACK;
    Verdict::new(
        band <= GRAD_BAND && decrease >= MIN_DECREASE && scaling,
        format!(
            "running-mean band {band:.4}, f decrease {decrease:.3} nats, final f centralized {:.4} / N=8 {:.4} / N=16 {:.4}",
            central.final_f(),
            n8.final_f(),
            n16.final_f()
        ),
    )
}

fn criterion_5() -> Verdict {
    let mut rng = Rng::new(5);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let (d, m, k) = (1 + rng.below(12), 1 + rng.below(24), 1 + rng.below(4));
        let batch = random_batch(&mut rng, d, m, k);
        let p = Mcr2Params::new(0.1 + 1.9 * rng.uniform()).unwrap();
        let f = mcr2_objective(&batch, &p).f;
        for c in [2.0, 5.0] {
            let scaled = batch.with_z(batch.z().scale(c)).unwrap();
            worst = worst.max(mcr2_objective(&scaled, &p).f - f);
        }
    }
    Verdict::new(
        worst <= SCALING_TOL,
        format!("max f(cZ) − f(Z) = {worst:.2e} over 100 batches, c ∈ {{2, 5}}"),
    )
}

fn criterion_7() -> Verdict {
    let labels: Vec<usize> = (0..1000).map(|i| i / 100).collect();
    let mut rng = Rng::new(7);
    let (mut exact, mut infeasible, mut wrong) = (0, 0, 0);
    for _ in 0..200 {
        let n = 1 + rng.below(32);
        let alpha = 10f64.powf(-1.0 + 10.0 * rng.uniform());
        let seed = rng.below(usize::MAX) as u64;
        match dirichlet_partition(&labels, n, alpha, seed, 1) {
            Ok(plan) => {
                let mut all = plan.clients.concat();
                all.sort_unstable();
                if plan.clients.len() == n && all == (0..labels.len()).collect::<Vec<_>>() {
                    exact += 1;
                } else {
                    wrong += 1;
                }
            }
            Err(DataError::InfeasiblePartition { .. }) => infeasible += 1,
            Err(_) => wrong += 1,
        }
    }

    let uniform_labels: Vec<usize> = (0..10_000).map(|i| i / 1000).collect();
    let mut worst_dev: f64 = 0.0;
    for (n, seed) in [(2, 1), (5, 2), (10, 3), (20, 4), (32, 5)] {
        let plan = dirichlet_partition(&uniform_labels, n, 1e9, seed, 1).unwrap();
        let expected = 1000.0 / n as f64;
        for row in plan.class_counts(&uniform_labels, 10) {
            for c in row {
                worst_dev = worst_dev.max((c as f64 - expected).abs() / expected);
            }
        }
    }
    Verdict::new(
        wrong == 0 && worst_dev <= 0.2,
        format!(
            "{exact} exact partitions, {infeasible} rejected as infeasible, {wrong} wrong; α=1e9 max deviation {:.1}%",
            100.0 * worst_dev
        ),
    )
}

fn random_orthogonal(rng: &mut Rng, d: usize) -> Matrix {
    // Gram–Schmidt on a Gaussian matrix.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for c in &cols {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            cols.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    Matrix::from_fn(d, d, |i, j| cols[j][i])
}

fn criterion_8() -> Verdict {
    let mut rng = Rng::new(8);
    let (mut dual, mut rotation): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let (d, m) = (1 + rng.below(12), 1 + rng.below(12));
        let batch = random_batch(&mut rng, d, m, 1);
        let p = Mcr2Params::new(0.2 + rng.uniform()).unwrap();
        let r = coding_rate(&batch, &p);

        // Both routes through an independent Cholesky: ½ ln det(I_d + α ZZᵀ)
        // and ½ ln det(I_M + α ZᵀZ).
        let z = batch.z();
        let alpha = p.alpha(d, m);
        let primal = Matrix::from_fn(d, d, |i, j| {
            f64::from(u8::from(i == j)) + alpha * (0..m).map(|c| z[(i, c)] * z[(j, c)]).sum::<f64>()
        });
        let gram = Matrix::from_fn(m, m, |i, j| {
            f64::from(u8::from(i == j)) + alpha * (0..d).map(|r| z[(r, i)] * z[(r, j)]).sum::<f64>()
        });
        let (rp, rd) = (0.5 * logdet_spd(&primal), 0.5 * logdet_spd(&gram));
        dual = dual.max((rp - rd).abs()).max((r - rp).abs());

        let q = random_orthogonal(&mut rng, d);
        let rotated = batch.with_z(q.matmul(z)).unwrap();
        rotation = rotation.max((r - coding_rate(&rotated, &p)).abs());
    }
    Verdict::new(
        dual <= INVARIANCE_TOL && rotation <= INVARIANCE_TOL,
        format!("dual-form gap {dual:.1e}, rotation gap {rotation:.1e} over 100 cases"),
    )
}

/// `ln det` of a symmetric positive definite matrix by plain Cholesky.
fn logdet_spd(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut l = vec![0.0; n * n];
    let mut logdet = 0.0;
    for j in 0..n {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[j * n + k] * l[j * n + k];
        }
        let pivot = s.sqrt();
        l[j * n + j] = pivot;
        logdet += 2.0 * pivot.ln();
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / pivot;
        }
    }
    logdet
}

fn baseline_path() -> PathBuf {
    repo_root().join("baselines/desk_centralized.json")
}

fn baseline_of(run: &DeskRun) -> Baseline {
    let d = &run.outcome.diagnostics;
    Baseline {
        config_hash: run.outcome.manifest.config_hash.clone(),
        final_f: run.final_f(),
        first_f: run.rounds[0].f,
        inter_cos: d.orthogonality.inter,
        intra_cos: d.orthogonality.intra,
        min_rank_ratio: d.min_rank_ratio,
    }
}

fn main() -> ExitCode {
    let out = tempfile::tempdir().unwrap();
    let fed_config = load_repo_config("desk_federated.toml");
    let central_config = load_repo_config("desk_centralized.toml");
    let mut n16_config = fed_config.clone();
    n16_config.federation.num_clients = 16;

    let n8 = desk_run(&fed_config, out.path());
    let n16 = desk_run(&n16_config, out.path());
    let central = desk_run(&central_config, out.path());

    if std::env::var_os("FLOWSIM_WRITE_BASELINE").is_some() {
        let body = serde_json::to_string_pretty(&baseline_of(&central)).unwrap();
        fs::create_dir_all(baseline_path().parent().unwrap()).unwrap();
        fs::write(baseline_path(), body + "\n").unwrap();
    }
    let baseline: Baseline =
        serde_json::from_str(&fs::read_to_string(baseline_path()).unwrap()).unwrap();

    let verdicts = [
        (1, "gradient correctness", criterion_1()),
        (2, "trivial identities", criterion_2()),
        (3, "centralized/federated equivalence", criterion_3()),
        (
            4,
            "subspace geometry",
            criterion_4(&n8, &central, &baseline),
        ),
        (5, "monotone scaling", criterion_5()),
        (6, "convergence", criterion_6(&n8, &n16, &central)),
        (7, "partition correctness", criterion_7()),
        (8, "dual form and rotation invariance", criterion_8()),
    ];
    let mut failed = 0;
    for (id, name, v) in &verdicts {
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("criterion {id} [{tag}] {name}: {}", v.detail);
        failed += usize::from(!v.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
