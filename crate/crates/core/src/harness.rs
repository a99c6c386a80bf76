//! Seeded trials, parameter sweeps and scaling benchmarks.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, SweepPoint};
use crate::divergence::{choose_constants, it_threshold, ConstantsConfig, PhaseConstants};
use crate::error::{GhcmError, Result};
use crate::evaluation::{agreement, cstar_visibility_connected, EvalReport};
use crate::geometry::build_block_grid;
use crate::model::{sample_ghcm, strip_labels, ModelParams, SampleInstance};
use crate::recovery::{full_recover, Recovery};

/// Version tag of the sweep CSV layout.
pub const CSV_VERSION: u32 = 1;

/// Formats `x` with 9 significant digits, dropping trailing zeros.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let s = format!("{:.*}", (8 - exp).max(0) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_owned()
        } else {
            s
        }
    } else {
        let s = format!("{x:.8e}");
        let (mantissa, e) = s.split_once('e').expect("exponent form");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{e}")
    }
}

/// Recovery quality on one sampled instance.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluated {
    pub phase1: EvalReport,
    pub fin: EvalReport,
    /// Intensity used for the connectivity diagnostic, `pi_1 lambda`.
    pub lambda_prime_cstar: f64,
}

/// Scores a recovery against the instance's true labels. The connectivity
/// diagnostic uses constants for `pi_1 lambda` and is left empty when those
/// do not exist.
pub fn evaluate(
    inst: &SampleInstance,
    rec: &Recovery,
    consts: &PhaseConstants,
    cfg: &ConstantsConfig,
) -> Result<Evaluated> {
    let params = inst.params();
    let grid = build_block_grid(params, consts.chi)?;
    let phase1 = agreement(&rec.phase1.labeling, inst, &grid)?;
    let mut fin = agreement(&rec.labeling, inst, &grid)?;
    let lambda_prime_cstar = params.pi[0] * params.lambda;
    fin.cstar_connected = match choose_constants(lambda_prime_cstar, params.d, cfg) {
        Ok(c) => Some(cstar_visibility_connected(
            inst,
            &build_block_grid(params, c.chi)?,
            &c,
        )),
        Err(GhcmError::Infeasible { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(Evaluated {
        phase1,
        fin,
        lambda_prime_cstar,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub point: usize,
    pub values: Vec<(String, f64)>,
    pub trial: usize,
    pub seed: u64,
    pub vertices: usize,
    pub edges: usize,
    pub threshold_ratio: f64,
    pub lambda_prime: f64,
    pub lambda_prime_cstar: f64,
    pub phase1_agreement: f64,
    pub agreement: f64,
    pub exact: bool,
    pub cstar_connected: Option<bool>,
    pub max_block_errors: usize,
    pub sample_secs: f64,
    pub phase1_secs: f64,
    pub phase2_secs: f64,
    pub error: Option<String>,
}

/// Samples, recovers and evaluates one trial. Failures are recorded in
/// `error` rather than returned.
pub fn run_trial(
    point: &SweepPoint,
    trial: usize,
    seed: u64,
    cfg: &ConstantsConfig,
) -> TrialRecord {
    let params = &point.params;
    let mut rec = TrialRecord {
        point: point.index,
        values: point.values.clone(),
        trial,
        seed,
        vertices: 0,
        edges: 0,
        threshold_ratio: f64::NAN,
        lambda_prime: params.lambda,
        lambda_prime_cstar: params.pi[0] * params.lambda,
        phase1_agreement: f64::NAN,
        agreement: f64::NAN,
        exact: false,
        cstar_connected: None,
        max_block_errors: 0,
        sample_secs: 0.0,
        phase1_secs: 0.0,
        phase2_secs: 0.0,
        error: None,
    };
    if let Err(e) = fill_trial(&mut rec, params, cfg) {
        rec.error = Some(e.to_string());
    }
    rec
}

fn fill_trial(rec: &mut TrialRecord, params: &ModelParams, cfg: &ConstantsConfig) -> Result<()> {
    rec.threshold_ratio = it_threshold(params)?.threshold_ratio;
    let consts = choose_constants(params.lambda, params.d, cfg)?;
    let t = Instant::now();
    let inst = sample_ghcm(params, rec.seed)?;
    rec.sample_secs = t.elapsed().as_secs_f64();
    rec.vertices = inst.vertex_count();
    rec.edges = inst.observations().pair_count();
    let recovery = full_recover(strip_labels(&inst), &consts)?;
    rec.phase1_secs = recovery.timings.phase1_secs;
    rec.phase2_secs = recovery.timings.phase2_secs;
    let ev = evaluate(&inst, &recovery, &consts, cfg)?;
    rec.phase1_agreement = ev.phase1.agreement;
    rec.agreement = ev.fin.agreement;
    rec.exact = ev.fin.exact;
    rec.cstar_connected = ev.fin.cstar_connected;
    rec.max_block_errors = ev.fin.max_block_errors;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub records: Vec<TrialRecord>,
    pub csv: String,
}

impl SweepResult {
    pub fn error_count(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Runs every sweep point for `cfg.trials` trials. Trial `t` of every point
/// uses seed `base_seed + t`. Rows come out ordered by point, then trial,
/// whatever the thread count. Wall-clock columns are only written when
/// `timings` is set, so that default output is reproducible byte for byte.
pub fn run_sweep(cfg: &ExperimentConfig, timings: bool) -> Result<SweepResult> {
    let points = cfg.points()?;
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();
    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(p, t)| {
            run_trial(
                &points[p],
                t,
                cfg.base_seed.wrapping_add(t as u64),
                &cfg.constants,
            )
        })
        .collect();
    let csv = render_csv(cfg, &points, &records, timings)?;
    Ok(SweepResult {
        points,
        records,
        csv,
    })
}

fn render_csv(
    cfg: &ExperimentConfig,
    points: &[SweepPoint],
    records: &[TrialRecord],
    timings: bool,
) -> Result<String> {
    let mut out = String::new();
    let config = serde_json::to_string(cfg).map_err(|e| GhcmError::format(e.to_string()))?;
    let axes: Vec<&str> = cfg.sweep.iter().map(|a| a.param.as_str()).collect();
    writeln!(out, "# ghcm-sweep {CSV_VERSION}").unwrap();
    writeln!(out, "# config {config}").unwrap();
    writeln!(
        out,
        "# seed of trial t = base_seed + t = {} + t",
        cfg.base_seed
    )
    .unwrap();
    for p in points {
        let params =
            serde_json::to_string(&p.params).map_err(|e| GhcmError::format(e.to_string()))?;
        writeln!(out, "# point {} params {params}", p.index).unwrap();
    }
    let mut header = vec!["point"];
    header.extend(&axes);
    header.extend([
        "trial",
        "seed",
        "vertices",
        "edges",
        "threshold_ratio",
        "lambda_prime",
        "lambda_prime_cstar",
        "phase1_agreement",
        "agreement",
        "exact",
        "cstar_connected",
        "max_block_errors",
    ]);
    if timings {
        header.extend(["sample_secs", "phase1_secs", "phase2_secs"]);
    }
    header.push("error");
    writeln!(out, "{}", header.join(",")).unwrap();

    for r in records {
        let mut row = vec![r.point.to_string()];
        row.extend(r.values.iter().map(|(_, v)| sig9(*v)));
        row.extend([
            r.trial.to_string(),
            r.seed.to_string(),
            r.vertices.to_string(),
            r.edges.to_string(),
            sig9(r.threshold_ratio),
            sig9(r.lambda_prime),
            sig9(r.lambda_prime_cstar),
            sig9(r.phase1_agreement),
            sig9(r.agreement),
            (r.exact as u8).to_string(),
            r.cstar_connected
                .map_or(String::new(), |c| (c as u8).to_string()),
            r.max_block_errors.to_string(),
        ]);
        if timings {
            row.extend([
                sig9(r.sample_secs),
                sig9(r.phase1_secs),
                sig9(r.phase2_secs),
            ]);
        }
        row.push(r.error.as_deref().map(csv_field).unwrap_or_default());
        writeln!(out, "{}", row.join(",")).unwrap();
    }

    if !records.is_empty() {
        let mut head = vec!["point"];
        head.extend(&axes);
        head.extend([
            "trials",
            "errors",
            "exact_rate",
            "mean_agreement",
            "mean_phase1_agreement",
            "cstar_connected_rate",
        ]);
        writeln!(out, "# summary {}", head.join(",")).unwrap();
        for p in points {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.point == p.index).collect();
            let ok: Vec<&&TrialRecord> = rows.iter().filter(|r| r.error.is_none()).collect();
            let mean = |f: &dyn Fn(&TrialRecord) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            let connected: Vec<bool> = ok.iter().filter_map(|r| r.cstar_connected).collect();
            let conn_rate = if connected.is_empty() {
                String::new()
            } else {
                sig9(connected.iter().filter(|&&c| c).count() as f64 / connected.len() as f64)
            };
            let mut row = vec![p.index.to_string()];
            row.extend(p.values.iter().map(|(_, v)| sig9(*v)));
            row.extend([
                rows.len().to_string(),
                (rows.len() - ok.len()).to_string(),
                sig9(mean(&|r| r.exact as u8 as f64)),
                sig9(mean(&|r| r.agreement)),
                sig9(mean(&|r| r.phase1_agreement)),
                conn_rate,
            ]);
            writeln!(out, "# summary {}", row.join(",")).unwrap();
        }
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_owned()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n: f64,
    pub vertices: usize,
    pub edges: usize,
    pub expected_edges: f64,
    /// Fastest `full_recover` wall time over the repeats.
    pub secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `time(n_{k+1}) / time(n_k)` for consecutive sizes.
    pub step_ratios: Vec<f64>,
    /// Largest over smallest time per edge; `None` for a single size.
    pub per_edge_spread: Option<f64>,
}

impl BenchReport {
    /// Whether time per edge stays within a factor of two across sizes.
    pub fn near_linear(&self) -> bool {
        self.per_edge_spread.is_none_or(|s| s <= 2.0)
    }

    pub fn table(&self) -> String {
        let mut out = String::from("n,vertices,edges,expected_edges,secs,secs_per_edge\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                sig9(r.n),
                r.vertices,
                r.edges,
                sig9(r.expected_edges),
                sig9(r.secs),
                sig9(r.secs / r.edges.max(1) as f64)
            )
            .unwrap();
        }
        for (k, ratio) in self.step_ratios.iter().enumerate() {
            writeln!(
                out,
                "# time({})/time({}) = {}",
                sig9(self.rows[k + 1].n),
                sig9(self.rows[k].n),
                sig9(*ratio)
            )
            .unwrap();
        }
        if let Some(s) = self.per_edge_spread {
            let verdict = if self.near_linear() {
                "ok"
            } else {
                "exceeds 2"
            };
            writeln!(out, "# time per edge spread = {} ({verdict})", sig9(s)).unwrap();
        }
        out
    }
}

/// Times `full_recover` at each configured `n` on the base point's model
/// (seed `base_seed`), keeping the fastest of `bench.repeats` runs.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<BenchReport> {
    if cfg.bench.n.is_empty() {
        return Err(GhcmError::config("bench.n is empty"));
    }
    let mut rows = Vec::new();
    for &n in &cfg.bench.n {
        let mut at = cfg.clone();
        at.sweep.clear();
        at.n = n;
        let params = at.params()?;
        let consts = choose_constants(params.lambda, params.d, &cfg.constants)?;
        let inst = sample_ghcm(&params, cfg.base_seed)?;
        let mut secs = f64::INFINITY;
        for _ in 0..cfg.bench.repeats.max(1) {
            let t = Instant::now();
            full_recover(strip_labels(&inst), &consts)?;
            secs = secs.min(t.elapsed().as_secs_f64());
        }
        rows.push(BenchRow {
            n,
            vertices: inst.vertex_count(),
            edges: inst.observations().pair_count(),
            expected_edges: params.expected_ordered_pairs() / 2.0,
            secs,
        });
    }
    let step_ratios = rows.windows(2).map(|w| w[1].secs / w[0].secs).collect();
    let per_edge: Vec<f64> = rows
        .iter()
        .map(|r| r.secs / r.edges.max(1) as f64)
        .collect();
    let per_edge_spread = (rows.len() > 1).then(|| {
        per_edge.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            / per_edge.iter().copied().fold(f64::INFINITY, f64::min)
    });
    Ok(BenchReport {
        rows,
        step_ratios,
        per_edge_spread,
    })
}
