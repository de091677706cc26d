use crate::error::{io_err, Error, Result};
use crate::geometry::Circuit;
use crate::isosolver::{certificate_lower_bound, phi, volume_cap, Giant, PhiOutcome, PhiResult, SolverConfig};
use crate::lattice::{Edge, Point};
use crate::metric::{estimate_time_constant, TimeConstantConfig};
use crate::percolation::{check_uniq_event, default_kappa, label_clusters, sample_configuration, Configuration, GridSpec};
use crate::stats::{linear_fit, median, mean_stderr, wilson95, LinearFit};
use crate::wulff::{NormModel, WulffShape};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Tail,
    Barrier,
    Annulus,
    Density,
    Lln,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub ns: Vec<i64>,
    pub p: f64,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    /// One count for every n, or one per entry of `ns`.
    pub samples: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_delta() -> f64 {
    0.1
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, ns: Vec<i64>, p: f64, samples: usize, seed: u64) -> Self {
        ExperimentSpec {
            kind,
            ns,
            p,
            thresholds: Vec::new(),
            samples: vec![samples],
            seed,
            kappa: None,
            delta: default_delta(),
            solver: SolverConfig::default(),
        }
    }

    pub fn with_thresholds(mut self, ts: Vec<f64>) -> Self {
        self.thresholds = ts;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() {
            return Err(Error::InvalidParameter("no box sizes given".into()));
        }
        for &n in &self.ns {
            GridSpec::new(n, self.p, self.seed)?;
            self.solver.validate(n)?;
        }
        if self.samples.is_empty() || self.samples.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter("sample counts must be >= 1".into()));
        }
        if self.samples.len() != 1 && self.samples.len() != self.ns.len() {
            return Err(Error::InvalidParameter(format!(
                "{} sample counts for {} box sizes",
                self.samples.len(),
                self.ns.len()
            )));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidParameter(format!("threshold {t} is not positive")));
        }
        if self.kind == ExperimentKind::Tail && self.thresholds.is_empty() {
            return Err(Error::InvalidParameter("tail experiment without thresholds".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta = {} outside (0, 1)", self.delta)));
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::InvalidParameter(format!("kappa = {k} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn samples_for(&self, i: usize) -> usize {
        if self.samples.len() == 1 {
            self.samples[0]
        } else {
            self.samples[i]
        }
    }

    pub fn kappa_value(&self) -> f64 {
        self.kappa.unwrap_or_else(|| default_kappa(self.p))
    }

    fn solver(&self) -> SolverConfig {
        let mut s = self.solver.clone();
        s.kappa = Some(self.kappa_value());
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// One solver call, scaled by n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub n: i64,
    pub sample_index: u64,
    pub event: bool,
    pub n_lb: Option<f64>,
    pub n_ub: Option<f64>,
    pub length: Option<u64>,
    pub vol: Option<i64>,
    pub interior_count: Option<u64>,
    pub method: String,
}

impl SampleRecord {
    fn from_outcome(n: i64, sample_index: u64, out: &PhiOutcome) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v * n as f64);
        match out.result() {
            Some(r) => SampleRecord {
                n,
                sample_index,
                event: true,
                n_lb: finite(r.lower_bound),
                n_ub: finite(r.upper_bound),
                length: r.length,
                vol: r.vol,
                interior_count: r.interior_count,
                method: r.method.clone(),
            },
            None => SampleRecord {
                n,
                sample_index,
                event: false,
                n_lb: None,
                n_ub: None,
                length: None,
                vol: None,
                interior_count: None,
                method: "event-failed".into(),
            },
        }
    }

    fn n_ub_or_inf(&self) -> f64 {
        self.n_ub.unwrap_or(f64::INFINITY)
    }
}

/// False when the witness beats the deterministic floor or the bounds cross.
pub fn respects_floor(r: &PhiResult, solver: &SolverConfig) -> bool {
    let n = r.n as f64;
    let floor = certificate_lower_bound(r.n, r.cap, &solver.certificate);
    let witness_ok = match (r.length, r.vol) {
        (Some(l), Some(v)) => n * l as f64 / v as f64 >= floor - 1e-9,
        _ => true,
    };
    witness_ok && r.lower_bound <= r.upper_bound + 1e-12
}

fn run_samples<F>(spec: &ExperimentSpec, n: i64, count: usize, solve: &F) -> Result<Vec<(SampleRecord, bool)>>
where
    F: Fn(&Configuration) -> Result<PhiOutcome> + Sync,
{
    let grid = GridSpec::new(n, spec.p, spec.seed)?;
    let solver = spec.solver();
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let c = sample_configuration(grid, i)?;
            let out = solve(&c)?;
            let ok = out.result().map_or(true, |r| respects_floor(r, &solver));
            Ok((SampleRecord::from_outcome(n, i, &out), ok))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub n: i64,
    pub t: f64,
    /// Samples in which the uniqueness event held.
    pub trials: usize,
    /// Certified lower-tail events n UB <= t.
    pub lower_hits: usize,
    /// Certified upper-tail events n LB >= t.
    pub upper_hits: usize,
    /// LB < t < UB: neither tail certified.
    pub ambiguous: usize,
    pub lower_estimate: f64,
    pub lower_ci_lo: f64,
    pub lower_ci_hi: f64,
    pub upper_estimate: f64,
    pub upper_ci_lo: f64,
    pub upper_ci_hi: f64,
    pub event_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub p: f64,
    pub seed: u64,
    pub kappa: f64,
    pub rows: Vec<TailRow>,
    pub floor_violations: usize,
    pub samples: Vec<SampleRecord>,
}

impl TailEstimate {
    pub fn row(&self, n: i64, t: f64) -> Option<&TailRow> {
        self.rows.iter().find(|r| r.n == n && r.t == t)
    }
}

/// Monte Carlo estimate of the conditional lower and upper tails of n Φ_n.
pub fn tail_experiment(spec: &ExperimentSpec) -> Result<TailEstimate> {
    let solver = spec.solver();
    tail_experiment_with(spec, |c| phi(c, &solver))
}

/// The tail harness with the solver replaced by `solve`.
pub fn tail_experiment_with<F>(spec: &ExperimentSpec, solve: F) -> Result<TailEstimate>
where
    F: Fn(&Configuration) -> Result<PhiOutcome> + Sync,
{
    spec.validate()?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut floor_violations = 0;
    for (i, &n) in spec.ns.iter().enumerate() {
        let runs = run_samples(spec, n, spec.samples_for(i), &solve)?;
        floor_violations += runs.iter().filter(|(_, ok)| !ok).count();
        let solved: Vec<&SampleRecord> = runs.iter().map(|(r, _)| r).filter(|r| r.event).collect();
        let failures = runs.len() - solved.len();
        if solved.is_empty() {
            return Err(Error::NoConditionedTrials);
        }
        for &t in &spec.thresholds {
            let mut row = TailRow {
                n,
                t,
                trials: solved.len(),
                lower_hits: 0,
                upper_hits: 0,
                ambiguous: 0,
                lower_estimate: 0.0,
                lower_ci_lo: 0.0,
                lower_ci_hi: 0.0,
                upper_estimate: 0.0,
                upper_ci_lo: 0.0,
                upper_ci_hi: 0.0,
                event_failures: failures,
            };
            for r in &solved {
                let (lb, ub) = (r.n_lb.unwrap_or(f64::INFINITY), r.n_ub_or_inf());
                if ub <= t {
                    row.lower_hits += 1;
                }
                if lb >= t {
                    row.upper_hits += 1;
                }
                if lb < t && t < ub {
                    row.ambiguous += 1;
                }
            }
            let k = row.trials as f64;
            row.lower_estimate = row.lower_hits as f64 / k;
            row.upper_estimate = row.upper_hits as f64 / k;
            (row.lower_ci_lo, row.lower_ci_hi) = wilson95(row.lower_hits, row.trials);
            (row.upper_ci_lo, row.upper_ci_hi) = wilson95(row.upper_hits, row.trials);
            rows.push(row);
        }
        records.extend(runs.into_iter().map(|(r, _)| r));
    }
    Ok(TailEstimate { p: spec.p, seed: spec.seed, kappa: spec.kappa_value(), rows, floor_violations, samples: records })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateClass {
    Surface,
    Volume,
    Degenerate,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub t: f64,
    pub ns: Vec<i64>,
    pub log_p: Vec<f64>,
    /// log p̂ against n.
    pub fit_n: Option<LinearFit>,
    /// log p̂ against n².
    pub fit_n2: Option<LinearFit>,
    pub rss_n: Option<f64>,
    pub rss_n2: Option<f64>,
    pub class: RateClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Lower,
    Upper,
}

/// Decides between e^{-cn} and e^{-cn²} decay for estimates p̂(n). The order whose least
/// squares fit of log p̂ has at most half the residual sum of squares of the other wins.
pub fn rate_fit_points(t: f64, points: &[(i64, f64)]) -> RateFit {
    let mut out = RateFit {
        t,
        ns: Vec::new(),
        log_p: Vec::new(),
        fit_n: None,
        fit_n2: None,
        rss_n: None,
        rss_n2: None,
        class: RateClass::Inconclusive,
    };
    if points.iter().all(|&(_, p)| p <= 0.0 || p >= 1.0) {
        out.class = RateClass::Degenerate;
        return out;
    }
    let used: Vec<(i64, f64)> = points.iter().copied().filter(|&(_, p)| p > 0.0 && p < 1.0).collect();
    out.ns = used.iter().map(|u| u.0).collect();
    out.log_p = used.iter().map(|u| u.1.ln()).collect();
    let mut distinct = out.ns.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return out;
    }
    let xs: Vec<f64> = out.ns.iter().map(|&n| n as f64).collect();
    let xs2: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let f1 = linear_fit(&xs, &out.log_p);
    let f2 = linear_fit(&xs2, &out.log_p);
    let k = xs.len() as f64;
    let (r1, r2) = (f1.rms * f1.rms * k, f2.rms * f2.rms * k);
    out.class = if f1.slope < 0.0 && 2.0 * r1 < r2 {
        RateClass::Surface
    } else if f2.slope < 0.0 && 2.0 * r2 < r1 {
        RateClass::Volume
    } else {
        RateClass::Inconclusive
    };
    out.fit_n = Some(f1);
    out.fit_n2 = Some(f2);
    out.rss_n = Some(r1);
    out.rss_n2 = Some(r2);
    out
}

/// One fit per threshold of the estimate.
pub fn rate_fit(est: &TailEstimate, tail: Tail) -> Vec<RateFit> {
    let mut ts: Vec<f64> = est.rows.iter().map(|r| r.t).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.into_iter()
        .map(|t| {
            let pts: Vec<(i64, f64)> = est
                .rows
                .iter()
                .filter(|r| r.t == t)
                .map(|r| (r.n, if tail == Tail::Lower { r.lower_estimate } else { r.upper_estimate }))
                .collect();
            rate_fit_points(t, &pts)
        })
        .collect()
}

/// (n, log p̂ / n) for the lower tail at threshold t, skipping zero estimates.
pub fn log_rate_per_n(est: &TailEstimate, t: f64) -> Vec<(i64, f64)> {
    est.rows
        .iter()
        .filter(|r| r.t == t && r.lower_hits > 0)
        .map(|r| (r.n, r.lower_estimate.ln() / r.n as f64))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    pub t: f64,
    pub c0: f64,
    pub zeta: f64,
    pub k: i64,
    pub tau: f64,
    /// ⌊τ n⌋.
    pub gap: i64,
}

/// k is the least integer with 2 c0 √k > t, and τ is 99% of the largest value allowed by
/// 16 √k τ < c0 ζ with ζ = c0²/t².
pub fn barrier_params(n: i64, t: f64, c0: f64) -> Result<BarrierParams> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!("target {t} is not positive")));
    }
    let zeta = c0 * c0 / (t * t);
    let mut k = 1i64;
    while 2.0 * c0 * (k as f64).sqrt() <= t {
        k += 1;
    }
    let tau = 0.99 * c0 * zeta / (16.0 * (k as f64).sqrt());
    let gap = (tau * n as f64).floor() as i64;
    if gap < 1 {
        return Err(Error::InfeasibleBarrier(format!("tau n = {:.4} < 1 at n = {n}, k = {k}", tau * n as f64)));
    }
    if n / k < 1 {
        return Err(Error::InfeasibleBarrier(format!("n = {n} too small for k = {k} strips")));
    }
    Ok(BarrierParams { t, c0, zeta, k, tau, gap })
}

/// Vertical edges (x, i⌊n/k⌋) - (x, i⌊n/k⌋ + 1) for x in [-n, n - ⌊τn⌋] and |i| < k.
pub fn barrier_edges(n: i64, params: &BarrierParams) -> Vec<Edge> {
    let step = n / params.k;
    let mut out = Vec::new();
    for i in -params.k + 1..params.k {
        for x in -n..=n - params.gap {
            out.push(Edge::vertical(Point::new(x, i * step)));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub samples: usize,
    pub event_holds: usize,
    pub n_ub: Vec<f64>,
    pub median_n_ub: f64,
    /// Fraction of conditioned samples with n LB >= t.
    pub lb_above: f64,
    /// Fraction of conditioned samples whose witness has n ratio >= t.
    pub witness_above: f64,
    pub mean_giant_density: f64,
}

fn summarize_arm(records: &[SampleRecord], densities: &[f64], t: f64) -> ArmSummary {
    let solved: Vec<&SampleRecord> = records.iter().filter(|r| r.event).collect();
    let k = solved.len().max(1) as f64;
    let n_ub: Vec<f64> = solved.iter().map(|r| r.n_ub_or_inf()).collect();
    ArmSummary {
        samples: records.len(),
        event_holds: solved.len(),
        median_n_ub: if n_ub.is_empty() { f64::NAN } else { median(&n_ub) },
        lb_above: solved.iter().filter(|r| r.n_lb.unwrap_or(f64::INFINITY) >= t).count() as f64 / k,
        witness_above: n_ub.iter().filter(|&&u| u >= t).count() as f64 / k,
        mean_giant_density: if densities.is_empty() { f64::NAN } else { mean_stderr(densities).0 },
        n_ub,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    pub n: i64,
    pub p: f64,
    pub params: BarrierParams,
    pub edge_count: usize,
    /// log P(all barrier edges closed) = |Ē| log(1 - p).
    pub log_prob: f64,
    pub planted: ArmSummary,
    pub unplanted: ArmSummary,
    /// Every barrier edge was closed in every planted sample.
    pub plant_verified: bool,
    pub median_ratio: f64,
}

fn solve_with_density(c: &Configuration, solver: &SolverConfig) -> Result<(PhiOutcome, Option<f64>)> {
    let out = phi(c, solver)?;
    let density = out.result().map(|_| {
        let lab = label_clusters(c);
        check_uniq_event(&lab, solver.kappa.unwrap_or(0.5)).theta_n_global
    });
    Ok((out, density))
}

/// Compares n UB on samples with the barrier edges forced closed against the same samples
/// left alone. Uses the first entry of `ns`.
pub fn plant_barrier_experiment(spec: &ExperimentSpec, t_target: f64) -> Result<BarrierReport> {
    spec.validate()?;
    let n = spec.ns[0];
    let params = barrier_params(n, t_target, spec.solver.certificate.c0)?;
    let edges = barrier_edges(n, &params);
    let grid = GridSpec::new(n, spec.p, spec.seed)?;
    let solver = spec.solver();
    let runs: Vec<_> = (0..spec.samples_for(0) as u64)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let base = sample_configuration(grid, i)?;
            let planted = base.force_edges(&edges, false)?;
            let verified = edges.iter().all(|&e| !planted.is_open(e));
            let (po, pd) = solve_with_density(&planted, &solver)?;
            let (uo, ud) = solve_with_density(&base, &solver)?;
            Ok((SampleRecord::from_outcome(n, i, &po), pd, SampleRecord::from_outcome(n, i, &uo), ud, verified))
        })
        .collect::<Result<_>>()?;
    let planted: Vec<SampleRecord> = runs.iter().map(|r| r.0.clone()).collect();
    let unplanted: Vec<SampleRecord> = runs.iter().map(|r| r.2.clone()).collect();
    let pd: Vec<f64> = runs.iter().filter_map(|r| r.1).collect();
    let ud: Vec<f64> = runs.iter().filter_map(|r| r.3).collect();
    let planted = summarize_arm(&planted, &pd, t_target);
    let unplanted = summarize_arm(&unplanted, &ud, t_target);
    Ok(BarrierReport {
        n,
        p: spec.p,
        params,
        edge_count: edges.len(),
        log_prob: edges.len() as f64 * (1.0 - spec.p).ln(),
        median_ratio: planted.median_n_ub / unplanted.median_n_ub,
        planted,
        unplanted,
        plant_verified: runs.iter().all(|r| r.4),
    })
}

/// ⌊n/√2⌋ in exact integer arithmetic.
pub fn annulus_radius(n: i64) -> i64 {
    let mut m = ((n as f64) / std::f64::consts::SQRT_2).floor() as i64;
    while 2 * (m + 1) * (m + 1) <= n * n {
        m += 1;
    }
    while m > 0 && 2 * m * m > n * n {
        m -= 1;
    }
    m
}

/// Edges of B(n) with at least one endpoint on ∂B(m).
pub fn annulus_edges(n: i64, m: i64) -> Vec<Edge> {
    crate::lattice::BoxLattice::new(n)
        .edges()
        .filter(|e| {
            let (a, b) = e.endpoints();
            a.linf() == m || b.linf() == m
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusReport {
    pub n: i64,
    pub p: f64,
    pub m: i64,
    pub edge_count: usize,
    /// log P(all annulus edges open) = |F| log p.
    pub log_prob: f64,
    pub theta_hat: f64,
    pub eps: f64,
    pub trials: usize,
    pub event_failures: usize,
    /// The square has vol <= floor(|B(n)|/2).
    pub within_cap: bool,
    pub n_ratios: Vec<f64>,
    pub mean_n_ratio: f64,
    /// 2√2/θ̂ + eps.
    pub target: f64,
    pub plant_verified: bool,
}

/// Forces every edge touching ∂B(m), m = ⌊n/√2⌋, open and evaluates n |∂B(m)| / |C ∩ B(m)|.
/// Uses the first entry of `ns`.
pub fn plant_annulus_experiment(spec: &ExperimentSpec, theta_hat: f64, eps: f64) -> Result<AnnulusReport> {
    spec.validate()?;
    let n = spec.ns[0];
    if n < 8 {
        return Err(Error::InvalidParameter(format!("annulus experiment needs n >= 8, got {n}")));
    }
    let m = annulus_radius(n);
    let edges = annulus_edges(n, m);
    let grid = GridSpec::new(n, spec.p, spec.seed)?;
    let kappa = spec.kappa_value();
    let ring = Circuit::new(crate::isosolver::square_circuit(m))?;
    let runs: Vec<(Option<f64>, bool)> = (0..spec.samples_for(0) as u64)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let c = sample_configuration(grid, i)?.force_edges(&edges, true)?;
            let verified = edges.iter().all(|&e| c.is_open(e));
            let (_, giant) = Giant::under_event(&c, Some(kappa));
            let ratio = giant.and_then(|g| {
                ring.vertices().iter().all(|&v| g.contains(v)).then(|| {
                    let w = crate::geometry::weighted_interior_count(&ring, g.marks());
                    n as f64 * ring.len() as f64 / w as f64
                })
            });
            Ok((ratio, verified))
        })
        .collect::<Result<_>>()?;
    let n_ratios: Vec<f64> = runs.iter().filter_map(|r| r.0).collect();
    Ok(AnnulusReport {
        n,
        p: spec.p,
        m,
        edge_count: edges.len(),
        log_prob: edges.len() as f64 * spec.p.ln(),
        theta_hat,
        eps,
        trials: n_ratios.len(),
        event_failures: runs.len() - n_ratios.len(),
        within_cap: (2 * m + 1) * (2 * m + 1) <= volume_cap(n),
        mean_n_ratio: if n_ratios.is_empty() { f64::NAN } else { mean_stderr(&n_ratios).0 },
        target: 2.0 * std::f64::consts::SQRT_2 / theta_hat + eps,
        n_ratios,
        plant_verified: runs.iter().all(|r| r.1),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRecord {
    pub source: String,
    pub lo: Point,
    pub hi: Point,
    pub length: u64,
    pub vol: i64,
    pub giant_count: u64,
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityStats {
    pub n: i64,
    pub delta: f64,
    pub theta_hat: f64,
    pub family: String,
    pub evaluated: usize,
    /// max θ_n(vol γ) - θ̂ over the family; a lower bound of the supremum over all circuits.
    pub s_plus: f64,
    /// max θ̂ - θ_n(vol γ) over family members inside B((1-δ)n).
    pub s_minus: f64,
    /// The maximizers of ŝ⁺ and ŝ⁻, then every extra circuit that passed the filters.
    pub records: Vec<DensityRecord>,
}

struct PrefixCounts {
    side: usize,
    n: i64,
    sums: Vec<u64>,
}

impl PrefixCounts {
    fn new(n: i64, members: &[bool]) -> Self {
        let side = (2 * n + 1) as usize;
        let mut sums = vec![0u64; (side + 1) * (side + 1)];
        for y in 0..side {
            for x in 0..side {
                sums[(y + 1) * (side + 1) + x + 1] = members[y * side + x] as u64 + sums[y * (side + 1) + x + 1]
                    + sums[(y + 1) * (side + 1) + x]
                    - sums[y * (side + 1) + x];
            }
        }
        PrefixCounts { side, n, sums }
    }

    /// Members in the closed rectangle [lo, hi].
    fn count(&self, lo: Point, hi: Point) -> u64 {
        let s = self.side + 1;
        let (x0, y0) = ((lo.x + self.n) as usize, (lo.y + self.n) as usize);
        let (x1, y1) = ((hi.x + self.n) as usize + 1, (hi.y + self.n) as usize + 1);
        self.sums[y1 * s + x1] + self.sums[y0 * s + x0] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0]
    }
}

/// Giant density deviations over axis-parallel rectangles with corners on a grid of step
/// ⌈δ²n⌉, plus `extra` circuits. A circuit enters only if its l∞ diameter is at least δn and
/// n |γ| / vol(γ) <= 1/δ.
pub fn density_stats(config: &Configuration, kappa: f64, theta_hat: f64, delta: f64, extra: &[Circuit]) -> Result<DensityStats> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta = {delta} outside (0, 1)")));
    }
    let n = config.n();
    let (_, giant) = Giant::under_event(config, Some(kappa));
    let giant = giant.ok_or(Error::NoUniqueLargest)?;
    let prefix = PrefixCounts::new(n, &giant.members);
    let nf = n as f64;
    let inner = ((1.0 - delta) * nf).floor() as i64;
    let step = (delta * delta * nf).ceil().max(1.0) as i64;
    let keep = |diam: i64, length: u64, vol: i64| diam as f64 >= delta * nf && nf * length as f64 / vol as f64 <= 1.0 / delta;
    let grid: Vec<i64> = (-n..=n).step_by(step as usize).collect();
    let mut best_plus: Option<(f64, DensityRecord)> = None;
    let mut best_minus: Option<(f64, DensityRecord)> = None;
    let mut evaluated = 0usize;
    let mut consider = |rec: DensityRecord, inside: bool, evaluated: &mut usize| {
        *evaluated += 1;
        let up = rec.density - theta_hat;
        if best_plus.as_ref().map_or(true, |b| up > b.0) {
            best_plus = Some((up, rec.clone()));
        }
        if inside && best_minus.as_ref().map_or(true, |b| -up > b.0) {
            best_minus = Some((-up, rec));
        }
    };
    for (i, &x0) in grid.iter().enumerate() {
        for &x1 in &grid[i + 1..] {
            for (j, &y0) in grid.iter().enumerate() {
                for &y1 in &grid[j + 1..] {
                    let (w, h) = (x1 - x0, y1 - y0);
                    let length = 2 * (w + h) as u64;
                    let vol = (w + 1) * (h + 1);
                    if !keep(w.max(h), length, vol) {
                        continue;
                    }
                    let (lo, hi) = (Point::new(x0, y0), Point::new(x1, y1));
                    let count = prefix.count(lo, hi);
                    let inside = lo.linf().max(hi.linf()) <= inner;
                    let rec = DensityRecord { source: "rectangle".into(), lo, hi, length, vol, giant_count: count, density: count as f64 / vol as f64 };
                    consider(rec, inside, &mut evaluated);
                }
            }
        }
    }
    let mut extras = Vec::new();
    for c in extra {
        let (lo, hi) = c.bbox();
        let diam = (hi.x - lo.x).max(hi.y - lo.y);
        let (length, vol) = (c.len() as u64, c.vol());
        if !keep(diam, length, vol) {
            continue;
        }
        let count = crate::geometry::weighted_interior_count(c, giant.marks());
        let inside = lo.linf().max(hi.linf()) <= inner;
        let rec = DensityRecord { source: "witness".into(), lo, hi, length, vol, giant_count: count, density: count as f64 / vol as f64 };
        extras.push(rec.clone());
        consider(rec, inside, &mut evaluated);
    }
    let (Some(plus), minus) = (best_plus, best_minus) else {
        return Err(Error::EmptyFamily);
    };
    let mut records = vec![plus.1];
    let s_minus = match minus {
        Some((v, r)) => {
            records.push(r);
            v
        }
        None => f64::NEG_INFINITY,
    };
    records.extend(extras);
    Ok(DensityStats {
        n,
        delta,
        theta_hat,
        family: format!("axis-parallel rectangles with corners on step {step}, plus {} extra circuits", extra.len()),
        evaluated,
        s_plus: plus.0,
        s_minus,
        records,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub n: i64,
    pub trials: usize,
    pub event_failures: usize,
    pub s_plus: Vec<f64>,
    pub s_minus: Vec<f64>,
    /// Fraction of conditioned samples with ŝ⁻ >= δ.
    pub minus_exceeds: f64,
}

/// Density statistics per n, with each sample's solver witness added to the rectangle family.
pub fn density_experiment(spec: &ExperimentSpec, theta_hat: f64, with_witnesses: bool) -> Result<Vec<DensityRow>> {
    spec.validate()?;
    let kappa = spec.kappa_value();
    let solver = spec.solver();
    let mut rows = Vec::new();
    for (i, &n) in spec.ns.iter().enumerate() {
        let grid = GridSpec::new(n, spec.p, spec.seed)?;
        let stats: Vec<Option<DensityStats>> = (0..spec.samples_for(i) as u64)
            .into_par_iter()
            .map(|s| -> Result<_> {
                let c = sample_configuration(grid, s)?;
                let extra = if with_witnesses {
                    phi(&c, &solver)?.result().and_then(|r| r.witness.clone()).into_iter().collect()
                } else {
                    Vec::new()
                };
                match density_stats(&c, kappa, theta_hat, spec.delta, &extra) {
                    Ok(d) => Ok(Some(d)),
                    Err(Error::NoUniqueLargest) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        let ok: Vec<&DensityStats> = stats.iter().flatten().collect();
        let s_minus: Vec<f64> = ok.iter().map(|d| d.s_minus).collect();
        rows.push(DensityRow {
            n,
            trials: ok.len(),
            event_failures: stats.len() - ok.len(),
            s_plus: ok.iter().map(|d| d.s_plus).collect(),
            minus_exceeds: s_minus.iter().filter(|&&s| s >= spec.delta).count() as f64 / ok.len().max(1) as f64,
            s_minus,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnRow {
    pub n: i64,
    pub trials: usize,
    pub event_failures: usize,
    pub floor_violations: usize,
    pub median_n_ub: f64,
    pub median_n_lb: f64,
    pub samples: Vec<SampleRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnReport {
    pub p: f64,
    pub rows: Vec<LlnRow>,
    /// |m_{i+1} - m_i| / m_i for successive medians of n UB.
    pub relative_changes: Vec<f64>,
}

/// Medians of n LB and n UB for each box size.
pub fn lln_experiment(spec: &ExperimentSpec) -> Result<LlnReport> {
    spec.validate()?;
    let solver = spec.solver();
    let solve = |c: &Configuration| phi(c, &solver);
    let mut rows = Vec::new();
    for (i, &n) in spec.ns.iter().enumerate() {
        let runs = run_samples(spec, n, spec.samples_for(i), &solve)?;
        let solved: Vec<&SampleRecord> = runs.iter().map(|r| &r.0).filter(|r| r.event).collect();
        if solved.is_empty() {
            return Err(Error::NoConditionedTrials);
        }
        let ubs: Vec<f64> = solved.iter().map(|r| r.n_ub_or_inf()).collect();
        let lbs: Vec<f64> = solved.iter().map(|r| r.n_lb.unwrap_or(f64::INFINITY)).collect();
        rows.push(LlnRow {
            n,
            trials: solved.len(),
            event_failures: runs.len() - solved.len(),
            floor_violations: runs.iter().filter(|r| !r.1).count(),
            median_n_ub: median(&ubs),
            median_n_lb: median(&lbs),
            samples: runs.into_iter().map(|r| r.0).collect(),
        });
    }
    let relative_changes = rows.windows(2).map(|w| ((w[1].median_n_ub - w[0].median_n_ub) / w[0].median_n_ub).abs()).collect();
    Ok(LlnReport { p: spec.p, rows, relative_changes })
}

/// Time-constant norm from estimates along e1, the diagonal and (2, 1).
pub fn estimate_norm(p: f64, lengths: &[i64], samples: usize, seed: u64) -> Result<NormModel> {
    let ests = [(1, 0), (1, 1), (2, 1)]
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            estimate_time_constant(&TimeConstantConfig {
                p,
                direction: Point::new(a, b),
                lengths: lengths.to_vec(),
                samples_per_length: samples,
                seed: seed.wrapping_add(i as u64),
                kappa: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NormModel::from_time_constants(&ests)
}

/// Everything a run produced; `report` writes whatever is present.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunRecords {
    pub spec: Option<ExperimentSpec>,
    pub tail: Option<TailEstimate>,
    pub rates: Vec<RateFit>,
    pub barrier: Option<BarrierReport>,
    pub annulus: Option<AnnulusReport>,
    pub density: Vec<DensityRow>,
    pub lln: Option<LlnReport>,
    pub wulff: Option<WulffShape>,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    spec_hash: Option<String>,
    #[serde(flatten)]
    records: &'a RunRecords,
}

#[derive(Serialize)]
struct SampleRow<'a> {
    n: i64,
    sample_index: u64,
    event: bool,
    n_lb: Option<f64>,
    n_ub: Option<f64>,
    length: Option<u64>,
    vol: Option<i64>,
    interior_count: Option<u64>,
    method: &'a str,
}

#[derive(Serialize)]
struct LlnCsvRow {
    n: i64,
    trials: usize,
    event_failures: usize,
    floor_violations: usize,
    median_n_lb: f64,
    median_n_ub: f64,
}

#[derive(Serialize)]
struct RateCsvRow {
    t: f64,
    points: usize,
    slope_n: Option<f64>,
    rss_n: Option<f64>,
    slope_n2: Option<f64>,
    rss_n2: Option<f64>,
    class: RateClass,
}

#[derive(Serialize)]
struct ArmCsvRow {
    arm: &'static str,
    n_ub: f64,
}

#[derive(Serialize)]
struct AnnulusCsvRow {
    n: i64,
    m: i64,
    n_ratio: f64,
}

#[derive(Serialize)]
struct DensityCsvRow {
    n: i64,
    s_plus: f64,
    s_minus: f64,
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(io_err(path))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

fn sample_rows(records: &[SampleRecord]) -> Vec<SampleRow<'_>> {
    records
        .iter()
        .map(|r| SampleRow {
            n: r.n,
            sample_index: r.sample_index,
            event: r.event,
            n_lb: r.n_lb,
            n_ub: r.n_ub,
            length: r.length,
            vol: r.vol,
            interior_count: r.interior_count,
            method: &r.method,
        })
        .collect()
}

/// Writes CSV tables, summary.json and SVG plots into `dir`; returns the files written.
pub fn report(records: &RunRecords, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    if let Some(t) = &records.tail {
        write_csv(&put("tail.csv"), &t.rows)?;
        write_csv(&put("tail_samples.csv"), sample_rows(&t.samples))?;
        let mut ns: Vec<i64> = t.rows.iter().map(|r| r.n).collect();
        ns.dedup();
        let mut ts: Vec<f64> = t.rows.iter().map(|r| r.t).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let series = |sq: bool| -> Vec<(String, Vec<(f64, f64)>)> {
            ts.iter()
                .map(|&th| {
                    let pts = t
                        .rows
                        .iter()
                        .filter(|r| r.t == th && r.lower_hits > 0)
                        .map(|r| {
                            let x = r.n as f64;
                            (if sq { x * x } else { x }, r.lower_estimate.ln())
                        })
                        .collect();
                    (format!("t = {th}"), pts)
                })
                .collect()
        };
        write_file(&put("tail_log_p_vs_n.svg"), &line_plot("lower tail", "n", "log p", &series(false), None))?;
        write_file(&put("tail_log_p_vs_n2.svg"), &line_plot("lower tail", "n^2", "log p", &series(true), None))?;
    }
    if !records.rates.is_empty() {
        write_csv(
            &put("rate_fit.csv"),
            records.rates.iter().map(|r| RateCsvRow {
                t: r.t,
                points: r.ns.len(),
                slope_n: r.fit_n.map(|f| f.slope),
                rss_n: r.rss_n,
                slope_n2: r.fit_n2.map(|f| f.slope),
                rss_n2: r.rss_n2,
                class: r.class,
            }),
        )?;
    }
    if let Some(l) = &records.lln {
        write_csv(
            &put("lln.csv"),
            l.rows.iter().map(|r| LlnCsvRow {
                n: r.n,
                trials: r.trials,
                event_failures: r.event_failures,
                floor_violations: r.floor_violations,
                median_n_lb: r.median_n_lb,
                median_n_ub: r.median_n_ub,
            }),
        )?;
        let all: Vec<SampleRecord> = l.rows.iter().flat_map(|r| r.samples.clone()).collect();
        write_csv(&put("lln_samples.csv"), sample_rows(&all))?;
        let ub: Vec<(f64, f64)> = l.rows.iter().map(|r| (r.n as f64, r.median_n_ub)).collect();
        let lb: Vec<(f64, f64)> = l.rows.iter().map(|r| (r.n as f64, r.median_n_lb)).collect();
        write_file(
            &put("lln_band.svg"),
            &line_plot("median n Phi bounds", "n", "n Phi", &[("UB".into(), ub.clone()), ("LB".into(), lb.clone())], Some((&lb, &ub))),
        )?;
    }
    if let Some(b) = &records.barrier {
        write_csv(
            &put("barrier.csv"),
            b.planted.n_ub.iter().map(|&u| ArmCsvRow { arm: "planted", n_ub: u }).chain(b.unplanted.n_ub.iter().map(|&u| ArmCsvRow { arm: "unplanted", n_ub: u })),
        )?;
    }
    if let Some(a) = &records.annulus {
        write_csv(&put("annulus.csv"), a.n_ratios.iter().map(|&r| AnnulusCsvRow { n: a.n, m: a.m, n_ratio: r }))?;
    }
    if !records.density.is_empty() {
        write_csv(
            &put("density.csv"),
            records.density.iter().flat_map(|d| d.s_plus.iter().zip(&d.s_minus).map(move |(&s_plus, &s_minus)| DensityCsvRow { n: d.n, s_plus, s_minus })),
        )?;
    }
    if let Some(w) = &records.wulff {
        write_file(&put("wulff.svg"), &w.to_svg())?;
    }
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        spec_hash: records.spec.as_ref().map(|s| s.hash()).transpose()?,
        records,
    };
    write_file(&put("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(written)
}

fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)], band: Option<(&[(f64, f64)], &[(f64, f64)])>) -> String {
    let (w, h, pad) = (480.0, 320.0, 50.0);
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    svg += &format!("<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>\n", w / 2.0);
    svg += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{xlabel}</text>\n", w / 2.0, h - 10.0);
    svg += &format!("<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{ylabel}</text>\n", h / 2.0, h / 2.0);
    if pts.is_empty() {
        return svg + "</svg>\n";
    }
    let fold = |f: fn(&(f64, f64)) -> f64| pts.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (x0, x1) = fold(|p| p.0);
    let (y0, y1) = fold(|p| p.1);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * pad);
    svg += &format!("<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n", w - 2.0 * pad, h - 2.0 * pad);
    svg += &format!("<text x=\"{pad}\" y=\"{}\" font-size=\"10\">{x0:.3}</text>\n", h - pad + 14.0);
    svg += &format!("<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{x1:.3}</text>\n", w - pad, h - pad + 14.0);
    svg += &format!("<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{y0:.3}</text>\n", pad - 4.0, h - pad);
    svg += &format!("<text x=\"{}\" y=\"{pad}\" font-size=\"10\" text-anchor=\"end\">{y1:.3}</text>\n", pad - 4.0);
    if let Some((lo, hi)) = band {
        let ring: Vec<String> = lo.iter().chain(hi.iter().rev()).filter(|p| p.1.is_finite()).map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        svg += &format!("<polygon points=\"{}\" fill=\"#cde\" stroke=\"none\"/>\n", ring.join(" "));
    }
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    for (i, (name, s)) in series.iter().enumerate() {
        let c = colors[i % colors.len()];
        let line: Vec<String> = s.iter().filter(|p| p.1.is_finite()).map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        svg += &format!("<polyline points=\"{}\" fill=\"none\" stroke=\"{c}\"/>\n", line.join(" "));
        svg += &format!("<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{c}\">{name}</text>\n", w - pad + 4.0, pad + 14.0 * (i as f64 + 1.0));
    }
    svg + "</svg>\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::BoxLattice;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn fixed(c: &Configuration, n_lb: f64, n_ub: f64) -> PhiOutcome {
        let n = c.n() as f64;
        PhiOutcome::Solved(PhiResult {
            n: c.n(),
            p: c.spec.p,
            seed: c.spec.master_seed,
            sample_index: c.sample_index,
            lower_bound: n_lb / n,
            upper_bound: n_ub / n,
            method: "stub".into(),
            witness: None,
            cap: volume_cap(c.n()),
            vol: None,
            interior_count: None,
            length: None,
        })
    }

    fn tail_spec(ns: Vec<i64>, samples: usize, ts: Vec<f64>) -> ExperimentSpec {
        let mut s = ExperimentSpec::new(ExperimentKind::Tail, ns, 0.75, samples, 3).with_thresholds(ts);
        s.kappa = Some(0.3);
        s
    }

    #[test]
    fn spec_validation() {
        assert!(tail_spec(vec![8], 4, vec![3.0]).validate().is_ok());
        assert!(tail_spec(vec![8], 0, vec![3.0]).validate().is_err());
        assert!(tail_spec(vec![8], 4, vec![-1.0]).validate().is_err());
        assert!(tail_spec(vec![8], 4, vec![]).validate().is_err());
        assert!(tail_spec(vec![], 4, vec![3.0]).validate().is_err());
        let mut s = tail_spec(vec![8, 12], 4, vec![3.0]);
        s.samples = vec![1, 2, 3];
        assert!(s.validate().is_err());
        s.samples = vec![1, 2];
        assert!(s.validate().is_ok());
        assert_eq!(s.samples_for(1), 2);
        let back = ExperimentSpec::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back.hash().unwrap(), s.hash().unwrap());
        assert_eq!(s.hash().unwrap().len(), 64);
    }

    #[test]
    fn stub_frequencies_are_reproduced_exactly() {
        // index mod 4: 0 -> UB 2.5, 1 -> LB 5, 2 -> ambiguous, 3 -> event fails
        let spec = tail_spec(vec![6, 9], 40, vec![3.0, 4.0]);
        let est = tail_experiment_with(&spec, |c| {
            Ok(match c.sample_index % 4 {
                0 => fixed(c, 2.0, 2.5),
                1 => fixed(c, 5.0, 6.0),
                2 => fixed(c, 2.0, 6.0),
                _ => PhiOutcome::EventFailed { n: c.n(), p: c.spec.p, seed: c.spec.master_seed, sample_index: c.sample_index },
            })
        })
        .unwrap();
        assert_eq!(est.rows.len(), 4);
        for r in &est.rows {
            assert_eq!((r.trials, r.event_failures), (30, 10));
            assert_eq!((r.lower_hits, r.upper_hits, r.ambiguous), (10, 10, 10));
            assert_eq!(r.lower_estimate, 1.0 / 3.0);
            assert_eq!(r.upper_estimate, 1.0 / 3.0);
            assert!(r.lower_ci_lo <= r.lower_estimate && r.lower_estimate <= r.lower_ci_hi);
            assert!(0.0 <= r.lower_ci_lo && r.upper_ci_hi <= 1.0);
        }
        assert_eq!(est.floor_violations, 0);
        assert_eq!(est.samples.len(), 80);
    }

    #[test]
    fn no_conditioned_trials_is_an_error() {
        let spec = tail_spec(vec![6], 5, vec![3.0]);
        let r = tail_experiment_with(&spec, |c| {
            Ok(PhiOutcome::EventFailed { n: c.n(), p: c.spec.p, seed: c.spec.master_seed, sample_index: c.sample_index })
        });
        assert!(matches!(r, Err(Error::NoConditionedTrials)));
    }

    #[test]
    fn crossed_bounds_count_as_floor_violations() {
        let spec = tail_spec(vec![6], 6, vec![3.0]);
        let est = tail_experiment_with(&spec, |c| Ok(if c.sample_index == 2 { fixed(c, 4.0, 3.0) } else { fixed(c, 3.0, 4.0) })).unwrap();
        assert_eq!(est.floor_violations, 1);
    }

    #[test]
    fn real_tail_run_is_deterministic_and_floor_holds() {
        let spec = tail_spec(vec![6, 8], 12, vec![2.0, 3.5]);
        let a = tail_experiment(&spec).unwrap();
        let b = tail_experiment(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.floor_violations, 0);
        for r in a.rows.iter().filter(|r| r.t == 2.0) {
            assert_eq!(r.lower_hits, 0);
        }
        let dir = tempfile::tempdir().unwrap();
        let recs = RunRecords { spec: Some(spec.clone()), tail: Some(a.clone()), rates: rate_fit(&a, Tail::Lower), ..Default::default() };
        let files = report(&recs, &dir.path().join("one")).unwrap();
        report(&RunRecords { tail: Some(b), ..recs.clone() }, &dir.path().join("two")).unwrap();
        for f in &files {
            let name = f.file_name().unwrap();
            assert_eq!(std::fs::read(f).unwrap(), std::fs::read(dir.path().join("two").join(name)).unwrap(), "{name:?}");
        }
        let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("one/summary.json")).unwrap()).unwrap();
        assert_eq!(summary["schema_version"], SCHEMA_VERSION);
        assert_eq!(summary["spec_hash"], spec.hash().unwrap());
        assert!(dir.path().join("one/tail_log_p_vs_n2.svg").exists());
    }

    #[test]
    fn report_write_failure_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = report(&RunRecords::default(), &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }

    #[test]
    fn synthetic_rates_are_classified() {
        let ns = [8i64, 12, 16, 24, 32];
        let surface: Vec<_> = ns.iter().map(|&n| (n, (-0.3 * n as f64).exp())).collect();
        assert_eq!(rate_fit_points(1.0, &surface).class, RateClass::Surface);
        let volume: Vec<_> = ns.iter().map(|&n| (n, (-0.01 * (n * n) as f64).exp())).collect();
        assert_eq!(rate_fit_points(1.0, &volume).class, RateClass::Volume);
        let flat: Vec<_> = ns.iter().map(|&n| (n, 0.2)).collect();
        assert_eq!(rate_fit_points(1.0, &flat).class, RateClass::Inconclusive);
        let degenerate: Vec<_> = ns.iter().map(|&n| (n, if n < 16 { 1.0 } else { 0.0 })).collect();
        assert_eq!(rate_fit_points(1.0, &degenerate).class, RateClass::Degenerate);
        assert_eq!(rate_fit_points(1.0, &surface[..2]).class, RateClass::Inconclusive);
        let mut one_zero = surface.clone();
        one_zero[4].1 = 0.0;
        assert_eq!(rate_fit_points(1.0, &one_zero).class, RateClass::Surface);
    }

    #[test]
    fn equal_residuals_are_inconclusive() {
        // symmetric noise around a line in n gives comparable fits in n and n²
        let pts = [(1i64, (-1.0f64).exp()), (2, (-2.5f64).exp()), (3, (-2.5f64).exp()), (4, (-4.0f64).exp())];
        let f = rate_fit_points(1.0, &pts);
        let (r1, r2) = (f.rss_n.unwrap(), f.rss_n2.unwrap());
        assert!(r1 < 2.0 * r2 && r2 < 2.0 * r1);
        assert_eq!(f.class, RateClass::Inconclusive);
    }

    #[test]
    fn barrier_recipe_at_t6() {
        let p = barrier_params(128, 6.0, 2.0).unwrap();
        assert_eq!(p.k, 3);
        assert!(2.0 * 2.0 * 3f64.sqrt() > 6.0 && 2.0 * 2.0 * 2f64.sqrt() <= 6.0);
        assert!(16.0 * 3f64.sqrt() * p.tau < 2.0 * p.zeta);
        assert_eq!(p.gap, 1);
        let edges = barrier_edges(128, &p);
        let distinct: HashSet<_> = edges.iter().collect();
        let lattice = BoxLattice::new(128);
        assert!(edges.iter().all(|&e| lattice.edge_id(e).is_some()));
        assert_eq!(distinct.len(), edges.len());
        assert_eq!(edges.len() as i64, (2 * p.k - 1) * (2 * 128 - p.gap + 1));
        assert!(matches!(barrier_params(64, 6.0, 2.0), Err(Error::InfeasibleBarrier(_))));
        assert!(barrier_params(128, 0.0, 2.0).is_err());
    }

    #[test]
    fn barrier_plant_is_verified_and_cost_exact() {
        let mut spec = ExperimentSpec::new(ExperimentKind::Barrier, vec![40], 0.75, 2, 5);
        spec.kappa = Some(0.3);
        let r = plant_barrier_experiment(&spec, 3.0).unwrap();
        assert!(r.plant_verified);
        let lattice = BoxLattice::new(40);
        let c = sample_configuration(GridSpec::new(40, 0.75, 5).unwrap(), 0).unwrap();
        let planted = c.force_edges(&barrier_edges(40, &r.params), false).unwrap();
        let closed_now = lattice.edges().filter(|&e| c.is_open(e) && !planted.is_open(e)).count();
        assert!(closed_now <= r.edge_count);
        let cost: f64 = (0..r.edge_count).map(|_| (0.25f64).ln()).sum();
        assert!((r.log_prob - cost).abs() < 1e-9 * cost.abs());
        assert_eq!(r.log_prob, r.edge_count as f64 * 0.25f64.ln());
    }

    #[test]
    fn annulus_counts() {
        for n in [8i64, 9, 17, 64, 100, 128, 181] {
            let m = annulus_radius(n);
            assert_eq!(m, (n as f64 / 2f64.sqrt()).floor() as i64, "n = {n}");
            assert_eq!(annulus_edges(n, m).len() as i64, 24 * m);
        }
    }

    #[test]
    fn annulus_at_p1_matches_arithmetic() {
        let mut spec = ExperimentSpec::new(ExperimentKind::Annulus, vec![30], 1.0, 2, 1);
        spec.kappa = Some(0.5);
        let r = plant_annulus_experiment(&spec, 1.0, 0.3).unwrap();
        let m = 21.0;
        assert_eq!(r.m, 21);
        assert_eq!(r.trials, 2);
        assert!(r.plant_verified && r.within_cap);
        assert!((r.mean_n_ratio - 30.0 * 8.0 * m / ((2.0 * m + 1.0) * (2.0 * m + 1.0))).abs() < 1e-12);
        assert_eq!(r.log_prob, 0.0);
        spec.ns = vec![20];
        assert!(!plant_annulus_experiment(&spec, 1.0, 0.3).unwrap().within_cap);
        assert!(plant_annulus_experiment(&ExperimentSpec::new(ExperimentKind::Annulus, vec![7], 1.0, 1, 1), 1.0, 0.3).is_err());
    }

    #[test]
    fn density_on_full_grid_is_zero() {
        let c = Configuration::all_open(16);
        let d = density_stats(&c, 0.5, 1.0, 0.25, &[]).unwrap();
        assert_eq!(d.s_plus, 0.0);
        assert_eq!(d.s_minus, 0.0);
        assert!(d.evaluated > 0);
        assert!(d.family.contains("step 1"));
    }

    #[test]
    fn density_filters_small_circuits() {
        let c = Configuration::all_open(16);
        let small = Circuit::new(crate::isosolver::square_circuit(1)).unwrap();
        let big = Circuit::new(crate::isosolver::square_circuit(8)).unwrap();
        let base = density_stats(&c, 0.5, 1.0, 0.25, &[]).unwrap().evaluated;
        let d = density_stats(&c, 0.5, 1.0, 0.25, &[small.clone()]).unwrap();
        assert_eq!(d.evaluated, base);
        assert!(d.records.iter().all(|r| r.source == "rectangle"));
        let d = density_stats(&c, 0.5, 1.0, 0.25, &[small, big]).unwrap();
        assert_eq!(d.evaluated, base + 1);
        let w = d.records.iter().find(|r| r.source == "witness").unwrap();
        assert_eq!((w.vol, w.giant_count), (289, 289));
    }

    #[test]
    fn density_signs_follow_theta() {
        let c = Configuration::all_open(12);
        let d = density_stats(&c, 0.5, 0.9, 0.2, &[]).unwrap();
        assert!((d.s_plus - 0.1).abs() < 1e-12);
        assert!((d.s_minus + 0.1).abs() < 1e-12);
        assert!(density_stats(&c, 0.5, 0.9, 0.99, &[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn prefix_counts_match_direct(seed in 0u64..1000, x0 in -6i64..=6, y0 in -6i64..=6, w in 0i64..6, h in 0i64..6) {
            let n = 6;
            let c = sample_configuration(GridSpec::new(n, 0.55, seed).unwrap(), 0).unwrap();
            let lab = label_clusters(&c);
            let members = lab.members(lab.largest());
            let pc = PrefixCounts::new(n, &members);
            let (x1, y1) = ((x0 + w).min(n), (y0 + h).min(n));
            let lattice = BoxLattice::new(n);
            let direct = (x0..=x1).flat_map(|x| (y0..=y1).map(move |y| Point::new(x, y)))
                .filter(|&p| members[lattice.index(p).unwrap()]).count() as u64;
            prop_assert_eq!(pc.count(Point::new(x0, y0), Point::new(x1, y1)), direct);
        }
    }
}
