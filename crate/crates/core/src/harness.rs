//! Monte-Carlo campaigns wiring channel generation, permutation, pilots,
//! initialization, JED and the baselines together.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{concatenate, s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{realize, transmit, trial_rng};
use crate::config::{InitMethod, PermMethod, SystemConfig};
use crate::error::{Error, Result};
use crate::eval::{ber_per_ue, l1_chest, lmmse_detect, mse_per_ue, quantile, rmsse_per_ue, simo_bound, MetricsReport, MiAccumulator};
use crate::fbs::{SolverOptions, Trace};
use crate::init::{assemble_init, naive_ls_init};
use crate::jed::{quantize, run_jed, symbol_bits, JedParams};
use crate::linalg::CMat;
use crate::permute::{
    csi_permute, invert, location_cluster, permute_cols, permute_rows, ClusterOptions, PermOptions, PermutationPair,
};
use crate::pilots::{build_etf, build_mub, make_pilots, require_unambiguous, Constellation, FrameMatrix, Modulation};

/// Detector labels used in reports.
pub const JED: &str = "jed";
pub const LMMSE: &str = "lmmse";
pub const SIMO: &str = "simo";
pub const INIT: &str = "init";

pub const PRESETS: [&str; 6] = ["fig2", "fig3", "fig4", "fig5", "fig6", "fig7"];

/// Shipped scenarios. Regularization weights were tuned by grid search on
/// seeds disjoint from the defaults.
pub fn preset(name: &str) -> Option<SystemConfig> {
    let base = |b, t, modulation, n_cells, mu, gamma, mu1| SystemConfig {
        b,
        u: 128,
        k: 128,
        t,
        modulation,
        n_cells,
        area_m: 1000.0,
        ap_height_m: 15.0,
        ue_height_m: 1.65,
        p_db: 12.0,
        sigma_sh_db: 8.0,
        seed: 1,
        trials: 50,
        perm: PermMethod::Csi,
        init: InitMethod::Blockjs,
        mu,
        gamma,
        mu1,
        max_iter: 5000,
        tol: 1e-6,
        l1_max_iter: 2000,
    };
    let fig4 = base(128, 32, Modulation::Qpsk, 4, 8.0, 4.0, 10.0);
    match name {
        "fig2" => Some(base(64, 64, Modulation::Bpsk, 2, 8.0, 2.0, 10.0)),
        "fig3" => Some(base(256, 64, Modulation::Qam16, 2, 8.0, 2.0, 10.0)),
        "fig4" => Some(fig4),
        // naive LS start on unpermuted ETF pilots
        "fig5" => Some(SystemConfig { perm: PermMethod::None, init: InitMethod::Ls, ..fig4 }),
        "fig6" => Some(SystemConfig { perm: PermMethod::Phy, ..fig4 }),
        "fig7" => Some(SystemConfig { trials: 20, ..fig4 }),
        _ => None,
    }
}

/// Pilot frame shared by all trials of a campaign.
///
/// Virtual-cell training uses an `N`-block MUB; otherwise a near-ETF built
/// from the campaign seed. Frames failing the ambiguity certificate are
/// refused.
pub fn scenario_frame(cfg: &SystemConfig) -> Result<FrameMatrix> {
    let frame = if cfg.perm != PermMethod::None || cfg.init == InitMethod::Blockjs {
        build_mub(cfg.t, cfg.n_cells)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        build_etf(cfg.t, cfg.u, &mut rng)?
    };
    require_unambiguous(&frame.f.view())?;
    Ok(frame)
}

/// Per-trial metric samples, UEs in their original order.
#[derive(Debug, Clone)]
pub struct TrialMetrics {
    pub values: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    pub mi: BTreeMap<String, MiAccumulator>,
    pub iterations: usize,
    pub trace: Trace,
    pub pair: PermutationPair,
}

fn cell_options(cfg: &SystemConfig, trial: u64) -> PermOptions {
    PermOptions { seed: cfg.seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ trial, ..PermOptions::default() }
}

fn solver_options(cfg: &SystemConfig, max_iter: usize) -> SolverOptions {
    SolverOptions { max_iter, tol: cfg.tol, ..SolverOptions::default() }
}

/// Everything a detector sees for one trial, plus the ground truth.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub pair: PermutationPair,
    /// True channel and payload in the original order.
    pub h: CMat,
    pub sd_idx: Array2<usize>,
    pub s_d: CMat,
    /// Received signal, pilots, channel and payload in the permuted domain.
    pub y_p: CMat,
    pub s_t_p: CMat,
    pub h_p: CMat,
    pub sd_p: CMat,
}

/// Draws the channel and payload, picks the permutation and synthesizes the
/// received signal for trial `trial`.
pub fn prepare_trial(cfg: &SystemConfig, frame: &FrameMatrix, trial: u64) -> Result<TrialData> {
    let mut rng = trial_rng(cfg.seed, trial);
    let c = Constellation::new(cfg.modulation);
    let (u, d) = (cfg.u, cfg.d());
    let (geometry, real) = realize(cfg, &mut rng)?;
    let sd_idx = Array2::from_shape_simple_fn((u, d), || rng.random_range(0..c.len()));
    let s_d = sd_idx.mapv(|i| c.points[i]);

    let pair = match cfg.perm {
        PermMethod::None => PermutationPair::identity(cfg.b, u),
        PermMethod::Csi => csi_permute(&real.h.mapv(|v| v.norm_sqr()).view(), cfg.n_cells, &cell_options(cfg, trial))?,
        PermMethod::Phy => {
            location_cluster(&geometry.ap_positions, &geometry.ue_positions, cfg.n_cells, &ClusterOptions::default())?
                .pair
        }
    };

    // pilot rows are assigned in the permuted order, so UE ue[j] sends row j
    let s_t_p = make_pilots(frame);
    let s_t = permute_rows(&s_t_p.view(), &invert(&pair.ue));
    let s = concatenate(Axis(1), &[s_t.view(), s_d.view()]).expect("row counts agree");
    let y = transmit(&real.h.view(), &s.view(), 1.0, &mut rng)?;

    let y_p = permute_rows(&y.view(), &pair.ap);
    let h_p = permute_cols(&permute_rows(&real.h.view(), &pair.ap).view(), &pair.ue);
    let sd_p = permute_rows(&s_d.view(), &pair.ue);
    Ok(TrialData { pair, h: real.h, sd_idx, s_d, y_p, s_t_p, h_p, sd_p })
}

/// Runs JED and the baselines on a prepared trial and scores them.
pub fn detect_trial(cfg: &SystemConfig, data: &TrialData) -> Result<TrialMetrics> {
    let c = Constellation::new(cfg.modulation);
    let (u, t) = (cfg.u, cfg.t);
    let (y_p, s_t_p) = (data.y_p.view(), data.s_t_p.view());
    let (y_t, y_d) = (y_p.slice(s![.., ..t]), y_p.slice(s![.., t..]));

    let h_l1 = l1_chest(&y_t, &s_t_p, cfg.mu1, &solver_options(cfg, cfg.l1_max_iter))?;
    let sd_lmmse = lmmse_detect(&h_l1.view(), &y_d, 1.0)?;
    let (h0, sd0) = match cfg.init {
        InitMethod::Blockjs => assemble_init(&y_p, &s_t_p, cfg.n_cells)?,
        InitMethod::Ls => naive_ls_init(&y_p, &s_t_p, 1.0)?,
        InitMethod::L1 => (h_l1.clone(), sd_lmmse.clone()),
    };
    let params = JedParams { mu: cfg.mu, gamma: cfg.gamma };
    let out = run_jed(&y_p, &s_t_p, h0.clone(), sd0.clone(), &c, params, &solver_options(cfg, cfg.max_iter))?;
    let sd_simo = simo_bound(&data.h_p.view(), &data.sd_p.view(), &y_d)?;

    let inv_ap = invert(&data.pair.ap);
    let inv_ue = invert(&data.pair.ue);
    let back_h = |h: &CMat| permute_cols(&permute_rows(&h.view(), &inv_ap).view(), &inv_ue);
    let back_s = |x: &CMat| permute_rows(&x.view(), &inv_ue);

    let mut values: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut mi = BTreeMap::new();
    let bits_true = symbol_bits(&data.sd_idx, &c);
    let mut record = |name: &str, soft: &CMat, h_hat: Option<&CMat>| -> Result<()> {
        let entry = values.entry(name.to_string()).or_default();
        let soft = back_s(soft);
        let det = quantize(&soft.view(), &c);
        entry.insert("rmsse".into(), rmsse_per_ue(&soft.view(), &data.s_d.view())?);
        entry.insert("ber".into(), ber_per_ue(&det.bits(&c).view(), &bits_true.view())?);
        let mut acc = MiAccumulator::new(u, c.len());
        acc.add(&data.sd_idx.view(), &det.indices.view())?;
        mi.insert(name.to_string(), acc);
        if let Some(h_hat) = h_hat {
            entry.insert("mse".into(), mse_per_ue(&back_h(h_hat).view(), &data.h.view())?);
        }
        Ok(())
    };
    record(JED, &out.sd_soft, Some(&out.h))?;
    record(LMMSE, &sd_lmmse, Some(&h_l1))?;
    record(SIMO, &sd_simo, None)?;
    record(INIT, &sd0, Some(&h0))?;
    Ok(TrialMetrics { values, mi, iterations: out.trace.iterations, trace: out.trace, pair: data.pair.clone() })
}

/// Runs one Monte-Carlo trial end to end.
pub fn run_trial(cfg: &SystemConfig, frame: &FrameMatrix, trial: u64) -> Result<TrialMetrics> {
    detect_trial(cfg, &prepare_trial(cfg, frame, trial)?)
}

/// Campaign output kept in memory.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub report: MetricsReport,
    /// `None` for failed trials.
    pub traces: Vec<Option<Trace>>,
    pub pairs: Vec<Option<PermutationPair>>,
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w.max(1));
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs all trials and merges their metrics. Failed trials are logged,
/// counted and left out of the aggregates.
pub fn run_campaign(cfg: &SystemConfig, scenario: &str, workers: Option<usize>) -> Result<Campaign> {
    cfg.validate()?;
    let frame = scenario_frame(cfg)?;
    let results: Vec<Result<TrialMetrics>> =
        pool(workers)?.install(|| (0..cfg.trials as u64).into_par_iter().map(|t| run_trial(cfg, &frame, t)).collect());

    let c = Constellation::new(cfg.modulation);
    let mut values: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut mi: BTreeMap<String, MiAccumulator> = BTreeMap::new();
    let mut iterations = Vec::new();
    let mut traces = Vec::new();
    let mut pairs = Vec::new();
    let mut failed = 0;
    for (trial, r) in results.into_iter().enumerate() {
        match r {
            Ok(m) => {
                for (det, metrics) in m.values {
                    let slot = values.entry(det).or_default();
                    for (name, v) in metrics {
                        slot.entry(name).or_default().extend(v);
                    }
                }
                for (det, acc) in m.mi {
                    mi.entry(det).or_insert_with(|| MiAccumulator::new(cfg.u, c.len())).merge(&acc)?;
                }
                iterations.push(m.iterations);
                traces.push(Some(m.trace));
                pairs.push(Some(m.pair));
            }
            Err(e) => {
                log::warn!("{scenario}: trial {trial} failed: {e}");
                failed += 1;
                traces.push(None);
                pairs.push(None);
            }
        }
    }
    for (det, acc) in mi {
        values.entry(det).or_default().insert("mi".into(), acc.finalize(cfg.k, cfg.t)?);
    }
    let report = MetricsReport {
        scenario: scenario.to_string(),
        trials: cfg.trials,
        failed_trials: failed,
        bits_per_symbol: c.bits_per_symbol(),
        k: cfg.k,
        t: cfg.t,
        values,
        iterations,
    };
    Ok(Campaign { report, traces, pairs })
}

/// Runs a campaign and writes `metrics.json`, `cdf_<metric>.csv`,
/// `trace_<trial>.csv` and `permutations.json` into `out_dir`.
pub fn run_scenario(cfg: &SystemConfig, scenario: &str, out_dir: &Path, workers: Option<usize>) -> Result<MetricsReport> {
    let campaign = run_campaign(cfg, scenario, workers)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("metrics.json"), campaign.report.to_json()?)?;
    for metric in crate::eval::METRICS {
        let f = BufWriter::new(File::create(out_dir.join(format!("cdf_{metric}.csv")))?);
        campaign.report.write_cdf_csv(metric, f)?;
    }
    for (trial, trace) in campaign.traces.iter().enumerate() {
        if let Some(trace) = trace {
            trace.write_csv(BufWriter::new(File::create(out_dir.join(format!("trace_{trial}.csv")))?))?;
        }
    }
    std::fs::write(out_dir.join("permutations.json"), serde_json::to_string(&campaign.pairs)?)?;
    Ok(campaign.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: usize,
    pub overhead: f64,
    /// MI reached by 90% of UEs.
    pub jed_mi_p10: f64,
    pub lmmse_mi_p10: f64,
    pub upper_bound: f64,
}

/// Pilot-overhead trade-off: for every `T`, the MI achieved by 90% of UEs.
///
/// With virtual-cell training the cell count follows `N = U / T`.
pub fn sweep_overhead(cfg: &SystemConfig, t_list: &[usize], workers: Option<usize>) -> Result<Vec<SweepRow>> {
    let nq = cfg.modulation.bits_per_symbol() as f64;
    let mut rows = Vec::new();
    for &t in t_list {
        let bound = nq * cfg.k.saturating_sub(t) as f64 / cfg.k as f64;
        let overhead = t as f64 / cfg.k as f64;
        if t >= cfg.k {
            rows.push(SweepRow { t, overhead, jed_mi_p10: 0.0, lmmse_mi_p10: 0.0, upper_bound: 0.0 });
            continue;
        }
        let mut c = SystemConfig { t, ..cfg.clone() };
        if c.perm != PermMethod::None || c.init == InitMethod::Blockjs {
            if t == 0 || cfg.u % t != 0 {
                return Err(Error::Config(format!("T={t} does not divide U={}", cfg.u)));
            }
            c.n_cells = cfg.u / t;
        }
        let report = run_campaign(&c, &format!("sweep_T{t}"), workers)?.report;
        rows.push(SweepRow {
            t,
            overhead,
            jed_mi_p10: quantile(report.get(JED, "mi"), 0.1),
            lmmse_mi_p10: quantile(report.get(LMMSE, "mi"), 0.1),
            upper_bound: bound,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "T,overhead,jed_mi_p10,lmmse_mi_p10,upper_bound")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.t, r.overhead, r.jed_mi_p10, r.lmmse_mi_p10, r.upper_bound)?;
    }
    Ok(())
}
