//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use dcf_netcalc::bounds::{
    ciucu_bound, jiang_bound, stability_check, ArrivalModel, BoundProblem, GridConfig, Variant, DEFAULT_X_MAX,
};
use dcf_netcalc::characterize::poisson_sigma_rho;
use dcf_netcalc::characterize::FitOptions;
use dcf_netcalc::mac80211::{
    impairment_fit, impairment_mgf, oracle_impairment_mgf, slot_geometry, solve_fixed_point, ImpairmentChannel,
    Params80211,
};
use dcf_netcalc::sim::{self, empirical_tail, empirical_tail_stderr, SimConfig, Traffic};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn fixed_point_values() -> Outcome {
    let params = Params80211::default();
    let fp = solve_fixed_point(&params).expect("fixed point");
    let reps = 100;
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(solve_fixed_point(std::hint::black_box(&params)).unwrap());
    }
    let per_call = start.elapsed() / reps;
    let pass = within(fp.tau, 0.037, 0.001)
        && within(fp.eta, 0.293, 0.002)
        && within(fp.p_nt, 0.680, 0.002)
        && within(fp.p_t, 0.320, 0.002)
        && within(fp.p_s, 0.027, 0.001)
        && per_call < Duration::from_millis(1);
    outcome(
        pass,
        format!(
            "tau={:.4} (0.037+-0.001) eta={:.4} (0.293+-0.002) p_nt={:.4} (0.680+-0.002) p_t={:.4} (0.320+-0.002) \
             p_s={:.4} (0.027+-0.001) time/solve={per_call:?} (<1ms)",
            fp.tau, fp.eta, fp.p_nt, fp.p_t, fp.p_s
        ),
    )
}

fn slot_geometry_values() -> Outcome {
    let g = slot_geometry(&Params80211::default());
    let l = g.slot_length();
    outcome(
        l == 39 && g.ack == 16 && g.data == 20,
        format!("L={l} (39) ACK={} (16) DATA={} (20)", g.ack, g.data),
    )
}

fn stability_threshold() -> Outcome {
    let r = stability_check(0.0, &Params80211::default()).expect("stability");
    outcome(
        within(r.threshold, 0.079, 0.001) && within(r.threshold_mbps, 0.207, 0.005),
        format!(
            "threshold={:.5} pkt/slot (0.079+-0.001) = {:.4} Mbps (0.207+-0.005)",
            r.threshold, r.threshold_mbps
        ),
    )
}

fn impairment_characterization() -> Outcome {
    let start = Instant::now();
    let fit = impairment_fit(&Params80211::default(), 0.1, FitOptions::default()).expect("fit");
    let took = start.elapsed();
    let sr = fit.sigma_rho;
    outcome(
        within(sr.sigma, 0.077, 0.01) && within(sr.rho, 0.924, 0.005) && took < Duration::from_secs(10),
        format!(
            "theta=0.1: sigma={:.5} (0.077+-0.01) rho={:.5} (0.924+-0.005) t*={} time={took:?} (<10s)",
            sr.sigma, sr.rho, fit.t_star
        ),
    )
}

fn mgf_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    let mut count = 0;
    for l in [2u32, 3] {
        for t in 1u64..=3 {
            for _ in 0..10 {
                let ch = ImpairmentChannel::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), l).unwrap();
                let theta = 10f64.powf(rng.random_range(-2.0..0.7));
                let formula = impairment_mgf(&ch, theta, t).unwrap();
                let oracle = oracle_impairment_mgf(&ch, theta, t).unwrap();
                worst = worst.max(((formula - oracle) / oracle).abs());
                count += 1;
            }
        }
    }
    let took = start.elapsed();
    outcome(
        count >= 50 && worst <= 1e-9 && took < Duration::from_secs(30),
        format!("{count} instances, worst relative error {worst:.3e} (<=1e-9) time={took:?} (<30s)"),
    )
}

const P_ROWS: [f64; 10] = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05];

/// Published quantile columns, bound1..bound4, one entry per `P_ROWS` row.
const TABLE_LOW: [[u64; 10]; 4] = [
    [24, 25, 25, 25, 26, 27, 28, 29, 31, 33],
    [8, 9, 10, 10, 11, 12, 13, 14, 17, 19],
    [7, 8, 8, 9, 10, 10, 11, 12, 14, 16],
    [7, 8, 8, 9, 10, 10, 11, 12, 14, 16],
];
const TABLE_HIGH: [[u64; 10]; 4] = [
    [201, 203, 206, 209, 212, 217, 223, 231, 245, 258],
    [61, 64, 68, 72, 76, 82, 89, 99, 114, 129],
    [50, 55, 58, 63, 66, 71, 77, 85, 98, 109],
    [50, 55, 58, 63, 66, 71, 77, 85, 98, 109],
];

fn bound_table(lambda: f64, expected: &[[u64; 10]; 4]) -> Outcome {
    let start = Instant::now();
    let problem = BoundProblem::new(
        &ArrivalModel::Poisson { lambda },
        &Params80211::default(),
        &GridConfig::default(),
    )
    .expect("bound problem");
    let columns: Vec<Vec<u64>> = Variant::ALL
        .iter()
        .map(|&v| problem.bound(v).unwrap().quantiles(&P_ROWS, DEFAULT_X_MAX).unwrap())
        .collect();
    let took = start.elapsed();

    let mut detail = format!("lambda={lambda}:");
    let mut pass = took < Duration::from_secs(300);
    for (vi, v) in Variant::ALL.iter().enumerate() {
        let misses: Vec<String> = P_ROWS
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let (got, want) = (columns[vi][i] as f64, expected[vi][i] as f64);
                let tol = (0.1 * want).max(2.0);
                ((got - want).abs() > tol).then(|| format!("p={p}: {got} vs {want}+-{tol:.1}"))
            })
            .collect();
        pass &= misses.is_empty();
        detail.push_str(&format!(
            " {v}={:?} {}",
            columns[vi],
            if misses.is_empty() {
                "ok".to_string()
            } else {
                format!("OUT[{}]", misses.join("; "))
            }
        ));
    }
    let ordered = (0..P_ROWS.len()).all(|i| {
        let q: Vec<u64> = columns.iter().map(|c| c[i]).collect();
        q[3] <= q[2] && q[2] <= q[0] && q[3] <= q[1] && q[1] <= q[0]
    });
    pass &= ordered;
    detail.push_str(&format!(
        " orderings={} time={took:?} (<300s)",
        if ordered { "ok" } else { "VIOLATED" }
    ));
    outcome(pass, detail)
}

fn bound_tables() -> Outcome {
    let low = bound_table(0.04, &TABLE_LOW);
    let high = bound_table(0.07, &TABLE_HIGH);
    outcome(low.pass && high.pass, format!("{} | {}", low.detail, high.detail))
}

fn model_equivalence() -> Outcome {
    let problem = BoundProblem::new(
        &ArrivalModel::Poisson { lambda: 0.05 },
        &Params80211::default(),
        &GridConfig::default(),
    )
    .expect("bound problem");
    let stride = (problem.grid_points() / 1500).max(1);
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for v in Variant::ALL {
        for spec in problem.specs(v).step_by(stride) {
            for x in [0u64, 5, 25, 100, 400] {
                let j = jiang_bound(&spec, x).unwrap();
                let c = ciucu_bound(&spec, x).unwrap();
                let rel = if j == c {
                    0.0
                } else {
                    (j - c).abs() / j.abs().max(c.abs())
                };
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    outcome(
        checked >= 1000 && worst <= 1e-9,
        format!("{checked} (grid point, x) evaluations, worst relative difference {worst:.3e} (<=1e-9)"),
    )
}

fn martingale_validity() -> Outcome {
    let lambda = 0.04;
    let (paths, horizon) = (100_000usize, 200usize);
    let poisson = Poisson::new(lambda).unwrap();
    let mut pass = true;
    let mut detail = String::new();
    for theta in [0.5, 1.0, 2.0] {
        let sr = poisson_sigma_rho(lambda, theta).unwrap();
        let r = sr.rho + sr.sigma;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        rng.set_stream((theta * 10.0) as u64);
        // sup over s of A(s,t) - r (t - s), walking back from t
        let mut sups = Vec::with_capacity(paths);
        for _ in 0..paths {
            let (mut walk, mut sup) = (0.0f64, 0.0f64);
            for _ in 0..horizon {
                walk += poisson.sample(&mut rng) - r;
                sup = sup.max(walk);
            }
            sups.push(sup);
        }
        let mut worst_excess = f64::NEG_INFINITY;
        for x in 0..=20u32 {
            let p = sups.iter().filter(|&&s| s > f64::from(x)).count() as f64 / paths as f64;
            let se = (p * (1.0 - p) / paths as f64).sqrt();
            let bound = (-theta * f64::from(x)).exp();
            worst_excess = worst_excess.max(p - bound - 3.0 * se);
            if p > bound + 3.0 * se {
                pass = false;
            }
        }
        detail.push_str(&format!(
            "theta={theta}: max(P - e^(-theta x) - 3SE)={worst_excess:.4} (<=0); "
        ));
    }
    outcome(pass, format!("{paths} paths of length {horizon}, x=0..20: {detail}"))
}

fn poisson_sim(lambda: f64, replications: usize, seed: u64) -> sim::SimResult {
    sim::run(&SimConfig {
        traffic: Traffic::Poisson { lambda },
        replications,
        seed,
        ..Default::default()
    })
    .expect("simulation")
}

fn stability_jump() -> Outcome {
    let start = Instant::now();
    let means: Vec<(f64, f64)> = [0.077, 0.079, 0.081]
        .iter()
        .map(|&l| (l, poisson_sim(l, 100, 2024).mean_backlog()))
        .collect();
    let took = start.elapsed();
    let below = means[0].1.max(means[1].1);
    let pass = means[0].1 < 5.0 && means[1].1 < 5.0 && means[2].1 > 10.0 * below && took < Duration::from_secs(300);
    let list: Vec<String> = means.iter().map(|(l, m)| format!("E B @ {l} = {m:.2}")).collect();
    outcome(
        pass,
        format!(
            "{} (<5, <5, >10x{below:.2}={:.2}) time={took:?} (<300s)",
            list.join(", "),
            10.0 * below
        ),
    )
}

fn bound_validity() -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    for (lambda, ns2, slack) in [(0.04, 4u64, 3u64), (0.07, 7, 4)] {
        let problem = BoundProblem::new(
            &ArrivalModel::Poisson { lambda },
            &Params80211::default(),
            &GridConfig::default(),
        )
        .expect("bound problem");
        let result = poisson_sim(lambda, 100, 77);
        let max_b = result.backlogs().into_iter().max().unwrap_or(0);
        let mut violations = 0;
        for v in Variant::ALL {
            let b = problem.bound(v).unwrap();
            for x in 0..=max_b + 1 {
                let (emp, se) = (empirical_tail(&result, x), empirical_tail_stderr(&result, x));
                if emp > b.evaluate(x) + 3.0 * se {
                    violations += 1;
                }
            }
        }
        pass &= violations == 0;
        let q05 = (0..).find(|&x| empirical_tail(&result, x) <= 0.05).unwrap();
        detail.push_str(&format!(
            "lambda={lambda}: violations={violations} (0), sim p=0.05 quantile={q05} \
             [reference {ns2}+-{slack}, informational: {}]; ",
            if q05.abs_diff(ns2) <= slack { "close" } else { "differs" }
        ));
    }
    outcome(pass, detail)
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_dcf-netcalc");
    let run = || {
        Command::new(bin)
            .args([
                "--seed",
                "4242",
                "--format",
                "json",
                "simulate",
                "--replications",
                "20",
                "--duration",
                "10",
                "--sample-time",
                "5",
            ])
            .env_remove("DCF_NETCALC_CONFIG")
            .output()
            .expect("run cli")
    };
    let (a, b) = (run(), run());
    let ok = a.status.success() && b.status.success() && !a.stdout.is_empty() && a.stdout == b.stdout;
    outcome(
        ok,
        format!(
            "two runs, {} bytes each, identical={}",
            a.stdout.len(),
            a.stdout == b.stdout
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("fixed point", fixed_point_values),
        ("slot geometry", slot_geometry_values),
        ("stability threshold", stability_threshold),
        ("impairment envelope fit", impairment_characterization),
        ("MGF oracle equivalence", mgf_oracle_equivalence),
        ("bound tables", bound_tables),
        ("Jiang/Ciucu equivalence", model_equivalence),
        ("martingale bound validity", martingale_validity),
        ("simulator stability jump", stability_jump),
        ("bound validity vs simulation", bound_validity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} [{:>2}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
