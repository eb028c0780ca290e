//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (uncaptured) before asserting.
//!
//! Criteria 4, 5 and 7 share one set of paired Stage-2 runs per seed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use cwdpo_cli::dynamics::{run_dynamics, DynamicsOptions};
use cwdpo_cli::run::run_experiment;
use cwdpo_cli::ExperimentConfig;
use cwdpo_core::data::{
    generate_corpus, DatasetSpec, NegativeTier, PreferencePair, Provenance, Tier,
};
use cwdpo_core::diagnostics::{cooling_weight_trace, CurriculumTrace, ProbeReport};
use cwdpo_core::dynamics::regularization_profile;
use cwdpo_core::gradcheck::{check_gradient, random_coordinates, FD_STEP};
use cwdpo_core::objectives::{
    cooling_weight, cw_dpo_loss, dpo_loss, focal_dpo_loss, label_smoothing_sft_loss, sft_c_loss,
    sft_loss, CoolingConfig, DpoConfig, SftConfig, SftExample,
};
use cwdpo_core::policy::{Architecture, PolicyParameters, ReferenceSnapshot};
use cwdpo_core::seed::sub_seed;
use cwdpo_core::trainer::{
    run_stage1, run_stage2, snapshot_reference, stage1_negative_nll, Stage1Mode, Stage2Kind,
    TrainerState, TrainingConfig, TrainingData,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn report(n: usize, title: &str, pass: bool, elapsed: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!(
        "[acceptance] criterion {n:>2} {verdict} ({:.1}s) {title}: {detail}\n",
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn data_for(seed: u64, cfg: &TrainingConfig) -> TrainingData {
    let spec = DatasetSpec {
        seed: sub_seed(seed, "data"),
        ..DatasetSpec::default()
    };
    TrainingData::generate(&spec, cfg).unwrap()
}

fn last_probe(state: &TrainerState, stage: u8) -> ProbeReport {
    state
        .probes
        .iter()
        .rev()
        .find(|p| p.stage == stage)
        .cloned()
        .unwrap()
}

// ---------------------------------------------------------------- criterion 1

struct Instance {
    params: PolicyParameters,
    reference: ReferenceSnapshot,
    batch: Vec<SftExample>,
    pair: PreferencePair,
    coords: Vec<usize>,
}

/// Policies scaled away from the origin so distributions are peaked, with a
/// reference that differs from them.
fn instance(i: u64) -> Instance {
    let arch = if i % 5 == 4 {
        Architecture::linear(16, 5)
    } else {
        Architecture::mlp(16, 4, 6, 5)
    };
    let scaled = |seed: u64, s: f64| {
        let mut p = PolicyParameters::init_uniform(arch, seed).unwrap();
        let d: Vec<f64> = p.as_slice().iter().map(|x| x * s).collect();
        p.axpy(1.0, &d);
        p
    };
    let params = scaled(1_000 + i, 12.0);
    let reference = ReferenceSnapshot::new(&scaled(2_000 + i, 8.0));
    let spec = DatasetSpec {
        vocab_size: 16,
        corpus_size: 3,
        index_radius: 1,
        seed: 3_000 + i,
        ..DatasetSpec::default()
    };
    let examples = generate_corpus(&spec).unwrap();
    let batch = examples
        .iter()
        .map(|e| SftExample {
            context: e.context.clone(),
            positive: e.positive.clone(),
            negatives: e
                .negatives
                .iter()
                .filter(|n| n.tier != Tier::Easy)
                .map(|n| n.tokens.clone())
                .collect(),
        })
        .collect();
    let ex = &examples[0];
    let neg = &ex.negatives[i as usize % ex.negatives.len()];
    let pair = PreferencePair::new(
        ex.id,
        ex.context.clone(),
        ex.positive.clone(),
        neg.tokens.clone(),
        NegativeTier {
            tier: neg.tier,
            provenance: Provenance::Dataset,
        },
    )
    .unwrap();
    Instance {
        coords: random_coordinates(params.len(), 48, 4_000 + i),
        params,
        reference,
        batch,
        pair,
    }
}

#[test]
fn criterion_01_gradient_oracle() {
    let t = Instant::now();
    const N: u64 = 20;
    const TOL: f64 = 1e-5;
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut track = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name)
    {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name, err)),
    };
    for i in 0..N {
        let inst = instance(i);
        let (p, c) = (&inst.params, &inst.coords);
        let batch = &inst.batch;

        let g = sft_loss(p, batch).unwrap().gradient;
        track(
            "sft",
            check_gradient(|q| Ok(sft_loss(q, batch)?.loss), p, &g, c, FD_STEP)
                .unwrap()
                .max_rel_error,
        );

        // Threshold above the negatives' NLL keeps the hinge active and away from its kink.
        let sc = SftConfig {
            lambda: 0.5,
            threshold: 12.0,
            per_sample: i % 2 == 1,
        };
        let g = sft_c_loss(p, batch, &sc).unwrap().gradient;
        track(
            "sft_c",
            check_gradient(|q| Ok(sft_c_loss(q, batch, &sc)?.loss), p, &g, c, FD_STEP)
                .unwrap()
                .max_rel_error,
        );

        let dpo = DpoConfig {
            beta: 0.1 + 0.05 * i as f64,
        };
        let (r, pair) = (&inst.reference, &inst.pair);
        let g = dpo_loss(p, r, pair, &dpo).unwrap().gradient;
        track(
            "dpo",
            check_gradient(
                |q| Ok(dpo_loss(q, r, pair, &dpo)?.breakdown.loss),
                p,
                &g,
                c,
                FD_STEP,
            )
            .unwrap()
            .max_rel_error,
        );

        let cool = CoolingConfig {
            floor: -4.0 + 0.2 * i as f64,
            ..CoolingConfig::default()
        };
        let out = cw_dpo_loss(p, r, pair, &dpo, &cool).unwrap();
        // Stop-gradient weight: the oracle holds w_c at its current value.
        let frozen = CoolingConfig {
            fixed_weight: Some(out.breakdown.weight),
            ..cool
        };
        track(
            "cw_dpo",
            check_gradient(
                |q| Ok(cw_dpo_loss(q, r, pair, &dpo, &frozen)?.breakdown.loss),
                p,
                &out.gradient,
                c,
                FD_STEP,
            )
            .unwrap()
            .max_rel_error,
        );

        let eps = 0.02 + 0.01 * i as f64;
        let g = label_smoothing_sft_loss(p, batch, eps).unwrap().gradient;
        track(
            "label_smoothing",
            check_gradient(
                |q| Ok(label_smoothing_sft_loss(q, batch, eps)?.loss),
                p,
                &g,
                c,
                FD_STEP,
            )
            .unwrap()
            .max_rel_error,
        );

        let gamma = [0.5, 1.0, 2.0, 3.0][i as usize % 4];
        let g = focal_dpo_loss(p, r, pair, &dpo, gamma).unwrap().gradient;
        track(
            "focal_dpo",
            check_gradient(
                |q| Ok(focal_dpo_loss(q, r, pair, &dpo, gamma)?.breakdown.loss),
                p,
                &g,
                c,
                FD_STEP,
            )
            .unwrap()
            .max_rel_error,
        );
    }
    let elapsed = t.elapsed();
    let pass = worst.len() == 6
        && worst.iter().all(|(_, e)| *e <= TOL)
        && elapsed <= Duration::from_secs(60);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    report(
        1,
        "gradient oracle",
        pass,
        elapsed,
        &format!("{N} instances each, max rel err: {}", detail.join(", ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_02_reduction_identity() {
    let t = Instant::now();
    let mut identical_pairs = 0;
    for i in 0..20 {
        let inst = instance(i);
        let dpo = DpoConfig {
            beta: 0.1 + 0.05 * i as f64,
        };
        let unit = CoolingConfig {
            fixed_weight: Some(1.0),
            ..CoolingConfig::default()
        };
        let v = dpo_loss(&inst.params, &inst.reference, &inst.pair, &dpo).unwrap();
        let w = cw_dpo_loss(&inst.params, &inst.reference, &inst.pair, &dpo, &unit).unwrap();
        if v.breakdown.loss.to_bits() == w.breakdown.loss.to_bits()
            && v.gradient
                .iter()
                .zip(&w.gradient)
                .all(|(a, b)| a.to_bits() == b.to_bits())
        {
            identical_pairs += 1;
        }
    }

    let base = TrainingConfig {
        t1: 100,
        t2: 500,
        ..TrainingConfig::default()
    };
    let data = data_for(0, &base);
    let start = snapshot_reference(
        run_stage1(TrainerState::new(&base).unwrap(), &data, &base).unwrap(),
        &base,
    )
    .unwrap();
    let dpo_cfg = TrainingConfig {
        stage2: Stage2Kind::Dpo,
        ..base.clone()
    };
    let mut cw_cfg = TrainingConfig {
        stage2: Stage2Kind::CwDpo,
        ..base.clone()
    };
    cw_cfg.cooling.fixed_weight = Some(1.0);
    let a = run_stage2(start.clone(), &data, &dpo_cfg).unwrap();
    let b = run_stage2(start, &data, &cw_cfg).unwrap();
    let losses = |s: &TrainerState| {
        s.steps
            .iter()
            .filter(|x| x.stage == 2)
            .map(|x| x.loss.to_bits())
            .collect::<Vec<_>>()
    };
    let steps = losses(&a).len();
    let same_params = a
        .params
        .as_slice()
        .iter()
        .zip(b.params.as_slice())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    let pass = identical_pairs == 20
        && steps == 500
        && losses(&a) == losses(&b)
        && same_params
        && a.probes == b.probes;
    report(
        2,
        "reduction identity",
        pass,
        t.elapsed(),
        &format!("{identical_pairs}/20 loss+gradient bit-identical; {steps}-step trajectory identical: {}", losses(&a) == losses(&b) && same_params),
    );
    assert!(pass);
}

// ------------------------------------------------------------- criteria 3 and 8

fn default_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

#[test]
fn criterion_03_one_step_influence() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&default_config_path()).unwrap();
    cfg.experiment.out = Some(dir.path().join("bundle"));
    cfg.report.print_summary = false;
    let bundle = run_experiment(&cfg).unwrap().remove(0).dir;

    let t = Instant::now();
    let opts = DynamicsOptions {
        eta: 1e-4,
        pairs: 20,
        eta_sweep: true,
        ..DynamicsOptions::default()
    };
    let r = run_dynamics(&bundle, &opts).unwrap();
    let elapsed = t.elapsed();
    let pairs = r.influence.iter().filter(|x| x.loss == "cw-dpo").count();
    let max_err = r.max_relative_error();
    let ratios: Vec<(f64, f64)> = r
        .sweep_etas()
        .into_iter()
        .map(|e| (e, r.median_halving_ratio(e)))
        .collect();
    let pass = pairs >= 20
        && max_err <= 0.05
        && !ratios.is_empty()
        && ratios.iter().all(|(_, m)| (2.5..=5.5).contains(m))
        && elapsed <= Duration::from_secs(120);
    let sweep: Vec<String> = ratios
        .iter()
        .map(|(e, m)| format!("{e:.0e}: {m:.3}"))
        .collect();
    report(
        3,
        "one-step influence",
        pass,
        elapsed,
        &format!("{pairs} pairs x 2 losses, max rel err {max_err:.2e} at eta 1e-4; median halving ratio {}", sweep.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_08_regularization_profile() {
    let t = Instant::now();
    let mut rows = 0;
    let mut worst: f64 = 0.0;
    let mut in_range = true;
    for i in 0..10 {
        let inst = instance(i);
        let beta = 0.05 + 0.1 * i as f64;
        let cooling = CoolingConfig {
            floor: -3.0 + 0.3 * i as f64,
            temperature: 0.5 + 0.2 * i as f64,
            ..CoolingConfig::default()
        };
        let profile = regularization_profile(
            &inst.params,
            &inst.reference,
            std::slice::from_ref(&inst.pair),
            beta,
            &cooling,
            41,
        )
        .unwrap();
        let vanilla = dpo_loss(
            &inst.params,
            &inst.reference,
            &inst.pair,
            &DpoConfig { beta },
        )
        .unwrap()
        .breakdown;
        let a = 1.0 / (1.0 + (-beta * (vanilla.delta_w - vanilla.delta_l)).exp());
        let lo = cooling.floor - 5.0 * cooling.temperature;
        let hi = cooling.floor + 5.0 * cooling.temperature;
        for row in &profile {
            in_range &= row.avg_log_prob >= lo - 1e-12 && row.avg_log_prob <= hi + 1e-12;
            let w = cooling_weight(row.avg_log_prob, &cooling);
            let a_cooled = 1.0 / (1.0 + (-beta * (vanilla.delta_w - w * vanilla.delta_l)).exp());
            let expected = w * (1.0 - a_cooled) / (1.0 - a) * vanilla.loser_grad_norm;
            worst = worst.max(
                (row.cooled_loser_grad_norm - expected).abs() / vanilla.loser_grad_norm.max(1.0),
            );
            rows += 1;
        }
    }
    let pass = rows == 410 && in_range && worst <= 1e-10;
    report(
        8,
        "regularization profile",
        pass,
        t.elapsed(),
        &format!("{rows} grid rows, max |cooled - ratio x vanilla| {worst:.1e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------- criteria 4, 5 and 7

struct Paired {
    seed: u64,
    cw: ProbeReport,
    dpo: ProbeReport,
    trace: CurriculumTrace,
}

/// Both Stage-2 objectives from one Stage-1 checkpoint per seed, on an
/// easy-heavy dataset-loser mix.
fn paired_runs() -> &'static (Vec<Paired>, Duration) {
    static RUNS: OnceLock<(Vec<Paired>, Duration)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t = Instant::now();
        let runs = SEEDS
            .iter()
            .map(|&seed| {
                let mut cfg = TrainingConfig {
                    seed,
                    ..TrainingConfig::default()
                };
                cfg.mix.rho = 1.0;
                cfg.mix.tier_weights = [0.5, 0.4, 0.1];
                let data = data_for(seed, &cfg);
                let s1 = run_stage1(TrainerState::new(&cfg).unwrap(), &data, &cfg).unwrap();
                let s1 = snapshot_reference(s1, &cfg).unwrap();
                let cw_cfg = TrainingConfig {
                    stage2: Stage2Kind::CwDpo,
                    ..cfg.clone()
                };
                let dpo_cfg = TrainingConfig {
                    stage2: Stage2Kind::Dpo,
                    ..cfg
                };
                let cw = run_stage2(s1.clone(), &data, &cw_cfg).unwrap();
                let dpo = run_stage2(s1, &data, &dpo_cfg).unwrap();
                assert_eq!(cw.step, 500);
                Paired {
                    seed,
                    cw: last_probe(&cw, 2),
                    dpo: last_probe(&dpo, 2),
                    trace: cooling_weight_trace(&cw.curriculum),
                }
            })
            .collect();
        (runs, t.elapsed())
    })
}

#[test]
fn criterion_04_squeezing_ordering() {
    let (runs, elapsed) = paired_runs();
    let count = |f: &dyn Fn(&Paired) -> bool| runs.iter().filter(|r| f(r)).count();
    let entropy = count(&|r| r.cw.entropy > r.dpo.entropy);
    let tv = count(&|r| r.cw.tv < r.dpo.tv);
    let js = count(&|r| r.cw.js < r.dpo.js);
    let top1 = count(&|r| r.cw.top1_mass < r.dpo.top1_mass);
    let pass =
        [entropy, tv, js, top1].iter().all(|&k| k >= 4) && *elapsed <= Duration::from_secs(600);
    for r in runs {
        let _ = writeln!(
            std::io::stderr(),
            "[acceptance]    seed {}: entropy {:.4}/{:.4} tv {:.4}/{:.4} js {:.4}/{:.4} top1 {:.4}/{:.4} (cw-dpo/dpo)",
            r.seed, r.cw.entropy, r.dpo.entropy, r.cw.tv, r.dpo.tv, r.cw.js, r.dpo.js, r.cw.top1_mass, r.dpo.top1_mass
        );
    }
    report(
        4,
        "squeezing ordering",
        pass,
        *elapsed,
        &format!("seeds holding: entropy {entropy}/5, tv {tv}/5, js {js}/5, top-1 mass {top1}/5"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_calibration_ordering() {
    let (runs, elapsed) = paired_runs();
    let wins = runs.iter().filter(|r| r.cw.ece < r.dpo.ece).count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.4}/{:.4}", r.cw.ece, r.dpo.ece))
        .collect();
    let pass = wins >= 4;
    report(
        5,
        "calibration ordering",
        pass,
        *elapsed,
        &format!("ECE cw-dpo < dpo in {wins}/5 seeds ({})", detail.join(" ")),
    );
    assert!(pass);
}

#[test]
fn criterion_07_emergent_curriculum() {
    let (runs, elapsed) = paired_runs();
    let time = |r: &Paired, t: Tier| r.trace.half_weight_time(t);
    let ordered = runs
        .iter()
        .filter(|r| {
            time(r, Tier::Easy) < time(r, Tier::Medium)
                && time(r, Tier::Medium) < time(r, Tier::Hard)
        })
        .count();
    let cooled = runs
        .iter()
        .filter(|r| r.trace.final_mean(Tier::Easy).is_some_and(|w| w < 0.1))
        .count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "[{} {} {} | easy end {:.3}]",
                time(r, Tier::Easy),
                time(r, Tier::Medium),
                time(r, Tier::Hard),
                r.trace.final_mean(Tier::Easy).unwrap_or(f64::NAN)
            )
        })
        .collect();
    let pass = ordered == 5 && cooled == 5;
    report(
        7,
        "emergent curriculum",
        pass,
        *elapsed,
        &format!(
            "half-weight easy<medium<hard in {ordered}/5, easy w_c < 0.1 in {cooled}/5 {}",
            detail.join(" ")
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_06_smoothed_sft_entropy() {
    let t = Instant::now();
    let mut held = 0;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let smoothed = TrainingConfig {
            seed,
            stage1_mode: Stage1Mode::SmoothedSft,
            ..TrainingConfig::default()
        };
        assert_eq!((smoothed.sft.lambda, smoothed.sft.threshold), (0.1, 4.0));
        let plain = TrainingConfig {
            stage1_mode: Stage1Mode::Sft,
            ..smoothed.clone()
        };
        let data = data_for(seed, &smoothed);
        let a = run_stage1(TrainerState::new(&smoothed).unwrap(), &data, &smoothed).unwrap();
        let b = run_stage1(TrainerState::new(&plain).unwrap(), &data, &plain).unwrap();
        let late = |s: &TrainerState| {
            s.probes
                .iter()
                .filter(|p| p.stage == 1 && p.step > 100)
                .cloned()
                .collect::<Vec<_>>()
        };
        let (pa, pb) = (late(&a), late(&b));
        let higher = !pa.is_empty()
            && pa.len() == pb.len()
            && pa
                .iter()
                .zip(&pb)
                .all(|(x, y)| x.step == y.step && x.entropy > y.entropy);
        let (la, lb) = (
            last_probe(&a, 1).positive_avg_log_prob,
            last_probe(&b, 1).positive_avg_log_prob,
        );
        let rel = (la - lb).abs() / lb.abs();
        if higher && rel <= 0.15 {
            held += 1;
        }
        let min_gap = pa
            .iter()
            .zip(&pb)
            .map(|(x, y)| x.entropy - y.entropy)
            .fold(f64::INFINITY, f64::min);
        detail.push(format!(
            "seed {seed}: min entropy gap {min_gap:+.2e}, positive lbar rel diff {rel:.3}"
        ));
    }
    let pass = held >= 4;
    report(
        6,
        "smoothed SFT entropy",
        pass,
        t.elapsed(),
        &format!("{held}/5 seeds hold; {}", detail.join("; ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_constraint_behavior() {
    let t = Instant::now();
    let mut strong = Vec::new();
    let mut off = Vec::new();
    let threshold = SftConfig::default().threshold;
    for seed in SEEDS {
        for (lambda, out) in [(10.0, &mut strong), (0.0, &mut off)] {
            let mut cfg = TrainingConfig {
                seed,
                ..TrainingConfig::default()
            };
            cfg.sft.lambda = lambda;
            let data = data_for(seed, &cfg);
            let state = run_stage1(TrainerState::new(&cfg).unwrap(), &data, &cfg).unwrap();
            out.push(stage1_negative_nll(&state.params, &data, &cfg).unwrap());
        }
    }
    let pass = strong.iter().all(|&x| x >= threshold - 0.1) && off.iter().all(|&x| x < threshold);
    let fmt = |xs: &[f64]| {
        xs.iter()
            .map(|x| format!("{x:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    report(
        9,
        "constraint behavior",
        pass,
        t.elapsed(),
        &format!("negative NLL with lambda 10: [{}] (need >= {:.1}); lambda 0: [{}] (need < {threshold})", fmt(&strong), threshold - 0.1, fmt(&off)),
    );
    assert!(pass);
}

// --------------------------------------------------------------- criterion 10

fn bundle_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_determinism_and_budget() {
    let dir = tempfile::tempdir().unwrap();
    let config = default_config_path();
    let mut times = Vec::new();
    for name in ["first", "second"] {
        let t = Instant::now();
        let out = dir.path().join(name);
        let o = std::process::Command::new(env!("CARGO_BIN_EXE_cwdpo"))
            .args([
                "run",
                config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        times.push(t.elapsed());
    }
    let (a, b) = (dir.path().join("first"), dir.path().join("second"));
    let files = bundle_files(&a);
    let same_listing = files == bundle_files(&b);
    // The echoed config records its own output directory; everything else must match byte for byte.
    let differing: Vec<String> = files
        .iter()
        .filter(|f| f.as_os_str() != "config.toml")
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let echo = |d: &Path| {
        let mut c = ExperimentConfig::load(&d.join("config.toml")).unwrap();
        c.experiment.out = None;
        c
    };
    let echo_same = echo(&a) == echo(&b);
    let slowest = times.iter().max().copied().unwrap();
    let pass =
        same_listing && differing.is_empty() && echo_same && slowest <= Duration::from_secs(300);
    report(
        10,
        "determinism and budget",
        pass,
        slowest,
        &format!("{} files byte-identical across two runs (differing: {differing:?}), slowest run {:.1}s of 300s", files.len(), slowest.as_secs_f64()),
    );
    assert!(pass);
}
