use super::*;
use crate::ingest::load_profiles;

fn single_phase(cov: Vec<Vec<f64>>) -> SynthSpec {
    SynthSpec {
        runs: 4,
        cores: 1,
        duration_s: 0.05,
        sample_period_s: 0.01,
        features: default_features(),
        context: String::new(),
        seed: 3,
        core_profiles: vec![CoreProfile {
            phases: vec![Phase {
                duration_s: 0.05,
                mean: vec![5.0, 2.0, 1.0],
                mean_end: None,
                covariance: cov,
                jitter_s: 0.0,
            }],
            idle: vec![],
            ar1: 0.0,
        }],
    }
}

fn zeros() -> Vec<Vec<f64>> {
    vec![vec![0.0; 3]; 3]
}

#[test]
fn zero_covariance_gives_constant_identical_runs() {
    let ds = generate(&single_phase(zeros())).unwrap();
    assert_eq!(ds.len(), 4);
    for run in &ds.runs {
        let c = &run.cores[0];
        assert_eq!(c.times, vec![0.0, 0.01, 0.02, 0.03, 0.04]);
        for row in c.values.rows() {
            assert_eq!(row.to_vec(), vec![5.0, 2.0, 1.0]);
        }
    }
}

#[test]
fn fixed_seed_is_bitwise_reproducible() {
    let spec = bundled("tiny").unwrap();
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a, b);
    let mut other = spec.clone();
    other.seed += 1;
    assert_ne!(generate(&other).unwrap(), a);
}

#[test]
fn runs_use_independent_streams() {
    let spec = bundled("tiny").unwrap();
    let ds = generate(&spec).unwrap();
    assert_ne!(ds.runs[0].cores[0].values, ds.runs[1].cores[0].values);
    // a run does not depend on how many runs are drawn
    let mut fewer = spec.clone();
    fewer.runs = 1;
    assert_eq!(generate(&fewer).unwrap().runs[0].cores, ds.runs[0].cores);
}

#[test]
fn tiny_fixture_round_trips_through_ingest() {
    let ds = generate(&bundled("tiny").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write_to_dir(dir.path()).unwrap();
    let back = load_profiles(dir.path()).unwrap();
    assert_eq!((back.len(), back.cores, back.dim()), (3, 2, 3));
    for (a, b) in back.runs.iter().zip(&ds.runs) {
        assert_eq!(a.cores, b.cores);
    }
}

#[test]
fn counters_are_nonnegative_and_idle_is_exact_zero() {
    for name in BUNDLED {
        let spec = bundled(name).unwrap();
        let ds = generate(&spec).unwrap();
        for run in &ds.runs {
            for (core, profile) in run.cores.iter().zip(&spec.core_profiles) {
                assert!(core.values.iter().all(|&x| x >= 0.0));
                for (t, row) in core.times.iter().zip(core.values.rows()) {
                    if profile.idle.iter().any(|iv| *t >= iv[0] && *t < iv[1]) {
                        assert!(row.iter().all(|&x| x == 0.0));
                    }
                }
            }
        }
    }
}

/// Per-feature means over samples whose phase is certain despite jitter.
fn phase_sample_means(
    ds: &ProfileDataset,
    spec: &SynthSpec,
    core: usize,
    phase: usize,
) -> (Vec<f64>, usize) {
    let phases = &spec.core_profiles[core].phases;
    let start: f64 = phases[..phase].iter().map(|p| p.duration_s).sum();
    let end = start + phases[phase].duration_s;
    let margin_lo = if phase == 0 {
        0.0
    } else {
        4.0 * phases[phase - 1].jitter_s
    };
    let margin_hi = 4.0 * phases[phase].jitter_s;
    let d = spec.features.len();
    let mut sum = vec![0.0; d];
    let mut count = 0;
    for run in &ds.runs {
        let c = &run.cores[core];
        for (t, row) in c.times.iter().zip(c.values.rows()) {
            if *t >= start + margin_lo && *t < end - margin_hi {
                for k in 0..d {
                    sum[k] += row[k];
                }
                count += 1;
            }
        }
    }
    (sum.iter().map(|s| s / count as f64).collect(), count)
}

#[test]
fn canneal_like_means_follow_the_spec() {
    let mut spec = bundled("canneal-like").unwrap();
    // more runs of the same spec so every phase has at least 10^4 samples
    spec.runs = 2000;
    let ds = generate(&spec).unwrap();
    let mut first_phase_instr = Vec::new();
    for core in 0..3 {
        for phase in 0..spec.core_profiles[core].phases.len() {
            let p = &spec.core_profiles[core].phases[phase];
            let start: f64 = spec.core_profiles[core].phases[..phase]
                .iter()
                .map(|p| p.duration_s)
                .sum();
            if spec.core_profiles[core]
                .idle
                .iter()
                .any(|iv| iv[0] <= start + 1e-9)
            {
                continue;
            }
            let (mean, count) = phase_sample_means(&ds, &spec, core, phase);
            assert!(
                count >= 10_000,
                "core {core} phase {phase}: {count} samples"
            );
            for k in 0..3 {
                // samples within a run are independent draws, so the standard error is σ/√N
                let se = p.covariance[k][k].sqrt() / (count as f64).sqrt();
                assert!(
                    (mean[k] - p.mean[k]).abs() <= 3.0 * se,
                    "core {core} phase {phase} feature {k}: {} vs {} (se {se})",
                    mean[k],
                    p.mean[k]
                );
            }
            if phase == 0 {
                first_phase_instr.push(mean[0]);
            }
        }
    }
    assert!(first_phase_instr.windows(2).all(|w| w[0] > w[1]));
    assert!(ds
        .runs
        .iter()
        .all(|r| r.cores[3].values.iter().all(|&x| x == 0.0)));
}

#[test]
fn invalid_specs_are_rejected() {
    let not_psd = vec![
        vec![1.0, 2.0, 0.0],
        vec![2.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    assert!(single_phase(not_psd)
        .validate()
        .unwrap_err()
        .to_string()
        .contains("semidefinite"));
    let asym = vec![
        vec![1.0, 0.5, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    assert!(single_phase(asym)
        .validate()
        .unwrap_err()
        .to_string()
        .contains("symmetric"));
    assert!(single_phase(vec![vec![1.0]]).validate().is_err());
    // rank-deficient but PSD is fine
    let rank_one = vec![
        vec![1.0, 2.0, 0.0],
        vec![2.0, 4.0, 0.0],
        vec![0.0, 0.0, 0.0],
    ];
    single_phase(rank_one).validate().unwrap();

    let mut zero_len = single_phase(zeros());
    let extra = Phase {
        duration_s: 0.0,
        ..zero_len.core_profiles[0].phases[0].clone()
    };
    zero_len.core_profiles[0].phases.push(extra);
    assert!(zero_len
        .validate()
        .unwrap_err()
        .to_string()
        .contains("non-positive length"));

    let mut gap = single_phase(zeros());
    gap.duration_s = 0.06;
    assert!(gap
        .validate()
        .unwrap_err()
        .to_string()
        .contains("phases last"));

    assert!(SynthSpec::from_json("{\"runs\": 1}").is_err());
    assert!(SynthSpec::from_json("not json").is_err());
    let mut extra: serde_json::Value = serde_json::to_value(single_phase(zeros())).unwrap();
    extra["colour"] = "blue".into();
    assert!(SynthSpec::from_json(&extra.to_string()).is_err());
}

#[test]
fn rank_one_covariance_stays_on_its_line() {
    let rank_one = vec![
        vec![1.0, 2.0, 0.0],
        vec![2.0, 4.0, 0.0],
        vec![0.0, 0.0, 0.0],
    ];
    let mut spec = single_phase(rank_one);
    spec.core_profiles[0].phases[0].mean = vec![50.0, 100.0, 3.0];
    let ds = generate(&spec).unwrap();
    for row in ds.runs.iter().flat_map(|r| r.cores[0].values.rows()) {
        assert!((row[1] - 2.0 * row[0]).abs() < 1e-9);
        assert_eq!(row[2], 3.0);
    }
}

#[test]
fn ar1_noise_is_persistent() {
    let mut spec = single_phase(vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ]);
    spec.runs = 400;
    spec.duration_s = 1.0;
    spec.core_profiles[0].phases[0].duration_s = 1.0;
    spec.core_profiles[0].phases[0].mean = vec![100.0; 3];
    spec.core_profiles[0].ar1 = 0.9;
    let ds = generate(&spec).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for run in &ds.runs {
        let x = run.cores[0].values.column(0);
        for w in x.to_vec().windows(2) {
            num += (w[0] - 100.0) * (w[1] - 100.0);
            den += (w[0] - 100.0) * (w[0] - 100.0);
        }
    }
    let r = num / den;
    assert!((r - 0.9).abs() < 0.02, "lag-one correlation {r}");

    spec.core_profiles[0].ar1 = 1.0;
    assert!(spec.validate().unwrap_err().to_string().contains("ar1"));
}

#[test]
fn drifting_mean_is_linear_across_the_phase() {
    let mut spec = single_phase(zeros());
    spec.duration_s = 1.0;
    spec.sample_period_s = 0.25;
    spec.core_profiles[0].phases[0].duration_s = 1.0;
    spec.core_profiles[0].phases[0].mean_end = Some(vec![9.0, 2.0, 0.0]);
    let ds = generate(&spec).unwrap();
    let x = ds.runs[0].cores[0].values.column(0).to_vec();
    assert_eq!(x, vec![5.0, 6.0, 7.0, 8.0]);
    let z = ds.runs[0].cores[0].values.column(2).to_vec();
    assert_eq!(z, vec![1.0, 0.75, 0.5, 0.25]);

    spec.core_profiles[0].phases[0].mean_end = Some(vec![1.0]);
    assert!(spec.validate().is_err());
}
