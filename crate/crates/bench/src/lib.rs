//! Shared fixtures for the benchmarks.

use attrib_core::{ConfigSpace, Factor, Level, Role, SyntheticModel};

const WORKLOADS: [&str; 10] = [
    "603.bwaves_s",
    "607.cactuBSSN_s",
    "619.lbm_s",
    "621.wrf_s",
    "627.cam4_s",
    "628.pop2_s",
    "638.imagick_s",
    "644.nab_s",
    "649.fotonik3d_s",
    "654.roms_s",
];

/// Hyper-threading CUI over an 18,000-configuration DC space.
pub fn cpu_space() -> ConfigSpace {
    let threads: Vec<String> = (1..=64)
        .filter(|t| ![51, 53, 59, 61].contains(t))
        .map(|t| t.to_string())
        .collect();
    let datasets: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
    ConfigSpace::new(
        vec![
            Factor::with_labels("hyperthreading", Role::Cui, &["on", "off"]),
            Factor::with_labels("workload", Role::Dc, &WORKLOADS).stratum(),
            Factor::with_labels("dataset", Role::Dc, &datasets),
            Factor::new("compiler", Role::Dc, vec![Level::new("gcc")]),
            Factor::with_labels("opt", Role::Dc, &["O1", "O2", "O3"]),
            Factor::with_labels("threads", Role::Dc, &threads),
        ],
        vec![],
    )
    .expect("fixture space is valid")
}

/// Skewed workload effects, a hyper-threading main effect and
/// workload-dependent interactions.
pub fn cpu_model() -> SyntheticModel {
    let mut model = SyntheticModel::new(100.0)
        .with_main("hyperthreading", "off", 3.0)
        .with_noise(2.0);
    for (i, w) in WORKLOADS.iter().enumerate() {
        model = model
            .with_main("workload", w, 30.0 * (i * i) as f64)
            .with_interaction(&[("hyperthreading", "off"), ("workload", w)], (i as f64 - 4.5) * 0.8);
    }
    for i in 0..10 {
        model = model.with_main("dataset", &format!("d{i}"), 5.0 * i as f64);
    }
    model
}

/// Full factorial space with the given level counts; the first factor is the CUI.
pub fn factorial_space(levels: &[usize]) -> ConfigSpace {
    let factors = levels
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let labels: Vec<String> = (0..n).map(|l| format!("l{l}")).collect();
            let role = if i == 0 { Role::Cui } else { Role::Dc };
            Factor::with_labels(format!("x{i}"), role, &labels)
        })
        .collect();
    ConfigSpace::new(factors, vec![]).expect("fixture space is valid")
}
