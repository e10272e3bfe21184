use tscf_core::noise::estimate_noise_dual;
use tscf_core::phantom::{generate_dro, AifModel, Dro, DroSpec};
use tscf_core::tscf::{tscf_denoise, TscfConfig};
use tscf_core::volume::{read_volume, write_volume};
use tscf_core::{vst, AcquisitionParams, TimeSeriesVolume};

fn phantom(seed: u64) -> (DroSpec, Dro) {
    let spec = DroSpec::default();
    let dro = generate_dro(&spec, &AifModel::default(), &AcquisitionParams::default(), seed).unwrap();
    (spec, dro)
}

/// RMS error and mean error against the noiseless volume over `voxels`.
fn errors(a: &TimeSeriesVolume, truth: &TimeSeriesVolume, voxels: &[usize]) -> (f64, f64) {
    let (mut sq, mut sum, mut n) = (0.0, 0.0, 0.0);
    for &v in voxels {
        for (x, y) in a.series(v).iter().zip(truth.series(v)) {
            sq += (x - y) * (x - y);
            sum += x - y;
            n += 1.0;
        }
    }
    ((sq / n).sqrt(), sum / n)
}

#[test]
fn noise_level_is_recovered_from_the_blood_rows() {
    let (spec, dro) = phantom(11);
    let stats = estimate_noise_dual(&dro.noisy, &spec.aif_roi(), 0..10, true).unwrap();
    assert!((stats.sigma_g / spec.sigma_g - 1.0).abs() < 0.05, "{stats:?}");
}

#[test]
fn stabilized_filtering_removes_noise_and_rician_bias() {
    let (spec, dro) = phantom(5);
    let stabilizer = vst::build_stabilizer(spec.sigma_g).unwrap();
    let stabilized = vst::apply_vst(&dro.noisy, &stabilizer).unwrap();
    let (denoised, diag) = tscf_denoise(&stabilized, &TscfConfig::default()).unwrap();
    let (restored, _) = vst::apply_ivst(&denoised, &stabilizer).unwrap();

    let tissue = spec.tissue_roi();
    let (raw_rms, raw_bias) = errors(&dro.noisy, &dro.noiseless, &tissue);
    let (rms, bias) = errors(&restored, &dro.noiseless, &tissue);
    assert!(rms < 0.35 * raw_rms, "rms {rms} vs raw {raw_rms}");
    // baseline signal sits near 1.8 sigma, where the magnitude bias is large
    assert!(raw_bias > 1.0 && bias.abs() < 0.2 * raw_bias, "bias {bias} vs raw {raw_bias}");
    assert!(diag.iterations >= 1 && diag.residual_std.iter().all(|s| (0.8..1.2).contains(s)), "{diag:?}");
}

#[test]
fn filtering_is_independent_of_the_thread_count() {
    let (spec, dro) = phantom(2);
    let stabilizer = vst::build_stabilizer(spec.sigma_g).unwrap();
    let stabilized = vst::apply_vst(&dro.noisy, &stabilizer).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| tscf_denoise(&stabilized, &TscfConfig::default()).unwrap())
    };
    let (a, da) = run(1);
    let (b, db) = run(6);
    assert_eq!(da, db);
    let dir = tempfile::tempdir().unwrap();
    write_volume(&a, &dir.path().join("a.json")).unwrap();
    write_volume(&b, &dir.path().join("b.json")).unwrap();
    let bytes = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(bytes("a.f32"), bytes("b.f32"));
    assert_eq!(read_volume(&dir.path().join("a.json")).unwrap().dims(), a.dims());
}
