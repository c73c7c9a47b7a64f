mod common;

use common::{dataset, draw_weights};
use netpop::model::{Family, Hyperparams};
use netpop::sampler::{read_trace, run_chain, write_trace, McmcConfig, ModelVariant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn written_trace_reads_back_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta = vec![0.3; 6];
    let graphs = (0..6i64)
        .flat_map(|e| {
            let counts = vec![4u64; 4];
            let w0 = draw_weights(&theta, &counts, &mut rng);
            let w1 = draw_weights(&theta, &counts, &mut rng);
            let y = if e < 3 { 1 } else { 2 };
            vec![(e * 10, y, 0, w0, counts.clone()), (e * 10, y, 1, w1, counts)]
        })
        .collect();
    let d = dataset(4, graphs);
    for variant in [ModelVariant::Fixed, ModelVariant::Mixed] {
        let cfg = McmcConfig {
            n_samples: 40,
            burn_in: 10,
            seed: 1,
            model_variant: variant,
            thin: 7,
        };
        let t = run_chain(&d, &Hyperparams::new(3, 2, Family::Binomial), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_trace(&t, dir.path()).unwrap();
        let back = read_trace(dir.path()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.snapshots().count(), 5);
    }
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(read_trace(dir.path()).is_err());
}
