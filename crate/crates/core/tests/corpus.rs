use std::path::Path;

use emarch_core::simulator::{count_params, load_corpus, zoo};

fn shipped() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

#[test]
fn shipped_files_match_builders() {
    let files = load_corpus(&shipped()).expect("shipped corpus loads");
    let built = zoo::builtin_corpus(zoo::DEFAULT_INPUT);
    assert_eq!(files, built, "regenerate with the export_corpus example");
}

#[test]
fn params_within_five_percent_of_reference() {
    let corpus = load_corpus(&shipped()).unwrap();
    assert_eq!(corpus.len(), zoo::REFERENCE_PARAMS_M.len());
    for (d, (name, m)) in corpus.iter().zip(zoo::REFERENCE_PARAMS_M) {
        assert_eq!(d.name, name);
        let p = count_params(d).unwrap() as f64;
        let rel = (p / (m * 1e6) - 1.0).abs();
        assert!(rel <= 0.05, "{name}: {p} vs {m} M ({rel:.3})");
    }
}

#[test]
fn every_descriptor_chains() {
    for d in load_corpus(&shipped()).unwrap() {
        d.validate().unwrap();
        assert_eq!(d.output_shape().unwrap(), [1, 1, 1000], "{}", d.name);
    }
}
