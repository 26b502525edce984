use iclaudit::models::{RetrievalOracle, UniformScorer};
use iclaudit::probes::{
    random_corpus, run_doubling, run_equivalent_mask, run_needle_haystack, DoublingConfig, EquivalentMaskConfig,
    NeedleConfig, ProbeReport,
};
use iclaudit::seqcore::Alphabet;

fn needle() -> ProbeReport {
    let cfg = NeedleConfig { haystack_sizes: vec![0, 60], n_samples: 4, seed: 9, ..NeedleConfig::default() };
    run_needle_haystack(&RetrievalOracle::default(), &cfg).unwrap()
}

fn doubling() -> ProbeReport {
    let corpus = random_corpus(12, 20, 60, &Alphabet::protein(), 4).unwrap();
    run_doubling(&RetrievalOracle::default(), &corpus, &DoublingConfig::default()).unwrap()
}

fn quartet() -> ProbeReport {
    let corpus = random_corpus(6, 20, 40, &Alphabet::protein(), 5).unwrap();
    let cfg = EquivalentMaskConfig { seed: 3, ..EquivalentMaskConfig::default() };
    run_equivalent_mask(&UniformScorer, &corpus, &cfg).unwrap()
}

#[test]
fn reruns_give_byte_identical_reports() {
    for run in [needle, doubling, quartet] {
        let (a, b) = (run(), run());
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    }
}

#[cfg(feature = "parallel")]
#[test]
fn worker_count_does_not_change_sorted_rows() {
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    for run in [needle, doubling, quartet] {
        let one = pool(1).install(run);
        let four = pool(4).install(run);
        assert_eq!(one.sorted_rows(), four.sorted_rows());
        assert_eq!(one.to_json(), four.to_json());
    }
}
