use proptest::prelude::*;

use chestrag::corpus::{
    class_histogram, filter_single_label, floor_share, imbalance_ratio, load_dataset, stratified_split,
    write_embeddings, write_labels, ClassHistogram, Dataset, LabelVocabulary, SampleRecord,
};
use chestrag::llm::{parse_label, ParsedLabel};
use chestrag::metrics::{accuracy, bin_pairs, ece, macro_f1, reliability_bins, PredictionRecord};
use chestrag::retrieval::{fuse_image, fuse_text, ContextPrior, Evidence};
use chestrag::sampler::{sample_weights, SampleWeights};
use chestrag::trainer::softmax;

const NAMES: [&str; 6] = ["Atelectasis", "Effusion", "Emphysema", "Pneumothorax", "Mass", "No Finding"];

fn dataset(counts: &[usize], dim: usize, values: &[f64]) -> Dataset {
    let vocab = LabelVocabulary::new((0..counts.len()).map(|i| format!("C{i}")), Vec::<String>::new()).unwrap();
    let mut samples = Vec::new();
    for (label, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let i = samples.len();
            let tokens = (0..8 * dim).map(|k| values[(i * 8 * dim + k) % values.len()]).collect();
            samples.push(SampleRecord::new(format!("id{i}"), label, dim, tokens).unwrap());
        }
    }
    Dataset::new(vocab, samples, dim).unwrap()
}

fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len).prop_filter_map("zero mass", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
    })
}

fn records() -> impl Strategy<Value = Vec<PredictionRecord>> {
    prop::collection::vec((0usize..4, distribution(4)), 1..40).prop_map(|rows| {
        rows.into_iter().enumerate().map(|(i, (y, p))| PredictionRecord::new(format!("r{i}"), y, p, None)).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn split_partitions_by_floor_rule(counts in prop::collection::vec(1usize..40, 1..6), a in 0.05f64..1.0, b in 0.05f64..1.0, c in 0.05f64..1.0, seed: u64) {
        let s = a + b + c;
        let f = [a / s, b / s, 1.0 - a / s - b / s];
        let ds = dataset(&counts, 1, &[0.5]);
        let split = stratified_split(&ds, f, seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        let train = class_histogram(&ds, &split.train).unwrap();
        for (k, &n) in counts.iter().enumerate() {
            prop_assert_eq!(train.counts[k], floor_share(f[0], n));
        }
        prop_assert_eq!(&split, &stratified_split(&ds, f, seed).unwrap());
    }

    #[test]
    fn filtered_labels_are_single(rows in prop::collection::vec(("[a-z]{1,6}", prop::collection::vec("[A-Z][a-z]{0,5}", 0..4)), 0..20)) {
        let raw: Vec<(String, String)> = rows.iter().map(|(id, names)| (id.clone(), names.join("|"))).collect();
        let kept = filter_single_label(raw.clone());
        for (_, label) in &kept {
            prop_assert!(!label.contains('|'));
            prop_assert!(!label.is_empty());
        }
        let expected = rows.iter().filter(|(_, names)| names.len() == 1).count();
        prop_assert_eq!(kept.len(), expected);
    }

    #[test]
    fn imbalance_ratio_bounds(counts in prop::collection::vec(0usize..500, 1..8)) {
        let hist = ClassHistogram { counts: counts.clone() };
        match imbalance_ratio(&hist) {
            Ok(r) => {
                prop_assert!(r >= 1.0 / counts.len() as f64 - 1e-12);
                prop_assert!(r <= 1.0);
            }
            Err(_) => prop_assert_eq!(counts.iter().sum::<usize>(), 0),
        }
    }

    #[test]
    fn ingestion_round_trips(counts in prop::collection::vec(1usize..5, 1..4), dim in 1usize..5, values in prop::collection::vec(-1e6f64..1e6, 1..64)) {
        let ds = dataset(&counts, dim, &values);
        let dir = tempfile::tempdir().unwrap();
        let (labels, emb) = (dir.path().join("labels.csv"), dir.path().join("embeddings.csv"));
        write_labels(&ds, &labels).unwrap();
        write_embeddings(&ds, &emb).unwrap();
        let back = load_dataset(&labels, &emb, ds.vocabulary(), Some(dim)).unwrap();
        prop_assert_eq!(back.digest(), ds.digest());
    }

    #[test]
    fn sampler_probabilities_are_scale_invariant(counts in prop::collection::vec(1usize..50, 1..6), factor in 1e-3f64..1e3) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let idx: Vec<usize> = (0..labels.len()).collect();
        let w = sample_weights(&ClassHistogram { counts: counts.clone() }, &idx, &labels).unwrap();
        let p = w.probabilities();
        for (a, b) in p.iter().zip(w.scaled(factor).unwrap().probabilities()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for q in w.class_probabilities(&labels, counts.len()) {
            prop_assert!((q - 1.0 / counts.len() as f64).abs() < 1e-9);
        }
        let uni = SampleWeights::uniform(idx);
        prop_assert!((uni.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-700.0f64..700.0, 1..10)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|l| l + 3.5).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn image_fusion_is_convex_and_monotone(p in distribution(5), q in distribution(5), l1 in 0.0f64..=1.0, l2 in 0.0f64..=1.0) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let a = fuse_image(&p, &q, lo, Evidence::None).unwrap().probs;
        let b = fuse_image(&p, &q, hi, Evidence::None).unwrap().probs;
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|v| *v >= 0.0));
        // larger lambda never moves the mix further from the vote
        let dist = |x: &[f64]| x.iter().zip(&q).map(|(u, v)| (u - v).abs()).sum::<f64>();
        prop_assert!(dist(&b) <= dist(&a) + 1e-12);
        prop_assert_eq!(fuse_image(&p, &q, 0.0, Evidence::None).unwrap().probs, p.clone());
    }

    #[test]
    fn text_fusion_is_a_distribution(p in distribution(4), weights in prop::collection::vec(1.0f64..6.0, 4), tau in 0.0f64..3.0) {
        let prior = ContextPrior { weights: weights.clone() };
        let out = fuse_text(&p, &prior, tau, Evidence::None).unwrap().probs;
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|v| *v >= 0.0));
        // the class with the strongest prior never loses mass relative to the rest
        let top = (0..4).max_by(|&a, &b| weights[a].total_cmp(&weights[b])).unwrap();
        if p[top] > 0.0 {
            prop_assert!(out[top] >= p[top] - 1e-12);
        }
    }

    #[test]
    fn ece_is_bounded(pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200), bins in 1usize..20) {
        let b = bin_pairs(pairs.iter().copied(), bins).unwrap();
        prop_assert_eq!(b.iter().map(|x| x.count).sum::<usize>(), pairs.len());
        let e = ece(&b, pairs.len()).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        for bin in b.iter().filter(|x| x.count > 0) {
            prop_assert!(bin.mean_confidence >= bin.lower - 1e-12 && bin.mean_confidence <= bin.upper + 1e-12);
        }
    }

    #[test]
    fn metrics_ignore_record_order(recs in records(), rot in 0usize..40) {
        let mut shuffled = recs.clone();
        shuffled.rotate_left(rot % recs.len());
        shuffled.reverse();
        prop_assert_eq!(accuracy(&recs).unwrap(), accuracy(&shuffled).unwrap());
        prop_assert!((macro_f1(&recs).unwrap() - macro_f1(&shuffled).unwrap()).abs() < 1e-15);
        let e1 = ece(&reliability_bins(&recs, 10).unwrap(), recs.len()).unwrap();
        let e2 = ece(&reliability_bins(&shuffled, 10).unwrap(), recs.len()).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn parse_label_finds_embedded_class(c in 0usize..6, prefix in "[a-z ]{0,12}", suffix in "[a-z ]{0,12}", upper: bool) {
        let vocab = LabelVocabulary::default();
        let name = if upper { NAMES[c].to_uppercase() } else { NAMES[c].to_string() };
        // a word that could collide with a class name is not generated: letters only, no class words
        prop_assume!(NAMES.iter().chain(["Pneumonia"].iter()).all(|n| !prefix.contains(&n.to_lowercase()) && !suffix.contains(&n.to_lowercase())));
        let text = format!("{prefix} {name}. {suffix}");
        prop_assert_eq!(parse_label(&text, &vocab), ParsedLabel::Valid(c));
    }
}

#[test]
fn macro_f1_matches_reference() {
    // sklearn f1_score(average="macro", labels=range(6), zero_division=0)
    let truth = [0, 0, 1, 1, 2, 2, 3, 3, 3, 4, 0, 1];
    let pred = [0, 1, 1, 1, 2, 0, 3, 2, 3, 1, 0, 2];
    let recs: Vec<PredictionRecord> = truth
        .iter()
        .zip(pred)
        .enumerate()
        .map(|(i, (&y, p))| {
            let mut probs = vec![0.0; 6];
            probs[p] = 1.0;
            PredictionRecord::new(format!("r{i}"), y, probs, None)
        })
        .collect();
    assert!((macro_f1(&recs).unwrap() - 0.4063492063492064).abs() < 1e-15);
    assert!((accuracy(&recs).unwrap() - 0.5833333333333334).abs() < 1e-15);
}
