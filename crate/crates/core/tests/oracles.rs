//! Library results against independent references: hand computations,
//! brute-force enumeration, generator ground truth and scipy 1.15 output.

use fusionscreen::data::{self, ClassLabel, FeatureTable, SplitSpec};
use fusionscreen::forest::{self, ForestParams};
use fusionscreen::logreg;
use fusionscreen::metrics;
use fusionscreen::mrcv::{self, RfGrid, RfMrcvOptions};
use fusionscreen::preprocess;
use fusionscreen::synth::{self, SynthSpec};
use fusionscreen::univariate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labels(pos: &[bool]) -> Vec<ClassLabel> {
    pos.iter().map(|&p| if p { ClassLabel::Malignant } else { ClassLabel::Benign }).collect()
}

// scipy.stats.shapiro on the same values: (sample, W, p).
const SHAPIRO_REFERENCE: &[(&[f64], f64, f64)] = &[
    (&[1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689),
    (&[2.5, 1.0, 7.0, 3.25], 0.9233381782436724, 0.5558205263351974),
    (&[0.777302, 0.08443, -2.184834, 0.27816, -0.520105, 0.628933, -1.042974], 0.9128272774078546, 0.41579717470093674),
    (&[1.156971, 0.354444, 0.715529, 0.571054, 0.301188, 1.511078, 1.241555, 0.071538, 0.157031, 0.524777, 0.041244], 0.9106248634580645, 0.24808129332346662),
    (&[-1.281608, -1.299413, 0.330712, -0.054642, -1.259591, -0.805561, -0.488902, -1.156555, -0.265069, 0.362213, 0.215288, 0.524824], 0.8829057486852839, 0.0954993679675384),
    (&[0.710708, 0.639801, 0.310521, 0.567163, 0.351535, 0.556764, 0.376406, 0.088079, 0.167833, 0.010991, 0.897598, 0.948245, 0.86199, 0.271209, 0.121594, 0.260988, 0.632257, 0.56647, 0.199659, 0.828962], 0.9482150352007915, 0.3408066819025713),
    (&[0.029388, -1.391176, -0.673092, 0.496942, -0.177705, -0.188884, -0.307131, 0.350496, -1.298955, -2.015632, 0.642238, 1.225827, -0.320774, 0.005831, 0.508162, 0.367176, 0.041489, -0.131442, -2.041528, -1.053735, 0.148974, -0.088107, -1.021381, 0.956505, -0.552551, -0.337173, 0.439129, 0.552169, 0.129224, 0.194885, 0.515469, 1.016801, -1.457222, -0.491361, 0.314574, 0.571553, -0.80218, -1.305498, 1.352652, 0.232915, -0.806492, 0.453981, 0.168993, -1.705544, -1.499982, 0.92157, 0.161035, -1.025448, 0.63147, 0.885722], 0.9590726318159726, 0.08128477763715534),
    (&[0.196056, 0.244595, 2.694234, 2.883399, 4.049464, 2.097573, 0.574468, 0.623366, 0.512079, 0.494261, 0.110686, 1.061852, 0.369283, 0.239414, 2.315419, 2.937108, 0.703907, 2.540693, 0.531448, 2.519718, 7.584932, 1.883447, 1.997371, 3.674887, 2.19633, 0.748176, 8.457921, 0.758027, 0.518603, 0.729621, 0.471024, 0.578671, 7.97409, 2.122997, 2.196595, 2.953253, 0.56857, 0.305111, 0.4671, 2.980714, 1.176368, 0.308267, 3.003131, 2.152873, 0.032466, 3.328305, 3.497206, 3.325243, 0.342425, 1.178917, 1.203352, 0.945238, 1.24315, 2.28034, 0.920597, 1.541309, 0.173462, 1.015619, 4.6377, 1.464023, 0.269678, 0.897558, 0.412378, 1.040145, 1.10761, 0.419616, 0.705095, 2.111547, 0.586392, 0.725636, 0.090426, 3.979985, 0.383839, 1.551109, 0.211462, 0.313932, 0.2671, 0.613416, 0.394034, 0.378352, 0.962298, 0.290651, 0.279285, 1.71744, 0.591483, 0.978145, 2.157036, 0.575306, 1.432395, 0.506031, 1.008432, 2.492201, 0.93478, 1.137527, 0.286887, 0.822376, 1.37039, 2.323791, 2.117098, 1.510137, 0.443877, 1.874431, 0.13336, 4.45645, 1.619688, 3.298493, 0.687721, 0.496929, 1.08972, 0.34966, 0.96997, 0.165807, 1.701202, 0.681392, 0.503607, 1.968477, 0.973664, 6.331982, 0.647448, 0.423426, 1.66797, 0.516445, 7.975754, 0.637589, 4.800729, 0.415237, 5.37766, 2.250148, 2.037226, 3.780307, 1.060486, 1.613743, 0.206244, 1.47857, 1.278636, 1.470784, 3.970221, 0.404783, 1.030233, 0.26812, 0.111135, 3.193515, 0.602919, 0.538306, 1.25269, 0.139217, 0.585641, 0.57134, 0.410005, 0.766534, 0.98041, 0.211427, 0.494967, 2.597261, 0.69881, 1.601288, 1.847739, 1.08759, 4.626215, 0.17397, 1.886748, 0.966234, 1.549786, 0.62531, 2.238201, 0.750362, 0.897431, 0.36501, 0.374135, 0.65366, 4.523146, 0.401459, 2.362635, 0.301218, 4.041177, 0.207575, 5.574366, 0.260685, 0.981383, 0.913117, 0.403346, 1.179969, 1.113079, 0.361506, 13.205812, 1.258178, 1.21879, 0.393322, 1.823224, 0.881246, 0.582079, 14.297164, 0.548618, 2.528482, 0.749528, 0.824068, 2.231566, 0.18312, 1.253097, 2.012001], 0.6567136627804113, 6.756433955251585e-20),
];

#[test]
fn shapiro_wilk_matches_scipy() {
    for (x, w_ref, p_ref) in SHAPIRO_REFERENCE {
        let (w, p) = univariate::shapiro_wilk(x).unwrap();
        assert!((w - w_ref).abs() <= 1e-5, "n={} W {w} vs {w_ref}", x.len());
        assert!(
            (p - p_ref).abs() <= 1e-4 || (p - p_ref).abs() <= 1e-3 * p_ref,
            "n={} p {p} vs {p_ref}",
            x.len()
        );
    }
}

#[test]
fn shapiro_wilk_closed_form_and_skewed_sample() {
    let (w, _) = univariate::shapiro_wilk(&[-1.0, 0.0, 1.0]).unwrap();
    assert!((w - 1.0).abs() < 1e-12);
    let mut r = ChaCha8Rng::seed_from_u64(195);
    let x: Vec<f64> = (0..100).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
    let (_, p) = univariate::shapiro_wilk(&x).unwrap();
    assert!(p < 1e-3, "exponential sample p = {p}");
}

#[test]
fn mann_whitney_hand_example() {
    let mw = univariate::mann_whitney(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    assert_eq!(mw.u, 0.0);
    assert!((mw.p_value - 0.1).abs() < 1e-15);
}

#[test]
fn rank_biserial_is_twice_auc_minus_one() {
    let mut r = ChaCha8Rng::seed_from_u64(213);
    for _ in 0..100 {
        let n = r.random_range(4..40);
        let mut pos: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        pos[0] = true;
        pos[1] = false;
        let x: Vec<f64> = (0..n).map(|_| r.random_range(0..8) as f64).collect();
        let m: Vec<f64> = x.iter().zip(&pos).filter(|(_, p)| **p).map(|(v, _)| *v).collect();
        let b: Vec<f64> = x.iter().zip(&pos).filter(|(_, p)| !**p).map(|(v, _)| *v).collect();
        let rg = univariate::rank_biserial(&m, &b).unwrap();
        let auc = metrics::auc(&x, &labels(&pos)).unwrap();
        assert!((rg - (2.0 * auc - 1.0)).abs() < 1e-12);
    }
}

#[test]
fn bh_hand_example() {
    let q = univariate::bh_fdr(&[0.01, 0.04, 0.03, 0.005]).unwrap();
    for (a, b) in q.iter().zip([0.02, 0.04, 0.04, 0.02]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn screen_recovers_planted_features() {
    let planted: Vec<(usize, f64)> = [3, 11, 20, 32, 47].iter().map(|&i| (i, 2.0)).collect();
    let t = synth::generate(&SynthSpec::new(100, 100, 50, 229).with_planted(planted.clone())).unwrap();
    let report = univariate::univariate_screen(&t, 0.05).unwrap();
    let mut by_fdr: Vec<(f64, String)> = report.results.iter().map(|r| (r.fdr.unwrap(), r.feature.clone())).collect();
    by_fdr.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut top: Vec<String> = by_fdr[..5].iter().map(|x| x.1.clone()).collect();
    top.sort();
    let expected: Vec<String> = planted.iter().map(|(i, _)| t.feature_names()[*i].clone()).collect();
    assert_eq!(top, expected);
    assert!(by_fdr[..5].iter().all(|x| x.0 < 0.05));
}

#[test]
fn null_screen_finds_almost_nothing() {
    let t = synth::generate(&SynthSpec::new(100, 100, 100, 231)).unwrap();
    assert!(univariate::univariate_screen(&t, 0.05).unwrap().significant <= 2);
}

#[test]
fn strong_feature_enters_first() {
    let mut first = 0;
    for seed in 0..100u64 {
        let t = synth::generate(&SynthSpec::new(100, 100, 21, 2_930 + seed).with_planted(vec![(0, 3.0)])).unwrap();
        let m = logreg::forward_select(&t, t.feature_names(), 2.0).unwrap();
        if m.selected_order.first() == Some(&t.feature_names()[0]) {
            first += 1;
        }
    }
    assert!(first >= 95, "{first}/100");
}

#[test]
fn forward_selection_covers_planted_set() {
    let mut covered = 0;
    for seed in 0..100u64 {
        let spec = SynthSpec::new(250, 250, 100, 6_920 + seed).with_planted(vec![(0, 1.0), (1, 0.8), (2, 0.6)]);
        let t = synth::generate(&spec).unwrap();
        let m = logreg::forward_select(&t, t.feature_names(), 2.0).unwrap();
        if t.feature_names()[..3].iter().all(|f| m.selected_order.contains(f)) {
            covered += 1;
        }
    }
    assert!(covered >= 90, "{covered}/100");
}

#[test]
fn sigmoid_of_log_three() {
    assert!((logreg::sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
}

#[test]
fn oob_fraction_near_bootstrap_expectation() {
    let t = synth::generate(&SynthSpec::new(40, 40, 3, 370)).unwrap();
    let f = forest::fit_forest(&t, &ForestParams::new(2, 100, 371)).unwrap();
    let mean = f.trees.iter().map(|t| t.oob.len()).sum::<usize>() as f64 / (100.0 * 80.0);
    assert!((0.30..=0.44).contains(&mean), "{mean}");
}

#[test]
fn class_weighting_lifts_minority_sensitivity() {
    let t = synth::generate(&SynthSpec::new(500, 50, 6, 348).with_planted(vec![(0, 1.0), (1, 1.0)])).unwrap();
    let sens = |weighting: bool| {
        let params = ForestParams { min_leaf: 5, class_weighting: weighting, ..ForestParams::new(2, 300, 349) };
        let f = forest::fit_forest(&t, &params).unwrap();
        let oob = forest::oob_proba(&f, &t).unwrap();
        let (mut hit, mut total) = (0, 0);
        for (p, l) in oob.iter().zip(t.labels()) {
            if let (Some(p), ClassLabel::Malignant) = (p, l) {
                total += 1;
                hit += (*p >= 0.5) as usize;
            }
        }
        hit as f64 / total as f64
    };
    let (weighted, plain) = (sens(true), sens(false));
    assert!(weighted - plain > 0.05, "weighted {weighted} plain {plain}");
}

#[test]
fn separable_feature_fits_training_set() {
    let n = 60;
    let pos: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let x: Vec<f64> = pos.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let t = FeatureTable::from_columns(
        (0..n).map(|i| format!("s{i}")).collect(),
        vec!["c".into(); n],
        labels(&pos),
        vec!["x".into()],
        &[x],
    )
    .unwrap();
    let f = forest::fit_forest(&t, &ForestParams::new(1, 100, 347)).unwrap();
    let p = forest::predict_proba(&f, &t).unwrap();
    assert!(p.iter().zip(&pos).all(|(p, y)| (*p >= 0.5) == *y));
}

#[test]
fn single_leaf_predicts_weighted_prior() {
    let t = synth::generate(&SynthSpec::new(30, 10, 2, 346)).unwrap();
    let params = ForestParams { min_leaf: 40, ..ForestParams::new(1, 1, 346) };
    let f = forest::fit_forest(&t, &params).unwrap();
    // the prior comes from the bootstrap sample, so only constancy is checked
    let tree = &f.trees[0];
    assert_eq!(tree.nodes.len(), 1);
    let p = forest::predict_proba(&f, &t).unwrap();
    assert!(p.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn paper_sized_split_rounding() {
    let t = synth::generate(&SynthSpec::new(103, 103, 2, 415)).unwrap();
    let s = mrcv::stratified_split_indices(&t, 0.3, 1).unwrap();
    let count = |rows: &[usize], l: ClassLabel| rows.iter().filter(|&&i| t.labels()[i] == l).count();
    assert_eq!(count(&s.validation, ClassLabel::Benign), 31);
    assert_eq!(count(&s.validation, ClassLabel::Malignant), 31);
}

#[test]
fn imbalanced_shape_keeps_its_ratio() {
    let t = synth::generate(&SynthSpec::new(4569, 440, 3, 645)).unwrap();
    let (train, validation) = mrcv::stratified_split(&t, 0.3, 2).unwrap();
    for part in [&train, &validation] {
        let ratio = part.class_count(ClassLabel::Benign) as f64 / part.class_count(ClassLabel::Malignant) as f64;
        assert!((ratio - 4569.0 / 440.0).abs() < 0.05, "{ratio}");
    }
}

#[test]
fn paper_sized_partition_counts() {
    let t = synth::generate(&SynthSpec::new(4569 + 122, 440 + 49, 2, 65)).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(66);
    let mut pick = |label: ClassLabel, k: usize| -> Vec<String> {
        let pool: Vec<&String> = t.sample_ids().iter().zip(t.labels()).filter(|(_, l)| **l == label).map(|(id, _)| id).collect();
        rand::seq::index::sample(&mut r, pool.len(), k).into_iter().map(|i| pool[i].clone()).collect()
    };
    let mut ids = pick(ClassLabel::Benign, 122);
    ids.extend(pick(ClassLabel::Malignant, 49));
    let (train, test) = data::partition(&t, &SplitSpec::new(ids, 0)).unwrap();
    assert_eq!((train.class_count(ClassLabel::Benign), train.class_count(ClassLabel::Malignant)), (4569, 440));
    assert_eq!((test.class_count(ClassLabel::Benign), test.class_count(ClassLabel::Malignant)), (122, 49));
    assert_eq!((train.n_samples(), test.n_samples()), (5009, 171));
}

#[test]
fn rf_harness_prefers_signal_over_noise() {
    let opts = RfMrcvOptions {
        repeats: 10,
        base_seed: 433,
        grid: RfGrid { mtry: vec![2, 4], ntree: vec![50] },
        ..RfMrcvOptions::default()
    };
    let signal = synth::generate(&SynthSpec::new(60, 60, 8, 434).with_planted(vec![(0, 1.5)])).unwrap();
    let noise = synth::generate(&SynthSpec::new(60, 60, 8, 434)).unwrap();
    let names = signal.feature_names().to_vec();
    let a = mrcv::run_mrcv_rf(&signal, &names, &opts).unwrap();
    let b = mrcv::run_mrcv_rf(&noise, &names, &opts).unwrap();
    let mean = |o: &[mrcv::FoldOutcome]| o.iter().map(|f| f.bacc_validation).sum::<f64>() / o.len() as f64;
    assert!(mean(&a) >= mean(&b));
    let ranking = mrcv::rank_features_rf(&a, &names);
    assert_eq!(ranking.features()[0], names[0]);
}

#[test]
fn synthetic_means_match_spec() {
    let n = 400;
    let t = synth::generate(&SynthSpec::new(n, n, 3, 649).with_planted(vec![(0, 1.5), (2, -0.7)])).unwrap();
    for (j, shift) in [(0, 1.5), (1, 0.0), (2, -0.7)] {
        let x = t.dense_column(j).unwrap();
        let mean = |label: ClassLabel| {
            let v: Vec<f64> = x.iter().zip(t.labels()).filter(|(_, l)| **l == label).map(|(v, _)| *v).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let bound = 4.0 / (n as f64).sqrt();
        assert!(mean(ClassLabel::Benign).abs() <= bound);
        assert!((mean(ClassLabel::Malignant) - shift).abs() <= bound);
    }
}

#[test]
fn three_sd_shift_is_overwhelming() {
    let t = synth::generate(&SynthSpec::new(100, 100, 10, 644).with_planted(vec![(4, 3.0)])).unwrap();
    let report = univariate::univariate_screen(&t, 0.05).unwrap();
    assert!(report.results[4].fdr.unwrap() < 1e-10);
}

#[test]
fn benign_rows_center_at_zero() {
    let t = synth::generate(&SynthSpec::new(41, 30, 4, 122).with_planted(vec![(1, 2.0)])).unwrap();
    let s = preprocess::fit_robust_scaler(&t, ClassLabel::Benign, false).unwrap();
    let z = preprocess::apply_scaler(&s, &t).unwrap();
    for j in 0..z.n_features() {
        let v: Vec<f64> = (0..z.n_samples()).filter(|&i| z.labels()[i] == ClassLabel::Benign).map(|i| z.value(i, j).unwrap()).collect();
        assert!(preprocess::median(&v).abs() <= 1e-12);
    }
}
