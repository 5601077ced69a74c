use approx::assert_abs_diff_eq;
use netsir::network::{
    excess_distribution, from_edge_list, parse_edge_list, poisson_distribution, power_law_distribution, read_edge_list,
    DegreeDistribution, EdgeListOptions,
};
use netsir::Error;

const TRIANGLE_PLUS_TAIL: &str = "\
# a triangle with a pendant node
a b
b c
c a   # closing edge
c d
";

#[test]
fn edge_list_file_gives_empirical_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.txt");
    std::fs::write(&path, TRIANGLE_PLUS_TAIL).unwrap();
    let (dist, summary) = read_edge_list(&path, &EdgeListOptions::default()).unwrap();
    // Degrees: a 2, b 2, c 3, d 1.
    assert_eq!(dist.k_min(), 1);
    assert_eq!(dist.k_max(), 3);
    assert_eq!(dist.probabilities(), &[0.25, 0.5, 0.25]);
    assert_eq!(summary.nodes, 4);
    assert_eq!(summary.edges, 4);
    assert_abs_diff_eq!(summary.mean_degree, 2.0);
    assert_abs_diff_eq!(dist.mean_degree(), summary.mean_degree, epsilon = 1e-12);
    assert_eq!(summary.distinct_degrees, 3);
}

#[test]
fn duplicates_and_loops_are_dropped_or_rejected() {
    let text = "1 2\n2 1\n3 3\n2 3\n";
    let edges = parse_edge_list(text).unwrap();
    let (dist, summary) = from_edge_list(edges.clone(), &EdgeListOptions::default()).unwrap();
    assert_eq!(summary.duplicates_removed, 1);
    assert_eq!(summary.self_loops_removed, 1);
    assert_eq!(summary.edges, 2);
    assert_eq!(dist.probabilities(), &[2.0 / 3.0, 1.0 / 3.0]);

    let strict = EdgeListOptions {
        reject_duplicates: true,
        ..EdgeListOptions::default()
    };
    match from_edge_list(edges.clone(), &strict) {
        Err(Error::Ingestion { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let no_loops = EdgeListOptions {
        reject_self_loops: true,
        ..EdgeListOptions::default()
    };
    match from_edge_list(edges, &no_loops) {
        Err(Error::Ingestion { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_edge_lists_fail_with_line_numbers() {
    match parse_edge_list("a b\n\nc\n") {
        Err(Error::Ingestion { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    assert!(parse_edge_list("a b c\n").is_err());
    assert!(matches!(
        parse_edge_list("# nothing\n"),
        Err(Error::DegenerateDistribution(_))
    ));
    assert!(from_edge_list([("x", "x")], &EdgeListOptions::default()).is_err());

    let missing = read_edge_list("/nonexistent/edges.txt", &EdgeListOptions::default()).unwrap_err();
    assert_eq!(missing.exit_code(), 3);
}

#[test]
fn distribution_text_round_trips() {
    let dist = power_law_distribution(2.0, 6, 105).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pl2.txt");
    std::fs::write(&path, dist.to_text()).unwrap();
    let back = DegreeDistribution::read(&path).unwrap();
    assert_eq!(back.k_min(), 6);
    assert_eq!(back.num_classes(), 100);
    for (a, b) in back.probabilities().iter().zip(dist.probabilities()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
    }
}

#[test]
fn distribution_text_fills_gaps_and_checks_the_total() {
    let dist = DegreeDistribution::from_text("2 0.5\n5 0.5\n").unwrap();
    assert_eq!(dist.num_classes(), 4);
    assert_eq!(dist.prob(3), 0.0);
    assert!(DegreeDistribution::from_text("2 0.5\n5 0.4\n").is_err());
    assert!(DegreeDistribution::from_text("2 abc\n").is_err());
    assert!(DegreeDistribution::from_text("").is_err());
}

#[test]
fn generators_match_their_definitions() {
    let pl = power_law_distribution(2.0, 6, 105).unwrap();
    let norm: f64 = (6..=105).map(|k| (k as f64).powi(-2)).sum();
    for k in [6, 50, 105] {
        assert_abs_diff_eq!(pl.prob(k), (k as f64).powi(-2) / norm, epsilon = 1e-15);
    }
    assert_abs_diff_eq!(pl.probabilities().iter().sum::<f64>(), 1.0, epsilon = 1e-12);

    let er = poisson_distribution(17.5, 1, 45).unwrap();
    let ratio = er.prob(18) / er.prob(17);
    assert_abs_diff_eq!(ratio, 17.5 / 18.0, epsilon = 1e-12);

    assert!(power_law_distribution(2.0, 0, 10).is_err());
    assert!(power_law_distribution(2.0, 10, 5).is_err());
    assert!(poisson_distribution(-1.0, 1, 10).is_err());
}

#[test]
fn excess_weights_sum_to_one() {
    for dist in [
        power_law_distribution(2.0, 6, 105).unwrap(),
        poisson_distribution(17.5, 1, 45).unwrap(),
        DegreeDistribution::new(1, vec![0.5, 0.5]).unwrap(),
    ] {
        let excess = excess_distribution(&dist);
        assert_abs_diff_eq!(excess.probabilities().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let total: f64 = dist.degrees().map(|k| excess.class_weight(k)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        let k = dist.k_max();
        assert_abs_diff_eq!(
            excess.class_weight(k),
            k as f64 * dist.prob(k) / dist.mean_degree(),
            epsilon = 1e-15
        );
    }
}
