use std::collections::HashSet;

use twophase_core::bench::{
    all_cells, exhaustive_best, load_table, monotone_table, parameter_free_fraction, skip_biased_table, summarize, tabular_search,
    write_table, AccuracyTable, Cell, Policy, CONV3, DATASETS, SPACE_SIZE,
};

#[test]
fn space_has_every_cell_once() {
    let strings: HashSet<String> = all_cells().map(|c| c.to_arch_string()).collect();
    assert_eq!(strings.len(), SPACE_SIZE);
    assert_eq!(SPACE_SIZE, 5usize.pow(6));
    for c in all_cells().step_by(97) {
        assert_eq!(Cell::parse(&c.to_arch_string()).unwrap(), c);
        assert_eq!(Cell::from_index(c.index()), c);
    }
    assert_eq!(
        Cell::uniform(CONV3).to_arch_string(),
        "|nor_conv_3x3~0|+|nor_conv_3x3~0|nor_conv_3x3~1|+|nor_conv_3x3~0|nor_conv_3x3~1|nor_conv_3x3~2|"
    );
}

#[test]
fn table_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.tsv");
    let t = monotone_table();
    write_table(&path, &t).unwrap();
    let back = load_table(&path).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.accuracy(Cell::uniform(CONV3), 0), 60.0);
    assert_eq!(back.accuracy(Cell::from_index(0), 2), 0.0);
}

#[test]
fn missing_entry_names_the_cell() {
    let text = monotone_table().to_tsv();
    let mut lines: Vec<&str> = text.lines().collect();
    let dropped = lines.remove(1234);
    let err = AccuracyTable::parse_tsv(&lines.join("\n")).unwrap_err().to_string();
    let cell = dropped.split('\t').next().unwrap();
    assert!(err.contains("1 of 15625") && err.contains(cell), "{err}");
}

#[test]
fn malformed_lines_report_their_number() {
    let text = monotone_table().to_tsv();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[41] = lines[41].replacen('\t', " ", 1);
    let err = AccuracyTable::parse_tsv(&lines.join("\n")).unwrap_err().to_string();
    assert!(err.contains("line 42"), "{err}");

    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[7] = lines[7].rsplit_once('\t').map(|(a, _)| format!("{a}\tabc")).unwrap();
    let err = AccuracyTable::parse_tsv(&lines.join("\n")).unwrap_err().to_string();
    assert!(err.contains("line 8"), "{err}");

    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[9] = lines[9].rsplit_once('\t').map(|(a, _)| format!("{a}\t101")).unwrap();
    assert!(AccuracyTable::parse_tsv(&lines.join("\n")).unwrap_err().to_string().contains("line 10"));

    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = lines[2].clone();
    assert!(AccuracyTable::parse_tsv(&lines.join("\n")).unwrap_err().to_string().contains("duplicate"));
}

#[test]
fn exhaustive_best_examples() {
    let t = monotone_table();
    for d in 0..3 {
        assert_eq!(exhaustive_best(&t, d), Cell::uniform(CONV3));
    }
    let flat = AccuracyTable::from_fn(|_| [50.0; 3]).unwrap();
    assert_eq!(exhaustive_best(&flat, 1), Cell::from_index(0));
    // brute-force oracle independent of the helper
    let skew = skip_biased_table(3);
    let (mut best, mut acc) = (0, f64::MIN);
    for i in 0..SPACE_SIZE {
        let a = skew.accuracy(Cell::from_index(i), 0);
        if a > acc {
            best = i;
            acc = a;
        }
    }
    assert_eq!(exhaustive_best(&skew, 0).index(), best);
}

#[test]
fn ftso_finds_the_monotone_optimum() {
    let t = monotone_table();
    for seed in 0..5 {
        let r = tabular_search(Policy::Ftso { gradient: false }, "cifar10", &t, 100, seed).unwrap();
        assert_eq!(r.regret, 0.0);
        assert_eq!(r.cell, Cell::uniform(CONV3).to_arch_string());
        assert_eq!(r.accuracy, [60.0; 3]);
    }
}

#[test]
fn policies_are_deterministic_per_seed() {
    let t = skip_biased_table(1);
    for p in ["ftso", "ftso-gradient", "darts1st", "darts2nd-proxy", "random"] {
        let policy: Policy = p.parse().unwrap();
        assert_eq!(policy.name(), p);
        let a = tabular_search(policy, "cifar100", &t, 50, 4).unwrap();
        let b = tabular_search(policy, "cifar100", &t, 50, 4).unwrap();
        assert_eq!(a, b);
    }
    assert!("darts".parse::<Policy>().is_err());
    assert!(tabular_search(Policy::Random, "svhn", &t, 5, 0).is_err());
}

#[test]
fn ftso_regret_at_most_random_mean() {
    for t in [monotone_table(), skip_biased_table(7)] {
        for d in DATASETS {
            let random: f64 = (0..20).map(|s| tabular_search(Policy::Random, d, &t, 20, s).unwrap().regret).sum::<f64>() / 20.0;
            let ftso = tabular_search(Policy::Ftso { gradient: false }, d, &t, 20, 0).unwrap().regret;
            assert!(ftso <= random, "{d}: {ftso} > {random}");
        }
    }
}

#[test]
fn summary_and_fractions() {
    let t = monotone_table();
    let rs: Vec<_> = (0..4).map(|s| tabular_search(Policy::Random, "cifar10", &t, 3, s).unwrap()).collect();
    let s = summarize(&rs);
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].2, 4);
    assert!((s[0].1 - rs.iter().map(|r| r.regret).sum::<f64>() / 4.0).abs() < 1e-12);
    assert_eq!(parameter_free_fraction(&Cell::uniform(CONV3).to_arch_string()).unwrap(), 0.0);
    assert_eq!(parameter_free_fraction(&Cell::from_index(0).to_arch_string()).unwrap(), 1.0);
}
