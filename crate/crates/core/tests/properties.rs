use std::collections::BTreeMap;

use ctxrank::contextualizer::LayeredEmbeddings;
use ctxrank::data_io::{format_run, load_qrels, load_run, rank_scored, write_qrels, Qrels, Run};
use ctxrank::evaluation::{paired_t_test, MetricSpec};
use ctxrank::simtensor::{build_tensor, cosine};
use ctxrank::text::plan_splits;
use proptest::prelude::*;

fn embeddings() -> impl Strategy<Value = LayeredEmbeddings> {
    (1usize..4, 1usize..6, 0usize..5, 0usize..7, -30i32..30).prop_flat_map(|(l, dim, q, d, exp)| {
        let n = l * dim * (q + d);
        prop::collection::vec(-1.0f64..1.0, n).prop_map(move |vals| {
            let mut e = LayeredEmbeddings::zeros(l, dim, q, d, None);
            let scale = 2f64.powi(exp);
            let (qv, dv) = vals.split_at(l * dim * q);
            e.query_vecs.iter_mut().zip(qv).for_each(|(o, v)| *o = v * scale);
            e.doc_vecs.iter_mut().zip(dv).for_each(|(o, v)| *o = v * scale);
            e
        })
    })
}

proptest! {
    #[test]
    fn tensor_cells_are_bounded(e in embeddings()) {
        let s = build_tensor(&e);
        prop_assert_eq!(s.shape(), (e.layers, e.query_len, e.doc_len));
        for v in &s.values {
            prop_assert!(v.is_finite() && (-1.0 - 1e-6..=1.0 + 1e-6).contains(v), "{}", v);
        }
    }

    #[test]
    fn cosine_is_symmetric_and_scale_free(u in prop::collection::vec(-1.0f64..1.0, 4), v in prop::collection::vec(-1.0f64..1.0, 4), k in 0.01f64..100.0) {
        let a = cosine(&u, &v).unwrap();
        prop_assert!((a - cosine(&v, &u).unwrap()).abs() < 1e-12);
        let scaled: Vec<f64> = u.iter().map(|x| x * k).collect();
        prop_assert!((a - cosine(&scaled, &v).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn splits_partition_evenly(doc in 0usize..3000, query in 1usize..200, limit in 210usize..600) {
        let plan = plan_splits(doc, query, limit, 3).unwrap();
        let mut next = 0;
        for &(s, e) in &plan.segments {
            prop_assert_eq!(s, next);
            prop_assert!(e - s + query + 3 <= limit);
            next = e;
        }
        prop_assert_eq!(next, doc);
        let lens: Vec<usize> = plan.lengths().collect();
        prop_assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
    }

    #[test]
    fn run_text_is_stable(scores in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let mut run = Run::new();
        let scored = scores.iter().enumerate().map(|(i, s)| (format!("d{i}"), *s)).collect();
        run.insert("q".into(), rank_scored("q", scored, "t"));
        let text = format_run(&run, "t");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r");
        std::fs::write(&path, &text).unwrap();
        let back = load_run(&path).unwrap();
        prop_assert_eq!(format_run(&back, "t"), text);
        // ranks are 1..n in score order
        let ranks: Vec<usize> = back["q"].iter().map(|e| e.rank).collect();
        prop_assert_eq!(ranks, (1..=scores.len()).collect::<Vec<_>>());
    }

    #[test]
    fn qrels_round_trip(grades in prop::collection::vec(-2i32..5, 1..30)) {
        let judged: BTreeMap<String, i32> = grades.iter().enumerate().map(|(i, g)| (format!("d{i}"), *g)).collect();
        let qrels: Qrels = [("q7".to_string(), judged)].into_iter().collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q");
        write_qrels(&qrels, &path).unwrap();
        prop_assert_eq!(load_qrels(&path).unwrap(), qrels);
    }

    #[test]
    fn t_test_p_value_in_unit_interval(a in prop::collection::vec(0.0f64..1.0, 2..20), shift in -0.5f64..0.5) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift * (i % 3) as f64).collect();
        let p = paired_t_test(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p, paired_t_test(&b, &a).unwrap());
    }

    #[test]
    fn metric_specs_round_trip(depth in 1usize..1000, which in 0usize..3) {
        let name = ["P", "nDCG", "ERR"][which];
        let spec: MetricSpec = format!("{name}@{depth}").parse().unwrap();
        prop_assert_eq!(spec.label(), format!("{name}_{depth}"));
    }
}
