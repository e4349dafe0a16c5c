//! Exhaustive cross-check of the tag metrics against a brute-force
//! confusion-matrix computation, over every (predicted, gold) sequence
//! pair up to length 6.

use spontts_core::corpus::BehaviorTag;
use spontts_core::tagger::{evaluate_tags, ClassMetrics, TagMetrics};

fn brute(pred: &[BehaviorTag], gold: &[BehaviorTag]) -> TagMetrics {
    let mut confusion = [[0usize; 4]; 4];
    for (p, g) in pred.iter().zip(gold) {
        confusion[g.index()][p.index()] += 1;
    }
    let per_class = std::array::from_fn(|c| {
        let tp = confusion[c][c];
        let pred_c: usize = (0..4).map(|g| confusion[g][c]).sum();
        let gold_c: usize = (0..4).map(|p| confusion[c][p]).sum();
        let precision = if pred_c > 0 {
            tp as f64 / pred_c as f64
        } else {
            0.0
        };
        let recall = if gold_c > 0 {
            tp as f64 / gold_c as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: gold_c,
        }
    });
    TagMetrics { per_class }
}

fn sequences(m: usize) -> Vec<Vec<BehaviorTag>> {
    (0..4usize.pow(m as u32))
        .map(|mut code| {
            (0..m)
                .map(|_| {
                    let t = BehaviorTag::from_index(code % 4).unwrap();
                    code /= 4;
                    t
                })
                .collect()
        })
        .collect()
}

#[test]
fn evaluate_tags_equals_bruteforce_for_all_pairs_up_to_len_6() {
    for m in 1..=6usize {
        let seqs = sequences(m);
        for p in &seqs {
            let pred = std::slice::from_ref(p);
            for g in &seqs {
                let ours = evaluate_tags(pred, std::slice::from_ref(g)).unwrap();
                let expect = brute(p, g);
                assert_eq!(ours, expect, "m={m} pred={p:?} gold={g:?}");
            }
        }
    }
}
