mod common;

use common::*;
use rand::Rng;
use sacti_core::autodiff::{Graph, ParameterStore, Tensor};
use sacti_core::encoder::{attention_heatmap, Encoder, EncoderConfig};
use sacti_core::heads::{
    arc_scores, attachment_log_probs, full_pair_scores, label_scores, pair_scores, sacti_loss,
    sacti_pair_heatmap, tagging_loss, vote_decode, AttachmentNorm, VOTE_TIE_EPS,
};
use sacti_core::nn::Forward;

const TOL: f64 = 1e-10;

#[test]
fn pair_and_label_scores_match_loops() {
    let mut r = rng(7);
    for n in 1..=5 {
        for d in [1, 3, 6] {
            let z = random_mat(&mut r, n + 1, d);
            let u = random_mat(&mut r, d, d);
            let q = random_vec(&mut r, d);
            let g = Graph::new();
            let (zv, uv) = (g.constant(tensor(&z)), g.constant(tensor(&u)));
            let qv = g.constant(Tensor::vector(q.clone()));
            let s = pair_scores(&g, zv, uv, qv).unwrap();
            assert!(max_abs_diff(g.value(s).data(), &common::pair_scores(&z, &u, &q)) < TOL);
            let full = full_pair_scores(&g, zv, uv, qv).unwrap();
            let expect: Vec<f64> = common::full_pair_scores(&z, &u, &q).concat();
            assert!(max_abs_diff(g.value(full).data(), &expect) < TOL);

            let k = 3;
            let us: Vec<Mat> = (0..k).map(|_| random_mat(&mut r, d, d)).collect();
            let lq = random_mat(&mut r, k, 2 * d);
            let lb = random_vec(&mut r, k);
            let stack = Tensor::new(vec![k, d, d], us.iter().flat_map(|m| m.concat()).collect()).unwrap();
            let rv = label_scores(
                &g,
                zv,
                g.constant(stack),
                g.constant(tensor(&lq)),
                g.constant(Tensor::vector(lb.clone())),
            )
            .unwrap();
            let expect = common::label_scores(&z, &us, &lq, &lb);
            assert_eq!(g.shape(rv), vec![n, k]);
            assert!(max_abs_diff(g.value(rv).data(), &expect.concat()) < TOL);
        }
    }
}

#[test]
fn attachment_and_loss_match_loops() {
    let mut r = rng(8);
    for n in 1..=5 {
        let d = 4;
        let z = random_mat(&mut r, n + 1, d);
        let u = random_mat(&mut r, d, d);
        let q = random_vec(&mut r, d);
        let labels = random_mat(&mut r, n, 4);
        let g = Graph::new();
        let (zv, uv) = (g.constant(tensor(&z)), g.constant(tensor(&u)));
        let qv = g.constant(Tensor::vector(q.clone()));

        let binary = attachment_log_probs(&g, zv, uv, qv, AttachmentNorm::Binary).unwrap();
        let expect_binary = binary_attach(&common::pair_scores(&z, &u, &q));
        assert!(max_abs_diff(g.value(binary).data(), &expect_binary) < TOL);

        let full = attachment_log_probs(&g, zv, uv, qv, AttachmentNorm::FullRow).unwrap();
        let expect_full = full_row_attach(&common::full_pair_scores(&z, &u, &q));
        assert!(max_abs_diff(g.value(full).data(), &expect_full) < TOL);

        for gold in 0..4 {
            let loss = sacti_loss(&g, binary, g.constant(tensor(&labels)), gold).unwrap();
            let expect = common::sacti_loss(&expect_binary, &labels, gold);
            assert!((g.value(loss).item() - expect).abs() < TOL);
        }
    }
}

#[test]
fn vote_matches_brute_force_on_random_rows() {
    let mut r = rng(9);
    for _ in 0..500 {
        let n = 1 + (r.random_range(0..6usize));
        let k = 2 + (r.random_range(0..3usize));
        let rows: Mat = (0..n)
            .map(|_| (0..k).map(|_| (r.random_range(-2..=2) as f64) * 0.5).collect())
            .collect();
        let got = vote_decode(&tensor(&rows));
        let (label, share) = vote(&rows, VOTE_TIE_EPS);
        assert_eq!(got.label, label, "{rows:?}");
        assert!(max_abs_diff(&got.confidence, &share) < TOL);
    }
}

#[test]
fn tagging_loss_matches_masked_mean() {
    let mut r = rng(10);
    for n in 1..=6 {
        let logits = random_mat(&mut r, n, 5);
        let targets: Vec<Option<usize>> = (0..n)
            .map(|_| r.random_bool(0.6).then(|| r.random_range(0..5)))
            .collect();
        let g = Graph::new();
        let got = tagging_loss(&g, g.constant(tensor(&logits)), &targets).unwrap();
        match (got, masked_ce(&logits, &targets)) {
            (Some(v), Some(e)) => assert!((g.value(v).item() - e).abs() < TOL),
            (None, None) => {}
            other => panic!("presence mismatch: {:?}", other.1),
        }
    }
}

#[test]
fn arc_scores_match_loops() {
    let mut r = rng(11);
    for n in 1..=5 {
        let d = 3;
        let dep = random_mat(&mut r, n + 1, d);
        let head = random_mat(&mut r, n + 1, d);
        let root = random_vec(&mut r, d);
        let w = random_mat(&mut r, d, d);
        let b = random_vec(&mut r, d);
        let compound = r.random_range(0..n);
        let g = Graph::new();
        let s = arc_scores(
            &g,
            g.constant(tensor(&dep)),
            g.constant(tensor(&head)),
            g.constant(Tensor::vector(root.clone())),
            g.constant(tensor(&w)),
            g.constant(Tensor::vector(b.clone())),
            compound,
        )
        .unwrap();
        let expect = common::arc_scores(&dep, &head, &root, &w, &b, compound).concat();
        let got = g.value(s);
        for (a, e) in got.data().iter().zip(&expect) {
            if e.is_infinite() {
                assert_eq!(a, e);
            } else {
                assert!((a - e).abs() < TOL);
            }
        }
    }
}

#[test]
fn pair_heatmap_rows_are_softmax() {
    let mut r = rng(12);
    let m = random_mat(&mut r, 4, 4);
    let h = sacti_pair_heatmap(&tensor(&m));
    for (i, row) in m.iter().enumerate() {
        assert!(max_abs_diff(h.row(i), &softmax(row)) < TOL);
    }
}

fn tiny_encoder(layers: usize, feature_layer: Option<usize>) -> (Encoder, ParameterStore) {
    let enc = Encoder::new(EncoderConfig {
        layers,
        model_dim: 8,
        heads: 2,
        ff_dim: 12,
        max_pieces: 32,
        feature_layer,
    })
    .unwrap();
    let mut store = ParameterStore::new(3);
    enc.init_params(&mut store, 20).unwrap();
    (enc, store)
}

#[test]
fn token_states_are_piece_means() {
    let mut r = rng(13);
    for layers in 1..=3 {
        for feature in [None, Some(1)] {
            let (enc, store) = tiny_encoder(layers, feature);
            let mut spans = Vec::new();
            let mut at = 0;
            for _ in 0..r.random_range(1..=6) {
                let len = r.random_range(1..=4);
                spans.push(at..at + len);
                at += len;
            }
            let pieces: Vec<u32> = (0..at).map(|_| r.random_range(0..20)).collect();
            let g = Graph::new();
            let fwd = Forward::eval(&g, &store);
            let out = enc.encode(&fwd, &pieces, &spans).unwrap();
            let piece_rows = g.value(out.piece_states).to_rows();
            let expect = span_average(&piece_rows, &spans).concat();
            assert!(max_abs_diff(g.value(out.token_states).data(), &expect) < 1e-12);
        }
    }
}

#[test]
fn attention_heatmap_aggregates_pieces() {
    let (enc, store) = tiny_encoder(2, None);
    let spans = vec![0..2, 2..3, 3..6];
    let pieces = [4, 5, 6, 7, 8, 9];
    let g = Graph::new();
    let fwd = Forward::eval(&g, &store);
    let out = enc.encode(&fwd, &pieces, &spans).unwrap();
    for layer in 0..2 {
        for head in 0..2 {
            let piece_map = out.attention_maps[layer][head].to_rows();
            let heat = attention_heatmap(&out.attention_maps, layer, head, &spans).unwrap();
            for (i, qs) in spans.iter().enumerate() {
                for (j, ks) in spans.iter().enumerate() {
                    let mut e = 0.0;
                    for qp in qs.clone() {
                        for kp in ks.clone() {
                            e += piece_map[qp][kp];
                        }
                    }
                    e /= qs.len() as f64;
                    assert!((heat.get2(i, j) - e).abs() < 1e-12);
                }
                let total: f64 = heat.row(i).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
    assert!(attention_heatmap(&out.attention_maps, 2, 0, &spans).is_err());
}
