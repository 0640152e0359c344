use proxyattn_web::{flip, heatmaps, procrustes};

#[test]
fn heatmaps_are_square_and_stochastic() {
    let h = heatmaps(1, 1, 3, 0.0).unwrap();
    let t = h.frames;
    for m in [&h.self_attn, &h.agg, &h.fused] {
        assert_eq!(m.len(), t * t);
        for row in m.chunks_exact(t) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    assert_eq!(h.sigmoid_mu, 0.5);
    assert!(heatmaps(1, 2, 0, 0.0).is_err());
}

#[test]
fn saturated_negative_mu_reproduces_self_attention() {
    let h = heatmaps(2, 0, 0, -30.0).unwrap();
    let gap = h.self_attn.iter().zip(&h.fused).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-9, "{gap}");
}

#[test]
fn procrustes_undoes_a_noiseless_similarity() {
    let d = procrustes(3, 40.0, 1.3, 0.0).unwrap();
    assert!(d.mpjpe_mm > 10.0);
    assert!(d.p_mpjpe_mm < 1e-9);
    for (a, b) in d.aligned.iter().zip(&d.target) {
        assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1e-9));
    }
    let noisy = procrustes(3, 40.0, 1.3, 20.0).unwrap();
    assert!(noisy.p_mpjpe_mm > 1.0 && noisy.p_mpjpe_mm < noisy.mpjpe_mm);
}

#[test]
fn flip_mirrors_and_swaps_sides() {
    let d = flip(4, 5).unwrap();
    assert!(d.involution_exact);
    let idx = |n: &str| d.names.iter().position(|x| x == n).unwrap();
    let (l, r) = (idx("l_wrist"), idx("r_wrist"));
    assert_eq!(d.flipped[l][0], -d.original[r][0]);
    assert_eq!(d.flipped[l][1], d.original[r][1]);
    assert_eq!(d.flipped[0][0], -d.original[0][0]);
}
