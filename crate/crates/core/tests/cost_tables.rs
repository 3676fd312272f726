use mvfnet::cost::{cost_network, cost_protocol, Convention, CostReport};
use mvfnet::net::NetworkSpec;

fn cost(backbone: &str, frames: usize, stages: &[&str], alpha: f64) -> CostReport {
    let res = if backbone == "tiny" { 32 } else { 224 };
    cost_network(&NetworkSpec::new(backbone, frames, stages, alpha, 400).with_resolution(res), Convention::Table).unwrap()
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target
}

#[test]
fn resnet50_baselines() {
    assert!(within(cost("r50", 8, &[], 0.0).total_gflops, 32.88, 0.005));
    assert!(within(cost("r50", 4, &[], 0.0).total_gflops, 16.44, 0.005));
}

#[test]
fn resnet101_frame_scaling() {
    let g: Vec<CostReport> = [4, 8, 16].iter().map(|&t| cost("r101", t, &["res4", "res5"], 0.125)).collect();
    for (r, target) in g.iter().zip([31.36, 62.72, 125.45]) {
        assert!(within(r.total_gflops, target, 0.005), "{} frames: {}", r.frames, r.total_gflops);
    }
    assert_eq!(g[1].total_ops, 2 * g[0].total_ops);
    assert_eq!(g[2].total_ops, 2 * g[1].total_ops);
    assert_eq!(g[0].total_params, g[2].total_params);
}

#[test]
fn mobilenet_and_parameter_count() {
    assert!(within(cost("mobilenet_v2", 4, &[], 0.0).total_gflops, 1.25, 0.03));
    let mvfnet = cost("r50", 8, &["res4", "res5"], 0.125);
    assert!(within(mvfnet.total_mparams, 24.3, 0.005), "{}", mvfnet.total_mparams);
}

#[test]
fn block_counts_per_stage_set() {
    let sets: [&[&str]; 4] = [&["res5"], &["res4", "res5"], &["res3", "res4", "res5"], &["res2", "res3", "res4", "res5"]];
    let counts: Vec<usize> = sets.iter().map(|s| cost("r50", 8, s, 0.5).mvf_blocks).collect();
    assert_eq!(counts, [3, 9, 13, 16]);
}

#[test]
fn protocol_display() {
    let p = cost_protocol(&cost("r50", 8, &["res2", "res3", "res4", "res5"], 0.125), 3, 10).unwrap();
    assert_eq!(p.display, "32.9G × 30");
    assert!(cost_protocol(&cost("r50", 8, &[], 0.0), 0, 10).is_err());
}

#[test]
fn per_layer_rows_sum_to_totals() {
    for bb in ["r50", "r101", "mobilenet_v2", "tiny"] {
        let r = cost(bb, 8, &[], 0.0);
        assert_eq!(r.per_layer.iter().map(|l| l.macs).sum::<u64>(), r.total_macs);
        assert_eq!(r.per_layer.iter().map(|l| l.params).sum::<u64>(), r.total_params);
        assert_eq!(r.per_layer.iter().map(|l| l.ops(Convention::Table)).sum::<u64>(), r.total_ops);
    }
}

#[test]
fn no_stages_equals_plain_backbone() {
    let plain = cost("r50", 8, &[], 0.0);
    // Alpha without stages, and stages with alpha 0, both insert nothing.
    for r in [cost("r50", 8, &[], 0.5), cost("r50", 8, &["res4"], 0.0)] {
        assert_eq!(r.per_layer, plain.per_layer);
        assert_eq!((r.total_ops, r.total_params), (plain.total_ops, plain.total_params));
    }
}

#[test]
fn mvf_overhead_is_three_channelwise_convs() {
    let plain = cost("r50", 8, &[], 0.0);
    let mvf = cost("r50", 8, &["res4", "res5"], 0.125);
    let rows: Vec<_> = mvf.per_layer.iter().filter(|l| l.kind == "mvf").collect();
    assert_eq!(rows.len(), 9);
    assert_eq!(mvf.total_params - plain.total_params, rows.iter().map(|l| l.params).sum::<u64>());
    assert_eq!(mvf.total_macs - plain.total_macs, rows.iter().map(|l| l.macs).sum::<u64>());
}
