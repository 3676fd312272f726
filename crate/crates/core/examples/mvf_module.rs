//! Run one MVF module on a random clip and print what each view contributes.

use mvfnet::mvf::{init_gaussian, mvf_forward, MvfConfig};
use mvfnet::{Shape, VideoTensor};
use rand::{Rng, SeedableRng};

fn main() -> mvfnet::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let x = VideoTensor::from_fn(Shape::new(1, 16, 8, 14, 14), |_, _, _, _, _| rng.random_range(-1.0..1.0));
    let cfg = MvfConfig::with_alpha(0.5);
    let w = init_gaussian::<f64>(&cfg, 16, 0.3, 1)?;
    let trace = mvf_forward(&x, &cfg, &w)?;
    let energy = |t: &VideoTensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("{} multi-view channels of {}", trace.x1.shape().c, x.shape().c);
    println!("view norms: T {:.3}  H {:.3}  W {:.3}", energy(&trace.o_t), energy(&trace.o_h), energy(&trace.o_w));
    println!("output {} (pass-through channels first, then the fused ones)", trace.y.shape());
    Ok(())
}
