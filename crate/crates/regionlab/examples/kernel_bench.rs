// quick kernel timing harness
use regionlab::tensor::{ops, Tensor};
use regionlab::rng::Rng;
use std::time::Instant;

fn rt(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.range_f64(-1.0, 1.0)).collect()).unwrap()
}

fn main() {
    let mut rng = Rng::seeded(1);
    // backbone-ish: conv 16->16 at 24x24
    let x = rt(&[16, 24, 24], &mut rng);
    let w = rt(&[16, 16, 3, 3], &mut rng);
    let t = Instant::now();
    let n: u32 = 200;
    for _ in 0..n { let _ = ops::conv2d_forward(&x, &w, None, 1, 1).unwrap(); }
    let flops = 24.0*24.0*16.0*16.0*9.0 * n as f64;
    println!("conv fwd 16x24x24: {:?}/call, {:.2} GFLOP/s", t.elapsed()/n, flops/t.elapsed().as_secs_f64()/1e9);

    let y = ops::conv2d_forward(&x, &w, None, 1, 1).unwrap();
    let t = Instant::now();
    for _ in 0..n { let _ = ops::conv2d_backward_input(&w, &y, x.shape(), 1, 1); }
    println!("conv bwd-input: {:?}/call, {:.2} GFLOP/s", t.elapsed()/n, flops/t.elapsed().as_secs_f64()/1e9);
    let t = Instant::now();
    for _ in 0..n { let _ = ops::conv2d_backward_weight(&x, &y, w.shape(), 1, 1); }
    println!("conv bwd-weight: {:?}/call, {:.2} GFLOP/s", t.elapsed()/n, flops/t.elapsed().as_secs_f64()/1e9);

    // mask-head-ish: conv 32->32 at 7x7
    let x2 = rt(&[32, 7, 7], &mut rng);
    let w2 = rt(&[32, 32, 3, 3], &mut rng);
    let t = Instant::now();
    for _ in 0..n*5 { let _ = ops::conv2d_forward(&x2, &w2, None, 1, 1).unwrap(); }
    let flops2 = 7.0*7.0*32.0*32.0*9.0 * (n*5) as f64;
    println!("conv fwd 32x7x7: {:?}/call, {:.2} GFLOP/s", t.elapsed() / (5 * n), flops2/t.elapsed().as_secs_f64()/1e9);

    // box-head linear 1x1568 . 1568x128
    let xl = rt(&[1, 1568], &mut rng);
    let wl = rt(&[1568, 128], &mut rng);
    let bl = rt(&[128], &mut rng);
    let t = Instant::now();
    for _ in 0..n*5 { let _ = ops::linear_forward(&xl, &wl, &bl).unwrap(); }
    let flopsl = 1568.0*128.0 * (n*5) as f64;
    println!("linear fwd 1568x128: {:?}/call, {:.2} GFLOP/s", t.elapsed() / (5 * n), flopsl/t.elapsed().as_secs_f64()/1e9);

    let yl = ops::linear_forward(&xl, &wl, &bl).unwrap();
    let t = Instant::now();
    for _ in 0..n*5 { let _ = ops::linear_backward(&xl, &wl, &yl); }
    println!("linear bwd: {:?}/call, {:.2} GFLOP/s", t.elapsed() / (5 * n), 3.0*flopsl/t.elapsed().as_secs_f64()/1e9);
}
