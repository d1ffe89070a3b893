use c3gan_tensor::{Array, Graph};

fn main() {
    for &(cin, cout) in &[(16usize, 32usize), (64, 64)] {
        let x = Array::<f32>::from_fn(&[16, cin, 64, 64], |i| ((i % 97) as f32) * 0.01);
        let w = Array::<f32>::from_fn(&[cout, cin, 3, 3], |i| ((i % 13) as f32) * 0.01);
        let t = std::time::Instant::now();
        let iters = 5;
        for _ in 0..iters {
            let g = Graph::new();
            let xv = g.leaf(x.clone());
            let wv = g.leaf(w.clone());
            let l = xv.conv2d(wv, None, 1, 1).square().mean_all();
            let _ = g.backward(l);
        }
        println!("conv {cin}->{cout} @64x64 b16 fwd+bwd: {:?}", t.elapsed() / iters);
    }
}
