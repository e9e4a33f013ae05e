use l1ns::matrix::orthonormalize;
use l1ns::{solve_l1, DenseMatrix, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(m, r, reps) in &[(2000usize, 9usize, 20usize), (2000, 15, 20), (33, 9, 2000), (70, 15, 2000), (400, 4, 200)] {
        let e = (0..m * r).map(|_| rng.sample(StandardNormal)).collect();
        let b = orthonormalize(&DenseMatrix::from_row_major(m, r, e).unwrap()).unwrap();
        let t = Instant::now();
        let mut iters = 0;
        for _ in 0..reps {
            let q: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let s = solve_l1(&q, &b, &SolverOptions::default()).unwrap();
            iters += s.iterations;
        }
        println!("m={m} r={r}: {:.3} ms/solve, {:.1} iters", t.elapsed().as_secs_f64() * 1e3 / reps as f64, iters as f64 / reps as f64);
    }
}
