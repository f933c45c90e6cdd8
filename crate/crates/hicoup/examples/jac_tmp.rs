use hicoup::dense::{svd, spectral_norm_of, DenseMatrix};

fn main() {
    let text = std::fs::read_to_string("/tmp/failing_core.txt").unwrap();
    let mut it = text.lines();
    let dims: Vec<usize> = it.next().unwrap().split(' ').map(|s| s.parse().unwrap()).collect();
    let (r, c) = (dims[0], dims[1]);
    let vals: Vec<f64> = it.map(|l| l.parse().unwrap()).collect();
    let a = DenseMatrix::from_col_major(r, c, vals);
    println!("core {r}x{c}, max_abs {:.3e}, frobenius {:.3e}", a.max_abs(), a.frobenius());
    // column norm profile
    let mut norms: Vec<f64> = (0..c).map(|j| {
        let col = a.column(j);
        col.iter().map(|x| x*x).sum::<f64>().sqrt()
    }).collect();
    norms.sort_by(|x, y| y.partial_cmp(x).unwrap());
    println!("col norms: max {:.3e} median {:.3e} min {:.3e}", norms[0], norms[c/2], norms[c-1]);
    println!("power |A|_2 = {:.6e}", spectral_norm_of(&a, 5000, 1e-12).value);
    match svd(&a) {
        Ok((_, s, _)) => println!("svd ok: s0 {:.3e} smin {:.3e}", s[0], s.last().unwrap()),
        Err(e) => println!("svd fails: {e}"),
    }
}
