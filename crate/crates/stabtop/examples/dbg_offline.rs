// Offline eigensolver experiments on a dumped scaled matrix.
use stabtop::linalg::{dense_sym_eigen, lowest_eigenpairs, BandedSym, EigenOptions};

fn load() -> BandedSym {
    let data = std::fs::read("/tmp/iter3_matrix.bin").unwrap();
    let n = u64::from_le_bytes(data[0..8].try_into().unwrap()) as usize;
    let bw = u64::from_le_bytes(data[8..16].try_into().unwrap()) as usize;
    let mut a = BandedSym::zeros(n, bw);
    let mut off = 16;
    for j in 0..n {
        for i in j..=(j + bw).min(n - 1) {
            let v = f64::from_le_bytes(data[off..off + 8].try_into().unwrap());
            off += 8;
            a.set(i, j, v);
        }
    }
    a
}

fn main() {
    let a = load();
    let n = a.n();
    println!("n = {n}, bw = {}", a.bandwidth());
    let f = a.factor_ldlt();
    println!("negatives at 0: {}", f.num_negative_pivots());
    let t0 = std::time::Instant::now();
    let (vals, _) = dense_sym_eigen(&a.to_dense());
    println!("dense solve: {:?}", t0.elapsed());
    println!("lowest 40 eigenvalues:");
    for (i, v) in vals.iter().take(40).enumerate() {
        let gap = if i > 0 { v - vals[i - 1] } else { 0.0 };
        println!("  l{i:2} = {v:.12e}   gap {gap:.3e}");
    }
    let t0 = std::time::Instant::now();
    match lowest_eigenpairs(&a, 8, &EigenOptions { max_restarts: 4, ..Default::default() }) {
        Ok(pairs) => {
            println!("lanczos ok in {:?}", t0.elapsed());
            for (i, (l, _)) in pairs.iter().enumerate() {
                println!("  L{i} = {l:.12e}  (dense {:.12e})", vals[i]);
            }
        }
        Err(e) => println!("lanczos ERROR in {:?}: {e}", t0.elapsed()),
    }
}
