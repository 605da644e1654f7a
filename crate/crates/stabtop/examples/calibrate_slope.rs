// Probe: O(eps^2) residual of the repeated-eigenvalue first-order expansion.
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use stabtop::fem::SolverOptions;
use stabtop::model::{build_grid_mesh, Dof, LoadSpec, SupportSpec};
use stabtop::sensitivity::first_order_multi_eig_check;
use stabtop::stability::PseudoMassParams;

fn main() {
    let n: usize = 16;
    let load: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000.0);
    let mid = n / 2;
    let node = |ix: usize, iy: usize| ix * (n + 1) + iy;
    let mut supports = Vec::new();
    supports.extend(SupportSpec::pin(node(mid, mid)));
    supports.push(SupportSpec { node: node(mid, n), comp: Dof::X, value: 0.0 });
    supports.push(SupportSpec { node: node(mid, 0), comp: Dof::X, value: 0.0 });
    supports.push(SupportSpec { node: node(0, mid), comp: Dof::Y, value: 0.0 });
    supports.push(SupportSpec { node: node(n, mid), comp: Dof::Y, value: 0.0 });
    let mut loads = Vec::new();
    for off in [mid - 1, mid, mid + 1] {
        let w = 1.0 / 3.0;
        loads.push(LoadSpec { node: node(off, n), comp: Dof::Y, magnitude: -w * load });
        loads.push(LoadSpec { node: node(off, 0), comp: Dof::Y, magnitude: w * load });
        loads.push(LoadSpec { node: node(0, off), comp: Dof::X, magnitude: w * load });
        loads.push(LoadSpec { node: node(n, off), comp: Dof::X, magnitude: -w * load });
    }
    let mut m = build_grid_mesh(n, n, 0.05, &supports, &loads).unwrap();
    m.youngs = 3.0e6;
    m.poisson = 0.4;
    let rho = vec![0.5; m.n_elems()];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let drho: Vec<f64> = (0..m.n_elems()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let pm = PseudoMassParams::default();
    let report = first_order_multi_eig_check(
        &m, &rho, 1.0, 0, &drho, &[1e-2, 1e-3, 1e-4],
        Some(&pm), &SolverOptions::default(), &Default::default(),
    ).unwrap();
    for (i, eps) in report.eps.iter().enumerate() {
        println!("eps {eps:.0e}: residual {:.6e} predicted {:?} measured {:?}",
            report.max_residual[i],
            report.predicted[i].iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>(),
            report.measured[i].iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>());
    }
    println!("fitted slope = {:.4}", report.fitted_slope);

    // symmetric direction: uniform drho moves the pair together
    let uni = vec![0.35; m.n_elems()];
    let rep2 = first_order_multi_eig_check(
        &m, &rho, 1.0, 0, &uni, &[1e-3],
        Some(&pm), &SolverOptions::default(), &Default::default(),
    ).unwrap();
    let d = &rep2.predicted[0];
    println!("uniform-direction predicted split = {:.3e}", (d[1] - d[0]).abs());
}
