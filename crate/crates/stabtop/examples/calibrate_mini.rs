use stabtop::model::{build_grid_mesh, DesignField, Dof, LoadSpec, SupportSpec, SymmetrySpec};
use stabtop::optimizer::{run_optimization, OptimizationConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let load: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(150.0);
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(25);
    let lh: Option<f64> = args.get(3).and_then(|s| s.parse().ok());
    let (nx, ny) = (24, 8);
    let mut supports = Vec::new();
    for iy in 0..=ny {
        supports.extend(SupportSpec::pin(iy));
        supports.extend(SupportSpec::pin(nx * (ny + 1) + iy));
    }
    let top_mid = (nx / 2) * (ny + 1) + ny;
    let loads = vec![LoadSpec { node: top_mid, comp: Dof::Y, magnitude: -load }];
    let mut m = build_grid_mesh(nx, ny, 0.05, &supports, &loads).unwrap();
    m.youngs = 3.0e6;
    m.poisson = 0.4;
    let design = DesignField::uniform(&m, 0.3, SymmetrySpec::HalfX, 0.11).unwrap();
    let cfg = OptimizationConfig {
        lambda_hat: lh,
        v_f: 0.3,
        m_clusters: 4,
        max_outer: iters,
        continuation: true,
        gamma_target: 1.0,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let (_, trace) = run_optimization(&m, &design, &cfg).unwrap();
    println!("elapsed {:?} / {} iters", t0.elapsed(), trace.iterations.len());
    if let Some(r) = trace.iterations.last() {
        println!("f0 = {:.5e}  f1 = {:+.3e}  eigs = {:?}", r.f0, r.f1,
            r.eigenvalues.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>());
    }
    if let Some(a) = &trace.aborted { println!("ABORTED: {a}"); }
}
