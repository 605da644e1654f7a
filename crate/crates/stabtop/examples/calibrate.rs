// Calibration probe for the double-clamped beam optimization experiment.
use stabtop::model::{build_grid_mesh, DesignField, Dof, LoadSpec, SupportSpec, SymmetrySpec};
use stabtop::optimizer::{run_optimization, OptimizationConfig};

fn beam(nx: usize, ny: usize, h: f64, e: f64, nu: f64, p: f64) -> stabtop::model::Model {
    let mut supports = Vec::new();
    for iy in 0..=ny {
        supports.extend(SupportSpec::pin(iy));
        supports.extend(SupportSpec::pin(nx * (ny + 1) + iy));
    }
    let top_mid = (nx / 2) * (ny + 1) + ny;
    let loads = vec![LoadSpec { node: top_mid, comp: Dof::Y, magnitude: -p }];
    let mut m = build_grid_mesh(nx, ny, h, &supports, &loads).unwrap();
    m.youngs = e;
    m.poisson = nu;
    m
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let load: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40.0);
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(150);
    let lambda_hat: Option<f64> = args.get(3).and_then(|s| s.parse().ok());
    let v_f: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let (nx, ny) = (60, 20);
    let m = beam(nx, ny, 0.05, 3.0e6, 0.4, load);
    let design = DesignField::uniform(&m, v_f, SymmetrySpec::HalfX, 0.12).unwrap();
    let cfg = OptimizationConfig {
        lambda_hat,
        v_f,
        m_clusters: 6,
        max_outer: iters,
        continuation: true,
        gamma_target: 1.0,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let (field, trace) = run_optimization(&m, &design, &cfg).unwrap();
    println!("elapsed: {:?} for {} iterations", t0.elapsed(), trace.iterations.len());
    if let Some(r) = trace.iterations.last() {
        println!("final f0 = {:.6e}, f1 = {:+.4e}", r.f0, r.f1);
        println!("eigs = {:?}", r.eigenvalues.iter().map(|v| format!("{v:.5e}")).collect::<Vec<_>>());
        println!("mults = {:?} inner_any = {}", r.multiplicities, trace.inner_ever_active());
    }
    if let Some(a) = &trace.aborted { println!("ABORTED: {a}"); }
    let _ = field;
}
