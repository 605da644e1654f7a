use stabtop::fem::{assemble, solve_equilibrium, SolverOptions};
use stabtop::linalg::{lowest_eigenpairs, EigenOptions};
use stabtop::model::{build_grid_mesh, DesignField, Dof, LoadSpec, SupportSpec, SymmetrySpec};
use stabtop::optimizer::{run_optimization, OptimizationConfig};
use stabtop::stability::*;

fn main() {
    let (nx, ny) = (60, 20);
    let mut supports = Vec::new();
    for iy in 0..=ny {
        supports.extend(SupportSpec::pin(iy));
        supports.extend(SupportSpec::pin(nx * (ny + 1) + iy));
    }
    let top_mid = (nx / 2) * (ny + 1) + ny;
    let loads = vec![LoadSpec { node: top_mid, comp: Dof::Y, magnitude: -1500.0 }];
    let mut m = build_grid_mesh(nx, ny, 0.05, &supports, &loads).unwrap();
    m.youngs = 3.0e6;
    m.poisson = 0.4;
    let design = DesignField::uniform(&m, 0.10, SymmetrySpec::HalfX, 0.12).unwrap();
    let cfg = OptimizationConfig {
        lambda_hat: None, v_f: 0.10, m_clusters: 6, max_outer: 2,
        continuation: true, gamma_target: 1.0, ..Default::default()
    };
    let (field, _) = run_optimization(&m, &design, &cfg).unwrap();
    // now reproduce iteration 3 analysis
    let rho = field.densities();
    let mut solver = SolverOptions::default();
    let (p, pl, pmv) = stabtop::optimizer::continuation_schedule(3);
    solver.p = Some(p); solver.p_l = Some(pl);
    let pm = PseudoMassParams::default().with_p_m(pmv).unwrap();
    let state = solve_equilibrium(&m, &rho, 1.0, &solver).unwrap();
    let st = solver.interp_state(&m).with_cutoff(state.cutoff);
    println!("cutoff used: {}", state.cutoff);
    let asm = assemble(&m, &state.u, &rho, 0.0, st).unwrap();
    let s_full = assemble_pseudo_mass(&m, &rho, &pm);
    let free = free_indices(&m);
    let k_ff = extract_free(&asm.stiffness, &free);
    let s_ff: Vec<f64> = free.iter().map(|&d| s_full[d]).collect();
    let smin = s_ff.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = s_ff.iter().cloned().fold(0.0_f64, f64::max);
    println!("n = {}, S range [{smin:.3e}, {smax:.3e}]", k_ff.n());
    let inv_sqrt: Vec<f64> = s_ff.iter().map(|&s| 1.0 / s.sqrt()).collect();
    let mut a = k_ff.clone();
    a.scale_sym(&inv_sqrt);
    // dump the scaled matrix for offline solver experiments
    use std::io::Write;
    let n = a.n();
    let bw = a.bandwidth();
    let mut f = std::io::BufWriter::new(std::fs::File::create("/tmp/iter3_matrix.bin").unwrap());
    f.write_all(&(n as u64).to_le_bytes()).unwrap();
    f.write_all(&(bw as u64).to_le_bytes()).unwrap();
    for j in 0..n {
        for i in j..=(j + bw).min(n - 1) {
            f.write_all(&a.get(i, j).to_le_bytes()).unwrap();
        }
    }
    drop(f);
    println!("matrix dumped");
    let _ = lowest_eigenpairs;
    let _ = EigenOptions::default();
}
