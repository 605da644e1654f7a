// Probe: symmetric compressive block with an exactly repeated eigenvalue.
use stabtop::fem::{solve_equilibrium, SolverOptions};
use stabtop::model::{build_grid_mesh, Dof, LoadSpec, SupportSpec};
use stabtop::stability::{analyze_stability, PseudoMassParams};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let load: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50.0);
    let rho_u: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    // grid nodes 0..=n; center node (n/2, n/2); middle three nodes of each side
    let mid = n / 2;
    let node = |ix: usize, iy: usize| ix * (n + 1) + iy;
    let mut supports = Vec::new();
    supports.extend(SupportSpec::pin(node(mid, mid)));
    // tangential rollers at the four side midpoints (C4v-invariant set)
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
    let rho = vec![rho_u; m.n_elems()];
    let solver = SolverOptions::default();
    let st = solver.interp_state(&m);
    match solve_equilibrium(&m, &rho, 1.0, &solver) {
        Ok(state) => {
            let pm = PseudoMassParams::default();
            match analyze_stability(&m, &state.u, &rho, st, Some(&pm), 6, 1e-8, &Default::default()) {
                Ok(eig) => {
                    println!("values:");
                    for (i, v) in eig.values.iter().enumerate() {
                        println!("  l{i} = {v:.12e}");
                    }
                    println!("multiplicities: {:?}", eig.multiplicities());
                    let umax = state.u.amax();
                    println!("max |u| = {umax:.4e}");
                }
                Err(e) => println!("eigen error: {e}"),
            }
        }
        Err(e) => println!("solve error: {e}"),
    }
}
