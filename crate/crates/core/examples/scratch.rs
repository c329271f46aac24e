use elastamr_core::mesh::{transfer, NodeField};
use elastamr_core::mg::SolverConfig;
use elastamr_core::op;
use elastamr_core::problems::{setup_eshelby, EshelbyParams, GridSpec};

fn main() {
    let params = EshelbyParams {
        radii: [1.0, 0.75, 0.5],
        diffuse_width: 0.1,
        ..EshelbyParams::default()
    };
    let grid = GridSpec::new(2, 64, 2);
    for cycles in [1usize, 2, 3, 4] {
        let problem = setup_eshelby(&params, &grid).unwrap();
        let hier = &problem.hierarchy;
        let cfg = SolverConfig { max_cycles: cycles, ..SolverConfig::default() };
        let mut solver = problem.solver(cfg).unwrap();
        let report = match solver.solve() {
            Ok(r) => r,
            Err(e) => {
                println!("cycles {cycles}: {e}");
                continue;
            }
        };
        println!("cycles {cycles}: history {:?}", report.residual_history);

        // Composite residual field: rhs - A u on uncovered nodes.
        let nl = hier.levels.len();
        let mut us: Vec<NodeField> = (0..nl).map(|m| solver.u(m).clone()).collect();
        for m in 0..nl {
            let (done, rest) = us.split_at_mut(m);
            let parent = if m == 0 { None } else { Some((&done[m - 1], &hier.levels[m - 1])) };
            transfer::fill_ghost(&mut rest[0], &hier.levels[m], parent).unwrap();
        }
        for m in 0..nl {
            let ctx = &problem.contexts[m];
            let rhs = op::homogeneous_rhs(ctx).unwrap();
            let au = op::apply_linear(ctx, &us[m]).unwrap();
            let mut worst = 0.0f64;
            let mut at = [0i64; 3];
            let covered = if m + 1 < nl {
                Some(hier.levels[m + 1].region.coarsen())
            } else {
                None
            };
            for (pi, ps) in au.patches().iter().enumerate() {
                let rs = &rhs.patches()[pi];
                let vb = ps.valid;
                for p in vb.iter() {
                    if let Some(cov) = &covered {
                        if cov.contains(p) {
                            continue;
                        }
                    }
                    for c in 0..au.ncomp {
                        let r = (rs.get(p, c) - ps.get(p, c)).abs();
                        if r > worst {
                            worst = r;
                            at = p;
                        }
                    }
                }
            }
            let lev = &hier.levels[m];
            let near_rim = {
                let mut near = false;
                for dx in -2i64..=2 {
                    for dy in -2i64..=2 {
                        let q = [at[0] + dx, at[1] + dy, 0];
                        if q[0] >= lev.domain.lo[0]
                            && q[0] <= lev.domain.hi[0]
                            && q[1] >= lev.domain.lo[1]
                            && q[1] <= lev.domain.hi[1]
                            && !lev.region.contains(q)
                        {
                            near = true;
                        }
                    }
                }
                near
            };
            println!(
                "  level {m}: worst residual {worst:.3e} at {:?} (near C/F rim: {near_rim})",
                [at[0], at[1]]
            );
        }
    }
}
