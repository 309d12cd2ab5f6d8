//! Closed-form positions and spending rates against direct numerical minimisation.

use mfe_core::lattice::LatticeSpec;
use mfe_core::market::AgentType;
use mfe_core::solver::kernels::{
    consumption_policy, eta_step, log_value_update, optimal_position, recursive_value,
};
use mfe_core::solver::oracle::{brute_force_node_oracle, NodeProblem, SpendingProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    lattice: LatticeSpec,
    node: NodeProblem,
    p: f64,
    agent: AgentType,
    eta_n: f64,
    wealth: f64,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let dt: f64 = rng.gen_range(0.1..1.0);
    let r = rng.gen_range(0.0..0.05);
    let beta = f64::exp(r * dt);
    let u = rng.gen_range(0.1..0.5);
    let d = -rng.gen_range(0.1..0.5);
    let lattice = LatticeSpec::new(1, dt, r, 1.0, beta + u, beta + d).unwrap();
    let p: f64 = rng.gen_range(0.2..0.8);
    let gamma = rng.gen_range(0.5..1.5);
    let eta_n = rng.gen_range(0.5..2.0);
    let agent = AgentType {
        gamma,
        zeta: rng.gen_range(0.5..2.0),
        psi: rng.gen_range(0.5..1.5),
        delta: rng.gen_range(0.9..1.0),
        xi: 0.0,
        weight: 1.0,
    };
    let node = NodeProblem {
        log_p: p.ln(),
        log_q: (1.0 - p).ln(),
        gamma,
        disc: eta_n,
        u: lattice.u,
        d: lattice.d,
        log_a_up: rng.gen_range(-2.0..2.0),
        log_a_down: rng.gen_range(-2.0..2.0),
    };
    Case {
        lattice,
        node,
        p,
        agent,
        eta_n,
        wealth: rng.gen_range(-5.0..5.0),
    }
}

#[test]
fn closed_forms_match_numerical_optimum_on_1000_random_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    let (mut worst_phi, mut worst_c, mut worst_v) = (0.0f64, 0.0f64, 0.0f64);
    let mut checked = 0;
    while checked < 1000 {
        let c = random_case(&mut rng);
        let sp = SpendingProblem {
            wealth: c.wealth,
            agent: c.agent,
            eta_n: c.eta_n,
            beta: c.lattice.beta,
            dt: c.lattice.dt,
        };
        let Ok(o) = brute_force_node_oracle(&c.node, Some(&sp)) else {
            continue;
        };
        let n = &c.node;
        let phi = optimal_position(c.p, n.log_a_up - n.log_a_down, n.gamma, n.disc, &c.lattice);
        let log_vt = log_value_update(
            n.log_p,
            n.log_q,
            n.gamma * n.disc,
            phi,
            &c.lattice,
            n.log_a_up,
            n.log_a_down,
        );
        let cons = consumption_policy(
            c.wealth,
            log_vt,
            &c.agent,
            c.eta_n,
            c.lattice.beta,
            c.lattice.dt,
        );
        let eta_prev = eta_step(c.eta_n, &c.agent, c.lattice.beta, c.lattice.dt);
        let v = recursive_value(
            log_vt,
            &c.agent,
            c.eta_n,
            eta_prev,
            c.lattice.beta,
            c.lattice.dt,
        );
        worst_phi = worst_phi.max((phi - o.phi).abs());
        worst_c = worst_c.max((cons - o.consumption.unwrap()).abs());
        worst_v = worst_v.max((eta_prev * c.wealth - v - o.utility.unwrap()).abs());
        checked += 1;
    }
    assert!(worst_phi < 1e-6, "position error {worst_phi:e}");
    assert!(worst_c < 1e-6, "spending error {worst_c:e}");
    assert!(worst_v < 1e-6, "continuation value error {worst_v:e}");
}
