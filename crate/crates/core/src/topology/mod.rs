//! Dynamic open digraphs: membership schedules, per-step topologies, their
//! generators and connectivity checks.

mod connectivity;
mod digraph;
mod generate;
mod schedule;

pub use connectivity::{
    departure_condition_failures, ever_active, verify_open_tprime_connectivity, verify_t_joint_connectivity,
};
pub use digraph::{is_strongly_connected, union_digraph, Digraph, NodeId};
pub use generate::{
    generate_instances, generate_membership_schedule, generate_topology_sequence,
    random_out_degree_digraph, MAX_ATTEMPTS,
};
pub use schedule::{node_sets_at, DepartureKnowledge, MembershipSchedule, NodeSets, TopologySequence};
