pub mod datakit;
pub mod experiments;
pub mod linalg;
pub mod netkit;
pub mod polyhedra;
pub mod projector;
pub mod tensorkit;
