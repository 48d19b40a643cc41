pub mod betweenness;
pub mod messages;
pub mod sink;
pub mod stub_upf;
