pub mod affect;
pub mod agent;
pub mod backend;
pub mod cli;
pub mod experiment;
pub mod metrics;
pub mod protocol;
pub mod seed;
