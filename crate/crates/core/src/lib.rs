pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod geometry;
pub mod map;
pub mod odometry;
pub mod pipeline;
pub mod pose_graph;
pub mod scene_parser;
pub mod simulator;
pub mod skyline;
pub mod temporal;
