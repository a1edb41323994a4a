#![allow(dead_code)]

use std::sync::Arc;

use cts_core::encoding::HashedNGramEncoder;
use cts_core::graph::{parse_graph, DatasetSplit, DialogGraph};
use cts_core::simulator::{default_openers, EnvFactory, SimulatorConfig};
use cts_core::Scalar;

pub fn data_dir(name: &str) -> String {
    format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn load(name: &str) -> (Arc<DialogGraph>, Arc<DatasetSplit>, Arc<DatasetSplit>) {
    let dir = data_dir(name);
    let read = |f: &str| std::fs::read_to_string(format!("{dir}/{f}")).unwrap();
    (
        Arc::new(parse_graph(&read("graph.json")).unwrap()),
        Arc::new(DatasetSplit::parse(&read("train.json")).unwrap()),
        Arc::new(DatasetSplit::parse(&read("test.json")).unwrap()),
    )
}

pub fn factory<T: Scalar>(name: &str, dim: usize) -> EnvFactory<T> {
    let (graph, train, test) = load(name);
    EnvFactory::new(
        graph,
        train,
        test,
        default_openers(),
        Arc::new(HashedNGramEncoder::new(dim, 0)),
        SimulatorConfig::default(),
    )
    .unwrap()
}
