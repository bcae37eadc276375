//! Artifacts shipped with the crate: the 34-subdivision adjacency of
//! mainland India and a reference parameter field for simulation.

use crate::graph::ArealGraph;
use crate::marginals::GammaSvcParams;

pub const INDIA_ADJACENCY_CSV: &str = include_str!("../../../data/india_subdivisions_adjacency.csv");
pub const INDIA_LABELS_CSV: &str = include_str!("../../../data/india_subdivisions_labels.csv");
pub const REFERENCE_PARAMS_CSV: &str = include_str!("../../../data/reference_params.csv");

pub const INDIA_REGIONS: usize = 34;

pub fn india_graph() -> ArealGraph {
    ArealGraph::from_csv(INDIA_ADJACENCY_CSV.as_bytes(), INDIA_REGIONS).expect("bundled adjacency is valid")
}

pub fn india_labels() -> Vec<String> {
    let mut rdr = csv::Reader::from_reader(INDIA_LABELS_CSV.as_bytes());
    rdr.records().map(|r| r.expect("bundled labels are valid")[1].to_string()).collect()
}

/// Parses `region,a,b,c` rows (1-based regions, any order).
pub fn parse_params_csv(text: &str) -> Result<GammaSvcParams, String> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| e.to_string())?;
        if record.len() != 4 {
            return Err(format!("expected 4 columns `region,a,b,c`, got {}", record.len()));
        }
        let parse = |k: usize| record[k].parse::<f64>().map_err(|_| format!("`{}` is not a number", &record[k]));
        let region = record[0].parse::<usize>().map_err(|_| format!("`{}` is not a region index", &record[0]))?;
        rows.push((region, parse(1)?, parse(2)?, parse(3)?));
    }
    rows.sort_by_key(|r| r.0);
    for (k, r) in rows.iter().enumerate() {
        if r.0 != k + 1 {
            return Err(format!("regions must be 1..={} without gaps", rows.len()));
        }
    }
    GammaSvcParams::new(
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2).collect(),
        rows.iter().map(|r| r.3).collect(),
    )
    .map_err(|e| e.to_string())
}

pub fn reference_params() -> GammaSvcParams {
    parse_params_csv(REFERENCE_PARAMS_CSV).expect("bundled parameters are valid")
}
