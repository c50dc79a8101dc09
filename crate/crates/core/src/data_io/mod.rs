//! Complex records, PDB output and synthetic datasets.

mod pdb;
mod record;
mod synthetic;

pub use pdb::{pdb_string, read_pdb_str, write_pdb, PdbContents};
pub use record::{
    parse_complex, parse_complex_str, write_complex, write_complex_string, ComplexRecord,
};
pub use synthetic::{
    embed_ligand, gen_complex, gen_synthetic_dataset, SyntheticOptions, CLASH_DISTANCE,
    JITTERED_BOND_TOLERANCE,
};
