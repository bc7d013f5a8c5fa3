use std::path::Path;

use anyhow::{bail, Context, Result};
use evmarket_core::ingest::{self, LocationBox};
use evmarket_core::{StationLocation, StationRegistry, TransactionRecord};

use crate::config::RunConfig;
use crate::output::{ensure_dir, Report};

pub fn gen_data(cfg: &RunConfig) -> Result<Report> {
    let (records, locations) = ingest::synth_generate(
        cfg.seed,
        cfg.data.n_stations,
        cfg.data.n_transactions,
        LocationBox::default(),
    )?;
    let tx = cfg.transactions_path();
    let loc = cfg.locations_path();
    for p in [&tx, &loc] {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
    }
    ingest::write_transactions(&tx, &records)?;
    ingest::write_locations(&loc, &locations)?;
    log::info!(
        "wrote {} transactions for {} stations",
        records.len(),
        locations.len()
    );
    Ok(Report {
        dir: cfg.out().to_path_buf(),
        failures: Vec::new(),
    })
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!(
            "missing {what} file {}; run `evmarket gen-data` first or set it in the config",
            path.display()
        );
    }
    Ok(())
}

pub struct Loaded {
    pub locations: Vec<StationLocation>,
    pub registry: StationRegistry,
    pub records: Vec<TransactionRecord>,
}

pub fn load_locations(cfg: &RunConfig) -> Result<(Vec<StationLocation>, StationRegistry)> {
    let path = cfg.locations_path();
    require(&path, "locations")?;
    let locations = ingest::parse_locations(&path)?;
    let registry = StationRegistry::from_locations(&locations)?;
    Ok((locations, registry))
}

pub fn load(cfg: &RunConfig) -> Result<Loaded> {
    let (locations, registry) = load_locations(cfg)?;
    let path = cfg.transactions_path();
    require(&path, "transactions")?;
    let records = ingest::parse_transactions_with(&path, &registry, &cfg.column_map())
        .with_context(|| format!("parsing {}", path.display()))?;
    if records.is_empty() {
        bail!("{} holds no transactions", path.display());
    }
    Ok(Loaded {
        locations,
        registry,
        records,
    })
}
