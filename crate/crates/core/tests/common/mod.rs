//! Catalogs shared by the integration tests, cached on disk under the
//! cargo test tmpdir by config hash so later test binaries reuse them.

#![allow(dead_code)]

use std::collections::HashMap;
use std::fs::File;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use si_rydberg::catalog::{Catalog, CatalogConfig};
use si_rydberg::units::{species_lookup, PhysicalConstants};

pub fn catalog(name: &str, state: &str) -> Arc<Catalog> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<Catalog>>>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap();
    let key = format!("{name}/{state}");
    if let Some(c) = cache.get(&key) {
        return c.clone();
    }
    let species = species_lookup(name, state).unwrap();
    let constants = PhysicalConstants::default();
    let config = CatalogConfig::for_species(&species);
    let hash = Catalog::config_hash(&species, &constants, &config);
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("catalog-{}.bin", &hash[..16]));
    let cat = match File::open(&path).ok().and_then(|mut f| Catalog::read_from(&mut f).ok()) {
        Some(c) => c,
        None => {
            let c = Catalog::build(&species, &constants, &config).unwrap();
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            c.write_to(&mut File::create(&tmp).unwrap()).unwrap();
            std::fs::rename(&tmp, &path).unwrap();
            c
        }
    };
    let cat = Arc::new(cat);
    cache.insert(key, cat.clone());
    cat
}

pub fn state_index(cat: &Catalog, label: &str) -> usize {
    cat.states.iter().position(|s| s.label == label).unwrap_or_else(|| panic!("no state {label}"))
}
