//! Municipality → province hierarchy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type MunicipalityId = String;
pub type ProvinceId = String;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerritoryIndex {
    muni_to_province: BTreeMap<MunicipalityId, ProvinceId>,
    provinces: BTreeSet<ProvinceId>,
}

impl TerritoryIndex {
    /// Builds the index from (municipality, province) pairs. A municipality
    /// listed twice must name the same province both times.
    pub fn from_pairs<I, M, P>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (M, P)>,
        M: Into<MunicipalityId>,
        P: Into<ProvinceId>,
    {
        let mut index = Self::default();
        for (m, p) in pairs {
            let (m, p) = (m.into(), p.into());
            match index.muni_to_province.get(&m) {
                Some(existing) if *existing != p => {
                    return Err(Error::ConflictingProvince {
                        municipality: m,
                        first: existing.clone(),
                        second: p,
                    })
                }
                Some(_) => {}
                None => {
                    index.provinces.insert(p.clone());
                    index.muni_to_province.insert(m, p);
                }
            }
        }
        Ok(index)
    }

    pub fn province_of(&self, municipality: &str) -> Option<&ProvinceId> {
        self.muni_to_province.get(municipality)
    }

    pub fn contains_province(&self, province: &str) -> bool {
        self.provinces.contains(province)
    }

    pub fn municipalities(&self) -> impl Iterator<Item = &MunicipalityId> {
        self.muni_to_province.keys()
    }

    pub fn provinces(&self) -> impl Iterator<Item = &ProvinceId> {
        self.provinces.iter()
    }

    pub fn municipalities_in<'a>(&'a self, province: &'a str) -> impl Iterator<Item = &'a MunicipalityId> {
        self.muni_to_province
            .iter()
            .filter(move |(_, p)| p.as_str() == province)
            .map(|(m, _)| m)
    }

    /// N, the number of distinct provinces.
    pub fn province_count(&self) -> usize {
        self.provinces.len()
    }

    pub fn municipality_count(&self) -> usize {
        self.muni_to_province.len()
    }

    /// SHA-256 over the sorted municipality→province table.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (m, p) in &self.muni_to_province {
            hasher.update(m.as_bytes());
            hasher.update([0x1f]);
            hasher.update(p.as_bytes());
            hasher.update([0x1e]);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
