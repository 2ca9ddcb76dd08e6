use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::Policy;
use crate::naming::{ContentName, FolderName};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AppError {
    #[error("application may only access records it created")]
    Unauthorized,
    #[error("no such record")]
    NotFound,
}

/// Per-application settings chosen at install time.
#[derive(Debug, Clone)]
pub struct AppConfig {
    /// Who can read the application's index object.
    pub index_fp: Policy,
    /// Where links created in answer to NOTIFY messages go, and who can read
    /// them. Without a folder, notifications are delivered but never linked.
    pub link_folder: Option<FolderName>,
    pub link_fp: Option<Policy>,
}

impl AppConfig {
    pub fn new(index_fp: Policy) -> Self {
        AppConfig {
            index_fp,
            link_folder: None,
            link_fp: None,
        }
    }
}

/// A NOTIFY accepted for delivery to an application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub sender: String,
    pub content_name: ContentName,
    pub checksum: [u8; 32],
    pub received_at: SimTime,
    /// The link object created in answer, if the application accepted it.
    pub link: Option<ContentName>,
}

/// The butler's local database behind the CRUD interface.
#[derive(Debug, Clone, Default)]
pub struct AppStore {
    next: u64,
    records: BTreeMap<u64, (String, Vec<u8>)>,
}

impl AppStore {
    pub fn create(&mut self, app: &str, data: Vec<u8>) -> u64 {
        self.next += 1;
        self.records.insert(self.next, (app.to_owned(), data));
        self.next
    }

    fn owned(&self, app: &str, id: u64) -> Result<(), AppError> {
        match self.records.get(&id) {
            None => Err(AppError::NotFound),
            Some((owner, _)) if owner != app => Err(AppError::Unauthorized),
            Some(_) => Ok(()),
        }
    }

    pub fn read(&self, app: &str, id: u64) -> Result<&[u8], AppError> {
        self.owned(app, id)?;
        Ok(&self.records[&id].1)
    }

    pub fn update(&mut self, app: &str, id: u64, data: Vec<u8>) -> Result<(), AppError> {
        self.owned(app, id)?;
        self.records.get_mut(&id).unwrap().1 = data;
        Ok(())
    }

    pub fn delete(&mut self, app: &str, id: u64) -> Result<(), AppError> {
        self.owned(app, id)?;
        self.records.remove(&id);
        Ok(())
    }
}
