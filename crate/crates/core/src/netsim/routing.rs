use crate::naming::FolderName;
use crate::time::SimTime;

use super::NodeId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub folder: FolderName,
    pub node: NodeId,
    pub expiry: SimTime,
}

/// Folder-to-node routes with expiry; lookups take the longest unexpired
/// prefix.
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    routes: Vec<Route>,
}

impl RoutingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the route for `folder`.
    pub fn install(&mut self, folder: FolderName, node: NodeId, expiry: SimTime) {
        self.routes.retain(|r| r.folder != folder);
        self.routes.push(Route { folder, node, expiry });
    }

    pub fn lookup(&self, folder: &FolderName, now: SimTime) -> Option<&Route> {
        self.routes
            .iter()
            .filter(|r| r.expiry > now && r.folder.contains(folder))
            .max_by_key(|r| r.folder.depth())
    }

    /// Drops routes to `node` that cover `folder` or lie below it.
    pub fn forget(&mut self, folder: &FolderName, node: NodeId) {
        self.routes
            .retain(|r| r.node != node || !(folder.contains(&r.folder) || r.folder.contains(folder)));
    }

    pub fn purge_expired(&mut self, now: SimTime) {
        self.routes.retain(|r| r.expiry > now);
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }
}
