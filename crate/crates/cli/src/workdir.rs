//! On-disk layout of a working directory.
//!
//! The record store (`manifest.das`, `<hex key>.rec`) lives at the top level
//! next to the public parameters, the secret key, the client state and the
//! server's tree snapshot.

use std::path::{Path, PathBuf};

use das_core::store::write_atomic;
use das_core::tag::{PublicParams, SecretKey};
use das_core::{Client, DirStore, IbltTree, Server};

use crate::error::{read_file, CliError, Result};

pub const PUBLIC_FILE: &str = "public.dask";
pub const SECRET_FILE: &str = "secret.dass";
pub const CLIENT_FILE: &str = "client.dasc";
pub const TREE_FILE: &str = "tree.dast";

pub struct Workdir {
    root: PathBuf,
    pub client: Client,
    pub server: Server<DirStore>,
}

impl Workdir {
    /// Writes every file of a freshly set up pair.
    pub fn create(root: &Path, client: Client, server: Server<DirStore>) -> Result<Self> {
        let dir = Self {
            root: root.to_owned(),
            client,
            server,
        };
        write_atomic(&dir.path(PUBLIC_FILE), &dir.server.public_params().to_bytes())?;
        write_atomic(&dir.path(SECRET_FILE), &dir.client.secret_key().to_bytes(false))?;
        dir.save()?;
        Ok(dir)
    }

    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(CliError::File {
                path: root.to_owned(),
                source: std::io::ErrorKind::NotFound.into(),
            });
        }
        let read = |name| read_file(&root.join(name));
        let pp = PublicParams::from_bytes(&read(PUBLIC_FILE)?)?;
        let sk = SecretKey::from_bytes(&read(SECRET_FILE)?)?;
        let client = Client::from_bytes(&read(CLIENT_FILE)?, sk, pp.clone())?;
        let tree = IbltTree::restore(&read(TREE_FILE)?)?;
        if tree.params() != client.t_b().params() {
            return Err(das_core::Error::ParamsMismatch.into());
        }
        let server = Server::open(DirStore::open(root)?, tree, pp)?;
        Ok(Self {
            root: root.to_owned(),
            client,
            server,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Persists the tree snapshot and the client state. Records are written
    /// by the store as they change.
    pub fn save(&self) -> Result<()> {
        write_atomic(&self.path(TREE_FILE), &self.server.tree().snapshot())?;
        write_atomic(&self.path(CLIENT_FILE), &self.client.to_bytes())?;
        Ok(())
    }
}
