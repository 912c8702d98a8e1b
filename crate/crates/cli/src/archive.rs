//! Locked-design archive and secret-key file formats.
//!
//! The archive is the redacted view (groups and couples visible, correct
//! indices stripped) serialized as JSON. The secret key file is a small
//! text file with a warning header; it never travels with the archive.

use crate::CliError;
use ldelock_core::attack::RedactedLock;
use ldelock_core::lock::{selection_from_label, selection_label, LockedNetlist, Selection};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const ARCHIVE_VERSION: &str = "1";

#[derive(Serialize, Deserialize)]
pub struct Archive {
    pub version: String,
    #[serde(flatten)]
    pub lock: RedactedLock,
}

pub fn write_archive(path: &Path, lock: &LockedNetlist) -> Result<Vec<u8>, CliError> {
    let archive = Archive {
        version: ARCHIVE_VERSION.into(),
        lock: RedactedLock::from(lock),
    };
    let mut bytes = serde_json::to_vec_pretty(&archive)
        .map_err(|e| CliError::internal(format!("archive serialization: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(path, &bytes)?;
    Ok(bytes)
}

pub fn read_archive(path: &Path) -> Result<RedactedLock, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read archive {}: {e}", path.display())))?;
    let archive: Archive = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("malformed archive {}: {e}", path.display())))?;
    if archive.version != ARCHIVE_VERSION {
        return Err(CliError::config(format!(
            "archive version {} unsupported (expected {ARCHIVE_VERSION})",
            archive.version
        )));
    }
    Ok(archive.lock)
}

pub fn write_secret(path: &Path, lock: &LockedNetlist) -> Result<Vec<u8>, CliError> {
    let sel = lock.correct_selection();
    let key = lock.key_from_selection(&sel);
    let content = format!(
        "# SECRET KEY MATERIAL - store separately, never ship with the archive\n\
         key={}\n\
         bits={}\n",
        selection_label(&sel),
        key.bitstring()
    );
    std::fs::write(path, &content)?;
    Ok(content.into_bytes())
}

pub fn read_secret(path: &Path) -> Result<Selection, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read key file {}: {e}", path.display())))?;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("key=") {
            return selection_from_label(v.trim())
                .ok_or_else(|| CliError::config(format!("malformed key line `{line}`")));
        }
    }
    Err(CliError::config(format!(
        "no key= line in {}",
        path.display()
    )))
}

/// Reassemble the full lock from the attacker-visible archive plus the
/// secret selection (the oracle side of the workflow).
pub fn assemble_lock(view: &RedactedLock, secret: &[usize]) -> Result<LockedNetlist, CliError> {
    if secret.len() != view.groups.len() {
        return Err(CliError::config(format!(
            "key has {} groups, archive has {}",
            secret.len(),
            view.groups.len()
        )));
    }
    let groups = view
        .groups
        .iter()
        .zip(secret)
        .enumerate()
        .map(|(i, (g, &correct_index))| {
            if correct_index >= g.couples.len() {
                return Err(CliError::config(format!(
                    "key index {correct_index} out of range for group {i}"
                )));
            }
            Ok(ldelock_core::lock::ArrangementGroup {
                members: g.members.clone(),
                couples: g.couples.clone(),
                correct_index,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(LockedNetlist {
        base: view.base.clone(),
        groups,
        bit_perm: view.bit_perm.clone(),
        lde: view.lde.clone(),
        policy: view.policy.clone(),
    })
}
