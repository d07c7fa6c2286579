use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::split::{DatasetManifest, Split};
use super::stack::{load_stack, save_stack, MaskStack, SliceStack};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const STACK_EXT: &str = "rvs";

pub type StackPair = (SliceStack, MaskStack);

/// Stacks on disk plus their split assignment.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub stacks: BTreeMap<String, StackPair>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&StackPair> {
        self.manifest.ids(split).iter().map(|id| &self.stacks[id]).collect()
    }
}

/// Writes one `<id>.rvs` per stack and the manifest.
pub fn write_dataset(dir: &Path, stacks: &[StackPair], manifest: &DatasetManifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (s, m) in stacks {
        save_stack(&dir.join(format!("{}.{STACK_EXT}", s.id)), s, m)?;
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))
}

/// Reads `manifest.txt` and every stack it lists.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = DatasetManifest::parse(&text)?;
    let mut stacks = BTreeMap::new();
    for split in Split::ALL {
        for id in manifest.ids(split) {
            let pair = load_stack(&dir.join(format!("{id}.{STACK_EXT}")))?;
            if stacks.insert(id.clone(), pair).is_some() {
                return Err(Error::Config(format!("stack `{id}` listed twice in manifest")));
            }
        }
    }
    Ok(Dataset { manifest, stacks })
}
