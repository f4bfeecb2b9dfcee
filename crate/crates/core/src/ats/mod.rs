//! Agent Trade Server: best-effort hosting of latent orders behind trigger
//! expressions, outside the deterministic core.

mod decompose;
mod gallery;
mod instruction;
mod server;

pub use decompose::{decompose_combination, DecomposeError, Decomposition};
pub use gallery::{Gallery, GalleryEntry, GalleryError, DEFAULT_GALLERY};
pub use instruction::{
    AgentInstruction, AgentKind, ComboTemplate, InstructionError, LegTemplate, OrderTemplate,
    Template,
};
pub use server::{Activation, AgentStatus, AtsConfig, AtsError, AtsEvent, AtsServer, IndexDef};
