//! Two-stage neural extraction of structured fields from the leaf text nodes of
//! detail web pages.
//!
//! Stage one encodes every node from its own text, the text right before it and
//! a few discrete features, then classifies it into one of the schema fields or
//! none. Stage two scores pairs of candidate nodes using their XPaths and page
//! positions and resolves each field to a single node per page.

pub mod checkpoint;
pub mod dom;
pub mod features;
pub mod filter;
pub mod nn;
pub mod node_model;
pub mod pipeline;
pub mod relation;
pub mod text;
