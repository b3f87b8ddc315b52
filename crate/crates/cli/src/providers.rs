//! Provider construction from command-line specs.

use anyhow::{bail, Context, Result};
use kelp_core::embedding::{EmbeddingProvider, HashedBagProvider, RandomProvider};
use kelp_core::encoder::LinearEncoder;
use kelp_core::llm::{LlmProvider, MockLlm, MockLlmSpec};
use kelp_core::remote::{RemoteEmbeddingProvider, RemoteLlm};

fn is_url(spec: &str) -> bool {
    spec.starts_with("http://") || spec.starts_with("https://")
}

/// `builtin-hash[:H]`, `encoder:<file>`, `random[:seed]` or an http(s) base URL.
pub fn embedding_provider(spec: &str, hash_dim: usize, seed: u64) -> Result<Box<dyn EmbeddingProvider>> {
    if is_url(spec) {
        return Ok(Box::new(RemoteEmbeddingProvider::new(spec)?));
    }
    let (kind, arg) = spec.split_once(':').map_or((spec, None), |(k, a)| (k, Some(a)));
    Ok(match kind {
        "builtin-hash" => {
            let h = match arg {
                Some(a) => a.parse().with_context(|| format!("bad hash dimension in {spec:?}"))?,
                None => hash_dim,
            };
            Box::new(HashedBagProvider::new(h)?)
        }
        "encoder" => {
            let path = arg.filter(|a| !a.is_empty()).context("encoder provider needs a file: encoder:<file>")?;
            Box::new(LinearEncoder::load(path)?)
        }
        "random" => {
            let s = match arg {
                Some(a) => a.parse().with_context(|| format!("bad seed in {spec:?}"))?,
                None => seed,
            };
            Box::new(RandomProvider::new(s, 64)?)
        }
        _ => bail!("unknown provider {spec:?}; expected builtin-hash, encoder:<file>, random or a URL"),
    })
}

/// `mock:<rules.json>` or an http(s) base URL.
pub fn llm_provider(spec: Option<&str>) -> Result<Box<dyn LlmProvider>> {
    let spec = spec.context("this command needs --llm (mock:<rules.json> or a URL)")?;
    if is_url(spec) {
        return Ok(Box::new(RemoteLlm::new(spec)?));
    }
    match spec.split_once(':') {
        Some(("mock", path)) => Ok(Box::new(MockLlm::new(MockLlmSpec::load(path)?))),
        _ => bail!("unknown language model {spec:?}; expected mock:<rules.json> or a URL"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs() {
        assert_eq!(embedding_provider("builtin-hash", 256, 0).unwrap().dimension(), Some(256));
        assert_eq!(embedding_provider("builtin-hash:64", 256, 0).unwrap().dimension(), Some(64));
        assert_eq!(embedding_provider("random", 256, 0).unwrap().dimension(), Some(64));
        assert!(embedding_provider("random:x", 256, 0).is_err());
        assert!(embedding_provider("builtin-hash:3", 256, 0).is_err());
        assert!(embedding_provider("encoder:", 256, 0).is_err());
        assert!(embedding_provider("encoder:/no/such/file", 256, 0).is_err());
        assert!(embedding_provider("bert", 256, 0).is_err());
        assert!(embedding_provider("http://127.0.0.1:9", 256, 0).is_ok());
        assert!(llm_provider(None).is_err());
        assert!(llm_provider(Some("gpt")).is_err());
    }
}
