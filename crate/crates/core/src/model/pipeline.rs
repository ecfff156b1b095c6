use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, ParamStore, Tensor2D, Var};
use crate::scene::{GaussianScene, DEFAULT_SAMPLE_SIZE};
use crate::sparsifier::{
    BoundStack, Location, PreparedScene, SparsifierConfig, SparsifierStack, TaskPrompt, Variant, ROI_STEP_M,
};
use crate::text::{plural, LabelBank, Vocab, BOS, LABEL_BANK_SEED};

use super::{generate, DecoderSource, GenerationConfig, LoraConfig, ModelError, ToyDecoder, ToyDecoderConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dims {
    pub d_f: usize,
    pub d_lm: usize,
    /// Decoder attention heads.
    pub heads: usize,
    pub layers: usize,
    pub vocab: usize,
    pub sparsifier_heads: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub max_len: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            d_f: 64,
            d_lm: 64,
            heads: 4,
            layers: 2,
            vocab: Vocab::builtin().len(),
            sparsifier_heads: 8,
            lora_rank: 8,
            lora_alpha: 16.0,
            max_len: 1024,
        }
    }
}

/// Everything needed to rebuild a [`Model`] around a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dims: Dims,
    pub variant: Variant,
    pub roi_radius_m: f64,
    /// Splats sampled per scene.
    pub n_sample: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { dims: Dims::default(), variant: Variant::Full, roi_radius_m: ROI_STEP_M, n_sample: DEFAULT_SAMPLE_SIZE }
    }
}

impl ModelConfig {
    fn sparsifier(&self) -> SparsifierConfig {
        SparsifierConfig {
            d_f: self.dims.d_f,
            d_lm: self.dims.d_lm,
            heads: self.dims.sparsifier_heads,
            vocab: self.dims.vocab,
            variant: self.variant,
            roi_radius_m: self.roi_radius_m,
        }
    }

    fn decoder(&self) -> ToyDecoderConfig {
        ToyDecoderConfig {
            layers: self.dims.layers,
            d_lm: self.dims.d_lm,
            heads: self.dims.heads,
            vocab: self.dims.vocab,
            max_len: self.dims.max_len,
        }
    }

    fn lora(&self) -> LoraConfig {
        LoraConfig { rank: self.dims.lora_rank, alpha: self.dims.lora_alpha }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let v = Vocab::builtin().len();
        if self.dims.vocab != v {
            return Err(ModelError::Config(format!("dims.vocab = {} but the built-in vocabulary has {v} tokens", self.dims.vocab)));
        }
        if self.n_sample == 0 {
            return Err(ModelError::Config("n_sample must be positive".into()));
        }
        if self.dims.lora_rank == 0 {
            return Err(ModelError::Config("lora_rank must be at least 1".into()));
        }
        self.sparsifier().validate()?;
        self.decoder().validate()
    }
}

/// Sparsifier, projection and decoder wired together over the built-in
/// vocabulary.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub sparsifier: SparsifierStack,
    pub decoder: ToyDecoder,
}

impl Model {
    /// Fresh parameters. Task-table rows of lexicon labels (and their
    /// plurals) are the label embeddings used by scene synthesis.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore), ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let sparsifier = SparsifierStack::init(config.sparsifier(), &mut store, &mut rng)?;
        let decoder = ToyDecoder::init(config.decoder(), Some(config.lora()), &mut store, &mut rng)?;
        let vocab = Vocab::builtin();
        let bank = LabelBank::builtin(config.dims.d_f, LABEL_BANK_SEED)?;
        for label in bank.labels() {
            let e = bank.embedding(label)?.to_vec();
            for w in [label.clone(), plural(label)] {
                if let Some(id) = vocab.id(&w) {
                    sparsifier.set_task_embedding(&mut store, id, &e)?;
                }
            }
        }
        Ok((Self { config, vocab, sparsifier, decoder }, store))
    }

    pub fn from_store(config: ModelConfig, store: &ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let sparsifier = SparsifierStack::from_store(config.sparsifier(), store)?;
        let decoder = ToyDecoder { config: config.decoder(), lora: Some(config.lora()) };
        for name in ["dec.tok_emb", "dec.head", "lora.l0.wq.a"] {
            store.value(name)?;
        }
        Ok(Self { config, vocab: Vocab::builtin(), sparsifier, decoder })
    }

    pub fn config_path(ckpt: &Path) -> PathBuf {
        let mut s = ckpt.as_os_str().to_owned();
        s.push(".config.json");
        PathBuf::from(s)
    }

    /// Writes the checkpoint and its config beside it.
    pub fn save(&self, store: &ParamStore, ckpt: &Path) -> Result<(), ModelError> {
        store.save(ckpt)?;
        std::fs::write(Self::config_path(ckpt), serde_json::to_string_pretty(&self.config)? + "\n")?;
        Ok(())
    }

    pub fn load(ckpt: &Path) -> Result<(Self, ParamStore), ModelError> {
        let store = ParamStore::load(ckpt)?;
        let config: ModelConfig = serde_json::from_str(&std::fs::read_to_string(Self::config_path(ckpt))?)?;
        Ok((Self::from_store(config, &store)?, store))
    }

    /// Same model with a different sparsifier wiring.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut m = self.clone();
        m.config.variant = variant;
        m.sparsifier.config.variant = variant;
        m
    }

    pub fn prepare(&self, scene: GaussianScene, seed: u64) -> Result<PreparedScene, ModelError> {
        Ok(PreparedScene::new(scene, self.config.n_sample, seed)?)
    }

    pub fn prompt(&self, text: &str, location: Option<Location>) -> Result<TaskPrompt, ModelError> {
        Ok(TaskPrompt::new(self.vocab.encode(text), location)?)
    }

    /// Sparsifier tensors used by this wiring (minus the frozen task table)
    /// and every adapter.
    pub fn is_trainable(&self, name: &str) -> bool {
        if name.starts_with("sp.knn") {
            return self.config.variant == Variant::KnnDownsample;
        }
        SparsifierStack::is_trainable(name) || ToyDecoder::is_lora(name)
    }

    /// Assembled decoder input `[ROI] ++ [scene] ++ prompt` in graph form.
    pub fn prefix_var(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        scene: &PreparedScene,
        prompt: &TaskPrompt,
        trainable: &dyn Fn(&str) -> bool,
    ) -> Result<(Var, BoundStack, super::BoundDecoder), ModelError> {
        let s = self.sparsifier.bind(g, store, trainable)?;
        let d = self.decoder.bind(g, store, trainable)?;
        let enc = s.encode(g, scene, prompt)?;
        let task_lm = d.embed(g, &prompt.token_ids)?;
        let prefix = s.assemble(g, &enc, task_lm)?;
        Ok((prefix, s, d))
    }

    pub fn prefix(&self, store: &ParamStore, scene: &PreparedScene, prompt: &TaskPrompt) -> Result<Tensor2D, ModelError> {
        let mut g = Graph::new();
        let (p, _, _) = self.prefix_var(&mut g, store, scene, prompt, &|_| false)?;
        Ok(g.value(p).clone())
    }

    /// Summed next-token loss of `target` (which should end with the end
    /// token) after the assembled prefix.
    pub fn loss_var(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        scene: &PreparedScene,
        prompt: &TaskPrompt,
        target: &[usize],
        trainable: &dyn Fn(&str) -> bool,
    ) -> Result<Var, ModelError> {
        if target.is_empty() {
            return Err(ModelError::Config("empty target sequence".into()));
        }
        let (prefix, _, d) = self.prefix_var(g, store, scene, prompt, trainable)?;
        let mut input = Vec::with_capacity(target.len());
        input.push(BOS);
        input.extend_from_slice(&target[..target.len() - 1]);
        let logits = d.forward(g, prefix, &input)?;
        super::prefix_lm_loss_var(g, logits, target, 0)
    }

    pub fn generate(
        &self,
        store: &ParamStore,
        scene: &PreparedScene,
        prompt: &TaskPrompt,
        cfg: &GenerationConfig,
    ) -> Result<Vec<usize>, ModelError> {
        let prefix = self.prefix(store, scene, prompt)?;
        generate(&DecoderSource { decoder: &self.decoder, store, prefix }, cfg)
    }

    pub fn answer(
        &self,
        store: &ParamStore,
        scene: &PreparedScene,
        prompt: &TaskPrompt,
        cfg: &GenerationConfig,
    ) -> Result<String, ModelError> {
        Ok(self.vocab.decode(&self.generate(store, scene, prompt, cfg)?))
    }
}
