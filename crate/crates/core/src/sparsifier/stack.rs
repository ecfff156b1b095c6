use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{
    xavier_uniform, AttentionBlockParams, BlockVars, Graph, NumericsError, ParamStore, PoolParams, PoolVars, Tensor2D,
    Var,
};
use crate::scene::{
    mock_decoder_levels, sample_gaussians, DecoderLevels, GaussianScene, LevelTokens, RoiResult, SpatialGrid,
    DEFAULT_CELL_SIZE,
};
use crate::text::random_unit;

use super::downsample::{downsample_knn_variant, downsample_uniform};
use super::fourier::FourierPositionEncoder;
use super::{
    Location, SparsifierConfig, SparsifierError, TaskPrompt, Variant, LEVEL_CAP, ROI_STEP_M, ROI_TOKENS, SCENE_TOKENS,
};

const TASK_TABLE: &str = "sp.task_table";
const SEEDS: &str = "sp.seeds";
const QUERY_POOL: &str = "sp.query_pool";
const FOURIER_B: &str = "sp.fourier_b";
const ROI_SEEDS: &str = "sp.roi_seeds";
const ROI_POOL: &str = "sp.roi_pool";
const PROJ_W: &str = "sp.proj_w";
const PROJ_B: &str = "sp.proj_b";

fn block_prefix(k: usize) -> String {
    format!("sp.block{k}")
}

fn knn_prefix(k: usize) -> String {
    format!("sp.knn{k}")
}

/// Parameter layout and wiring of the dual sparsifier. All tensors live in
/// a [`ParamStore`] under the `sp.` prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsifierStack {
    pub config: SparsifierConfig,
}

impl SparsifierStack {
    /// Inserts freshly initialized parameters into `store`.
    pub fn init<R: Rng + ?Sized>(
        config: SparsifierConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self, SparsifierError> {
        config.validate()?;
        let (d, h) = (config.d_f, config.heads);
        let rows: Vec<Vec<f64>> = (0..config.vocab).map(|_| random_unit(d, rng)).collect();
        store.insert(TASK_TABLE, Tensor2D::from_rows(&rows)?);
        store.insert(SEEDS, gaussian(SCENE_TOKENS, d, rng));
        PoolParams::init(d, h, rng)?.insert_into(store, QUERY_POOL);
        for k in 0..3 {
            AttentionBlockParams::init(d, h, rng)?.insert_into(store, &block_prefix(k));
        }
        store.insert(FOURIER_B, FourierPositionEncoder::random(d, rng).b);
        store.insert(ROI_SEEDS, gaussian(ROI_TOKENS, d, rng));
        PoolParams::init(d, h, rng)?.insert_into(store, ROI_POOL);
        store.insert(PROJ_W, xavier_uniform(d, config.d_lm, rng));
        store.insert(PROJ_B, Tensor2D::zeros(1, config.d_lm));
        for k in 0..2 {
            store.insert(format!("{}.seeds", knn_prefix(k)), gaussian(LEVEL_CAP, d, rng));
            PoolParams::init(d, h, rng)?.insert_into(store, &format!("{}.pool", knn_prefix(k)));
        }
        Ok(Self { config })
    }

    /// Checks that `store` holds every tensor of this layout.
    pub fn from_store(config: SparsifierConfig, store: &ParamStore) -> Result<Self, SparsifierError> {
        config.validate()?;
        let (d, h) = (config.d_f, config.heads);
        let expect = |name: &str, shape: (usize, usize)| -> Result<(), SparsifierError> {
            let got = store.value(name)?.shape();
            if got != shape {
                return Err(NumericsError::Shape(format!("`{name}` is {got:?}, expected {shape:?}")).into());
            }
            Ok(())
        };
        expect(TASK_TABLE, (config.vocab, d))?;
        expect(SEEDS, (SCENE_TOKENS, d))?;
        expect(FOURIER_B, (3, d / 2))?;
        expect(ROI_SEEDS, (ROI_TOKENS, d))?;
        expect(PROJ_W, (d, config.d_lm))?;
        expect(PROJ_B, (1, config.d_lm))?;
        PoolParams::from_store(store, QUERY_POOL, h)?;
        PoolParams::from_store(store, ROI_POOL, h)?;
        for k in 0..3 {
            AttentionBlockParams::from_store(store, &block_prefix(k), h)?;
        }
        for k in 0..2 {
            expect(&format!("{}.seeds", knn_prefix(k)), (LEVEL_CAP, d))?;
            PoolParams::from_store(store, &format!("{}.pool", knn_prefix(k)), h)?;
        }
        Ok(Self { config })
    }

    /// Name of the frozen task embedding table.
    pub fn task_table_name() -> &'static str {
        TASK_TABLE
    }

    /// Every sparsifier tensor except the frozen task embedding table.
    pub fn is_trainable(name: &str) -> bool {
        name.starts_with("sp.") && name != TASK_TABLE
    }

    pub fn encoder(&self, store: &ParamStore) -> Result<FourierPositionEncoder, SparsifierError> {
        Ok(FourierPositionEncoder::new(store.value(FOURIER_B)?.clone())?)
    }

    /// Overwrites the task embedding of token `id`.
    pub fn set_task_embedding(&self, store: &mut ParamStore, id: usize, row: &[f64]) -> Result<(), SparsifierError> {
        let t = store.value_mut(TASK_TABLE)?;
        if id >= t.rows() {
            return Err(SparsifierError::OutOfVocab { id, vocab: t.rows() });
        }
        if row.len() != t.cols() {
            return Err(NumericsError::Shape(format!("task embedding of width {}, table width {}", row.len(), t.cols())).into());
        }
        t.row_mut(id).copy_from_slice(row);
        Ok(())
    }

    /// Binds every tensor into `g`; names accepted by `trainable` become
    /// differentiable leaves, the rest constants.
    pub fn bind(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        trainable: &dyn Fn(&str) -> bool,
    ) -> Result<BoundStack, SparsifierError> {
        let h = self.config.heads;
        let b = |g: &mut Graph, n: &str| store.bind(g, n, trainable(n));
        let pool = |g: &mut Graph, p: &str| PoolVars::bind(g, store, p, h, trainable(&format!("{p}.wq")));
        let block = |g: &mut Graph, p: &str| BlockVars::bind(g, store, p, h, trainable(&format!("{p}.wq")));
        let knn = if self.config.variant == Variant::KnnDownsample {
            let mut v = Vec::new();
            for k in 0..2 {
                let p = knn_prefix(k);
                v.push((b(g, &format!("{p}.seeds"))?, pool(g, &format!("{p}.pool"))?));
            }
            Some([v[0], v[1]])
        } else {
            None
        };
        Ok(BoundStack {
            config: self.config.clone(),
            task_table: b(g, TASK_TABLE)?,
            seeds: b(g, SEEDS)?,
            query_pool: pool(g, QUERY_POOL)?,
            blocks: [block(g, &block_prefix(0))?, block(g, &block_prefix(1))?, block(g, &block_prefix(2))?],
            fourier_b: b(g, FOURIER_B)?,
            roi_seeds: b(g, ROI_SEEDS)?,
            roi_pool: pool(g, ROI_POOL)?,
            proj_w: b(g, PROJ_W)?,
            proj_b: b(g, PROJ_B)?,
            knn,
        })
    }

    fn bind_constants(&self, g: &mut Graph, store: &ParamStore) -> Result<BoundStack, SparsifierError> {
        self.bind(g, store, &|_| false)
    }

    /// Projected scene tokens (and region tokens for located prompts).
    pub fn tokenize(
        &self,
        store: &ParamStore,
        scene: &PreparedScene,
        prompt: &TaskPrompt,
    ) -> Result<SparseTokens, SparsifierError> {
        let mut g = Graph::new();
        let s = self.bind_constants(&mut g, store)?;
        let enc = s.encode(&mut g, scene, prompt)?;
        let scene_proj = s.project(&mut g, enc.scene_tokens)?;
        let roi = match enc.roi {
            Some(r) => {
                let p = s.project(&mut g, r)?;
                Some(g.value(p).clone())
            }
            None => None,
        };
        Ok(SparseTokens {
            scene: g.value(scene_proj).clone(),
            roi,
            roi_radius: enc.roi_radius,
            kv_rows: enc.kv_rows,
        })
    }
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor2D {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor2D::from_vec(rows, cols, data).expect("length matches")
}

/// Sparsifier output in the language model width.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTokens {
    /// 128 × d_lm
    pub scene: Tensor2D,
    /// 4 × d_lm, present iff the prompt has a location.
    pub roi: Option<Tensor2D>,
    pub roi_radius: Option<f64>,
    /// Key/value rows seen by each of the three blocks.
    pub kv_rows: [usize; 3],
}

/// A scene with its param-independent derived data: sampled decoder
/// levels, their stride-downsampled block inputs and a spatial grid.
#[derive(Debug)]
pub struct PreparedScene {
    pub scene: GaussianScene,
    pub levels: DecoderLevels,
    /// Every level stride-downsampled to at most 512 tokens.
    pub uniform: [LevelTokens; 3],
    pub grid: SpatialGrid,
    knn_final: OnceLock<LevelTokens>,
}

impl PreparedScene {
    pub fn new(scene: GaussianScene, n_sample: usize, seed: u64) -> Result<Self, SparsifierError> {
        let idx = sample_gaussians(&scene, n_sample, seed)?;
        let levels = mock_decoder_levels(&scene, &idx)?;
        let uniform = std::array::from_fn(|k| downsample_uniform(&levels.levels[k], LEVEL_CAP));
        let grid = SpatialGrid::new(&scene, DEFAULT_CELL_SIZE);
        Ok(Self { scene, levels, uniform, grid, knn_final: OnceLock::new() })
    }

    /// Final level reduced by k-means grouping (computed on first use).
    pub fn knn_final(&self) -> &LevelTokens {
        self.knn_final.get_or_init(|| downsample_knn_variant(&self.levels.levels[2], LEVEL_CAP))
    }

    /// Language features of the given splats.
    pub fn member_features(&self, members: &[usize]) -> Tensor2D {
        member_features(&self.scene, members)
    }
}

fn member_features(scene: &GaussianScene, members: &[usize]) -> Tensor2D {
    let mut t = Tensor2D::zeros(members.len(), scene.feature_dim);
    for (r, &m) in members.iter().enumerate() {
        for (o, &v) in t.row_mut(r).iter_mut().zip(&scene.splats[m].language_feature) {
            *o = v as f64;
        }
    }
    t
}

/// Graph nodes of one forward pass, before projection.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// 128 × d_f
    pub scene_tokens: Var,
    /// 4 × d_f
    pub roi: Option<Var>,
    pub roi_radius: Option<f64>,
    pub kv_rows: [usize; 3],
}

/// A [`SparsifierStack`] bound into one [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundStack {
    config: SparsifierConfig,
    task_table: Var,
    seeds: Var,
    query_pool: PoolVars,
    blocks: [BlockVars; 3],
    fourier_b: Var,
    roi_seeds: Var,
    roi_pool: PoolVars,
    proj_w: Var,
    proj_b: Var,
    knn: Option<[(Var, PoolVars); 2]>,
}

impl BoundStack {
    pub fn config(&self) -> &SparsifierConfig {
        &self.config
    }

    pub fn fourier(&self, g: &mut Graph, positions: &Tensor2D) -> Result<Var, SparsifierError> {
        Ok(g.fourier(positions, self.fourier_b)?)
    }

    /// Task-table rows for the prompt tokens, plus the Fourier features of
    /// the location (box center) as one extra row.
    pub fn embed_task(&self, g: &mut Graph, prompt: &TaskPrompt) -> Result<Var, SparsifierError> {
        prompt.validate()?;
        let vocab = self.config.vocab;
        if let Some(&id) = prompt.token_ids.iter().find(|&&i| i >= vocab) {
            return Err(SparsifierError::OutOfVocab { id, vocab });
        }
        let rows = g.gather_rows(self.task_table, &prompt.token_ids)?;
        match &prompt.location {
            None => Ok(rows),
            Some(loc) => {
                let l = self.location_row(g, loc)?;
                Ok(g.concat_rows(&[rows, l])?)
            }
        }
    }

    pub fn location_row(&self, g: &mut Graph, loc: &Location) -> Result<Var, SparsifierError> {
        let c = loc.center();
        self.fourier(g, &Tensor2D::row_vector(&c))
    }

    /// 128 queries pooled from the task embeddings, or the bare seeds in
    /// the prompt-independent variant.
    pub fn make_queries(&self, g: &mut Graph, task: Option<Var>) -> Result<Var, SparsifierError> {
        if self.config.variant == Variant::LearnableQueries {
            return Ok(self.seeds);
        }
        let task = task.ok_or(SparsifierError::EmptyTask)?;
        if g.value(task).rows() == 0 {
            return Err(SparsifierError::EmptyTask);
        }
        Ok(self.query_pool.forward(g, self.seeds, task)?)
    }

    fn level_kv(&self, g: &mut Graph, k: usize, tokens: &LevelTokens) -> Result<Var, SparsifierError> {
        let t = g.constant(tokens.features.clone());
        match (&self.knn, k) {
            (Some(knn), 0 | 1) if tokens.len() > LEVEL_CAP => {
                let (seeds, pool) = knn[k];
                Ok(pool.forward(g, seeds, t)?)
            }
            _ => Ok(t),
        }
    }

    /// Runs the three blocks. `early` are the first two block inputs (raw in
    /// the kNN variant, where they are pooled here; already reduced
    /// otherwise); `last` is the reduced final level, whose positions are
    /// Fourier-encoded and added to its tokens.
    pub fn run_blocks(
        &self,
        g: &mut Graph,
        queries: Var,
        early: [&LevelTokens; 2],
        last: &LevelTokens,
    ) -> Result<(Var, [usize; 3]), SparsifierError> {
        let d = self.config.d_f;
        for t in early.iter().chain([&last]) {
            if t.features.cols() != d {
                return Err(NumericsError::Shape(format!("level width {} but d_f = {d}", t.features.cols())).into());
            }
            if t.is_empty() {
                return Err(NumericsError::EmptyInput.into());
            }
        }
        // Blocks act on query rows independently, and a single task token
        // makes every query row equal: run one row and broadcast it.
        let q = g.value(queries);
        let n = q.rows();
        let bits = |r: usize| q.row(r).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let shared = n > 1 && (1..n).all(|r| bits(r) == bits(0));
        let mut x = if shared { g.slice_rows(queries, 0, 1)? } else { queries };
        let mut rows = [0; 3];
        for k in 0..3 {
            let kv = if k < 2 && self.config.variant != Variant::NoDepthwise {
                self.level_kv(g, k, early[k])?
            } else {
                let t = g.constant(last.features.clone());
                if k == 2 {
                    let pe = self.fourier(g, &last.positions)?;
                    // Scaled to unit norm so positions do not swamp the
                    // unit-norm language features.
                    let pe = g.scale(pe, (2.0 / d as f64).sqrt());
                    g.add(t, pe)?
                } else {
                    t
                }
            };
            rows[k] = g.value(kv).rows();
            x = self.blocks[k].forward(g, x, kv)?;
        }
        if shared {
            x = g.gather_rows(x, &vec![0; n])?;
        }
        Ok((x, rows))
    }

    /// Task-guided sparsification of a prepared scene.
    pub fn task_guided(&self, g: &mut Graph, scene: &PreparedScene, queries: Var) -> Result<(Var, [usize; 3]), SparsifierError> {
        match self.config.variant {
            Variant::KnnDownsample => {
                let l = &scene.levels.levels;
                self.run_blocks(g, queries, [&l[0], &l[1]], scene.knn_final())
            }
            _ => {
                let u = &scene.uniform;
                self.run_blocks(g, queries, [&u[0], &u[1]], &u[2])
            }
        }
    }

    /// Pools the 4 region seeds over the features of the splats found by
    /// the growing-radius search around `center`.
    pub fn roi(&self, g: &mut Graph, scene: &PreparedScene, center: [f64; 3]) -> Result<(Var, RoiResult), SparsifierError> {
        let found = scene.grid.roi_members(center, self.config.roi_radius_m, ROI_STEP_M)?;
        let feats = g.constant(scene.member_features(&found.members));
        let out = self.roi_pool.forward(g, self.roi_seeds, feats)?;
        Ok((out, found))
    }

    pub fn project(&self, g: &mut Graph, x: Var) -> Result<Var, SparsifierError> {
        let y = g.matmul(x, self.proj_w)?;
        Ok(g.add_row(y, self.proj_b)?)
    }

    /// `[proj(roi)] ++ [proj(scene)] ++ task_lm`
    pub fn assemble(&self, g: &mut Graph, enc: &Encoded, task_lm: Var) -> Result<Var, SparsifierError> {
        let mut parts = Vec::with_capacity(3);
        if let Some(r) = enc.roi {
            parts.push(self.project(g, r)?);
        }
        parts.push(self.project(g, enc.scene_tokens)?);
        parts.push(task_lm);
        Ok(g.concat_rows(&parts)?)
    }

    /// Task-guided tokens when the task input is the encoded location alone.
    pub fn encode_location(&self, g: &mut Graph, scene: &PreparedScene, loc: &Location) -> Result<Var, SparsifierError> {
        let task = self.location_row(g, loc)?;
        let queries = self.make_queries(g, Some(task))?;
        Ok(self.task_guided(g, scene, queries)?.0)
    }

    /// Full dual-sparsifier pass for one prompt.
    pub fn encode(&self, g: &mut Graph, scene: &PreparedScene, prompt: &TaskPrompt) -> Result<Encoded, SparsifierError> {
        let task = if self.config.variant == Variant::LearnableQueries {
            prompt.validate()?;
            None
        } else {
            Some(self.embed_task(g, prompt)?)
        };
        let queries = self.make_queries(g, task)?;
        let (scene_tokens, kv_rows) = self.task_guided(g, scene, queries)?;
        let (roi, roi_radius) = match &prompt.location {
            Some(loc) => {
                let (r, found) = self.roi(g, scene, loc.center())?;
                (Some(r), Some(found.radius))
            }
            None => (None, None),
        };
        Ok(Encoded { scene_tokens, roi, roi_radius, kv_rows })
    }
}

pub fn embed_task(prompt: &TaskPrompt, stack: &SparsifierStack, store: &ParamStore) -> Result<Tensor2D, SparsifierError> {
    let mut g = Graph::new();
    let s = stack.bind_constants(&mut g, store)?;
    let v = s.embed_task(&mut g, prompt)?;
    Ok(g.value(v).clone())
}

pub fn make_queries(task_embeds: &Tensor2D, stack: &SparsifierStack, store: &ParamStore) -> Result<Tensor2D, SparsifierError> {
    let mut g = Graph::new();
    let s = stack.bind_constants(&mut g, store)?;
    let t = g.constant(task_embeds.clone());
    let q = s.make_queries(&mut g, Some(t))?;
    Ok(g.value(q).clone())
}

/// Sparsifies raw decoder levels (coarse to fine). The no_depthwise variant
/// accepts a single final level.
pub fn task_guided_sparsify(
    levels: &[LevelTokens],
    queries: &Tensor2D,
    stack: &SparsifierStack,
    store: &ParamStore,
) -> Result<Tensor2D, SparsifierError> {
    let variant = stack.config.variant;
    let fine = match (levels.len(), variant) {
        (3, _) => &levels[2],
        (1, Variant::NoDepthwise) => &levels[0],
        (n, v) => return Err(SparsifierError::Config(format!("variant {v} cannot run on {n} levels"))),
    };
    let mut g = Graph::new();
    let s = stack.bind_constants(&mut g, store)?;
    let q = g.constant(queries.clone());
    let out = if variant == Variant::KnnDownsample {
        let last = downsample_knn_variant(fine, LEVEL_CAP);
        s.run_blocks(&mut g, q, [&levels[0], &levels[1]], &last)?.0
    } else {
        let last = downsample_uniform(fine, LEVEL_CAP);
        let early: Vec<LevelTokens> = levels.iter().take(2).map(|l| downsample_uniform(l, LEVEL_CAP)).collect();
        let e = if early.len() == 2 { [&early[0], &early[1]] } else { [&last, &last] };
        s.run_blocks(&mut g, q, e, &last)?.0
    };
    Ok(g.value(out).clone())
}

/// Region tokens around `loc`, with the search result behind them.
pub fn location_guided_sparsify(
    scene: &GaussianScene,
    grid: &SpatialGrid,
    loc: &Location,
    stack: &SparsifierStack,
    store: &ParamStore,
) -> Result<(Tensor2D, RoiResult), SparsifierError> {
    let found = grid.roi_members(loc.center(), stack.config.roi_radius_m, ROI_STEP_M)?;
    let mut g = Graph::new();
    let s = stack.bind_constants(&mut g, store)?;
    let feats = g.constant(member_features(scene, &found.members));
    let out = s.roi_pool.forward(&mut g, s.roi_seeds, feats)?;
    Ok((g.value(out).clone(), found))
}

pub fn project_and_assemble(
    roi: Option<&Tensor2D>,
    scene_tokens: &Tensor2D,
    task_embeds_lm: &Tensor2D,
    stack: &SparsifierStack,
    store: &ParamStore,
) -> Result<Tensor2D, SparsifierError> {
    if scene_tokens.rows() != SCENE_TOKENS {
        return Err(NumericsError::Shape(format!("{} scene tokens, expected {SCENE_TOKENS}", scene_tokens.rows())).into());
    }
    let mut g = Graph::new();
    let s = stack.bind_constants(&mut g, store)?;
    let enc = Encoded {
        scene_tokens: g.constant(scene_tokens.clone()),
        roi: roi.map(|r| g.constant(r.clone())),
        roi_radius: None,
        kv_rows: [0; 3],
    };
    let t = g.constant(task_embeds_lm.clone());
    let out = s.assemble(&mut g, &enc, t)?;
    Ok(g.value(out).clone())
}
