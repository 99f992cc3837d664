"""Session embedding network: fused feature sub-embeddings, SGNS objective,
cross-brand regularizer, manual gradients, and the training loop.

Every hotel is embedded as relu([V_c, V_a, V_g] @ W_e) where each V_* is a
normalize-then-relu projection of an input feature vector (the click one-hot,
amenities, geo). Training is per-pair SGNS with negatives drawn from the
target hotel's market. When a frozen source-brand space is supplied, a
penalty lam * ||V_target - V_source|| (or its square) ties each mapped
hotel's embedding to its source counterpart.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as _expit

from .data import BrandMapping, HotelCatalog, SessionSet
from .pairs import TrainingPair, build_epoch_stream

EPS_NORM = 1e-12


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered; carries (step, pair) diagnostics."""

    def __init__(self, step: int, pair: TrainingPair, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step} on pair "
                         f"({pair.target}, {pair.context})")
        self.step = step
        self.pair = pair


@dataclass
class TrainConfig:
    d_c: int = 16
    d_a: int = 16
    d_g: int = 16
    d: int = 32
    window: int = 3
    n_neg: int = 5
    learning_rate: float = 0.05
    epochs: int = 10
    l2_weight: float = 1e-6          # weight decay on touched parameters
    lam: float = 0.0                 # cross-brand regularizer strength
    reg_variant: str = "norm"        # "norm" | "squared_norm"
    optimizer: str = "sgd"           # "sgd" | "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 10_000

    def validate(self):
        if min(self.d_c, self.d_a, self.d_g, self.d, self.window,
               self.n_neg, self.epochs, self.eval_every) < 1:
            raise ValueError("size fields must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2_weight < 0 or self.lam < 0:
            raise ValueError("l2_weight and lam must be >= 0")
        if self.reg_variant not in ("norm", "squared_norm"):
            raise ValueError(f"unknown reg_variant {self.reg_variant!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class ModelParams:
    """Trainable matrices; W_c rows follow the catalog's hotel order."""
    w_c: np.ndarray  # |H| x d_c
    w_a: np.ndarray  # d_a_in x d_a
    w_g: np.ndarray  # d_g_in x d_g
    w_e: np.ndarray  # (d_c + d_a + d_g) x d

    def copy(self) -> "ModelParams":
        return ModelParams(self.w_c.copy(), self.w_a.copy(),
                           self.w_g.copy(), self.w_e.copy())


@dataclass
class EmbeddingSpace:
    dim: int
    brand: str
    vectors: dict[str, np.ndarray]

    def matrix(self, ids: list[str]) -> np.ndarray:
        return np.stack([self.vectors[h] for h in ids])


@dataclass
class Gradients:
    """Per-pair gradient set; w_c is sparse by touched row."""
    w_c_rows: dict[int, np.ndarray]
    w_a: np.ndarray
    w_g: np.ndarray
    w_e: np.ndarray


def feature_embed(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """relu(x W / ||x W||); the zero vector when ||x W|| is (near) zero."""
    if len(x) != w.shape[0]:
        raise ValueError(f"dimension mismatch: {len(x)} vs {w.shape[0]}")
    y = x @ w
    norm = np.linalg.norm(y)
    if norm < EPS_NORM:
        return np.zeros_like(y)
    return np.maximum(y / norm, 0.0)


def _norm_relu(y: np.ndarray):
    """Forward of normalize-then-relu with the cache backprop needs."""
    norm = np.linalg.norm(y)
    if norm < EPS_NORM:
        return np.zeros_like(y), None, 0.0
    yhat = y / norm
    return np.maximum(yhat, 0.0), yhat, norm


def _norm_relu_back(du: np.ndarray, yhat, norm: float) -> np.ndarray:
    """Backprop through relu(y/||y||): normalize Jacobian (I - yy^T)/||y||
    composed with the relu mask."""
    if yhat is None:
        return np.zeros_like(du)
    masked = np.where(yhat > 0, du, 0.0)
    return (masked - yhat * (yhat @ masked)) / norm


class _Forward:
    """Cache of one hotel's forward pass."""
    __slots__ = ("idx", "u", "yhat_c", "n_c", "yhat_a", "n_a", "yhat_g", "n_g",
                 "z", "v")


def _forward_hotel(idx: int, params: ModelParams, amenities: np.ndarray,
                   geo: np.ndarray) -> _Forward:
    f = _Forward()
    f.idx = idx
    u_c, f.yhat_c, f.n_c = _norm_relu(params.w_c[idx])
    u_a, f.yhat_a, f.n_a = _norm_relu(amenities[idx] @ params.w_a)
    u_g, f.yhat_g, f.n_g = _norm_relu(geo[idx] @ params.w_g)
    f.u = np.concatenate([u_c, u_a, u_g])
    f.z = f.u @ params.w_e
    f.v = np.maximum(f.z, 0.0)
    return f


def enriched_embedding(hotel_id: str, params: ModelParams,
                       catalog: HotelCatalog) -> np.ndarray:
    """Final embedding relu([V_c, V_a, V_g] @ W_e) for one hotel."""
    idx = catalog.index.get(hotel_id)
    if idx is None:
        raise ValueError(f"unknown hotel {hotel_id!r}")
    return _forward_hotel(idx, params, _amenity_cache(catalog),
                          _geo_cache(catalog)).v


def _amenity_cache(catalog: HotelCatalog) -> np.ndarray:
    if not hasattr(catalog, "_amenity_mat"):
        catalog._amenity_mat = catalog.amenity_matrix()
    return catalog._amenity_mat


def _geo_cache(catalog: HotelCatalog) -> np.ndarray:
    if not hasattr(catalog, "_geo_mat"):
        catalog._geo_mat = catalog.geo_matrix()
    return catalog._geo_mat


def _softplus(x: float) -> float:
    return float(np.logaddexp(0.0, x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sgns_loss(v_t: np.ndarray, v_ctx: np.ndarray, v_negs) -> float:
    """-ln sigma(t.ctx) - sum_i ln sigma(-t.neg_i), via softplus for stability."""
    loss = _softplus(-float(v_t @ v_ctx))
    for v_n in v_negs:
        loss += _softplus(float(v_t @ v_n))
    return loss


def da_loss(base: float, v_target: np.ndarray, v_source: np.ndarray,
            lam: float, variant: str = "norm") -> float:
    """Add the cross-brand closeness penalty to a base loss value."""
    diff = np.linalg.norm(v_target - v_source)
    if variant == "norm":
        return base + lam * diff
    if variant == "squared_norm":
        return base + lam * diff * diff
    raise ValueError(f"unknown variant {variant!r}")


def _resolve_source_vector(target_id: str, source_space: EmbeddingSpace | None,
                           mapping: BrandMapping | None):
    """Source-brand counterpart of a target hotel, or None when unmapped."""
    if mapping is not None:
        src_id = mapping.to_source(target_id)
        if src_id is None:
            return None
    else:
        src_id = target_id
    if source_space is None or src_id not in source_space.vectors:
        raise ValueError(
            f"hotel {target_id!r} is mapped but source space has no vector "
            f"for {src_id!r}")
    return source_space.vectors[src_id]


def _norm_relu_rows(y: np.ndarray):
    """Row-wise normalize-then-relu with backprop caches."""
    norms = np.sqrt(np.einsum("ij,ij->i", y, y))
    safe = norms >= EPS_NORM
    inv = np.where(safe, 1.0 / np.where(safe, norms, 1.0), 0.0)
    yhat = y * inv[:, None]
    return np.maximum(yhat, 0.0), yhat, inv


def _norm_relu_back_rows(du: np.ndarray, yhat: np.ndarray,
                         inv: np.ndarray) -> np.ndarray:
    masked = np.where(yhat > 0, du, 0.0)
    proj = np.einsum("ij,ij->i", yhat, masked)
    return (masked - yhat * proj[:, None]) * inv[:, None]


def gradients(pair: TrainingPair, params: ModelParams, catalog: HotelCatalog,
              cfg: TrainConfig, source_space: EmbeddingSpace | None = None,
              mapping: BrandMapping | None = None) -> tuple[Gradients, float]:
    """Exact analytic gradient of the per-pair loss (SGNS + regularizer +
    weight decay on touched parameters), plus the loss value.

    The forward/backward pass is batched over the pair's unique hotels;
    the math is identical to stacking _forward_hotel per hotel.
    """
    amenities = _amenity_cache(catalog)
    geo = _geo_cache(catalog)

    uniq: list[str] = []
    pos_of: dict[str, int] = {}
    for hid in (pair.target, pair.context, *pair.negatives):
        if hid not in pos_of:
            pos_of[hid] = len(uniq)
            uniq.append(hid)
    idxs = np.array([catalog.index[h] for h in uniq])

    y_c = params.w_c[idxs]
    u_c, yhat_c, inv_c = _norm_relu_rows(y_c)
    a_in = amenities[idxs]
    u_a, yhat_a, inv_a = _norm_relu_rows(a_in @ params.w_a)
    g_in = geo[idxs]
    u_g, yhat_g, inv_g = _norm_relu_rows(g_in @ params.w_g)
    u = np.concatenate([u_c, u_a, u_g], axis=1)
    z = u @ params.w_e
    v = np.maximum(z, 0.0)

    t = pos_of[pair.target]
    c = pos_of[pair.context]
    v_t = v[t]
    s_pos = float(v_t @ v[c])
    loss = _softplus(-s_pos)
    g_pos = -_sigmoid(-s_pos)

    dv = np.zeros_like(v)
    dv[t] += g_pos * v[c]
    dv[c] += g_pos * v_t
    neg_pos = np.array([pos_of[n] for n in pair.negatives])
    s_neg = v[neg_pos] @ v_t
    loss += float(np.sum(np.logaddexp(0.0, s_neg)))
    g_neg = _expit(s_neg)
    dv[t] += g_neg @ v[neg_pos]
    np.add.at(dv, neg_pos, g_neg[:, None] * v_t[None, :])

    if cfg.lam > 0:
        v_src = _resolve_source_vector(pair.target, source_space, mapping)
        if v_src is not None:
            diff = v_t - v_src
            norm = float(np.linalg.norm(diff))
            if cfg.reg_variant == "norm":
                loss += cfg.lam * norm
                if norm >= EPS_NORM:
                    dv[t] += cfg.lam / norm * diff
            else:
                loss += cfg.lam * norm * norm
                dv[t] += 2.0 * cfg.lam * diff

    dz = np.where(z > 0, dv, 0.0)
    dw_e = u.T @ dz
    du = dz @ params.w_e.T
    d_c, d_a = cfg.d_c, cfg.d_a
    dy_c = _norm_relu_back_rows(du[:, :d_c], yhat_c, inv_c)
    dy_a = _norm_relu_back_rows(du[:, d_c:d_c + d_a], yhat_a, inv_a)
    dy_g = _norm_relu_back_rows(du[:, d_c + d_a:], yhat_g, inv_g)
    dw_a = a_in.T @ dy_a
    dw_g = g_in.T @ dy_g

    mu = cfg.l2_weight
    if mu > 0:
        loss += 0.5 * mu * (float(np.einsum("ij,ij->", y_c, y_c))
                            + float(np.einsum("ij,ij->", params.w_a, params.w_a))
                            + float(np.einsum("ij,ij->", params.w_g, params.w_g))
                            + float(np.einsum("ij,ij->", params.w_e, params.w_e)))
        dy_c = dy_c + mu * y_c
        dw_a += mu * params.w_a
        dw_g += mu * params.w_g
        dw_e += mu * params.w_e

    w_c_rows = {int(idxs[i]): dy_c[i] for i in range(len(uniq))}
    return Gradients(w_c_rows=w_c_rows, w_a=dw_a, w_g=dw_g, w_e=dw_e), loss


def init_params(catalog: HotelCatalog, cfg: TrainConfig,
                rng_factory) -> ModelParams:
    """Seeded uniform init.

    The sub-embedding matrices are scale-invariant (the normalize layer
    divides their scale out), so they use the word2vec-style [-0.5/cols,
    0.5/cols] range. W_e is NOT scale-invariant: at 0.5/cols the exported
    embeddings start with norms ~0.05 and the contrastive gradients, which
    are proportional to the embeddings themselves, never bootstrap. It gets
    a Glorot range instead.
    """
    def uni(label, shape, half):
        return rng_factory(label).uniform(-half, half, size=shape)

    d_cat = cfg.d_c + cfg.d_a + cfg.d_g
    return ModelParams(
        w_c=uni("w_c", (len(catalog), cfg.d_c), 0.5 / cfg.d_c),
        w_a=uni("w_a", (catalog.amenity_dim, cfg.d_a), 0.5 / cfg.d_a),
        w_g=uni("w_g", (catalog.geo_dim, cfg.d_g), 0.5 / cfg.d_g),
        w_e=uni("w_e", (d_cat, cfg.d), math.sqrt(6.0 / (d_cat + cfg.d))),
    )


class _AdamState:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.m = {n: np.zeros_like(getattr(params, n))
                  for n in ("w_c", "w_a", "w_g", "w_e")}
        self.v = {n: np.zeros_like(getattr(params, n))
                  for n in ("w_c", "w_a", "w_g", "w_e")}
        self.t = 0
        self.cfg = cfg

    def update(self, params: ModelParams, grads: Gradients):
        # lazy variant: W_c moments advance only on touched rows, with the
        # global step used for bias correction
        cfg = self.cfg
        self.t += 1
        b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.learning_rate
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name in ("w_a", "w_g", "w_e"):
            g = getattr(grads, name)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            getattr(params, name)[...] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        for idx, g in grads.w_c_rows.items():
            m, v = self.m["w_c"][idx], self.v["w_c"][idx]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params.w_c[idx] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _sgd_update(params: ModelParams, grads: Gradients, lr: float):
    for idx, g in grads.w_c_rows.items():
        params.w_c[idx] -= lr * g
    params.w_a -= lr * grads.w_a
    params.w_g -= lr * grads.w_g
    params.w_e -= lr * grads.w_e


def train(train_sessions: SessionSet, catalog: HotelCatalog, cfg: TrainConfig,
          source_space: EmbeddingSpace | None = None,
          mapping: BrandMapping | None = None,
          curve_sink=None, epoch_loss_sink=None) -> ModelParams:
    """Deterministic single-worker training loop.

    curve_sink, when given, is called as curve_sink(step, space) every
    cfg.eval_every pair updates with a freshly exported embedding space.
    epoch_loss_sink is called as epoch_loss_sink(epoch, mean_pair_loss)
    at the end of every epoch.
    """
    cfg.validate()
    if cfg.lam > 0 and source_space is None:
        raise ValueError("lam > 0 requires a frozen source embedding space")

    from .rng import substream
    params = init_params(catalog, cfg,
                         lambda label: substream(cfg.seed, "init", label))
    adam = _AdamState(params, cfg) if cfg.optimizer == "adam" else None

    step = 0
    for epoch in range(cfg.epochs):
        skip_counter = [0]
        loss_sum = 0.0
        n_pairs = 0
        stream = build_epoch_stream(train_sessions, catalog, cfg.window,
                                    cfg.n_neg, cfg.seed, epoch, skip_counter)
        for pair in stream:
            grads, loss = gradients(pair, params, catalog, cfg,
                                    source_space, mapping)
            if not np.isfinite(loss):
                raise TrainingDiverged(step, pair, loss)
            if adam is not None:
                adam.update(params, grads)
            else:
                _sgd_update(params, grads, cfg.learning_rate)
            loss_sum += loss
            n_pairs += 1
            step += 1
            if curve_sink is not None and step % cfg.eval_every == 0:
                curve_sink(step, export_embeddings(params, catalog))
        if epoch_loss_sink is not None and n_pairs:
            epoch_loss_sink(epoch, loss_sum / n_pairs)
    return params


def export_embeddings(params: ModelParams, catalog: HotelCatalog,
                      brand: str = "unknown") -> EmbeddingSpace:
    """Materialize the enriched embedding of every catalog hotel."""
    amenities = _amenity_cache(catalog)
    geo = _geo_cache(catalog)
    vectors = {hid: _forward_hotel(idx, params, amenities, geo).v
               for hid, idx in catalog.index.items()}
    return EmbeddingSpace(dim=params.w_e.shape[1], brand=brand, vectors=vectors)


# ---------------------------------------------------------------------------
# embedding file format: "<count> <dim>" header then "<id> <v1> ... <vdim>"

def write_embeddings(space: EmbeddingSpace, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(space.vectors)} {space.dim}\n")
        for hid in sorted(space.vectors):
            coords = " ".join(repr(float(x)) for x in space.vectors[hid])
            fh.write(f"{hid} {coords}\n")


def read_embeddings(path, brand: str = "unknown") -> EmbeddingSpace:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: bad header")
        count, dim = int(header[0]), int(header[1])
        vectors = {}
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ValueError(f"{path}: expected {dim} coordinates for "
                                 f"{parts[0]!r}, got {len(parts) - 1}")
            vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
    if len(vectors) != count:
        raise ValueError(f"{path}: header count {count} != {len(vectors)} rows")
    return EmbeddingSpace(dim=dim, brand=brand, vectors=vectors)
