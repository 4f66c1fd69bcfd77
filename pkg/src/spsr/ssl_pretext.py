"""Self-supervised structure learning: contrastive prediction and jigsaw puzzles.

Both pretext tasks operate on the structure extractor's stride-4 feature
grid and sample positions whose 31x31 input windows are pairwise disjoint,
so the tasks can only be solved from structural consistency, never from
shared pixels. Two grid positions have disjoint windows iff they are at
least ceil(31/4) = 8 apart along some axis; all fixed offsets below use
exactly that minimal separation.

Contrastive prediction concatenates the context features (two horizontal
neighbors, two vertical neighbors, or the four arms of a cross around the
target), pushes them through a small MLP, and scores the prediction against
the target feature and negatives from disjoint locations with an InfoNCE
loss over temperature-scaled cosine similarities. The jigsaw task shuffles
the four features of an anchored 2x2 position set with one of the 4! = 24
permutations and trains an MLP to classify which one.
"""

import math
from dataclasses import dataclass
from itertools import permutations
from typing import NamedTuple, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import init_conv_linear, seeded_rng
from .errors import ConfigError, DataError, ShapeError
from .nse import (FEATURE_STRIDE, NSE, NSEConfig, RECEPTIVE_FIELD,
                  STRUCTURE_CHANNELS, build_nse)

STRATEGIES = ("horizontal", "vertical", "cross")


def min_disjoint_separation(rf: int = RECEPTIVE_FIELD, stride: int = FEATURE_STRIDE) -> int:
    """Smallest feature-grid distance guaranteeing disjoint input windows.

    Window centers are ``stride`` input pixels apart, so a grid distance d
    separates the windows iff stride * d >= rf, i.e. d >= ceil(rf / stride).
    """
    return math.ceil(rf / stride)


def context_offsets(strategy: str) -> tuple[tuple[int, int], ...]:
    """Fixed (row, col) offsets of the context positions around the target."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown sampling strategy {strategy!r}; choose from {STRATEGIES}")
    sep = min_disjoint_separation()
    if strategy == "horizontal":
        return ((0, -sep), (0, sep))
    if strategy == "vertical":
        return ((-sep, 0), (sep, 0))
    return ((-sep, 0), (sep, 0), (0, -sep), (0, sep))


def windows_disjoint(a: tuple[int, int], b: tuple[int, int]) -> bool:
    sep = min_disjoint_separation()
    return max(abs(a[0] - b[0]), abs(a[1] - b[1])) >= sep


def _rand_index(n: int, rng: torch.Generator) -> int:
    return int(torch.randint(n, (1,), generator=rng).item())


def sample_prediction_positions(grid_shape: tuple[int, int], strategy: str,
                                num_negatives: int, rng: torch.Generator):
    """Draw (context, target, negatives) grid positions for one instance.

    The target is uniform over positions whose context offsets stay in
    bounds; negatives are uniform without replacement over positions with
    windows disjoint from the target's and every context's, capped at the
    available candidate count.
    """
    rows, cols = grid_shape
    offsets = context_offsets(strategy)
    sep = min_disjoint_separation()
    r_lo = max(0, *(-dr for dr, _ in offsets))
    r_hi = rows - 1 - max(0, *(dr for dr, _ in offsets))
    c_lo = max(0, *(-dc for _, dc in offsets))
    c_hi = cols - 1 - max(0, *(dc for _, dc in offsets))
    if r_hi < r_lo or c_hi < c_lo:
        raise DataError(
            f"feature grid {rows}x{cols} too small for strategy {strategy!r} "
            f"at separation {sep}"
        )
    target = (r_lo + _rand_index(r_hi - r_lo + 1, rng),
              c_lo + _rand_index(c_hi - c_lo + 1, rng))
    context = [(target[0] + dr, target[1] + dc) for dr, dc in offsets]

    keep_away = [target] + context
    rr = torch.arange(rows).view(-1, 1).expand(rows, cols)
    cc = torch.arange(cols).view(1, -1).expand(rows, cols)
    ok = torch.ones(rows, cols, dtype=torch.bool)
    for pr, pc in keep_away:
        ok &= torch.maximum((rr - pr).abs(), (cc - pc).abs()) >= sep
    candidates = ok.nonzero()
    if candidates.shape[0] == 0:
        raise DataError(
            f"no negative candidates on a {rows}x{cols} grid after excluding "
            f"windows overlapping the target/context"
        )
    take = min(num_negatives, candidates.shape[0])
    picked = candidates[torch.randperm(candidates.shape[0], generator=rng)[:take]]
    negatives = [(int(r), int(c)) for r, c in picked]
    return context, target, negatives


def infonce_loss(pred: torch.Tensor, positive: torch.Tensor,
                 negatives: torch.Tensor | Sequence[torch.Tensor],
                 tau: float = 64.0) -> torch.Tensor:
    """Temperature-scaled cosine InfoNCE, computed in log space.

    loss = -log[ exp(t*cos(pos, pred)) / sum over {pos} + negatives ]; at
    tau = 64 the naive exponentials overflow, logsumexp does not.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if not isinstance(negatives, torch.Tensor):
        negatives = torch.stack(list(negatives))
    candidates = torch.cat([positive.unsqueeze(0), negatives])
    if candidates.shape[-1] != pred.shape[-1]:
        raise ShapeError(
            f"feature dims differ: pred {pred.shape[-1]}, candidates {candidates.shape[-1]}"
        )
    norms = candidates.norm(dim=-1)
    pred_norm = pred.norm()
    if pred_norm == 0 or (norms == 0).any():
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    sims = tau * (candidates @ pred) / (norms * pred_norm)
    return torch.logsumexp(sims, dim=0) - sims[0]


def jigsaw_permutations() -> list[tuple[int, ...]]:
    """All 24 orderings of 4 tiles, lexicographic; index = class label."""
    return list(permutations(range(4)))


_PERMS = jigsaw_permutations()


def jigsaw_grid_positions(grid_shape: tuple[int, int], rng: torch.Generator):
    """Anchor a 2x2 set of positions at pairwise separation 8, uniformly."""
    rows, cols = grid_shape
    sep = min_disjoint_separation()
    if rows <= sep or cols <= sep:
        raise DataError(
            f"feature grid {rows}x{cols} too small for a 2x2 set at separation {sep}"
        )
    r = _rand_index(rows - sep, rng)
    c = _rand_index(cols - sep, rng)
    return [(r, c), (r, c + sep), (r + sep, c), (r + sep, c + sep)]


def sample_jigsaw_instance(feature_map: torch.Tensor, rng: torch.Generator):
    """Shuffle an anchored 2x2 feature set; returns ([4, C] vectors, label)."""
    if feature_map.dim() != 3:
        raise ShapeError(f"expected a [C, H, W] feature map, got {tuple(feature_map.shape)}")
    positions = jigsaw_grid_positions(feature_map.shape[-2:], rng)
    label = _rand_index(len(_PERMS), rng)
    perm = _PERMS[label]
    shuffled = torch.stack([feature_map[:, positions[p][0], positions[p][1]] for p in perm])
    return shuffled, label


def jigsaw_loss(logits: torch.Tensor, label: int) -> torch.Tensor:
    if logits.dim() != 1 or logits.shape[0] != len(_PERMS):
        raise ShapeError(f"expected [{len(_PERMS)}] logits, got {tuple(logits.shape)}")
    return -F.log_softmax(logits, dim=0)[label]


@dataclass
class PredictorConfig:
    num_fc_layers: int = 3
    hidden_dim: int = 128
    context_count: int = 2
    feature_dim: int = STRUCTURE_CHANNELS

    @classmethod
    def for_strategy(cls, strategy: str) -> "PredictorConfig":
        return cls(context_count=len(context_offsets(strategy)))

    @property
    def in_dim(self) -> int:
        return self.context_count * self.feature_dim

    def validate(self) -> None:
        if self.num_fc_layers < 1:
            raise ConfigError("predictor needs at least one fc layer")
        if self.feature_dim != STRUCTURE_CHANNELS:
            raise ConfigError(
                f"predictor output dim must match the extractor's "
                f"{STRUCTURE_CHANNELS} channels, got {self.feature_dim}"
            )


@dataclass
class JigsawClassifierConfig:
    num_fc_layers: int = 3
    hidden_dim: int = 128
    feature_dim: int = STRUCTURE_CHANNELS

    @property
    def in_dim(self) -> int:
        return 4 * self.feature_dim

    @property
    def out_dim(self) -> int:
        return len(_PERMS)

    def validate(self) -> None:
        if self.num_fc_layers < 1:
            raise ConfigError("classifier needs at least one fc layer")


def _mlp(in_dim: int, hidden: int, out_dim: int, layers: int) -> nn.Sequential:
    dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
    parts: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        parts.append(nn.Linear(a, b))
        if i < layers - 1:
            parts.append(nn.ReLU(inplace=True))
    return nn.Sequential(*parts)


class Predictor(nn.Module):
    """MLP predicting the target structure feature from concatenated context."""

    def __init__(self, config: PredictorConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.net = _mlp(config.in_dim, config.hidden_dim, config.feature_dim,
                        config.num_fc_layers)

    def forward(self, context_concat):
        return self.net(context_concat)


class JigsawClassifier(nn.Module):
    """MLP classifying which permutation shuffled a 2x2 feature set."""

    def __init__(self, config: JigsawClassifierConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.net = _mlp(config.in_dim, config.hidden_dim, config.out_dim,
                        config.num_fc_layers)

    def forward(self, features_concat):
        return self.net(features_concat)


def build_predictor(config: PredictorConfig, rng_seed: int) -> Predictor:
    model = Predictor(config)
    init_conv_linear(model, seeded_rng(rng_seed))
    return model


def build_jigsaw_classifier(config: JigsawClassifierConfig, rng_seed: int) -> JigsawClassifier:
    model = JigsawClassifier(config)
    init_conv_linear(model, seeded_rng(rng_seed))
    return model


@dataclass
class SSLOptConfig:
    """Optimization settings shared by both pretext trainers."""
    total_steps: int = 500
    batch_size: int = 48
    patch_size: int = 420
    lr: float = 1e-3
    lr_decay_factor: float = 0.2
    lr_decay_every_epochs: int = 20
    steps_per_epoch: int | None = None  # None: one pass over the dataset
    strategy: str = "horizontal"
    num_negatives: int = 2000
    tau: float = 64.0
    seed: int = 0
    log_every: int = 50

    def validate(self) -> None:
        if self.patch_size % FEATURE_STRIDE != 0:
            raise ConfigError(f"patch_size must be a multiple of {FEATURE_STRIDE}")
        if self.patch_size < RECEPTIVE_FIELD:
            raise ConfigError(f"patch_size must be >= {RECEPTIVE_FIELD}")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("total_steps and batch_size must be positive")
        context_offsets(self.strategy)


class SSLTrainResult(NamedTuple):
    nse: NSE
    head: nn.Module
    loss_history: list[float]


def _as_images(dataset) -> list[torch.Tensor]:
    images = []
    for item in dataset:
        img = item[0] if isinstance(item, (tuple, list)) else item
        images.append(img)
    if not images:
        raise DataError("dataset is empty")
    return images


def _sample_patches(images: list[torch.Tensor], patch: int, count: int,
                    rng: torch.Generator) -> torch.Tensor:
    usable = [im for im in images if im.shape[-2] >= patch and im.shape[-1] >= patch]
    if not usable:
        raise DataError(f"no image is large enough for {patch}x{patch} patches")
    out = []
    for _ in range(count):
        im = usable[_rand_index(len(usable), rng)]
        r = _rand_index(im.shape[-2] - patch + 1, rng)
        c = _rand_index(im.shape[-1] - patch + 1, rng)
        out.append(im[:, r:r + patch, c:c + patch])
    return torch.stack(out)


def _gather(features: torch.Tensor, positions) -> torch.Tensor:
    return torch.stack([features[:, r, c] for r, c in positions])


def _epoch_length(opt: SSLOptConfig, n_images: int) -> int:
    if opt.steps_per_epoch is not None:
        return max(1, opt.steps_per_epoch)
    return max(1, n_images // opt.batch_size)


def _lr_at(opt: SSLOptConfig, step: int, n_images: int) -> float:
    epoch = step // _epoch_length(opt, n_images)
    return opt.lr * opt.lr_decay_factor ** (epoch // opt.lr_decay_every_epochs)


def train_nse_contrastive(dataset, nse_config: NSEConfig,
                          predictor_config: PredictorConfig | None,
                          opt_config: SSLOptConfig,
                          nse: NSE | None = None,
                          freeze_extractor: bool = False,
                          callback=None) -> SSLTrainResult:
    """Jointly optimize extractor and predictor on contrastive prediction.

    Pass an existing ``nse`` plus ``freeze_extractor=True`` to finetune an
    evaluation head with the feature weights fixed. ``callback``, if given,
    is invoked as callback(step, nse, head, loss) after every step; use it
    for logging and periodic checkpoints.
    """
    opt_config.validate()
    images = _as_images(dataset)
    if predictor_config is None:
        predictor_config = PredictorConfig.for_strategy(opt_config.strategy)
    if predictor_config.context_count != len(context_offsets(opt_config.strategy)):
        raise ConfigError(
            f"predictor context_count {predictor_config.context_count} does not "
            f"match strategy {opt_config.strategy!r}"
        )
    rng = seeded_rng(opt_config.seed)
    if nse is None:
        nse = build_nse(nse_config, opt_config.seed)
    predictor = build_predictor(predictor_config, opt_config.seed + 1)

    params = list(predictor.parameters())
    if freeze_extractor:
        for p in nse.parameters():
            p.requires_grad_(False)
    else:
        params += list(nse.parameters())
    optim = torch.optim.Adam(params, lr=opt_config.lr)

    history = []
    for step in range(opt_config.total_steps):
        for group in optim.param_groups:
            group["lr"] = _lr_at(opt_config, step, len(images))
        patches = _sample_patches(images, opt_config.patch_size, opt_config.batch_size, rng)
        feats = nse(patches)
        losses = []
        for b in range(feats.shape[0]):
            context, target, negatives = sample_prediction_positions(
                feats.shape[-2:], opt_config.strategy, opt_config.num_negatives, rng)
            pred = predictor(_gather(feats[b], context).reshape(-1))
            losses.append(infonce_loss(
                pred, feats[b][:, target[0], target[1]],
                _gather(feats[b], negatives), opt_config.tau))
        loss = torch.stack(losses).mean()
        optim.zero_grad()
        loss.backward()
        optim.step()
        history.append(float(loss.detach()))
        if callback is not None:
            callback(step, nse, predictor, history[-1])
    return SSLTrainResult(nse, predictor, history)


def train_nse_jigsaw(dataset, nse_config: NSEConfig,
                     classifier_config: JigsawClassifierConfig | None,
                     opt_config: SSLOptConfig,
                     nse: NSE | None = None,
                     freeze_extractor: bool = False,
                     callback=None) -> SSLTrainResult:
    """Jointly optimize extractor and classifier on permutation solving."""
    opt_config.validate()
    images = _as_images(dataset)
    if classifier_config is None:
        classifier_config = JigsawClassifierConfig()
    rng = seeded_rng(opt_config.seed)
    if nse is None:
        nse = build_nse(nse_config, opt_config.seed)
    classifier = build_jigsaw_classifier(classifier_config, opt_config.seed + 1)

    params = list(classifier.parameters())
    if freeze_extractor:
        for p in nse.parameters():
            p.requires_grad_(False)
    else:
        params += list(nse.parameters())
    optim = torch.optim.Adam(params, lr=opt_config.lr)

    history = []
    for step in range(opt_config.total_steps):
        for group in optim.param_groups:
            group["lr"] = _lr_at(opt_config, step, len(images))
        patches = _sample_patches(images, opt_config.patch_size, opt_config.batch_size, rng)
        feats = nse(patches)
        inputs, labels = [], []
        for b in range(feats.shape[0]):
            shuffled, label = sample_jigsaw_instance(feats[b], rng)
            inputs.append(shuffled.reshape(-1))
            labels.append(label)
        logits = classifier(torch.stack(inputs))
        loss = F.cross_entropy(logits, torch.tensor(labels))
        optim.zero_grad()
        loss.backward()
        optim.step()
        history.append(float(loss.detach()))
        if callback is not None:
            callback(step, nse, classifier, history[-1])
    return SSLTrainResult(nse, classifier, history)


def _tile_patches(img: torch.Tensor, patch: int):
    for r in range(0, img.shape[-2] - patch + 1, patch):
        for c in range(0, img.shape[-1] - patch + 1, patch):
            yield img[:, r:r + patch, c:c + patch]


def evaluate_contrastive_top1(nse: NSE, predictor: Predictor, dataset,
                              rng: torch.Generator, patch_size: int = 200,
                              strategy: str = "horizontal",
                              num_negatives: int | None = None) -> tuple[float, int]:
    """Top-1 retrieval accuracy of the predicted feature, averaged over
    densely tiled patches (one random anchor each).

    With num_negatives=None the prediction is ranked against every
    disjoint candidate on the patch; pass a count to subsample. Returns
    (accuracy, n_samples)."""
    patch = patch_size - patch_size % FEATURE_STRIDE
    images = _as_images(dataset)
    hits, total = 0, 0
    with torch.no_grad():
        for img in images:
            for crop in _tile_patches(img, patch):
                feats = nse(crop.unsqueeze(0))[0]
                want = num_negatives
                if want is None:
                    want = feats.shape[-2] * feats.shape[-1]
                context, target, negatives = sample_prediction_positions(
                    feats.shape[-2:], strategy, want, rng)
                pred = predictor(_gather(feats, context).reshape(-1))
                candidates = _gather(feats, [target] + negatives)
                sims = F.cosine_similarity(candidates, pred.unsqueeze(0))
                hits += int(sims.argmax() == 0)
                total += 1
    if total == 0:
        raise DataError(f"no image admits a {patch}x{patch} patch")
    return hits / total, total


def evaluate_jigsaw_accuracy(nse: NSE, classifier: JigsawClassifier, dataset,
                             rng: torch.Generator, patch_size: int = 84) -> tuple[float, int]:
    """Permutation classification rate over densely tiled patches."""
    patch = patch_size - patch_size % FEATURE_STRIDE
    images = _as_images(dataset)
    hits, total = 0, 0
    with torch.no_grad():
        for img in images:
            for crop in _tile_patches(img, patch):
                feats = nse(crop.unsqueeze(0))[0]
                shuffled, label = sample_jigsaw_instance(feats, rng)
                logits = classifier(shuffled.reshape(-1).unsqueeze(0))[0]
                hits += int(logits.argmax() == label)
                total += 1
    if total == 0:
        raise DataError(f"no image admits a {patch}x{patch} patch")
    return hits / total, total
