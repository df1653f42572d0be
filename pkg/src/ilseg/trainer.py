"""Training, tiled inference and cross-validated comparison of the experiment variants.

Variants:

``seg``             segmentation head only, image input
``seg_pp``          ``seg`` network; probability map multiplied by the likelihood volume
``seg_il_in``       likelihood volume fed as a second input channel
``seg_il``          second output head regresses the likelihood volume (auxiliary task)
``seg_il_shifted``  as ``seg_il`` with the likelihood model shifted by ``shift_delta``
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import ildist, metrics, optim
from .diffusion import DiffusionParams, diffuse
from .errors import ConfigError, DataError, NumericalError
from .losses import combined_loss
from .phantom import load_manifest
from .tensornet import DESK_CHANNELS, FULL_CHANNELS, Network, UNetConfig, init_parameters
from .tensornet.checkpoint import load_checkpoint, save_checkpoint
from .volgrid import MaskVolume, SoftVolume, Volume, read_svol, rotate_z_180, sample_subvolume

log = logging.getLogger(__name__)

VARIANTS = ("seg", "seg_pp", "seg_il_in", "seg_il", "seg_il_shifted")
TRAINABLE = ("seg", "seg_il_in", "seg_il", "seg_il_shifted")
FIT_PER_FOLD = "fit-per-fold"
DESK_LR = 3e-3


@dataclass(frozen=True)
class VariantSpec:
    in_channels: int
    out_channels: int
    il_input: bool = False
    il_target: bool = False
    shifted_target: bool = False
    post_multiply: bool = False
    trains_as: str = ""


VARIANT_SPECS = {
    "seg": VariantSpec(1, 1, trains_as="seg"),
    "seg_pp": VariantSpec(1, 1, post_multiply=True, trains_as="seg"),
    "seg_il_in": VariantSpec(2, 1, il_input=True, trains_as="seg_il_in"),
    "seg_il": VariantSpec(1, 2, il_target=True, trains_as="seg_il"),
    "seg_il_shifted": VariantSpec(1, 2, il_target=True, shifted_target=True, trains_as="seg_il_shifted"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "seg_il"
    subvolume: tuple = (32, 32, 32)
    steps: int = 2000
    lr: float = optim.DEFAULT_LR
    weight_decay: float = optim.DEFAULT_WEIGHT_DECAY
    lam: float = 1.0
    folds: int = 5
    seed: int = 0
    encoder_channels: tuple = DESK_CHANNELS
    groupnorm_groups: int = 4
    precision: str = "f32"
    diffusion: DiffusionParams = DiffusionParams()
    likelihood: str = FIT_PER_FOLD
    shift_delta: float = 100.0
    rotate_prob: float = 0.5
    threshold: float = 0.5
    tile_overlap: int = 8
    margin_vox: int = metrics.DEFAULT_MARGIN_VOX
    min_tumor_mm3: float = metrics.LARGE_TUMOR_MM3
    intensity_offset: float = 50.0
    intensity_scale: float = 100.0
    exclude_norm_and_bias: bool = True
    data: str = ""

    def __post_init__(self):
        object.__setattr__(self, "subvolume", tuple(int(s) for s in self.subvolume))
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if isinstance(self.diffusion, dict):
            object.__setattr__(self, "diffusion", DiffusionParams.from_dict(self.diffusion))
        if self.variant not in VARIANT_SPECS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if len(self.subvolume) != 3 or any(s < 8 or s % 8 for s in self.subvolume):
            raise ConfigError(f"subvolume dims must be positive multiples of 8, got {self.subvolume}")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.steps < 0 or self.lr < 0 or self.weight_decay < 0 or self.lam < 0:
            raise ConfigError("steps, lr, weight_decay and lam must be non-negative")
        if not 0 <= self.rotate_prob <= 1:
            raise ConfigError("rotate_prob must lie in [0, 1]")
        if not 0 <= self.tile_overlap < min(self.subvolume):
            raise ConfigError("tile_overlap must be smaller than the tile")
        if self.intensity_scale <= 0:
            raise ConfigError("intensity_scale must be positive")
        try:
            self.unet_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def desk(cls, **overrides) -> "ExperimentConfig":
        """CPU-scale settings: 32^3 sub-volumes, {4, 8, 16, 32} channels, lr 3e-3.

        At 2000 steps the default lr of 3e-4 barely moves the small network; ten
        times that memorises a single phantom within a few hundred steps.
        """
        return cls(**{"lr": DESK_LR, "encoder_channels": DESK_CHANNELS, **overrides})

    @classmethod
    def full(cls, **overrides) -> "ExperimentConfig":
        """Full-scale settings: 224^3 sub-volumes and {8, 16, 32, 64} channels."""
        return cls(**{"subvolume": (224, 224, 224), "encoder_channels": FULL_CHANNELS, **overrides})

    @property
    def spec(self) -> VariantSpec:
        return VARIANT_SPECS[self.variant]

    def unet_config(self) -> UNetConfig:
        s = VARIANT_SPECS[self.variant]
        return UNetConfig(s.in_channels, s.out_channels, self.encoder_channels, self.groupnorm_groups, self.precision)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["subvolume"] = list(self.subvolume)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------- data


@dataclass
class CaseData:
    case_id: str
    volume: Volume
    mask: MaskVolume
    smoothed: Volume | None = None

    def smooth(self, params: DiffusionParams) -> Volume:
        if self.smoothed is None:
            self.smoothed = diffuse(self.volume, params)
        return self.smoothed


def load_cases(manifest) -> list:
    if not isinstance(manifest, dict):
        manifest = load_manifest(manifest)
    cases = []
    for entry in manifest["cases"]:
        try:
            vol, mask = read_svol(entry["volume"]), read_svol(entry["mask"])
        except OSError as exc:
            raise DataError(f"cannot read case {entry.get('id')}: {exc}") from exc
        if not isinstance(vol, Volume) or not isinstance(mask, MaskVolume):
            raise DataError(f"case {entry.get('id')}: expected a volume and a mask")
        if vol.shape != mask.shape:
            raise DataError(f"case {entry.get('id')}: volume and mask shapes differ")
        cases.append(CaseData(entry.get("id", Path(entry["volume"]).stem), vol, mask))
    return cases


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple  # per fold, sorted validation case ids

    def validation(self, k):
        return list(self.folds[k])

    def training(self, k):
        return sorted(c for i, f in enumerate(self.folds) if i != k for c in f)


def make_folds(case_ids, k: int, seed: int = 0) -> FoldSplit:
    """Shuffled, deterministic partition into k near-equal folds (larger folds first)."""
    case_ids = list(case_ids)
    if len(set(case_ids)) != len(case_ids):
        raise ValueError("case ids must be unique")
    if k < 2 or k > len(case_ids):
        raise ValueError(f"cannot split {len(case_ids)} cases into {k} folds")
    order = np.random.default_rng(seed).permutation(len(case_ids))
    shuffled = [case_ids[i] for i in order]
    return FoldSplit(tuple(tuple(sorted(part.tolist())) for part in np.array_split(np.array(shuffled, dtype=object), k)))


def resolve_likelihood(cfg: ExperimentConfig, train_cases) -> ildist.LikelihoodModel:
    if cfg.likelihood == FIT_PER_FOLD:
        values = [c.smooth(cfg.diffusion).data[c.mask.data.astype(bool)] for c in train_cases]
        values = [v for v in values if v.size]
        if not values:
            raise DataError("no foreground voxels in the training cases")
        return ildist.fit_kde(ildist.IntensitySample(np.concatenate(values), len(values)))
    try:
        return ildist.LikelihoodModel.load(cfg.likelihood)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load likelihood model {cfg.likelihood!r}: {exc}") from exc


def variant_model(cfg: ExperimentConfig, model: ildist.LikelihoodModel) -> ildist.LikelihoodModel:
    """The model whose output is used as the auxiliary target for this variant."""
    return ildist.shifted(model, cfg.shift_delta) if cfg.spec.shifted_target else model


def case_likelihood(case: CaseData, cfg: ExperimentConfig, model) -> SoftVolume:
    return ildist.likelihood_volume(case.smooth(cfg.diffusion), model, None)


def build_input(cfg: ExperimentConfig, volume_data, y_il_data=None):
    """(1, C, Z, Y, X) network input: normalised intensity, plus the likelihood channel for seg_il_in."""
    dtype = cfg.unet_config().dtype
    x = ((np.asarray(volume_data, dtype=np.float64) - cfg.intensity_offset) / cfg.intensity_scale).astype(dtype)
    channels = [x]
    if cfg.spec.il_input:
        if y_il_data is None:
            raise ValueError("seg_il_in needs the likelihood volume as input")
        channels.append(np.asarray(y_il_data, dtype=dtype))
    return np.stack(channels)[None]


# --------------------------------------------------------------------------- training


def _fold_seeds(seed: int, fold: int):
    init_ss, sample_ss = np.random.SeedSequence([seed, fold]).spawn(2)
    return int(init_ss.generate_state(1)[0]), np.random.default_rng(sample_ss)


@dataclass
class TrainResult:
    net: Network
    optimizer: optim.AdamWState
    history: list = field(default_factory=list)  # (step, total, seg, il)

    def loss_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "total", "seg", "il"])
        for row in self.history:
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
        return buf.getvalue()


def train_variant(cfg: ExperimentConfig, train_cases, model=None, fold: int = 0, progress=None) -> TrainResult:
    """Train one network on ``train_cases`` with batch size 1.

    Each step samples a case, then a sub-volume containing lesion voxels, rotates
    it by 180 degrees about z with probability ``rotate_prob``, and takes one
    AdamW step on the combined loss.
    """
    spec = cfg.spec
    if not train_cases:
        raise DataError("no training cases")
    needs_model = spec.il_input or spec.il_target
    if needs_model and model is None:
        model = resolve_likelihood(cfg, train_cases)
    target_model = variant_model(cfg, model) if spec.il_target else None
    input_model = model if spec.il_input else None

    il_volumes = {}
    for case in train_cases:
        if spec.il_target:
            il_volumes[case.case_id] = case_likelihood(case, cfg, target_model)
        elif spec.il_input:
            il_volumes[case.case_id] = case_likelihood(case, cfg, input_model)

    init_seed, rng = _fold_seeds(cfg.seed, fold)
    net = init_parameters(cfg.unet_config(), init_seed)
    state = optim.AdamWState(cfg.lr, cfg.weight_decay, exclude_norm_and_bias=cfg.exclude_norm_and_bias)
    result = TrainResult(net, state)

    for step in range(cfg.steps):
        case = train_cases[int(rng.integers(len(train_cases)))]
        extra = (il_volumes[case.case_id],) if case.case_id in il_volumes else ()
        v, m, *rest, offset = sample_subvolume(case.volume, case.mask, cfg.subvolume, rng, extra=extra)
        rotated = bool(rng.random() < cfg.rotate_prob)
        if rotated:
            v, m = rotate_z_180(v), rotate_z_180(m)
            rest = [rotate_z_180(g) for g in rest]
        y_il = rest[0].data if rest else None

        x = build_input(cfg, v.data, y_il)
        pred = net.forward(x)
        y_seg = m.data[None].astype(pred.dtype)
        target = y_il[None].astype(pred.dtype) if spec.il_target else None
        try:
            loss, dpred = combined_loss(pred, y_seg, target, cfg.lam if spec.il_target else 0.0)
        except FloatingPointError as exc:
            raise NumericalError(
                f"non-finite loss at step {step}",
                {"step": step, "case": case.case_id, "offset": list(offset), "rotated": rotated, "error": str(exc)},
            ) from exc
        grads, _ = net.backward(dpred)
        try:
            optim.step(state, net.params, grads)
        except NumericalError as exc:
            exc.snapshot.update(step=step, case=case.case_id, offset=list(offset))
            raise
        result.history.append((step, loss.total, loss.seg_component, loss.il_component))
        if progress is not None:
            progress(step, loss)
    return result


def save_training(result: TrainResult, cfg: ExperimentConfig, out_dir, fold: int, model=None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / f"{cfg.variant}_fold{fold}.snet"
    save_checkpoint(ckpt, result.net, result.optimizer, {"experiment": cfg.to_dict(), "fold": fold})
    losses = out_dir / f"{cfg.variant}_fold{fold}_loss.csv"
    losses.write_text(result.loss_csv())
    outputs = {"checkpoint": str(ckpt), "loss_csv": str(losses)}
    if model is not None:
        path = out_dir / f"likelihood_fold{fold}.json"
        model.save(path)
        outputs["likelihood"] = str(path)
    return outputs


# --------------------------------------------------------------------------- inference


def _tile_starts(n, tile, overlap):
    if n < tile:
        raise DataError(f"volume extent {n} is smaller than the inference tile {tile}")
    stride = tile - overlap
    starts = list(range(0, n - tile + 1, stride))
    if starts[-1] != n - tile:
        starts.append(n - tile)
    return starts


def predict_probabilities(net: Network, x, tile, overlap):
    """Sliding-window forward pass over a (1, C, Z, Y, X) input; overlapping tiles are averaged."""
    spatial = x.shape[2:]
    acc = np.zeros((net.config.out_channels, *spatial), dtype=np.float64)
    count = np.zeros(spatial, dtype=np.float64)
    grids = [_tile_starts(n, t, overlap) for n, t in zip(spatial, tile)]
    for z in grids[0]:
        for y in grids[1]:
            for xx in grids[2]:
                sl = (slice(z, z + tile[0]), slice(y, y + tile[1]), slice(xx, xx + tile[2]))
                acc[(slice(None), *sl)] += net.predict(x[(slice(None), slice(None), *sl)])[0]
                count[sl] += 1.0
    return acc / count


def predict(net, volume: Volume, cfg: ExperimentConfig, model=None) -> SoftVolume:
    """Full-volume segmentation probability map for ``cfg.variant``.

    ``net`` may be a Network or a checkpoint path. ``seg_pp`` multiplies the map by
    the likelihood volume; ``seg_il_in`` feeds it as input. Both need ``model``.
    """
    if not isinstance(net, Network):
        net = load_checkpoint(net, precision=cfg.precision)[0]
    spec = cfg.spec
    if net.config.in_channels != spec.in_channels:
        raise ConfigError(f"checkpoint expects {net.config.in_channels} input channels, variant {cfg.variant} uses {spec.in_channels}")
    y_il = None
    if spec.il_input or spec.post_multiply:
        if model is None:
            raise ConfigError(f"variant {cfg.variant} needs a likelihood model for inference")
        y_il = ildist.likelihood_volume(volume, model, cfg.diffusion).data
    x = build_input(cfg, volume.data, y_il if spec.il_input else None)
    prob = predict_probabilities(net, x, cfg.subvolume, cfg.tile_overlap)[0].astype(np.float32)
    if spec.post_multiply:
        prob = prob * y_il
    return SoftVolume(prob, volume.spacing_mm)


def binarize(prob: SoftVolume, threshold: float = 0.5) -> MaskVolume:
    return MaskVolume(prob.data > threshold, prob.spacing_mm)


# --------------------------------------------------------------------------- cross validation


@dataclass
class FoldOutcome:
    variant: str
    fold: int
    predictions: dict  # case id -> MaskVolume
    history: list
    probabilities: dict = field(default_factory=dict)  # case id -> SoftVolume
    model: ildist.LikelihoodModel | None = None  # likelihood model fitted on the fold's training cases


def _run_job(args):
    cfg, cases, split, fold, variants = args
    by_id = {c.case_id: c for c in cases}
    train = [by_id[c] for c in split.training(fold)]
    val = [by_id[c] for c in split.validation(fold)]
    model = resolve_likelihood(cfg, train)
    trained = {}
    outcomes = []
    for variant in variants:
        vcfg = replace(cfg, variant=variant)
        key = vcfg.spec.trains_as
        if key not in trained:
            trained[key] = train_variant(vcfg, train, model, fold)
            log.info("fold %d variant %s: final loss %.4f", fold, variant, trained[key].history[-1][1] if trained[key].history else float("nan"))
        net = trained[key].net
        probs = {c.case_id: predict(net, c.volume, vcfg, model) for c in val}
        preds = {cid: binarize(p, cfg.threshold) for cid, p in probs.items()}
        outcomes.append(FoldOutcome(variant, fold, preds, trained[key].history, probs, model))
    return outcomes


def cross_validate(cfg: ExperimentConfig, cases, variants=VARIANTS, workers: int = 1):
    """Train and predict every variant on every fold; returns per-variant reports."""
    variants = list(variants)
    for v in variants:
        if v not in VARIANT_SPECS:
            raise ConfigError(f"unknown variant {v!r}")
    split = make_folds([c.case_id for c in cases], cfg.folds, cfg.seed)
    for c in cases:
        c.smooth(cfg.diffusion)
    jobs = [(cfg, cases, split, k, variants) for k in range(cfg.folds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    outcomes = sorted((o for fold_out in results for o in fold_out), key=lambda o: (o.variant, o.fold))

    gt = {c.case_id: c.mask for c in cases}
    reports = []
    for variant in variants:
        preds = {}
        for o in outcomes:
            if o.variant == variant:
                preds.update(o.predictions)
        triples = [(cid, preds[cid], gt[cid]) for cid in sorted(preds)]
        reports.append(metrics.evaluate_cases(variant, triples, cfg.margin_vox, cfg.min_tumor_mm3))
    return reports, outcomes, split
