"""Training, evaluation, and the similarity-weight × embedding-layer sweep.

Two training regimes are supported: from-scratch (fresh seeded init) and
transfer (initialize from an existing checkpoint, optionally freezing named
parameter groups). The loop early-stops on validation SI-SDR, halves the
learning rate on plateau, snapshots the best-validation parameters, and
appends one JSON line per epoch so long runs can be inspected mid-flight.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
import torch

from .corpus import SplitManifest
from .embeddings import SimilarityConfig, composite_loss, get_backend
from .errors import DivergenceError, EmptySplitError
from .metrics import pit_loss, si_snr
from .model import (
    ConvTasNet,
    SeparatorConfig,
    build_model,
    load_into,
    save_checkpoint,
)


@dataclass
class TrainConfig:
    """Knobs of one training run.

    ``init`` is "scratch" or "transfer"; transfer requires
    ``init_checkpoint``. ``loss`` is "baseline" (best-permutation negative
    SI-SNR) or "enhanced" (adds the similarity penalty from
    ``similarity``). ``freeze`` lists parameter-name prefixes excluded from
    optimization under transfer, e.g. ("encoder",).
    """

    max_epochs: int = 200
    patience: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 4
    init: str = "scratch"
    init_checkpoint: str | None = None
    loss: str = "baseline"
    similarity: SimilarityConfig | None = None
    seed: int = 0
    grad_clip: float = 5.0
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    freeze: tuple = ()
    sample_rate: int = 8000

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.init not in ("scratch", "transfer"):
            raise ValueError(f"init must be 'scratch' or 'transfer', got {self.init!r}")
        if self.init == "transfer" and not self.init_checkpoint:
            raise ValueError("transfer init requires init_checkpoint")
        if self.loss not in ("baseline", "enhanced"):
            raise ValueError(f"loss must be 'baseline' or 'enhanced', got {self.loss!r}")
        if self.loss == "enhanced" and self.similarity is None:
            self.similarity = SimilarityConfig()

    def to_dict(self) -> dict:
        d = {
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "init": self.init,
            "init_checkpoint": self.init_checkpoint,
            "loss": self.loss,
            "seed": self.seed,
            "grad_clip": self.grad_clip,
            "plateau_factor": self.plateau_factor,
            "plateau_patience": self.plateau_patience,
            "freeze": list(self.freeze),
            "sample_rate": self.sample_rate,
        }
        if self.similarity is not None:
            d["similarity"] = {
                "weight": self.similarity.weight,
                "backend": self.similarity.backend,
            }
        return d


@dataclass
class TrainRecord:
    """Outcome of a run: per-epoch curves plus the best-epoch summary."""

    train_losses: list = field(default_factory=list)
    validation_si_sdr: list = field(default_factory=list)
    best_epoch: int = 0
    best_validation_si_sdr: float = -math.inf
    stopped_epoch: int = 0
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "train_losses": self.train_losses,
            "validation_si_sdr": self.validation_si_sdr,
            "best_epoch": self.best_epoch,
            "best_validation_si_sdr": self.best_validation_si_sdr,
            "stopped_epoch": self.stopped_epoch,
            "wall_seconds": self.wall_seconds,
        }


def _load_triples(entries):
    """Materialize manifest entries (refs or in-memory triples) as tensors."""
    out = []
    for entry in entries:
        triple = entry.load()
        out.append(
            (
                triple.sample_id,
                torch.from_numpy(triple.mixture.samples),
                torch.stack(
                    [
                        torch.from_numpy(triple.source1.samples),
                        torch.from_numpy(triple.source2.samples),
                    ]
                ),
            )
        )
    return out


def _mean_validation_si_sdr(model: ConvTasNet, data) -> float:
    """Mean best-permutation SI-SDR over (id, mixture, refs) tuples."""
    model.eval()
    scores = []
    with torch.no_grad():
        for _, mixture, refs in data:
            est = model(mixture)
            loss, _ = pit_loss(est, refs)
            scores.append(-float(loss))
    model.train()
    return float(np.mean(scores))


def _batch_loss(model, batch, cfg: TrainConfig, backend):
    """Forward one padded batch; per-sample losses masked to true lengths."""
    lengths = [mix.shape[0] for _, mix, _ in batch]
    max_len = max(lengths)
    mixtures = torch.zeros(len(batch), max_len)
    for i, (_, mix, _) in enumerate(batch):
        mixtures[i, : lengths[i]] = mix
    estimates = model(mixtures)  # [B, C, max_len]
    losses = []
    for i, (_, _, refs) in enumerate(batch):
        est_i = estimates[i, :, : lengths[i]]
        if cfg.loss == "enhanced":
            loss_i, _ = composite_loss(
                est_i, refs, backend, cfg.similarity, sample_rate=cfg.sample_rate
            )
        else:
            loss_i, _ = pit_loss(est_i, refs)
        losses.append(loss_i)
    return torch.stack(losses).mean()


def train(
    manifest: SplitManifest,
    model_cfg: SeparatorConfig,
    cfg: TrainConfig,
    out_dir=None,
) -> tuple[ConvTasNet, TrainRecord]:
    """Run one training job and return the best-validation model.

    Writes (when ``out_dir`` is given): train_log.jsonl with one line per
    epoch, best.ckpt, and record.json. The returned model carries the
    best-validation parameters, not the final-epoch ones.
    """
    train_entries = manifest.split("train")
    val_entries = manifest.split("validation")
    if not train_entries:
        raise EmptySplitError("train split is empty")
    if not val_entries:
        raise EmptySplitError("validation split is empty")

    torch.manual_seed(cfg.seed)
    if cfg.init == "transfer":
        model = ConvTasNet(model_cfg)
        load_into(model, cfg.init_checkpoint)
    else:
        model = build_model(model_cfg, seed=cfg.seed)
    for name, param in model.named_parameters():
        if any(name.startswith(prefix) for prefix in cfg.freeze):
            param.requires_grad_(False)

    backend = None
    if cfg.loss == "enhanced":
        backend = get_backend(cfg.similarity.backend)

    train_data = _load_triples(train_entries)
    val_data = _load_triples(val_entries)

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=cfg.learning_rate)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="max", factor=cfg.plateau_factor, patience=cfg.plateau_patience
    )

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = (out_dir / "train_log.jsonl").open("w")

    record = TrainRecord()
    best_state = copy.deepcopy(model.state_dict())
    order_rng = np.random.default_rng(cfg.seed)
    started = time.monotonic()
    model.train()

    try:
        for epoch in range(1, cfg.max_epochs + 1):
            order = order_rng.permutation(len(train_data))
            epoch_losses = []
            for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
                batch = [train_data[j] for j in order[start : start + cfg.batch_size]]
                loss = _batch_loss(model, batch, cfg, backend)
                if not torch.isfinite(loss):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, batch {batch_index}",
                        epoch=epoch,
                        batch=batch_index,
                    )
                optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(trainable, cfg.grad_clip)
                optimizer.step()
                epoch_losses.append(float(loss.detach()))

            val_si_sdr = _mean_validation_si_sdr(model, val_data)
            scheduler.step(val_si_sdr)
            train_loss = float(np.mean(epoch_losses))
            record.train_losses.append(train_loss)
            record.validation_si_sdr.append(val_si_sdr)
            record.stopped_epoch = epoch

            if val_si_sdr > record.best_validation_si_sdr:
                record.best_validation_si_sdr = val_si_sdr
                record.best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())

            if log_file is not None:
                log_file.write(
                    json.dumps(
                        {
                            "epoch": epoch,
                            "train_loss": train_loss,
                            "val_si_sdr": val_si_sdr,
                            "lr": optimizer.param_groups[0]["lr"],
                            "best_epoch": record.best_epoch,
                        }
                    )
                    + "\n"
                )
                log_file.flush()

            if epoch - record.best_epoch >= cfg.patience:
                break
    finally:
        if log_file is not None:
            log_file.close()

    record.wall_seconds = time.monotonic() - started
    model.load_state_dict(best_state)
    model.eval()

    if out_dir is not None:
        save_checkpoint(
            out_dir / "best.ckpt",
            model,
            extra={
                "best_epoch": record.best_epoch,
                "best_validation_si_sdr": record.best_validation_si_sdr,
                "train_config": cfg.to_dict(),
            },
        )
        (out_dir / "record.json").write_text(json.dumps(record.to_dict(), indent=2))
    return model, record


@dataclass
class EvalSummary:
    rows: list
    mean_si_sdr: float
    mean_si_sdri: float


def evaluate(entries, model: ConvTasNet, out_csv=None) -> EvalSummary:
    """Per-sample best-permutation SI-SDR over a split, optionally to CSV.

    Rows carry both per-source scores, the improvement over the raw-mixture
    baseline, and which permutation won.
    """
    entries = list(entries)
    if not entries:
        raise EmptySplitError("cannot evaluate an empty split")
    model.eval()
    rows = []
    with torch.no_grad():
        for entry in entries:
            triple = entry.load()
            mixture = torch.from_numpy(triple.mixture.samples)
            refs = torch.stack(
                [
                    torch.from_numpy(triple.source1.samples),
                    torch.from_numpy(triple.source2.samples),
                ]
            )
            est = model(mixture)
            scores_id = si_snr(est, refs)
            scores_sw = si_snr(est.flip(0), refs)
            if float(scores_sw.mean()) > float(scores_id.mean()):
                best, permutation = scores_sw, "swap"
            else:
                best, permutation = scores_id, "identity"
            baseline = si_snr(mixture.expand(2, -1), refs)
            rows.append(
                {
                    "sample_id": triple.sample_id,
                    "si_sdr_s1": float(best[0]),
                    "si_sdr_s2": float(best[1]),
                    "si_sdri": float(best.mean() - baseline.mean()),
                    "permutation": permutation,
                }
            )
    mean_si_sdr = float(np.mean([(r["si_sdr_s1"] + r["si_sdr_s2"]) / 2 for r in rows]))
    mean_si_sdri = float(np.mean([r["si_sdri"] for r in rows]))
    if out_csv is not None:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        with out_csv.open("w", newline="") as fh:
            writer = csv.DictWriter(
                fh,
                fieldnames=["sample_id", "si_sdr_s1", "si_sdr_s2", "si_sdri", "permutation"],
            )
            writer.writeheader()
            writer.writerows(rows)
    return EvalSummary(rows=rows, mean_si_sdr=mean_si_sdr, mean_si_sdri=mean_si_sdri)


# --------------------------------------------------------------------------
# Similarity-weight x embedding-layer sweep
# --------------------------------------------------------------------------

def _cell_path(out_dir: Path, weight: float, layer: int) -> Path:
    tag = f"{weight:g}".replace(".", "p")
    return out_dir / "cells" / f"w{tag}_l{layer}.json"


def sweep(
    manifest: SplitManifest,
    model_cfg: SeparatorConfig,
    base_cfg: TrainConfig,
    weights,
    layers,
    out_dir,
    backend_template: str = "stub:seed=0,layer={layer}",
) -> list[dict]:
    """Train one run per (similarity weight, embedding layer) grid cell.

    Each finished cell persists a JSON record under out_dir/cells/, so an
    interrupted sweep resumes by skipping completed cells and reproduces
    the identical results table (seeds are per-cell deterministic). A cell
    that raises is recorded as failed and the sweep continues. Results land
    in results.csv sorted best-first.
    """
    weights = list(weights)
    layers = list(layers)
    if not weights or not layers:
        raise ValueError("sweep grid must be non-empty on both axes")
    out_dir = Path(out_dir)
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)

    cells = []
    for weight, layer in product(weights, layers):
        path = _cell_path(out_dir, weight, layer)
        if path.exists():
            cells.append(json.loads(path.read_text()))
            continue
        cell_cfg = copy.deepcopy(base_cfg)
        if weight == 0:
            cell_cfg.loss = "baseline"
            cell_cfg.similarity = None
        else:
            cell_cfg.loss = "enhanced"
            cell_cfg.similarity = SimilarityConfig(
                weight=float(weight), backend=backend_template.format(layer=layer)
            )
        cell_dir = out_dir / "runs" / path.stem
        try:
            _, rec = train(manifest, model_cfg, cell_cfg, out_dir=cell_dir)
            result = {
                "weight_sl": float(weight),
                "layer": int(layer),
                "status": "ok",
                "best_si_sdr": rec.best_validation_si_sdr,
                "best_epoch": rec.best_epoch,
            }
        except Exception as exc:  # record, keep sweeping
            result = {
                "weight_sl": float(weight),
                "layer": int(layer),
                "status": "failed",
                "error": f"{type(exc).__name__}: {exc}",
                "best_si_sdr": None,
                "best_epoch": None,
            }
        path.write_text(json.dumps(result, indent=2))
        cells.append(result)

    ranked = sorted(
        cells,
        key=lambda c: c["best_si_sdr"] if c["best_si_sdr"] is not None else -math.inf,
        reverse=True,
    )
    with (out_dir / "results.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["weight_sl", "layer", "best_si_sdr", "best_epoch"])
        for cell in ranked:
            writer.writerow(
                [
                    f"{cell['weight_sl']:g}",
                    cell["layer"],
                    "" if cell["best_si_sdr"] is None else f"{cell['best_si_sdr']:.6f}",
                    "" if cell["best_epoch"] is None else cell["best_epoch"],
                ]
            )
    return ranked
