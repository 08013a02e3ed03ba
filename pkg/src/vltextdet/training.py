"""Training loop, checkpointing, evaluation drivers and ablation runners."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch

from .config import TrainConfig
from .data.augment import augment, resize_sample
from .data.datasets import DatasetManifest, Sample
from .evaluation import DEFAULT_THRESHOLDS, EvalReport, evaluate_detections
from .head import contrastive_loss_from_logits, downsample_mask, pixel_logits
from .model import TextDetector, build_model, image_to_tensor
from .postprocess import (Detection, detections_from_map, load_detections,
                          save_detection_file, scale_detections)

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Loss became non-finite; message names the offending batch."""


class CheckpointError(RuntimeError):
    """Unreadable checkpoint or frozen-encoder fingerprint mismatch."""


# ---- schedule ------------------------------------------------------------

def lr_at(config: TrainConfig, epoch: int) -> float:
    """Step decay: lr * factor^(epoch // every), epoch counted from 0."""
    return config.lr * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def make_optimizer(model: TextDetector, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.trainable_parameters(), lr=config.lr,
                            betas=config.adam_betas, eps=config.adam_eps,
                            weight_decay=config.weight_decay)


# ---- checkpoints ---------------------------------------------------------

FROZEN_PREFIX = "text_encoder."


def save_checkpoint(path: str | Path, model: TextDetector,
                    optimizer: torch.optim.Optimizer | None = None,
                    epoch: int = 0, history: dict | None = None) -> Path:
    """Trainable weights only; the frozen text encoder is stored as a
    fingerprint and rebuilt from its seed at load time."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {k: v for k, v in model.state_dict().items()
             if not k.startswith(FROZEN_PREFIX)}
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "model_state": state,
        "optimizer_state": optimizer.state_dict() if optimizer else None,
        "epoch": epoch,
        "history": history if history is not None else {},
        "text_encoder_fingerprint": model.text_encoder.fingerprint(),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[TextDetector, dict]:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload.get('version')!r}")
    config = TrainConfig.from_dict(payload["config"])
    model = TextDetector(config)
    fingerprint = model.text_encoder.fingerprint()
    if fingerprint != payload["text_encoder_fingerprint"]:
        raise CheckpointError(
            "frozen text-encoder fingerprint mismatch: checkpoint has "
            f"{payload['text_encoder_fingerprint'][:12]}…, rebuilt encoder "
            f"has {fingerprint[:12]}…")
    missing, unexpected = model.load_state_dict(payload["model_state"],
                                                strict=False)
    if unexpected:
        raise CheckpointError(f"unexpected keys in checkpoint: {unexpected[:5]}")
    stray = [k for k in missing if not k.startswith(FROZEN_PREFIX)]
    if stray:
        raise CheckpointError(f"checkpoint is missing weights: {stray[:5]}")
    model.eval()
    return model, payload


# ---- batching ------------------------------------------------------------

def prepare_sample(sample: Sample, config: TrainConfig, train: bool,
                   aug_seed: int | None = None):
    """(image (3,S,S), positive (S/4,S/4), ignore (S/4,S/4)) tensors."""
    s = config.image_size
    if train and config.augment:
        sample = augment(sample, int(aug_seed), out_size=s)
    elif (sample.height, sample.width) != (s, s):
        sample = resize_sample(sample, s)
    mask = sample.ground_truth_mask()
    pos, ign = downsample_mask(mask, 4, config.mask_pos_threshold)
    image = image_to_tensor(sample.image, config.dtype)[0]
    return image, pos, ign


# ---- evaluation driver ---------------------------------------------------

def evaluate_model(model: TextDetector, samples: list[Sample],
                   thresholds=None, prompt_id: str | None = None) -> EvalReport:
    """Detect on (resized) samples and score against their own instances."""
    config = model.config
    if thresholds is None:
        thresholds = config.eval_iou_thresholds
    per_dets: dict[str, list[Detection]] = {}
    per_gts = {}
    s = config.image_size
    for sample in samples:
        if (sample.height, sample.width) != (s, s):
            sample = resize_sample(sample, s)
        sim = model.predict_map(image_to_tensor(sample.image, config.dtype),
                                prompt_id=prompt_id)
        per_dets[sample.id] = detections_from_map(
            sim, config.binarize_threshold, config.min_area,
            config.polygon_mode)
        per_gts[sample.id] = sample.instances
    return evaluate_detections(per_dets, per_gts, thresholds)


# ---- training loop -------------------------------------------------------

@dataclass
class TrainResult:
    model: TextDetector
    history: dict
    checkpoint_path: Path | None
    steps: int
    final_f1: float | None = None


def fit(config: TrainConfig, samples: list[Sample],
        out_dir: str | Path | None = None, *, max_steps: int | None = None,
        target_f1: float | None = None, eval_every: int | None = None,
        log=None) -> TrainResult:
    """Adam training of everything except the text encoder.

    Stops after `config.epochs` epochs, or `max_steps` optimization steps,
    or once the train-set F-score at IoU 0.5 reaches `target_f1` (checked
    every `eval_every` steps when both are given).  Writes a rolling
    checkpoint per epoch when `out_dir` is set.
    """
    if not samples:
        raise ValueError("no training samples")
    model = build_model(config)
    model.train()
    text = model.encode_prompt(model.prompt_text()) if config.text_enabled else None
    optimizer = make_optimizer(model, config)
    limit = max_steps if max_steps is not None else config.max_steps
    out_dir = Path(out_dir) if out_dir is not None else None
    checkpoint_path = out_dir / "checkpoint.pt" if out_dir else None
    history: dict = {"loss": [], "lr": [], "eval_f1": []}
    step = 0
    final_f1 = None
    stop = False

    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        history["lr"].append([epoch, lr])
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([config.seed, epoch])))
        order = rng.permutation(len(samples))
        for start in range(0, len(samples), config.batch_size):
            ids = []
            images, poss, igns = [], [], []
            for si in order[start:start + config.batch_size]:
                sample = samples[si]
                image, pos, ign = prepare_sample(
                    sample, config, train=True,
                    aug_seed=int(rng.integers(0, 2 ** 31)))
                images.append(image)
                poss.append(pos)
                igns.append(ign)
                ids.append(sample.id)
            ign_b = torch.stack(igns)
            if bool(ign_b.all()):
                if log:
                    log(f"skipping batch {ids}: every pixel ignored")
                continue
            batch = torch.stack(images)
            pos_b = torch.stack(poss)
            pf = model(batch, text)
            h, w = pf.grid_hw
            logits = pixel_logits(pf).reshape(-1, h, w)
            loss = contrastive_loss_from_logits(logits, pos_b, ign_b,
                                                config.loss_reduction)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, step {step}, "
                    f"batch {ids}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            history["loss"].append([step, float(loss.item())])
            step += 1
            if log:
                log(f"epoch {epoch} step {step} loss {loss.item():.4f} "
                    f"lr {lr:.2e}")
            if eval_every and step % eval_every == 0:
                final_f1 = evaluate_model(model, samples,
                                          thresholds=(0.5,)).f_at(0.5)
                history["eval_f1"].append([step, final_f1])
                model.train()
                if log:
                    log(f"step {step} train F1@50 {final_f1:.4f}")
                if target_f1 is not None and final_f1 >= target_f1:
                    stop = True
                    break
            if limit is not None and step >= limit:
                stop = True
                break
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model, optimizer, epoch, history)
        if stop:
            break

    model.eval()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, optimizer, epoch, history)
    return TrainResult(model=model, history=history,
                       checkpoint_path=checkpoint_path, steps=step,
                       final_f1=final_f1)


# ---- detect / evaluate drivers ------------------------------------------

def run_detect(checkpoint_path: str | Path, image_paths: list[str | Path],
               out_dir: str | Path, prompt_id: str | None = None,
               threshold: float | None = None, overlay: bool = False) -> dict:
    """Detection files (one per image) plus optional overlays.

    Unreadable images are reported in the summary and skipped; the rest of
    the batch still runs.
    """
    model, _ = load_checkpoint(checkpoint_path)
    config = model.config
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    threshold = threshold if threshold is not None else config.binarize_threshold
    used_prompt = None
    if config.text_enabled:
        used_prompt = prompt_id if prompt_id is not None else config.prompt_id
    summary: dict = {"prompt_id": used_prompt, "threshold": threshold,
                     "checkpoint": str(checkpoint_path), "images": [],
                     "errors": []}
    s = config.image_size
    for path in image_paths:
        path = Path(path)
        bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if bgr is None:
            summary["errors"].append({"image": str(path),
                                      "error": "unreadable image"})
            continue
        rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
        h, w = rgb.shape[:2]
        resized = cv2.resize(rgb, (s, s), interpolation=cv2.INTER_LINEAR)
        sim = model.predict_map(image_to_tensor(resized, config.dtype),
                                prompt_id=prompt_id)
        dets = detections_from_map(sim, threshold, config.min_area,
                                   config.polygon_mode)
        dets = scale_detections(dets, w / s, h / s)
        det_path = out_dir / f"{path.stem}.txt"
        save_detection_file(det_path, dets)
        record = {"image": str(path), "detections": len(dets),
                  "output": str(det_path)}
        if overlay:
            canvas = bgr.copy()
            for d in dets:
                pts = d.polygon.round().astype(np.int32).reshape(-1, 1, 2)
                cv2.polylines(canvas, [pts], isClosed=True,
                              color=(0, 0, 255), thickness=2)
            overlay_path = out_dir / f"{path.stem}_overlay.png"
            cv2.imwrite(str(overlay_path), canvas)
            record["overlay"] = str(overlay_path)
        summary["images"].append(record)
    (out_dir / "detect_summary.json").write_text(
        json.dumps(summary, indent=2) + "\n")
    return summary


class PairingError(RuntimeError):
    """Detection files and ground-truth ids do not line up."""


def run_evaluate(det_dir: str | Path, manifest: DatasetManifest,
                 thresholds=DEFAULT_THRESHOLDS,
                 allow_missing: bool = False) -> EvalReport:
    """Score a directory of detection files against a dataset manifest."""
    gts = manifest.gt_by_id()
    dets = load_detections(det_dir)
    missing = sorted(set(gts) - set(dets))
    extra = sorted(set(dets) - set(gts))
    if (missing or extra) and not allow_missing:
        raise PairingError(
            f"id mismatch between {det_dir} and the manifest: "
            f"{len(missing)} gt ids without detections {missing[:5]}, "
            f"{len(extra)} detection files without gt {extra[:5]} "
            "(pass allow_missing to score anyway)")
    per_dets = {image_id: dets.get(image_id, []) for image_id in gts}
    return evaluate_detections(per_dets, gts, thresholds)


# ---- ablations -----------------------------------------------------------

DEPTH_FOOTER = (
    "Desk-scale harness: tiny synthetic training set, reduced channel plan "
    "and step budget. These numbers are not comparable to full-scale "
    "reference results (e.g. depth-3 F1@50 = 84.8 on MLT-2019 under "
    "full-scale training); no numeric agreement is claimed.")

TEXT_FOOTER = (
    "Mechanism check only: the no-prompt variant swaps the cross-attention "
    "text stream for a single learned token. Desk-scale numbers carry no "
    "claim about full-scale prompt ablations.")


@dataclass
class AblationReport:
    title: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    footer: str = ""
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def format_table(self) -> str:
        widths = {c: max(len(c), *(len(_cell(r.get(c))) for r in self.rows))
                  for c in self.columns}
        header = "  ".join(c.ljust(widths[c]) for c in self.columns)
        lines = [self.title, "", header, "-" * len(header)]
        for r in self.rows:
            lines.append("  ".join(
                _cell(r.get(c)).ljust(widths[c]) for c in self.columns))
        for key, value in self.extras.items():
            lines.append(f"{key}: {value}")
        if self.footer:
            lines += ["", self.footer]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"title": self.title, "columns": self.columns,
                "rows": self.rows, "extras": self.extras,
                "footer": self.footer, "config": self.config}

    def save(self, prefix: str | Path) -> tuple[Path, Path]:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        json_path = prefix.with_suffix(".json")
        txt_path = prefix.with_suffix(".txt")
        json_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        txt_path.write_text(self.format_table() + "\n")
        return json_path, txt_path


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


F_COLUMNS = [f"f1@{int(t * 100)}" for t in DEFAULT_THRESHOLDS]


def ablate_depth(config: TrainConfig, samples: list[Sample],
                 layers=(2, 3, 4, 5), out_dir: str | Path | None = None,
                 max_steps: int | None = None, log=None) -> AblationReport:
    """One training run per decoder depth under identical seed and budget."""
    rows = []
    for depth in layers:
        cfg = config.replace(decoder_layers=depth)
        result = fit(cfg, samples, out_dir=None, max_steps=max_steps, log=log)
        report = evaluate_model(result.model, samples,
                                thresholds=DEFAULT_THRESHOLDS)
        row = {"decoder_layers": depth}
        for t, col in zip(DEFAULT_THRESHOLDS, F_COLUMNS):
            row[col] = report.f_at(t)
        rows.append(row)
        if log:
            log(f"depth {depth}: F1@50 {row['f1@50']:.4f}")
    report = AblationReport(
        title="Cross-modal decoder depth ablation",
        columns=["decoder_layers"] + F_COLUMNS, rows=rows,
        footer=DEPTH_FOOTER, config=config.to_dict())
    if out_dir is not None:
        report.save(Path(out_dir) / "depth_ablation")
    return report


def ablate_text(config: TrainConfig, samples: list[Sample],
                out_dir: str | Path | None = None, prompts=None,
                max_steps: int | None = None, log=None) -> AblationReport:
    """Prompt conditioning on/off, scored per prompt, plus a bitwise
    prompt-invariance check of the no-prompt variant."""
    prompts = list(prompts) if prompts is not None else sorted(config.prompts)
    rows = []
    extras = {}
    for enabled in (True, False):
        cfg = config.replace(text_enabled=enabled)
        result = fit(cfg, samples, out_dir=None, max_steps=max_steps, log=log)
        model = result.model
        reference = None
        invariant = True
        probe = samples[0]
        if (probe.height, probe.width) != (cfg.image_size,) * 2:
            probe = resize_sample(probe, cfg.image_size)
        probe_tensor = image_to_tensor(probe.image, cfg.dtype)
        for pid in prompts:
            report = evaluate_model(model, samples, thresholds=(0.5,),
                                    prompt_id=pid)
            rows.append({"text_enabled": enabled, "prompt": pid,
                         "f1@50": report.f_at(0.5)})
            sim = model.predict_map(probe_tensor, prompt_id=pid)
            if reference is None:
                reference = sim.probabilities
            elif not np.array_equal(reference, sim.probabilities):
                invariant = False
        key = "with_text" if enabled else "without_text"
        extras[f"{key}_prompt_invariant"] = invariant
    report = AblationReport(
        title="Prompt conditioning ablation",
        columns=["text_enabled", "prompt", "f1@50"], rows=rows,
        footer=TEXT_FOOTER, config=config.to_dict(), extras=extras)
    if out_dir is not None:
        report.save(Path(out_dir) / "text_ablation")
    return report
