"""Two-phase training.

Phase one pretrains the flow and reconstruction networks on real events with
their self-supervised losses. Phase two trains the volume generator
adversarially: per iteration the discriminator takes d_steps_per_g hinge
updates (with a fraction of real samples presented under a flipped label),
then the generator takes one update driven by the adversarial score plus
the cycle losses computed through the frozen pretrained networks.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .errors import CheckpointError
from .networks import (
    DiscriminatorConfig,
    FlowNet,
    FlowNetConfig,
    Generator,
    GeneratorConfig,
    PatchDiscriminator,
    ReconNet,
    ReconNetConfig,
    collapse_volume,
    update_spectral_norm,
)
from .volumes import EventStream, FramePair, build_volume, normalize_volume

CHECKPOINT_MAGIC = "EVCKPT"
CHECKPOINT_VERSION = 1

_KIND_TO_CLASS = {
    "generator": (Generator, GeneratorConfig),
    "discriminator": (PatchDiscriminator, DiscriminatorConfig),
    "flow": (FlowNet, FlowNetConfig),
    "recon": (ReconNet, ReconNetConfig),
}


@dataclass
class TrainConfig:
    epochs: int = 100
    steps_per_epoch: int = 100
    batch_size: int = 8
    crop_size: int = 256
    d_steps_per_g: int = 2
    label_flip_prob: float = 0.10
    frame_gap_range: tuple[int, int] = (1, 6)
    dataset_weights: tuple[float, ...] = (0.8, 0.2)
    lr_generator: float = 1e-4
    lr_discriminator: float = 4e-4
    lr_cycle: float = 1e-4
    pretrain_steps: int = 1000
    hflip_prob: float = 0.5
    num_bins: int = 9
    base_channels: int = 32
    num_encoder_levels: int = 4
    num_residual_blocks: int = 2
    lambda_smooth: float = 0.5
    weight_flow: float = 1.0
    weight_recon: float = 1.0
    weight_adv: float = 1.0
    printed_cycle_form: bool = False
    seed: int = 0
    deterministic: bool = True
    log_every: int = 1

    def __post_init__(self):
        if not 0.0 <= self.label_flip_prob <= 1.0:
            raise ValueError(f"label_flip_prob must be in [0, 1], got {self.label_flip_prob}")
        if self.d_steps_per_g < 1:
            raise ValueError("d_steps_per_g must be >= 1")
        if self.batch_size < 1 or self.crop_size < 4:
            raise ValueError("bad batch or crop size")

    @property
    def iterations(self) -> int:
        return self.epochs * self.steps_per_epoch

    def loss_weights(self) -> L.LossWeights:
        return L.LossWeights(self.lambda_smooth, self.weight_flow,
                             self.weight_recon, self.weight_adv)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(self.base_channels, self.num_encoder_levels,
                               self.num_residual_blocks, self.num_bins)

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(num_bins=self.num_bins)

    def flow_config(self) -> FlowNetConfig:
        return FlowNetConfig(self.base_channels, self.num_encoder_levels,
                             self.num_residual_blocks, self.num_bins)

    def recon_config(self) -> ReconNetConfig:
        return ReconNetConfig(self.base_channels, self.num_encoder_levels,
                              self.num_residual_blocks)


def seed_everything(seed: int, deterministic: bool = True) -> np.random.Generator:
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# augmentation and batching

def crop_pair(pair: FramePair, x0: int, y0: int, size: int) -> FramePair:
    h, w = pair.i0.shape
    if x0 < 0 or y0 < 0 or x0 + size > w or y0 + size > h:
        raise ValueError(f"crop [{x0}:{x0 + size}, {y0}:{y0 + size}] outside {w}x{h} frame")
    ev = pair.events
    keep = (ev.x >= x0) & (ev.x < x0 + size) & (ev.y >= y0) & (ev.y < y0 + size)
    events = EventStream(ev.x[keep] - x0, ev.y[keep] - y0, ev.t[keep], ev.p[keep], size, size)
    return FramePair(pair.i0[y0:y0 + size, x0:x0 + size], pair.i1[y0:y0 + size, x0:x0 + size],
                     pair.t0, pair.t1, events)


def hflip_pair(pair: FramePair) -> FramePair:
    ev = pair.events
    events = EventStream(ev.width - 1 - ev.x, ev.y, ev.t, ev.p, ev.width, ev.height)
    return FramePair(np.ascontiguousarray(pair.i0[:, ::-1]),
                     np.ascontiguousarray(pair.i1[:, ::-1]),
                     pair.t0, pair.t1, events)


def augment_pair(pair: FramePair, crop_size: int, rng: np.random.Generator,
                 hflip_prob: float = 0.5) -> FramePair:
    h, w = pair.i0.shape
    x0 = int(rng.integers(0, w - crop_size + 1))
    y0 = int(rng.integers(0, h - crop_size + 1))
    out = crop_pair(pair, x0, y0, crop_size)
    if rng.random() < hflip_prob:
        out = hflip_pair(out)
    return out


def _pair_source(dataset, rng: np.random.Generator):
    """Normalize a dataset argument into an infinite FramePair iterator."""
    if hasattr(dataset, "sample"):
        def gen():
            while True:
                yield dataset.sample(rng)
        return gen()
    return iter(dataset)


def make_batch(pairs, config: TrainConfig, rng: np.random.Generator):
    """Draw, augment, and voxelize a training batch.

    Returns float32 tensors i0, i1 of shape [N, 1, S, S] and the normalized
    real event volume [N, 2B, S, S].
    """
    i0s, i1s, vols = [], [], []
    for _ in range(config.batch_size):
        pair = augment_pair(next(pairs), config.crop_size, rng, config.hflip_prob)
        vol = normalize_volume(build_volume(pair.events, config.num_bins))
        i0s.append(pair.i0)
        i1s.append(pair.i1)
        vols.append(vol.data)
    i0 = torch.from_numpy(np.stack(i0s)).unsqueeze(1)
    i1 = torch.from_numpy(np.stack(i1s)).unsqueeze(1)
    vol = torch.from_numpy(np.stack(vols))
    return i0, i1, vol


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: torch.nn.Module, path, kind: str) -> None:
    if kind not in _KIND_TO_CLASS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": asdict(model.config),
        "state": model.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(path, kind: str, expected_config=None) -> torch.nn.Module:
    """Rebuild a network from a checkpoint, validating magic, kind and config."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    if payload.get("kind") != kind:
        raise CheckpointError(f"checkpoint holds a {payload.get('kind')!r} net, expected {kind!r}")
    cls, cfg_cls = _KIND_TO_CLASS[kind]
    config = cfg_cls(**payload["config"])
    if expected_config is not None and asdict(expected_config) != payload["config"]:
        diff = {k for k in payload["config"]
                if payload["config"][k] != asdict(expected_config).get(k)}
        raise CheckpointError(f"checkpoint config mismatch in fields {sorted(diff)}")
    model = cls(config)
    model.load_state_dict(payload["state"])
    return model


# ---------------------------------------------------------------------------
# freezing

def freeze(net: torch.nn.Module) -> torch.nn.Module:
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


def is_frozen(net: torch.nn.Module) -> bool:
    return (not net.training) and all(not p.requires_grad for p in net.parameters())


# ---------------------------------------------------------------------------
# scalar log

class ScalarLog:
    """Append-only tab-separated training log."""

    COLUMNS = ("step", "kind", "total", "adv", "flow", "recon", "photometric", "wall")

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.rows: list[dict] = []
        if self.path is not None and not self.path.exists():
            self.path.write_text("#" + "\t".join(self.COLUMNS) + "\n")

    def log(self, step: int, kind: str, **values) -> None:
        row = {"step": step, "kind": kind, **values}
        self.rows.append(row)
        if self.path is not None:
            fields = [str(step), kind] + [
                f"{values[c]:.6g}" if c in values else "nan" for c in self.COLUMNS[2:]
            ]
            with open(self.path, "a") as f:
                f.write("\t".join(fields) + "\n")

    @staticmethod
    def parse(path) -> list[dict]:
        rows = []
        for line in Path(path).read_text().splitlines():
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            row = {"step": int(parts[0]), "kind": parts[1]}
            for name, value in zip(ScalarLog.COLUMNS[2:], parts[2:]):
                row[name] = float(value)
            rows.append(row)
        return rows


def _check_finite(step: int, **terms) -> None:
    if any(not np.isfinite(v) for v in terms.values()):
        detail = ", ".join(f"{k}={v:.4g}" for k, v in terms.items())
        raise RuntimeError(f"non-finite loss at step {step}: {detail}")


# ---------------------------------------------------------------------------
# phase one: cycle-network pretraining

def pretrain_cycle_nets(dataset, config: TrainConfig, log_path=None,
                        checkpoint_dir=None):
    """Train the flow and reconstruction networks on real event volumes.

    Returns (flow_net, recon_net, history) where history holds one
    (flow_loss, recon_loss) pair per step.
    """
    rng = seed_everything(config.seed, config.deterministic)
    pairs = _pair_source(dataset, rng)
    flow_net = FlowNet(config.flow_config())
    recon_net = ReconNet(config.recon_config())
    opt = torch.optim.RAdam(
        list(flow_net.parameters()) + list(recon_net.parameters()), lr=config.lr_cycle)
    log = ScalarLog(log_path)
    history = []
    start = time.monotonic()
    for step in range(config.pretrain_steps):
        i0, i1, vol = make_batch(pairs, config, rng)
        flow = flow_net(vol)
        loss_flow = L.flow_loss(i0, i1, flow, config.lambda_smooth)
        recon = recon_net(i0, collapse_volume(vol))
        loss_recon = L.recon_loss(recon, i1)
        _check_finite(step, flow=loss_flow.item(), recon=loss_recon.item())
        opt.zero_grad()
        (loss_flow + loss_recon).backward()
        opt.step()
        update_spectral_norm(flow_net)
        update_spectral_norm(recon_net)
        history.append((loss_flow.item(), loss_recon.item()))
        if step % config.log_every == 0:
            log.log(step, "pretrain", total=loss_flow.item() + loss_recon.item(),
                    flow=loss_flow.item(), recon=loss_recon.item(),
                    wall=time.monotonic() - start)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(flow_net, checkpoint_dir / "flow.ckpt", "flow")
        save_checkpoint(recon_net, checkpoint_dir / "recon.ckpt", "recon")
    return flow_net, recon_net, history


# ---------------------------------------------------------------------------
# phase two: adversarial training with frozen cycle networks

def train_event_generator(dataset, flow_net: FlowNet, recon_net: ReconNet,
                          config: TrainConfig, log_path=None, checkpoint_dir=None):
    """Adversarially train the generator against the patch discriminator.

    The pretrained flow and reconstruction networks must be frozen; their
    losses on the generated volume form the cycle part of the generator
    objective. Returns (generator, discriminator, history).
    """
    if not is_frozen(flow_net) or not is_frozen(recon_net):
        raise ValueError("cycle networks must be frozen before adversarial training")
    rng = seed_everything(config.seed, config.deterministic)
    pairs = _pair_source(dataset, rng)
    generator = Generator(config.generator_config())
    discriminator = PatchDiscriminator(config.discriminator_config())
    opt_g = torch.optim.RAdam(generator.parameters(), lr=config.lr_generator)
    opt_d = torch.optim.RAdam(discriminator.parameters(), lr=config.lr_discriminator)
    weights = config.loss_weights()
    log = ScalarLog(log_path)
    history = []
    start = time.monotonic()
    for step in range(config.iterations):
        for _ in range(config.d_steps_per_g):
            i0, i1, real = make_batch(pairs, config, rng)
            with torch.no_grad():
                fake = generator(i0, i1)
            flips = torch.from_numpy(rng.random(config.batch_size) < config.label_flip_prob)
            d_loss = L.discriminator_step_loss(
                L.hinge_d_loss_flipped(discriminator(real, i0, i1),
                                       discriminator(fake, i0, i1), flips))
            _check_finite(step, d=d_loss.item())
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
            log.log(step, "d", total=d_loss.item(), wall=time.monotonic() - start)

        update_spectral_norm(generator)
        i0, i1, real = make_batch(pairs, config, rng)
        fake = generator(i0, i1)
        adv = L.hinge_g_loss(discriminator(fake, i0, i1))
        flow = flow_net(fake)
        photometric, smoothness = L.flow_loss_components(i0, i1, flow)
        loss_flow = photometric + config.lambda_smooth * smoothness
        recon = recon_net(i0, collapse_volume(fake))
        loss_recon = L.recon_loss(recon, i1)
        g_loss = L.generator_step_loss(adv, loss_flow, loss_recon, weights,
                                       config.printed_cycle_form)
        _check_finite(step, adv=adv.item(), flow=loss_flow.item(), recon=loss_recon.item())
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()
        entry = {
            "step": step,
            "total": g_loss.item(),
            "adv": adv.item(),
            "flow": loss_flow.item(),
            "recon": loss_recon.item(),
            "photometric": photometric.item(),
            "d": d_loss.item(),
        }
        history.append(entry)
        log.log(step, "g", total=g_loss.item(), adv=adv.item(), flow=loss_flow.item(),
                recon=loss_recon.item(), photometric=photometric.item(),
                wall=time.monotonic() - start)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(generator, checkpoint_dir / "generator.ckpt", "generator")
        save_checkpoint(discriminator, checkpoint_dir / "discriminator.ckpt", "discriminator")
    return generator, discriminator, history
