"""GAN training loop: loss aggregation, AdamW, the linear warmup/decline
schedule, alternating discriminator/generator steps, checkpointing, and a
plain-text metrics log."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from vqcodec import adversary, dsp, nd
from vqcodec.checkpoint import load_checkpoint, save_checkpoint
from vqcodec.errors import ConfigError, TrainingError
from vqcodec.model import Generator, ModelConfig, build
from vqcodec.quantizer import VqConfig, approx_bitrate, utilization

DIVERGENCE_LIMIT = 1e4

METRICS_FIELDS = (
    "step", "mel", "commit", "codebook", "adv_g", "fm", "total_g", "d_loss",
    "lr", "utilization", "bitrate_kbps",
)


@dataclass
class TrainConfig:
    total_steps: int
    batch_size: int = 8
    segment_seconds: float = 1.0
    seed: int = 0
    lambda_mel: float = 15.0
    lambda_commit: float = 0.25
    lambda_adv: float = 1.0
    lambda_fm: float = 1.0
    lambda_codebook: float = 1.0
    beta1: float = 0.8
    beta2: float = 0.9
    adam_eps: float = 1e-8
    weight_decay: float = 1e-2
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    warmup_steps: int = 1000
    log_interval: int = 10
    clip_grad_norm: float | None = None
    train_adversary: bool = True

    def __post_init__(self):
        for name in ("lambda_mel", "lambda_commit", "lambda_adv", "lambda_fm",
                     "lambda_codebook"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 < self.lr_end <= self.lr_start:
            raise ConfigError("need 0 < lr_end <= lr_start")
        if self.warmup_steps < 0 or self.total_steps < 1:
            raise ConfigError("warmup_steps >= 0 and total_steps >= 1 required")
        if self.batch_size < 1 or self.segment_seconds <= 0:
            raise ConfigError("batch_size >= 1 and segment_seconds > 0 required")


@dataclass
class LossReport:
    step: int
    mel: float
    commit: float
    codebook: float
    adv_g: float
    fm: float
    total_g: float
    d_loss: float
    utilization: float
    lr: float
    bitrate_kbps: float


def lr_at(step, cfg: TrainConfig):
    """Linear ramp 0 -> lr_start over warmup, then linear decline to lr_end
    at total_steps, clamped afterwards."""
    if step < 0:
        raise ConfigError("step must be >= 0")
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr_start * step / cfg.warmup_steps
    if step >= cfg.total_steps:
        return cfg.lr_end
    span = cfg.total_steps - cfg.warmup_steps
    if span <= 0:
        return cfg.lr_end
    frac = (step - cfg.warmup_steps) / span
    return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac


def total_generator_loss(mel, commit, codebook, adv_g, fm, cfg: TrainConfig):
    """Weighted sum: lambda_mel*mel + lambda_commit*commit + codebook + adv + fm."""
    for name, term in (("mel", mel), ("commit", commit), ("codebook", codebook),
                       ("adv_g", adv_g), ("fm", fm)):
        value = term.item() if isinstance(term, nd.Tensor) else float(term)
        if not np.isfinite(value):
            raise TrainingError(f"loss component '{name}' is not finite: {value}")
    terms = nd.add(nd.mul(mel, cfg.lambda_mel), nd.mul(commit, cfg.lambda_commit))
    terms = nd.add(terms, nd.mul(codebook, cfg.lambda_codebook))
    terms = nd.add(terms, nd.mul(adv_g, cfg.lambda_adv))
    return nd.add(terms, nd.mul(fm, cfg.lambda_fm))


class AdamW:
    """Decoupled-weight-decay Adam over a fixed parameter list.

    Weight decay applies only to parameters flagged ``decay`` (conv/linear
    weights); biases, snake alphas, and the codebook are exempt.
    """

    def __init__(self, named_params, cfg: TrainConfig):
        self.named_params = list(named_params)
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self, lr):
        cfg = self.cfg
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        if cfg.clip_grad_norm is not None:
            self._clip_gradients(cfg.clip_grad_norm)
        for i, (name, p) in enumerate(self.named_params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter '{name}'")
            m = self.m[i]
            v = self.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
            if p.decay and cfg.weight_decay:
                update = update + cfg.weight_decay * p.data
            p.data = p.data - lr * update

    def _clip_gradients(self, max_norm):
        total = 0.0
        for _, p in self.named_params:
            if p.grad is not None:
                total += float((p.grad.astype(np.float64) ** 2).sum())
        norm = np.sqrt(total)
        if norm > max_norm:
            scale = max_norm / norm
            for _, p in self.named_params:
                if p.grad is not None:
                    p.grad = p.grad * scale

    def state_arrays(self, prefix):
        out = {}
        for i, (name, _) in enumerate(self.named_params):
            out[f"{prefix}.m.{name}"] = self.m[i]
            out[f"{prefix}.v.{name}"] = self.v[i]
        return out

    def load_state(self, arrays, prefix):
        for i, (name, p) in enumerate(self.named_params):
            self.m[i] = np.array(arrays[f"{prefix}.m.{name}"], dtype=p.data.dtype)
            self.v[i] = np.array(arrays[f"{prefix}.v.{name}"], dtype=p.data.dtype)


def adamw_step(params, grads, state, lr, cfg: TrainConfig):
    """Single functional AdamW update for plain arrays.

    ``state`` is a dict with keys m, v, t (created when empty); returns the
    updated parameter arrays.  Used by the scalar oracles and tests; the
    training loop uses the stateful :class:`AdamW`.
    """
    if not state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter index {i}")
        state["m"][i] = cfg.beta1 * state["m"][i] + (1 - cfg.beta1) * g
        state["v"][i] = cfg.beta2 * state["v"][i] + (1 - cfg.beta2) * g * g
        m_hat = state["m"][i] / (1 - cfg.beta1 ** t)
        v_hat = state["v"][i] / (1 - cfg.beta2 ** t)
        update = m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        if cfg.weight_decay:
            update = update + cfg.weight_decay * p
        out.append(p - lr * update)
    return out


def _disc_logits(outputs):
    return [o.logits for o in outputs]


def _disc_features(outputs):
    return [o.features for o in outputs]


def discriminator_step(x, gen: Generator, discs, opt_d, lr):
    """Update the discriminators on one batch; the generator is untouched."""
    with nd.no_grad():
        fake = gen.forward(x).reconstruction
    b = x.shape[0]
    # one batched pass over [real; fake]; both halves are constants here
    both = discs.forward(nd.Tensor(np.concatenate([x.data, fake.data], axis=0)))
    real_logits = [nd.narrow(o.logits, 0, 0, b) for o in both]
    fake_logits = [nd.narrow(o.logits, 0, b, b) for o in both]
    d_loss, _ = adversary.lsgan_losses(real_logits, fake_logits)
    discs.zero_grad()
    nd.backward(d_loss)
    opt_d.step(lr)
    return d_loss.item()


def generator_step(x, gen: Generator, discs, opt_g, lr, cfg: TrainConfig, step):
    """Update the generator (codebook included); discriminators are frozen."""
    out = gen.forward(x)
    b, _, t = x.shape
    flat_x = nd.reshape(x, (b, t))
    flat_y = nd.reshape(out.reconstruction, (b, t))
    mel = dsp.multi_scale_mel_loss(nd.stop_gradient(flat_x), flat_y,
                                   sample_rate=gen.cfg.sample_rate)
    commit = out.vq.commitment_loss
    codebook = out.vq.codebook_loss

    use_adv = cfg.train_adversary and (cfg.lambda_adv > 0 or cfg.lambda_fm > 0)
    if use_adv and discs is not None:
        discs.freeze()
        try:
            with nd.no_grad():
                real_out = discs.forward(x)
            fake_out = discs.forward(out.reconstruction)
            _, adv_g = adversary.lsgan_losses(
                _disc_logits(real_out), _disc_logits(fake_out)
            )
            fm = adversary.feature_matching(
                _disc_features(real_out), _disc_features(fake_out)
            )
            total = total_generator_loss(mel, commit, codebook, adv_g, fm, cfg)
            total_value = total.item()
            _check_divergence(total_value, step)
            gen.zero_grad()
            nd.backward(total)
        finally:
            discs.unfreeze()
    else:
        adv_g = nd.Tensor(np.zeros((), dtype=x.dtype))
        fm = nd.Tensor(np.zeros((), dtype=x.dtype))
        total = total_generator_loss(mel, commit, codebook, adv_g, fm, cfg)
        total_value = total.item()
        _check_divergence(total_value, step)
        gen.zero_grad()
        nd.backward(total)
    opt_g.step(lr)
    return out, mel.item(), commit.item(), codebook.item(), adv_g.item(), fm.item(), total_value


def _check_divergence(total_value, step):
    if not np.isfinite(total_value) or total_value > DIVERGENCE_LIMIT:
        raise TrainingError(
            f"generator loss diverged at step {step}: total={total_value}"
        )


def train_step(batch, gen: Generator, discs, opt_g, opt_d, step, cfg: TrainConfig):
    """One alternating update: discriminators first, then the generator."""
    x = batch if isinstance(batch, nd.Tensor) else nd.Tensor(batch)
    lr = lr_at(step, cfg)
    if cfg.train_adversary and discs is not None:
        d_loss = discriminator_step(x, gen, discs, opt_d, lr)
    else:
        d_loss = 0.0
    out, mel, commit, codebook, adv_g, fm, total = generator_step(
        x, gen, discs, opt_g, lr, cfg, step
    )
    frame_rate = gen.cfg.frame_rate
    return LossReport(
        step=step,
        mel=mel,
        commit=commit,
        codebook=codebook,
        adv_g=adv_g,
        fm=fm,
        total_g=total,
        d_loss=d_loss,
        utilization=utilization(out.vq.indices, gen.cfg.vq.codebook_size),
        lr=lr,
        bitrate_kbps=approx_bitrate(out.vq.indices, frame_rate),
    )


def metrics_line(report: LossReport) -> str:
    values = {
        "step": report.step,
        "mel": report.mel,
        "commit": report.commit,
        "codebook": report.codebook,
        "adv_g": report.adv_g,
        "fm": report.fm,
        "total_g": report.total_g,
        "d_loss": report.d_loss,
        "lr": report.lr,
        "utilization": report.utilization,
        "bitrate_kbps": report.bitrate_kbps,
    }
    parts = []
    for key in METRICS_FIELDS:
        v = values[key]
        parts.append(f"{key}={v}" if key == "step" else f"{key}={v:.6g}")
    return " ".join(parts)


def parse_metrics(text):
    """Parse metrics lines back into dicts of floats."""
    rows = []
    for line in text.strip().splitlines():
        row = {}
        for item in line.split():
            key, value = item.split("=", 1)
            row[key] = float(value)
        rows.append(row)
    return rows


def _crop_batch(dataset, rng, batch_size, segment, dtype):
    batch = np.empty((batch_size, 1, segment), dtype=dtype)
    for i in range(batch_size):
        which = int(rng.integers(0, len(dataset)))
        signal = dataset[which]
        offset = int(rng.integers(0, len(signal) - segment + 1))
        batch[i, 0] = signal[offset:offset + segment]
    return batch


def _training_meta(model_cfg, cfg, step, rng):
    return {
        "kind": "training",
        "model": model_config_dict(model_cfg),
        "train": asdict(cfg),
        "step": step,
        "rng_state": rng.bit_generator.state,
        "dtype": "float32",
    }


def model_config_dict(cfg: ModelConfig):
    return {
        "n_blocks": cfg.n_blocks,
        "rates": list(cfg.rates),
        "base_channels": cfg.base_channels,
        "sample_rate": cfg.sample_rate,
        "vq": {
            "input_dim": cfg.vq.input_dim,
            "code_dim": cfg.vq.code_dim,
            "codebook_size": cfg.vq.codebook_size,
        },
    }


def model_config_from_dict(d) -> ModelConfig:
    return ModelConfig(
        n_blocks=d["n_blocks"],
        rates=tuple(d["rates"]),
        base_channels=d["base_channels"],
        sample_rate=d["sample_rate"],
        vq=VqConfig(**d["vq"]),
    )


def save_training_state(path, gen, discs, opt_g, opt_d, model_cfg, cfg, step, rng):
    arrays = {}
    for name, p in gen.named_parameters():
        arrays[f"gen.{name}"] = p.data
    if discs is not None:
        for name, p in discs.named_parameters():
            arrays[f"disc.{name}"] = p.data
        arrays.update(opt_d.state_arrays("opt_d"))
    arrays.update(opt_g.state_arrays("opt_g"))
    meta = _training_meta(model_cfg, cfg, step, rng)
    meta["opt_t"] = {"g": opt_g.t, "d": opt_d.t if opt_d is not None else 0}
    save_checkpoint(path, meta, arrays)


def fit(dataset, model_cfg: ModelConfig, cfg: TrainConfig,
        ckpt_path=None, metrics_path=None, resume_from=None, dtype=np.float32,
        on_report=None):
    """Train on random fixed-length crops of ``dataset``.

    Returns (generator, discriminators, reports).  The checkpoint carries
    parameters, optimizer moments, the crop RNG state, and the step count,
    so resuming reproduces the uninterrupted run bit for bit.
    """
    if not dataset:
        raise ConfigError("dataset is empty")
    segment = int(round(cfg.segment_seconds * model_cfg.sample_rate))
    if segment % model_cfg.downsample_rate != 0:
        raise ConfigError(
            f"segment length {segment} must be a multiple of R="
            f"{model_cfg.downsample_rate}"
        )
    for i, signal in enumerate(dataset):
        if len(signal) < segment:
            raise ConfigError(
                f"dataset item {i} ({len(signal)} samples) is shorter than "
                f"one {segment}-sample segment"
            )
    dataset = [np.asarray(s, dtype=dtype) for s in dataset]

    start_step = 0
    if resume_from is not None:
        meta, arrays = load_checkpoint(resume_from)
        model_cfg = model_config_from_dict(meta["model"])
        gen = build(model_cfg, seed=cfg.seed, dtype=dtype)
        gen.load_state(
            {k[len("gen."):]: v for k, v in arrays.items() if k.startswith("gen.")}
        )
        discs = adversary.build_discriminators(cfg.seed + 1, dtype=dtype)
        disc_state = {
            k[len("disc."):]: v for k, v in arrays.items() if k.startswith("disc.")
        }
        if disc_state:
            discs.load_state(disc_state)
        opt_g = AdamW(gen.named_parameters(), cfg)
        opt_d = AdamW(discs.named_parameters(), cfg)
        opt_g.load_state(arrays, "opt_g")
        if any(k.startswith("opt_d.") for k in arrays):
            opt_d.load_state(arrays, "opt_d")
        opt_g.t = meta["opt_t"]["g"]
        opt_d.t = meta["opt_t"]["d"]
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
        start_step = meta["step"]
    else:
        gen = build(model_cfg, seed=cfg.seed, dtype=dtype)
        discs = adversary.build_discriminators(cfg.seed + 1, dtype=dtype)
        opt_g = AdamW(gen.named_parameters(), cfg)
        opt_d = AdamW(discs.named_parameters(), cfg)
        rng = np.random.default_rng(cfg.seed + 2)

    reports = []
    lines = []
    for step in range(start_step + 1, cfg.total_steps + 1):
        batch = _crop_batch(dataset, rng, cfg.batch_size, segment, dtype)
        report = train_step(batch, gen, discs, opt_g, opt_d, step, cfg)
        reports.append(report)
        if step % cfg.log_interval == 0:
            lines.append(metrics_line(report))
        if on_report is not None:
            on_report(report)

    if metrics_path is not None:
        with open(metrics_path, "w") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
    if ckpt_path is not None:
        save_training_state(
            ckpt_path, gen, discs, opt_g, opt_d, model_cfg, cfg,
            cfg.total_steps, rng,
        )
    return gen, discs, reports
