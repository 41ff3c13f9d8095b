"""Registered finite-difference suites for the gradcheck command and the
acceptance tests.

Each case builds a scalar-valued function and float64 inputs from a seed;
``run_suites`` compares analytic gradients against central differences.
Paths that cross the quantization boundary are excluded by construction:
the straight-through estimator is deliberately not the local derivative,
so it is verified by a substitute-identity oracle in the quantizer tests
instead of by finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vqcodec import adversary, dsp, nd, quantizer
from vqcodec.adversary import (
    MpdConfig,
    MsStftConfig,
    MultiPeriodDiscriminator,
    MultiStftDiscriminator,
)
from vqcodec.errors import ConfigError
from vqcodec.nn import LSTM, Conv1d, ConvTranspose1d

MODULES = ("nd-core", "quantizer", "dsp", "model")


@dataclass
class SuiteResult:
    module: str
    name: str
    seed: int
    max_rel_err: float
    passed: bool


def _nd_cases(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    row = rng.normal(size=(1, 4))
    pos = np.abs(rng.normal(size=(3, 4))) + 0.5
    c43 = rng.normal(size=(4, 3))
    c39 = rng.normal(size=(3, 9))
    c254 = rng.normal(size=(2, 5, 4))
    cases = [
        ("add", lambda x, y: nd.sum(nd.add(x, y)), [a, b]),
        ("sub", lambda x, y: nd.sum(nd.power(nd.sub(x, y), 2)), [a, b]),
        ("mul", lambda x, y: nd.sum(nd.mul(x, y)), [a, b]),
        ("mul_broadcast", lambda x, y: nd.sum(nd.mul(x, y)), [a, row]),
        ("div", lambda x, y: nd.sum(nd.div(x, y)), [a, pos]),
        ("scalar_mul", lambda x: nd.sum(nd.mul(x, 3.5)), [a]),
        ("sin", lambda x: nd.sum(nd.sin(x)), [a]),
        ("exp", lambda x: nd.sum(nd.exp(x)), [a]),
        ("log", lambda x: nd.sum(nd.log(x)), [pos]),
        ("pow", lambda x: nd.sum(nd.power(x, 1.5)), [pos]),
        ("square", lambda x: nd.sum(nd.power(x, 2)), [a]),
        ("abs", lambda x: nd.sum(nd.absolute(x)), [a + 3.0]),
        ("safe_sqrt", lambda x: nd.sum(nd.safe_sqrt(x)), [pos]),
        ("tanh", lambda x: nd.sum(nd.tanh(x)), [a]),
        ("sigmoid", lambda x: nd.sum(nd.sigmoid(x)), [a]),
        ("leaky_relu", lambda x: nd.sum(nd.leaky_relu(x + 0.2)), [a]),
        ("maximum_scalar", lambda x: nd.sum(nd.maximum_scalar(x, 0.25)), [a * 2]),
        ("snake", lambda x, al: nd.sum(nd.snake(x, al)),
         [rng.normal(size=(2, 3, 5)), rng.uniform(0.3, 1.5, size=(1, 3, 1))]),
        ("sum_axis", lambda x: nd.sum(nd.power(nd.sum(x, axis=0), 2)), [a]),
        ("mean", lambda x: nd.sum(nd.power(nd.mean(x, axis=1), 2)), [a]),
        ("reshape", lambda x: nd.sum(nd.mul(nd.reshape(x, (4, 3)), c43)), [a]),
        ("transpose", lambda x: nd.sum(nd.mul(nd.transpose(x, (1, 0)), c43)), [a]),
        ("narrow", lambda x: nd.sum(nd.power(nd.narrow(x, 1, 1, 2), 2)), [a]),
        ("pad_reflect", lambda x: nd.sum(nd.mul(nd.pad_reflect1d(x, 2, 3), c39)), [a]),
        ("frame", lambda x: nd.sum(nd.mul(nd.frame(x, 4, 2), c254)),
         [rng.normal(size=(2, 12))]),
        ("matmul", lambda x, y: nd.sum(nd.power(nd.matmul(x, y), 2)),
         [rng.normal(size=(3, 5)), rng.normal(size=(5, 2))]),
        ("gather_rows",
         lambda t: nd.sum(nd.mul(nd.gather_rows(t, np.array([0, 2, 2, 1])), c43)),
         [rng.normal(size=(4, 3))]),
        ("l2_normalize",
         lambda x: nd.sum(nd.mul(nd.l2_normalize(x, axis=1), b)), [a * 2]),
    ]
    for stride, dil, pad in ((1, 1, 0), (2, 1, 2), (1, 3, 3), (3, 2, 4)):
        xi = rng.normal(size=(2, 3, 14))
        w = rng.normal(size=(4, 3, 3))
        bb = rng.normal(size=(4,))

        def f(xx, ww, cc, s=stride, d=dil, p=pad):
            return nd.sum(nd.power(nd.conv1d(xx, ww, cc, stride=s, dilation=d, padding=p), 2))

        cases.append((f"conv1d_s{stride}d{dil}p{pad}", f, [xi, w, bb]))
    for stride, pad in ((1, 0), (2, 1), (5, 3)):
        xi = rng.normal(size=(2, 3, 6))
        w = rng.normal(size=(3, 4, 6))
        bb = rng.normal(size=(4,))

        def f(xx, ww, cc, s=stride, p=pad):
            return nd.sum(nd.power(nd.conv_transpose1d(xx, ww, cc, stride=s, padding=p), 2))

        cases.append((f"conv_transpose1d_s{stride}p{pad}", f, [xi, w, bb]))
    for stride, pad in (((1, 1), (0, 0)), ((2, 2), (1, 1)), ((3, 1), (2, 1))):
        xi = rng.normal(size=(2, 2, 8, 7))
        w = rng.normal(size=(3, 2, 3, 3))
        bb = rng.normal(size=(3,))

        def f(xx, ww, cc, s=stride, p=pad):
            return nd.sum(nd.power(nd.conv2d(xx, ww, cc, stride=s, padding=p), 2))

        cases.append((f"conv2d_s{stride[0]}{stride[1]}p{pad[0]}{pad[1]}", f, [xi, w, bb]))
    for layers in (1, 2):
        raw = []
        d = 3
        for _ in range(layers):
            raw += [rng.normal(size=(d, 16)) * 0.4, rng.normal(size=(4, 16)) * 0.4,
                    rng.normal(size=(16,)) * 0.1]
            d = 4

        def f(xx, *ps, n=layers):
            lp = [(ps[3 * i], ps[3 * i + 1], ps[3 * i + 2]) for i in range(n)]
            return nd.sum(nd.power(nd.lstm_forward(xx, lp), 2))

        cases.append((f"lstm_{layers}layer", f, [rng.normal(size=(2, 5, 3))] + raw))
    return cases


def _quantizer_cases(rng):
    codebook = quantizer.Codebook(6, 3, rng, dtype=np.float64)
    z = rng.normal(size=(2, 3, 4))
    w_down = rng.normal(size=(3, 5))
    w_up = rng.normal(size=(5, 3))
    h = rng.normal(size=(2, 5, 4))
    _, z_q = quantizer.quantize(nd.Tensor(z), codebook)
    z_q_const = z_q.data.copy()

    def commitment(z_e):
        _, commit = quantizer.vq_losses(z_e, nd.Tensor(z_q_const))
        return commit

    def codebook_pull(vectors):
        # route gradient into the codebook rows selected for fixed latents
        codebook.vectors = vectors
        _, z_q2 = quantizer.quantize(nd.Tensor(z), codebook)
        loss, _ = quantizer.vq_losses(nd.Tensor(z), z_q2)
        return loss

    return [
        ("project_down", lambda hh, ww: nd.sum(nd.power(quantizer.project_down(hh, ww), 2)), [h, w_down]),
        ("project_up", lambda zz, ww: nd.sum(nd.power(quantizer.project_up(zz, ww), 2)), [z, w_up]),
        ("commitment_loss", commitment, [z]),
        ("codebook_loss", codebook_pull, [codebook.vectors.data.copy()]),
    ]


def _dsp_cases(rng):
    x_ref = rng.normal(size=(1, 96))

    def stft_loss(x):
        cfg = dsp.StftConfig(n_fft=32, hop=8)
        return nd.mean(nd.power(dsp.stft_magnitude(x, cfg), 2))

    def mel_loss(x_hat):
        return dsp.multi_scale_mel_loss(nd.Tensor(x_ref), x_hat,
                                        scales=[(32, 5), (64, 6)])

    return [
        ("stft_magnitude", stft_loss, [rng.normal(size=(2, 48))]),
        ("multi_scale_mel_loss", mel_loss, [rng.normal(size=(1, 96))]),
    ]


def _model_cases(rng):
    conv = Conv1d(2, 2, 3, padding=1, rng=rng, dtype=np.float64)
    up = ConvTranspose1d(2, 1, 4, stride=2, padding=1, rng=rng, dtype=np.float64)
    lstm = LSTM(3, 3, layers=2, rng=rng, dtype=np.float64)
    mpd = MultiPeriodDiscriminator(
        MpdConfig(periods=(2, 3), channels=(2, 3)), rng, dtype=np.float64
    )
    msd = MultiStftDiscriminator(
        MsStftConfig(n_ffts=(32,), channels=(2, 3)), rng, dtype=np.float64
    )
    x_ref = rng.normal(size=(1, 40))

    def decoder_path(z, w):
        conv.weight = w
        y = up(conv(z))
        flat = nd.reshape(y, (y.shape[0], y.shape[2]))
        return dsp.multi_scale_mel_loss(nd.Tensor(x_ref), flat, scales=[(16, 3)])

    def encoder_path(x, w):
        conv.weight = w
        y = nd.snake(conv(x), 0.7)
        return nd.mean(nd.power(y, 2))

    def lstm_residual(x):
        return nd.mean(nd.power(nd.add(x, lstm(x)), 2))

    def lsgan_g(fake_wave):
        outs = mpd.forward(fake_wave) + msd.forward(fake_wave)
        logits = [o.logits for o in outs]
        _, g = adversary.lsgan_losses(logits, logits)
        return g

    d_wave = rng.normal(size=(1, 1, 64))

    def lsgan_d_weight(w):
        mpd.subs[0].stack.convs[0].weight = w
        outs = mpd.forward(nd.Tensor(d_wave))
        logits = [o.logits for o in outs]
        d, _ = adversary.lsgan_losses(logits, [nd.mul(o, 0.5) for o in logits])
        return d

    real_wave = rng.normal(size=(1, 1, 64))

    def fm_loss(fake_wave):
        with nd.no_grad():
            real = mpd.forward(nd.Tensor(real_wave))
        fake = mpd.forward(fake_wave)
        return adversary.feature_matching(
            [o.features for o in real], [o.features for o in fake]
        )

    return [
        ("decoder_mel_path", decoder_path,
         [rng.normal(size=(1, 2, 20)), rng.normal(size=(2, 2, 3)) * 0.5]),
        ("encoder_snake_path", encoder_path,
         [rng.normal(size=(1, 2, 12)), rng.normal(size=(2, 2, 3)) * 0.5]),
        ("lstm_residual", lstm_residual, [rng.normal(size=(2, 6, 3))]),
        ("lsgan_generator", lsgan_g, [rng.normal(size=(1, 1, 64)) * 0.5]),
        ("lsgan_disc_weight", lsgan_d_weight, [rng.normal(size=(2, 1, 3, 5)) * 0.5]),
        ("feature_matching", fm_loss, [rng.normal(size=(1, 1, 64)) * 0.5]),
    ]


_BUILDERS = {
    "nd-core": _nd_cases,
    "quantizer": _quantizer_cases,
    "dsp": _dsp_cases,
    "model": _model_cases,
}


def run_suites(modules=("all",), tol=1e-4, seeds=(0, 1, 2, 3)):
    """Run the registered gradient suites; returns a list of SuiteResult."""
    selected = MODULES if "all" in modules else tuple(modules)
    for m in selected:
        if m not in _BUILDERS:
            raise ConfigError(f"unknown gradcheck module '{m}' (choose from {MODULES})")
    results = []
    for seed in seeds:
        for module in selected:
            rng = np.random.default_rng(1000 + seed)
            for name, fn, inputs in _BUILDERS[module](rng):
                report = nd.grad_check(fn, [nd.Tensor(i) for i in inputs], tol=tol)
                results.append(
                    SuiteResult(module, name, seed, report.max_rel_err, report.passed)
                )
    return results
