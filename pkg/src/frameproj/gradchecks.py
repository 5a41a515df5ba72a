"""Finite-difference gradient checks for every layer family on tiny networks.

Each check builds a small seeded module, reduces its output to a scalar
with a fixed random weighting and compares backprop against central
differences on every parameter (and on the input where it is a leaf).
"""

import numpy as np

from . import tensor as T
from .data import philox
from .models import (
    BatchNorm,
    Conv1d,
    Conv2d,
    ConvTranspose1d,
    EncoderConfig,
    LatentMapper,
    Linear,
    Projector,
    ResBlock1d,
    build_encoder,
    init_parameters,
)
from .objectives import instance_discrimination_loss, mapping_loss

TOLERANCE = 1e-4
STEP = 1e-5


def _module_check(module, inputs, rng, step, input_grad=True):
    leaves = [T.Tensor(x, requires_grad=True) for x in inputs]
    weights = {}

    def forward():
        out = module(*leaves)
        if "w" not in weights:
            weights["w"] = rng.standard_normal(out.shape)
        return T.sum(T.mul(out, T.Tensor(weights["w"])))

    params = module.parameters() + (leaves if input_grad else [])
    return T.grad_check_report(forward, params, step)


def _small_encoder_configs():
    return {
        "time_encoder": EncoderConfig(family="time", length_in=32, width=4, latent_dim=8, kernel_size=3),
        "fourier_encoder": EncoderConfig(family="fourier", length_in=17, width=2, latent_dim=8, kernel_size=3),
        "wavelet_encoder": EncoderConfig(family="wavelet", length_in=32, width=2, latent_dim=8,
                                         kernel_size=3, n_scales=8),
    }


def layer_family_checks(seed=0, step=STEP, batch=4):
    """Gradient check report per layer family; every net has at most 10k parameters."""
    results = {}

    def rng(i):
        return philox(seed, 100 + i)

    def x(i, *shape):
        return rng(i).standard_normal(shape)

    results["linear"] = _module_check(init_parameters(Linear(5, 3), seed, 1), [x(0, batch, 5)], rng(50), step)
    results["conv1d"] = _module_check(init_parameters(Conv1d(2, 3, 3, 2, 1), seed, 2),
                                      [x(1, batch, 2, 9)], rng(51), step)
    results["conv_transpose1d"] = _module_check(
        init_parameters(ConvTranspose1d(3, 2, 3, 2, 1, output_padding=1), seed, 3),
        [x(2, batch, 3, 5)], rng(52), step)
    results["conv2d"] = _module_check(init_parameters(Conv2d(2, 3, 3, 2, 1), seed, 4),
                                      [x(3, batch, 2, 6, 7)], rng(53), step)
    results["batch_norm"] = _module_check(init_parameters(BatchNorm(3), seed, 5),
                                          [x(4, batch, 3, 6)], rng(54), step)
    results["res_block"] = _module_check(init_parameters(ResBlock1d(2, 4, 3, 2), seed, 6),
                                         [x(5, batch, 2, 12)], rng(55), step)
    results["projector"] = _module_check(init_parameters(Projector(6, 5, 4), seed, 7),
                                         [x(6, batch, 6)], rng(56), step)
    results["latent_mapper"] = _module_check(init_parameters(LatentMapper(8), seed, 8),
                                             [x(7, batch, 8)], rng(57), step)

    cfgs = _small_encoder_configs()
    results["time_encoder"] = _module_check(init_parameters(build_encoder(cfgs["time_encoder"]), seed, 9),
                                            [x(8, batch, 1, 32)], rng(58), step)
    mags = np.abs(x(9, batch, 1, 17)) + 0.1
    phases = rng(10).uniform(-np.pi, np.pi, (batch, 1, 17))
    results["fourier_encoder"] = _module_check(
        init_parameters(build_encoder(cfgs["fourier_encoder"]), seed, 10), [mags, phases], rng(59), step)
    scal = np.abs(x(11, batch, 1, 8, 32)) + 0.1
    results["wavelet_encoder"] = _module_check(
        init_parameters(build_encoder(cfgs["wavelet_encoder"]), seed, 11), [scal], rng(60), step)
    results["full_composition"] = composition_check(seed, step, batch)
    return results


def composition_check(seed=0, step=STEP, batch=4, tau=0.2):
    """Three encoders, projectors, embedding mappers and the summed pretraining loss."""
    cfgs = _small_encoder_configs()
    enc = {d: init_parameters(build_encoder(cfgs[k]), seed, 20 + i)
           for i, (d, k) in enumerate((("t", "time_encoder"), ("F", "fourier_encoder"), ("W", "wavelet_encoder")))}
    proj = {d: init_parameters(Projector(8, 6, 4), seed, 30 + i) for i, d in enumerate("tFW")}
    maps = {d: init_parameters(LatentMapper(4), seed, 40 + i) for i, d in enumerate("FW")}
    r = philox(seed, 200)
    x = r.standard_normal((batch, 1, 32))
    mags = np.abs(r.standard_normal((batch, 1, 17))) + 0.1
    phases = r.uniform(-np.pi, np.pi, (batch, 1, 17))
    scal = np.abs(r.standard_normal((batch, 1, 8, 32))) + 0.1

    def forward():
        z_t = proj["t"](enc["t"](T.Tensor(x)))
        z_f = proj["F"](enc["F"](T.Tensor(mags), T.Tensor(phases)))
        z_w = proj["W"](enc["W"](T.Tensor(scal)))
        l_id, _ = instance_discrimination_loss(z_t, z_f, z_w, tau)
        return T.add(l_id, mapping_loss(z_t, z_f, z_w, maps["F"], maps["W"]))

    params = []
    for group in (enc, proj, maps):
        for m in group.values():
            params.extend(m.parameters())
    if sum(p.data.size for p in params) > 10000:
        raise AssertionError("composition net exceeds the 10k parameter budget")
    return T.grad_check_report(forward, params, step)


def parameter_counts():
    """Parameter count of each small encoder used by the checks."""
    return {k: build_encoder(c).num_parameters() for k, c in _small_encoder_configs().items()}
