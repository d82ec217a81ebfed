"""Learning-rate and momentum schedules and the Adam parameter update."""

from __future__ import annotations

import numpy as np

from .network import PARAM_DEPTH, Hyperparameters, NetworkModel


def lr_schedule(step: int, hp: Hyperparameters, layer_depth: int = 0) -> float:
    """Annealed base rate, scaled by ``rate_decay`` per layer away from the output."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return hp.learning_rate / (1.0 + hp.rate_annealing * step) * hp.rate_decay ** layer_depth


def momentum_schedule(samples_seen: int, hp: Hyperparameters) -> float:
    """Linear ramp from momentum_start to momentum_stable over momentum_ramp samples."""
    if samples_seen < 0:
        raise ValueError("samples_seen must be >= 0")
    if samples_seen >= hp.momentum_ramp:
        return hp.momentum_stable
    frac = samples_seen / hp.momentum_ramp
    return hp.momentum_start + frac * (hp.momentum_stable - hp.momentum_start)


def update_parameters(model: NetworkModel, grads: dict[str, np.ndarray],
                      batch_size: int = 0) -> NetworkModel:
    """One Adam step in place; the first-moment decay follows the momentum schedule.

    Bias correction uses the running product of the (time-varying) first
    moment decays, which reduces to the usual ``1 - beta1**t`` when the decay
    is constant. ``batch_size`` advances the sample counter that drives the
    momentum ramp.
    """
    hp, st = model.hp, model.opt
    for k, g in grads.items():
        if g.shape != model.params[k].shape:
            raise ValueError(f"gradient {k} has shape {g.shape}, expected {model.params[k].shape}")
    beta1 = momentum_schedule(st.samples_seen, hp)
    beta2 = hp.adam_beta2
    st.beta1_prod *= beta1
    st.beta2_prod *= beta2
    c1 = 1.0 - st.beta1_prod
    c2 = 1.0 - st.beta2_prod
    for name, g in grads.items():
        m = st.m[name]
        v = st.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / c1 if c1 > 0 else m
        v_hat = v / c2 if c2 > 0 else v
        eta = lr_schedule(st.step, hp, PARAM_DEPTH[name])
        model.params[name] -= eta * m_hat / (np.sqrt(v_hat) + hp.adam_epsilon)
    st.step += 1
    st.samples_seen += batch_size
    return model
