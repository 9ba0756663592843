"""Shared oracles for the test suite."""

import numpy as np

from fxfusion import net


def numeric_gradients(params, config, X, y, eps=1e-5, mask_seed=None):
    """Central differences of the batch MSE for every parameter entry.

    With ``mask_seed`` every evaluation redraws the same dropout masks, so the
    loss is a fixed function of the parameters.
    """
    def loss():
        rng = np.random.default_rng(mask_seed) if mask_seed is not None else None
        return net.mse_loss(params, config, X, y, training=mask_seed is not None, rng=rng)

    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss()
            flat[i] = orig - eps
            down = loss()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def analytic_gradients(params, config, X, y, mask_seed=None):
    rng = np.random.default_rng(mask_seed) if mask_seed is not None else None
    _, cache = net.forward(params, config, X, training=True, rng=rng)
    return net.backward(params, config, cache, y)


def tensor_errors(analytic, numeric):
    """Norm-wise relative error per parameter tensor."""
    out = {}
    for name in analytic:
        a, n = analytic[name], numeric[name]
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        out[name] = 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)
    return out


def small_instance(seed, hidden=4, window=3, n_features=2, batch=5, dropout=0.0):
    config = net.ModelConfig(hidden=hidden, fc=min(4, hidden), window=window, dropout=dropout, seed=seed)
    rng = np.random.default_rng(seed)
    params = net.init_params(n_features, config, rng)
    X = rng.normal(size=(batch, window, n_features))
    y = rng.normal(size=batch)
    return params, config, X, y


def surrogate_objective(trial, steps=8):
    """Quadratic in log10 learning rate with its minimum at 1e-3; the
    intermediate curve decays towards the final value."""
    from fxfusion.tuner import TrialPruned

    final = (np.log10(trial.config["learning_rate"]) + 3.0) ** 2
    for step in range(steps):
        trial.report(final + 1.0 / (step + 1), step)
        if trial.should_prune():
            raise TrialPruned
    return final


FAST = {
    "split": {"test_size": 40, "val_fraction": 0.2},
    "lda": {"k_min": 2, "k_max": 4, "iterations": 40},
    "rfe": {"keep": 6, "n_trees": 10},
    "model": {"hidden": 8, "fc": 8, "batch": 16, "epochs": 4, "patience": 20},
    "tune": {"n_trials": 3, "n_startup": 1, "n_warmup": 1, "epochs": 3},
}


def small_workspace(root, seed=0, days=200, extra=None):
    """A synthetic workspace written by ``simgen`` plus a config sized for tests."""
    import json
    from pathlib import Path

    from fxfusion.cli import main

    root = Path(root)
    assert main(["simgen", "--out", str(root), "--seed", str(seed), "--days", str(days)]) == 0
    cfg_path = root / "config.json"
    doc = json.loads(cfg_path.read_text())
    for key, value in {**FAST, **(extra or {})}.items():
        doc[key] = {**doc.get(key, {}), **value} if isinstance(value, dict) else value
    cfg_path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return cfg_path
