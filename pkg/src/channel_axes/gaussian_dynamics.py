"""Gradient geometry of the two axes, and a small training simulator.

For a linear channel y = w . x (plus a fixed reference noise floor
sigma0_sq), both axis quantities are smooth functions of the weight row:

    I_X(w)  = 0.5 ln(1 + s / sigma0_sq),            s = w' Sigma w
    I_TY(w) = -0.5 ln(1 - b^2 / (D sigma_t_sq)),    b = w' c,  D = s + sigma0_sq

Their gradients reveal when "capture more input" and "track the target"
pull a channel in the same direction. The cancellation construction builds
a target covariance c for which the two gradients are exactly orthogonal,
which pins down the degenerate geometry tests.

``simulate_training`` runs joint gradient descent of a linear student
(channel matrix plus readout) on a Gaussian teacher task and records weight
snapshots, so axis metrics can be recomputed post hoc against the true or a
permuted target and their rank coupling tracked over training.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._util import rng_for
from .axis_metrics import mi_from_corr
from .errors import DegenerateDataError


def input_capture_value(w, sigma_x, sigma0_sq):
    s = float(w @ sigma_x @ w)
    return 0.5 * np.log1p(s / sigma0_sq)


def task_mi_value(w, sigma_x, c, sigma0_sq, sigma_t_sq):
    b = float(w @ c)
    d = float(w @ sigma_x @ w) + sigma0_sq
    r2 = b * b / (d * sigma_t_sq)
    return -0.5 * np.log1p(-min(r2, 1.0 - 1e-12))


def grad_input_capture(w, sigma_x, sigma0_sq):
    """d I_X / d w = Sigma w / (sigma0_sq + s)."""
    sw = sigma_x @ w
    return sw / (sigma0_sq + float(w @ sw))


def grad_task_mi(w, sigma_x, c, sigma0_sq, sigma_t_sq, clip=1e-6):
    """d I_TY / d w = (1 - rho^2)^-1 (b / (D sigma_t_sq)) (c - (b / D) Sigma w)."""
    sw = sigma_x @ w
    b = float(w @ c)
    d = float(w @ sw) + sigma0_sq
    rho2 = b * b / (d * sigma_t_sq)
    if rho2 >= 1.0 - clip:
        raise DegenerateDataError("degenerate task correlation")
    return (1.0 / (1.0 - rho2)) * (b / (d * sigma_t_sq)) * (c - (b / d) * sw)


def gradient_cosine(w, sigma_x, c, sigma0_sq, sigma_t_sq):
    """Cosine between the two axis gradients at w (0 if either vanishes)."""
    g1 = grad_input_capture(w, sigma_x, sigma0_sq)
    g2 = grad_task_mi(w, sigma_x, c, sigma0_sq, sigma_t_sq)
    n1, n2 = np.linalg.norm(g1), np.linalg.norm(g2)
    if n1 == 0 or n2 == 0:
        return 0.0
    return float(g1 @ g2 / (n1 * n2))


def _cosine_rows(a, b):
    """Row-wise cosines between two [N, F] stacks; NaN where a row vanishes."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    out = np.full(a.shape[0], np.nan)
    ok = denom > 0
    out[ok] = np.einsum("nf,nf->n", a[ok], b[ok]) / denom[ok]
    return out


def _diagnostics_from_arrays(w, sigma_x, c, sigma0_sq, sigma_t_sq, loss_grad):
    g_ix = np.stack([grad_input_capture(w[i], sigma_x, sigma0_sq) for i in range(w.shape[0])])
    g_it = np.stack(
        [grad_task_mi(w[i], sigma_x, c, sigma0_sq, sigma_t_sq) for i in range(w.shape[0])]
    )
    update = -np.asarray(loss_grad, dtype=float)
    cos = {
        "cos_ix_it": _cosine_rows(g_ix, g_it),
        "cos_update_ix": _cosine_rows(update, g_ix),
        "cos_update_it": _cosine_rows(update, g_it),
    }
    out = dict(cos)
    for name, values in cos.items():
        valid = values[np.isfinite(values)]
        out["mean_" + name] = float(valid.mean()) if valid.size else float("nan")
    out["n_excluded"] = int(np.isnan(np.stack(list(cos.values()))).any(axis=0).sum())
    return out


def cosine_diagnostics(model, loss_grad):
    """The three per-channel gradient cosines plus their channel means.

    ``loss_grad`` is the loss gradient with respect to each weight row,
    shape [N, F]; the update direction is its negation. Channels where any
    vector in a pair has zero norm are excluded from that mean and counted.
    """
    return _diagnostics_from_arrays(
        np.asarray(model.w, dtype=float),
        model.sigma_x,
        model.c,
        model.sigma0_sq,
        model.sigma_t_sq,
        loss_grad,
    )


def orthogonal_target(w, sigma_x, sigma0_sq, z):
    """Target covariance c = z + t Sigma w making the two gradients orthogonal.

    Orthogonality requires w' Sigma c = (b / D) |Sigma w|^2, which is linear
    in t, so one solve fixes it. Returns the constructed c.
    """
    sw = sigma_x @ w
    q = float(sw @ sw)
    if q == 0:
        raise DegenerateDataError("Sigma w vanishes; no gradient direction to cancel")
    s = float(w @ sw)
    d = s + sigma0_sq
    b_z = float(w @ z)
    # (w' Sigma z + t q) - ((b_z + t s)/D) q = 0, and 1 - s/D = sigma0_sq/D
    t = ((b_z / d) * q - float(sw @ z)) / (q * (sigma0_sq / d))
    return z + t * sw


# ---------------------------------------------------------------------------
# Training simulation
# ---------------------------------------------------------------------------


@dataclass
class TrajConfig:
    n_features: int = 32
    n_channels: int = 16
    n_samples: int = 4096
    n_steps: int = 4000
    record_every: int = 400
    lr: float = 0.05
    seed: int = 0
    sigma0_sq: float = 1.0
    noise_t: float = 0.1
    eig_decay: float = 1.0
    aligned_init: bool = True
    init_scale: float = 1.0


@dataclass
class TrajectoryTrace:
    config: TrajConfig
    steps: list[int]
    losses: list[float]
    weights: list[np.ndarray]
    readouts: list[np.ndarray]
    x: np.ndarray
    t: np.ndarray
    sigma_x: np.ndarray
    c_true: np.ndarray = field(repr=False, default=None)


def _anisotropic_cov(rng, n_features, eig_decay):
    eig = (np.arange(1, n_features + 1, dtype=float)) ** (-eig_decay)
    eig = eig / eig.mean()
    q, _ = np.linalg.qr(rng.standard_normal((n_features, n_features)))
    return q @ np.diag(eig) @ q.T, q, eig


def simulate_training(config):
    """Joint gradient descent of (W, readout) on a linear-Gaussian regression.

    The teacher direction loads all input eigenvectors with harmonically
    decaying weights. Aligned init points channel i along eigenvector i, so
    input capture and task MI start rank-coupled; random init does not.
    Raises DegenerateDataError if the loss diverges.
    """
    cfg = config
    rng = rng_for(cfg.seed, 71)
    sigma_x, basis, eig = _anisotropic_cov(rng, cfg.n_features, cfg.eig_decay)
    chol = np.linalg.cholesky(sigma_x + 1e-12 * np.eye(cfg.n_features))
    x = rng.standard_normal((cfg.n_samples, cfg.n_features)) @ chol.T

    alpha = (np.arange(1, cfg.n_features + 1, dtype=float)) ** (-1.0)
    c_dir = basis @ alpha
    c_dir = c_dir / np.linalg.norm(c_dir)
    t = x @ c_dir + cfg.noise_t * rng.standard_normal(cfg.n_samples)

    if cfg.aligned_init:
        if cfg.n_channels > cfg.n_features:
            raise ValueError("aligned init needs n_channels <= n_features")
        w = cfg.init_scale * basis[:, : cfg.n_channels].T.copy()
        w = w * np.exp(rng.normal(0.0, 0.05, size=(cfg.n_channels, 1)))
    else:
        w = cfg.init_scale * rng.standard_normal((cfg.n_channels, cfg.n_features)) / np.sqrt(cfg.n_features)
    readout = rng.standard_normal(cfg.n_channels) / np.sqrt(cfg.n_channels)

    steps, losses, weights, readouts = [], [], [], []
    n = cfg.n_samples
    # overflow on a divergent run is caught by the isfinite check, not raised
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(cfg.n_steps + 1):
            y = x @ w.T
            err = y @ readout - t
            loss = float((err**2).mean())
            if not np.isfinite(loss):
                raise DegenerateDataError(f"training diverged at step {step}")
            if step % cfg.record_every == 0 or step == cfg.n_steps:
                steps.append(step)
                losses.append(loss)
                weights.append(w.copy())
                readouts.append(readout.copy())
            if step == cfg.n_steps:
                break
            grad_r = 2.0 / n * (y.T @ err)
            grad_w = 2.0 / n * np.outer(readout, x.T @ err)
            w = w - cfg.lr * grad_w
            readout = readout - cfg.lr * grad_r
    return TrajectoryTrace(
        config=cfg,
        steps=steps,
        losses=losses,
        weights=weights,
        readouts=readouts,
        x=x,
        t=t,
        sigma_x=sigma_x,
        c_true=c_dir,
    )


def trajectory_metrics(trace, target=None, clip=1e-6):
    """Per-snapshot I_X and I_TY arrays [n_snapshots, n_channels].

    Metrics are recomputed from the stored sample and weight snapshots, so a
    permuted target can be swapped in post hoc. I_X uses the config's fixed
    sigma0_sq as the reference noise floor.
    """
    t = trace.t if target is None else np.asarray(target, dtype=float)
    cov_x = np.cov(trace.x, rowvar=False)
    t_center = t - t.mean()
    t_var = float((t_center**2).mean())
    i_x = np.empty((len(trace.weights), trace.weights[0].shape[0]))
    i_ty = np.empty_like(i_x)
    for k, w in enumerate(trace.weights):
        s = np.einsum("nf,fg,ng->n", w, cov_x, w)
        i_x[k] = 0.5 * np.log1p(np.maximum(s, 0.0) / trace.config.sigma0_sq)
        y = trace.x @ w.T
        y_center = y - y.mean(axis=0)
        cov_yt = y_center.T @ t_center / y.shape[0]
        var_y = (y_center**2).mean(axis=0)
        denom = np.sqrt(np.maximum(var_y * t_var, 1e-300))
        rho = np.where(denom > 0, cov_yt / denom, 0.0)
        i_ty[k] = mi_from_corr(rho, clip=clip)
    return {"steps": list(trace.steps), "i_x": i_x, "i_ty": i_ty}


def _spearman(a, b):
    ra, rb = rankdata(a), rankdata(b)
    if ra.std() == 0 or rb.std() == 0:
        return 0.0
    return float(np.corrcoef(ra, rb)[0, 1])


def trajectory_summary(trace, seed=0):
    """Axis coupling over training, with a permuted-target control.

    coupling[k] = spearman(I_X, I_TY) at snapshot k; the permuted variant
    recomputes I_TY against a shuffled target. rank_persistence[k] compares
    snapshot-k I_X ranks with the final ones. Also reports the mean
    absolute gradient cosine per snapshot from the sample statistics.
    """
    metrics = trajectory_metrics(trace)
    perm = rng_for(seed, 72).permutation(trace.t)
    metrics_perm = trajectory_metrics(trace, target=perm)
    n_snap = len(trace.steps)
    coupling = np.array([_spearman(metrics["i_x"][k], metrics["i_ty"][k]) for k in range(n_snap)])
    coupling_perm = np.array(
        [_spearman(metrics_perm["i_x"][k], metrics_perm["i_ty"][k]) for k in range(n_snap)]
    )
    persistence = np.array([_spearman(metrics["i_x"][k], metrics["i_x"][-1]) for k in range(n_snap)])

    cov_x = np.cov(trace.x, rowvar=False)
    t_center = trace.t - trace.t.mean()
    sigma_t_sq = float((t_center**2).mean())
    c = trace.x.T @ t_center / trace.x.shape[0]
    mean_abs_cos = np.empty(n_snap)
    for k, w in enumerate(trace.weights):
        cos = [
            abs(gradient_cosine(w[i], cov_x, c, trace.config.sigma0_sq, sigma_t_sq))
            for i in range(w.shape[0])
        ]
        mean_abs_cos[k] = float(np.mean(cos))
    return {
        "steps": list(trace.steps),
        "coupling": coupling,
        "coupling_permuted": coupling_perm,
        "rank_persistence": persistence,
        "delta_coupling": float(coupling[-1] - coupling[0]),
        "mean_abs_cos": mean_abs_cos,
        "losses": list(trace.losses),
    }


TRAJECTORY_COLUMNS = (
    "step",
    "coupling",
    "cos_ix_it",
    "cos_update_ix",
    "cos_update_it",
    "mean_I_X",
    "mean_I_TY",
)


def trajectory_table(trace):
    """One row per recorded step: coupling, mean cosines, mean axis values.

    Cosines compare each channel's loss update (recomputed from the stored
    snapshot) with its two axis gradients under the sample statistics; rows
    report channel means. Keys match TRAJECTORY_COLUMNS.
    """
    metrics = trajectory_metrics(trace)
    cov_x = np.cov(trace.x, rowvar=False)
    t_center = trace.t - trace.t.mean()
    sigma_t_sq = float((t_center**2).mean())
    c = trace.x.T @ t_center / trace.x.shape[0]
    n = trace.x.shape[0]

    rows = []
    for k, w in enumerate(trace.weights):
        y = trace.x @ w.T
        err = y @ trace.readouts[k] - trace.t
        loss_grad = 2.0 / n * np.outer(trace.readouts[k], trace.x.T @ err)
        diag = _diagnostics_from_arrays(w, cov_x, c, trace.config.sigma0_sq, sigma_t_sq, loss_grad)
        rows.append(
            {
                "step": trace.steps[k],
                "coupling": _spearman(metrics["i_x"][k], metrics["i_ty"][k]),
                "cos_ix_it": diag["mean_cos_ix_it"],
                "cos_update_ix": diag["mean_cos_update_ix"],
                "cos_update_it": diag["mean_cos_update_it"],
                "mean_I_X": float(metrics["i_x"][k].mean()),
                "mean_I_TY": float(metrics["i_ty"][k].mean()),
            }
        )
    return rows
