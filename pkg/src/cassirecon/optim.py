"""Training substrate: Adam with cosine-annealed rate, finite-difference
gradient verification, and the desk-scale single-scene training loop.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics, optics, unfolding
from .errors import DivergenceError, NumericalError, ShapeError


def cosine_rate(step, total, base):
    """Cosine annealing: base at step 0, zero at step == total."""
    return base * (1.0 + math.cos(math.pi * step / total)) / 2.0


@dataclass
class AdamState:
    """Per-parameter first/second moments plus step count and schedule."""

    base_rate: float = 4e-4
    total_steps: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def rate(self):
        return cosine_rate(self.step, self.total_steps, self.base_rate)


def adam_step(state, store, grads, rate=None):
    """One Adam update with bias correction; mutates the store in place.

    ``rate`` defaults to the cosine schedule at the current step count.
    """
    if rate is None:
        rate = state.rate()
    state.step += 1
    t = state.step
    for name, p in store.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {name} {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / (1.0 - state.beta1 ** t)
        vhat = v / (1.0 - state.beta2 ** t)
        p.data -= rate * mhat / (np.sqrt(vhat) + state.eps)
    return rate


# ---------------------------------------------------------------------------
# losses

def mse_loss(pred, target):
    d = pred - ad.as_tensor(target)
    return ad.tmean(d * d)


def charbonnier_loss(pred, target, eps=1e-3):
    d = pred - ad.as_tensor(target)
    return ad.tmean(ad.tsqrt(d * d + eps * eps))


LOSSES = {"mse": mse_loss, "charbonnier": charbonnier_loss}


# ---------------------------------------------------------------------------
# gradient verification

@dataclass(frozen=True)
class GradCheckRow:
    name: str
    max_rel_err: float
    argmax_index: tuple
    passed: bool


@dataclass(frozen=True)
class GradCheckReport:
    tolerance: float
    rows: tuple
    passed: bool

    def failed_names(self):
        return [r.name for r in self.rows if not r.passed]

    def to_csv(self):
        lines = ["param,max_rel_err,argmax_index,passed"]
        for r in self.rows:
            idx = ";".join(str(i) for i in r.argmax_index)
            lines.append(f"{r.name},{r.max_rel_err:.17g},{idx},{int(r.passed)}")
        return "\n".join(lines) + "\n"


_FD_BASE = 1e-5        # baseline step factor
_FD_FLOOR = 1e-8       # floor of the relative-error denominator
_FD_NOISE = 16.0       # assumed roundoff multiple of eps on one loss evaluation
_FD_MARGIN = 0.5       # fraction of the tolerance budget granted to roundoff
_FD_H_CAP = 0.1


def _fd_steps(theta, ga, tolerance):
    """Candidate central-difference steps, best guess first.

    The baseline 1e-5 * max(1, |theta|) is enlarged for near-zero gradients
    so the secant clears loss-evaluation roundoff (the checked functional is
    normalized to order one), and backed off for directions whose large
    curvature makes the baseline truncation-dominated.  A wrong analytic
    gradient disagrees at every step size; a correct one is confirmed at
    whichever step is well conditioned for its direction.
    """
    h0 = _FD_BASE * max(1.0, abs(theta))
    eps = np.finfo(np.float64).eps
    noise_floor = (_FD_NOISE * eps
                   / (2.0 * _FD_MARGIN * tolerance * max(abs(ga), _FD_FLOOR)))
    h0 = min(max(h0, noise_floor), _FD_H_CAP)
    return [h0, h0 / 8.0, h0 / 64.0, h0 / 512.0, min(8.0 * h0, _FD_H_CAP)]


def grad_check(store, loss_fn, tolerance=1e-4, samples_per_param=3, seed=0, corrupt=None):
    """Compare analytic gradients with central finite differences.

    Every parameter tensor is checked at ``samples_per_param`` seeded entry
    positions (all entries for small tensors); the relative error is
    |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8).  ``corrupt`` names a parameter
    whose analytic gradient is deliberately perturbed, as a negative
    control.  Any NaN in the loss or a gradient fails the report with the
    offending parameter named.
    """
    store.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data):
        raise NumericalError("loss is not finite at the gradcheck point")
    # the comparison runs on the normalized functional L / max(1, |L0|); the
    # gradient field is the same up to that constant, but loss-evaluation
    # roundoff stays proportionate to the absolute floor of the error formula
    scale = 1.0 / max(1.0, abs(float(loss.data)))
    ad.backward(loss)
    analytic = {name: g * scale for name, g in store.grads().items()}
    store.zero_grad()
    if corrupt is not None:
        if corrupt not in analytic:
            raise KeyError(f"unknown parameter to corrupt: {corrupt}")
        analytic[corrupt] = analytic[corrupt] + 1.0

    rng = np.random.default_rng(seed)
    rows = []
    all_ok = True
    with ad.no_grad():
        for name, p in store.items():
            ga = analytic[name]
            if not np.all(np.isfinite(ga)):
                rows.append(GradCheckRow(name, float("nan"), (0,), False))
                all_ok = False
                continue
            flat = p.data.reshape(-1)
            n = flat.size
            if n <= samples_per_param:
                picks = np.arange(n)
            else:
                picks = rng.choice(n, size=samples_per_param, replace=False)
            worst = 0.0
            worst_idx = (0,)
            ok = True
            for i in picks:
                theta = flat[i]
                gai = ga.reshape(-1)[i]
                rel = None
                for h in _fd_steps(theta, gai, tolerance):
                    flat[i] = theta + h
                    lp = float(loss_fn().data)
                    flat[i] = theta - h
                    lm = float(loss_fn().data)
                    flat[i] = theta
                    if not (np.isfinite(lp) and np.isfinite(lm)):
                        rel = float("nan")
                        break
                    gfd = (lp - lm) * scale / (2.0 * h)
                    rel_h = abs(gai - gfd) / max(abs(gai), abs(gfd), _FD_FLOOR)
                    rel = rel_h if rel is None else min(rel, rel_h)
                    if rel <= tolerance:
                        break
                if not np.isfinite(rel):
                    ok = False
                    worst = float("nan")
                    worst_idx = np.unravel_index(i, p.data.shape)
                    break
                if rel > worst:
                    worst = rel
                    worst_idx = np.unravel_index(i, p.data.shape)
            if ok:
                ok = worst <= tolerance
            rows.append(GradCheckRow(name, float(worst), tuple(int(j) for j in worst_idx), ok))
            all_ok = all_ok and ok
    return GradCheckReport(tolerance=tolerance, rows=tuple(rows), passed=all_ok)


# ---------------------------------------------------------------------------
# desk-scale training

MAX_TOY_SCENE = (32, 32, 8)
MAX_TOY_STAGES = 2
MAX_TOY_CHANNELS = 16


@dataclass
class TrainResult:
    store: ad.ParamStore
    losses: list
    rates: list
    baseline_psnr: float
    final_psnr: float

    @property
    def psnr_margin(self):
        return self.final_psnr - self.baseline_psnr


def train_toy(scene, phi, cfg, steps, base_rate=4e-4, loss_kind="mse",
              noise=None, seed=0):
    """Overfit a small model to one scene and report the gain over the
    back-projection baseline.

    The measurement is simulated from ``scene`` (optionally with noise),
    the model is Adam-trained for ``steps`` steps under the cosine
    schedule, and reconstruction quality is compared against the z0
    initialization.  A non-finite loss aborts with the step index.
    """
    scene = np.asarray(scene, dtype=np.float64)
    if scene.shape != phi.cube_shape:
        raise ShapeError(f"scene shape {scene.shape} does not match operator cube shape {phi.cube_shape}")
    H, W, B = scene.shape
    if any(dim > cap for dim, cap in zip((H, W, B), MAX_TOY_SCENE)):
        raise ValueError(f"toy training supports scenes up to {MAX_TOY_SCENE}, got {scene.shape}")
    if cfg.stages > MAX_TOY_STAGES or cfg.base_channels > MAX_TOY_CHANNELS:
        raise ValueError(
            f"toy training supports up to {MAX_TOY_STAGES} stages / "
            f"{MAX_TOY_CHANNELS} channels, got {cfg.stages} / {cfg.base_channels}"
        )
    if loss_kind not in LOSSES:
        raise ValueError(f"unknown loss: {loss_kind!r}")
    loss_fn = LOSSES[loss_kind]

    rng = np.random.default_rng(seed)
    y = optics.forward_project(scene, phi, noise=noise)
    store = unfolding.init_model(B, cfg, rng)
    state = AdamState(base_rate=base_rate, total_steps=steps)

    z0 = optics.initialize_estimate(y, phi)
    baseline_psnr = metrics.psnr(scene, z0)

    losses = []
    rates = []
    for step in range(steps):
        store.zero_grad()
        pred = unfolding.run_stages(y, phi, store, cfg)
        loss = loss_fn(pred, scene)
        lv = float(loss.data)
        if not np.isfinite(lv):
            raise DivergenceError(step)
        ad.backward(loss)
        rate = adam_step(state, store, store.grads())
        losses.append(lv)
        rates.append(rate)

    with ad.no_grad():
        recon = unfolding.run_stages(y, phi, store, cfg).data
    final_psnr = metrics.psnr(scene, recon)
    return TrainResult(store=store, losses=losses, rates=rates,
                       baseline_psnr=baseline_psnr, final_psnr=final_psnr)
