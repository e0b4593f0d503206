"""Central finite-difference verification of analytic gradients.

Used three ways: per-op checks in the test suite, the `gradcheck` CLI
command, and the full-pipeline criterion (tiny model, span + type loss).
The error metric is |analytic - numeric| / max(|analytic|, |numeric|, 1e-3);
the 1e-3 floor keeps float64 round-off on near-zero coordinates from
registering as failures while staying far above the ~1e-9 noise of central
differences at h = 1e-5.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .encoder import EncoderConfig
from .model import AnswerType, CMCConfig, CMCModel, DialogueContext
from .tokenizer import Vocabulary, Window

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4
_REL_FLOOR = 1e-3


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), _REL_FLOOR)


@dataclass
class CheckResult:
    name: str
    coords_checked: int
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"gradcheck {self.name}: {self.coords_checked} coords, "
            f"max rel err {self.max_rel_error:.3e} (tol {self.tol:g}) {status}"
        )


def check_gradients(
    build_loss,
    params: dict[str, Tensor],
    *,
    name: str,
    n_coords: int,
    rng: np.random.Generator,
    h: float = DEFAULT_H,
    tol: float = DEFAULT_TOL,
) -> CheckResult:
    """Compare backward() gradients of `build_loss()` against central finite
    differences at `n_coords` randomly sampled parameter coordinates."""
    for p in params.values():
        p.grad = None
    loss = build_loss()
    loss.backward()

    names = sorted(params)
    sizes = np.array([params[n].data.size for n in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum(sizes)

    max_rel = 0.0
    checked = 0
    with no_grad():
        for pick in picks:
            slot = int(np.searchsorted(offsets, pick, side="right"))
            tensor = params[names[slot]]
            flat_idx = int(pick - (offsets[slot - 1] if slot else 0))
            idx = np.unravel_index(flat_idx, tensor.data.shape)
            analytic = 0.0 if tensor.grad is None else float(tensor.grad[idx])
            orig = tensor.data[idx]
            tensor.data[idx] = orig + h
            up = build_loss().item()
            tensor.data[idx] = orig - h
            down = build_loss().item()
            tensor.data[idx] = orig
            numeric = (up - down) / (2 * h)
            max_rel = max(max_rel, rel_error(analytic, numeric))
            checked += 1
    return CheckResult(name, checked, max_rel, tol)


# -- per-op checks ------------------------------------------------------------


def _op_cases(rng: np.random.Generator):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    c = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 5)), requires_grad=True)
    table = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    ids = [0, 2, 2, 5, 1]
    cols = [4, 0, 2]

    yield "matmul", {"a": a, "b": b}, lambda: ad.tsum(ad.mul(a @ b, a @ b))
    yield "add_mul", {"a": c, "b": pos}, lambda: ad.tsum(c * pos + c)
    yield "div", {"a": c, "b": pos}, lambda: ad.tsum(c / pos)
    yield "tanh", {"a": c}, lambda: ad.tsum(ad.tanh(c) * c)
    yield "sigmoid", {"a": c}, lambda: ad.tsum(ad.sigmoid(c) * c)
    yield "gelu", {"a": c}, lambda: ad.tsum(ad.gelu(c) * c)
    yield "log", {"a": pos}, lambda: ad.tsum(ad.log(pos) * pos)
    yield "sqrt", {"a": pos}, lambda: ad.tsum(ad.sqrt(pos) * pos)
    yield "softmax", {"a": c}, lambda: ad.tsum(ad.softmax(c, axis=1) * c)
    yield "concat_rows", {"a": a, "b": b}, lambda: ad.tsum(
        ad.tanh(ad.concat_rows([a, b.T])) * ad.concat_rows([a, b.T])
    )
    yield "gather_rows", {"t": table}, lambda: ad.tsum(
        ad.gather_rows(table, ids) * ad.gather_rows(table, ids)
    )
    yield "select_columns", {"a": c}, lambda: ad.tsum(
        ad.sigmoid(ad.select_columns(c, cols)) * ad.select_columns(c, cols)
    )
    yield "transpose_mean", {"a": c}, lambda: ad.tsum(
        ad.mean(c.T, axis=0, keepdims=True) @ ad.mean(c, axis=1, keepdims=True)
    )


def op_checks(seed: int = 0, n_coords: int = 12) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, params, build in _op_cases(rng):
        results.append(
            check_gradients(build, params, name=f"op/{name}", n_coords=n_coords, rng=rng)
        )
    return results


# -- full pipeline --------------------------------------------------------------


def tiny_setup(seed: int = 7, *, d: int = 8, layers: int = 1, k: int = 1, t: int = 6):
    """A minimal model + example whose loss exercises every head."""
    words = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"]
    vocab = Vocabulary.build([" ".join(words)])
    enc = EncoderConfig(
        vocab_size=len(vocab),
        hidden=d,
        layers=layers,
        heads=2,
        ff_dim=2 * d,
        max_positions=64,
        dropout=0.0,
    )
    model = CMCModel(
        enc,
        CMCConfig(k=k),
        type_head=True,
        max_seq_len=32,
        max_query_len=8,
        seed=seed,
    )
    window = Window(tuple(words[:t]), 0)
    ctx = DialogueContext(
        question="alpha bravo",
        prev_questions=("charlie delta",) * k,
        prev_answers=("echo",) * k,
        turn=2,
    )
    return model, vocab, ctx, window


def full_pipeline_check(
    seed: int = 7,
    *,
    n_coords: int = 60,
    h: float = DEFAULT_H,
    tol: float = DEFAULT_TOL,
) -> CheckResult:
    model, vocab, ctx, window = tiny_setup(seed)

    def build_loss():
        out = model.forward_window(ctx, window, vocab)
        loss, _, _ = model.batch_loss(
            [(out, 1, 3, AnswerType.YES)], type_loss_enabled=True
        )
        return loss

    rng = np.random.default_rng(seed + 1)
    return check_gradients(
        build_loss,
        model.named_parameters(),
        name="full_pipeline",
        n_coords=n_coords,
        rng=rng,
        h=h,
        tol=tol,
    )


def run_suite(seed: int = 0, *, verbose_print=print) -> bool:
    """CLI entry: all per-op checks plus the full pipeline. True iff all pass."""
    results = op_checks(seed)
    results.append(full_pipeline_check(seed + 7))
    ok = True
    for res in results:
        verbose_print(res.line())
        ok = ok and res.passed
    return ok
