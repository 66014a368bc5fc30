"""Oracle-equivalence and property suites behind ``memoroid verify``.

Each suite is a function of a :class:`VerifyContext` that returns a short
detail string and raises ``AssertionError`` on failure.  The suites are kept
small enough to run in well under a minute; the pytest suite runs the heavier
versions.
"""

from __future__ import annotations

import operator
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .batching import SegmentBatch, Tape, Transitions, sbb_build_dataset, sbb_pad, sbb_split, sbb_unpad
from .core import MemoroidDefinition, PartialTransition, ResettableElement, apply, apply_batched, make_resettable
from .models import (
    MODEL_KINDS,
    FFMParams,
    build_memoroid,
    ffm_decay_rate,
    ffm_memoroid,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .returns import (
    discounted_return_prefix,
    gae,
    naive_gae,
    naive_return_to_go,
    return_to_go,
)
from .scan import AssociativeOperator, ScanSchedule, scan_parallel, scan_sequential

__all__ = [
    "VerifyContext",
    "CheckResult",
    "SUITES",
    "operators",
    "counting",
    "random_memoroid",
    "random_episodes",
    "relative_error",
    "run_suites",
]


@dataclass(frozen=True)
class VerifyContext:
    seed: int = 0
    inject_fault: bool = False


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


# --- shared fixtures --------------------------------------------------------------


def _matmul(a, b):
    return a @ b


def _broken_add(a, b):
    # non-associative on purpose: (a - b) - c != a - (b - c)
    return a - b


def operators(inject_fault: bool = False) -> dict[str, AssociativeOperator]:
    """The base monoids every scan suite runs over."""
    add = AssociativeOperator(0, _broken_add if inject_fault else operator.add)
    ops = {
        "int_add": add,
        "int_max": AssociativeOperator(-(2**63), max),
        "mat2": AssociativeOperator(np.eye(2), _matmul),
    }
    ops["reset_add"] = make_resettable(add)
    return ops


def random_element(name: str, rng: np.random.Generator):
    if name in ("int_add", "int_max"):
        return int(rng.integers(-1000, 1000))
    if name == "mat2":
        # entries near the identity keep long products well scaled
        return np.eye(2) + 0.1 * rng.standard_normal((2, 2))
    return ResettableElement(int(rng.integers(-1000, 1000)), int(rng.random() < 0.1))


def counting(op: AssociativeOperator):
    """``(wrapped_op, counter)``; ``counter[0]`` holds the number of combine calls."""
    counter = [0]

    def combine(a, b):
        counter[0] += 1
        return op.combine(a, b)

    return AssociativeOperator(op.identity, combine), counter


def relative_error(a, b, floor: float = 1e-12) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def _elements_equal(name, a, b) -> bool:
    if name == "mat2":
        return relative_error(a, b, floor=1e-300) <= 1e-6
    return a == b


def random_memoroid(kind: str, seed: int, d_o: int = 6, m: int = 5, c: int = 3) -> MemoroidDefinition:
    gen = torch.Generator().manual_seed(seed)
    params = init_params(kind, gen, d_o=d_o, m=m, c=c, d_s=d_o, dtype=torch.float64)
    return build_memoroid(kind, params.tensors())


def random_episodes(rng: np.random.Generator, n: int, max_len: int, obs_dim: int = 3,
                    min_len: int = 1) -> list[Transitions]:
    """``n`` well-formed episodes with lengths uniform in ``[min_len, max_len]``."""
    out = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        begin = np.zeros(length, dtype=np.int8)
        begin[0] = 1
        done = np.zeros(length, dtype=np.int8)
        done[-1] = 1
        out.append(Transitions(
            rng.standard_normal((length, obs_dim)),
            rng.integers(0, 4, size=length).astype(np.int64),
            rng.standard_normal(length),
            rng.standard_normal((length, obs_dim)),
            begin,
            done,
        ))
    return out


def _begin_flags(rng, n, p=0.05):
    b = (rng.random(n) < p).astype(np.int64)
    b[0] = 1
    return b


# --- suites ------------------------------------------------------------------------


def suite_scan_equivalence(ctx: VerifyContext) -> str:
    rng = np.random.default_rng([ctx.seed, 10])
    trials = 0
    for name, op in operators(ctx.inject_fault).items():
        for _ in range(8):
            n = int(rng.integers(0, 700))
            xs = [random_element(name, rng) for _ in range(n)]
            ref = scan_sequential(op, xs)
            counted, calls = counting(op)
            got = scan_parallel(counted, xs, ScanSchedule(worker_budget=2, block_size=int(rng.integers(1, 64))))
            assert len(got) == n, f"{name}: length {len(got)} != {n}"
            assert all(_elements_equal(name, a, b) for a, b in zip(got, ref)), f"{name}: n={n} parallel != sequential"
            assert calls[0] <= 3 * n, f"{name}: {calls[0]} combines for n={n}"
            trials += 1
    return f"{trials} trials"


def suite_scan_associativity(ctx: VerifyContext) -> str:
    rng = np.random.default_rng([ctx.seed, 11])
    for name, op in operators(ctx.inject_fault).items():
        for _ in range(500):
            x, y, z = (random_element(name, rng) for _ in range(3))
            left, right = op(op(x, y), z), op(x, op(y, z))
            assert _elements_equal(name, left, right), f"{name}: (x•y)•z != x•(y•z) for {x!r}, {y!r}, {z!r}"
            assert _elements_equal(name, op(op.identity, x), x), f"{name}: identity is not a left identity"
            assert _elements_equal(name, op(x, op.identity), x), f"{name}: identity is not a right identity"
    return "500 triples per operator"


def suite_scan_determinism(ctx: VerifyContext) -> str:
    rng = np.random.default_rng([ctx.seed, 12])
    op = AssociativeOperator(np.eye(2), _matmul)
    xs = [np.eye(2) + 0.1 * rng.standard_normal((2, 2)) for _ in range(1500)]
    base = np.stack(scan_parallel(op, xs, ScanSchedule(1, 128)))
    for w in (2, 4, 8):
        got = np.stack(scan_parallel(op, xs, ScanSchedule(w, 128)))
        assert np.array_equal(base, got), f"worker budget {w} changed the result"
    return "budgets 1, 2, 4, 8 bitwise equal"


def suite_resets_models(ctx: VerifyContext) -> str:
    rng = np.random.default_rng([ctx.seed, 20])
    worst = 0.0
    for i, kind in enumerate(MODEL_KINDS):
        m = random_memoroid(kind, ctx.seed * 100 + i)
        n = 300
        z = torch.as_tensor(rng.standard_normal((n, 6)))
        b = torch.as_tensor(_begin_flags(rng, n))
        _, joint = apply_batched(m, PartialTransition(z, b))
        starts = list(torch.nonzero(b).flatten().tolist()) + [n]
        parts = []
        for s, e in zip(starts[:-1], starts[1:]):
            _, out = apply_batched(m, PartialTransition(z[s:e], torch.zeros(e - s, dtype=torch.int64)),
                                   resettable=False)
            parts.append(out)
        err = relative_error(joint.detach().numpy(), torch.cat(parts).detach().numpy(), floor=1e-6)
        worst = max(worst, err)
        assert err <= 1e-5, f"{kind}: multi-episode scan differs from per-episode scans ({err:.2e})"
    return f"max rel err {worst:.1e}"


def suite_resets_isolation(ctx: VerifyContext) -> str:
    rng = np.random.default_rng([ctx.seed, 21])
    for i, kind in enumerate(MODEL_KINDS):
        m = random_memoroid(kind, ctx.seed * 100 + i)
        n, cut = 64, 40
        z = torch.as_tensor(rng.standard_normal((n, 6)))
        b = torch.zeros(n, dtype=torch.int64)
        b[0] = b[cut] = 1
        _, before = apply_batched(m, PartialTransition(z, b))
        z2 = z.clone()
        z2[:cut] = torch.as_tensor(rng.standard_normal((cut, 6)))
        _, after = apply_batched(m, PartialTransition(z2, b))
        assert torch.equal(before[cut:], after[cut:]), f"{kind}: pre-boundary mutation leaked past the reset"
    return "bitwise isolation for all models"


def suite_returns_return_to_go(ctx: VerifyContext) -> str:
    rng = np.random.default_rng([ctx.seed, 30])
    worst = 0.0
    for _ in range(60):
        n = int(rng.integers(1, 200))
        r = rng.standard_normal(n)
        d = (rng.random(n) < 0.1).astype(np.int64)
        d[-1] = 1
        gamma = float(rng.uniform(0, 1))
        ref = naive_return_to_go(r, d, gamma)
        for method in ("parallel", "vectorized"):
            err = relative_error(return_to_go(r, d, gamma, method=method), ref, floor=1e-6)
            worst = max(worst, err)
            assert err <= 1e-6, f"{method}: return_to_go differs from backward recursion ({err:.2e})"
    return f"60 instances, max rel err {worst:.1e}"


def suite_returns_gae(ctx: VerifyContext) -> str:
    rng = np.random.default_rng([ctx.seed, 31])
    worst = 0.0
    for _ in range(60):
        n = int(rng.integers(1, 200))
        r, v, v2 = rng.standard_normal((3, n))
        d = (rng.random(n) < 0.1).astype(np.int64)
        d[-1] = 1
        gamma, lam = (float(x) for x in rng.uniform(0, 1, 2))
        ref = naive_gae(r, v, v2, d, gamma, lam)
        for method in ("parallel", "vectorized"):
            err = relative_error(gae(r, v, v2, d, gamma, lam, method=method), ref, floor=1e-6)
            worst = max(worst, err)
            assert err <= 1e-6, f"{method}: gae differs from backward recursion ({err:.2e})"
    return f"60 instances, max rel err {worst:.1e}"


def suite_returns_expansion(ctx: VerifyContext) -> str:
    rng = np.random.default_rng([ctx.seed, 32])
    for _ in range(50):
        n = int(rng.integers(1, 100))
        gamma = float(rng.uniform(0.5, 1))
        r = rng.standard_normal(n)
        prefix = discounted_return_prefix(r, gamma)
        a, total = prefix[-1]
        assert abs(a - gamma**n) <= 1e-9, f"a-component {a} != gamma^n {gamma**n}"
        expect = float(sum(gamma**i * x for i, x in enumerate(r)))
        assert abs(total - expect) <= 1e-6 * max(1.0, abs(expect)), "discounted sum mismatch"
    return "(gamma^n, sum gamma^i r_i) on 50 sequences"


def suite_roundtrip_sbb(ctx: VerifyContext) -> str:
    rng = np.random.default_rng([ctx.seed, 40])
    eps = random_episodes(rng, 200, 30)
    for L in (1, 4, 7, 32):
        for ep in eps[:50]:
            frags = sbb_split(ep, L)
            padded = [sbb_pad(f, L) for f in frags]
            assert all(len(seg) == L for seg, _ in padded), "segment not padded to L"
            back = Transitions.concat([sbb_unpad(seg, mask) for seg, mask in padded])
            assert back.equals(ep), f"split/pad/unpad/join is not the identity for L={L}"
        data = sbb_build_dataset(eps, L)
        data.validate()
        rebuilt = data.to_episodes()
        assert len(rebuilt) == len(eps) and all(a.equals(b) for a, b in zip(rebuilt, eps)), \
            f"dataset round trip failed for L={L}"
    return "200 episodes, L in {1, 4, 7, 32}"


def suite_roundtrip_tape(ctx: VerifyContext) -> str:
    rng = np.random.default_rng([ctx.seed, 41])
    tape = Tape(obs_dim=3, capacity=120)
    inserted = []
    for _ in range(400):
        if rng.random() < 0.6 or tape.num_episodes == 0:
            (ep,) = random_episodes(rng, 1, 25)
            tape.insert(ep)
            inserted.append(ep)
        else:
            batch = tape.sample(int(rng.integers(1, 60)), rng)
            assert batch.begin[0] == 1, "sampled batch does not start an episode"
        tape.check_invariants()
        # stored episodes are exactly the most recent inserts, oldest first
        held = tape.episodes()
        assert all(a.equals(b) for a, b in zip(held, inserted[-len(held):])), "eviction was not oldest-first"
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "tape.bin"
        tape.save(path)
        loaded = Tape.load(path)
    assert loaded.data.equals(tape.data) and loaded.index == tape.index, "snapshot round trip failed"
    return "400 insert/sample steps, snapshot round trip"


def suite_roundtrip_checkpoint(ctx: VerifyContext) -> str:
    gen = torch.Generator().manual_seed(ctx.seed)
    for kind in MODEL_KINDS:
        tensors = init_params(kind, gen, d_o=5, m=4, c=2, d_s=5, dtype=torch.float64).tensors()
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "ckpt.bin"
            save_checkpoint(path, tensors, {"model": kind})
            loaded, meta = load_checkpoint(path)
        assert meta == {"model": kind}
        assert loaded.keys() == tensors.keys() and all(torch.equal(loaded[k], tensors[k]) for k in tensors), \
            f"{kind}: checkpoint round trip changed a tensor"
    return "all models bitwise"


def suite_gradients_finite_difference(ctx: VerifyContext) -> str:
    from .qlearn.pipeline import PipelineConfig, backward, forward, init_pipeline

    rng = np.random.default_rng([ctx.seed, 50])
    h = 1e-5
    worst = 0.0
    for i, kind in enumerate(MODEL_KINDS):
        config = PipelineConfig(kind, obs_dim=3, n_actions=2, hidden=6, memory=4, context=2)
        tensors = init_pipeline(config, torch.Generator().manual_seed(ctx.seed * 10 + i), torch.float64)
        n = 12
        obs = torch.as_tensor(rng.standard_normal((n, 3)))
        begins = torch.as_tensor(_begin_flags(rng, n, 0.2))
        adjoint = torch.as_tensor(rng.standard_normal((n, 2)))
        grads, _ = backward(tensors, config, obs, begins, adjoint)

        def objective(t):
            return float((forward(t, config, obs, begins)[1] * adjoint).sum())

        for name in sorted(tensors):
            flat = tensors[name].reshape(-1)
            j = int(rng.integers(0, flat.numel()))
            plus = {k: v.clone() for k, v in tensors.items()}
            minus = {k: v.clone() for k, v in tensors.items()}
            plus[name].view(-1)[j] += h
            minus[name].view(-1)[j] -= h
            numeric = (objective(plus) - objective(minus)) / (2 * h)
            analytic = float(grads[name].reshape(-1)[j])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)
            worst = max(worst, err)
            assert err <= 1e-4, f"{kind}/{name}[{j}]: analytic {analytic:.6g} vs numeric {numeric:.6g}"
    return f"max rel err {worst:.1e}"


def suite_gradients_truncation(ctx: VerifyContext) -> str:
    from .qlearn.pipeline import PipelineConfig, QPipelineParams
    from .qlearn.updates import sbb_q_loss

    rng = np.random.default_rng([ctx.seed, 51])
    config = PipelineConfig("lru", obs_dim=3, n_actions=2, hidden=6, memory=4)
    params = QPipelineParams.create(config, ctx.seed, dtype=torch.float64)
    (episode,) = random_episodes(rng, 1, 20, min_len=20)
    episode = episode.replace(action=episode.action % 2)
    rows = sbb_build_dataset([episode], 5)
    for keep in range(len(rows)):
        masks = np.zeros_like(rows.masks)
        masks[keep] = rows.masks[keep]
        obs = torch.as_tensor(rows.segments.obs).clone().requires_grad_(True)
        loss = sbb_q_loss(params, SegmentBatch(rows.segments, masks), 0.9, obs=obs)
        (g,) = torch.autograd.grad(loss, obs)
        others = [r for r in range(len(rows)) if r != keep]
        assert torch.count_nonzero(g[others]) == 0, f"gradient crossed into another segment from row {keep}"
        assert torch.count_nonzero(g[keep]) > 0, "no gradient inside the segment"
    return f"{len(rows)} segments of L=5, cross-segment gradients exactly zero"


def suite_models_ffm_stability(ctx: VerifyContext) -> str:
    gen = torch.Generator().manual_seed(ctx.seed)
    params = FFMParams.init(gen, d_o=4, m=6, c=3, dtype=torch.float64)
    t = torch.arange(0, 4001, dtype=torch.float64)
    rate = ffm_decay_rate(params.alpha, params.omega)
    decay = torch.exp(t[:, None, None] * rate)
    assert float(decay.abs().max()) <= 1 + 1e-12, "decay factor modulus above one"
    m = ffm_memoroid(params)
    z = torch.randn(4000, 4, generator=gen, dtype=torch.float64)
    b = torch.zeros(4000, dtype=torch.int64)
    b[0] = 1
    hs, ss = apply_batched(m, PartialTransition(z, b))
    assert bool(torch.isfinite(ss).all()), "non-finite FFM output"
    assert all(bool(torch.isfinite(torch.view_as_real(x) if x.is_complex() else x).all())
               for x in _tensor_leaves(hs)), "non-finite FFM state"
    return "n=4000 finite, |decay| <= 1"


def _tensor_leaves(tree):
    if isinstance(tree, tuple):
        for x in tree:
            yield from _tensor_leaves(x)
    elif isinstance(tree, torch.Tensor):
        yield tree


def suite_models_sequential(ctx: VerifyContext) -> str:
    """The Python-element scan and the vectorised scan agree for every model."""
    rng = np.random.default_rng([ctx.seed, 60])
    for i, kind in enumerate(MODEL_KINDS):
        m = random_memoroid(kind, ctx.seed * 100 + i)
        z = torch.as_tensor(rng.standard_normal((40, 6)))
        _, ref = apply(m, [PartialTransition(x, 0) for x in z])
        _, got = apply_batched(m, PartialTransition(z, torch.zeros(40, dtype=torch.int64)), resettable=False)
        err = relative_error(torch.stack(list(ref)).numpy(), got.numpy(), floor=1e-6)
        assert err <= 1e-9, f"{kind}: element scan vs batched scan {err:.2e}"
    return "element vs batched scans agree"


SUITES: dict[str, Callable[[VerifyContext], str]] = {
    "scan.equivalence": suite_scan_equivalence,
    "scan.associativity": suite_scan_associativity,
    "scan.determinism": suite_scan_determinism,
    "resets.models": suite_resets_models,
    "resets.isolation": suite_resets_isolation,
    "returns.return_to_go": suite_returns_return_to_go,
    "returns.gae": suite_returns_gae,
    "returns.expansion": suite_returns_expansion,
    "roundtrip.sbb": suite_roundtrip_sbb,
    "roundtrip.tape": suite_roundtrip_tape,
    "roundtrip.checkpoint": suite_roundtrip_checkpoint,
    "gradients.finite_difference": suite_gradients_finite_difference,
    "gradients.truncation": suite_gradients_truncation,
    "models.ffm_stability": suite_models_ffm_stability,
    "models.sequential": suite_models_sequential,
}


def run_suites(ctx: VerifyContext, filters: list[str] | None = None) -> list[CheckResult]:
    """Run every suite whose name contains one of ``filters`` (all when empty)."""
    results = []
    for name, fn in SUITES.items():
        if filters and not any(f in name for f in filters):
            continue
        start = time.perf_counter()
        try:
            detail = fn(ctx)
            passed = True
        except AssertionError as exc:
            detail, passed = str(exc) or "assertion failed", False
        except Exception as exc:  # a crash inside a suite is a failure, not a usage error
            detail, passed = f"{type(exc).__name__}: {exc}", False
        results.append(CheckResult(name, passed, detail, time.perf_counter() - start))
    return results
