"""Numerical verification suites.

Every suite returns a :class:`SuiteResult`. ``run_all`` drives them for the
``verify`` command; the acceptance tests call the same functions with their
own instance counts.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .attention import (
    OpCounter,
    Variant,
    attend,
    gate_track,
    normalize_and_attend,
    preattention,
    softmax_attention,
)
from .gating import GateTrack, HeadParams, alibi_gamma
from .numerics import RngStream, gauss
from .recurrent import dump_state, load_state, run_conformal_form, run_recurrent
from .rotary import make_rates, rotate, rotation_matrix, solve_embedded_rotation
from .sympow import build_basis, embed, embed_jacobian

FAULTS = ("gating-offby-one", "rotary-sign")


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    max_err: float
    tol: float
    n_cases: int
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name} {status} {self.max_err:.3e} {self.tol:.1e} {self.n_cases}"


def _result(name, errs, tol, n, t0):
    err = float(np.max(errs)) if len(errs) else 0.0
    ok = bool(np.isfinite(err) and err <= tol)
    return SuiteResult(name, ok, err, tol, n, time.perf_counter() - t0)


def rel_max(a, b) -> float:
    """max|a - b| / max(1e-300, max|b|): error relative to the output scale."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-300, np.max(np.abs(b))))


# ---------------------------------------------------------------- feature map


def kernel_property(rng: RngStream, n_pairs=10_000, ds=(2, 4, 8, 16), ps=(2, 4), tol=1e-10):
    t0 = time.perf_counter()
    combos = [(d, p) for d in ds for p in ps]
    per = math.ceil(n_pairs / len(combos))
    errs = []
    for n, (d, p) in enumerate(combos):
        basis = build_basis(d, p)
        g = rng.child(n)
        v, w = gauss(g, (per, d)), gauss(g, (per, d))
        lhs = np.sum(embed(v, basis) * embed(w, basis), axis=1)
        rhs = np.sum(v * w, axis=1) ** p
        errs.append(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))))
    return _result("kernel_property", errs, tol, per * len(combos), t0)


def embed_jacobian_fd(rng: RngStream, n=20, h=1e-5, tol=1e-6):
    t0 = time.perf_counter()
    errs = []
    for i in range(n):
        d, p = [(4, 2), (3, 4), (6, 2), (2, 6)][i % 4]
        basis = build_basis(d, p)
        v = gauss(rng.child(i), d)
        J = embed_jacobian(v, basis)
        fd = np.empty_like(J)
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            fd[:, j] = (embed(v + e, basis) - embed(v - e, basis)) / (2 * h)
        errs.append(rel_max(J, fd))
    return _result("embed_jacobian_fd", errs, tol, n, t0)


# ------------------------------------------------------------------- rotary


def rotation_power(rng: RngStream, k_max=1024, d=8, N=1024, tol=1e-9):
    """R(theta)^k by repeated multiplication against R(k theta), k = 1..k_max."""
    t0 = time.perf_counter()
    rates = make_rates(d, N)
    R = rotation_matrix(rates.theta)
    M = np.eye(d)
    mu = np.zeros(d // 2)
    v = gauss(rng, d)
    w = v.copy()
    errs = []
    for k in range(1, k_max + 1):
        M = R @ M
        mu = mu + rates.theta
        w = rotate(rates.theta, w)
        errs.append(np.max(np.abs(M - rotation_matrix(k * rates.theta))))
        errs.append(np.max(np.abs(rotation_matrix(mu) - rotation_matrix(k * rates.theta))))
        errs.append(np.max(np.abs(w - rotate(k * rates.theta, v))))
    return _result("rotation_power", errs, tol, k_max, t0)


def relative_position(rng: RngStream, n=200, d=8, N=1024, tol=1e-10):
    t0 = time.perf_counter()
    rates = make_rates(d, N)
    g = rng.generator
    errs = []
    for _ in range(n):
        q, k = g.standard_normal(d), g.standard_normal(d)
        i, j, s = g.integers(0, 512, size=3)
        a = rotate(i * rates.theta, q) @ rotate(j * rates.theta, k)
        b = rotate((i + s) * rates.theta, q) @ rotate((j + s) * rates.theta, k)
        errs.append(abs(a - b) / max(1.0, abs(a)))
    # the same property at the level of the preattention matrix
    t = 16
    Q, K = gauss(rng.child(1), (t, d)), gauss(rng.child(2), (t, d))
    B = preattention(Variant.SYMPOW_ROTARY, Q, K, 2, rates=rates)
    for s in (1, 7, 100):
        mu = (np.arange(1, t + 1) + s)[:, None] * rates.theta
        Bs = np.tril((rotate(mu, Q) @ rotate(mu, K).T) ** 2)
        errs.append(rel_max(Bs, B))
    return _result("relative_position", errs, tol, n + 3, t0)


def embedded_rotation(rng: RngStream, n=10, tol=1e-8):
    """Solved feature-space rotation: orthogonal and consistent on held-out keys."""
    t0 = time.perf_counter()
    errs = []
    for i in range(n):
        d = 2 if i % 2 == 0 else 4
        basis = build_basis(d, 2)
        g = rng.child(i)
        mu = g.generator.uniform(-math.pi, math.pi, d // 2)
        rot = solve_embedded_rotation(mu, basis, g.child(0))
        P = rot.matrix
        errs.append(np.max(np.abs(P.T @ P - np.eye(basis.D))))
        ks = gauss(g.child(1), (100, d))
        errs.append(rel_max(embed(ks, basis) @ P.T, embed(rotate(mu, ks), basis)))
        if d == 2:
            errs.append(abs(np.linalg.det(P) - 1.0))
    return _result("embedded_rotation", errs, tol, n, t0)


# ----------------------------------------------------------------- formulations


def _apply_fault(track: GateTrack, fault: str | None) -> GateTrack:
    if fault != "gating-offby-one":
        return track
    # product runs from gamma_j instead of gamma_{j+1}
    log_gamma = np.log(track.gamma)
    t = len(log_gamma)
    lower = np.tril(np.ones((t, t), dtype=bool), k=-1)
    log_b = np.where(lower, track.log_b + log_gamma[None, :], track.log_b)
    return replace(track, log_b=log_b)


def quadratic_outputs(variant, X, params: HeadParams, p, rates, fault: str | None = None):
    variant = Variant(variant)
    Q, K, V = params.project(X)
    track = _apply_fault(gate_track(variant, X, params), fault)
    if fault == "rotary-sign":
        track = replace(track, c=-track.c)
    B = preattention(variant, Q, K, p, rates=rates, track=track)
    return normalize_and_attend(B, V)[1]


def formulation_equivalence(name, variant, rng: RngStream, n=50, d=8, p=2, t=64, N=1024, d_model=16,
                            tol=1e-8, fault=None):
    """Quadratic vs recurrent outputs on random instances."""
    t0 = time.perf_counter()
    variant = Variant(variant)
    rates = make_rates(d, N)
    errs = []
    for i in range(n):
        g = rng.child(i)
        params = HeadParams.random(g, d_model, d, gated=variant.gated, learned_rotary=variant.learned_rotary)
        X = gauss(g.child(0), (t, d_model))
        Yq = quadratic_outputs(variant, X, params, p, rates, fault)
        Yr = run_recurrent(variant, X, params, p, rates)
        errs.append(rel_max(Yr, Yq))
    return _result(name, errs, tol, n, t0)


def conformal_form(rng: RngStream, n=4, t=16, tol=1e-6, fault=None):
    """Right-multiplied conformal update against the rotated-key update."""
    t0 = time.perf_counter()
    errs = []
    for i in range(n):
        d = 2 if i % 2 == 0 else 4
        g = rng.child(i)
        rates = make_rates(d, 64)
        params = HeadParams.random(g, 6, d)
        X = gauss(g.child(0), (t, 6))
        Y_conf = run_conformal_form(X, params, 2, rates, g.child(1))
        Y_step = run_recurrent(Variant.CONFORMAL_SYMPOW, X, params, 2, rates)
        errs.append(rel_max(Y_conf, Y_step))
        Yq = quadratic_outputs(Variant.CONFORMAL_SYMPOW, X, params, 2, rates, fault)
        errs.append(rel_max(Y_conf, Yq))
    return _result("conformal_form", errs, tol, n, t0)


def alibi_gating(rng: RngStream, ms=(0.1, math.log(2), 1.0), t=128, d=8, tol=1e-12):
    """Softmax+ALiBi attention against gamma^(i-j)-discounted exponential attention."""
    t0 = time.perf_counter()
    errs = []
    for n, m in enumerate(ms):
        g = rng.child(n)
        Q, K, V = (gauss(g.child(c), (t, d)) for c in range(3))
        A, _ = softmax_attention(Q, K, V, alibi_m=m)
        gamma = alibi_gamma(m)
        i = np.arange(t)
        lag = i[:, None] - i[None, :]
        Bg = np.where(lag >= 0, gamma ** np.maximum(lag, 0) * np.exp(Q @ K.T / math.sqrt(d)), 0.0)
        A_ref = Bg / Bg.sum(axis=1, keepdims=True)
        nz = A_ref > 0
        errs.append(np.max(np.abs(A[nz] - A_ref[nz]) / A_ref[nz]))
        errs.append(float(np.max(np.abs(A[~nz]))))
    return _result("alibi_gating", errs, tol, len(ms), t0)


def reduction_chain(rng: RngStream, n=10, d=8, p=2, t=32, d_model=16, tol=1e-6):
    """conformal(W_beta=0) == gated; gated(gamma -> 1) == fixed rotary."""
    t0 = time.perf_counter()
    rates = make_rates(d, 1024)
    errs = []
    for i in range(n):
        g = rng.child(i)
        params = HeadParams.random(g, d_model, d)
        X = gauss(g.child(0), (t, d_model))
        no_beta = replace(params, w_beta=np.zeros(d_model))
        a = attend(Variant.CONFORMAL_SYMPOW, X, no_beta, p, rates)
        b = attend(Variant.SYMPOW_GATED, X, no_beta, p, rates)
        errs.append(rel_max(a.B, b.B))
        open_gate = replace(params, w_gamma=np.zeros(d_model), gamma_bias=40.0)
        c = attend(Variant.SYMPOW_GATED, X, open_gate, p, rates)
        r = attend(Variant.SYMPOW_ROTARY, X, params, p, rates)
        errs.append(rel_max(c.Y, r.Y))
        lr_ = attend(Variant.SYMPOW_LEARNED_ROTARY, X, replace(params, w_beta=np.zeros(d_model)), p, rates)
        errs.append(rel_max(lr_.Y, r.Y))
    return _result("reduction_chain", errs, tol, n, t0)


def attention_invariants(rng: RngStream, n=20, d=8, p=2, t=32, d_model=16, tol=1e-12):
    """Row-stochastic, causal, non-negative, outputs inside the values' coordinate hull."""
    t0 = time.perf_counter()
    rates = make_rates(d, 1024)
    errs = []
    for i in range(n):
        variant = [v for v in Variant if v.is_sympow][i % 5]
        g = rng.child(i)
        params = HeadParams.random(g, d_model, d)
        X = gauss(g.child(0), (t, d_model))
        tr = attend(variant, X, params, p, rates)
        _, _, V = params.project(X)
        errs.append(np.max(np.abs(tr.A.sum(axis=1) - 1.0)))
        errs.append(np.max(np.abs(np.triu(tr.A, 1))))
        errs.append(max(0.0, -float(tr.B.min())))
        lo = np.minimum.accumulate(V, axis=0)
        hi = np.maximum.accumulate(V, axis=0)
        errs.append(max(0.0, float(np.max(lo - tr.Y)), float(np.max(tr.Y - hi))))
    return _result("attention_invariants", errs, tol, n, t0)


def state_linearity(rng: RngStream, n=5, d=4, p=2, t=24, d_model=8):
    """Process AB in one go vs A, serialize the state, then B: bitwise equal."""
    t0 = time.perf_counter()
    rates = make_rates(d, 256)
    errs = []
    for i in range(n):
        g = rng.child(i)
        params = HeadParams.random(g, d_model, d)
        X = gauss(g.child(0), (t, d_model))
        full = run_recurrent(Variant.CONFORMAL_SYMPOW, X, params, p, rates)
        cut = t // 3 + i
        Ya, st = run_recurrent(Variant.CONFORMAL_SYMPOW, X[:cut], params, p, rates, return_state=True)
        st = load_state(dump_state(st))
        Yb = run_recurrent(Variant.CONFORMAL_SYMPOW, X[cut:], params, p, rates, state=st)
        errs.append(float(np.max(np.abs(np.vstack([Ya, Yb]) - full))))
    return _result("state_linearity", errs, 0.0, n, t0)


def linear_time(sizes=(64, 128, 256), d=8, p=2, d_model=16, rng: RngStream | None = None):
    """Recurrent op count is linear in t with a constant per-step cost; quadratic grows as t^2.

    The error reported is the worst deviation of an observed ratio from its
    ideal value (2 for doubling t recurrently, 4 for the quadratic pairs term
    to leading order).
    """
    t0 = time.perf_counter()
    rng = rng or RngStream(0)
    rates = make_rates(d, 1024)
    params = HeadParams.random(rng, d_model, d)
    rec, quad, per_step = [], [], []
    for t in sizes:
        X = gauss(rng.child(t), (t, d_model))
        c = OpCounter()
        run_recurrent(Variant.CONFORMAL_SYMPOW, X, params, p, rates, counter=c)
        rec.append(c.total)
        per_step.append(c.total / t)
        cq = OpCounter()
        attend(Variant.CONFORMAL_SYMPOW, X, params, p, rates, counter=cq)
        quad.append(cq.total)
    errs = [abs(ps - per_step[0]) for ps in per_step]
    for a, b, ta, tb in zip(rec, rec[1:], sizes, sizes[1:]):
        errs.append(abs(b / a - tb / ta))
    qerr = [abs((b / a) / (tb / ta) ** 2 - 1.0) for a, b, ta, tb in zip(quad, quad[1:], sizes, sizes[1:])]
    res = _result("linear_time", errs, 0.0, len(sizes), t0)
    ok = res.passed and max(qerr) <= 0.02
    return replace(res, passed=ok, max_err=max(res.max_err, 0.0)), {"recurrent": rec, "quadratic": quad,
                                                                   "per_step": per_step, "quad_err": qerr}


def parameter_overhead():
    from .model import gpt2_small_config, overhead

    t0 = time.perf_counter()
    ov = overhead(gpt2_small_config())
    g, gr = ov["gating"], ov["gating_rotary"]
    ok = 0.0005 <= g <= 0.0015 and abs(gr / g - 2.0) <= 0.01
    return SuiteResult("parameter_overhead", ok, abs(gr / g - 2.0), 0.01, 1, time.perf_counter() - t0), ov


# ---------------------------------------------------------------------- driver


def run_all(instances: int = 10, seed: int = 0, fault: str | None = None, tolerances: dict | None = None,
            with_gradients: bool = True) -> list[SuiteResult]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {', '.join(FAULTS)}")
    tol = tolerances or {}
    rng = RngStream(seed)
    n = max(1, instances)

    def T(name, default):
        return tol.get(name, default)

    results = [
        kernel_property(rng.child(1), n_pairs=1000 * n, tol=T("kernel_property", 1e-10)),
        embed_jacobian_fd(rng.child(2), n=2 * n, tol=T("embed_jacobian_fd", 1e-6)),
        rotation_power(rng.child(3), tol=T("rotation_power", 1e-9)),
        relative_position(rng.child(4), n=20 * n, tol=T("relative_position", 1e-10)),
        formulation_equivalence("rotary_equivalence", Variant.SYMPOW_ROTARY, rng.child(5), n=n,
                                tol=T("rotary_equivalence", 1e-8),
                                fault="rotary-sign" if fault == "rotary-sign" else None),
        formulation_equivalence("gating_equivalence", Variant.SYMPOW_GATED, rng.child(6), n=n,
                                tol=T("gating_equivalence", 1e-8), fault=fault),
        formulation_equivalence("learned_rotary_equivalence", Variant.SYMPOW_LEARNED_ROTARY, rng.child(7),
                                n=n, tol=T("learned_rotary_equivalence", 1e-8)),
        formulation_equivalence("conformal_equivalence", Variant.CONFORMAL_SYMPOW, rng.child(8), n=n,
                                tol=T("conformal_equivalence", 1e-8), fault=fault),
        formulation_equivalence("plain_sympow_equivalence", Variant.SYMPOW, rng.child(9), n=n,
                                tol=T("plain_sympow_equivalence", 1e-8)),
        embedded_rotation(rng.child(10), n=n, tol=T("embedded_rotation", 1e-8)),
        conformal_form(rng.child(11), n=max(2, n // 2), tol=T("conformal_form", 1e-6), fault=fault),
        alibi_gating(rng.child(12), tol=T("alibi_gating", 1e-12)),
        reduction_chain(rng.child(13), n=n, tol=T("reduction_chain", 1e-6)),
        attention_invariants(rng.child(14), n=2 * n, tol=T("attention_invariants", 1e-12)),
        state_linearity(rng.child(15), n=max(2, n // 2)),
        linear_time(rng=rng.child(16))[0],
        parameter_overhead()[0],
    ]
    if with_gradients:
        from .gradcheck import gradient_check

        results.append(gradient_check(seed=seed, tol=T("gradient_check", 1e-4))[0])
    return results


def format_report(results) -> str:
    return "\n".join(r.line() for r in results) + "\n"
