"""Generated per-problem path-simulation kernels.

One kernel per problem advances a chunk of Euler paths

    X_{k+1} = X_k + b dt + sum_ij h_ij Q^{ij} dt + sigma Q^{1/2} dW

with the volatility scenario Q and the control u re-selected every step from
their policies, and optionally records full paths or streams the discounted
cost trapezoid. Coefficient expressions are inlined as scalar source and the
state/control/noise dimensions are unrolled as literals, then the function is
jit-compiled. Kernels are cached per problem fingerprint.

Paths are independent: a non-finite or exploding state flags the path and
freezes it; the caller reads the flag counts. Policy selection stays active
on frozen paths so the recorded scenario stream keeps its meaning.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .expressions import to_source
from .problem import ProblemSpec, control_var_names, state_var_names

_STATE_CAP = 1e8


def _scalar_src(expr, n, m):
    var_map = {f"x{k}": f"xv{k}" for k in range(1, n + 1)}
    var_map.update({f"u{j}": f"uv{j}" for j in range(1, m + 1)})
    return to_source(expr, var_map, array_mode=False)


class _Emitter:
    def __init__(self):
        self.lines = []
        self.depth = 0

    def em(self, text=""):
        self.lines.append("    " * self.depth + text if text else "")

    def source(self):
        return "\n".join(self.lines) + "\n"


def _emit_nearest_index(w, var, counts, strides, lo, h, n, lo_clamp, hi_off):
    """Flat row-major index of the grid node nearest the current state,
    with per-axis clamping to [lo_clamp, counts-1-hi_off]."""
    w.em(f"{var} = 0")
    for k in range(1, n + 1):
        w.em(f"_r = (xv{k} - {lo}[{k - 1}]) / {h}[{k - 1}]")
        w.em("_i = int(math.floor(_r + 0.5))")
        w.em(f"if _i < {lo_clamp}:")
        w.depth += 1
        w.em(f"_i = {lo_clamp}")
        w.depth -= 1
        w.em(f"if _i > {counts}[{k - 1}] - 1 - {hi_off}:")
        w.depth += 1
        w.em(f"_i = {counts}[{k - 1}] - 1 - {hi_off}")
        w.depth -= 1
        w.em(f"{var} = {var} + _i * {strides}[{k - 1}]")


def _emit_control(w, spec):
    m = spec.m
    w.em("if ctrl_fb == 1:")
    w.depth += 1
    _emit_nearest_index(w, "_ci", "ccounts", "cstrides", "clo", "ch", spec.n, 0, 0)
    for j in range(1, m + 1):
        w.em(f"uv{j} = ufield[_ci, {j - 1}]")
    w.depth -= 1
    w.em("else:")
    w.depth += 1
    for j in range(1, m + 1):
        w.em(f"uv{j} = uconst[{j - 1}]")
    w.depth -= 1


def _emit_sigma(w, spec):
    n, d, m = spec.n, spec.d, spec.m
    for k in range(1, n + 1):
        for j in range(1, d + 1):
            w.em(f"sg{k}_{j} = {_scalar_src(spec.sigma[k - 1][j - 1], n, m)}")


def _emit_vol_select(w, spec):
    n, d = spec.n, spec.d
    w.em("if vol_fb == 1:")
    w.depth += 1
    _emit_nearest_index(w, "_vi", "vcounts", "vstrides", "vlo", "vh", n, 1, 1)
    w.em("_vc = vfield[_vi]")
    # second differences of the reference field at the clamped node
    for a in range(1, n + 1):
        w.em(
            f"a2_{a}_{a} = (vfield[_vi + vstrides[{a - 1}]] - 2.0 * _vc "
            f"+ vfield[_vi - vstrides[{a - 1}]]) / (vh[{a - 1}] * vh[{a - 1}])"
        )
        for c in range(a + 1, n + 1):
            sa, sc = f"vstrides[{a - 1}]", f"vstrides[{c - 1}]"
            w.em(
                f"a2_{a}_{c} = (vfield[_vi + {sa} + {sc}] + vfield[_vi - {sa} - {sc}]"
                f" - vfield[_vi + {sa} - {sc}] - vfield[_vi - {sa} + {sc}])"
                f" / (4.0 * vh[{a - 1}] * vh[{c - 1}])"
            )
    # M = sigma^T D2V sigma, then argmax_c tr[Q_c M]
    for j in range(1, d + 1):
        for l in range(j, d + 1):
            terms = []
            for a in range(1, n + 1):
                for b in range(1, n + 1):
                    aa, bb = min(a, b), max(a, b)
                    terms.append(f"sg{a}_{j} * a2_{aa}_{bb} * sg{b}_{l}")
            w.em(f"m_{j}_{l} = " + " + ".join(terms))
    w.em("_best = -1e300")
    w.em("sel = 0")
    w.em("for _c in range(qarr.shape[0]):")
    w.depth += 1
    terms = []
    for j in range(1, d + 1):
        for l in range(1, d + 1):
            jj, ll = min(j, l), max(j, l)
            terms.append(f"qarr[_c, {j - 1}, {l - 1}] * m_{jj}_{ll}")
    w.em("_s = " + " + ".join(terms))
    w.em("if _s > _best:")
    w.depth += 1
    w.em("_best = _s")
    w.em("sel = _c")
    w.depth -= 2
    w.depth -= 1
    w.em("else:")
    w.depth += 1
    w.em("sel = qidx[k]")
    w.depth -= 1


def _emit_psi_acc(w, spec, weight_expr, disc="disc"):
    w.em(f"psv = {_scalar_src(spec.psi, spec.n, spec.m)}")
    w.em("_ap = psv if psv >= 0.0 else -psv")
    w.em("if _ap > pm:")
    w.depth += 1
    w.em("pm = _ap")
    w.depth -= 1
    w.em(f"acc = acc + {weight_expr} * {disc} * psv")


def mc_source(spec: ProblemSpec, parallel: bool) -> str:
    n, d, m = spec.n, spec.d, spec.m
    has_h = not spec.h_is_zero()
    has_psi = spec.psi is not None
    w = _Emitter()
    w.em("def _mc_chunk(x0, noise, dt, sqdt,")
    w.em("              vol_fb, qarr, sqarr, qidx,")
    w.em("              vcounts, vstrides, vlo, vh, vfield,")
    w.em("              ctrl_fb, uconst, ufield,")
    w.em("              ccounts, cstrides, clo, ch,")
    w.em("              do_record, states, qvrec,")
    w.em("              do_cost, dfac,")
    w.em("              cost, psimax, xT, flags):")
    w.depth = 1
    w.em("P = noise.shape[0]")
    w.em("K = noise.shape[1]")
    loop = "numba.prange" if parallel else "range"
    w.em(f"for p in {loop}(P):")
    w.depth += 1
    for k in range(1, n + 1):
        w.em(f"xv{k} = x0[{k - 1}]")
    w.em("flag = 0")
    w.em("acc = 0.0")
    w.em("disc = 1.0")
    w.em("pm = 0.0")
    w.em("if do_record == 1:")
    w.depth += 1
    for k in range(1, n + 1):
        w.em(f"states[p, 0, {k - 1}] = xv{k}")
    w.depth -= 1
    w.em("for k in range(K):")
    w.depth += 1
    _emit_control(w, spec)
    _emit_sigma(w, spec)
    _emit_vol_select(w, spec)
    if has_psi:
        w.em("if do_cost == 1:")
        w.depth += 1
        _emit_psi_acc(w, spec, "(0.5 if k == 0 else 1.0)")
        w.depth -= 1
    # dynamics advance (held once flagged)
    for i in range(1, d + 1):
        for j in range(1, d + 1):
            w.em(f"qdt_{i}_{j} = qarr[sel, {i - 1}, {j - 1}] * dt")
    w.em("if flag == 0:")
    w.depth += 1
    for k in range(1, n + 1):
        w.em(f"bb{k} = {_scalar_src(spec.b[k - 1], n, m)}")
    if has_h:
        for k in range(1, n + 1):
            terms = [
                f"({_scalar_src(spec.h[i - 1][j - 1][k - 1], n, m)}) * qdt_{i}_{j}"
                for i in range(1, d + 1)
                for j in range(1, d + 1)
            ]
            w.em(f"hqv{k} = " + " + ".join(terms))
    for l in range(1, d + 1):
        w.em(f"dw{l} = sqdt * noise[p, k, {l - 1}]")
    for j in range(1, d + 1):
        terms = [f"sqarr[sel, {j - 1}, {l - 1}] * dw{l}" for l in range(1, d + 1)]
        w.em(f"wv{j} = " + " + ".join(terms))
    for k in range(1, n + 1):
        terms = [f"xv{k}", f"bb{k} * dt"]
        if has_h:
            terms.append(f"hqv{k}")
        terms.extend(f"sg{k}_{j} * wv{j}" for j in range(1, d + 1))
        w.em(f"nx{k} = " + " + ".join(terms))
    cond = " or ".join(
        f"not (-{_STATE_CAP} <= nx{k} <= {_STATE_CAP})" for k in range(1, n + 1)
    )
    w.em(f"if {cond}:")
    w.depth += 1
    w.em("flag = 1")
    w.depth -= 1
    w.em("else:")
    w.depth += 1
    for k in range(1, n + 1):
        w.em(f"xv{k} = nx{k}")
    w.depth -= 2
    w.em("if do_record == 1:")
    w.depth += 1
    for k in range(1, n + 1):
        w.em(f"states[p, k + 1, {k - 1}] = xv{k}")
    for i in range(1, d + 1):
        for j in range(1, d + 1):
            w.em(f"qvrec[p, k, {i - 1}, {j - 1}] = qdt_{i}_{j}")
    w.depth -= 1
    w.em("if do_cost == 1:")
    w.depth += 1
    w.em("disc = disc * dfac")
    w.depth -= 1
    w.depth -= 1  # end step loop
    if has_psi:
        w.em("if do_cost == 1:")
        w.depth += 1
        w.em("k = K - 1")
        _emit_control(w, spec)
        _emit_psi_acc(w, spec, "0.5")
        w.em("cost[p] = dt * acc")
        w.em("psimax[p] = pm")
        w.depth -= 1
    for k in range(1, n + 1):
        w.em(f"xT[p, {k - 1}] = xv{k}")
    w.em("flags[p] = flag")
    return w.source()


_MC_CACHE: dict = {}


def get_mc_kernel(spec: ProblemSpec, parallel: bool):
    key = (spec.signature(), str(spec.psi), spec.discount, parallel)
    hit = _MC_CACHE.get(key)
    if hit is not None:
        return hit
    source = mc_source(spec, parallel)
    ns = {"numba": numba, "math": math, "np": np}
    exec(compile(source, "<generated mc kernel>", "exec"), ns)
    kern = numba.njit(parallel=parallel, cache=False, fastmath=False)(ns["_mc_chunk"])
    _MC_CACHE[key] = kern
    return kern
