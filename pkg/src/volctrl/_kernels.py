"""Generated numerical kernels for the parabolic stepper.

The stepper's inner loop runs millions of times, so per-problem Python
source is generated with the coefficient expressions inlined, compiled with
numba, and cached by problem signature. Two templates exist:

* fast: scalar state and noise (n = d = m = 1) with no quadratic-variation
  coupling (h = 0, g = 0) and z-free running cost. The generator has the
  closed interval form and the control loop is hoisted outside a
  vectorizable node loop.
* general: any n <= 3, d, m; scenario enumeration over the uncertainty
  candidates, quadratic-variation drift and cost coupling, monotone
  cross-derivative splitting (refused when not diagonally dominant).

Both templates compute node updates from the previous field only, so the
result is independent of the node partition; `nblocks` changes scheduling,
never values. Expression domain failures inside compiled code surface as
non-finite values, which the callers in `solver` detect and report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .expressions import to_source
from .problem import ProblemSpec


class NumericalError(RuntimeError):
    """Numerical failure: instability, non-finite field, or a stencil that
    cannot be kept monotone on this problem."""


class CFLError(NumericalError):
    """Requested time step exceeds the admissible explicit-step bound."""

    def __init__(self, dt: float, admissible: float):
        self.dt = float(dt)
        self.admissible = float(admissible)
        super().__init__(
            f"dt={dt!r} exceeds the admissible explicit step {admissible!r}"
        )


def fast_eligible(spec: ProblemSpec) -> bool:
    return (
        spec.n == 1
        and spec.d == 1
        and spec.m == 1
        and spec.h_is_zero()
        and spec.g_is_zero()
        and spec.f_is_z_free()
    )


# ---------------------------------------------------------------------------
# table construction (numpy, per problem x grid, cached by the solver)


def _array_eval(expr, bindings, shape):
    """Evaluate an expression over numpy arrays; broadcast constants."""
    src = to_source(expr, {k: f"_v[{k!r}]" for k in bindings}, array_mode=True)
    with np.errstate(all="ignore"):
        out = eval(src, {"np": np}, {"_v": bindings})
    out = np.broadcast_to(np.asarray(out, dtype=np.float64), shape).copy()
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite coefficient table from '{expr}'")
    return out


def _dfdy_bound(spec: ProblemSpec, xtab: np.ndarray, ulat: np.ndarray) -> float:
    """Sampled bound on |df/dy| over the grid, controls, and a y ladder.

    Exact for costs affine in y; an estimate otherwise.
    """
    n_nodes = xtab.shape[1]
    stride = max(1, n_nodes // 512)
    xs = xtab[:, ::stride]
    s = xs.shape[1]
    ys = (-3.0, -1.0, 0.0, 1.0, 3.0)
    bound = 0.0
    for iu in range(ulat.shape[0]):
        binds = {f"x{k + 1}": xs[k] for k in range(spec.n)}
        for k in range(spec.m):
            binds[f"u{k + 1}"] = np.float64(ulat[iu, k])
        for j in range(spec.d):
            binds[f"z{j + 1}"] = np.float64(0.0)
        vals = []
        for y in ys:
            b = dict(binds)
            b["y"] = np.float64(y)
            vals.append(_array_eval(spec.f, b, (s,)))
        for va, vb, ya, yb in zip(vals, vals[1:], ys, ys[1:]):
            q = np.max(np.abs(vb - va)) / (yb - ya)
            bound = max(bound, float(q))
    return bound


@dataclass(eq=False)
class Tables:
    """Precomputed per-(problem, grid) coefficient tables."""

    kind: str                 # "fast" | "general"
    counts: np.ndarray        # (n,) int64
    strides: np.ndarray       # (n,) int64, row-major node strides
    hs: np.ndarray            # (n,) spacings
    xtab: np.ndarray          # (n, N) node coordinates
    ulat: np.ndarray          # (nu, m) control lattice
    lo2: float
    hi2: float
    admissible_dt: float
    dfdy_bound: float
    # fast template
    xs: Optional[np.ndarray] = None     # (N,)
    us: Optional[np.ndarray] = None     # (nu,)
    bpos: Optional[np.ndarray] = None   # (nu, N)
    bneg: Optional[np.ndarray] = None   # (nu, N)
    sig2: Optional[np.ndarray] = None   # (nu, N)
    # general template
    qmats: Optional[np.ndarray] = None  # (nq, d, d)
    beta: Optional[np.ndarray] = None   # (nu, nq, n, N)
    dmat: Optional[np.ndarray] = None   # (nu, nq, n, n, N)
    sig: Optional[np.ndarray] = None    # (nu, n, d, N)

    def static_args(self) -> tuple:
        """The per-problem kernel arguments after (src, out/acc, pol)."""
        if self.kind == "fast":
            h = float(self.hs[0])
            return (
                self.bpos, self.bneg, self.sig2, self.xs, self.us,
                1.0 / h, 1.0 / (h * h), self.lo2, self.hi2,
            )
        return (
            self.xtab, self.ulat, self.qmats, self.beta, self.dmat, self.sig,
            self.counts, self.strides, self.hs,
        )


def build_tables(spec: ProblemSpec, axes) -> Tables:
    """axes: list of n strictly increasing uniform coordinate arrays."""
    n, d, m = spec.n, spec.d, spec.m
    counts = np.array([len(a) for a in axes], dtype=np.int64)
    hs = np.array([a[1] - a[0] for a in axes], dtype=np.float64)
    strides = np.ones(n, dtype=np.int64)
    for k in range(n - 2, -1, -1):
        strides[k] = strides[k + 1] * counts[k + 1]
    mesh = np.meshgrid(*axes, indexing="ij")
    xtab = np.ascontiguousarray(np.stack([g.ravel() for g in mesh], axis=0))
    N = xtab.shape[1]
    ulat = np.ascontiguousarray(spec.controls.lattice())
    nu = ulat.shape[0]
    lo2 = spec.gamma.sigma_lo2
    hi2 = spec.gamma.sigma_hi2

    def dyn_binds(iu):
        binds = {f"x{k + 1}": xtab[k] for k in range(n)}
        for k in range(m):
            binds[f"u{k + 1}"] = np.float64(ulat[iu, k])
        return binds

    dfdy = _dfdy_bound(spec, xtab, ulat)

    if fast_eligible(spec):
        bvals = np.empty((nu, N))
        svals = np.empty((nu, N))
        for iu in range(nu):
            binds = dyn_binds(iu)
            bvals[iu] = _array_eval(spec.b[0], binds, (N,))
            svals[iu] = _array_eval(spec.sigma[0][0], binds, (N,))
        sig2 = svals * svals
        h = hs[0]
        denom = np.abs(bvals) / h + hi2 * sig2 / (h * h) + dfdy
        peak = float(np.max(denom))
        adm = 0.9 / peak if peak > 0.0 else np.inf
        return Tables(
            kind="fast", counts=counts, strides=strides, hs=hs, xtab=xtab,
            ulat=ulat, lo2=lo2, hi2=hi2, admissible_dt=adm, dfdy_bound=dfdy,
            xs=xtab[0].copy(), us=ulat[:, 0].copy(),
            bpos=np.maximum(bvals, 0.0), bneg=np.minimum(bvals, 0.0),
            sig2=sig2,
        )

    qmats = np.ascontiguousarray(np.stack(spec.gamma.scenario_matrices(), axis=0))
    sig = np.empty((nu, n, d, N))
    bvec = np.empty((nu, n, N))
    hvec = np.empty((nu, d, d, n, N))
    for iu in range(nu):
        binds = dyn_binds(iu)
        for k in range(n):
            bvec[iu, k] = _array_eval(spec.b[k], binds, (N,))
            for j in range(d):
                sig[iu, k, j] = _array_eval(spec.sigma[k][j], binds, (N,))
        for i in range(d):
            for j in range(d):
                for k in range(n):
                    hvec[iu, i, j, k] = _array_eval(spec.h[i][j][k], binds, (N,))

    # scenario drift b + sum_ij Q_ij h_ij and diffusion (sigma Q sigma^T)/2
    beta = bvec[:, None, :, :] + np.einsum("qij,uijkN->uqkN", qmats, hvec)
    beta = np.ascontiguousarray(beta)
    dmat = 0.5 * np.einsum("ukjN,qjl,umlN->ukqmN", sig, qmats, sig).transpose(0, 2, 1, 3, 4)
    dmat = np.ascontiguousarray(dmat)

    # the monotone cross splitting needs row diagonal dominance wherever the
    # cross stencil actually applies (nodes interior along both axes)
    if n >= 2:
        idx = np.stack(np.unravel_index(np.arange(N), tuple(counts)), axis=0)
        interior_axis = (idx > 0) & (idx < (counts[:, None] - 1))
        for k in range(n):
            lhs = dmat[:, :, k, k, :] / (hs[k] * hs[k])
            rhs = np.zeros_like(lhs)
            applies = np.zeros(N, dtype=bool)
            for l in range(n):
                if l == k:
                    continue
                both = interior_axis[k] & interior_axis[l]
                rhs += np.where(both, np.abs(dmat[:, :, k, l, :]), 0.0) / (hs[k] * hs[l])
                applies |= both
            bad = (lhs + 1e-12 * (1.0 + np.abs(lhs)) < rhs) & applies
            if np.any(bad):
                iu, iq, i = np.argwhere(bad)[0]
                raise NumericalError(
                    "cross-derivative stencil is not monotone: the diffusion "
                    f"matrix fails diagonal dominance in row {k + 1} at node "
                    f"{i} (control {iu}, scenario {iq}); refine the "
                    "coordinates or the uncertainty candidates"
                )

    ssq = np.einsum("ukjN,ukjN->ukN", sig, sig)  # (sigma sigma^T)_kk
    drift_term = np.max(np.sum(np.abs(beta) / hs[None, None, :, None], axis=2), axis=1)
    diff_term = hi2 * np.sum(ssq / (hs * hs)[None, :, None], axis=1) * n
    denom = drift_term + diff_term + dfdy
    peak = float(np.max(denom))
    adm = 0.9 / peak if peak > 0.0 else np.inf
    return Tables(
        kind="general", counts=counts, strides=strides, hs=hs, xtab=xtab,
        ulat=ulat, lo2=lo2, hi2=hi2, admissible_dt=adm, dfdy_bound=dfdy,
        qmats=qmats, beta=beta, dmat=dmat, sig=sig,
    )


# ---------------------------------------------------------------------------
# kernel source generation


def _fast_source(spec: ProblemSpec, parallel: bool) -> str:
    fsrc = to_source(spec.f, {"x1": "xv", "u1": "uv", "y": "yv"})
    rng = "numba.prange" if parallel else "range"
    return f'''
def _node_pass(src, acc, pol, bpos, bneg, sig2, xs, us, inv_h, inv_h2, lo2, hi2, nblocks):
    N = src.shape[0]
    nu = us.shape[0]
    for blk in {rng}(nblocks):
        lo = 1 + ((N - 2) * blk) // nblocks
        hi = 1 + ((N - 2) * (blk + 1)) // nblocks
        for i in range(lo, hi):
            acc[i] = INF
            pol[i] = 0
        for iu in range(nu):
            uv = us[iu]
            for i in range(lo, hi):
                vm = src[i - 1]
                vc = src[i]
                vp = src[i + 1]
                dvp = (vp - vc) * inv_h
                dvm = (vc - vm) * inv_h
                sd = (vp - 2.0 * vc + vm) * inv_h2
                hq = sig2[iu, i] * sd
                gv = 0.5 * (hi2 * max(hq, 0.0) + lo2 * min(hq, 0.0))
                xv = xs[i]
                yv = vc
                cand = gv + bpos[iu, i] * dvp + bneg[iu, i] * dvm + ({fsrc})
                better = cand < acc[i]
                acc[i] = cand if better else acc[i]
                pol[i] = iu if better else pol[i]
    # boundary nodes: drift kept only where its upwind neighbor exists
    for side in range(2):
        i = 0 if side == 0 else N - 1
        best = INF
        besti = 0
        for iu in range(nu):
            uv = us[iu]
            vc = src[i]
            if i == 0:
                lin = bpos[iu, i] * (src[1] - vc) * inv_h
            else:
                lin = bneg[iu, i] * (vc - src[N - 2]) * inv_h
            xv = xs[i]
            yv = vc
            cand = lin + ({fsrc})
            if cand < best:
                best = cand
                besti = iu
        acc[i] = best
        pol[i] = besti


def _step(src, out, acc, pol, bpos, bneg, sig2, xs, us, inv_h, inv_h2, lo2, hi2, dt, mode, nblocks):
    _node_pass(src, acc, pol, bpos, bneg, sig2, xs, us, inv_h, inv_h2, lo2, hi2, nblocks)
    N = src.shape[0]
    if mode == 0:
        for i in range(N):
            out[i] = src[i] + dt * acc[i]
    else:
        for i in range(N):
            out[i] = acc[i]


def _multi(a, b, acc, pol, bpos, bneg, sig2, xs, us, inv_h, inv_h2, lo2, hi2, dt, ksteps, nblocks):
    src, dst = a, b
    for _ in range(ksteps):
        _step(src, dst, acc, pol, bpos, bneg, sig2, xs, us, inv_h, inv_h2, lo2, hi2, dt, 0, nblocks)
        src, dst = dst, src
    return ksteps % 2
'''


def _general_source(spec: ProblemSpec, parallel: bool) -> str:
    n, d, m = spec.n, spec.d, spec.m
    rng = "numba.prange" if parallel else "range"

    # per-node bindings for inlined f and g: x from the coordinate table,
    # u components from the lattice row, y from the field, z from p.sigma
    cost_map = {f"x{k + 1}": f"xl{k}" for k in range(n)}
    cost_map.update({f"u{k + 1}": f"uv{k}" for k in range(m)})
    cost_map["y"] = "yv"
    cost_map.update({f"z{j + 1}": f"zv{j}" for j in range(d)})
    fsrc = to_source(spec.f, cost_map)
    g_needed = not spec.g_is_zero()

    lines = []
    w = lines.append
    w("def _node_pass(src, acc, pol, xtab, ulat, qmats, beta, dmat, sig,")
    w("               counts, strides, hs, nblocks):")
    w("    N = src.shape[0]")
    w("    nu = ulat.shape[0]")
    w("    nq = qmats.shape[0]")
    w(f"    for blk in {rng}(nblocks):")
    w("        lo = (N * blk) // nblocks")
    w("        hi = (N * (blk + 1)) // nblocks")
    w("        for i in range(lo, hi):")
    for k in range(n):
        w(f"            ix{k} = (i // strides[{k}]) % counts[{k}]")
        w(f"            inl{k} = ix{k} > 0")
        w(f"            inr{k} = ix{k} < counts[{k}] - 1")
        w(f"            xl{k} = xtab[{k}, i]")
    w("            vc = src[i]")
    # one-sided, central, and second differences per axis
    for k in range(n):
        w(f"            sk{k} = strides[{k}]")
        w(f"            vp{k} = src[i + sk{k}] if inr{k} else vc")
        w(f"            vm{k} = src[i - sk{k}] if inl{k} else vc")
        w(f"            dvp{k} = (vp{k} - vc) / hs[{k}] if inr{k} else 0.0")
        w(f"            dvm{k} = (vc - vm{k}) / hs[{k}] if inl{k} else 0.0")
        w(f"            sd{k} = (vp{k} - 2.0 * vc + vm{k}) / (hs[{k}] * hs[{k}]) if (inl{k} and inr{k}) else 0.0")
        w(f"            if inl{k} and inr{k}:")
        w(f"                pc{k} = (vp{k} - vm{k}) / (2.0 * hs[{k}])")
        w(f"            elif inr{k}:")
        w(f"                pc{k} = dvp{k}")
        w("            else:")
        w(f"                pc{k} = dvm{k}")
    # diagonal and anti-diagonal neighbor sums for the cross stencil,
    # valid only when the node is interior along both axes
    for k in range(n):
        for l in range(k + 1, n):
            w(f"            ok{k}{l} = inl{k} and inr{k} and inl{l} and inr{l}")
            w(f"            if ok{k}{l}:")
            w(f"                cp{k}{l} = src[i + sk{k} + sk{l}] + src[i - sk{k} - sk{l}]")
            w(f"                cm{k}{l} = src[i + sk{k} - sk{l}] + src[i - sk{k} + sk{l}]")
            w(f"                ax{k}{l} = vp{k} + vm{k} + vp{l} + vm{l}")
            w("            else:")
            w(f"                cp{k}{l} = 0.0")
            w(f"                cm{k}{l} = 0.0")
            w(f"                ax{k}{l} = 0.0")
    w("            best = INF")
    w("            besti = 0")
    w("            yv = vc")
    w("            for iu in range(nu):")
    for k in range(m):
        w(f"                uv{k} = ulat[iu, {k}]")
    for j in range(d):
        z_terms = " + ".join(f"pc{k} * sig[iu, {k}, {j}, i]" for k in range(n))
        w(f"                zv{j} = {z_terms}")
    if g_needed:
        # g entries once per (node, control); symmetric upper triangle
        for i_ in range(d):
            for j_ in range(i_, d):
                gsrc = to_source(spec.g[i_][j_], cost_map)
                w(f"                gm{i_}{j_} = {gsrc}")
    w(f"                fval = {fsrc}")
    w("                smax = -INF")
    w("                for iq in range(nq):")
    drift = []
    for k in range(n):
        w(f"                    bk{k} = beta[iu, iq, {k}, i]")
        drift.append(
            f"(max(bk{k}, 0.0) * dvp{k} if inr{k} else 0.0)"
            f" + (min(bk{k}, 0.0) * dvm{k} if inl{k} else 0.0)"
        )
    w("                    lin = " + " + ".join(drift))
    diff = " + ".join(f"dmat[iu, iq, {k}, {k}, i] * sd{k}" for k in range(n))
    w(f"                    diff = {diff}")
    for k in range(n):
        for l in range(k + 1, n):
            w(f"                    if ok{k}{l}:")
            w(f"                        dkl = dmat[iu, iq, {k}, {l}, i]")
            w(f"                        two_v = 2.0 * vc - ax{k}{l}")
            w(f"                        if dkl >= 0.0:")
            w(f"                            br = (cp{k}{l} + two_v) / (2.0 * hs[{k}] * hs[{l}])")
            w("                        else:")
            w(f"                            br = -(cm{k}{l} + two_v) / (2.0 * hs[{k}] * hs[{l}])")
            w("                        diff = diff + 2.0 * dkl * br")
    if g_needed:
        gq = []
        for i_ in range(d):
            for j_ in range(d):
                a_, b_ = min(i_, j_), max(i_, j_)
                gq.append(f"gm{a_}{b_} * qmats[iq, {i_}, {j_}]")
        w("                    gqv = " + " + ".join(gq))
    else:
        w("                    gqv = 0.0")
    w("                    cand = lin + diff + gqv")
    w("                    if cand > smax:")
    w("                        smax = cand")
    w("                total = smax + fval")
    w("                if total < best:")
    w("                    best = total")
    w("                    besti = iu")
    w("            acc[i] = best")
    w("            pol[i] = besti")
    w("")
    w("")
    w("def _step(src, out, acc, pol, xtab, ulat, qmats, beta, dmat, sig,")
    w("          counts, strides, hs, dt, mode, nblocks):")
    w("    _node_pass(src, acc, pol, xtab, ulat, qmats, beta, dmat, sig,")
    w("               counts, strides, hs, nblocks)")
    w("    N = src.shape[0]")
    w("    if mode == 0:")
    w("        for i in range(N):")
    w("            out[i] = src[i] + dt * acc[i]")
    w("    else:")
    w("        for i in range(N):")
    w("            out[i] = acc[i]")
    w("")
    w("")
    w("def _multi(a, b, acc, pol, xtab, ulat, qmats, beta, dmat, sig,")
    w("           counts, strides, hs, dt, ksteps, nblocks):")
    w("    src, dst = a, b")
    w("    for _ in range(ksteps):")
    w("        _step(src, dst, acc, pol, xtab, ulat, qmats, beta, dmat, sig,")
    w("              counts, strides, hs, dt, 0, nblocks)")
    w("        src, dst = dst, src")
    w("    return ksteps % 2")
    return "\n".join(lines)


_KERNEL_CACHE: dict = {}


def get_kernels(spec: ProblemSpec, parallel: bool):
    """Compiled (step, multi) kernel pair for this problem signature."""
    fast = fast_eligible(spec)
    key = (spec.signature(), fast, bool(parallel))
    hit = _KERNEL_CACHE.get(key)
    if hit is not None:
        return hit
    source = _fast_source(spec, parallel) if fast else _general_source(spec, parallel)
    ns = {"numba": numba, "math": math, "INF": np.inf, "np": np}
    exec(compile(source, "<generated kernel>", "exec"), ns)
    # the exec'd functions share ns as __globals__ and numba resolves global
    # names at first compilation, so rebinding ns entries wires the call chain
    plain_step, plain_multi = ns["_step"], ns["_multi"]
    ns["_node_pass"] = numba.njit(parallel=parallel, cache=False, fastmath=False)(
        ns["_node_pass"]
    )
    ns["_step"] = numba.njit(cache=False, fastmath=False)(plain_step)
    multi = numba.njit(cache=False, fastmath=False)(plain_multi)

    pair = (ns["_step"], multi)
    _KERNEL_CACHE[key] = pair
    return pair
