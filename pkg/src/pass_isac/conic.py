"""Small dense LMI programs in SDPA standard form.

A :class:`ConicProblem` is

    minimise    c^T x
    subject to  const_b + sum_i x_i coef_b[i]  >= 0   for every block b

where a block is either a real symmetric PSD block or a diagonal
(componentwise non-negative) block. This is exactly the SDPA sparse format
with ``F_0 = -const`` and ``F_i = coef[i]``, so problems can be dumped and
cross-checked against any external SDP solver.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import Infeasible, SolverFailure


@dataclass
class LmiBlock:
    name: str
    size: int
    linear: bool          # True: diagonal block, i.e. plain inequalities
    const: np.ndarray     # (s, s) or (s,)
    coef: np.ndarray      # (m, s, s) or (m, s)

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.const + np.tensordot(x, self.coef, axes=1)


@dataclass
class VariableBlock:
    """Where a model matrix lives inside the decision vector."""
    name: str
    offset: int
    side: int
    hermitian: bool       # complex Hermitian (real-embedded) vs real symmetric

    @property
    def n_params(self) -> int:
        return self.side * self.side if self.hermitian else self.side * (self.side + 1) // 2


@dataclass
class ConicProblem:
    n_vars: int
    c: np.ndarray
    blocks: list = field(default_factory=list)
    entities: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def block(self, name: str) -> LmiBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def check(self):
        m = self.n_vars
        assert self.c.shape == (m,)
        for b in self.blocks:
            if b.linear:
                assert b.const.shape == (b.size,) and b.coef.shape == (m, b.size)
            else:
                assert b.const.shape == (b.size, b.size) and b.coef.shape == (m, b.size, b.size)
                assert np.allclose(b.const, b.const.T) and np.allclose(b.coef, b.coef.transpose(0, 2, 1))
        used = np.zeros(m, dtype=int)
        for e in self.entities.values():
            used[e.offset:e.offset + e.n_params] += 1
        assert np.all(used == 1), "every decision variable must belong to exactly one entity"
        return self


def symmetric_basis(n: int, hermitian: bool) -> np.ndarray:
    """Basis matrices for Hermitian (or real symmetric) n x n matrices.

    Order: diagonal entries, then real parts of the strict upper triangle,
    then (Hermitian only) imaginary parts.
    """
    iu = np.triu_indices(n, 1)
    p = n * n if hermitian else n * (n + 1) // 2
    E = np.zeros((p, n, n), dtype=complex if hermitian else float)
    k = 0
    for r in range(n):
        E[k, r, r] = 1.0
        k += 1
    for r, c in zip(*iu):
        E[k, r, c] = E[k, c, r] = 1.0
        k += 1
    if hermitian:
        for r, c in zip(*iu):
            E[k, r, c] = 1j
            E[k, c, r] = -1j
            k += 1
    return E


def real_embedding(X: np.ndarray) -> np.ndarray:
    """``[[Re X, -Im X], [Im X, Re X]]``; PSD iff X is Hermitian PSD."""
    X = np.asarray(X)
    re, im = X.real, X.imag
    return np.block([[re, -im], [im, re]])


def decode_matrix(x: np.ndarray, ent: VariableBlock) -> np.ndarray:
    E = symmetric_basis(ent.side, ent.hermitian)
    return np.tensordot(x[ent.offset:ent.offset + ent.n_params], E, axes=1)


def encode_matrix(X: np.ndarray, hermitian: bool) -> np.ndarray:
    """Parameters of ``X`` in the :func:`symmetric_basis` ordering."""
    X = np.asarray(X)
    iu = np.triu_indices(X.shape[0], 1)
    parts = [np.real(np.diag(X)), np.real(X[iu])]
    if hermitian:
        parts.append(np.imag(X[iu]))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# solving


@dataclass
class ConicSolution:
    x: np.ndarray
    status: str
    primal_objective: float
    dual_objective: float
    gap: float
    iterations: int


def solve_conic(prob: ConicProblem, tol: float = 1e-7, maxiters: int = 200) -> ConicSolution:
    """Solve with the cvxopt primal-dual interior-point SDP solver.

    Raises :class:`Infeasible` on a primal infeasibility certificate and
    :class:`SolverFailure` when the solver stops without a usable point.
    """
    from cvxopt import matrix, solvers

    m = prob.n_vars
    lin = [b for b in prob.blocks if b.linear]
    psd = [b for b in prob.blocks if not b.linear]
    kw = {}
    if lin:
        kw["Gl"] = matrix(np.vstack([-b.coef.T for b in lin]))
        kw["hl"] = matrix(np.concatenate([b.const for b in lin]))
    kw["Gs"] = [matrix(-b.coef.reshape(m, -1).T.copy()) for b in psd]
    kw["hs"] = [matrix(b.const.copy()) for b in psd]
    opts = {"show_progress": False, "abstol": 1e-10, "reltol": tol,
            "feastol": 1e-8, "maxiters": maxiters}
    try:
        sol = solvers.sdp(matrix(prob.c), options=opts, **kw)
    except ArithmeticError as exc:
        # cvxopt divides by a vanishing step on near-boundary instances
        raise SolverFailure(f"conic solver broke down: {exc}") from exc
    status = sol["status"]
    if status == "primal infeasible":
        raise Infeasible("conic program is primal infeasible")
    if sol["x"] is None:
        raise SolverFailure(f"conic solver stopped with status {status!r}")
    x = np.array(sol["x"]).ravel()
    pobj, dobj = sol["primal objective"], sol["dual objective"]
    gap = abs(pobj - dobj) / max(1.0, abs(pobj))
    if status != "optimal":
        # cvxopt reports 'unknown' when it stalls just short of the tolerances
        ok = (sol["primal infeasibility"] is not None and sol["primal infeasibility"] < 1e-7
              and gap < max(1e2 * tol, 1e-6))
        if not ok:
            raise SolverFailure(f"conic solver stopped with status {status!r} (gap {gap:.2e})")
    return ConicSolution(x=x, status=status, primal_objective=pobj, dual_objective=dobj,
                         gap=gap, iterations=sol["iterations"])


# ---------------------------------------------------------------------------
# SDPA sparse format


def write_sdpa(prob: ConicProblem, path) -> None:
    """Write the problem in SDPA sparse format (``.dat-s``).

    Lines after the header are ``matno blkno i j value`` with 1-based
    indices and ``i <= j``; ``matno = 0`` is ``F_0 = -const``. Diagonal
    blocks have negative sizes in the block structure line.
    """
    buf = io.StringIO()
    buf.write('" pass_isac conic problem\n')
    buf.write(f"{prob.n_vars}\n{len(prob.blocks)}\n")
    buf.write(" ".join(str(-b.size if b.linear else b.size) for b in prob.blocks) + "\n")
    buf.write(" ".join(repr(float(v)) for v in prob.c) + "\n")
    for bno, b in enumerate(prob.blocks, start=1):
        mats = [-b.const] + list(b.coef)
        for matno, F in enumerate(mats):
            if b.linear:
                for i in np.flatnonzero(F):
                    buf.write(f"{matno} {bno} {i + 1} {i + 1} {float(F[i])!r}\n")
            else:
                r, c = np.nonzero(np.triu(F))
                for i, j in zip(r, c):
                    buf.write(f"{matno} {bno} {i + 1} {j + 1} {float(F[i, j])!r}\n")
    Path(path).write_text(buf.getvalue())


def read_sdpa(path) -> ConicProblem:
    """Inverse of :func:`write_sdpa` (metadata and block names are not kept)."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and ln[0] not in '"*']
    m = int(lines[0].split()[0])
    nb = int(lines[1].split()[0])
    sizes = [int(s) for s in lines[2].replace(",", " ").replace("{", " ").replace("}", " ").split()][:nb]
    c = np.array([float(v) for v in lines[3].replace(",", " ").replace("{", " ").replace("}", " ").split()][:m])
    blocks = []
    for k, s in enumerate(sizes):
        if s < 0:
            blocks.append(LmiBlock(f"block{k + 1}", -s, True, np.zeros(-s), np.zeros((m, -s))))
        else:
            blocks.append(LmiBlock(f"block{k + 1}", s, False, np.zeros((s, s)), np.zeros((m, s, s))))
    for ln in lines[4:]:
        matno, bno, i, j, v = ln.split()
        b = blocks[int(bno) - 1]
        matno, i, j, v = int(matno), int(i) - 1, int(j) - 1, float(v)
        if b.linear:
            if matno == 0:
                b.const[i] = -v
            else:
                b.coef[matno - 1, i] = v
        else:
            target = b.const if matno == 0 else b.coef[matno - 1]
            sign = -1.0 if matno == 0 else 1.0
            target[i, j] = target[j, i] = sign * v
    return ConicProblem(n_vars=m, c=c, blocks=blocks)
